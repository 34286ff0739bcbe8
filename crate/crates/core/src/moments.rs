//! Sources of the moments `M_l(B)`: observed frequencies or exact tables.

use std::collections::{BTreeMap, HashMap};

use crate::error::{LlsError, Result};
use crate::pattern::{Pattern, Schema};
use crate::scalar::Real;

/// Anything that can report `M_l` for a pattern.
///
/// Frequency-backed sources also expose the integer count `N_l` behind the
/// value, which the solvers use for row weighting.
pub trait MomentSource<T: Real>: Sync {
    fn schema(&self) -> &Schema;

    fn moment(&self, pattern: &Pattern) -> Result<T>;

    /// `M` of the pattern whose support is exactly the given flat cells
    /// (distinct questions). Sources with a dense layout override this.
    fn cell_moment(&self, cells: &[usize]) -> Result<T> {
        let schema = self.schema();
        let mut e = vec![0; schema.questions()];
        for &c in cells {
            let cell = schema.cell_at(c);
            e[cell.question] = cell.level;
        }
        self.moment(&Pattern::from(e))
    }

    fn count(&self, _pattern: &Pattern) -> Option<u64> {
        None
    }

    fn total(&self) -> Option<u64> {
        None
    }
}

impl<T: Real, S: MomentSource<T> + ?Sized> MomentSource<T> for &S {
    fn schema(&self) -> &Schema {
        (**self).schema()
    }
    fn moment(&self, pattern: &Pattern) -> Result<T> {
        (**self).moment(pattern)
    }
    fn cell_moment(&self, cells: &[usize]) -> Result<T> {
        (**self).cell_moment(cells)
    }
    fn count(&self, pattern: &Pattern) -> Option<u64> {
        (**self).count(pattern)
    }
    fn total(&self) -> Option<u64> {
        (**self).total()
    }
}

/// Table of moments computed without sampling noise.
#[derive(Clone, Debug)]
pub struct ExactMoments<T> {
    schema: Schema,
    values: HashMap<Pattern, T>,
}

impl<T: Real> ExactMoments<T> {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            values: HashMap::new(),
        }
    }

    pub fn insert(&mut self, pattern: Pattern, value: T) {
        self.values.insert(pattern, value);
    }

    pub fn get(&self, pattern: &Pattern) -> Option<T> {
        self.values.get(pattern).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Pattern, &T)> {
        self.values.iter()
    }

    /// Values keyed by pattern string, sorted.
    pub fn to_sorted(&self) -> BTreeMap<Pattern, T> {
        self.values.iter().map(|(p, v)| (p.clone(), *v)).collect()
    }
}

impl<T: Real> MomentSource<T> for ExactMoments<T> {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn moment(&self, pattern: &Pattern) -> Result<T> {
        self.values
            .get(pattern)
            .copied()
            .ok_or_else(|| LlsError::MissingMoment(pattern.to_string()))
    }
}
