//! Measurement schema and the response-pattern algebra.
//!
//! A pattern holds one entry per question. Entry `0` means "don't care";
//! any other entry is a category label in `1..=L_j`. Question indices in
//! this API are zero-based, category labels are one-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};

/// Category label; `0` is reserved for "don't care".
pub type Level = u16;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct Schema {
    levels: Vec<Level>,
    offsets: Vec<usize>,
    total_levels: usize,
    max_level: Level,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    levels: Vec<Level>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = LlsError;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        Schema::new(r.levels)
    }
}

impl From<Schema> for SchemaRepr {
    fn from(s: Schema) -> Self {
        SchemaRepr { levels: s.levels }
    }
}

impl Schema {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(LlsError::InvalidSchema("at least one question required".into()));
        }
        if let Some(j) = levels.iter().position(|&l| l < 2) {
            return Err(LlsError::InvalidSchema(format!(
                "question {j} has {} levels; at least 2 required",
                levels[j]
            )));
        }
        let mut offsets = Vec::with_capacity(levels.len());
        let mut acc = 0usize;
        for &l in &levels {
            offsets.push(acc);
            acc += l as usize;
        }
        let max_level = *levels.iter().max().unwrap();
        Ok(Self {
            levels,
            offsets,
            total_levels: acc,
            max_level,
        })
    }

    /// `J` binary questions.
    pub fn binary(questions: usize) -> Result<Self> {
        Self::new(vec![2; questions])
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Number of questions `J`.
    pub fn questions(&self) -> usize {
        self.levels.len()
    }

    pub fn level_count(&self, question: usize) -> usize {
        self.levels[question] as usize
    }

    /// `|L| = sum of L_j`.
    pub fn total_levels(&self) -> usize {
        self.total_levels
    }

    pub fn max_level(&self) -> usize {
        self.max_level as usize
    }

    /// `|L*| = product of L_j`, or `None` when it does not fit in 128 bits.
    pub fn full_pattern_count(&self) -> Option<u128> {
        self.levels.iter().try_fold(1u128, |acc, &l| acc.checked_mul(l as u128))
    }

    /// First flat cell index of `question`.
    pub fn offset(&self, question: usize) -> usize {
        self.offsets[question]
    }

    pub fn cell(&self, question: usize, level: Level) -> CellIndex {
        debug_assert!(level >= 1 && level <= self.levels[question]);
        CellIndex {
            question,
            level,
            flat: self.offsets[question] + level as usize - 1,
        }
    }

    /// Inverse of the flat `(question, level)` ordering.
    pub fn cell_at(&self, flat: usize) -> CellIndex {
        assert!(flat < self.total_levels, "flat cell index out of range");
        let question = match self.offsets.binary_search(&flat) {
            Ok(q) => q,
            Err(q) => q - 1,
        };
        CellIndex {
            question,
            level: (flat - self.offsets[question] + 1) as Level,
            flat,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.total_levels).map(|f| self.cell_at(f))
    }

    /// Question owning each flat cell.
    pub fn cell_questions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_levels);
        for (j, &l) in self.levels.iter().enumerate() {
            out.extend(std::iter::repeat_n(j, l as usize));
        }
        out
    }

    /// Checks that `p` has one entry per question, each in `0..=L_j`.
    pub fn check(&self, p: &Pattern) -> Result<()> {
        if p.len() != self.questions() {
            return Err(LlsError::SchemaMismatch(format!(
                "pattern {p} has length {}, schema has {} questions",
                p.len(),
                self.questions()
            )));
        }
        for (j, (&e, &l)) in p.entries().iter().zip(&self.levels).enumerate() {
            if e > l {
                return Err(LlsError::SchemaMismatch(format!(
                    "pattern {p}: entry {e} at question {j} exceeds {l} levels"
                )));
            }
        }
        Ok(())
    }
}

/// Position of a `(question, level)` pair in the question-then-level ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub question: usize,
    pub level: Level,
    pub flat: usize,
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern(Box<[Level]>);

impl Pattern {
    pub fn new(entries: impl Into<Box<[Level]>>) -> Self {
        Self(entries.into())
    }

    pub fn zeros(questions: usize) -> Self {
        Self(vec![0; questions].into())
    }

    /// Pattern with a single non-zero entry at `cell`.
    pub fn unit(schema: &Schema, cell: CellIndex) -> Self {
        let mut e = vec![0; schema.questions()];
        e[cell.question] = cell.level;
        Self(e.into())
    }

    pub fn entries(&self) -> &[Level] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, question: usize) -> Level {
        self.0[question]
    }

    /// Questions with a non-zero entry, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != 0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn zero_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == 0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&e| e != 0).count()
    }

    /// Number of "don't care" positions `p`.
    pub fn zero_count(&self) -> usize {
        self.0.len() - self.support_size()
    }

    /// `l(pattern)`: total number of levels over the zero positions.
    pub fn zero_capacity(&self, schema: &Schema) -> usize {
        self.0
            .iter()
            .zip(schema.levels())
            .filter(|(&e, _)| e == 0)
            .map(|(_, &l)| l as usize)
            .sum()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&e| e != 0)
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Flat cell indices of the support.
    pub fn cells(&self, schema: &Schema) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != 0)
            .map(|(j, &e)| schema.offset(j) + e as usize - 1)
            .collect()
    }

    /// Whether the supports of `self` and `other` are disjoint.
    pub fn disjoint(&self, other: &Pattern) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(&a, &b)| a == 0 || b == 0)
    }

    /// Whether every response pattern matching `full` on the support of
    /// `self` also matches `self`.
    pub fn matches(&self, responses: &[Level]) -> bool {
        self.0.iter().zip(responses).all(|(&e, &x)| e == 0 || e == x)
    }

    /// Same pattern with `question` set to "don't care".
    pub fn with_zero(&self, question: usize) -> Pattern {
        let mut e = self.0.clone();
        e[question] = 0;
        Pattern(e)
    }

    /// Key used in JSON maps: entries joined by commas.
    pub fn key(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 2);
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&e.to_string());
        }
        s
    }

    pub fn parse_key(key: &str) -> Option<Pattern> {
        key.split(',')
            .map(|t| t.trim().parse::<Level>().ok())
            .collect::<Option<Vec<_>>>()
            .map(Pattern::new)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.key())
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<Vec<Level>> for Pattern {
    fn from(v: Vec<Level>) -> Self {
        Pattern(v.into())
    }
}

impl<const N: usize> From<[Level; N]> for Pattern {
    fn from(v: [Level; N]) -> Self {
        Pattern(v.to_vec().into())
    }
}

/// Partial addition of response patterns.
///
/// Returns `Ok(None)` when both summands are non-zero at some position.
pub fn pattern_add(schema: &Schema, a: &Pattern, b: &Pattern) -> Result<Option<Pattern>> {
    schema.check(a)?;
    schema.check(b)?;
    if !a.disjoint(b) {
        return Ok(None);
    }
    let sum: Vec<Level> = a.0.iter().zip(b.0.iter()).map(|(&x, &y)| x + y).collect();
    Ok(Some(Pattern::from(sum)))
}

/// Replaces the "don't care" at `question` by `level`.
pub fn substitute(schema: &Schema, pattern: &Pattern, question: usize, level: Level) -> Result<Pattern> {
    schema.check(pattern)?;
    if question >= schema.questions() {
        return Err(LlsError::Precondition(format!(
            "question {question} out of range for {} questions",
            schema.questions()
        )));
    }
    if pattern.get(question) != 0 {
        return Err(LlsError::Precondition(format!(
            "pattern {pattern} is not zero at question {question}"
        )));
    }
    if level == 0 || level > schema.levels()[question] {
        return Err(LlsError::Precondition(format!(
            "level {level} outside 1..={} at question {question}",
            schema.levels()[question]
        )));
    }
    let mut e = pattern.0.clone();
    e[question] = level;
    Ok(Pattern(e))
}

/// All patterns with at most `max_support` non-zero entries, ordered by
/// support size, then by support positions, then by levels (both
/// lexicographic). The first element is the all-zero pattern.
pub fn enumerate_patterns(schema: &Schema, max_support: usize) -> Vec<Pattern> {
    let j = schema.questions();
    let mut out = Vec::new();
    for size in 0..=max_support.min(j) {
        for_each_combination(j, size, |positions| {
            let mut levels: Vec<Level> = vec![1; size];
            loop {
                let mut e = vec![0; j];
                for (&q, &l) in positions.iter().zip(&levels) {
                    e[q] = l;
                }
                out.push(Pattern::from(e));
                // odometer over levels, last position fastest
                let mut i = size;
                loop {
                    if i == 0 {
                        return;
                    }
                    i -= 1;
                    if levels[i] < schema.levels()[positions[i]] {
                        levels[i] += 1;
                        for l in &mut levels[i + 1..] {
                            *l = 1;
                        }
                        break;
                    }
                }
            }
        });
    }
    out
}

fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for m in i + 1..k {
                    idx[m] = idx[m - 1] + 1;
                }
                break;
            }
        }
    }
}
