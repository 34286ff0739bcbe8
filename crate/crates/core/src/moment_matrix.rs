//! The incomplete moment matrix and its rank-constrained completion.
//!
//! Rows are indexed by the `|L|` single-cell patterns, columns by every
//! pattern of support at most `col_support`. Entry `(row, col)` is
//! `M_{row + col}` when the two supports are disjoint and undefined
//! otherwise.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LlsError, Result};
use crate::linalg::{pivoted_columns, singular_values};
use crate::moments::MomentSource;
use crate::pattern::{enumerate_patterns, Pattern, Schema};
use crate::scalar::Real;

/// Column support bound used by the estimation pipeline: entries are then
/// second-order moments, the shifted covariance of the mixing distribution.
pub const DEFAULT_COL_SUPPORT: usize = 1;

/// Minors with a larger condition number are rejected during completion.
pub const MAX_MINOR_CONDITION: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct MomentMatrix<T: Real> {
    schema: Schema,
    col_support: usize,
    row_patterns: Vec<Pattern>,
    col_patterns: Vec<Pattern>,
    row_question: Vec<usize>,
    col_questions: Vec<Vec<usize>>,
    values: DMatrix<T>,
    known: DMatrix<bool>,
}

impl<T: Real> MomentMatrix<T> {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn col_support(&self) -> usize {
        self.col_support
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_patterns(&self) -> &[Pattern] {
        &self.row_patterns
    }

    pub fn col_patterns(&self) -> &[Pattern] {
        &self.col_patterns
    }

    /// Values; entries that are neither observed nor filled hold NaN.
    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        self.known[(row, col)].then(|| self.values[(row, col)])
    }

    pub fn is_known(&self, row: usize, col: usize) -> bool {
        self.known[(row, col)]
    }

    /// Whether the entry is defined by the data: the row and column
    /// patterns have disjoint supports.
    pub fn is_structural(&self, row: usize, col: usize) -> bool {
        !self.col_questions[col].contains(&self.row_question[row])
    }

    pub fn row_question(&self, row: usize) -> usize {
        self.row_question[row]
    }

    /// Questions in the support of each column pattern.
    pub fn col_questions(&self, col: usize) -> &[usize] {
        &self.col_questions[col]
    }

    pub fn is_complete(&self) -> bool {
        self.known.iter().all(|&k| k)
    }

    pub fn unknown_count(&self) -> usize {
        self.known.iter().filter(|&&k| !k).count()
    }

    /// Column of the all-zero pattern: the first-order moments.
    pub fn mean_column(&self) -> DVector<T> {
        self.values.column(0).into_owned()
    }

    /// Values with unknown entries replaced by zero.
    pub fn zero_filled(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |r, c| {
            if self.known[(r, c)] {
                self.values[(r, c)]
            } else {
                T::zero()
            }
        })
    }

    /// Builds a matrix over the same patterns from arbitrary values, with
    /// only the structurally defined entries marked known.
    pub fn with_values(&self, values: DMatrix<T>) -> Self {
        assert_eq!(values.shape(), self.values.shape());
        let mut out = self.clone();
        for c in 0..self.ncols() {
            for r in 0..self.nrows() {
                let s = self.is_structural(r, c);
                out.known[(r, c)] = s;
                out.values[(r, c)] = if s { values[(r, c)] } else { T::lit(f64::NAN) };
            }
        }
        out
    }

    /// CSV with a header of column pattern keys; unknown entries are `?`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut line = String::from("row");
        for p in &self.col_patterns {
            let _ = write!(line, ",\"{}\"", p.key());
        }
        writeln!(w, "{line}")?;
        for r in 0..self.nrows() {
            line.clear();
            let _ = write!(line, "\"{}\"", self.row_patterns[r].key());
            for c in 0..self.ncols() {
                match self.get(r, c) {
                    Some(v) => {
                        let _ = write!(line, ",{}", fmt_sig17(v.as_f64()));
                    }
                    None => line.push_str(",?"),
                }
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Repr<'a> {
            schema: &'a Schema,
            col_support: usize,
            rows: Vec<&'a Pattern>,
            cols: Vec<&'a Pattern>,
            values: Vec<Vec<Option<f64>>>,
            mask: Vec<Vec<bool>>,
        }
        let values = (0..self.nrows())
            .map(|r| (0..self.ncols()).map(|c| self.get(r, c).map(Real::as_f64)).collect())
            .collect();
        let mask = (0..self.nrows())
            .map(|r| (0..self.ncols()).map(|c| self.known[(r, c)]).collect())
            .collect();
        serde_json::to_value(Repr {
            schema: &self.schema,
            col_support: self.col_support,
            rows: self.row_patterns.iter().collect(),
            cols: self.col_patterns.iter().collect(),
            values,
            mask,
        })
        .expect("moment matrix serializes")
    }
}

/// Formats with 17 significant digits.
pub fn fmt_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Assembles the moment matrix from any moment source.
pub fn build_moment_matrix<T: Real, S: MomentSource<T> + ?Sized>(
    src: &S,
    col_support: usize,
) -> Result<MomentMatrix<T>> {
    let schema = src.schema().clone();
    let row_patterns: Vec<Pattern> = schema.cells().map(|c| Pattern::unit(&schema, c)).collect();
    let col_patterns = enumerate_patterns(&schema, col_support);
    let row_question = schema.cell_questions();
    let col_questions: Vec<Vec<usize>> = col_patterns.iter().map(Pattern::support).collect();
    let col_cells: Vec<Vec<usize>> = col_patterns.iter().map(|p| p.cells(&schema)).collect();
    let nrows = row_patterns.len();
    let ncols = col_patterns.len();

    let columns: Vec<Vec<(T, bool)>> = (0..ncols)
        .into_par_iter()
        .map(|c| {
            let mut cells = Vec::with_capacity(col_cells[c].len() + 1);
            (0..nrows)
                .map(|r| {
                    if col_questions[c].contains(&row_question[r]) {
                        return Ok((T::lit(f64::NAN), false));
                    }
                    cells.clear();
                    cells.push(r);
                    cells.extend_from_slice(&col_cells[c]);
                    cells.sort_unstable();
                    src.cell_moment(&cells).map(|v| (v, true))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = DMatrix::zeros(nrows, ncols);
    let mut known = DMatrix::from_element(nrows, ncols, false);
    for (c, col) in columns.into_iter().enumerate() {
        for (r, (v, k)) in col.into_iter().enumerate() {
            values[(r, c)] = v;
            known[(r, c)] = k;
        }
    }
    Ok(MomentMatrix {
        schema,
        col_support,
        row_patterns,
        col_patterns,
        row_question,
        col_questions,
        values,
        known,
    })
}

/// Fully known blocks examined by [`computational_rank`]: rows from one
/// set of questions, columns supported on a disjoint set.
fn defined_blocks<T: Real>(m: &MomentMatrix<T>) -> Vec<(Vec<usize>, Vec<usize>)> {
    let j = m.schema.questions();
    // (row questions, allowed column questions)
    let mut splits: Vec<(Vec<bool>, Vec<bool>)> = Vec::new();
    let half: Vec<bool> = (0..j).map(|q| q < j.div_ceil(2)).collect();
    let parity: Vec<bool> = (0..j).map(|q| q % 2 == 0).collect();
    for side in [half, parity] {
        let other: Vec<bool> = side.iter().map(|b| !b).collect();
        splits.push((side.clone(), other.clone()));
        splits.push((other, side));
    }
    if j >= 2 {
        for q in 0..j {
            let next = (q + 1) % j;
            splits.push(((0..j).map(|x| x == q).collect(), (0..j).map(|x| x == next).collect()));
        }
    }
    let mut blocks = Vec::new();
    for (is_row, is_col) in &splits {
        let rows: Vec<usize> = (0..m.nrows()).filter(|&r| is_row[m.row_question[r]]).collect();
        let cols: Vec<usize> = (0..m.ncols())
            .filter(|&c| m.col_questions[c].iter().all(|&q| is_col[q]) && rows.iter().all(|&r| m.known[(r, c)]))
            .collect();
        if !rows.is_empty() && !cols.is_empty() {
            blocks.push((rows, cols));
        }
    }
    if m.is_complete() {
        blocks.push(((0..m.nrows()).collect(), (0..m.ncols()).collect()));
    }
    blocks
}

fn block_singular_values<T: Real>(m: &MomentMatrix<T>, rows: &[usize], cols: &[usize]) -> Vec<T> {
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |r, c| m.values[(rows[r], cols[c])]);
    singular_values(&sub)
}

/// Largest number of singular values above `eps * sigma_max` over a fixed
/// family of fully known submatrices. Returns 0 when `eps >= 1`.
pub fn computational_rank<T: Real>(m: &MomentMatrix<T>, eps: T) -> Result<usize> {
    if eps <= T::zero() {
        return Err(LlsError::Precondition("eps must be positive".into()));
    }
    let blocks = defined_blocks(m);
    if blocks.is_empty() {
        return Err(LlsError::NoDefinedSubmatrix);
    }
    Ok(blocks
        .par_iter()
        .map(|(rows, cols)| {
            let sv = block_singular_values(m, rows, cols);
            let smax = sv.first().copied().unwrap_or_else(T::zero);
            sv.iter().filter(|&&s| s > eps * smax && s > T::zero()).count()
        })
        .max()
        .unwrap_or(0))
}

/// Singular values of the largest fully known block, divided by the largest.
pub fn singular_value_profile<T: Real>(m: &MomentMatrix<T>) -> Result<Vec<T>> {
    let blocks = defined_blocks(m);
    let (rows, cols) = blocks
        .iter()
        .max_by_key(|(r, c)| r.len().min(c.len()))
        .ok_or(LlsError::NoDefinedSubmatrix)?;
    let sv = block_singular_values(m, rows, cols);
    let smax = sv.first().copied().unwrap_or_else(T::one);
    Ok(if smax > T::zero() {
        sv.into_iter().map(|s| s / smax).collect()
    } else {
        sv
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompletionMode {
    /// `K x K` minor, exact solve for the combination coefficients.
    Exact,
    /// All admissible rows, least-squares coefficients (for frequencies).
    LeastSquares,
}

#[derive(Clone, Debug)]
pub struct CompletionOptions {
    pub mode: CompletionMode,
    pub max_condition: f64,
    /// Column sets tried per entry before giving up.
    pub max_attempts: usize,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        Self {
            mode: CompletionMode::Exact,
            max_condition: MAX_MINOR_CONDITION,
            max_attempts: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilledEntry<T> {
    pub row: usize,
    pub col: usize,
    pub value: T,
    /// RMS residual of the coefficient solve over all admissible rows.
    pub residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionReport<T> {
    pub filled_entries: Vec<FilledEntry<T>>,
    pub max_residual: T,
    pub used_minors: usize,
}

/// Completion precondition `2K + 2p - 1 <= |L|`, with `p` the largest level count.
pub fn completion_bound_holds(schema: &Schema, k: usize) -> bool {
    2 * k + 2 * schema.max_level() - 1 <= schema.total_levels()
}

/// Fills every unknown entry with the exact minor procedure.
pub fn complete_matrix<T: Real>(m: &MomentMatrix<T>, k: usize) -> Result<(MomentMatrix<T>, CompletionReport<T>)> {
    complete_matrix_with(m, k, &CompletionOptions::default())
}

/// Fills every unknown entry: with `K` known columns spanning the column
/// space, the target column restricted to admissible rows is a combination
/// `b = C gamma`, and the missing value is `sum_i gamma_i a_i` where `a_i`
/// are the chosen columns' values in the target row.
///
/// Only originally known entries enter any minor, so the result does not
/// depend on the order in which entries are processed.
pub fn complete_matrix_with<T: Real>(
    m: &MomentMatrix<T>,
    k: usize,
    opts: &CompletionOptions,
) -> Result<(MomentMatrix<T>, CompletionReport<T>)> {
    if k == 0 {
        return Err(LlsError::Precondition("K must be at least 1".into()));
    }
    let schema = &m.schema;
    if !completion_bound_holds(schema, k) {
        return Err(LlsError::CompletionBound {
            k,
            p: schema.max_level(),
            n: schema.total_levels(),
            lhs: 2 * k + 2 * schema.max_level() - 1,
        });
    }
    let targets: Vec<(usize, usize)> = (0..m.ncols())
        .flat_map(|c| (0..m.nrows()).map(move |r| (r, c)))
        .filter(|&(r, c)| !m.known[(r, c)])
        .collect();
    if targets.is_empty() {
        return Ok((
            m.clone(),
            CompletionReport {
                filled_entries: Vec::new(),
                max_residual: T::zero(),
                used_minors: 0,
            },
        ));
    }

    let pool_size = (4 * k + 4 * schema.max_level() * m.col_support.max(1) + 8).min(m.ncols());
    let filled = m.zero_filled();
    let pool = pivoted_columns(&filled, pool_size, |_| true);

    let entries = targets
        .par_iter()
        .map(|&(r, c)| fill_entry(m, &pool, r, c, k, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut out = m.clone();
    let mut max_residual = T::zero();
    for e in &entries {
        out.values[(e.row, e.col)] = e.value;
        out.known[(e.row, e.col)] = true;
        if e.residual > max_residual {
            max_residual = e.residual;
        }
    }
    let used = entries.len();
    Ok((
        out,
        CompletionReport {
            filled_entries: entries,
            max_residual,
            used_minors: used,
        },
    ))
}

fn fill_entry<T: Real>(
    m: &MomentMatrix<T>,
    pool: &[usize],
    r: usize,
    c: usize,
    k: usize,
    opts: &CompletionOptions,
) -> Result<FilledEntry<T>> {
    let candidates: Vec<usize> = pool.iter().copied().filter(|&ci| ci != c && m.known[(r, ci)]).collect();
    let max_cond = T::lit(opts.max_condition);
    let mut best_cond = f64::INFINITY;
    let mut attempts = 0;
    let mut sets = column_sets(candidates.len(), k);
    while let Some(set) = sets.next() {
        if attempts >= opts.max_attempts {
            break;
        }
        attempts += 1;
        let cols: Vec<usize> = set.iter().map(|&i| candidates[i]).collect();
        let rows: Vec<usize> = (0..m.nrows())
            .filter(|&x| x != r && m.known[(x, c)] && cols.iter().all(|&ci| m.known[(x, ci)]))
            .collect();
        if rows.len() < k {
            continue;
        }
        let cmat = DMatrix::from_fn(rows.len(), k, |i, j| m.values[(rows[i], cols[j])]);
        let bvec = DVector::from_fn(rows.len(), |i, _| m.values[(rows[i], c)]);
        let (minor_rows, minor): (Vec<usize>, DMatrix<T>) = match opts.mode {
            CompletionMode::LeastSquares => ((0..rows.len()).collect(), cmat.clone()),
            CompletionMode::Exact => {
                let picked = pivoted_columns(&cmat.transpose(), k, |_| true);
                if picked.len() < k {
                    continue;
                }
                let sub = DMatrix::from_fn(k, k, |i, j| cmat[(picked[i], j)]);
                (picked, sub)
            }
        };
        let sv = singular_values(&minor);
        let (hi, lo) = (sv[0], sv[k - 1]);
        let cond = if lo > T::zero() { hi / lo } else { T::lit(f64::INFINITY) };
        if cond.as_f64() < best_cond {
            best_cond = cond.as_f64();
        }
        if !(cond <= max_cond) {
            continue;
        }
        let rhs = DVector::from_fn(minor_rows.len(), |i, _| bvec[minor_rows[i]]);
        let gamma = match minor.clone().svd(true, true).solve(&rhs, T::zero()) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let resid = (&cmat * &gamma - &bvec).norm() / T::from_count(rows.len() as u64).sqrt();
        let value = cols
            .iter()
            .zip(gamma.iter())
            .fold(T::zero(), |acc, (&ci, &g)| acc + g * m.values[(r, ci)]);
        return Ok(FilledEntry {
            row: r,
            col: c,
            value,
            residual: resid,
        });
    }
    Err(LlsError::DegenerateMinor {
        row: r,
        col: c,
        condition: best_cond,
    })
}

/// Index sets of size `k` over `0..n`, starting with the leading prefix and
/// then moving the last slot, then the last two, and so on (lexicographic).
fn column_sets(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut cur: Option<Vec<usize>> = (k <= n).then(|| (0..k).collect());
    std::iter::from_fn(move || {
        let out = cur.clone()?;
        let mut next = out.clone();
        let mut i = k;
        cur = loop {
            if i == 0 {
                break None;
            }
            i -= 1;
            if next[i] < n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                break Some(next);
            }
        };
        Some(out)
    })
}
