//! Estimation of the supporting subspace `Q` and its basis `Lambda`.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};
use crate::linalg::{complement_basis, lstsq, orthonormalize, pivoted_columns, solve_spd, top_left_singular};
use crate::lp::{maximize_free, LpOutcome};
use crate::moment_matrix::{
    complete_matrix_with, completion_bound_holds, CompletionMode, CompletionOptions, MomentMatrix,
};
use crate::pattern::Schema;
use crate::scalar::Real;

/// Matrices with more rows than this are seeded by orthogonal iteration
/// instead of a full SVD.
const FULL_SVD_ROWS: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    /// Objective relative to the squared norm of the defined entries.
    pub relative_objective: f64,
    pub converged: bool,
}

/// A basis of the supporting subspace, one column per basis vector.
#[derive(Clone, Debug)]
pub struct Subspace<T: Real> {
    schema: Schema,
    basis: DMatrix<T>,
    nonnegative: bool,
    diagnostics: Option<FitDiagnostics>,
}

impl<T: Real> Subspace<T> {
    /// Wraps a given basis. Columns must be linearly independent.
    pub fn from_basis(schema: Schema, basis: DMatrix<T>) -> Result<Self> {
        if basis.nrows() != schema.total_levels() {
            return Err(LlsError::SchemaMismatch(format!(
                "basis has {} rows, schema has {} cells",
                basis.nrows(),
                schema.total_levels()
            )));
        }
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(LlsError::RankTooLarge {
                k: basis.ncols(),
                available: basis.nrows(),
            });
        }
        let sv = crate::linalg::singular_values(&basis);
        if sv.last().copied().unwrap_or_else(T::zero) <= sv[0] * T::eps() * T::lit(64.0) {
            return Err(LlsError::Precondition("basis columns are linearly dependent".into()));
        }
        let nonnegative = is_nonnegative(basis.as_slice());
        Ok(Self {
            schema,
            basis,
            nonnegative,
            diagnostics: None,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn vector(&self, k: usize) -> DVector<T> {
        self.basis.column(k).into_owned()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Largest deviation of a per-question sum from one.
    pub fn row_sum_error(&self) -> T {
        let mut worst = T::zero();
        for k in 0..self.k() {
            for s in question_sums(&self.schema, &self.basis.column(k).into_owned()) {
                worst = worst.max((s - T::one()).abs());
            }
        }
        worst
    }

    pub fn principal_angles(&self, other: &Subspace<T>) -> Vec<T> {
        principal_angles(&self.basis, &other.basis)
    }

    /// Matrix `T` with `other.basis * T` closest to `self.basis`; maps
    /// coordinates in this basis to coordinates in `other`.
    pub fn coordinates_in(&self, other: &Subspace<T>) -> DMatrix<T> {
        express_in(&other.basis, &self.basis)
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Repr<'a> {
            schema: &'a Schema,
            k: usize,
            basis: Vec<Vec<f64>>,
            nonnegative: bool,
            diagnostics: Option<&'a FitDiagnostics>,
        }
        let basis = (0..self.basis.nrows())
            .map(|r| (0..self.k()).map(|c| self.basis[(r, c)].as_f64()).collect())
            .collect();
        serde_json::to_value(Repr {
            schema: &self.schema,
            k: self.k(),
            basis,
            nonnegative: self.nonnegative,
            diagnostics: self.diagnostics.as_ref(),
        })
        .expect("subspace serializes")
    }

    /// Reads the format written by [`Subspace::to_json`].
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Repr {
            schema: Schema,
            basis: Vec<Vec<f64>>,
            diagnostics: Option<FitDiagnostics>,
        }
        let r: Repr = serde_json::from_value(v.clone()).map_err(|e| LlsError::InvalidConfig(e.to_string()))?;
        let rows = r.basis.len();
        let k = r.basis.first().map_or(0, Vec::len);
        if r.basis.iter().any(|row| row.len() != k) {
            return Err(LlsError::InvalidConfig("ragged basis rows".into()));
        }
        let basis = DMatrix::from_fn(rows, k, |i, j| T::lit(r.basis[i][j]));
        let mut s = Self::from_basis(r.schema, basis)?;
        s.diagnostics = r.diagnostics;
        Ok(s)
    }
}

fn is_nonnegative<T: Real>(b: &[T]) -> bool {
    let tol = T::lit(1e-12);
    b.iter().all(|&x| x >= -tol)
}

fn question_sums<T: Real>(schema: &Schema, v: &DVector<T>) -> Vec<T> {
    (0..schema.questions())
        .map(|q| {
            let o = schema.offset(q);
            (0..schema.level_count(q)).fold(T::zero(), |a, l| a + v[o + l])
        })
        .collect()
}

/// `J x |L|` matrix summing the cells of each question.
fn question_sum_matrix<T: Real>(schema: &Schema) -> DMatrix<T> {
    let q = schema.cell_questions();
    DMatrix::from_fn(schema.questions(), schema.total_levels(), |j, c| {
        if q[c] == j {
            T::one()
        } else {
            T::zero()
        }
    })
}

fn renormalize_questions<T: Real>(schema: &Schema, v: &mut DVector<T>) {
    let sums = question_sums(schema, v);
    for (q, s) in sums.into_iter().enumerate() {
        let o = schema.offset(q);
        for l in 0..schema.level_count(q) {
            v[o + l] /= s;
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the objective falls below this.
    pub tolerance: f64,
    /// Seed the iteration from the completed matrix (otherwise from the
    /// zero-filled one).
    pub complete_first: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            complete_first: true,
        }
    }
}

/// Orthonormal spanning set from the masked fit, before normalization.
#[derive(Clone, Debug)]
pub struct SpanFit<T: Real> {
    pub span: DMatrix<T>,
    pub diagnostics: FitDiagnostics,
}

/// Entries that take part in the fit: defined by the data and known.
fn fit_mask<T: Real>(m: &MomentMatrix<T>) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut by_col = vec![Vec::new(); m.ncols()];
    let mut by_row = vec![Vec::new(); m.nrows()];
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !(m.is_structural(r, c) && m.is_known(r, c)) {
                by_col[c].push(r);
                by_row[r].push(c);
            }
        }
    }
    (by_col, by_row)
}

/// Values restricted to the fit mask, zero elsewhere.
fn masked_values<T: Real>(m: &MomentMatrix<T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        if m.is_structural(r, c) && m.is_known(r, c) {
            m.values()[(r, c)]
        } else {
            T::zero()
        }
    })
}

fn masked_objective<T: Real>(z: &DMatrix<T>, u: &DMatrix<T>, w: &DMatrix<T>, by_col: &[Vec<usize>]) -> T {
    let p = u * w;
    let mut total = T::zero();
    for c in 0..z.ncols() {
        let mut s = T::zero();
        let mut skip = by_col[c].iter().peekable();
        for r in 0..z.nrows() {
            if skip.peek() == Some(&&r) {
                skip.next();
                continue;
            }
            let d = z[(r, c)] - p[(r, c)];
            s += d * d;
        }
        total += s;
    }
    total
}

/// Starting span: leading left singular vectors of the completed matrix.
fn initial_span<T: Real>(m: &MomentMatrix<T>, k: usize, opts: &FitOptions) -> DMatrix<T> {
    let filled = if opts.complete_first && completion_bound_holds(m.schema(), k) {
        let co = CompletionOptions {
            mode: CompletionMode::LeastSquares,
            ..CompletionOptions::default()
        };
        match complete_matrix_with(m, k, &co) {
            Ok((done, _)) => done.zero_filled(),
            Err(e) => {
                log::debug!("completion for initialization failed: {e}");
                m.zero_filled()
            }
        }
    } else {
        m.zero_filled()
    };
    if m.nrows() <= FULL_SVD_ROWS {
        let svd = filled.clone().svd(true, false);
        let u = svd.u.expect("requested u");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        DMatrix::from_fn(m.nrows(), k, |r, c| u[(r, order[c])])
    } else {
        let cols = pivoted_columns(&filled, k, |_| true);
        let mut start = DMatrix::from_fn(m.nrows(), k, |r, c| {
            // identity fallback when pivoting ran out of columns
            if r == c {
                T::one()
            } else {
                T::zero()
            }
        });
        for (i, &c) in cols.iter().enumerate() {
            start.set_column(i, &filled.column(c));
        }
        top_left_singular(&filled, start, 200, T::lit(1e-13)).0
    }
}

/// Masked alternating least squares: minimizes the squared residual over
/// defined entries among all rank-`k` factorizations `U W`.
pub fn fit_span<T: Real>(m: &MomentMatrix<T>, k: usize, opts: &FitOptions) -> Result<SpanFit<T>> {
    if k == 0 {
        return Err(LlsError::Precondition("K must be at least 1".into()));
    }
    if k > m.nrows() {
        return Err(LlsError::RankTooLarge {
            k,
            available: m.nrows(),
        });
    }
    let (by_col, by_row) = fit_mask(m);
    let z = masked_values(m);
    let scale = z.norm_squared();
    let floor = scale * T::eps() * T::eps() * T::lit(1e4);
    let tol = T::lit(opts.tolerance);

    let mut u = initial_span(m, k, opts);
    let mut w = DMatrix::zeros(k, m.ncols());
    let mut prev: Option<T> = None;
    let mut objective = T::zero();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iterations {
        iterations = it;
        // W step
        let g = u.tr_mul(&u);
        let rhs = u.tr_mul(&z);
        for c in 0..m.ncols() {
            let mut gc = g.clone();
            for &r in &by_col[c] {
                let ur = u.row(r);
                gc -= ur.transpose() * ur;
            }
            w.set_column(c, &solve_spd(&gc, &rhs.column(c).into_owned()));
        }
        // U step
        let h = &w * w.transpose();
        let rhs = &z * w.transpose();
        for r in 0..m.nrows() {
            let mut hr = h.clone();
            for &c in &by_row[r] {
                let wc = w.column(c);
                hr -= wc * wc.transpose();
            }
            let ur = solve_spd(&hr, &rhs.row(r).transpose());
            u.set_row(r, &ur.transpose());
        }

        objective = masked_objective(&z, &u, &w, &by_col);
        if let Some(p) = prev {
            assert!(
                objective <= p + p * T::eps() * T::lit(1e3) + floor,
                "masked ALS objective increased: {p} -> {objective}"
            );
            if p - objective <= tol * p {
                converged = true;
                break;
            }
        }
        if objective <= floor {
            converged = true;
            break;
        }
        prev = Some(objective);
    }
    if !converged {
        return Err(LlsError::NotConverged {
            iterations,
            objective: objective.as_f64(),
        });
    }
    let rel = if scale > T::zero() {
        objective / scale
    } else {
        T::zero()
    };
    Ok(SpanFit {
        span: orthonormalize(&u),
        diagnostics: FitDiagnostics {
            iterations,
            objective: objective.as_f64(),
            relative_objective: rel.as_f64(),
            converged,
        },
    })
}

/// Fits the `k`-dimensional subspace closest to the defined entries of the
/// moment matrix and returns a normalized basis of it.
pub fn fit_subspace<T: Real>(m: &MomentMatrix<T>, k: usize) -> Result<Subspace<T>> {
    fit_subspace_with(m, k, &FitOptions::default())
}

pub fn fit_subspace_with<T: Real>(m: &MomentMatrix<T>, k: usize, opts: &FitOptions) -> Result<Subspace<T>> {
    let verdict = check_identifiability(m.schema(), k);
    if !verdict.identifiable {
        log::warn!(
            "K = {k} exceeds the identifiability bound {} for this schema",
            verdict.k_max
        );
    }
    let fit = fit_span(m, k, opts)?;
    let mut s = normalize_basis(&fit.span, m)?;
    s.diagnostics = Some(fit.diagnostics);
    Ok(s)
}

/// Fills masked entries of the support-one block by projecting each column
/// onto the span through its known rows.
fn completed_second_moments<T: Real>(span: &DMatrix<T>, m: &MomentMatrix<T>) -> Option<DMatrix<T>> {
    let n = m.nrows();
    if m.col_support() < 1 || m.ncols() < n + 1 {
        return None;
    }
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        let col = c + 1;
        let rows: Vec<usize> = (0..n).filter(|&r| m.is_known(r, col)).collect();
        let a = DMatrix::from_fn(rows.len(), span.ncols(), |i, j| span[(rows[i], j)]);
        let b = DVector::from_fn(rows.len(), |i, _| m.values()[(rows[i], col)]);
        let (coef, _) = lstsq(&a, &b);
        let fit = span * coef;
        for r in 0..n {
            out[(r, c)] = if m.is_known(r, col) {
                m.values()[(r, col)]
            } else {
                fit[r]
            };
        }
    }
    Some((&out + out.transpose()) * T::lit(0.5))
}

/// Maps a spanning set to a basis of `k` vectors whose per-question sums
/// are one, preferring vertices of the nonnegative part of the slice.
///
/// The first vector starts from the mean column; the rest follow the
/// principal directions of the completed second-moment block. When the
/// slice intersected with the nonnegative orthant is a nonempty polytope,
/// its extreme points along those directions replace them.
pub fn normalize_basis<T: Real>(raw: &DMatrix<T>, m: &MomentMatrix<T>) -> Result<Subspace<T>> {
    let schema = m.schema().clone();
    let k = raw.ncols();
    if k == 0 || raw.nrows() != schema.total_levels() {
        return Err(LlsError::SchemaMismatch("spanning set does not match schema".into()));
    }
    let u = orthonormalize(raw);
    if u.ncols() < k {
        return Err(LlsError::RankTooLarge {
            k,
            available: u.ncols(),
        });
    }
    let c = question_sum_matrix::<T>(&schema);
    let a = &c * &u;
    let jq = T::from_count(schema.questions() as u64);
    let w: DVector<T> = a.row_sum().transpose() / jq;
    let wn = w.norm_squared();
    if wn <= T::eps() * T::lit(1e3) {
        return Err(LlsError::EmptyAffineSlice);
    }

    let mean = m.mean_column();
    let mut a0 = u.tr_mul(&mean);
    let shift = (T::one() - w.dot(&a0)) / wn;
    a0.axpy(shift, &w, T::one());

    let mut vectors: Vec<DVector<T>> = vec![a0.clone()];
    let mut directions = DMatrix::zeros(k, 0);
    if k > 1 {
        let nb = complement_basis(&w);
        let (dirs, spreads) = match completed_second_moments(&u, m) {
            Some(m2) => {
                let cov = m2 - &mean * mean.transpose();
                let sa = u.tr_mul(&(cov * &u));
                let restricted = nb.tr_mul(&(sa * &nb));
                let sym = (&restricted + restricted.transpose()) * T::lit(0.5);
                let eig = sym.symmetric_eigen();
                let mut order: Vec<usize> = (0..k - 1).collect();
                order.sort_by(|&x, &y| {
                    eig.eigenvalues[y]
                        .partial_cmp(&eig.eigenvalues[x])
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let dirs = DMatrix::from_fn(k, k - 1, |r, i| (&nb * eig.eigenvectors.column(order[i]))[r]);
                let spreads: Vec<T> = order
                    .iter()
                    .map(|&i| (T::lit(2.0) * eig.eigenvalues[i].max(T::zero()).sqrt()).max(T::lit(1e-3)))
                    .collect();
                (dirs, spreads)
            }
            None => (nb, vec![T::one(); k - 1]),
        };
        for i in 0..k - 1 {
            vectors.push(&a0 + dirs.column(i) * spreads[i]);
        }
        directions = dirs;
    }

    let mut nonnegative = false;
    if k == 1 {
        nonnegative = is_nonnegative((&u * &a0).as_slice());
    } else if let Some(vs) = polytope_vertices(&u, &a0, &directions) {
        vectors = vs;
        nonnegative = true;
    } else {
        log::warn!("no nonnegative basis found in the fitted subspace; keeping the affine basis");
    }

    let mut basis = DMatrix::zeros(schema.total_levels(), k);
    for (i, av) in vectors.iter().enumerate() {
        let mut v = &u * av;
        renormalize_questions(&schema, &mut v);
        basis.set_column(i, &v);
    }
    if nonnegative && !is_nonnegative(basis.as_slice()) {
        nonnegative = false;
    }
    if !nonnegative && k > 1 {
        log::warn!("basis vectors are not all nonnegative");
    }
    Ok(Subspace {
        schema,
        basis,
        nonnegative,
        diagnostics: None,
    })
}

/// Extreme points of `{a0 + D y : U (a0 + D y) >= 0}` along `+-` each
/// direction, reduced to `k` affinely independent ones.
fn polytope_vertices<T: Real>(u: &DMatrix<T>, a0: &DVector<T>, d: &DMatrix<T>) -> Option<Vec<DVector<T>>> {
    let k = a0.len();
    let ud = u * d;
    let lhs = -ud;
    let rhs = u * a0;
    let mut candidates: Vec<DVector<T>> = Vec::new();
    for i in 0..d.ncols() {
        for sign in [T::one(), -T::one()] {
            let mut obj = DVector::zeros(d.ncols());
            obj[i] = sign;
            match maximize_free(&lhs, &rhs, &obj) {
                LpOutcome::Optimal { x, .. } => candidates.push(a0 + d * x),
                LpOutcome::Infeasible => return None,
                LpOutcome::Unbounded => return None,
            }
        }
    }
    // greedy: farthest from the centre, then farthest from the affine hull
    let mut chosen: Vec<DVector<T>> = Vec::new();
    let first = candidates
        .iter()
        .max_by(|x, y| (*x - a0).norm().partial_cmp(&(*y - a0).norm()).unwrap())?
        .clone();
    chosen.push(first);
    while chosen.len() < k {
        let base = chosen[0].clone();
        let span = if chosen.len() > 1 {
            let diffs = DMatrix::from_fn(k, chosen.len() - 1, |r, c| chosen[c + 1][r] - base[r]);
            orthonormalize(&diffs)
        } else {
            DMatrix::zeros(k, 0)
        };
        let dist = |v: &DVector<T>| {
            let x = v - &base;
            (&x - &span * span.tr_mul(&x)).norm()
        };
        let best = candidates
            .iter()
            .max_by(|x, y| dist(x).partial_cmp(&dist(y)).unwrap())?
            .clone();
        let scale = candidates
            .iter()
            .map(|c| (c - a0).norm())
            .fold(T::zero(), |a, b| a.max(b));
        if dist(&best) <= scale * T::lit(1e-8) {
            return None;
        }
        chosen.push(best);
    }
    Some(chosen)
}

/// Least-squares change of basis: `T` minimizing `||target * T - basis||`.
pub fn express_in<T: Real>(target: &DMatrix<T>, basis: &DMatrix<T>) -> DMatrix<T> {
    let svd = target.clone().svd(true, true);
    svd.solve(basis, T::eps() * T::lit(64.0))
        .expect("svd computed with u and v")
}

/// Principal angles between column spans, ascending, in radians.
///
/// Both cosines and sines are computed so that small angles keep full
/// relative accuracy.
pub fn principal_angles<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Vec<T> {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let cross = qa.tr_mul(&qb);
    let n = qa.ncols().min(qb.ncols());
    let mut cos = crate::linalg::singular_values(&cross);
    cos.truncate(n);
    let resid = &qb - &qa * &cross;
    let mut sin = crate::linalg::singular_values(&resid);
    sin.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    // pair sines ascending with cosines descending
    let extra = sin.len().saturating_sub(n);
    let sin: Vec<T> = sin.into_iter().skip(extra).collect();
    let mut angles: Vec<T> = (0..n)
        .map(|i| {
            let s = sin.get(i).copied().unwrap_or_else(T::zero).min(T::one());
            let c = cos[i].min(T::one());
            s.atan2(c)
        })
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    angles
}

/// The identifiability bound and its inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifiabilityVerdict {
    pub k: usize,
    /// `(|L| - J) / 2 - max L_j + 5/2`, exact.
    #[serde(serialize_with = "ratio_as_f64")]
    pub bound: Ratio<i64>,
    pub k_max: f64,
    pub identifiable: bool,
    pub total_levels: usize,
    pub questions: usize,
    pub max_level: usize,
    /// Whether `2K + 2p - 1 <= |L|` (completion precondition).
    pub completion_bound_holds: bool,
}

fn ratio_as_f64<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(*r.numer() as f64 / *r.denom() as f64)
}

pub fn check_identifiability(schema: &Schema, k: usize) -> IdentifiabilityVerdict {
    let n = schema.total_levels() as i64;
    let j = schema.questions() as i64;
    let p = schema.max_level() as i64;
    let bound = Ratio::new(n - j - 2 * p + 5, 2);
    IdentifiabilityVerdict {
        k,
        bound,
        k_max: *bound.numer() as f64 / *bound.denom() as f64,
        identifiable: Ratio::from_integer(k as i64) <= bound,
        total_levels: schema.total_levels(),
        questions: schema.questions(),
        max_level: schema.max_level(),
        completion_bound_holds: completion_bound_holds(schema, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_matrix::build_moment_matrix;
    use crate::moments::ExactMoments;
    use crate::pattern::enumerate_patterns;

    fn basis_j5() -> DMatrix<f64> {
        DMatrix::from_column_slice(
            10,
            2,
            &[
                0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6, 0.15, 0.85, //
                0.3, 0.7, 0.6, 0.4, 0.1, 0.9, 0.75, 0.25, 0.5, 0.5,
            ],
        )
    }

    fn exact(schema: &Schema, basis: &DMatrix<f64>, points: &[(f64, f64)], support: usize) -> ExactMoments<f64> {
        let mut t = ExactMoments::new(schema.clone());
        for p in enumerate_patterns(schema, support) {
            let cells = p.cells(schema);
            let v = points
                .iter()
                .map(|&(g1, w)| {
                    let beta = basis * DVector::from_vec(vec![g1, 1.0 - g1]);
                    w * cells.iter().map(|&c| beta[c]).product::<f64>()
                })
                .sum();
            t.insert(p, v);
        }
        t
    }

    #[test]
    fn exact_two_dimensional_fit() {
        let s = Schema::binary(5).unwrap();
        let b = basis_j5();
        let m = build_moment_matrix(&exact(&s, &b, &[(0.2, 0.5), (0.9, 0.5)], 2), 1).unwrap();
        let fit = fit_subspace(&m, 2).unwrap();
        let angles = fit.principal_angles(&Subspace::from_basis(s.clone(), b.clone()).unwrap());
        assert!(angles.iter().all(|&a| a < 1e-6), "{angles:?}");
        assert!(fit.row_sum_error() < 1e-12);
        assert!(fit.diagnostics().unwrap().objective < 1e-18);
    }

    #[test]
    fn one_point_fit_recovers_beta() {
        let s = Schema::binary(4).unwrap();
        let b = DMatrix::from_column_slice(8, 1, &[0.3, 0.7, 0.6, 0.4, 0.2, 0.8, 0.55, 0.45]);
        let mut t = ExactMoments::new(s.clone());
        for p in enumerate_patterns(&s, 2) {
            t.insert(p.clone(), p.cells(&s).iter().map(|&c| b[c]).product());
        }
        let m = build_moment_matrix(&t, 1).unwrap();
        let fit = fit_subspace(&m, 1).unwrap();
        assert!((fit.basis() - &b).norm() < 1e-10);
        assert!(fit.diagnostics().unwrap().objective < 1e-10);
        assert!(fit.is_nonnegative());
    }

    #[test]
    fn normalization_keeps_span_and_sums() {
        let s = Schema::binary(5).unwrap();
        let b = basis_j5();
        let m = build_moment_matrix(&exact(&s, &b, &[(0.2, 0.5), (0.9, 0.5)], 2), 1).unwrap();
        let mut mixed = b.clone();
        mixed.set_column(0, &(b.column(0) * 2.0));
        mixed.set_column(1, &(b.column(0) + b.column(1)));
        let out = normalize_basis(&mixed, &m).unwrap();
        assert!(out.row_sum_error() < 1e-12);
        assert!(principal_angles(out.basis(), &b).iter().all(|&a| a < 1e-10));
        assert!(out.is_nonnegative());
        // the generating points lie in the span of the new basis
        for g1 in [0.2, 0.9] {
            let beta = &b * DVector::from_vec(vec![g1, 1.0 - g1]);
            let (g, _) = lstsq(out.basis(), &beta);
            assert!((out.basis() * &g - &beta).norm() < 1e-12);
            assert!((g.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_for_normalized_input() {
        let s = Schema::binary(5).unwrap();
        let b = basis_j5();
        let m = build_moment_matrix(&exact(&s, &b, &[(0.2, 0.5), (0.9, 0.5)], 2), 1).unwrap();
        let out = normalize_basis(&b, &m).unwrap();
        assert!(principal_angles(out.basis(), &b).iter().all(|&a| a < 1e-10));
        assert!(out.row_sum_error() < 1e-12);
    }

    #[test]
    fn rank_too_large() {
        let s = Schema::binary(2).unwrap();
        let b = DMatrix::from_column_slice(4, 1, &[0.5; 4]);
        let m = build_moment_matrix(
            &exact(
                &s,
                &DMatrix::from_columns(&[b.column(0), b.column(0)]),
                &[(0.5, 1.0)],
                2,
            ),
            1,
        )
        .unwrap();
        assert!(matches!(
            fit_span(&m, 5, &FitOptions::default()),
            Err(LlsError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn angles_basic_cases() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!((principal_angles(&a, &b)[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(principal_angles(&a, &a)[0].abs() < 1e-15);
        let theta: f64 = 1e-7;
        let c = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, theta.cos(), theta.sin()]);
        let ang: Vec<f64> = principal_angles(&c, &r);
        assert!(ang[0].abs() < 1e-15);
        assert!((ang[1] - theta).abs() < 1e-15);
    }

    #[test]
    fn identifiability_arithmetic() {
        let v = check_identifiability(&Schema::binary(300).unwrap(), 2);
        assert_eq!(v.bound, Ratio::new(301, 2));
        assert!(v.identifiable);
        let v = check_identifiability(&Schema::binary(3).unwrap(), 2);
        assert_eq!(v.bound, Ratio::from_integer(2));
        assert!(v.identifiable);
        assert!(!check_identifiability(&Schema::binary(3).unwrap(), 3).identifiable);
    }

    #[test]
    fn change_of_basis_round_trip() {
        let b = basis_j5();
        let t = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.3, 0.8]);
        let other = &b * &t;
        assert!((express_in(&b, &other) - t).norm() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let s = Schema::binary(5).unwrap();
        let sub = Subspace::from_basis(s, basis_j5()).unwrap();
        let back = Subspace::<f64>::from_json(&sub.to_json()).unwrap();
        assert_eq!(back.basis(), sub.basis());
        assert!(back.is_nonnegative());
    }
}
