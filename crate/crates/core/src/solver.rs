//! The main system of equations: conditional moments `g^v_l` given a basis.
//!
//! For a pattern `l` with a zero at question `j`, every level `m` of `j`
//! gives
//!
//! ```text
//! M_l * sum_k lambda^k_{jm} g^{v+e_k}_l = M_{l'} g^v_{l'},   l' = l with j := m
//! ```
//!
//! together with the normalization `sum_k g^{v+e_k}_l = g^v_l`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};
use crate::ingest::Dataset;
use crate::linalg::{constrained_lstsq, normalized_lstsq, normalized_normal_solve};
use crate::moments::MomentSource;
use crate::pattern::{substitute, Level, Pattern, Schema};
use crate::scalar::Real;
use crate::subspace::Subspace;

/// Exponent vector `v = (v_1, ..., v_K)` of a conditional moment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentOrder(pub Vec<u32>);

impl MomentOrder {
    pub fn zero(k: usize) -> Self {
        Self(vec![0; k])
    }

    pub fn unit(k: usize, i: usize) -> Self {
        let mut v = vec![0; k];
        v[i] = 1;
        Self(v)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// `v^k`: the `k`-th component increased by one.
    pub fn increment(&self, k: usize) -> Self {
        let mut v = self.0.clone();
        v[k] += 1;
        Self(v)
    }

    pub fn key(&self) -> String {
        self.0.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    }

    /// `prod_k g_k^{v_k}`.
    pub fn monomial<T: Real>(&self, g: &[T]) -> T {
        self.0
            .iter()
            .zip(g)
            .fold(T::one(), |acc, (&e, &x)| acc * x.powi(e as i32))
    }
}

impl fmt::Display for MomentOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.key())
    }
}

/// All orders of the given degree, lexicographically descending:
/// `(n,0,..), (n-1,1,..), ..., (..,0,n)`.
pub fn orders_of_degree(k: usize, n: u32) -> Vec<MomentOrder> {
    fn rec(k: usize, n: u32, prefix: &mut Vec<u32>, out: &mut Vec<MomentOrder>) {
        if prefix.len() + 1 == k {
            prefix.push(n);
            out.push(MomentOrder(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=n).rev() {
            prefix.push(first);
            rec(k, n - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, n, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// How rows of the stacked system are weighted after dividing by `M_l`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowWeighting {
    #[default]
    Uniform,
    /// Rows scaled by `sqrt(M_{l'})`, proportional to the square root of
    /// the count behind the right-hand side.
    SqrtCount,
}

/// Combination rule for patterns without zeros.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Plain mean of the `J` single-zero solutions.
    Uniform,
    /// Pooled least squares over all single-zero systems, each weighted by
    /// the mass of its condition.
    #[default]
    Precision,
}

#[derive(Clone, Debug, Default)]
pub struct SolverOptions {
    pub weighting: RowWeighting,
    pub averaging: Averaging,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMoments<T> {
    pub pattern: Pattern,
    pub values: BTreeMap<MomentOrder, T>,
    pub expectations: DVector<T>,
    /// RMS residual of the expectation system (after weighting).
    pub residual: T,
    /// Set when some expectation lies outside `[-0.1, 1.1]`.
    pub out_of_range: bool,
}

impl<T: Real> ConditionalMoments<T> {
    pub fn get(&self, v: &MomentOrder) -> Option<T> {
        self.values.get(v).copied()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let values: BTreeMap<String, f64> = self.values.iter().map(|(k, v)| (k.key(), v.as_f64())).collect();
        serde_json::json!({
            "pattern": self.pattern,
            "values": values,
            "expectations": self.expectations.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
            "residual": self.residual.as_f64(),
            "out_of_range": self.out_of_range,
        })
    }
}

fn out_of_range<T: Real>(g: &DVector<T>) -> bool {
    g.iter().any(|&x| x < T::lit(-0.1) || x > T::lit(1.1))
}

/// `beta = Lambda g`.
pub fn beta_of<T: Real>(basis: &Subspace<T>, g: &DVector<T>) -> DVector<T> {
    basis.basis() * g
}

/// Solves the main system for a pattern with zeros, one order at a time,
/// caching every solved `(pattern, degree)`.
pub struct MomentSolver<'a, T: Real, S: MomentSource<T> + ?Sized> {
    basis: &'a Subspace<T>,
    src: &'a S,
    opts: SolverOptions,
    cache: HashMap<(Pattern, u32), (Vec<T>, T)>,
}

impl<'a, T: Real, S: MomentSource<T> + ?Sized> MomentSolver<'a, T, S> {
    pub fn new(basis: &'a Subspace<T>, src: &'a S, opts: SolverOptions) -> Self {
        Self {
            basis,
            src,
            opts,
            cache: HashMap::new(),
        }
    }

    fn k(&self) -> usize {
        self.basis.k()
    }

    /// Conditional moments of exactly degree `n`, in [`orders_of_degree`]
    /// order, with the residual of the solve that produced them.
    pub fn degree(&mut self, pattern: &Pattern, n: u32) -> Result<(Vec<T>, T)> {
        let k = self.k();
        if n == 0 {
            return Ok((vec![T::one()], T::zero()));
        }
        if let Some(hit) = self.cache.get(&(pattern.clone(), n)) {
            return Ok(hit.clone());
        }
        let schema = self.src.schema().clone();
        schema.check(pattern)?;
        let zeros = pattern.zero_positions();
        if zeros.is_empty() {
            return Err(LlsError::MissingDependency {
                pattern: pattern.to_string(),
                order: format!("degree {n}"),
            });
        }
        let m_l = self.src.moment(pattern)?;
        if m_l <= T::zero() {
            return Err(LlsError::UnobservedCondition(pattern.to_string()));
        }

        let lower = orders_of_degree(k, n - 1);
        let upper = orders_of_degree(k, n);
        let index: HashMap<&MomentOrder, usize> = upper.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let at_l = self.degree(pattern, n - 1)?.0;

        let rows = pattern.zero_capacity(&schema) * lower.len();
        let mut a = DMatrix::zeros(rows, upper.len());
        let mut b = DVector::zeros(rows);
        let mut row = 0;
        for &j in &zeros {
            for level in 1..=schema.level_count(j) {
                let lp = substitute(&schema, pattern, j, level as Level)?;
                let m_lp = self.src.moment(&lp)?;
                let rhs_lower: Vec<T> = if m_lp == T::zero() || n == 1 {
                    vec![T::one(); lower.len()]
                } else {
                    self.degree(&lp, n - 1)
                        .map_err(|e| match e {
                            LlsError::MissingDependency { .. } => LlsError::MissingDependency {
                                pattern: lp.to_string(),
                                order: format!("degree {}", n - 1),
                            },
                            other => other,
                        })?
                        .0
                };
                let weight = match self.opts.weighting {
                    RowWeighting::Uniform => T::one(),
                    RowWeighting::SqrtCount => m_lp.sqrt(),
                };
                let cell = schema.offset(j) + level - 1;
                for (vi, v) in lower.iter().enumerate() {
                    for kk in 0..k {
                        a[(row, index[&v.increment(kk)])] += weight * self.basis.basis()[(cell, kk)];
                    }
                    b[row] = weight * m_lp / m_l * rhs_lower[vi];
                    row += 1;
                }
            }
        }
        let mut e = DMatrix::zeros(lower.len(), upper.len());
        for (vi, v) in lower.iter().enumerate() {
            for kk in 0..k {
                e[(vi, index[&v.increment(kk)])] = T::one();
            }
        }
        let f = DVector::from_vec(at_l);
        let (x, rank) = constrained_lstsq(&a, &b, &e, &f);
        if rank < upper.len() {
            return Err(LlsError::Underdetermined {
                pattern: pattern.to_string(),
                rank,
                k: upper.len(),
                capacity: pattern.zero_capacity(&schema) - zeros.len(),
            });
        }
        let resid = (&a * &x - &b).norm() / T::from_count(rows.max(1) as u64).sqrt();
        let out = (x.iter().copied().collect::<Vec<_>>(), resid);
        self.cache.insert((pattern.clone(), n), out.clone());
        Ok(out)
    }

    /// All conditional moments of degree at most `up_to`.
    pub fn moments(&mut self, pattern: &Pattern, up_to: u32) -> Result<ConditionalMoments<T>> {
        let k = self.k();
        let mut values = BTreeMap::new();
        values.insert(MomentOrder::zero(k), T::one());
        let (first, residual) = self.degree(pattern, 1)?;
        for n in 1..=up_to {
            let (vals, _) = self.degree(pattern, n)?;
            for (v, x) in orders_of_degree(k, n).into_iter().zip(vals) {
                values.insert(v, x);
            }
        }
        let expectations = DVector::from_vec(first);
        Ok(ConditionalMoments {
            pattern: pattern.clone(),
            out_of_range: out_of_range(&expectations),
            values,
            expectations,
            residual,
        })
    }
}

/// Conditional expectations `g_{l.}` for a pattern with at least one zero.
pub fn solve_expectations<T: Real, S: MomentSource<T> + ?Sized>(
    basis: &Subspace<T>,
    src: &S,
    pattern: &Pattern,
    opts: &SolverOptions,
) -> Result<ConditionalMoments<T>> {
    MomentSolver::new(basis, src, opts.clone()).moments(pattern, 1)
}

/// Conditional moments of every degree up to `up_to`.
pub fn solve_higher_moments<T: Real, S: MomentSource<T> + ?Sized>(
    basis: &Subspace<T>,
    src: &S,
    pattern: &Pattern,
    up_to: u32,
    opts: &SolverOptions,
) -> Result<ConditionalMoments<T>> {
    MomentSolver::new(basis, src, opts.clone()).moments(pattern, up_to)
}

/// Left side minus right side of one main-system equation, using the
/// solver's own values at both patterns.
pub fn main_equation_residual<T: Real, S: MomentSource<T> + ?Sized>(
    solver: &mut MomentSolver<'_, T, S>,
    pattern: &Pattern,
    question: usize,
    level: Level,
    v: &MomentOrder,
) -> Result<T> {
    let schema = solver.src.schema().clone();
    let k = solver.k();
    let n = v.degree();
    let lp = substitute(&schema, pattern, question, level)?;
    let m_l = solver.src.moment(pattern)?;
    let m_lp = solver.src.moment(&lp)?;
    let upper = orders_of_degree(k, n + 1);
    let vals = solver.degree(pattern, n + 1)?.0;
    let cell = schema.offset(question) + level as usize - 1;
    let mut lhs = T::zero();
    for kk in 0..k {
        let pos = upper.iter().position(|u| *u == v.increment(kk)).expect("order present");
        lhs += solver.basis.basis()[(cell, kk)] * vals[pos];
    }
    lhs *= m_l;
    let rhs = if n == 0 {
        m_lp
    } else if m_lp == T::zero() {
        T::zero()
    } else {
        let lower = orders_of_degree(k, n);
        let pos = lower.iter().position(|u| u == v).expect("order present");
        m_lp * solver.degree(&lp, n)?.0[pos]
    };
    Ok(lhs - rhs)
}

/// Expectations for a pattern without zeros, combined from its `J`
/// single-zero reductions.
pub fn average_full_pattern<T: Real, S: MomentSource<T> + ?Sized>(
    basis: &Subspace<T>,
    src: &S,
    pattern: &Pattern,
    averaging: Averaging,
) -> Result<DVector<T>> {
    let schema = src.schema();
    schema.check(pattern)?;
    if !pattern.is_full() {
        return Err(LlsError::Precondition(format!("{pattern} has zeros")));
    }
    let k = basis.k();
    let lambda = basis.basis();
    match averaging {
        Averaging::Uniform => {
            let mut failed = Vec::new();
            let mut sum = DVector::zeros(k);
            let opts = SolverOptions::default();
            for j in 0..schema.questions() {
                let reduced = pattern.with_zero(j);
                match solve_expectations(basis, src, &reduced, &opts) {
                    Ok(c) => sum += c.expectations,
                    Err(e) => failed.push(format!("{reduced}: {e}")),
                }
            }
            if !failed.is_empty() {
                return Err(LlsError::Precondition(format!(
                    "unsolvable reductions of {pattern}: {}",
                    failed.join("; ")
                )));
            }
            let g = sum / T::from_count(schema.questions() as u64);
            let total = g.sum();
            Ok(g / total)
        }
        Averaging::Precision => {
            let mut gram = DMatrix::zeros(k, k);
            let mut atb = DVector::zeros(k);
            for j in 0..schema.questions() {
                let reduced = pattern.with_zero(j);
                let weight = src.moment(&reduced)?;
                if weight <= T::zero() {
                    continue;
                }
                for level in 1..=schema.level_count(j) {
                    let cell = schema.offset(j) + level - 1;
                    let lam = lambda.row(cell).transpose();
                    gram += &lam * lam.transpose() * weight;
                    let lp = substitute(schema, &reduced, j, level as Level)?;
                    atb += lam * src.moment(&lp)?;
                }
            }
            if gram.iter().all(|&x| x == T::zero()) {
                return Err(LlsError::UnobservedCondition(pattern.to_string()));
            }
            let (g, rank) = normalized_normal_solve(&gram, &atb);
            if rank < k {
                return Err(LlsError::Underdetermined {
                    pattern: pattern.to_string(),
                    rank,
                    k,
                    capacity: schema.total_levels() - schema.questions(),
                });
            }
            Ok(g)
        }
    }
}

/// Expectations for every distinct full pattern of a dataset.
///
/// Counts of the neighbours `x[j := m]` are found through Zobrist hashes
/// of the distinct rows, so one pattern costs `O(|L| K^2)`.
pub struct FullPatternScorer<'a, T: Real> {
    basis: &'a Subspace<T>,
    schema: Schema,
    rows: Vec<&'a [Level]>,
    counts: Vec<u64>,
    hashes: Vec<u64>,
    lookup: HashMap<u64, Vec<usize>>,
    zobrist: Vec<u64>,
    /// `sum_m lambda_{jm} lambda_{jm}^T` per question.
    per_question: Vec<DMatrix<T>>,
    /// Distinct-row index of every individual.
    membership: Vec<usize>,
}

impl<'a, T: Real> FullPatternScorer<'a, T> {
    pub fn new(basis: &'a Subspace<T>, data: &'a Dataset) -> Result<Self> {
        let schema = data.schema().clone();
        if basis.schema() != &schema {
            return Err(LlsError::SchemaMismatch("basis and dataset schemas differ".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_2b15);
        let zobrist: Vec<u64> = (0..schema.total_levels()).map(|_| rng.next_u64()).collect();
        let hash_row = |row: &[Level]| {
            row.iter()
                .enumerate()
                .fold(0u64, |h, (j, &l)| h ^ zobrist[schema.offset(j) + l as usize - 1])
        };
        let mut rows: Vec<&[Level]> = Vec::new();
        let mut counts = Vec::new();
        let mut hashes = Vec::new();
        let mut lookup: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut membership = Vec::with_capacity(data.len());
        for row in data.rows() {
            let h = hash_row(row);
            let bucket = lookup.entry(h).or_default();
            let found = bucket.iter().copied().find(|&i| rows[i] == row);
            let idx = match found {
                Some(i) => i,
                None => {
                    rows.push(row);
                    counts.push(0);
                    hashes.push(h);
                    bucket.push(rows.len() - 1);
                    rows.len() - 1
                }
            };
            counts[idx] += 1;
            membership.push(idx);
        }
        let lambda = basis.basis();
        let per_question = (0..schema.questions())
            .map(|j| {
                let block = lambda.rows(schema.offset(j), schema.level_count(j));
                block.tr_mul(&block)
            })
            .collect();
        Ok(Self {
            basis,
            schema,
            rows,
            counts,
            hashes,
            lookup,
            zobrist,
            per_question,
            membership,
        })
    }

    pub fn distinct(&self) -> usize {
        self.rows.len()
    }

    pub fn pattern(&self, i: usize) -> Pattern {
        Pattern::new(self.rows[i].to_vec())
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    /// Index of the distinct row each individual belongs to.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Count of the row equal to distinct row `i` except `question := level`.
    fn neighbour_count(&self, i: usize, question: usize, level: Level) -> u64 {
        let row = self.rows[i];
        if row[question] == level {
            return self.counts[i];
        }
        let o = self.schema.offset(question);
        let h = self.hashes[i] ^ self.zobrist[o + row[question] as usize - 1] ^ self.zobrist[o + level as usize - 1];
        let Some(bucket) = self.lookup.get(&h) else { return 0 };
        bucket
            .iter()
            .copied()
            .find(|&c| {
                let other = self.rows[c];
                other[question] == level
                    && other
                        .iter()
                        .zip(row)
                        .enumerate()
                        .all(|(j, (a, b))| j == question || a == b)
            })
            .map_or(0, |c| self.counts[c])
    }

    /// Expectations for distinct row `i`.
    pub fn score(&self, i: usize, averaging: Averaging) -> Result<DVector<T>> {
        let k = self.basis.k();
        let lambda = self.basis.basis();
        match averaging {
            Averaging::Precision => {
                let mut gram = DMatrix::zeros(k, k);
                let mut atb = DVector::zeros(k);
                for j in 0..self.schema.questions() {
                    let o = self.schema.offset(j);
                    let mut total = 0u64;
                    for level in 1..=self.schema.level_count(j) {
                        let c = self.neighbour_count(i, j, level as Level);
                        if c > 0 {
                            total += c;
                            atb += lambda.row(o + level - 1).transpose() * T::from_count(c);
                        }
                    }
                    debug_assert!(total >= self.counts[i]);
                    gram += &self.per_question[j] * T::from_count(total);
                }
                let (g, rank) = normalized_normal_solve(&gram, &atb);
                if rank < k {
                    return Err(LlsError::Underdetermined {
                        pattern: self.pattern(i).to_string(),
                        rank,
                        k,
                        capacity: self.schema.total_levels() - self.schema.questions(),
                    });
                }
                Ok(g)
            }
            Averaging::Uniform => {
                let mut sum = DVector::zeros(k);
                for j in 0..self.schema.questions() {
                    let o = self.schema.offset(j);
                    let lj = self.schema.level_count(j);
                    let neighbours: Vec<u64> = (1..=lj).map(|l| self.neighbour_count(i, j, l as Level)).collect();
                    let total: u64 = neighbours.iter().sum();
                    let a = lambda.rows(o, lj).into_owned();
                    let b = DVector::from_fn(lj, |l, _| T::from_count(neighbours[l]) / T::from_count(total));
                    let (g, rank) = normalized_lstsq(&a, &b);
                    if rank < k {
                        return Err(LlsError::Underdetermined {
                            pattern: self.pattern(i).with_zero(j).to_string(),
                            rank,
                            k,
                            capacity: lj - 1,
                        });
                    }
                    sum += g;
                }
                let g = sum / T::from_count(self.schema.questions() as u64);
                let s = g.sum();
                Ok(g / s)
            }
        }
    }

    /// Expectations for every distinct row, in first-appearance order.
    pub fn score_all(&self, averaging: Averaging) -> Result<Vec<DVector<T>>> {
        (0..self.distinct())
            .into_par_iter()
            .map(|i| self.score(i, averaging))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::frequency_table;
    use crate::moments::ExactMoments;
    use crate::pattern::enumerate_patterns;

    fn basis() -> Subspace<f64> {
        let s = Schema::binary(5).unwrap();
        let b = DMatrix::from_column_slice(
            10,
            2,
            &[
                0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6, 0.15, 0.85, //
                0.3, 0.7, 0.6, 0.4, 0.1, 0.9, 0.75, 0.25, 0.5, 0.5,
            ],
        );
        Subspace::from_basis(s, b).unwrap()
    }

    const POINTS: [(f64, f64); 2] = [(0.2, 0.4), (0.9, 0.6)];

    fn exact(basis: &Subspace<f64>) -> ExactMoments<f64> {
        let s = basis.schema();
        let mut t = ExactMoments::new(s.clone());
        for p in enumerate_patterns(s, s.questions()) {
            let cells = p.cells(s);
            let v = POINTS
                .iter()
                .map(|&(g1, w)| {
                    let beta = beta_of(basis, &DVector::from_vec(vec![g1, 1.0 - g1]));
                    w * cells.iter().map(|&c| beta[c]).product::<f64>()
                })
                .sum();
            t.insert(p, v);
        }
        t
    }

    /// `E[G^v | X = l]` by direct summation over the two points.
    fn direct(basis: &Subspace<f64>, p: &Pattern, v: &MomentOrder) -> f64 {
        let cells = p.cells(basis.schema());
        let mut num = 0.0;
        let mut den = 0.0;
        for &(g1, w) in &POINTS {
            let g = [g1, 1.0 - g1];
            let beta = beta_of(basis, &DVector::from_vec(g.to_vec()));
            let like: f64 = cells.iter().map(|&c| beta[c]).product();
            num += w * like * v.monomial(&g);
            den += w * like;
        }
        num / den
    }

    #[test]
    fn order_enumeration() {
        let o = orders_of_degree(2, 2);
        assert_eq!(
            o,
            vec![
                MomentOrder(vec![2, 0]),
                MomentOrder(vec![1, 1]),
                MomentOrder(vec![0, 2])
            ]
        );
        assert_eq!(orders_of_degree(3, 2).len(), 6);
        assert_eq!(orders_of_degree(3, 0), vec![MomentOrder::zero(3)]);
        assert_eq!(
            MomentOrder(vec![1, 3, 2, 1]).increment(2),
            MomentOrder(vec![1, 3, 3, 1])
        );
    }

    #[test]
    fn expectations_match_direct_summation() {
        let b = basis();
        let t = exact(&b);
        let p = Pattern::from([1, 0, 0, 0, 0]);
        let c = solve_expectations(&b, &t, &p, &SolverOptions::default()).unwrap();
        for k in 0..2 {
            let want = direct(&b, &p, &MomentOrder::unit(2, k));
            assert!((c.expectations[k] - want).abs() < 1e-10);
        }
        assert!((c.expectations.sum() - 1.0).abs() < 1e-12);
        assert!(c.residual < 1e-12);
    }

    #[test]
    fn second_moments_and_variance() {
        let b = basis();
        let t = exact(&b);
        for p in [Pattern::from([0, 0, 0, 0, 0]), Pattern::from([2, 0, 1, 0, 0])] {
            let c = solve_higher_moments(&b, &t, &p, 2, &SolverOptions::default()).unwrap();
            for v in orders_of_degree(2, 2) {
                assert!((c.get(&v).unwrap() - direct(&b, &p, &v)).abs() < 1e-8, "{p} {v}");
            }
            let var = c.get(&MomentOrder(vec![2, 0])).unwrap() - c.expectations[0].powi(2);
            assert!(var >= -1e-8);
        }
    }

    #[test]
    fn weighting_does_not_change_exact_solutions() {
        let b = basis();
        let t = exact(&b);
        let p = Pattern::from([0, 2, 0, 0, 1]);
        let opts = SolverOptions {
            weighting: RowWeighting::SqrtCount,
            ..SolverOptions::default()
        };
        let a = solve_expectations(&b, &t, &p, &opts).unwrap();
        let c = solve_expectations(&b, &t, &p, &SolverOptions::default()).unwrap();
        assert!((a.expectations - c.expectations).norm() < 1e-12);
    }

    #[test]
    fn main_equations_hold_on_exact_input() {
        let b = basis();
        let t = exact(&b);
        let s = b.schema().clone();
        let mut solver = MomentSolver::new(&b, &t, SolverOptions::default());
        let p = Pattern::from([1, 0, 0, 0, 0]);
        for v in orders_of_degree(2, 0).into_iter().chain(orders_of_degree(2, 1)) {
            for j in p.zero_positions() {
                for l in 1..=s.level_count(j) {
                    let r = main_equation_residual(&mut solver, &p, j, l as Level, &v).unwrap();
                    assert!(r.abs() < 1e-12, "{v} {j} {l}: {r}");
                }
            }
        }
    }

    #[test]
    fn k_one_is_forced() {
        let s = Schema::binary(3).unwrap();
        let b = Subspace::from_basis(
            s.clone(),
            DMatrix::from_column_slice(6, 1, &[0.3, 0.7, 0.6, 0.4, 0.2, 0.8]),
        )
        .unwrap();
        let mut t = ExactMoments::new(s.clone());
        for p in enumerate_patterns(&s, 3) {
            // arbitrary data: the solution is pinned by normalization
            t.insert(p, 0.125);
        }
        let c = solve_expectations(&b, &t, &Pattern::from([0, 1, 0]), &SolverOptions::default()).unwrap();
        assert_eq!(c.expectations[0], 1.0);
    }

    #[test]
    fn unobserved_condition() {
        let b = basis();
        let mut t = exact(&b);
        let p = Pattern::from([1, 0, 0, 0, 0]);
        t.insert(p.clone(), 0.0);
        assert!(matches!(
            solve_expectations(&b, &t, &p, &SolverOptions::default()),
            Err(LlsError::UnobservedCondition(_))
        ));
    }

    #[test]
    fn full_dependency_is_reported() {
        let b = basis();
        let t = exact(&b);
        // degree 2 at a single-zero pattern needs degree 1 at a full one
        let err =
            solve_higher_moments(&b, &t, &Pattern::from([1, 2, 1, 1, 0]), 2, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, LlsError::MissingDependency { .. }), "{err}");
    }

    #[test]
    fn scorer_agrees_with_table_path() {
        let b = basis();
        let rows: Vec<Vec<Level>> = vec![
            vec![1, 2, 1, 2, 2],
            vec![1, 2, 1, 2, 1],
            vec![1, 2, 1, 2, 2],
            vec![2, 2, 1, 2, 2],
            vec![1, 1, 2, 1, 2],
            vec![1, 2, 2, 2, 2],
        ];
        let ds = Dataset::from_rows(b.schema().clone(), &rows).unwrap();
        let table = frequency_table(&ds, &enumerate_patterns(b.schema(), 5));
        let scorer = FullPatternScorer::new(&b, &ds).unwrap();
        assert_eq!(scorer.distinct(), 5);
        assert_eq!(scorer.count(0), 2);
        for i in 0..scorer.distinct() {
            let p = scorer.pattern(i);
            for mode in [Averaging::Precision, Averaging::Uniform] {
                let fast = scorer.score(i, mode).unwrap();
                let slow: DVector<f64> = average_full_pattern(&b, &table, &p, mode).unwrap();
                assert!((fast - slow).norm() < 1e-12, "{p} {mode:?}");
            }
        }
    }

    #[test]
    fn one_point_mixing_reproduces_point() {
        let b = basis();
        let g = DVector::from_vec(vec![0.35, 0.65]);
        let beta = beta_of(&b, &g);
        let s = b.schema();
        let mut t = ExactMoments::new(s.clone());
        for p in enumerate_patterns(s, 5) {
            t.insert(p.clone(), p.cells(s).iter().map(|&c| beta[c]).product());
        }
        for mode in [Averaging::Uniform, Averaging::Precision] {
            let out = average_full_pattern(&b, &t, &Pattern::from([1, 2, 2, 1, 1]), mode).unwrap();
            assert!((out - &g).norm() < 1e-12);
        }
    }
}
