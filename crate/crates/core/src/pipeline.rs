//! End-to-end estimation from a dataset, and comparison against a known truth.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{LlsError, Result};
use crate::ingest::{Dataset, PairCounts};
use crate::mixing::{wasserstein1_1d, Distribution1D, MixingEstimate};
use crate::moment_matrix::{build_moment_matrix, singular_value_profile, MomentMatrix, DEFAULT_COL_SUPPORT};
use crate::scalar::Real;
use crate::solver::{Averaging, FullPatternScorer};
use crate::subspace::{
    check_identifiability, fit_span, fit_subspace_with, FitOptions, IdentifiabilityVerdict, Subspace,
};

#[derive(Clone, Debug)]
pub struct EstimateOptions {
    pub k: usize,
    pub col_support: usize,
    pub averaging: Averaging,
    pub fit: FitOptions,
    /// Run even when `K` exceeds the identifiability bound.
    pub force: bool,
}

impl EstimateOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            col_support: DEFAULT_COL_SUPPORT,
            averaging: Averaging::default(),
            fit: FitOptions::default(),
            force: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Estimate<T: Real> {
    pub subspace: Subspace<T>,
    pub verdict: IdentifiabilityVerdict,
    pub mixing: MixingEstimate<T>,
    /// Solved coordinates of every individual, in dataset order.
    pub individuals: Vec<DVector<T>>,
}

/// Moment matrix of a dataset; pair counts suffice for single-cell columns.
pub fn dataset_matrix<T: Real>(ds: &Dataset, col_support: usize) -> Result<MomentMatrix<T>> {
    if col_support == 1 {
        build_moment_matrix(&PairCounts::from_dataset(ds), 1)
    } else {
        build_moment_matrix(ds, col_support)
    }
}

/// Subspace fit, full-pattern solves and the empirical mixing estimate.
pub fn estimate<T: Real>(ds: &Dataset, opts: &EstimateOptions) -> Result<Estimate<T>> {
    let schema = ds.schema();
    if opts.k == 0 {
        return Err(LlsError::Precondition("K must be at least 1".into()));
    }
    let verdict = check_identifiability(schema, opts.k);
    if !verdict.identifiable && !opts.force {
        return Err(LlsError::NotIdentifiable {
            k: opts.k,
            bound: verdict.k_max,
        });
    }
    let m = dataset_matrix::<T>(ds, opts.col_support)?;
    let subspace = fit_subspace_with(&m, opts.k, &opts.fit)?;
    let scorer = FullPatternScorer::new(&subspace, ds)?;
    let scores = scorer.score_all(opts.averaging)?;
    let points = (0..scorer.distinct())
        .map(|i| (scorer.pattern(i), scores[i].clone(), scorer.count(i)))
        .collect();
    let mixing = MixingEstimate::from_counts(points, ds.len() as u64)?;
    let individuals = scorer.membership().iter().map(|&i| scores[i].clone()).collect();
    Ok(Estimate {
        subspace,
        verdict,
        mixing,
        individuals,
    })
}

/// Coordinates re-expressed in another basis of (nearly) the same subspace.
pub fn to_basis<T: Real>(est: &Subspace<T>, truth: &Subspace<T>, g: &DVector<T>) -> DVector<T> {
    est.coordinates_in(truth) * g
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(mut xs: Vec<f64>) -> Self {
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                q50: f64::NAN,
                q90: f64::NAN,
                q99: f64::NAN,
                max: f64::NAN,
            };
        }
        xs.sort_by(f64::total_cmp);
        let at = |q: f64| xs[((q * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1)];
        Self {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            q50: at(0.5),
            q90: at(0.9),
            q99: at(0.99),
            max: xs[xs.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub principal_angles: Vec<f64>,
    pub max_angle: f64,
    /// Between restored and latent `g_1`, for `K = 2`.
    pub w1_g1: Option<f64>,
    /// Largest absolute coordinate error per individual.
    pub expectation_error: Quantiles,
    pub out_of_simplex: usize,
}

impl<T: Real> Estimate<T> {
    /// The mixing estimate in the coordinates of another basis.
    pub fn mixing_in(&self, truth: &Subspace<T>) -> Result<MixingEstimate<T>> {
        self.mixing.map_coords(&self.subspace.coordinates_in(truth))
    }
}

/// Restored `g_1` in the true basis as a weighted atom distribution.
pub fn restored_g1(est: &Estimate<f64>, truth: &Subspace<f64>) -> Distribution1D<f64> {
    est.mixing_in(truth).expect("same K").marginal(0)
}

pub fn evaluate(
    subspace: &Subspace<f64>,
    individuals: &[DVector<f64>],
    truth: &Subspace<f64>,
    latent: &[Vec<f64>],
) -> Result<Evaluation> {
    if subspace.schema() != truth.schema() {
        return Err(LlsError::SchemaMismatch(format!(
            "estimate has {} questions, truth has {}",
            subspace.schema().questions(),
            truth.schema().questions()
        )));
    }
    if subspace.k() != truth.k() {
        return Err(LlsError::Precondition(format!(
            "estimate has K = {}, truth has K = {}",
            subspace.k(),
            truth.k()
        )));
    }
    if individuals.len() != latent.len() || latent.iter().any(|g| g.len() != truth.k()) {
        return Err(LlsError::Precondition(format!(
            "{} estimated individuals against {} latent records of dimension {}",
            individuals.len(),
            latent.len(),
            truth.k()
        )));
    }
    let angles = subspace.principal_angles(truth);
    let c = subspace.coordinates_in(truth);
    let mapped: Vec<DVector<f64>> = individuals.iter().map(|g| &c * g).collect();
    let errors = mapped
        .iter()
        .zip(latent)
        .map(|(g, t)| g.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let w1_g1 = (truth.k() == 2).then(|| {
        let n = latent.len() as f64;
        let restored = Distribution1D::atoms(mapped.iter().map(|g| (g[0], 1.0 / n)));
        let true_g1 = Distribution1D::atoms(latent.iter().map(|g| (g[0], 1.0 / n)));
        wasserstein1_1d(&restored, &true_g1)
    });
    let out_of_simplex = mapped
        .iter()
        .filter(|g| g.iter().any(|&x| !(-0.1..=1.1).contains(&x)))
        .count();
    Ok(Evaluation {
        max_angle: angles.iter().copied().fold(0.0, f64::max),
        principal_angles: angles,
        w1_g1,
        expectation_error: Quantiles::of(errors),
        out_of_simplex,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankScanEntry {
    pub k: usize,
    pub objective: f64,
    pub relative_objective: f64,
    pub converged: bool,
    pub identifiability: IdentifiabilityVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankScan {
    pub singular_values: Vec<f64>,
    pub entries: Vec<RankScanEntry>,
}

/// Masked-fit residual for each `K`, plus the singular-value profile.
pub fn rank_scan(ds: &Dataset, ks: &[usize], col_support: usize) -> Result<RankScan> {
    if ks.contains(&0) {
        return Err(LlsError::Precondition("K must be at least 1".into()));
    }
    let m = dataset_matrix::<f64>(ds, col_support)?;
    let singular_values = singular_value_profile(&m)?;
    let fit = FitOptions::default();
    let entries = ks
        .iter()
        .map(|&k| {
            let d = match fit_span(&m, k, &fit) {
                Ok(s) => s.diagnostics,
                Err(LlsError::NotConverged { iterations, objective }) => crate::subspace::FitDiagnostics {
                    iterations,
                    objective,
                    relative_objective: f64::NAN,
                    converged: false,
                },
                Err(e) => return Err(e),
            };
            Ok(RankScanEntry {
                k,
                objective: d.objective,
                relative_objective: d.relative_objective,
                converged: d.converged,
                identifiability: check_identifiability(ds.schema(), k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankScan {
        singular_values,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::Schema;
    use crate::simulator::{sample, BasisSpec, GeneratorConfig, MixingSpec};

    fn config(j: usize, n: usize, mixing: MixingSpec) -> GeneratorConfig {
        GeneratorConfig {
            schema: Schema::binary(j).unwrap(),
            k: 2,
            basis: BasisSpec::Random {
                seed: None,
                min_separation: 0.3,
            },
            mixing,
            n,
            seed: 3,
        }
    }

    #[test]
    fn recovers_two_atoms() {
        let s = sample(&config(200, 4000, MixingSpec::atoms_on_g1(&[(0.1, 0.5), (0.4, 0.5)]))).unwrap();
        let est = estimate::<f64>(&s.dataset, &EstimateOptions::new(2)).unwrap();
        assert!((est.mixing.total_weight() - 1.0).abs() < 1e-12);
        assert!(est.subspace.row_sum_error() < 1e-12);
        let ev = evaluate(&est.subspace, &est.individuals, &s.basis, &s.latent).unwrap();
        assert!(ev.max_angle < 0.2, "{ev:?}");
        assert!(ev.w1_g1.unwrap() < 0.1, "{ev:?}");
        let g1 = restored_g1(&est, &s.basis);
        assert!((g1.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_unidentifiable_k() {
        let s = sample(&config(3, 50, MixingSpec::atoms_on_g1(&[(0.5, 1.0)]))).unwrap();
        let r = estimate::<f64>(&s.dataset, &EstimateOptions::new(3));
        assert!(matches!(r, Err(LlsError::NotIdentifiable { .. })));
        assert!(estimate::<f64>(&s.dataset, &EstimateOptions::new(0)).is_err());
    }

    #[test]
    fn evaluation_rejects_mismatch() {
        let a = sample(&config(10, 100, MixingSpec::atoms_on_g1(&[(0.5, 1.0)]))).unwrap();
        let b = sample(&config(12, 100, MixingSpec::atoms_on_g1(&[(0.5, 1.0)]))).unwrap();
        let ind: Vec<_> = a.latent.iter().map(|g| DVector::from_vec(g.clone())).collect();
        assert!(evaluate(&a.basis, &ind, &b.basis, &b.latent).is_err());
        let ev = evaluate(&a.basis, &ind, &a.basis, &a.latent).unwrap();
        assert!(ev.max_angle < 1e-7 && ev.w1_g1.unwrap() < 1e-12);
    }

    #[test]
    fn rank_scan_drops_at_true_k() {
        let s = sample(&config(40, 20_000, MixingSpec::atoms_on_g1(&[(0.1, 0.5), (0.8, 0.5)]))).unwrap();
        let scan = rank_scan(&s.dataset, &[1, 2, 3], 1).unwrap();
        let r: Vec<f64> = scan.entries.iter().map(|e| e.objective).collect();
        assert!(r[0] > 10.0 * r[1], "{r:?}");
        assert!(rank_scan(&s.dataset, &[0], 1).is_err());
    }

    #[test]
    fn quantiles() {
        let q = Quantiles::of((0..=100).map(f64::from).collect());
        assert_eq!((q.q50, q.q90, q.max), (50.0, 90.0, 100.0));
    }
}
