//! Synthetic data from a known model, and exact moments of that model.
//!
//! Random streams come from ChaCha20 seeded with `seed_from_u64(seed)`;
//! individual `i` draws from stream `i`, the random basis from stream
//! `u64::MAX`, so results do not depend on thread count or platform.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};
use crate::ingest::Dataset;
use crate::moment_matrix::fmt_sig17;
use crate::moments::{ExactMoments, MomentSource};
use crate::pattern::{Level, Pattern, Schema};
use crate::scalar::Real;
use crate::solver::MomentOrder;
use crate::subspace::Subspace;

pub const DEFAULT_MIN_SEPARATION: f64 = 0.3;
const BASIS_STREAM: u64 = u64::MAX;
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub g: Vec<f64>,
    pub weight: f64,
}

/// Distribution of the coordinates `g` (which sum to one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingSpec {
    PointMasses {
        points: Vec<PointMass>,
    },
    /// `K = 2`: `g_1` uniform on the union of the intervals, `g_2 = 1 - g_1`.
    UniformIntervals {
        intervals: Vec<[f64; 2]>,
    },
    /// Discretized density on grid points.
    Grid {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl MixingSpec {
    /// Atoms on `g_1` with `g_2 = 1 - g_1`.
    pub fn atoms_on_g1(atoms: &[(f64, f64)]) -> Self {
        Self::PointMasses {
            points: atoms
                .iter()
                .map(|&(g1, weight)| PointMass {
                    g: vec![g1, 1.0 - g1],
                    weight,
                })
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::PointMasses { points } => points.first().map_or(0, |p| p.g.len()),
            Self::UniformIntervals { .. } => 2,
            Self::Grid { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(LlsError::InvalidConfig(m));
        let check_points = |pts: &[(Vec<f64>, f64)]| -> Result<()> {
            if pts.is_empty() {
                return bad("mixing has no support points".into());
            }
            let mut total = 0.0;
            for (g, w) in pts {
                if g.len() != k {
                    return bad(format!("support point has {} coordinates, K = {k}", g.len()));
                }
                if (g.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad(format!("coordinates {g:?} do not sum to one"));
                }
                if !(*w >= 0.0) || !w.is_finite() {
                    return bad(format!("negative weight {w}"));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("weights sum to {total}, not 1"));
            }
            Ok(())
        };
        match self {
            Self::UniformIntervals { intervals } => {
                if k != 2 {
                    return bad("uniform intervals need K = 2".into());
                }
                if intervals.is_empty() || intervals.iter().any(|[a, b]| !(a < b)) {
                    return bad("intervals must be nonempty with lo < hi".into());
                }
                let mut sorted = intervals.clone();
                sorted.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap());
                if sorted.windows(2).any(|w| w[1][0] < w[0][1]) {
                    return bad("intervals overlap".into());
                }
                Ok(())
            }
            Self::Grid { points, weights } if points.len() != weights.len() => {
                bad("grid points and weights differ in length".into())
            }
            _ => check_points(&self.finite_support().expect("finite")),
        }
    }

    /// Support points with weights, or `None` for continuous mixings.
    pub fn finite_support(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        match self {
            Self::PointMasses { points } => Some(points.iter().map(|p| (p.g.clone(), p.weight)).collect()),
            Self::Grid { points, weights } => Some(points.iter().cloned().zip(weights.iter().copied()).collect()),
            Self::UniformIntervals { .. } => None,
        }
    }

    /// Finite approximation: each interval cut into cells of equal length
    /// (about `n` in total), mass at cell midpoints.
    pub fn discretize(&self, n: usize) -> Self {
        match self {
            Self::UniformIntervals { intervals } => {
                let total: f64 = intervals.iter().map(|[a, b]| b - a).sum();
                let mut points = Vec::new();
                let mut weights = Vec::new();
                for [a, b] in intervals {
                    let cells = (((b - a) / total) * n as f64).round().max(1.0) as usize;
                    let h = (b - a) / cells as f64;
                    for c in 0..cells {
                        let g1 = a + h * (c as f64 + 0.5);
                        points.push(vec![g1, 1.0 - g1]);
                        weights.push(h / total);
                    }
                }
                Self::Grid { points, weights }
            }
            other => other.clone(),
        }
    }

    /// Extreme points of the support (for range checks of `Lambda g`).
    fn corners(&self) -> Vec<Vec<f64>> {
        match self {
            Self::UniformIntervals { intervals } => intervals
                .iter()
                .flat_map(|[a, b]| [vec![*a, 1.0 - a], vec![*b, 1.0 - b]])
                .collect(),
            _ => self
                .finite_support()
                .unwrap_or_default()
                .into_iter()
                .map(|p| p.0)
                .collect(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::UniformIntervals { intervals } => {
                let total: f64 = intervals.iter().map(|[a, b]| b - a).sum();
                let mut u = rng.random::<f64>() * total;
                for [a, b] in intervals {
                    let len = b - a;
                    if u < len {
                        let g1 = a + u;
                        return vec![g1, 1.0 - g1];
                    }
                    u -= len;
                }
                let b = intervals.last().expect("nonempty")[1];
                vec![b, 1.0 - b]
            }
            _ => {
                let support = self.finite_support().expect("finite");
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (g, w) in &support {
                    acc += w;
                    if u < acc {
                        return g.clone();
                    }
                }
                support.last().expect("nonempty").0.clone()
            }
        }
    }

    /// `g_1` marginal as atoms and uniform pieces.
    pub fn g1_distribution(&self) -> crate::mixing::Distribution1D<f64> {
        use crate::mixing::{Distribution1D, Piece};
        match self {
            Self::UniformIntervals { intervals } => {
                let total: f64 = intervals.iter().map(|[a, b]| b - a).sum();
                Distribution1D::from_pieces(
                    intervals
                        .iter()
                        .map(|&[lo, hi]| Piece {
                            mass: (hi - lo) / total,
                            lo,
                            hi,
                        })
                        .collect(),
                )
            }
            _ => Distribution1D::atoms(
                self.finite_support()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|(g, w)| (g[0], w)),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Row-major `|L| x K`.
    Explicit { basis: Vec<Vec<f64>> },
    Random {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_separation")]
        min_separation: f64,
    },
}

fn default_separation() -> f64 {
    DEFAULT_MIN_SEPARATION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub schema: Schema,
    pub k: usize,
    pub basis: BasisSpec,
    pub mixing: MixingSpec,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LlsError::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_basis(&self) -> Result<Subspace<f64>> {
        match &self.basis {
            BasisSpec::Explicit { basis } => {
                let rows = basis.len();
                if basis.iter().any(|r| r.len() != self.k) {
                    return Err(LlsError::InvalidConfig(format!(
                        "basis rows must have K = {} entries",
                        self.k
                    )));
                }
                Subspace::from_basis(self.schema.clone(), DMatrix::from_fn(rows, self.k, |r, c| basis[r][c]))
                    .map_err(|e| LlsError::InvalidConfig(e.to_string()))
            }
            BasisSpec::Random { seed, min_separation } => {
                random_basis(&self.schema, self.k, seed.unwrap_or(self.seed), *min_separation)
            }
        }
    }
}

/// `k` vectors, each drawn per question uniformly from the simplex,
/// redrawn until every pair differs by at least `min_separation` in mean
/// absolute cell difference.
pub fn random_basis(schema: &Schema, k: usize, seed: u64, min_separation: f64) -> Result<Subspace<f64>> {
    if k == 0 {
        return Err(LlsError::InvalidConfig("K must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(BASIS_STREAM);
    let n = schema.total_levels();
    for _ in 0..MAX_REDRAWS {
        let mut b = DMatrix::zeros(n, k);
        for c in 0..k {
            for q in 0..schema.questions() {
                let o = schema.offset(q);
                let lj = schema.level_count(q);
                // normalized exponentials are uniform on the simplex
                let e: Vec<f64> = (0..lj).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                for l in 0..lj {
                    b[(o + l, c)] = e[l] / s;
                }
            }
        }
        let separated =
            (0..k).all(|x| (x + 1..k).all(|y| (b.column(x) - b.column(y)).abs().sum() / n as f64 >= min_separation));
        if separated {
            if let Ok(s) = Subspace::from_basis(schema.clone(), b) {
                return Ok(s);
            }
        }
    }
    Err(LlsError::InvalidConfig(format!(
        "no basis with separation {min_separation} in {MAX_REDRAWS} draws"
    )))
}

fn check_range(basis: &Subspace<f64>, mixing: &MixingSpec) -> Result<()> {
    mixing.validate(basis.k())?;
    for g in mixing.corners() {
        let beta = basis.basis() * DVector::from_vec(g.clone());
        if beta.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
            return Err(LlsError::InvalidConfig(format!(
                "support point {g:?} gives probabilities outside [0, 1]"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub dataset: Dataset,
    /// Coordinates of every individual, in dataset order.
    pub latent: Vec<Vec<f64>>,
    pub basis: Subspace<f64>,
}

/// Draws `n` individuals: `g` from the mixing, `beta = Lambda g`, then
/// independent categorical responses.
pub fn sample(config: &GeneratorConfig) -> Result<Sample> {
    if config.n == 0 {
        return Err(LlsError::InvalidConfig("N must be positive".into()));
    }
    if config.k != config.mixing.k() {
        return Err(LlsError::InvalidConfig(format!(
            "mixing has dimension {}, K = {}",
            config.mixing.k(),
            config.k
        )));
    }
    let basis = config.build_basis()?;
    check_range(&basis, &config.mixing)?;
    let (dataset, latent) = sample_with_basis(&basis, &config.mixing, config.n, config.seed)?;
    Ok(Sample { dataset, latent, basis })
}

pub fn sample_with_basis(
    basis: &Subspace<f64>,
    mixing: &MixingSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Vec<Vec<f64>>)> {
    let schema = basis.schema().clone();
    let lambda = basis.basis();
    let draws: Vec<(Vec<Level>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let g = mixing.sample(&mut rng);
            let beta = lambda * DVector::from_column_slice(&g);
            let row = (0..schema.questions())
                .map(|q| {
                    let o = schema.offset(q);
                    let lj = schema.level_count(q);
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for l in 0..lj {
                        acc += beta[o + l];
                        if u < acc {
                            return (l + 1) as Level;
                        }
                    }
                    lj as Level
                })
                .collect();
            (row, g)
        })
        .collect();
    let mut responses = Vec::with_capacity(n * schema.questions());
    let mut latent = Vec::with_capacity(n);
    for (row, g) in draws {
        responses.extend(row);
        latent.push(g);
    }
    Ok((Dataset::new(schema, responses)?, latent))
}

/// Latent sidecar: `index,g1,...,gK`.
pub fn write_latent_csv(path: impl AsRef<Path>, latent: &[Vec<f64>]) -> Result<()> {
    let k = latent.first().map_or(0, Vec::len);
    let mut out = String::from("index");
    for c in 1..=k {
        out.push_str(&format!(",g{c}"));
    }
    out.push('\n');
    for (i, g) in latent.iter().enumerate() {
        out.push_str(&i.to_string());
        for x in g {
            out.push(',');
            out.push_str(&fmt_sig17(*x));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_latent_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| LlsError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| LlsError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let g = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| LlsError::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
        out.push(g);
    }
    Ok(out)
}

/// A finite-support model that evaluates any moment by direct summation.
#[derive(Clone, Debug)]
pub struct ExactModel {
    schema: Schema,
    /// `(g, beta, weight)` per support point.
    points: Vec<(Vec<f64>, DVector<f64>, f64)>,
}

impl ExactModel {
    pub fn new(basis: &Subspace<f64>, mixing: &MixingSpec) -> Result<Self> {
        let support = mixing.finite_support().ok_or(LlsError::NonFiniteSupport)?;
        check_range(basis, mixing)?;
        let points = support
            .into_iter()
            .map(|(g, w)| {
                let beta = basis.basis() * DVector::from_column_slice(&g);
                (g, beta, w)
            })
            .collect();
        Ok(Self {
            schema: basis.schema().clone(),
            points,
        })
    }

    /// `E[prod_c beta_c]` over a multiset of cells (repeats allowed).
    pub fn product_moment(&self, cells: &[usize]) -> f64 {
        self.points
            .iter()
            .map(|(_, beta, w)| w * cells.iter().map(|&c| beta[c]).product::<f64>())
            .sum()
    }

    /// `E[G^v | X = l]`.
    pub fn conditional_moment(&self, pattern: &Pattern, v: &MomentOrder) -> Result<f64> {
        self.schema.check(pattern)?;
        let cells = pattern.cells(&self.schema);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, beta, w) in &self.points {
            let like = w * cells.iter().map(|&c| beta[c]).product::<f64>();
            num += like * v.monomial(g);
            den += like;
        }
        if den <= 0.0 {
            return Err(LlsError::UnobservedCondition(pattern.to_string()));
        }
        Ok(num / den)
    }

    /// The moment matrix with every entry filled: row cell `r` times the
    /// column's cells, squares included.
    pub fn completed_matrix(&self, col_patterns: &[Pattern]) -> DMatrix<f64> {
        let n = self.schema.total_levels();
        let col_cells: Vec<Vec<usize>> = col_patterns.iter().map(|p| p.cells(&self.schema)).collect();
        DMatrix::from_fn(n, col_patterns.len(), |r, c| {
            let mut cells = col_cells[c].clone();
            cells.push(r);
            self.product_moment(&cells)
        })
    }
}

impl MomentSource<f64> for ExactModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn moment(&self, pattern: &Pattern) -> Result<f64> {
        self.schema.check(pattern)?;
        Ok(self.product_moment(&pattern.cells(&self.schema)))
    }

    fn cell_moment(&self, cells: &[usize]) -> Result<f64> {
        Ok(self.product_moment(cells))
    }
}

/// Exact `p_l = M_l` for each requested pattern.
pub fn exact_moments(basis: &Subspace<f64>, mixing: &MixingSpec, patterns: &[Pattern]) -> Result<ExactMoments<f64>> {
    let model = ExactModel::new(basis, mixing)?;
    let values: Vec<f64> = patterns
        .par_iter()
        .map(|p| model.moment(p))
        .collect::<Result<Vec<_>>>()?;
    let mut t = ExactMoments::new(basis.schema().clone());
    for (p, v) in patterns.iter().zip(values) {
        t.insert(p.clone(), v);
    }
    Ok(t)
}

/// `E[G^v | X = l]` by direct summation over the support.
pub fn exact_conditional_moments(
    basis: &Subspace<f64>,
    mixing: &MixingSpec,
    pattern: &Pattern,
    v: &MomentOrder,
) -> Result<f64> {
    ExactModel::new(basis, mixing)?.conditional_moment(pattern, v)
}

/// Converts a double-precision basis to another scalar type.
pub fn cast_basis<T: Real>(basis: &Subspace<f64>) -> Subspace<T> {
    Subspace::from_basis(basis.schema().clone(), basis.basis().map(|x| T::lit(x))).expect("same basis, cast")
}
