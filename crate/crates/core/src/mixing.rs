//! Empirical mixing distribution over solved conditional expectations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LlsError, Result};
use crate::moment_matrix::fmt_sig17;
use crate::moments::MomentSource;
use crate::pattern::Pattern;
use crate::scalar::Real;
use crate::solver::MomentOrder;

#[derive(Clone, Debug, PartialEq)]
pub struct SupportPoint<T> {
    pub pattern: Pattern,
    pub coords: DVector<T>,
    pub weight: T,
}

/// Point masses at `g_l` with weights `M_l`, normalized to total one.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingEstimate<T> {
    k: usize,
    points: Vec<SupportPoint<T>>,
}

fn exclusive(a: &Pattern, b: &Pattern) -> bool {
    a.entries()
        .iter()
        .zip(b.entries())
        .any(|(&x, &y)| x != 0 && y != 0 && x != y)
}

impl<T: Real> MixingEstimate<T> {
    /// Points weighted by integer counts that must add up to `total`.
    pub fn from_counts(points: Vec<(Pattern, DVector<T>, u64)>, total: u64) -> Result<Self> {
        let covered: u64 = points.iter().map(|p| p.2).sum();
        if covered != total {
            return Err(LlsError::NotExhaustive {
                uncovered: total.saturating_sub(covered),
            });
        }
        let t = T::from_count(total);
        let points = points
            .into_iter()
            .map(|(pattern, coords, c)| SupportPoint {
                pattern,
                coords,
                weight: T::from_count(c) / t,
            })
            .collect();
        Self::new(points)
    }

    fn new(points: Vec<SupportPoint<T>>) -> Result<Self> {
        let k = points.first().map_or(0, |p| p.coords.len());
        if points.iter().any(|p| p.coords.len() != k) {
            return Err(LlsError::Precondition("support points differ in dimension".into()));
        }
        Ok(Self { k, points })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[SupportPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Compensated sum of the weights.
    pub fn total_weight(&self) -> T {
        let (mut sum, mut carry) = (T::zero(), T::zero());
        for p in &self.points {
            let y = p.weight - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Points with some coordinate outside `[0, 1]`.
    pub fn out_of_simplex(&self) -> usize {
        self.points
            .iter()
            .filter(|p| p.coords.iter().any(|&x| x < T::zero() || x > T::one()))
            .count()
    }

    /// Weighted mean of the coordinates.
    pub fn mean(&self) -> DVector<T> {
        self.points
            .iter()
            .fold(DVector::zeros(self.k), |acc, p| acc + &p.coords * p.weight)
    }

    /// The same estimate with every point mapped through `c` (a change of
    /// basis, `g -> c g`).
    pub fn map_coords(&self, c: &DMatrix<T>) -> Result<Self> {
        if c.ncols() != self.k {
            return Err(LlsError::Precondition(format!(
                "map has {} columns, K = {}",
                c.ncols(),
                self.k
            )));
        }
        Self::new(
            self.points
                .iter()
                .map(|p| SupportPoint {
                    pattern: p.pattern.clone(),
                    coords: c * &p.coords,
                    weight: p.weight,
                })
                .collect(),
        )
    }

    /// Weighted atoms on one coordinate axis.
    pub fn marginal(&self, axis: usize) -> Distribution1D<T> {
        Distribution1D::atoms(self.points.iter().map(|p| (p.coords[axis], p.weight)))
    }

    /// CSV: `pattern,weight,g1,...,gK`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("pattern,weight");
        for k in 1..=self.k {
            let _ = write!(out, ",g{k}");
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "\"{}\",{}", p.pattern.key(), fmt_sig17(p.weight.as_f64()));
            for x in p.coords.iter() {
                let _ = write!(out, ",{}", fmt_sig17(x.as_f64()));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Builds the estimate from expectations solved for a family of mutually
/// exclusive patterns, weighting each by its moment.
pub fn empirical_mixing<T: Real, S: MomentSource<T> + ?Sized>(
    solved: Vec<(Pattern, DVector<T>)>,
    src: &S,
) -> Result<MixingEstimate<T>> {
    if !solved.iter().all(|(p, _)| p.is_full()) {
        for (i, (a, _)) in solved.iter().enumerate() {
            for (b, _) in &solved[i + 1..] {
                if !exclusive(a, b) {
                    return Err(LlsError::Precondition(format!("patterns {a} and {b} overlap")));
                }
            }
        }
    }
    let mut points = Vec::with_capacity(solved.len());
    let mut covered_count = 0u64;
    let mut covered = T::zero();
    for (pattern, coords) in solved {
        let weight = src.moment(&pattern)?;
        covered_count += src.count(&pattern).unwrap_or(0);
        covered += weight;
        points.push(SupportPoint {
            pattern,
            coords,
            weight,
        });
    }
    match src.total() {
        Some(total) if covered_count != total => {
            return Err(LlsError::NotExhaustive {
                uncovered: total.saturating_sub(covered_count),
            })
        }
        None if (covered - T::one()).abs() > T::lit(1e-9) => {
            return Err(LlsError::NotExhaustive {
                uncovered: ((T::one() - covered).max(T::zero()) * T::lit(1e9)).as_f64() as u64,
            })
        }
        _ => {}
    }
    for p in &mut points {
        p.weight /= covered;
    }
    MixingEstimate::new(points)
}

/// `sum_points w * prod_k g_k^{v_k}`.
pub fn mixing_moments<T: Real>(est: &MixingEstimate<T>, v: &MomentOrder) -> T {
    est.points
        .iter()
        .fold(T::zero(), |acc, p| acc + p.weight * v.monomial(p.coords.as_slice()))
}

/// Uniform-bin histogram of one coordinate. Bins are left-closed and
/// right-open except the last, which is closed; a value on an interior
/// edge goes to the bin on its right.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram1D {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub below: f64,
    pub above: f64,
}

impl Histogram1D {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn in_range_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Bin indices sorted by decreasing mass (ties by index).
    pub fn modes(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.bins()).collect();
        idx.sort_by(|&a, &b| self.masses[b].partial_cmp(&self.masses[a]).unwrap().then(a.cmp(&b)));
        idx
    }

    /// Local maxima (first bin of a plateau), heaviest first.
    pub fn peaks(&self) -> Vec<usize> {
        let m = &self.masses;
        let mut out: Vec<usize> = (0..self.bins())
            .filter(|&i| m[i] > 0.0 && (i == 0 || m[i] > m[i - 1]) && (i + 1 == m.len() || m[i] >= m[i + 1]))
            .collect();
        out.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).unwrap().then(a.cmp(&b)));
        out
    }

    /// In-range mass as uniform pieces, for distance computations.
    pub fn distribution(&self) -> Distribution1D<f64> {
        Distribution1D::from_pieces(
            (0..self.bins())
                .filter(|&i| self.masses[i] > 0.0)
                .map(|i| Piece {
                    mass: self.masses[i],
                    lo: self.edges[i],
                    hi: self.edges[i + 1],
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,mass\n");
        for i in 0..self.bins() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_sig17(self.edges[i]),
                fmt_sig17(self.edges[i + 1]),
                fmt_sig17(self.masses[i])
            );
        }
        out
    }

    /// Whitespace-separated columns for gnuplot: centre, mass, density.
    pub fn to_plot_data(&self) -> String {
        let width = (self.hi - self.lo) / self.bins() as f64;
        let mut out = format!(
            "# axis g{}\n# below {} above {}\n# center mass density\n",
            self.axis + 1,
            fmt_sig17(self.below),
            fmt_sig17(self.above)
        );
        for i in 0..self.bins() {
            let _ = writeln!(
                out,
                "{} {} {}",
                fmt_sig17(self.center(i)),
                fmt_sig17(self.masses[i]),
                fmt_sig17(self.masses[i] / width)
            );
        }
        out
    }
}

pub fn histogram<T: Real>(est: &MixingEstimate<T>, axis: usize, bins: usize, lo: f64, hi: f64) -> Result<Histogram1D> {
    if bins == 0 || !(lo < hi) {
        return Err(LlsError::Precondition(format!(
            "bad histogram range: {bins} bins on [{lo}, {hi}]"
        )));
    }
    if axis >= est.k() && !est.is_empty() {
        return Err(LlsError::Precondition(format!("axis {axis} outside K = {}", est.k())));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    let mut masses = vec![0.0; bins];
    let (mut below, mut above) = (0.0, 0.0);
    for p in est.points() {
        let x = p.coords[axis].as_f64();
        let w = p.weight.as_f64();
        if x < lo || x.is_nan() {
            below += w;
        } else if x > hi {
            above += w;
        } else {
            let mut i = (((x - lo) / (hi - lo)) * bins as f64) as usize;
            i = i.min(bins - 1);
            while i + 1 < bins && x >= edges[i + 1] {
                i += 1;
            }
            while i > 0 && x < edges[i] {
                i -= 1;
            }
            masses[i] += w;
        }
    }
    Ok(Histogram1D {
        axis,
        lo,
        hi,
        edges,
        masses,
        below,
        above,
    })
}

/// A piece of probability mass spread uniformly over `[lo, hi]`; an atom
/// when `lo == hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece<T> {
    pub mass: T,
    pub lo: T,
    pub hi: T,
}

/// One-dimensional distribution made of atoms and uniform pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution1D<T> {
    pieces: Vec<Piece<T>>,
}

impl<T: Real> Distribution1D<T> {
    pub fn from_pieces(pieces: Vec<Piece<T>>) -> Self {
        Self { pieces }
    }

    pub fn atoms(points: impl IntoIterator<Item = (T, T)>) -> Self {
        Self {
            pieces: points
                .into_iter()
                .map(|(x, mass)| Piece { mass, lo: x, hi: x })
                .collect(),
        }
    }

    pub fn uniform(lo: T, hi: T) -> Self {
        Self {
            pieces: vec![Piece { mass: T::one(), lo, hi }],
        }
    }

    pub fn total(&self) -> T {
        self.pieces.iter().fold(T::zero(), |a, p| a + p.mass)
    }

    pub fn pieces(&self) -> &[Piece<T>] {
        &self.pieces
    }

    /// Rescaled to total mass one.
    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self {
            pieces: self.pieces.iter().map(|p| Piece { mass: p.mass / t, ..*p }).collect(),
        }
    }
}

#[derive(Clone, Copy)]
struct Event<T> {
    x: T,
    jump: T,
    slope: T,
}

fn events<T: Real>(d: &Distribution1D<T>, sign: T) -> Vec<Event<T>> {
    let mut out = Vec::with_capacity(2 * d.pieces.len());
    for p in &d.pieces {
        if p.hi > p.lo {
            let s = sign * p.mass / (p.hi - p.lo);
            out.push(Event {
                x: p.lo,
                jump: T::zero(),
                slope: s,
            });
            out.push(Event {
                x: p.hi,
                jump: T::zero(),
                slope: -s,
            });
        } else {
            out.push(Event {
                x: p.lo,
                jump: sign * p.mass,
                slope: T::zero(),
            });
        }
    }
    out
}

/// `int |F_a - F_b| dx`, exact for atoms and uniform pieces.
pub fn wasserstein1_1d<T: Real>(a: &Distribution1D<T>, b: &Distribution1D<T>) -> T {
    let mut ev = events(a, T::one());
    ev.extend(events(b, -T::one()));
    ev.sort_by(|p, q| p.x.partial_cmp(&q.x).unwrap_or(std::cmp::Ordering::Equal));
    // d(x) = F_a - F_b, linear between events
    let mut d = T::zero();
    let mut slope = T::zero();
    let mut total = T::zero();
    let mut i = 0;
    while i < ev.len() {
        let x = ev[i].x;
        while i < ev.len() && ev[i].x == x {
            d += ev[i].jump;
            slope += ev[i].slope;
            i += 1;
        }
        if i == ev.len() {
            break;
        }
        let len = ev[i].x - x;
        let end = d + slope * len;
        total += if (d >= T::zero()) == (end >= T::zero()) {
            (d.abs() + end.abs()) * len * T::lit(0.5)
        } else {
            // crosses zero inside the interval
            (d * d + end * end) * len / ((d.abs() + end.abs()) * T::lit(2.0))
        };
        d = end;
    }
    total
}
