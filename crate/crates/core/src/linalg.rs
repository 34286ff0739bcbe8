//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Singular values, descending.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<T> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// `sigma_max / sigma_min` of a matrix with at least as many rows as columns.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = singular_values(m);
    match (sv.first(), sv.get(m.ncols().min(m.nrows()).saturating_sub(1))) {
        (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
        _ => T::max_value().unwrap_or_else(|| T::lit(f64::MAX)),
    }
}

/// Orthonormal basis of the column span (thin Q of a QR factorization).
pub fn orthonormalize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let k = m.ncols().min(m.nrows());
    let q = m.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Greedy column pivoting: repeatedly picks the column with the largest
/// norm after projecting out the columns already picked. Columns whose
/// `allowed` flag is false are never picked.
pub fn pivoted_columns<T: Real>(m: &DMatrix<T>, count: usize, allowed: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut resid = m.clone();
    let mut norms: Vec<T> = (0..m.ncols()).map(|c| resid.column(c).norm_squared()).collect();
    let mut picked = Vec::with_capacity(count);
    let tiny = T::eps() * T::lit(16.0);
    let scale = norms.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    while picked.len() < count {
        let best = (0..m.ncols())
            .filter(|&c| allowed(c) && !picked.contains(&c))
            .max_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(best) = best else { break };
        if norms[best] <= tiny * scale {
            break;
        }
        picked.push(best);
        let q = resid.column(best).into_owned() / norms[best].sqrt();
        for c in 0..m.ncols() {
            let d = q.dot(&resid.column(c));
            resid.column_mut(c).axpy(-d, &q, T::one());
            norms[c] = resid.column(c).norm_squared();
        }
    }
    picked
}

/// Leading `k` left singular vectors by orthogonal iteration, started from
/// `start` (`n x k`). Returns the basis and the singular-value estimates.
pub fn top_left_singular<T: Real>(m: &DMatrix<T>, start: DMatrix<T>, max_iter: usize, tol: T) -> (DMatrix<T>, Vec<T>) {
    let mut q = orthonormalize(&start);
    let mut prev: Option<DMatrix<T>> = None;
    for _ in 0..max_iter {
        let z = m.tr_mul(&q);
        let y = m * z;
        q = orthonormalize(&y);
        if let Some(p) = &prev {
            // distance between projectors via the smallest cosine
            let c = p.tr_mul(&q);
            let sv = singular_values(&c);
            let smallest = sv.last().copied().unwrap_or_else(T::one);
            if T::one() - smallest < tol {
                break;
            }
        }
        prev = Some(q.clone());
    }
    // rotate onto singular directions within the span
    let small = q.tr_mul(m).svd(true, false);
    let u = small.u.expect("requested u");
    let mut order: Vec<usize> = (0..small.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        small.singular_values[b]
            .partial_cmp(&small.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let rot = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let sv = order.iter().map(|&i| small.singular_values[i]).collect();
    (q * rot, sv)
}

/// Orthonormal basis of the complement of the all-ones vector in `R^k`.
pub fn ones_complement<T: Real>(k: usize) -> DMatrix<T> {
    if k <= 1 {
        return DMatrix::zeros(k, 0);
    }
    // Helmert contrasts
    let mut n = DMatrix::zeros(k, k - 1);
    for c in 0..k - 1 {
        let m = T::from_count(c as u64 + 1);
        let norm = (m * (m + T::one())).sqrt();
        for r in 0..=c {
            n[(r, c)] = T::one() / norm;
        }
        n[(c + 1, c)] = -m / norm;
    }
    n
}

/// Orthonormal basis (`k x (k-1)`) of the orthogonal complement of `w`.
pub fn complement_basis<T: Real>(w: &DVector<T>) -> DMatrix<T> {
    let k = w.len();
    let mut kept: Vec<DVector<T>> = vec![w.normalize()];
    let mut out = DMatrix::zeros(k, k.saturating_sub(1));
    let mut col = 0;
    // Gram-Schmidt over the unit vectors, most orthogonal first
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| w[a].abs().partial_cmp(&w[b].abs()).unwrap_or(std::cmp::Ordering::Equal));
    for i in order {
        if col + 1 == k {
            break;
        }
        let mut v = DVector::zeros(k);
        v[i] = T::one();
        for _ in 0..2 {
            for q in &kept {
                let d = q.dot(&v);
                v.axpy(-d, q, T::one());
            }
        }
        let n = v.norm();
        if n > T::lit(1e-8) {
            v /= n;
            out.set_column(col, &v);
            col += 1;
            kept.push(v);
        }
    }
    out
}

/// Least-squares solution of `a g = b` subject to `sum(g) = 1`.
///
/// Returns the solution and the numerical rank of `[a; 1^T]`.
pub fn normalized_lstsq<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> (DVector<T>, usize) {
    let k = a.ncols();
    let g0 = DVector::from_element(k, T::one() / T::from_count(k as u64));
    if k == 1 {
        return (g0, 1);
    }
    let n = ones_complement::<T>(k);
    let an = a * &n;
    let rhs = b - a * &g0;
    let svd = an.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let tol = smax * T::eps() * T::from_count(a.nrows().max(k) as u64) * T::lit(4.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count() + 1;
    let y = svd.solve(&rhs, tol).unwrap_or_else(|_| DVector::zeros(k - 1));
    (g0 + n * y, rank)
}

/// Same as [`normalized_lstsq`] but from the normal equations
/// `gram = A^T A`, `atb = A^T b`.
pub fn normalized_normal_solve<T: Real>(gram: &DMatrix<T>, atb: &DVector<T>) -> (DVector<T>, usize) {
    let k = gram.ncols();
    let g0 = DVector::from_element(k, T::one() / T::from_count(k as u64));
    if k == 1 {
        return (g0, 1);
    }
    let n = ones_complement::<T>(k);
    let reduced = n.tr_mul(&(gram * &n));
    let rhs = n.tr_mul(&(atb - gram * &g0));
    let svd = reduced.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let tol = smax * T::eps() * T::lit(64.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count() + 1;
    let y = svd.solve(&rhs, tol).unwrap_or_else(|_| DVector::zeros(k - 1));
    (g0 + n * y, rank)
}

/// Least squares `min ||a x - b||` subject to `e x = f`, by the null-space
/// method. Returns the solution and the rank of the stacked system `[a; e]`.
pub fn constrained_lstsq<T: Real>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    e: &DMatrix<T>,
    f: &DVector<T>,
) -> (DVector<T>, usize) {
    let n = a.ncols();
    if e.nrows() == 0 {
        return lstsq(a, b);
    }
    let svd = e.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let tol = smax * T::eps() * T::from_count(e.nrows().max(n) as u64) * T::lit(4.0);
    let xp = svd.solve(f, tol).unwrap_or_else(|_| DVector::zeros(n));
    let vt = svd.v_t.expect("requested v");
    let r = svd.singular_values.iter().filter(|&&s| s > tol).count();
    // rows of v_t beyond the rank (v_t may be thin when e is wide)
    let mut order: Vec<usize> = (0..vt.nrows()).collect();
    order.sort_by(|&x, &y| {
        svd.singular_values[y]
            .partial_cmp(&svd.singular_values[x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let range = DMatrix::from_fn(n, r, |i, c| vt[(order[c], i)]);
    let null = if r == 0 {
        DMatrix::identity(n, n)
    } else {
        let full = range.clone().qr();
        let q = full.q();
        let mut ext = DMatrix::zeros(n, n);
        ext.columns_mut(0, r).copy_from(&q.columns(0, r));
        // complete the basis by Gram-Schmidt on unit vectors
        let mut col = r;
        for i in 0..n {
            if col == n {
                break;
            }
            let mut v = DVector::zeros(n);
            v[i] = T::one();
            for _ in 0..2 {
                for c in 0..col {
                    let qc = ext.column(c).into_owned();
                    let d = qc.dot(&v);
                    v.axpy(-d, &qc, T::one());
                }
            }
            let nv = v.norm();
            if nv > T::lit(1e-8) {
                ext.set_column(col, &(v / nv));
                col += 1;
            }
        }
        ext.columns(r, n - r).into_owned()
    };
    if null.ncols() == 0 {
        return (xp, r);
    }
    let (y, ra) = lstsq(&(a * &null), &(b - a * &xp));
    (xp + null * y, r + ra)
}

/// Plain least squares via SVD; returns solution and numerical rank.
pub fn lstsq<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> (DVector<T>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let tol = smax * T::eps() * T::from_count(a.nrows().max(a.ncols()) as u64) * T::lit(4.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(a.ncols()));
    (x, rank)
}

/// Solves the small symmetric system `gram x = rhs`, falling back to a
/// pseudo-inverse when Cholesky fails.
pub fn solve_spd<T: Real>(gram: &DMatrix<T>, rhs: &DVector<T>) -> DVector<T> {
    if let Some(ch) = gram.clone().cholesky() {
        return ch.solve(rhs);
    }
    let svd = gram.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    svd.solve(rhs, smax * T::eps() * T::lit(64.0))
        .unwrap_or_else(|_| DVector::zeros(rhs.len()))
}
