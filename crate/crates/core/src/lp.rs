//! Small dense simplex solver (two-phase, Bland's rule on ties).
//!
//! Used to place basis vectors at extreme points of the polytope
//! `Q ∩ S^L`, where the number of free variables is `K - 1` and the
//! number of constraints is `|L|`.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome<T> {
    Optimal { x: DVector<T>, value: T },
    Unbounded,
    Infeasible,
}

struct Tableau<T> {
    m: usize,
    n: usize,
    d: DMatrix<T>,
    basic: Vec<isize>,
    nonbasic: Vec<isize>,
    eps: T,
}

impl<T: Real> Tableau<T> {
    fn pivot(&mut self, r: usize, s: usize) {
        let inv = T::one() / self.d[(r, s)];
        let (rows, cols) = self.d.shape();
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = self.d[(i, s)] * inv;
            if f == T::zero() {
                continue;
            }
            for j in 0..cols {
                if j != s {
                    let v = self.d[(r, j)];
                    self.d[(i, j)] -= v * f;
                }
            }
            self.d[(i, s)] = -f;
        }
        for j in 0..cols {
            if j != s {
                self.d[(r, j)] *= inv;
            }
        }
        self.d[(r, s)] = inv;
        std::mem::swap(&mut self.basic[r], &mut self.nonbasic[s]);
    }

    fn run(&mut self, phase: u8) -> bool {
        let row = if phase == 1 { self.m + 1 } else { self.m };
        let rhs = self.n + 1;
        loop {
            let mut s: Option<usize> = None;
            for j in 0..=self.n {
                if phase == 2 && self.nonbasic[j] == -1 {
                    continue;
                }
                s = match s {
                    None => Some(j),
                    Some(cur) => {
                        let (a, b) = (self.d[(row, j)], self.d[(row, cur)]);
                        if a < b || (a == b && self.nonbasic[j] < self.nonbasic[cur]) {
                            Some(j)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            let s = s.expect("at least one column");
            if self.d[(row, s)] > -self.eps {
                return true;
            }
            let mut r: Option<usize> = None;
            for i in 0..self.m {
                if self.d[(i, s)] < self.eps {
                    continue;
                }
                r = match r {
                    None => Some(i),
                    Some(cur) => {
                        let a = self.d[(i, rhs)] / self.d[(i, s)];
                        let b = self.d[(cur, rhs)] / self.d[(cur, s)];
                        if a < b || (a == b && self.basic[i] < self.basic[cur]) {
                            Some(i)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            match r {
                None => return false,
                Some(r) => self.pivot(r, s),
            }
        }
    }
}

/// Maximizes `c^T x` subject to `a x <= b`, `x >= 0`.
pub fn maximize<T: Real>(a: &DMatrix<T>, b: &DVector<T>, c: &DVector<T>) -> LpOutcome<T> {
    let (m, n) = a.shape();
    let mut d = DMatrix::zeros(m + 2, n + 2);
    for i in 0..m {
        for j in 0..n {
            d[(i, j)] = a[(i, j)];
        }
        d[(i, n)] = -T::one();
        d[(i, n + 1)] = b[i];
    }
    for j in 0..n {
        d[(m, j)] = -c[j];
    }
    d[(m + 1, n)] = T::one();
    let mut t = Tableau {
        m,
        n,
        d,
        basic: (0..m).map(|i| (n + i) as isize).collect(),
        nonbasic: (0..n).map(|j| j as isize).chain(std::iter::once(-1)).collect(),
        eps: T::lit(1e-12),
    };
    let rhs = n + 1;
    if m > 0 {
        let r = (0..m)
            .min_by(|&x, &y| t.d[(x, rhs)].partial_cmp(&t.d[(y, rhs)]).unwrap())
            .unwrap();
        if t.d[(r, rhs)] < -t.eps {
            t.pivot(r, n);
            if !t.run(1) || t.d[(m + 1, rhs)] < -t.eps {
                return LpOutcome::Infeasible;
            }
            for i in 0..m {
                if t.basic[i] == -1 {
                    let mut s = 0;
                    for j in 1..=n {
                        if t.d[(i, j)] < t.d[(i, s)] || (t.d[(i, j)] == t.d[(i, s)] && t.nonbasic[j] < t.nonbasic[s]) {
                            s = j;
                        }
                    }
                    t.pivot(i, s);
                }
            }
        }
    }
    if !t.run(2) {
        return LpOutcome::Unbounded;
    }
    let mut x = DVector::zeros(n);
    for i in 0..m {
        if t.basic[i] >= 0 && (t.basic[i] as usize) < n {
            x[t.basic[i] as usize] = t.d[(i, rhs)];
        }
    }
    LpOutcome::Optimal {
        x,
        value: t.d[(m, rhs)],
    }
}

/// Maximizes `c^T y` subject to `a y <= b` with `y` unrestricted in sign.
pub fn maximize_free<T: Real>(a: &DMatrix<T>, b: &DVector<T>, c: &DVector<T>) -> LpOutcome<T> {
    let (m, n) = a.shape();
    let mut split = DMatrix::zeros(m, 2 * n);
    split.columns_mut(0, n).copy_from(a);
    split.columns_mut(n, n).copy_from(&(-a));
    let mut cs = DVector::zeros(2 * n);
    cs.rows_mut(0, n).copy_from(c);
    cs.rows_mut(n, n).copy_from(&(-c));
    match maximize(&split, b, &cs) {
        LpOutcome::Optimal { x, value } => {
            let y = x.rows(0, n) - x.rows(n, n);
            LpOutcome::Optimal { x: y, value }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let a = DMatrix::<f64>::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 2.0]);
        let b = DVector::from_vec(vec![4.0, 12.0, 18.0]);
        let c = DVector::from_vec(vec![3.0, 5.0]);
        match maximize(&a, &b, &c) {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 36.0).abs() < 1e-10);
                assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 6.0).abs() < 1e-10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn free_variables_reach_negative_side() {
        // max -y s.t. -1 <= y <= 2  -> y = -1
        let a = DMatrix::<f64>::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        match maximize_free(&a, &b, &DVector::from_vec(vec![-1.0])) {
            LpOutcome::Optimal { x, .. } => assert!((x[0] + 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_and_infeasible() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert_eq!(
            maximize(&a, &DVector::from_vec(vec![0.0]), &DVector::from_vec(vec![1.0])),
            LpOutcome::Unbounded
        );
        // x <= -1 with x >= 0
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_eq!(
            maximize(&a, &DVector::from_vec(vec![-1.0]), &DVector::from_vec(vec![1.0])),
            LpOutcome::Infeasible
        );
    }
}
