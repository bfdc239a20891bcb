//! Small direct and iterative solvers used by the elliptic and steady modules.
//!
//! Nothing here knows about meshes: the elliptic solve feeds tridiagonal rows
//! or a matrix-free operator, the steady Newton iterations feed banded
//! Jacobians. The banded LU keeps `kl` extra superdiagonals for pivoting
//! fill-in, the standard band storage trick.

use crate::error::Error;
use crate::Result;

/// Solve a tridiagonal system in place. `sub[0]` and `sup[n-1]` are unused.
/// No pivoting: all call sites assemble diagonally dominant M-matrix rows.
pub(crate) fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    debug_assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    if d == 0.0 {
        return Err(Error::SingularSystem { row: 0, pivot: d });
    }
    c[0] = sup[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - sub[i] * c[i - 1];
        if d == 0.0 {
            return Err(Error::SingularSystem { row: i, pivot: d });
        }
        if i + 1 < n {
            c[i] = sup[i] / d;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// General banded matrix with `kl` subdiagonals and `ku` superdiagonals,
/// stored column-wise with room for pivoting fill.
pub(crate) struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    ab: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Banded {
        let stride = 2 * kl + ku + 1;
        Banded { n, kl, ku, stride, ab: vec![0.0; stride * n] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.stride + (self.kl + self.ku + i - j)
    }

    /// Accumulate into entry `(i, j)`; the entry must lie inside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(j <= i + self.ku && i <= j + self.kl, "entry ({i},{j}) outside band");
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    /// LU factorization with partial pivoting, LAPACK band layout.
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku;
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let pmax = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.ab[self.slot(j, j)].abs();
            for q in 1..=pmax {
                let v = self.ab[self.slot(j + q, j)].abs();
                if v > best {
                    best = v;
                    p = q;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularSystem { row: j, pivot: 0.0 });
            }
            ipiv[j] = j + p;
            let cmax = (j + width).min(n - 1);
            if p > 0 {
                for c in j..=cmax {
                    let a = self.slot(j, c);
                    let b = self.slot(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.slot(j, j)];
            for q in 1..=pmax {
                let s = self.slot(j + q, j);
                let m = self.ab[s] / piv;
                self.ab[s] = m;
                if m != 0.0 {
                    for c in j + 1..=cmax {
                        let head = self.ab[self.slot(j, c)];
                        if head != 0.0 {
                            let t = self.slot(j + q, c);
                            self.ab[t] -= m * head;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, ipiv })
    }
}

pub(crate) struct BandedLu {
    mat: Banded,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Solve `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let m = &self.mat;
        let n = m.n;
        debug_assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let pmax = m.kl.min(n - 1 - j);
            for q in 1..=pmax {
                b[j + q] -= m.ab[m.slot(j + q, j)] * b[j];
            }
        }
        let width = m.kl + m.ku;
        for j in (0..n).rev() {
            let mut s = b[j];
            let cmax = (j + width).min(n - 1);
            for c in j + 1..=cmax {
                s -= m.ab[m.slot(j, c)] * b[c];
            }
            b[j] = s / m.ab[m.slot(j, j)];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients on a symmetric positive definite
/// operator given as a closure. `x` holds the initial guess on entry and the
/// solution on return. Returns the iteration count.
pub(crate) fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    inv_diag: &[f64],
    rtol: f64,
    max_iters: usize,
) -> Result<usize> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let tol = rtol * bnorm;
    if norm(&r) <= tol {
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for iter in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolverStall { iters: iter, residual: norm(&r) / bnorm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol {
            return Ok(iter);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverStall { iters: max_iters, residual: norm(&r) / bnorm })
}
