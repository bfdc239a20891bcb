//! Signal equation: given the cell density `u`, solve
//! `-d lap(v) + v = u` with zero-flux boundaries.
//!
//! The discrete operator is `I - d * div(grad(.))` built from the mesh face
//! calculus, so its weighted row sums reproduce the quadrature weights and the
//! solve conserves the integral: `int v = int u` up to solver tolerance. The
//! operator is an M-matrix, which gives the discrete maximum principle
//! `min u <= v <= max u`.
//!
//! Interval and radial meshes are solved directly (tridiagonal elimination);
//! the rectangle uses diagonally preconditioned conjugate gradients on the
//! weight-symmetrized form.

use crate::error::Error;
use crate::grid::{Field, Grid};
use crate::linalg;
use crate::Result;
use std::sync::Arc;

/// Relative CG tolerance; leaves two orders of margin on both the residual
/// contract (1e-10) and the conservation contract (1e-10).
const CG_RTOL: f64 = 1e-12;
/// CG iteration cap as a multiple of the unknown count.
const CG_MAX_ITERS_PER_CELL: usize = 20;

enum Scheme {
    /// Row form of the 1D operator, solved by Thomas elimination.
    Tridiagonal { sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64> },
    /// Matrix-free weight-symmetrized form for the rectangle.
    ConjugateGradient { inv_diag: Vec<f64> },
}

/// Prebuilt discrete operator for one `(grid, d)` pair. Solves are pure
/// functions of their input, so one operator can be shared across threads.
pub struct EllipticOperator {
    grid: Arc<Grid>,
    d: f64,
    scheme: Scheme,
}

impl EllipticOperator {
    pub fn new(grid: &Arc<Grid>, d: f64) -> Result<EllipticOperator> {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::InvalidConfig(format!("diffusion constant d = {d} must be positive")));
        }
        let scheme = if grid.ny() > 1 {
            let mut diag = grid.weights().to_vec();
            let (nx, ny) = (grid.nx(), grid.ny());
            let ax = grid.face_area_x();
            let ay = grid.face_area_y();
            for j in 0..ny {
                for i in 0..nx {
                    let c = grid.idx(i, j);
                    if i > 0 {
                        diag[c] += d * ax[j * (nx + 1) + i] / grid.hx();
                    }
                    if i + 1 < nx {
                        diag[c] += d * ax[j * (nx + 1) + i + 1] / grid.hx();
                    }
                    if j > 0 {
                        diag[c] += d * ay[j * nx + i] / grid.hy();
                    }
                    if j + 1 < ny {
                        diag[c] += d * ay[(j + 1) * nx + i] / grid.hy();
                    }
                }
            }
            for v in diag.iter_mut() {
                *v = 1.0 / *v;
            }
            Scheme::ConjugateGradient { inv_diag: diag }
        } else {
            let n = grid.nx();
            let h = grid.hx();
            let areas = grid.face_area_x();
            let w = grid.weights();
            let mut sub = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut dia = vec![0.0; n];
            for i in 0..n {
                let left = if i > 0 { d * areas[i] / (h * w[i]) } else { 0.0 };
                let right = if i + 1 < n { d * areas[i + 1] / (h * w[i]) } else { 0.0 };
                sub[i] = -left;
                sup[i] = -right;
                dia[i] = 1.0 + left + right;
            }
            Scheme::Tridiagonal { sub, diag: dia, sup }
        };
        Ok(EllipticOperator { grid: grid.clone(), d, scheme })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Weight-symmetrized operator product `y = W v - d W lap(v)`, fused over
    /// faces to stay allocation-free inside CG.
    fn apply_sym(&self, v: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let w = g.weights();
        for i in 0..v.len() {
            y[i] = w[i] * v[i];
        }
        let ax = g.face_area_x();
        for j in 0..ny {
            for i in 1..nx {
                let a = g.idx(i - 1, j);
                let b = g.idx(i, j);
                let f = self.d * ax[j * (nx + 1) + i] * (v[b] - v[a]) / g.hx();
                y[a] -= f;
                y[b] += f;
            }
        }
        if ny > 1 {
            let ay = g.face_area_y();
            for j in 1..ny {
                for i in 0..nx {
                    let a = g.idx(i, j - 1);
                    let b = g.idx(i, j);
                    let f = self.d * ay[j * nx + i] * (v[b] - v[a]) / g.hy();
                    y[a] -= f;
                    y[b] += f;
                }
            }
        }
    }

    /// Solve for the signal; `guess` warm-starts the iterative path.
    pub fn solve_with_guess(&self, u: &Field, guess: Option<&Field>) -> Result<Field> {
        if u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        match &self.scheme {
            Scheme::Tridiagonal { sub, diag, sup } => {
                let mut v = u.values().to_vec();
                linalg::solve_tridiagonal(sub, diag, sup, &mut v)?;
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("elliptic solution"));
                }
                Ok(Field::from_values_unchecked(self.grid.clone(), v))
            }
            Scheme::ConjugateGradient { inv_diag } => {
                let w = self.grid.weights();
                let b: Vec<f64> = u.values().iter().zip(w).map(|(ui, wi)| ui * wi).collect();
                let mut x = match guess {
                    Some(gf) => gf.values().to_vec(),
                    None => u.values().to_vec(),
                };
                linalg::pcg(
                    |v, y| self.apply_sym(v, y),
                    &b,
                    &mut x,
                    inv_diag,
                    CG_RTOL,
                    CG_MAX_ITERS_PER_CELL * self.grid.n_cells(),
                )?;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("elliptic solution"));
                }
                Ok(Field::from_values_unchecked(self.grid.clone(), x))
            }
        }
    }
}

/// Solve `-d lap(v) + v = u`.
pub fn solve_v(op: &EllipticOperator, u: &Field) -> Result<Field> {
    op.solve_with_guess(u, None)
}

/// Current pointwise lower bound of the signal. The running bound over a
/// trajectory is the minimum of this over all observed states.
pub fn min_signal(v: &Field) -> f64 {
    v.min()
}

/// Exponential moment `int exp(lambda v)`. Overflow is reported as positive
/// infinity rather than an error so trajectory monitors can record it.
pub fn exp_moment(v: &Field, lambda: f64) -> f64 {
    v.values()
        .iter()
        .zip(v.grid().weights())
        .map(|(vi, w)| (lambda * vi).exp() * w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shapes() -> Vec<Arc<Grid>> {
        vec![
            Grid::interval(1.0, 24).unwrap(),
            Grid::rectangle(1.0, 1.5, 8, 10).unwrap(),
            Grid::radial_disc(1.0, 24).unwrap(),
        ]
    }

    #[test]
    fn constant_in_constant_out() {
        for g in shapes() {
            let op = EllipticOperator::new(&g, 0.7).unwrap();
            let u = Field::constant(&g, 3.25).unwrap();
            let v = solve_v(&op, &u).unwrap();
            for x in v.values() {
                assert!((x - 3.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interval_cosine_is_discrete_eigenfunction() {
        // cos(k pi x) is an exact eigenvector of the face-difference Laplacian
        // with eigenvalue (4/h^2) sin^2(k pi h / 2); the solve must reproduce
        // the exact discrete amplitude, not just an O(h^2) approximation.
        let n = 32;
        let g = Grid::interval(1.0, n).unwrap();
        let d = 0.3;
        let op = EllipticOperator::new(&g, d).unwrap();
        for k in [1, 2, 5] {
            let kpi = k as f64 * std::f64::consts::PI;
            let u = Field::from_fn(&g, |x, _| 1.0 + 0.5 * (kpi * x).cos()).unwrap();
            let h = g.hx();
            let lam = 4.0 / (h * h) * (kpi * h / 2.0).sin().powi(2);
            let v_expect = Field::from_fn(&g, |x, _| 1.0 + 0.5 * (kpi * x).cos() / (1.0 + d * lam)).unwrap();
            let v = solve_v(&op, &u).unwrap();
            for (a, b) in v.values().iter().zip(v_expect.values()) {
                assert!((a - b).abs() < 1e-12, "mode {k}");
            }
        }
    }

    #[test]
    fn conserves_integral_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for g in shapes() {
            let op = EllipticOperator::new(&g, 1.3).unwrap();
            for _ in 0..10 {
                let u = Field::from_values(
                    &g,
                    (0..g.n_cells()).map(|_| rng.gen_range(0.0..5.0)).collect(),
                )
                .unwrap();
                let v = solve_v(&op, &u).unwrap();
                let (iu, iv) = (u.integrate(), v.integrate());
                assert!((iu - iv).abs() <= 1e-10 * iu.abs().max(1.0), "{iu} vs {iv}");
            }
        }
    }

    #[test]
    fn residual_meets_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in shapes() {
            let op = EllipticOperator::new(&g, 0.9).unwrap();
            let u = Field::from_values(
                &g,
                (0..g.n_cells()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let v = solve_v(&op, &u).unwrap();
            let lap = g.div_grad(&v);
            let res = Field::from_values(
                &g,
                v.values()
                    .iter()
                    .zip(u.values())
                    .zip(&lap)
                    .map(|((vi, ui), li)| vi - 0.9 * li - ui)
                    .collect(),
            )
            .unwrap();
            assert!(res.weighted_norm() <= 1e-10 * u.weighted_norm());
        }
    }

    #[test]
    fn maximum_principle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in shapes() {
            let op = EllipticOperator::new(&g, 2.0).unwrap();
            for _ in 0..10 {
                let u = Field::from_values(
                    &g,
                    (0..g.n_cells()).map(|_| rng.gen_range(1.0..9.0)).collect(),
                )
                .unwrap();
                let v = solve_v(&op, &u).unwrap();
                let slack = 1e-11 * (u.max() - u.min()).max(1.0);
                assert!(v.min() >= u.min() - slack);
                assert!(v.max() <= u.max() + slack);
            }
        }
    }

    #[test]
    fn operator_is_self_adjoint_in_weighted_inner_product() {
        for g in shapes() {
            let f = Field::from_fn(&g, |x, y| (2.0 * x + y).sin()).unwrap();
            let h = Field::from_fn(&g, |x, y| (x - 3.0 * y).cos()).unwrap();
            let lf = g.div_grad(&f);
            let lh = g.div_grad(&h);
            let w = g.weights();
            let a: f64 = lf.iter().zip(h.values()).zip(w).map(|((l, q), wi)| l * q * wi).sum();
            let b: f64 = lh.iter().zip(f.values()).zip(w).map(|((l, q), wi)| l * q * wi).sum();
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() <= 1e-11 * scale, "{a} vs {b}");
        }
    }

    /// Independent max-principle oracle: the dense operator assembled column
    /// by column must be an M-matrix (positive diagonal, nonpositive
    /// off-diagonal, weighted row sums equal to the weights), which implies
    /// inverse positivity.
    #[test]
    fn dense_assembly_is_m_matrix() {
        let g = build_grid(Domain::Rectangle { lx: 1.0, ly: 1.0 }, &[4, 5]).unwrap();
        let d = 0.8;
        let n = g.n_cells();
        let mut dense = vec![vec![0.0; n]; n];
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let ef = Field::from_values(&g, e).unwrap();
            let lap = g.div_grad(&ef);
            for row in 0..n {
                dense[row][col] = if row == col { 1.0 } else { 0.0 } - d * lap[row];
            }
        }
        for row in 0..n {
            assert!(dense[row][row] > 0.0);
            let mut sum = 0.0;
            for col in 0..n {
                if col != row {
                    assert!(dense[row][col] <= 0.0);
                }
                sum += dense[row][col] * g.weights()[col];
            }
            // weighted row sum: the operator annihilates the Laplacian part
            assert!((sum - g.weights()[row]).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let g = Grid::rectangle(1.0, 1.0, 12, 12).unwrap();
        let op = EllipticOperator::new(&g, 0.5).unwrap();
        let u = Field::from_fn(&g, |x, y| 1.0 + (3.0 * x).sin() * (2.0 * y).cos()).unwrap();
        let cold = solve_v(&op, &u).unwrap();
        let warm = op.solve_with_guess(&u, Some(&cold)).unwrap();
        for (a, b) in cold.values().iter().zip(warm.values()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn exp_moment_closed_forms() {
        let g = Grid::interval(2.0, 16).unwrap();
        let v0 = Field::constant(&g, 0.0).unwrap();
        assert!((exp_moment(&v0, 3.0) - 2.0).abs() < 1e-13);
        let vc = Field::constant(&g, 1.5).unwrap();
        let expect = 2.0 * (2.0 * 1.5f64).exp();
        assert!((exp_moment(&vc, 2.0) - expect).abs() < 1e-12 * expect);
        // overflow degrades to +inf, not an error
        let big = Field::constant(&g, 500.0).unwrap();
        assert!(exp_moment(&big, 2.0).is_infinite());
    }

    #[test]
    fn rejects_bad_diffusion_constant() {
        let g = Grid::interval(1.0, 8).unwrap();
        assert!(EllipticOperator::new(&g, 0.0).is_err());
        assert!(EllipticOperator::new(&g, f64::NAN).is_err());
    }
}
