//! Steady states of the reduced nonlocal elliptic problems and their
//! bifurcation structure.
//!
//! Two problem kinds are covered. The algebraic kind reduces to the local
//! equation `d lap w - w + w^k = 0`, solved by damped Newton; integrating it
//! over the domain shows every solution satisfies `int w^k = int w`, which is
//! what makes the mass-`m` rescaling `V = (m/m0) w` an exact solution of the
//! nonlocal problem `d lap v - v + (m / int v^k) v^k = 0`. The exponential
//! kind is solved directly in its nonlocal form
//! `d lap v - v + (m~ / int e^v) e^v = 0`; the integral term contributes a
//! dense rank-one block to the Jacobian, which is applied through the
//! Sherman-Morrison identity around the banded factorization instead of ever
//! forming a dense matrix.
//!
//! Solvers prefer nonconstant solutions: the constant solves every parameter
//! point exactly, so each solve walks a deterministic ladder of guesses
//! (previous branch point, eigenfunction-perturbed constant, then
//! progressively taller bump profiles for the exponential kind, which has a
//! branch that is not connected to the constant near its existence
//! threshold) and reports the constant only when nothing else converges.
//! Continuation marches a parameter, reusing each converged nonconstant
//! solution as the next guess, and brackets the empirical existence
//! threshold by the first amplitude crossing of `1 + 1e-3`.

use crate::error::Error;
use crate::grid::{Domain, Field, Grid};
use crate::linalg::Banded;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Default Newton residual tolerance (weighted 2-norm).
pub const NEWTON_TOL: f64 = 1e-10;
/// Newton iteration cap.
pub const NEWTON_MAX_ITERS: usize = 50;
/// Step-halving cap inside the line search.
pub const MAX_HALVINGS: usize = 30;
/// Constant solutions must converge at least this tightly.
pub const CONSTANT_GUESS_TOL: f64 = 1e-12;
/// Relative tolerance on the rescaling identity check.
pub const RESCALE_IDENTITY_TOL: f64 = 1e-8;
/// Residual bound the rescaled nonlocal solution must meet.
pub const RESCALE_RESIDUAL_TOL: f64 = 1e-9;
/// A profile counts as nonconstant once max/min exceeds this.
pub const AMPLITUDE_THRESHOLD: f64 = 1.0 + 1e-3;
/// Spread under `CONSTANT_BAND * mean` counts as constant.
pub const CONSTANT_BAND: f64 = 1e-6;
/// Exponent cap before `exp` is treated as an overflow toward blowup.
pub const EXP_OVERFLOW_LIMIT: f64 = 700.0;
/// Relative size of the eigenfunction perturbation in the standard guess.
pub const PERTURBATION: f64 = 0.3;
/// Bump heights tried, in order, when the perturbed guess falls back to the
/// constant on the exponential problem.
pub const BUMP_LADDER: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

/// Which reduced problem is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyKind {
    /// Nonlocal power nonlinearity with exponent `k`; solved through the
    /// local equation plus rescaling.
    Algebraic { k: f64 },
    /// Nonlocal exponential nonlinearity at rescaled mass `m_tilde`.
    ExponentialRadial { m_tilde: f64 },
}

/// One steady problem: kind, diffusion constant, target mass, mesh.
#[derive(Debug, Clone)]
pub struct SteadyProblem {
    pub kind: SteadyKind,
    pub d: f64,
    pub m: f64,
    grid: Arc<Grid>,
}

/// A converged steady state. For the exponential kind the fields are in the
/// rescaled variables; [`to_physical_exponential`] maps them back.
#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub v: Field,
    pub u: Field,
    /// Normalization of the recovered density: `u = theta * v^k` for the
    /// algebraic kind, `u = theta * exp(v)` for the exponential kind.
    pub theta: f64,
    /// Weighted 2-norm of the discrete nonlocal equation at the solution.
    pub residual: f64,
    pub is_constant: bool,
    /// `max v / min v`.
    pub amplitude: f64,
}

/// Which initial guess the recorded solution converged from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedFrom {
    ConstantGuess,
    PerturbedGuess,
    PreviousBranchPoint,
}

/// One point along a continuation branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    pub parameter: f64,
    pub amplitude: f64,
    pub residual: f64,
    pub max_v: f64,
    pub min_v: f64,
    pub theta: f64,
    pub converged_from: ConvergedFrom,
}

/// A continuation run: recorded points, plus the parameter where the march
/// stopped if Newton failed before the end of the range.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub terminated_at: Option<f64>,
    /// Converged state at the last recorded point.
    pub final_solution: Option<SteadySolution>,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {x} must be positive and finite")))
    }
}

impl SteadyProblem {
    pub fn algebraic(grid: &Arc<Grid>, k: f64, d: f64, m: f64) -> Result<SteadyProblem> {
        check_positive("k", k)?;
        check_positive("d", d)?;
        check_positive("m", m)?;
        Ok(SteadyProblem { kind: SteadyKind::Algebraic { k }, d, m, grid: grid.clone() })
    }

    /// Exponential-kind problem. The recovered density lives in the rescaled
    /// variables, so its mass is `m_tilde` itself.
    pub fn exponential(grid: &Arc<Grid>, m_tilde: f64, d: f64) -> Result<SteadyProblem> {
        check_positive("m_tilde", m_tilde)?;
        check_positive("d", d)?;
        Ok(SteadyProblem {
            kind: SteadyKind::ExponentialRadial { m_tilde },
            d,
            m: m_tilde,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn with_param(&self, p: f64) -> SteadyProblem {
        let mut out = self.clone();
        match out.kind {
            SteadyKind::Algebraic { .. } => out.d = p,
            SteadyKind::ExponentialRadial { .. } => {
                out.kind = SteadyKind::ExponentialRadial { m_tilde: p };
                out.m = p;
            }
        }
        out
    }

    /// Solve at the default tolerance through the guess ladder.
    pub fn solve(&self) -> Result<SteadySolution> {
        self.solve_tol(NEWTON_TOL)
    }

    pub fn solve_tol(&self, tol: f64) -> Result<SteadySolution> {
        Ok(solve_chain(self, None, tol)?.0)
    }
}

/// Profile carried between continuation points as the next Newton guess: the
/// local solution `w` for the algebraic kind (the rescaled `v` has the wrong
/// normalization for the local equation), the solved `v` otherwise.
type GuessProfile = Field;

fn field_stats(f: &Field) -> (bool, f64) {
    let (min, max) = (f.min(), f.max());
    let mean = f.integrate() / f.grid().measure();
    let is_constant = max - min < CONSTANT_BAND * mean.abs().max(f64::MIN_POSITIVE);
    (is_constant, max / min)
}

fn weighted_norm(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
}

/// `base * (1 + PERTURBATION * e1)` where `e1` is the lowest nonconstant
/// zero-flux mode direction: a half cosine along the longest axis, or a
/// radial half cosine on the disc.
pub fn perturbed_constant_guess(grid: &Arc<Grid>, base: f64) -> Result<Field> {
    check_positive("guess level", base)?;
    let f = eigen_direction(grid);
    Field::from_values(
        grid,
        (0..grid.n_cells())
            .map(|c| {
                let (x, y) = grid.cell_center(c);
                base * (1.0 + PERTURBATION * f(x, y))
            })
            .collect(),
    )
}

fn eigen_direction(grid: &Arc<Grid>) -> Box<dyn Fn(f64, f64) -> f64> {
    let pi = std::f64::consts::PI;
    match grid.domain() {
        Domain::Interval { length } => Box::new(move |x, _| (pi * x / length).cos()),
        Domain::RadialDisc { radius } => Box::new(move |r, _| (pi * r / radius).cos()),
        Domain::Rectangle { lx, ly } if lx >= ly => Box::new(move |x, _| (pi * x / lx).cos()),
        Domain::Rectangle { ly, .. } => Box::new(move |_, y| (pi * y / ly).cos()),
    }
}

/// `base + height * gaussian bump at the origin` along the first coordinate;
/// the aggressive guesses that reach branches detached from the constant.
fn bump_guess(grid: &Arc<Grid>, base: f64, height: f64) -> Field {
    let extent = match grid.domain() {
        Domain::Interval { length } => length,
        Domain::RadialDisc { radius } => radius,
        Domain::Rectangle { lx, .. } => lx,
    };
    let width = 0.2 * extent;
    Field::from_values_unchecked(
        grid.clone(),
        (0..grid.n_cells())
            .map(|c| {
                let (x, _) = grid.cell_center(c);
                base + height * (-(x / width) * (x / width)).exp()
            })
            .collect(),
    )
}

/// Banded matrix `d * DivGrad + diag(diag_term)` in the grid's row ordering.
fn assemble_jacobian(g: &Grid, d: f64, diag_term: &[f64]) -> Banded {
    let n = g.n_cells();
    let bw = if g.ny() > 1 { g.nx() } else { 1 };
    let mut jac = Banded::zeros(n, bw, bw);
    for (c, &t) in diag_term.iter().enumerate() {
        jac.add(c, c, t);
    }
    let w = g.weights();
    let (nx, ny) = (g.nx(), g.ny());
    for j in 0..ny {
        for i in 1..nx {
            let l = g.idx(i - 1, j);
            let r = g.idx(i, j);
            let a = g.face_area_x()[j * (nx + 1) + i];
            let cl = d * a / (g.hx() * w[l]);
            let cr = d * a / (g.hx() * w[r]);
            jac.add(l, r, cl);
            jac.add(l, l, -cl);
            jac.add(r, l, cr);
            jac.add(r, r, -cr);
        }
    }
    if ny > 1 {
        for j in 1..ny {
            for i in 0..nx {
                let l = g.idx(i, j - 1);
                let r = g.idx(i, j);
                let a = g.face_area_y()[j * nx + i];
                let cl = d * a / (g.hy() * w[l]);
                let cr = d * a / (g.hy() * w[r]);
                jac.add(l, r, cl);
                jac.add(l, l, -cl);
                jac.add(r, l, cr);
                jac.add(r, r, -cr);
            }
        }
    }
    jac
}

fn laplacian(g: &Arc<Grid>, values: &[f64]) -> Vec<f64> {
    let f = Field::from_values_unchecked(g.clone(), values.to_vec());
    g.div_grad(&f)
}

/// Residual of the local equation `d lap w - w + w^k`.
fn local_residual(g: &Arc<Grid>, d: f64, k: f64, w: &[f64]) -> Vec<f64> {
    let mut r = laplacian(g, w);
    for (ri, &wi) in r.iter_mut().zip(w) {
        *ri = d * *ri - wi + wi.powf(k);
    }
    r
}

/// Solve `d lap w - w + w^k = 0` by damped Newton from `guess`, which must be
/// strictly positive; iterates are kept positive by the line search.
pub fn solve_local(k: f64, d: f64, grid: &Arc<Grid>, guess: &Field) -> Result<Field> {
    solve_local_tol(k, d, grid, guess, NEWTON_TOL)
}

pub fn solve_local_tol(k: f64, d: f64, grid: &Arc<Grid>, guess: &Field, tol: f64) -> Result<Field> {
    check_positive("k", k)?;
    check_positive("d", d)?;
    check_positive("newton tolerance", tol)?;
    if guess.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if guess.min() <= 0.0 {
        return Err(Error::InvalidConfig("local guess must be strictly positive".into()));
    }
    let weights = grid.weights();
    let mut w = guess.values().to_vec();
    let mut res_vec = local_residual(grid, d, k, &w);
    let mut res = weighted_norm(&res_vec, weights);
    for iter in 0..NEWTON_MAX_ITERS {
        if res <= tol {
            return Ok(Field::from_values_unchecked(grid.clone(), w));
        }
        let diag: Vec<f64> = w.iter().map(|&wi| -1.0 + k * wi.powf(k - 1.0)).collect();
        let lu = assemble_jacobian(grid, d, &diag).factor()?;
        let mut delta: Vec<f64> = res_vec.iter().map(|r| -r).collect();
        lu.solve(&mut delta);
        // halving guards positivity only; the step is otherwise taken in full
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = w.iter().zip(&delta).map(|(wi, di)| wi + s * di).collect();
            if cand.iter().all(|&c| c > 0.0) {
                res_vec = local_residual(grid, d, k, &cand);
                res = weighted_norm(&res_vec, weights);
                w = cand;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearchFailed { iter });
        }
        if !res.is_finite() {
            return Err(Error::NewtonDiverged { iters: iter + 1, residual: res });
        }
    }
    Err(Error::NewtonDiverged { iters: NEWTON_MAX_ITERS, residual: res })
}

/// Rescale a converged local solution `w` to the mass-`m` solution of the
/// nonlocal problem, verifying the scaling identity and the nonlocal
/// residual, and recover the density.
pub fn rescale_to_nonlocal(w: &Field, k: f64, d: f64, m: f64) -> Result<SteadySolution> {
    check_positive("k", k)?;
    check_positive("d", d)?;
    check_positive("m", m)?;
    if k == 1.0 {
        return Err(Error::InvalidConfig(
            "k = 1 degenerates the rescaling identity; the k = 1 problem only has the constant solution".into(),
        ));
    }
    let grid = w.grid().clone();
    let m0 = w.integrate();
    if !(m0.is_finite() && m0 > 0.0) {
        return Err(Error::InvalidConfig("local solution must carry positive mass".into()));
    }
    let scale = m / m0;
    let v = Field::from_values_unchecked(
        grid.clone(),
        w.values().iter().map(|&x| scale * x).collect(),
    );
    let int_vk = v.integrate_pow(k);
    // both sides computed independently from the discrete fields
    let lhs = (m0 / m).powf(k - 1.0);
    let rhs = m / int_vk;
    if (lhs - rhs).abs() > RESCALE_IDENTITY_TOL * rhs.abs() {
        return Err(Error::ScalingIdentity { lhs, rhs });
    }
    let theta = rhs;
    let mut res_vec = laplacian(&grid, v.values());
    for (r, &vi) in res_vec.iter_mut().zip(v.values()) {
        *r = d * *r - vi + theta * vi.powf(k);
    }
    let residual = weighted_norm(&res_vec, grid.weights());
    if residual > RESCALE_RESIDUAL_TOL {
        return Err(Error::ResidualVerification { residual, tol: RESCALE_RESIDUAL_TOL });
    }
    let u = Field::from_values_unchecked(
        grid.clone(),
        v.values().iter().map(|&vi| theta * vi.powf(k)).collect(),
    );
    let (is_constant, amplitude) = field_stats(&v);
    Ok(SteadySolution { v, u, theta, residual, is_constant, amplitude })
}

/// Residual of the nonlocal exponential equation and the moment `S = int e^v`.
fn exponential_residual(g: &Arc<Grid>, d: f64, m_tilde: f64, v: &[f64]) -> (Vec<f64>, f64) {
    let ev: Vec<f64> = v.iter().map(|&x| x.exp()).collect();
    let s: f64 = ev.iter().zip(g.weights()).map(|(e, w)| e * w).sum();
    let mut r = laplacian(g, v);
    for ((ri, &vi), &ei) in r.iter_mut().zip(v).zip(&ev) {
        *ri = d * *ri - vi + m_tilde / s * ei;
    }
    (r, s)
}

/// Solve `d lap v - v + (m~ / int e^v) e^v = 0` by damped Newton with the
/// rank-one Jacobian correction applied through Sherman-Morrison.
pub fn solve_nonlocal_exponential(
    m_tilde: f64,
    d: f64,
    grid: &Arc<Grid>,
    guess: &Field,
) -> Result<SteadySolution> {
    solve_nonlocal_exponential_tol(m_tilde, d, grid, guess, NEWTON_TOL)
}

pub fn solve_nonlocal_exponential_tol(
    m_tilde: f64,
    d: f64,
    grid: &Arc<Grid>,
    guess: &Field,
    tol: f64,
) -> Result<SteadySolution> {
    check_positive("m_tilde", m_tilde)?;
    check_positive("d", d)?;
    check_positive("newton tolerance", tol)?;
    if guess.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if guess.max() > EXP_OVERFLOW_LIMIT {
        return Err(Error::SteadyOverflow { max: guess.max() });
    }
    let weights = grid.weights();
    let mut v = guess.values().to_vec();
    let (mut res_vec, mut s_mom) = exponential_residual(grid, d, m_tilde, &v);
    let mut res = weighted_norm(&res_vec, weights);
    for iter in 0..NEWTON_MAX_ITERS {
        if res <= tol {
            return Ok(build_exponential_solution(grid, m_tilde, v, res));
        }
        let ev: Vec<f64> = v.iter().map(|&x| x.exp()).collect();
        // sparse part B = d L - I + (m~/S) diag(e^v); the nonlocal term adds
        // the rank-one -(m~/S^2) e^v (w o e^v)^T handled below
        let diag: Vec<f64> = ev.iter().map(|&e| -1.0 + m_tilde / s_mom * e).collect();
        let lu = assemble_jacobian(grid, d, &diag).factor()?;
        let mut x1: Vec<f64> = res_vec.iter().map(|r| -r).collect();
        lu.solve(&mut x1);
        let mut x2 = ev.clone();
        lu.solve(&mut x2);
        let c = m_tilde / (s_mom * s_mom);
        let bt = |x: &[f64]| -> f64 {
            x.iter().zip(&ev).zip(weights).map(|((xi, e), w)| xi * e * w).sum()
        };
        let denom = 1.0 - c * bt(&x2);
        if denom.abs() < 1e-14 {
            return Err(Error::SingularSystem { row: 0, pivot: denom });
        }
        let coef = c * bt(&x1) / denom;
        let delta: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + coef * b).collect();
        // halving guards the exponent cap only; a step blocked at every
        // length signals a profile running toward blowup, which ends the
        // branch rather than the run
        let mut step = 1.0;
        let mut accepted = false;
        let mut overflowed = f64::NAN;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = v.iter().zip(&delta).map(|(vi, di)| vi + step * di).collect();
            let cand_max = cand.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if cand_max > EXP_OVERFLOW_LIMIT {
                overflowed = overflowed.max(cand_max);
                step *= 0.5;
                continue;
            }
            let (cand_res_vec, cand_s) = exponential_residual(grid, d, m_tilde, &cand);
            v = cand;
            res_vec = cand_res_vec;
            s_mom = cand_s;
            res = weighted_norm(&res_vec, weights);
            accepted = true;
            break;
        }
        if !accepted {
            return Err(Error::SteadyOverflow { max: overflowed });
        }
        if !res.is_finite() {
            return Err(Error::NewtonDiverged { iters: iter + 1, residual: res });
        }
    }
    Err(Error::NewtonDiverged { iters: NEWTON_MAX_ITERS, residual: res })
}

fn build_exponential_solution(
    grid: &Arc<Grid>,
    m_tilde: f64,
    v: Vec<f64>,
    residual: f64,
) -> SteadySolution {
    let ev: Vec<f64> = v.iter().map(|&x| x.exp()).collect();
    let s: f64 = ev.iter().zip(grid.weights()).map(|(e, w)| e * w).sum();
    let theta = m_tilde / s;
    let u = Field::from_values_unchecked(grid.clone(), ev.iter().map(|&e| theta * e).collect());
    let v = Field::from_values_unchecked(grid.clone(), v);
    let (is_constant, amplitude) = field_stats(&v);
    SteadySolution { v, u, theta, residual, is_constant, amplitude }
}

/// Map an exponential-kind solution from the rescaled variables back to the
/// physical ones for a constrained-exponential motility with parameters
/// `chi, alpha`: physical `v = v~ / (chi (1 - alpha))`, same for `u`.
pub fn to_physical_exponential(
    sol: &SteadySolution,
    chi: f64,
    alpha: f64,
) -> Result<SteadySolution> {
    check_positive("chi", chi)?;
    if !(alpha.is_finite() && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must be below 1")));
    }
    let scale = chi * (1.0 - alpha);
    let grid = sol.v.grid().clone();
    let v = Field::from_values_unchecked(
        grid.clone(),
        sol.v.values().iter().map(|&x| x / scale).collect(),
    );
    let u = Field::from_values_unchecked(
        grid.clone(),
        sol.u.values().iter().map(|&x| x / scale).collect(),
    );
    Ok(SteadySolution {
        v,
        u,
        theta: sol.theta / scale,
        // residual stays in the rescaled variables where it was verified
        residual: sol.residual,
        is_constant: sol.is_constant,
        amplitude: sol.amplitude,
    })
}

/// Solve `problem` walking the guess ladder; returns the solution and the
/// guess that produced it. `prev` seeds branch continuation.
fn solve_chain(
    problem: &SteadyProblem,
    prev: Option<&GuessProfile>,
    tol: f64,
) -> Result<(SteadySolution, ConvergedFrom, GuessProfile)> {
    match problem.kind {
        SteadyKind::Algebraic { k } => {
            if k == 1.0 {
                // linear nonlocal case: only the constant meets the mass
                // constraint, and it does so exactly
                let c = problem.m / problem.grid.measure();
                let v = Field::constant(&problem.grid, c)?;
                let u = v.clone();
                let sol = SteadySolution {
                    v,
                    u,
                    theta: 1.0,
                    residual: 0.0,
                    is_constant: true,
                    amplitude: 1.0,
                };
                let profile = Field::constant(&problem.grid, 1.0)?;
                return Ok((sol, ConvergedFrom::ConstantGuess, profile));
            }
            let (w, from) = local_chain(k, problem.d, &problem.grid, prev, tol)?;
            let sol = rescale_to_nonlocal(&w, k, problem.d, problem.m)?;
            Ok((sol, from, w))
        }
        SteadyKind::ExponentialRadial { m_tilde } => {
            let (sol, from) = exponential_chain(m_tilde, problem.d, &problem.grid, prev, tol)?;
            let profile = sol.v.clone();
            Ok((sol, from, profile))
        }
    }
}

fn is_nonconstant_field(f: &Field) -> bool {
    !field_stats(f).0
}

fn local_chain(
    k: f64,
    d: f64,
    grid: &Arc<Grid>,
    prev: Option<&Field>,
    tol: f64,
) -> Result<(Field, ConvergedFrom)> {
    let mut guesses: Vec<(Field, ConvergedFrom)> = Vec::new();
    if let Some(p) = prev {
        if is_nonconstant_field(p) && p.min() > 0.0 {
            guesses.push((p.clone(), ConvergedFrom::PreviousBranchPoint));
        }
    }
    guesses.push((perturbed_constant_guess(grid, 1.0)?, ConvergedFrom::PerturbedGuess));
    guesses.push((Field::constant(grid, 1.0)?, ConvergedFrom::ConstantGuess));

    let mut constant_fallback: Option<(Field, ConvergedFrom)> = None;
    let mut last_err: Option<Error> = None;
    for (guess, from) in guesses {
        match solve_local_tol(k, d, grid, &guess, tol) {
            Ok(w) => {
                if is_nonconstant_field(&w) {
                    return Ok((w, from));
                }
                constant_fallback.get_or_insert((w, from));
            }
            Err(e) => last_err = Some(e),
        }
    }
    constant_fallback
        .map(Ok)
        .unwrap_or_else(|| Err(last_err.expect("no guesses were tried")))
}

fn exponential_chain(
    m_tilde: f64,
    d: f64,
    grid: &Arc<Grid>,
    prev: Option<&Field>,
    tol: f64,
) -> Result<(SteadySolution, ConvergedFrom)> {
    let base = m_tilde / grid.measure();
    let mut guesses: Vec<(Field, ConvergedFrom)> = Vec::new();
    if let Some(p) = prev {
        if is_nonconstant_field(p) {
            guesses.push((p.clone(), ConvergedFrom::PreviousBranchPoint));
        }
    }
    guesses.push((perturbed_constant_guess(grid, base)?, ConvergedFrom::PerturbedGuess));
    for height in BUMP_LADDER {
        guesses.push((bump_guess(grid, base, height), ConvergedFrom::PerturbedGuess));
    }
    guesses.push((Field::constant(grid, base)?, ConvergedFrom::ConstantGuess));

    let mut constant_fallback: Option<(SteadySolution, ConvergedFrom)> = None;
    let mut last_err: Option<Error> = None;
    for (guess, from) in guesses {
        match solve_nonlocal_exponential_tol(m_tilde, d, grid, &guess, tol) {
            Ok(sol) => {
                if !sol.is_constant {
                    return Ok((sol, from));
                }
                constant_fallback.get_or_insert((sol, from));
            }
            Err(e) => last_err = Some(e),
        }
    }
    constant_fallback
        .map(Ok)
        .unwrap_or_else(|| Err(last_err.expect("no guesses were tried")))
}

/// March the branch parameter (the diffusion constant for the algebraic
/// kind, the rescaled mass for the exponential kind) across `range` in
/// `n_points` evenly spaced values, reusing each converged nonconstant
/// solution as the next guess. A Newton failure past the first point
/// truncates the branch; on the first point it is an error.
pub fn continuation(
    problem: &SteadyProblem,
    range: (f64, f64),
    n_points: usize,
) -> Result<Branch> {
    let (start, stop) = range;
    check_positive("range start", start)?;
    check_positive("range stop", stop)?;
    if n_points < 2 {
        return Err(Error::InvalidConfig("continuation needs at least 2 points".into()));
    }
    if start == stop {
        return Err(Error::InvalidConfig("continuation range is degenerate".into()));
    }
    let mut points = Vec::with_capacity(n_points);
    let mut terminated_at = None;
    let mut prev: Option<GuessProfile> = None;
    let mut final_solution = None;
    for i in 0..n_points {
        let p = start + (stop - start) * i as f64 / (n_points - 1) as f64;
        let at = problem.with_param(p);
        match solve_chain(&at, prev.as_ref(), NEWTON_TOL) {
            Ok((sol, from, profile)) => {
                points.push(BranchPoint {
                    parameter: p,
                    amplitude: sol.amplitude,
                    residual: sol.residual,
                    max_v: sol.v.max(),
                    min_v: sol.v.min(),
                    theta: sol.theta,
                    converged_from: from,
                });
                prev = Some(profile);
                final_solution = Some(sol);
            }
            Err(e) => {
                if points.is_empty() {
                    return Err(e);
                }
                terminated_at = Some(p);
                break;
            }
        }
    }
    Ok(Branch { points, terminated_at, final_solution })
}

/// First consecutive pair of branch points whose amplitudes straddle
/// [`AMPLITUDE_THRESHOLD`], bracketing the empirical existence threshold.
pub fn empirical_threshold(points: &[BranchPoint]) -> Option<(f64, f64)> {
    points.windows(2).find_map(|w| {
        let below = |p: &BranchPoint| p.amplitude < AMPLITUDE_THRESHOLD;
        (below(&w[0]) != below(&w[1])).then(|| (w[0].parameter, w[1].parameter))
    })
}

/// Header of the branch CSV.
pub const BRANCH_HEADER: &str = "parameter,amplitude,residual,max_v,min_v,theta";

/// Write branch points as CSV in the fixed column order of [`BRANCH_HEADER`].
pub fn write_branch_csv<W: Write>(points: &[BranchPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BRANCH_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.parameter, p.amplitude, p.residual, p.max_v, p.min_v, p.theta
        )?;
    }
    Ok(())
}
