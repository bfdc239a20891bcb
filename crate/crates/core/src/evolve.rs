//! Explicit time stepping for the density equation coupled to the
//! quasi-static signal solve.
//!
//! One step advances the density by the conservative flux divergence
//!
//! ```text
//! du/dt = div( gamma(v) grad u - u phi(v) grad v )
//! ```
//!
//! with all face coefficients evaluated at the arithmetic mean of the two
//! adjacent signal values, then refreshes the signal by the elliptic solve.
//! The advective face density is upwinded by default, which keeps the scheme
//! positivity-friendly at first order; a centered average is available when
//! second-order spatial accuracy matters more than monotonicity.
//!
//! The step size is chosen adaptively from the current coefficients:
//! `dt = safety * min(h^2 / (2 D max gamma), h / max |phi grad v|)` with `D`
//! the domain dimension. Tiny negative undershoots from the advection stencil
//! are clipped and the lost mass restored by a global rescale; a deficit
//! beyond a configured fraction of the total mass aborts the run as a hard
//! error. Suspected finite-time blowup is reported as an outcome, not an
//! error: amplification beyond a factor over the initial sup-norm, step-size
//! collapse, or a non-finite update all stop the run with the last finite
//! state attached.
//!
//! Diagnostics are sampled on a fixed cadence; the first record carries
//! `dt = 0` since no step has been taken yet.

use crate::elliptic::{exp_moment, EllipticOperator};
use crate::error::Error;
use crate::grid::{Field, FaceField};
use crate::motility::{phi_inverse_moment, MotilityPair};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// How the advected density is sampled on a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FaceScheme {
    /// Donor-cell value from the side the drift comes from.
    #[default]
    Upwind,
    /// Arithmetic mean of the two adjacent cells.
    Central,
}

/// Time integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    #[default]
    Euler,
    /// Two-stage trapezoidal predictor/corrector; re-solves the signal at the
    /// predicted density.
    Heun,
}

/// Knobs of one evolution run. Defaults match the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Time between diagnostic records.
    pub cadence: f64,
    /// Exponent for the density moment and the sensitivity inverse moment.
    pub p_monitor: f64,
    /// Rate in the exponential signal moment diagnostic.
    pub lambda_monitor: f64,
    /// Sup-norm growth factor over the initial density that flags blowup.
    pub blowup_factor: f64,
    /// Step sizes below this flag blowup by collapse.
    pub dt_floor: f64,
    /// Fraction of the stability bound actually taken.
    pub safety: f64,
    pub time_scheme: TimeScheme,
    pub face_scheme: FaceScheme,
    /// Largest tolerable clipped-mass fraction per step.
    pub max_clip_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            cadence: 0.1,
            p_monitor: 2.0,
            lambda_monitor: 1.0,
            blowup_factor: 1e4,
            dt_floor: 1e-12,
            safety: 0.4,
            time_scheme: TimeScheme::Euler,
            face_scheme: FaceScheme::Upwind,
            max_clip_fraction: 1e-6,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.cadence.is_finite() && self.cadence > 0.0) {
            return bad("cadence must be positive");
        }
        if !(self.p_monitor.is_finite() && self.p_monitor > 0.0) {
            return bad("p_monitor must be positive");
        }
        if !self.lambda_monitor.is_finite() {
            return bad("lambda_monitor must be finite");
        }
        if !(self.blowup_factor.is_finite() && self.blowup_factor > 1.0) {
            return bad("blowup_factor must exceed 1");
        }
        if !(self.dt_floor.is_finite() && self.dt_floor > 0.0) {
            return bad("dt_floor must be positive");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety must lie in (0, 1]");
        }
        if !(self.max_clip_fraction >= 0.0 && self.max_clip_fraction < 1.0) {
            return bad("max_clip_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One diagnostic sample along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRecord {
    pub t: f64,
    pub mass: f64,
    pub linf_u: f64,
    /// `(integral of u^p)^(1/p)` at the monitor exponent.
    pub lp_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    /// Integral of `exp(lambda v)`; may overflow to infinity.
    pub exp_moment: f64,
    /// Integral of `phi(v)^(-p)`; infinite where the sensitivity vanishes.
    pub phi_inv_moment: f64,
    /// Step size that produced this state; zero on the initial record.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupReason {
    /// Sup-norm exceeded `blowup_factor` times its initial value.
    Amplification,
    /// Stability bound drove the step size under `dt_floor`.
    DtCollapse,
    /// The update produced a non-finite value.
    NonFinite,
}

impl std::fmt::Display for BlowupReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BlowupReason::Amplification => "amplification",
            BlowupReason::DtCollapse => "dt_collapse",
            BlowupReason::NonFinite => "non_finite",
        };
        f.write_str(s)
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    BlowupSuspected { t: f64, reason: BlowupReason },
}

/// Everything a finished run hands back. The final fields are the last
/// finite state even when the run stopped on a suspected blowup.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<DiagRecord>,
    pub outcome: Outcome,
    /// Running minimum of the signal over the whole run.
    pub measured_eta: f64,
    pub final_u: Field,
    pub final_v: Field,
    pub clip_events: u64,
    pub clip_deficit: f64,
    /// Monitor exponent the records were taken at.
    pub p: f64,
    /// Exponential moment rate the records were taken at.
    pub lambda: f64,
}

/// Conservative transport right-hand side and the face maxima that bound the
/// stable step: `(rhs, max gamma on faces, max |phi grad v| on faces)`.
pub fn flux_divergence(
    pair: &MotilityPair,
    scheme: FaceScheme,
    u: &Field,
    v: &Field,
    flux: &mut FaceField,
) -> Result<(Vec<f64>, f64, f64)> {
    if u.grid() != v.grid() || u.grid() != flux.grid() {
        return Err(Error::GridMismatch);
    }
    let g = u.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let uv = u.values();
    let vv = v.values();
    let mut gamma_max = 0.0f64;
    let mut drift_max = 0.0f64;
    for j in 0..ny {
        for i in 1..nx {
            let l = g.idx(i - 1, j);
            let r = g.idx(i, j);
            let vals = pair.eval(0.5 * (vv[l] + vv[r]))?;
            let grad_u = (uv[r] - uv[l]) / g.hx();
            let s = vals.phi * (vv[r] - vv[l]) / g.hx();
            let uf = match scheme {
                FaceScheme::Upwind => {
                    if s > 0.0 {
                        uv[l]
                    } else {
                        uv[r]
                    }
                }
                FaceScheme::Central => 0.5 * (uv[l] + uv[r]),
            };
            flux.x[j * (nx + 1) + i] = vals.gamma * grad_u - uf * s;
            gamma_max = gamma_max.max(vals.gamma);
            drift_max = drift_max.max(s.abs());
        }
    }
    if ny > 1 {
        for j in 1..ny {
            for i in 0..nx {
                let l = g.idx(i, j - 1);
                let r = g.idx(i, j);
                let vals = pair.eval(0.5 * (vv[l] + vv[r]))?;
                let grad_u = (uv[r] - uv[l]) / g.hy();
                let s = vals.phi * (vv[r] - vv[l]) / g.hy();
                let uf = match scheme {
                    FaceScheme::Upwind => {
                        if s > 0.0 {
                            uv[l]
                        } else {
                            uv[r]
                        }
                    }
                    FaceScheme::Central => 0.5 * (uv[l] + uv[r]),
                };
                flux.y[j * nx + i] = vals.gamma * grad_u - uf * s;
                gamma_max = gamma_max.max(vals.gamma);
                drift_max = drift_max.max(s.abs());
            }
        }
    }
    Ok((g.divergence(flux), gamma_max, drift_max))
}

fn dt_bound(grid_dim: usize, h: f64, gamma_max: f64, drift_max: f64, safety: f64) -> f64 {
    let diffusion = h * h / (2.0 * grid_dim as f64 * gamma_max.max(f64::MIN_POSITIVE));
    let bound = if drift_max > 0.0 { diffusion.min(h / drift_max) } else { diffusion };
    safety * bound
}

/// Largest stable explicit step for the current signal, before the safety
/// factor trims it.
pub fn stable_dt(pair: &MotilityPair, v: &Field, safety: f64) -> Result<f64> {
    let g = v.grid().clone();
    let vv = v.values();
    let mut gamma_max = 0.0f64;
    let mut drift_max = 0.0f64;
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            let l = g.idx(i - 1, j);
            let r = g.idx(i, j);
            let vals = pair.eval(0.5 * (vv[l] + vv[r]))?;
            gamma_max = gamma_max.max(vals.gamma);
            drift_max = drift_max.max((vals.phi * (vv[r] - vv[l]) / g.hx()).abs());
        }
    }
    if g.ny() > 1 {
        for j in 1..g.ny() {
            for i in 0..g.nx() {
                let l = g.idx(i, j - 1);
                let r = g.idx(i, j);
                let vals = pair.eval(0.5 * (vv[l] + vv[r]))?;
                gamma_max = gamma_max.max(vals.gamma);
                drift_max = drift_max.max((vals.phi * (vv[r] - vv[l]) / g.hy()).abs());
            }
        }
    }
    Ok(dt_bound(g.dimension(), g.h_min(), gamma_max, drift_max, safety))
}

/// Zero out negative cells and rescale the rest so the weighted mass returns
/// to `target_mass`. Returns the clipped deficit (nonnegative).
pub(crate) fn clip_negative(values: &mut [f64], weights: &[f64], target_mass: f64) -> f64 {
    let mut deficit = 0.0;
    let mut kept = 0.0;
    for (v, w) in values.iter_mut().zip(weights) {
        if *v < 0.0 {
            deficit -= *v * w;
            *v = 0.0;
        } else {
            kept += *v * w;
        }
    }
    if deficit > 0.0 && kept > 0.0 {
        let factor = target_mass / kept;
        for v in values.iter_mut() {
            *v *= factor;
        }
    }
    deficit
}

/// Evolution state plus scratch space: one density step at a time under the
/// adaptive stability bound, with the signal kept quasi-static.
pub struct Simulation {
    pair: MotilityPair,
    config: RunConfig,
    elliptic: EllipticOperator,
    u: Field,
    v: Field,
    t: f64,
    last_dt: f64,
    steps: u64,
    mass: f64,
    initial_linf: f64,
    measured_eta: f64,
    clip_events: u64,
    clip_deficit: f64,
    flux: FaceField,
}

/// What a single step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEvent {
    Stepped,
    Blowup(BlowupReason),
}

impl Simulation {
    pub fn new(u0: Field, pair: MotilityPair, d: f64, config: RunConfig) -> Result<Simulation> {
        config.validate()?;
        if u0.min() < 0.0 {
            return Err(Error::InvalidConfig("initial density must be nonnegative".into()));
        }
        let mass = u0.integrate();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidConfig("initial density must carry positive mass".into()));
        }
        let elliptic = EllipticOperator::new(u0.grid(), d)?;
        let v = elliptic.solve_with_guess(&u0, None)?;
        let flux = FaceField::zeros(u0.grid().clone());
        let initial_linf = u0.linf();
        let measured_eta = v.min();
        Ok(Simulation {
            pair,
            config,
            elliptic,
            u: u0,
            v,
            t: 0.0,
            last_dt: 0.0,
            steps: 0,
            mass,
            initial_linf,
            measured_eta,
            clip_events: 0,
            clip_deficit: 0.0,
            flux,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn last_dt(&self) -> f64 {
        self.last_dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn u(&self) -> &Field {
        &self.u
    }

    pub fn v(&self) -> &Field {
        &self.v
    }

    pub fn measured_eta(&self) -> f64 {
        self.measured_eta
    }

    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }

    pub fn clip_deficit(&self) -> f64 {
        self.clip_deficit
    }

    /// Advance one step, capping the step size at `dt_cap`. The state is left
    /// untouched when the step reports `DtCollapse` or `NonFinite`; an
    /// `Amplification` report leaves the amplified (still finite) state in
    /// place so it can be inspected.
    pub fn step_capped(&mut self, dt_cap: f64) -> Result<StepEvent> {
        let g = self.u.grid().clone();
        let (rhs, gamma_max, drift_max) =
            flux_divergence(&self.pair, self.config.face_scheme, &self.u, &self.v, &mut self.flux)?;
        let dt_raw = dt_bound(g.dimension(), g.h_min(), gamma_max, drift_max, self.config.safety);
        if dt_raw < self.config.dt_floor {
            return Ok(StepEvent::Blowup(BlowupReason::DtCollapse));
        }
        let dt = dt_raw.min(dt_cap);

        let mut next: Vec<f64> = match self.config.time_scheme {
            TimeScheme::Euler => self
                .u
                .values()
                .iter()
                .zip(&rhs)
                .map(|(ui, ri)| ui + dt * ri)
                .collect(),
            TimeScheme::Heun => {
                let star: Vec<f64> = self
                    .u
                    .values()
                    .iter()
                    .zip(&rhs)
                    .map(|(ui, ri)| ui + dt * ri)
                    .collect();
                if !star.iter().all(|x| x.is_finite()) {
                    return Ok(StepEvent::Blowup(BlowupReason::NonFinite));
                }
                let star = Field::from_values_unchecked(g.clone(), star);
                let v_star = self.elliptic.solve_with_guess(&star, Some(&self.v))?;
                let (rhs2, _, _) = flux_divergence(
                    &self.pair,
                    self.config.face_scheme,
                    &star,
                    &v_star,
                    &mut self.flux,
                )?;
                self.u
                    .values()
                    .iter()
                    .zip(rhs.iter().zip(&rhs2))
                    .map(|(ui, (r1, r2))| ui + 0.5 * dt * (r1 + r2))
                    .collect()
            }
        };
        if !next.iter().all(|x| x.is_finite()) {
            return Ok(StepEvent::Blowup(BlowupReason::NonFinite));
        }

        let deficit = clip_negative(&mut next, g.weights(), self.mass);
        if deficit > 0.0 {
            self.clip_events += 1;
            self.clip_deficit += deficit;
            if deficit > self.config.max_clip_fraction * self.mass {
                return Err(Error::PositivityFailure { deficit, mass: self.mass });
            }
        }

        let next = Field::from_values_unchecked(g, next);
        let v_next = self.elliptic.solve_with_guess(&next, Some(&self.v))?;
        self.u = next;
        self.v = v_next;
        self.t += dt;
        self.last_dt = dt;
        self.steps += 1;
        self.measured_eta = self.measured_eta.min(self.v.min());

        if self.u.linf() > self.config.blowup_factor * self.initial_linf {
            return Ok(StepEvent::Blowup(BlowupReason::Amplification));
        }
        Ok(StepEvent::Stepped)
    }

    pub fn step(&mut self) -> Result<StepEvent> {
        self.step_capped(f64::INFINITY)
    }

    /// Diagnostics of the current state.
    pub fn record(&self) -> Result<DiagRecord> {
        let p = self.config.p_monitor;
        let phi_inv = match phi_inverse_moment(&self.pair, &self.v, p) {
            Ok(x) => x,
            // a vanished sensitivity makes the inverse moment infinite, which
            // is a reportable value rather than a failed run
            Err(Error::VanishingSensitivity { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(DiagRecord {
            t: self.t,
            mass: self.u.integrate(),
            linf_u: self.u.linf(),
            lp_u: self.u.integrate_pow(p).powf(1.0 / p),
            min_v: self.v.min(),
            max_v: self.v.max(),
            exp_moment: exp_moment(&self.v, self.config.lambda_monitor),
            phi_inv_moment: phi_inv,
            dt: self.last_dt,
        })
    }

    /// Run until `horizon`, recording on the cadence. Consumes the stepper.
    pub fn run(mut self, horizon: f64) -> Result<RunResult> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        let mut records = vec![self.record()?];
        let cadence = self.config.cadence;
        let mut next_record = cadence;
        let mut outcome = Outcome::Completed;
        let end_slack = 1e-12 * horizon.max(1.0);
        while horizon - self.t > end_slack {
            match self.step_capped(horizon - self.t)? {
                StepEvent::Stepped => {
                    if self.t >= next_record {
                        records.push(self.record()?);
                        next_record = cadence * ((self.t / cadence).floor() + 1.0);
                    }
                }
                StepEvent::Blowup(reason) => {
                    outcome = Outcome::BlowupSuspected { t: self.t, reason };
                    break;
                }
            }
        }
        if records.last().map(|r| r.t) != Some(self.t) {
            records.push(self.record()?);
        }
        Ok(RunResult {
            records,
            outcome,
            measured_eta: self.measured_eta,
            final_u: self.u,
            final_v: self.v,
            clip_events: self.clip_events,
            clip_deficit: self.clip_deficit,
            p: self.config.p_monitor,
            lambda: self.config.lambda_monitor,
        })
    }
}

/// Convenience wrapper: build the stepper and run to `horizon`.
pub fn run(
    u0: Field,
    pair: MotilityPair,
    d: f64,
    horizon: f64,
    config: RunConfig,
) -> Result<RunResult> {
    Simulation::new(u0, pair, d, config)?.run(horizon)
}

/// Header of the trajectory CSV, one column per diagnostic.
pub const TRAJECTORY_HEADER: &str = "t,mass,linf_u,lp_u,min_v,max_v,exp_moment,phi_inv_moment,dt";

/// Write records as CSV with the fixed column order of [`TRAJECTORY_HEADER`].
pub fn write_trajectory_csv<W: Write>(records: &[DiagRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t, r.mass, r.linf_u, r.lp_u, r.min_v, r.max_v, r.exp_moment, r.phi_inv_moment, r.dt
        )?;
    }
    Ok(())
}

/// Least constants `c0, c1 >= 0` such that every interior record satisfies
/// `d/dt(int u^p) + int u^p <= c0 + c1 * int phi(v)^(-p)`, the differential
/// inequality whose closure underlies the boundedness argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorFit {
    pub c0: f64,
    pub c1: f64,
    /// Both constants finite and below the plausibility cap.
    pub fit_ok: bool,
    /// Largest violation of the fitted bound; nonpositive when it holds.
    pub worst_slack: f64,
}

/// Constants above this are treated as a failed fit.
pub const MONITOR_CAP: f64 = 1e6;

/// Fit the moment inequality along a recorded trajectory. Time derivatives
/// use centered differences, so at least three records are required.
pub fn monitor_pei(records: &[DiagRecord], p: f64) -> Result<MonitorFit> {
    if records.len() < 3 {
        return Err(Error::InvalidConfig("moment monitor needs at least 3 records".into()));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidConfig("moment exponent must be positive".into()));
    }
    let moment: Vec<f64> = records.iter().map(|r| r.lp_u.powf(p)).collect();
    let mut lhs = Vec::with_capacity(records.len() - 2);
    let mut rs = Vec::with_capacity(records.len() - 2);
    for j in 1..records.len() - 1 {
        let span = records[j + 1].t - records[j - 1].t;
        if span <= 0.0 {
            return Err(Error::InvalidConfig("record times must be increasing".into()));
        }
        let rate = (moment[j + 1] - moment[j - 1]) / span;
        let r = records[j].phi_inv_moment;
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::NonFinite("sensitivity inverse moment"));
        }
        lhs.push(rate + moment[j]);
        rs.push(r);
    }
    let r_max = rs.iter().cloned().fold(0.0f64, f64::max);
    let r_min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
    let g = |c1: f64| -> f64 {
        lhs.iter().zip(&rs).map(|(l, r)| l - c1 * r).fold(f64::NEG_INFINITY, f64::max)
    };
    // f is convex: max(0, decreasing piecewise-linear) plus a linear ramp
    let f = |c1: f64| g(c1).max(0.0) + c1 * r_max;
    let lhs_max = lhs.iter().cloned().fold(0.0f64, f64::max);
    let mut lo = 0.0;
    let mut hi = lhs_max.max(0.0) / r_min;
    if hi > 0.0 {
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) <= f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
    }
    let mut c1 = 0.5 * (lo + hi);
    // the plateau case: prefer the pure-constant bound when it is as tight
    if f(0.0) <= f(c1) * (1.0 + 1e-9) + 1e-12 {
        c1 = 0.0;
    }
    let c0 = g(c1).max(0.0);
    let worst_slack =
        lhs.iter().zip(&rs).map(|(l, r)| l - c0 - c1 * r).fold(f64::NEG_INFINITY, f64::max);
    let fit_ok = c0.is_finite() && c1.is_finite() && c0 <= MONITOR_CAP && c1 <= MONITOR_CAP;
    Ok(MonitorFit { c0, c1, fit_ok, worst_slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn heat_pair() -> MotilityPair {
        MotilityPair::custom(|_| 1.0, |_| 0.0, |_| 0.0, |_| 0.0)
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let g = Grid::interval(1.0, 16).unwrap();
        let u0 = Field::constant(&g, 2.5).unwrap();
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let res = run(u0, pair, 1.0, 0.05, RunConfig::default()).unwrap();
        assert_eq!(res.outcome, Outcome::Completed);
        for x in res.final_u.values() {
            assert!((x - 2.5).abs() < 1e-13);
        }
        for x in res.final_v.values() {
            assert!((x - 2.5).abs() < 1e-12);
        }
        assert!((res.measured_eta - 2.5).abs() < 1e-12);
        assert_eq!(res.clip_events, 0);
    }

    #[test]
    fn pure_diffusion_decays_at_the_discrete_rate() {
        // cos(pi x) is an exact eigenvector of the discrete operator, so each
        // explicit step multiplies the mode by exactly (1 - lam dt)
        let n = 32;
        let g = Grid::interval(1.0, n).unwrap();
        let u0 = Field::from_fn(&g, |x, _| 1.0 + 0.1 * (std::f64::consts::PI * x).cos()).unwrap();
        let mut sim = Simulation::new(u0, heat_pair(), 1.0, RunConfig::default()).unwrap();
        let dt = 1e-4;
        let steps = 100;
        for _ in 0..steps {
            assert_eq!(sim.step_capped(dt).unwrap(), StepEvent::Stepped);
        }
        assert!((sim.t() - dt * steps as f64).abs() < 1e-12);
        let h = 1.0 / n as f64;
        let lam = 4.0 / (h * h) * (0.5 * std::f64::consts::PI * h).sin().powi(2);
        let mode = Field::from_fn(&g, |x, _| (std::f64::consts::PI * x).cos()).unwrap();
        let num: f64 = sim
            .u()
            .values()
            .iter()
            .zip(mode.values())
            .zip(g.weights())
            .map(|((u, m), w)| u * m * w)
            .sum();
        let den: f64 = mode.values().iter().zip(g.weights()).map(|(m, w)| m * m * w).sum();
        let amp = num / den;
        let expected = 0.1 * (1.0 - lam * dt).powi(steps);
        assert!((amp - expected).abs() < 1e-12, "amp {amp} vs {expected}");
        // the fixed Euler factor tracks the continuum rate to first order
        let continuum = 0.1 * (-lam * sim.t()).exp();
        assert!((amp - continuum).abs() < 2e-4 * continuum.abs());
    }

    #[test]
    fn transport_rhs_is_conservative() {
        let pair = MotilityPair::ks_algebraic(1.0, 1.5, 0.0).unwrap();
        let grids = [
            Grid::interval(1.0, 24).unwrap(),
            Grid::rectangle(1.0, 0.8, 12, 10).unwrap(),
            Grid::radial_disc(1.0, 20).unwrap(),
        ];
        for g in &grids {
            let u = Field::from_fn(g, |x, y| 1.0 + 0.5 * (3.0 * x + y).sin().powi(2)).unwrap();
            let v = Field::from_fn(g, |x, y| 1.0 + 0.3 * (2.0 * x - y).cos()).unwrap();
            for scheme in [FaceScheme::Upwind, FaceScheme::Central] {
                let mut flux = FaceField::zeros(g.clone());
                let (rhs, gmax, smax) = flux_divergence(&pair, scheme, &u, &v, &mut flux).unwrap();
                let total: f64 = rhs.iter().zip(g.weights()).map(|(r, w)| r * w).sum();
                let scale = rhs.iter().fold(1.0f64, |a, r| a.max(r.abs()));
                assert!(total.abs() < 1e-12 * scale, "{g:?} {scheme:?}: {total}");
                assert!(gmax > 0.0 && smax >= 0.0);
            }
        }
    }

    #[test]
    fn upwind_picks_the_donor_cell() {
        let g = Grid::interval(1.0, 4).unwrap();
        let u = Field::from_values(&g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Field::from_values(&g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        // negligible diffusivity, unit sensitivity, grad v = 4 on every
        // interior face, so the drift carries the left cell rightward
        let pair = MotilityPair::custom(|_| 1e-12, |_| 0.0, |_| 1.0, |_| -1e-12);
        let mut flux = FaceField::zeros(g.clone());
        let (rhs, _, smax) =
            flux_divergence(&pair, FaceScheme::Upwind, &u, &v, &mut flux).unwrap();
        assert!((smax - 4.0).abs() < 1e-12);
        let expected = [-16.0, -16.0, -16.0, 48.0];
        for (r, e) in rhs.iter().zip(expected) {
            assert!((r - e).abs() < 1e-9, "{rhs:?}");
        }
        let (rhs, _, _) = flux_divergence(&pair, FaceScheme::Central, &u, &v, &mut flux).unwrap();
        let expected = [-24.0, -16.0, -16.0, 56.0];
        for (r, e) in rhs.iter().zip(expected) {
            assert!((r - e).abs() < 1e-9, "{rhs:?}");
        }
    }

    #[test]
    fn stable_dt_worked_example() {
        let g = Grid::interval(1.0, 100).unwrap();
        let v = Field::constant(&g, 1.0).unwrap();
        let dt = stable_dt(&heat_pair(), &v, 0.4).unwrap();
        assert!((dt - 2e-5).abs() < 1e-12 * 2e-5);

        // steep signal with tiny diffusivity: the drift cap takes over
        let pair = MotilityPair::custom(|_| 1e-6, |_| 0.0, |_| 1.0, |_| -1e-12);
        let v = Field::from_fn(&g, |x, _| x).unwrap();
        let dt = stable_dt(&pair, &v, 0.4).unwrap();
        assert!((dt - 0.4 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn clip_restores_target_mass() {
        let mut values = vec![-0.1, 1.0, 2.0];
        let weights = vec![1.0, 1.0, 1.0];
        let deficit = clip_negative(&mut values, &weights, 2.9);
        assert!((deficit - 0.1).abs() < 1e-15);
        assert_eq!(values[0], 0.0);
        let mass: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        assert!((mass - 2.9).abs() < 1e-12);
    }

    #[test]
    fn mass_is_conserved_along_a_run() {
        let g = Grid::interval(1.0, 32).unwrap();
        let u0 = Field::from_fn(&g, |x, _| {
            1.0 + 2.0 * (-((x - 0.5) / 0.1).powi(2)).exp()
        })
        .unwrap();
        let m0 = u0.integrate();
        let pair = MotilityPair::ks_exponential(1.0, 0.5).unwrap();
        for scheme in [TimeScheme::Euler, TimeScheme::Heun] {
            let config = RunConfig { time_scheme: scheme, cadence: 0.02, ..RunConfig::default() };
            let res = run(u0.clone(), pair.clone(), 0.5, 0.1, config).unwrap();
            assert_eq!(res.outcome, Outcome::Completed);
            let m = res.final_u.integrate();
            assert!((m - m0).abs() < 1e-12 * m0, "{scheme:?}: {m} vs {m0}");
        }
    }

    #[test]
    fn dt_floor_flags_collapse() {
        let g = Grid::interval(1.0, 16).unwrap();
        let u0 = Field::constant(&g, 1.0).unwrap();
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let config = RunConfig { dt_floor: 1.0, ..RunConfig::default() };
        let res = run(u0.clone(), pair, 1.0, 1.0, config).unwrap();
        match res.outcome {
            Outcome::BlowupSuspected { t, reason } => {
                assert_eq!(reason, BlowupReason::DtCollapse);
                assert_eq!(t, 0.0);
            }
            other => panic!("expected collapse, got {other:?}"),
        }
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.final_u.values(), u0.values());
    }

    #[test]
    fn records_follow_the_cadence() {
        let g = Grid::interval(1.0, 16).unwrap();
        let u0 = Field::from_fn(&g, |x, _| 1.0 + 0.2 * (std::f64::consts::PI * x).cos()).unwrap();
        let pair = MotilityPair::ks_exponential(0.5, 0.0).unwrap();
        let config = RunConfig { cadence: 0.2, ..RunConfig::default() };
        let res = run(u0, pair, 1.0, 0.5, config).unwrap();
        assert_eq!(res.records.len(), 4);
        assert_eq!(res.records[0].t, 0.0);
        assert_eq!(res.records[0].dt, 0.0);
        assert!(res.records[1].t >= 0.2 && res.records[2].t >= 0.4);
        let last = res.records.last().unwrap();
        assert!((last.t - 0.5).abs() < 1e-12);
        for pair in res.records.windows(2) {
            assert!(pair[1].t > pair[0].t);
        }
        // running signal minimum matches the per-record minima
        let rec_min = res.records.iter().map(|r| r.min_v).fold(f64::INFINITY, f64::min);
        assert!(res.measured_eta <= rec_min + 1e-15);
    }

    #[test]
    fn trajectory_csv_is_stable() {
        let g = Grid::interval(1.0, 16).unwrap();
        let u0 = Field::constant(&g, 1.0).unwrap();
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let config = RunConfig { cadence: 0.05, ..RunConfig::default() };
        let res = run(u0, pair, 1.0, 0.1, config).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&res.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert_eq!(text.lines().count(), res.records.len() + 1);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,1,1,1,"), "{first}");
    }

    #[test]
    fn monitor_prefers_constant_bound_on_steady_data() {
        let g = Grid::interval(1.0, 16).unwrap();
        let u0 = Field::constant(&g, 2.0).unwrap();
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let config = RunConfig { cadence: 0.01, ..RunConfig::default() };
        let res = run(u0, pair, 1.0, 0.1, config).unwrap();
        let fit = monitor_pei(&res.records, res.p).unwrap();
        assert!(fit.fit_ok);
        assert_eq!(fit.c1, 0.0);
        // constant density 2 on the unit interval: int u^2 = 4
        assert!((fit.c0 - 4.0).abs() < 1e-6, "c0 = {}", fit.c0);
        assert!(fit.worst_slack <= 1e-9);
    }

    #[test]
    fn monitor_bound_holds_on_synthetic_data() {
        let mut records = Vec::new();
        for j in 0..20 {
            let t = j as f64 * 0.1;
            let m = 1.0 + (t * 1.7).sin().powi(2);
            let r = 2.0 + (t * 0.9).cos();
            records.push(DiagRecord {
                t,
                mass: 1.0,
                linf_u: 1.0,
                lp_u: m.sqrt(),
                min_v: 0.5,
                max_v: 1.0,
                exp_moment: 1.0,
                phi_inv_moment: r,
                dt: 0.1,
            });
        }
        let fit = monitor_pei(&records, 2.0).unwrap();
        assert!(fit.fit_ok);
        assert!(fit.worst_slack <= 1e-9, "slack {}", fit.worst_slack);
        assert!(fit.c0 >= 0.0 && fit.c1 >= 0.0);
        assert!(monitor_pei(&records[..2], 2.0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid::interval(1.0, 16).unwrap();
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let neg = Field::from_fn(&g, |x, _| x - 0.5).unwrap();
        assert!(Simulation::new(neg, pair.clone(), 1.0, RunConfig::default()).is_err());
        let zero = Field::constant(&g, 0.0).unwrap();
        assert!(Simulation::new(zero, pair.clone(), 1.0, RunConfig::default()).is_err());
        let ok = Field::constant(&g, 1.0).unwrap();
        let bad = RunConfig { safety: 0.0, ..RunConfig::default() };
        assert!(Simulation::new(ok, pair, 1.0, bad).is_err());
    }
}
