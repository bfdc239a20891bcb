//! Motility function pairs `(gamma, phi)` and their admissibility checks.
//!
//! `gamma(v)` is the density diffusivity, `phi(v)` the chemotactic
//! sensitivity; both are functions of the signal level `v` alone. Two
//! parametric families are supported, each in a free-parameter form and in a
//! constrained form where the sensitivity is tied to the diffusivity through
//! `phi = (alpha - 1) * gamma'` with `alpha < 1`:
//!
//! * algebraic: `gamma = sigma1 / v^lambda1`, `phi = sigma2 / v^lambda2`;
//! * exponential: `gamma = exp(-chi1 v)`, `phi = delta exp(-chi2 v)`.
//!
//! Custom pairs take explicit callables for the functions and their
//! derivatives; analytic checks degrade to dense sampling for those.
//!
//! The key scalar throughout is the functional `gamma |phi'| / phi^2`: its
//! infimum over signal levels `v >= eta` must exceed `n/2` for the
//! boundedness machinery to apply. For the built-in families the functional
//! is monotone (a pure power or exponential), so the infimum sits either at
//! `eta` or at infinity depending on the sign of the exponent.

use crate::error::Error;
use crate::grid::Field;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Family {
    Algebraic { sigma1: f64, sigma2: f64, lambda1: f64, lambda2: f64 },
    Exponential { chi1: f64, chi2: f64, delta: f64 },
    KsAlgebraic { sigma: f64, lambda: f64, alpha: f64 },
    KsExponential { chi: f64, alpha: f64 },
    Custom { gamma: ScalarFn, dgamma: ScalarFn, phi: ScalarFn, dphi: ScalarFn },
}

impl std::fmt::Debug for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Algebraic { sigma1, sigma2, lambda1, lambda2 } => f
                .debug_struct("Algebraic")
                .field("sigma1", sigma1)
                .field("sigma2", sigma2)
                .field("lambda1", lambda1)
                .field("lambda2", lambda2)
                .finish(),
            Family::Exponential { chi1, chi2, delta } => f
                .debug_struct("Exponential")
                .field("chi1", chi1)
                .field("chi2", chi2)
                .field("delta", delta)
                .finish(),
            Family::KsAlgebraic { sigma, lambda, alpha } => f
                .debug_struct("KsAlgebraic")
                .field("sigma", sigma)
                .field("lambda", lambda)
                .field("alpha", alpha)
                .finish(),
            Family::KsExponential { chi, alpha } => f
                .debug_struct("KsExponential")
                .field("chi", chi)
                .field("alpha", alpha)
                .finish(),
            Family::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// Pointwise values of the pair and its derivatives at one signal level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotilityValues {
    pub gamma: f64,
    pub dgamma: f64,
    pub phi: f64,
    pub dphi: f64,
}

/// A diffusivity/sensitivity pair. Construction validates the family
/// constraints, so a value of this type always satisfies the smoothness and
/// sign hypotheses on its domain of definition.
#[derive(Debug, Clone)]
pub struct MotilityPair {
    family: Family,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMotility(format!("{name} = {v} must be positive and finite")))
    }
}

impl MotilityPair {
    /// Free algebraic pair `sigma1 / v^lambda1`, `sigma2 / v^lambda2`.
    /// Requires `sigma1, sigma2 > 0`, `lambda1 > 0`, `lambda2 > 1`.
    pub fn algebraic(sigma1: f64, sigma2: f64, lambda1: f64, lambda2: f64) -> Result<MotilityPair> {
        positive("sigma1", sigma1)?;
        positive("sigma2", sigma2)?;
        positive("lambda1", lambda1)?;
        if !(lambda2.is_finite() && lambda2 > 1.0) {
            return Err(Error::InvalidMotility(format!("lambda2 = {lambda2} must exceed 1")));
        }
        Ok(MotilityPair { family: Family::Algebraic { sigma1, sigma2, lambda1, lambda2 } })
    }

    /// Free exponential pair `exp(-chi1 v)`, `delta exp(-chi2 v)`.
    /// Requires `chi1, chi2, delta > 0`.
    pub fn exponential(chi1: f64, chi2: f64, delta: f64) -> Result<MotilityPair> {
        positive("chi1", chi1)?;
        positive("chi2", chi2)?;
        positive("delta", delta)?;
        Ok(MotilityPair { family: Family::Exponential { chi1, chi2, delta } })
    }

    /// Algebraic diffusivity with the sensitivity tied to it:
    /// `gamma = sigma / v^lambda`, `phi = (1 - alpha) sigma lambda / v^(lambda+1)`.
    /// Requires `sigma, lambda > 0` and `alpha < 1`.
    pub fn ks_algebraic(sigma: f64, lambda: f64, alpha: f64) -> Result<MotilityPair> {
        positive("sigma", sigma)?;
        positive("lambda", lambda)?;
        if !(alpha.is_finite() && alpha < 1.0) {
            return Err(Error::InvalidMotility(format!("alpha = {alpha} must be below 1")));
        }
        Ok(MotilityPair { family: Family::KsAlgebraic { sigma, lambda, alpha } })
    }

    /// Exponential diffusivity with the sensitivity tied to it:
    /// `gamma = exp(-chi v)`, `phi = (1 - alpha) chi exp(-chi v)`.
    /// Requires `chi > 0` and `alpha < 1`.
    pub fn ks_exponential(chi: f64, alpha: f64) -> Result<MotilityPair> {
        positive("chi", chi)?;
        if !(alpha.is_finite() && alpha < 1.0) {
            return Err(Error::InvalidMotility(format!("alpha = {alpha} must be below 1")));
        }
        Ok(MotilityPair { family: Family::KsExponential { chi, alpha } })
    }

    /// Pair given by explicit callables for the functions and their
    /// derivatives. The caller is responsible for `gamma > 0`, `phi >= 0` and
    /// `phi' < 0` on the signal range the pair will see; evaluation checks
    /// the sign conditions pointwise.
    pub fn custom(
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dgamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> MotilityPair {
        MotilityPair {
            family: Family::Custom {
                gamma: Arc::new(gamma),
                dgamma: Arc::new(dgamma),
                phi: Arc::new(phi),
                dphi: Arc::new(dphi),
            },
        }
    }

    /// Family tag used in reports and configs.
    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Algebraic { .. } => "algebraic",
            Family::Exponential { .. } => "exponential",
            Family::KsAlgebraic { .. } => "ks_algebraic",
            Family::KsExponential { .. } => "ks_exponential",
            Family::Custom { .. } => "custom",
        }
    }

    /// Parameters of the algebraic form `(sigma1, sigma2, lambda1, lambda2)`,
    /// with the constrained family mapped onto it.
    fn algebraic_params(&self) -> Option<(f64, f64, f64, f64)> {
        match self.family {
            Family::Algebraic { sigma1, sigma2, lambda1, lambda2 } => {
                Some((sigma1, sigma2, lambda1, lambda2))
            }
            Family::KsAlgebraic { sigma, lambda, alpha } => {
                Some((sigma, (1.0 - alpha) * sigma * lambda, lambda, lambda + 1.0))
            }
            _ => None,
        }
    }

    /// Parameters of the exponential form `(chi1, chi2, delta)`, with the
    /// constrained family mapped onto it.
    fn exponential_params(&self) -> Option<(f64, f64, f64)> {
        match self.family {
            Family::Exponential { chi1, chi2, delta } => Some((chi1, chi2, delta)),
            Family::KsExponential { chi, alpha } => Some((chi, chi, (1.0 - alpha) * chi)),
            _ => None,
        }
    }

    /// True for the singular-at-zero algebraic forms.
    pub fn singular_at_zero(&self) -> bool {
        self.algebraic_params().is_some()
    }

    /// Evaluate the pair at signal level `v`. Rejects negative levels, the
    /// singular point `v = 0` of the algebraic families, and any non-finite
    /// or sign-violating custom output.
    pub fn eval(&self, v: f64) -> Result<MotilityValues> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::MotilityDomain { v, reason: "signal level must be finite and nonnegative" });
        }
        let vals = match &self.family {
            Family::Algebraic { sigma1, sigma2, lambda1, lambda2 } => {
                if v == 0.0 {
                    return Err(Error::MotilityDomain { v, reason: "algebraic family is singular at 0" });
                }
                MotilityValues {
                    gamma: sigma1 / v.powf(*lambda1),
                    dgamma: -sigma1 * lambda1 / v.powf(lambda1 + 1.0),
                    phi: sigma2 / v.powf(*lambda2),
                    dphi: -sigma2 * lambda2 / v.powf(lambda2 + 1.0),
                }
            }
            Family::KsAlgebraic { sigma, lambda, alpha } => {
                if v == 0.0 {
                    return Err(Error::MotilityDomain { v, reason: "algebraic family is singular at 0" });
                }
                let dgamma = -sigma * lambda / v.powf(lambda + 1.0);
                MotilityValues {
                    gamma: sigma / v.powf(*lambda),
                    dgamma,
                    phi: (alpha - 1.0) * dgamma,
                    dphi: (alpha - 1.0) * sigma * lambda * (lambda + 1.0) / v.powf(lambda + 2.0),
                }
            }
            Family::Exponential { chi1, chi2, delta } => MotilityValues {
                gamma: (-chi1 * v).exp(),
                dgamma: -chi1 * (-chi1 * v).exp(),
                phi: delta * (-chi2 * v).exp(),
                dphi: -delta * chi2 * (-chi2 * v).exp(),
            },
            Family::KsExponential { chi, alpha } => {
                let g = (-chi * v).exp();
                MotilityValues {
                    gamma: g,
                    dgamma: -chi * g,
                    phi: (1.0 - alpha) * chi * g,
                    dphi: -(1.0 - alpha) * chi * chi * g,
                }
            }
            Family::Custom { gamma, dgamma, phi, dphi } => {
                let vals = MotilityValues {
                    gamma: gamma(v),
                    dgamma: dgamma(v),
                    phi: phi(v),
                    dphi: dphi(v),
                };
                if ![vals.gamma, vals.dgamma, vals.phi, vals.dphi].iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("custom motility evaluation"));
                }
                if vals.gamma <= 0.0 {
                    return Err(Error::MotilityDomain { v, reason: "custom diffusivity not positive" });
                }
                if vals.phi < 0.0 {
                    return Err(Error::MotilityDomain { v, reason: "custom sensitivity negative" });
                }
                vals
            }
        };
        Ok(vals)
    }

    /// Pointwise admissibility functional `gamma |phi'| / phi^2`.
    pub fn h3_functional(&self, v: f64) -> Result<f64> {
        let vals = self.eval(v)?;
        if vals.phi == 0.0 {
            return Err(Error::VanishingSensitivity { v });
        }
        Ok(vals.gamma * vals.dphi.abs() / (vals.phi * vals.phi))
    }

    /// Infimum of the admissibility functional over `[eta, inf)`. Closed form
    /// for the built-in families; `None` asks for the sampling fallback.
    fn h3_infimum_closed_form(&self, eta: f64) -> Option<f64> {
        if let Some((sigma1, sigma2, lambda1, lambda2)) = self.algebraic_params() {
            let coef = sigma1 * lambda2 / sigma2;
            let expo = lambda2 - lambda1 - 1.0;
            return Some(monotone_infimum(coef, expo, eta.max(0.0), |e, x| x.powf(e)));
        }
        if let Some((chi1, chi2, delta)) = self.exponential_params() {
            let coef = chi2 / delta;
            let expo = chi2 - chi1;
            return Some(monotone_infimum(coef, expo, eta.max(0.0), |e, x| (e * x).exp()));
        }
        None
    }
}

/// Infimum over `[eta, inf)` of `coef * g(expo, v)` where `g` is increasing in
/// `v` for positive exponents and decreasing for negative ones.
fn monotone_infimum(coef: f64, expo: f64, eta: f64, g: impl Fn(f64, f64) -> f64) -> f64 {
    if expo > 0.0 {
        coef * g(expo, eta)
    } else if expo == 0.0 {
        coef
    } else {
        // decreasing toward zero at infinity
        0.0
    }
}

/// Lower signal bound used by the analytic checks, tagged with where it came
/// from: chosen by the user or measured as the running minimum of a computed
/// signal trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Eta {
    pub value: f64,
    pub mode: EtaMode,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    UserSupplied,
    Measured,
}

impl Eta {
    pub fn user(value: f64) -> Eta {
        Eta { value, mode: EtaMode::UserSupplied }
    }

    pub fn measured(value: f64) -> Eta {
        Eta { value, mode: EtaMode::Measured }
    }
}

/// One analytic condition: whether it applies to the family at hand, whether
/// it holds, and the two sides of the decisive inequality where available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub applicable: bool,
    pub pass: bool,
    pub witness_lhs: Option<f64>,
    pub witness_rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl Condition {
    fn not_applicable(name: &str, note: Option<&str>) -> Condition {
        Condition {
            name: name.into(),
            applicable: false,
            pass: false,
            witness_lhs: None,
            witness_rhs: None,
            note: note.map(Into::into),
        }
    }
}

/// Outcome of all analytic checks for one parameter point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub family: String,
    pub n: u32,
    pub eta: f64,
    pub eta_mode: EtaMode,
    pub d: f64,
    pub m: f64,
    /// Infimum of `gamma |phi'| / phi^2` over `[eta, inf)`.
    pub h3_inf: f64,
    /// Same infimum taken from zero signal level, reported for comparison.
    pub h3_inf_from_zero: f64,
    pub h3_method: String,
    /// `p` exponents for which the sensitivity inverse-moment machinery
    /// applies: `(n/2, h3_inf]`, or `None` when that interval is empty.
    pub admissible_p_range: Option<(f64, f64)>,
    pub h1: Condition,
    pub h2a: Condition,
    pub h2b: Condition,
    pub h3: Condition,
    pub thm22_con1: Condition,
    pub thm22_con2: Condition,
    pub thm23_i: Condition,
    pub thm23_ii: Condition,
}

impl HypothesisReport {
    pub fn conditions(&self) -> [&Condition; 8] {
        [
            &self.h1,
            &self.h2a,
            &self.h2b,
            &self.h3,
            &self.thm22_con1,
            &self.thm22_con2,
            &self.thm23_i,
            &self.thm23_ii,
        ]
    }

    /// True when every applicable condition holds.
    pub fn all_applicable_pass(&self) -> bool {
        self.conditions().iter().all(|c| !c.applicable || c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Sampling resolution for custom pairs.
const SAMPLE_COUNT: usize = 4096;
/// Upper end of the sampled signal range for custom pairs.
const SAMPLE_V_MAX: f64 = 1e3;

/// Evaluate all analytic conditions for `pair` at dimension `n`, signal floor
/// `eta`, diffusion constant `d` and mass `m`.
pub fn check_hypotheses(
    pair: &MotilityPair,
    n: u32,
    eta: Eta,
    d: f64,
    m: f64,
) -> Result<HypothesisReport> {
    if n == 0 {
        return Err(Error::InvalidConfig("dimension n must be at least 1".into()));
    }
    if !(eta.value.is_finite() && eta.value >= 0.0) {
        return Err(Error::InvalidConfig(format!("eta = {} must be finite and nonnegative", eta.value)));
    }
    if !(d.is_finite() && d > 0.0) || !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidConfig("d and m must be positive".into()));
    }
    let half_n = n as f64 / 2.0;
    let eta_v = eta.value;

    // pointwise probe used for witnesses; the algebraic families cannot be
    // probed at zero, fall back to the sampling floor there
    let probe = if pair.singular_at_zero() && eta_v == 0.0 { sample_floor(eta_v) } else { eta_v };

    let (h1, h2a) = match &pair.family {
        Family::Custom { .. } => sampled_sign_conditions(pair, eta_v),
        _ => {
            // family constraints give gamma > 0, phi > 0, phi' < 0 analytically
            let at = pair.eval(probe)?;
            (
                Condition {
                    name: "h1".into(),
                    applicable: true,
                    pass: true,
                    witness_lhs: Some(at.gamma),
                    witness_rhs: Some(0.0),
                    note: None,
                },
                Condition {
                    name: "h2a".into(),
                    applicable: true,
                    pass: true,
                    witness_lhs: Some(at.dphi),
                    witness_rhs: Some(0.0),
                    note: None,
                },
            )
        }
    };

    let h2b = if n <= 3 {
        Condition::not_applicable("h2b", Some("only required for n > 3"))
    } else {
        match &pair.family {
            Family::Custom { .. } => Condition::not_applicable(
                "h2b",
                Some("custom pair: tail growth of v*phi(v) not verified"),
            ),
            // both built-in families have v phi(v) -> 0: lambda2 > 1, chi2 > 0
            _ => Condition {
                name: "h2b".into(),
                applicable: true,
                pass: true,
                witness_lhs: Some(0.0),
                witness_rhs: None,
                note: None,
            },
        }
    };

    let (h3_inf, h3_inf_from_zero, h3_method) = match pair.h3_infimum_closed_form(eta_v) {
        Some(inf) => {
            let from_zero = pair.h3_infimum_closed_form(0.0).unwrap();
            (inf, from_zero, "closed_form")
        }
        None => (
            sampled_h3_infimum(pair, eta_v.max(sample_floor(eta_v))),
            sampled_h3_infimum(pair, sample_floor(0.0)),
            "sampled",
        ),
    };

    let h3 = Condition {
        name: "h3".into(),
        applicable: true,
        pass: h3_inf > half_n,
        witness_lhs: Some(h3_inf),
        witness_rhs: Some(half_n),
        note: (h3_method == "sampled").then(|| "infimum estimated by sampling".into()),
    };

    let admissible_p_range = (h3_inf > half_n).then_some((half_n, h3_inf));

    let thm22_con1 = match pair.algebraic_params() {
        None => Condition::not_applicable("thm22_con1", Some("algebraic families only")),
        Some((sigma1, sigma2, lambda1, lambda2)) => {
            let gap_ok = lambda2 >= lambda1 + 1.0;
            let bound = (lambda2 / (lambda2 - 1.0))
                .min(sigma1 * lambda2 / sigma2 * eta_v.powf(lambda2 - lambda1 - 1.0));
            Condition {
                name: "thm22_con1".into(),
                applicable: true,
                pass: gap_ok && bound > half_n,
                witness_lhs: Some(bound),
                witness_rhs: Some(half_n),
                note: (!gap_ok).then(|| "decay gap lambda2 >= lambda1 + 1 violated".into()),
            }
        }
    };

    let four_pi_d_over_m = 4.0 * std::f64::consts::PI * d / m;
    let thm22_con2 = match pair.exponential_params() {
        None => Condition::not_applicable("thm22_con2", Some("exponential families only")),
        Some((chi1, chi2, delta)) => {
            if n != 2 {
                Condition::not_applicable("thm22_con2", Some("stated for n = 2"))
            } else {
                let lower = n as f64 * delta / 2.0 * ((chi1 - chi2) * eta_v).exp();
                Condition {
                    name: "thm22_con2".into(),
                    applicable: true,
                    pass: chi2 >= chi1 && lower < chi2 && chi2 < four_pi_d_over_m,
                    witness_lhs: Some(lower),
                    witness_rhs: Some(four_pi_d_over_m),
                    note: (chi2 < chi1).then(|| "requires chi2 >= chi1".into()),
                }
            }
        }
    };

    let thm23_i = match pair.family {
        Family::KsAlgebraic { lambda, alpha, .. } => {
            let denom = if alpha >= 0.0 { n as f64 - 2.0 } else { n as f64 * (1.0 - alpha) - 2.0 };
            let bound = (denom > 0.0).then(|| 2.0 / denom);
            Condition {
                name: "thm23_i".into(),
                applicable: true,
                pass: lambda > 0.0 && bound.is_none_or(|b| lambda < b),
                witness_lhs: Some(lambda),
                witness_rhs: bound,
                note: bound.is_none().then(|| "no upper bound on lambda at this n, alpha".into()),
            }
        }
        _ => Condition::not_applicable("thm23_i", Some("constrained algebraic family only")),
    };

    let thm23_ii = match pair.family {
        Family::KsExponential { chi, alpha } => {
            if n != 2 {
                Condition::not_applicable("thm23_ii", Some("stated for n = 2"))
            } else {
                Condition {
                    name: "thm23_ii".into(),
                    applicable: true,
                    pass: chi < four_pi_d_over_m && alpha > 0.0 && alpha < 1.0,
                    witness_lhs: Some(chi),
                    witness_rhs: Some(four_pi_d_over_m),
                    note: (alpha <= 0.0).then(|| "requires 0 < alpha < 1".into()),
                }
            }
        }
        _ => Condition::not_applicable("thm23_ii", Some("constrained exponential family only")),
    };

    Ok(HypothesisReport {
        family: pair.family_name().into(),
        n,
        eta: eta_v,
        eta_mode: eta.mode,
        d,
        m,
        h3_inf,
        h3_inf_from_zero,
        h3_method: h3_method.into(),
        admissible_p_range,
        h1,
        h2a,
        h2b,
        h3,
        thm22_con1,
        thm22_con2,
        thm23_i,
        thm23_ii,
    })
}

fn sample_floor(eta: f64) -> f64 {
    if eta > 0.0 {
        eta
    } else {
        1e-6
    }
}

fn sample_points(lo: f64) -> impl Iterator<Item = f64> {
    // geometric sweep: custom pairs are usually power- or exponential-like
    let ratio = (SAMPLE_V_MAX / lo).powf(1.0 / (SAMPLE_COUNT - 1) as f64);
    (0..SAMPLE_COUNT).map(move |i| lo * ratio.powi(i as i32))
}

fn sampled_sign_conditions(pair: &MotilityPair, eta: f64) -> (Condition, Condition) {
    let lo = sample_floor(eta);
    let mut min_gamma = f64::INFINITY;
    let mut max_dphi = f64::NEG_INFINITY;
    let mut min_phi = f64::INFINITY;
    let mut ok = true;
    for v in sample_points(lo) {
        match pair.eval(v) {
            Ok(vals) => {
                min_gamma = min_gamma.min(vals.gamma);
                max_dphi = max_dphi.max(vals.dphi);
                min_phi = min_phi.min(vals.phi);
            }
            Err(_) => ok = false,
        }
    }
    let h1 = Condition {
        name: "h1".into(),
        applicable: true,
        pass: ok && min_gamma > 0.0,
        witness_lhs: min_gamma.is_finite().then_some(min_gamma),
        witness_rhs: Some(0.0),
        note: Some("verified by sampling".into()),
    };
    let h2a = Condition {
        name: "h2a".into(),
        applicable: true,
        // strict decrease; -0.0 counts (exp tails underflow to negative zero)
        pass: ok && min_phi >= 0.0 && (max_dphi < 0.0 || (max_dphi == 0.0 && max_dphi.is_sign_negative())),
        witness_lhs: max_dphi.is_finite().then_some(max_dphi),
        witness_rhs: Some(0.0),
        note: Some("verified by sampling".into()),
    };
    (h1, h2a)
}

fn sampled_h3_infimum(pair: &MotilityPair, lo: f64) -> f64 {
    let mut inf = f64::INFINITY;
    for v in sample_points(lo) {
        if let Ok(val) = pair.h3_functional(v) {
            inf = inf.min(val);
        }
    }
    inf
}

/// Integral of `phi(v)^(-p)` over the field's domain. Fails if the
/// sensitivity vanishes anywhere on the field.
pub fn phi_inverse_moment(pair: &MotilityPair, v: &Field, p: f64) -> Result<f64> {
    if !p.is_finite() || p < 0.0 {
        return Err(Error::InvalidConfig(format!("moment exponent p = {p} must be nonnegative")));
    }
    if p == 0.0 {
        return Ok(v.grid().measure());
    }
    let mut total = 0.0;
    for (vi, w) in v.values().iter().zip(v.grid().weights()) {
        let vals = pair.eval(*vi)?;
        if vals.phi == 0.0 {
            return Err(Error::VanishingSensitivity { v: *vi });
        }
        total += vals.phi.powf(-p) * w;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    #[test]
    fn algebraic_closed_form_values() {
        let pair = MotilityPair::algebraic(1.0, 1.0, 1.0, 2.0).unwrap();
        let vals = pair.eval(2.0).unwrap();
        assert_eq!(vals.gamma, 0.5);
        assert_eq!(vals.dgamma, -0.25);
        assert_eq!(vals.phi, 0.25);
        assert_eq!(vals.dphi, -0.25);
    }

    #[test]
    fn exponential_closed_form_values() {
        let pair = MotilityPair::exponential(1.0, 1.0, 2.0).unwrap();
        let vals = pair.eval(0.0).unwrap();
        assert_eq!(vals.gamma, 1.0);
        assert_eq!(vals.dgamma, -1.0);
        assert_eq!(vals.phi, 2.0);
        assert_eq!(vals.dphi, -2.0);
    }

    #[test]
    fn constrained_exponential_at_zero() {
        let pair = MotilityPair::ks_exponential(1.0, 0.0).unwrap();
        let vals = pair.eval(0.0).unwrap();
        assert_eq!(vals.gamma, 1.0);
        assert_eq!(vals.phi, 1.0);
        assert_eq!(vals.dphi, -1.0);
    }

    #[test]
    fn domain_errors() {
        let alg = MotilityPair::ks_algebraic(1.0, 2.0, 0.5).unwrap();
        assert!(alg.eval(0.0).is_err());
        assert!(alg.eval(-1.0).is_err());
        let exp = MotilityPair::ks_exponential(1.0, 0.5).unwrap();
        assert!(exp.eval(0.0).is_ok());
        assert!(exp.eval(f64::NAN).is_err());
    }

    #[test]
    fn constructor_constraints() {
        assert!(MotilityPair::algebraic(1.0, 1.0, 1.0, 1.0).is_err()); // lambda2 must exceed 1
        assert!(MotilityPair::algebraic(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(MotilityPair::ks_algebraic(1.0, 1.0, 1.0).is_err()); // alpha < 1 strict
        assert!(MotilityPair::ks_exponential(-2.0, 0.0).is_err());
    }

    #[test]
    fn h3_functional_closed_forms() {
        // algebraic: (sigma1 lambda2 / sigma2) v^(lambda2 - lambda1 - 1)
        let pair = MotilityPair::algebraic(1.0, 1.0, 1.0, 3.0).unwrap();
        assert!((pair.h3_functional(2.0).unwrap() - 6.0).abs() < 1e-12);
        // constrained exponential: constant 1/(1 - alpha)
        let pair = MotilityPair::ks_exponential(3.0, 0.5).unwrap();
        assert!((pair.h3_functional(1.7).unwrap() - 2.0).abs() < 1e-12);
        // free exponential: (chi2/delta) exp((chi2 - chi1) v)
        let pair = MotilityPair::exponential(1.0, 2.0, 4.0).unwrap();
        let v = 0.3f64;
        let expect = 0.5 * v.exp();
        assert!((pair.h3_functional(v).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let pairs = vec![
            MotilityPair::algebraic(0.7, 1.3, 1.5, 2.5).unwrap(),
            MotilityPair::exponential(0.8, 1.2, 0.6).unwrap(),
            MotilityPair::ks_algebraic(1.1, 2.0, -0.5).unwrap(),
            MotilityPair::ks_exponential(1.4, 0.3).unwrap(),
        ];
        for pair in &pairs {
            for i in 0..10 {
                let v = 0.4 + 0.37 * i as f64;
                let eps = 1e-6 * v.max(1.0);
                let plus = pair.eval(v + eps).unwrap();
                let minus = pair.eval(v - eps).unwrap();
                let at = pair.eval(v).unwrap();
                let fd_g = (plus.gamma - minus.gamma) / (2.0 * eps);
                let fd_p = (plus.phi - minus.phi) / (2.0 * eps);
                assert!(
                    (fd_g - at.dgamma).abs() <= 1e-7 * at.dgamma.abs().max(1.0),
                    "{pair:?} dgamma at {v}"
                );
                assert!(
                    (fd_p - at.dphi).abs() <= 1e-7 * at.dphi.abs().max(1.0),
                    "{pair:?} dphi at {v}"
                );
            }
        }
    }

    #[test]
    fn worked_condition_examples() {
        // free algebraic pair with unit parameters at n = 2
        let pair = MotilityPair::algebraic(1.0, 1.0, 1.0, 2.0).unwrap();
        let rep = check_hypotheses(&pair, 2, Eta::user(1.0), 1.0, 1.0).unwrap();
        assert!(rep.thm22_con1.applicable && rep.thm22_con1.pass);
        assert!((rep.thm22_con1.witness_lhs.unwrap() - 2.0).abs() < 1e-12);
        assert!(!rep.thm22_con2.applicable);
        assert!((rep.h3_inf - 2.0).abs() < 1e-12);
        assert_eq!(rep.admissible_p_range, Some((1.0, rep.h3_inf)));

        // free exponential pair inside the mass window
        let pair = MotilityPair::exponential(1.0, 1.0, 0.5).unwrap();
        let rep = check_hypotheses(&pair, 2, Eta::user(1.0), 1.0, 4.0).unwrap();
        assert!(rep.thm22_con2.applicable && rep.thm22_con2.pass);
        assert!((rep.thm22_con2.witness_lhs.unwrap() - 0.5).abs() < 1e-12);
        assert!((rep.thm22_con2.witness_rhs.unwrap() - std::f64::consts::PI).abs() < 1e-12);

        // constrained algebraic growth bound at n = 3, alpha = 0
        let fail = MotilityPair::ks_algebraic(1.0, 2.5, 0.0).unwrap();
        let rep = check_hypotheses(&fail, 3, Eta::user(1.0), 1.0, 1.0).unwrap();
        assert!(rep.thm23_i.applicable && !rep.thm23_i.pass);
        let pass = MotilityPair::ks_algebraic(1.0, 1.5, 0.0).unwrap();
        let rep = check_hypotheses(&pass, 3, Eta::user(1.0), 1.0, 1.0).unwrap();
        assert!(rep.thm23_i.applicable && rep.thm23_i.pass);
    }

    #[test]
    fn h3_infimum_range_split() {
        // growing functional: infimum at eta, zero from zero level
        let pair = MotilityPair::algebraic(1.0, 1.0, 1.0, 3.0).unwrap();
        let rep = check_hypotheses(&pair, 2, Eta::user(2.0), 1.0, 1.0).unwrap();
        assert!((rep.h3_inf - 6.0).abs() < 1e-12);
        assert_eq!(rep.h3_inf_from_zero, 0.0);
        // falling functional: infimum vanishes at infinity regardless of eta
        let pair = MotilityPair::algebraic(1.0, 1.0, 3.0, 2.0).unwrap();
        let rep = check_hypotheses(&pair, 2, Eta::user(2.0), 1.0, 1.0).unwrap();
        assert_eq!(rep.h3_inf, 0.0);
        assert!(!rep.h3.pass);
        assert!(rep.admissible_p_range.is_none());
    }

    #[test]
    fn eta_monotonicity_for_growing_functionals() {
        let pair = MotilityPair::ks_algebraic(1.0, 2.0, 0.0).unwrap();
        let mut last = -1.0;
        for eta in [0.5, 1.0, 2.0, 4.0] {
            let rep = check_hypotheses(&pair, 2, Eta::user(eta), 1.0, 1.0).unwrap();
            assert!(rep.h3_inf >= last);
            last = rep.h3_inf;
        }
    }

    #[test]
    fn custom_pair_sampled_checks() {
        // gamma = 1, phi = exp(-v): functional is exp(v), infimum at eta
        let pair = MotilityPair::custom(
            |_| 1.0,
            |_| 0.0,
            |v| (-v).exp(),
            |v| -(-v).exp(),
        );
        let rep = check_hypotheses(&pair, 2, Eta::user(1.0), 1.0, 1.0).unwrap();
        assert_eq!(rep.h3_method, "sampled");
        assert!(rep.h1.pass && rep.h2a.pass);
        assert!((rep.h3_inf - 1.0f64.exp()).abs() < 1e-2);
        assert!(rep.h3.pass);
        assert!(!rep.thm22_con1.applicable && !rep.thm22_con2.applicable);
    }

    #[test]
    fn report_json_round_trip() {
        let pair = MotilityPair::ks_exponential(1.0, 0.5).unwrap();
        let rep = check_hypotheses(&pair, 2, Eta::user(0.5), 1.0, 2.0).unwrap();
        let json = rep.to_json();
        for key in ["\"h1\"", "\"thm23_ii\"", "witness_lhs", "witness_rhs", "applicable"] {
            assert!(json.contains(key), "missing {key}");
        }
        let back: HypothesisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.family, "ks_exponential");
        assert_eq!(back.eta_mode, EtaMode::UserSupplied);
        assert_eq!(back.conditions().len(), 8);
    }

    #[test]
    fn inverse_moment_closed_forms() {
        let g = Grid::interval(1.0, 16).unwrap();
        let pair = MotilityPair::exponential(1.0, 1.0, 1.0).unwrap();
        let c = 1.3;
        let v = Field::constant(&g, c).unwrap();
        let expect = (2.0 * c).exp();
        assert!((phi_inverse_moment(&pair, &v, 2.0).unwrap() - expect).abs() < 1e-12 * expect);

        let pair = MotilityPair::algebraic(1.0, 1.0, 1.0, 2.0).unwrap();
        let v = Field::constant(&g, 2.0).unwrap();
        assert!((phi_inverse_moment(&pair, &v, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((phi_inverse_moment(&pair, &v, 0.0).unwrap() - 1.0).abs() < 1e-15);

        let zero_phi = MotilityPair::custom(|_| 1.0, |_| 0.0, |_| 0.0, |_| 0.0);
        assert!(phi_inverse_moment(&zero_phi, &v, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn constrained_families_tie_sensitivity_to_diffusivity(
            sigma in 0.1f64..5.0,
            lambda in 0.2f64..4.0,
            alpha in -2.0f64..0.99,
            v in 0.05f64..50.0,
        ) {
            let pair = MotilityPair::ks_algebraic(sigma, lambda, alpha).unwrap();
            let vals = pair.eval(v).unwrap();
            let tied = (1.0 - alpha) * vals.dgamma.abs();
            prop_assert!((vals.phi - tied).abs() <= 1e-12 * tied.max(1e-300));

            let pair = MotilityPair::ks_exponential(lambda, alpha).unwrap();
            let vals = pair.eval(v).unwrap();
            let tied = (1.0 - alpha) * vals.dgamma.abs();
            prop_assert!((vals.phi - tied).abs() <= 1e-12 * tied.max(1e-300));
        }

        #[test]
        fn pointwise_functional_matches_closed_form(
            sigma1 in 0.1f64..3.0,
            sigma2 in 0.1f64..3.0,
            lambda1 in 0.2f64..3.0,
            lambda2 in 1.05f64..4.0,
            v in 0.1f64..20.0,
        ) {
            let pair = MotilityPair::algebraic(sigma1, sigma2, lambda1, lambda2).unwrap();
            let direct = pair.h3_functional(v).unwrap();
            let closed = sigma1 * lambda2 / sigma2 * v.powf(lambda2 - lambda1 - 1.0);
            prop_assert!((direct - closed).abs() <= 1e-9 * closed.max(1e-12));
        }
    }
}
