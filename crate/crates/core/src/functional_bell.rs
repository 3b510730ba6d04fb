//! Closed-form Bell observables for the functional-moment inequality.
//!
//! With `f = g` odd and orthogonal angles, the split-`r` GHZ state under loss
//! `eta` and dephasing `p` gives
//!
//! ```text
//! LHS = (p^2 / 4) eta^N (2/pi)^N (I+)^{2N}
//! RHS = (1/2) (2/pi)^{N/2} 2^{-N} [ I0^r C^{N-r} + C^r I0^{N-r} ],   C = eta I + (1 - eta) I0
//! ```
//!
//! For `r = N/2` the ratio collapses to `2^{N-2} [2 (I+)^4 eta^2 / (pi I0 C)]^{N/2}`
//! (times the purity factor); for odd `N` with `r = (N-1)/2` it picks up the
//! extra factor `2 sqrt(I0 C) / (I0 + C)`.
//!
//! The optimal local function is `x / (1 + eps x^2)`. Three rules for choosing
//! `eps` are provided, see [`EpsilonRule`]; the default is the exact stationary
//! point, which is what the oracle's free maximisation finds.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{MeasurementFunction, StateSpec};
use crate::oracle::{BellResult, InequalityId};
use crate::quadrature::{kernel_integrals, optimal_kernel_integrals, KernelIntegrals, QuadratureRule};

pub const DAMPING: f64 = 0.5;
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 10_000;
const START: f64 = 1.0;

/// Two readings of the odd-N lossy update, which differ only in the power of
/// the `eps(eta) / eps` factor in the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OddLossyReading {
    /// `eps'(eta) = e (N e+ - e em/eN) / (N e+ + e^2 em / eN^2)` with `e = eps(eta)`.
    AsPrinted,
    /// Same factor `e em / eN` in numerator and denominator.
    UniformPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpsilonRule {
    /// Exact stationary point of the ratio for the given `(N, r, eta)`.
    SelfConsistent,
    /// Ideal fixed point mapped through `eps(eta) = 2 eta eps / (2 eta + (1 - eta) eps)`
    /// (and the odd-N update for odd `N`).
    PrintedMapping(OddLossyReading),
    /// The function stays at the ideal-detector optimum regardless of loss.
    IdealFunction,
}

/// How purity enters the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PurityScaling {
    /// `p |psi><psi| + (1-p) rho_mix`: the coherence, hence `sqrt(LHS)`, is linear in `p`.
    Mixture,
    /// Per-mode exponent `p^N`: each mode dephases independently.
    PerModePrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormOptions {
    pub epsilon_rule: EpsilonRule,
    pub purity: PurityScaling,
}

impl Default for ClosedFormOptions {
    fn default() -> Self {
        Self {
            epsilon_rule: EpsilonRule::SelfConsistent,
            purity: PurityScaling::Mixture,
        }
    }
}

impl PurityScaling {
    /// Natural log of the purity factor multiplying the ratio.
    pub fn log_factor(self, n: usize, p: f64) -> f64 {
        match self {
            Self::Mixture => 2.0 * p.ln(),
            Self::PerModePrinted => n as f64 * p.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonSolution {
    /// Solution of `eps = 4 I0 / I` (for odd `N`: the inner value at the odd optimum).
    pub epsilon_ideal: f64,
    /// `eps(eta) = 2 eta eps / (2 eta + (1 - eta) eps)`.
    pub epsilon_lossy: f64,
    /// Odd-N parameter `eps'`, loss-mapped when `eta < 1`.
    pub epsilon_odd: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped iteration `x <- (1 - a) x + a T(x)` until `|dx| < tol`.
fn damped_fixed_point(mut map: impl FnMut(f64) -> f64) -> Result<(f64, usize)> {
    let mut x = START;
    for it in 1..=MAX_ITERATIONS {
        let next = (1.0 - DAMPING) * x + DAMPING * map(x);
        if !next.is_finite() || next <= 0.0 {
            return Err(Error::Convergence {
                iterations: it,
                residual: f64::NAN,
            });
        }
        let step = (next - x).abs();
        x = next;
        if step < FIXED_POINT_TOL {
            return Ok((x, it));
        }
    }
    Err(Error::Convergence {
        iterations: MAX_ITERATIONS,
        residual: (map(x) - x).abs(),
    })
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return invalid(format!("efficiency {eta} outside (0, 1]"));
    }
    Ok(())
}

/// `eps(eta) = 2 eta eps / (2 eta + (1 - eta) eps)`.
pub fn loss_mapped_epsilon(eps: f64, eta: f64) -> f64 {
    2.0 * eta * eps / (2.0 * eta + (1.0 - eta) * eps)
}

/// Odd-N bracket `e (N(e+4) - (e-4)) / (N(e+4) + (e-4))`.
pub fn odd_bracket(n: usize, eps: f64) -> f64 {
    let nf = n as f64;
    eps * (nf * (eps + 4.0) - (eps - 4.0)) / (nf * (eps + 4.0) + (eps - 4.0))
}

/// Solves the ideal fixed point `eps = 4 I0(eps) / I(eps)` and maps it to `eps(eta)`.
pub fn solve_epsilon_even(eta: f64, rule: &QuadratureRule) -> Result<EpsilonSolution> {
    check_eta(eta)?;
    let (eps, iterations) = damped_fixed_point(|e| optimal_kernel_integrals(e, rule).epsilon_ratio())?;
    let residual = (eps - optimal_kernel_integrals(eps, rule).epsilon_ratio()).abs();
    Ok(EpsilonSolution {
        epsilon_ideal: eps,
        epsilon_lossy: loss_mapped_epsilon(eps, eta),
        epsilon_odd: None,
        residual,
        iterations,
    })
}

/// Odd-N optimum: `eps' = bracket_N(4 I0(eps') / I(eps'))`, then the lossy update
/// under the chosen reading.
pub fn solve_epsilon_odd(
    n: usize,
    eta: f64,
    rule: &QuadratureRule,
    reading: OddLossyReading,
) -> Result<EpsilonSolution> {
    if n < 3 || n.is_multiple_of(2) {
        return invalid(format!("odd-N solver needs odd N >= 3, got {n}"));
    }
    check_eta(eta)?;
    let inner = |e: f64| optimal_kernel_integrals(e, rule).epsilon_ratio();
    let (eps_odd, iterations) = damped_fixed_point(|e| odd_bracket(n, inner(e)))?;
    let residual = (eps_odd - odd_bracket(n, inner(eps_odd))).abs();
    let eps_n = inner(eps_odd);
    let eps_eta = loss_mapped_epsilon(eps_n, eta);
    let nf = n as f64;
    let plus = eps_eta + 4.0;
    let minus = eps_n - 4.0;
    let ratio = eps_eta / eps_n;
    let odd_lossy = match reading {
        OddLossyReading::AsPrinted => eps_eta * (nf * plus - ratio * minus) / (nf * plus + ratio * ratio * minus),
        OddLossyReading::UniformPower => eps_eta * (nf * plus - ratio * minus) / (nf * plus + ratio * minus),
    };
    Ok(EpsilonSolution {
        epsilon_ideal: eps_n,
        epsilon_lossy: eps_eta,
        epsilon_odd: Some(odd_lossy),
        residual,
        iterations,
    })
}

/// Log-safe weights `(alpha, beta)` of the two branch terms in
/// `D = I0^r C^{N-r} + C^r I0^{N-r}`: `d ln D = alpha d ln I0 + beta d ln C`.
fn branch_weights(n: usize, r: usize, i_zero: f64, c: f64) -> (f64, f64) {
    let nf = n as f64;
    let rf = r as f64;
    // T2 / T1 = (C / I0)^{2r - N}
    let log_ratio = (2.0 * rf - nf) * (c / i_zero).ln();
    let w2 = 1.0 / (1.0 + (-log_ratio).exp());
    let w1 = 1.0 - w2;
    let alpha = rf * w1 + (nf - rf) * w2;
    let beta = (nf - rf) * w1 + rf * w2;
    (alpha, beta)
}

/// Right-hand side of the exact stationarity condition for `x / (1 + eps x^2)`:
/// `eps = 4 beta eta I0 / (alpha C + beta (1 - eta) I0)`.
pub fn stationary_map(n: usize, r: usize, eta: f64, k: &KernelIntegrals) -> f64 {
    let c = k.loss_mixed(eta);
    let (alpha, beta) = branch_weights(n, r, k.i_zero, c);
    4.0 * beta * eta * k.i_zero / (alpha * c + beta * (1.0 - eta) * k.i_zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryPoint {
    pub epsilon: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Exact optimum of the optimal family for any split and efficiency.
pub fn solve_epsilon_exact(n: usize, r: usize, eta: f64, rule: &QuadratureRule) -> Result<StationaryPoint> {
    check_eta(eta)?;
    if n == 0 || r > n {
        return invalid(format!("invalid split r = {r} for N = {n}"));
    }
    let map = |e: f64| stationary_map(n, r, eta, &optimal_kernel_integrals(e, rule));
    let (epsilon, iterations) = damped_fixed_point(map)?;
    Ok(StationaryPoint {
        epsilon,
        residual: (epsilon - map(epsilon)).abs(),
        iterations,
    })
}

/// `ln LHS` and `ln RHS` for `f = g` with kernel integrals `k`, any split `r`.
pub fn log_sides(n: usize, r: usize, eta: f64, p: f64, purity: PurityScaling, k: &KernelIntegrals) -> (f64, f64) {
    let nf = n as f64;
    let rf = r as f64;
    let c = k.loss_mixed(eta);
    let log_lhs = purity.log_factor(n, p) - 4f64.ln() + nf * eta.ln() + nf * (2.0 / PI).ln() + 2.0 * nf * k.i_plus.ln();
    let t1 = rf * k.i_zero.ln() + (nf - rf) * c.ln();
    let t2 = rf * c.ln() + (nf - rf) * k.i_zero.ln();
    let hi = t1.max(t2);
    let log_d = hi + ((t1 - hi).exp() + (t2 - hi).exp()).ln();
    let log_rhs = -(2f64.ln()) + 0.5 * nf * (2.0 / PI).ln() - nf * 2f64.ln() + log_d;
    (log_lhs, log_rhs)
}

/// Even-N ratio: `2^{N-2} [2 (I+)^4 eta^2 / (pi I0 C)]^{N/2}` times the purity factor.
pub fn even_log_ratio(n: usize, eta: f64, p: f64, purity: PurityScaling, k: &KernelIntegrals) -> f64 {
    let nf = n as f64;
    let c = k.loss_mixed(eta);
    (nf - 2.0) * 2f64.ln()
        + 0.5 * nf * (2.0 * k.i_plus.powi(4) * eta * eta / (PI * k.i_zero * c)).ln()
        + purity.log_factor(n, p)
}

/// Odd-N ratio: `2 sqrt(I0 C) / (I0 + C)` times the even expression.
pub fn odd_log_ratio(n: usize, eta: f64, p: f64, purity: PurityScaling, k: &KernelIntegrals) -> f64 {
    let c = k.loss_mixed(eta);
    (2.0 * (k.i_zero * c).sqrt() / (k.i_zero + c)).ln() + even_log_ratio(n, eta, p, purity, k)
}

fn result_from_logs(log_lhs: f64, log_ratio: f64, inequality: InequalityId, function_id: String) -> BellResult {
    let lhs = log_lhs.exp();
    let ratio = log_ratio.exp();
    let rhs = (log_lhs - log_ratio).exp();
    BellResult {
        lhs,
        rhs,
        ratio,
        inequality,
        function_id,
        angles: None,
    }
}

/// Closed-form ratio for `f = g = x/(1+eps x^2)` at any split; matches the
/// oracle at the orthogonal angles for every `eps`.
pub fn ratio_at_epsilon(
    spec: &StateSpec,
    epsilon: f64,
    purity: PurityScaling,
    rule: &QuadratureRule,
) -> Result<BellResult> {
    spec.validate()?;
    let f = MeasurementFunction::optimal(epsilon)?;
    let k = kernel_integrals(&f, rule)?;
    let (ll, lr) = log_sides(spec.n_modes, spec.r_split, spec.efficiency, spec.purity, purity, &k);
    Ok(result_from_logs(ll, ll - lr, InequalityId::Functional, f.id()))
}

fn check_balanced(spec: &StateSpec) -> Result<()> {
    if spec.r_split != spec.n_modes / 2 {
        return invalid(format!(
            "closed forms cover r = floor(N/2) only (got r = {} for N = {}); use the oracle",
            spec.r_split, spec.n_modes
        ));
    }
    Ok(())
}

/// Parameter of the optimal function under `rule` for a balanced spec.
pub fn optimal_epsilon(spec: &StateSpec, rule: &QuadratureRule, epsilon_rule: EpsilonRule) -> Result<f64> {
    spec.validate()?;
    let n = spec.n_modes;
    let eta = spec.efficiency;
    let odd = n % 2 == 1;
    if odd && n < 3 {
        return invalid("the optimal-function closed forms need N >= 2");
    }
    match epsilon_rule {
        EpsilonRule::SelfConsistent => Ok(solve_epsilon_exact(n, spec.r_split, eta, rule)?.epsilon),
        EpsilonRule::PrintedMapping(reading) if odd => Ok(solve_epsilon_odd(n, eta, rule, reading)?
            .epsilon_odd
            .expect("odd solution carries eps'")),
        EpsilonRule::PrintedMapping(_) => Ok(solve_epsilon_even(eta, rule)?.epsilon_lossy),
        EpsilonRule::IdealFunction if odd => Ok(solve_epsilon_odd(n, 1.0, rule, OddLossyReading::AsPrinted)?
            .epsilon_odd
            .expect("odd solution carries eps'")),
        EpsilonRule::IdealFunction => Ok(solve_epsilon_even(1.0, rule)?.epsilon_ideal),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalValue {
    pub epsilon: f64,
    pub kernel: KernelIntegrals,
    pub result: BellResult,
}

/// Closed-form value of the optimal functional inequality for a balanced split,
/// with explicit options.
pub fn bell_value_with(
    spec: &StateSpec,
    rule: &QuadratureRule,
    options: &ClosedFormOptions,
) -> Result<FunctionalValue> {
    check_balanced(spec)?;
    let epsilon = optimal_epsilon(spec, rule, options.epsilon_rule)?;
    bell_value_at(spec, epsilon, rule, options.purity)
}

/// Even/odd closed form evaluated at a given `eps`.
pub fn bell_value_at(
    spec: &StateSpec,
    epsilon: f64,
    rule: &QuadratureRule,
    purity: PurityScaling,
) -> Result<FunctionalValue> {
    check_balanced(spec)?;
    let f = MeasurementFunction::optimal(epsilon)?;
    let k = kernel_integrals(&f, rule)?;
    let n = spec.n_modes;
    let (eta, p) = (spec.efficiency, spec.purity);
    let log_ratio = if n.is_multiple_of(2) {
        even_log_ratio(n, eta, p, purity, &k)
    } else {
        odd_log_ratio(n, eta, p, purity, &k)
    };
    let (log_lhs, _) = log_sides(n, spec.r_split, eta, p, purity, &k);
    Ok(FunctionalValue {
        epsilon,
        kernel: k,
        result: result_from_logs(log_lhs, log_ratio, InequalityId::Functional, f.id()),
    })
}

/// Closed-form `B_N` (even `N`) or `B'_N` (odd `N`) at the exact optimum.
pub fn bell_value(spec: &StateSpec, rule: &QuadratureRule) -> Result<BellResult> {
    Ok(bell_value_with(spec, rule, &ClosedFormOptions::default())?.result)
}

/// The original moment inequality: `f = g = x`, any split.
pub fn cfrd_bell_value_with(spec: &StateSpec, rule: &QuadratureRule, purity: PurityScaling) -> Result<BellResult> {
    spec.validate()?;
    let k = kernel_integrals(&MeasurementFunction::Identity, rule)?;
    let (ll, lr) = log_sides(spec.n_modes, spec.r_split, spec.efficiency, spec.purity, purity, &k);
    Ok(result_from_logs(ll, ll - lr, InequalityId::Cfrd, "identity".into()))
}

pub fn cfrd_bell_value(spec: &StateSpec, rule: &QuadratureRule) -> Result<BellResult> {
    cfrd_bell_value_with(spec, rule, PurityScaling::Mixture)
}

/// Outcome of comparing the two odd-N lossy readings with the oracle optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OddReadingVerdict {
    pub n_modes: usize,
    pub efficiency: f64,
    pub oracle_epsilon: f64,
    pub oracle_ratio: f64,
    pub as_printed_epsilon: f64,
    pub as_printed_ratio: f64,
    pub uniform_epsilon: f64,
    pub uniform_ratio: f64,
    pub chosen: OddLossyReading,
}

/// Decides between the two odd-N readings: the one whose ratio lies closer to
/// the oracle's free maximum over `eps` wins.
pub fn adjudicate_odd_reading(n: usize, eta: f64, rule: &QuadratureRule) -> Result<OddReadingVerdict> {
    let spec = StateSpec::balanced(n, 1.0, eta)?;
    let (oracle_epsilon, oracle) = crate::oracle::optimize_epsilon_numeric(&spec, rule)?;
    let eval = |reading| -> Result<(f64, f64)> {
        let eps = solve_epsilon_odd(n, eta, rule, reading)?
            .epsilon_odd
            .expect("odd solution carries eps'");
        Ok((
            eps,
            bell_value_at(&spec, eps, rule, PurityScaling::Mixture)?.result.ratio,
        ))
    };
    let (ae, ar) = eval(OddLossyReading::AsPrinted)?;
    let (ue, ur) = eval(OddLossyReading::UniformPower)?;
    let chosen = if (oracle.ratio - ar).abs() <= (oracle.ratio - ur).abs() {
        OddLossyReading::AsPrinted
    } else {
        OddLossyReading::UniformPower
    };
    Ok(OddReadingVerdict {
        n_modes: n,
        efficiency: eta,
        oracle_epsilon,
        oracle_ratio: oracle.ratio,
        as_printed_epsilon: ae,
        as_printed_ratio: ar,
        uniform_epsilon: ue,
        uniform_ratio: ur,
        chosen,
    })
}
