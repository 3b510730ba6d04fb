//! Critical detection efficiency, purity and noise products: the parameter
//! values at which each Bell ratio reaches 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functional_bell::{bell_value_with, cfrd_bell_value_with, ClosedFormOptions, EpsilonRule, PurityScaling};
use crate::mk_binning::{mk_bell_value_with, mk_critical_product};
use crate::model::StateSpec;
use crate::oracle::InequalityId;
use crate::output::{csv_table, fmt_csv};
use crate::quadrature::QuadratureRule;

/// Lower end of the efficiency bracket.
pub const BRACKET_LO: f64 = 0.3;
/// Lower end of the purity bracket; every ratio vanishes at `p = 0`.
pub const PURITY_BRACKET_LO: f64 = 0.0;
/// Bisection stops once the bracket is narrower than this.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Smallest `n_max` accepted by the extrapolations.
pub const MIN_ASYMPTOTIC_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Efficiency,
    Purity,
    Product,
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Efficiency => "efficiency",
            Self::Purity => "purity",
            Self::Product => "product",
        })
    }
}

/// Root of `B = 1`, or the verdict that `B <= 1` everywhere up to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum Critical {
    Value(f64),
    NoViolation,
}

impl Critical {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(v),
            Self::NoViolation => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalOptions {
    pub closed_form: ClosedFormOptions,
    pub tolerance: f64,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self {
            closed_form: ClosedFormOptions::default(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Closed-form Bell ratio of `inequality` for a balanced state
/// (`r = floor(N/2)`; MK does not depend on `r`).
pub fn bell_ratio(
    inequality: InequalityId,
    spec: &StateSpec,
    rule: &QuadratureRule,
    options: &ClosedFormOptions,
) -> Result<f64> {
    match inequality {
        InequalityId::Functional => Ok(bell_value_with(spec, rule, options)?.result.ratio),
        InequalityId::Cfrd => Ok(cfrd_bell_value_with(spec, rule, options.purity)?.ratio),
        InequalityId::Mk => mk_bell_value_with(spec, options.purity),
    }
}

/// Bisection for the root of an increasing `b(x) - 1` on `[floor, 1]`.
fn bisect(mut b: impl FnMut(f64) -> Result<f64>, floor: f64, tolerance: f64) -> Result<Critical> {
    let top = b(1.0)?;
    if top <= 1.0 {
        return Ok(Critical::NoViolation);
    }
    let (mut lo, mut hi) = (floor, 1.0);
    let bottom = b(lo)?;
    if bottom > 1.0 {
        return Err(Error::Internal(format!(
            "Bell ratio {bottom} already exceeds 1 at the bracket floor {lo}; root not bracketed"
        )));
    }
    let (mut b_lo, mut b_hi) = (bottom, top);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let v = b(mid)?;
        if !(b_lo <= v && v <= b_hi) {
            return Err(Error::Internal(format!(
                "Bell ratio not monotone: B({lo}) = {b_lo}, B({mid}) = {v}, B({hi}) = {b_hi}"
            )));
        }
        if v > 1.0 {
            hi = mid;
            b_hi = v;
        } else {
            lo = mid;
            b_lo = v;
        }
    }
    Ok(Critical::Value(0.5 * (lo + hi)))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return invalid(format!("{name} must lie in (0, 1], got {v}"));
    }
    Ok(())
}

/// Exact MK root for the critical efficiency at purity `p`.
fn mk_efficiency_root(n: usize, p: f64, purity: PurityScaling) -> f64 {
    let n = n as f64;
    let base = std::f64::consts::FRAC_PI_4;
    match purity {
        PurityScaling::Mixture => base * (std::f64::consts::SQRT_2 / p).powf(2.0 / n),
        PurityScaling::PerModePrinted => base * 2f64.powf(1.0 / n) / (p * p),
    }
}

/// Exact MK root for the critical purity at efficiency `eta`.
fn mk_purity_root(n: usize, eta: f64, purity: PurityScaling) -> Result<f64> {
    let product = mk_critical_product(n)?;
    Ok(match purity {
        PurityScaling::Mixture => std::f64::consts::SQRT_2 * (std::f64::consts::PI / (4.0 * eta)).powf(n as f64 / 2.0),
        PurityScaling::PerModePrinted => (product / eta).sqrt(),
    })
}

fn cross_check(n: usize, found: Critical, exact: f64, tolerance: f64) -> Result<Critical> {
    let expected = if exact > 1.0 {
        Critical::NoViolation
    } else {
        Critical::Value(exact)
    };
    match (found, expected) {
        (Critical::Value(a), Critical::Value(b)) if (a - b).abs() <= tolerance.max(1e-12) + 1e-12 => Ok(found),
        (Critical::NoViolation, Critical::NoViolation) => Ok(found),
        // A root within the tolerance of 1 may land on either side.
        _ if (exact - 1.0).abs() <= tolerance => Ok(found),
        _ => Err(Error::Internal(format!(
            "MK N = {n}: bisection gave {found:?}, closed-form inversion gives {exact}"
        ))),
    }
}

/// Smallest detection efficiency violating the inequality at purity `p`.
pub fn critical_efficiency_with(
    n: usize,
    p: f64,
    inequality: InequalityId,
    rule: &QuadratureRule,
    options: &CriticalOptions,
) -> Result<Critical> {
    check_unit("purity", p)?;
    let found = bisect(
        |eta| bell_ratio(inequality, &StateSpec::balanced(n, p, eta)?, rule, &options.closed_form),
        BRACKET_LO,
        options.tolerance,
    )?;
    if inequality == InequalityId::Mk {
        let exact = mk_efficiency_root(n, p, options.closed_form.purity);
        return cross_check(n, found, exact, options.tolerance);
    }
    Ok(found)
}

pub fn critical_efficiency(n: usize, p: f64, inequality: InequalityId, rule: &QuadratureRule) -> Result<Critical> {
    critical_efficiency_with(n, p, inequality, rule, &CriticalOptions::default())
}

/// Smallest purity violating the inequality at efficiency `eta`.
pub fn critical_purity_with(
    n: usize,
    eta: f64,
    inequality: InequalityId,
    rule: &QuadratureRule,
    options: &CriticalOptions,
) -> Result<Critical> {
    check_unit("efficiency", eta)?;
    let found = bisect(
        |p| bell_ratio(inequality, &StateSpec::balanced(n, p, eta)?, rule, &options.closed_form),
        PURITY_BRACKET_LO,
        options.tolerance,
    )?;
    if inequality == InequalityId::Mk {
        let exact = mk_purity_root(n, eta, options.closed_form.purity)?;
        return cross_check(n, found, exact, options.tolerance);
    }
    Ok(found)
}

pub fn critical_purity(n: usize, eta: f64, inequality: InequalityId, rule: &QuadratureRule) -> Result<Critical> {
    critical_purity_with(n, eta, inequality, rule, &CriticalOptions::default())
}

/// Critical value of the natural noise product of each inequality:
/// `eta p` for the moment inequalities (root in `eta` at `p = 1`, with the
/// functional inequality's function held at its lossless optimum) and
/// `eta p^2` for MK.
pub fn critical_product(n: usize, inequality: InequalityId, rule: &QuadratureRule, tolerance: f64) -> Result<Critical> {
    match inequality {
        InequalityId::Mk => {
            let v = mk_critical_product(n)?;
            Ok(if v <= 1.0 {
                Critical::Value(v)
            } else {
                Critical::NoViolation
            })
        }
        _ => {
            let options = CriticalOptions {
                closed_form: ClosedFormOptions {
                    epsilon_rule: EpsilonRule::IdealFunction,
                    purity: PurityScaling::PerModePrinted,
                },
                tolerance,
            };
            critical_efficiency_with(n, 1.0, inequality, rule, &options)
        }
    }
}

/// Critical values over a range of `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCurve {
    pub inequality_id: InequalityId,
    pub parameter: Parameter,
    pub n_values: Vec<usize>,
    pub critical_values: Vec<Critical>,
}

impl CriticalCurve {
    /// Evaluates `solve` at every `N` in `n_values`.
    pub fn build(
        inequality_id: InequalityId,
        parameter: Parameter,
        n_values: Vec<usize>,
        mut solve: impl FnMut(usize) -> Result<Critical>,
    ) -> Result<Self> {
        let critical_values = n_values.iter().map(|&n| solve(n)).collect::<Result<_>>()?;
        Ok(Self {
            inequality_id,
            parameter,
            n_values,
            critical_values,
        })
    }

    pub fn efficiency(
        inequality: InequalityId,
        n_values: Vec<usize>,
        p: f64,
        rule: &QuadratureRule,
        options: &CriticalOptions,
    ) -> Result<Self> {
        Self::build(inequality, Parameter::Efficiency, n_values, |n| {
            critical_efficiency_with(n, p, inequality, rule, options)
        })
    }

    pub fn purity(
        inequality: InequalityId,
        n_values: Vec<usize>,
        eta: f64,
        rule: &QuadratureRule,
        options: &CriticalOptions,
    ) -> Result<Self> {
        Self::build(inequality, Parameter::Purity, n_values, |n| {
            critical_purity_with(n, eta, inequality, rule, options)
        })
    }

    pub fn product(inequality: InequalityId, n_values: Vec<usize>, rule: &QuadratureRule) -> Result<Self> {
        Self::build(inequality, Parameter::Product, n_values, |n| {
            critical_product(n, inequality, rule, DEFAULT_TOLERANCE)
        })
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.n_values
            .iter()
            .zip(&self.critical_values)
            .map(|(n, c)| {
                let (value, ok) = match c {
                    Critical::Value(v) => (fmt_csv(*v), "true"),
                    Critical::NoViolation => (String::new(), "false"),
                };
                vec![
                    n.to_string(),
                    value,
                    self.parameter.to_string(),
                    self.inequality_id.to_string(),
                    ok.to_string(),
                ]
            })
            .collect()
    }

    /// Columns `N,value,parameter,inequality_id,converged_flag`; a missing
    /// root is an empty field with the flag `false`.
    pub fn to_csv(&self) -> String {
        csv_table(&CURVE_HEADER, &self.csv_rows())
    }
}

pub const CURVE_HEADER: [&str; 5] = ["N", "value", "parameter", "inequality_id", "converged_flag"];

/// Large-`N` limit of a critical curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticEstimate {
    pub inequality_id: InequalityId,
    pub parameter: Parameter,
    /// Extrapolation of the curve to `1/N -> 0`.
    pub limit: f64,
    /// Raw critical value at the largest even `N`.
    pub tail_value: f64,
    pub n_max: usize,
    /// Even `N` used by the fit.
    pub fit_n: Vec<usize>,
}

/// Limit at `h = 0` of the quadratic least-squares fit in `h = 1/N`
/// (Richardson extrapolation with one redundant point per order).
pub fn richardson_limit(n_values: &[usize], values: &[f64]) -> Result<f64> {
    if n_values.len() != values.len() || n_values.len() < 3 {
        return invalid("extrapolation needs at least three matching points");
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&n, &v) in n_values.iter().zip(values) {
        let h = 1.0 / n as f64;
        let row = nalgebra::Vector3::new(1.0, h, h * h);
        ata += row * row.transpose();
        atb += row * v;
    }
    let coeffs = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Internal("singular extrapolation system".into()))?;
    Ok(coeffs[0])
}

fn extrapolate(
    inequality_id: InequalityId,
    parameter: Parameter,
    n_max: usize,
    mut solve: impl FnMut(usize) -> Result<Critical>,
) -> Result<AsymptoticEstimate> {
    if n_max < MIN_ASYMPTOTIC_N {
        return invalid(format!("n_max must be at least {MIN_ASYMPTOTIC_N}, got {n_max}"));
    }
    let n_max = n_max - n_max % 2;
    let fit_n: Vec<usize> = (n_max / 2..=n_max).filter(|n| n % 2 == 0).collect();
    let mut values = Vec::with_capacity(fit_n.len());
    for &n in &fit_n {
        match solve(n)? {
            Critical::Value(v) => values.push(v),
            Critical::NoViolation => {
                return Err(Error::Internal(format!(
                    "{inequality_id} shows no violation at N = {n}; cannot extrapolate"
                )))
            }
        }
    }
    Ok(AsymptoticEstimate {
        inequality_id,
        parameter,
        limit: richardson_limit(&fit_n, &values)?,
        tail_value: *values.last().expect("non-empty fit range"),
        n_max,
        fit_n,
    })
}

/// Large-`N` limit of the critical noise product (see [`critical_product`]).
pub fn asymptotic_product(inequality: InequalityId, n_max: usize, rule: &QuadratureRule) -> Result<AsymptoticEstimate> {
    extrapolate(inequality, Parameter::Product, n_max, |n| {
        critical_product(n, inequality, rule, DEFAULT_TOLERANCE)
    })
}

/// Large-`N` limit of the critical efficiency at purity `p`.
pub fn asymptotic_efficiency(
    inequality: InequalityId,
    n_max: usize,
    p: f64,
    rule: &QuadratureRule,
    options: &CriticalOptions,
) -> Result<AsymptoticEstimate> {
    extrapolate(inequality, Parameter::Efficiency, n_max, |n| {
        critical_efficiency_with(n, p, inequality, rule, options)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_hermite_rule, DEFAULT_ORDER};
    use std::f64::consts::PI;

    fn rule() -> QuadratureRule {
        gauss_hermite_rule(DEFAULT_ORDER).unwrap()
    }

    fn value(c: Critical) -> f64 {
        c.value().expect("violation expected")
    }

    #[test]
    fn mk_efficiency_matches_closed_form() {
        let r = rule();
        let v = value(critical_efficiency(3, 1.0, InequalityId::Mk, &r).unwrap());
        assert!((v - 2f64.powf(-5.0 / 3.0) * PI).abs() < 1e-9);
    }

    #[test]
    fn mk_purity_readings() {
        let r = rule();
        let printed = CriticalOptions {
            closed_form: ClosedFormOptions {
                purity: PurityScaling::PerModePrinted,
                ..Default::default()
            },
            ..Default::default()
        };
        let v = value(critical_purity_with(5, 1.0, InequalityId::Mk, &r, &printed).unwrap());
        assert!((v - (2f64.powf(-9.0 / 5.0) * PI).sqrt()).abs() < 1e-9);
        assert!((v - 0.9499).abs() < 1e-4);
        let mixture = value(critical_purity(5, 1.0, InequalityId::Mk, &r).unwrap());
        assert!((mixture - std::f64::consts::SQRT_2 * (PI / 4.0).powf(2.5)).abs() < 1e-9);
    }

    #[test]
    fn functional_onset_and_anchor() {
        let r = rule();
        assert_eq!(
            critical_efficiency(4, 1.0, InequalityId::Functional, &r).unwrap(),
            Critical::NoViolation
        );
        let v = value(critical_efficiency(10, 1.0, InequalityId::Functional, &r).unwrap());
        assert!((v - 0.80).abs() < 0.01, "{v}");
    }

    #[test]
    fn root_reproduces_unit_ratio() {
        let r = rule();
        let opts = ClosedFormOptions::default();
        for (n, id) in [
            (10, InequalityId::Functional),
            (7, InequalityId::Functional),
            (12, InequalityId::Cfrd),
            (6, InequalityId::Mk),
        ] {
            let eta = value(critical_efficiency(n, 1.0, id, &r).unwrap());
            let b = bell_ratio(id, &StateSpec::balanced(n, 1.0, eta).unwrap(), &r, &opts).unwrap();
            assert!((b - 1.0).abs() < 1e-4, "{id} N={n}: {b}");
        }
    }

    #[test]
    fn purity_root_follows_quadratic_scaling() {
        let r = rule();
        let b1 = bell_ratio(
            InequalityId::Functional,
            &StateSpec::balanced(20, 1.0, 1.0).unwrap(),
            &r,
            &Default::default(),
        )
        .unwrap();
        let p = value(critical_purity(20, 1.0, InequalityId::Functional, &r).unwrap());
        assert!((p - b1.powf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn purity_decreases_with_n() {
        let r = rule();
        let p10 = value(critical_purity(10, 1.0, InequalityId::Functional, &r).unwrap());
        let p20 = value(critical_purity(20, 1.0, InequalityId::Functional, &r).unwrap());
        assert!(p20 < p10 && p10 < 1.0);
    }

    #[test]
    fn low_efficiency_never_violates() {
        let r = rule();
        for id in [InequalityId::Functional, InequalityId::Cfrd, InequalityId::Mk] {
            for n in [4, 10, 25, 40] {
                assert_eq!(
                    critical_purity(n, 0.5, id, &r).unwrap(),
                    Critical::NoViolation,
                    "{id} N={n}"
                );
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let r = rule();
        assert!(critical_efficiency(6, 0.0, InequalityId::Mk, &r).is_err());
        assert!(critical_purity(6, 1.5, InequalityId::Mk, &r).is_err());
        assert!(asymptotic_product(InequalityId::Mk, 10, &r).is_err());
    }

    #[test]
    fn richardson_is_exact_on_quadratics() {
        let n: Vec<usize> = (10..=20).step_by(2).collect();
        let v: Vec<f64> = n.iter().map(|&n| 0.7 + 0.3 / n as f64 - 2.0 / (n * n) as f64).collect();
        assert!((richardson_limit(&n, &v).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn mk_product_limit() {
        let est = asymptotic_product(InequalityId::Mk, 200, &rule()).unwrap();
        assert!((est.limit - PI / 4.0).abs() < 1e-5);
        assert!((est.tail_value - PI / 4.0 * 2f64.powf(1.0 / 200.0)).abs() < 1e-15);
    }

    #[test]
    fn bisection_flags_non_monotone_ratio() {
        let err = bisect(|x| Ok(if x < 0.5 { 2.0 } else { 3.0 * x }), BRACKET_LO, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
        let err = bisect(|x| Ok(1.5 - (x - 0.6).abs()), BRACKET_LO, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }

    #[test]
    fn curve_csv_layout() {
        let curve = CriticalCurve {
            inequality_id: InequalityId::Mk,
            parameter: Parameter::Efficiency,
            n_values: vec![2, 3],
            critical_values: vec![Critical::NoViolation, Critical::Value(0.25)],
        };
        assert_eq!(
            curve.to_csv(),
            "N,value,parameter,inequality_id,converged_flag\n2,,efficiency,mk,false\n3,0.25,efficiency,mk,true\n"
        );
    }
}
