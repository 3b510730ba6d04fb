//! Exact evaluation of the functional-moment inequality on a density matrix.
//!
//! For local functions `f_k`, `g_k` and angles `(theta_k, theta'_k)` the two
//! sides are
//!
//! ```text
//! LHS = |Tr(rho  (x)_k [f(X^theta_k) + i g(X^theta'_k)])|^2
//! RHS =  Tr(rho  (x)_k [f(X^theta_k)^2 + g(X^theta'_k)^2])
//! ```
//!
//! Traces are contracted entry by entry over the sparse density matrix, one
//! mode at a time, so no `2^N x 2^N` operator is ever formed. This module is
//! the reference every closed form in the crate is tested against.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{density_matrix, AngleConfig, DensityMatrix, Mat2, MeasurementFunction, PairMoments, StateSpec};
use crate::quadrature::QuadratureRule;

/// Search interval for the optimal-function parameter.
pub const EPSILON_BRACKET: (f64, f64) = (1e-9, 64.0);

const GOLDEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InequalityId {
    /// Functional-moment inequality with the optimal local function.
    Functional,
    /// Functional-moment inequality with `f = g = identity`.
    Cfrd,
    /// Mermin-Klyshko with sign-binned outcomes.
    Mk,
}

impl fmt::Display for InequalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Functional => "functional",
            Self::Cfrd => "cfrd",
            Self::Mk => "mk",
        })
    }
}

impl FromStr for InequalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "functional" => Ok(Self::Functional),
            "cfrd" => Ok(Self::Cfrd),
            "mk" => Ok(Self::Mk),
            other => invalid(format!("unknown inequality '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellResult {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; a value above one rules out local hidden variables.
    pub ratio: f64,
    pub inequality: InequalityId,
    pub function_id: String,
    pub angles: Option<AngleConfig>,
}

impl BellResult {
    pub fn new(lhs: f64, rhs: f64, inequality: InequalityId, function_id: String) -> Self {
        Self {
            lhs,
            rhs,
            ratio: lhs / rhs,
            inequality,
            function_id,
            angles: None,
        }
    }

    pub fn with_angles(mut self, angles: AngleConfig) -> Self {
        self.angles = Some(angles);
        self
    }

    pub fn violates(&self) -> bool {
        self.ratio > 1.0
    }
}

/// `Tr(rho (x)_k ops[k])`.
pub fn expectation_product(rho: &DensityMatrix, ops: &[Mat2]) -> Result<Complex64> {
    if ops.len() != rho.n_modes() {
        return invalid(format!(
            "{} site operators for a {}-mode state",
            ops.len(),
            rho.n_modes()
        ));
    }
    let mut total = Complex64::new(0.0, 0.0);
    for e in rho.entries() {
        // Tr(rho A) = sum_ab rho_ab A_ba
        let mut term = e.value;
        for (k, op) in ops.iter().enumerate() {
            let a = ((e.ket >> k) & 1) as usize;
            let b = ((e.bra >> k) & 1) as usize;
            term *= op[b][a];
            if term == Complex64::new(0.0, 0.0) {
                break;
            }
        }
        total += term;
    }
    Ok(total)
}

/// Both sides of the inequality from precomputed function moments.
pub fn sides(rho: &DensityMatrix, moments: &PairMoments, angles: &AngleConfig) -> Result<(f64, f64)> {
    if angles.len() != rho.n_modes() {
        return invalid(format!(
            "{} angle pairs for a {}-mode state",
            angles.len(),
            rho.n_modes()
        ));
    }
    let sites: Vec<_> = angles
        .theta
        .iter()
        .zip(&angles.theta_prime)
        .map(|(&t, &tp)| moments.site(t, tp))
        .collect();
    let lhs_ops: Vec<Mat2> = sites.iter().map(|s| s.lhs).collect();
    let rhs_ops: Vec<Mat2> = sites.iter().map(|s| s.rhs).collect();
    let lhs = expectation_product(rho, &lhs_ops)?.norm_sqr();
    let rhs = expectation_product(rho, &rhs_ops)?.re;
    Ok((lhs, rhs))
}

fn inequality_of(f: &MeasurementFunction, g: &MeasurementFunction) -> InequalityId {
    match (f, g) {
        (MeasurementFunction::Identity, MeasurementFunction::Identity) => InequalityId::Cfrd,
        _ => InequalityId::Functional,
    }
}

fn function_label(f: &MeasurementFunction, g: &MeasurementFunction) -> String {
    let (a, b) = (f.id(), g.id());
    if a == b {
        a
    } else {
        format!("{a}|{b}")
    }
}

pub fn evaluate(
    rho: &DensityMatrix,
    f: &MeasurementFunction,
    g: &MeasurementFunction,
    angles: &AngleConfig,
    rule: &QuadratureRule,
) -> Result<BellResult> {
    let moments = PairMoments::new(f, g, rule)?;
    let (lhs, rhs) = sides(rho, &moments, angles)?;
    if rhs <= 0.0 {
        return invalid("right-hand side vanishes; functions are identically zero on this state");
    }
    Ok(BellResult::new(lhs, rhs, inequality_of(f, g), function_label(f, g)).with_angles(angles.clone()))
}

/// Maximises the ratio over the orthogonal family `theta'_k = theta_k +/- pi/2`
/// (every sign pattern) combined with a common phase `theta_k = 2 pi j / resolution`.
///
/// The right-hand side does not depend on the angles; the scan checks that to
/// `1e-10` relative and fails loudly otherwise.
pub fn angle_scan(
    rho: &DensityMatrix,
    f: &MeasurementFunction,
    g: &MeasurementFunction,
    resolution: usize,
    rule: &QuadratureRule,
) -> Result<(AngleConfig, BellResult)> {
    if resolution < 2 {
        return invalid(format!("scan resolution {resolution} must be at least 2"));
    }
    let n = rho.n_modes();
    if n > 8 {
        return Err(Error::ResourceLimit(format!(
            "exhaustive sign-pattern scan limited to 8 modes, got {n}"
        )));
    }
    let moments = PairMoments::new(f, g, rule)?;
    let mut best: Option<(AngleConfig, f64, f64)> = None;
    let (mut rhs_min, mut rhs_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for mask in 0u32..(1 << n) {
        for j in 0..resolution {
            let phase = 2.0 * PI * j as f64 / resolution as f64;
            let theta = vec![phase; n];
            let theta_prime = (0..n)
                .map(|k| {
                    if (mask >> k) & 1 == 0 {
                        phase + PI / 2.0
                    } else {
                        phase - PI / 2.0
                    }
                })
                .collect();
            let cfg = AngleConfig::new(theta, theta_prime)?;
            let (lhs, rhs) = sides(rho, &moments, &cfg)?;
            rhs_min = rhs_min.min(rhs);
            rhs_max = rhs_max.max(rhs);
            let better = match &best {
                None => true,
                Some((_, bl, br)) => lhs / rhs > (bl / br) * (1.0 + 1e-12),
            };
            if better {
                best = Some((cfg, lhs, rhs));
            }
        }
    }
    if rhs_max - rhs_min > 1e-10 * rhs_max.abs() {
        return Err(Error::Internal(format!(
            "right-hand side varied with angles: [{rhs_min}, {rhs_max}]"
        )));
    }
    let (cfg, lhs, rhs) = best.expect("at least one configuration scanned");
    let result = BellResult::new(lhs, rhs, inequality_of(f, g), function_label(f, g)).with_angles(cfg.clone());
    Ok((cfg, result))
}

/// Brute-force maximum over every `theta_k, theta'_k` on a uniform grid of
/// `resolution` points per angle. Only for validating [`angle_scan`] at small N.
pub fn full_grid_scan(
    rho: &DensityMatrix,
    f: &MeasurementFunction,
    g: &MeasurementFunction,
    resolution: usize,
    rule: &QuadratureRule,
) -> Result<BellResult> {
    let n = rho.n_modes();
    if n > 4 || !(2..=16).contains(&resolution) {
        return invalid("full grid scan needs N <= 4 and 2 <= resolution <= 16");
    }
    let moments = PairMoments::new(f, g, rule)?;
    let grid: Vec<f64> = (0..resolution)
        .map(|j| 2.0 * PI * j as f64 / resolution as f64)
        .collect();
    // every (theta, theta') pair for one site
    let pairs: Vec<(f64, f64)> = grid.iter().flat_map(|&t| grid.iter().map(move |&tp| (t, tp))).collect();
    let lhs_ops: Vec<Mat2> = pairs.iter().map(|&(t, tp)| moments.site(t, tp).lhs).collect();
    let rhs_op = moments.site(0.0, 0.0).rhs;
    let rhs = expectation_product(rho, &vec![rhs_op; n])?.re;

    let entries = rho.entries();
    let mut best = (f64::NEG_INFINITY, vec![0usize; n]);
    let mut choice = vec![0usize; n];
    let mut partial = vec![entries.iter().map(|e| e.value).collect::<Vec<_>>()];
    grid_recurse(entries, &lhs_ops, 0, &mut choice, &mut partial, &mut best);

    let (lhs, idx) = best;
    let cfg = AngleConfig::new(
        idx.iter().map(|&i| pairs[i].0).collect(),
        idx.iter().map(|&i| pairs[i].1).collect(),
    )?;
    Ok(BellResult::new(lhs, rhs, inequality_of(f, g), function_label(f, g)).with_angles(cfg))
}

fn grid_recurse(
    entries: &[crate::model::Entry],
    ops: &[Mat2],
    site: usize,
    choice: &mut Vec<usize>,
    partial: &mut Vec<Vec<Complex64>>,
    best: &mut (f64, Vec<usize>),
) {
    let n = choice.len();
    if site == n {
        let total: Complex64 = partial[n].iter().sum();
        let lhs = total.norm_sqr();
        if lhs > best.0 {
            *best = (lhs, choice.clone());
        }
        return;
    }
    for (i, op) in ops.iter().enumerate() {
        choice[site] = i;
        let next: Vec<Complex64> = entries
            .iter()
            .zip(&partial[site])
            .map(|(e, &v)| {
                let a = ((e.ket >> site) & 1) as usize;
                let b = ((e.bra >> site) & 1) as usize;
                v * op[b][a]
            })
            .collect();
        partial.truncate(site + 1);
        partial.push(next);
        grid_recurse(entries, ops, site + 1, choice, partial, best);
    }
}

/// Ratio at `f = g = x/(1+eps x^2)` and the orthogonal angle pattern.
pub fn optimal_family_ratio(
    rho: &DensityMatrix,
    r_split: usize,
    epsilon: f64,
    rule: &QuadratureRule,
) -> Result<BellResult> {
    let f = MeasurementFunction::optimal(epsilon)?;
    let angles = AngleConfig::orthogonal(rho.n_modes(), r_split, 0.0);
    evaluate(rho, &f, &f, &angles, rule)
}

/// Golden-section maximisation of the ratio over `eps` in `(0, 64]` for
/// `f = g = x/(1+eps x^2)` at the orthogonal angles.
pub fn optimize_epsilon_numeric(spec: &StateSpec, rule: &QuadratureRule) -> Result<(f64, BellResult)> {
    if spec.n_modes > 10 {
        return invalid(format!(
            "numeric epsilon optimisation limited to 10 modes, got {}",
            spec.n_modes
        ));
    }
    let rho = density_matrix(spec)?;
    let objective = |eps: f64| -> Result<f64> { Ok(optimal_family_ratio(&rho, spec.r_split, eps, rule)?.ratio) };
    let eps = golden_section_max(objective, EPSILON_BRACKET.0, EPSILON_BRACKET.1, GOLDEN_TOL)?;
    let result = optimal_family_ratio(&rho, spec.r_split, eps, rule)?;
    Ok((eps, result))
}

/// Maximiser of a unimodal function on `[lo, hi]`.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
