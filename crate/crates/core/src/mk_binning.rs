//! Mermin–Klyshko inequality with sign-binned quadrature outcomes.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::functional_bell::PurityScaling;
use crate::model::{AngleConfig, DensityMatrix, FunctionMoments, Mat2, StateSpec};
use crate::oracle::expectation_product;
use crate::SQRT_2_OVER_PI;

/// Upper bound of `|S_N|` for local hidden variables.
pub const MK_BOUND: f64 = 1.0;

/// Combination of `Re` and `Im` of the correlation product that forms `S_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MkVariant {
    /// `2^(-N/2) (Re + Im)`, even N.
    EvenPlus,
    /// `2^(-N/2) (Re - Im)`, even N.
    EvenMinus,
    /// `2^(-(N-1)/2) Re`, odd N.
    OddReal,
    /// `2^(-(N-1)/2) Im`, odd N.
    OddImag,
    /// `2^(-(N-1)/2) sqrt(Re^2 + Im^2)`, odd N.
    OddRss,
}

impl MkVariant {
    pub fn for_parity(n: usize) -> &'static [MkVariant] {
        if n.is_multiple_of(2) {
            &[Self::EvenPlus, Self::EvenMinus]
        } else {
            &[Self::OddReal, Self::OddImag, Self::OddRss]
        }
    }

    /// `|S_N|` of this combination of `pi`.
    pub fn s_value(self, n: usize, pi: Complex64) -> f64 {
        let (re, im) = (pi.re, pi.im);
        match self {
            Self::EvenPlus => (re + im).abs() * 2f64.powf(-(n as f64) / 2.0),
            Self::EvenMinus => (re - im).abs() * 2f64.powf(-(n as f64) / 2.0),
            Self::OddReal => re.abs() * 2f64.powf(-(n as f64 - 1.0) / 2.0),
            Self::OddImag => im.abs() * 2f64.powf(-(n as f64 - 1.0) / 2.0),
            Self::OddRss => pi.norm() * 2f64.powf(-(n as f64 - 1.0) / 2.0),
        }
    }
}

impl fmt::Display for MkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::EvenPlus => "re+im",
            Self::EvenMinus => "re-im",
            Self::OddReal => "re",
            Self::OddImag => "im",
            Self::OddRss => "rss",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkResult {
    /// `|S_N|` of the winning variant.
    pub s_value: f64,
    /// Bell ratio against the bound 1, equal to `s_value`.
    pub bell_ratio: f64,
    pub angles: AngleConfig,
    pub variant: MkVariant,
    /// Whether the winning variant used the observable-exchanged product.
    pub exchanged: bool,
    /// Correlation product `<prod_k (f(X^theta_k) + i f(X^theta'_k))>`.
    pub pi_re: f64,
    pub pi_im: f64,
}

impl MkResult {
    pub fn violates(&self) -> bool {
        self.bell_ratio > MK_BOUND
    }
}

/// Phases `theta_k = (-1)^(N+1) pi (k-1)/(2N)`, `theta'_k = theta_k + pi/2` for
/// `k <= r`, and `theta_k = (-1)^N pi (k-1)/(2N)`, `theta'_k = theta_k - pi/2`
/// for `k > r` (one-based `k`).
pub fn mk_optimal_angles(n: usize, r: usize) -> Result<AngleConfig> {
    if n == 0 {
        return invalid("MK angles need at least one mode");
    }
    if r == 0 || r > n {
        return invalid(format!("split r = {r} outside 1..={n}"));
    }
    let parity = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut theta = Vec::with_capacity(n);
    let mut theta_prime = Vec::with_capacity(n);
    for k in 1..=n {
        let base = PI * (k - 1) as f64 / (2 * n) as f64;
        if k <= r {
            let t = -parity * base;
            theta.push(t);
            theta_prime.push(t + FRAC_PI_2);
        } else {
            let t = parity * base;
            theta.push(t);
            theta_prime.push(t - FRAC_PI_2);
        }
    }
    AngleConfig::new(theta, theta_prime)
}

/// Matrix elements of the sign-binned quadrature.
pub fn sign_bin_moments() -> FunctionMoments {
    FunctionMoments {
        m00: 0.0,
        m01: SQRT_2_OVER_PI,
        m11: 0.0,
    }
}

/// `<prod_k (f_bin(X^theta_k) + i f_bin(X^theta'_k))>`.
pub fn mk_correlation(rho: &DensityMatrix, angles: &AngleConfig) -> Result<Complex64> {
    if angles.len() != rho.n_modes() {
        return invalid(format!(
            "{} angle pairs for a {}-mode state",
            angles.len(),
            rho.n_modes()
        ));
    }
    let m = sign_bin_moments();
    let i = Complex64::i();
    let ops: Vec<Mat2> = angles
        .theta
        .iter()
        .zip(&angles.theta_prime)
        .map(|(&t, &tp)| {
            let (a, b) = (m.rotated(t), m.rotated(tp));
            [
                [a[0][0] + i * b[0][0], a[0][1] + i * b[0][1]],
                [a[1][0] + i * b[1][0], a[1][1] + i * b[1][1]],
            ]
        })
        .collect();
    expectation_product(rho, &ops)
}

/// Evaluates every allowed `S_N` combination, for the product and for its
/// observable-exchanged form `i^N conj(pi)`, and reports the largest.
pub fn mk_evaluate(rho: &DensityMatrix, angles: &AngleConfig) -> Result<MkResult> {
    let n = rho.n_modes();
    let pi = mk_correlation(rho, angles)?;
    let exchanged = Complex64::i().powu(n as u32) * pi.conj();
    let mut best = (f64::NEG_INFINITY, MkVariant::for_parity(n)[0], false);
    for (flag, value) in [(false, pi), (true, exchanged)] {
        for &v in MkVariant::for_parity(n) {
            let s = v.s_value(n, value);
            if s > best.0 {
                best = (s, v, flag);
            }
        }
    }
    Ok(MkResult {
        s_value: best.0,
        bell_ratio: best.0,
        angles: angles.clone(),
        variant: best.1,
        exchanged: best.2,
        pi_re: pi.re,
        pi_im: pi.im,
    })
}

/// Closed form `|S_N| = (sqrt2/2) w(p) (4 eta/pi)^(N/2)`, where the purity
/// weight is `p` for the mixture model and `p^N` for the per-mode reading.
pub fn mk_bell_value_with(spec: &StateSpec, purity: PurityScaling) -> Result<f64> {
    spec.validate()?;
    let n = spec.n_modes as f64;
    let weight = match purity {
        PurityScaling::Mixture => spec.purity,
        PurityScaling::PerModePrinted => spec.purity.powf(n),
    };
    Ok(SQRT_2 / 2.0 * weight * (4.0 * spec.efficiency / PI).powf(n / 2.0))
}

pub fn mk_bell_value(spec: &StateSpec) -> Result<f64> {
    mk_bell_value_with(spec, PurityScaling::Mixture)
}

/// Product `(eta p^2)_crit = 2^((1-2N)/N) pi` at which the printed closed form
/// reaches the bound; at `p = 1` it is the critical efficiency.
pub fn mk_critical_product(n: usize) -> Result<f64> {
    if n < 2 {
        return invalid(format!("MK critical product needs N >= 2, got {n}"));
    }
    let n = n as f64;
    Ok(2f64.powf((1.0 - 2.0 * n) / n) * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::density_matrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn phases_at_n3_full_split() {
        let a = mk_optimal_angles(3, 3).unwrap();
        let expect = [0.0, PI / 6.0, PI / 3.0];
        for (k, &e) in expect.iter().enumerate() {
            assert!(close(a.theta[k], e, 1e-15));
            assert!(close(a.theta_prime[k], e + FRAC_PI_2, 1e-15));
        }
    }

    #[test]
    fn phases_at_n2_single_split() {
        let a = mk_optimal_angles(2, 1).unwrap();
        assert_eq!(a.theta[0], 0.0);
        assert!(close(a.theta_prime[0], FRAC_PI_2, 1e-15));
        assert!(close(a.theta[1], PI / 4.0, 1e-15));
        assert!(close(a.theta_prime[1], -PI / 4.0, 1e-15));
    }

    #[test]
    fn phases_reduced_and_finite() {
        for n in 1..=12 {
            for r in 1..=n {
                let a = mk_optimal_angles(n, r).unwrap();
                for &t in a.theta.iter().chain(&a.theta_prime) {
                    assert!(t.is_finite() && t > -PI && t <= PI);
                }
            }
        }
    }

    #[test]
    fn invalid_split_rejected() {
        assert!(mk_optimal_angles(3, 0).is_err());
        assert!(mk_optimal_angles(3, 4).is_err());
    }

    #[test]
    fn ideal_n3_matches_closed_form() {
        let spec = StateSpec::ideal(3, 3).unwrap();
        let rho = density_matrix(&spec).unwrap();
        let res = mk_evaluate(&rho, &mk_optimal_angles(3, 3).unwrap()).unwrap();
        let expect = SQRT_2 / 2.0 * (4.0 / PI).powf(1.5);
        assert!(close(res.s_value, expect, 1e-12));
        assert!(close(res.s_value, 1.01589, 1e-5));
        assert!(res.violates());
    }

    #[test]
    fn vacuum_gives_zero() {
        let rho = DensityMatrix::vacuum(4).unwrap();
        let res = mk_evaluate(&rho, &mk_optimal_angles(4, 2).unwrap()).unwrap();
        assert_eq!(res.s_value, 0.0);
    }

    #[test]
    fn lossy_mixed_matches_closed_form() {
        let spec = StateSpec::new(4, 2, 0.9, 0.9).unwrap();
        let rho = density_matrix(&spec).unwrap();
        let res = mk_evaluate(&rho, &mk_optimal_angles(4, 2).unwrap()).unwrap();
        assert!(close(res.s_value, mk_bell_value(&spec).unwrap(), 1e-8));
    }

    #[test]
    fn oracle_matches_closed_form_for_every_split() {
        for n in 2..=7 {
            for r in 1..=n {
                let spec = StateSpec::new(n, r, 0.83, 0.91).unwrap();
                let rho = density_matrix(&spec).unwrap();
                let res = mk_evaluate(&rho, &mk_optimal_angles(n, r).unwrap()).unwrap();
                let expect = mk_bell_value(&spec).unwrap();
                assert!(
                    close(res.s_value, expect, 1e-8),
                    "n={n} r={r}: {} vs {expect}",
                    res.s_value
                );
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let s = |p, eta| mk_bell_value(&StateSpec::new(3, 1, p, eta).unwrap()).unwrap();
        assert!(close(s(1.0, 1.0), 1.01589, 1e-5));
        assert!(close(s(1.0, 2f64.powf(-5.0 / 3.0) * PI), 1.0, 1e-12));
        assert_eq!(s(0.0, 0.8), 0.0);
    }

    #[test]
    fn printed_purity_reading() {
        let spec = StateSpec::new(4, 2, 0.9, 0.9).unwrap();
        let v = mk_bell_value_with(&spec, PurityScaling::PerModePrinted).unwrap();
        assert!(close(v, SQRT_2 / 2.0 * (4.0 * 0.9 * 0.81 / PI).powi(2), 1e-12));
    }

    #[test]
    fn critical_products() {
        let c3 = mk_critical_product(3).unwrap();
        assert!(close(c3, 2f64.powf(-5.0 / 3.0) * PI, 1e-15));
        assert!((c3 - 0.99).abs() < 5e-3);
        assert!(close(mk_critical_product(4).unwrap(), 0.934, 1e-3));
        assert!(close(mk_critical_product(5).unwrap(), 0.9022, 1e-4));
        assert!(close(mk_critical_product(4000).unwrap(), PI / 4.0, 1e-3));
        assert!(mk_critical_product(1).is_err());
    }

    #[test]
    fn critical_product_is_root_of_closed_form() {
        for n in 2..=30 {
            let eta = mk_critical_product(n).unwrap();
            if eta <= 1.0 {
                let v = mk_bell_value(&StateSpec::new(n, 1, 1.0, eta).unwrap()).unwrap();
                assert!(close(v, 1.0, 1e-12), "n={n}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rho = DensityMatrix::vacuum(3).unwrap();
        assert!(mk_evaluate(&rho, &mk_optimal_angles(4, 2).unwrap()).is_err());
    }
}
