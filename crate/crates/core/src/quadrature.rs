//! Gauss-Hermite integration against the vacuum weight `e^{-2x^2}`.
//!
//! Rules are built for the physicists' weight `e^{-u^2}` by Newton iteration on
//! the orthonormal Hermite recurrence, then mapped with `u = sqrt(2) x` and
//! `w -> w / sqrt(2)`. Weights are carried in log form during construction, so
//! high orders never overflow; the outermost weights of very large rules can
//! underflow to exactly zero.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::MeasurementFunction;

pub const MAX_ORDER: usize = 512;

/// Order used by the CLI and the critical-threshold sweeps.
pub const DEFAULT_ORDER: usize = 200;

/// Order for quick, low-accuracy runs.
pub const QUICK_ORDER: usize = 50;

const ODD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(order: usize) -> Result<Self> {
        gauss_hermite_rule(order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Abscissae in strictly increasing order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the first strictly positive node.
    pub fn first_positive(&self) -> usize {
        self.order / 2 + self.order % 2
    }

    /// Strictly positive nodes, increasing.
    pub fn positive_nodes(&self) -> &[f64] {
        &self.nodes[self.first_positive()..]
    }

    /// Weights paired with [`positive_nodes`](Self::positive_nodes).
    pub fn positive_weights(&self) -> &[f64] {
        &self.weights[self.first_positive()..]
    }

    /// `sum_i w_i f(x_i)`, approximating `int e^{-2x^2} f(x) dx`.
    ///
    /// Mirror nodes are summed pairwise, so odd integrands give exactly zero.
    pub fn integrate<F: Fn(f64) -> f64>(&self, integrand: F) -> Result<f64> {
        let eval = |x: f64| {
            let v = integrand(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericalDomain { node: x, value: v })
            }
        };
        let n = self.order;
        let mut acc = 0.0;
        if n % 2 == 1 {
            acc += self.weights[n / 2] * eval(0.0)?;
        }
        for i in (0..n / 2).rev() {
            let j = n - 1 - i;
            acc += self.weights[j] * (eval(self.nodes[j])? + eval(self.nodes[i])?);
        }
        Ok(acc)
    }
}

/// Gauss-Hermite rule with `order` nodes for the weight `e^{-2x^2}`.
pub fn gauss_hermite_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return invalid(format!("quadrature order {order} outside 1..={MAX_ORDER}"));
    }
    let (roots, log_weights) = physicists_rule(order)?;

    let mut pairs: Vec<(f64, f64)> = roots
        .iter()
        .zip(&log_weights)
        .map(|(&u, &lw)| (u / std::f64::consts::SQRT_2, (lw).exp() / std::f64::consts::SQRT_2))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Ok(QuadratureRule { order, nodes, weights })
}

/// Evaluates the orthonormal Hermite polynomials `p_n(z)` and `p_{n-1}(z)`.
fn hermite_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Roots and log-weights of the `e^{-u^2}` rule. Starting values come from the
/// eigenvalues of the Jacobi matrix; each positive root is then polished by
/// Newton steps on the recurrence and mirrored.
fn physicists_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nf = n as f64;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let mut z_roots = vec![0.0; n];
    let mut log_w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let centre = n % 2 == 1 && i == half - 1;
        let mut z = if centre { 0.0 } else { guesses[i] };
        let mut converged = centre;
        for _ in 0..100 {
            if converged {
                break;
            }
            let (p1, p2) = hermite_pair(n, z);
            let step = p1 / ((2.0 * nf).sqrt() * p2);
            z -= step;
            converged = step.abs() <= 1e-15 * z.abs().max(1.0);
        }
        if !converged {
            return Err(Error::Convergence {
                iterations: 100,
                residual: hermite_pair(n, z).0.abs(),
            });
        }
        let pp = (2.0 * nf).sqrt() * hermite_pair(n, z).1;
        let lw = std::f64::consts::LN_2 - 2.0 * pp.abs().ln();
        z_roots[i] = z;
        z_roots[n - 1 - i] = -z;
        log_w[i] = lw;
        log_w[n - 1 - i] = lw;
    }
    Ok((z_roots, log_w))
}

/// The three named kernel integrals of an odd measurement function under the
/// optimal condition `f = g` (so `f+ = 2f`, `f- = 0`):
///
/// * `i_plus  = 2 int e^{-2x^2} x (2f) dx`
/// * `i_cross = 4 int x^2 e^{-2x^2} (2f)^2 dx`
/// * `i_zero  =   int e^{-2x^2} (2f)^2 dx`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelIntegrals {
    pub i_plus: f64,
    pub i_cross: f64,
    pub i_zero: f64,
}

impl KernelIntegrals {
    /// Closed-form values for `f(x) = x`.
    pub fn identity() -> Self {
        let g0 = (PI / 2.0).sqrt();
        Self {
            i_plus: g0,
            i_cross: 3.0 * g0,
            i_zero: g0,
        }
    }

    /// Loss-weighted cross integral `C = eta I + (1 - eta) I0`.
    pub fn loss_mixed(&self, eta: f64) -> f64 {
        eta * self.i_cross + (1.0 - eta) * self.i_zero
    }

    /// `4 I0 / I`, the right-hand side of the ideal fixed-point equation.
    pub fn epsilon_ratio(&self) -> f64 {
        4.0 * self.i_zero / self.i_cross
    }
}

/// Fails unless `f(x) + f(-x)` vanishes at every node.
pub fn check_odd(f: &MeasurementFunction, rule: &QuadratureRule) -> Result<()> {
    for &x in rule.positive_nodes() {
        let a = f.eval(x);
        let b = f.eval(-x);
        let scale = a.abs().max(1.0);
        if (a + b).abs() > ODD_TOLERANCE * scale {
            return invalid(format!(
                "measurement function {} is not odd: f({x}) + f(-{x}) = {}",
                f.id(),
                a + b
            ));
        }
    }
    Ok(())
}

pub fn kernel_integrals(f: &MeasurementFunction, rule: &QuadratureRule) -> Result<KernelIntegrals> {
    check_odd(f, rule)?;
    let i_plus = rule.integrate(|x| 4.0 * x * f.eval(x))?;
    let i_cross = rule.integrate(|x| {
        let v = f.eval(x);
        16.0 * x * x * v * v
    })?;
    let i_zero = rule.integrate(|x| {
        let v = f.eval(x);
        4.0 * v * v
    })?;
    Ok(KernelIntegrals {
        i_plus,
        i_cross,
        i_zero,
    })
}

/// Kernel integrals of the optimal family `x / (1 + eps x^2)` without going
/// through [`MeasurementFunction`]; used inside fixed-point loops.
pub fn optimal_kernel_integrals(eps: f64, rule: &QuadratureRule) -> KernelIntegrals {
    // the integrands are even: fold onto the positive half
    let (mut i_plus, mut i_cross, mut i_zero) = (0.0, 0.0, 0.0);
    for (&x, &w) in rule.positive_nodes().iter().zip(rule.positive_weights()).rev() {
        let v = x / (1.0 + eps * x * x);
        i_plus += 2.0 * w * 4.0 * x * v;
        i_cross += 2.0 * w * 16.0 * x * x * v * v;
        i_zero += 2.0 * w * 4.0 * v * v;
    }
    KernelIntegrals {
        i_plus,
        i_cross,
        i_zero,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_norm() -> f64 {
        (PI / 2.0).sqrt()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn order_one_is_single_centre_node() {
        let rule = gauss_hermite_rule(1).unwrap();
        assert_eq!(rule.nodes(), &[0.0]);
        assert!(rel(rule.weights()[0], 1.253_314_137_315_500_3) < 1e-14);
    }

    #[test]
    fn order_out_of_range() {
        assert!(matches!(gauss_hermite_rule(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gauss_hermite_rule(513), Err(Error::InvalidArgument(_))));
        assert!(gauss_hermite_rule(512).is_ok());
    }

    #[test]
    fn gaussian_moments() {
        for order in [2, 3, 7, 50, 200] {
            let rule = gauss_hermite_rule(order).unwrap();
            assert!(rel(rule.integrate(|_| 1.0).unwrap(), gauss_norm()) < 1e-12);
            assert!(rel(rule.integrate(|x| x * x).unwrap(), 0.25 * gauss_norm()) < 1e-12);
            if order >= 3 {
                let m4 = rule.integrate(|x| x.powi(4)).unwrap();
                assert!(rel(m4, 3.0 / 16.0 * gauss_norm()) < 1e-12, "order {order}: {m4}");
            }
        }
    }

    #[test]
    fn exact_for_degree_two_n_minus_one() {
        // int x^{2k} e^{-2x^2} = Gamma(k + 1/2) / 2^{k + 1/2}
        let moment = |k: i32| {
            let mut g = PI.sqrt();
            for j in 0..k {
                g *= j as f64 + 0.5;
            }
            g / 2f64.powf(k as f64 + 0.5)
        };
        for order in [4usize, 9, 16] {
            let rule = gauss_hermite_rule(order).unwrap();
            for k in 0..order as i32 {
                let got = rule.integrate(|x| x.powi(2 * k)).unwrap();
                assert!(rel(got, moment(k)) < 1e-12, "order {order} k {k}");
            }
        }
    }

    #[test]
    fn nodes_symmetric_and_sorted() {
        for order in [1, 2, 5, 64, 200, 511, 512] {
            let rule = gauss_hermite_rule(order).unwrap();
            let n = rule.nodes();
            let w = rule.weights();
            assert!(n.windows(2).all(|p| p[0] < p[1]));
            for i in 0..order {
                assert!((n[i] + n[order - 1 - i]).abs() < 1e-12);
                assert_eq!(w[i], w[order - 1 - i]);
                assert!(w[i] >= 0.0);
            }
            assert!(rel(w.iter().sum::<f64>(), gauss_norm()) < 1e-12, "order {order}");
        }
    }

    #[test]
    fn odd_integrand_vanishes() {
        let rule = gauss_hermite_rule(200).unwrap();
        assert_eq!(rule.integrate(|x| x).unwrap(), 0.0);
        assert_eq!(rule.integrate(|x| x.powi(3) / (1.0 + x * x)).unwrap(), 0.0);
    }

    #[test]
    fn rational_integrand_converges() {
        let f = |x: f64| x * x / (1.0 + x * x);
        let a = gauss_hermite_rule(200).unwrap().integrate(f).unwrap();
        let b = gauss_hermite_rule(400).unwrap().integrate(f).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_names_node() {
        let rule = gauss_hermite_rule(3).unwrap();
        let err = rule.integrate(|x| 1.0 / x).unwrap_err();
        assert_eq!(
            err,
            Error::NumericalDomain {
                node: 0.0,
                value: f64::INFINITY
            }
        );
    }

    #[test]
    fn identity_kernel_integrals() {
        let rule = gauss_hermite_rule(50).unwrap();
        let k = kernel_integrals(&MeasurementFunction::Identity, &rule).unwrap();
        let e = KernelIntegrals::identity();
        assert!(rel(k.i_plus, e.i_plus) < 1e-12);
        assert!(rel(k.i_cross, e.i_cross) < 1e-12);
        assert!(rel(k.i_zero, e.i_zero) < 1e-12);
    }

    #[test]
    fn optimal_family_tends_to_identity() {
        let rule = gauss_hermite_rule(100).unwrap();
        let e = KernelIntegrals::identity();
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let k = kernel_integrals(&MeasurementFunction::Optimal { epsilon: eps }, &rule).unwrap();
            let d = rel(k.i_cross, e.i_cross);
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn non_odd_function_rejected() {
        let rule = gauss_hermite_rule(20).unwrap();
        let basis = MeasurementFunction::from_node_values(&rule, vec![1.0; 10]).unwrap();
        assert!(kernel_integrals(&basis, &rule).is_ok());
        let even = MeasurementFunction::custom("cosh", f64::cosh);
        assert!(matches!(kernel_integrals(&even, &rule), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn order_doubling_on_optimal_family() {
        let lo = gauss_hermite_rule(256).unwrap();
        let hi = gauss_hermite_rule(512).unwrap();
        for eps in [0.5, 1.0, 2.96, 3.3] {
            let a = optimal_kernel_integrals(eps, &lo);
            let b = optimal_kernel_integrals(eps, &hi);
            assert!(rel(a.i_plus, b.i_plus) < 1e-12, "eps={eps}");
            assert!(rel(a.i_cross, b.i_cross) < 1e-12, "eps={eps}");
            assert!(rel(a.i_zero, b.i_zero) < 1e-12, "eps={eps}");
        }
    }

    #[test]
    fn default_order_error_is_small() {
        let a = optimal_kernel_integrals(2.96, &gauss_hermite_rule(DEFAULT_ORDER).unwrap());
        let b = optimal_kernel_integrals(2.96, &gauss_hermite_rule(MAX_ORDER).unwrap());
        assert!(rel(a.i_plus, b.i_plus) < 1e-11);
        assert!(rel(a.i_cross, b.i_cross) < 1e-11);
        assert!(rel(a.i_zero, b.i_zero) < 1e-11);
    }

    #[test]
    fn homogeneity_under_scaling() {
        let rule = gauss_hermite_rule(80).unwrap();
        let f = MeasurementFunction::Optimal { epsilon: 1.7 };
        let k = kernel_integrals(&f, &rule).unwrap();
        for c in [-3.0, 0.5, 2.0, 10.0] {
            let kc = kernel_integrals(&f.scaled(c), &rule).unwrap();
            assert!(rel(kc.i_plus, c * k.i_plus) < 1e-12);
            assert!(rel(kc.i_cross, c * c * k.i_cross) < 1e-12);
            assert!(rel(kc.i_zero, c * c * k.i_zero) < 1e-12);
        }
    }
}
