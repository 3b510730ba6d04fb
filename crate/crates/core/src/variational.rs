//! Free-form maximisation of the functional Bell ratio over odd measurement
//! functions sampled at the positive quadrature nodes.
//!
//! The optimizer works in the variables `z_i = sqrt(w_i) f(x_i)`, in which the
//! ratio's curvature is roughly isotropic, and fixes the scale freedom of the
//! ratio by pinning the value at the smallest positive node.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    density_matrix, AngleConfig, DensityMatrix, FunctionMoments, MeasurementFunction, PairMoments, StateSpec,
};
use crate::oracle::{self, BellResult, InequalityId};
use crate::output::{csv_table, fmt_csv};
use crate::quadrature::QuadratureRule;
use crate::SQRT_2_OVER_PI;

/// Largest mode count the optimizer accepts.
pub const MAX_MODES: usize = 10;
/// Central-difference step relative to the variable scale.
pub const GRADIENT_STEP: f64 = 1e-6;
/// Convergence threshold on the max-norm of the node-value gradient.
pub const GRADIENT_TOL: f64 = 1e-7;
pub const MAX_ITERATIONS: usize = 500;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Nodes whose weight is below this fraction of the largest cannot move the
/// ratio at double precision and keep their initial values.
const ACTIVE_WEIGHT_FLOOR: f64 = 1e-16;

/// Odd function given by its values at the positive quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeFunction {
    pub node_values: Vec<f64>,
    /// Slope `f(x_0) / x_0` at the smallest positive node after gauge fixing.
    pub norm_gauge: f64,
}

impl FreeFunction {
    /// Samples `f` at the positive nodes of `rule` and fixes the gauge to 1.
    pub fn sample(f: &MeasurementFunction, rule: &QuadratureRule) -> Result<Self> {
        let values = rule.positive_nodes().iter().map(|&x| f.eval(x)).collect();
        Self::new(values, rule)
    }

    /// Gauge-fixed function from raw node values.
    pub fn new(node_values: Vec<f64>, rule: &QuadratureRule) -> Result<Self> {
        Self {
            node_values,
            norm_gauge: 1.0,
        }
        .gauged(rule)
    }

    fn gauged(mut self, rule: &QuadratureRule) -> Result<Self> {
        let nodes = rule.positive_nodes();
        if self.node_values.len() != nodes.len() || nodes.is_empty() {
            return invalid(format!(
                "expected {} node values, got {}",
                nodes.len(),
                self.node_values.len()
            ));
        }
        if let Some(v) = self.node_values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("non-finite node value {v}"));
        }
        if !(self.norm_gauge.is_finite() && self.norm_gauge != 0.0) {
            return invalid(format!(
                "gauge slope must be finite and non-zero, got {}",
                self.norm_gauge
            ));
        }
        let v0 = self.node_values[0];
        if v0 == 0.0 {
            return invalid("function vanishes at the smallest node; the gauge cannot be fixed");
        }
        let c = self.norm_gauge * nodes[0] / v0;
        self.node_values.iter_mut().for_each(|v| *v *= c);
        Ok(self)
    }

    pub fn to_measurement(&self, rule: &QuadratureRule) -> Result<MeasurementFunction> {
        MeasurementFunction::from_node_values(rule, self.node_values.clone())
    }

    /// `node,value` table.
    pub fn to_csv(&self, rule: &QuadratureRule) -> String {
        let rows: Vec<Vec<String>> = rule
            .positive_nodes()
            .iter()
            .zip(&self.node_values)
            .map(|(&x, &v)| vec![fmt_csv(x), fmt_csv(v)])
            .collect();
        csv_table(&["node", "value"], &rows)
    }
}

/// Oracle ratio as a function of node values, for a fixed state and the
/// orthogonal angle pattern.
struct Objective<'a> {
    rho: DensityMatrix,
    angles: AngleConfig,
    nodes: &'a [f64],
    weights: &'a [f64],
}

impl<'a> Objective<'a> {
    fn new(spec: &StateSpec, rule: &'a QuadratureRule) -> Result<Self> {
        spec.validate()?;
        if spec.n_modes > MAX_MODES {
            return invalid(format!(
                "variational optimisation supports N <= {MAX_MODES}, got {}",
                spec.n_modes
            ));
        }
        Ok(Self {
            rho: density_matrix(spec)?,
            angles: AngleConfig::orthogonal(spec.n_modes, spec.r_split, 0.0),
            nodes: rule.positive_nodes(),
            weights: rule.positive_weights(),
        })
    }

    /// Moments of the odd extension of `values`; the factor 2 folds in the
    /// negative nodes.
    fn moments(&self, values: &[f64]) -> (FunctionMoments, FunctionMoments) {
        let (mut m01, mut s00, mut s11) = (0.0, 0.0, 0.0);
        for ((&x, &w), &v) in self.nodes.iter().zip(self.weights).zip(values) {
            m01 += w * 2.0 * x * v;
            s00 += w * v * v;
            s11 += w * 4.0 * x * x * v * v;
        }
        let c = 2.0 * SQRT_2_OVER_PI;
        (
            FunctionMoments {
                m00: 0.0,
                m01: c * m01,
                m11: 0.0,
            },
            FunctionMoments {
                m00: c * s00,
                m01: 0.0,
                m11: c * s11,
            },
        )
    }

    fn sides(&self, f: &[f64], g: &[f64]) -> Result<(f64, f64)> {
        let (fm, fq) = self.moments(f);
        let (gm, gq) = self.moments(g);
        let moments = PairMoments {
            f: fm,
            g: gm,
            f_sq: fq,
            g_sq: gq,
        };
        oracle::sides(&self.rho, &moments, &self.angles)
    }

    fn ratio(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let (lhs, rhs) = self.sides(f, g)?;
        if rhs <= 0.0 {
            return invalid("right-hand side vanishes for this function");
        }
        Ok(lhs / rhs)
    }

    fn result(&self, f: &[f64], g: &[f64], label: &str) -> Result<BellResult> {
        let (lhs, rhs) = self.sides(f, g)?;
        Ok(BellResult::new(lhs, rhs, InequalityId::Functional, label.into()).with_angles(self.angles.clone()))
    }
}

/// Maps optimizer variables to node values. The variables are the scaled
/// values `sqrt(w) f` of the active nodes; with `relaxed` a second block holds
/// `g` (which carries no gauge).
struct Layout {
    sqrt_w: Vec<f64>,
    f_active: Vec<usize>,
    g_active: Vec<usize>,
}

impl Layout {
    fn new(weights: &[f64], relaxed: bool) -> Self {
        let w_max = weights.iter().cloned().fold(0.0, f64::max);
        let active: Vec<usize> = (0..weights.len())
            .filter(|&i| weights[i] > ACTIVE_WEIGHT_FLOOR * w_max)
            .collect();
        Self {
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            f_active: active.iter().copied().filter(|&i| i != 0).collect(),
            g_active: if relaxed { active } else { Vec::new() },
        }
    }

    fn dim(&self) -> usize {
        self.f_active.len() + self.g_active.len()
    }

    fn pack(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self.f_active.iter().map(|&i| self.sqrt_w[i] * f[i]).collect();
        z.extend(self.g_active.iter().map(|&i| self.sqrt_w[i] * g[i]));
        z
    }

    fn unpack(&self, z: &[f64], f: &mut [f64], g: &mut [f64]) {
        let (zf, zg) = z.split_at(self.f_active.len());
        for (&i, &v) in self.f_active.iter().zip(zf) {
            f[i] = v / self.sqrt_w[i];
        }
        for (&i, &v) in self.g_active.iter().zip(zg) {
            g[i] = v / self.sqrt_w[i];
        }
    }

    /// Converts a gradient in `z` to a gradient in raw node values.
    fn raw_gradient_norm(&self, grad_z: &[f64]) -> f64 {
        self.f_active
            .iter()
            .chain(&self.g_active)
            .zip(grad_z)
            .map(|(&i, &g)| (g * self.sqrt_w[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluation state of the optimizer: current node values plus the layout.
struct Problem<'a> {
    objective: Objective<'a>,
    layout: Layout,
    f: Vec<f64>,
    g: Vec<f64>,
    relaxed: bool,
}

impl Problem<'_> {
    fn value(&mut self, z: &[f64]) -> Result<f64> {
        self.layout.unpack(z, &mut self.f, &mut self.g);
        if self.relaxed {
            self.objective.ratio(&self.f, &self.g)
        } else {
            self.objective.ratio(&self.f, &self.f)
        }
    }

    fn gradient(&mut self, z: &[f64], step: f64) -> Result<Vec<f64>> {
        central_gradient(|x| self.value(x), z, step)
    }
}

/// Central-difference gradient with a uniform step relative to the
/// variable scale.
fn central_gradient(mut value: impl FnMut(&[f64]) -> Result<f64>, z: &[f64], relative_step: f64) -> Result<Vec<f64>> {
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let h = relative_step * scale;
    let mut x = z.to_vec();
    let mut grad = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        x[j] = z[j] + h;
        let up = value(&x)?;
        x[j] = z[j] - h;
        let down = value(&x)?;
        x[j] = z[j];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationalOutcome {
    pub function: FreeFunction,
    /// Second function of the relaxed mode; equal to `function` otherwise.
    pub partner: FreeFunction,
    pub result: BellResult,
    pub iterations: usize,
    /// Max-norm of the node-value gradient at the returned point.
    pub gradient_norm: f64,
    pub converged: bool,
    /// Ratio after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub gradient_step: f64,
    /// Optimise `f` and `g` independently instead of enforcing `f = g`.
    pub relaxed: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS,
            gradient_tol: GRADIENT_TOL,
            gradient_step: GRADIENT_STEP,
            relaxed: false,
        }
    }
}

/// Runs the gauge-fixed BFGS ascent and reports the best point reached,
/// converged or not.
pub fn optimize_function_with(
    spec: &StateSpec,
    rule: &QuadratureRule,
    init: &FreeFunction,
    options: &OptimizerOptions,
) -> Result<VariationalOutcome> {
    let init = init.clone().gauged(rule)?;
    let objective = Objective::new(spec, rule)?;
    let layout = Layout::new(objective.weights, options.relaxed);
    if layout.dim() == 0 {
        return invalid("quadrature rule has no free nodes to optimise");
    }
    let mut problem = Problem {
        objective,
        layout,
        f: init.node_values.clone(),
        g: init.node_values.clone(),
        relaxed: options.relaxed,
    };
    let step = options.gradient_step;
    let mut z = problem.layout.pack(&init.node_values, &init.node_values);
    let n = z.len();
    // Minimise phi = -ratio.
    let mut phi = -problem.value(&z)?;
    let mut grad: Vec<f64> = problem.gradient(&z, step)?.iter().map(|g| -g).collect();
    let mut h_inv = identity(n);
    let mut history = vec![-phi];
    let mut iterations = 0;
    let mut gnorm = problem.layout.raw_gradient_norm(&grad);
    let mut fresh = true;
    while gnorm >= options.gradient_tol && iterations < options.max_iterations {
        let mut dir = mat_vec(&h_inv, &grad).iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            h_inv = identity(n);
            dir = grad.iter().map(|v| -v).collect();
            slope = dot(&grad, &dir);
            fresh = true;
        }
        let Some((t, phi_new)) = backtrack(&mut problem, &z, &dir, phi, slope)? else {
            if fresh {
                break;
            }
            h_inv = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = dir.iter().map(|d| t * d).collect();
        let z_new: Vec<f64> = z.iter().zip(&s).map(|(a, b)| a + b).collect();
        let grad_new: Vec<f64> = problem.gradient(&z_new, step)?.iter().map(|g| -g).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if fresh {
                // Scale the initial inverse Hessian to the observed curvature.
                let scale = sy / dot(&y, &y);
                h_inv
                    .iter_mut()
                    .for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
            fresh = false;
        }
        z = z_new;
        grad = grad_new;
        phi = phi_new;
        history.push(-phi);
        iterations += 1;
        gnorm = problem.layout.raw_gradient_norm(&grad);
    }
    problem.layout.unpack(&z, &mut problem.f, &mut problem.g);
    let (f, g) = (problem.f.clone(), problem.g.clone());
    let label = if options.relaxed {
        "variational-relaxed"
    } else {
        "variational"
    };
    let result = if options.relaxed {
        problem.objective.result(&f, &g, label)?
    } else {
        problem.objective.result(&f, &f, label)?
    };
    let partner = FreeFunction {
        node_values: if options.relaxed { g } else { f.clone() },
        norm_gauge: init.norm_gauge,
    };
    Ok(VariationalOutcome {
        function: FreeFunction {
            node_values: f,
            norm_gauge: init.norm_gauge,
        },
        partner,
        result,
        iterations,
        gradient_norm: gnorm,
        converged: gnorm < options.gradient_tol,
        history,
    })
}

/// Maximises the oracle ratio over node values with `f = g`.
///
/// Fails with [`Error::OptimizerNotConverged`], carrying the best point, when
/// the gradient tolerance is not met within the iteration budget.
pub fn optimize_function(
    spec: &StateSpec,
    rule: &QuadratureRule,
    init: &FreeFunction,
) -> Result<(FreeFunction, BellResult)> {
    let out = optimize_function_with(spec, rule, init, &OptimizerOptions::default())?;
    if out.converged {
        Ok((out.function, out.result))
    } else {
        Err(Error::OptimizerNotConverged {
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            best_ratio: out.result.ratio,
            best_values: out.function.node_values,
        })
    }
}

/// Armijo backtracking from `t = 1`; `None` when no decrease is found.
fn backtrack(problem: &mut Problem<'_>, z: &[f64], dir: &[f64], phi: f64, slope: f64) -> Result<Option<(f64, f64)>> {
    let mut t = 1.0;
    let mut trial = vec![0.0; z.len()];
    for _ in 0..MAX_BACKTRACKS {
        for ((out, a), d) in trial.iter_mut().zip(z).zip(dir) {
            *out = a + t * d;
        }
        // Large steps can drive the right-hand side to zero; treat as a failed trial.
        if let Ok(v) = problem.value(&trial) {
            let phi_new = -v;
            if phi_new.is_finite() && phi_new <= phi + ARMIJO_C1 * t * slope && phi_new < phi {
                return Ok(Some((t, phi_new)));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Max-norm of the node-value gradient of the ratio at fixed gauge (`f = g`),
/// after normalising `f` to the gauge; zero at a stationary point.
pub fn euler_lagrange_residual(f: &FreeFunction, spec: &StateSpec, rule: &QuadratureRule) -> Result<f64> {
    let f = f.clone().gauged(rule)?;
    let objective = Objective::new(spec, rule)?;
    let layout = Layout::new(objective.weights, false);
    let mut problem = Problem {
        objective,
        layout,
        f: f.node_values.clone(),
        g: f.node_values.clone(),
        relaxed: false,
    };
    let z = problem.layout.pack(&f.node_values, &f.node_values);
    let grad = problem.gradient(&z, GRADIENT_STEP)?;
    Ok(problem.layout.raw_gradient_norm(&grad))
}

/// Relative weighted distance `sqrt(sum w (f-h)^2 / sum w h^2)` over the
/// positive nodes, with both functions gauge-fixed.
pub fn weighted_l2_error(f: &FreeFunction, h: &FreeFunction, rule: &QuadratureRule) -> Result<f64> {
    let f = f.clone().gauged(rule)?;
    let h = h.clone().gauged(rule)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&w, a), b) in rule.positive_weights().iter().zip(&f.node_values).zip(&h.node_values) {
        num += w * (a - b) * (a - b);
        den += w * b * b;
    }
    Ok((num / den).sqrt())
}

/// `eps` of the member of `x / (1 + eps x^2)` closest to `f` in
/// [`weighted_l2_error`], searched on `[lo, hi]`.
pub fn fit_epsilon(f: &FreeFunction, rule: &QuadratureRule, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let distance = |eps: f64| -> Result<f64> {
        let h = FreeFunction::sample(&MeasurementFunction::optimal(eps)?, rule)?;
        weighted_l2_error(f, &h, rule)
    };
    let best = oracle::golden_section_max(|eps| Ok(-distance(eps)?), lo, hi, 1e-10)?;
    Ok((best, distance(best)?))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
