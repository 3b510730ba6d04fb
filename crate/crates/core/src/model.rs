//! GHZ-class states, loss and dephasing, and single-mode quadrature operators.
//!
//! Each mode is truncated to `{|0>, |1>}`. The states of interest carry at most
//! one photon per mode and amplitude damping never raises photon number, so the
//! truncation is exact here.
//!
//! Conventions: `a = X + iP`, so the vacuum quadrature variance is `1/4` and
//!
//! ```text
//! psi_0(x) = (2/pi)^{1/4} e^{-x^2}
//! psi_1(x) = (2/pi)^{1/4} 2x e^{-x^2}
//! X^theta  = (a e^{-i theta} + a^dag e^{i theta}) / 2
//! <m| f(X^theta) |n> = e^{i theta (m - n)} int f(x) psi_m(x) psi_n(x) dx
//! ```
//!
//! Basis states of `N` modes are indexed by bitstrings: bit `k` is the photon
//! number of mode `k`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{check_odd, QuadratureRule};
use crate::SQRT_2_OVER_PI;

/// Largest mode count for which a density matrix is materialised.
pub const MAX_MATERIALIZED_MODES: usize = 14;

/// Single-mode operator on `{|0>, |1>}`; `m[row][col] = <row| A |col>`.
pub type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub n_modes: usize,
    pub r_split: usize,
    pub purity: f64,
    pub efficiency: f64,
}

impl StateSpec {
    pub fn new(n_modes: usize, r_split: usize, purity: f64, efficiency: f64) -> Result<Self> {
        let spec = Self {
            n_modes,
            r_split,
            purity,
            efficiency,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Pure state, ideal detectors.
    pub fn ideal(n_modes: usize, r_split: usize) -> Result<Self> {
        Self::new(n_modes, r_split, 1.0, 1.0)
    }

    /// The split the closed forms are written for: `N/2` for even `N`,
    /// `(N-1)/2` for odd `N`.
    pub fn balanced(n_modes: usize, purity: f64, efficiency: f64) -> Result<Self> {
        Self::new(n_modes, n_modes / 2, purity, efficiency)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return invalid("n_modes must be at least 1");
        }
        if self.r_split > self.n_modes {
            return invalid(format!("r_split {} exceeds n_modes {}", self.r_split, self.n_modes));
        }
        if !(0.0..=1.0).contains(&self.purity) {
            return invalid(format!("purity {} outside [0, 1]", self.purity));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return invalid(format!("efficiency {} outside (0, 1]", self.efficiency));
        }
        Ok(())
    }
}

/// A real function of one quadrature outcome.
#[derive(Clone)]
pub enum MeasurementFunction {
    /// `x / (1 + epsilon x^2)`.
    Optimal {
        epsilon: f64,
    },
    Identity,
    /// `+1` for `x >= 0`, `-1` otherwise.
    SignBin,
    /// Values on positive quadrature nodes, extended to `x < 0` by oddness.
    /// Between nodes the function is linearly interpolated (through the origin
    /// below the first node) and decays as `1/x` past the last node.
    Basis {
        nodes: Vec<f64>,
        values: Vec<f64>,
    },
    Scaled {
        factor: f64,
        inner: Box<MeasurementFunction>,
    },
    /// Opaque evaluator; oddness is checked where it matters.
    Custom {
        id: String,
        func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for MeasurementFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl MeasurementFunction {
    pub fn optimal(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("optimal-function epsilon {epsilon} must be positive"));
        }
        Ok(Self::Optimal { epsilon })
    }

    /// Node-valued function on the positive nodes of `rule`.
    pub fn from_node_values(rule: &QuadratureRule, values: Vec<f64>) -> Result<Self> {
        let nodes = rule.positive_nodes().to_vec();
        if nodes.len() != values.len() {
            return invalid(format!("expected {} node values, got {}", nodes.len(), values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("non-finite node value {v}"));
        }
        Ok(Self::Basis { nodes, values })
    }

    pub fn custom(id: impl Into<String>, func: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            id: id.into(),
            func: Arc::new(func),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::Scaled {
            factor,
            inner: Box::new(self.clone()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Optimal { epsilon } => x / (1.0 + epsilon * x * x),
            Self::Identity => x,
            Self::SignBin => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Basis { nodes, values } => basis_eval(nodes, values, x),
            Self::Scaled { factor, inner } => factor * inner.eval(x),
            Self::Custom { func, .. } => func(x),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Optimal { epsilon } => format!("optimal(eps={epsilon})"),
            Self::Identity => "identity".into(),
            Self::SignBin => "sign-bin".into(),
            Self::Basis { nodes, .. } => format!("basis({} nodes)", nodes.len()),
            Self::Scaled { factor, inner } => format!("{factor}*{}", inner.id()),
            Self::Custom { id, .. } => id.clone(),
        }
    }
}

fn basis_eval(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let s = if x < 0.0 { -1.0 } else { 1.0 };
    let ax = x.abs();
    if nodes.is_empty() || ax == 0.0 {
        return 0.0;
    }
    let last = nodes.len() - 1;
    let v = match nodes.binary_search_by(|n| n.total_cmp(&ax)) {
        Ok(i) => values[i],
        Err(0) => values[0] * ax / nodes[0],
        Err(i) if i > last => values[last] * nodes[last] / ax,
        Err(i) => {
            let t = (ax - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
            values[i - 1] + t * (values[i] - values[i - 1])
        }
    };
    s * v
}

/// Per-site quadrature phases. Angles are reduced to `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleConfig {
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
}

pub fn reduce_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

impl AngleConfig {
    pub fn new(theta: Vec<f64>, theta_prime: Vec<f64>) -> Result<Self> {
        if theta.len() != theta_prime.len() {
            return invalid(format!(
                "angle lists differ in length: {} vs {}",
                theta.len(),
                theta_prime.len()
            ));
        }
        if theta.iter().chain(&theta_prime).any(|a| !a.is_finite()) {
            return invalid("angles must be finite");
        }
        Ok(Self {
            theta: theta.into_iter().map(reduce_angle).collect(),
            theta_prime: theta_prime.into_iter().map(reduce_angle).collect(),
        })
    }

    /// `theta_k = phase`, with `theta'_k = theta_k + pi/2` for `k < r` and
    /// `theta_k - pi/2` for `k >= r`: the orthogonal pattern that maximises
    /// the left-hand side for the split-`r` GHZ state.
    pub fn orthogonal(n: usize, r: usize, phase: f64) -> Self {
        let theta = vec![phase; n];
        let theta_prime = (0..n)
            .map(|k| if k < r { phase + PI / 2.0 } else { phase - PI / 2.0 })
            .collect();
        Self::new(theta, theta_prime).expect("finite angles")
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Transition integrals of a real function against the two Fock wavefunctions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionMoments {
    /// `int f psi_0^2`
    pub m00: f64,
    /// `int f psi_0 psi_1`
    pub m01: f64,
    /// `int f psi_1^2`
    pub m11: f64,
}

impl FunctionMoments {
    /// Sums mirror node pairs so parity cancellations are exact.
    pub fn of(f: impl Fn(f64) -> f64, rule: &QuadratureRule) -> Result<Self> {
        let eval = |x: f64| {
            let v = f(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericalDomain { node: x, value: v })
            }
        };
        let (nodes, weights) = (rule.nodes(), rule.weights());
        let n = nodes.len();
        let mut m = [0.0f64; 3];
        if n % 2 == 1 {
            m[0] += weights[n / 2] * eval(0.0)?;
        }
        for i in (0..n / 2).rev() {
            let j = n - 1 - i;
            let (x, w) = (nodes[j], weights[j]);
            let (vp, vm) = (eval(x)?, eval(nodes[i])?);
            m[0] += w * (vp + vm);
            m[1] += w * 2.0 * x * (vp - vm);
            m[2] += w * 4.0 * x * x * (vp + vm);
        }
        Ok(Self {
            m00: SQRT_2_OVER_PI * m[0],
            m01: SQRT_2_OVER_PI * m[1],
            m11: SQRT_2_OVER_PI * m[2],
        })
    }

    /// Moments of a measurement function. Sign binning uses its closed form,
    /// since the jump at the origin defeats Gauss-Hermite convergence.
    pub fn for_function(f: &MeasurementFunction, rule: &QuadratureRule) -> Result<Self> {
        match f {
            MeasurementFunction::SignBin => Ok(Self {
                m00: 0.0,
                m01: SQRT_2_OVER_PI,
                m11: 0.0,
            }),
            MeasurementFunction::Scaled { factor, inner } => {
                let m = Self::for_function(inner, rule)?;
                Ok(Self {
                    m00: factor * m.m00,
                    m01: factor * m.m01,
                    m11: factor * m.m11,
                })
            }
            _ => Self::of(|x| f.eval(x), rule),
        }
    }

    /// Matrix of `f(X^theta)` on `{|0>, |1>}`.
    pub fn rotated(&self, theta: f64) -> Mat2 {
        let up = Complex64::from_polar(1.0, theta);
        [
            [Complex64::new(self.m00, 0.0), up.conj() * self.m01],
            [up * self.m01, Complex64::new(self.m11, 0.0)],
        ]
    }
}

/// `<m| f(X^theta) |n>` for `m, n` in `{0, 1}`.
pub fn single_mode_element(
    f: &MeasurementFunction,
    m: usize,
    n: usize,
    theta: f64,
    rule: &QuadratureRule,
) -> Result<Complex64> {
    if m > 1 || n > 1 {
        return invalid(format!("Fock indices ({m}, {n}) outside {{0, 1}}"));
    }
    let moments = FunctionMoments::for_function(f, rule)?;
    Ok(moments.rotated(theta)[m][n])
}

/// Site operators entering the two sides of the functional inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteOperators {
    /// `f(X^theta) + i g(X^theta')`.
    pub lhs: Mat2,
    /// `f(X^theta)^2 + g(X^theta')^2`.
    pub rhs: Mat2,
}

/// Precomputed moments of `f`, `g`, `f^2` and `g^2`, reused across sites.
#[derive(Debug, Clone, Copy)]
pub struct PairMoments {
    pub f: FunctionMoments,
    pub g: FunctionMoments,
    pub f_sq: FunctionMoments,
    pub g_sq: FunctionMoments,
}

impl PairMoments {
    pub fn new(f: &MeasurementFunction, g: &MeasurementFunction, rule: &QuadratureRule) -> Result<Self> {
        check_odd(f, rule)?;
        check_odd(g, rule)?;
        Ok(Self {
            f: FunctionMoments::for_function(f, rule)?,
            g: FunctionMoments::for_function(g, rule)?,
            f_sq: FunctionMoments::of(|x| f.eval(x).powi(2), rule)?,
            g_sq: FunctionMoments::of(|x| g.eval(x).powi(2), rule)?,
        })
    }

    pub fn site(&self, theta: f64, theta_prime: f64) -> SiteOperators {
        let i = Complex64::i();
        let fa = self.f.rotated(theta);
        let ga = self.g.rotated(theta_prime);
        let fq = self.f_sq.rotated(theta);
        let gq = self.g_sq.rotated(theta_prime);
        let mut lhs = [[ZERO; 2]; 2];
        let mut rhs = [[ZERO; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                lhs[r][c] = fa[r][c] + i * ga[r][c];
                rhs[r][c] = fq[r][c] + gq[r][c];
            }
        }
        SiteOperators { lhs, rhs }
    }
}

pub fn site_operator(
    f: &MeasurementFunction,
    g: &MeasurementFunction,
    theta: f64,
    theta_prime: f64,
    rule: &QuadratureRule,
) -> Result<SiteOperators> {
    Ok(PairMoments::new(f, g, rule)?.site(theta, theta_prime))
}

/// Kraus operators `K0 = |0><0| + sqrt(eta)|1><1|`, `K1 = sqrt(1-eta)|0><1|`.
pub fn amplitude_damping_kraus(eta: f64) -> [[[f64; 2]; 2]; 2] {
    [[[1.0, 0.0], [0.0, eta.sqrt()]], [[0.0, (1.0 - eta).sqrt()], [0.0, 0.0]]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entry {
    pub ket: u64,
    pub bra: u64,
    pub value: Complex64,
}

/// Density operator on `N` truncated modes, stored as sparse `|ket><bra|` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_modes: usize,
    entries: Vec<Entry>,
}

impl DensityMatrix {
    pub fn from_map(n_modes: usize, map: BTreeMap<(u64, u64), Complex64>) -> Result<Self> {
        if n_modes == 0 {
            return invalid("density matrix needs at least one mode");
        }
        if n_modes > MAX_MATERIALIZED_MODES {
            return Err(Error::ResourceLimit(format!(
                "{n_modes} modes exceeds the {MAX_MATERIALIZED_MODES}-mode limit"
            )));
        }
        let dim = 1u64 << n_modes;
        let mut entries = Vec::with_capacity(map.len());
        for ((ket, bra), value) in map {
            if ket >= dim || bra >= dim {
                return invalid(format!("basis index ({ket}, {bra}) outside dimension {dim}"));
            }
            if value != ZERO {
                entries.push(Entry { ket, bra, value });
            }
        }
        Ok(Self { n_modes, entries })
    }

    pub fn vacuum(n_modes: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        map.insert((0, 0), Complex64::new(1.0, 0.0));
        Self::from_map(n_modes, map)
    }

    /// Tensor product of single-mode states.
    pub fn product(sites: &[Mat2]) -> Result<Self> {
        let n = sites.len();
        if n > MAX_MATERIALIZED_MODES {
            return Err(Error::ResourceLimit(format!(
                "{n} modes exceeds the {MAX_MATERIALIZED_MODES}-mode limit"
            )));
        }
        let dim = 1u64 << n;
        let mut map = BTreeMap::new();
        for ket in 0..dim {
            for bra in 0..dim {
                let mut v = Complex64::new(1.0, 0.0);
                for (k, s) in sites.iter().enumerate() {
                    v *= s[((ket >> k) & 1) as usize][((bra >> k) & 1) as usize];
                }
                map.insert((ket, bra), v);
            }
        }
        Self::from_map(n, map)
    }

    /// Convex combination `sum_i w_i rho_i`.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self> {
        let Some((_, first)) = parts.first() else {
            return invalid("empty mixture");
        };
        let n = first.n_modes;
        let mut map: BTreeMap<(u64, u64), Complex64> = BTreeMap::new();
        for (w, rho) in parts {
            if rho.n_modes != n {
                return invalid("mixture components differ in mode count");
            }
            for e in &rho.entries {
                *map.entry((e.ket, e.bra)).or_insert(ZERO) += e.value * *w;
            }
        }
        Self::from_map(n, map)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        1 << self.n_modes
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, ket: u64, bra: u64) -> Complex64 {
        self.entries
            .binary_search_by(|e| (e.ket, e.bra).cmp(&(ket, bra)))
            .map(|i| self.entries[i].value)
            .unwrap_or(ZERO)
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.iter().filter(|e| e.ket == e.bra).map(|e| e.value).sum()
    }

    /// Largest `|rho_ab - conj(rho_ba)|`.
    pub fn hermiticity_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| (e.value - self.get(e.bra, e.ket).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for e in &self.entries {
            m[(e.ket as usize, e.bra as usize)] = e.value;
        }
        m
    }

    /// Smallest eigenvalue of the Hermitian part. Intended for validation at
    /// small `N`; fails above ten modes.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.n_modes > 10 {
            return Err(Error::ResourceLimit(
                "dense eigen-decomposition limited to 10 modes".into(),
            ));
        }
        let m = self.to_dense();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Independent amplitude damping on every mode.
    pub fn apply_loss(&self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return invalid(format!("efficiency {eta} outside [0, 1]"));
        }
        if eta == 1.0 {
            return Ok(self.clone());
        }
        let sqrt_eta = eta.sqrt();
        let mut map: BTreeMap<(u64, u64), Complex64> = BTreeMap::new();
        for e in &self.entries {
            // Coherences between 0 and 1 pick up sqrt(eta); modes occupied in
            // both ket and bra either survive (eta) or decay to |0><0| (1-eta).
            let both = e.ket & e.bra;
            let single = (e.ket ^ e.bra).count_ones();
            let base = e.value * sqrt_eta.powi(single as i32);
            let occupied: Vec<u32> = (0..self.n_modes as u32).filter(|k| (both >> k) & 1 == 1).collect();
            for mask in 0u64..(1u64 << occupied.len()) {
                let mut ket = e.ket;
                let mut bra = e.bra;
                let mut w = 1.0;
                for (j, &k) in occupied.iter().enumerate() {
                    if (mask >> j) & 1 == 1 {
                        ket &= !(1 << k);
                        bra &= !(1 << k);
                        w *= 1.0 - eta;
                    } else {
                        w *= eta;
                    }
                }
                if w != 0.0 {
                    *map.entry((ket, bra)).or_insert(ZERO) += base * w;
                }
            }
        }
        Self::from_map(self.n_modes, map)
    }

    /// JSON debug dump with bitstring labels; character `k` is mode `k`.
    pub fn to_json(&self) -> serde_json::Value {
        let label = |b: u64| -> String {
            (0..self.n_modes)
                .map(|k| if (b >> k) & 1 == 1 { '1' } else { '0' })
                .collect()
        };
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|e| {
                serde_json::json!({
                    "ket": label(e.ket),
                    "bra": label(e.bra),
                    "re": e.value.re,
                    "im": e.value.im,
                })
            })
            .collect();
        serde_json::json!({ "n_modes": self.n_modes, "entries": entries })
    }
}

/// Bit pattern of the branch with modes `r..N` occupied.
pub fn branch_upper(n: usize, r: usize) -> u64 {
    ((1u64 << n) - 1) & !((1u64 << r) - 1)
}

/// Bit pattern of the branch with modes `0..r` occupied.
pub fn branch_lower(r: usize) -> u64 {
    (1u64 << r) - 1
}

/// `p |psi><psi| + (1-p) rho_mix`, followed by loss on every mode, where
/// `|psi> = (|0^r 1^{N-r}> + |1^r 0^{N-r}>)/sqrt(2)` and `rho_mix` is the equal
/// mixture of the two branches.
pub fn density_matrix(spec: &StateSpec) -> Result<DensityMatrix> {
    spec.validate()?;
    let n = spec.n_modes;
    if n > MAX_MATERIALIZED_MODES {
        return Err(Error::ResourceLimit(format!(
            "{n} modes exceeds the {MAX_MATERIALIZED_MODES}-mode limit"
        )));
    }
    let a = branch_upper(n, spec.r_split);
    let b = branch_lower(spec.r_split);
    let half = Complex64::new(0.5, 0.0);
    let coh = Complex64::new(0.5 * spec.purity, 0.0);
    let mut map = BTreeMap::new();
    map.insert((a, a), half);
    map.insert((b, b), half);
    map.insert((a, b), coh);
    map.insert((b, a), coh);
    DensityMatrix::from_map(n, map)?.apply_loss(spec.efficiency)
}
