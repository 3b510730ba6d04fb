//! Multipartite continuous-variable Bell tests for GHZ-class photonic states.
//!
//! The crate evaluates three families of Bell inequalities on the states
//! `(|0..0 1..1> + |1..1 0..0>)/sqrt(2)` under photon loss and occupation-basis
//! dephasing, with homodyne quadrature outcomes:
//!
//! * the functional-moment inequality `|<prod (f(x_k) + i g(x_k'))>|^2 <= <prod (f^2 + g^2)>`,
//!   including the optimal local function `x / (1 + eps x^2)` ([`functional_bell`]),
//! * its special case with `f = g = identity` (CFRD),
//! * the Mermin-Klyshko inequality with sign-binned outcomes ([`mk_binning`]).
//!
//! Every closed form is checked against [`oracle`], an exact evaluator that works
//! directly on the Fock-space density matrix built by [`model`].

pub mod cli;
pub mod critical;
pub mod error;
pub mod functional_bell;
pub mod mk_binning;
pub mod model;
pub mod oracle;
pub mod output;
pub mod quadrature;
pub mod variational;

pub use error::{Error, Result};
pub use model::{AngleConfig, DensityMatrix, MeasurementFunction, StateSpec};
pub use oracle::{BellResult, InequalityId};
pub use quadrature::{gauss_hermite_rule, KernelIntegrals, QuadratureRule};

/// `sqrt(2/pi)`, the normalisation of `|psi_0(x)|^2 = sqrt(2/pi) e^{-2x^2}`.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
