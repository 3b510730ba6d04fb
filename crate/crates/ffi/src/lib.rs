//! C ABI for `cvbell`.
//!
//! Every function returns a [`CvbellStatus`]; on failure the message is
//! available from [`cvbell_last_error`] on the same thread. Handles are
//! created by `*_new` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cvbell::critical::{self, Critical};
use cvbell::error::Error;
use cvbell::functional_bell::{bell_value_with, cfrd_bell_value, ClosedFormOptions};
use cvbell::mk_binning::{mk_bell_value, mk_critical_product, mk_evaluate, mk_optimal_angles};
use cvbell::model::{density_matrix, AngleConfig, DensityMatrix, MeasurementFunction, StateSpec};
use cvbell::oracle::{self, BellResult, InequalityId};
use cvbell::quadrature::{gauss_hermite_rule, QuadratureRule};
use cvbell::variational::{self, FreeFunction};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvbellStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericalDomain = 2,
    ResourceLimit = 3,
    /// An iteration or the optimizer stopped before meeting its tolerance.
    Convergence = 4,
    Internal = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvbellInequality {
    Functional = 0,
    Cfrd = 1,
    Mk = 2,
}

impl From<CvbellInequality> for InequalityId {
    fn from(i: CvbellInequality) -> Self {
        match i {
            CvbellInequality::Functional => InequalityId::Functional,
            CvbellInequality::Cfrd => InequalityId::Cfrd,
            CvbellInequality::Mk => InequalityId::Mk,
        }
    }
}

/// Both sides of an inequality and their ratio.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvbellResult {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Parameter of `x/(1+eps x^2)`; NaN when no such function was used.
    pub epsilon: f64,
    pub violates: bool,
}

impl CvbellResult {
    fn from_result(r: &BellResult, epsilon: f64) -> Self {
        Self {
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            epsilon,
            violates: r.violates(),
        }
    }
}

/// Gauss-Hermite quadrature rule (opaque).
pub struct CvbellRule(QuadratureRule);

/// GHZ-class state with loss and dephasing (opaque).
pub struct CvbellState {
    spec: StateSpec,
    rho: DensityMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CvbellStatus {
    match e {
        Error::InvalidArgument(_) => CvbellStatus::InvalidArgument,
        Error::NumericalDomain { .. } => CvbellStatus::NumericalDomain,
        Error::ResourceLimit(_) => CvbellStatus::ResourceLimit,
        Error::Convergence { .. } | Error::OptimizerNotConverged { .. } => CvbellStatus::Convergence,
        Error::Internal(_) => CvbellStatus::Internal,
    }
}

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (CvbellStatus, String)>) -> CvbellStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CvbellStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CvbellStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (CvbellStatus, String)>;
}

impl<T> IntoFfi<T> for cvbell::error::Result<T> {
    fn ffi(self) -> Result<T, (CvbellStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(name: &str) -> (CvbellStatus, String) {
    (CvbellStatus::NullPointer, format!("{name} is NULL"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (CvbellStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write<T>(p: *mut T, name: &str, value: T) -> Result<(), (CvbellStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a success.
/// Valid until the next `cvbell_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cvbell_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvbell_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Builds a Gauss-Hermite rule of `order` nodes (1..=512).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cvbell_rule_new(order: usize, out: *mut *mut CvbellRule) -> CvbellStatus {
    guard(|| {
        let rule = gauss_hermite_rule(order).ffi()?;
        write(out, "out", Box::into_raw(Box::new(CvbellRule(rule))))
    })
}

/// # Safety
/// `rule` must come from [`cvbell_rule_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cvbell_rule_free(rule: *mut CvbellRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Materialises the state with `n` modes, split `r`, purity `p` and efficiency `eta`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cvbell_state_new(
    n: usize,
    r: usize,
    p: f64,
    eta: f64,
    out: *mut *mut CvbellState,
) -> CvbellStatus {
    guard(|| {
        let spec = StateSpec::new(n, r, p, eta).ffi()?;
        let rho = density_matrix(&spec).ffi()?;
        write(out, "out", Box::into_raw(Box::new(CvbellState { spec, rho })))
    })
}

/// # Safety
/// `state` must come from [`cvbell_state_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cvbell_state_free(state: *mut CvbellState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Closed-form value for a balanced state (`r = floor(N/2)`), with the
/// mixture purity model and the self-consistent `eps`. MK ignores `rule`
/// (which may then be NULL).
///
/// # Safety
/// `rule` must be a live handle (or NULL for MK); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvbell_closed_form(
    inequality: CvbellInequality,
    n: usize,
    p: f64,
    eta: f64,
    rule: *const CvbellRule,
    out: *mut CvbellResult,
) -> CvbellStatus {
    guard(|| {
        let spec = StateSpec::balanced(n, p, eta).ffi()?;
        let result = match inequality {
            CvbellInequality::Mk => {
                let s = mk_bell_value(&spec).ffi()?;
                CvbellResult::from_result(&BellResult::new(s, 1.0, InequalityId::Mk, "sign-bin".into()), f64::NAN)
            }
            CvbellInequality::Functional => {
                let rule = &deref(rule, "rule")?.0;
                let v = bell_value_with(&spec, rule, &ClosedFormOptions::default()).ffi()?;
                CvbellResult::from_result(&v.result, v.epsilon)
            }
            CvbellInequality::Cfrd => {
                let rule = &deref(rule, "rule")?.0;
                CvbellResult::from_result(&cfrd_bell_value(&spec, rule).ffi()?, f64::NAN)
            }
        };
        write(out, "out", result)
    })
}

/// Exact Fock-space evaluation at the optimal angles: the functional
/// inequality maximised over `eps`, CFRD with `f = g = x`, and MK with
/// sign-binned outcomes.
///
/// # Safety
/// `state` and `rule` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvbell_oracle(
    inequality: CvbellInequality,
    state: *const CvbellState,
    rule: *const CvbellRule,
    out: *mut CvbellResult,
) -> CvbellStatus {
    guard(|| {
        let state = deref(state, "state")?;
        let rule = &deref(rule, "rule")?.0;
        let (n, r) = (state.spec.n_modes, state.spec.r_split);
        let result = match inequality {
            CvbellInequality::Functional => {
                let (eps, res) = oracle::optimize_epsilon_numeric(&state.spec, rule).ffi()?;
                CvbellResult::from_result(&res, eps)
            }
            CvbellInequality::Cfrd => {
                let f = MeasurementFunction::Identity;
                let res = oracle::evaluate(&state.rho, &f, &f, &AngleConfig::orthogonal(n, r, 0.0), rule).ffi()?;
                CvbellResult::from_result(&res, f64::NAN)
            }
            CvbellInequality::Mk => {
                let res = mk_evaluate(&state.rho, &mk_optimal_angles(n, r).ffi()?).ffi()?;
                CvbellResult::from_result(
                    &BellResult::new(res.s_value, 1.0, InequalityId::Mk, "sign-bin".into()),
                    f64::NAN,
                )
            }
        };
        write(out, "out", result)
    })
}

/// Smallest efficiency with a violation at purity `fixed`, or with
/// `purity` set, the smallest purity at efficiency `fixed`. `*found` is
/// false (and `*value` NaN) when no value up to one violates.
///
/// # Safety
/// `rule` must be a live handle; `value` and `found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvbell_critical(
    inequality: CvbellInequality,
    n: usize,
    fixed: f64,
    purity: bool,
    rule: *const CvbellRule,
    value: *mut f64,
    found: *mut bool,
) -> CvbellStatus {
    guard(|| {
        let rule = &deref(rule, "rule")?.0;
        let id = inequality.into();
        let c = if purity {
            critical::critical_purity(n, fixed, id, rule)
        } else {
            critical::critical_efficiency(n, fixed, id, rule)
        }
        .ffi()?;
        let (v, ok) = match c {
            Critical::Value(v) => (v, true),
            Critical::NoViolation => (f64::NAN, false),
        };
        write(value, "value", v)?;
        write(found, "found", ok)
    })
}

/// Critical `eta p^2` of the binned MK inequality, `2^((1-2N)/N) pi`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvbell_mk_critical_product(n: usize, out: *mut f64) -> CvbellStatus {
    guard(|| write(out, "out", mk_critical_product(n).ffi()?))
}

/// Optimises `f = g` freely on the positive quadrature nodes, starting from
/// `f(x) = x`. Node values go to `values` (`capacity` doubles; the required
/// length is written to `*len`). On non-convergence the best point is still
/// written and `CVBELL_STATUS_CONVERGENCE` is returned.
///
/// # Safety
/// `state` and `rule` must be live handles; `values` must hold `capacity`
/// doubles (may be NULL when `capacity` is 0); `len` and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvbell_optimize(
    state: *const CvbellState,
    rule: *const CvbellRule,
    values: *mut f64,
    capacity: usize,
    len: *mut usize,
    out: *mut CvbellResult,
) -> CvbellStatus {
    guard(|| {
        let state = deref(state, "state")?;
        let rule = &deref(rule, "rule")?.0;
        let needed = rule.positive_nodes().len();
        write(len, "len", needed)?;
        if capacity < needed || (values.is_null() && needed > 0) {
            return Err((
                CvbellStatus::BufferTooSmall,
                format!("node buffer holds {capacity} values, {needed} needed"),
            ));
        }
        let start = FreeFunction::sample(&MeasurementFunction::Identity, rule).ffi()?;
        let outcome = variational::optimize_function_with(&state.spec, rule, &start, &Default::default()).ffi()?;
        let nodes = &outcome.function.node_values;
        ptr::copy_nonoverlapping(nodes.as_ptr(), values, nodes.len());
        let (eps, _) = variational::fit_epsilon(&outcome.function, rule, 1e-3, 64.0).ffi()?;
        write(out, "out", CvbellResult::from_result(&outcome.result, eps))?;
        if outcome.converged {
            Ok(())
        } else {
            Err((
                CvbellStatus::Convergence,
                format!(
                    "optimizer stopped after {} iterations with gradient {:e}",
                    outcome.iterations, outcome.gradient_norm
                ),
            ))
        }
    })
}
