//! Command-line front end: single evaluations, figure data, the oracle
//! cross-check and the variational optimizer.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::critical::{
    critical_efficiency_with, critical_product, critical_purity_with, Critical, CriticalOptions, DEFAULT_TOLERANCE,
};
use crate::error::{invalid, Error, Result};
use crate::functional_bell::{
    bell_value_at, bell_value_with, cfrd_bell_value_with, optimal_epsilon, ClosedFormOptions, PurityScaling,
};
use crate::mk_binning::{mk_bell_value_with, mk_evaluate, mk_optimal_angles};
use crate::model::{density_matrix, AngleConfig, MeasurementFunction, StateSpec};
use crate::oracle::{self, optimize_epsilon_numeric, BellResult, InequalityId};
use crate::output::{csv_table, fmt_csv};
use crate::quadrature::{gauss_hermite_rule, QuadratureRule, DEFAULT_ORDER};
use crate::variational::{self, FreeFunction, OptimizerOptions};

/// Largest `N` accepted by the closed-form sweeps.
pub const MAX_SWEEP_N: usize = 10_000;
/// Largest `N` of the oracle cross-check grid.
pub const MAX_ORACLE_N: usize = 8;
/// Deviation that fails the oracle cross-check.
pub const ORACLE_TOLERANCE: f64 = 1e-6;
/// Closed-form efficiency and purity grids of the oracle cross-check.
pub const ORACLE_ETAS: [f64; 3] = [1.0, 0.9, 0.8];
pub const ORACLE_PURITIES: [f64; 2] = [1.0, 0.9];

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "cvbell",
    version,
    about = "Multipartite continuous-variable Bell inequalities for GHZ-class states"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Gauss-Hermite quadrature order.
    #[arg(long, global = true, default_value_t = DEFAULT_ORDER as u32, value_parser = clap::value_parser!(u32).range(1..=512))]
    pub order: u32,
    /// Output format; defaults to json for `eval` and csv otherwise.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the result here instead of stdout (csv output gets a `.meta.json` sidecar).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// How state impurity enters the closed forms.
    #[arg(long, global = true, value_enum, default_value_t = PurityArg::Mixture)]
    pub purity_scaling: PurityArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PurityArg {
    /// Global mixture `p |psi><psi| + (1-p) rho_mix` (matches the oracle).
    Mixture,
    /// Per-mode purity exponents `p^N` (independent dephasing per mode).
    Printed,
}

impl From<PurityArg> for PurityScaling {
    fn from(p: PurityArg) -> Self {
        match p {
            PurityArg::Mixture => PurityScaling::Mixture,
            PurityArg::Printed => PurityScaling::PerModePrinted,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Evaluate one inequality for one state.
    Eval(EvalArgs),
    /// Maximal violation of the optimal-function and CFRD inequalities versus N.
    Figure1(Figure1Args),
    /// Critical efficiency, purity and noise product versus N.
    Figure2(Figure2Args),
    /// Compare every closed form with the exact Fock-space evaluation.
    OracleCheck(OracleCheckArgs),
    /// Optimise the measurement function freely on the quadrature nodes.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Closed form when one exists, otherwise the oracle.
    Auto,
    ClosedForm,
    Oracle,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub ineq: InequalityId,
    #[arg(long)]
    pub n: usize,
    /// Modes occupied in the first branch; defaults to floor(N/2).
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    pub method: Method,
}

#[derive(Debug, Args, Serialize)]
pub struct Figure1Args {
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 20)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct Figure2Args {
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 60)]
    pub n_max: usize,
    /// Restrict to one inequality (default: all three).
    #[arg(long, value_enum)]
    pub ineq: Option<InequalityId>,
    /// Purity at which the critical efficiency is found.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Efficiency at which the critical purity is found.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 3)]
    pub n_min: usize,
    #[arg(long, default_value_t = MAX_ORACLE_N)]
    pub n_max: usize,
    /// Shift added to the closed-form epsilon (sensitivity test only).
    #[arg(long, default_value_t = 0.0)]
    pub perturb_eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Identity,
    Signbin,
    /// Identity scaled by 10 (exercises the gauge).
    IdentityScaled,
}

impl InitArg {
    fn function(self) -> MeasurementFunction {
        match self {
            Self::Identity => MeasurementFunction::Identity,
            Self::Signbin => MeasurementFunction::SignBin,
            Self::IdentityScaled => MeasurementFunction::Identity.scaled(10.0),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Starting function(s); several values run a multi-start check and the
    /// first one is exported.
    #[arg(long, value_enum, num_args = 1.., default_values_t = [InitArg::Identity])]
    pub init: Vec<InitArg>,
}

/// Files and streams produced by a command.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
    pub files: Vec<(PathBuf, String)>,
    /// Set when the command completed but its check failed (exit code 1).
    pub failure: Option<String>,
}

/// Parses `args`, runs the command, writes its outputs and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(output) => {
            for (path, contents) in &output.files {
                if let Err(e) = fs::write(path, contents) {
                    let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
            }
            let _ = write!(stdout, "{}", output.stdout);
            let _ = write!(stderr, "{}", output.stderr);
            match output.failure {
                Some(msg) => {
                    let _ = writeln!(stderr, "error: {msg}");
                    EXIT_FAILURE
                }
                None => EXIT_OK,
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Invalid arguments are usage errors; everything else is a computation failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn execute(cli: &Cli) -> Result<CommandOutput> {
    let rule = gauss_hermite_rule(cli.order as usize)?;
    let purity = PurityScaling::from(cli.purity_scaling);
    match &cli.command {
        Command::Eval(a) => cmd_eval(cli, a, &rule, purity),
        Command::Figure1(a) => cmd_figure1(cli, a, &rule, purity),
        Command::Figure2(a) => cmd_figure2(cli, a, &rule, purity),
        Command::OracleCheck(a) => cmd_oracle_check(cli, a, &rule, purity),
        Command::Optimize(a) => cmd_optimize(cli, a, &rule),
    }
}

/// Config echo, version and quadrature order recorded with every output.
pub fn metadata(cli: &Cli) -> Value {
    json!({
        "tool": "cvbell",
        "version": env!("CARGO_PKG_VERSION"),
        "quadrature_order": cli.order,
        "purity_scaling": cli.purity_scaling,
        "config": cli,
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialise");
    s.push('\n');
    s
}

/// Routes a table to stdout or `--out`, in the requested format.
fn emit_table(
    cli: &Cli,
    header: &[&str],
    rows: Vec<Vec<String>>,
    json_rows: Vec<Value>,
    extra: Value,
) -> CommandOutput {
    let mut out = CommandOutput::default();
    match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let csv = csv_table(header, &rows);
            match &cli.out {
                Some(path) => {
                    let mut meta = metadata(cli);
                    if !extra.is_null() {
                        meta["summary"] = extra;
                    }
                    out.files.push((path.clone(), csv));
                    out.files.push((sidecar_path(path), pretty(&meta)));
                }
                None => out.stdout = csv,
            }
        }
        Format::Json => {
            let mut doc = json!({ "metadata": metadata(cli), "rows": json_rows });
            if !extra.is_null() {
                doc["summary"] = extra;
            }
            route_json(cli, &mut out, pretty(&doc));
        }
    }
    out
}

fn route_json(cli: &Cli, out: &mut CommandOutput, text: String) {
    match &cli.out {
        Some(path) => out.files.push((path.clone(), text)),
        None => out.stdout = text,
    }
}

fn check_range(n_min: usize, n_max: usize, floor: usize, ceiling: usize) -> Result<()> {
    if n_min < floor || n_min > n_max || n_max > ceiling {
        return invalid(format!(
            "N range {n_min}..={n_max} must satisfy {floor} <= n_min <= n_max <= {ceiling}"
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRecord {
    inequality: InequalityId,
    n: usize,
    r: usize,
    eta: f64,
    p: f64,
    method: &'static str,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    violates: bool,
    function_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mk_variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    angles: Option<AngleConfig>,
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, rule: &QuadratureRule, purity: PurityScaling) -> Result<CommandOutput> {
    let r = a.r.unwrap_or(a.n / 2);
    let spec = StateSpec::new(a.n, r, a.p, a.eta)?;
    let balanced = r == a.n / 2 && a.n >= 2;
    let use_oracle = match a.method {
        Method::Oracle => true,
        Method::ClosedForm => false,
        Method::Auto => a.ineq == InequalityId::Functional && !balanced,
    };
    let options = ClosedFormOptions {
        purity,
        ..Default::default()
    };
    let mut epsilon = None;
    let mut mk_variant = None;
    let result: BellResult = match (a.ineq, use_oracle) {
        (InequalityId::Functional, false) => {
            let v = bell_value_with(&spec, rule, &options)?;
            epsilon = Some(v.epsilon);
            v.result
        }
        (InequalityId::Functional, true) => {
            let (eps, res) = optimize_epsilon_numeric(&spec, rule)?;
            epsilon = Some(eps);
            res
        }
        (InequalityId::Cfrd, false) => cfrd_bell_value_with(&spec, rule, purity)?,
        (InequalityId::Cfrd, true) => {
            let rho = density_matrix(&spec)?;
            let f = MeasurementFunction::Identity;
            oracle::evaluate(&rho, &f, &f, &AngleConfig::orthogonal(a.n, r, 0.0), rule)?
        }
        (InequalityId::Mk, false) => {
            let s = mk_bell_value_with(&spec, purity)?;
            BellResult::new(s, 1.0, InequalityId::Mk, "sign-bin".into())
        }
        (InequalityId::Mk, true) => {
            let rho = density_matrix(&spec)?;
            let res = mk_evaluate(&rho, &mk_optimal_angles(a.n, r)?)?;
            mk_variant = Some(format!(
                "{}{}",
                res.variant,
                if res.exchanged { " (exchanged)" } else { "" }
            ));
            BellResult::new(res.s_value, 1.0, InequalityId::Mk, "sign-bin".into()).with_angles(res.angles)
        }
    };
    let record = EvalRecord {
        inequality: a.ineq,
        n: a.n,
        r,
        eta: a.eta,
        p: a.p,
        method: if use_oracle { "oracle" } else { "closed-form" },
        lhs: result.lhs,
        rhs: result.rhs,
        ratio: result.ratio,
        violates: result.violates(),
        function_id: result.function_id.clone(),
        epsilon,
        mk_variant,
        angles: result.angles.clone(),
    };
    let mut out = CommandOutput::default();
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut doc = serde_json::to_value(&record).expect("record serialises");
            doc["metadata"] = metadata(cli);
            let text = pretty(&doc);
            if let Some(path) = &cli.out {
                out.files.push((path.clone(), text.clone()));
            }
            out.stdout = text;
        }
        Format::Csv => {
            let header = [
                "inequality_id",
                "N",
                "r",
                "eta",
                "p",
                "method",
                "lhs",
                "rhs",
                "ratio",
                "epsilon",
            ];
            let row = vec![
                a.ineq.to_string(),
                a.n.to_string(),
                r.to_string(),
                fmt_csv(a.eta),
                fmt_csv(a.p),
                record.method.to_string(),
                fmt_csv(record.lhs),
                fmt_csv(record.rhs),
                fmt_csv(record.ratio),
                epsilon.map(fmt_csv).unwrap_or_default(),
            ];
            return Ok(emit_table(
                cli,
                &header,
                vec![row],
                vec![serde_json::to_value(&record).expect("record serialises")],
                Value::Null,
            ));
        }
    }
    Ok(out)
}

/// Rows `(N, B_optimal, B_cfrd)` for balanced states.
pub fn figure1_rows(
    n_min: usize,
    n_max: usize,
    eta: f64,
    p: f64,
    rule: &QuadratureRule,
    purity: PurityScaling,
) -> Result<Vec<(usize, f64, f64)>> {
    check_range(n_min, n_max, 2, MAX_SWEEP_N)?;
    let options = ClosedFormOptions {
        purity,
        ..Default::default()
    };
    (n_min..=n_max)
        .map(|n| {
            let spec = StateSpec::balanced(n, p, eta)?;
            let b_opt = bell_value_with(&spec, rule, &options)?.result.ratio;
            let b_cfrd = cfrd_bell_value_with(&spec, rule, purity)?.ratio;
            Ok((n, b_opt, b_cfrd))
        })
        .collect()
}

fn cmd_figure1(cli: &Cli, a: &Figure1Args, rule: &QuadratureRule, purity: PurityScaling) -> Result<CommandOutput> {
    let data = figure1_rows(a.n_min, a.n_max, a.eta, a.p, rule, purity)?;
    let rows = data
        .iter()
        .map(|&(n, b, c)| vec![n.to_string(), fmt_csv(b), fmt_csv(c)])
        .collect();
    let json_rows = data
        .iter()
        .map(|&(n, b, c)| json!({"N": n, "B_optimal": b, "B_cfrd": c}))
        .collect();
    Ok(emit_table(
        cli,
        &["N", "B_optimal", "B_cfrd"],
        rows,
        json_rows,
        Value::Null,
    ))
}

/// One line of the critical-parameter figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Figure2Row {
    pub n: usize,
    pub inequality: InequalityId,
    pub eta_crit: Critical,
    pub p_crit: Critical,
    /// `eta p` (moment inequalities) or `eta p^2` (MK).
    pub product_crit: Critical,
}

impl Figure2Row {
    /// `ok`, or the missing quantities joined by `|`.
    pub fn flag(&self) -> String {
        let missing: Vec<&str> = [
            (self.eta_crit, "no-violation-eta"),
            (self.p_crit, "no-violation-p"),
            (self.product_crit, "no-violation-product"),
        ]
        .iter()
        .filter(|(c, _)| c.value().is_none())
        .map(|&(_, name)| name)
        .collect();
        if missing.is_empty() {
            "ok".into()
        } else {
            missing.join("|")
        }
    }
}

pub fn figure2_rows(
    n_min: usize,
    n_max: usize,
    inequalities: &[InequalityId],
    p: f64,
    eta: f64,
    rule: &QuadratureRule,
    purity: PurityScaling,
) -> Result<Vec<Figure2Row>> {
    check_range(n_min, n_max, 2, MAX_SWEEP_N)?;
    let options = CriticalOptions {
        closed_form: ClosedFormOptions {
            purity,
            ..Default::default()
        },
        tolerance: DEFAULT_TOLERANCE,
    };
    let mut rows = Vec::new();
    for &inequality in inequalities {
        for n in n_min..=n_max {
            rows.push(Figure2Row {
                n,
                inequality,
                eta_crit: critical_efficiency_with(n, p, inequality, rule, &options)?,
                p_crit: critical_purity_with(n, eta, inequality, rule, &options)?,
                product_crit: critical_product(n, inequality, rule, DEFAULT_TOLERANCE)?,
            });
        }
    }
    Ok(rows)
}

fn cmd_figure2(cli: &Cli, a: &Figure2Args, rule: &QuadratureRule, purity: PurityScaling) -> Result<CommandOutput> {
    let all = [InequalityId::Functional, InequalityId::Cfrd, InequalityId::Mk];
    let chosen = a.ineq.map(|i| vec![i]).unwrap_or_else(|| all.to_vec());
    let data = figure2_rows(a.n_min, a.n_max, &chosen, a.p, a.eta, rule, purity)?;
    let cell = |c: Critical| c.value().map(fmt_csv).unwrap_or_default();
    let rows = data
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.inequality.to_string(),
                cell(r.eta_crit),
                cell(r.p_crit),
                cell(r.product_crit),
                r.flag(),
            ]
        })
        .collect();
    let json_rows = data
        .iter()
        .map(|r| {
            json!({
                "N": r.n,
                "inequality_id": r.inequality,
                "eta_crit": r.eta_crit.value(),
                "p_crit": r.p_crit.value(),
                "product_crit": r.product_crit.value(),
                "flag": r.flag(),
            })
        })
        .collect();
    Ok(emit_table(
        cli,
        &["N", "inequality_id", "eta_crit", "p_crit", "product_crit", "flag"],
        rows,
        json_rows,
        Value::Null,
    ))
}

/// One closed-form-versus-oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCell {
    pub n: usize,
    pub eta: f64,
    pub p: f64,
    pub inequality: InequalityId,
    pub closed_form: f64,
    pub oracle: f64,
    pub rel_dev: f64,
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Closed forms against the oracle on the `N x eta x p` grid: the functional
/// inequality against the oracle's maximum over `eps`, CFRD directly, and MK
/// for every split `r` (reporting the worst).
pub fn oracle_check_cells(
    n_min: usize,
    n_max: usize,
    perturb_eps: f64,
    rule: &QuadratureRule,
    purity: PurityScaling,
) -> Result<Vec<OracleCell>> {
    check_range(n_min, n_max, 2, MAX_ORACLE_N)?;
    let options = ClosedFormOptions {
        purity,
        ..Default::default()
    };
    let mut cells = Vec::new();
    for n in n_min..=n_max {
        for &eta in &ORACLE_ETAS {
            for &p in &ORACLE_PURITIES {
                let spec = StateSpec::balanced(n, p, eta)?;
                let rho = density_matrix(&spec)?;
                let eps = optimal_epsilon(&spec, rule, options.epsilon_rule)? + perturb_eps;
                let closed = bell_value_at(&spec, eps, rule, purity)?.result.ratio;
                let (_, best) = optimize_epsilon_numeric(&spec, rule)?;
                cells.push(OracleCell {
                    n,
                    eta,
                    p,
                    inequality: InequalityId::Functional,
                    closed_form: closed,
                    oracle: best.ratio,
                    rel_dev: rel_dev(closed, best.ratio),
                });

                let closed = cfrd_bell_value_with(&spec, rule, purity)?.ratio;
                let f = MeasurementFunction::Identity;
                let exact = oracle::evaluate(&rho, &f, &f, &AngleConfig::orthogonal(n, spec.r_split, 0.0), rule)?.ratio;
                cells.push(OracleCell {
                    n,
                    eta,
                    p,
                    inequality: InequalityId::Cfrd,
                    closed_form: closed,
                    oracle: exact,
                    rel_dev: rel_dev(closed, exact),
                });

                let closed = mk_bell_value_with(&spec, purity)?;
                let mut worst = (0.0, closed);
                for r in 1..=n {
                    let rho_r = density_matrix(&StateSpec::new(n, r, p, eta)?)?;
                    let s = mk_evaluate(&rho_r, &mk_optimal_angles(n, r)?)?.s_value;
                    let d = rel_dev(closed, s);
                    if d >= worst.0 {
                        worst = (d, s);
                    }
                }
                cells.push(OracleCell {
                    n,
                    eta,
                    p,
                    inequality: InequalityId::Mk,
                    closed_form: closed,
                    oracle: worst.1,
                    rel_dev: worst.0,
                });
            }
        }
    }
    Ok(cells)
}

fn cmd_oracle_check(
    cli: &Cli,
    a: &OracleCheckArgs,
    rule: &QuadratureRule,
    purity: PurityScaling,
) -> Result<CommandOutput> {
    let cells = oracle_check_cells(a.n_min, a.n_max, a.perturb_eps, rule, purity)?;
    let worst = cells
        .iter()
        .copied()
        .max_by(|x, y| x.rel_dev.total_cmp(&y.rel_dev))
        .expect("grid is non-empty");
    let rows = cells
        .iter()
        .map(|c| {
            vec![
                c.n.to_string(),
                fmt_csv(c.eta),
                fmt_csv(c.p),
                c.inequality.to_string(),
                fmt_csv(c.closed_form),
                fmt_csv(c.oracle),
                fmt_csv(c.rel_dev),
            ]
        })
        .collect();
    let json_rows = cells
        .iter()
        .map(|c| serde_json::to_value(c).expect("cell serialises"))
        .collect();
    let summary = json!({
        "max_rel_dev": worst.rel_dev,
        "tolerance": ORACLE_TOLERANCE,
        "worst_cell": worst,
        "passed": worst.rel_dev <= ORACLE_TOLERANCE,
    });
    let mut out = emit_table(
        cli,
        &["N", "eta", "p", "inequality_id", "closed_form", "oracle", "rel_dev"],
        rows,
        json_rows,
        summary,
    );
    out.stderr = format!(
        "max relative deviation {} (N={}, eta={}, p={}, {})\n",
        fmt_csv(worst.rel_dev),
        worst.n,
        fmt_csv(worst.eta),
        fmt_csv(worst.p),
        worst.inequality
    );
    if worst.rel_dev > ORACLE_TOLERANCE {
        out.failure = Some(format!(
            "closed form deviates from the oracle by {} > {} at N={}, eta={}, p={}, {}",
            fmt_csv(worst.rel_dev),
            ORACLE_TOLERANCE,
            worst.n,
            fmt_csv(worst.eta),
            fmt_csv(worst.p),
            worst.inequality
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub init: InitArg,
    pub ratio: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn cmd_optimize(cli: &Cli, a: &OptimizeArgs, rule: &QuadratureRule) -> Result<CommandOutput> {
    let r = a.r.unwrap_or(a.n / 2);
    let spec = StateSpec::new(a.n, r, a.p, a.eta)?;
    let mut seeds = Vec::new();
    let mut exported = None;
    for &init in &a.init {
        let start = FreeFunction::sample(&init.function(), rule)?;
        let outcome = variational::optimize_function_with(&spec, rule, &start, &OptimizerOptions::default())?;
        seeds.push(SeedSummary {
            init,
            ratio: outcome.result.ratio,
            converged: outcome.converged,
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm,
        });
        exported.get_or_insert(outcome);
    }
    let best = exported.expect("at least one initialisation");
    let (eps_fit, fit_dev) = variational::fit_epsilon(&best.function, rule, 1e-3, 64.0)?;
    // Reference optimum: exact closed form for balanced states, oracle scan otherwise.
    let (eps_ref, ratio_ref) = if r == a.n / 2 && a.n >= 2 {
        let v = bell_value_with(&spec, rule, &ClosedFormOptions::default())?;
        (v.epsilon, v.result.ratio)
    } else {
        let (e, res) = optimize_epsilon_numeric(&spec, rule)?;
        (e, res.ratio)
    };
    let ratios: Vec<f64> = seeds.iter().map(|s| s.ratio).collect();
    let spread =
        ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let summary = json!({
        "n": a.n,
        "r": r,
        "eta": a.eta,
        "p": a.p,
        "ratio": best.result.ratio,
        "converged": best.converged,
        "iterations": best.iterations,
        "gradient_norm": best.gradient_norm,
        "epsilon_fit": eps_fit,
        "fit_deviation": fit_dev,
        "epsilon_reference": eps_ref,
        "ratio_reference": ratio_ref,
        "seeds": seeds,
        "seed_ratio_spread": spread,
    });
    let rows = rule
        .positive_nodes()
        .iter()
        .zip(&best.function.node_values)
        .map(|(&x, &v)| vec![fmt_csv(x), fmt_csv(v)])
        .collect();
    let json_rows = rule
        .positive_nodes()
        .iter()
        .zip(&best.function.node_values)
        .map(|(&x, &v)| json!({"node": x, "value": v}))
        .collect();
    let mut out = emit_table(cli, &["node", "value"], rows, json_rows, summary.clone());
    if cli.format.unwrap_or(Format::Csv) == Format::Csv && cli.out.is_none() {
        out.stderr = pretty(&summary);
    } else if cli.out.is_some() {
        out.stdout = pretty(&summary);
    }
    if let Some(bad) = seeds.iter().find(|s| !s.converged) {
        out.failure = Some(format!(
            "optimizer did not converge from {:?} (gradient {:e} after {} iterations); best-so-far written",
            bad.init, bad.gradient_norm, bad.iterations
        ));
    }
    Ok(out)
}
