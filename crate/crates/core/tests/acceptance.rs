//! One PASS/FAIL line per acceptance criterion (custom harness, so the lines
//! always reach stdout); exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use cvbell::cli::{figure2_rows, oracle_check_cells};
use cvbell::critical::{asymptotic_efficiency, asymptotic_product, critical_efficiency, Critical, CriticalOptions};
use cvbell::functional_bell::{
    adjudicate_odd_reading, bell_value, cfrd_bell_value, optimal_epsilon, EpsilonRule, PurityScaling,
};
use cvbell::mk_binning::{mk_bell_value, mk_correlation, mk_critical_product, mk_evaluate, mk_optimal_angles};
use cvbell::model::{density_matrix, AngleConfig, MeasurementFunction, PairMoments, StateSpec};
use cvbell::oracle::{evaluate, sides, InequalityId};
use cvbell::quadrature::{gauss_hermite_rule, QuadratureRule, DEFAULT_ORDER};
use cvbell::variational::{fit_epsilon, optimize_function, weighted_l2_error, FreeFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = fn(&QuadratureRule) -> Vec<Check>;

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Check {
    Check {
        ok,
        detail: detail.into(),
    }
}

fn rule() -> QuadratureRule {
    gauss_hermite_rule(DEFAULT_ORDER).unwrap()
}

fn crit(c: Critical) -> f64 {
    c.value().unwrap_or(f64::NAN)
}

fn onset_values(r: &QuadratureRule) -> Vec<Check> {
    let start = Instant::now();
    let functional = |n| bell_value(&StateSpec::balanced(n, 1.0, 1.0).unwrap(), r).unwrap().ratio;
    let cfrd = |n| {
        cfrd_bell_value(&StateSpec::balanced(n, 1.0, 1.0).unwrap(), r)
            .unwrap()
            .ratio
    };
    let (f5, f4) = (functional(5), functional(4));
    let (c10, c9) = (cfrd(10), cfrd(9));
    let m3 = mk_bell_value(&StateSpec::balanced(3, 1.0, 1.0).unwrap()).unwrap();
    let elapsed = start.elapsed();
    vec![
        check(f5 > 1.0 && f4 <= 1.0, format!("functional B(5)={f5:.6} B(4)={f4:.6}")),
        check(c10 > 1.0 && c9 <= 1.0, format!("CFRD B(10)={c10:.6} B(9)={c9:.6}")),
        check(m3 > 1.0, format!("MK B(3)={m3:.6}")),
        check(elapsed < Duration::from_secs(10), format!("{elapsed:.2?}")),
    ]
}

fn mk_identities(r: &QuadratureRule) -> Vec<Check> {
    let mut out = Vec::new();
    let exact = (2..=200).all(|n| {
        let v = mk_critical_product(n).unwrap();
        let formula = 2f64.powf((1.0 - 2.0 * n as f64) / n as f64) * PI;
        ((v - formula) / formula).abs() < 1e-15
    });
    out.push(check(exact, "product formula exact for N=2..200"));
    for (n, target) in [(3, 0.9897), (4, 0.9336), (5, 0.9022)] {
        let v = mk_critical_product(n).unwrap();
        let eta = crit(critical_efficiency(n, 1.0, InequalityId::Mk, r).unwrap());
        out.push(check(
            (v - target).abs() <= 5e-4 && (eta - v).abs() < 1e-9,
            format!("N={n}: {v:.5}"),
        ));
    }
    let asym = asymptotic_product(InequalityId::Mk, 200, r).unwrap();
    out.push(check(
        (asym.limit - PI / 4.0).abs() < 1e-3,
        format!(
            "N<=200 limit {:.6} vs pi/4 (raw N=200 value {:.6})",
            asym.limit, asym.tail_value
        ),
    ));
    out
}

fn efficiency_anchors(r: &QuadratureRule) -> Vec<Check> {
    let opts = CriticalOptions::default();
    let f10 = crit(critical_efficiency(10, 1.0, InequalityId::Functional, r).unwrap());
    let cfrd = asymptotic_efficiency(InequalityId::Cfrd, 200, 1.0, r, &opts).unwrap();
    let func = asymptotic_efficiency(InequalityId::Functional, 200, 1.0, r, &opts).unwrap();
    let product = asymptotic_product(InequalityId::Functional, 200, r).unwrap();
    let start = Instant::now();
    let sweep = figure2_rows(
        2,
        60,
        &[InequalityId::Functional, InequalityId::Cfrd, InequalityId::Mk],
        1.0,
        1.0,
        r,
        PurityScaling::Mixture,
    )
    .unwrap();
    let elapsed = start.elapsed();
    vec![
        check((f10 - 0.80).abs() <= 0.01, format!("functional eta_crit(10)={f10:.5}")),
        check(
            (cfrd.limit - 0.81).abs() <= 0.005,
            format!("CFRD limit {:.5}", cfrd.limit),
        ),
        check(
            (func.limit - 0.69).abs() <= 0.01,
            format!("functional limit {:.5}", func.limit),
        ),
        check(
            (product.limit - 0.6918).abs() <= 0.005,
            format!("decoherence product {:.5}", product.limit),
        ),
        check(
            sweep.len() == 3 * 59 && elapsed < Duration::from_secs(300),
            format!("N<=60 sweep {elapsed:.2?}"),
        ),
    ]
}

fn crossover(r: &QuadratureRule) -> Vec<Check> {
    let eta = |n, id| critical_efficiency(n, 1.0, id, r).unwrap();
    let mut late = Vec::new();
    for n in (8..=200).step_by(2) {
        let f = crit(eta(n, InequalityId::Functional));
        let m = crit(eta(n, InequalityId::Mk));
        if f.partial_cmp(&m) != Some(std::cmp::Ordering::Less) {
            late.push(n);
        }
    }
    let early = [3, 4, 5].iter().all(|&n| {
        let m = crit(eta(n, InequalityId::Mk));
        match eta(n, InequalityId::Functional) {
            Critical::NoViolation => m.is_finite(),
            Critical::Value(f) => m < f,
        }
    });
    let first_080 = (3..=200)
        .find(|&n| crit(eta(n, InequalityId::Mk)) <= 0.80)
        .unwrap_or(usize::MAX);
    vec![
        check(
            late.is_empty(),
            format!("functional beats MK for even N in 8..200 (exceptions {late:?})"),
        ),
        check(early, "MK better for N in {3,4,5}"),
        check(
            first_080.abs_diff(40) <= 4,
            format!("MK eta_crit <= 0.80 first at N={first_080}"),
        ),
    ]
}

fn oracle_equivalence(r: &QuadratureRule) -> Vec<Check> {
    let cells = oracle_check_cells(3, 8, 0.0, r, PurityScaling::Mixture).unwrap();
    let worst = cells.iter().map(|c| c.rel_dev).fold(0.0, f64::max);
    let mut out = vec![check(
        worst <= 1e-6,
        format!("{} cells, max rel dev {worst:.2e}", cells.len()),
    )];
    // Both odd-N readings are approximations away from eta = 1; the switch
    // must still pick one of them unambiguously in every cell.
    let mut chosen = Vec::new();
    let mut margin = f64::INFINITY;
    let mut gap = 0.0f64;
    for n in [3, 5, 7] {
        for eta in [0.9, 0.8] {
            let v = adjudicate_odd_reading(n, eta, r).unwrap();
            let printed = ((v.as_printed_ratio - v.oracle_ratio) / v.oracle_ratio).abs();
            let uniform = ((v.uniform_ratio - v.oracle_ratio) / v.oracle_ratio).abs();
            margin = margin.min((printed - uniform).abs());
            gap = gap.max(printed.min(uniform));
            chosen.push(v.chosen);
        }
    }
    let consistent = chosen.windows(2).all(|w| w[0] == w[1]);
    out.push(check(
        consistent && margin > 1e-8,
        format!(
            "odd-N switch resolves to {:?} in all cells (margin {margin:.1e}; its gap to the oracle maximum {gap:.1e} is closed by the self-consistent eps)",
            chosen[0]
        ),
    ));
    out
}

fn variational_recovery(r: &QuadratureRule) -> Vec<Check> {
    let mut out = Vec::new();
    for n in [5, 6] {
        let spec = StateSpec::balanced(n, 1.0, 1.0).unwrap();
        let eps = optimal_epsilon(&spec, r, EpsilonRule::SelfConsistent).unwrap();
        let target = FreeFunction::sample(&MeasurementFunction::optimal(eps).unwrap(), r).unwrap();
        for init in [MeasurementFunction::Identity, MeasurementFunction::SignBin] {
            let start = FreeFunction::sample(&init, r).unwrap();
            let line = match optimize_function(&spec, r, &start) {
                Ok((f, _)) => {
                    let err = weighted_l2_error(&f, &target, r).unwrap();
                    let (fit, _) = fit_epsilon(&f, r, 1e-3, 64.0).unwrap();
                    check(
                        err < 1e-3 && (fit - eps).abs() < 1e-3,
                        format!("N={n} from {}: L2 {err:.1e}, eps {fit:.6} vs {eps:.6}", init.id()),
                    )
                }
                Err(e) => check(false, format!("N={n} from {}: {e}", init.id())),
            };
            out.push(line);
        }
    }
    out
}

fn structural_invariants(r: &QuadratureRule) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=7);
        let terms = rng.gen_range(1..=4);
        let rho = common::random_separable(&mut rng, n, terms);
        let f = MeasurementFunction::optimal(rng.gen_range(0.01..10.0)).unwrap();
        let g = if rng.gen() {
            MeasurementFunction::Identity
        } else {
            MeasurementFunction::optimal(rng.gen_range(0.01..10.0)).unwrap()
        };
        let angles = common::random_angles(&mut rng, n);
        worst = worst.max(evaluate(&rho, &f, &g, &angles, r).unwrap().ratio);
    }

    let spec = StateSpec::new(6, 2, 0.9, 0.8).unwrap();
    let rho = density_matrix(&spec).unwrap();
    let f = MeasurementFunction::optimal(2.0).unwrap();
    let moments = PairMoments::new(&f, &f, r).unwrap();
    let (_, rhs0) = sides(&rho, &moments, &AngleConfig::orthogonal(6, 2, 0.0)).unwrap();
    let mut rhs_dev = 0.0f64;
    for _ in 0..20 {
        let (_, rhs) = sides(&rho, &moments, &common::random_angles(&mut rng, 6)).unwrap();
        rhs_dev = rhs_dev.max(((rhs - rhs0) / rhs0).abs());
    }

    // Outcomes +-1/sqrt(2) make every local factor f^2 + g^2 equal to one.
    let angles = mk_optimal_angles(6, 2).unwrap();
    let bin = MeasurementFunction::SignBin.scaled(std::f64::consts::FRAC_1_SQRT_2);
    let pi = mk_correlation(&rho, &angles).unwrap();
    let binned = evaluate(&rho, &bin, &bin, &angles, r).unwrap();
    let other = evaluate(&common::random_separable(&mut rng, 6, 3), &bin, &bin, &angles, r).unwrap();
    let mermin = (binned.rhs - 1.0).abs() < 1e-12
        && (other.rhs - 1.0).abs() < 1e-12
        && (binned.lhs - pi.norm_sqr() / 64.0).abs() < 1e-12;

    let base = evaluate(&rho, &f, &f, &AngleConfig::orthogonal(6, 2, 0.0), r)
        .unwrap()
        .ratio;
    let scale_dev = [0.01, 3.0, 250.0]
        .iter()
        .map(|&c| {
            let fc = f.scaled(c);
            let b = evaluate(&rho, &fc, &fc, &AngleConfig::orthogonal(6, 2, 0.0), r)
                .unwrap()
                .ratio;
            ((b - base) / base).abs()
        })
        .fold(0.0, f64::max);

    let mut r_dev = 0.0f64;
    for n in 2..=7 {
        let values: Vec<f64> = (1..=n)
            .map(|k| {
                let rho = density_matrix(&StateSpec::new(n, k, 0.9, 0.85).unwrap()).unwrap();
                mk_evaluate(&rho, &mk_optimal_angles(n, k).unwrap()).unwrap().s_value
            })
            .collect();
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        r_dev = r_dev.max((max - min) / max);
    }

    vec![
        check(
            worst <= 1.0 + 1e-10,
            format!("max B on 50 separable mixtures {worst:.6}"),
        ),
        check(rhs_dev < 1e-10, format!("RHS angle dependence {rhs_dev:.1e}")),
        check(mermin, "binning gives RHS=1, LHS=|Pi|^2"),
        check(scale_dev < 1e-10, format!("scale dependence {scale_dev:.1e}")),
        check(r_dev < 1e-10, format!("MK r dependence {r_dev:.1e}")),
    ]
}

fn main() {
    let r = rule();
    let criteria: [(&str, Criterion); 7] = [
        ("onset values", onset_values),
        ("MK closed-form identities", mk_identities),
        ("critical-efficiency anchors", efficiency_anchors),
        ("crossover", crossover),
        ("oracle equivalence", oracle_equivalence),
        ("variational recovery", variational_recovery),
        ("structural invariants", structural_invariants),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let checks = run(&r);
        let ok = checks.iter().all(|c| c.ok);
        let details: Vec<String> = checks
            .iter()
            .map(|c| format!("{}{}", if c.ok { "" } else { "!" }, c.detail))
            .collect();
        println!(
            "{} criterion {}: {name} [{}]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            details.join("; ")
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
