//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use hazard_transform::hazards::{merge_drivers, nelson_aalen, time_grid_driver};
use hazard_transform::plugin::{fit, solve_plugin};
use hazard_transform::simlab::{
    bootstrap_covariance, coverage_study, l2_convergence, loglog_slope, oracle_parameter, sample_at,
    simulate_dataset, HazardSpec, L2Target, LazyDriver, Scenario,
};
use hazard_transform::systems::{eval_gradient, eval_integrand, make_system, OdeSystem, SystemKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_261_015;

struct Outcome {
    pass: bool,
    detail: String,
}

fn constant_one(system: SystemKind) -> Scenario {
    let mut sc = Scenario::new(system, [("A", HazardSpec::Constant { rate: 1.0 })]);
    sc.seed = SEED;
    sc
}

fn interior() -> Vec<f64> {
    (2..=8).map(|i| i as f64 / 10.0).collect()
}

fn kaplan_meier_identity() -> Outcome {
    let sys = make_system(SystemKind::Survival).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for d in 0..50 {
        let n = rng.random_range(1..=500);
        let ds = common::random_dataset(SEED + d, n);
        let (driver, _) = nelson_aalen(&ds, 1, None).unwrap();
        let path = solve_plugin(&sys, &driver, None).unwrap();
        let oracle = common::product_limit(&ds);
        let probes = path.times().iter().chain(oracle.iter().map(|p| &p.0));
        for &t in probes {
            worst = worst.max((path.eval(t)[0] - common::step_lookup(&oracle, t)).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max |plugin - product limit| = {worst:.2e} over 50 datasets"),
    }
}

fn gradient_suite() -> Outcome {
    let systems = [
        SystemKind::Survival,
        SystemKind::RelativeSurvival,
        SystemKind::Rmst,
        SystemKind::Led,
        SystemKind::Ler,
        SystemKind::CumulativeIncidence { m: 3 },
        SystemKind::MeanFrequency,
        SystemKind::Screening {
            prevalence: 0.3,
            initial: Some([0.2, 0.9, 0.5, 0.8]),
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for kind in systems {
        let sys = make_system(kind).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..sys.state_dim()).map(|_| rng.random_range(0.2..0.9)).collect();
            for j in 0..sys.driver_dim() {
                let g = eval_gradient(&sys, &x, j).unwrap();
                for i in 0..sys.state_dim() {
                    let h = 1e-6;
                    let (mut up, mut down) = (x.clone(), x.clone());
                    up[i] += h;
                    down[i] -= h;
                    let fu = eval_integrand(&sys, &up).unwrap();
                    let fd = eval_integrand(&sys, &down).unwrap();
                    for r in 0..sys.state_dim() {
                        let numeric = (fu[(r, j)] - fd[(r, j)]) / (2.0 * h);
                        // Relative to the entry, or absolute for entries below one.
                        let err = (g[(r, i)] - numeric).abs() / g[(r, i)].abs().max(1.0);
                        worst = worst.max(err);
                    }
                }
                checked += 1;
            }
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("max relative error {worst:.2e} over {checked} Jacobians (8 systems, 100 states each)"),
    }
}

fn conservation() -> Outcome {
    let kind = SystemKind::CumulativeIncidence { m: 3 };
    let mut sc = Scenario::new(
        kind.clone(),
        [
            ("A1", HazardSpec::Constant { rate: 1.0 }),
            ("A2", HazardSpec::Constant { rate: 0.5 }),
            ("A3", HazardSpec::Linear { intercept: 0.2, slope: 0.4 }),
        ],
    );
    sc.n = 2000;
    sc.seed = SEED;
    sc.censor = Some(HazardSpec::Constant { rate: 0.3 });
    let ds = simulate_dataset(&sc).unwrap();
    let parts: Vec<_> = (1..=3).map(|c| nelson_aalen(&ds, c, None).unwrap()).collect();
    let (driver, meta) = merge_drivers(&parts).unwrap();
    let f = fit(&make_system(kind).unwrap(), &driver, &meta, None, None).unwrap();
    let mut total_err: f64 = 0.0;
    for i in 0..f.state.len() {
        total_err = total_err.max((f.state.value(i).iter().sum::<f64>() - 1.0).abs());
    }

    let mut led_sc = Scenario::crossing(SystemKind::Led).unwrap();
    led_sc.n = 2000;
    led_sc.seed = SEED;
    let ds = simulate_dataset(&led_sc).unwrap();
    let grid = time_grid_driver(1.0, 1e-3).unwrap();
    let a1 = nelson_aalen(&ds, 1, Some(1)).unwrap();
    let a2 = nelson_aalen(&ds, 1, Some(2)).unwrap();
    let (driver, _) = merge_drivers(&[grid, a1, a2]).unwrap();
    let led = solve_plugin(&make_system(SystemKind::Led).unwrap(), &driver, None).unwrap();
    let rmst = make_system(SystemKind::Rmst).unwrap();
    let r1 = solve_plugin(&rmst, &driver.select(&[0, 1]), None).unwrap();
    let r2 = solve_plugin(&rmst, &driver.select(&[0, 2]), None).unwrap();
    let mut led_err: f64 = 0.0;
    for i in 0..led.len() {
        led_err = led_err.max((led.value(i)[0] - (r1.value(i)[0] - r2.value(i)[0])).abs());
    }
    Outcome {
        pass: total_err <= 1e-12 && led_err <= 1e-10,
        detail: format!(
            "max |S + C1 + C2 + C3 - 1| = {total_err:.2e} over {} jumps; max |LED - (R1 - R2)| = {led_err:.2e}",
            f.state.len()
        ),
    }
}

fn oracle_accuracy() -> Outcome {
    let sc = constant_one(SystemKind::Survival);
    let surv = oracle_parameter(&sc.hazards, &SystemKind::Survival, 1.0, sc.oracle_step()).unwrap();
    let sup = surv
        .times()
        .iter()
        .enumerate()
        .map(|(i, &t)| (surv.value(i)[0] - (-t).exp()).abs())
        .fold(0.0, f64::max);
    let rmst = oracle_parameter(&sc.hazards, &SystemKind::Rmst, 1.0, sc.oracle_step()).unwrap();
    let rmst_err = (rmst.eval(1.0)[0] - (1.0 - (-1.0f64).exp())).abs();
    Outcome {
        pass: sup < 1e-5 && rmst_err < 1e-5,
        detail: format!("survival sup error {sup:.2e}; RMST(1) error {rmst_err:.2e}"),
    }
}

fn convergence_order() -> Outcome {
    let mut sc = constant_one(SystemKind::Survival);
    sc.k_replications = 100;
    let ns = [250, 500, 1000, 2000, 4000];
    let slope_of = |target| {
        let r = l2_convergence(&sc, &ns, target).unwrap();
        let pts: Vec<(f64, f64)> = r.convergence_rows().iter().map(|row| (row.n as f64, row.l)).collect();
        (loglog_slope(&pts), pts)
    };
    let (slope, pts) = slope_of(L2Target::Estimate);
    let (var_slope, _) = slope_of(L2Target::Variance);
    let values: Vec<String> = pts.iter().map(|(n, l)| format!("{n}:{l:.3e}")).collect();
    Outcome {
        pass: (-1.4..=-0.6).contains(&slope) && var_slope <= -1.0,
        detail: format!(
            "estimate slope {slope:.3} (L = {}); variance slope {var_slope:.3}",
            values.join(", ")
        ),
    }
}

fn coverage() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (kind, step) in [(SystemKind::Survival, None), (SystemKind::Rmst, Some(1e-6))] {
        let mut sc = constant_one(kind.clone());
        sc.n = 500;
        sc.k_replications = 500;
        sc.grid_step = step;
        let r = coverage_study(&sc, 0.95, &interior()).unwrap();
        let cov: Vec<f64> = r.coverage_rows().iter().map(|row| row.coverage).collect();
        pass &= cov.iter().all(|c| (0.90..=0.98).contains(c));
        lines.push(format!("{} {:?}", kind.name(), cov));
    }
    let mut sc = Scenario::crossing(SystemKind::RelativeSurvival).unwrap();
    sc.seed = SEED;
    sc.n = 500;
    sc.k_replications = 500;
    let r = coverage_study(&sc, 0.95, &interior()).unwrap();
    let rows = r.coverage_rows();
    pass &= rows.iter().all(|row| row.coverage >= 0.85);
    let dips: Vec<String> = rows
        .iter()
        .filter(|row| row.wilson_hi < 0.95)
        .map(|row| format!("t={}", row.t))
        .collect();
    lines.push(format!(
        "crossing relative survival {:?} (significant dips below 0.95: {})",
        rows.iter().map(|row| row.coverage).collect::<Vec<_>>(),
        if dips.is_empty() { "none".to_string() } else { dips.join(" ") }
    ));
    Outcome {
        pass,
        detail: lines.join("; "),
    }
}

fn variance_sanity() -> Outcome {
    let mut sc = constant_one(SystemKind::Survival);
    sc.n = 1000;
    let ds = simulate_dataset(&sc).unwrap();
    let median = std::f64::consts::LN_2;
    let sys = make_system(SystemKind::Survival).unwrap();
    let driver = LazyDriver::build(&SystemKind::Survival, &ds, 1e-3).unwrap();
    let plugin = sample_at(&sys, &driver, &[median], true).unwrap()[0].1.clone().unwrap()[(0, 0)];
    let boot = bootstrap_covariance(&ds, &SystemKind::Survival, 1e-3, 1000, SEED, &[median]).unwrap()[0][(0, 0)];
    let rel = (plugin - boot).abs() / boot;
    Outcome {
        pass: rel <= 0.2,
        detail: format!(
            "at t = ln 2: plugin V/n = {:.4e}, bootstrap = {:.4e}, relative gap {:.1}%",
            plugin / 1000.0,
            boot / 1000.0,
            100.0 * rel
        ),
    }
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hazard-transform");
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut notes = Vec::new();
    for (cmd, extra, file) in [
        ("converge", vec!["--n-list", "100,200,400", "--k", "24"], "convergence.csv"),
        ("coverage", vec!["--n", "200", "--k", "40", "--times", "0.25,0.5,0.75"], "coverage.csv"),
    ] {
        let mut outputs = Vec::new();
        for jobs in ["1", "8"] {
            let out = dir.path().join(format!("{cmd}-{jobs}"));
            let status = Command::new(bin)
                .args([cmd, "--system", "survival", "--hazard", "constant:1", "--seed", "42", "--jobs", jobs])
                .args(&extra)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            identical &= status.success();
            outputs.push(std::fs::read(out.join(file)).unwrap_or_default());
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        identical &= same;
        notes.push(format!("{cmd}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    Outcome {
        pass: identical,
        detail: format!("--jobs 1 vs --jobs 8: {}", notes.join(", ")),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("Kaplan-Meier identity", kaplan_meier_identity),
        ("gradient suite", gradient_suite),
        ("conservation", conservation),
        ("oracle accuracy", oracle_accuracy),
        ("convergence order", convergence_order),
        ("coverage", coverage),
        ("variance sanity", variance_sanity),
        ("determinism under parallelism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!outcome.pass);
        println!(
            "criterion {} ({name}): {verdict} [{:.1} s] {}",
            i + 1,
            started.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
