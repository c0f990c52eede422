//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Some criteria cannot hold for this model as specified; the reasons are in
//! the README. Those are reported as FAIL, and the run only errors out when a
//! criterion fails in a way other than the documented one, or a check that
//! should hold stops holding.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fedgame::dynamics::simulate;
use fedgame::equilibria::enumerate_fixed_points;
use fedgame::model::{expand_cost_model, load_scenario_file, Client, CostModel, Initial, Prior, Scenario, UtilityMode};
use fedgame::payment::{plan_homogeneous, total_payment};
use fedgame::utility::{gain_split, utility_gain, utility_gain_homogeneous};
use fedgame::verifier::{
    brute_force_fixed_points, brute_force_min_kickstart, generate_battery, generate_increasing_homogeneous,
    run_battery, run_knapsack_battery, BatteryLimits, Lcg, VerificationReport,
};

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
    elapsed: Duration,
    checks: Vec<Check>,
    /// Checks that fail for reasons documented in the README.
    known: &'static [&'static str],
}

impl Criterion {
    fn failing(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn passed(&self) -> bool {
        self.failing().is_empty() && self.elapsed <= self.limit
    }

    /// Fails only the way it is documented to.
    fn as_documented(&self) -> bool {
        self.elapsed <= self.limit && self.failing().iter().all(|c| self.known.contains(&c.name))
    }

    fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "criterion {} {status}  {} ({:.2}s, limit {}s)",
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs()
        );
        for c in self.failing() {
            let tag = if self.known.contains(&c.name) { "known" } else { "UNEXPECTED" };
            line.push_str(&format!("; {tag}: {}: {}", c.name, c.detail));
        }
        if self.elapsed > self.limit {
            line.push_str("; UNEXPECTED: over time limit");
        }
        line
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn homogeneous(costs: &[f64], n: u64, sigma2: f64) -> Scenario {
    let clients = costs
        .iter()
        .enumerate()
        .map(|(i, &c)| Client::new(i as u32 + 1, n, c).unwrap())
        .collect();
    Scenario::new("s", clients, Prior::new(sigma2).unwrap(), UtilityMode::Homogeneous, Initial::Expectation(0)).unwrap()
}

fn utility_identities() -> Vec<Check> {
    let mut checks = Vec::new();
    let sigmas = [0.0, 0.5, 1.0, 2.0];

    let bad: Vec<(u64, f64)> = (1..=100)
        .flat_map(|n| sigmas.iter().map(move |&s| (n, s)))
        .filter(|&(n, s)| utility_gain_homogeneous(1, n, s) != 0.0 || utility_gain(&[n], 0, s) != 0.0)
        .collect();
    checks.push(check("single client gains nothing", bad.is_empty(), format!("{bad:?}")));

    let u = utility_gain_homogeneous(2, 10, 1.0);
    let g = utility_gain(&[10, 10], 0, 1.0);
    checks.push(check(
        "U(2,10,1) = 1.05",
        rel_close(u, 1.05, 1e-12) && rel_close(g, 1.05, 1e-12),
        format!("closed form {u}, general {g}"),
    ));

    let mut worst = (0.0f64, 0, 0, 0.0);
    for k in 1..=50u64 {
        for n in 1..=20u64 {
            for &s in &sigmas {
                let closed = utility_gain_homogeneous(k, n, s);
                let general = utility_gain(&vec![n; k as usize], 0, s);
                if !rel_close(closed, general, 1e-12) {
                    let err = (closed - general).abs() / closed.abs().max(general.abs());
                    if err > worst.0 {
                        worst = (err, k, n, s);
                    }
                }
            }
        }
    }
    checks.push(check(
        "equal-sample specialization",
        worst.0 == 0.0,
        format!("worst relative error {:e} at K={} n={} s2={}", worst.0, worst.1, worst.2, worst.3),
    ));

    let mut rng = Lcg::new(2024);
    let mut misses = Vec::new();
    for trial in 0..1000 {
        let m = rng.range(2, 12) as usize;
        let samples: Vec<u64> = (0..m).map(|_| rng.range(1, 100)).collect();
        let sigma2 = 2.0 * rng.next_f64();
        let i = rng.range(0, m as u64 - 1) as usize;
        let total: u64 = samples.iter().sum();
        let sq: f64 = samples.iter().map(|&n| (n * n) as f64).sum();
        let split = gain_split(samples[i], total, sq, sigma2, 0.5).unwrap();
        let direct = utility_gain(&samples, i, sigma2);
        if !rel_close(split.total(), direct, 1e-12) {
            misses.push(format!("trial {trial}: {samples:?} i={i} s2={sigma2}: {} vs {direct}", split.total()));
        }
    }
    checks.push(check(
        "fixed plus additional split",
        misses.is_empty(),
        format!("{} of 1000 off, first {:?}", misses.len(), misses.first()),
    ));
    checks
}

fn mirror_example() -> Vec<Check> {
    let costs = expand_cost_model(&CostModel::MirrorUtility { floor: 1e-9 }, 20, Some((5, 1.0))).unwrap();
    let s = homogeneous(&costs, 5, 1.0);
    let points: Vec<u64> = enumerate_fixed_points(&s).iter().map(|r| r.point).collect();
    let missing: Vec<u64> = (0..=20).filter(|k| !points.contains(k)).collect();
    let schedule = plan_homogeneous(&s, None, false).unwrap();
    let sum: f64 = costs.iter().sum();
    vec![
        check(
            "every point fixed",
            missing.is_empty(),
            format!("not fixed: {missing:?} (U(1) = 0 is below the positive floor cost)"),
        ),
        check("only K=1 is not fixed", missing == [1], format!("not fixed: {missing:?}")),
        check("reference agrees", brute_force_fixed_points(&s) == points, format!("{points:?}")),
        check(
            "plan total is the sum of all costs",
            schedule.total == sum && total_payment(&schedule) == sum && schedule.final_point == 20,
            format!("total {} vs {sum}, final {}", schedule.total, schedule.final_point),
        ),
    ]
}

fn four_client_example() -> Vec<Check> {
    let s = load_scenario_file(&golden("four_client.json")).unwrap();
    let trace = simulate(&s, 20);
    let csv = trace.to_csv(&s);
    let expected = fs::read_to_string(golden("four_client_trace.csv")).unwrap();
    let e = &trace.events;
    let branch = trace.states[0].coalition == BTreeSet::from([1, 4])
        && e.get(1).is_some_and(|x| x.left == [4] && x.joined == [2, 3])
        && e.get(2).is_some_and(|x| x.joined == [4] && x.left.is_empty())
        && trace.limit() == Some(10);
    vec![
        check("leave then rejoin, step for step", branch, format!("{:?}", trace.expectations())),
        check("golden trace byte for byte", csv == expected, csv),
    ]
}

fn battery_checks(report: &VerificationReport, names: &[(&'static str, &str)]) -> Vec<Check> {
    names
        .iter()
        .map(|&(label, name)| {
            let (p, f) = report.tally(name);
            let first = report.failures(name).first().map(|c| format!("first {}: {}", c.scenario, c.details));
            check(label, f == 0 && p > 0, format!("{f} of {} scenarios fail, {}", p + f, first.unwrap_or_default()))
        })
        .collect()
}

fn failures_only_in(report: &VerificationReport, scenarios: &[Scenario], check_name: &str, mode: &str) -> bool {
    report.failures(check_name).iter().all(|c| {
        scenarios
            .iter()
            .find(|s| s.name == c.scenario)
            .is_some_and(|s| s.utility_mode.name() == mode)
    })
}

fn payment_optimality() -> Vec<Check> {
    let mut rng = Lcg::new(42);
    let mut suboptimal = Vec::new();
    let mut below_minimum = Vec::new();
    let mut wrong_final = Vec::new();
    let mut efficient_worse = Vec::new();
    for i in 0..200 {
        let s = generate_increasing_homogeneous(&mut rng, format!("payment-42-{i}"), 10);
        let top = *brute_force_fixed_points(&s).last().unwrap();
        let full = plan_homogeneous(&s, None, false).unwrap();
        let efficient = plan_homogeneous(&s, None, true).unwrap();
        let best = brute_force_min_kickstart(&s, top).unwrap().expect("paying everyone reaches the top");
        if full.final_point != top {
            wrong_final.push(s.name.clone());
        }
        if full.total != best.total {
            suboptimal.push(format!(
                "{}: plan {} paying {:?}, minimum {} paying {:?}",
                s.name,
                full.total,
                full.paid_ids(),
                best.total,
                best.subset
            ));
        }
        if full.total < best.total {
            below_minimum.push(s.name.clone());
        }
        if efficient.total > full.total {
            efficient_worse.push(s.name.clone());
        }
    }
    vec![
        check(
            "total equals exhaustive minimum",
            suboptimal.is_empty(),
            format!("{} of 200 differ, first {}", suboptimal.len(), suboptimal.first().cloned().unwrap_or_default()),
        ),
        check("total never below exhaustive minimum", below_minimum.is_empty(), format!("{below_minimum:?}")),
        check("final point is the largest equilibrium", wrong_final.is_empty(), format!("{wrong_final:?}")),
        check("efficient total at most full total", efficient_worse.is_empty(), format!("{efficient_worse:?}")),
    ]
}

fn cli_determinism() -> Vec<Check> {
    let bin = env!("CARGO_BIN_EXE_fedgame");
    let dir = tempfile::tempdir().unwrap();
    let four = golden("four_client.json");
    let three = golden("three_client.json");
    let mirror = golden("mirror.json");
    let (four, three, mirror) = (four.to_str().unwrap(), three.to_str().unwrap(), mirror.to_str().unwrap());
    let runs: Vec<Vec<&str>> = vec![
        vec!["simulate", "--scenario", four],
        vec!["simulate", "--scenario", mirror, "--format", "text"],
        vec!["map", "--scenario", four],
        vec!["map", "--scenario", three, "--format", "text"],
        vec!["equilibria", "--scenario", mirror],
        vec!["equilibria", "--scenario", four, "--format", "text"],
        vec!["basins", "--scenario", four],
        vec!["basins", "--scenario", mirror, "--format", "text"],
        vec!["payment", "--scenario", mirror],
        vec!["payment", "--scenario", four, "--efficient", "--format", "text"],
        vec!["payment", "--scenario", four, "--budget", "0.01"],
        vec!["verify", "--seed", "7", "--count", "50", "--format", "csv"],
        vec!["verify", "--seed", "7", "--count", "50"],
    ];
    let mut differing = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for round in 0..2 {
            let out = dir.path().join(format!("{i}-{round}.out"));
            let status = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&out)
                .output()
                .expect("binary runs");
            outputs.push((status.status.code(), fs::read(&out).unwrap_or_default()));
        }
        if outputs[0] != outputs[1] || outputs[0].1.is_empty() {
            differing.push(args.join(" "));
        }
    }
    let mut generated = Vec::new();
    for round in 0..2 {
        let out = dir.path().join(format!("gen-{round}"));
        Command::new(bin)
            .args(["gen", "--seed", "3", "--count", "10", "--out-dir"])
            .arg(&out)
            .output()
            .expect("binary runs");
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .map(|d| {
                d.map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                })
                .collect()
            })
            .unwrap_or_default();
        files.sort();
        generated.push(files);
    }
    let gen_ok = generated[0].len() == 10 && generated[0] == generated[1];
    vec![
        check("every verb repeats byte for byte", differing.is_empty(), format!("{differing:?}")),
        check("gen repeats byte for byte", gen_ok, format!("{} files", generated[0].len())),
    ]
}

fn timed(
    id: u32,
    title: &'static str,
    limit_secs: u64,
    known: &'static [&'static str],
    f: impl FnOnce() -> Vec<Check>,
) -> Criterion {
    let start = Instant::now();
    let checks = f();
    Criterion {
        id,
        title,
        limit: Duration::from_secs(limit_secs),
        elapsed: start.elapsed(),
        checks,
        known,
    }
}

fn main() -> ExitCode {
    let mut criteria = vec![
        timed(1, "utility identities", 1, &[], utility_identities),
        timed(2, "mirror-utility example", 1, &["every point fixed"], mirror_example),
        timed(3, "oracle four-client example", 1, &[], four_client_example),
    ];

    let limits = BatteryLimits::default();
    let start = Instant::now();
    let scenarios = generate_battery(42, 1000, limits.max_clients);
    let report = run_battery(42, 1000, &limits);
    let battery_time = start.elapsed();

    let mut c4 = battery_checks(
        &report,
        &[
            ("h non-decreasing", "h_monotone"),
            ("converges within N_total+2 steps", "termination"),
            ("eventually monotone", "eventual_monotone"),
        ],
    );
    c4.push(check(
        "h decreases only with heterogeneous samples",
        failures_only_in(&report, &scenarios, "h_monotone", "heterogeneous"),
        "",
    ));
    criteria.push(Criterion {
        id: 4,
        title: "monotone h and termination, seed 42, 1000 scenarios",
        limit: Duration::from_secs(30),
        elapsed: battery_time,
        checks: c4,
        known: &["h non-decreasing"],
    });

    let mut c5 = battery_checks(
        &report,
        &[
            ("fixed points match reference", "fixed_points"),
            ("limits match reference from every start", "limits"),
            ("classification vs perturbation", "classification"),
        ],
    );
    c5.push(check(
        "classification mismatches only in the oracle setting",
        failures_only_in(&report, &scenarios, "classification", "oracle"),
        "",
    ));
    let oracle_count = scenarios.iter().filter(|s| s.utility_mode.name() == "oracle").count();
    c5.push(check("battery includes oracle scenarios", oracle_count > 0, format!("{oracle_count}")));
    criteria.push(Criterion {
        id: 5,
        title: "oracle equivalence, same battery",
        limit: Duration::from_secs(60),
        elapsed: battery_time,
        checks: c5,
        known: &["classification vs perturbation"],
    });

    criteria.push(timed(6, "knapsack exactness, 500 instances", 10, &[], || {
        let r = run_knapsack_battery(42, 500, 15);
        let (p, f) = r.tally("knapsack");
        vec![check("price equals exhaustive minimum", f == 0 && p == 500, format!("{f} of 500 differ"))]
    }));
    criteria.push(timed(
        7,
        "payment optimality, 200 homogeneous scenarios",
        120,
        &["total equals exhaustive minimum"],
        payment_optimality,
    ));
    criteria.push(timed(8, "determinism", 60, &[], cli_determinism));

    for c in &criteria {
        println!("{}", c.line());
    }
    let passed = criteria.iter().filter(|c| c.passed()).count();
    println!("{passed} of {} criteria pass", criteria.len());
    if criteria.iter().all(Criterion::as_documented) {
        ExitCode::SUCCESS
    } else {
        println!("a criterion failed in an undocumented way");
        ExitCode::FAILURE
    }
}
