//! Seeded random batteries that cross-check the solvers against the
//! brute-force references.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::brute::{
    brute_force_fixed_points, brute_force_knapsack, brute_force_limit, brute_force_min_kickstart,
};
use super::rng::Lcg;
use crate::dynamics::{eventually_monotone, simulate, RealizationMap, Terminal};
use crate::equilibria::{enumerate_with, EquilibriumKind};
use crate::format::fmt_f64;
use crate::model::{Client, Initial, OracleSpec, Prior, Scenario, UtilityMode};
use crate::payment::{knapsack_min_payment, plan, plan_homogeneous, Candidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatteryLimits {
    /// Upper bound on clients per scenario.
    pub max_clients: usize,
    /// Scenarios with more clients skip the exhaustive payment check.
    pub kickstart_max_clients: usize,
}

impl Default for BatteryLimits {
    fn default() -> Self {
        BatteryLimits {
            max_clients: 12,
            kickstart_max_clients: 12,
        }
    }
}

/// Cost drawn log-uniformly from `[1e-3, 10)`.
fn draw_cost(rng: &mut Lcg) -> f64 {
    10f64.powf(-3.0 + 4.0 * rng.next_f64())
}

/// One random scenario: 1 to `max_clients` clients holding 1 to 10 samples,
/// log-uniform costs, prior variance in `[0, 2)`, and a setting picked
/// uniformly from homogeneous, heterogeneous and a log-saturating oracle.
pub fn generate_scenario(rng: &mut Lcg, name: String, max_clients: usize) -> Scenario {
    let m = rng.range(1, max_clients.max(1) as u64) as u32;
    let mode = match rng.next_u64() % 3 {
        0 => UtilityMode::Homogeneous,
        1 => UtilityMode::Heterogeneous,
        _ => UtilityMode::Oracle(OracleSpec::LogSaturating {
            scale: 10f64.powf(-1.0 + 1.5 * rng.next_f64()),
            rate: 10f64.powf(-2.0 + 2.0 * rng.next_f64()),
        }),
    };
    let sigma2 = 2.0 * rng.next_f64();
    let shared = rng.range(1, 10);
    let clients = (1..=m)
        .map(|id| {
            let samples = if mode == UtilityMode::Homogeneous {
                shared
            } else {
                rng.range(1, 10)
            };
            Client::new(id, samples, draw_cost(rng)).expect("generated client is valid")
        })
        .collect();
    Scenario::new(name, clients, Prior::new(sigma2).unwrap(), mode, Initial::Expectation(0))
        .expect("generated scenario is valid")
}

/// Homogeneous scenario whose costs are strictly increasing in id.
pub fn generate_increasing_homogeneous(rng: &mut Lcg, name: String, max_clients: usize) -> Scenario {
    let m = rng.range(1, max_clients.max(1) as u64) as usize;
    let sigma2 = 2.0 * rng.next_f64();
    let n = rng.range(1, 10);
    let mut costs: Vec<f64> = Vec::with_capacity(m);
    while costs.len() < m {
        let c = draw_cost(rng);
        if !costs.contains(&c) {
            costs.push(c);
        }
    }
    costs.sort_by(f64::total_cmp);
    let clients = costs
        .iter()
        .enumerate()
        .map(|(i, &c)| Client::new(i as u32 + 1, n, c).unwrap())
        .collect();
    Scenario::new(name, clients, Prior::new(sigma2).unwrap(), UtilityMode::Homogeneous, Initial::Expectation(0))
        .expect("generated scenario is valid")
}

/// The scenarios `run_battery(seed, count, ..)` checks, in order.
pub fn generate_battery(seed: u64, count: usize, max_clients: usize) -> Vec<Scenario> {
    let mut rng = Lcg::new(seed);
    (0..count)
        .map(|i| generate_scenario(&mut rng, format!("battery-{seed}-{i}"), max_clients))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub scenario: String,
    pub check: &'static str,
    pub passed: bool,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub scenario: String,
    pub check: &'static str,
    pub details: String,
    /// The scenario as a loadable document.
    pub scenario_json: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub title: String,
    pub outcomes: Vec<CheckOutcome>,
    pub counterexamples: Vec<Counterexample>,
}

impl VerificationReport {
    fn new(title: String) -> Self {
        VerificationReport {
            title,
            ..Default::default()
        }
    }

    fn record(&mut self, scenario: &Scenario, check: &'static str, failure: Option<String>) {
        let passed = failure.is_none();
        let details = failure.unwrap_or_default();
        if !passed {
            self.counterexamples.push(Counterexample {
                scenario: scenario.name.clone(),
                check,
                details: details.clone(),
                scenario_json: scenario.to_json(),
            });
        }
        self.outcomes.push(CheckOutcome {
            scenario: scenario.name.clone(),
            check,
            passed,
            details,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// `(passed, failed)` counts for one check name.
    pub fn tally(&self, check: &str) -> (usize, usize) {
        self.outcomes
            .iter()
            .filter(|o| o.check == check)
            .fold((0, 0), |(p, f), o| if o.passed { (p + 1, f) } else { (p, f + 1) })
    }

    /// Check names in first-seen order.
    pub fn checks(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        for o in &self.outcomes {
            if !names.contains(&o.check) {
                names.push(o.check);
            }
        }
        names
    }

    pub fn failures(&self, check: &str) -> Vec<&Counterexample> {
        self.counterexamples.iter().filter(|c| c.check == check).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.title);
        for name in self.checks() {
            let (p, f) = self.tally(name);
            let status = if f == 0 { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {name:<22} {p} passed, {f} failed");
        }
        let _ = writeln!(
            out,
            "overall {}",
            if self.all_passed() { "PASS" } else { "FAIL" }
        );
        for c in &self.counterexamples {
            let _ = writeln!(out, "\ncounterexample {} [{}]: {}", c.scenario, c.check, c.details);
            out.push_str(&c.scenario_json);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,check,result,details\n");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                csv_field(&o.scenario),
                o.check,
                if o.passed { "pass" } else { "fail" },
                csv_field(&o.details)
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn first_mismatch<T: PartialEq + std::fmt::Debug>(a: &[T], b: &[T]) -> Option<String> {
    if a == b {
        None
    } else {
        Some(format!("solver {a:?} vs reference {b:?}"))
    }
}

/// Runs every cross-check on one scenario and appends the outcomes.
pub fn check_scenario(scenario: &Scenario, limits: &BatteryLimits, report: &mut VerificationReport) {
    let map = RealizationMap::new(scenario);
    let curve = map.curve();
    let max = map.domain_max();

    let drop = curve.windows(2).position(|w| w[1] < w[0]);
    report.record(
        scenario,
        "h_monotone",
        drop.map(|x| format!("h({}) = {} > h({}) = {}", x, curve[x], x + 1, curve[x + 1])),
    );

    let reports = enumerate_with(&map);
    let points: Vec<u64> = reports.iter().map(|r| r.point).collect();
    report.record(
        scenario,
        "fixed_points",
        first_mismatch(&points, &brute_force_fixed_points(scenario)),
    );

    let mut limit_failure = None;
    let mut slow = None;
    let mut wobble = None;
    let mut solver_limits = Vec::with_capacity(max as usize + 1);
    for start in 0..=max {
        let s = scenario
            .with_initial(Initial::Expectation(start))
            .expect("start is inside the domain");
        let trace = simulate(&s, max + 10);
        let limit = trace.limit();
        solver_limits.push(limit);
        let reference = brute_force_limit(scenario, start);
        if limit != reference && limit_failure.is_none() {
            limit_failure = Some(format!("start {start}: solver {limit:?} vs reference {reference:?}"));
        }
        let within = matches!(trace.terminal, Terminal::ConvergedAt(_)) && trace.steps() as u64 <= max + 2;
        if !within && slow.is_none() {
            slow = Some(format!(
                "start {start}: {} after {} steps, expectations {:?}",
                if limit.is_some() { "converged" } else { "not converged" },
                trace.steps(),
                trace.expectations()
            ));
        }
        if !eventually_monotone(&trace.expectations()) && wobble.is_none() {
            wobble = Some(format!("start {start}: expectations {:?}", trace.expectations()));
        }
    }
    report.record(scenario, "limits", limit_failure);
    report.record(scenario, "termination", slow);
    report.record(scenario, "eventual_monotone", wobble);

    // a stable point pulls back both unit neighbors; any other kind lets at
    // least one of them escape
    let mut misclassified = None;
    for r in &reports {
        let k = r.point;
        let neighbors = [k.checked_sub(1), (k < max).then_some(k + 1)];
        let returns = neighbors
            .iter()
            .flatten()
            .all(|&x| brute_force_limit(scenario, x) == Some(k));
        if returns != (r.kind == EquilibriumKind::Stable) && misclassified.is_none() {
            misclassified = Some(format!(
                "point {k} classified {} but neighbors {} return",
                r.kind.as_str(),
                if returns { "all" } else { "do not all" }
            ));
        }
    }
    report.record(scenario, "classification", misclassified);

    let candidates: Vec<Candidate> = scenario
        .clients
        .iter()
        .map(|c| Candidate {
            id: c.id,
            samples: c.samples,
            price: c.cost,
        })
        .collect();
    let total = scenario.total_samples();
    let mut knapsack_failure = None;
    for deficit in [1, (total / 2).max(1), total] {
        if let Some(f) = compare_knapsack(&candidates, deficit) {
            knapsack_failure.get_or_insert(f);
        }
    }
    report.record(scenario, "knapsack", knapsack_failure);

    if scenario.num_clients() <= limits.kickstart_max_clients {
        report.record(scenario, "kickstart", check_kickstart(scenario, &points));
    }
}

fn compare_knapsack(candidates: &[Candidate], deficit: u64) -> Option<String> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by_key(|c| c.id);
    let pairs: Vec<(u64, f64)> = sorted.iter().map(|c| (c.samples, c.price)).collect();
    let solver = knapsack_min_payment(candidates, deficit).map(|s| s.price).ok();
    let reference = brute_force_knapsack(&pairs, deficit).ok();
    (solver != reference).then(|| {
        format!(
            "deficit {deficit}: solver {} vs reference {}",
            solver.map_or("infeasible".into(), fmt_f64),
            reference.map_or("infeasible".into(), fmt_f64)
        )
    })
}

/// The planner must reach the largest equilibrium and can never beat the
/// exhaustive minimum. In the homogeneous setting it must land exactly on
/// that equilibrium and match the minimum; elsewhere subsidized clients may
/// carry the coalition past it.
fn check_kickstart(scenario: &Scenario, fixed_points: &[u64]) -> Option<String> {
    let target = *fixed_points.last().expect("0 is always a fixed point");
    let schedule = match plan(scenario, None, false) {
        Ok(s) => s,
        Err(e) => return Some(format!("planner failed: {e}")),
    };
    let landed = if scenario.is_homogeneous() {
        schedule.final_point == target
    } else {
        schedule.final_point >= target
    };
    if !landed {
        return Some(format!(
            "plan settles at {} but the largest equilibrium is {target}",
            schedule.final_point
        ));
    }
    let best = match brute_force_min_kickstart(scenario, target) {
        Ok(Some(b)) => b,
        Ok(None) => return Some(format!("no subsidy reaches {target} but the plan does")),
        Err(e) => return Some(e.to_string()),
    };
    if best.total > schedule.total {
        return Some(format!(
            "plan total {} is below the exhaustive minimum {}",
            fmt_f64(schedule.total),
            fmt_f64(best.total)
        ));
    }
    if scenario.is_homogeneous() && best.total != schedule.total {
        return Some(format!(
            "plan total {} (paid {:?}) differs from the exhaustive minimum {} (paid {:?})",
            fmt_f64(schedule.total),
            schedule.paid_ids(),
            fmt_f64(best.total),
            best.subset
        ));
    }
    None
}

/// Cross-checks `count` random scenarios.
pub fn run_battery(seed: u64, count: usize, limits: &BatteryLimits) -> VerificationReport {
    let mut report = VerificationReport::new(format!(
        "battery seed={seed} count={count} max_clients={}",
        limits.max_clients
    ));
    for scenario in generate_battery(seed, count, limits.max_clients) {
        check_scenario(&scenario, limits, &mut report);
    }
    report
}

/// Random knapsack instances: up to `max_candidates` candidates with 1 to
/// 10 samples and log-uniform prices, and a deficit between 1 and the total.
pub fn run_knapsack_battery(seed: u64, count: usize, max_candidates: usize) -> VerificationReport {
    let mut report = VerificationReport::new(format!(
        "knapsack seed={seed} count={count} max_candidates={max_candidates}"
    ));
    let mut rng = Lcg::new(seed);
    for i in 0..count {
        let m = rng.range(1, max_candidates.max(1) as u64) as u32;
        let candidates: Vec<Candidate> = (1..=m)
            .map(|id| Candidate {
                id,
                samples: rng.range(1, 10),
                price: draw_cost(&mut rng),
            })
            .collect();
        let total: u64 = candidates.iter().map(|c| c.samples).sum();
        let deficit = rng.range(1, total);
        let failure = compare_knapsack(&candidates, deficit);
        // instances are not scenarios; wrap them so counterexamples load
        let clients = candidates
            .iter()
            .map(|c| Client::new(c.id, c.samples, c.price).unwrap())
            .collect();
        let holder = Scenario::new(
            format!("knapsack-{seed}-{i}-deficit-{deficit}"),
            clients,
            Prior::new(0.0).unwrap(),
            UtilityMode::Heterogeneous,
            Initial::Expectation(0),
        )
        .unwrap();
        report.record(&holder, "knapsack", failure);
    }
    report
}

/// Homogeneous scenarios with strictly increasing costs: the greedy plan
/// against the exhaustive minimum, plus efficient against full payments.
pub fn run_payment_battery(seed: u64, count: usize, max_clients: usize) -> VerificationReport {
    let mut report = VerificationReport::new(format!(
        "payment seed={seed} count={count} max_clients={max_clients}"
    ));
    let mut rng = Lcg::new(seed);
    for i in 0..count {
        let s = generate_increasing_homogeneous(&mut rng, format!("payment-{seed}-{i}"), max_clients);
        let points = brute_force_fixed_points(&s);
        report.record(&s, "kickstart", check_kickstart(&s, &points));
        let efficient_gap = match (plan_homogeneous(&s, None, true), plan_homogeneous(&s, None, false)) {
            (Ok(e), Ok(f)) if e.total <= f.total => None,
            (Ok(e), Ok(f)) => Some(format!(
                "efficient {} exceeds full {}",
                fmt_f64(e.total),
                fmt_f64(f.total)
            )),
            (Err(e), _) | (_, Err(e)) => Some(format!("planner failed: {e}")),
        };
        report.record(&s, "efficient_le_full", efficient_gap);
    }
    report
}

/// Failure counts per check, for quick summaries.
pub fn failure_counts(report: &VerificationReport) -> BTreeMap<&'static str, usize> {
    report
        .checks()
        .into_iter()
        .map(|c| (c, report.tally(c).1))
        .collect()
}
