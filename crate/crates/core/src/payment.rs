//! Payment planning: subsidize a few clients so the dynamic leaves the empty
//! equilibrium and climbs to the largest one.
//!
//! Paid clients are subsidized permanently: once paid they stay in the
//! coalition whatever their utility. Between payment stages the dynamic runs
//! on its own until it settles.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::{
    default_max_steps, simulate_from, DynamicsState, RealizationMap, Terminal,
};
use crate::format::{fmt_f64, join_ids};
use crate::model::{ClientId, Scenario, UtilityMode};
use crate::utility::{oracle_utility, utility_gain, utility_gain_homogeneous};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PaymentError {
    #[error("infeasible: candidates hold {available} samples but {deficit} are needed")]
    Infeasible { available: u64, deficit: u64 },
    #[error("deficit must be positive")]
    ZeroDeficit,
    #[error("candidate {0} has a negative or non-finite price")]
    BadPrice(ClientId),
    #[error("the homogeneous planner needs a homogeneous scenario, got {0}")]
    WrongSetting(&'static str),
    #[error("the dynamic did not settle after paying at {at_point}")]
    NoConvergence { at_point: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: ClientId,
    pub samples: u64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    /// Ascending ids.
    pub ids: Vec<ClientId>,
    pub price: f64,
}

#[derive(Debug, Clone)]
struct Cover {
    price: f64,
    ids: Vec<ClientId>,
}

impl Cover {
    fn beats(&self, other: &Cover) -> bool {
        self.price
            .total_cmp(&other.price)
            .then(self.ids.len().cmp(&other.ids.len()))
            .then_with(|| self.ids.cmp(&other.ids))
            .is_lt()
    }
}

/// Cheapest subset of candidates whose samples sum to at least `deficit`.
///
/// Dynamic program over covered sample counts `0..=deficit`; coverage past
/// the deficit collapses into the last bucket. Ties go to fewer clients,
/// then to the lexicographically smallest id list.
pub fn knapsack_min_payment(
    candidates: &[Candidate],
    deficit: u64,
) -> Result<KnapsackSolution, PaymentError> {
    if deficit == 0 {
        return Err(PaymentError::ZeroDeficit);
    }
    if let Some(c) = candidates.iter().find(|c| !(c.price.is_finite() && c.price >= 0.0)) {
        return Err(PaymentError::BadPrice(c.id));
    }
    let available: u64 = candidates.iter().map(|c| c.samples).sum();
    if available < deficit {
        return Err(PaymentError::Infeasible { available, deficit });
    }
    let mut items = candidates.to_vec();
    items.sort_by_key(|c| c.id);

    let size = deficit as usize + 1;
    let mut best: Vec<Option<Cover>> = vec![None; size];
    best[0] = Some(Cover {
        price: 0.0,
        ids: Vec::new(),
    });
    for item in &items {
        let mut next = best.clone();
        for (covered, cover) in best.iter().enumerate() {
            let Some(cover) = cover else { continue };
            let target = (covered as u64 + item.samples).min(deficit) as usize;
            let mut ids = cover.ids.clone();
            ids.push(item.id);
            let extended = Cover {
                price: cover.price + item.price,
                ids,
            };
            if next[target].as_ref().is_none_or(|cur| extended.beats(cur)) {
                next[target] = Some(extended);
            }
        }
        best = next;
    }
    let cover = best[deficit as usize]
        .take()
        .expect("feasibility checked above");
    Ok(KnapsackSolution {
        ids: cover.ids,
        price: cover.price,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentStage {
    /// Where the dynamic was stuck when the payment went out.
    pub at_point: u64,
    /// `(client, amount)` in ascending id order.
    pub paid: Vec<(ClientId, f64)>,
    /// Where the dynamic settled after the payment.
    pub post_point: u64,
}

impl PaymentStage {
    pub fn amount(&self) -> f64 {
        self.paid.iter().map(|(_, a)| a).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSchedule {
    pub stages: Vec<PaymentStage>,
    pub total: f64,
    pub final_point: u64,
    pub final_coalition: BTreeSet<ClientId>,
    pub budget_truncated: bool,
}

impl PaymentSchedule {
    pub fn paid_ids(&self) -> BTreeSet<ClientId> {
        self.stages
            .iter()
            .flat_map(|s| s.paid.iter().map(|(id, _)| *id))
            .collect()
    }
}

/// Sum of every amount in the schedule, added in ascending client id order
/// so the result does not depend on how payments were split into stages.
pub fn total_payment(schedule: &PaymentSchedule) -> f64 {
    sum_by_id(&schedule.stages)
}

fn sum_by_id(stages: &[PaymentStage]) -> f64 {
    let mut paid: Vec<(ClientId, f64)> = stages.iter().flat_map(|s| s.paid.iter().copied()).collect();
    paid.sort_by_key(|(id, _)| *id);
    paid.iter().map(|(_, a)| a).sum()
}

/// Plans with the method that fits the scenario's setting.
pub fn plan(
    scenario: &Scenario,
    budget: Option<f64>,
    efficient: bool,
) -> Result<PaymentSchedule, PaymentError> {
    match scenario.utility_mode {
        UtilityMode::Homogeneous => plan_homogeneous(scenario, budget, efficient),
        _ => plan_oracle(scenario, budget, efficient),
    }
}

fn smallest_above_diagonal(curve: &[u64], after: u64) -> Option<u64> {
    (after + 1..curve.len() as u64).find(|&j| curve[j as usize] >= j)
}

struct Run<'a> {
    scenario: &'a Scenario,
    budget: Option<f64>,
    stages: Vec<PaymentStage>,
    total: f64,
    subsidized: BTreeSet<ClientId>,
    coalition: BTreeSet<ClientId>,
    point: u64,
    truncated: bool,
}

impl<'a> Run<'a> {
    fn new(scenario: &'a Scenario, budget: Option<f64>) -> Self {
        Run {
            scenario,
            budget,
            stages: Vec::new(),
            total: 0.0,
            subsidized: BTreeSet::new(),
            coalition: BTreeSet::new(),
            point: 0,
            truncated: false,
        }
    }

    /// Pays `paid`, lets the dynamic settle, and records the stage. Returns
    /// false when the budget does not cover the stage.
    fn pay(&mut self, mut paid: Vec<(ClientId, f64)>) -> Result<bool, PaymentError> {
        paid.sort_by_key(|(id, _)| *id);
        let amount: f64 = paid.iter().map(|(_, a)| a).sum();
        if let Some(b) = self.budget {
            if self.total + amount > b {
                self.truncated = true;
                return Ok(false);
            }
        }
        self.subsidized.extend(paid.iter().map(|(id, _)| *id));
        let mut start_coalition = self.coalition.clone();
        start_coalition.extend(paid.iter().map(|(id, _)| *id));
        let samples = self.scenario.samples_of(&start_coalition);
        let start = DynamicsState {
            step: 0,
            expectation: if self.scenario.is_homogeneous() {
                start_coalition.len() as u64
            } else {
                samples
            },
            coalition: start_coalition,
            coalition_samples: samples,
        };
        let trace = simulate_from(
            self.scenario,
            start,
            &self.subsidized,
            default_max_steps(self.scenario),
        );
        let Terminal::ConvergedAt(post) = trace.terminal else {
            return Err(PaymentError::NoConvergence {
                at_point: self.point,
            });
        };
        self.total += amount;
        self.stages.push(PaymentStage {
            at_point: self.point,
            paid,
            post_point: post,
        });
        self.coalition = trace.final_state().coalition.clone();
        self.point = post;
        Ok(true)
    }

    fn finish(self) -> PaymentSchedule {
        PaymentSchedule {
            total: sum_by_id(&self.stages),
            stages: self.stages,
            final_point: self.point,
            final_coalition: self.coalition,
            budget_truncated: self.truncated,
        }
    }
}

/// Greedy tipping-point strategy for clients with equal sample counts.
///
/// At every point where the dynamic is stuck, pays the cheapest non-members
/// needed to reach the next `x` with `h(x) >= x` (a single client at a
/// tipping or flat point, the whole gap at a stable one), then lets the
/// dynamic climb. Stops at the largest equilibrium or when the next stage
/// would exceed the budget. Always starts from the empty coalition.
pub fn plan_homogeneous(
    scenario: &Scenario,
    budget: Option<f64>,
    efficient: bool,
) -> Result<PaymentSchedule, PaymentError> {
    if !scenario.is_homogeneous() {
        return Err(PaymentError::WrongSetting(scenario.utility_mode.name()));
    }
    let map = RealizationMap::new(scenario);
    let curve = map.curve();
    let n = scenario.homogeneous_samples();
    let mut run = Run::new(scenario, budget);
    while let Some(target) = smallest_above_diagonal(curve, run.point) {
        let shared = utility_gain_homogeneous(run.point, n, scenario.sigma2());
        // the coalition at a settled point is the cheapest prefix, so the
        // cheapest non-members are the next clients in cost order
        let paid: Vec<(ClientId, f64)> = scenario.clients[run.point as usize..target as usize]
            .iter()
            .map(|c| {
                let amount = if efficient {
                    (c.cost - shared).max(0.0)
                } else {
                    c.cost
                };
                (c.id, amount)
            })
            .collect();
        if !run.pay(paid)? {
            break;
        }
    }
    Ok(run.finish())
}

/// Utility a non-member would see at the current coalition, used for
/// efficient prices.
fn current_utility(scenario: &Scenario, coalition: &BTreeSet<ClientId>, id: ClientId, total: u64) -> f64 {
    match &scenario.utility_mode {
        UtilityMode::Oracle(spec) => oracle_utility(spec, total, scenario.sigma2()),
        UtilityMode::Homogeneous => utility_gain_homogeneous(
            coalition.len() as u64,
            scenario.homogeneous_samples(),
            scenario.sigma2(),
        ),
        UtilityMode::Heterogeneous => {
            let mut samples: Vec<u64> = coalition
                .iter()
                .filter_map(|m| scenario.client(*m))
                .map(|c| c.samples)
                .collect();
            samples.push(scenario.client(id).map_or(0, |c| c.samples));
            utility_gain(&samples, samples.len() - 1, scenario.sigma2())
        }
    }
}

/// Stage-wise knapsack strategy for the oracle setting (also used for the
/// heterogeneous mean-estimation setting).
///
/// Each stage finds the next sample count `n_next > N_S` with
/// `h(n_next) >= n_next`, buys the cheapest set of non-members covering
/// `n_next - N_S` samples, and lets the dynamic settle.
pub fn plan_oracle(
    scenario: &Scenario,
    budget: Option<f64>,
    efficient: bool,
) -> Result<PaymentSchedule, PaymentError> {
    let map = RealizationMap::new(scenario);
    let curve = map.curve();
    let mut run = Run::new(scenario, budget);
    // every stage subsidizes at least one new client
    for _ in 0..scenario.num_clients() {
        let Some(target) = smallest_above_diagonal(curve, run.point) else {
            break;
        };
        let total = scenario.samples_of(&run.coalition);
        let candidates: Vec<Candidate> = scenario
            .clients
            .iter()
            .filter(|c| !run.coalition.contains(&c.id))
            .map(|c| {
                let price = if efficient {
                    (c.cost - current_utility(scenario, &run.coalition, c.id, total)).max(0.0)
                } else {
                    c.cost
                };
                Candidate {
                    id: c.id,
                    samples: c.samples,
                    price,
                }
            })
            .collect();
        let deficit = target.saturating_sub(total).max(1);
        let choice = knapsack_min_payment(&candidates, deficit)?;
        let paid = candidates
            .iter()
            .filter(|c| choice.ids.contains(&c.id))
            .map(|c| (c.id, c.price))
            .collect();
        if !run.pay(paid)? {
            break;
        }
    }
    Ok(run.finish())
}

/// Smallest `j > current` with `h(j) >= j`.
pub fn next_tipping(current: u64, scenario: &Scenario) -> Option<u64> {
    let map = RealizationMap::new(scenario);
    smallest_above_diagonal(map.curve(), current)
}

/// Strict-inequality check on a settled coalition: members strictly prefer
/// staying, non-members strictly prefer staying out even with one more unit
/// in the coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    /// Members with `U_i(N_S) <= c_i`.
    pub weak_members: Vec<ClientId>,
    /// Non-members with `U_j(N_S + 1) >= c_j`.
    pub tempted_outsiders: Vec<ClientId>,
}

impl RobustnessReport {
    pub fn is_robust(&self) -> bool {
        self.weak_members.is_empty() && self.tempted_outsiders.is_empty()
    }
}

pub fn robustness(scenario: &Scenario, coalition: &BTreeSet<ClientId>) -> RobustnessReport {
    let total = scenario.samples_of(coalition);
    let sigma2 = scenario.sigma2();
    let mut weak_members = Vec::new();
    let mut tempted_outsiders = Vec::new();
    for c in &scenario.clients {
        let member = coalition.contains(&c.id);
        let u = match &scenario.utility_mode {
            UtilityMode::Homogeneous => {
                let k = coalition.len() as u64 + u64::from(!member);
                utility_gain_homogeneous(k, c.samples, sigma2)
            }
            UtilityMode::Oracle(spec) => oracle_utility(spec, total + u64::from(!member), sigma2),
            UtilityMode::Heterogeneous => {
                let mut samples: Vec<u64> = coalition
                    .iter()
                    .filter(|&&m| m != c.id)
                    .filter_map(|m| scenario.client(*m))
                    .map(|m| m.samples)
                    .collect();
                samples.push(c.samples);
                utility_gain(&samples, samples.len() - 1, sigma2)
            }
        };
        if member && u <= c.cost {
            weak_members.push(c.id);
        }
        if !member && u >= c.cost {
            tempted_outsiders.push(c.id);
        }
    }
    weak_members.sort_unstable();
    tempted_outsiders.sort_unstable();
    RobustnessReport {
        weak_members,
        tempted_outsiders,
    }
}

pub const PAYMENT_HEADER: &str =
    "record,stage,at_point,paid_ids,amounts,post_point,total,final_point,budget_truncated";

pub fn schedule_csv(schedule: &PaymentSchedule) -> String {
    let mut out = format!("{PAYMENT_HEADER}\n");
    for (i, s) in schedule.stages.iter().enumerate() {
        let ids: Vec<ClientId> = s.paid.iter().map(|(id, _)| *id).collect();
        let amounts: Vec<String> = s.paid.iter().map(|(_, a)| fmt_f64(*a)).collect();
        let _ = writeln!(
            out,
            "stage,{i},{},{},{},{},,,",
            s.at_point,
            join_ids(&ids),
            amounts.join(";"),
            s.post_point
        );
    }
    let _ = writeln!(
        out,
        "summary,,,,,,{},{},{}",
        fmt_f64(schedule.total),
        schedule.final_point,
        schedule.budget_truncated
    );
    out
}

pub fn schedule_text(schedule: &PaymentSchedule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:>9} {:>10} {:>10}  paid", "stage", "at_point", "post_point", "amount");
    for (i, s) in schedule.stages.iter().enumerate() {
        let paid: Vec<String> = s
            .paid
            .iter()
            .map(|(id, a)| format!("{id}:{}", fmt_f64(*a)))
            .collect();
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>10} {:>10}  {}",
            i,
            s.at_point,
            s.post_point,
            fmt_f64(s.amount()),
            paid.join(" ")
        );
    }
    let _ = writeln!(out, "total            {}", fmt_f64(schedule.total));
    let _ = writeln!(out, "final_point      {}", schedule.final_point);
    let _ = writeln!(out, "budget_truncated {}", schedule.budget_truncated);
    out
}
