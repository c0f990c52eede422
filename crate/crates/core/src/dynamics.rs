//! Realization mappings and the best-response participation dynamic.
//!
//! In the homogeneous setting expectations count clients; in the
//! heterogeneous and oracle settings they count samples. Each step every
//! client compares its expected utility gain with its cost and joins iff
//! `U_i >= c_i`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::format::{fmt_f64, join_ids};
use crate::model::{ClientId, Initial, Scenario, UtilityMode};
use crate::utility::{additional_gain, oracle_utility, utility_gain, utility_gain_homogeneous};

/// The coalition the population infers from a shared sample expectation in
/// the heterogeneous setting.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredCoalition {
    /// Client indices (into `scenario.clients`) in descending z order.
    pub order: Vec<usize>,
    /// Length of the inferred prefix.
    pub prefix_len: usize,
    /// Ids of the prefix members, in z order.
    pub ids: Vec<ClientId>,
    /// Total samples held by the prefix.
    pub samples: u64,
}

/// Which clients would join at a given expectation, with the utility each
/// one compared against its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub members: BTreeSet<ClientId>,
    pub samples: u64,
    /// Indexed like `scenario.clients`; `None` when the client did not
    /// evaluate a utility at this step.
    pub utilities: Vec<Option<f64>>,
}

/// Homogeneous realization: number of cost-sorted clients with
/// `c_i <= U(K, n)`.
pub fn h_homogeneous(k: u64, scenario: &Scenario) -> u64 {
    if k == 0 {
        return 0;
    }
    let u = utility_gain_homogeneous(k, scenario.homogeneous_samples(), scenario.sigma2());
    scenario.clients.iter().filter(|c| c.cost <= u).count() as u64
}

/// Orders clients by z-score evaluated at `N_S := k` and takes the shortest
/// prefix whose samples reach `k`.
pub fn infer_coalition(k: u64, scenario: &Scenario) -> InferredCoalition {
    let m = scenario.clients.len();
    if k == 0 {
        return InferredCoalition {
            order: (0..m).collect(),
            prefix_len: 0,
            ids: Vec::new(),
            samples: 0,
        };
    }
    let sigma2 = scenario.sigma2();
    let z: Vec<f64> = scenario
        .clients
        .iter()
        .map(|c| additional_gain(c.samples, k as f64, sigma2) - c.cost)
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        z[b].total_cmp(&z[a])
            .then_with(|| scenario.clients[a].id.cmp(&scenario.clients[b].id))
    });
    let mut samples = 0;
    let mut prefix_len = 0;
    for &i in &order {
        if samples >= k {
            break;
        }
        samples += scenario.clients[i].samples;
        prefix_len += 1;
    }
    let ids = order[..prefix_len]
        .iter()
        .map(|&i| scenario.clients[i].id)
        .collect();
    InferredCoalition {
        order,
        prefix_len,
        ids,
        samples,
    }
}

fn realize_heterogeneous(k: u64, scenario: &Scenario) -> Realization {
    let inferred = infer_coalition(k, scenario);
    let prefix = &inferred.order[..inferred.prefix_len];
    let prefix_samples: Vec<u64> = prefix.iter().map(|&i| scenario.clients[i].samples).collect();
    let mut utilities = vec![None; scenario.clients.len()];
    let mut members = BTreeSet::new();
    let mut samples = 0;
    for (pos, &i) in prefix.iter().enumerate() {
        let u = utility_gain(&prefix_samples, pos, scenario.sigma2());
        utilities[i] = Some(u);
        let client = &scenario.clients[i];
        if u >= client.cost {
            members.insert(client.id);
            samples += client.samples;
        }
    }
    Realization {
        members,
        samples,
        utilities,
    }
}

/// Heterogeneous realization: samples of inferred-coalition members whose
/// utility on the inferred coalition covers their cost.
pub fn h_heterogeneous(k: u64, scenario: &Scenario) -> u64 {
    realize_heterogeneous(k, scenario).samples
}

/// Oracle realization: samples of all clients with `u(N) >= c_i`.
pub fn h_oracle(total: u64, scenario: &Scenario) -> u64 {
    let UtilityMode::Oracle(spec) = &scenario.utility_mode else {
        panic!("h_oracle called on a {} scenario", scenario.utility_mode.name());
    };
    let u = oracle_utility(spec, total, scenario.sigma2());
    scenario
        .clients
        .iter()
        .filter(|c| u >= c.cost)
        .map(|c| c.samples)
        .sum()
}

/// `h` for whichever setting the scenario is in.
pub fn h(x: u64, scenario: &Scenario) -> u64 {
    match scenario.utility_mode {
        UtilityMode::Homogeneous => h_homogeneous(x, scenario),
        UtilityMode::Heterogeneous => h_heterogeneous(x, scenario),
        UtilityMode::Oracle(_) => h_oracle(x, scenario),
    }
}

/// Realization mapping bound to a scenario, with a lazily built table over
/// the whole domain. The table is built once and then only read.
#[derive(Debug)]
pub struct RealizationMap<'a> {
    scenario: &'a Scenario,
    table: OnceLock<Vec<u64>>,
}

impl<'a> RealizationMap<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        RealizationMap {
            scenario,
            table: OnceLock::new(),
        }
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn domain_max(&self) -> u64 {
        self.scenario.domain_max()
    }

    /// `h(x)` for every `x` in `0..=domain_max`.
    pub fn curve(&self) -> &[u64] {
        self.table.get_or_init(|| {
            (0..=self.domain_max()).map(|x| h(x, self.scenario)).collect()
        })
    }

    pub fn value(&self, x: u64) -> u64 {
        match self.table.get() {
            Some(t) => t[x as usize],
            None => h(x, self.scenario),
        }
    }
}

// ---------------------------------------------------------------------------
// Dynamics

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicsState {
    pub step: u64,
    /// Shared expectation; equals the coalition's size (homogeneous) or
    /// sample total (otherwise) after the first step.
    pub expectation: u64,
    pub coalition: BTreeSet<ClientId>,
    pub coalition_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvent {
    pub joined: Vec<ClientId>,
    pub left: Vec<ClientId>,
    /// Utility each client compared against its cost to produce this state,
    /// indexed like `scenario.clients`.
    pub utilities: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    ConvergedAt(u64),
    MaxStepsExceeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace {
    pub states: Vec<DynamicsState>,
    /// One entry per state; the entry for the initial state is empty.
    pub events: Vec<StepEvent>,
    pub terminal: Terminal,
}

impl DynamicsTrace {
    pub fn limit(&self) -> Option<u64> {
        match self.terminal {
            Terminal::ConvergedAt(k) => Some(k),
            Terminal::MaxStepsExceeded => None,
        }
    }

    pub fn expectations(&self) -> Vec<u64> {
        self.states.iter().map(|s| s.expectation).collect()
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &DynamicsState {
        self.states.last().expect("trace has an initial state")
    }
}

pub const TRACE_HEADER: &str = "step,expectation,coalition_size,coalition_samples,joined_ids,left_ids,min_member_utility,max_nonmember_utility";

impl DynamicsTrace {
    /// One CSV row per state, ids ascending, empty cells where a value does
    /// not apply.
    pub fn to_csv(&self, scenario: &Scenario) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for (state, event) in self.states.iter().zip(&self.events) {
            let mut min_member: Option<f64> = None;
            let mut max_non: Option<f64> = None;
            for (client, u) in scenario.clients.iter().zip(&event.utilities) {
                let Some(u) = *u else { continue };
                if state.coalition.contains(&client.id) {
                    min_member = Some(min_member.map_or(u, |m| m.min(u)));
                } else {
                    max_non = Some(max_non.map_or(u, |m| m.max(u)));
                }
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                state.step,
                state.expectation,
                state.coalition.len(),
                state.coalition_samples,
                join_ids(&event.joined),
                join_ids(&event.left),
                min_member.map(fmt_f64).unwrap_or_default(),
                max_non.map(fmt_f64).unwrap_or_default(),
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (state, event) in self.states.iter().zip(&self.events) {
            let members: Vec<ClientId> = state.coalition.iter().copied().collect();
            let _ = writeln!(
                out,
                "t={:<3} K={:<5} |S|={:<3} N_S={:<5} S={{{}}} joined=[{}] left=[{}]",
                state.step,
                state.expectation,
                state.coalition.len(),
                state.coalition_samples,
                join_ids(&members).replace(';', ","),
                join_ids(&event.joined).replace(';', ","),
                join_ids(&event.left).replace(';', ","),
            );
        }
        match self.terminal {
            Terminal::ConvergedAt(k) => {
                let _ = writeln!(out, "converged at {k} after {} steps", self.steps());
            }
            Terminal::MaxStepsExceeded => {
                let _ = writeln!(out, "max steps exceeded after {} steps", self.steps());
            }
        }
        out
    }
}

/// Default step budget: the domain size plus a margin. Monotone dynamics
/// settle within `domain_max + 2` steps.
pub fn default_max_steps(scenario: &Scenario) -> u64 {
    scenario.domain_max() + 10
}

fn state_from_coalition(scenario: &Scenario, step: u64, coalition: BTreeSet<ClientId>) -> DynamicsState {
    let coalition_samples = scenario.samples_of(&coalition);
    let expectation = if scenario.is_homogeneous() {
        coalition.len() as u64
    } else {
        coalition_samples
    };
    DynamicsState {
        step,
        expectation,
        coalition,
        coalition_samples,
    }
}

/// The lowest-cost clients (ties by ascending id) whose samples first reach
/// `target`.
pub fn cheapest_prefix_reaching(scenario: &Scenario, target: u64) -> BTreeSet<ClientId> {
    let mut order: Vec<usize> = (0..scenario.clients.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&scenario.clients[a], &scenario.clients[b]);
        ca.cost.total_cmp(&cb.cost).then(ca.id.cmp(&cb.id))
    });
    let mut out = BTreeSet::new();
    let mut samples = 0;
    for i in order {
        if samples >= target {
            break;
        }
        samples += scenario.clients[i].samples;
        out.insert(scenario.clients[i].id);
    }
    out
}

/// Builds the step-0 state for an initial condition.
///
/// An expectation is turned into a concrete coalition: the `K` cheapest
/// clients (homogeneous), the inferred coalition (heterogeneous), or the
/// cheapest clients whose samples reach `K` (oracle). A coalition given
/// directly fixes the expectation to its size or sample total.
pub fn initial_state(scenario: &Scenario, initial: &Initial) -> DynamicsState {
    match initial {
        Initial::Coalition(ids) => state_from_coalition(scenario, 0, ids.clone()),
        Initial::Expectation(k) => {
            let coalition: BTreeSet<ClientId> = match scenario.utility_mode {
                UtilityMode::Homogeneous => scenario
                    .clients
                    .iter()
                    .take(*k as usize)
                    .map(|c| c.id)
                    .collect(),
                UtilityMode::Heterogeneous => infer_coalition(*k, scenario).ids.into_iter().collect(),
                UtilityMode::Oracle(_) => cheapest_prefix_reaching(scenario, *k),
            };
            let mut state = state_from_coalition(scenario, 0, coalition);
            if !matches!(scenario.utility_mode, UtilityMode::Oracle(_)) {
                state.expectation = *k;
            }
            state
        }
    }
}

fn realize_oracle(state: &DynamicsState, scenario: &Scenario) -> Realization {
    let UtilityMode::Oracle(spec) = &scenario.utility_mode else {
        unreachable!()
    };
    let total = state.coalition_samples;
    let mut members = BTreeSet::new();
    let mut samples = 0;
    let mut utilities = Vec::with_capacity(scenario.clients.len());
    for c in &scenario.clients {
        // non-members evaluate the coalition they would form by joining
        let seen = if state.coalition.contains(&c.id) {
            total
        } else {
            total + c.samples
        };
        let u = oracle_utility(spec, seen, scenario.sigma2());
        utilities.push(Some(u));
        if u >= c.cost {
            members.insert(c.id);
            samples += c.samples;
        }
    }
    Realization {
        members,
        samples,
        utilities,
    }
}

fn realize_homogeneous(k: u64, scenario: &Scenario) -> Realization {
    let u = utility_gain_homogeneous(k, scenario.homogeneous_samples(), scenario.sigma2());
    let members: BTreeSet<ClientId> = scenario
        .clients
        .iter()
        .filter(|c| c.cost <= u)
        .map(|c| c.id)
        .collect();
    Realization {
        samples: members.len() as u64 * scenario.homogeneous_samples(),
        members,
        utilities: vec![Some(u); scenario.clients.len()],
    }
}

/// The membership every client best-responds into from `state`.
pub fn realize(state: &DynamicsState, scenario: &Scenario) -> Realization {
    match scenario.utility_mode {
        UtilityMode::Homogeneous => realize_homogeneous(state.expectation, scenario),
        UtilityMode::Heterogeneous => realize_heterogeneous(state.expectation, scenario),
        UtilityMode::Oracle(_) => realize_oracle(state, scenario),
    }
}

/// One simultaneous best-response round.
pub fn step(state: &DynamicsState, scenario: &Scenario) -> (DynamicsState, StepEvent) {
    step_subsidized(state, scenario, &BTreeSet::new())
}

/// One round in which `subsidized` clients stay in regardless of utility.
pub fn step_subsidized(
    state: &DynamicsState,
    scenario: &Scenario,
    subsidized: &BTreeSet<ClientId>,
) -> (DynamicsState, StepEvent) {
    let realization = realize(state, scenario);
    let mut coalition = realization.members;
    coalition.extend(subsidized.iter().copied());
    let joined = coalition.difference(&state.coalition).copied().collect();
    let left = state.coalition.difference(&coalition).copied().collect();
    let next = state_from_coalition(scenario, state.step + 1, coalition);
    (
        next,
        StepEvent {
            joined,
            left,
            utilities: realization.utilities,
        },
    )
}

/// Runs the dynamic from the scenario's own initial condition.
pub fn simulate(scenario: &Scenario, max_steps: u64) -> DynamicsTrace {
    simulate_from(
        scenario,
        initial_state(scenario, &scenario.initial),
        &BTreeSet::new(),
        max_steps,
    )
}

/// Iterates [`step_subsidized`] until two consecutive states agree or
/// `max_steps` rounds have been taken.
pub fn simulate_from(
    scenario: &Scenario,
    start: DynamicsState,
    subsidized: &BTreeSet<ClientId>,
    max_steps: u64,
) -> DynamicsTrace {
    let mut states = vec![start];
    let mut events = vec![StepEvent::default()];
    for _ in 0..max_steps {
        let current = states.last().unwrap();
        let (next, event) = step_subsidized(current, scenario, subsidized);
        let settled = next.coalition == current.coalition && next.expectation == current.expectation;
        states.push(next);
        events.push(event);
        if settled {
            let k = states.last().unwrap().expectation;
            return DynamicsTrace {
                states,
                events,
                terminal: Terminal::ConvergedAt(k),
            };
        }
    }
    DynamicsTrace {
        states,
        events,
        terminal: Terminal::MaxStepsExceeded,
    }
}

/// True when the sequence, once it has moved up (or down), never reverses.
pub fn eventually_monotone(xs: &[u64]) -> bool {
    let mut direction: Option<bool> = None;
    for w in xs.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        let up = w[1] > w[0];
        match direction {
            None => direction = Some(up),
            Some(d) if d != up => return false,
            _ => {}
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Client, CostModel, OracleSpec, Prior, expand_cost_model};

    fn homogeneous(costs: &[f64], n: u64, sigma2: f64) -> Scenario {
        let clients = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| Client::new(i as u32 + 1, n, c).unwrap())
            .collect();
        Scenario::new("h", clients, Prior::new(sigma2).unwrap(), UtilityMode::Homogeneous, Initial::Expectation(0))
            .unwrap()
    }

    fn mirror(m: usize, n: u64, sigma2: f64) -> Scenario {
        let costs = expand_cost_model(&CostModel::MirrorUtility { floor: 1e-9 }, m, Some((n, sigma2))).unwrap();
        homogeneous(&costs, n, sigma2)
    }

    fn heterogeneous(samples: &[u64], costs: &[f64], sigma2: f64) -> Scenario {
        let clients = samples
            .iter()
            .zip(costs)
            .enumerate()
            .map(|(i, (&n, &c))| Client::new(i as u32 + 1, n, c).unwrap())
            .collect();
        Scenario::new("het", clients, Prior::new(sigma2).unwrap(), UtilityMode::Heterogeneous, Initial::Expectation(0))
            .unwrap()
    }

    pub(crate) fn four_client_oracle() -> Scenario {
        let points = (1..=10).map(|n| (n, n as f64 / 10.0)).collect();
        let clients = [(1, 0.05), (2, 0.3), (3, 0.55), (4, 0.9)]
            .iter()
            .map(|&(id, c)| Client::new(id, id as u64, c).unwrap())
            .collect();
        Scenario::new(
            "four",
            clients,
            Prior::new(0.0).unwrap(),
            UtilityMode::Oracle(OracleSpec::Table { points }),
            Initial::Coalition([1, 4].into_iter().collect()),
        )
        .unwrap()
    }

    #[test]
    fn h_homogeneous_examples() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        assert_eq!(h_homogeneous(0, &s), 0);
        assert_eq!(h_homogeneous(1, &s), 0);
        assert_eq!(h_homogeneous(2, &s), 2);
        assert_eq!(h_homogeneous(3, &s), 2);
    }

    #[test]
    fn mirror_h_is_identity_except_one() {
        // U(1) = 0 lies below the floored first cost
        let s = mirror(20, 5, 1.0);
        assert_eq!(h_homogeneous(1, &s), 0);
        for k in (0..=20).filter(|&k| k != 1) {
            assert_eq!(h_homogeneous(k, &s), k);
        }
    }

    #[test]
    fn infer_coalition_examples() {
        let s = heterogeneous(&[1, 2, 3, 4], &[0.1; 4], 0.0);
        let empty = infer_coalition(0, &s);
        assert_eq!((empty.prefix_len, empty.samples), (0, 0));
        let full = infer_coalition(10, &s);
        assert_eq!(full.prefix_len, 4);
        assert_eq!(full.samples, 10);
        let five = infer_coalition(5, &s);
        assert_eq!(five.ids, vec![1, 2, 3]);
        assert_eq!(five.prefix_len, 3);
        assert_eq!(five.samples, 6);
    }

    #[test]
    fn z_ties_break_by_id() {
        let s = heterogeneous(&[3, 3, 3], &[0.1, 0.1, 0.1], 1.0);
        assert_eq!(infer_coalition(4, &s).ids, vec![1, 2]);
    }

    #[test]
    fn h_heterogeneous_examples() {
        let s = heterogeneous(&[2, 3], &[0.01, 0.25], 0.0);
        assert_eq!(h_heterogeneous(0, &s), 0);
        assert_eq!(h_heterogeneous(5, &s), 2);

        let cheap = heterogeneous(&[2, 3, 4], &[1e-9; 3], 0.7);
        for k in 1..=9 {
            let inferred = infer_coalition(k, &cheap);
            if inferred.prefix_len >= 2 {
                assert_eq!(h_heterogeneous(k, &cheap), inferred.samples);
            }
        }
    }

    #[test]
    fn h_oracle_examples() {
        let s = four_client_oracle();
        assert_eq!(h_oracle(0, &s), 0);
        assert_eq!(h_oracle(5, &s), 3);
        assert_eq!(h_oracle(10, &s), 10);
    }

    #[test]
    fn realization_map_table_matches_direct() {
        let s = heterogeneous(&[1, 5, 2, 7], &[0.01, 0.3, 0.2, 0.05], 0.4);
        let map = RealizationMap::new(&s);
        let direct: Vec<u64> = (0..=15).map(|x| map.value(x)).collect();
        assert_eq!(map.curve(), direct.as_slice());
        assert_eq!(map.curve()[0], 0);
    }

    #[test]
    fn oracle_four_client_step() {
        let s = four_client_oracle();
        let start = initial_state(&s, &s.initial);
        assert_eq!(start.coalition_samples, 5);
        let (next, event) = step(&start, &s);
        assert_eq!(next.coalition, [1, 2, 3].into_iter().collect());
        assert_eq!(next.coalition_samples, 6);
        assert_eq!(event.joined, vec![2, 3]);
        assert_eq!(event.left, vec![4]);
        assert_eq!(event.utilities, vec![Some(0.5), Some(0.7), Some(0.8), Some(0.5)]);
    }

    #[test]
    fn oracle_four_client_simulation() {
        let s = four_client_oracle();
        let trace = simulate(&s, default_max_steps(&s));
        assert_eq!(trace.expectations(), vec![5, 6, 10, 10]);
        assert_eq!(trace.terminal, Terminal::ConvergedAt(10));
        assert_eq!(trace.events[2].joined, vec![4]);
    }

    #[test]
    fn fixed_point_converges_in_one_step() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0).with_initial(Initial::Expectation(2)).unwrap();
        let trace = simulate(&s, 10);
        assert_eq!(trace.steps(), 1);
        assert_eq!(trace.terminal, Terminal::ConvergedAt(2));
        assert_eq!(trace.states[0].coalition, trace.states[1].coalition);
    }

    #[test]
    fn mirror_converges_where_it_starts() {
        let s = mirror(20, 5, 1.0).with_initial(Initial::Expectation(7)).unwrap();
        let trace = simulate(&s, 30);
        assert_eq!(trace.terminal, Terminal::ConvergedAt(7));
        assert_eq!(trace.steps(), 1);
    }

    #[test]
    fn empty_state_is_absorbing() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        let start = initial_state(&s, &Initial::Expectation(0));
        let (next, _) = step(&start, &s);
        assert_eq!(next.expectation, 0);
        assert!(next.coalition.is_empty());
        assert_eq!(next.step, 1);
    }

    #[test]
    fn subsidized_clients_never_leave() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        let start = initial_state(&s, &Initial::Expectation(3));
        let keep: BTreeSet<ClientId> = [3].into_iter().collect();
        let trace = simulate_from(&s, start, &keep, 10);
        assert_eq!(trace.terminal, Terminal::ConvergedAt(3));
    }

    #[test]
    fn max_steps_is_terminal_status() {
        let s = homogeneous(&[0.001, 0.002, 0.003, 0.004], 1, 1.0).with_initial(Initial::Expectation(2)).unwrap();
        let trace = simulate(&s, 0);
        assert_eq!(trace.terminal, Terminal::MaxStepsExceeded);
        assert_eq!(trace.states.len(), 1);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let s = four_client_oracle();
        let csv = simulate(&s, 10).to_csv(&s);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn eventual_monotonicity_detector() {
        assert!(eventually_monotone(&[3, 3, 5, 8, 8]));
        assert!(eventually_monotone(&[9, 4, 4, 1]));
        assert!(!eventually_monotone(&[6, 7, 6, 7]));
    }
}
