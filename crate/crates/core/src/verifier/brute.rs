//! Exhaustive reference implementations.
//!
//! Nothing here calls into `dynamics`, `equilibria` or `payment`; only the
//! scenario types and the closed-form utilities are shared. Every function
//! is written as a plain loop over the definition.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{ClientId, Scenario, UtilityMode};
use crate::utility::{additional_gain, oracle_utility, utility_gain, utility_gain_homogeneous};

pub const MAX_KICKSTART_CLIENTS: usize = 15;
pub const MAX_KNAPSACK_CANDIDATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BruteError {
    #[error("{got} clients exceed the exhaustive limit of {limit}")]
    TooLarge { got: usize, limit: usize },
    #[error("no subset covers the deficit")]
    Infeasible,
}

fn domain_max(s: &Scenario) -> u64 {
    match s.utility_mode {
        UtilityMode::Homogeneous => s.clients.len() as u64,
        _ => s.clients.iter().map(|c| c.samples).sum(),
    }
}

fn step_budget(s: &Scenario) -> u64 {
    domain_max(s) + 10
}

/// Members chosen when everyone best-responds to expectation `x`,
/// before any subsidy. Everyone sees the same `x`.
fn members_at(s: &Scenario, x: u64) -> Vec<usize> {
    let sigma2 = s.prior.sigma_theta_sq;
    let mut out = Vec::new();
    if x == 0 {
        return out;
    }
    match &s.utility_mode {
        UtilityMode::Homogeneous => {
            let u = utility_gain_homogeneous(x, s.clients[0].samples, sigma2);
            for (i, c) in s.clients.iter().enumerate() {
                if c.cost <= u {
                    out.push(i);
                }
            }
        }
        UtilityMode::Heterogeneous => {
            let mut keyed: Vec<(f64, ClientId, usize)> = Vec::new();
            for (i, c) in s.clients.iter().enumerate() {
                let z = additional_gain(c.samples, x as f64, sigma2) - c.cost;
                keyed.push((z, c.id, i));
            }
            // insertion sort: descending z, then ascending id
            for a in 1..keyed.len() {
                let mut b = a;
                while b > 0 {
                    let (p, q) = (keyed[b - 1], keyed[b]);
                    let swap = q.0 > p.0 || (q.0 == p.0 && q.1 < p.1);
                    if !swap {
                        break;
                    }
                    keyed.swap(b - 1, b);
                    b -= 1;
                }
            }
            let mut prefix = Vec::new();
            let mut total = 0;
            for &(_, _, i) in &keyed {
                if total >= x {
                    break;
                }
                total += s.clients[i].samples;
                prefix.push(i);
            }
            let samples: Vec<u64> = prefix.iter().map(|&i| s.clients[i].samples).collect();
            for (pos, &i) in prefix.iter().enumerate() {
                if utility_gain(&samples, pos, sigma2) >= s.clients[i].cost {
                    out.push(i);
                }
            }
        }
        UtilityMode::Oracle(spec) => {
            let u = oracle_utility(spec, x, sigma2);
            for (i, c) in s.clients.iter().enumerate() {
                if u >= c.cost {
                    out.push(i);
                }
            }
        }
    }
    out
}

fn h(s: &Scenario, x: u64) -> u64 {
    let members = members_at(s, x);
    match s.utility_mode {
        UtilityMode::Homogeneous => members.len() as u64,
        _ => members.iter().map(|&i| s.clients[i].samples).sum(),
    }
}

/// The realization mapping over the whole domain, straight from the
/// definition.
pub fn brute_force_curve(scenario: &Scenario) -> Vec<u64> {
    (0..=domain_max(scenario)).map(|x| h(scenario, x)).collect()
}

/// All `x` with `h(x) = x`, by full scan.
pub fn brute_force_fixed_points(scenario: &Scenario) -> Vec<u64> {
    brute_force_curve(scenario)
        .into_iter()
        .enumerate()
        .filter(|&(x, hx)| x as u64 == hx)
        .map(|(x, _)| x as u64)
        .collect()
}

/// One oracle round: members judge `u(N)`, outsiders `u(N + n_i)`.
fn oracle_round(s: &Scenario, inside: &[bool], forced: &[bool]) -> Vec<bool> {
    let UtilityMode::Oracle(spec) = &s.utility_mode else {
        unreachable!()
    };
    let mut total = 0;
    for (i, c) in s.clients.iter().enumerate() {
        if inside[i] {
            total += c.samples;
        }
    }
    let mut next = vec![false; s.clients.len()];
    for (i, c) in s.clients.iter().enumerate() {
        let seen = if inside[i] { total } else { total + c.samples };
        next[i] = forced[i] || oracle_utility(spec, seen, s.prior.sigma_theta_sq) >= c.cost;
    }
    next
}

fn samples_in(s: &Scenario, inside: &[bool]) -> u64 {
    let mut total = 0;
    for (i, c) in s.clients.iter().enumerate() {
        if inside[i] {
            total += c.samples;
        }
    }
    total
}

/// Coalition-level dynamic with `forced` clients always in. Returns the
/// settled expectation, or `None` if it never settles within the step
/// budget.
fn run(s: &Scenario, mut inside: Vec<bool>, forced: &[bool], expectation: u64) -> Option<u64> {
    let homogeneous = matches!(s.utility_mode, UtilityMode::Homogeneous);
    let oracle = matches!(s.utility_mode, UtilityMode::Oracle(_));
    let mut k = expectation;
    for _ in 0..step_budget(s) {
        let next = if oracle {
            oracle_round(s, &inside, forced)
        } else {
            let mut next = forced.to_vec();
            for i in members_at(s, k) {
                next[i] = true;
            }
            next
        };
        let next_k = if homogeneous {
            next.iter().filter(|&&b| b).count() as u64
        } else {
            samples_in(s, &next)
        };
        if next == inside && next_k == k {
            return Some(k);
        }
        inside = next;
        k = next_k;
    }
    None
}

/// Limit of the unsubsidized dynamic started from expectation `start`.
///
/// Oracle runs start from the cheapest clients (ties by id) whose samples
/// reach `start`; the other settings start from the expectation itself.
pub fn brute_force_limit(scenario: &Scenario, start: u64) -> Option<u64> {
    let m = scenario.clients.len();
    let none = vec![false; m];
    let mut inside = vec![false; m];
    let expectation = match scenario.utility_mode {
        UtilityMode::Oracle(_) => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                let (x, y) = (&scenario.clients[a], &scenario.clients[b]);
                x.cost.total_cmp(&y.cost).then(x.id.cmp(&y.id))
            });
            let mut total = 0;
            for i in order {
                if total >= start {
                    break;
                }
                total += scenario.clients[i].samples;
                inside[i] = true;
            }
            total
        }
        UtilityMode::Homogeneous => {
            for flag in inside.iter_mut().take(start as usize) {
                *flag = true;
            }
            start
        }
        UtilityMode::Heterogeneous => {
            // the starting coalition does not influence the next step here
            start
        }
    };
    if matches!(scenario.utility_mode, UtilityMode::Oracle(_)) {
        return run(scenario, inside, &none, expectation);
    }
    // outside the oracle setting the next state depends only on the
    // expectation, so the limit is the first fixed point of x -> h(x)
    let mut x = expectation;
    for _ in 0..step_budget(scenario) {
        let hx = h(scenario, x);
        if hx == x {
            return Some(x);
        }
        x = hx;
    }
    None
}

/// A payment subset found by exhaustion.
#[derive(Debug, Clone, PartialEq)]
pub struct Kickstart {
    /// Ascending ids.
    pub subset: Vec<ClientId>,
    pub total: f64,
    /// Where the subsidized dynamic settles.
    pub reached: u64,
}

/// Cheapest set of clients to subsidize permanently so that the dynamic
/// started from the empty coalition settles at or above `target`.
///
/// Ties go to fewer clients, then to the smallest id list. `Ok(None)` means
/// no subset reaches the target.
pub fn brute_force_min_kickstart(
    scenario: &Scenario,
    target: u64,
) -> Result<Option<Kickstart>, BruteError> {
    let m = scenario.clients.len();
    if m > MAX_KICKSTART_CLIENTS {
        return Err(BruteError::TooLarge {
            got: m,
            limit: MAX_KICKSTART_CLIENTS,
        });
    }
    let mut by_id: Vec<usize> = (0..m).collect();
    by_id.sort_by_key(|&i| scenario.clients[i].id);
    let mut best: Option<Kickstart> = None;
    for mask in 0u32..(1 << m) {
        let mut forced = vec![false; m];
        let mut subset = Vec::new();
        let mut total = 0.0;
        for (bit, &i) in by_id.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                forced[i] = true;
                subset.push(scenario.clients[i].id);
                total += scenario.clients[i].cost;
            }
        }
        if let Some(b) = &best {
            let worse = total > b.total
                || (total == b.total
                    && (subset.len() > b.subset.len()
                        || (subset.len() == b.subset.len() && subset >= b.subset)));
            if worse {
                continue;
            }
        }
        let Some(reached) = run(scenario, vec![false; m], &forced, 0) else {
            continue;
        };
        if reached >= target {
            best = Some(Kickstart {
                subset,
                total,
                reached,
            });
        }
    }
    Ok(best)
}

/// Minimum price of a subset of `(samples, price)` candidates covering
/// `deficit` samples. Prices are summed in the given order.
pub fn brute_force_knapsack(candidates: &[(u64, f64)], deficit: u64) -> Result<f64, BruteError> {
    if candidates.len() > MAX_KNAPSACK_CANDIDATES {
        return Err(BruteError::TooLarge {
            got: candidates.len(),
            limit: MAX_KNAPSACK_CANDIDATES,
        });
    }
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << candidates.len()) {
        let mut samples = 0;
        let mut price = 0.0;
        for (bit, &(n, p)) in candidates.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                samples += n;
                price += p;
            }
        }
        if samples >= deficit && best.is_none_or(|b| price < b) {
            best = Some(price);
        }
    }
    best.ok_or(BruteError::Infeasible)
}

/// Ids of a coalition given as membership flags.
pub fn ids_of(scenario: &Scenario, inside: &[bool]) -> BTreeSet<ClientId> {
    scenario
        .clients
        .iter()
        .zip(inside)
        .filter(|(_, &b)| b)
        .map(|(c, _)| c.id)
        .collect()
}
