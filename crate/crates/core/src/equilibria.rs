//! Self-fulfilling expectation equilibria: enumeration, stability
//! classification under unit perturbations, the constructive climb to the
//! next equilibrium, and basins of attraction.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::{default_max_steps, initial_state, simulate_from, RealizationMap};
use crate::model::{Initial, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    /// Absorbs a one-unit perturbation in either direction.
    Stable,
    /// Unstable: one unit up climbs, one unit down collapses.
    Tipping,
    /// Neither of the above, e.g. inside a run of consecutive fixed points.
    Flat,
}

impl EquilibriumKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EquilibriumKind::Stable => "stable",
            EquilibriumKind::Tipping => "tipping",
            EquilibriumKind::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquilibriumReport {
    pub point: u64,
    pub kind: EquilibriumKind,
    /// `h(point - 1)`, absent at the bottom of the domain.
    pub below: Option<u64>,
    /// `h(point + 1)`, absent at the top of the domain.
    pub above: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EquilibriumError {
    #[error("{point} is not a fixed point: h({point}) = {image}")]
    NotAFixedPoint { point: u64, image: u64 },
    #[error("h({point}) = {image} is below {point}; no equilibrium can be climbed to")]
    BelowDiagonal { point: u64, image: u64 },
    #[error("h is not monotone: climbing stopped at {point} with h({point}) = {image}")]
    NonMonotone { point: u64, image: u64 },
    #[error("{point} is outside the domain 0..={max}")]
    OutOfDomain { point: u64, max: u64 },
}

fn kind_at(curve: &[u64], k: u64) -> EquilibriumKind {
    let max = curve.len() as u64 - 1;
    let below = (k > 0).then(|| curve[k as usize - 1]);
    let above = (k < max).then(|| curve[k as usize + 1]);
    match (below, above) {
        (None, Some(up)) if up < k + 1 => EquilibriumKind::Stable,
        (Some(down), None) if down > k - 1 => EquilibriumKind::Stable,
        (Some(down), Some(up)) if down > k - 1 && up < k + 1 => EquilibriumKind::Stable,
        (Some(down), Some(up)) if down < k - 1 && up > k + 1 => EquilibriumKind::Tipping,
        _ => EquilibriumKind::Flat,
    }
}

fn report_at(curve: &[u64], k: u64) -> EquilibriumReport {
    let max = curve.len() as u64 - 1;
    EquilibriumReport {
        point: k,
        kind: kind_at(curve, k),
        below: (k > 0).then(|| curve[k as usize - 1]),
        above: (k < max).then(|| curve[k as usize + 1]),
    }
}

/// Every `x` in the domain with `h(x) = x`, ascending and classified.
pub fn enumerate_fixed_points(scenario: &Scenario) -> Vec<EquilibriumReport> {
    enumerate_with(&RealizationMap::new(scenario))
}

pub fn enumerate_with(map: &RealizationMap<'_>) -> Vec<EquilibriumReport> {
    let curve = map.curve();
    (0..curve.len() as u64)
        .filter(|&x| curve[x as usize] == x)
        .map(|x| report_at(curve, x))
        .collect()
}

/// Unit-perturbation classification of a fixed point.
pub fn classify(k: u64, scenario: &Scenario) -> Result<EquilibriumKind, EquilibriumError> {
    let map = RealizationMap::new(scenario);
    if k > map.domain_max() {
        return Err(EquilibriumError::OutOfDomain {
            point: k,
            max: map.domain_max(),
        });
    }
    let curve = map.curve();
    let image = curve[k as usize];
    if image != k {
        return Err(EquilibriumError::NotAFixedPoint { point: k, image });
    }
    Ok(kind_at(curve, k))
}

/// Climbs `x <- h(x)` from `k` while `h(x) > x` and returns the fixed point
/// it stops at.
pub fn find_equilibrium_above(k: u64, scenario: &Scenario) -> Result<u64, EquilibriumError> {
    climb(&RealizationMap::new(scenario), k)
}

pub fn climb(map: &RealizationMap<'_>, k: u64) -> Result<u64, EquilibriumError> {
    if k > map.domain_max() {
        return Err(EquilibriumError::OutOfDomain {
            point: k,
            max: map.domain_max(),
        });
    }
    let image = map.value(k);
    if image < k {
        return Err(EquilibriumError::BelowDiagonal { point: k, image });
    }
    let mut x = k;
    let mut hx = image;
    while hx > x {
        x = hx;
        hx = map.value(x);
    }
    if hx < x {
        return Err(EquilibriumError::NonMonotone { point: x, image: hx });
    }
    Ok(x)
}

/// Limit of the natural dynamic from every starting expectation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasinMap {
    /// `limits[x]` is where the dynamic started at `x` settles, or `None`
    /// when it did not settle within the step budget.
    pub limits: Vec<Option<u64>>,
}

/// A start strictly between a tipping point and its neighbouring stable
/// equilibrium that did not end up at that stable equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandViolation {
    pub start: u64,
    pub expected: u64,
    pub got: Option<u64>,
}

impl BasinMap {
    /// `(min start, max start, count)` of the starts that settle at `point`.
    pub fn extent(&self, point: u64) -> Option<(u64, u64, usize)> {
        let starts: Vec<u64> = self
            .limits
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(point))
            .map(|(x, _)| x as u64)
            .collect();
        Some((*starts.first()?, *starts.last()?, starts.len()))
    }

    /// Checks that every start strictly between a tipping point and an
    /// adjacent stable equilibrium settles at that stable equilibrium.
    pub fn band_violations(&self, reports: &[EquilibriumReport]) -> Vec<BandViolation> {
        let mut out = Vec::new();
        for pair in reports.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let target = match (a.kind, b.kind) {
                (EquilibriumKind::Tipping, EquilibriumKind::Stable) => b.point,
                (EquilibriumKind::Stable, EquilibriumKind::Tipping) => a.point,
                _ => continue,
            };
            for x in a.point + 1..b.point {
                let got = self.limits[x as usize];
                if got != Some(target) {
                    out.push(BandViolation {
                        start: x,
                        expected: target,
                        got,
                    });
                }
            }
        }
        out
    }
}

/// Runs the dynamic from every point of the domain.
///
/// Oracle scenarios start from the cheapest clients whose samples first
/// reach the point.
pub fn basins(scenario: &Scenario) -> BasinMap {
    let max_steps = default_max_steps(scenario);
    let limits = (0..=scenario.domain_max())
        .map(|x| {
            let start = initial_state(scenario, &Initial::Expectation(x));
            simulate_from(scenario, start, &Default::default(), max_steps).limit()
        })
        .collect();
    BasinMap { limits }
}

pub const EQUILIBRIA_HEADER: &str = "point,kind,h_below,h_above,basin_min,basin_max,basin_size";

fn opt(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn equilibria_csv(reports: &[EquilibriumReport], basins: &BasinMap) -> String {
    let mut out = format!("{EQUILIBRIA_HEADER}\n");
    for r in reports {
        let ext = basins.extent(r.point);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.point,
            r.kind.as_str(),
            opt(r.below),
            opt(r.above),
            opt(ext.map(|e| e.0)),
            opt(ext.map(|e| e.1)),
            ext.map_or(0, |e| e.2),
        );
    }
    out
}

pub fn equilibria_text(reports: &[EquilibriumReport], basins: &BasinMap) -> String {
    let mut out = String::new();
    for r in reports {
        let basin = match basins.extent(r.point) {
            Some((lo, hi, n)) => format!("{lo}..={hi} ({n} starts)"),
            None => "empty".to_string(),
        };
        let _ = writeln!(
            out,
            "K*={:<6} {:<8} h(K*-1)={:<6} h(K*+1)={:<6} basin {}",
            r.point,
            r.kind.as_str(),
            r.below.map_or("-".to_string(), |v| v.to_string()),
            r.above.map_or("-".to_string(), |v| v.to_string()),
            basin
        );
    }
    out
}

pub fn curve_csv(map: &RealizationMap<'_>) -> String {
    let mut out = String::from("x,h\n");
    for (x, hx) in map.curve().iter().enumerate() {
        let _ = writeln!(out, "{x},{hx}");
    }
    out
}

pub fn basins_csv(basins: &BasinMap) -> String {
    let mut out = String::from("start,limit\n");
    for (x, l) in basins.limits.iter().enumerate() {
        let _ = writeln!(out, "{x},{}", opt(*l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expand_cost_model, Client, CostModel, Prior, UtilityMode};

    fn homogeneous(costs: &[f64], n: u64, sigma2: f64) -> Scenario {
        let clients = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| Client::new(i as u32 + 1, n, c).unwrap())
            .collect();
        Scenario::new("h", clients, Prior::new(sigma2).unwrap(), UtilityMode::Homogeneous, Initial::Expectation(0))
            .unwrap()
    }

    fn mirror() -> Scenario {
        let costs = expand_cost_model(&CostModel::MirrorUtility { floor: 1e-9 }, 20, Some((5, 1.0))).unwrap();
        homogeneous(&costs, 5, 1.0)
    }

    #[test]
    fn mirror_fixed_points_interior_flat() {
        let reports = enumerate_fixed_points(&mirror());
        let points: Vec<u64> = reports.iter().map(|r| r.point).collect();
        let expected: Vec<u64> = std::iter::once(0).chain(2..=20).collect();
        assert_eq!(points, expected);
        assert_eq!(reports[0].kind, EquilibriumKind::Stable);
        // 2 has the non-fixed 1 below it
        assert_eq!(reports[1].kind, EquilibriumKind::Flat);
        assert!(reports[2..19].iter().all(|r| r.kind == EquilibriumKind::Flat));
    }

    #[test]
    fn expensive_costs_only_zero() {
        let s = homogeneous(&[50.0, 60.0, 70.0], 2, 1.0);
        let reports = enumerate_fixed_points(&s);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].point, 0);
        assert_eq!(reports[0].kind, EquilibriumKind::Stable);
    }

    #[test]
    fn three_client_example() {
        // U(1)=0, U(2)=1.05, U(3)=2/30+14/9: h = [0, 0, 2, 2]
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        let reports = enumerate_fixed_points(&s);
        let points: Vec<u64> = reports.iter().map(|r| r.point).collect();
        assert_eq!(points, vec![0, 2]);
        assert_eq!(reports[0].kind, EquilibriumKind::Stable);
        // h(1) = 0 < 1 and h(3) = 2 < 3: absorbs from above only
        assert_eq!(reports[1].below, Some(0));
        assert_eq!(reports[1].above, Some(2));
        assert_eq!(reports[1].kind, EquilibriumKind::Flat);
    }

    #[test]
    fn classify_boundaries() {
        let s = homogeneous(&[0.1, 0.2, 0.3], 10, 1.0);
        // h = [0, 0, 3, 3]
        assert_eq!(classify(0, &s), Ok(EquilibriumKind::Stable));
        assert_eq!(classify(3, &s), Ok(EquilibriumKind::Stable));
        assert_eq!(
            classify(1, &s),
            Err(EquilibriumError::NotAFixedPoint { point: 1, image: 0 })
        );
        assert_eq!(classify(10, &mirror()), Ok(EquilibriumKind::Flat));
    }

    #[test]
    fn tipping_point_classified() {
        // n=1, sigma2=0: U(K) = (K-1)/K; costs just under U at 2 and 3
        let s = homogeneous(&[0.001, 0.5, 0.6, 0.7, 100.0], 1, 0.0);
        // h = [0, 0, 2, 3, 4, 4]
        assert_eq!(classify(2, &s), Ok(EquilibriumKind::Flat));
        assert_eq!(classify(4, &s), Ok(EquilibriumKind::Flat));
        let t = homogeneous(&[0.001, 0.5, 0.6, 0.66, 0.7, 100.0], 1, 0.0);
        // h = [0, 0, 2, 4, 5, 5, 5]
        assert_eq!(classify(2, &t), Ok(EquilibriumKind::Tipping));
        assert_eq!(classify(5, &t), Ok(EquilibriumKind::Stable));
    }

    #[test]
    fn climb_examples() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        assert_eq!(find_equilibrium_above(2, &s), Ok(2));
        assert_eq!(find_equilibrium_above(0, &s), Ok(0));
        assert_eq!(
            find_equilibrium_above(1, &s),
            Err(EquilibriumError::BelowDiagonal { point: 1, image: 0 })
        );
        for k in (0..=20).filter(|&k| k != 1) {
            assert_eq!(find_equilibrium_above(k, &mirror()), Ok(k));
        }
        let t = homogeneous(&[0.001, 0.5, 0.6, 0.66, 0.7, 100.0], 1, 0.0);
        assert_eq!(find_equilibrium_above(3, &t), Ok(5));
    }

    #[test]
    fn basin_examples() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        let b = basins(&s);
        assert_eq!(b.limits, vec![Some(0), Some(0), Some(2), Some(2)]);
        assert_eq!(b.extent(2), Some((2, 3, 2)));
        let reports = enumerate_fixed_points(&s);
        assert!(b.band_violations(&reports).is_empty());
    }

    #[test]
    fn fixed_points_are_their_own_basin() {
        let s = mirror();
        let b = basins(&s);
        assert_eq!(b.limits[1], Some(0));
        for (x, l) in b.limits.iter().enumerate().filter(|(x, _)| *x != 1) {
            assert_eq!(*l, Some(x as u64));
        }
    }

    #[test]
    fn curve_csv_lists_full_domain() {
        let s = homogeneous(&[0.1, 0.2, 5.0], 10, 1.0);
        let map = RealizationMap::new(&s);
        assert_eq!(curve_csv(&map), "x,h\n0,0\n1,0\n2,2\n3,2\n");
    }
}
