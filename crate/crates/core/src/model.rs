//! Domain types for the participation game and the scenario document loader.
//!
//! A [`Scenario`] is the fully validated game instance: client roster with
//! explicit per-client costs, the prior variance, the utility mode and the
//! initial condition. Everything downstream consumes it by reference.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::utility;

/// Client identifiers are stable across a scenario.
pub type ClientId = u32;

/// Default cost assigned to the first client of a mirror-utility cost model,
/// where the utility itself is zero.
pub const DEFAULT_MIRROR_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("duplicate client id {0}")]
    DuplicateId(ClientId),
    #[error("decreasing sequence: cost[{index}] = {value} is below the previous cost {previous}")]
    DecreasingSequence {
        index: usize,
        previous: f64,
        value: f64,
    },
    #[error("non-positive cost: cost[{index}] = {value}")]
    NonPositiveCost { index: usize, value: f64 },
    #[error("mirror-utility costs need the sample count and prior variance")]
    MissingUtilityContext,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Client {
    pub id: ClientId,
    pub samples: u64,
    pub cost: f64,
}

impl Client {
    pub fn new(id: ClientId, samples: u64, cost: f64) -> Result<Self, ModelError> {
        if samples == 0 {
            return Err(ModelError::Invariant(format!(
                "client {id} has zero samples"
            )));
        }
        if !(cost.is_finite() && cost > 0.0) {
            return Err(ModelError::Invariant(format!(
                "client {id} has non-positive or non-finite cost {cost}"
            )));
        }
        Ok(Client { id, samples, cost })
    }
}

/// Variance of the Gaussian prior over the clients' local means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub sigma_theta_sq: f64,
}

impl Prior {
    pub fn new(sigma_theta_sq: f64) -> Result<Self, ModelError> {
        if !(sigma_theta_sq.is_finite() && sigma_theta_sq >= 0.0) {
            return Err(ModelError::Invariant(format!(
                "sigma_theta_sq must be a finite non-negative number, got {sigma_theta_sq}"
            )));
        }
        Ok(Prior { sigma_theta_sq })
    }
}

/// Generator for a non-decreasing cost sequence indexed by client position
/// (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostModel {
    Table {
        costs: Vec<f64>,
    },
    /// `c(i) = c_min + slope * i`
    Affine { c_min: f64, slope: f64 },
    /// `c(i) = base + scale * i^exponent`
    Power {
        base: f64,
        scale: f64,
        exponent: f64,
    },
    /// `c(i) = U(i, n)` for `i >= 2`; `c(1) = floor`.
    MirrorUtility {
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_floor() -> f64 {
    DEFAULT_MIRROR_FLOOR
}

/// Expands a cost model into `m` explicit costs.
///
/// `utility_context` is `(samples per client, sigma_theta_sq)` and is only
/// consulted by the mirror-utility model.
pub fn expand_cost_model(
    model: &CostModel,
    m: usize,
    utility_context: Option<(u64, f64)>,
) -> Result<Vec<f64>, ModelError> {
    if m == 0 {
        return Err(ModelError::Invariant("client count must be at least 1".into()));
    }
    let costs: Vec<f64> = match model {
        CostModel::Table { costs } => {
            if costs.len() != m {
                return Err(ModelError::Invariant(format!(
                    "cost table has {} entries for {m} clients",
                    costs.len()
                )));
            }
            costs.clone()
        }
        CostModel::Affine { c_min, slope } => {
            if !(slope.is_finite() && *slope > 0.0 && c_min.is_finite() && *c_min >= 0.0) {
                return Err(ModelError::Invariant(
                    "affine cost needs c_min >= 0 and slope > 0".into(),
                ));
            }
            (1..=m).map(|i| c_min + slope * i as f64).collect()
        }
        CostModel::Power {
            base,
            scale,
            exponent,
        } => (1..=m)
            .map(|i| base + scale * (i as f64).powf(*exponent))
            .collect(),
        CostModel::MirrorUtility { floor } => {
            let (n, sigma2) = utility_context.ok_or(ModelError::MissingUtilityContext)?;
            (1..=m)
                .map(|i| {
                    if i == 1 {
                        *floor
                    } else {
                        utility::utility_gain_homogeneous(i as u64, n, sigma2)
                    }
                })
                .collect()
        }
    };
    check_cost_sequence(&costs)?;
    Ok(costs)
}

fn check_cost_sequence(costs: &[f64]) -> Result<(), ModelError> {
    for (index, &value) in costs.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::NonPositiveCost { index, value });
        }
        if index > 0 && value < costs[index - 1] {
            return Err(ModelError::DecreasingSequence {
                index,
                previous: costs[index - 1],
                value,
            });
        }
    }
    Ok(())
}

/// Utility observed through an oracle, as a function of the coalition's total
/// sample count only.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    /// Homogeneous mean-estimation gain at `K = N / n_ref` clients.
    BuiltinHomogeneous { n_ref: u64 },
    /// Step function over `(N, u)` breakpoints; strictly increasing `N`,
    /// non-decreasing `u`. Below the first breakpoint the utility is zero.
    Table { points: Vec<(u64, f64)> },
    /// `u(N) = scale * ln(1 + rate * N)`
    LogSaturating { scale: f64, rate: f64 },
}

impl OracleSpec {
    fn validate(&self) -> Result<(), ModelError> {
        match self {
            OracleSpec::BuiltinHomogeneous { n_ref } => {
                if *n_ref == 0 {
                    return Err(ModelError::Invariant("oracle n_ref must be >= 1".into()));
                }
            }
            OracleSpec::Table { points } => {
                for (k, &(n, u)) in points.iter().enumerate() {
                    if !(u.is_finite() && u >= 0.0) {
                        return Err(ModelError::Invariant(format!(
                            "oracle table value at N={n} must be finite and >= 0"
                        )));
                    }
                    if n == 0 && u != 0.0 {
                        return Err(ModelError::Invariant(
                            "oracle table must have u(0) = 0".into(),
                        ));
                    }
                    if k > 0 {
                        let (pn, pu) = points[k - 1];
                        if n <= pn {
                            return Err(ModelError::Invariant(
                                "oracle table sample counts must be strictly increasing".into(),
                            ));
                        }
                        if u < pu {
                            return Err(ModelError::Invariant(
                                "oracle table values must be non-decreasing".into(),
                            ));
                        }
                    }
                }
            }
            OracleSpec::LogSaturating { scale, rate } => {
                if !(scale.is_finite() && *scale >= 0.0 && rate.is_finite() && *rate >= 0.0) {
                    return Err(ModelError::Invariant(
                        "log-saturating oracle needs finite scale >= 0 and rate >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityMode {
    Homogeneous,
    Heterogeneous,
    Oracle(OracleSpec),
}

impl UtilityMode {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityMode::Homogeneous => "homogeneous",
            UtilityMode::Heterogeneous => "heterogeneous",
            UtilityMode::Oracle(_) => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Initial {
    /// Shared expectation: clients in the homogeneous setting, samples otherwise.
    Expectation(u64),
    Coalition(BTreeSet<ClientId>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Sorted ascending by cost in the homogeneous setting (stable on ties).
    pub clients: Vec<Client>,
    pub prior: Prior,
    pub utility_mode: UtilityMode,
    pub initial: Initial,
}

impl Scenario {
    /// Validates the invariants and normalizes the client order.
    pub fn new(
        name: impl Into<String>,
        mut clients: Vec<Client>,
        prior: Prior,
        utility_mode: UtilityMode,
        initial: Initial,
    ) -> Result<Self, ModelError> {
        if clients.is_empty() {
            return Err(ModelError::Invariant("scenario has no clients".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &clients {
            Client::new(c.id, c.samples, c.cost)?;
            if !seen.insert(c.id) {
                return Err(ModelError::DuplicateId(c.id));
            }
        }
        if let UtilityMode::Oracle(spec) = &utility_mode {
            spec.validate()?;
        }
        if utility_mode == UtilityMode::Homogeneous {
            let n = clients[0].samples;
            if clients.iter().any(|c| c.samples != n) {
                return Err(ModelError::Invariant(
                    "homogeneous mode requires equal sample counts".into(),
                ));
            }
            // sort_by is stable, so ties keep input order
            clients.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        }
        let scenario = Scenario {
            name: name.into(),
            clients,
            prior,
            utility_mode,
            initial,
        };
        match &scenario.initial {
            Initial::Expectation(k) => {
                if *k > scenario.domain_max() {
                    return Err(ModelError::Invariant(format!(
                        "initial expectation {k} exceeds the domain maximum {}",
                        scenario.domain_max()
                    )));
                }
            }
            Initial::Coalition(ids) => {
                for id in ids {
                    if !seen.contains(id) {
                        return Err(ModelError::Invariant(format!(
                            "initial coalition names unknown client {id}"
                        )));
                    }
                }
            }
        }
        Ok(scenario)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_samples(&self) -> u64 {
        self.clients.iter().map(|c| c.samples).sum()
    }

    pub fn sigma2(&self) -> f64 {
        self.prior.sigma_theta_sq
    }

    pub fn is_homogeneous(&self) -> bool {
        self.utility_mode == UtilityMode::Homogeneous
    }

    /// Upper end of the expectation domain: `M` clients in the homogeneous
    /// setting, total samples otherwise.
    pub fn domain_max(&self) -> u64 {
        if self.is_homogeneous() {
            self.clients.len() as u64
        } else {
            self.total_samples()
        }
    }

    /// Samples per client in the homogeneous setting.
    pub fn homogeneous_samples(&self) -> u64 {
        self.clients[0].samples
    }

    pub fn index_of(&self, id: ClientId) -> Option<usize> {
        self.clients.iter().position(|c| c.id == id)
    }

    pub fn client(&self, id: ClientId) -> Option<&Client> {
        self.clients.iter().find(|c| c.id == id)
    }

    pub fn samples_of<'a>(&self, ids: impl IntoIterator<Item = &'a ClientId>) -> u64 {
        ids.into_iter()
            .filter_map(|id| self.client(*id))
            .map(|c| c.samples)
            .sum()
    }

    /// Same scenario with a different initial condition.
    pub fn with_initial(&self, initial: Initial) -> Result<Self, ModelError> {
        Scenario::new(
            self.name.clone(),
            self.clients.clone(),
            self.prior,
            self.utility_mode.clone(),
            initial,
        )
    }

    pub fn to_document(&self) -> ScenarioDocument {
        let oracle = match &self.utility_mode {
            UtilityMode::Oracle(spec) => Some(OracleDocument::from(spec)),
            _ => None,
        };
        ScenarioDocument {
            name: self.name.clone(),
            sigma_theta_sq: self.prior.sigma_theta_sq,
            utility_mode: match self.utility_mode {
                UtilityMode::Homogeneous => ModeTag::Homogeneous,
                UtilityMode::Heterogeneous => ModeTag::Heterogeneous,
                UtilityMode::Oracle(_) => ModeTag::Oracle,
            },
            oracle,
            clients: ClientsDocument::Explicit(self.clients.clone()),
            initial: match &self.initial {
                Initial::Expectation(k) => InitialDocument::Expectation { expectation: *k },
                Initial::Coalition(ids) => InitialDocument::Coalition {
                    coalition: ids.iter().copied().collect(),
                },
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("scenario serializes")
    }
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeTag {
    Homogeneous,
    Heterogeneous,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    pub sigma_theta_sq: f64,
    pub utility_mode: ModeTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDocument>,
    pub clients: ClientsDocument,
    pub initial: InitialDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum OracleDocument {
    BuiltinHomogeneous(BuiltinParams),
    Table(TableParams),
    LogSaturating(LogParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    pub n_ref: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogParams {
    pub scale: f64,
    pub rate: f64,
}

impl From<&OracleSpec> for OracleDocument {
    fn from(spec: &OracleSpec) -> Self {
        match spec {
            OracleSpec::BuiltinHomogeneous { n_ref } => {
                OracleDocument::BuiltinHomogeneous(BuiltinParams { n_ref: *n_ref })
            }
            OracleSpec::Table { points } => OracleDocument::Table(TableParams {
                points: points.clone(),
            }),
            OracleSpec::LogSaturating { scale, rate } => OracleDocument::LogSaturating(LogParams {
                scale: *scale,
                rate: *rate,
            }),
        }
    }
}

impl From<OracleDocument> for OracleSpec {
    fn from(doc: OracleDocument) -> Self {
        match doc {
            OracleDocument::BuiltinHomogeneous(p) => OracleSpec::BuiltinHomogeneous { n_ref: p.n_ref },
            OracleDocument::Table(p) => OracleSpec::Table { points: p.points },
            OracleDocument::LogSaturating(p) => OracleSpec::LogSaturating {
                scale: p.scale,
                rate: p.rate,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientsDocument {
    Explicit(Vec<Client>),
    Generated(GeneratedClients),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedClients {
    pub count: usize,
    pub samples: u64,
    pub cost_model: CostModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDocument {
    Expectation { expectation: u64 },
    Coalition { coalition: Vec<ClientId> },
}

// `Client` appears inside an untagged enum, so unknown fields are checked by
// hand after parsing the raw value.
const CLIENT_FIELDS: [&str; 3] = ["id", "samples", "cost"];
const INITIAL_FIELDS: [&str; 2] = ["expectation", "coalition"];

fn check_untagged_fields(raw: &serde_json::Value) -> Result<(), ModelError> {
    if let Some(clients) = raw.get("clients").and_then(|c| c.as_array()) {
        for c in clients {
            if let Some(obj) = c.as_object() {
                if let Some(k) = obj.keys().find(|k| !CLIENT_FIELDS.contains(&k.as_str())) {
                    return Err(ModelError::Schema(format!("unknown client field `{k}`")));
                }
            }
        }
    }
    if let Some(obj) = raw.get("initial").and_then(|c| c.as_object()) {
        if obj.len() != 1 {
            return Err(ModelError::Schema(
                "initial must have exactly one of `expectation` or `coalition`".into(),
            ));
        }
        if let Some(k) = obj.keys().find(|k| !INITIAL_FIELDS.contains(&k.as_str())) {
            return Err(ModelError::Schema(format!("unknown initial field `{k}`")));
        }
    }
    Ok(())
}

impl ScenarioDocument {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        check_untagged_fields(&raw)?;
        serde_json::from_value(raw).map_err(|e| ModelError::Schema(e.to_string()))
    }

    pub fn into_scenario(self) -> Result<Scenario, ModelError> {
        let prior = Prior::new(self.sigma_theta_sq)?;
        let mode = match (self.utility_mode, self.oracle) {
            (ModeTag::Homogeneous, None) => UtilityMode::Homogeneous,
            (ModeTag::Heterogeneous, None) => UtilityMode::Heterogeneous,
            (ModeTag::Oracle, Some(doc)) => UtilityMode::Oracle(doc.into()),
            (ModeTag::Oracle, None) => {
                return Err(ModelError::Schema("oracle mode requires an `oracle` object".into()))
            }
            (_, Some(_)) => {
                return Err(ModelError::Schema(
                    "`oracle` is only allowed in oracle mode".into(),
                ))
            }
        };
        let clients = match self.clients {
            ClientsDocument::Explicit(list) => list
                .into_iter()
                .map(|c| Client::new(c.id, c.samples, c.cost))
                .collect::<Result<Vec<_>, _>>()?,
            ClientsDocument::Generated(g) => {
                if g.samples == 0 {
                    return Err(ModelError::Invariant("generated clients have zero samples".into()));
                }
                let costs =
                    expand_cost_model(&g.cost_model, g.count, Some((g.samples, prior.sigma_theta_sq)))?;
                costs
                    .into_iter()
                    .enumerate()
                    .map(|(i, cost)| Client::new(i as ClientId + 1, g.samples, cost))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let initial = match self.initial {
            InitialDocument::Expectation { expectation } => Initial::Expectation(expectation),
            InitialDocument::Coalition { coalition } => {
                let n = coalition.len();
                let set: BTreeSet<ClientId> = coalition.into_iter().collect();
                if set.len() != n {
                    return Err(ModelError::Invariant(
                        "initial coalition lists a client twice".into(),
                    ));
                }
                Initial::Coalition(set)
            }
        };
        Scenario::new(self.name, clients, prior, mode, initial)
    }
}

pub fn load_scenario(text: &str) -> Result<Scenario, ModelError> {
    ScenarioDocument::parse(text)?.into_scenario()
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    load_scenario(&text)
}
