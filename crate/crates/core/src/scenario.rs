//! Network, compute and training-hyperparameter description of one system,
//! plus seeded scenario generation and system-change events.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::ModelProfile;

pub mod document;

/// Bytes per second in one megabit per second.
pub const BYTES_PER_MBPS: f64 = 125_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario needs at least one client")]
    NoClients,
    #[error("client {client}: throughput must be finite and > 0, got {value}")]
    BadThroughput { client: usize, value: f64 },
    #[error("client {client}: dataset size must be >= 1")]
    EmptyDataset { client: usize },
    #[error("server throughput must be finite and > 0, got {0}")]
    BadServerThroughput(f64),
    #[error("epochs per round must be >= 1")]
    ZeroEpochs,
    #[error("link {a}-{b}: rate must be > 0, got {rate}")]
    BadRate { a: Endpoint, b: Endpoint, rate: f64 },
    #[error("link {a}-{b} is asymmetric ({ab} vs {ba})")]
    Asymmetric {
        a: Endpoint,
        b: Endpoint,
        ab: f64,
        ba: f64,
    },
    #[error("link matrix must be {expected}x{expected}, got {got} rows/cols")]
    LinkShape { expected: usize, got: usize },
    #[error("unknown target {0}")]
    UnknownTarget(Endpoint),
    #[error("scaling factor must be in (0, 1], got {0}")]
    BadFactor(f64),
    #[error("strong fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("rate range [{lo}, {hi}] is invalid")]
    BadRange { lo: f64, hi: f64 },
    #[error(
        "heterogeneity {0} cannot be applied: needs gamma >= 1 and distinct client throughputs"
    )]
    BadHeterogeneity(f64),
}

/// Client identifier; equal to the client's position in the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Client(ClientId),
    Server,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Client(c) => write!(f, "{c}"),
            Endpoint::Server => write!(f, "server"),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Endpoint::Client(c) => s.serialize_u64(c.0 as u64),
            Endpoint::Server => s.serialize_str("server"),
        }
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Endpoint::Client(ClientId(i))),
            Raw::Name(s) if s == "server" => Ok(Endpoint::Server),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("unknown endpoint `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: ClientId,
    /// FLOPs per second.
    pub throughput: f64,
    /// Training samples held by the client.
    pub dataset_size: u64,
}

/// Symmetric link-rate table over the clients and the server, in bytes/sec.
/// Self links are infinitely fast.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRates {
    clients: usize,
    rates: Vec<f64>,
}

impl LinkRates {
    /// Every link at the same rate.
    pub fn uniform(clients: usize, rate: f64) -> Self {
        let n = clients + 1;
        let mut rates = vec![rate; n * n];
        for i in 0..n {
            rates[i * n + i] = f64::INFINITY;
        }
        LinkRates { clients, rates }
    }

    /// From a square matrix whose last row/column is the server. The diagonal is ignored.
    pub fn from_matrix(clients: usize, matrix: &[Vec<f64>]) -> Result<Self, ScenarioError> {
        let n = clients + 1;
        if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
            let got = if matrix.len() != n {
                matrix.len()
            } else {
                matrix.iter().map(Vec::len).find(|&l| l != n).unwrap_or(n)
            };
            return Err(ScenarioError::LinkShape { expected: n, got });
        }
        let mut links = LinkRates::uniform(clients, 1.0);
        for (i, row) in matrix.iter().enumerate() {
            for (j, &rate) in row.iter().enumerate() {
                if i != j {
                    links.rates[i * n + j] = rate;
                }
            }
        }
        links.validate()?;
        Ok(links)
    }

    /// Draws every unordered pair uniformly from `[lo, hi]`.
    pub fn random(clients: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = clients + 1;
        let mut links = LinkRates::uniform(clients, 1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                links.rates[i * n + j] = r;
                links.rates[j * n + i] = r;
            }
        }
        links
    }

    fn slot(&self, e: Endpoint) -> usize {
        match e {
            Endpoint::Client(c) => c.0,
            Endpoint::Server => self.clients,
        }
    }

    pub fn get(&self, a: Endpoint, b: Endpoint) -> f64 {
        let n = self.clients + 1;
        self.rates[self.slot(a) * n + self.slot(b)]
    }

    fn set(&mut self, a: Endpoint, b: Endpoint, rate: f64) {
        if a == b {
            return;
        }
        let n = self.clients + 1;
        let (i, j) = (self.slot(a), self.slot(b));
        self.rates[i * n + j] = rate;
        self.rates[j * n + i] = rate;
    }

    pub fn endpoints(&self) -> impl Iterator<Item = Endpoint> {
        (0..self.clients)
            .map(|i| Endpoint::Client(ClientId(i)))
            .chain(std::iter::once(Endpoint::Server))
    }

    pub fn client_count(&self) -> usize {
        self.clients
    }

    /// The full square matrix, server last, `null`-free (diagonal reported as 0).
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.clients + 1;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 0.0 } else { self.rates[i * n + j] })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let eps: Vec<Endpoint> = self.endpoints().collect();
        for (ia, &a) in eps.iter().enumerate() {
            for &b in &eps[ia + 1..] {
                let (ab, ba) = (self.get(a, b), self.get(b, a));
                if ab.is_nan() || ab <= 0.0 {
                    return Err(ScenarioError::BadRate { a, b, rate: ab });
                }
                if ab != ba {
                    return Err(ScenarioError::Asymmetric { a, b, ab, ba });
                }
            }
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for r in &mut self.rates {
            *r *= factor;
        }
    }
}

/// One system: clients, server, links, hyperparameters and the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    clients: Vec<ClientSpec>,
    server_throughput: f64,
    links: LinkRates,
    epochs_per_round: u32,
    model: Arc<ModelProfile>,
}

impl Scenario {
    /// Builds a scenario from client throughputs and dataset sizes; ids follow position.
    pub fn new(
        clients: Vec<(f64, u64)>,
        server_throughput: f64,
        links: LinkRates,
        epochs_per_round: u32,
        model: Arc<ModelProfile>,
    ) -> Result<Self, ScenarioError> {
        let clients = clients
            .into_iter()
            .enumerate()
            .map(|(i, (throughput, dataset_size))| ClientSpec {
                id: ClientId(i),
                throughput,
                dataset_size,
            })
            .collect();
        let s = Scenario {
            clients,
            server_throughput,
            links,
            epochs_per_round,
            model,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.clients.is_empty() {
            return Err(ScenarioError::NoClients);
        }
        for c in &self.clients {
            if !(c.throughput.is_finite() && c.throughput > 0.0) {
                return Err(ScenarioError::BadThroughput {
                    client: c.id.0,
                    value: c.throughput,
                });
            }
            if c.dataset_size == 0 {
                return Err(ScenarioError::EmptyDataset { client: c.id.0 });
            }
        }
        if !(self.server_throughput.is_finite() && self.server_throughput > 0.0) {
            return Err(ScenarioError::BadServerThroughput(self.server_throughput));
        }
        if self.epochs_per_round == 0 {
            return Err(ScenarioError::ZeroEpochs);
        }
        if self.links.client_count() != self.clients.len() {
            return Err(ScenarioError::LinkShape {
                expected: self.clients.len() + 1,
                got: self.links.client_count() + 1,
            });
        }
        self.links.validate()
    }

    pub fn clients(&self) -> &[ClientSpec] {
        &self.clients
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn throughput(&self, c: ClientId) -> f64 {
        self.clients[c.0].throughput
    }

    pub fn server_throughput(&self) -> f64 {
        self.server_throughput
    }

    pub fn epochs_per_round(&self) -> u32 {
        self.epochs_per_round
    }

    pub fn model(&self) -> &ModelProfile {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<ModelProfile> {
        &self.model
    }

    pub fn links(&self) -> &LinkRates {
        &self.links
    }

    pub fn rate(&self, a: Endpoint, b: Endpoint) -> f64 {
        self.links.get(a, b)
    }

    /// Rate between two clients; infinite for a self link.
    pub fn client_rate(&self, a: ClientId, b: ClientId) -> f64 {
        self.links.get(Endpoint::Client(a), Endpoint::Client(b))
    }

    pub fn server_rate(&self, c: ClientId) -> f64 {
        self.links.get(Endpoint::Client(c), Endpoint::Server)
    }

    /// Batch executions per epoch, `max_n ceil(D_n / B)`.
    pub fn batches_per_epoch(&self) -> u64 {
        let b = u64::from(self.model.batch_size());
        self.clients
            .iter()
            .map(|c| c.dataset_size.div_ceil(b))
            .max()
            .unwrap_or(0)
    }

    /// Ratio of the strongest to the weakest client throughput.
    pub fn heterogeneity(&self) -> f64 {
        let max = self
            .clients
            .iter()
            .map(|c| c.throughput)
            .fold(f64::MIN, f64::max);
        let min = self
            .clients
            .iter()
            .map(|c| c.throughput)
            .fold(f64::MAX, f64::min);
        max / min
    }

    /// Client ids sorted by descending throughput, ties by lower id.
    pub fn by_throughput_desc(&self) -> Vec<ClientId> {
        let mut ids: Vec<ClientId> = self.clients.iter().map(|c| c.id).collect();
        ids.sort_by(|a, b| {
            self.throughput(*b)
                .total_cmp(&self.throughput(*a))
                .then(a.cmp(b))
        });
        ids
    }

    /// Returns a copy with the change applied; `self` is untouched.
    pub fn apply_change(&self, change: &SystemChange) -> Result<Scenario, ScenarioError> {
        let mut next = self.clone();
        match change {
            SystemChange::ThroughputScale { targets, factor } => {
                if !(*factor > 0.0 && *factor <= 1.0) {
                    return Err(ScenarioError::BadFactor(*factor));
                }
                for id in self.resolve_clients(targets)? {
                    next.clients[id.0].throughput *= factor;
                }
            }
            SystemChange::LinkRateOverride { links, rate } => {
                if rate.is_nan() || *rate <= 0.0 {
                    return Err(ScenarioError::BadRate {
                        a: Endpoint::Server,
                        b: Endpoint::Server,
                        rate: *rate,
                    });
                }
                match links {
                    LinkTargets::All => {
                        let eps: Vec<Endpoint> = self.links.endpoints().collect();
                        for (i, &a) in eps.iter().enumerate() {
                            for &b in &eps[i + 1..] {
                                next.links.set(a, b, *rate);
                            }
                        }
                    }
                    LinkTargets::Pairs(pairs) => {
                        for &(a, b) in pairs {
                            self.check_endpoint(a)?;
                            self.check_endpoint(b)?;
                            next.links.set(a, b, *rate);
                        }
                    }
                }
            }
        }
        Ok(next)
    }

    /// Applies changes in order.
    pub fn apply_changes(&self, changes: &[SystemChange]) -> Result<Scenario, ScenarioError> {
        changes
            .iter()
            .try_fold(self.clone(), |s, c| s.apply_change(c))
    }

    /// Multiplies every throughput (clients and server) and every link rate by `factor`.
    pub fn scaled_uniformly(&self, factor: f64) -> Scenario {
        let mut next = self.clone();
        for c in &mut next.clients {
            c.throughput *= factor;
        }
        next.server_throughput *= factor;
        next.links.scale(factor);
        next
    }

    /// Copy whose client throughputs are mapped affinely from
    /// `[p_min, p_max]` onto `[p_min, gamma * p_min]`, so the weakest client
    /// keeps its throughput and the heterogeneity ratio becomes `gamma`.
    pub fn with_heterogeneity(&self, gamma: f64) -> Result<Scenario, ScenarioError> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(ScenarioError::BadHeterogeneity(gamma));
        }
        let min = self
            .clients
            .iter()
            .map(|c| c.throughput)
            .fold(f64::MAX, f64::min);
        let max = self
            .clients
            .iter()
            .map(|c| c.throughput)
            .fold(f64::MIN, f64::max);
        if max == min && gamma != 1.0 {
            return Err(ScenarioError::BadHeterogeneity(gamma));
        }
        let mut next = self.clone();
        for c in &mut next.clients {
            if max > min {
                c.throughput = min * (1.0 + (c.throughput - min) / (max - min) * (gamma - 1.0));
            }
        }
        Ok(next)
    }

    /// Copy with a different model; the caller keeps batch sizes consistent.
    pub fn with_model(&self, model: Arc<ModelProfile>) -> Scenario {
        let mut next = self.clone();
        next.model = model;
        next
    }

    fn resolve_clients(&self, targets: &ClientTargets) -> Result<Vec<ClientId>, ScenarioError> {
        match targets {
            ClientTargets::All => Ok(self.clients.iter().map(|c| c.id).collect()),
            ClientTargets::Clients(ids) => {
                for id in ids {
                    self.check_endpoint(Endpoint::Client(*id))?;
                }
                Ok(ids.clone())
            }
        }
    }

    fn check_endpoint(&self, e: Endpoint) -> Result<(), ScenarioError> {
        match e {
            Endpoint::Client(c) if c.0 >= self.clients.len() => {
                Err(ScenarioError::UnknownTarget(e))
            }
            _ => Ok(()),
        }
    }
}

/// Ratio of max to min client throughput.
pub fn heterogeneity(s: &Scenario) -> f64 {
    s.heterogeneity()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientTargets {
    #[serde(with = "all_marker")]
    All,
    Clients(Vec<ClientId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkTargets {
    #[serde(with = "all_marker")]
    All,
    Pairs(Vec<(Endpoint, Endpoint)>),
}

mod all_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected \"all\""))
        }
    }
}

/// A change in available resources between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemChange {
    /// Multiply the throughput of the targeted clients by `factor` in (0, 1].
    ThroughputScale { targets: ClientTargets, factor: f64 },
    /// Replace the rate of the targeted links, in bytes/sec.
    LinkRateOverride {
        links: LinkTargets,
        #[serde(deserialize_with = "document::de_rate")]
        rate: f64,
    },
}

impl SystemChange {
    pub fn label(&self) -> String {
        match self {
            SystemChange::ThroughputScale { factor, .. } => format!("throughput_scale_{factor}"),
            SystemChange::LinkRateOverride { rate, .. } => format!("link_rate_override_{rate}"),
        }
    }
}

/// Seeded generator for strong/weak client populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGenerator {
    pub n_clients: usize,
    pub strong_fraction: f64,
    pub strong_throughput: f64,
    pub weak_throughput: f64,
    #[serde(deserialize_with = "document::de_rate")]
    pub rate_lo: f64,
    #[serde(deserialize_with = "document::de_rate")]
    pub rate_hi: f64,
    pub server_throughput: f64,
    pub dataset_size: u64,
    pub epochs_per_round: u32,
}

impl ScenarioGenerator {
    /// 17.6 GFLOPS strong clients, 2.4 GFLOPS weak clients, 100 GFLOPS server,
    /// 20-25 Mbps links, 30% strong, three epochs per round.
    pub fn testbed_defaults(n_clients: usize, dataset_size: u64) -> Self {
        ScenarioGenerator {
            n_clients,
            strong_fraction: 0.3,
            strong_throughput: 17.6e9,
            weak_throughput: 2.4e9,
            rate_lo: 20.0 * BYTES_PER_MBPS,
            rate_hi: 25.0 * BYTES_PER_MBPS,
            server_throughput: 100e9,
            dataset_size,
            epochs_per_round: 3,
        }
    }

    /// Number of strong clients, `ceil(fraction * N)`.
    pub fn strong_count(&self) -> usize {
        let raw = self.strong_fraction * self.n_clients as f64;
        // guard against 0.3 * 10 = 3.0000000000000004
        ((raw - 1e-9).ceil().max(0.0) as usize).min(self.n_clients)
    }

    pub fn generate(&self, model: Arc<ModelProfile>, seed: u64) -> Result<Scenario, ScenarioError> {
        if !(0.0..=1.0).contains(&self.strong_fraction) {
            return Err(ScenarioError::BadFraction(self.strong_fraction));
        }
        if !(self.rate_lo > 0.0 && self.rate_lo <= self.rate_hi) {
            return Err(ScenarioError::BadRange {
                lo: self.rate_lo,
                hi: self.rate_hi,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.n_clients).collect();
        order.shuffle(&mut rng);
        let mut strong = vec![false; self.n_clients];
        for &i in order.iter().take(self.strong_count()) {
            strong[i] = true;
        }
        let clients = strong
            .iter()
            .map(|&s| {
                let p = if s {
                    self.strong_throughput
                } else {
                    self.weak_throughput
                };
                (p, self.dataset_size)
            })
            .collect();
        let links = LinkRates::random(self.n_clients, self.rate_lo, self.rate_hi, &mut rng);
        Scenario::new(
            clients,
            self.server_throughput,
            links,
            self.epochs_per_round,
            model,
        )
    }
}

/// Free-function form of [`ScenarioGenerator::generate`].
#[allow(clippy::too_many_arguments)]
pub fn generate_scenario(
    model: Arc<ModelProfile>,
    n_clients: usize,
    strong_fraction: f64,
    strong_p: f64,
    weak_p: f64,
    rate_range: (f64, f64),
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    let mut g = ScenarioGenerator::testbed_defaults(n_clients, u64::from(model.batch_size()));
    g.strong_fraction = strong_fraction;
    g.strong_throughput = strong_p;
    g.weak_throughput = weak_p;
    g.rate_lo = rate_range.0;
    g.rate_hi = rate_range.1;
    g.generate(model, seed)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::profile::{LayerProfile, ModelProfile};

    pub(crate) fn tiny_model() -> Arc<ModelProfile> {
        let layers = (1..=4)
            .map(|i| LayerProfile {
                index: i,
                flops_fp: 100.0,
                weight_bytes: 1000.0,
                act_bytes: 50.0,
            })
            .collect();
        Arc::new(ModelProfile::new("tiny", 1, layers).unwrap())
    }

    /// Two clients (100 and 200 FLOPs/s), 50 B/s links, server 1000 FLOPs/s.
    pub(crate) fn tiny() -> Scenario {
        two_clients((100.0, 200.0))
    }

    fn two_clients(p: (f64, f64)) -> Scenario {
        Scenario::new(
            vec![(p.0, 1), (p.1, 1)],
            1000.0,
            LinkRates::uniform(2, 50.0),
            1,
            tiny_model(),
        )
        .unwrap()
    }

    #[test]
    fn heterogeneity_ratio() {
        assert_eq!(two_clients((100.0, 200.0)).heterogeneity(), 2.0);
        assert_eq!(two_clients((100.0, 100.0)).heterogeneity(), 1.0);
        let s = two_clients((17.6e9, 2.4e9));
        assert!((s.heterogeneity() - 7.333_333_333).abs() < 1e-6);
    }

    #[test]
    fn strong_fraction_counts() {
        let model = tiny_model();
        let s =
            generate_scenario(model.clone(), 10, 0.3, 17.6e9, 2.4e9, (2.5e6, 3.125e6), 1).unwrap();
        let strong = s
            .clients()
            .iter()
            .filter(|c| c.throughput == 17.6e9)
            .count();
        assert_eq!(strong, 3);
        let s = generate_scenario(model, 10, 0.0, 17.6e9, 2.4e9, (2.5e6, 3.125e6), 1).unwrap();
        assert_eq!(s.heterogeneity(), 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let model = tiny_model();
        let a =
            generate_scenario(model.clone(), 12, 0.3, 17.6e9, 2.4e9, (2.5e6, 3.125e6), 42).unwrap();
        let b =
            generate_scenario(model.clone(), 12, 0.3, 17.6e9, 2.4e9, (2.5e6, 3.125e6), 42).unwrap();
        let c = generate_scenario(model, 12, 0.3, 17.6e9, 2.4e9, (2.5e6, 3.125e6), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for x in a.links().endpoints() {
            for y in a.links().endpoints() {
                if x != y {
                    let r = a.rate(x, y);
                    assert!((2.5e6..=3.125e6).contains(&r));
                    assert_eq!(r, a.rate(y, x));
                }
            }
        }
    }

    #[test]
    fn throughput_scale_change() {
        let s = two_clients((100.0, 200.0));
        let c = SystemChange::ThroughputScale {
            targets: ClientTargets::All,
            factor: 0.7,
        };
        let t = s.apply_change(&c).unwrap();
        assert_eq!(t.throughput(ClientId(0)), 70.0);
        assert_eq!(t.throughput(ClientId(1)), 140.0);
        assert_eq!(s.throughput(ClientId(0)), 100.0);
        assert_eq!(s.apply_change(&c).unwrap(), t);
        let identity = SystemChange::ThroughputScale {
            targets: ClientTargets::All,
            factor: 1.0,
        };
        assert_eq!(s.apply_change(&identity).unwrap(), s);
    }

    #[test]
    fn link_override_change() {
        let s = two_clients((100.0, 200.0));
        let c = SystemChange::LinkRateOverride {
            links: LinkTargets::All,
            rate: 4.0 * BYTES_PER_MBPS,
        };
        let t = s.apply_change(&c).unwrap();
        assert_eq!(
            t.rate(Endpoint::Client(ClientId(0)), Endpoint::Server),
            0.5e6
        );
        assert_eq!(t.client_rate(ClientId(0), ClientId(1)), 0.5e6);
        assert_eq!(t.client_rate(ClientId(1), ClientId(1)), f64::INFINITY);
        let one = SystemChange::LinkRateOverride {
            links: LinkTargets::Pairs(vec![(Endpoint::Client(ClientId(1)), Endpoint::Server)]),
            rate: 7.0,
        };
        let t = s.apply_change(&one).unwrap();
        assert_eq!(t.rate(Endpoint::Server, Endpoint::Client(ClientId(1))), 7.0);
        assert_eq!(
            t.rate(Endpoint::Server, Endpoint::Client(ClientId(0))),
            50.0
        );
    }

    #[test]
    fn change_errors() {
        let s = two_clients((100.0, 200.0));
        let bad = SystemChange::ThroughputScale {
            targets: ClientTargets::Clients(vec![ClientId(5)]),
            factor: 0.5,
        };
        assert_eq!(
            s.apply_change(&bad),
            Err(ScenarioError::UnknownTarget(Endpoint::Client(ClientId(5))))
        );
        let bad = SystemChange::ThroughputScale {
            targets: ClientTargets::All,
            factor: 1.5,
        };
        assert_eq!(s.apply_change(&bad), Err(ScenarioError::BadFactor(1.5)));
    }

    #[test]
    fn batches_per_epoch_uses_max() {
        let s = Scenario::new(
            vec![(1.0, 70), (1.0, 33)],
            1.0,
            LinkRates::uniform(2, 1.0),
            1,
            {
                let layers = (1..=4)
                    .map(|i| LayerProfile {
                        index: i,
                        flops_fp: 1.0,
                        weight_bytes: 1.0,
                        act_bytes: 1.0,
                    })
                    .collect();
                Arc::new(ModelProfile::new("b32", 32, layers).unwrap())
            },
        )
        .unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let m = tiny_model();
        assert_eq!(
            Scenario::new(vec![], 1.0, LinkRates::uniform(0, 1.0), 1, m.clone()),
            Err(ScenarioError::NoClients)
        );
        assert_eq!(
            Scenario::new(
                vec![(1.0, 1)],
                1.0,
                LinkRates::uniform(1, 1.0),
                0,
                m.clone()
            ),
            Err(ScenarioError::ZeroEpochs)
        );
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(matches!(
            LinkRates::from_matrix(1, &asym),
            Err(ScenarioError::Asymmetric { .. })
        ));
    }

    #[test]
    fn heterogeneity_rescale() {
        let s = Scenario::new(
            vec![(2.0, 1), (4.0, 1), (6.0, 1)],
            1.0,
            LinkRates::uniform(3, 1.0),
            1,
            tiny_model(),
        )
        .unwrap();
        let t = s.with_heterogeneity(15.0).unwrap();
        assert_eq!(t.heterogeneity(), 15.0);
        assert_eq!(t.throughput(ClientId(0)), 2.0);
        assert_eq!(t.throughput(ClientId(1)), 16.0);
        assert!(two_clients((1.0, 1.0)).with_heterogeneity(2.0).is_err());
        assert!(s.with_heterogeneity(0.5).is_err());
    }

    #[test]
    fn change_documents_parse() {
        let text = r#"[
            {"kind": "throughput_scale", "targets": "all", "factor": 0.7},
            {"kind": "throughput_scale", "targets": [0, 2], "factor": 0.85},
            {"kind": "link_rate_override", "links": "all", "rate": "4Mbps"},
            {"kind": "link_rate_override", "links": [[0, "server"]], "rate": 1000}
        ]"#;
        let changes: Vec<SystemChange> = serde_json::from_str(text).unwrap();
        assert_eq!(changes.len(), 4);
        assert_eq!(
            changes[2],
            SystemChange::LinkRateOverride {
                links: LinkTargets::All,
                rate: 500_000.0
            }
        );
        assert_eq!(
            changes[1],
            SystemChange::ThroughputScale {
                targets: ClientTargets::Clients(vec![ClientId(0), ClientId(2)]),
                factor: 0.85
            }
        );
    }
}
