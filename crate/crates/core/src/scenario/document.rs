//! JSON scenario documents and rate-unit parsing.
//!
//! Rates are bytes/sec unless a string carries a unit:
//! `bps`, `kbps`, `Mbps`, `Gbps` (bits) or `B/s`, `kB/s`, `MB/s`, `GB/s` (bytes).

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};

use super::{LinkRates, Scenario, ScenarioError, ScenarioGenerator, BYTES_PER_MBPS};
use crate::profile::ModelProfile;

/// Parses a rate string such as `"20Mbps"` or `"2.5 MB/s"` into bytes/sec.
pub fn parse_rate(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+')))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid rate `{text}`"))?;
    let factor = match unit.trim() {
        "" | "B/s" => 1.0,
        "kB/s" => 1e3,
        "MB/s" => 1e6,
        "GB/s" => 1e9,
        "bps" => 1.0 / 8.0,
        "kbps" => 1e3 / 8.0,
        "Mbps" => BYTES_PER_MBPS,
        "Gbps" => 1e9 / 8.0,
        other => return Err(format!("unknown rate unit `{other}` in `{text}`")),
    };
    Ok(value * factor)
}

pub(crate) fn de_rate<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Number(v) => Ok(v),
        Raw::Text(s) => parse_rate(&s).map_err(serde::de::Error::custom),
    }
}

fn de_rate_matrix<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    struct Cell(#[serde(deserialize_with = "de_rate")] f64);
    let rows: Vec<Vec<Cell>> = Vec::deserialize(d)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|c| c.0).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub throughput: f64,
    pub dataset_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSpec {
    Uniform(#[serde(deserialize_with = "de_rate")] f64),
    Matrix(#[serde(deserialize_with = "de_rate_matrix")] Vec<Vec<f64>>),
    Generate {
        #[serde(deserialize_with = "de_rate")]
        lo: f64,
        #[serde(deserialize_with = "de_rate")]
        hi: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBlock {
    #[serde(flatten)]
    pub params: ScenarioGenerator,
    pub seed: u64,
}

/// Either an explicit client list with links, or a generator block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioDocument {
    /// Profile path or `builtin:<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_throughput: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_per_round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<Vec<ClientEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<LinkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GeneratorBlock>,
}

impl ScenarioDocument {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Explicit document describing an existing scenario.
    pub fn from_scenario(s: &Scenario, model: Option<String>) -> Self {
        ScenarioDocument {
            model,
            server_throughput: Some(s.server_throughput()),
            epochs_per_round: Some(s.epochs_per_round()),
            clients: Some(
                s.clients()
                    .iter()
                    .map(|c| ClientEntry {
                        throughput: c.throughput,
                        dataset_size: c.dataset_size,
                    })
                    .collect(),
            ),
            links: Some(LinkSpec::Matrix(s.links().to_matrix())),
            generate: None,
        }
    }

    /// Seed of the generator block or the generated link table, if any.
    pub fn seed(&self) -> Option<u64> {
        match (&self.generate, &self.links) {
            (Some(g), _) => Some(g.seed),
            (None, Some(LinkSpec::Generate { seed, .. })) => Some(*seed),
            _ => None,
        }
    }

    /// Builds the scenario. `seed` replaces any seed found in the document.
    pub fn build(
        &self,
        model: Arc<ModelProfile>,
        seed: Option<u64>,
    ) -> Result<Scenario, DocumentError> {
        if let Some(g) = &self.generate {
            if self.clients.is_some() || self.links.is_some() {
                return Err(DocumentError::Conflict);
            }
            return Ok(g.params.generate(model, seed.unwrap_or(g.seed))?);
        }
        let clients = self
            .clients
            .as_ref()
            .ok_or(DocumentError::Missing("clients"))?;
        let server = self
            .server_throughput
            .ok_or(DocumentError::Missing("server_throughput"))?;
        let epochs = self
            .epochs_per_round
            .ok_or(DocumentError::Missing("epochs_per_round"))?;
        let n = clients.len();
        let links = match self.links.as_ref().ok_or(DocumentError::Missing("links"))? {
            LinkSpec::Uniform(rate) => {
                if rate.is_nan() || *rate <= 0.0 {
                    return Err(ScenarioError::BadRange {
                        lo: *rate,
                        hi: *rate,
                    }
                    .into());
                }
                LinkRates::uniform(n, *rate)
            }
            LinkSpec::Matrix(m) => LinkRates::from_matrix(n, m)?,
            LinkSpec::Generate {
                lo,
                hi,
                seed: doc_seed,
            } => {
                use rand::SeedableRng;
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(ScenarioError::BadRange { lo: *lo, hi: *hi }.into());
                }
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.unwrap_or(*doc_seed));
                LinkRates::random(n, *lo, *hi, &mut rng)
            }
        };
        let entries = clients
            .iter()
            .map(|c| (c.throughput, c.dataset_size))
            .collect();
        Ok(Scenario::new(entries, server, links, epochs, model)?)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DocumentError {
    #[error("scenario document is missing `{0}`")]
    Missing(&'static str),
    #[error("scenario document mixes a `generate` block with explicit clients/links")]
    Conflict,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}
