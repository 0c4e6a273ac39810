//! Candidate cut layers from measured accuracy.
//!
//! Accuracy `acc_n(v, e)` is measured per client, cut layer and epoch. The
//! score of a layer is the client mean per epoch, averaged over epochs. A layer
//! is a candidate when its score is within `thr` of the best score.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when none is given: two percentage points.
pub const DEFAULT_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("malformed accuracy document: {0}")]
    Malformed(String),
    #[error("accuracy profile is empty")]
    Empty,
    #[error(
        "accuracy {value} for client {client}, layer {layer}, epoch {epoch} is outside [0, 1]"
    )]
    OutOfUnitRange {
        client: String,
        layer: usize,
        epoch: usize,
        value: f64,
    },
    #[error("missing measurement for client {client}, layer {layer}, epoch {epoch}")]
    Missing {
        client: String,
        layer: usize,
        epoch: usize,
    },
    #[error("duplicate measurement for client {client}, layer {layer}, epoch {epoch}")]
    Duplicate {
        client: String,
        layer: usize,
        epoch: usize,
    },
    #[error("unknown client `{0}` in measurements")]
    UnknownClient(String),
    #[error("layer {0} is not covered by the profile")]
    LayerOutOfRange(usize),
    #[error("layers must be a contiguous range starting at 2, got {0:?}")]
    LayerGap(Vec<usize>),
    #[error("epoch {0} is outside 1..=E'")]
    EpochOutOfRange(usize),
    #[error("threshold must be finite and >= 0, got {0}")]
    BadThreshold(f64),
}

/// Complete accuracy measurements over clients, cut layers `2..=L-1` and epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyProfile {
    clients: Vec<String>,
    epochs: usize,
    first_layer: usize,
    /// `values[layer - first][epoch - 1][client]`
    values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Measurement {
    pub client: String,
    pub v: usize,
    pub e: usize,
    pub value: f64,
}

/// Wire form: full measurements or pre-averaged scores per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AccuracyDocument {
    Full {
        epochs: usize,
        clients: Vec<String>,
        acc: Vec<Measurement>,
    },
    Averaged {
        acc_by_layer: BTreeMap<String, f64>,
    },
}

impl AccuracyProfile {
    /// Validates a complete measurement set.
    pub fn from_measurements(
        clients: Vec<String>,
        epochs: usize,
        acc: &[Measurement],
    ) -> Result<Self, AccuracyError> {
        if clients.is_empty() || epochs == 0 || acc.is_empty() {
            return Err(AccuracyError::Empty);
        }
        let client_index: BTreeMap<&str, usize> = clients
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let first = acc.iter().map(|m| m.v).min().unwrap_or(2);
        let last = acc.iter().map(|m| m.v).max().unwrap_or(2);
        if first != 2 {
            return Err(AccuracyError::LayerOutOfRange(first));
        }
        let mut slots: Vec<Vec<Vec<Option<f64>>>> =
            vec![vec![vec![None; clients.len()]; epochs]; last - first + 1];
        for m in acc {
            let c = *client_index
                .get(m.client.as_str())
                .ok_or_else(|| AccuracyError::UnknownClient(m.client.clone()))?;
            if m.e == 0 || m.e > epochs {
                return Err(AccuracyError::EpochOutOfRange(m.e));
            }
            if !(0.0..=1.0).contains(&m.value) {
                return Err(AccuracyError::OutOfUnitRange {
                    client: m.client.clone(),
                    layer: m.v,
                    epoch: m.e,
                    value: m.value,
                });
            }
            let slot = &mut slots[m.v - first][m.e - 1][c];
            if slot.is_some() {
                return Err(AccuracyError::Duplicate {
                    client: m.client.clone(),
                    layer: m.v,
                    epoch: m.e,
                });
            }
            *slot = Some(m.value);
        }
        let mut values = Vec::with_capacity(slots.len());
        for (li, layer) in slots.into_iter().enumerate() {
            let mut per_epoch = Vec::with_capacity(epochs);
            for (ei, epoch) in layer.into_iter().enumerate() {
                let mut row = Vec::with_capacity(clients.len());
                for (ci, v) in epoch.into_iter().enumerate() {
                    row.push(v.ok_or_else(|| AccuracyError::Missing {
                        client: clients[ci].clone(),
                        layer: first + li,
                        epoch: ei + 1,
                    })?);
                }
                per_epoch.push(row);
            }
            values.push(per_epoch);
        }
        Ok(AccuracyProfile {
            clients,
            epochs,
            first_layer: first,
            values,
        })
    }

    /// Pre-averaged scores, treated as one client over one epoch.
    pub fn from_layer_scores(scores: &BTreeMap<usize, f64>) -> Result<Self, AccuracyError> {
        let layers: Vec<usize> = scores.keys().copied().collect();
        if layers.is_empty() {
            return Err(AccuracyError::Empty);
        }
        if layers[0] != 2 || layers.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(AccuracyError::LayerGap(layers));
        }
        let acc: Vec<Measurement> = scores
            .iter()
            .map(|(&v, &value)| Measurement {
                client: "avg".into(),
                v,
                e: 1,
                value,
            })
            .collect();
        Self::from_measurements(vec!["avg".into()], 1, &acc)
    }

    pub fn from_document(doc: AccuracyDocument) -> Result<Self, AccuracyError> {
        match doc {
            AccuracyDocument::Full {
                epochs,
                clients,
                acc,
            } => Self::from_measurements(clients, epochs, &acc),
            AccuracyDocument::Averaged { acc_by_layer } => {
                let mut scores = BTreeMap::new();
                for (k, v) in acc_by_layer {
                    let layer: usize = k.trim().parse().map_err(|_| {
                        AccuracyError::Malformed(format!("layer key `{k}` is not an integer"))
                    })?;
                    scores.insert(layer, v);
                }
                for (&layer, &value) in &scores {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(AccuracyError::OutOfUnitRange {
                            client: "avg".into(),
                            layer,
                            epoch: 1,
                            value,
                        });
                    }
                }
                Self::from_layer_scores(&scores)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, AccuracyError> {
        let doc: AccuracyDocument =
            serde_json::from_str(text).map_err(|e| AccuracyError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> AccuracyDocument {
        let mut acc = Vec::new();
        for (li, layer) in self.values.iter().enumerate() {
            for (ei, epoch) in layer.iter().enumerate() {
                for (ci, &value) in epoch.iter().enumerate() {
                    acc.push(Measurement {
                        client: self.clients[ci].clone(),
                        v: self.first_layer + li,
                        e: ei + 1,
                        value,
                    });
                }
            }
        }
        AccuracyDocument::Full {
            epochs: self.epochs,
            clients: self.clients.clone(),
            acc,
        }
    }

    /// Cut layers covered, ascending.
    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.first_layer..=self.first_layer + self.values.len() - 1
    }

    /// Largest covered layer plus one: the model depth this profile describes.
    pub fn model_layers(&self) -> usize {
        self.layers().end() + 1
    }

    /// Mean over clients per epoch, then mean over epochs.
    pub fn average_accuracy(&self, v: usize) -> Result<f64, AccuracyError> {
        if !self.layers().contains(&v) {
            return Err(AccuracyError::LayerOutOfRange(v));
        }
        let per_epoch = &self.values[v - self.first_layer];
        let sum: f64 = per_epoch
            .iter()
            .map(|clients| clients.iter().sum::<f64>() / clients.len() as f64)
            .sum();
        Ok(sum / per_epoch.len() as f64)
    }

    /// Layers whose score is within `thr` of the best score, ascending.
    pub fn candidate_cut_layers(&self, thr: f64) -> Result<Vec<usize>, AccuracyError> {
        if !(thr.is_finite() && thr >= 0.0) {
            return Err(AccuracyError::BadThreshold(thr));
        }
        let scores: Vec<(usize, f64)> = self
            .layers()
            .map(|v| self.average_accuracy(v).map(|a| (v, a)))
            .collect::<Result<_, _>>()?;
        let best = scores
            .iter()
            .map(|&(_, a)| a)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(scores
            .into_iter()
            .filter(|&(_, a)| best - a <= thr)
            .map(|(v, _)| v)
            .collect())
    }
}

pub fn average_accuracy(a: &AccuracyProfile, v: usize) -> Result<f64, AccuracyError> {
    a.average_accuracy(v)
}

pub fn candidate_cut_layers(a: &AccuracyProfile, thr: f64) -> Result<Vec<usize>, AccuracyError> {
    a.candidate_cut_layers(thr)
}

/// Parameters of a synthetic unimodal accuracy profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAccuracy {
    /// Model depth `L`; layers `2..=L-1` are profiled.
    pub layers: usize,
    /// Layer with the highest expected accuracy.
    pub peak_layer: usize,
    pub peak_accuracy: f64,
    /// Accuracy lost per layer of distance from the peak.
    pub falloff: f64,
    pub clients: usize,
    pub epochs: usize,
    /// Half-width of the uniform per-measurement noise.
    pub noise: f64,
}

impl SyntheticAccuracy {
    pub fn generate(&self, seed: u64) -> Result<AccuracyProfile, AccuracyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clients: Vec<String> = (0..self.clients).map(|i| format!("c{i}")).collect();
        let mut acc = Vec::new();
        for v in 2..self.layers {
            let distance = (v as f64 - self.peak_layer as f64).abs();
            let base = self.peak_accuracy - self.falloff * distance;
            for e in 1..=self.epochs {
                // later epochs approach the layer's plateau
                let warmup = 0.02 * (self.epochs - e) as f64;
                for c in &clients {
                    let jitter = if self.noise > 0.0 {
                        rng.gen_range(-self.noise..=self.noise)
                    } else {
                        0.0
                    };
                    acc.push(Measurement {
                        client: c.clone(),
                        v,
                        e,
                        value: (base - warmup + jitter).clamp(0.0, 1.0),
                    });
                }
            }
        }
        AccuracyProfile::from_measurements(clients, self.epochs, &acc)
    }
}
