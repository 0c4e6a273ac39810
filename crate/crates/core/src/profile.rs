//! Per-layer cost profiles of sequential DNN models.
//!
//! A profile lists, for every layer `l` in `1..=L`, the forward FLOPs of one
//! batch, the parameter size and the output activation size of one batch.
//! Zero-FLOP layers (flatten, reshape) are allowed.
//! Backward FLOPs are not stored: they are taken as twice the forward FLOPs.
//! All sizes are bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod reference;

/// Smallest layer count for which `1 < h < v < L` has a solution.
pub const MIN_LAYERS: usize = 4;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("malformed profile document: {0}")]
    Malformed(String),
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("layer indices are not contiguous: expected {expected}, found {found}")]
    NonContiguous { expected: usize, found: usize },
    #[error("model has {0} layers; at least 4 are required")]
    TooFewLayers(usize),
    #[error("layer {index}: {field} must be {requirement}, got {value}")]
    InvalidValue {
        index: usize,
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("layer range {lo}..={hi} is outside 1..={layers}")]
    OutOfRange { lo: usize, hi: usize, layers: usize },
    #[error("unknown built-in profile `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    /// 1-based position in the model.
    pub index: usize,
    /// Forward FLOPs for one batch.
    pub flops_fp: f64,
    /// Parameter bytes.
    pub weight_bytes: f64,
    /// Output activation bytes for one batch. Equal to the gradient size.
    pub act_bytes: f64,
}

/// Validated, immutable layer profile of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDocument", into = "ProfileDocument")]
pub struct ModelProfile {
    name: String,
    batch_size: u32,
    layers: Vec<LayerProfile>,
}

/// Wire form of a profile document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub name: String,
    pub batch_size: u32,
    pub layers: Vec<LayerProfile>,
}

impl TryFrom<ProfileDocument> for ModelProfile {
    type Error = ProfileError;

    fn try_from(doc: ProfileDocument) -> Result<Self, Self::Error> {
        ModelProfile::new(doc.name, doc.batch_size, doc.layers)
    }
}

impl From<ModelProfile> for ProfileDocument {
    fn from(m: ModelProfile) -> Self {
        ProfileDocument {
            name: m.name,
            batch_size: m.batch_size,
            layers: m.layers,
        }
    }
}

impl ModelProfile {
    /// Builds a profile, sorting layers by index and checking every invariant.
    pub fn new(
        name: impl Into<String>,
        batch_size: u32,
        mut layers: Vec<LayerProfile>,
    ) -> Result<Self, ProfileError> {
        if batch_size == 0 {
            return Err(ProfileError::ZeroBatch);
        }
        layers.sort_by_key(|l| l.index);
        for (pos, layer) in layers.iter().enumerate() {
            if layer.index != pos + 1 {
                return Err(ProfileError::NonContiguous {
                    expected: pos + 1,
                    found: layer.index,
                });
            }
            check_value(layer.index, "flops_fp", layer.flops_fp, true)?;
            check_value(layer.index, "weight_bytes", layer.weight_bytes, true)?;
            check_value(layer.index, "act_bytes", layer.act_bytes, false)?;
        }
        if layers.len() < MIN_LAYERS {
            return Err(ProfileError::TooFewLayers(layers.len()));
        }
        Ok(ModelProfile {
            name: name.into(),
            batch_size,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn batch_size(&self) -> u32 {
        self.batch_size
    }

    /// Number of layers `L`.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    /// Layer `l` (1-based).
    pub fn layer(&self, l: usize) -> Option<&LayerProfile> {
        l.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    /// Sum of forward FLOPs over layers `lo..=hi`; zero when `lo > hi`.
    pub fn prefix_flops(&self, lo: usize, hi: usize) -> Result<f64, ProfileError> {
        self.check_range(lo, hi)?;
        Ok(self.flops_between(lo, hi))
    }

    /// Sum of weight bytes over layers `lo..=hi`; zero when `lo > hi`.
    pub fn prefix_bytes(&self, lo: usize, hi: usize) -> Result<f64, ProfileError> {
        self.check_range(lo, hi)?;
        Ok(self.weights_between(lo, hi))
    }

    /// Activation (and gradient) bytes leaving layer `l`.
    pub fn act_bytes(&self, l: usize) -> Result<f64, ProfileError> {
        self.layer(l)
            .map(|layer| layer.act_bytes)
            .ok_or(ProfileError::OutOfRange {
                lo: l,
                hi: l,
                layers: self.layer_count(),
            })
    }

    pub(crate) fn flops_between(&self, lo: usize, hi: usize) -> f64 {
        self.span(lo, hi).iter().map(|l| l.flops_fp).sum()
    }

    pub(crate) fn weights_between(&self, lo: usize, hi: usize) -> f64 {
        self.span(lo, hi).iter().map(|l| l.weight_bytes).sum()
    }

    pub(crate) fn act_at(&self, l: usize) -> f64 {
        self.layers[l - 1].act_bytes
    }

    fn span(&self, lo: usize, hi: usize) -> &[LayerProfile] {
        if lo > hi {
            &[]
        } else {
            &self.layers[lo - 1..hi]
        }
    }

    fn check_range(&self, lo: usize, hi: usize) -> Result<(), ProfileError> {
        let layers = self.layer_count();
        let ok = if lo > hi {
            // empty range; allow the one-past-the-end start used for tails
            lo <= layers + 1
        } else {
            lo >= 1 && hi <= layers
        };
        if ok {
            Ok(())
        } else {
            Err(ProfileError::OutOfRange { lo, hi, layers })
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

fn check_value(
    index: usize,
    field: &'static str,
    value: f64,
    allow_zero: bool,
) -> Result<(), ProfileError> {
    let ok = value.is_finite()
        && if allow_zero {
            value >= 0.0
        } else {
            value > 0.0
        };
    if ok {
        Ok(())
    } else {
        Err(ProfileError::InvalidValue {
            index,
            field,
            requirement: if allow_zero {
                "finite and >= 0"
            } else {
                "finite and > 0"
            },
            value,
        })
    }
}

/// Parses and validates a JSON profile document.
pub fn load_profile(source: &str) -> Result<ModelProfile, ProfileError> {
    let doc: ProfileDocument =
        serde_json::from_str(source).map_err(|e| ProfileError::Malformed(e.to_string()))?;
    ModelProfile::try_from(doc)
}

/// Loads a profile from a file path, or a bundled one via `builtin:<name>`.
pub fn load_profile_path(path: &str) -> Result<ModelProfile, ProfileError> {
    if let Some(name) = path.strip_prefix("builtin:") {
        return reference::builtin(name, reference::DEFAULT_BATCH);
    }
    let text = fs::read_to_string(Path::new(path)).map_err(|source| ProfileError::Io {
        path: path.to_string(),
        source,
    })?;
    load_profile(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> String {
        let layers: Vec<String> = (1..=n)
            .map(|i| {
                format!(r#"{{"index":{i},"flops_fp":100,"weight_bytes":1000,"act_bytes":50}}"#)
            })
            .collect();
        format!(
            r#"{{"name":"tiny","batch_size":1,"layers":[{}]}}"#,
            layers.join(",")
        )
    }

    fn tiny() -> ModelProfile {
        load_profile(&doc(4)).unwrap()
    }

    #[test]
    fn loads_four_layers() {
        let m = tiny();
        assert_eq!(m.layer_count(), 4);
        assert_eq!(m.layers()[0].flops_fp, 100.0);
    }

    #[test]
    fn rejects_gap() {
        let text = doc(4).replace(r#""index":3"#, r#""index":5"#);
        assert!(matches!(
            load_profile(&text),
            Err(ProfileError::NonContiguous {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn rejects_missing_layer() {
        let layers: Vec<String> = [1, 2, 4]
            .iter()
            .map(|i| {
                format!(r#"{{"index":{i},"flops_fp":100,"weight_bytes":1000,"act_bytes":50}}"#)
            })
            .collect();
        let text = format!(
            r#"{{"name":"t","batch_size":1,"layers":[{}]}}"#,
            layers.join(",")
        );
        assert!(matches!(
            load_profile(&text),
            Err(ProfileError::NonContiguous { .. })
        ));
    }

    #[test]
    fn rejects_three_layers() {
        assert!(matches!(
            load_profile(&doc(3)),
            Err(ProfileError::TooFewLayers(3))
        ));
    }

    #[test]
    fn rejects_garbage_and_negative() {
        assert!(matches!(
            load_profile("{nope"),
            Err(ProfileError::Malformed(_))
        ));
        let text = doc(4).replacen(r#""weight_bytes":1000"#, r#""weight_bytes":-1"#, 1);
        assert!(matches!(
            load_profile(&text),
            Err(ProfileError::InvalidValue {
                field: "weight_bytes",
                ..
            })
        ));
        let text = doc(4).replacen(r#""flops_fp":100"#, r#""flops_fp":-5"#, 1);
        assert!(matches!(
            load_profile(&text),
            Err(ProfileError::InvalidValue {
                field: "flops_fp",
                ..
            })
        ));
    }

    #[test]
    fn prefix_queries() {
        let m = tiny();
        assert_eq!(m.prefix_flops(1, 2).unwrap(), 200.0);
        assert_eq!(m.prefix_flops(3, 2).unwrap(), 0.0);
        assert_eq!(m.prefix_flops(1, 4).unwrap(), 400.0);
        assert_eq!(m.prefix_bytes(1, 2).unwrap(), 2000.0);
        assert_eq!(m.prefix_bytes(1, 3).unwrap(), 3000.0);
        assert_eq!(m.prefix_bytes(5, 4).unwrap(), 0.0);
        assert!(m.prefix_flops(0, 2).is_err());
        assert!(m.prefix_flops(2, 5).is_err());
        assert!(m.prefix_bytes(7, 4).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = tiny();
        assert_eq!(load_profile(&m.to_json()).unwrap(), m);
    }
}
