//! Bundled reference profiles derived from layer shape arithmetic.
//!
//! FLOPs count multiply and add separately (2 per MAC) and ignore pooling,
//! activation functions and normalisation arithmetic. Parameters are f32.
//! A "layer" is one conv or fully connected stage together with any pooling
//! that follows it; for ResNet-101 a layer is the stem convolution or one
//! bottleneck block.

use super::{LayerProfile, ModelProfile, ProfileError};

pub const DEFAULT_BATCH: u32 = 32;

const BYTES_PER_PARAM: f64 = 4.0;
const BYTES_PER_ACT: f64 = 4.0;

pub const BUILTIN_NAMES: [&str; 4] = ["alexnet", "vgg11", "vgg19", "resnet101"];

/// Looks up a bundled profile by name (case-insensitive, `-`/`_` ignored).
pub fn builtin(name: &str, batch_size: u32) -> Result<ModelProfile, ProfileError> {
    let key: String = name
        .chars()
        .filter(|c| *c != '-' && *c != '_')
        .collect::<String>()
        .to_ascii_lowercase();
    match key.as_str() {
        "alexnet" => alexnet(batch_size),
        "vgg11" => vgg11(batch_size),
        "vgg19" => vgg19(batch_size),
        "resnet101" => resnet101(batch_size),
        _ => Err(ProfileError::UnknownBuiltin(name.to_string())),
    }
}

#[derive(Debug, Default)]
struct Stage {
    flops: f64,
    params: f64,
    out_elems: f64,
}

/// Tracks the running tensor shape while stacking stages.
struct ShapeTracker {
    channels: usize,
    hw: usize,
    stages: Vec<Stage>,
}

impl ShapeTracker {
    fn new(channels: usize, hw: usize) -> Self {
        ShapeTracker {
            channels,
            hw,
            stages: Vec::new(),
        }
    }

    fn conv(
        &mut self,
        cout: usize,
        k: usize,
        pad: usize,
        batch_norm: bool,
        pool: bool,
    ) -> &mut Self {
        let cin = self.channels;
        let out_hw = self.hw + 2 * pad - k + 1;
        let macs = (cin * k * k * cout * out_hw * out_hw) as f64;
        let mut params = (cin * k * k * cout + cout) as f64;
        if batch_norm {
            params += (2 * cout) as f64;
        }
        self.channels = cout;
        self.hw = if pool { out_hw / 2 } else { out_hw };
        self.stages.push(Stage {
            flops: 2.0 * macs,
            params,
            out_elems: (cout * self.hw * self.hw) as f64,
        });
        self
    }

    fn linear(&mut self, out: usize) -> &mut Self {
        let input = self.channels * self.hw * self.hw;
        self.channels = out;
        self.hw = 1;
        self.stages.push(Stage {
            flops: 2.0 * (input * out) as f64,
            params: (input * out + out) as f64,
            out_elems: out as f64,
        });
        self
    }

    fn bottleneck(&mut self, mid: usize, out: usize, stride: usize) -> &mut Self {
        let cin = self.channels;
        let hw = self.hw;
        let out_hw = hw / stride;
        let area_in = (hw * hw) as f64;
        let area_out = (out_hw * out_hw) as f64;
        let mut macs = (cin * mid) as f64 * area_in
            + (mid * mid * 9) as f64 * area_out
            + (mid * out) as f64 * area_out;
        let mut params =
            (cin * mid + mid * mid * 9 + mid * out) as f64 + (2 * (2 * mid + out)) as f64;
        if cin != out || stride != 1 {
            macs += (cin * out) as f64 * area_out;
            params += (cin * out + 2 * out) as f64;
        }
        self.channels = out;
        self.hw = out_hw;
        self.stages.push(Stage {
            flops: 2.0 * macs,
            params,
            out_elems: (out * out_hw * out_hw) as f64,
        });
        self
    }

    /// Global average pool followed by a classifier, folded into the last stage.
    fn pool_and_classify(&mut self, classes: usize) -> &mut Self {
        let input = self.channels;
        let last = self.stages.last_mut().expect("a stage to fold into");
        last.flops += 2.0 * (input * classes) as f64;
        last.params += (input * classes + classes) as f64;
        last.out_elems = classes as f64;
        self.channels = classes;
        self.hw = 1;
        self
    }

    fn finish(&self, name: &str, batch_size: u32) -> Result<ModelProfile, ProfileError> {
        let b = batch_size as f64;
        let layers = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| LayerProfile {
                index: i + 1,
                flops_fp: s.flops * b,
                weight_bytes: s.params * BYTES_PER_PARAM,
                act_bytes: s.out_elems * BYTES_PER_ACT * b,
            })
            .collect();
        ModelProfile::new(name, batch_size, layers)
    }

    fn total_params(&self) -> f64 {
        self.stages.iter().map(|s| s.params).sum()
    }
}

fn alexnet_shape() -> ShapeTracker {
    // five convs and three FC layers on 1x28x28 inputs
    let mut t = ShapeTracker::new(1, 28);
    t.conv(64, 5, 2, false, true)
        .conv(192, 5, 2, false, true)
        .conv(384, 3, 1, false, false)
        .conv(256, 3, 1, false, false)
        .conv(256, 3, 1, false, true)
        .linear(512)
        .linear(512)
        .linear(10);
    t
}

fn vgg_shape(config: &[Option<usize>]) -> ShapeTracker {
    // `Some(c)` is a 3x3 conv to c channels, `None` a 2x2 max pool after the previous conv
    let mut t = ShapeTracker::new(3, 32);
    for (i, entry) in config.iter().enumerate() {
        if let Some(cout) = entry {
            let pool = matches!(config.get(i + 1), Some(None));
            t.conv(*cout, 3, 1, true, pool);
        }
    }
    t.linear(512).linear(512).linear(10);
    t
}

const M: Option<usize> = None;

fn vgg11_shape() -> ShapeTracker {
    vgg_shape(&[
        Some(64),
        M,
        Some(128),
        M,
        Some(256),
        Some(256),
        M,
        Some(512),
        Some(512),
        M,
        Some(512),
        Some(512),
        M,
    ])
}

fn vgg19_shape() -> ShapeTracker {
    vgg_shape(&[
        Some(64),
        Some(64),
        M,
        Some(128),
        Some(128),
        M,
        Some(256),
        Some(256),
        Some(256),
        Some(256),
        M,
        Some(512),
        Some(512),
        Some(512),
        Some(512),
        M,
        Some(512),
        Some(512),
        Some(512),
        Some(512),
        M,
    ])
}

fn resnet101_shape() -> ShapeTracker {
    let mut t = ShapeTracker::new(3, 32);
    t.conv(64, 3, 1, true, false);
    for (blocks, mid, stride) in [(3, 64, 1), (4, 128, 2), (23, 256, 2), (3, 512, 2)] {
        for b in 0..blocks {
            t.bottleneck(mid, mid * 4, if b == 0 { stride } else { 1 });
        }
    }
    t.pool_and_classify(10);
    t
}

/// AlexNet-style 8-layer network for 28x28 grayscale inputs.
pub fn alexnet(batch_size: u32) -> Result<ModelProfile, ProfileError> {
    alexnet_shape().finish("alexnet", batch_size)
}

/// VGG-11 with batch norm and a 3-layer classifier for 32x32 inputs.
pub fn vgg11(batch_size: u32) -> Result<ModelProfile, ProfileError> {
    vgg11_shape().finish("vgg11", batch_size)
}

/// VGG-19 with batch norm and a 3-layer classifier for 32x32 inputs.
pub fn vgg19(batch_size: u32) -> Result<ModelProfile, ProfileError> {
    vgg19_shape().finish("vgg19", batch_size)
}

/// ResNet-101 as 34 units: the stem conv and 33 bottleneck blocks.
pub fn resnet101(batch_size: u32) -> Result<ModelProfile, ProfileError> {
    resnet101_shape().finish("resnet101", batch_size)
}

/// Trainable parameter count of a bundled architecture.
pub fn parameter_count(name: &str) -> Option<f64> {
    let shape = match name {
        "alexnet" => alexnet_shape(),
        "vgg11" => vgg11_shape(),
        "vgg19" => vgg19_shape(),
        "resnet101" => resnet101_shape(),
        _ => return None,
    };
    Some(shape.total_params())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts() {
        assert_eq!(alexnet(32).unwrap().layer_count(), 8);
        assert_eq!(vgg11(32).unwrap().layer_count(), 11);
        assert_eq!(vgg19(32).unwrap().layer_count(), 19);
        assert_eq!(resnet101(32).unwrap().layer_count(), 34);
    }

    #[test]
    fn parameter_counts_are_in_the_right_ballpark() {
        // reference parameter counts: 3.87M, 9.23M, 20.0M, 44.5M
        let within = |name: &str, expected: f64| {
            let p = parameter_count(name).unwrap();
            assert!((p / expected - 1.0).abs() < 0.2, "{name}: {p}");
        };
        within("alexnet", 3.87e6);
        within("vgg11", 9.23e6);
        within("vgg19", 20.0e6);
        within("resnet101", 44.5e6);
    }

    #[test]
    fn scales_with_batch() {
        let a = vgg11(1).unwrap();
        let b = vgg11(32).unwrap();
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x.flops_fp * 32.0, y.flops_fp);
            assert_eq!(x.act_bytes * 32.0, y.act_bytes);
            assert_eq!(x.weight_bytes, y.weight_bytes);
        }
    }

    #[test]
    fn builtin_names_resolve() {
        for name in BUILTIN_NAMES {
            assert!(builtin(name, 32).is_ok());
        }
        assert!(builtin("VGG-11", 32).is_ok());
        assert!(matches!(
            builtin("lenet", 32),
            Err(ProfileError::UnknownBuiltin(_))
        ));
    }
}
