//! Frozen perceptual feature backbone.
//!
//! Five conv stages expose activations named `relu1_2` .. `relu5_2` at full,
//! 1/2, 1/4, 1/8, and 1/16 resolution. The deterministic-small mode is a
//! seeded random pyramid so tests never download weights; its statistics are
//! a stand-in for a large pretrained network, not a replica of one. The
//! pretrained-large mode loads convolution tensors from an integrity-checked
//! archive on disk.

use crate::checkpoint::{read_archive, write_archive};
use crate::ctx::Forward;
use crate::error::NetError;
use ndarray::{ArrayD, IxDyn};
use std::path::Path;
use warpgen_core::config::FeatLayer;
use warpgen_core::{FeatureMap, ImageTensor, ParamId, ParamStore, SeedRng, Tape, Var};

/// Default seed for the deterministic-small backbone.
pub const SMALL_BACKBONE_SEED: u64 = 0x00f0_0dfa_ce17;

/// Channel widths of the five stages in deterministic-small mode.
pub const SMALL_STAGE_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];

/// Input renormalization constants for pretrained-large mode (images are
/// mapped from [-1, 1] to [0, 1] first). These are the ImageNet statistics.
pub const PRETRAINED_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const PRETRAINED_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Constants for deterministic-small mode chosen so renormalization is the
/// identity on [-1, 1] inputs.
pub const SMALL_MEAN: [f64; 3] = [0.5, 0.5, 0.5];
pub const SMALL_STD: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneMode {
    DeterministicSmall { seed: u64 },
    PretrainedLarge { path: String },
}

struct StageConv {
    weight: ParamId,
    bias: ParamId,
}

struct Stage {
    conv1: StageConv,
    conv2: StageConv,
}

pub struct Backbone {
    pub mode: BackboneMode,
    stages: Vec<Stage>,
    mean: [f64; 3],
    std: [f64; 3],
}

fn he_conv(rng: &mut SeedRng, cout: usize, cin: usize, k: usize) -> ArrayD<f64> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let n = cout * cin * k * k;
    let data: Vec<f64> = (0..n).map(|_| rng.normal_scaled(0.0, std)).collect();
    ArrayD::from_shape_vec(IxDyn(&[cout, cin, k, k]), data).unwrap()
}

impl Backbone {
    /// Seeded random frozen pyramid; all parameters are non-trainable.
    pub fn deterministic_small(store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = SeedRng::new(seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &cout) in SMALL_STAGE_CHANNELS.iter().enumerate() {
            let w1 = store.insert(
                &format!("bb.stage{i}.conv1.weight"),
                he_conv(&mut rng, cout, cin, 3),
                false,
            );
            let b1 = store.insert(
                &format!("bb.stage{i}.conv1.bias"),
                ArrayD::zeros(IxDyn(&[cout])),
                false,
            );
            let w2 = store.insert(
                &format!("bb.stage{i}.conv2.weight"),
                he_conv(&mut rng, cout, cout, 3),
                false,
            );
            let b2 = store.insert(
                &format!("bb.stage{i}.conv2.bias"),
                ArrayD::zeros(IxDyn(&[cout])),
                false,
            );
            stages.push(Stage {
                conv1: StageConv { weight: w1, bias: b1 },
                conv2: StageConv { weight: w2, bias: b2 },
            });
            cin = cout;
        }
        Backbone {
            mode: BackboneMode::DeterministicSmall { seed },
            stages,
            mean: SMALL_MEAN,
            std: SMALL_STD,
        }
    }

    /// Load stage convolutions from an archive written by
    /// [`write_backbone_weights`]; the archive CRC guards integrity.
    pub fn pretrained_large(store: &mut ParamStore, path: &Path) -> Result<Self, NetError> {
        let (meta, entries) = read_archive(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("backbone") {
            return Err(NetError::Checkpoint(format!(
                "{} is not a backbone weight archive",
                path.display()
            )));
        }
        let mut by_name: std::collections::HashMap<String, ArrayD<f64>> =
            entries.into_iter().collect();
        let mut stages = Vec::new();
        let mut expect_cin = 3usize;
        for i in 0..5 {
            let mut take = |suffix: &str| -> Result<ArrayD<f64>, NetError> {
                let key = format!("bb.stage{i}.{suffix}");
                by_name
                    .remove(&key)
                    .ok_or_else(|| NetError::Checkpoint(format!("missing tensor `{key}`")))
            };
            let w1 = take("conv1.weight")?;
            let b1 = take("conv1.bias")?;
            let w2 = take("conv2.weight")?;
            let b2 = take("conv2.bias")?;
            if w1.ndim() != 4 || w1.shape()[1] != expect_cin {
                return Err(NetError::Checkpoint(format!(
                    "stage {i} conv1 expects {expect_cin} input channels, archive has {:?}",
                    w1.shape()
                )));
            }
            let cout = w1.shape()[0];
            expect_cin = w2.shape()[0];
            if w2.shape()[1] != cout {
                return Err(NetError::Checkpoint(format!(
                    "stage {i} conv2 input channels {:?} do not match conv1 output {cout}",
                    w2.shape()
                )));
            }
            let mk = |store: &mut ParamStore, name: String, v: ArrayD<f64>| {
                store.insert(&name, v, false)
            };
            stages.push(Stage {
                conv1: StageConv {
                    weight: mk(store, format!("bb.stage{i}.conv1.weight"), w1),
                    bias: mk(store, format!("bb.stage{i}.conv1.bias"), b1),
                },
                conv2: StageConv {
                    weight: mk(store, format!("bb.stage{i}.conv2.weight"), w2),
                    bias: mk(store, format!("bb.stage{i}.conv2.bias"), b2),
                },
            });
        }
        Ok(Backbone {
            mode: BackboneMode::PretrainedLarge {
                path: path.display().to_string(),
            },
            stages,
            mean: PRETRAINED_MEAN,
            std: PRETRAINED_STD,
        })
    }

    /// Feature maps for the requested layers. Input images are in [-1, 1];
    /// renormalization to the backbone statistics happens here.
    pub fn extract_g(&self, fx: &Forward, img: Var, layers: &[FeatLayer]) -> Vec<(FeatLayer, Var)> {
        let t = fx.tape;
        let deepest = layers
            .iter()
            .map(|l| l.stage())
            .max()
            .expect("extract_g with no layers");
        // [-1,1] -> [0,1] -> (x - mean)/std, per channel
        let unit = t.add_scalar(t.scale(img, 0.5), 0.5);
        let mean = t.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 3, 1, 1]), self.mean.to_vec()).unwrap(),
        );
        let std = t.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 3, 1, 1]), self.std.to_vec()).unwrap(),
        );
        let mut x = t.div(t.sub(unit, mean), std);
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate().take(deepest + 1) {
            if i > 0 {
                x = t.avg_pool2(x);
            }
            let w1 = fx.param(stage.conv1.weight);
            let b1 = fx.param(stage.conv1.bias);
            x = t.relu(t.conv2d(x, w1, Some(b1), 1, 1));
            let w2 = fx.param(stage.conv2.weight);
            let b2 = fx.param(stage.conv2.bias);
            x = t.relu(t.conv2d(x, w2, Some(b2), 1, 1));
            for &layer in layers {
                if layer.stage() == i {
                    out.push((layer, x));
                }
            }
        }
        out
    }

    /// Value-level extraction for one image batch.
    pub fn extract(
        &self,
        store: &ParamStore,
        img: &ImageTensor,
        layers: &[FeatLayer],
    ) -> Vec<(FeatLayer, FeatureMap)> {
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let x = t.leaf(img.data().clone().into_dyn(), false);
        self.extract_g(&fx, x, layers)
            .into_iter()
            .map(|(l, v)| {
                let arr = t.array(v).into_dimensionality().unwrap();
                (l, FeatureMap::new(arr).expect("finite features"))
            })
            .collect()
    }
}

/// Write a backbone weight archive (used to prepare pretrained-large files).
pub fn write_backbone_weights(
    path: &Path,
    entries: &[(String, ArrayD<f64>)],
) -> Result<(), NetError> {
    let meta = serde_json::json!({ "kind": "backbone", "version": 1 });
    write_archive(path, &meta, entries)
}
