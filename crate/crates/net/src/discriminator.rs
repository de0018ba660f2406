//! Two-scale patch critic conditioned on the domain-A rendering.

use crate::ctx::Forward;
use crate::layers::{instance_norm, Conv2dLayer, LEAKY_SLOPE};
use ndarray::ArrayD;
use warpgen_core::config::ModelConfig;
use warpgen_core::{ImageTensor, ParamStore, SeedRng, Tape, Var};

const IN_EPS: f64 = 1e-5;

struct DiscScale {
    convs: Vec<Conv2dLayer>,
    head: Conv2dLayer,
}

impl DiscScale {
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        in_channels: usize,
        base: usize,
        input_size: usize,
        spectral: bool,
    ) -> Self {
        let chans = [in_channels, base, base * 2, base * 4];
        let mut convs = Vec::new();
        let mut size = input_size;
        for i in 0..3 {
            // shrink with k4 while room remains, otherwise keep resolution
            let (k, stride, next) = if i < 2 && size >= 4 {
                (4, 2, size / 2)
            } else if size >= 2 {
                (4, 1, size - 1)
            } else {
                (3, 1, size)
            };
            convs.push(Conv2dLayer::init(
                store,
                rng,
                &format!("{name}.conv{i}"),
                chans[i],
                chans[i + 1],
                k,
                stride,
                1,
                true,
                spectral,
            ));
            size = next;
        }
        let head_k = if size >= 2 { 4 } else { 3 };
        let head = Conv2dLayer::init(
            store, rng, &format!("{name}.head"), chans[3], 1, head_k, 1, 1, true, spectral,
        );
        DiscScale { convs, head }
    }

    fn forward(&self, fx: &Forward, x: Var) -> Var {
        let t = fx.tape;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(fx, h);
            if i > 0 {
                h = instance_norm(t, h, IN_EPS);
            }
            h = t.leaky_relu(h, LEAKY_SLOPE);
        }
        self.head.forward(fx, h)
    }
}

/// Multi-scale patch discriminator over concat(x_A rendering, image); raw
/// logit grids, no sigmoid.
pub struct PatchDiscriminator {
    scales: Vec<DiscScale>,
    pub condition_channels: usize,
}

impl PatchDiscriminator {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        cfg: &ModelConfig,
        condition_channels: usize,
    ) -> Self {
        let in_channels = condition_channels + 3;
        let base = (cfg.feature_channels / 2).clamp(16, 64);
        let scales = (0..2)
            .map(|s| {
                DiscScale::init(
                    store,
                    rng,
                    &format!("disc.scale{s}"),
                    in_channels,
                    base,
                    cfg.image_size >> s,
                    cfg.use_spectral_norm,
                )
            })
            .collect();
        PatchDiscriminator {
            scales,
            condition_channels,
        }
    }

    /// One logit grid per scale; the second scale sees 2x-downsampled input.
    pub fn criticize_g(&self, fx: &Forward, x_a: Var, candidate: Var) -> Vec<Var> {
        let t = fx.tape;
        let sa = t.shape(x_a);
        let sc = t.shape(candidate);
        assert_eq!(sa[0], sc[0], "criticize batch mismatch");
        assert_eq!(
            (sa[2], sa[3]),
            (sc[2], sc[3]),
            "criticize spatial mismatch: {sa:?} vs {sc:?}"
        );
        assert_eq!(sa[1], self.condition_channels, "condition channel count");
        let mut input = t.concat(1, &[x_a, candidate]);
        let mut out = Vec::new();
        for (i, scale) in self.scales.iter().enumerate() {
            if i > 0 {
                input = t.avg_pool2(input);
            }
            out.push(scale.forward(fx, input));
        }
        out
    }

    /// Value-level critique.
    pub fn criticize(
        &self,
        store: &ParamStore,
        x_a: &ImageTensor,
        candidate: &ImageTensor,
    ) -> Vec<ArrayD<f64>> {
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let a = t.leaf(x_a.data().clone().into_dyn(), false);
        let c = t.leaf(candidate.data().clone().into_dyn(), false);
        self.criticize_g(&fx, a, c)
            .into_iter()
            .map(|v| t.array(v))
            .collect()
    }

    /// Parameter name prefixes of each scale (for independence tests).
    pub fn scale_prefix(index: usize) -> String {
        format!("disc.scale{index}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use warpgen_core::config::preset;

    fn image(seed: u64, b: usize, c: usize, s: usize) -> ImageTensor {
        let mut rng = SeedRng::new(seed);
        let data: Vec<f64> = (0..b * c * s * s).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        ImageTensor::new(Array4::from_shape_vec((b, c, s, s), data).unwrap()).unwrap()
    }

    #[test]
    fn two_scales_with_expected_grids() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(1);
        let disc = PatchDiscriminator::init(&mut store, &mut rng, &cfg, 4);
        let xa = image(2, 1, 4, cfg.image_size);
        let cand = image(3, 1, 3, cfg.image_size);
        let grids = disc.criticize(&store, &xa, &cand);
        assert_eq!(grids.len(), 2);
        // 32 -> conv s2 16 -> conv s2 8 -> conv s1 k4p1 7 -> head k4p1 6
        assert_eq!(grids[0].shape(), &[1, 1, 6, 6]);
        // second scale starts at 16
        assert_eq!(grids[1].shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn deterministic_logits() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(4);
        let disc = PatchDiscriminator::init(&mut store, &mut rng, &cfg, 3);
        let xa = image(5, 2, 3, cfg.image_size);
        let cand = image(6, 2, 3, cfg.image_size);
        let a = disc.criticize(&store, &xa, &cand);
        let b = disc.criticize(&store, &xa, &cand);
        for (ga, gb) in a.iter().zip(&b) {
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn candidate_gradient_is_nonzero() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(7);
        let disc = PatchDiscriminator::init(&mut store, &mut rng, &cfg, 3);
        let t = Tape::new();
        let fx = Forward::eval(&t, &store);
        let xa = t.leaf(image(8, 1, 3, cfg.image_size).data().clone().into_dyn(), false);
        let cand = t.leaf(image(9, 1, 3, cfg.image_size).data().clone().into_dyn(), true);
        let grids = disc.criticize_g(&fx, xa, cand);
        let mean = t.mean_all(t.concat(
            1,
            &grids.iter().map(|&g| t.reshape(g, &[1, t.value(g).len()])).collect::<Vec<_>>(),
        ));
        let grads = t.backward(mean);
        let g = grads.get(cand).expect("candidate gradient");
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "gradient norm {norm}");
    }

    #[test]
    fn scales_are_independent() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(10);
        let disc = PatchDiscriminator::init(&mut store, &mut rng, &cfg, 3);
        let xa = image(11, 1, 3, cfg.image_size);
        let cand = image(12, 1, 3, cfg.image_size);
        let before = disc.criticize(&store, &xa, &cand);

        // zero scale 1 parameters; scale 0 logits must not move
        let prefix = PatchDiscriminator::scale_prefix(1);
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, e)| e.name.starts_with(&prefix) && e.trainable)
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let zeros = ArrayD::zeros(store.value(id).raw_dim());
            store.set(id, zeros);
        }
        let after = disc.criticize(&store, &xa, &cand);
        assert_eq!(before[0], after[0]);
        assert_ne!(before[1], after[1]);
    }
}
