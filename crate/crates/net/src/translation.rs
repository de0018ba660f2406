//! Translation network: a learned constant code modulated block by block
//! with spatially-variant style drawn from the warped exemplar.

use crate::correspondence::WarpedExemplar;
use crate::ctx::Forward;
use crate::layers::{positional_norm, Conv2dLayer, LEAKY_SLOPE};
use ndarray::{Array4, ArrayD, IxDyn};
use warpgen_core::config::ModelConfig;
use warpgen_core::{CoreError, FeatureMap, ImageTensor, ParamId, ParamStore, SeedRng, Tape, Var};

/// Per-layer spatial modulation tensors predicted from the warped exemplar.
pub struct StyleParams {
    pub alpha: FeatureMap,
    pub beta: FeatureMap,
}

/// One style encoder: bilinear resize of the warped exemplar to the block
/// resolution, then two convolutions producing alpha and beta. The alpha
/// branch is offset by one so modulation starts near identity.
pub struct StyleEncoder {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    pub size: usize,
    pub channels: usize,
}

impl StyleEncoder {
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        size: usize,
        channels: usize,
        spectral: bool,
    ) -> Self {
        let conv1 = Conv2dLayer::init(store, rng, &format!("{name}.conv1"), 3, 128, 3, 1, 1, true, spectral);
        let conv2 = Conv2dLayer::init(
            store, rng, &format!("{name}.conv2"), 128, 2 * channels, 3, 1, 1, true, spectral,
        );
        StyleEncoder {
            conv1,
            conv2,
            size,
            channels,
        }
    }

    pub fn encode_g(&self, fx: &Forward, r: Var) -> (Var, Var) {
        let t = fx.tape;
        let resized = t.resize_bilinear(r, self.size, self.size);
        let h = t.leaky_relu(self.conv1.forward(fx, resized), LEAKY_SLOPE);
        let ab = self.conv2.forward(fx, h);
        let alpha_raw = t.slice_axis_op(ab, 1, 0, self.channels);
        let beta = t.slice_axis_op(ab, 1, self.channels, self.channels);
        (t.add_scalar(alpha_raw, 1.0), beta)
    }
}

/// Seven independent style encoders, one per generator block.
pub struct StyleEncoderBank {
    pub encoders: Vec<StyleEncoder>,
}

impl StyleEncoderBank {
    pub fn init(store: &mut ParamStore, rng: &mut SeedRng, cfg: &ModelConfig) -> Self {
        let encoders = cfg
            .generator_layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                StyleEncoder::init(
                    store,
                    rng,
                    &format!("style.enc{i}"),
                    spec.size,
                    spec.channels,
                    cfg.use_spectral_norm,
                )
            })
            .collect();
        StyleEncoderBank { encoders }
    }

    /// Value-level encode for one layer.
    pub fn encode_style(
        &self,
        store: &ParamStore,
        r: &WarpedExemplar,
        layer: usize,
    ) -> Result<StyleParams, CoreError> {
        assert!(layer < self.encoders.len(), "layer {layer} out of range");
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let rv = t.leaf(r.0.data().clone().into_dyn(), false);
        let (a, b) = self.encoders[layer].encode_g(&fx, rv);
        Ok(StyleParams {
            alpha: FeatureMap::new(t.array(a).into_dimensionality().unwrap())?,
            beta: FeatureMap::new(t.array(b).into_dimensionality().unwrap())?,
        })
    }
}

/// alpha * PN(F) + beta, the positionally-normalized spatially-adaptive
/// modulation.
pub fn spade_pn_modulate_g(t: &Tape, f: Var, alpha: Var, beta: Var, eps: f64) -> Var {
    assert_eq!(
        t.shape(f),
        t.shape(alpha),
        "style alpha must match the modulated activation"
    );
    assert_eq!(t.shape(alpha), t.shape(beta), "alpha/beta shape mismatch");
    let (pn, _, _) = positional_norm(t, f, eps);
    t.add(t.mul(alpha, pn), beta)
}

/// Value-level positional normalization returning the statistics used.
pub fn positional_normalize(
    f: &FeatureMap,
    eps: f64,
) -> (FeatureMap, ArrayD<f64>, ArrayD<f64>) {
    let t = Tape::new();
    let v = t.leaf(f.data().clone().into_dyn(), false);
    let (out, mu, sigma) = positional_norm(&t, v, eps);
    (
        FeatureMap::new(t.array(out).into_dimensionality().unwrap()).expect("finite"),
        t.array(mu),
        t.array(sigma),
    )
}

/// Value-level modulation.
pub fn spade_pn_modulate(f: &FeatureMap, style: &StyleParams, eps: f64) -> FeatureMap {
    let t = Tape::new();
    let fv = t.leaf(f.data().clone().into_dyn(), false);
    let av = t.leaf(style.alpha.data().clone().into_dyn(), false);
    let bv = t.leaf(style.beta.data().clone().into_dyn(), false);
    let out = spade_pn_modulate_g(&t, fv, av, bv, eps);
    FeatureMap::new(t.array(out).into_dimensionality().unwrap()).expect("finite")
}

/// Modulated residual block: optional 2x nearest upsample, channel-aligning
/// convolution, one SPADE-PN modulation between the two convolutions, and a
/// projected skip path.
struct ModulatedBlock {
    conv_in: Conv2dLayer,
    conv_out: Conv2dLayer,
    skip: Option<Conv2dLayer>,
    upsample: bool,
}

impl ModulatedBlock {
    #[allow(clippy::too_many_arguments)]
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        cin: usize,
        cout: usize,
        upsample: bool,
        spectral: bool,
    ) -> Self {
        let conv_in = Conv2dLayer::init(store, rng, &format!("{name}.conv_in"), cin, cout, 3, 1, 1, true, spectral);
        let conv_out = Conv2dLayer::init(store, rng, &format!("{name}.conv_out"), cout, cout, 3, 1, 1, true, spectral);
        let skip = (cin != cout).then(|| {
            Conv2dLayer::init(store, rng, &format!("{name}.skip"), cin, cout, 1, 1, 0, false, spectral)
        });
        ModulatedBlock {
            conv_in,
            conv_out,
            skip,
            upsample,
        }
    }

    fn forward(&self, fx: &Forward, x: Var, alpha: Var, beta: Var, eps: f64) -> Var {
        let t = fx.tape;
        let x = if self.upsample { t.upsample_nearest2(x) } else { x };
        let s = match &self.skip {
            Some(proj) => proj.forward(fx, x),
            None => x,
        };
        let h = self.conv_in.forward(fx, t.leaky_relu(x, LEAKY_SLOPE));
        let h = spade_pn_modulate_g(t, h, alpha, beta, eps);
        let h = self.conv_out.forward(fx, t.leaky_relu(h, LEAKY_SLOPE));
        t.add(s, h)
    }
}

/// Self-attention over all spatial positions, gated by a learned scalar that
/// starts at zero.
struct NonlocalBlock {
    theta: Conv2dLayer,
    phi: Conv2dLayer,
    g: Conv2dLayer,
    out: Conv2dLayer,
    gamma: ParamId,
    inner: usize,
    value_ch: usize,
}

impl NonlocalBlock {
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        channels: usize,
        spectral: bool,
    ) -> Self {
        let inner = (channels / 8).max(1);
        let value_ch = (channels / 2).max(1);
        let theta = Conv2dLayer::init(store, rng, &format!("{name}.theta"), channels, inner, 1, 1, 0, false, spectral);
        let phi = Conv2dLayer::init(store, rng, &format!("{name}.phi"), channels, inner, 1, 1, 0, false, spectral);
        let g = Conv2dLayer::init(store, rng, &format!("{name}.g"), channels, value_ch, 1, 1, 0, false, spectral);
        let out = Conv2dLayer::init(store, rng, &format!("{name}.out"), value_ch, channels, 1, 1, 0, false, spectral);
        let gamma = store.insert(&format!("{name}.gamma"), ArrayD::zeros(IxDyn(&[1])), true);
        NonlocalBlock {
            theta,
            phi,
            g,
            out,
            gamma,
            inner,
            value_ch,
        }
    }

    fn forward(&self, fx: &Forward, x: Var) -> Var {
        let t = fx.tape;
        let shape = t.shape(x);
        let (b, _c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = h * w;
        let th = t.permute(t.reshape(self.theta.forward(fx, x), &[b, self.inner, hw]), &[0, 2, 1]);
        let ph = t.reshape(self.phi.forward(fx, x), &[b, self.inner, hw]);
        let attn = t.softmax_last(t.bmm(th, ph)); // [B, HW, HW]
        let gv = t.permute(t.reshape(self.g.forward(fx, x), &[b, self.value_ch, hw]), &[0, 2, 1]);
        let o = t.bmm(attn, gv); // [B, HW, value_ch]
        let o = t.reshape(t.permute(o, &[0, 2, 1]), &[b, self.value_ch, h, w]);
        let o = self.out.forward(fx, o);
        t.add(x, t.mul(o, fx.param(self.gamma)))
    }
}

/// Generator state: the learned constant code, seven modulated blocks, one
/// nonlocal block after the fifth, and a tanh output head.
pub struct Generator {
    z: ParamId,
    initial: Conv2dLayer,
    blocks: Vec<ModulatedBlock>,
    nonlocal: Option<NonlocalBlock>,
    head: Conv2dLayer,
    pn_eps: f64,
    pub image_size: usize,
}

/// Index of the block after which the nonlocal attention runs.
pub const NONLOCAL_AFTER_BLOCK: usize = 4;

impl Generator {
    pub fn init(store: &mut ParamStore, rng: &mut SeedRng, cfg: &ModelConfig) -> Self {
        let specs = &cfg.generator_layers;
        let c0 = specs[0].channels;
        let z_data: Vec<f64> = (0..c0 * 64).map(|_| rng.normal()).collect();
        let z = store.insert(
            "gen.z",
            ArrayD::from_shape_vec(IxDyn(&[1, c0, 8, 8]), z_data).unwrap(),
            true,
        );
        let initial = Conv2dLayer::init(store, rng, "gen.initial", c0, c0, 3, 1, 1, true, cfg.use_spectral_norm);
        let mut blocks = Vec::new();
        let mut size = 8usize;
        let mut cin = c0;
        for (i, spec) in specs.iter().enumerate() {
            let upsample = spec.size == 2 * size;
            assert!(upsample || spec.size == size, "validated by ModelConfig");
            blocks.push(ModulatedBlock::init(
                store,
                rng,
                &format!("gen.block{i}"),
                cin,
                spec.channels,
                upsample,
                cfg.use_spectral_norm,
            ));
            size = spec.size;
            cin = spec.channels;
        }
        let nonlocal = cfg.use_nonlocal.then(|| {
            NonlocalBlock::init(
                store,
                rng,
                "gen.nonlocal",
                specs[NONLOCAL_AFTER_BLOCK].channels,
                cfg.use_spectral_norm,
            )
        });
        let head = Conv2dLayer::init(store, rng, "gen.head", cin, 3, 3, 1, 1, true, cfg.use_spectral_norm);
        Generator {
            z,
            initial,
            blocks,
            nonlocal,
            head,
            pn_eps: cfg.pn_epsilon,
            image_size: cfg.image_size,
        }
    }

    /// Synthesize from per-block style pairs.
    pub fn generate_with_styles_g(&self, fx: &Forward, styles: &[(Var, Var)], batch: usize) -> Var {
        let t = fx.tape;
        assert_eq!(styles.len(), self.blocks.len(), "one style pair per block");
        let z = fx.param(self.z);
        let mut x = if batch == 1 {
            z
        } else {
            t.broadcast_batch(z, batch)
        };
        x = self.initial.forward(fx, x);
        for (i, block) in self.blocks.iter().enumerate() {
            let (alpha, beta) = styles[i];
            x = block.forward(fx, x, alpha, beta, self.pn_eps);
            if i == NONLOCAL_AFTER_BLOCK {
                if let Some(nl) = &self.nonlocal {
                    x = nl.forward(fx, x);
                }
            }
        }
        t.tanh(self.head.forward(fx, t.leaky_relu(x, LEAKY_SLOPE)))
    }

    /// Full path from the warped exemplar: encode styles then synthesize.
    pub fn generate_g(&self, fx: &Forward, bank: &StyleEncoderBank, r: Var) -> Var {
        let batch = fx.tape.shape(r)[0];
        let styles: Vec<(Var, Var)> = bank
            .encoders
            .iter()
            .map(|enc| enc.encode_g(fx, r))
            .collect();
        self.generate_with_styles_g(fx, &styles, batch)
    }

    /// Value-level synthesis for inference.
    pub fn generate(
        &self,
        store: &ParamStore,
        bank: &StyleEncoderBank,
        r: &WarpedExemplar,
    ) -> Result<ImageTensor, CoreError> {
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let rv = t.leaf(r.0.data().clone().into_dyn(), false);
        let out = self.generate_g(&fx, bank, rv);
        let arr: Array4<f64> = t.array(out).into_dimensionality().unwrap();
        ImageTensor::photo(arr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use warpgen_core::config::preset;

    fn warped(seed: u64, batch: usize, grid: usize) -> WarpedExemplar {
        let mut rng = SeedRng::new(seed);
        let data: Vec<f64> = (0..batch * 3 * grid * grid)
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        WarpedExemplar(
            ImageTensor::new(Array4::from_shape_vec((batch, 3, grid, grid), data).unwrap())
                .unwrap(),
        )
    }

    #[test]
    fn pn_random_statistics() {
        let mut rng = SeedRng::new(1);
        let data: Vec<f64> = (0..2 * 6 * 4 * 4).map(|_| rng.normal_scaled(1.0, 2.5)).collect();
        let f = FeatureMap::new(Array4::from_shape_vec((2, 6, 4, 4), data).unwrap()).unwrap();
        let (out, _, _) = positional_normalize(&f, 1e-5);
        for b in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let vals: Vec<f64> = (0..6).map(|c| out.data()[[b, c, i, j]]).collect();
                    let mean = vals.iter().sum::<f64>() / 6.0;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
                    assert!(mean.abs() < 1e-5, "mean {mean}");
                    assert!((var - 1.0).abs() < 1e-3, "var {var}");
                }
            }
        }
    }

    #[test]
    fn pn_constant_position_is_zeroed() {
        let f = FeatureMap::new(Array4::from_elem((1, 4, 2, 2), 7.5)).unwrap();
        let (out, mu, _) = positional_normalize(&f, 1e-5);
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));
        assert!((mu[[0, 0, 0, 0]] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn modulation_identity_is_pn_bit_for_bit() {
        let mut rng = SeedRng::new(2);
        let data: Vec<f64> = (0..5 * 4 * 4).map(|_| rng.normal()).collect();
        let f = FeatureMap::new(Array4::from_shape_vec((1, 5, 4, 4), data).unwrap()).unwrap();
        let style = StyleParams {
            alpha: FeatureMap::new(Array4::ones((1, 5, 4, 4))).unwrap(),
            beta: FeatureMap::new(Array4::zeros((1, 5, 4, 4))).unwrap(),
        };
        let modulated = spade_pn_modulate(&f, &style, 1e-5);
        let (pn, _, _) = positional_normalize(&f, 1e-5);
        for (a, b) in modulated.data().iter().zip(pn.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn modulation_alpha_zero_returns_beta() {
        let mut rng = SeedRng::new(3);
        let data: Vec<f64> = (0..3 * 2 * 2).map(|_| rng.normal()).collect();
        let f = FeatureMap::new(Array4::from_shape_vec((1, 3, 2, 2), data).unwrap()).unwrap();
        let beta_data: Vec<f64> = (0..3 * 2 * 2).map(|_| rng.normal()).collect();
        let beta = Array4::from_shape_vec((1, 3, 2, 2), beta_data).unwrap();
        let style = StyleParams {
            alpha: FeatureMap::new(Array4::zeros((1, 3, 2, 2))).unwrap(),
            beta: FeatureMap::new(beta.clone()).unwrap(),
        };
        let modulated = spade_pn_modulate(&f, &style, 1e-5);
        for (a, b) in modulated.data().iter().zip(beta.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn modulation_hand_case() {
        // position (1,3), alpha=2, beta=5 -> PN gives (-1,1), then (3,7)
        let f = FeatureMap::new(
            Array4::from_shape_vec((1, 2, 1, 1), vec![1.0, 3.0]).unwrap(),
        )
        .unwrap();
        let style = StyleParams {
            alpha: FeatureMap::new(Array4::from_elem((1, 2, 1, 1), 2.0)).unwrap(),
            beta: FeatureMap::new(Array4::from_elem((1, 2, 1, 1), 5.0)).unwrap(),
        };
        let out = spade_pn_modulate(&f, &style, 1e-12);
        assert!((out.data()[[0, 0, 0, 0]] - 3.0).abs() < 1e-5);
        assert!((out.data()[[0, 1, 0, 0]] - 7.0).abs() < 1e-5);
    }

    #[test]
    fn style_encoder_shapes_follow_blocks() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(4);
        let bank = StyleEncoderBank::init(&mut store, &mut rng, &cfg);
        let r = warped(5, 1, cfg.corr_size);
        for (i, spec) in cfg.generator_layers.iter().enumerate() {
            let style = bank.encode_style(&store, &r, i).unwrap();
            assert_eq!(style.alpha.height(), spec.size);
            assert_eq!(style.alpha.channels(), spec.channels);
            assert_eq!(style.beta.height(), spec.size);
        }
    }

    #[test]
    fn style_encoder_deterministic_and_brightness_sensitive() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(6);
        let bank = StyleEncoderBank::init(&mut store, &mut rng, &cfg);
        let r = warped(7, 1, cfg.corr_size);
        let s1 = bank.encode_style(&store, &r, 0).unwrap();
        let s2 = bank.encode_style(&store, &r, 0).unwrap();
        assert_eq!(s1.alpha.data(), s2.alpha.data());
        assert_eq!(s1.beta.data(), s2.beta.data());

        let brighter = WarpedExemplar(
            ImageTensor::new(r.0.data().mapv(|v| (v * 2.0).clamp(-1.0, 1.0))).unwrap(),
        );
        let s3 = bank.encode_style(&store, &brighter, 0).unwrap();
        assert!(s3.alpha.data().iter().all(|v| v.is_finite()));
        assert_ne!(s1.alpha.data(), s3.alpha.data());
    }

    #[test]
    fn generator_output_shape_and_range() {
        let (cfg, _, _) = preset("toy32").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(8);
        let bank = StyleEncoderBank::init(&mut store, &mut rng, &cfg);
        let gen = Generator::init(&mut store, &mut rng, &cfg);
        let r = warped(9, 2, cfg.corr_size);
        let out = gen.generate(&store, &bank, &r).unwrap();
        assert_eq!(
            (out.batch(), out.channels(), out.size()),
            (2, 3, cfg.image_size)
        );
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn identical_batch_entries_give_identical_outputs() {
        let (cfg, _, _) = preset("tiny16").unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(10);
        let bank = StyleEncoderBank::init(&mut store, &mut rng, &cfg);
        let gen = Generator::init(&mut store, &mut rng, &cfg);
        let single = warped(11, 1, cfg.corr_size);
        let mut doubled = Array4::zeros((2, 3, cfg.corr_size, cfg.corr_size));
        doubled
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&single.0.data().index_axis(ndarray::Axis(0), 0));
        doubled
            .index_axis_mut(ndarray::Axis(0), 1)
            .assign(&single.0.data().index_axis(ndarray::Axis(0), 0));
        let r2 = WarpedExemplar(ImageTensor::new(doubled).unwrap());
        let out = gen.generate(&store, &bank, &r2).unwrap();
        let first = out.data().index_axis(ndarray::Axis(0), 0);
        let second = out.data().index_axis(ndarray::Axis(0), 1);
        for (a, b) in first.iter().zip(second.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
