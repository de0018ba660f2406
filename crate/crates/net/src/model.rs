//! Full model assembly: correspondence, style encoders, generator,
//! discriminator, and the frozen perceptual backbone over one parameter
//! store.

use crate::backbone::{Backbone, SMALL_BACKBONE_SEED};
use crate::correspondence::{
    correlation_g, warp_g, CorrelationMatrix, Domain, DomainAdaptor, WarpedExemplar,
};
use crate::ctx::Forward;
use crate::data::TaskKind;
use crate::discriminator::PatchDiscriminator;
use crate::error::NetError;
use crate::translation::{Generator, StyleEncoderBank};
use ndarray::{Array3, Array4, ArrayD, Axis, IxDyn};
use warpgen_core::config::ModelConfig;
use warpgen_core::{ImageTensor, ParamId, ParamStore, SeedRng, Tape, Var};

/// Stream tag for auxiliary-channel noise.
pub const AUX_STREAM: u64 = 0xaa77;

/// Dataset-derived sizes a checkpoint must agree on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelMeta {
    pub task: TaskKind,
    /// Mask class count or pose joint count (1 for edge).
    pub classes: usize,
    /// Channels of the domain-A raster.
    pub in_channels_a: usize,
    /// Auxiliary warm-up channels on both adaptors (mask tasks only; the
    /// channel count never changes within a run — the content switches from
    /// mask to Gaussian noise after warm-up).
    pub aux_channels: usize,
}

impl ModelMeta {
    pub fn for_task(task: TaskKind, classes: usize) -> Self {
        let in_channels_a = task.input_channels(classes);
        let aux_channels = match task {
            TaskKind::Mask => classes,
            _ => 0,
        };
        ModelMeta {
            task,
            classes,
            in_channels_a,
            aux_channels,
        }
    }
}

/// Vars produced by one synthesis pass.
pub struct SynthOutputs {
    pub xs: Var,
    pub ys: Var,
    pub m: Var,
    pub warped: Var,
    pub fake: Var,
}

pub struct ExemplarModel {
    pub correspondence: DomainAdaptor,
    pub styles: StyleEncoderBank,
    pub generator: Generator,
    pub discriminator: PatchDiscriminator,
    pub backbone: Backbone,
    pub config: ModelConfig,
    pub meta: ModelMeta,
}

impl ExemplarModel {
    /// Build all parameters from a seed; the backbone uses its own fixed
    /// seed so it is identical across experiments.
    pub fn build(
        cfg: &ModelConfig,
        meta: ModelMeta,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut rng = SeedRng::derive(seed, &[0x0de1]);
        let correspondence = DomainAdaptor::init(
            store,
            &mut rng,
            cfg,
            meta.in_channels_a + meta.aux_channels,
            3 + meta.aux_channels,
        );
        let styles = StyleEncoderBank::init(store, &mut rng, cfg);
        let generator = Generator::init(store, &mut rng, cfg);
        let discriminator = PatchDiscriminator::init(store, &mut rng, cfg, meta.in_channels_a);
        let backbone = Backbone::deterministic_small(store, SMALL_BACKBONE_SEED);
        Ok(ExemplarModel {
            correspondence,
            styles,
            generator,
            discriminator,
            backbone,
            config: cfg.clone(),
            meta,
        })
    }

    /// Full graph-level synthesis: adapt both inputs, correlate, warp the
    /// exemplar, and generate.
    pub fn synth_g(&self, fx: &Forward, x_a_full: Var, exemplar_full: Var, exemplar_rgb: Var) -> SynthOutputs {
        let t = fx.tape;
        let xs = self.correspondence.adapt_g(fx, x_a_full, Domain::A);
        let ys = self.correspondence.adapt_g(fx, exemplar_full, Domain::B);
        let m = correlation_g(t, xs, ys);
        let warped = warp_g(
            t,
            m,
            exemplar_rgb,
            self.config.softmax_alpha,
            self.config.corr_size,
        );
        let fake = self.generator.generate_g(fx, &self.styles, warped);
        SynthOutputs {
            xs,
            ys,
            m,
            warped,
            fake,
        }
    }

    /// Gaussian auxiliary channels for one input slot at one iteration.
    pub fn aux_noise(&self, seed: u64, iteration: u64, slot: u64, batch: usize) -> Array4<f64> {
        let s = self.config.image_size;
        let mut rng = SeedRng::derive(seed, &[AUX_STREAM, iteration, slot]);
        Array4::from_shape_fn((batch, self.meta.aux_channels, s, s), |_| rng.normal())
    }

    /// Concatenate an input with its auxiliary channels (if any).
    pub fn with_aux(&self, t: &Tape, input: Var, aux: Option<&Array4<f64>>) -> Var {
        if self.meta.aux_channels == 0 {
            return input;
        }
        let aux = aux.expect("aux channels configured but no content supplied");
        let leaf = t.leaf(aux.clone().into_dyn(), false);
        t.concat(1, &[input, leaf])
    }

    /// Trainable parameter ids of the generator side (correspondence, style
    /// encoders, generator).
    pub fn generator_param_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        ids_with_prefixes(store, &["corr.", "style.", "gen."])
    }

    pub fn discriminator_param_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        ids_with_prefixes(store, &["disc."])
    }

    /// Value-level inference: synthesize from a raster input and exemplar.
    /// Returns the output image, the warped exemplar, and the correlation
    /// matrix. Auxiliary channels are seeded noise (warm-up masks are a
    /// training-only device).
    pub fn infer(
        &self,
        store: &ParamStore,
        x_a: &Array4<f64>,
        exemplar: &Array4<f64>,
        aux_seed: u64,
    ) -> Result<(ImageTensor, WarpedExemplar, CorrelationMatrix), NetError> {
        let batch = x_a.dim().0;
        assert_eq!(exemplar.dim().0, batch);
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let xa_leaf = t.leaf(x_a.clone().into_dyn(), false);
        let ex_leaf = t.leaf(exemplar.clone().into_dyn(), false);
        let (xa_full, ex_full) = if self.meta.aux_channels > 0 {
            (
                self.with_aux(&t, xa_leaf, Some(&self.aux_noise(aux_seed, 0, 0, batch))),
                self.with_aux(&t, ex_leaf, Some(&self.aux_noise(aux_seed, 0, 1, batch))),
            )
        } else {
            (xa_leaf, ex_leaf)
        };
        let synth = self.synth_g(&fx, xa_full, ex_full, ex_leaf);
        let out = ImageTensor::photo(t.array(synth.fake).into_dimensionality().unwrap())?;
        let warped =
            WarpedExemplar(ImageTensor::new(t.array(synth.warped).into_dimensionality().unwrap())?);
        let m = CorrelationMatrix::new(
            t.array(synth.m).into_dimensionality().unwrap(),
            self.config.corr_size,
        )?;
        Ok((out, warped, m))
    }

    /// Spatial/shape plan derived from the configuration: the values every
    /// forward pass must realize. Used by shape-contract tests at scales too
    /// large to run densely.
    pub fn shape_plan(cfg: &ModelConfig) -> ShapePlan {
        ShapePlan {
            adaptor_output: (cfg.feature_channels, cfg.corr_size, cfg.corr_size),
            correlation_side: cfg.corr_size * cfg.corr_size,
            warped_exemplar: (3, cfg.corr_size, cfg.corr_size),
            generator_blocks: cfg
                .generator_layers
                .iter()
                .map(|s| (s.channels, s.size, s.size))
                .collect(),
            output_image: (3, cfg.image_size, cfg.image_size),
        }
    }
}

fn ids_with_prefixes(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, e)| e.trainable && prefixes.iter().any(|p| e.name.starts_with(p)))
        .map(|(id, _)| id)
        .collect()
}

/// Planned activation shapes (channels, height, width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    pub adaptor_output: (usize, usize, usize),
    pub correlation_side: usize,
    pub warped_exemplar: (usize, usize, usize),
    pub generator_blocks: Vec<(usize, usize, usize)>,
    pub output_image: (usize, usize, usize),
}

/// Helper for stacking per-sample arrays into a batch.
pub fn stack_batch(items: &[Array3<f64>]) -> Array4<f64> {
    let views: Vec<_> = items.iter().map(|a| a.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("homogeneous shapes")
}

/// All-zero gradient array shaped like a parameter (for merging).
pub fn zeros_like(store: &ParamStore, id: ParamId) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(store.value(id).shape()))
}
