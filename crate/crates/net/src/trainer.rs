//! Alternating adversarial training with imbalanced learning rates, the
//! mask warm-up schedule, JSON-lines logging, and checkpoint/resume.

use crate::correspondence::Domain;
use crate::ctx::{apply_buffer_updates, collect_grads, Forward};
use crate::data::raster::nearest_downsample;
use crate::data::{batch_for_iteration, collate, augment::AugmentationSpec, Batch, Dataset, TaskKind};
use crate::error::NetError;
use crate::losses::{
    cycle_regularization_g, domain_alignment_g, feature_matching_g, hinge_d_g, hinge_g_g,
    mask_cross_entropy_g, perceptual_g, total_from_scalars, total_generator_loss_g,
    contextual_g, GeneratorTerms, LossReport,
};
use crate::model::{ExemplarModel, ModelMeta};
use ndarray::{Array4, Axis};
use std::path::Path;
use std::str::FromStr;
use warpgen_core::config::{
    config_hash, serialize_config, LossConfig, ModelConfig, TrainConfig,
};
use warpgen_core::{Adam, ParamStore, Tape};

/// Mutable progress of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainState {
    pub epoch: u64,
    pub iteration: u64,
    pub warmup_active: bool,
}

pub struct Trainer {
    pub model: ExemplarModel,
    pub store: ParamStore,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub loss_cfg: LossConfig,
    pub train_cfg: TrainConfig,
    pub seed: u64,
    pub state: TrainState,
    g_ids: Vec<warpgen_core::ParamId>,
    d_ids: Vec<warpgen_core::ParamId>,
    steps_per_epoch: u64,
    dataset_len: usize,
    pub augmentation: AugmentationSpec,
}

impl Trainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model_cfg: &ModelConfig,
        loss_cfg: &LossConfig,
        train_cfg: &TrainConfig,
        task: TaskKind,
        classes: usize,
        dataset_len: usize,
        seed: u64,
    ) -> Result<Self, NetError> {
        loss_cfg.validate()?;
        train_cfg.validate()?;
        let mut store = ParamStore::new();
        let meta = ModelMeta::for_task(task, classes);
        let model = ExemplarModel::build(model_cfg, meta, &mut store, seed)?;
        let g_ids = model.generator_param_ids(&store);
        let d_ids = model.discriminator_param_ids(&store);
        let steps_per_epoch = (dataset_len as u64).div_ceil(train_cfg.batch_size as u64).max(1);
        let warmup_active = task == TaskKind::Mask && model_cfg.warmup_epochs > 0;
        let augmentation = AugmentationSpec {
            seed,
            ..AugmentationSpec::default()
        };
        Ok(Trainer {
            adam_g: Adam::new(train_cfg.lr_g, train_cfg.adam_beta1, train_cfg.adam_beta2),
            adam_d: Adam::new(train_cfg.lr_d, train_cfg.adam_beta1, train_cfg.adam_beta2),
            model,
            store,
            loss_cfg: loss_cfg.clone(),
            train_cfg: train_cfg.clone(),
            seed,
            state: TrainState {
                epoch: 0,
                iteration: 0,
                warmup_active,
            },
            g_ids,
            d_ids,
            steps_per_epoch,
            dataset_len,
            augmentation,
        })
    }

    fn refresh_warmup(&mut self) {
        self.state.epoch = self.state.iteration / self.steps_per_epoch;
        self.state.warmup_active = self.model.meta.task == TaskKind::Mask
            && self.state.epoch < self.model.config.warmup_epochs as u64;
    }

    /// The warm-up schedule's auxiliary content for the adaptors at the
    /// current iteration: the aligned segmentation masks while warm-up is
    /// active, seeded Gaussian noise from then on (including step 1 when
    /// `warmup_epochs` is 0). Slots are (input, exemplar, ground-truth photo).
    pub fn apply_warmup(&self, batch: &Batch) -> Option<[Array4<f64>; 3]> {
        self.aux_content(batch)
    }

    fn aux_content(&self, batch: &Batch) -> Option<[Array4<f64>; 3]> {
        if self.model.meta.aux_channels == 0 {
            return None;
        }
        if self.state.warmup_active {
            let ex_mask = batch
                .exemplar_mask
                .clone()
                .expect("mask task batches carry exemplar masks");
            Some([batch.x_a.clone(), ex_mask, batch.x_a.clone()])
        } else {
            let it = self.state.iteration;
            Some([
                self.model.aux_noise(self.seed, it, 0, batch.size()),
                self.model.aux_noise(self.seed, it, 1, batch.size()),
                self.model.aux_noise(self.seed, it, 2, batch.size()),
            ])
        }
    }

    /// One optimization step: discriminator update, then generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport, NetError> {
        self.refresh_warmup();
        let t = Tape::new();
        let aux = self.aux_content(batch);
        let psi = self.loss_cfg.psi;
        let alpha = self.model.config.softmax_alpha;
        let grid = self.model.config.corr_size;

        // ---------- phase 1: synthesis forward + discriminator loss ----------
        let (bindings, d_grads, buf1, synth, ys_xb, leaves, l_d_val, ce_pair) = {
            let fx = Forward::new(&t, &self.store, true);
            let x_a = t.leaf(batch.x_a.clone().into_dyn(), false);
            let x_b = t.leaf(batch.x_b.clone().into_dyn(), false);
            let ex_rgb = t.leaf(batch.exemplar.clone().into_dyn(), false);
            let (xa_full, ex_full, xb_full) = match &aux {
                Some([a, e, b]) => (
                    self.model.with_aux(&t, x_a, Some(a)),
                    self.model.with_aux(&t, ex_rgb, Some(e)),
                    self.model.with_aux(&t, x_b, Some(b)),
                ),
                None => (x_a, ex_rgb, x_b),
            };
            let synth = self.model.synth_g(&fx, xa_full, ex_full, ex_rgb);
            // domain alignment needs the aligned pair through branch B
            let ys_xb = self.model.correspondence.adapt_g(&fx, xb_full, Domain::B);

            // warm-up cross-entropy inputs (masks at correlation resolution)
            let ce_pair = if self.state.warmup_active {
                let ex_mask = batch.exemplar_mask.as_ref().unwrap();
                let ex_down = nearest_downsample(ex_mask, grid);
                let target_down = nearest_downsample(&batch.x_a, grid);
                Some((
                    t.leaf(ex_down.into_dyn(), false),
                    t.leaf(target_down.into_dyn(), false),
                ))
            } else {
                None
            };

            let fake_detached = t.detach(synth.fake);
            let real_logits = self.model.discriminator.criticize_g(&fx, x_a, x_b);
            let fake_logits = self.model.discriminator.criticize_g(&fx, x_a, fake_detached);
            let l_d = hinge_d_g(&t, &real_logits, &fake_logits);
            let l_d_val = t.scalar_value(l_d);
            let mut grads = t.backward(l_d);
            let d_grads = fx.grads_for(&mut grads, &self.d_ids);
            let (bindings, buf1) = fx.into_parts();
            let leaves = (x_a, x_b, ex_rgb);
            (bindings, d_grads, buf1, synth, ys_xb, leaves, l_d_val, ce_pair)
        };
        self.adam_d.step(&mut self.store, &d_grads);
        apply_buffer_updates(&mut self.store, buf1);

        // ---------- phase 2: generator objective against the updated critic ----------
        let (g_grads, buf2, report) = {
            let fx = Forward::new(&t, &self.store, true);
            let (x_a, x_b, ex_rgb) = leaves;
            let fake_logits = self.model.discriminator.criticize_g(&fx, x_a, synth.fake);
            let adv_g = hinge_g_g(&t, &fake_logits);

            let perc = perceptual_g(&fx, &self.model.backbone, synth.fake, x_b, &self.loss_cfg);
            let context = contextual_g(&fx, &self.model.backbone, synth.fake, ex_rgb, &self.loss_cfg);
            let domain = domain_alignment_g(&t, synth.xs, ys_xb);
            let reg = cycle_regularization_g(&t, synth.m, ex_rgb, alpha, grid);

            // feature matching only where the exemplar is a pseudo pair
            let pseudo = batch.pseudo_indices();
            let feat = if pseudo.is_empty() {
                t.scalar(0.0)
            } else {
                let fake_sel = t.select_rows(synth.fake, &pseudo);
                let gt_sel = t.select_rows(x_b, &pseudo);
                feature_matching_g(&fx, &self.model.backbone, fake_sel, gt_sel, &self.loss_cfg)
            };

            let terms = GeneratorTerms {
                feat,
                perc,
                context,
                adv_g,
                domain,
                reg,
            };
            let total = total_generator_loss_g(&t, &terms, &psi);
            let (objective, warmup_ce) = match ce_pair {
                Some((ex_mask_down, target_down)) => {
                    let warped_mask = crate::correspondence::warp_g(&t, synth.m, ex_mask_down, alpha, grid);
                    let ce = mask_cross_entropy_g(&t, warped_mask, target_down);
                    (t.add(total, ce), Some(t.scalar_value(ce)))
                }
                None => (total, None),
            };

            let term_scalars = [
                t.scalar_value(terms.feat),
                t.scalar_value(terms.perc),
                t.scalar_value(terms.context),
                t.scalar_value(terms.adv_g),
                t.scalar_value(terms.domain),
                t.scalar_value(terms.reg),
            ];
            let report = LossReport {
                iteration: self.state.iteration,
                epoch: self.state.epoch,
                feat: term_scalars[0],
                perc: term_scalars[1],
                context: term_scalars[2],
                adv_g: term_scalars[3],
                adv_d: l_d_val,
                domain: term_scalars[4],
                reg: term_scalars[5],
                total: total_from_scalars(term_scalars, &psi),
                recon_l1: recon_l1(&t.array(synth.fake), &batch.x_b, &pseudo),
                warmup_ce,
            };
            report.check_finite(self.state.iteration)?;

            let mut grads = t.backward(objective);
            let g_grads = collect_grads(&bindings, &mut grads, &self.g_ids);
            let (bindings2, buf2) = fx.into_parts();
            drop(bindings2);
            (g_grads, buf2, report)
        };
        self.adam_g.step(&mut self.store, &g_grads);
        apply_buffer_updates(&mut self.store, buf2);

        self.state.iteration += 1;
        self.refresh_warmup();
        Ok(report)
    }

    /// Draw the deterministic batch for the current iteration and step.
    pub fn step(&mut self, dataset: &Dataset) -> Result<LossReport, NetError> {
        self.refresh_warmup();
        let epoch = self.state.iteration / self.steps_per_epoch;
        let index = self.state.iteration % self.steps_per_epoch;
        let samples = batch_for_iteration(
            dataset,
            self.seed,
            epoch,
            index,
            self.train_cfg.batch_size,
            self.train_cfg.pseudo_prob,
            &self.augmentation,
        )?;
        let batch = collate(&samples);
        self.train_step(&batch)
    }

    /// Run `steps` iterations, reporting each step.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        steps: usize,
        mut on_report: impl FnMut(&LossReport),
    ) -> Result<(), NetError> {
        for _ in 0..steps {
            let report = self.step(dataset)?;
            on_report(&report);
        }
        Ok(())
    }

    /// Serialize the full training state (parameters, buffers, optimizer
    /// moments, progress) with the architecture hash and config text.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let meta = serde_json::json!({
            "kind": "checkpoint",
            "version": 1,
            "config_hash": format!("{:016x}", config_hash(&self.model.config, &self.loss_cfg)),
            "config_text": serialize_config(&self.model.config, &self.loss_cfg, &self.train_cfg),
            "task": self.model.meta.task.to_string(),
            "classes": self.model.meta.classes,
            "dataset_len": self.dataset_len,
            "seed": self.seed,
            "epoch": self.state.epoch,
            "iteration": self.state.iteration,
            "adam_g_step": self.adam_g.step_count(),
            "adam_d_step": self.adam_d.step_count(),
        });
        let mut entries = Vec::new();
        for (_, e) in self.store.iter() {
            entries.push((format!("param.{}", e.name), (*e.value).clone()));
        }
        for (tag, adam) in [("adam_g", &self.adam_g), ("adam_d", &self.adam_d)] {
            let (_, moments) = adam.state();
            for (id, m, v) in moments {
                let name = self.store.name(id);
                entries.push((format!("{tag}.m.{name}"), m));
                entries.push((format!("{tag}.v.{name}"), v));
            }
        }
        crate::checkpoint::write_archive(path, &meta, &entries)
    }

    /// Restore a trainer from a checkpoint, verifying the provided config
    /// hashes to the one the checkpoint was written with.
    pub fn restore(
        path: &Path,
        model_cfg: &ModelConfig,
        loss_cfg: &LossConfig,
        train_cfg: &TrainConfig,
    ) -> Result<Self, NetError> {
        let (meta, entries) = crate::checkpoint::read_archive(path)?;
        let archive_hash = meta
            .get("config_hash")
            .and_then(|v| v.as_str())
            .ok_or_else(|| NetError::Checkpoint("missing config_hash".into()))?
            .to_string();
        let current = format!("{:016x}", config_hash(model_cfg, loss_cfg));
        if archive_hash != current {
            return Err(NetError::ConfigHash {
                archive: archive_hash,
                current,
            });
        }
        let get_u64 = |key: &str| -> Result<u64, NetError> {
            meta.get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| NetError::Checkpoint(format!("missing meta key `{key}`")))
        };
        let task_str = meta
            .get("task")
            .and_then(|v| v.as_str())
            .ok_or_else(|| NetError::Checkpoint("missing task".into()))?;
        let task = TaskKind::from_str(task_str).map_err(NetError::Checkpoint)?;
        let classes = get_u64("classes")? as usize;
        let dataset_len = get_u64("dataset_len")? as usize;
        let seed = get_u64("seed")?;

        let mut trainer = Trainer::new(
            model_cfg, loss_cfg, train_cfg, task, classes, dataset_len, seed,
        )?;
        trainer.state.iteration = get_u64("iteration")?;
        trainer.refresh_warmup();

        let mut adam_g_moments: Vec<(warpgen_core::ParamId, ndarray::ArrayD<f64>, ndarray::ArrayD<f64>)> = Vec::new();
        let mut adam_d_moments: Vec<(warpgen_core::ParamId, ndarray::ArrayD<f64>, ndarray::ArrayD<f64>)> = Vec::new();
        let mut pending_m: std::collections::HashMap<String, ndarray::ArrayD<f64>> =
            std::collections::HashMap::new();
        let mut loaded_params = 0usize;
        for (name, tensor) in entries {
            if let Some(pname) = name.strip_prefix("param.") {
                let id = trainer.store.id(pname).ok_or_else(|| {
                    NetError::Checkpoint(format!("archive has unknown parameter `{pname}`"))
                })?;
                trainer.store.set(id, tensor);
                loaded_params += 1;
            } else if name.starts_with("adam_g.m.") || name.starts_with("adam_d.m.") {
                pending_m.insert(name, tensor);
            } else if let Some(pname) = name.strip_prefix("adam_g.v.") {
                let id = trainer
                    .store
                    .id(pname)
                    .ok_or_else(|| NetError::Checkpoint(format!("unknown moment `{pname}`")))?;
                let m = pending_m
                    .remove(&format!("adam_g.m.{pname}"))
                    .ok_or_else(|| NetError::Checkpoint(format!("missing m for `{pname}`")))?;
                adam_g_moments.push((id, m, tensor));
            } else if let Some(pname) = name.strip_prefix("adam_d.v.") {
                let id = trainer
                    .store
                    .id(pname)
                    .ok_or_else(|| NetError::Checkpoint(format!("unknown moment `{pname}`")))?;
                let m = pending_m
                    .remove(&format!("adam_d.m.{pname}"))
                    .ok_or_else(|| NetError::Checkpoint(format!("missing m for `{pname}`")))?;
                adam_d_moments.push((id, m, tensor));
            } else {
                return Err(NetError::Checkpoint(format!("unexpected entry `{name}`")));
            }
        }
        if loaded_params != trainer.store.len() {
            return Err(NetError::Checkpoint(format!(
                "archive restored {loaded_params} of {} parameters",
                trainer.store.len()
            )));
        }
        trainer.adam_g.restore(get_u64("adam_g_step")?, adam_g_moments);
        trainer.adam_d.restore(get_u64("adam_d_step")?, adam_d_moments);
        Ok(trainer)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    /// Load a checkpoint using the configuration text embedded in it.
    pub fn load_self_described(path: &Path) -> Result<Self, NetError> {
        let (meta, _) = crate::checkpoint::read_archive(path)?;
        let text = meta
            .get("config_text")
            .and_then(|v| v.as_str())
            .ok_or_else(|| NetError::Checkpoint("checkpoint lacks embedded config".into()))?;
        let (model_cfg, loss_cfg, train_cfg) =
            warpgen_core::config::parse_config_text(text).map_err(NetError::Core)?;
        Trainer::restore(path, &model_cfg, &loss_cfg, &train_cfg)
    }
}

/// Mean image-space L1 over the pseudo samples of a batch.
fn recon_l1(fake: &ndarray::ArrayD<f64>, x_b: &Array4<f64>, pseudo: &[usize]) -> f64 {
    if pseudo.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for &i in pseudo {
        let f = fake.index_axis(Axis(0), i);
        let g = x_b.index_axis(Axis(0), i);
        for (a, b) in f.iter().zip(g.iter()) {
            total += (a - b).abs();
            count += 1;
        }
    }
    total / count as f64
}
