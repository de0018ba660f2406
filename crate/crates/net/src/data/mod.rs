//! Dataset ingestion, pseudo-exemplar augmentation, and batch sampling.

pub mod augment;
pub mod disk;
pub mod raster;
pub mod toy;

use crate::error::NetError;
use augment::{AppliedAugmentation, AugmentationSpec};
use ndarray::{Array2, Array3, Array4, Axis};
use std::fmt;
use std::str::FromStr;
use warpgen_core::SeedRng;

/// Stream tag for per-iteration batch derivation.
pub const BATCH_STREAM: u64 = 0xba7c;

/// Input modality of domain A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Mask,
    Edge,
    Pose,
}

impl TaskKind {
    /// Channel count of the domain-A raster for `classes` mask classes or
    /// pose joints.
    pub fn input_channels(self, classes: usize) -> usize {
        match self {
            TaskKind::Mask => classes,
            TaskKind::Edge => 1,
            TaskKind::Pose => classes,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Mask => "mask",
            TaskKind::Edge => "edge",
            TaskKind::Pose => "pose",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask" => Ok(TaskKind::Mask),
            "edge" => Ok(TaskKind::Edge),
            "pose" => Ok(TaskKind::Pose),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// One aligned record: domain-A raster, photo, and (when available) the
/// label map the raster came from.
#[derive(Debug, Clone)]
pub struct DataRecord {
    pub x_a: Array3<f64>,
    pub photo: Array3<f64>,
    pub labels: Option<Array2<usize>>,
}

/// A dataset the trainer can draw from.
pub enum Dataset {
    Toy(toy::ToyShapesDataset),
    Disk(disk::DiskDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Toy(d) => d.len(),
            Dataset::Disk(d) => d.train_indices().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Dataset::Toy(d) => d.kind,
            Dataset::Disk(d) => d.kind(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Dataset::Toy(_) => toy::TOY_CLASSES,
            Dataset::Disk(d) => d.classes(),
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            Dataset::Toy(d) => d.size,
            Dataset::Disk(d) => d.image_size(),
        }
    }

    /// Training-split record by index.
    pub fn record(&self, i: usize) -> DataRecord {
        match self {
            Dataset::Toy(d) => d.record(i),
            Dataset::Disk(d) => d.record(d.train_indices()[i]),
        }
    }
}

/// One training sample: aligned input/photo plus the exemplar it will be
/// conditioned on. For pseudo pairs the exemplar is a recorded geometric
/// distortion of the photo itself.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub x_a: Array3<f64>,
    pub x_b: Array3<f64>,
    pub exemplar: Array3<f64>,
    /// One-hot mask aligned with the exemplar (mask tasks only); feeds the
    /// warm-up auxiliary channel and the warped-mask cross-entropy.
    pub exemplar_mask: Option<Array3<f64>>,
    pub is_pseudo: bool,
    pub augmentation: Option<AppliedAugmentation>,
}

/// Batched tensors ready for the model.
pub struct Batch {
    pub x_a: Array4<f64>,
    pub x_b: Array4<f64>,
    pub exemplar: Array4<f64>,
    pub exemplar_mask: Option<Array4<f64>>,
    pub is_pseudo: Vec<bool>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.is_pseudo.len()
    }

    pub fn pseudo_indices(&self) -> Vec<usize> {
        self.is_pseudo
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }
}

fn stack3(items: &[&Array3<f64>]) -> Array4<f64> {
    let views: Vec<_> = items.iter().map(|a| a.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("homogeneous sample shapes")
}

pub fn collate(samples: &[PairedSample]) -> Batch {
    assert!(!samples.is_empty(), "collate of empty batch");
    let x_a = stack3(&samples.iter().map(|s| &s.x_a).collect::<Vec<_>>());
    let x_b = stack3(&samples.iter().map(|s| &s.x_b).collect::<Vec<_>>());
    let exemplar = stack3(&samples.iter().map(|s| &s.exemplar).collect::<Vec<_>>());
    let exemplar_mask = if samples.iter().all(|s| s.exemplar_mask.is_some()) {
        Some(stack3(
            &samples
                .iter()
                .map(|s| s.exemplar_mask.as_ref().unwrap())
                .collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    Batch {
        x_a,
        x_b,
        exemplar,
        exemplar_mask,
        is_pseudo: samples.iter().map(|s| s.is_pseudo).collect(),
    }
}

/// Draw one batch: each sample is a pseudo pair with probability
/// `pseudo_prob`, otherwise its exemplar is the photo of another uniformly
/// drawn record.
pub fn sample_batch(
    dataset: &Dataset,
    batch: usize,
    pseudo_prob: f64,
    spec: &AugmentationSpec,
    rng: &mut SeedRng,
) -> Result<Vec<PairedSample>, NetError> {
    assert!((0.0..=1.0).contains(&pseudo_prob), "pseudo_prob in [0,1]");
    if dataset.len() < 2 && pseudo_prob < 1.0 {
        return Err(NetError::Data(format!(
            "dataset of {} sample(s) cannot provide cross-sample exemplars; need >= 2 or pseudo_prob = 1",
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(NetError::Data("empty dataset".into()));
    }
    let is_mask = dataset.kind() == TaskKind::Mask;
    let classes = dataset.classes();
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.below(dataset.len());
        let rec = dataset.record(i);
        let pseudo = rng.bernoulli(pseudo_prob);
        let sample = if pseudo {
            let (exemplar, ex_labels, applied) =
                augment::make_pseudo_pair_full(&rec.photo, rec.labels.as_ref(), spec, rng);
            let exemplar_mask = if is_mask {
                let labels = ex_labels.expect("mask task records carry labels");
                Some(raster::one_hot_from_labels(&labels, classes)?)
            } else {
                None
            };
            PairedSample {
                x_a: rec.x_a,
                x_b: rec.photo,
                exemplar,
                exemplar_mask,
                is_pseudo: true,
                augmentation: Some(applied),
            }
        } else {
            let mut j = rng.below(dataset.len() - 1);
            if j >= i {
                j += 1;
            }
            let other = dataset.record(j);
            let exemplar_mask = if is_mask {
                let labels = other.labels.as_ref().expect("mask task records carry labels");
                Some(raster::one_hot_from_labels(labels, classes)?)
            } else {
                None
            };
            PairedSample {
                x_a: rec.x_a,
                x_b: rec.photo,
                exemplar: other.photo,
                exemplar_mask,
                is_pseudo: false,
                augmentation: None,
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Deterministic batch for (seed, epoch, batch index): reproducible
/// regardless of how many workers draw batches or in which order.
pub fn batch_for_iteration(
    dataset: &Dataset,
    master_seed: u64,
    epoch: u64,
    batch_index: u64,
    batch: usize,
    pseudo_prob: f64,
    spec: &AugmentationSpec,
) -> Result<Vec<PairedSample>, NetError> {
    let mut rng = SeedRng::derive(master_seed, &[BATCH_STREAM, epoch, batch_index]);
    sample_batch(dataset, batch, pseudo_prob, spec, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset::Toy(toy::ToyShapesDataset::new(n, 32, TaskKind::Mask, 7))
    }

    #[test]
    fn pseudo_prob_one_marks_all_samples() {
        let ds = toy(4);
        let mut rng = SeedRng::new(1);
        let batch =
            sample_batch(&ds, 6, 1.0, &AugmentationSpec::default(), &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.is_pseudo));
    }

    #[test]
    fn pseudo_prob_zero_uses_other_sample() {
        let ds = toy(2);
        let mut rng = SeedRng::new(2);
        let batch =
            sample_batch(&ds, 8, 0.0, &AugmentationSpec::default(), &mut rng).unwrap();
        for s in &batch {
            assert!(!s.is_pseudo);
            assert_ne!(s.exemplar, s.x_b, "exemplar must come from the other sample");
        }
    }

    #[test]
    fn single_sample_dataset_rejected_for_cross_exemplars() {
        let ds = toy(1);
        let mut rng = SeedRng::new(3);
        assert!(sample_batch(&ds, 2, 0.5, &AugmentationSpec::default(), &mut rng).is_err());
        assert!(sample_batch(&ds, 2, 1.0, &AugmentationSpec::default(), &mut rng).is_ok());
    }

    #[test]
    fn pseudo_fraction_matches_probability() {
        let ds = toy(4);
        let mut rng = SeedRng::new(4);
        let mut pseudo = 0usize;
        let total = 10_000;
        let batch =
            sample_batch(&ds, total, 0.5, &AugmentationSpec::default(), &mut rng).unwrap();
        for s in batch {
            pseudo += s.is_pseudo as usize;
        }
        let frac = pseudo as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "pseudo fraction {frac}");
    }

    #[test]
    fn batches_reproducible_from_seed_epoch_index() {
        let ds = toy(6);
        let spec = AugmentationSpec::default();
        let a = batch_for_iteration(&ds, 42, 3, 17, 4, 0.5, &spec).unwrap();
        let b = batch_for_iteration(&ds, 42, 3, 17, 4, 0.5, &spec).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.x_a, sb.x_a);
            assert_eq!(sa.exemplar, sb.exemplar);
            assert_eq!(sa.is_pseudo, sb.is_pseudo);
        }
        let c = batch_for_iteration(&ds, 42, 3, 18, 4, 0.5, &spec).unwrap();
        let same = a
            .iter()
            .zip(&c)
            .all(|(x, y)| x.exemplar == y.exemplar && x.x_a == y.x_a);
        assert!(!same, "different batch index should change the draw");
    }

    #[test]
    fn collate_shapes() {
        let ds = toy(4);
        let mut rng = SeedRng::new(5);
        let samples =
            sample_batch(&ds, 3, 1.0, &AugmentationSpec::default(), &mut rng).unwrap();
        let batch = collate(&samples);
        assert_eq!(batch.x_a.dim(), (3, 4, 32, 32));
        assert_eq!(batch.x_b.dim(), (3, 3, 32, 32));
        assert_eq!(batch.exemplar.dim(), (3, 3, 32, 32));
        assert!(batch.exemplar_mask.is_some());
        assert_eq!(batch.pseudo_indices(), vec![0, 1, 2]);
    }
}
