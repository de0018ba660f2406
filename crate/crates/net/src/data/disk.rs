//! On-disk dataset layout: `images/` + `annotations/` and a JSON manifest
//! listing aligned pairs.

use crate::data::raster::{
    edges_from_labels, heatmaps_from_keypoints, one_hot_from_labels,
};
use crate::data::toy::ToyShapesDataset;
use crate::data::{DataRecord, TaskKind};
use crate::error::NetError;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPair {
    pub image: String,
    pub annotation: String,
    /// "train" (default) or "val".
    #[serde(default)]
    pub split: String,
}

/// `manifest.json` schema at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    /// Mask class count, pose joint count, or 1 for edges.
    pub classes: usize,
    pub image_size: usize,
    pub pairs: Vec<ManifestPair>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Photo PNG -> [3,S,S] in [-1,1].
pub fn read_photo_png(path: &Path) -> Result<Array3<f64>, NetError> {
    let img = image::open(path)
        .map_err(|e| NetError::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = pixel.0[c] as f64 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

/// [-1,1] photo -> PNG (lossless 8-bit).
pub fn write_photo_png(path: &Path, photo: &Array3<f64>) -> Result<(), NetError> {
    let (c, h, w) = photo.dim();
    assert_eq!(c, 3, "photo must have 3 channels");
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(photo[[0, y, x]]),
                to_u8(photo[[1, y, x]]),
                to_u8(photo[[2, y, x]]),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| NetError::Image(format!("{}: {e}", path.display())))
}

fn to_u8(v: f64) -> u8 {
    (((v + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}

/// Label-map PNG (8-bit gray, class id per pixel) -> class array.
pub fn read_labels_png(path: &Path) -> Result<Array2<usize>, NetError> {
    let img = image::open(path)
        .map_err(|e| NetError::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, pixel) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = pixel.0[0] as usize;
    }
    Ok(out)
}

pub fn write_labels_png(path: &Path, labels: &Array2<usize>) -> Result<(), NetError> {
    let (h, w) = labels.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let id = labels[[y, x]];
            assert!(id < 256, "label id {id} does not fit 8-bit gray");
            img.put_pixel(x as u32, y as u32, image::Luma([id as u8]));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| NetError::Image(format!("{}: {e}", path.display())))
}

/// Pose annotation file: JSON array of `[row, col]` or `null` per joint.
pub fn read_keypoints_json(path: &Path) -> Result<Vec<Option<(f64, f64)>>, NetError> {
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<Option<(f64, f64)>> = serde_json::from_str(&text)?;
    Ok(raw)
}

pub fn write_keypoints_json(
    path: &Path,
    points: &[Option<(f64, f64)>],
) -> Result<(), NetError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string(points)?)?;
    Ok(())
}

/// Eagerly loaded on-disk dataset.
pub struct DiskDataset {
    kind: TaskKind,
    classes: usize,
    image_size: usize,
    records: Vec<DataRecord>,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl DiskDataset {
    pub fn load(root: &Path) -> Result<Self, NetError> {
        let manifest_path = root.join(MANIFEST_NAME);
        if !manifest_path.exists() {
            return Err(NetError::Manifest {
                path: manifest_path.display().to_string(),
                msg: "manifest file not found".into(),
            });
        }
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| NetError::Manifest {
                path: manifest_path.display().to_string(),
                msg: e.to_string(),
            })?;
        let kind = TaskKind::from_str(&manifest.kind).map_err(|msg| NetError::Manifest {
            path: manifest_path.display().to_string(),
            msg,
        })?;
        if !manifest.image_size.is_power_of_two() || manifest.image_size < 16 {
            return Err(NetError::Manifest {
                path: manifest_path.display().to_string(),
                msg: format!("image_size {} must be a power of two >= 16", manifest.image_size),
            });
        }
        let mut records = Vec::with_capacity(manifest.pairs.len());
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (idx, pair) in manifest.pairs.iter().enumerate() {
            let photo = read_photo_png(&root.join(&pair.image))?;
            let (_, h, w) = photo.dim();
            if h != manifest.image_size || w != manifest.image_size {
                return Err(NetError::Data(format!(
                    "{}: image is {h}x{w}, manifest says {}",
                    pair.image, manifest.image_size
                )));
            }
            let (x_a, labels) = match kind {
                TaskKind::Mask => {
                    let labels = read_labels_png(&root.join(&pair.annotation))?;
                    (one_hot_from_labels(&labels, manifest.classes)?, Some(labels))
                }
                TaskKind::Edge => {
                    let labels = read_labels_png(&root.join(&pair.annotation))?;
                    (edges_from_labels(&labels), Some(labels))
                }
                TaskKind::Pose => {
                    let points = read_keypoints_json(&root.join(&pair.annotation))?;
                    if points.len() != manifest.classes {
                        return Err(NetError::Data(format!(
                            "{}: {} joints, manifest says {}",
                            pair.annotation,
                            points.len(),
                            manifest.classes
                        )));
                    }
                    let (maps, _) = heatmaps_from_keypoints(&points, manifest.image_size);
                    (maps, None)
                }
            };
            match pair.split.as_str() {
                "val" => val.push(idx),
                _ => train.push(idx),
            }
            records.push(DataRecord { x_a, photo, labels });
        }
        if records.is_empty() {
            return Err(NetError::Data("manifest lists no pairs".into()));
        }
        if train.is_empty() {
            train = (0..records.len()).collect();
        }
        Ok(DiskDataset {
            kind,
            classes: manifest.classes,
            image_size: manifest.image_size,
            records,
            train,
            val,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn record(&self, idx: usize) -> DataRecord {
        self.records[idx].clone()
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val
    }
}

/// Materialize a toy dataset to disk in the documented layout. Every fourth
/// sample goes to the validation split.
pub fn write_toy_dataset(root: &Path, dataset: &ToyShapesDataset) -> Result<PathBuf, NetError> {
    std::fs::create_dir_all(root)?;
    let mut pairs = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let scene = dataset.scene(i);
        let image_rel = format!("images/{i:05}.png");
        write_photo_png(&root.join(&image_rel), &scene.photo)?;
        let annotation_rel = match dataset.kind {
            TaskKind::Mask | TaskKind::Edge => {
                let rel = format!("annotations/{i:05}.png");
                write_labels_png(&root.join(&rel), &scene.labels)?;
                rel
            }
            TaskKind::Pose => {
                let rel = format!("annotations/{i:05}.json");
                let mut points: Vec<Option<(f64, f64)>> = vec![None];
                points.extend(scene.keypoints.iter().map(|&p| Some(p)));
                write_keypoints_json(&root.join(&rel), &points)?;
                rel
            }
        };
        pairs.push(ManifestPair {
            image: image_rel,
            annotation: annotation_rel,
            split: if i % 4 == 3 { "val".into() } else { "train".into() },
        });
    }
    let classes = match dataset.kind {
        TaskKind::Mask | TaskKind::Pose => super::toy::TOY_CLASSES,
        TaskKind::Edge => 1,
    };
    let manifest = Manifest {
        kind: dataset.kind.to_string(),
        classes,
        image_size: dataset.size,
        pairs,
    };
    let path = root.join(MANIFEST_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("wg-disk-{}-{name}", std::process::id()))
    }

    #[test]
    fn toy_dataset_round_trips_through_disk() {
        let dir = tmp("rt");
        let ds = ToyShapesDataset::new(5, 32, TaskKind::Mask, 3);
        write_toy_dataset(&dir, &ds).unwrap();
        let disk = DiskDataset::load(&dir).unwrap();
        assert_eq!(disk.kind(), TaskKind::Mask);
        assert_eq!(disk.classes(), 4);
        assert_eq!(disk.image_size(), 32);
        assert_eq!(disk.train_indices().len(), 4);
        assert_eq!(disk.val_indices().len(), 1);

        // labels survive the PNG round trip exactly; photos within 8-bit
        let scene = ds.scene(0);
        let rec = disk.record(0);
        assert_eq!(rec.labels.as_ref().unwrap(), &scene.labels);
        let max_err = rec
            .photo
            .iter()
            .zip(scene.photo.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 127.5 + 1e-12, "max err {max_err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_manifest_is_a_clear_error() {
        let dir = tmp("missing");
        std::fs::create_dir_all(&dir).unwrap();
        let err = match DiskDataset::load(&dir) {
            Err(e) => e,
            Ok(_) => panic!("load should fail"),
        };
        let msg = err.to_string();
        assert!(msg.contains("manifest"), "{msg}");
        assert!(msg.contains(MANIFEST_NAME), "{msg}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pose_dataset_round_trips() {
        let dir = tmp("pose");
        let ds = ToyShapesDataset::new(4, 32, TaskKind::Pose, 8);
        write_toy_dataset(&dir, &ds).unwrap();
        let disk = DiskDataset::load(&dir).unwrap();
        assert_eq!(disk.kind(), TaskKind::Pose);
        let rec = disk.record(0);
        assert_eq!(rec.x_a.dim().0, 4);
        // peak of each present joint map is 1
        for j in 1..4 {
            let max = rec
                .x_a
                .index_axis(ndarray::Axis(0), j)
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            // shape centers are continuous, so the nearest-pixel peak is
            // exp(-d^2 / (2 sigma^2)) with d <= sqrt(0.5)
            assert!(max > 0.75, "joint {j} peak {max}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
