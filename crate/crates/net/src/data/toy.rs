//! Procedural scenes of colored shapes with exact segmentation masks: the
//! desk-scale stand-in for real paired datasets.

use crate::data::raster::{edges_from_labels, heatmaps_from_keypoints, one_hot_from_labels};
use crate::data::{DataRecord, TaskKind};
use ndarray::{Array2, Array3};
use warpgen_core::SeedRng;

/// Background plus circle, square, triangle.
pub const TOY_CLASSES: usize = 4;

const SCENE_STREAM: u64 = 0x70e5;

#[derive(Debug, Clone)]
pub struct ToyScene {
    pub photo: Array3<f64>,
    pub labels: Array2<usize>,
    /// Shape centers in paint order (circle, square, triangle).
    pub keypoints: Vec<(f64, f64)>,
}

/// Deterministic shape-scene dataset; scene `i` regenerates bit-identically
/// from (seed, i).
pub struct ToyShapesDataset {
    pub n: usize,
    pub size: usize,
    pub kind: TaskKind,
    pub seed: u64,
}

impl ToyShapesDataset {
    pub fn new(n: usize, size: usize, kind: TaskKind, seed: u64) -> Self {
        assert!(size.is_power_of_two() && size >= 16, "toy size {size}");
        ToyShapesDataset { n, size, kind, seed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn scene(&self, index: usize) -> ToyScene {
        assert!(index < self.n, "scene index {index} out of {}", self.n);
        let mut rng = SeedRng::derive(self.seed, &[SCENE_STREAM, index as u64]);
        let s = self.size;
        let sf = s as f64;

        // background: muted base color with a vertical gradient
        let base: [f64; 3] = [
            rng.uniform_in(0.15, 0.45),
            rng.uniform_in(0.15, 0.45),
            rng.uniform_in(0.15, 0.45),
        ];
        let mut photo = Array3::zeros((3, s, s));
        let mut labels = Array2::<usize>::zeros((s, s));
        for y in 0..s {
            let shade = 0.15 * (y as f64 / sf - 0.5);
            for x in 0..s {
                for c in 0..3 {
                    photo[[c, y, x]] = base[c] + shade;
                }
            }
        }

        // class-specific hues with per-scene jitter keep classes separable
        let shape_color = |rng: &mut SeedRng, base: [f64; 3]| -> [f64; 3] {
            [
                (base[0] + rng.uniform_in(-0.12, 0.12)).clamp(0.05, 0.95),
                (base[1] + rng.uniform_in(-0.12, 0.12)).clamp(0.05, 0.95),
                (base[2] + rng.uniform_in(-0.12, 0.12)).clamp(0.05, 0.95),
            ]
        };
        let mut keypoints = Vec::with_capacity(3);

        // circle, class 1
        {
            let color = shape_color(&mut rng, [0.85, 0.25, 0.3]);
            let r = rng.uniform_in(0.12, 0.2) * sf;
            let cy = rng.uniform_in(0.25, 0.75) * sf;
            let cx = rng.uniform_in(0.25, 0.75) * sf;
            keypoints.push((cy, cx));
            for y in 0..s {
                for x in 0..s {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    if d <= r {
                        let shade = 1.0 - 0.25 * d / r;
                        for c in 0..3 {
                            photo[[c, y, x]] = color[c] * shade;
                        }
                        labels[[y, x]] = 1;
                    }
                }
            }
        }

        // square, class 2
        {
            let color = shape_color(&mut rng, [0.25, 0.75, 0.35]);
            let half = rng.uniform_in(0.1, 0.17) * sf;
            let cy = rng.uniform_in(0.25, 0.75) * sf;
            let cx = rng.uniform_in(0.25, 0.75) * sf;
            keypoints.push((cy, cx));
            for y in 0..s {
                for x in 0..s {
                    let dy = (y as f64 - cy).abs();
                    let dx = (x as f64 - cx).abs();
                    if dy <= half && dx <= half {
                        let shade = 1.0 - 0.25 * dy.max(dx) / half;
                        for c in 0..3 {
                            photo[[c, y, x]] = color[c] * shade;
                        }
                        labels[[y, x]] = 2;
                    }
                }
            }
        }

        // triangle, class 3 (isoceles, apex up)
        {
            let color = shape_color(&mut rng, [0.3, 0.35, 0.85]);
            let r = rng.uniform_in(0.12, 0.2) * sf;
            let cy = rng.uniform_in(0.25, 0.75) * sf;
            let cx = rng.uniform_in(0.25, 0.75) * sf;
            keypoints.push((cy, cx));
            for y in 0..s {
                for x in 0..s {
                    let dy = y as f64 - cy;
                    let dx = (x as f64 - cx).abs();
                    if dy >= -r && dy <= r && dx <= (dy + r) / 2.0 {
                        let shade = 1.0 - 0.25 * (dy + r) / (2.0 * r);
                        for c in 0..3 {
                            photo[[c, y, x]] = color[c] * shade;
                        }
                        labels[[y, x]] = 3;
                    }
                }
            }
        }

        // map [0,1] colors into [-1,1]
        photo.mapv_inplace(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0));
        ToyScene {
            photo,
            labels,
            keypoints,
        }
    }

    /// Training record with the domain-A raster for this dataset's task.
    pub fn record(&self, index: usize) -> DataRecord {
        let scene = self.scene(index);
        let x_a = match self.kind {
            TaskKind::Mask => one_hot_from_labels(&scene.labels, TOY_CLASSES).expect("toy labels"),
            TaskKind::Edge => edges_from_labels(&scene.labels),
            TaskKind::Pose => {
                let pts: Vec<Option<(f64, f64)>> =
                    scene.keypoints.iter().map(|&p| Some(p)).collect();
                // one heatmap per shape joint plus an all-zero background map
                // so classes == channels holds across tasks
                let (maps, _) = heatmaps_from_keypoints(&pts, self.size);
                let mut with_bg = Array3::zeros((TOY_CLASSES, self.size, self.size));
                for j in 0..3 {
                    with_bg
                        .index_axis_mut(ndarray::Axis(0), j + 1)
                        .assign(&maps.index_axis(ndarray::Axis(0), j));
                }
                with_bg
            }
        };
        DataRecord {
            x_a,
            photo: scene.photo,
            labels: Some(scene.labels),
        }
    }
}
