//! Rasterization of annotation sources into domain-A input tensors.

use crate::data::TaskKind;
use crate::error::NetError;
use ndarray::{Array2, Array3, Array4};

/// Pose heatmap sigma in pixels at a 64x64 canvas, scaled linearly with size.
pub const POSE_SIGMA_AT_64: f64 = 2.0;

pub fn pose_sigma(size: usize) -> f64 {
    (POSE_SIGMA_AT_64 * size as f64 / 64.0).max(1.0)
}

/// Annotation source feeding [`rasterize_input`].
pub enum RasterSource<'a> {
    /// Per-pixel class ids.
    Labels(&'a Array2<usize>),
    /// Open polylines in pixel coordinates (row, col).
    Polylines(&'a [Vec<(f64, f64)>], usize),
    /// One optional keypoint per joint, pixel coordinates (row, col).
    Keypoints(&'a [Option<(f64, f64)>], usize),
}

/// One-hot mask [K,H,W]; rejects label ids outside `classes`.
pub fn one_hot_from_labels(labels: &Array2<usize>, classes: usize) -> Result<Array3<f64>, NetError> {
    let (h, w) = labels.dim();
    let mut out = Array3::zeros((classes, h, w));
    for y in 0..h {
        for x in 0..w {
            let id = labels[[y, x]];
            if id >= classes {
                return Err(NetError::Data(format!(
                    "label id {id} at ({y}, {x}) >= class count {classes}"
                )));
            }
            out[[id, y, x]] = 1.0;
        }
    }
    Ok(out)
}

/// Binary boundary map [1,H,W]: a pixel is an edge when its class differs
/// from the right or down neighbor (fixed rule, recorded for reproducibility).
pub fn edges_from_labels(labels: &Array2<usize>) -> Array3<f64> {
    let (h, w) = labels.dim();
    let mut out = Array3::zeros((1, h, w));
    for y in 0..h {
        for x in 0..w {
            let c = labels[[y, x]];
            let right = x + 1 < w && labels[[y, x + 1]] != c;
            let down = y + 1 < h && labels[[y + 1, x]] != c;
            if right || down {
                out[[0, y, x]] = 1.0;
            }
        }
    }
    out
}

/// Rasterize polylines into a binary edge map [1,size,size].
pub fn edges_from_polylines(polylines: &[Vec<(f64, f64)>], size: usize) -> Array3<f64> {
    let mut out = Array3::zeros((1, size, size));
    for line in polylines {
        for seg in line.windows(2) {
            let (y0, x0) = seg[0];
            let (y1, x1) = seg[1];
            let steps = ((y1 - y0).abs().max((x1 - x0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let y = (y0 + t * (y1 - y0)).round();
                let x = (x0 + t * (x1 - x0)).round();
                if y >= 0.0 && x >= 0.0 && (y as usize) < size && (x as usize) < size {
                    out[[0, y as usize, x as usize]] = 1.0;
                }
            }
        }
    }
    out
}

/// Gaussian heatmaps [J,size,size] with peak 1 at each keypoint. Keypoints
/// outside the frame are clamped onto it; a warning string is returned per
/// clamped point. Absent joints produce all-zero maps.
pub fn heatmaps_from_keypoints(
    keypoints: &[Option<(f64, f64)>],
    size: usize,
) -> (Array3<f64>, Vec<String>) {
    let sigma = pose_sigma(size);
    let denom = 2.0 * sigma * sigma;
    let mut out = Array3::zeros((keypoints.len(), size, size));
    let mut warnings = Vec::new();
    let limit = (size - 1) as f64;
    for (j, kp) in keypoints.iter().enumerate() {
        let Some((ky, kx)) = kp else { continue };
        let (mut cy, mut cx) = (*ky, *kx);
        if !(0.0..=limit).contains(&cy) || !(0.0..=limit).contains(&cx) {
            warnings.push(format!(
                "keypoint {j} at ({cy:.1}, {cx:.1}) outside {size}x{size} frame; clamped"
            ));
            cy = cy.clamp(0.0, limit);
            cx = cx.clamp(0.0, limit);
        }
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                out[[j, y, x]] = (-d2 / denom).exp();
            }
        }
    }
    (out, warnings)
}

/// Dispatch rasterization by task kind; `classes` is the mask class count or
/// joint count and validates the source.
pub fn rasterize_input(
    source: RasterSource,
    kind: TaskKind,
    classes: usize,
) -> Result<(Array3<f64>, Vec<String>), NetError> {
    match (kind, source) {
        (TaskKind::Mask, RasterSource::Labels(labels)) => {
            Ok((one_hot_from_labels(labels, classes)?, Vec::new()))
        }
        (TaskKind::Edge, RasterSource::Labels(labels)) => {
            Ok((edges_from_labels(labels), Vec::new()))
        }
        (TaskKind::Edge, RasterSource::Polylines(lines, size)) => {
            Ok((edges_from_polylines(lines, size), Vec::new()))
        }
        (TaskKind::Pose, RasterSource::Keypoints(points, size)) => {
            if points.len() != classes {
                return Err(NetError::Data(format!(
                    "{} keypoints supplied for {classes} joints",
                    points.len()
                )));
            }
            let (maps, warnings) = heatmaps_from_keypoints(points, size);
            Ok((maps, warnings))
        }
        (kind, _) => Err(NetError::Data(format!(
            "annotation source does not match task kind {kind}"
        ))),
    }
}

/// Downsample [B,C,H,W] by picking the center pixel of each block (exact for
/// one-hot content).
pub fn nearest_downsample(x: &Array4<f64>, target: usize) -> Array4<f64> {
    let (b, c, h, _w) = x.dim();
    assert!(h % target == 0, "nearest_downsample needs integer factor");
    let f = h / target;
    let off = f / 2;
    Array4::from_shape_fn((b, c, target, target), |(bi, ci, y, x_)| {
        x[[bi, ci, y * f + off, x_ * f + off]]
    })
}
