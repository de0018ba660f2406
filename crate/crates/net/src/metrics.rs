//! Evaluation metrics: layer-wise cosine similarity between backbone
//! activations, averaged over a split.

use crate::backbone::Backbone;
use crate::data::DataRecord;
use crate::error::NetError;
use crate::model::ExemplarModel;
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use warpgen_core::config::FeatLayer;
use warpgen_core::{ImageTensor, ParamStore};

/// Metric record written by the metrics command.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub semantic_consistency: f64,
    pub style_color: f64,
    pub style_texture: f64,
}

const SEMANTIC_LAYERS: [FeatLayer; 3] = [FeatLayer::Relu3_2, FeatLayer::Relu4_2, FeatLayer::Relu5_2];

fn cosine_per_sample(a: &ndarray::Array4<f64>, b: &ndarray::Array4<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let batch = a.dim().0;
    let mut total = 0.0;
    for i in 0..batch {
        let av = a.index_axis(ndarray::Axis(0), i);
        let bv = b.index_axis(ndarray::Axis(0), i);
        let dot: f64 = av.iter().zip(bv.iter()).map(|(x, y)| x * y).sum();
        let na: f64 = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += dot / (na * nb + 1e-8);
    }
    total / batch as f64
}

fn layer_cosine(
    backbone: &Backbone,
    store: &ParamStore,
    a: &ImageTensor,
    b: &ImageTensor,
    layer: FeatLayer,
) -> f64 {
    let fa = backbone.extract(store, a, &[layer]);
    let fb = backbone.extract(store, b, &[layer]);
    cosine_per_sample(fa[0].1.data(), fb[0].1.data())
}

/// Mean cosine similarity over the three high-level layers; 1.0 for
/// identical images.
pub fn semantic_consistency_score(
    backbone: &Backbone,
    store: &ParamStore,
    out: &ImageTensor,
    gt: &ImageTensor,
) -> f64 {
    SEMANTIC_LAYERS
        .iter()
        .map(|&l| layer_cosine(backbone, store, out, gt, l))
        .sum::<f64>()
        / SEMANTIC_LAYERS.len() as f64
}

/// Cosine similarity at the two low-level layers: (color, texture).
pub fn style_relevance_score(
    backbone: &Backbone,
    store: &ParamStore,
    out: &ImageTensor,
    exemplar: &ImageTensor,
) -> (f64, f64) {
    (
        layer_cosine(backbone, store, out, exemplar, FeatLayer::Relu1_2),
        layer_cosine(backbone, store, out, exemplar, FeatLayer::Relu2_2),
    )
}

/// Which photo conditions each evaluated record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExemplarPolicy {
    /// The next record's photo (cyclic): cross-style transfer setting.
    Cyclic,
    /// The record's own photo: reconstruction setting, matching pseudo-pair
    /// training.
    SelfPhoto,
}

/// Evaluate a split under the cyclic exemplar policy.
pub fn evaluate_records(
    model: &ExemplarModel,
    store: &ParamStore,
    records: &[DataRecord],
    aux_seed: u64,
) -> Result<MetricsReport, NetError> {
    evaluate_records_with(model, store, records, aux_seed, ExemplarPolicy::Cyclic)
}

/// Evaluate a split, scoring semantic consistency against each record's
/// aligned ground truth and style relevance against the exemplar used.
pub fn evaluate_records_with(
    model: &ExemplarModel,
    store: &ParamStore,
    records: &[DataRecord],
    aux_seed: u64,
    policy: ExemplarPolicy,
) -> Result<MetricsReport, NetError> {
    if records.is_empty() {
        return Err(NetError::Data("empty evaluation split".into()));
    }
    let mut semantic = 0.0;
    let mut color = 0.0;
    let mut texture = 0.0;
    for (i, rec) in records.iter().enumerate() {
        let exemplar_src = match policy {
            ExemplarPolicy::Cyclic => &records[(i + 1) % records.len()].photo,
            ExemplarPolicy::SelfPhoto => &rec.photo,
        };
        let x_a = rec.x_a.clone().insert_axis(Axis(0));
        let exemplar = exemplar_src.clone().insert_axis(Axis(0));
        let (out, _, _) = model.infer(store, &x_a, &exemplar, aux_seed)?;
        let gt = ImageTensor::photo(rec.photo.clone().insert_axis(Axis(0)))?;
        let ex_img = ImageTensor::photo(exemplar)?;
        semantic += semantic_consistency_score(&model.backbone, store, &out, &gt);
        let (c, t) = style_relevance_score(&model.backbone, store, &out, &ex_img);
        color += c;
        texture += t;
    }
    let n = records.len() as f64;
    Ok(MetricsReport {
        semantic_consistency: semantic / n,
        style_color: color / n,
        style_texture: texture / n,
    })
}
