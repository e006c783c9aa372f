//! Dataset-level evaluation: AuC (pooled and per-image), class-balanced AuC
//! and chroma.

use chromalab_core::colorspace::{split_channels, srgb_to_lab, ChromaPlane};
use chromalab_core::dataset::Dataset;
use chromalab_core::metrics::{auc_cmf, mean_chroma, rebalanced_auc};
use chromalab_core::rebalance::PriorWeights;

use crate::infer::{upsample_chroma, Colorizer};
use crate::Result;

/// Source of predicted chroma.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Colorizer),
    /// a = b = 0 everywhere.
    Gray,
    /// The ground truth itself.
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub pixels: usize,
    /// AuC over all pixels pooled.
    pub auc: f64,
    /// Mean of the per-image AuCs.
    pub auc_image_mean: f64,
    /// Absent when no priors were given or they lack λ = 0 weights.
    pub rebalanced_auc: Option<f64>,
    pub mean_chroma: f64,
    pub mean_chroma_truth: f64,
}

/// Every pixel of every image pooled into one `n × 1` plane.
fn pooled(planes: &[ChromaPlane]) -> Result<ChromaPlane> {
    let a: Vec<f32> = planes.iter().flat_map(|p| p.a().iter().copied()).collect();
    let b: Vec<f32> = planes.iter().flat_map(|p| p.b().iter().copied()).collect();
    Ok(ChromaPlane::new(a.len(), 1, a, b)?)
}

/// Predictions and ground truth at each image's own resolution.
pub fn predict_all(predictor: Predictor<'_>, dataset: &Dataset, t: f64) -> Result<Vec<(ChromaPlane, ChromaPlane)>> {
    dataset
        .images()
        .iter()
        .map(|img| {
            let lab = srgb_to_lab(img);
            let (l, gt) = split_channels(&lab);
            let pred = match predictor {
                Predictor::Model(c) => upsample_chroma(&c.head_chroma(&l, t)?, l.width(), l.height())?,
                Predictor::Gray => ChromaPlane::filled(l.width(), l.height(), [0.0, 0.0])?,
                Predictor::Truth => gt.clone(),
            };
            Ok((pred, gt))
        })
        .collect()
}

pub fn evaluate(predictor: Predictor<'_>, dataset: &Dataset, priors: Option<&PriorWeights>, t: f64) -> Result<EvalReport> {
    let pairs = predict_all(predictor, dataset, t)?;
    let mut per_image = 0.0;
    for (p, g) in &pairs {
        per_image += auc_cmf(p, g, None)?.auc;
    }
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let pred = pooled(&preds)?;
    let gt = pooled(&gts)?;
    let auc = auc_cmf(&pred, &gt, None)?.auc;
    let rebalanced = match priors {
        Some(p) if p.weights_lambda0.is_some() => Some(rebalanced_auc(&pred, &gt, p, &p.bins()?)?.auc),
        _ => None,
    };
    Ok(EvalReport {
        images: dataset.len(),
        pixels: gt.len(),
        auc,
        auc_image_mean: per_image / dataset.len() as f64,
        rebalanced_auc: rebalanced,
        mean_chroma: mean_chroma(&pred),
        mean_chroma_truth: mean_chroma(&gt),
    })
}
