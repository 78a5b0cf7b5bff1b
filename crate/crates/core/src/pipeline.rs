//! Batch helpers tying the modules together: encoding, evaluation of a
//! trained model, and evaluation of the memory-bank path.

use rayon::prelude::*;

use crate::encoders::ImageEncoder;
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, auroc, pixel_auroc};
use crate::eval::report::MetricsReport;
use crate::learn::model::{predict, EncodedSample, ModelParams, Prediction, PromptContext};
use crate::numerics::Tensor;
use crate::scoring::{fewshot_map, image_score, AnomalyMapSet, MemoryBank};
use crate::synth::{Label, SynthSample};

pub fn encode_samples(encoder: &dyn ImageEncoder, samples: &[SynthSample]) -> Result<Vec<EncodedSample>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(EncodedSample {
                features: encoder.encode_image(&s.image)?,
                gt: s.gt_mask.clone(),
                label: s.label,
                cells: s.position_cells.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

fn map_metrics(maps: &[&Tensor], samples: &[EncodedSample]) -> Result<(f64, f64)> {
    let scores: Vec<f64> = maps.iter().map(|m| m.max()).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.label.is_abnormal()).collect();
    let gts: Vec<&Tensor> = samples.iter().map(|s| &s.gt).collect();
    Ok((auroc(&scores, &labels)?, pixel_auroc(maps, &gts)?))
}

/// Runs the trained model over a split. With `oracle_maps`, the ground-truth
/// masks replace the predicted maps when scoring localization.
pub fn evaluate(
    params: &ModelParams,
    ctx: &PromptContext,
    samples: &[EncodedSample],
    split: &str,
    oracle_maps: bool,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::MetricUndefined(format!("split `{split}` is empty")));
    }
    let predictions: Vec<Prediction> = samples
        .par_iter()
        .map(|s| predict(params, ctx, &s.features, s.gt.dims2("evaluate")?))
        .collect::<Result<_>>()?;
    let maps: Vec<&Tensor> = if oracle_maps {
        samples.iter().map(|s| &s.gt).collect()
    } else {
        predictions.iter().map(|p| &p.maps.fused).collect()
    };
    let (i_auroc, p_auroc) = map_metrics(&maps, samples)?;
    let predicted: Vec<Label> = predictions
        .iter()
        .map(|p| if p.is_abnormal() { Label::Abnormal } else { Label::Normal })
        .collect();
    let truth: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let abnormal: Vec<(&Prediction, &EncodedSample)> =
        predictions.iter().zip(samples).filter(|(_, s)| s.label.is_abnormal()).collect();
    let position_accuracy = (!abnormal.is_empty()).then(|| {
        abnormal.iter().filter(|(p, s)| p.predicted_cells() == s.cells).count() as f64 / abnormal.len() as f64
    });
    let report = MetricsReport {
        split: split.to_string(),
        n_images: samples.len(),
        n_pixels: samples.iter().map(|s| s.gt.numel()).sum(),
        i_auroc,
        p_auroc,
        accuracy: accuracy(&predicted, &truth)?,
        position_accuracy,
    };
    Ok(Evaluation { report, predictions })
}

/// Image- and pixel-level AUROC of the memory-bank path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FewShotMetrics {
    pub i_auroc: f64,
    pub p_auroc: f64,
}

pub fn fewshot_maps(bank: &MemoryBank, samples: &[EncodedSample]) -> Result<Vec<AnomalyMapSet>> {
    samples
        .par_iter()
        .map(|s| fewshot_map(&s.features.patches, bank, s.gt.dims2("fewshot")?))
        .collect()
}

pub fn evaluate_fewshot(bank: &MemoryBank, samples: &[EncodedSample]) -> Result<FewShotMetrics> {
    let sets = fewshot_maps(bank, samples)?;
    let maps: Vec<&Tensor> = sets.iter().map(|s| &s.fused).collect();
    debug_assert!(sets.iter().zip(&maps).all(|(s, m)| image_score(s) == m.max()));
    let (i_auroc, p_auroc) = map_metrics(&maps, samples)?;
    Ok(FewShotMetrics { i_auroc, p_auroc })
}
