use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::keypatch::BinaryMask;
use crate::model::{forward, ModelConfig, ParameterSet, SegmentationMap};

use super::HarnessError;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Overlap counts of a binarized prediction against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl Overlap {
    pub fn union(&self) -> usize {
        self.predicted + self.truth - self.intersection
    }

    /// `2|P∩G| / (|P|+|G|)`, 1 when both are empty.
    pub fn dice(&self) -> f64 {
        let den = self.predicted + self.truth;
        if den == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / den as f64
        }
    }

    /// `|P∩G| / |P∪G|`, 1 when both are empty.
    pub fn iou(&self) -> f64 {
        let u = self.union();
        if u == 0 {
            1.0
        } else {
            self.intersection as f64 / u as f64
        }
    }
}

/// Pixels with probability `>= threshold` count as predicted lesion.
pub fn overlap(gt: &BinaryMask, pred: &SegmentationMap, threshold: f64) -> Result<Overlap, HarnessError> {
    if (gt.height(), gt.width()) != (pred.height, pred.width) {
        return Err(HarnessError::Shape(format!(
            "ground truth is {}x{}, prediction {}x{}",
            gt.height(),
            gt.width(),
            pred.height,
            pred.width
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(HarnessError::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut o = Overlap {
        intersection: 0,
        predicted: 0,
        truth: 0,
    };
    for (&g, &p) in gt.values().iter().zip(&pred.values) {
        let p = p >= threshold;
        let g = g == 1;
        o.intersection += (p && g) as usize;
        o.predicted += p as usize;
        o.truth += g as usize;
    }
    Ok(o)
}

/// `(dice, iou)` at `threshold`.
pub fn metrics(gt: &BinaryMask, pred: &SegmentationMap, threshold: f64) -> Result<(f64, f64), HarnessError> {
    let o = overlap(gt, pred, threshold)?;
    Ok((o.dice(), o.iou()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScore>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_scores(per_sample: Vec<SampleScore>, threshold: f64) -> Self {
        let n = per_sample.len().max(1) as f64;
        let mean_dice = per_sample.iter().map(|s| s.dice).sum::<f64>() / n;
        let mean_iou = per_sample.iter().map(|s| s.iou).sum::<f64>() / n;
        Self {
            per_sample,
            mean_dice,
            mean_iou,
            threshold,
        }
    }
}

/// Scores ready-made predictions, paired with their samples by position.
pub fn evaluate_predictions(
    samples: &[Sample],
    predictions: &[SegmentationMap],
    threshold: f64,
) -> Result<EvalReport, HarnessError> {
    if samples.len() != predictions.len() {
        return Err(HarnessError::Shape(format!(
            "{} samples but {} predictions",
            samples.len(),
            predictions.len()
        )));
    }
    let scores = samples
        .iter()
        .zip(predictions)
        .map(|(s, p)| {
            let (dice, iou) = metrics(&s.mask, p, threshold)?;
            Ok(SampleScore {
                id: s.id.clone(),
                dice,
                iou,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(EvalReport::from_scores(scores, threshold))
}

pub fn predict_all(samples: &[Sample], params: &ParameterSet, cfg: &ModelConfig) -> Result<Vec<SegmentationMap>, HarnessError> {
    samples
        .par_iter()
        .map(|s| Ok(forward(&s.image, params, cfg)?.0))
        .collect()
}

/// Runs the model over `samples` and scores it.
pub fn evaluate(samples: &[Sample], params: &ParameterSet, cfg: &ModelConfig, threshold: f64) -> Result<EvalReport, HarnessError> {
    let preds = predict_all(samples, params, cfg)?;
    evaluate_predictions(samples, &preds, threshold)
}
