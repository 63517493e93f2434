//! Hybrid objective: Dice loss on the segmentation plus one binary
//! cross-entropy term per predicted key-patch map, all against the same target.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smoothing added to numerator and denominator of the Dice ratio.
pub const DICE_EPS: f64 = 1.0;
/// Attention probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` before logs.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {what} has {got} entries, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} key-patch predictions, got {got}")]
    MapCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg_loss: f64,
    pub map_losses: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(seg_loss: f64, map_losses: Vec<f64>) -> Self {
        let total = map_losses.iter().fold(seg_loss, |acc, l| acc + l);
        Self {
            seg_loss,
            map_losses,
            total,
        }
    }
}

/// d(total)/d(prediction) for every prediction the objective consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub seg: Vec<f64>,
    pub maps: Vec<Vec<f64>>,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected != got {
        return Err(LossError::ShapeMismatch { what, expected, got });
    }
    Ok(())
}

/// `1 - (2 Σ p g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss(gt: &[f64], pred: &[f64]) -> Result<f64, LossError> {
    check_len("prediction", gt.len(), pred.len())?;
    let (inter, sp, sg) = dice_sums(gt, pred);
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (sp + sg + DICE_EPS))
}

fn dice_sums(gt: &[f64], pred: &[f64]) -> (f64, f64, f64) {
    gt.iter()
        .zip(pred)
        .fold((0.0, 0.0, 0.0), |(i, sp, sg), (&g, &p)| (i + p * g, sp + p, sg + g))
}

pub fn dice_loss_grad(gt: &[f64], pred: &[f64]) -> Result<Vec<f64>, LossError> {
    check_len("prediction", gt.len(), pred.len())?;
    let (inter, sp, sg) = dice_sums(gt, pred);
    let num = 2.0 * inter + DICE_EPS;
    let den = sp + sg + DICE_EPS;
    Ok(gt.iter().map(|&g| -(2.0 * g * den - num) / (den * den)).collect())
}

/// Mean binary cross-entropy over the patches.
pub fn map_ce_loss(gt: &[f64], pred: &[f64]) -> Result<f64, LossError> {
    check_len("attention map", gt.len(), pred.len())?;
    let sum: f64 = gt
        .iter()
        .zip(pred)
        .map(|(&g, &m)| {
            let m = m.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            -(g * m.ln() + (1.0 - g) * (1.0 - m).ln())
        })
        .sum();
    Ok(sum / gt.len() as f64)
}

pub fn map_ce_loss_grad(gt: &[f64], pred: &[f64]) -> Result<Vec<f64>, LossError> {
    check_len("attention map", gt.len(), pred.len())?;
    let n = gt.len() as f64;
    Ok(gt
        .iter()
        .zip(pred)
        .map(|(&g, &m)| {
            if !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&m) {
                0.0
            } else {
                (-g / m + (1.0 - g) / (1.0 - m)) / n
            }
        })
        .collect())
}

/// Seg loss plus the unweighted sum of `expected_maps` map losses.
pub fn total_loss(
    seg_gt: &[f64],
    seg_pred: &[f64],
    map_gt: &[f64],
    map_preds: &[Vec<f64>],
    expected_maps: usize,
) -> Result<LossBreakdown, LossError> {
    if map_preds.len() != expected_maps {
        return Err(LossError::MapCount {
            expected: expected_maps,
            got: map_preds.len(),
        });
    }
    let seg = dice_loss(seg_gt, seg_pred)?;
    let maps = map_preds
        .iter()
        .map(|m| map_ce_loss(map_gt, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossBreakdown::from_parts(seg, maps))
}

pub fn total_loss_with_grad(
    seg_gt: &[f64],
    seg_pred: &[f64],
    map_gt: &[f64],
    map_preds: &[Vec<f64>],
    expected_maps: usize,
) -> Result<(LossBreakdown, LossGradients), LossError> {
    let breakdown = total_loss(seg_gt, seg_pred, map_gt, map_preds, expected_maps)?;
    let grads = LossGradients {
        seg: dice_loss_grad(seg_gt, seg_pred)?,
        maps: map_preds
            .iter()
            .map(|m| map_ce_loss_grad(map_gt, m))
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok((breakdown, grads))
}
