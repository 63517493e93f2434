use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, Sample};
use crate::keypatch::{generate_keypatch_map, GeneratorConfig};
use crate::loss::{dice_loss, total_loss_with_grad, LossBreakdown};
use crate::model::{backward, forward, forward_traced, ImageTensor, ModelConfig, OutputGradients, ParameterSet};

use super::{adam_step, AdamState, HarnessError, PlateauSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub seed: u64,
    pub augment: bool,
    pub generator: GeneratorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 4,
            max_epochs: 200,
            max_steps: None,
            plateau_patience: 10,
            lr_decay: 0.5,
            seed: 0,
            augment: false,
            generator: GeneratorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return fail("lr_decay must lie in (0, 1)");
        }
        if self.batch == 0 {
            return fail("batch must be >= 1");
        }
        if self.plateau_patience == 0 {
            return fail("plateau_patience must be >= 1");
        }
        self.generator.validate()?;
        Ok(())
    }
}

/// A sample with its loss targets flattened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub image: ImageTensor,
    pub seg_target: Vec<f64>,
    pub map_target: Vec<f64>,
}

pub fn prepare(sample: &Sample, generator: &GeneratorConfig) -> Result<Prepared, HarnessError> {
    let map = generate_keypatch_map(&sample.mask, generator)?;
    Ok(Prepared {
        image: sample.image.clone(),
        seg_target: sample.mask.to_f64(),
        map_target: map.to_f64(),
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub seg_loss: f64,
    pub map_losses: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_seg_loss: f64,
    pub val_seg_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest monitored loss (the initial ones if no
    /// epoch ran).
    pub best: ParameterSet,
    pub last: ParameterSet,
    pub best_epoch: Option<usize>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Loss and parameter gradient for one sample. A non-finite loss is
/// reported as [`HarnessError::NonFiniteLoss`] with step 0 before any
/// gradient is formed; [`train`] substitutes the optimizer step.
pub fn sample_loss_and_grad(
    item: &Prepared,
    params: &ParameterSet,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, ParameterSet), HarnessError> {
    let trace = forward_traced(&item.image, params, cfg)?;
    let (breakdown, grads) = total_loss_with_grad(
        &item.seg_target,
        &trace.prediction.values,
        &item.map_target,
        trace.maps(),
        cfg.num_maps(),
    )?;
    if !breakdown.total.is_finite() {
        return Err(HarnessError::NonFiniteLoss { step: 0 });
    }
    let upstream = OutputGradients {
        prediction: grads.seg,
        maps: grads.maps,
    };
    Ok((breakdown, backward(&trace, params, cfg, &upstream)?))
}

/// Mean loss and mean gradient over `items`. Per-sample work runs in
/// parallel; the reduction is sequential in item order.
pub fn batch_loss_and_grad(
    items: &[&Prepared],
    params: &ParameterSet,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, ParameterSet), HarnessError> {
    let parts = items
        .par_iter()
        .map(|item| sample_loss_and_grad(item, params, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let n = parts.len() as f64;
    let mut grad = params.zeros_like();
    let mut seg = 0.0;
    let mut maps = vec![0.0; cfg.num_maps()];
    for (b, g) in &parts {
        grad.add_scaled(g, 1.0 / n);
        seg += b.seg_loss;
        for (acc, l) in maps.iter_mut().zip(&b.map_losses) {
            *acc += l;
        }
    }
    let maps = maps.into_iter().map(|l| l / n).collect();
    Ok((LossBreakdown::from_parts(seg / n, maps), grad))
}

/// Mean Dice loss of the model over `items`.
pub fn mean_seg_loss(items: &[Prepared], params: &ParameterSet, cfg: &ModelConfig) -> Result<f64, HarnessError> {
    let losses = items
        .par_iter()
        .map(|item| {
            let (pred, _) = forward(&item.image, params, cfg)?;
            Ok(dice_loss(&item.seg_target, &pred.values)?)
        })
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Minibatch Adam with a plateau schedule on the validation seg loss (the
/// epoch's mean training seg loss when `val_set` is empty). Parameters are
/// initialised from `train_cfg.seed`; shuffling and augmentation draw from an
/// independent stream of the same seed.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(HarnessError::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params = ParameterSet::init(model_cfg, &mut rng);
    rng.set_stream(1);

    let prepared = train_set
        .par_iter()
        .map(|s| prepare(s, &train_cfg.generator))
        .collect::<Result<Vec<_>, _>>()?;
    let val = val_set
        .par_iter()
        .map(|s| prepare(s, &train_cfg.generator))
        .collect::<Result<Vec<_>, _>>()?;

    let mut state = AdamState::new(&params);
    let mut schedule = PlateauSchedule::new(train_cfg.lr, train_cfg.lr_decay, train_cfg.plateau_patience);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let step_limit = train_cfg.max_steps.unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..train_cfg.max_epochs {
        if steps.len() >= step_limit {
            break;
        }
        let lr = schedule.lr();
        order.shuffle(&mut rng);
        let mut seg_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch) {
            let augmented;
            let batch: Vec<&Prepared> = if train_cfg.augment {
                let draws: Vec<Augmentation> = chunk.iter().map(|_| Augmentation::random(&mut rng)).collect();
                augmented = chunk
                    .par_iter()
                    .zip(&draws)
                    .map(|(&i, aug)| prepare(&aug.apply(&train_set[i]), &train_cfg.generator))
                    .collect::<Result<Vec<_>, _>>()?;
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &prepared[i]).collect()
            };
            let step = steps.len();
            let (breakdown, grad) = batch_loss_and_grad(&batch, &params, model_cfg).map_err(|e| match e {
                HarnessError::NonFiniteLoss { .. } => HarnessError::NonFiniteLoss { step },
                other => other,
            })?;
            adam_step(&mut params, &grad, &mut state, lr)?;
            seg_sum += breakdown.seg_loss;
            batches += 1;
            steps.push(StepRecord {
                step,
                epoch,
                lr,
                seg_loss: breakdown.seg_loss,
                map_losses: breakdown.map_losses,
                total: breakdown.total,
            });
            if steps.len() >= step_limit {
                finish_epoch(
                    epoch, lr, seg_sum, batches, &val, &params, model_cfg, &mut schedule, &mut best, &mut best_loss,
                    &mut best_epoch, &mut epochs,
                )?;
                break 'epochs;
            }
        }
        finish_epoch(
            epoch, lr, seg_sum, batches, &val, &params, model_cfg, &mut schedule, &mut best, &mut best_loss,
            &mut best_epoch, &mut epochs,
        )?;
    }
    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch,
        steps,
        epochs,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    epoch: usize,
    lr: f64,
    seg_sum: f64,
    batches: usize,
    val: &[Prepared],
    params: &ParameterSet,
    cfg: &ModelConfig,
    schedule: &mut PlateauSchedule,
    best: &mut ParameterSet,
    best_loss: &mut f64,
    best_epoch: &mut Option<usize>,
    epochs: &mut Vec<EpochRecord>,
) -> Result<(), HarnessError> {
    let train_seg_loss = seg_sum / batches.max(1) as f64;
    let val_seg_loss = if val.is_empty() {
        None
    } else {
        Some(mean_seg_loss(val, params, cfg)?)
    };
    let monitored = val_seg_loss.unwrap_or(train_seg_loss);
    if monitored < *best_loss {
        *best_loss = monitored;
        *best = params.clone();
        *best_epoch = Some(epoch);
    }
    schedule.observe(monitored);
    epochs.push(EpochRecord {
        epoch,
        lr,
        train_seg_loss,
        val_seg_loss,
    });
    Ok(())
}

/// Writes records (steps or epochs) as JSON lines.
pub fn write_log<T: Serialize>(path: &Path, records: &[T]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("log records always serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
