use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_samples, SyntheticSpec};
use crate::keypatch::GeneratorConfig;
use crate::loss::{total_loss, LossBreakdown};
use crate::model::{forward, ModelConfig, ParameterSet};

use super::{batch_loss_and_grad, prepare, HarnessError, Prepared};

/// Denominator floor of [`relative_error`]. Central differences of an O(1)
/// loss at h = 1e-5 carry about 1e-10 of round-off, so gradients below this
/// floor are compared on an absolute scale.
pub const ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Number of scalar parameters to probe.
    pub params: usize,
    pub tolerance: f64,
    /// Central-difference half step.
    pub step: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            params: 100,
            tolerance: 1e-4,
            step: 1e-5,
            seed: 0,
            batch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub step: f64,
    pub max_rel_error: f64,
    pub failures: usize,
    pub groups_covered: Vec<String>,
    /// Groups with no path to the loss under this config.
    pub groups_excluded: Vec<String>,
    pub checks: Vec<ParamCheck>,
}

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// The fixed synthetic batch used by [`gradcheck`].
pub fn gradcheck_batch(model_cfg: &ModelConfig, seed: u64, batch: usize) -> Result<Vec<Prepared>, HarnessError> {
    let spec = SyntheticSpec {
        seed,
        count: batch,
        image_side: model_cfg.image_side,
        ..SyntheticSpec::default()
    };
    let generator = GeneratorConfig::default();
    generate_samples(&spec)?.iter().map(|s| prepare(s, &generator)).collect()
}

fn batch_loss(items: &[Prepared], params: &ParameterSet, cfg: &ModelConfig) -> Result<f64, HarnessError> {
    let parts = items
        .iter()
        .map(|item| {
            let (pred, maps) = forward(&item.image, params, cfg)?;
            Ok(total_loss(&item.seg_target, &pred.values, &item.map_target, &maps, cfg.num_maps())?)
        })
        .collect::<Result<Vec<LossBreakdown>, HarnessError>>()?;
    let n = parts.len() as f64;
    let seg = parts.iter().map(|b| b.seg_loss).sum::<f64>() / n;
    let maps = (0..cfg.num_maps())
        .map(|k| parts.iter().map(|b| b.map_losses[k]).sum::<f64>() / n)
        .collect();
    Ok(LossBreakdown::from_parts(seg, maps).total)
}

fn reachable(path: &str, cfg: &ModelConfig) -> bool {
    cfg.boundary_gates || !(path == "boundary_query" || path.contains(".gate."))
}

/// Probes `cfg.params` scalars, cycling through the reachable parameter
/// groups in order and drawing a random index within each, and compares
/// `analytic` against central differences of the batch loss.
pub fn compare_gradients(
    model_cfg: &ModelConfig,
    params: &ParameterSet,
    items: &[Prepared],
    analytic: &ParameterSet,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport, HarnessError> {
    if cfg.params == 0 {
        return Err(HarnessError::Config("gradcheck needs at least one parameter".into()));
    }
    let mut covered = Vec::new();
    let mut excluded = Vec::new();
    let mut groups = Vec::new();
    for (gi, (name, t)) in params.tensors().into_iter().enumerate() {
        if t.is_empty() || !reachable(&name, model_cfg) {
            excluded.push(name);
        } else {
            groups.push((gi, name, t.len()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let picks: Vec<(usize, String, usize)> = (0..cfg.params)
        .map(|i| {
            let (gi, name, len) = &groups[i % groups.len()];
            (*gi, name.clone(), rng.random_range(0..*len))
        })
        .collect();
    for (_, name, _) in picks.iter().take(groups.len()) {
        covered.push(name.clone());
    }
    let analytic_tensors = analytic.tensors();
    let checks = picks
        .par_iter()
        .map(|(gi, path, index)| {
            let mut probe = params.clone();
            let shifted = |probe: &mut ParameterSet, value: f64| {
                probe.tensors_mut()[*gi].1.data[*index] = value;
            };
            let x = params.tensors()[*gi].1.data[*index];
            shifted(&mut probe, x + cfg.step);
            let up = batch_loss(items, &probe, model_cfg)?;
            shifted(&mut probe, x - cfg.step);
            let down = batch_loss(items, &probe, model_cfg)?;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic_tensors[*gi].1.data[*index];
            Ok(ParamCheck {
                path: path.clone(),
                index: *index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    // NaN errors count as failures
    let failures = checks.iter().filter(|c| !(c.rel_error < cfg.tolerance)).count();
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) });
    Ok(GradcheckReport {
        passed: failures == 0,
        tolerance: cfg.tolerance,
        step: cfg.step,
        max_rel_error,
        failures,
        groups_covered: covered,
        groups_excluded: excluded,
        checks,
    })
}

/// Gradient check of the full objective on a fixed synthetic batch with
/// parameters initialised from `cfg.seed`.
pub fn gradcheck(model_cfg: &ModelConfig, cfg: &GradcheckConfig) -> Result<GradcheckReport, HarnessError> {
    model_cfg.validate()?;
    if cfg.batch == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(HarnessError::Config("gradcheck needs batch >= 1, step > 0 and tolerance > 0".into()));
    }
    let params = ParameterSet::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let items = gradcheck_batch(model_cfg, cfg.seed, cfg.batch)?;
    let refs: Vec<&Prepared> = items.iter().collect();
    let (_, analytic) = batch_loss_and_grad(&refs, &params, model_cfg)?;
    compare_gradients(model_cfg, &params, &items, &analytic, cfg)
}
