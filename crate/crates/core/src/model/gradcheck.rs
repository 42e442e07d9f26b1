use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compute::{self, Weights};
use super::{FfnKind, Model};
use crate::error::Result;
use crate::tokenize::TokenId;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Seed for choosing which parameters to probe.
    pub seed: u64,
    /// Parameters probed per tensor.
    pub per_tensor: usize,
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so that parameters
    /// with (near) zero gradient are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            per_tensor: 6,
            step: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum GradCheckReport {
    /// The sequence has no next-token target, so the loss has no gradient.
    NotApplicable { reason: String },
    Checked {
        max_rel_error: f64,
        worst_tensor: String,
        checked: usize,
        /// Probes skipped because the perturbation flipped a ReLU on or off,
        /// where the loss is not differentiable.
        skipped_kinks: usize,
    },
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheckReport::Checked { max_rel_error, .. } => Some(*max_rel_error),
            GradCheckReport::NotApplicable { .. } => None,
        }
    }
}

fn loss_f64(w: &Weights<f64>, tokens: &[TokenId]) -> (f64, Vec<bool>) {
    let cache = compute::forward(w, tokens);
    let (sum, n) = compute::nll_sum(&cache);
    let pattern = if w.cfg.ffn_kind == FfnKind::Relu {
        cache
            .blocks
            .iter()
            .flat_map(|b| b.pre.iter().map(|&u| u > 0.0))
            .collect()
    } else {
        Vec::new()
    };
    (sum / n as f64, pattern)
}

/// Compares the analytic gradient of the mean next-token loss against
/// central finite differences, everything in f64.
pub fn gradient_check(model: &Model, tokens: &[TokenId], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    model.check_tokens(tokens)?;
    if tokens.len() < 2 {
        return Ok(GradCheckReport::NotApplicable {
            reason: "sequence of length 1 has no next-token target".into(),
        });
    }
    let layout = model.layout();
    let mut params: Vec<f64> = model.params().iter().map(|&v| v as f64).collect();
    let n_targets = (tokens.len() - 1) as f64;

    let mut analytic = vec![0.0f64; params.len()];
    let base_pattern = {
        let w = Weights {
            cfg: model.config(),
            layout,
            data: &params,
        };
        let cache = compute::forward(&w, tokens);
        compute::backward(&w, &cache, 1.0 / n_targets, &mut analytic);
        loss_f64(&w, tokens).1
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0;
    let mut skipped = 0;
    for spec in &layout.tensors {
        let range = spec.range();
        for _ in 0..cfg.per_tensor {
            let idx = rng.random_range(range.clone());
            let orig = params[idx];
            params[idx] = orig + cfg.step;
            let (plus, pat_plus) = loss_f64(
                &Weights {
                    cfg: model.config(),
                    layout,
                    data: &params,
                },
                tokens,
            );
            params[idx] = orig - cfg.step;
            let (minus, pat_minus) = loss_f64(
                &Weights {
                    cfg: model.config(),
                    layout,
                    data: &params,
                },
                tokens,
            );
            params[idx] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            checked += 1;
            if rel > max_rel || checked == 1 {
                max_rel = rel;
                worst = spec.name.clone();
            }
        }
    }
    Ok(GradCheckReport::Checked {
        max_rel_error: max_rel,
        worst_tensor: worst,
        checked,
        skipped_kinks: skipped,
    })
}
