use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compute;
use super::Model;
use crate::error::{Error, Result};
use crate::tokenize::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
    pub seed: u64,
    /// Fraction of the corpus (taken from the end) held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f32>,
    /// Linear warmup length in steps.
    #[serde(default)]
    pub warmup: usize,
}

fn default_holdout() -> f64 {
    0.1
}

fn default_clip() -> Option<f32> {
    Some(1.0)
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            lr: 1e-3,
            batch: 8,
            seed: 0,
            holdout_fraction: default_holdout(),
            grad_clip: default_clip(),
            warmup: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    /// Mean per-token training loss of each step's batch.
    pub step_losses: Vec<f64>,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

fn heldout_loss(model: &Model, seqs: &[&Vec<TokenId>]) -> Result<f64> {
    let mut total = 0.0f64;
    let mut n = 0usize;
    for s in seqs {
        model.check_tokens(s)?;
        let cache = compute::forward(&model.weights(), s);
        let (sum, count) = compute::nll_sum(&cache);
        total += sum as f64;
        n += count;
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}

/// Next-token training with Adam.
///
/// The last `holdout_fraction` of the corpus is never trained on and is used
/// to report loss before and after training. Batches are drawn with
/// replacement from the remaining sequences using a ChaCha8 stream seeded
/// with `hyper.seed`. Per-sequence gradients may be computed in parallel but
/// are always summed in batch order, so the result does not depend on the
/// thread count.
pub fn train(model: &Model, corpus: &[Vec<TokenId>], hyper: &TrainConfig) -> Result<(Model, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::input("training corpus is empty"));
    }
    if hyper.batch == 0 {
        return Err(Error::input("batch size must be >= 1"));
    }
    if !(hyper.lr.is_finite() && hyper.lr > 0.0) {
        return Err(Error::input(format!(
            "learning rate must be positive, got {}",
            hyper.lr
        )));
    }
    if !(0.0..1.0).contains(&hyper.holdout_fraction) {
        return Err(Error::input(format!(
            "holdout_fraction must be in [0, 1), got {}",
            hyper.holdout_fraction
        )));
    }
    for s in corpus {
        model.check_tokens(s)?;
    }
    let usable: Vec<&Vec<TokenId>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::input("no training sequence has at least two tokens"));
    }
    let n_hold = if usable.len() < 2 {
        0
    } else {
        ((usable.len() as f64 * hyper.holdout_fraction).round() as usize).clamp(1, usable.len() - 1)
    };
    let (train_set, held) = usable.split_at(usable.len() - n_hold);
    // A single-sequence corpus is evaluated on itself.
    let held: Vec<&Vec<TokenId>> = if held.is_empty() {
        train_set.to_vec()
    } else {
        held.to_vec()
    };

    let initial = heldout_loss(model, &held)?;
    let mut report = TrainReport {
        train_sequences: train_set.len(),
        heldout_sequences: held.len(),
        initial_heldout_loss: initial,
        final_heldout_loss: initial,
        step_losses: Vec::with_capacity(hyper.steps),
    };
    if hyper.steps == 0 {
        return Ok((model.clone(), report));
    }

    let mut params = model.params().to_vec();
    let mut m = vec![0.0f32; params.len()];
    let mut v = vec![0.0f32; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    for step in 0..hyper.steps {
        let picks: Vec<usize> = (0..hyper.batch).map(|_| rng.random_range(0..train_set.len())).collect();
        let n_targets: usize = picks.iter().map(|&i| train_set[i].len() - 1).sum();
        let current = model.with_params(params);
        let parts: Vec<(f32, Vec<f32>)> = picks
            .par_iter()
            .map(|&i| {
                let w = current.weights();
                let cache = compute::forward(&w, train_set[i]);
                let (loss, _) = compute::nll_sum(&cache);
                let mut g = vec![0.0f32; w.layout.total];
                compute::backward(&w, &cache, 1.0, &mut g);
                (loss, g)
            })
            .collect();
        params = current.params;

        let mut grad = vec![0.0f32; params.len()];
        let mut loss_sum = 0.0f64;
        for (loss, g) in &parts {
            loss_sum += *loss as f64;
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
        let loss = loss_sum / n_targets as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        report.step_losses.push(loss);

        let inv = 1.0 / n_targets as f32;
        let mut norm_sq = 0.0f64;
        for g in grad.iter_mut() {
            *g *= inv;
            norm_sq += (*g as f64) * (*g as f64);
        }
        let mut clip = 1.0f32;
        if let Some(max) = hyper.grad_clip {
            let norm = norm_sq.sqrt() as f32;
            if norm > max {
                clip = max / norm;
            }
        }
        let lr = if hyper.warmup > 0 && step < hyper.warmup {
            hyper.lr * (step + 1) as f32 / hyper.warmup as f32
        } else {
            hyper.lr
        };
        let t = (step + 1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            let g = grad[i] * clip;
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }

    let trained = model.with_params(params);
    report.final_heldout_loss = heldout_loss(&trained, &held)?;
    Ok((trained, report))
}
