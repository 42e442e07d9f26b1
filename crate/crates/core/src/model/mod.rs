//! Instrumented toy decoder-only transformer.
//!
//! Pre-norm blocks with learned positional embeddings and a separate (or tied)
//! unembedding. The residual stream is tapped at every block exit, before any
//! normalization; snapshot 0 is the embedding output.

mod checkpoint;
pub(crate) mod compute;
mod config;
mod gradcheck;
mod layout;
mod train;

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use compute::Real;
pub use config::{FfnKind, ModelConfig};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use layout::{Layout, TensorSpec};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tokenize::TokenId;
use compute::Weights;
use layout::InitKind;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Arc<Layout>,
    params: Vec<f32>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Residual stream snapshots for one forward pass.
#[derive(Debug, Clone)]
pub struct ResidualTrace {
    /// `n_layers + 1` matrices of shape `[seq, d_model]`: the embedding output
    /// followed by each block's exit, all before normalization.
    pub snapshots: Vec<Array2<f32>>,
    /// Final snapshot after the final layer norm.
    pub final_normed: Array2<f32>,
}

impl ResidualTrace {
    pub fn n_layers(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn seq_len(&self) -> usize {
        self.final_normed.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.final_normed.ncols()
    }
}

/// Post-nonlinearity FFN activations for one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// One `[seq, d_ff]` matrix per layer.
    pub layers: Vec<Array2<f32>>,
    /// `true` where the position holds a padding token.
    pub pad_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Next-token distribution per position, `[seq, vocab]`.
    pub probs: Array2<f32>,
    pub residual: ResidualTrace,
    pub activations: ActivationTrace,
}

impl Model {
    /// Builds a model with seeded scaled-uniform weights: every matrix
    /// (embeddings included) is drawn from `U(−1/√d_model, 1/√d_model)` in
    /// layout order from a ChaCha8 stream seeded with `config.seed`; biases
    /// start at 0 and norm gains at 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.d_model as f32).sqrt();
        let mut params = vec![0.0f32; layout.total];
        for spec in &layout.tensors {
            let dst = &mut params[spec.range()];
            match spec.kind() {
                InitKind::Uniform => {
                    for v in dst.iter_mut() {
                        *v = (rng.random::<f32>() * 2.0 - 1.0) * scale;
                    }
                }
                InitKind::Zero => dst.fill(0.0),
                InitKind::One => dst.fill(1.0),
            }
        }
        Ok(Model {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    /// Assembles a model from an explicit parameter buffer in layout order.
    pub fn from_params(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch(format!(
                "parameter buffer has {} values, config requires {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Model {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        let spec = self
            .layout
            .find(name)
            .ok_or_else(|| Error::input(format!("no tensor named {name:?}")))?;
        Ok(&self.params[spec.range()])
    }

    /// Mutable access for handcrafting weights.
    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [f32]> {
        let spec = self
            .layout
            .find(name)
            .ok_or_else(|| Error::input(format!("no tensor named {name:?}")))?
            .clone();
        Ok(&mut self.params[spec.range()])
    }

    /// SHA-256 over the config JSON and raw parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn weights(&self) -> Weights<'_, f32> {
        Weights {
            cfg: &self.config,
            layout: &self.layout,
            data: &self.params,
        }
    }

    pub(crate) fn with_params(&self, params: Vec<f32>) -> Model {
        debug_assert_eq!(params.len(), self.params.len());
        Model {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            params,
        }
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::input("empty token sequence"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some((position, &token)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token,
                position,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Forward pass capturing the residual stream and FFN activations.
    pub fn forward_with_taps(&self, tokens: &[TokenId]) -> Result<ForwardOutput> {
        self.forward_masked(tokens, None)
    }

    /// Like [`Model::forward_with_taps`], marking positions holding `pad_id`
    /// in the activation trace's pad mask.
    pub fn forward_masked(&self, tokens: &[TokenId], pad_id: Option<TokenId>) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        let cache = compute::forward(&self.weights(), tokens);
        let mut snapshots = Vec::with_capacity(self.config.n_layers + 1);
        snapshots.push(cache.x0.clone());
        let mut layers = Vec::with_capacity(self.config.n_layers);
        for b in &cache.blocks {
            snapshots.push(b.x_out.clone());
            layers.push(b.act.clone());
        }
        let pad_mask = tokens.iter().map(|&t| Some(t) == pad_id).collect();
        Ok(ForwardOutput {
            probs: cache.probs,
            residual: ResidualTrace {
                snapshots,
                final_normed: cache.y,
            },
            activations: ActivationTrace { layers, pad_mask },
        })
    }

    /// Mean next-token negative log-likelihood of `tokens` (`None` when the
    /// sequence has no targets).
    pub fn loss(&self, tokens: &[TokenId]) -> Result<Option<f64>> {
        self.check_tokens(tokens)?;
        let cache = compute::forward(&self.weights(), tokens);
        let (sum, n) = compute::nll_sum(&cache);
        Ok((n > 0).then(|| sum as f64 / n as f64))
    }

    /// Applies the final layer norm to residual rows.
    pub fn final_norm(&self, h: &Array2<f32>) -> Array2<f32> {
        let w = self.weights();
        compute::layer_norm(h.view(), w.vec(self.layout.final_gain), w.vec(self.layout.final_bias)).0
    }

    /// `softmax(U h + b)` for each row of `h`.
    pub fn unembed(&self, h: &Array2<f32>) -> Array2<f32> {
        compute::unembed_probs(&self.weights(), h.view())
    }

    /// `softmax(U h + b)` for a single hidden vector.
    pub fn unembed_vector(&self, h: ArrayView1<f32>) -> Array1<f32> {
        let row = h.insert_axis(Axis(0));
        compute::unembed_probs(&self.weights(), row).row(0).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(kind: FfnKind, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 11,
            max_seq_len: 10,
            ffn_kind: kind,
            tied_unembedding: false,
            seed,
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::init(tiny(FfnKind::Relu, 7)).unwrap();
        let b = Model::init(tiny(FfnKind::Relu, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_differs() {
        let a = Model::init(tiny(FfnKind::Relu, 7)).unwrap();
        let b = Model::init(tiny(FfnKind::Relu, 8)).unwrap();
        let differing = a
            .layout()
            .tensors
            .iter()
            .filter(|t| a.tensor(&t.name).unwrap() != b.tensor(&t.name).unwrap())
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn init_rejects_bad_heads() {
        let cfg = ModelConfig {
            d_model: 6,
            n_heads: 4,
            ..tiny(FfnKind::Relu, 1)
        };
        assert!(matches!(Model::init(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn init_scale_bounds() {
        let m = Model::init(tiny(FfnKind::GatedSilu, 3)).unwrap();
        let bound = 1.0 / (8.0f32).sqrt();
        assert!(m.tensor("layers.0.attn.wq").unwrap().iter().all(|v| v.abs() <= bound));
        assert!(m.tensor("layers.1.ffn.b_in").unwrap().iter().all(|&v| v == 0.0));
        assert!(m.tensor("final_norm.gain").unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn distributions_normalized_and_traces_shaped() {
        for kind in [FfnKind::Relu, FfnKind::GatedSilu] {
            let m = Model::init(tiny(kind, 11)).unwrap();
            let out = m.forward_with_taps(&[1, 4, 2, 9, 0]).unwrap();
            for row in out.probs.rows() {
                let s: f64 = row.iter().map(|&p| p as f64).sum();
                assert!((s - 1.0).abs() < 1e-6, "{s}");
            }
            assert_eq!(out.residual.snapshots.len(), 3);
            assert_eq!(out.activations.layers.len(), 2);
            for a in &out.activations.layers {
                assert_eq!(a.dim(), (5, 12));
                assert!(a.iter().all(|v| v.is_finite()));
                if kind == FfnKind::Relu {
                    assert!(a.iter().all(|&v| v >= 0.0));
                }
            }
            for s in &out.residual.snapshots {
                assert_eq!(s.dim(), (5, 8));
                assert!(s.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let m = Model::init(tiny(FfnKind::GatedSilu, 5)).unwrap();
        let a = m.forward_with_taps(&[3, 1, 4, 1, 5]).unwrap();
        let b = m.forward_with_taps(&[3, 1, 4, 1, 5]).unwrap();
        let bits = |x: &Array2<f32>| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.probs), bits(&b.probs));
        for (x, y) in a.residual.snapshots.iter().zip(&b.residual.snapshots) {
            assert_eq!(bits(x), bits(y));
        }
        for (x, y) in a.activations.layers.iter().zip(&b.activations.layers) {
            assert_eq!(bits(x), bits(y));
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 2,
            n_heads: 1,
            d_ff: 3,
            vocab_size: 5,
            max_seq_len: 4,
            ffn_kind: FfnKind::Relu,
            tied_unembedding: false,
            seed: 0,
        };
        let total = Layout::new(&cfg).total;
        let m = Model::from_params(cfg, vec![0.0; total]).unwrap();
        let out = m.forward_with_taps(&[0, 3, 1]).unwrap();
        for &p in out.probs.iter() {
            assert!((p - 0.2).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_tokens_and_lengths() {
        let m = Model::init(tiny(FfnKind::Relu, 1)).unwrap();
        assert!(matches!(
            m.forward_with_taps(&[1, 11]),
            Err(Error::TokenOutOfRange {
                token: 11,
                position: 1,
                ..
            })
        ));
        assert!(matches!(
            m.forward_with_taps(&[1; 11]),
            Err(Error::SequenceTooLong { len: 11, max: 10 })
        ));
    }

    #[test]
    fn pad_mask_marks_pad_positions() {
        let m = Model::init(tiny(FfnKind::Relu, 1)).unwrap();
        let out = m.forward_masked(&[5, 0, 3, 0], Some(0)).unwrap();
        assert_eq!(out.activations.pad_mask, vec![false, true, false, true]);
    }

    #[test]
    fn tied_model_runs() {
        let cfg = ModelConfig {
            tied_unembedding: true,
            ..tiny(FfnKind::Relu, 2)
        };
        let m = Model::init(cfg).unwrap();
        let out = m.forward_with_taps(&[1, 2, 3]).unwrap();
        let s: f32 = out.probs.row(2).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
