//! Flat parameter layout.
//!
//! Every parameter lives in one contiguous buffer. Tensors are stored in a
//! fixed order, which is also the checkpoint order:
//!
//! ```text
//! tok_embed                [vocab, d_model]
//! pos_embed                [max_seq_len, d_model]
//! layers.{i}.ln1.gain      [d_model]
//! layers.{i}.ln1.bias      [d_model]
//! layers.{i}.attn.wq       [d_model, d_model]
//! layers.{i}.attn.wk       [d_model, d_model]
//! layers.{i}.attn.wv       [d_model, d_model]
//! layers.{i}.attn.wo       [d_model, d_model]
//! layers.{i}.ln2.gain      [d_model]
//! layers.{i}.ln2.bias      [d_model]
//! layers.{i}.ffn.w_in      [d_ff, d_model]    (gate branch for gated-silu)
//! layers.{i}.ffn.b_in      [d_ff]
//! layers.{i}.ffn.w_up      [d_ff, d_model]    (gated-silu only)
//! layers.{i}.ffn.w_out     [d_model, d_ff]
//! layers.{i}.ffn.b_out     [d_model]
//! final_norm.gain          [d_model]
//! final_norm.bias          [d_model]
//! unembed.weight           [vocab, d_model]   (absent when tied)
//! unembed.bias             [vocab]
//! ```
//!
//! Matrices are `[out, in]`, row-major.

use super::config::{FfnKind, ModelConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub(crate) fn kind(&self) -> InitKind {
        if self.name.ends_with(".gain") {
            InitKind::One
        } else if self.shape.len() == 1 {
            InitKind::Zero
        } else {
            InitKind::Uniform
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitKind {
    Uniform,
    Zero,
    One,
}

/// Indices into [`Layout::tensors`] for one transformer block.
#[derive(Debug, Clone)]
pub(crate) struct BlockSlots {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_up: Option<usize>,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub(crate) tok_embed: usize,
    pub(crate) pos_embed: usize,
    pub(crate) blocks: Vec<BlockSlots>,
    pub(crate) final_gain: usize,
    pub(crate) final_bias: usize,
    /// `None` when the unembedding is tied to `tok_embed`.
    pub(crate) unembed: Option<usize>,
    pub(crate) unembed_bias: usize,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let len: usize = shape.iter().product();
        self.tensors.push(TensorSpec {
            name,
            shape,
            offset: self.offset,
        });
        self.offset += len;
        self.tensors.len() - 1
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            tensors: Vec::new(),
            offset: 0,
        };
        let tok_embed = b.push("tok_embed".into(), vec![cfg.vocab_size, d]);
        let pos_embed = b.push("pos_embed".into(), vec![cfg.max_seq_len, d]);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            let ln1_gain = b.push(p("ln1.gain"), vec![d]);
            let ln1_bias = b.push(p("ln1.bias"), vec![d]);
            let wq = b.push(p("attn.wq"), vec![d, d]);
            let wk = b.push(p("attn.wk"), vec![d, d]);
            let wv = b.push(p("attn.wv"), vec![d, d]);
            let wo = b.push(p("attn.wo"), vec![d, d]);
            let ln2_gain = b.push(p("ln2.gain"), vec![d]);
            let ln2_bias = b.push(p("ln2.bias"), vec![d]);
            let w_in = b.push(p("ffn.w_in"), vec![cfg.d_ff, d]);
            let b_in = b.push(p("ffn.b_in"), vec![cfg.d_ff]);
            let w_up = match cfg.ffn_kind {
                FfnKind::Relu => None,
                FfnKind::GatedSilu => Some(b.push(p("ffn.w_up"), vec![cfg.d_ff, d])),
            };
            let w_out = b.push(p("ffn.w_out"), vec![d, cfg.d_ff]);
            let b_out = b.push(p("ffn.b_out"), vec![d]);
            blocks.push(BlockSlots {
                ln1_gain,
                ln1_bias,
                wq,
                wk,
                wv,
                wo,
                ln2_gain,
                ln2_bias,
                w_in,
                b_in,
                w_up,
                w_out,
                b_out,
            });
        }
        let final_gain = b.push("final_norm.gain".into(), vec![d]);
        let final_bias = b.push("final_norm.bias".into(), vec![d]);
        let unembed = if cfg.tied_unembedding {
            None
        } else {
            Some(b.push("unembed.weight".into(), vec![cfg.vocab_size, d]))
        };
        let unembed_bias = b.push("unembed.bias".into(), vec![cfg.vocab_size]);
        Layout {
            total: b.offset,
            tensors: b.tensors,
            tok_embed,
            pos_embed,
            blocks,
            final_gain,
            final_bias,
            unembed,
            unembed_bias,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Slot holding the unembedding matrix (the token embedding when tied).
    pub(crate) fn unembed_slot(&self) -> usize {
        self.unembed.unwrap_or(self.tok_embed)
    }
}
