use std::path::PathBuf;

use anyhow::Result;
use polyglot_probe::io::{read_jsonl, write_json};
use polyglot_probe::model::{save_checkpoint, train, FfnKind, Model, ModelConfig, TrainConfig, TrainReport};
use polyglot_probe::tokenize::{PromptRecord, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::{input_error, require, resolve, CommonArgs};
use crate::run::execute;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    /// Prompt suite (JSONL with answers).
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long, value_parser = ["relu", "gated-silu"])]
    ffn_kind: Option<String>,
    #[arg(long)]
    tied: Option<bool>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    grad_clip: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    prompts: Option<PathBuf>,
    vocab: Option<PathBuf>,
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    max_seq_len: usize,
    ffn_kind: FfnKind,
    tied: bool,
    steps: usize,
    lr: f32,
    batch: usize,
    warmup: usize,
    holdout: f64,
    grad_clip: f32,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            prompts: None,
            vocab: None,
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 64,
            ffn_kind: FfnKind::Relu,
            tied: false,
            steps: 300,
            lr: 0.002,
            batch: 16,
            warmup: 20,
            holdout: 0.05,
            grad_clip: 1.0,
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    n_params: usize,
    fingerprint: String,
    config: &'a ModelConfig,
    train: &'a TrainConfig,
    #[serde(flatten)]
    report: &'a TrainReport,
}

pub fn run(common: &CommonArgs, args: &Args) -> Result<()> {
    let resolved = resolve::<Settings, _>("train", common, args)?;
    let s = &resolved.settings;
    execute("train", &resolved, &s.out, s.threads, |run| {
        let prompts_path = require(&s.prompts, "--prompts")?;
        let vocab_path = require(&s.vocab, "--vocab")?;
        run.input(prompts_path)?;
        run.input(vocab_path)?;
        let vocab = Vocab::load(vocab_path)?;
        let records: Vec<PromptRecord> = read_jsonl(prompts_path)?;
        if records.is_empty() {
            return Err(input_error(format!("{} holds no prompts", prompts_path.display())));
        }
        let corpus: Vec<_> = records.iter().map(PromptRecord::training_sequence).collect();

        let config = ModelConfig {
            n_layers: s.n_layers,
            d_model: s.d_model,
            n_heads: s.n_heads,
            d_ff: s.d_ff,
            vocab_size: vocab.len(),
            max_seq_len: s.max_seq_len,
            ffn_kind: s.ffn_kind,
            tied_unembedding: s.tied,
            seed: s.seed,
        };
        let hyper = TrainConfig {
            steps: s.steps,
            lr: s.lr,
            batch: s.batch,
            seed: s.seed.wrapping_add(1),
            holdout_fraction: s.holdout,
            grad_clip: (s.grad_clip > 0.0).then_some(s.grad_clip),
            warmup: s.warmup,
        };
        let init = Model::init(config.clone())?;
        let (model, report) = train(&init, &corpus, &hyper)?;
        tracing::info!(
            "held-out loss {:.4} -> {:.4} over {} steps",
            report.initial_heldout_loss,
            report.final_heldout_loss,
            s.steps
        );
        save_checkpoint(&model, &run.output("model.ttlm"))?;
        write_json(
            &run.output("train_report.json"),
            &Report {
                n_params: model.n_params(),
                fingerprint: model.fingerprint(),
                config: &config,
                train: &hyper,
                report: &report,
            },
        )?;
        Ok(())
    })
}
