use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;
use polyglot_probe::codemix::CodeMixRecord;
use polyglot_probe::tokenize::{TokenId, Vocab, BOS_ID};

use crate::config::CommonArgs;

mod codemix;
mod lens;
mod neurons;
mod stats;
mod synthetic;
mod train;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic lexicons, vocabulary, prompt suites, parallel corpus and dictionaries.
    GenSynthetic(synthetic::Args),
    /// Train the toy transformer on a prompt suite.
    Train(train::Args),
    /// Code-mix a parallel corpus at one or more ratios.
    GenCodemix(codemix::Args),
    /// Per-layer language probability curves and AUCs.
    Lens(lens::Args),
    /// Activation-frequency neuron selection and IoU matrices.
    NeuronFreq(neurons::FreqArgs),
    /// Average-precision neuron classification.
    NeuronAp(neurons::ApArgs),
    /// Grouped rank tests over AUC tables, or per-layer phase analysis over IoU tables.
    Stats(stats::Args),
    /// Corpus BLEU between hypothesis and reference line files.
    Bleu(stats::BleuArgs),
}

pub fn dispatch(common: &CommonArgs, command: &Command) -> Result<()> {
    match command {
        Command::GenSynthetic(a) => synthetic::run(common, a),
        Command::Train(a) => train::run(common, a),
        Command::GenCodemix(a) => codemix::run(common, a),
        Command::Lens(a) => lens::run(common, a),
        Command::NeuronFreq(a) => neurons::run_freq(common, a),
        Command::NeuronAp(a) => neurons::run_ap(common, a),
        Command::Stats(a) => stats::run(common, a),
        Command::Bleu(a) => stats::run_bleu(common, a),
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// `<bos>` plus the encoded text, cut to the model's context.
fn encode_text(vocab: &Vocab, text: &str, max_len: usize) -> Vec<TokenId> {
    let mut t = vec![BOS_ID];
    t.extend(vocab.encode(text));
    t.truncate(max_len);
    t
}

fn pair_tag(r: &CodeMixRecord) -> String {
    format!("{}-{}", r.base_lang, r.mix_lang)
}
