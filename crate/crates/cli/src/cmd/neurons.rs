use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use polyglot_probe::codemix::CodeMixRecord;
use polyglot_probe::io::{read_jsonl, write_csv, write_json};
use polyglot_probe::model::{load_checkpoint, Model};
use polyglot_probe::neurons::{
    classify_neurons, count_activations, exclude_universal, iou_matrix, overlap_counts, select_specialized,
    write_classification_csv, write_distribution_csv, write_iou_csvs, write_overlap_csv, write_selection_csv,
    ActivationCountTable, CountingUnit, NeuronSelection, SelectionScope, DEFAULT_K_COUNT, DEFAULT_K_MASS,
};
use polyglot_probe::tokenize::{TokenId, Vocab, PAD_ID};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_text, pair_tag};
use crate::config::{input_error, require, resolve, CommonArgs};
use crate::run::{execute, Run};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct FreqArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Code-mixed records (JSONL) grouped by BASE-MIX pair.
    #[arg(long)]
    codemix: Option<PathBuf>,
    /// Keep only records mixed at this ratio.
    #[arg(long)]
    ratio: Option<f64>,
    /// Activation mass a selection must cover, in (0, 1].
    #[arg(long)]
    k_mass: Option<f64>,
    #[arg(long, value_parser = ["per-layer", "global"])]
    scope: Option<String>,
    #[arg(long, value_parser = ["token", "text"])]
    unit: Option<String>,
    /// Drop neurons selected for every pair.
    #[arg(long)]
    exclude_universal: Option<bool>,
    #[arg(long)]
    model_tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FreqSettings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    model: Option<PathBuf>,
    vocab: Option<PathBuf>,
    codemix: Option<PathBuf>,
    ratio: Option<f64>,
    k_mass: f64,
    scope: SelectionScope,
    unit: CountingUnit,
    exclude_universal: bool,
    model_tag: String,
}

impl Default for FreqSettings {
    fn default() -> Self {
        FreqSettings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            model: None,
            vocab: None,
            codemix: None,
            ratio: None,
            k_mass: DEFAULT_K_MASS,
            scope: SelectionScope::default(),
            unit: CountingUnit::default(),
            exclude_universal: true,
            model_tag: "toy".into(),
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct ApArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    codemix: Option<PathBuf>,
    /// Unmixed texts added to every pair's negatives.
    #[arg(long)]
    baselines: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    /// Neurons per class (shrunk when three classes do not fit).
    #[arg(long)]
    k_count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ApSettings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    model: Option<PathBuf>,
    vocab: Option<PathBuf>,
    codemix: Option<PathBuf>,
    baselines: Option<PathBuf>,
    ratio: Option<f64>,
    k_count: usize,
}

impl Default for ApSettings {
    fn default() -> Self {
        ApSettings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            model: None,
            vocab: None,
            codemix: None,
            baselines: None,
            ratio: None,
            k_count: DEFAULT_K_COUNT,
        }
    }
}

struct Groups {
    /// Encoded texts per pair tag.
    texts: BTreeMap<String, Vec<Vec<TokenId>>>,
    base: BTreeMap<String, String>,
}

fn load_model_and_vocab(run: &mut Run, model: &Option<PathBuf>, vocab: &Option<PathBuf>) -> Result<(Model, Vocab)> {
    let mp = require(model, "--model")?;
    let vp = require(vocab, "--vocab")?;
    run.input(mp)?;
    run.input(vp)?;
    let model = load_checkpoint(mp)?;
    let vocab = Vocab::load(vp)?;
    if vocab.len() != model.config().vocab_size {
        return Err(input_error(format!(
            "vocabulary has {} pieces but the checkpoint expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    Ok((model, vocab))
}

fn load_groups(run: &mut Run, path: &Path, ratio: Option<f64>, vocab: &Vocab, max_len: usize) -> Result<Groups> {
    run.input(path)?;
    let records: Vec<CodeMixRecord> = read_jsonl(path)?;
    let mut g = Groups {
        texts: BTreeMap::new(),
        base: BTreeMap::new(),
    };
    for r in &records {
        if ratio.is_some_and(|x| (r.ratio_requested - x).abs() > 1e-9) {
            continue;
        }
        let tag = pair_tag(r);
        g.base.entry(tag.clone()).or_insert_with(|| r.base_lang.clone());
        g.texts
            .entry(tag)
            .or_default()
            .push(encode_text(vocab, &r.text, max_len));
    }
    if g.texts.is_empty() {
        return Err(input_error(format!("{} has no records to analyse", path.display())));
    }
    Ok(g)
}

#[derive(Serialize)]
struct WithinBaseRow<'a> {
    model: &'a str,
    group: &'a str,
    layer: usize,
    tag_a: &'a str,
    tag_b: &'a str,
    iou: f64,
}

#[derive(Serialize)]
struct TagSummary<'a> {
    tag: &'a str,
    texts: usize,
    units: u64,
    selected_per_layer: Vec<usize>,
    empty_layers: &'a [usize],
    excluded_universal: usize,
}

pub fn run_freq(common: &CommonArgs, args: &FreqArgs) -> Result<()> {
    let resolved = resolve::<FreqSettings, _>("neuron-freq", common, args)?;
    let s = &resolved.settings;
    execute("neuron-freq", &resolved, &s.out, s.threads, |run| {
        let (model, vocab) = load_model_and_vocab(run, &s.model, &s.vocab)?;
        let groups = load_groups(
            run,
            require(&s.codemix, "--codemix")?,
            s.ratio,
            &vocab,
            model.config().max_seq_len,
        )?;
        let tags: Vec<&String> = groups.texts.keys().collect();
        let tables = tags
            .par_iter()
            .map(|t| count_activations(&model, &groups.texts[*t], t, Some(PAD_ID), s.unit))
            .collect::<polyglot_probe::Result<Vec<ActivationCountTable>>>()?;
        let mut selections = tables
            .iter()
            .map(|t| select_specialized(t, s.k_mass, s.scope))
            .collect::<polyglot_probe::Result<Vec<NeuronSelection>>>()?;
        if s.exclude_universal && selections.len() >= 2 {
            selections = exclude_universal(&selections)?.0;
        }
        let report = iou_matrix(&selections);

        write_selection_csv(&run.output("selection.csv"), &tables, &selections)?;
        for name in write_iou_csvs(&s.out, "iou", &report)? {
            run.output(name);
        }
        let mut within = Vec::new();
        for (i, a) in tags.iter().enumerate() {
            for (j, b) in tags.iter().enumerate().skip(i + 1) {
                let group = &groups.base[*a];
                if *group != groups.base[*b] {
                    continue;
                }
                for (layer, m) in report.per_layer.iter().enumerate() {
                    within.push(WithinBaseRow {
                        model: &s.model_tag,
                        group,
                        layer,
                        tag_a: a,
                        tag_b: b,
                        iou: m[i][j],
                    });
                }
            }
        }
        write_csv(&run.output("iou_within_base.csv"), &within)?;

        let summary: Vec<TagSummary> = tags
            .iter()
            .zip(&tables)
            .zip(&selections)
            .map(|((t, table), sel)| TagSummary {
                tag: t,
                texts: groups.texts[*t].len(),
                units: table.total,
                selected_per_layer: sel.selected.iter().map(Vec::len).collect(),
                empty_layers: &sel.empty_layers,
                excluded_universal: sel.excluded_universal.iter().map(Vec::len).sum(),
            })
            .collect();
        write_json(
            &run.output("neuron_freq.json"),
            &serde_json::json!({
                "model": s.model_tag,
                "fingerprint": model.fingerprint(),
                "k_mass": s.k_mass,
                "tags": summary,
                "empty_iou_cells": report.empty_pairs,
            }),
        )?;
        tracing::info!("{} pairs, {} within-base IoU rows", tags.len(), within.len());
        Ok(())
    })
}

#[derive(Serialize)]
struct ApSummary<'a> {
    pair: &'a str,
    k_requested: usize,
    k: usize,
    shrunk: bool,
    n_positive: usize,
    n_negative: usize,
    boundary_ties: usize,
}

pub fn run_ap(common: &CommonArgs, args: &ApArgs) -> Result<()> {
    let resolved = resolve::<ApSettings, _>("neuron-ap", common, args)?;
    let s = &resolved.settings;
    execute("neuron-ap", &resolved, &s.out, s.threads, |run| {
        let (model, vocab) = load_model_and_vocab(run, &s.model, &s.vocab)?;
        let max_len = model.config().max_seq_len;
        let groups = load_groups(run, require(&s.codemix, "--codemix")?, s.ratio, &vocab, max_len)?;
        let baselines: Vec<Vec<TokenId>> = match &s.baselines {
            Some(p) => {
                run.input(p)?;
                read_jsonl::<CodeMixRecord>(p)?
                    .iter()
                    .map(|r| encode_text(&vocab, &r.text, max_len))
                    .collect()
            }
            None => Vec::new(),
        };
        let tags: Vec<&String> = groups.texts.keys().collect();
        let classes = tags
            .iter()
            .map(|tag| {
                let negative: Vec<Vec<TokenId>> = groups
                    .texts
                    .iter()
                    .filter(|(t, _)| t != tag)
                    .flat_map(|(_, v)| v.iter().cloned())
                    .chain(baselines.iter().cloned())
                    .collect();
                classify_neurons(&model, tag, &groups.texts[*tag], &negative, s.k_count, Some(PAD_ID))
            })
            .collect::<polyglot_probe::Result<Vec<_>>>()?;
        let overlap = overlap_counts(&classes)?;

        write_classification_csv(&run.output("classification.csv"), &classes)?;
        write_distribution_csv(&run.output("distribution.csv"), &classes)?;
        write_overlap_csv(&run.output("overlap.csv"), &overlap)?;
        let summary: Vec<ApSummary> = classes
            .iter()
            .map(|c| ApSummary {
                pair: &c.pair,
                k_requested: c.k_requested,
                k: c.k,
                shrunk: c.shrunk,
                n_positive: c.n_positive,
                n_negative: c.n_negative,
                boundary_ties: c.boundary_ties,
            })
            .collect();
        for c in classes.iter().filter(|c| c.shrunk) {
            tracing::warn!("{}: k shrunk from {} to {}", c.pair, c.k_requested, c.k);
        }
        write_json(
            &run.output("neuron_ap.json"),
            &serde_json::json!({
                "fingerprint": model.fingerprint(),
                "pairs": summary,
            }),
        )?;
        Ok(())
    })
}
