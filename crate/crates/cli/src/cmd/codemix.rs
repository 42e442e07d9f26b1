use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polyglot_probe::codemix::{
    generate_corpus, load_parallel, BilingualDictionary, CodeMixSummary, DuplicatePolicy, RatioDenominator, SkipReason,
};
use polyglot_probe::io::{write_json, write_jsonl};
use polyglot_probe::tokenize::Segmenter;
use serde::{Deserialize, Serialize};

use crate::config::{input_error, require, resolve, CommonArgs};
use crate::run::execute;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    /// Parallel corpus (JSONL).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Dictionary as BASE:MIX=PATH (repeatable).
    #[arg(long = "dict")]
    #[serde(rename = "dicts")]
    dict: Vec<String>,
    /// Directory scanned for dict_BASE-MIX.tsv files.
    #[arg(long)]
    dict_dir: Option<PathBuf>,
    /// Mixing ratio in (0, 1] (repeatable).
    #[arg(long = "ratio")]
    #[serde(rename = "ratios")]
    ratio: Vec<f64>,
    #[arg(long, value_parser = ["all-tokens", "eligible"])]
    denominator: Option<String>,
    #[arg(long, value_parser = ["strict", "first-wins"])]
    duplicates: Option<String>,
    /// Base languages segmented by longest dictionary match (repeatable).
    #[arg(long = "longest-match")]
    #[serde(rename = "longest_match")]
    longest_match: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    corpus: Option<PathBuf>,
    dicts: Vec<String>,
    dict_dir: Option<PathBuf>,
    ratios: Vec<f64>,
    denominator: RatioDenominator,
    duplicates: DuplicatePolicy,
    longest_match: Vec<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            corpus: None,
            dicts: Vec::new(),
            dict_dir: None,
            ratios: vec![0.25, 0.5, 0.75],
            denominator: RatioDenominator::default(),
            duplicates: DuplicatePolicy::default(),
            longest_match: Vec::new(),
        }
    }
}

struct DictSpec {
    base: String,
    mix: String,
    path: PathBuf,
}

fn parse_spec(spec: &str) -> Result<DictSpec> {
    let bad = || input_error(format!("dictionary spec {spec:?} is not BASE:MIX=PATH"));
    let (langs, path) = spec.split_once('=').ok_or_else(bad)?;
    let (base, mix) = langs.split_once(':').ok_or_else(bad)?;
    if base.is_empty() || mix.is_empty() || path.is_empty() {
        return Err(bad());
    }
    Ok(DictSpec {
        base: base.into(),
        mix: mix.into(),
        path: path.into(),
    })
}

fn scan_dir(dir: &Path) -> Result<Vec<DictSpec>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("dict_") && n.ends_with(".tsv"))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for n in names {
        let Some((base, mix)) = n["dict_".len()..n.len() - ".tsv".len()].split_once('-') else {
            continue;
        };
        out.push(DictSpec {
            base: base.into(),
            mix: mix.into(),
            path: dir.join(&n),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SkipRow<'a> {
    base_lang: &'a str,
    mix_lang: &'a str,
    id: &'a str,
    ratio: f64,
    reason: SkipReason,
}

pub fn run(common: &CommonArgs, args: &Args) -> Result<()> {
    let resolved = resolve::<Settings, _>("gen-codemix", common, args)?;
    let s = &resolved.settings;
    execute("gen-codemix", &resolved, &s.out, s.threads, |run| {
        if s.ratios.is_empty() {
            return Err(input_error("no mixing ratios given"));
        }
        let corpus_path = require(&s.corpus, "--corpus")?;
        run.input(corpus_path)?;
        let corpus = load_parallel(corpus_path)?;
        let bases: BTreeSet<&str> = corpus.iter().map(|r| r.src_lang.as_str()).collect();

        let mut specs = s.dicts.iter().map(|d| parse_spec(d)).collect::<Result<Vec<_>>>()?;
        if let Some(dir) = &s.dict_dir {
            specs.extend(scan_dir(dir)?.into_iter().filter(|d| bases.contains(d.base.as_str())));
        }
        if specs.is_empty() {
            return Err(input_error("no dictionaries given (use --dict or --dict-dir)"));
        }

        let mut records = Vec::new();
        let mut baselines = Vec::new();
        let mut seen_baselines = BTreeSet::new();
        let mut skipped = Vec::new();
        let mut summaries: Vec<CodeMixSummary> = Vec::new();
        for spec in &specs {
            run.input(&spec.path)?;
            let dict = BilingualDictionary::load_tsv(&spec.path, &spec.base, &spec.mix, s.duplicates)?;
            let segmenter = if s.longest_match.contains(&spec.base) {
                Segmenter::longest_match(dict.iter().map(|(k, _)| k))?
            } else {
                Segmenter::Whitespace
            };
            let out = generate_corpus(&corpus, &dict, &segmenter, &s.ratios, s.seed, s.denominator)?;
            for b in out.baselines {
                if seen_baselines.insert((b.base_lang.clone(), b.id.clone())) {
                    baselines.push(b);
                }
            }
            for e in &out.skipped {
                skipped.push((spec.base.clone(), spec.mix.clone(), e.clone()));
            }
            records.extend(out.records);
            summaries.push(out.summary);
        }
        let skip_rows: Vec<SkipRow> = skipped
            .iter()
            .map(|(b, m, e)| SkipRow {
                base_lang: b,
                mix_lang: m,
                id: &e.id,
                ratio: e.ratio,
                reason: e.reason,
            })
            .collect();
        tracing::info!(
            "{} mixed records, {} baselines, {} skipped",
            records.len(),
            baselines.len(),
            skip_rows.len()
        );
        write_jsonl(&run.output("codemix.jsonl"), &records)?;
        write_jsonl(&run.output("baselines.jsonl"), &baselines)?;
        write_jsonl(&run.output("skipped.jsonl"), &skip_rows)?;
        write_json(&run.output("codemix_summary.json"), &summaries)?;
        Ok(())
    })
}
