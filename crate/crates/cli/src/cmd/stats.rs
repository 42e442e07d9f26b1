use std::path::PathBuf;

use anyhow::Result;
use polyglot_probe::io::{read_csv, write_csv_records, write_json};
use polyglot_probe::lens::AucRow;
use polyglot_probe::stats::{
    bleu_tokens, corpus_bleu, grouped_auc_tests, phase_analysis, Alternative, Grouping, IouRow, PhaseConfig, Smoothing,
    StatResult,
};
use serde::{Deserialize, Serialize};

use crate::config::{input_error, require, resolve, CommonArgs};
use crate::run::execute;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long, value_parser = ["grouped", "phase"])]
    mode: Option<String>,
    /// AUC table from the lens stage (repeatable, one per model).
    #[arg(long = "auc")]
    #[serde(rename = "auc")]
    auc: Vec<PathBuf>,
    #[arg(long, value_parser = ["model-effect", "input-effect", "output-effect"])]
    grouping: Option<String>,
    /// Within-base IoU table from the neuron-freq stage.
    #[arg(long)]
    iou: Option<PathBuf>,
    #[arg(long)]
    group_a: Option<String>,
    #[arg(long)]
    group_b: Option<String>,
    /// First layer of each later phase (repeatable).
    #[arg(long = "boundary")]
    #[serde(rename = "boundaries")]
    boundary: Vec<usize>,
    /// Comparison count for the correction (phase mode; default: layers).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Default two-sided for grouped tests, greater for phases.
    #[arg(long, value_parser = ["two-sided", "greater", "less"])]
    alternative: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Grouped,
    Phase,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    mode: Mode,
    auc: Vec<PathBuf>,
    grouping: Grouping,
    iou: Option<PathBuf>,
    group_a: String,
    group_b: String,
    boundaries: Vec<usize>,
    m: Option<usize>,
    alpha: f64,
    alternative: Option<Alternative>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            mode: Mode::Grouped,
            auc: Vec::new(),
            grouping: Grouping::ModelEffect,
            iou: None,
            group_a: "fr".into(),
            group_b: "zh".into(),
            boundaries: vec![5, 17],
            m: None,
            alpha: 0.05,
            alternative: None,
        }
    }
}

fn marker(r: &StatResult) -> &'static str {
    if r.significant {
        "●"
    } else {
        "○"
    }
}

fn result_cells(r: &StatResult) -> Vec<String> {
    vec![
        r.statistic.to_string(),
        r.p_value.to_string(),
        serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        r.alpha.to_string(),
        r.significant.to_string(),
        marker(r).to_string(),
    ]
}

const RESULT_HEADER: [&str; 6] = [
    "statistic",
    "p_value",
    "method",
    "alpha_corrected",
    "significant",
    "marker",
];

pub fn run(common: &CommonArgs, args: &Args) -> Result<()> {
    let resolved = resolve::<Settings, _>("stats", common, args)?;
    let s = &resolved.settings;
    execute("stats", &resolved, &s.out, s.threads, |run| {
        let (header, records): (Vec<&str>, Vec<Vec<String>>) = match s.mode {
            Mode::Grouped => {
                if s.auc.is_empty() {
                    return Err(input_error("grouped tests need at least one --auc table"));
                }
                let mut rows: Vec<AucRow> = Vec::new();
                for p in &s.auc {
                    run.input(p)?;
                    rows.extend(read_csv::<AucRow>(p)?);
                }
                let alt = s.alternative.unwrap_or(Alternative::TwoSided);
                let report = grouped_auc_tests(&rows, s.grouping, s.alpha, alt)?;
                for sk in &report.skipped {
                    tracing::warn!(
                        "skipped {} {} vs {}: {}",
                        sk.language,
                        sk.group_x,
                        sk.group_y,
                        sk.reason
                    );
                }
                let records = report
                    .tests
                    .iter()
                    .map(|t| {
                        let mut r = vec![
                            t.language.clone(),
                            t.group_x.clone(),
                            t.group_y.clone(),
                            t.mean_x.to_string(),
                            t.mean_y.to_string(),
                        ];
                        r.extend(result_cells(&t.result));
                        r
                    })
                    .collect();
                write_json(&run.output("stats.json"), &report)?;
                let mut h = vec!["language", "group_x", "group_y", "mean_x", "mean_y"];
                h.extend(RESULT_HEADER);
                (h, records)
            }
            Mode::Phase => {
                let p = require(&s.iou, "--iou")?;
                run.input(p)?;
                let rows: Vec<IouRow> = read_csv(p)?;
                let cfg = PhaseConfig {
                    group_a: s.group_a.clone(),
                    group_b: s.group_b.clone(),
                    alpha: s.alpha,
                    alternative: s.alternative.unwrap_or(Alternative::Greater),
                    m: s.m,
                    boundaries: s.boundaries.clone(),
                };
                let report = phase_analysis(&rows, &cfg)?;
                let mut records = Vec::new();
                for m in &report.models {
                    if !m.missing_layers.is_empty() {
                        tracing::warn!("{}: no data for layers {:?}", m.model, m.missing_layers);
                    }
                    for l in &m.layers {
                        let mut r = vec![
                            m.model.clone(),
                            l.layer.to_string(),
                            l.phase.to_string(),
                            l.mean_diff.to_string(),
                            l.cohens_d.map(|d| d.to_string()).unwrap_or_default(),
                        ];
                        r.extend(result_cells(&l.result));
                        records.push(r);
                    }
                }
                write_json(&run.output("stats.json"), &report)?;
                let mut h = vec!["model", "layer", "phase", "mean_diff", "cohens_d"];
                h.extend(RESULT_HEADER);
                (h, records)
            }
        };
        let header: Vec<String> = header.into_iter().map(String::from).collect();
        write_csv_records(&run.output("stats.csv"), &header, &records)?;
        Ok(())
    })
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct BleuArgs {
    /// Hypotheses, one sentence per line.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// References, one sentence per line.
    #[arg(long = "ref")]
    #[serde(rename = "reference")]
    reference: Option<PathBuf>,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long, value_parser = ["none", "add-one-on-zero"])]
    smoothing: Option<String>,
    /// Split Han characters into single tokens.
    #[arg(long)]
    split_han: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BleuSettings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    hyp: Option<PathBuf>,
    reference: Option<PathBuf>,
    max_n: usize,
    smoothing: Smoothing,
    split_han: bool,
}

impl Default for BleuSettings {
    fn default() -> Self {
        BleuSettings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            hyp: None,
            reference: None,
            max_n: 4,
            smoothing: Smoothing::None,
            split_han: true,
        }
    }
}

pub fn run_bleu(common: &CommonArgs, args: &BleuArgs) -> Result<()> {
    let resolved = resolve::<BleuSettings, _>("bleu", common, args)?;
    let s = &resolved.settings;
    execute("bleu", &resolved, &s.out, s.threads, |run| {
        let mut sides = Vec::new();
        for (p, flag) in [(&s.hyp, "--hyp"), (&s.reference, "--ref")] {
            let p = require(p, flag)?;
            run.input(p)?;
            let text = std::fs::read_to_string(p)?;
            let lines: Vec<Vec<String>> = text
                .lines()
                .map(|l| {
                    if s.split_han {
                        bleu_tokens(l)
                    } else {
                        l.split_whitespace().map(String::from).collect()
                    }
                })
                .collect();
            sides.push(lines);
        }
        let result = corpus_bleu(&sides[0], &sides[1], s.max_n, s.smoothing)?;
        tracing::info!("BLEU {:.4}", result.score);
        write_json(&run.output("bleu.json"), &result)?;
        Ok(())
    })
}
