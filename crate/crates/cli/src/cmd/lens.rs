use std::path::PathBuf;

use anyhow::Result;
use polyglot_probe::io::read_jsonl;
use polyglot_probe::lens::{check_compatible, run_lens, LensConfig, DEFAULT_THRESHOLD};
use polyglot_probe::model::load_checkpoint;
use polyglot_probe::tokenize::{Prompt, SynonymTable, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::{input_error, require, resolve, CommonArgs};
use crate::run::execute;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Prompt JSONL (extra fields such as answers are ignored).
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Per-language mass below this is zeroed in the thresholded view.
    #[arg(long)]
    threshold: Option<f64>,
    /// Languages to track (repeatable; default all).
    #[arg(long = "language")]
    #[serde(rename = "languages")]
    language: Vec<String>,
    /// Label written into the AUC table's model column.
    #[arg(long)]
    model_tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    model: Option<PathBuf>,
    vocab: Option<PathBuf>,
    synonyms: Option<PathBuf>,
    prompts: Option<PathBuf>,
    threshold: f64,
    languages: Vec<String>,
    model_tag: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            model: None,
            vocab: None,
            synonyms: None,
            prompts: None,
            threshold: DEFAULT_THRESHOLD,
            languages: Vec::new(),
            model_tag: "toy".into(),
        }
    }
}

pub fn run(common: &CommonArgs, args: &Args) -> Result<()> {
    let resolved = resolve::<Settings, _>("lens", common, args)?;
    let s = &resolved.settings;
    execute("lens", &resolved, &s.out, s.threads, |run| {
        let paths = [
            require(&s.model, "--model")?,
            require(&s.vocab, "--vocab")?,
            require(&s.synonyms, "--synonyms")?,
            require(&s.prompts, "--prompts")?,
        ];
        for p in paths {
            run.input(p)?;
        }
        let model = load_checkpoint(paths[0])?;
        let vocab = Vocab::load(paths[1])?;
        let synonyms = SynonymTable::load(paths[2])?;
        check_compatible(&model, &vocab, &synonyms)?;
        let prompts: Vec<Prompt> = read_jsonl(paths[3])?;
        if prompts.is_empty() {
            return Err(input_error(format!("{} holds no prompts", paths[3].display())));
        }
        let cfg = LensConfig {
            threshold: s.threshold,
            languages: s.languages.clone(),
        };
        let report = run_lens(&model, &s.model_tag, &prompts, &synonyms, &vocab, &cfg)?;
        report.write_curves_csv(&run.output("curves.csv"))?;
        report.write_auc_csv(&run.output("auc.csv"))?;
        report.write_summary_json(&run.output("lens_report.json"))?;
        tracing::info!("{} tasks, {} AUC rows", report.curves.len(), report.auc.len());
        Ok(())
    })
}
