use std::path::PathBuf;

use anyhow::Result;
use polyglot_probe::codemix::{lexicon_dictionary, synthetic_parallel};
use polyglot_probe::io::{write_json, write_jsonl};
use polyglot_probe::tokenize::{default_specs, gen_prompt_dataset, gen_synthetic_languages, PromptDatasetConfig};
use serde::{Deserialize, Serialize};

use crate::config::{input_error, resolve, CommonArgs};
use crate::run::execute;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    languages: Option<usize>,
    #[arg(long)]
    concepts: Option<usize>,
    /// Extra synonyms per concept.
    #[arg(long)]
    synonyms: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    train_per_query: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    /// Parallel sentences per base language.
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    min_sentence_len: Option<usize>,
    #[arg(long)]
    max_sentence_len: Option<usize>,
    /// Translation side of the parallel corpus (default: the last language).
    #[arg(long)]
    target_lang: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    seed: u64,
    out: PathBuf,
    threads: usize,
    languages: usize,
    concepts: usize,
    synonyms: usize,
    shots: usize,
    train_per_query: usize,
    eval_fraction: f64,
    sentences: usize,
    min_sentence_len: usize,
    max_sentence_len: usize,
    target_lang: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        let ds = PromptDatasetConfig::default();
        Settings {
            seed: 0,
            out: super::default_out(),
            threads: 0,
            languages: 4,
            concepts: 120,
            synonyms: 1,
            shots: ds.shots,
            train_per_query: ds.train_per_query,
            eval_fraction: ds.eval_fraction,
            sentences: 200,
            min_sentence_len: 4,
            max_sentence_len: 10,
            target_lang: None,
        }
    }
}

pub fn run(common: &CommonArgs, args: &Args) -> Result<()> {
    let resolved = resolve::<Settings, _>("gen-synthetic", common, args)?;
    let s = &resolved.settings;
    execute("gen-synthetic", &resolved, &s.out, s.threads, |run| {
        if s.languages < 2 {
            return Err(input_error("at least two languages are required"));
        }
        let specs = default_specs(s.languages, s.concepts, s.synonyms, s.seed);
        if specs.len() < s.languages {
            return Err(input_error(format!(
                "at most {} synthetic languages are available",
                specs.len()
            )));
        }
        let set = gen_synthetic_languages(&specs)?;
        let tags = set.lexicons.tags();

        write_json(&run.output("languages.json"), &specs)?;
        set.lexicons.save_tsv(&run.output("lexicon.tsv"))?;
        set.synonyms.save(&run.output("synonyms.json"))?;
        set.vocab.save(&run.output("vocab.json"))?;

        let ds = gen_prompt_dataset(
            &set.lexicons,
            &set.vocab,
            &PromptDatasetConfig {
                shots: s.shots,
                train_per_query: s.train_per_query,
                eval_fraction: s.eval_fraction,
                seed: s.seed,
            },
        )?;
        write_jsonl(&run.output("train_prompts.jsonl"), &ds.train)?;
        write_jsonl(&run.output("eval_prompts.jsonl"), &ds.eval)?;

        let target = match &s.target_lang {
            Some(t) if tags.contains(t) => t.clone(),
            Some(t) => return Err(input_error(format!("target language {t:?} is not one of {tags:?}"))),
            None => tags.last().cloned().expect("two or more languages"),
        };
        let bases: Vec<String> = tags.iter().filter(|t| **t != target).cloned().collect();
        let parallel = synthetic_parallel(
            &set.lexicons,
            &bases,
            &target,
            s.sentences,
            s.min_sentence_len..=s.max_sentence_len,
            s.seed,
        )?;
        write_jsonl(&run.output("parallel.jsonl"), &parallel)?;

        for a in &tags {
            for b in tags.iter().filter(|b| *b != a) {
                lexicon_dictionary(&set.lexicons, a, b)?.save_tsv(&run.output(format!("dict_{a}-{b}.tsv")))?;
            }
        }
        tracing::info!(
            "{} languages, {} train / {} eval prompts, {} parallel sentences",
            tags.len(),
            ds.train.len(),
            ds.eval.len(),
            parallel.len()
        );
        Ok(())
    })
}
