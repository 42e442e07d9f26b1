//! Few-shot prompt suites for training and evaluating translation.
//!
//! A fraction of concepts is held out as queries: training prompts never
//! ask for them, though their word pairs still appear among the shots.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, Prompt, PromptTask, DEFAULT_SHOTS};
use super::synonyms::ConceptId;
use super::synthetic::LexiconSet;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

/// A prompt plus the token it should be completed with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    #[serde(flatten)]
    pub prompt: Prompt,
    pub answer: TokenId,
}

impl PromptRecord {
    /// Prompt tokens followed by the answer.
    pub fn training_sequence(&self) -> Vec<TokenId> {
        let mut t = self.prompt.tokens.clone();
        t.push(self.answer);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDatasetConfig {
    pub shots: usize,
    pub train_per_query: usize,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for PromptDatasetConfig {
    fn default() -> Self {
        PromptDatasetConfig {
            shots: DEFAULT_SHOTS,
            train_per_query: 4,
            eval_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDataset {
    pub train: Vec<PromptRecord>,
    pub eval: Vec<PromptRecord>,
    pub eval_concepts: Vec<ConceptId>,
}

fn record(
    task: PromptTask,
    pool: &[ConceptId],
    shots: usize,
    rng: &mut ChaCha8Rng,
    lexicons: &LexiconSet,
    vocab: &Vocab,
) -> Result<PromptRecord> {
    let candidates: Vec<ConceptId> = pool.iter().copied().filter(|&c| c != task.query).collect();
    let picked: Vec<ConceptId> = index::sample(rng, candidates.len(), shots)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    let answer = vocab
        .id(lexicons.word(&task.tgt_lang, task.query)?)
        .ok_or_else(|| Error::input(format!("answer for {} is not in the vocabulary", task.id())))?;
    let prompt = build_prompt(&task, &picked, lexicons, vocab)?;
    Ok(PromptRecord { prompt, answer })
}

/// Builds train and eval prompts for every ordered language pair.
pub fn gen_prompt_dataset(lexicons: &LexiconSet, vocab: &Vocab, cfg: &PromptDatasetConfig) -> Result<PromptDataset> {
    let n = lexicons.n_concepts();
    let tags = lexicons.tags();
    if tags.len() < 2 {
        return Err(Error::input("prompt datasets need at least two languages"));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(Error::input(format!(
            "eval_fraction {} outside [0, 1)",
            cfg.eval_fraction
        )));
    }
    if n < cfg.shots + 1 {
        return Err(Error::input(format!(
            "{n} concepts cannot fill {} shots plus a query",
            cfg.shots
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_eval = (cfg.eval_fraction * n as f64).round() as usize;
    let mut order: Vec<ConceptId> = index::sample(&mut rng, n, n).into_vec();
    let mut eval_concepts = order.split_off(n - n_eval);
    eval_concepts.sort_unstable();
    let mut train_concepts = order;
    train_concepts.sort_unstable();
    let all: Vec<ConceptId> = (0..n).collect();

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for src in &tags {
        for tgt in &tags {
            if src == tgt {
                continue;
            }
            let task = |query| PromptTask {
                src_lang: src.clone(),
                tgt_lang: tgt.clone(),
                query,
            };
            for &q in &train_concepts {
                for _ in 0..cfg.train_per_query {
                    train.push(record(task(q), &all, cfg.shots, &mut rng, lexicons, vocab)?);
                }
            }
            for &q in &eval_concepts {
                eval.push(record(task(q), &all, cfg.shots, &mut rng, lexicons, vocab)?);
            }
        }
    }
    // Shuffle so any tail taken as a holdout spans all directions.
    let train = index::sample(&mut rng, train.len(), train.len())
        .into_iter()
        .map(|i| train[i].clone())
        .collect();
    Ok(PromptDataset {
        train,
        eval,
        eval_concepts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{default_specs, gen_synthetic_languages};

    #[test]
    fn split_and_answers() {
        let set = gen_synthetic_languages(&default_specs(2, 30, 0, 1)).unwrap();
        let cfg = PromptDatasetConfig {
            eval_fraction: 0.2,
            train_per_query: 2,
            ..Default::default()
        };
        let ds = gen_prompt_dataset(&set.lexicons, &set.vocab, &cfg).unwrap();
        assert_eq!(ds.eval_concepts.len(), 6);
        assert_eq!(ds.eval.len(), 12);
        assert_eq!(ds.train.len(), 24 * 2 * 2);
        for r in &ds.train {
            assert!(!ds.eval_concepts.contains(&r.prompt.task.query));
            let want = set.lexicons.word(&r.prompt.task.tgt_lang, r.prompt.task.query).unwrap();
            assert_eq!(set.vocab.piece(r.answer), Some(want));
            assert_eq!(r.training_sequence().len(), r.prompt.tokens.len() + 1);
        }
        assert_eq!(ds, gen_prompt_dataset(&set.lexicons, &set.vocab, &cfg).unwrap());
    }

    #[test]
    fn round_trips_through_json() {
        let set = gen_synthetic_languages(&default_specs(2, 10, 0, 1)).unwrap();
        let ds = gen_prompt_dataset(&set.lexicons, &set.vocab, &PromptDatasetConfig::default()).unwrap();
        let line = serde_json::to_string(&ds.eval[0]).unwrap();
        assert!(line.contains("\"answer\""));
        let back: PromptRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ds.eval[0]);
    }
}
