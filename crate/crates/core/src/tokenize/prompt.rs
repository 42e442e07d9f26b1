//! Few-shot word-translation prompts.
//!
//! Layout (one shot per line, `<sep>` between lines):
//!
//! ```text
//! <bos> xa: w1 → xb: w1'
//! xa: w2 → xb: w2'
//! ...
//! xa: q → xb:
//! ```
//!
//! The model's next-token prediction at the final position is the query's
//! translation.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synonyms::ConceptId;
use super::synthetic::{tag_piece, LexiconSet};
use super::vocab::{TokenId, Vocab, ARROW, BOS_ID, SEP_ID};
use crate::error::{Error, Result};

pub const DEFAULT_SHOTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTask {
    pub src_lang: String,
    pub tgt_lang: String,
    pub query: ConceptId,
}

impl PromptTask {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.src_lang, self.tgt_lang, self.query)
    }
}

/// A rendered prompt with the concepts it was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub task: PromptTask,
    pub shots: Vec<ConceptId>,
    pub tokens: Vec<TokenId>,
}

fn piece_id(vocab: &Vocab, piece: &str) -> Result<TokenId> {
    vocab
        .id(piece)
        .ok_or_else(|| Error::input(format!("piece {piece:?} is not in the vocabulary")))
}

pub fn build_prompt(task: &PromptTask, shots: &[ConceptId], lexicons: &LexiconSet, vocab: &Vocab) -> Result<Prompt> {
    if shots.contains(&task.query) {
        return Err(Error::input(format!(
            "query concept {} also appears among the shots",
            task.query
        )));
    }
    for (i, s) in shots.iter().enumerate() {
        if shots[..i].contains(s) {
            return Err(Error::input(format!("shot concept {s} repeated")));
        }
    }
    let src_tag = piece_id(vocab, &tag_piece(&task.src_lang))?;
    let tgt_tag = piece_id(vocab, &tag_piece(&task.tgt_lang))?;
    let arrow = piece_id(vocab, ARROW)?;
    let word = |lang: &str, c: ConceptId| -> Result<TokenId> { piece_id(vocab, lexicons.word(lang, c)?) };

    let mut tokens = vec![BOS_ID];
    for &c in shots {
        tokens.extend([
            src_tag,
            word(&task.src_lang, c)?,
            arrow,
            tgt_tag,
            word(&task.tgt_lang, c)?,
            SEP_ID,
        ]);
    }
    tokens.extend([src_tag, word(&task.src_lang, task.query)?, arrow, tgt_tag]);
    Ok(Prompt {
        task: task.clone(),
        shots: shots.to_vec(),
        tokens,
    })
}

/// Draws `n` distinct shot concepts from `0..n_concepts`, excluding `query`.
pub fn sample_shots<R: Rng>(rng: &mut R, n_concepts: usize, query: ConceptId, n: usize) -> Result<Vec<ConceptId>> {
    if query >= n_concepts || n_concepts - 1 < n {
        return Err(Error::input(format!(
            "cannot draw {n} shots from {n_concepts} concepts excluding {query}"
        )));
    }
    Ok(index::sample(rng, n_concepts - 1, n)
        .into_iter()
        .map(|i| if i >= query { i + 1 } else { i })
        .collect())
}
