//! Lossless word segmentation.
//!
//! Whitespace mode splits on runs of whitespace. Longest-match mode also
//! treats whitespace as a separator, and inside each non-whitespace run emits
//! the longest lexicon entry starting at the cursor, falling back to a single
//! character.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptMode {
    #[default]
    Whitespace,
    LongestMatch,
}

#[derive(Debug, Clone)]
pub enum Segmenter {
    Whitespace,
    LongestMatch { lexicon: HashSet<String>, max_chars: usize },
}

impl Segmenter {
    pub fn longest_match<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lexicon: HashSet<String> = entries
            .into_iter()
            .map(Into::into)
            .filter(|e: &String| !e.is_empty())
            .collect();
        if lexicon.is_empty() {
            return Err(Error::input("longest-match segmentation needs a non-empty lexicon"));
        }
        let max_chars = lexicon.iter().map(|e| e.chars().count()).max().unwrap_or(1);
        Ok(Segmenter::LongestMatch { lexicon, max_chars })
    }

    pub fn mode(&self) -> ScriptMode {
        match self {
            Segmenter::Whitespace => ScriptMode::Whitespace,
            Segmenter::LongestMatch { .. } => ScriptMode::LongestMatch,
        }
    }
}

/// Words plus the separators around them: `separators[i]` precedes
/// `words[i]`, and the final separator trails the last word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub words: Vec<String>,
    pub separators: Vec<String>,
}

impl Segmentation {
    pub fn reconstruct(&self) -> String {
        render(&self.words, &self.separators)
    }
}

/// Interleaves `separators` and `words` (`separators.len() == words.len() + 1`).
pub fn render(words: &[String], separators: &[String]) -> String {
    debug_assert_eq!(separators.len(), words.len() + 1);
    let mut out = String::new();
    for (sep, w) in separators.iter().zip(words) {
        out.push_str(sep);
        out.push_str(w);
    }
    if let Some(last) = separators.last() {
        out.push_str(last);
    }
    out
}

pub fn segment(text: &str, segmenter: &Segmenter) -> Segmentation {
    let mut words = Vec::new();
    let mut separators = Vec::new();
    let mut pending_sep = String::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            pending_sep.push(c);
            chars.next();
            continue;
        }
        let mut end = start;
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        let run = &text[start..end];
        match segmenter {
            Segmenter::Whitespace => {
                separators.push(std::mem::take(&mut pending_sep));
                words.push(run.to_string());
            }
            Segmenter::LongestMatch { lexicon, max_chars } => {
                for w in greedy(run, lexicon, *max_chars) {
                    separators.push(std::mem::take(&mut pending_sep));
                    words.push(w.to_string());
                }
            }
        }
    }
    separators.push(pending_sep);
    Segmentation { words, separators }
}

fn greedy<'a>(run: &'a str, lexicon: &HashSet<String>, max_chars: usize) -> Vec<&'a str> {
    let bounds: Vec<usize> = run
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(run.len()))
        .collect();
    let n = bounds.len() - 1;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < n {
        let longest = max_chars.min(n - pos);
        let take = (1..=longest)
            .rev()
            .find(|&l| lexicon.contains(&run[bounds[pos]..bounds[pos + l]]))
            .unwrap_or(1);
        out.push(&run[bounds[pos]..bounds[pos + take]]);
        pos += take;
    }
    out
}
