//! Synthetic languages: one invented word per concept, drawn from a
//! language-private character range so that no two languages share a
//! surface form.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synonyms::{ConceptId, SynonymTable};
use super::vocab::{Vocab, ARROW};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharRange {
    pub first: char,
    pub last: char,
}

impl CharRange {
    pub fn new(first: char, last: char) -> Self {
        CharRange { first, last }
    }

    fn chars(&self) -> Vec<char> {
        (self.first..=self.last).collect()
    }

    fn overlaps(&self, other: &CharRange) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticLanguageSpec {
    pub tag: String,
    pub chars: CharRange,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub concepts: usize,
    /// Extra synonyms generated per concept, on top of the main word.
    #[serde(default)]
    pub synonyms: usize,
    pub seed: u64,
}

/// Words of one language, indexed by concept id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub tag: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexiconSet {
    pub languages: Vec<Lexicon>,
}

impl LexiconSet {
    pub fn get(&self, tag: &str) -> Option<&Lexicon> {
        self.languages.iter().find(|l| l.tag == tag)
    }

    pub fn lookup(&self, tag: &str) -> Result<&Lexicon> {
        self.get(tag)
            .ok_or_else(|| Error::input(format!("unknown language {tag:?}")))
    }

    pub fn word(&self, tag: &str, concept: ConceptId) -> Result<&str> {
        self.lookup(tag)?
            .words
            .get(concept)
            .map(String::as_str)
            .ok_or_else(|| Error::input(format!("concept {concept} does not exist in language {tag:?}")))
    }

    /// Concept count shared by all languages (0 when empty).
    pub fn n_concepts(&self) -> usize {
        self.languages.first().map_or(0, |l| l.words.len())
    }

    pub fn tags(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.tag.clone()).collect()
    }

    /// TSV `surface<TAB>language`, one line per word. Line order within a
    /// language is the concept index.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for lex in &self.languages {
            for w in &lex.words {
                out.push_str(w);
                out.push('\t');
                out.push_str(&lex.tag);
                out.push('\n');
            }
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = LexiconSet::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (surface, tag) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected surface<TAB>language".into(),
            })?;
            if surface.is_empty() || tag.is_empty() || tag.contains('\t') {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected surface<TAB>language".into(),
                });
            }
            match set.languages.iter_mut().find(|l| l.tag == tag) {
                Some(l) => l.words.push(surface.to_string()),
                None => set.languages.push(Lexicon {
                    tag: tag.to_string(),
                    words: vec![surface.to_string()],
                }),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub lexicons: LexiconSet,
    pub synonyms: SynonymTable,
    pub vocab: Vocab,
}

/// Vocabulary piece for a language tag in prompts, e.g. `xa:`.
pub fn tag_piece(tag: &str) -> String {
    format!("{tag}:")
}

fn reserved_char(c: char) -> bool {
    c.is_whitespace() || c.is_control() || matches!(c, ':' | '<' | '>' | '→')
}

/// Generates one lexicon per spec plus the matching synonym table and
/// vocabulary. Deterministic in the specs' seeds.
pub fn gen_synthetic_languages(specs: &[SyntheticLanguageSpec]) -> Result<SyntheticSet> {
    let first = specs
        .first()
        .ok_or_else(|| Error::input("at least one language spec is required"))?;
    let n_concepts = first.concepts;
    let mut seen_tags = HashSet::new();
    for (i, s) in specs.iter().enumerate() {
        if s.concepts != n_concepts {
            return Err(Error::input(format!(
                "language {:?} has {} concepts, expected {n_concepts}",
                s.tag, s.concepts
            )));
        }
        if s.tag.is_empty() || s.tag.chars().any(reserved_char) {
            return Err(Error::input(format!("invalid language tag {:?}", s.tag)));
        }
        if !seen_tags.insert(s.tag.as_str()) {
            return Err(Error::input(format!("duplicate language tag {:?}", s.tag)));
        }
        if s.chars.first > s.chars.last {
            return Err(Error::input(format!("empty character range for {:?}", s.tag)));
        }
        if let Some(c) = s.chars.chars().into_iter().find(|&c| reserved_char(c)) {
            return Err(Error::input(format!(
                "character range of {:?} contains reserved character {c:?}",
                s.tag
            )));
        }
        if s.min_word_len == 0 || s.min_word_len > s.max_word_len {
            return Err(Error::input(format!("invalid word length range for {:?}", s.tag)));
        }
        for other in &specs[..i] {
            if s.chars.overlaps(&other.chars) {
                return Err(Error::input(format!(
                    "character ranges of {:?} and {:?} overlap",
                    other.tag, s.tag
                )));
            }
        }
        let alphabet = s.chars.chars().len() as f64;
        let capacity: f64 = (s.min_word_len..=s.max_word_len).map(|l| alphabet.powi(l as i32)).sum();
        let needed = (n_concepts * (1 + s.synonyms)) as f64;
        // Leave generous headroom so rejection sampling terminates quickly.
        if capacity < 2.0 * needed {
            return Err(Error::input(format!(
                "language {:?} cannot form {needed} distinct words from its character range",
                s.tag
            )));
        }
    }

    let mut lexicons = LexiconSet::default();
    let mut synonyms = SynonymTable::default();
    let mut extra: Vec<Vec<Vec<String>>> = Vec::new();
    for s in specs {
        let alphabet = s.chars.chars();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut used = HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng| loop {
            let len = rng.random_range(s.min_word_len..=s.max_word_len);
            let w: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            if used.insert(w.clone()) {
                return w;
            }
        };
        let mut words = Vec::with_capacity(n_concepts);
        let mut syns = Vec::with_capacity(n_concepts);
        for _ in 0..n_concepts {
            words.push(fresh(&mut rng));
            syns.push((0..s.synonyms).map(|_| fresh(&mut rng)).collect::<Vec<_>>());
        }
        for (c, w) in words.iter().enumerate() {
            let mut forms = vec![w.clone()];
            forms.extend(syns[c].iter().cloned());
            synonyms.insert(c, &s.tag, forms);
        }
        lexicons.languages.push(Lexicon {
            tag: s.tag.clone(),
            words,
        });
        extra.push(syns);
    }

    let mut vocab = Vocab::new();
    for s in specs {
        vocab.add(&tag_piece(&s.tag));
    }
    vocab.add(ARROW);
    for (lex, syns) in lexicons.languages.iter().zip(&extra) {
        for (w, ss) in lex.words.iter().zip(syns) {
            vocab.add(w);
            for s in ss {
                vocab.add(s);
            }
        }
    }
    let mut buf = [0u8; 4];
    for s in specs {
        for c in s.chars.chars() {
            vocab.add(c.encode_utf8(&mut buf));
        }
    }

    Ok(SyntheticSet {
        lexicons,
        synonyms,
        vocab,
    })
}

/// Default two-or-more language family used by the CLI fixture: tags `xa`,
/// `xb`, … over consecutive disjoint Latin/Greek/Cyrillic letter ranges.
pub fn default_specs(n_languages: usize, concepts: usize, synonyms: usize, seed: u64) -> Vec<SyntheticLanguageSpec> {
    const RANGES: [(char, char); 6] = [('a', 'm'), ('n', 'z'), ('α', 'ω'), ('а', 'п'), ('р', 'я'), ('ա', 'ֆ')];
    (0..n_languages.min(RANGES.len()))
        .map(|i| SyntheticLanguageSpec {
            tag: format!("x{}", (b'a' + i as u8) as char),
            chars: CharRange::new(RANGES[i].0, RANGES[i].1),
            min_word_len: 3,
            max_word_len: 6,
            concepts,
            synonyms,
            seed: seed.wrapping_add(i as u64 * 0x9E37_79B9),
        })
        .collect()
}
