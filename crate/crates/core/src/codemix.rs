//! Rule-based code-mixing: dictionary lookup, seeded word selection at a
//! controlled ratio, and replacement with provenance.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tokenize::{segment, LexiconSet, Segmenter};

/// What to do when a dictionary file repeats a source word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    #[default]
    Strict,
    FirstWins,
}

/// Single-sense word translations from a base language into a mix language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualDictionary {
    pub source_lang: String,
    pub target_lang: String,
    entries: BTreeMap<String, String>,
}

impl BilingualDictionary {
    pub fn new(source_lang: &str, target_lang: &str) -> Result<Self> {
        for tag in [source_lang, target_lang] {
            if tag.trim().is_empty() || tag.chars().any(char::is_whitespace) {
                return Err(Error::input(format!("invalid language tag {tag:?}")));
            }
        }
        Ok(BilingualDictionary {
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
            entries: BTreeMap::new(),
        })
    }

    /// Adds an entry. Returns `false` when the key already existed (the
    /// earlier translation is kept).
    pub fn insert(&mut self, source: &str, target: &str) -> bool {
        if self.entries.contains_key(source) {
            return false;
        }
        self.entries.insert(source.to_string(), target.to_string());
        true
    }

    pub fn from_pairs<'a, I>(source_lang: &str, target_lang: &str, pairs: I, policy: DuplicatePolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut dict = Self::new(source_lang, target_lang)?;
        for (s, t) in pairs {
            if !dict.insert(s, t) && policy == DuplicatePolicy::Strict {
                return Err(Error::input(format!("duplicate dictionary key {s:?}")));
            }
        }
        Ok(dict)
    }

    /// Reads `source<TAB>target` rows. Blank lines are ignored.
    pub fn load_tsv(path: &Path, source_lang: &str, target_lang: &str, policy: DuplicatePolicy) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dict = Self::new(source_lang, target_lang)?;
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(s), Some(t), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(malformed(i + 1, "expected exactly two tab-separated columns".into()));
            };
            let (s, t) = (s.trim(), t.trim());
            if s.is_empty() || t.is_empty() {
                return Err(malformed(i + 1, "empty source or target column".into()));
            }
            if !dict.insert(s, t) && policy == DuplicatePolicy::Strict {
                return Err(malformed(i + 1, format!("duplicate key {s:?}")));
            }
        }
        if dict.is_empty() {
            return Err(Error::input(format!("dictionary {} has no entries", path.display())));
        }
        Ok(dict)
    }

    /// Writes `source<TAB>target` rows in key order.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (s, t) in self.iter() {
            out.push_str(s);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    /// Exact lookup, falling back to the lowercased word.
    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries
            .get(word)
            .or_else(|| self.entries.get(&word.to_lowercase()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(s, t)| (s.as_str(), t.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelRecord {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: String,
    pub tgt: String,
}

/// Loads a JSONL parallel corpus, preserving order.
pub fn load_parallel(path: &Path) -> Result<Vec<ParallelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<ParallelRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ParallelRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if rec.src.trim().is_empty() || rec.tgt.trim().is_empty() {
            return Err(malformed(format!("record {:?} has an empty text", rec.id)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(malformed(format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Denominator used for [`CodeMixRecord::ratio_actual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioDenominator {
    #[default]
    AllTokens,
    Eligible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMixRecord {
    pub id: String,
    pub base_lang: String,
    pub mix_lang: String,
    /// Reference translation carried over from the parallel record.
    pub tgt_lang: String,
    pub ratio_requested: f64,
    pub ratio_actual: f64,
    pub ratio_actual_all_tokens: f64,
    pub ratio_actual_eligible: f64,
    pub n_tokens: usize,
    pub n_eligible: usize,
    pub base_tokens: Vec<String>,
    pub replaced: Vec<usize>,
    pub text: String,
    pub reference: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    NoEligibleTokens,
    LanguageMismatch,
    InvalidRatio,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::NoEligibleTokens => "no eligible tokens",
            SkipReason::LanguageMismatch => "record language differs from dictionary source",
            SkipReason::InvalidRatio => "ratio outside [0, 1]",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub id: String,
    pub ratio: f64,
    pub reason: SkipReason,
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-record RNG stream, independent of record order and thread count.
fn record_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Splits a token into (leading punctuation, core, trailing punctuation).
fn split_punct(token: &str) -> (&str, &str, &str) {
    let core_start = token.find(char::is_alphanumeric).unwrap_or(token.len());
    let core_end = token
        .rfind(char::is_alphanumeric)
        .map_or(core_start, |i| i + token[i..].chars().next().map_or(0, char::len_utf8));
    (&token[..core_start], &token[core_start..core_end], &token[core_end..])
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

/// Separator between two neighbouring output words when at least one of
/// them was replaced.
fn join_sep(sep: &str, left: &str, right: &str) -> String {
    let (Some(l), Some(r)) = (left.chars().last(), right.chars().next()) else {
        return sep.to_string();
    };
    let ws = !sep.is_empty() && sep.chars().all(char::is_whitespace);
    if ws && (is_cjk(l) || is_cjk(r)) && !sep.contains('\n') {
        String::new()
    } else if sep.is_empty() && !is_cjk(l) && !is_cjk(r) && l.is_alphanumeric() && r.is_alphanumeric() {
        " ".to_string()
    } else {
        sep.to_string()
    }
}

/// Mixes one record. Indices to replace are drawn uniformly without
/// replacement from the dictionary-covered tokens.
pub fn generate_codemix(
    record: &ParallelRecord,
    dict: &BilingualDictionary,
    segmenter: &Segmenter,
    ratio: f64,
    seed: u64,
    denominator: RatioDenominator,
) -> std::result::Result<CodeMixRecord, SkipReason> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SkipReason::InvalidRatio);
    }
    if record.src_lang != dict.source_lang {
        return Err(SkipReason::LanguageMismatch);
    }
    let seg = segment(&record.src, segmenter);
    let eligible: Vec<usize> = seg
        .words
        .iter()
        .enumerate()
        .filter(|(_, w)| {
            let core = split_punct(w).1;
            !core.is_empty() && dict.get(core).is_some()
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() && ratio > 0.0 {
        return Err(SkipReason::NoEligibleTokens);
    }
    let n_replace = round_half_up(ratio * eligible.len() as f64).min(eligible.len());
    let mut rng = record_rng(seed, &record.id);
    let mut replaced: Vec<usize> = index::sample(&mut rng, eligible.len(), n_replace)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    replaced.sort_unstable();

    let mut words = seg.words.clone();
    for &i in &replaced {
        let (pre, core, post) = split_punct(&seg.words[i]);
        let translation = dict.get(core).expect("eligible token has an entry");
        words[i] = format!("{pre}{translation}{post}");
    }
    let mut seps = seg.separators.clone();
    for i in 1..words.len() {
        let touched = replaced.binary_search(&(i - 1)).is_ok() || replaced.binary_search(&i).is_ok();
        if touched {
            seps[i] = join_sep(&seg.separators[i], &words[i - 1], &words[i]);
        }
    }
    let text = crate::tokenize::render(&words, &seps);

    let n_tokens = seg.words.len();
    let frac = |d: usize| if d == 0 { 0.0 } else { replaced.len() as f64 / d as f64 };
    let all = frac(n_tokens);
    let elig = frac(eligible.len());
    Ok(CodeMixRecord {
        id: record.id.clone(),
        base_lang: dict.source_lang.clone(),
        mix_lang: dict.target_lang.clone(),
        tgt_lang: record.tgt_lang.clone(),
        ratio_requested: ratio,
        ratio_actual: match denominator {
            RatioDenominator::AllTokens => all,
            RatioDenominator::Eligible => elig,
        },
        ratio_actual_all_tokens: all,
        ratio_actual_eligible: elig,
        n_tokens,
        n_eligible: eligible.len(),
        base_tokens: seg.words,
        replaced,
        text,
        reference: record.tgt.clone(),
        seed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub requested: f64,
    pub generated: usize,
    pub skipped: usize,
    pub mean_ratio_actual: f64,
    pub mean_ratio_actual_all_tokens: f64,
    pub mean_ratio_actual_eligible: f64,
    pub total_eligible: usize,
    pub skip_reasons: BTreeMap<SkipReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMixSummary {
    pub base_lang: String,
    pub mix_lang: String,
    pub input_records: usize,
    pub baselines: usize,
    pub denominator: RatioDenominator,
    pub ratios: Vec<RatioSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMixCorpus {
    pub records: Vec<CodeMixRecord>,
    /// Unmixed copies of the base texts, flagged by `ratio_requested == 0`.
    pub baselines: Vec<CodeMixRecord>,
    pub skipped: Vec<SkipEntry>,
    pub summary: CodeMixSummary,
}

/// Mixes every record at every ratio. Per-record failures become skip
/// entries; only invalid arguments abort.
pub fn generate_corpus(
    corpus: &[ParallelRecord],
    dict: &BilingualDictionary,
    segmenter: &Segmenter,
    ratios: &[f64],
    seed: u64,
    denominator: RatioDenominator,
) -> Result<CodeMixCorpus> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r) || **r == 0.0) {
        return Err(Error::input(format!("mixing ratio {r} must lie in (0, 1]")));
    }
    let per_record: Vec<(CodeMixRecord, Vec<std::result::Result<CodeMixRecord, SkipReason>>)> = corpus
        .par_iter()
        .filter(|rec| rec.src_lang == dict.source_lang)
        .map(|rec| {
            let base = generate_codemix(rec, dict, segmenter, 0.0, seed, denominator)
                .expect("ratio 0 with a matching language never skips");
            let mixed = ratios
                .iter()
                .map(|&r| generate_codemix(rec, dict, segmenter, r, seed, denominator))
                .collect();
            (base, mixed)
        })
        .collect();

    let mut stats: Vec<RatioSummary> = ratios
        .iter()
        .map(|&r| RatioSummary {
            requested: r,
            ..Default::default()
        })
        .collect();
    let mut records = Vec::new();
    let mut baselines = Vec::with_capacity(per_record.len());
    let mut skipped = Vec::new();
    for (base, mixed) in per_record {
        for ((out, s), &r) in mixed.into_iter().zip(stats.iter_mut()).zip(ratios) {
            match out {
                Ok(rec) => {
                    s.generated += 1;
                    s.total_eligible += rec.n_eligible;
                    s.mean_ratio_actual += rec.ratio_actual;
                    s.mean_ratio_actual_all_tokens += rec.ratio_actual_all_tokens;
                    s.mean_ratio_actual_eligible += rec.ratio_actual_eligible;
                    records.push(rec);
                }
                Err(reason) => {
                    s.skipped += 1;
                    s.total_eligible += base.n_eligible;
                    *s.skip_reasons.entry(reason).or_default() += 1;
                    skipped.push(SkipEntry {
                        id: base.id.clone(),
                        ratio: r,
                        reason,
                    });
                }
            }
        }
        baselines.push(base);
    }
    for s in &mut stats {
        if s.generated > 0 {
            let n = s.generated as f64;
            s.mean_ratio_actual /= n;
            s.mean_ratio_actual_all_tokens /= n;
            s.mean_ratio_actual_eligible /= n;
        }
    }
    let summary = CodeMixSummary {
        base_lang: dict.source_lang.clone(),
        mix_lang: dict.target_lang.clone(),
        input_records: baselines.len(),
        baselines: baselines.len(),
        denominator,
        ratios: stats,
    };
    Ok(CodeMixCorpus {
        records,
        baselines,
        skipped,
        summary,
    })
}

/// Dictionary from one synthetic lexicon's main words to another's.
pub fn lexicon_dictionary(lexicons: &LexiconSet, source_lang: &str, target_lang: &str) -> Result<BilingualDictionary> {
    let src = lexicons.lookup(source_lang)?;
    let tgt = lexicons.lookup(target_lang)?;
    BilingualDictionary::from_pairs(
        source_lang,
        target_lang,
        src.words.iter().zip(&tgt.words).map(|(s, t)| (s.as_str(), t.as_str())),
        DuplicatePolicy::Strict,
    )
}

/// Word-aligned parallel sentences: for every base language, `n` sentences
/// of random concepts rendered in the base and, word for word, in `target`.
/// Ids are `{base}-{index:05}`.
pub fn synthetic_parallel(
    lexicons: &LexiconSet,
    bases: &[String],
    target: &str,
    n: usize,
    len: RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<ParallelRecord>> {
    if len.is_empty() || *len.start() == 0 {
        return Err(Error::input(format!(
            "sentence length range {len:?} is empty or starts at 0"
        )));
    }
    let n_concepts = lexicons.n_concepts();
    if n_concepts == 0 {
        return Err(Error::input("lexicons have no concepts"));
    }
    let tgt = lexicons.lookup(target)?;
    let mut out = Vec::with_capacity(n * bases.len());
    for base in bases {
        let src = lexicons.lookup(base)?;
        let mut rng = record_rng(seed, base);
        for i in 0..n {
            let k = rng.random_range(len.clone());
            let concepts: Vec<usize> = (0..k).map(|_| rng.random_range(0..n_concepts)).collect();
            let render = |words: &[String]| {
                concepts
                    .iter()
                    .map(|&c| words[c].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            out.push(ParallelRecord {
                id: format!("{base}-{i:05}"),
                src_lang: base.clone(),
                tgt_lang: target.to_string(),
                src: render(&src.words),
                tgt: render(&tgt.words),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn rec(id: &str, text: &str) -> ParallelRecord {
        ParallelRecord {
            id: id.into(),
            src_lang: "en".into(),
            tgt_lang: "de".into(),
            src: text.into(),
            tgt: "x".into(),
        }
    }

    fn abcd() -> BilingualDictionary {
        BilingualDictionary::from_pairs(
            "en",
            "zz",
            [("a", "A"), ("b", "B"), ("c", "C"), ("d", "D")],
            DuplicatePolicy::Strict,
        )
        .unwrap()
    }

    fn mix(r: &ParallelRecord, d: &BilingualDictionary, ratio: f64, seed: u64) -> CodeMixRecord {
        generate_codemix(r, d, &Segmenter::Whitespace, ratio, seed, RatioDenominator::AllTokens).unwrap()
    }

    #[test]
    fn half_of_four_replaces_two() {
        let out = mix(&rec("1", "a b c d"), &abcd(), 0.5, 9);
        assert_eq!(out.replaced.len(), 2);
        assert_eq!(out.ratio_actual, 0.5);
    }

    #[test]
    fn zero_ratio_is_identity() {
        let out = mix(&rec("1", "a  b, c d."), &abcd(), 0.0, 9);
        assert!(out.replaced.is_empty());
        assert_eq!(out.text, "a  b, c d.");
    }

    #[test]
    fn punctuation_is_kept_and_punctuation_tokens_are_ineligible() {
        let d = BilingualDictionary::from_pairs("en", "zz", [("a", "A"), ("-", "X")], DuplicatePolicy::Strict).unwrap();
        let out = mix(&rec("1", "(a), - q"), &d, 1.0, 1);
        assert_eq!(out.n_eligible, 1);
        assert_eq!(out.text, "(A), - q");
    }

    #[test]
    fn rendering_joins_around_han() {
        let d = BilingualDictionary::from_pairs(
            "en",
            "zh",
            [
                ("hopes", "希望"),
                ("spread", "传播"),
                ("that", "这一"),
                ("message", "理念"),
            ],
            DuplicatePolicy::Strict,
        )
        .unwrap();
        let out = mix(&rec("wb", "The World Bank hopes to spread that message"), &d, 1.0, 42);
        assert_eq!(out.text, "The World Bank希望to传播这一理念");
        assert_eq!(out.replaced, vec![3, 5, 6, 7]);
    }

    #[test]
    fn latin_words_in_unspaced_text_get_a_space() {
        let d = BilingualDictionary::from_pairs(
            "zh",
            "en",
            [("银行", "bank"), ("世界", "world")],
            DuplicatePolicy::Strict,
        )
        .unwrap();
        let seg = Segmenter::longest_match(["世界", "银行", "希望"]).unwrap();
        let r = ParallelRecord {
            src_lang: "zh".into(),
            ..rec("z", "世界银行希望")
        };
        let out = generate_codemix(&r, &d, &seg, 1.0, 0, RatioDenominator::AllTokens).unwrap();
        assert_eq!(out.text, "world bank希望");
    }

    #[test]
    fn no_eligible_tokens_skips() {
        let r = generate_codemix(
            &rec("1", "x y"),
            &abcd(),
            &Segmenter::Whitespace,
            0.5,
            0,
            Default::default(),
        );
        assert_eq!(r.unwrap_err(), SkipReason::NoEligibleTokens);
    }

    #[test]
    fn eligible_denominator() {
        let out = generate_codemix(
            &rec("1", "a b x y"),
            &abcd(),
            &Segmenter::Whitespace,
            0.5,
            0,
            RatioDenominator::Eligible,
        )
        .unwrap();
        assert_eq!(out.replaced.len(), 1);
        assert_eq!(out.ratio_actual, 0.5);
        assert_eq!(out.ratio_actual_all_tokens, 0.25);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.25 * 6.0), 2);
        assert_eq!(round_half_up(0.3 * 5.0), 2);
        assert_eq!(round_half_up(2.49), 2);
    }

    #[test]
    fn dictionary_duplicates() {
        let pairs = [("chat", "cat"), ("chien", "dog"), ("chat", "kitty")];
        assert!(BilingualDictionary::from_pairs("fr", "en", pairs, DuplicatePolicy::Strict).is_err());
        let d = BilingualDictionary::from_pairs("fr", "en", pairs, DuplicatePolicy::FirstWins).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.get("chat"), Some("cat"));
    }

    #[test]
    fn dictionary_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, "chat\tcat\nchien\tdog\n").unwrap();
        assert_eq!(
            BilingualDictionary::load_tsv(&p, "fr", "en", DuplicatePolicy::Strict)
                .unwrap()
                .len(),
            2
        );
        std::fs::write(&p, "").unwrap();
        assert!(BilingualDictionary::load_tsv(&p, "fr", "en", DuplicatePolicy::Strict).is_err());
        std::fs::write(&p, "chat\tcat\nchien\n").unwrap();
        let err = BilingualDictionary::load_tsv(&p, "fr", "en", DuplicatePolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }

    #[test]
    fn parallel_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let line = |id: usize| format!(r#"{{"id":"{id}","src_lang":"en","tgt_lang":"de","src":"a b","tgt":"c"}}"#);
        let mut f = File::create(&p).unwrap();
        for i in 0..10 {
            writeln!(f, "{}", line(i)).unwrap();
        }
        drop(f);
        assert_eq!(load_parallel(&p).unwrap().len(), 10);

        std::fs::write(
            &p,
            format!(
                "{}\n{{\"id\":\"x\",\"src_lang\":\"en\",\"tgt_lang\":\"de\",\"tgt\":\"c\"}}\n",
                line(0)
            ),
        )
        .unwrap();
        let err = load_parallel(&p).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
        assert!(err.to_string().contains("src"));

        std::fs::write(&p, format!("{}\n{}\n", line(3), line(3))).unwrap();
        assert!(load_parallel(&p).unwrap_err().to_string().contains("\"3\""));
    }

    fn synthetic_corpus(n: usize) -> (Vec<ParallelRecord>, BilingualDictionary) {
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let dict = BilingualDictionary::from_pairs(
            "en",
            "zz",
            words.iter().map(|w| (w.as_str(), "T")),
            DuplicatePolicy::Strict,
        )
        .unwrap();
        let corpus = (0..n)
            .map(|i| {
                let len = 3 + i % 11;
                let text: Vec<&str> = (0..len).map(|j| words[(i * 7 + j * 3) % 40].as_str()).collect();
                rec(&format!("r{i}"), &text.join(" "))
            })
            .collect();
        (corpus, dict)
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let (mut corpus, dict) = synthetic_corpus(50);
        corpus.push(rec("empty", "zzz qqq"));
        let run = || {
            generate_corpus(
                &corpus,
                &dict,
                &Segmenter::Whitespace,
                &[0.25, 0.5, 0.75],
                3,
                Default::default(),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a.baselines.len(), 51);
        assert_eq!(a.records.len() + a.skipped.len(), 51 * 3);
        assert_eq!(a.skipped.len(), 3);
        assert!(a
            .baselines
            .iter()
            .all(|b| b.ratio_requested == 0.0 && b.replaced.is_empty()));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&run()).unwrap()
        );
    }

    #[test]
    fn empty_coverage_skips_everything() {
        let (corpus, _) = synthetic_corpus(20);
        let dict = BilingualDictionary::from_pairs("en", "zz", [("nothing", "N")], DuplicatePolicy::Strict).unwrap();
        let out = generate_corpus(&corpus, &dict, &Segmenter::Whitespace, &[0.5], 0, Default::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.summary.ratios[0].total_eligible, 0);
        assert_eq!(out.summary.ratios[0].skipped, 20);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let (corpus, dict) = synthetic_corpus(80);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    generate_corpus(&corpus, &dict, &Segmenter::Whitespace, &[0.5], 11, Default::default()).unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn selection_is_uniform() {
        // 10 eligible tokens at ratio 0.3: each index is picked with p = 0.3.
        let d = abcd();
        let r = rec("u", "a b c d a b c d a b");
        let trials = 4000;
        let mut hits = [0usize; 10];
        for seed in 0..trials {
            for i in mix(&r, &d, 0.3, seed).replaced {
                hits[i] += 1;
            }
        }
        let (n, p) = (trials as f64, 0.3);
        let sigma = (n * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - n * p).abs() < 3.0 * sigma, "{hits:?}");
        }
    }

    proptest! {
        #[test]
        fn replacement_locality_and_count(
            words in proptest::collection::vec("[a-f]{1,2}", 1..30),
            ratio in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let d = BilingualDictionary::from_pairs(
                "en", "zz", [("a", "1"), ("bb", "2"), ("c", "3"), ("de", "4"), ("f", "5")], DuplicatePolicy::Strict,
            ).unwrap();
            let r = rec("p", &words.join(" "));
            match generate_codemix(&r, &d, &Segmenter::Whitespace, ratio, seed, Default::default()) {
                Ok(out) => {
                    prop_assert_eq!(out.replaced.len(), round_half_up(ratio * out.n_eligible as f64));
                    let mixed: Vec<&str> = out.text.split(' ').collect();
                    for (i, w) in words.iter().enumerate() {
                        if out.replaced.contains(&i) {
                            prop_assert_eq!(Some(mixed[i]), d.get(w));
                        } else {
                            prop_assert_eq!(mixed[i], w.as_str());
                        }
                    }
                }
                Err(reason) => prop_assert_eq!(reason, SkipReason::NoEligibleTokens),
            }
        }
    }
    #[test]
    fn synthetic_parallel_is_fully_covered() {
        let set = crate::tokenize::gen_synthetic_languages(&crate::tokenize::default_specs(3, 40, 0, 5)).unwrap();
        let bases = vec!["xa".to_string(), "xb".to_string()];
        let corpus = synthetic_parallel(&set.lexicons, &bases, "xc", 20, 3..=6, 1).unwrap();
        assert_eq!(corpus.len(), 40);
        assert_eq!(
            corpus,
            synthetic_parallel(&set.lexicons, &bases, "xc", 20, 3..=6, 1).unwrap()
        );
        let d = lexicon_dictionary(&set.lexicons, "xa", "xb").unwrap();
        for r in corpus.iter().filter(|r| r.src_lang == "xa") {
            assert_eq!(r.src.split(' ').count(), r.tgt.split(' ').count());
            let out = generate_codemix(r, &d, &Segmenter::Whitespace, 0.5, 3, Default::default()).unwrap();
            assert_eq!(out.n_eligible, out.n_tokens);
        }
    }
}
