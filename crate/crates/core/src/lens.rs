//! Logit lens: read a provisional next-token distribution off every residual
//! snapshot and aggregate it into per-language probability curves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_csv, write_json};
use crate::model::{Model, ResidualTrace};
use crate::tokenize::{Prompt, PromptTask, SynonymTable, TokenId, Vocab, UNK_ID};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Vocabulary distribution at the final position for layers `0..=n_layers`.
/// The last entry goes through the final norm and equals the model output.
pub fn logit_lens(trace: &ResidualTrace, model: &Model) -> Result<Vec<Array1<f32>>> {
    let cfg = model.config();
    if trace.d_model() != cfg.d_model || trace.n_layers() != cfg.n_layers {
        return Err(Error::DimensionMismatch(format!(
            "trace has {} layers of width {}, model has {} of width {}",
            trace.n_layers(),
            trace.d_model(),
            cfg.n_layers,
            cfg.d_model
        )));
    }
    let last = trace
        .seq_len()
        .checked_sub(1)
        .ok_or_else(|| Error::input("empty trace"))?;
    let n = trace.n_layers();
    let mut out: Vec<Array1<f32>> = trace.snapshots[..n]
        .iter()
        .map(|h| model.unembed_vector(h.row(last)))
        .collect();
    out.push(model.unembed_vector(trace.final_normed.row(last)));
    Ok(out)
}

/// A token listed under more than one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedToken {
    pub token: TokenId,
    pub piece: String,
    pub languages: Vec<String>,
}

/// Distinct first tokens of each language's forms, plus cross-language
/// overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationTokens {
    pub by_language: BTreeMap<String, Vec<TokenId>>,
    pub shared: Vec<SharedToken>,
}

pub fn aggregation_tokens(forms: &BTreeMap<String, Vec<String>>, vocab: &Vocab) -> Result<AggregationTokens> {
    let mut by_language = BTreeMap::new();
    let mut owners: BTreeMap<TokenId, Vec<String>> = BTreeMap::new();
    for (lang, list) in forms {
        let mut ids = BTreeSet::new();
        for form in list {
            match vocab.encode_word(form.trim()).first() {
                Some(&id) if id != UNK_ID => {
                    ids.insert(id);
                }
                _ => {
                    return Err(Error::input(format!(
                        "synonym form {form:?} ({lang}) maps to no vocabulary token"
                    )))
                }
            }
        }
        for &id in &ids {
            owners.entry(id).or_default().push(lang.clone());
        }
        by_language.insert(lang.clone(), ids.into_iter().collect());
    }
    let shared = owners
        .into_iter()
        .filter(|(_, langs)| langs.len() > 1)
        .map(|(token, languages)| SharedToken {
            token,
            piece: vocab.piece(token).unwrap_or_default().to_string(),
            languages,
        })
        .collect();
    Ok(AggregationTokens { by_language, shared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageMass {
    pub raw: BTreeMap<String, f64>,
    /// Same masses with values below the threshold set to 0.
    pub thresholded: BTreeMap<String, f64>,
    pub shared: Vec<SharedToken>,
}

fn mass_from_tokens(dist: &[f32], tokens: &AggregationTokens, threshold: f64) -> LanguageMass {
    let raw: BTreeMap<String, f64> = tokens
        .by_language
        .iter()
        .map(|(lang, ids)| (lang.clone(), ids.iter().map(|&t| f64::from(dist[t as usize])).sum()))
        .collect();
    let thresholded = raw
        .iter()
        .map(|(l, &m)| (l.clone(), if m < threshold { 0.0 } else { m }))
        .collect();
    LanguageMass {
        raw,
        thresholded,
        shared: tokens.shared.clone(),
    }
}

/// Probability mass per language: the sum of `dist` over the distinct first
/// tokens of that language's synonym forms.
pub fn language_mass(
    dist: &[f32],
    forms: &BTreeMap<String, Vec<String>>,
    vocab: &Vocab,
    threshold: f64,
) -> Result<LanguageMass> {
    let tokens = aggregation_tokens(forms, vocab)?;
    if let Some(bad) = tokens
        .by_language
        .values()
        .flatten()
        .find(|&&t| t as usize >= dist.len())
    {
        return Err(Error::DimensionMismatch(format!(
            "token {bad} outside a distribution of size {}",
            dist.len()
        )));
    }
    Ok(mass_from_tokens(dist, &tokens, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensConfig {
    pub threshold: f64,
    /// Languages to track. Empty means every language in the synonym table.
    #[serde(default)]
    pub languages: Vec<String>,
}

impl Default for LensConfig {
    fn default() -> Self {
        LensConfig {
            threshold: DEFAULT_THRESHOLD,
            languages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProbCurve {
    pub task_id: String,
    pub task: PromptTask,
    /// Language → probability per layer `0..=n_layers`.
    pub raw: BTreeMap<String, Vec<f64>>,
    pub thresholded: BTreeMap<String, Vec<f64>>,
    pub shared: Vec<SharedToken>,
}

impl LanguageProbCurve {
    pub fn n_points(&self) -> usize {
        self.raw.values().next().map_or(0, Vec::len)
    }

    /// Raw mass of `lang` at the last layer.
    pub fn final_mass(&self, lang: &str) -> Option<f64> {
        self.raw.get(lang).and_then(|c| c.last().copied())
    }
}

fn tracked_forms(
    synonyms: &SynonymTable,
    task: &PromptTask,
    languages: &[String],
) -> Result<BTreeMap<String, Vec<String>>> {
    let entry = synonyms
        .concept(task.query)
        .ok_or_else(|| Error::input(format!("concept {} missing from the synonym table", task.query)))?;
    if languages.is_empty() {
        return Ok(entry.clone());
    }
    languages
        .iter()
        .map(|l| {
            entry
                .get(l)
                .map(|f| (l.clone(), f.clone()))
                .ok_or_else(|| Error::input(format!("concept {} has no forms for language {l:?}", task.query)))
        })
        .collect()
}

/// Checks that a vocabulary belongs to a model and covers a synonym table.
pub fn check_compatible(model: &Model, vocab: &Vocab, synonyms: &SynonymTable) -> Result<()> {
    if vocab.len() != model.config().vocab_size {
        return Err(Error::DimensionMismatch(format!(
            "vocabulary has {} pieces but the checkpoint expects vocab_size {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    for (_, langs) in synonyms.iter() {
        aggregation_tokens(langs, vocab)?;
    }
    Ok(())
}

/// Per-layer language curves for one prompt, read at its final position.
pub fn run_task(
    model: &Model,
    prompt: &Prompt,
    synonyms: &SynonymTable,
    vocab: &Vocab,
    config: &LensConfig,
) -> Result<LanguageProbCurve> {
    let forms = tracked_forms(synonyms, &prompt.task, &config.languages)?;
    let tokens = aggregation_tokens(&forms, vocab)?;
    let out = model.forward_with_taps(&prompt.tokens)?;
    let dists = logit_lens(&out.residual, model)?;
    let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut thresholded: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for dist in &dists {
        let dist = dist.as_slice().expect("contiguous distribution");
        let m = mass_from_tokens(dist, &tokens, config.threshold);
        for (l, v) in m.raw {
            raw.entry(l).or_default().push(v);
        }
        for (l, v) in m.thresholded {
            thresholded.entry(l).or_default().push(v);
        }
    }
    Ok(LanguageProbCurve {
        task_id: prompt.task.id(),
        task: prompt.task.clone(),
        raw,
        thresholded,
        shared: tokens.shared,
    })
}

/// Trapezoidal area over the layer axis, normalized to `[0, 1]`.
pub fn curve_auc(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::input(format!(
            "AUC needs at least 2 points, got {}",
            curve.len()
        )));
    }
    let area: f64 = curve.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    Ok(area / (curve.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub model: String,
    pub task_id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub language: String,
    pub auc: f64,
    pub auc_thresholded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub task_id: String,
    pub token: TokenId,
    pub piece: String,
    pub languages: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensReport {
    pub model: String,
    pub threshold: f64,
    pub n_layers: usize,
    pub curves: Vec<LanguageProbCurve>,
    pub auc: Vec<AucRow>,
    pub overlaps: Vec<OverlapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow<'a> {
    task_id: &'a str,
    language: &'a str,
    layer: usize,
    prob_raw: f64,
    prob_thresholded: f64,
}

impl LensReport {
    /// Curves CSV: `task_id, language, layer, prob_raw, prob_thresholded`.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for c in &self.curves {
            for (lang, raw) in &c.raw {
                let th = &c.thresholded[lang];
                for (layer, (&r, &t)) in raw.iter().zip(th).enumerate() {
                    rows.push(CurveRow {
                        task_id: &c.task_id,
                        language: lang,
                        layer,
                        prob_raw: r,
                        prob_thresholded: t,
                    });
                }
            }
        }
        write_csv(path, &rows)
    }

    pub fn write_auc_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.auc)
    }

    /// Report JSON without the per-layer curves (they live in the CSV).
    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            model: &'a str,
            threshold: f64,
            n_layers: usize,
            n_tasks: usize,
            auc: &'a [AucRow],
            overlaps: &'a [OverlapRow],
        }
        write_json(
            path,
            &Summary {
                model: &self.model,
                threshold: self.threshold,
                n_layers: self.n_layers,
                n_tasks: self.curves.len(),
                auc: &self.auc,
                overlaps: &self.overlaps,
            },
        )
    }
}

/// Runs every prompt (in parallel) and collects curves, AUCs and overlap
/// diagnostics in task-id order.
pub fn run_lens(
    model: &Model,
    model_tag: &str,
    prompts: &[Prompt],
    synonyms: &SynonymTable,
    vocab: &Vocab,
    config: &LensConfig,
) -> Result<LensReport> {
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(Error::input(format!("threshold {} outside [0, 1]", config.threshold)));
    }
    let mut curves = prompts
        .par_iter()
        .map(|p| run_task(model, p, synonyms, vocab, config))
        .collect::<Result<Vec<_>>>()?;
    curves.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut auc = Vec::new();
    let mut overlaps = Vec::new();
    for c in &curves {
        for (lang, raw) in &c.raw {
            auc.push(AucRow {
                model: model_tag.to_string(),
                task_id: c.task_id.clone(),
                src_lang: c.task.src_lang.clone(),
                tgt_lang: c.task.tgt_lang.clone(),
                language: lang.clone(),
                auc: curve_auc(raw)?,
                auc_thresholded: curve_auc(&c.thresholded[lang])?,
            });
        }
        for s in &c.shared {
            overlaps.push(OverlapRow {
                task_id: c.task_id.clone(),
                token: s.token,
                piece: s.piece.clone(),
                languages: s.languages.join(" "),
            });
        }
    }
    Ok(LensReport {
        model: model_tag.to_string(),
        threshold: config.threshold,
        n_layers: model.config().n_layers,
        curves,
        auc,
        overlaps,
    })
}
