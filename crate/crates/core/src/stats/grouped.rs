//! Batteries of rank tests over AUC tables (model and task effects) and
//! per-layer IoU tables (base-language phases).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{bonferroni, cohens_d, mann_whitney_u, mean, spearman, Alternative, SpearmanResult, StatResult};
use crate::error::{Error, Result};
use crate::lens::AucRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Per language and model pair: AUCs under model A vs model B.
    ModelEffect,
    /// Per language and model: tasks with the language as input vs tasks
    /// where it is neither input nor output.
    InputEffect,
    /// Same, with the language as output.
    OutputEffect,
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model-effect" => Ok(Grouping::ModelEffect),
            "input-effect" => Ok(Grouping::InputEffect),
            "output-effect" => Ok(Grouping::OutputEffect),
            _ => Err(Error::input(format!(
                "unknown grouping {s:?} (model-effect, input-effect, output-effect)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedTest {
    pub language: String,
    pub group_x: String,
    pub group_y: String,
    pub mean_x: f64,
    pub mean_y: f64,
    pub result: StatResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedComparison {
    pub language: String,
    pub group_x: String,
    pub group_y: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub grouping: Grouping,
    pub alternative: Alternative,
    pub alpha: f64,
    /// Number of comparisons used for the correction.
    pub m: usize,
    pub alpha_corrected: f64,
    pub tests: Vec<GroupedTest>,
    pub skipped: Vec<SkippedComparison>,
}

/// Mann-Whitney U per language between the two groups of the chosen
/// grouping, Bonferroni-corrected.
///
/// `m` counts the comparison family: languages × model pairs for model
/// effects, languages × models × 2 (input and output) for task effects.
pub fn grouped_auc_tests(
    rows: &[AucRow],
    grouping: Grouping,
    alpha: f64,
    alternative: Alternative,
) -> Result<GroupedReport> {
    if rows.is_empty() {
        return Err(Error::input("empty AUC table"));
    }
    let languages: BTreeSet<&str> = rows.iter().map(|r| r.language.as_str()).collect();
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let models: Vec<&str> = models.into_iter().collect();

    // (label_x, label_y, filter_x, filter_y) per comparison.
    type Pick<'a> = Box<dyn Fn(&AucRow) -> bool + 'a>;
    let mut comparisons: Vec<(String, String, String, Pick, Pick)> = Vec::new();
    let m = match grouping {
        Grouping::ModelEffect => {
            let mut pairs = Vec::new();
            for (i, a) in models.iter().enumerate() {
                for b in &models[i + 1..] {
                    pairs.push((*a, *b));
                }
            }
            if pairs.is_empty() {
                return Err(Error::input("model-effect tests need at least two models"));
            }
            for &lang in &languages {
                for &(a, b) in &pairs {
                    comparisons.push((
                        lang.to_string(),
                        a.to_string(),
                        b.to_string(),
                        Box::new(move |r: &AucRow| r.model == a && r.language == lang),
                        Box::new(move |r: &AucRow| r.model == b && r.language == lang),
                    ));
                }
            }
            languages.len() * pairs.len()
        }
        Grouping::InputEffect | Grouping::OutputEffect => {
            let input = grouping == Grouping::InputEffect;
            let role = if input { "input" } else { "output" };
            for &lang in &languages {
                for &model in &models {
                    let present = move |r: &AucRow| {
                        r.model == model
                            && r.language == lang
                            && if input { r.src_lang == lang } else { r.tgt_lang == lang }
                    };
                    let absent = move |r: &AucRow| {
                        r.model == model && r.language == lang && r.src_lang != lang && r.tgt_lang != lang
                    };
                    comparisons.push((
                        lang.to_string(),
                        format!("{model}:{role}"),
                        format!("{model}:absent"),
                        Box::new(present),
                        Box::new(absent),
                    ));
                }
            }
            languages.len() * models.len() * 2
        }
    };
    let alpha_corrected = bonferroni(alpha, m)?;
    let mut tests = Vec::new();
    let mut skipped = Vec::new();
    for (language, group_x, group_y, fx, fy) in comparisons {
        let x: Vec<f64> = rows.iter().filter(|r| fx(r)).map(|r| r.auc).collect();
        let y: Vec<f64> = rows.iter().filter(|r| fy(r)).map(|r| r.auc).collect();
        if x.is_empty() || y.is_empty() {
            skipped.push(SkippedComparison {
                reason: format!("empty group ({} vs {} values)", x.len(), y.len()),
                language,
                group_x,
                group_y,
            });
            continue;
        }
        let result = mann_whitney_u(&x, &y, alternative)?.with_alpha(alpha_corrected);
        tests.push(GroupedTest {
            language,
            group_x,
            group_y,
            mean_x: mean(&x),
            mean_y: mean(&y),
            result,
        });
    }
    Ok(GroupedReport {
        grouping,
        alternative,
        alpha,
        m,
        alpha_corrected,
        tests,
        skipped,
    })
}

/// One IoU value of a tag pair inside a base-language group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouRow {
    pub model: String,
    pub group: String,
    pub layer: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub group_a: String,
    pub group_b: String,
    pub alpha: f64,
    #[serde(default = "greater")]
    pub alternative: Alternative,
    /// Comparison count for the correction; defaults to the number of layers.
    #[serde(default)]
    pub m: Option<usize>,
    pub boundaries: Vec<usize>,
}

fn greater() -> Alternative {
    Alternative::Greater
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            group_a: "fr".into(),
            group_b: "zh".into(),
            alpha: 0.05,
            alternative: Alternative::Greater,
            m: None,
            boundaries: vec![5, 17],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPhase {
    pub layer: usize,
    /// Index of the phase (split by the boundaries) this layer falls in.
    pub phase: usize,
    pub mean_diff: f64,
    pub cohens_d: Option<f64>,
    pub result: StatResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPhase {
    pub model: String,
    pub n_layers: usize,
    pub alpha_corrected: f64,
    pub layers: Vec<LayerPhase>,
    pub significant_layers: usize,
    /// Spearman correlation of the mean difference with the layer index.
    pub trend: Option<SpearmanResult>,
    pub missing_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub config: PhaseConfig,
    pub models: Vec<ModelPhase>,
}

/// Per-layer `(group_a, group_b)` samples.
type LayerSamples = BTreeMap<usize, (Vec<f64>, Vec<f64>)>;

/// Per layer and model: Mann-Whitney U on the IoU values (one-sided
/// `group_a > group_b` by default), Bonferroni over layers, mean difference,
/// Cohen's d and a Spearman trend of the difference across layers.
pub fn phase_analysis(rows: &[IouRow], config: &PhaseConfig) -> Result<PhaseReport> {
    if rows.is_empty() {
        return Err(Error::input("empty IoU table"));
    }
    let mut by_model: BTreeMap<&str, LayerSamples> = BTreeMap::new();
    for r in rows {
        let layers = by_model.entry(&r.model).or_default();
        let cell = layers.entry(r.layer).or_default();
        if r.group == config.group_a {
            cell.0.push(r.iou);
        } else if r.group == config.group_b {
            cell.1.push(r.iou);
        }
    }
    let mut models = Vec::new();
    for (model, layers) in by_model {
        let n_layers = layers.keys().max().map_or(0, |l| l + 1);
        let m = config.m.unwrap_or(n_layers);
        let alpha_corrected = bonferroni(config.alpha, m)?;
        let mut out = Vec::new();
        let mut missing = Vec::new();
        for layer in 0..n_layers {
            let Some((a, b)) = layers.get(&layer).filter(|(a, b)| !a.is_empty() && !b.is_empty()) else {
                missing.push(layer);
                continue;
            };
            let result = mann_whitney_u(a, b, config.alternative)?.with_alpha(alpha_corrected);
            out.push(LayerPhase {
                layer,
                phase: config.boundaries.iter().filter(|&&b| layer >= b).count(),
                mean_diff: mean(a) - mean(b),
                cohens_d: cohens_d(a, b).ok(),
                result,
            });
        }
        let trend = if out.len() >= 3 {
            let xs: Vec<f64> = out.iter().map(|l| l.layer as f64).collect();
            let ys: Vec<f64> = out.iter().map(|l| l.mean_diff).collect();
            spearman(&xs, &ys).ok()
        } else {
            None
        };
        models.push(ModelPhase {
            model: model.to_string(),
            n_layers,
            alpha_corrected,
            significant_layers: out.iter().filter(|l| l.result.significant).count(),
            layers: out,
            trend,
            missing_layers: missing,
        });
    }
    Ok(PhaseReport {
        config: config.clone(),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auc(model: &str, src: &str, tgt: &str, lang: &str, v: f64) -> AucRow {
        AucRow {
            model: model.into(),
            task_id: format!("{src}-{tgt}"),
            src_lang: src.into(),
            tgt_lang: tgt.into(),
            language: lang.into(),
            auc: v,
            auc_thresholded: v,
        }
    }

    #[test]
    fn identical_groups_are_not_significant() {
        let mut rows = Vec::new();
        for i in 0..10 {
            for m in ["a", "b"] {
                rows.push(auc(m, "en", "fr", "en", 0.1 * (i % 5) as f64));
            }
        }
        let r = grouped_auc_tests(&rows, Grouping::ModelEffect, 0.05, Alternative::TwoSided).unwrap();
        assert_eq!(r.m, 1);
        assert!(r.tests.iter().all(|t| !t.result.significant));
    }

    #[test]
    fn separated_groups_are_significant() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(auc("a", "en", "fr", "en", 0.9 + i as f64 * 1e-3));
            rows.push(auc("b", "en", "fr", "en", 0.1 + i as f64 * 1e-3));
        }
        let r = grouped_auc_tests(&rows, Grouping::ModelEffect, 0.05, Alternative::TwoSided).unwrap();
        assert!(r.tests[0].result.significant);
        assert_eq!(r.tests[0].result.statistic, 100.0);
    }

    #[test]
    fn task_effect_family_size_and_skips() {
        let rows = vec![
            auc("a", "en", "fr", "en", 0.5),
            auc("a", "de", "fr", "en", 0.2),
            auc("b", "en", "fr", "en", 0.4),
        ];
        let r = grouped_auc_tests(&rows, Grouping::InputEffect, 0.05, Alternative::TwoSided).unwrap();
        assert_eq!(r.m, 4);
        assert_eq!(r.tests.len(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].group_x, "b:input");
        assert!(
            grouped_auc_tests(&rows, Grouping::ModelEffect, 0.05, Alternative::TwoSided)
                .unwrap()
                .m
                == 1
        );
        assert!(grouped_auc_tests(&[], Grouping::ModelEffect, 0.05, Alternative::TwoSided).is_err());
    }

    fn iou_rows(n_layers: usize, diff: impl Fn(usize) -> f64) -> Vec<IouRow> {
        let mut rows = Vec::new();
        for layer in 0..n_layers {
            for i in 0..10 {
                let base = 0.2 + 0.004 * i as f64;
                rows.push(IouRow {
                    model: "m".into(),
                    group: "zh".into(),
                    layer,
                    iou: base,
                });
                rows.push(IouRow {
                    model: "m".into(),
                    group: "fr".into(),
                    layer,
                    iou: base + diff(layer),
                });
            }
        }
        rows
    }

    #[test]
    fn equal_groups_have_no_significant_layers() {
        let r = phase_analysis(&iou_rows(8, |_| 0.0), &PhaseConfig::default()).unwrap();
        assert_eq!(r.models[0].significant_layers, 0);
    }

    #[test]
    fn injected_offset_is_detected() {
        let r = phase_analysis(&iou_rows(32, |_| 0.05), &PhaseConfig::default()).unwrap();
        let m = &r.models[0];
        assert_eq!(m.alpha_corrected, 0.05 / 32.0);
        assert_eq!(m.significant_layers, 32);
        assert!(m.layers.iter().all(|l| (l.mean_diff - 0.05).abs() < 1e-12));
        assert_eq!(m.layers[4].phase, 0);
        assert_eq!(m.layers[5].phase, 1);
        assert_eq!(m.layers[17].phase, 2);
    }

    #[test]
    fn shrinking_difference_gives_negative_trend() {
        let r = phase_analysis(&iou_rows(12, |l| 0.1 - 0.005 * l as f64), &PhaseConfig::default()).unwrap();
        assert!(r.models[0].trend.unwrap().rho < 0.0);
    }

    #[test]
    fn missing_layers_are_flagged() {
        let mut rows = iou_rows(4, |_| 0.05);
        rows.retain(|r| !(r.layer == 2 && r.group == "fr"));
        let r = phase_analysis(&rows, &PhaseConfig::default()).unwrap();
        assert_eq!(r.models[0].missing_layers, vec![2]);
    }
}
