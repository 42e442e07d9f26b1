//! Rank tests, effect sizes, grouped comparisons over AUC and IoU tables,
//! and corpus BLEU.

mod bleu;
mod correlation;
mod grouped;
mod mwu;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu_tokens, corpus_bleu, BleuResult, Smoothing};
pub use correlation::{cohens_d, spearman, SpearmanResult};
pub use grouped::{
    grouped_auc_tests, phase_analysis, GroupedReport, GroupedTest, Grouping, IouRow, LayerPhase, ModelPhase,
    PhaseConfig, PhaseReport, SkippedComparison,
};
pub use mwu::{mann_whitney_u, mwu_exact_distribution, Alternative, EXACT_MAX_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n_x: usize,
    pub n_y: usize,
    pub alpha: f64,
    pub significant: bool,
}

impl StatResult {
    /// Re-judges significance against a (corrected) alpha.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.significant = self.p_value < alpha;
        self
    }
}

/// `alpha / m`.
pub fn bonferroni(alpha: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::input("Bonferroni correction needs at least one comparison"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(alpha / m as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}
