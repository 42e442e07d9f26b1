//! Activation-strength specialization: per-text mean activations, Average
//! Precision per neuron and top/medium/bottom-k classification.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NeuronId;
use crate::error::{Error, Result};
use crate::io::{write_csv, write_csv_records};
use crate::model::{ActivationTrace, Model};
use crate::tokenize::TokenId;

pub const DEFAULT_K_COUNT: usize = 1000;

/// Mean post-nonlinearity activation over non-pad positions, one value per
/// neuron (layer-major).
pub fn mean_activation(acts: &ActivationTrace) -> Result<Vec<f64>> {
    let live: Vec<usize> = acts
        .pad_mask
        .iter()
        .enumerate()
        .filter(|(_, &pad)| !pad)
        .map(|(i, _)| i)
        .collect();
    if live.is_empty() {
        return Err(Error::input("text has no non-pad tokens"));
    }
    let n = live.len() as f64;
    let mut out = Vec::new();
    for layer in &acts.layers {
        for col in layer.columns() {
            let sum: f64 = live.iter().map(|&p| f64::from(col[p])).sum();
            out.push(sum / n);
        }
    }
    Ok(out)
}

/// `z[text][neuron]`: mean activation per text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthProfile {
    pub n_layers: usize,
    pub d_ff: usize,
    pub z: Vec<Vec<f64>>,
}

pub fn strength_profile(model: &Model, texts: &[Vec<TokenId>], pad_id: Option<TokenId>) -> Result<StrengthProfile> {
    if texts.is_empty() {
        return Err(Error::input("no texts for strength profile"));
    }
    let z = texts
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let out = model.forward_masked(t, pad_id)?;
            mean_activation(&out.activations).map_err(|_| Error::input(format!("text {i} has no non-pad tokens")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StrengthProfile {
        n_layers: model.config().n_layers,
        d_ff: model.config().d_ff,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// A positive and a negative item share a score.
    pub boundary_tie: bool,
}

/// Average precision of `scores` for `labels`, ranking by descending score
/// with ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<ApResult> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&b| b).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::input(
            "average precision needs both positive and negative labels",
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    let mut boundary_tie = false;
    for w in order.windows(2) {
        if scores[w[0]] == scores[w[1]] && labels[w[0]] != labels[w[1]] {
            boundary_tie = true;
            break;
        }
    }
    if !boundary_tie {
        // Ties may also be non-adjacent in label order within one score run.
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
                j += 1;
            }
            let run = &order[i..=j];
            if run.iter().any(|&x| labels[x]) && run.iter().any(|&x| !labels[x]) {
                boundary_tie = true;
                break;
            }
            i = j + 1;
        }
    }
    Ok(ApResult {
        ap: sum / positives as f64,
        boundary_tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronClass {
    Top,
    Medium,
    Bottom,
    None,
}

impl NeuronClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            NeuronClass::Top => "top",
            NeuronClass::Medium => "medium",
            NeuronClass::Bottom => "bottom",
            NeuronClass::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApClassification {
    pub pair: String,
    pub model_fingerprint: String,
    pub n_layers: usize,
    pub d_ff: usize,
    pub k_requested: usize,
    pub k: usize,
    /// `3k` exceeded the neuron count and `k` was reduced.
    pub shrunk: bool,
    pub n_positive: usize,
    pub n_negative: usize,
    /// AP per neuron, layer-major.
    pub ap: Vec<f64>,
    pub boundary_ties: usize,
    pub top: Vec<NeuronId>,
    pub medium: Vec<NeuronId>,
    pub bottom: Vec<NeuronId>,
}

impl ApClassification {
    pub fn class_of(&self, id: NeuronId) -> NeuronClass {
        if self.top.contains(&id) {
            NeuronClass::Top
        } else if self.medium.contains(&id) {
            NeuronClass::Medium
        } else if self.bottom.contains(&id) {
            NeuronClass::Bottom
        } else {
            NeuronClass::None
        }
    }
}

/// Classifies neurons from precomputed positive and negative profiles.
pub fn classify_profiles(
    pair: &str,
    model_fingerprint: &str,
    positive: &StrengthProfile,
    negative: &StrengthProfile,
    k: usize,
) -> Result<ApClassification> {
    if positive.z.is_empty() || negative.z.is_empty() {
        return Err(Error::input(format!("pair {pair:?}: both corpora must be non-empty")));
    }
    if (positive.n_layers, positive.d_ff) != (negative.n_layers, negative.d_ff) {
        return Err(Error::DimensionMismatch("profiles from different models".into()));
    }
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    let (n_layers, d_ff) = (positive.n_layers, positive.d_ff);
    let n = n_layers * d_ff;
    let labels: Vec<bool> = std::iter::repeat_n(true, positive.z.len())
        .chain(std::iter::repeat_n(false, negative.z.len()))
        .collect();
    let rows: Vec<&Vec<f64>> = positive.z.iter().chain(&negative.z).collect();
    let results = (0..n)
        .into_par_iter()
        .map(|m| {
            let scores: Vec<f64> = rows.iter().map(|r| r[m]).collect();
            average_precision(&scores, &labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let ap: Vec<f64> = results.iter().map(|r| r.ap).collect();
    let boundary_ties = results.iter().filter(|r| r.boundary_tie).count();

    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| ap[b].total_cmp(&ap[a]).then(a.cmp(&b)));
    let shrunk = 3 * k > n;
    let k_eff = if shrunk { n / 3 } else { k };
    let ids = |r: &[usize]| r.iter().map(|&i| NeuronId::from_flat(i, d_ff)).collect::<Vec<_>>();
    let mid = (n - k_eff) / 2;
    Ok(ApClassification {
        pair: pair.to_string(),
        model_fingerprint: model_fingerprint.to_string(),
        n_layers,
        d_ff,
        k_requested: k,
        k: k_eff,
        shrunk,
        n_positive: positive.z.len(),
        n_negative: negative.z.len(),
        boundary_ties,
        top: ids(&ranked[..k_eff]),
        medium: ids(&ranked[mid..mid + k_eff]),
        bottom: ids(&ranked[n - k_eff..]),
        ap,
    })
}

/// Computes profiles for both corpora and classifies every neuron by AP.
pub fn classify_neurons(
    model: &Model,
    pair: &str,
    positive: &[Vec<TokenId>],
    negative: &[Vec<TokenId>],
    k: usize,
    pad_id: Option<TokenId>,
) -> Result<ApClassification> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::input(format!("pair {pair:?}: both corpora must be non-empty")));
    }
    let pos = strength_profile(model, positive, pad_id)?;
    let neg = strength_profile(model, negative, pad_id)?;
    classify_profiles(pair, &model.fingerprint(), &pos, &neg, k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub pair: String,
    pub layer: usize,
    pub class: NeuronClass,
    pub count: usize,
}

/// Per-layer counts of the top, medium and bottom sets.
pub fn layer_distribution(c: &ApClassification) -> Vec<DistributionRow> {
    let mut rows = Vec::with_capacity(3 * c.n_layers);
    for (class, set) in [
        (NeuronClass::Top, &c.top),
        (NeuronClass::Medium, &c.medium),
        (NeuronClass::Bottom, &c.bottom),
    ] {
        let mut counts = vec![0usize; c.n_layers];
        for id in set {
            counts[id.layer] += 1;
        }
        rows.extend(counts.into_iter().enumerate().map(|(layer, count)| DistributionRow {
            pair: c.pair.clone(),
            layer,
            class,
            count,
        }));
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub pairs: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

/// `|top(A) ∩ top(B)|` for every pair of classifications, pooled over all
/// layers.
pub fn overlap_counts(classifications: &[ApClassification]) -> Result<OverlapMatrix> {
    if let Some(first) = classifications.first() {
        if let Some(bad) = classifications
            .iter()
            .find(|c| c.model_fingerprint != first.model_fingerprint)
        {
            return Err(Error::input(format!(
                "classifications {:?} and {:?} come from different models",
                first.pair, bad.pair
            )));
        }
    }
    let sets: Vec<BTreeSet<NeuronId>> = classifications
        .iter()
        .map(|c| c.top.iter().copied().collect())
        .collect();
    let counts = sets
        .iter()
        .map(|a| sets.iter().map(|b| a.intersection(b).count()).collect())
        .collect();
    Ok(OverlapMatrix {
        pairs: classifications.iter().map(|c| c.pair.clone()).collect(),
        counts,
    })
}

#[derive(Serialize)]
struct ClassRow<'a> {
    pair: &'a str,
    layer: usize,
    neuron: usize,
    ap: f64,
    class: &'static str,
}

/// Classification CSV: `pair, layer, neuron, ap, class`.
pub fn write_classification_csv(path: &Path, classifications: &[ApClassification]) -> Result<()> {
    let mut rows = Vec::new();
    for c in classifications {
        for (m, &ap) in c.ap.iter().enumerate() {
            let id = NeuronId::from_flat(m, c.d_ff);
            rows.push(ClassRow {
                pair: &c.pair,
                layer: id.layer,
                neuron: id.index,
                ap,
                class: c.class_of(id).as_str(),
            });
        }
    }
    write_csv(path, &rows)
}

/// Distribution CSV: `pair, layer, class, count`.
pub fn write_distribution_csv(path: &Path, classifications: &[ApClassification]) -> Result<()> {
    let rows: Vec<DistributionRow> = classifications.iter().flat_map(layer_distribution).collect();
    write_csv(path, &rows)
}

pub fn write_overlap_csv(path: &Path, m: &OverlapMatrix) -> Result<()> {
    let header: Vec<String> = std::iter::once("pair".to_string())
        .chain(m.pairs.iter().cloned())
        .collect();
    let rows: Vec<Vec<String>> = m
        .pairs
        .iter()
        .zip(&m.counts)
        .map(|(p, row)| {
            std::iter::once(p.clone())
                .chain(row.iter().map(usize::to_string))
                .collect()
        })
        .collect();
    write_csv_records(path, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(values: &[f32], pads: &[bool]) -> ActivationTrace {
        ActivationTrace {
            layers: vec![Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()],
            pad_mask: pads.to_vec(),
        }
    }

    #[test]
    fn mean_activation_examples() {
        assert_eq!(
            mean_activation(&trace(&[2.5, 2.5, 2.5], &[false; 3])).unwrap(),
            vec![2.5]
        );
        assert_eq!(mean_activation(&trace(&[1.0, 3.0], &[false, true])).unwrap(), vec![1.0]);
        assert_eq!(
            mean_activation(&trace(&[1.0, 2.0, 3.0], &[false; 3])).unwrap(),
            vec![2.0]
        );
        assert!(mean_activation(&trace(&[1.0], &[true])).is_err());
    }

    #[test]
    fn ap_examples() {
        let ap = |z: &[f64], b: &[bool]| average_precision(z, b).unwrap().ap;
        let b = [true, true, false, false];
        assert_eq!(ap(&[0.9, 0.8, 0.1, 0.2], &b), 1.0);
        assert!((ap(&[0.1, 0.2, 0.9, 0.8], &b) - 5.0 / 12.0).abs() < 1e-15);
        assert!(average_precision(&[0.1, 0.2], &[false, false]).is_err());
        assert!(average_precision(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn tie_flag() {
        assert!(
            average_precision(&[0.5, 0.5, 0.1], &[true, false, false])
                .unwrap()
                .boundary_tie
        );
        assert!(
            !average_precision(&[0.5, 0.5, 0.1], &[true, true, false])
                .unwrap()
                .boundary_tie
        );
        assert!(
            average_precision(&[0.5, 0.1, 0.5, 0.5], &[true, false, true, false])
                .unwrap()
                .boundary_tie
        );
    }

    /// Exact AP from the definition: for each positive, the fraction of
    /// items ranked at or above it that are positive.
    fn ap_exact(scores: &[f64], labels: &[bool]) -> Ratio<u64> {
        let n = scores.len();
        let rank_of = |i: usize| {
            1 + (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count() as u64
        };
        let positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
        let mut total = Ratio::from_integer(0);
        for &i in &positives {
            let r = rank_of(i);
            let above = positives.iter().filter(|&&j| rank_of(j) <= r).count() as u64;
            total += Ratio::new(above, r);
        }
        total / positives.len() as u64
    }

    fn to_f64(r: Ratio<u64>) -> f64 {
        *r.numer() as f64 / *r.denom() as f64
    }

    proptest! {
        #[test]
        fn ap_matches_exact_oracle(
            scores in proptest::collection::vec(0u8..6, 2..12),
            bits in any::<u16>(),
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let labels: Vec<bool> = (0..scores.len()).map(|i| bits >> i & 1 == 1).collect();
            prop_assume!(labels.iter().any(|&b| b) && labels.iter().any(|&b| !b));
            let got = average_precision(&scores, &labels).unwrap().ap;
            prop_assert!((got - to_f64(ap_exact(&scores, &labels))).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }
    }

    fn profile(z: Vec<Vec<f64>>, n_layers: usize, d_ff: usize) -> StrengthProfile {
        StrengthProfile { n_layers, d_ff, z }
    }

    #[test]
    fn classification_sets() {
        // 2 layers × 6 neurons. Neuron (0,0) fires only on positives,
        // (1,5) only on negatives.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut row = |pos: bool| {
            let mut r: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 0.5 + 0.25).collect();
            r[0] = if pos { 1.0 } else { 0.0 };
            r[11] = if pos { 0.0 } else { 1.0 };
            r
        };
        let pos = profile((0..5).map(|_| row(true)).collect(), 2, 6);
        let neg = profile((0..7).map(|_| row(false)).collect(), 2, 6);
        let c = classify_profiles("p", "fp", &pos, &neg, 3).unwrap();
        assert!(!c.shrunk);
        assert_eq!(c.top[0], NeuronId::new(0, 0));
        assert_eq!(*c.bottom.last().unwrap(), NeuronId::new(1, 5));
        let all: BTreeSet<_> = c.top.iter().chain(&c.medium).chain(&c.bottom).collect();
        assert_eq!(all.len(), 9);

        let big = classify_profiles("p", "fp", &pos, &neg, 1000).unwrap();
        assert!(big.shrunk);
        assert_eq!(big.k, 4);
        let dist = layer_distribution(&big);
        for class in [NeuronClass::Top, NeuronClass::Medium, NeuronClass::Bottom] {
            let total: usize = dist.iter().filter(|r| r.class == class).map(|r| r.count).sum();
            assert_eq!(total, 4);
        }
    }

    #[test]
    fn shrink_for_512_neurons() {
        let z = |v: f64| vec![(0..512).map(|i| v * i as f64).collect::<Vec<f64>>()];
        let c = classify_profiles("p", "fp", &profile(z(1.0), 4, 128), &profile(z(-1.0), 4, 128), 1000).unwrap();
        assert!(c.shrunk);
        assert_eq!(c.k, 170);
    }

    #[test]
    fn distribution_all_in_one_layer() {
        let c = ApClassification {
            pair: "p".into(),
            model_fingerprint: "fp".into(),
            n_layers: 4,
            d_ff: 8,
            k_requested: 2,
            k: 2,
            shrunk: false,
            n_positive: 1,
            n_negative: 1,
            ap: vec![0.5; 32],
            boundary_ties: 0,
            top: vec![NeuronId::new(3, 0), NeuronId::new(3, 1)],
            medium: vec![NeuronId::new(1, 0), NeuronId::new(2, 0)],
            bottom: vec![NeuronId::new(0, 0), NeuronId::new(0, 1)],
        };
        let d = layer_distribution(&c);
        let top: Vec<usize> = d
            .iter()
            .filter(|r| r.class == NeuronClass::Top)
            .map(|r| r.count)
            .collect();
        assert_eq!(top, vec![0, 0, 0, 2]);

        let mut a = c.clone();
        a.top = vec![NeuronId::new(0, 1), NeuronId::new(0, 2)];
        let mut b = c.clone();
        b.pair = "q".into();
        b.top = vec![NeuronId::new(0, 2), NeuronId::new(1, 5)];
        let m = overlap_counts(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.counts, vec![vec![2, 1], vec![1, 2]]);
        b.model_fingerprint = "other".into();
        assert!(overlap_counts(&[a, b]).is_err());
    }

    #[test]
    fn uniform_layers_give_flat_histogram() {
        // Random AP values: each layer should hold about k / n_layers of
        // each class.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n_layers, d_ff) = (4, 300);
        let rows = |n: usize, rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| (0..n_layers * d_ff).map(|_| rng.random::<f64>()).collect())
                .collect()
        };
        let pos = profile(rows(6, &mut rng), n_layers, d_ff);
        let neg = profile(rows(6, &mut rng), n_layers, d_ff);
        let c = classify_profiles("p", "fp", &pos, &neg, 200).unwrap();
        let (p, n) = (0.25, 200.0);
        let sigma = (n * p * (1.0f64 - p)).sqrt();
        for r in layer_distribution(&c) {
            assert!((r.count as f64 - n * p).abs() < 4.0 * sigma, "{r:?}");
        }
    }
}
