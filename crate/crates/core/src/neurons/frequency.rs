//! Activation-frequency specialization: per-neuron firing counts, cumulative
//! top-k mass selection, universal-neuron exclusion and IoU overlap.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NeuronId;
use crate::error::{Error, Result};
use crate::io::{write_csv, write_csv_records};
use crate::model::Model;
use crate::tokenize::TokenId;

pub const DEFAULT_K_MASS: f64 = 0.90;

/// What one unit of `a^t_i` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingUnit {
    /// Every non-pad token position where the neuron fires.
    #[default]
    Token,
    /// Every text in which the neuron fires at least once.
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationCountTable {
    pub tag: String,
    pub unit: CountingUnit,
    /// `counts[layer][neuron]`.
    pub counts: Vec<Vec<u64>>,
    /// Number of counted units (tokens or texts).
    pub total: u64,
}

impl ActivationCountTable {
    fn zeros(tag: &str, unit: CountingUnit, n_layers: usize, d_ff: usize) -> Self {
        ActivationCountTable {
            tag: tag.to_string(),
            unit,
            counts: vec![vec![0; d_ff]; n_layers],
            total: 0,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.counts.len()
    }

    pub fn d_ff(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// Adds another table's counts (same shape) into this one.
    pub fn merge(&mut self, other: &ActivationCountTable) -> Result<()> {
        if self.n_layers() != other.n_layers() || self.d_ff() != other.d_ff() || self.unit != other.unit {
            return Err(Error::DimensionMismatch(
                "count tables of different shape or unit".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.total += other.total;
        Ok(())
    }

    pub fn get(&self, id: NeuronId) -> u64 {
        self.counts[id.layer][id.index]
    }
}

/// Counts, per neuron, the units on which its post-nonlinearity activation
/// is positive. Positions holding `pad_id` are ignored.
pub fn count_activations(
    model: &Model,
    texts: &[Vec<TokenId>],
    tag: &str,
    pad_id: Option<TokenId>,
    unit: CountingUnit,
) -> Result<ActivationCountTable> {
    if texts.is_empty() {
        return Err(Error::input(format!("no texts to count for {tag:?}")));
    }
    let cfg = model.config();
    let empty = || ActivationCountTable::zeros(tag, unit, cfg.n_layers, cfg.d_ff);
    let tables = texts
        .par_iter()
        .map(|text| {
            let out = model.forward_masked(text, pad_id)?;
            let acts = &out.activations;
            let mut t = empty();
            let live: Vec<usize> = (0..text.len()).filter(|&p| !acts.pad_mask[p]).collect();
            t.total = match unit {
                CountingUnit::Token => live.len() as u64,
                CountingUnit::Text => 1,
            };
            for (layer, a) in acts.layers.iter().enumerate() {
                for (n, c) in t.counts[layer].iter_mut().enumerate() {
                    let fired = live.iter().filter(|&&p| a[[p, n]] > 0.0).count() as u64;
                    *c = match unit {
                        CountingUnit::Token => fired,
                        CountingUnit::Text => u64::from(fired > 0),
                    };
                }
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = empty();
    for t in &tables {
        acc.merge(t)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionScope {
    #[default]
    PerLayer,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSelection {
    pub tag: String,
    pub k: f64,
    pub scope: SelectionScope,
    /// Selected neuron indices per layer, ascending.
    pub selected: Vec<Vec<usize>>,
    /// Layers whose counts were all zero (empty selection).
    pub empty_layers: Vec<usize>,
    /// Neurons removed as shared by every tag, per layer.
    pub excluded_universal: Vec<Vec<usize>>,
}

impl NeuronSelection {
    pub fn n_layers(&self) -> usize {
        self.selected.len()
    }

    pub fn neurons(&self) -> BTreeSet<NeuronId> {
        self.selected
            .iter()
            .enumerate()
            .flat_map(|(l, s)| s.iter().map(move |&i| NeuronId::new(l, i)))
            .collect()
    }

    pub fn layer_set(&self, layer: usize) -> BTreeSet<usize> {
        self.selected[layer].iter().copied().collect()
    }
}

/// Minimal prefix of `ids` (already ordered by count desc, id asc) whose
/// count mass reaches `k` of the total.
fn mass_prefix(ids: &[NeuronId], table: &ActivationCountTable, k: f64) -> Vec<NeuronId> {
    let total: u64 = ids.iter().map(|&id| table.get(id)).sum();
    if total == 0 {
        return Vec::new();
    }
    let target = k * total as f64 * (1.0 - 1e-12);
    let mut sum = 0u64;
    let mut out = Vec::new();
    for &id in ids {
        if sum as f64 >= target {
            break;
        }
        sum += table.get(id);
        out.push(id);
    }
    out
}

fn by_count_desc(table: &ActivationCountTable, mut ids: Vec<NeuronId>) -> Vec<NeuronId> {
    ids.sort_by(|a, b| table.get(*b).cmp(&table.get(*a)).then(a.cmp(b)));
    ids
}

/// Selects the neurons carrying `k` of the activation mass, per layer or
/// over the pooled network.
pub fn select_specialized(table: &ActivationCountTable, k: f64, scope: SelectionScope) -> Result<NeuronSelection> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::input(format!("k must lie in (0, 1], got {k}")));
    }
    let n_layers = table.n_layers();
    let d_ff = table.d_ff();
    let layer_ids = |l: usize| (0..d_ff).map(move |i| NeuronId::new(l, i));
    let mut selected = vec![Vec::new(); n_layers];
    let empty_layers: Vec<usize> = (0..n_layers)
        .filter(|&l| table.counts[l].iter().all(|&c| c == 0))
        .collect();
    match scope {
        SelectionScope::PerLayer => {
            for (l, sel) in selected.iter_mut().enumerate() {
                let order = by_count_desc(table, layer_ids(l).collect());
                *sel = mass_prefix(&order, table, k).into_iter().map(|id| id.index).collect();
                sel.sort_unstable();
            }
        }
        SelectionScope::Global => {
            let order = by_count_desc(table, (0..n_layers).flat_map(layer_ids).collect());
            for id in mass_prefix(&order, table, k) {
                selected[id.layer].push(id.index);
            }
            for s in &mut selected {
                s.sort_unstable();
            }
        }
    }
    Ok(NeuronSelection {
        tag: table.tag.clone(),
        k,
        scope,
        selected,
        empty_layers,
        excluded_universal: vec![Vec::new(); n_layers],
    })
}

/// Removes, per layer, the neurons selected for every tag. Returns the
/// updated selections and the removed sets.
pub fn exclude_universal(selections: &[NeuronSelection]) -> Result<(Vec<NeuronSelection>, Vec<Vec<usize>>)> {
    if selections.len() < 2 {
        return Err(Error::input("universal-neuron exclusion needs at least two selections"));
    }
    let n_layers = selections[0].n_layers();
    if selections.iter().any(|s| s.n_layers() != n_layers) {
        return Err(Error::DimensionMismatch(
            "selections with different layer counts".into(),
        ));
    }
    let removed: Vec<Vec<usize>> = (0..n_layers)
        .map(|l| {
            let mut common = selections[0].layer_set(l);
            for s in &selections[1..] {
                let other = s.layer_set(l);
                common.retain(|i| other.contains(i));
            }
            common.into_iter().collect()
        })
        .collect();
    let out = selections
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for (l, gone) in removed.iter().enumerate() {
                s.selected[l].retain(|i| gone.binary_search(i).is_err());
                let ex = &mut s.excluded_universal[l];
                ex.extend(gone);
                ex.sort_unstable();
                ex.dedup();
            }
            s
        })
        .collect();
    Ok((out, removed))
}

/// `|a ∩ b| / |a ∪ b|`, with `None` for two empty sets.
pub fn iou<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Option<f64> {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    (union > 0).then(|| inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub tags: Vec<String>,
    /// Over all layers' selected neurons pooled.
    pub global: Vec<Vec<f64>>,
    pub per_layer: Vec<Vec<Vec<f64>>>,
    /// `(layer, i, j)` cells where both sets were empty (IoU set to 0);
    /// layer is `None` for the global matrix.
    pub empty_pairs: Vec<(Option<usize>, usize, usize)>,
}

pub fn iou_matrix(selections: &[NeuronSelection]) -> IouReport {
    let n = selections.len();
    let n_layers = selections.first().map_or(0, NeuronSelection::n_layers);
    let mut empty_pairs = Vec::new();
    let mut square = |sets: &[BTreeSet<NeuronId>], layer: Option<usize>| {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = iou(&sets[i], &sets[j]).unwrap_or_else(|| {
                    empty_pairs.push((layer, i, j));
                    0.0
                });
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    };
    let global_sets: Vec<_> = selections.iter().map(NeuronSelection::neurons).collect();
    let global = square(&global_sets, None);
    let per_layer = (0..n_layers)
        .map(|l| {
            let sets: Vec<BTreeSet<NeuronId>> = selections
                .iter()
                .map(|s| s.selected[l].iter().map(|&i| NeuronId::new(l, i)).collect())
                .collect();
            square(&sets, Some(l))
        })
        .collect();
    IouReport {
        tags: selections.iter().map(|s| s.tag.clone()).collect(),
        global,
        per_layer,
        empty_pairs,
    }
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    tag: &'a str,
    layer: usize,
    neuron: usize,
    count: u64,
    selected: bool,
}

/// Selection CSV: `tag, layer, neuron, count, selected`, one row per neuron
/// per tag.
pub fn write_selection_csv(path: &Path, tables: &[ActivationCountTable], selections: &[NeuronSelection]) -> Result<()> {
    let mut rows = Vec::new();
    for (t, s) in tables.iter().zip(selections) {
        for (layer, counts) in t.counts.iter().enumerate() {
            let chosen = s.layer_set(layer);
            for (neuron, &count) in counts.iter().enumerate() {
                rows.push(SelectionRow {
                    tag: &t.tag,
                    layer,
                    neuron,
                    count,
                    selected: chosen.contains(&neuron),
                });
            }
        }
    }
    write_csv(path, &rows)
}

fn write_square(path: &Path, tags: &[String], m: &[Vec<f64>]) -> Result<()> {
    let header: Vec<String> = std::iter::once("tag".to_string()).chain(tags.iter().cloned()).collect();
    let rows: Vec<Vec<String>> = tags
        .iter()
        .zip(m)
        .map(|(t, row)| {
            std::iter::once(t.clone())
                .chain(row.iter().map(f64::to_string))
                .collect()
        })
        .collect();
    write_csv_records(path, &header, &rows)
}

/// Writes `{prefix}_global.csv` and `{prefix}_layer{NN}.csv` into `dir`;
/// returns the file names.
pub fn write_iou_csvs(dir: &Path, prefix: &str, report: &IouReport) -> Result<Vec<String>> {
    let mut names = vec![format!("{prefix}_global.csv")];
    write_square(&dir.join(&names[0]), &report.tags, &report.global)?;
    for (l, m) in report.per_layer.iter().enumerate() {
        let name = format!("{prefix}_layer{l:02}.csv");
        write_square(&dir.join(&name), &report.tags, m)?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FfnKind, ModelConfig};
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn table(layers: Vec<Vec<u64>>) -> ActivationCountTable {
        ActivationCountTable {
            tag: "t".into(),
            unit: CountingUnit::Token,
            total: layers.iter().flatten().copied().max().unwrap_or(0),
            counts: layers,
        }
    }

    fn sel(tag: &str, layers: Vec<Vec<usize>>) -> NeuronSelection {
        let n = layers.len();
        NeuronSelection {
            tag: tag.into(),
            k: 0.9,
            scope: SelectionScope::PerLayer,
            selected: layers,
            empty_layers: vec![],
            excluded_universal: vec![vec![]; n],
        }
    }

    #[test]
    fn spec_selection_examples() {
        let s = select_specialized(&table(vec![vec![5, 3, 1, 1]]), 0.9, SelectionScope::PerLayer).unwrap();
        assert_eq!(s.selected[0], vec![0, 1, 2]);
        let s = select_specialized(&table(vec![vec![4, 4, 1, 1]]), 0.8, SelectionScope::PerLayer).unwrap();
        assert_eq!(s.selected[0], vec![0, 1]);
        let s = select_specialized(&table(vec![vec![0, 4, 0, 1]]), 1.0, SelectionScope::PerLayer).unwrap();
        assert_eq!(s.selected[0], vec![1, 3]);
    }

    #[test]
    fn ties_break_by_index() {
        let s = select_specialized(&table(vec![vec![1, 2, 2, 2]]), 0.5, SelectionScope::PerLayer).unwrap();
        assert_eq!(s.selected[0], vec![1, 2]);
    }

    #[test]
    fn zero_layer_is_flagged() {
        let s = select_specialized(&table(vec![vec![0, 0], vec![1, 0]]), 0.9, SelectionScope::PerLayer).unwrap();
        assert!(s.selected[0].is_empty());
        assert_eq!(s.empty_layers, vec![0]);
        assert!(select_specialized(&table(vec![vec![1]]), 0.0, SelectionScope::PerLayer).is_err());
    }

    #[test]
    fn global_scope_pools_layers() {
        let s = select_specialized(&table(vec![vec![8, 0], vec![1, 1]]), 0.8, SelectionScope::Global).unwrap();
        assert_eq!(s.selected, vec![vec![0], vec![]]);
    }

    #[test]
    fn exclusion_examples() {
        let a = sel("a", vec![vec![1, 2, 3]]);
        let b = sel("b", vec![vec![2, 3, 4]]);
        let c = sel("c", vec![vec![3, 5]]);
        let (out, removed) = exclude_universal(&[a.clone(), b, c]).unwrap();
        assert_eq!(removed, vec![vec![3]]);
        assert_eq!(out[0].selected[0], vec![1, 2]);
        assert_eq!(out[1].selected[0], vec![2, 4]);
        assert_eq!(out[2].selected[0], vec![5]);

        let (out, removed) = exclude_universal(&[a.clone(), sel("a2", vec![vec![1, 2, 3]])]).unwrap();
        assert_eq!(removed, vec![vec![1, 2, 3]]);
        assert!(out.iter().all(|s| s.selected[0].is_empty()));

        let (out, removed) = exclude_universal(&[a.clone(), sel("d", vec![vec![7]])]).unwrap();
        assert_eq!(removed, vec![Vec::<usize>::new()]);
        assert_eq!(out[0].selected, a.selected);

        assert!(exclude_universal(&[a]).is_err());
    }

    #[test]
    fn iou_examples() {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(iou(&set(&[1, 2, 3]), &set(&[2, 3, 4])), Some(0.5));
        assert_eq!(iou(&set(&[1]), &set(&[2])), Some(0.0));
        assert_eq!(iou(&set(&[1, 2]), &set(&[1, 2])), Some(1.0));
        assert_eq!(iou::<usize>(&set(&[]), &set(&[])), None);

        let r = iou_matrix(&[
            sel("a", vec![vec![1, 2, 3], vec![]]),
            sel("b", vec![vec![2, 3, 4], vec![]]),
        ]);
        assert_eq!(r.global[0][1], 0.5);
        assert_eq!(r.per_layer[1][0][1], 0.0);
        assert!(r.empty_pairs.contains(&(Some(1), 0, 1)));
    }

    fn tiny_model(d_ff: usize) -> Model {
        Model::init(ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 1,
            d_ff,
            vocab_size: 6,
            max_seq_len: 8,
            ffn_kind: FfnKind::Relu,
            tied_unembedding: false,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_weight_neuron_never_fires() {
        let mut m = tiny_model(3);
        let w = m.tensor_mut("layers.0.ffn.w_in").unwrap();
        w[..4].fill(0.0);
        let t = count_activations(&m, &[vec![1, 2, 3], vec![4, 5]], "x", None, CountingUnit::Token).unwrap();
        assert_eq!(t.counts[0][0], 0);
        assert_eq!(t.total, 5);
    }

    #[test]
    fn handcrafted_neuron_fires_on_one_token() {
        // Tokens A=1, B=2. Zero everything, then route a one-hot embedding
        // feature for A straight into neuron 0.
        let mut m = tiny_model(2);
        let names: Vec<String> = m.layout().tensors.iter().map(|t| t.name.clone()).collect();
        for n in &names {
            if !n.ends_with("gain") {
                m.tensor_mut(n).unwrap().fill(0.0);
            }
        }
        let tok = m.tensor_mut("tok_embed").unwrap();
        tok[4..8].copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
        tok[8..12].copy_from_slice(&[-1.0, 1.0, -1.0, 1.0]);
        m.tensor_mut("layers.0.ffn.w_in").unwrap()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let t = count_activations(&m, &[vec![1, 2]], "x", None, CountingUnit::Token).unwrap();
        assert_eq!(t.counts[0][0], 1);
        assert_eq!(t.counts[0][1], 0);
    }

    #[test]
    fn doubling_the_corpus_doubles_counts() {
        let m = tiny_model(16);
        let texts = vec![vec![1, 2, 3, 0, 0], vec![5, 4]];
        let once = count_activations(&m, &texts, "x", Some(0), CountingUnit::Token).unwrap();
        let twice_texts: Vec<_> = texts.iter().chain(&texts).cloned().collect();
        let twice = count_activations(&m, &twice_texts, "x", Some(0), CountingUnit::Token).unwrap();
        assert_eq!(once.total, 5);
        assert_eq!(twice.total, 10);
        for (a, b) in once.counts[0].iter().zip(&twice.counts[0]) {
            assert_eq!(2 * a, *b);
        }
        let per_text = count_activations(&m, &texts, "x", Some(0), CountingUnit::Text).unwrap();
        assert_eq!(per_text.total, 2);
        assert!(per_text.counts[0].iter().all(|&c| c <= 2));
        assert!(count_activations(&m, &[], "x", None, CountingUnit::Token).is_err());
    }

    fn ratio(k: f64) -> Ratio<u64> {
        match k {
            0.5 => Ratio::new(1, 2),
            0.9 => Ratio::new(9, 10),
            _ => Ratio::new(1, 1),
        }
    }

    /// Smallest-size subset reaching the mass, chosen greedily by the rule
    /// "prefix of the count-desc, index-asc order", checked exactly.
    fn oracle(counts: &[u64], k: Ratio<u64>) -> Vec<usize> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return vec![];
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        for len in 0..=order.len() {
            let mass: u64 = order[..len].iter().map(|&i| counts[i]).sum();
            if Ratio::from_integer(mass) >= k * total {
                let mut s = order[..len].to_vec();
                s.sort_unstable();
                return s;
            }
        }
        unreachable!()
    }

    proptest! {
        #[test]
        fn selection_matches_oracle(
            counts in proptest::collection::vec(0u64..20, 1..32),
            ki in 0usize..3,
        ) {
            let k = [0.5, 0.9, 1.0][ki];
            let s = select_specialized(&table(vec![counts.clone()]), k, SelectionScope::PerLayer).unwrap();
            prop_assert_eq!(&s.selected[0], &oracle(&counts, ratio(k)));
            // Minimality: dropping the weakest member falls below the bound.
            if let Some(&weakest) = s.selected[0].iter().min_by_key(|&&i| (counts[i], std::cmp::Reverse(i))) {
                let total: u64 = counts.iter().sum();
                let mass: u64 = s.selected[0].iter().map(|&i| counts[i]).sum::<u64>() - counts[weakest];
                prop_assert!(Ratio::from_integer(mass) < ratio(k) * total);
            }
        }

        #[test]
        fn exclusion_is_idempotent(
            sets in proptest::collection::vec(proptest::collection::btree_set(0usize..10, 0..8), 2..5),
        ) {
            let sels: Vec<_> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| sel(&i.to_string(), vec![s.iter().copied().collect()]))
                .collect();
            let (once, _) = exclude_universal(&sels).unwrap();
            let (twice, again) = exclude_universal(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(again[0].is_empty());
        }
    }
}
