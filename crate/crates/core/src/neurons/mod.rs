//! Language-specific neurons, found two ways: by how often an FFN unit fires
//! on a language's text, and by how well its mean activation ranks
//! positive texts above negative ones.

mod frequency;
mod strength;

use serde::{Deserialize, Serialize};

pub use frequency::{
    count_activations, exclude_universal, iou, iou_matrix, select_specialized, write_iou_csvs, write_selection_csv,
    ActivationCountTable, CountingUnit, IouReport, NeuronSelection, SelectionScope, DEFAULT_K_MASS,
};
pub use strength::{
    average_precision, classify_neurons, classify_profiles, layer_distribution, mean_activation, overlap_counts,
    strength_profile, write_classification_csv, write_distribution_csv, write_overlap_csv, ApClassification, ApResult,
    DistributionRow, NeuronClass, OverlapMatrix, StrengthProfile, DEFAULT_K_COUNT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        NeuronId { layer, index }
    }

    /// Position in a layer-major flat neuron array.
    pub fn flat(&self, d_ff: usize) -> usize {
        self.layer * d_ff + self.index
    }

    pub fn from_flat(i: usize, d_ff: usize) -> Self {
        NeuronId::new(i / d_ff, i % d_ff)
    }
}
