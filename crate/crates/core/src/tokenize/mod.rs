//! Vocabulary, synthetic languages, few-shot prompts and segmentation.

mod dataset;
mod prompt;
mod segment;
mod synonyms;
mod synthetic;
mod vocab;

pub use dataset::{gen_prompt_dataset, PromptDataset, PromptDatasetConfig, PromptRecord};
pub use prompt::{build_prompt, sample_shots, Prompt, PromptTask, DEFAULT_SHOTS};
pub use segment::{render, segment, ScriptMode, Segmentation, Segmenter};
pub use synonyms::{ConceptId, SynonymTable};
pub use synthetic::{
    default_specs, gen_synthetic_languages, tag_piece, CharRange, Lexicon, LexiconSet, SyntheticLanguageSpec,
    SyntheticSet,
};
pub use vocab::{TokenId, Vocab, ARROW, BOS, BOS_ID, PAD, PAD_ID, SEP, SEP_ID, UNK, UNK_ID};
