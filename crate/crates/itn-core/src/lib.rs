//! Inverse text normalization (ITN) toolkit: converts spoken-form numeric
//! text ("one twenty dollar") to written form ("$120") and builds the
//! training data to learn that mapping.
//!
//! The pieces, in pipeline order:
//!
//! * [`extract`]: find typed numeric entities in written text and
//!   canonicalize them.
//! * [`grammar`] + [`verbalize`]: expand rewrite rules recursively to produce
//!   every spoken variant of each entity and splice sampled variants back
//!   into sentences, with generation traces.
//! * [`labels`]: the five-task label algebra (Rewrite, Prepend, Space,
//!   PostStart, PostEnd) that deterministically maps labeled spoken tokens to
//!   written text, plus label inference from traces or by search.
//! * [`tokenize`]: subword vocabulary whose protected pieces keep rewrite
//!   words whole.
//! * [`tagger`]: a multitask bidirectional LSTM sequence tagger trained with
//!   the pretrain/finetune domain-adaptation recipe.
//! * [`eval`]: entity-typed accuracy, diversity, and n-gram domain overlap.

pub mod error;
pub mod types;

pub mod lexicon;

pub mod grammar;

pub mod extract;

pub mod verbalize;

pub mod labels;

pub mod tokenize;

pub mod eval;

pub mod tagger;

pub use error::{ItnError, Result};
pub use types::{
    EntityKind, LabelRow, PrependClass, RegionClass, RewriteClass, SpaceClass, SpokenWrittenPair,
    TraceEntry, WrittenEntity,
};

pub use lexicon::{lexicon_lookup, RewriteLexicon};

pub use grammar::Grammar;

pub use extract::{canonicalize, extract_entities, PatternSet};

pub use verbalize::{
    augment_corpus, augment_sentence, expand_entity, AugmentConfig, AugmentSummary, VariantSet,
};

pub use labels::{apply_labels, infer_labels_from_trace, infer_labels_search};

pub use tokenize::PieceVocab;

pub use tagger::{TaggerConfig, TaggerModel};

/// The shipped English stopword list used by the overlap analysis.
pub fn default_stopwords() -> std::collections::HashSet<String> {
    static LIST: &str = include_str!("../data/stopwords.txt");
    LIST.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}
