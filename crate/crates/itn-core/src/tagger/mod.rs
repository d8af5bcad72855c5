//! Multitask sequence tagger: piece embeddings, two bidirectional LSTM
//! layers, and five classification heads, one per label task.

pub mod io;
pub mod net;
pub mod train;

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ItnError, Result};
use crate::tokenize::PieceVocab;
use crate::types::{
    LabelRow, PrependClass, RegionClass, RewriteClass, SpaceClass,
};

use net::{forward, Batch, NetDims, Params};

pub use train::{example_from_words, pretrain_embeddings, train, EpochMetrics, LabeledExample};

/// Head widths in task order: Rewrite, Prepend, Space, PostStart, PostEnd.
pub fn head_sizes() -> [usize; 5] {
    [
        RewriteClass::ALL.len(),
        PrependClass::ALL.len(),
        SpaceClass::ALL.len(),
        RegionClass::ALL.len(),
        RegionClass::ALL.len(),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaggerConfig {
    pub embed_dim: usize,
    /// Bidirectional encoder output width; each direction runs half.
    pub hidden_dim: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            embed_dim: 64,
            hidden_dim: 256,
            layers: 2,
            head_hidden: 128,
            learning_rate: 1e-3,
            pretrain_epochs: 20,
            finetune_epochs: 20,
            batch_size: 16,
            seed: 0,
            patience: 3,
        }
    }
}

/// The tagger with its vocabulary and every learned parameter.
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub vocab: PieceVocab,
    pub(crate) dims: NetDims,
    pub(crate) params: Params<f32>,
}

impl TaggerModel {
    fn dims_for(config: &TaggerConfig, vocab_size: usize) -> NetDims {
        NetDims {
            vocab: vocab_size,
            embed: config.embed_dim,
            hidden: config.hidden_dim,
            layers: config.layers,
            head_hidden: config.head_hidden,
            head_sizes: head_sizes().to_vec(),
        }
    }

    /// Seeded random initialization.
    pub fn new(config: TaggerConfig, vocab: PieceVocab) -> TaggerModel {
        let dims = Self::dims_for(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = net::init_params(&dims, &mut rng);
        TaggerModel {
            config,
            vocab,
            dims,
            params,
        }
    }

    /// All-zero parameters; heads output uniform distributions.
    pub fn zeros(config: TaggerConfig, vocab: PieceVocab) -> TaggerModel {
        let dims = Self::dims_for(&config, vocab.len());
        let params = net::zero_params(&dims);
        TaggerModel {
            config,
            vocab,
            dims,
            params,
        }
    }

    /// Replace the embedding matrix, e.g. with a language-model pretrained
    /// one. Shape must match.
    pub fn set_embedding(&mut self, embedding: Array2<f32>) -> Result<()> {
        let expected = self.params.get("embed").raw_dim();
        if embedding.raw_dim() != expected {
            return Err(ItnError::AlignmentMismatch(format!(
                "embedding shape {:?} does not match model {:?}",
                embedding.raw_dim(),
                expected
            )));
        }
        self.params.insert("embed", embedding);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Per-token distributions of the five heads for one piece sequence.
    pub fn forward(&self, ids: &[u32]) -> Result<Vec<[Vec<f32>; 5]>> {
        for &id in ids {
            if id as usize >= self.dims.vocab {
                return Err(ItnError::IdOutOfRange {
                    id,
                    vocab: self.dims.vocab,
                });
            }
        }
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let batch: Batch<f32> = Batch::from_ids(&[ids.to_vec()], crate::tokenize::PAD_ID);
        let cache = forward(&self.params, &self.dims, &batch);
        let mut out = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let mut per_task: [Vec<f32>; 5] = Default::default();
            for task in 0..5 {
                per_task[task] = cache.probs[task][t].row(0).to_vec();
            }
            out.push(per_task);
        }
        Ok(out)
    }

    pub(crate) fn row_to_indexes(row: &LabelRow) -> [usize; 5] {
        [
            row.rewrite.index(),
            row.prepend.index(),
            row.space.index(),
            row.post_start.index(),
            row.post_end.index(),
        ]
    }

    fn indexes_to_row(idx: [usize; 5]) -> LabelRow {
        LabelRow {
            rewrite: RewriteClass::from_index(idx[0]).unwrap_or(RewriteClass::None),
            prepend: PrependClass::from_index(idx[1]).unwrap_or(PrependClass::None),
            space: SpaceClass::from_index(idx[2]).unwrap_or(SpaceClass::On),
            post_start: RegionClass::from_index(idx[3]).unwrap_or(RegionClass::None),
            post_end: RegionClass::from_index(idx[4]).unwrap_or(RegionClass::None),
        }
    }

    /// Tag a spoken sentence: argmax labels per piece, collapsed to word
    /// level by taking the word-initial piece's labels. Unbalanced region
    /// markers are repaired to `None` and flagged.
    pub fn tag(&self, words: &[&str]) -> Result<(Vec<LabelRow>, bool)> {
        if words.is_empty() {
            return Ok((Vec::new(), false));
        }
        let (ids, word_of) = self.vocab.encode_tokens(words);
        let probs = self.forward(&ids)?;
        let mut rows: Vec<LabelRow> = Vec::with_capacity(words.len());
        let mut prev_word = usize::MAX;
        for (piece_idx, &w) in word_of.iter().enumerate() {
            if w == prev_word {
                continue;
            }
            prev_word = w;
            let mut idx = [0usize; 5];
            for task in 0..5 {
                idx[task] = argmax(&probs[piece_idx][task]);
            }
            rows.push(Self::indexes_to_row(idx));
        }
        let repaired = repair_markers(&mut rows);
        Ok((rows, repaired))
    }

    /// Quantize parameters to f16-representable values (what serialization
    /// stores).
    pub fn quantize(&mut self) {
        io::quantize_params(&mut self.params);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let config_json = serde_json::to_string(&self.config)?;
        io::write_model(
            &mut file,
            &config_json,
            &self.vocab.to_compact_bytes(),
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<TaggerModel> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let (config_json, vocab_block, params) = io::read_model(&mut file)?;
        let config: TaggerConfig = serde_json::from_str(&config_json)?;
        let vocab = PieceVocab::from_compact_bytes(&vocab_block)?;
        let dims = Self::dims_for(&config, vocab.len());
        let embed = params.map.get("embed").ok_or_else(|| {
            ItnError::ModelFile("model file has no embedding parameter".into())
        })?;
        if embed.dim() != (dims.vocab, dims.embed) {
            return Err(ItnError::ModelFile(format!(
                "embedding shape {:?} does not match config ({}, {})",
                embed.dim(),
                dims.vocab,
                dims.embed
            )));
        }
        Ok(TaggerModel {
            config,
            vocab,
            dims,
            params,
        })
    }
}

fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Drop unmatched region markers so the rows always validate. Returns true
/// when anything changed.
fn repair_markers(rows: &mut [LabelRow]) -> bool {
    let mut repaired = false;
    for &region in RegionClass::ALL.iter().filter(|r| **r != RegionClass::None) {
        let mut open: Option<usize> = None;
        for i in 0..rows.len() {
            if rows[i].post_start == region {
                if open.is_some() {
                    rows[i].post_start = RegionClass::None;
                    repaired = true;
                } else {
                    open = Some(i);
                }
            }
            if rows[i].post_end == region {
                if open.is_some() {
                    open = None;
                } else {
                    rows[i].post_end = RegionClass::None;
                    repaired = true;
                }
            }
        }
        if let Some(i) = open {
            rows[i].post_start = RegionClass::None;
            repaired = true;
        }
    }
    repaired
}
