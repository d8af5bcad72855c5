//! The end-to-end demo pipeline: synthesize corpora, augment, build the
//! vocabulary, train with the pretrain/finetune recipe, tag held-out target
//! sentences, and score the result. Everything is seeded and file-based so a
//! rerun reproduces the same report.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use itn_core::eval::AccuracyReport;
use itn_core::tagger::{self, TaggerConfig, TaggerModel};
use itn_core::verbalize::{augment_corpus, AugmentConfig, AugmentSummary};

use crate::config::Config;
use crate::ops::{
    self, analyze_overlap_lines, build_vocab_from_corpus, examples_from_labeled,
    load_labeled_pairs, min_vocab_size, tag_to_written, write_lines, OverlapReport, Resources,
};
use crate::synth::{synth_corpus, Domain};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub seed: u64,
    pub source_size: usize,
    pub target_size: usize,
    pub general_size: usize,
    pub n_variants: usize,
    pub max_expansions: usize,
    pub vocab_extra: usize,
    pub tagger: TaggerConfig,
    pub lm_epochs: usize,
}

impl PipelineConfig {
    pub fn from_config(cfg: &Config) -> Result<PipelineConfig> {
        let workdir = cfg
            .get_path("workdir")
            .unwrap_or_else(|| PathBuf::from("itn-demo"));
        let seed: u64 = cfg.get_parsed("seed")?.unwrap_or(17);
        let tagger = TaggerConfig {
            embed_dim: cfg.get_parsed("embed_dim")?.unwrap_or(32),
            hidden_dim: cfg.get_parsed("hidden_dim")?.unwrap_or(64),
            layers: cfg.get_parsed("layers")?.unwrap_or(2),
            head_hidden: cfg.get_parsed("head_hidden")?.unwrap_or(32),
            learning_rate: cfg.get_parsed("learning_rate")?.unwrap_or(2e-3),
            pretrain_epochs: cfg.get_parsed("pretrain_epochs")?.unwrap_or(6),
            finetune_epochs: cfg.get_parsed("finetune_epochs")?.unwrap_or(8),
            batch_size: cfg.get_parsed("batch_size")?.unwrap_or(16),
            seed,
            patience: cfg.get_parsed("patience")?.unwrap_or(3),
        };
        Ok(PipelineConfig {
            workdir,
            seed,
            source_size: cfg.get_parsed("source_size")?.unwrap_or(360),
            target_size: cfg.get_parsed("target_size")?.unwrap_or(180),
            general_size: cfg.get_parsed("general_size")?.unwrap_or(240),
            n_variants: cfg.get_parsed("n_variants")?.unwrap_or(4),
            max_expansions: cfg.get_parsed("max_expansions")?.unwrap_or(64),
            vocab_extra: cfg.get_parsed("vocab_extra")?.unwrap_or(256),
            tagger,
            lm_epochs: cfg.get_parsed("lm_epochs")?.unwrap_or(2),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub source_sentences: u64,
    pub target_sentences: u64,
    pub source_pairs: u64,
    pub target_pairs: u64,
    pub source_written_entities: u64,
    pub source_spoken_forms: u64,
    pub source_diversity: f64,
    pub skipped_sentences: u64,
    pub vocab_size: usize,
    pub model_bytes: u64,
    pub written_overlap: OverlapReport,
    pub spoken_overlap: OverlapReport,
    pub accuracy: AccuracyReport,
}

fn augment_file(
    input: &Path,
    output: &Path,
    config: &AugmentConfig,
    resources: &Resources,
) -> Result<AugmentSummary> {
    let reader = BufReader::new(File::open(input)?);
    let mut writer = BufWriter::new(File::create(output)?);
    let summary = augment_corpus(
        reader,
        &mut writer,
        config,
        &resources.grammar,
        &resources.patterns,
        &resources.lexicon,
        1,
        |msg| ops::log("warn", msg),
    )?;
    Ok(summary)
}

/// Run the whole demo. Returns the report that also lands in
/// `workdir/report.json`.
pub fn run(config: &PipelineConfig) -> Result<PipelineReport> {
    let dir = &config.workdir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let resources = Resources::load(None, None, None)?;

    // Corpora.
    let source = synth_corpus(Domain::Source, config.source_size, config.seed);
    let target = synth_corpus(Domain::Target, config.target_size, config.seed + 1000);
    let general = synth_corpus(Domain::General, config.general_size, config.seed + 2000);
    write_lines(&dir.join("source.txt"), &source)?;
    write_lines(&dir.join("target.txt"), &target)?;
    write_lines(&dir.join("general.txt"), &general)?;

    // Augmentation.
    let source_aug = AugmentConfig {
        n_variants_per_sentence: config.n_variants,
        max_expansions_per_entity: config.max_expansions,
        seed: config.seed,
    };
    let target_aug = AugmentConfig {
        n_variants_per_sentence: 1,
        ..source_aug
    };
    let source_summary = augment_file(
        &dir.join("source.txt"),
        &dir.join("source_pairs.jsonl"),
        &source_aug,
        &resources,
    )?;
    let target_summary = augment_file(
        &dir.join("target.txt"),
        &dir.join("target_pairs.jsonl"),
        &target_aug,
        &resources,
    )?;

    // Vocabulary over the augmented source spoken text.
    let spoken_source = ops::spoken_text(&dir.join("source_pairs.jsonl"))?;
    let vocab_size = min_vocab_size(&resources.grammar) + config.vocab_extra;
    let vocab = build_vocab_from_corpus(&spoken_source, &resources.grammar, vocab_size)?;
    vocab.save(&dir.join("vocab.tsv"))?;

    // Labeled examples.
    let source_labeled =
        load_labeled_pairs(&dir.join("source_pairs.jsonl"), &resources.grammar, &resources.lexicon)?;
    let target_labeled =
        load_labeled_pairs(&dir.join("target_pairs.jsonl"), &resources.grammar, &resources.lexicon)?;
    let split = target_labeled.len() * 2 / 3;
    let (finetune_set, eval_set) = target_labeled.split_at(split);

    let pretrain_examples = examples_from_labeled(&source_labeled, &vocab);
    let finetune_examples = examples_from_labeled(finetune_set, &vocab);

    // Embedding warmup plus the adaptation recipe.
    let mut model = TaggerModel::new(config.tagger.clone(), vocab);
    let embedding = tagger::pretrain_embeddings(
        &general,
        &model.vocab,
        config.tagger.embed_dim,
        config.seed,
        config.lm_epochs,
        2e-3,
    )?;
    model.set_embedding(embedding)?;
    let metrics = tagger::train(&mut model, &pretrain_examples, &finetune_examples, |m| {
        ops::log(
            "info",
            &format!(
                "{} epoch {} train_loss {:.4} val_loss {} val_acc {}",
                m.phase,
                m.epoch,
                m.train_loss,
                m.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
                m.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            ),
        )
    })?;
    drop(metrics);
    let model_path = dir.join("model.itnf");
    model.save(&model_path)?;
    let model_bytes = std::fs::metadata(&model_path)?.len();

    // Tag the held-out target pairs and score.
    let mut refs = Vec::new();
    let mut hyps = Vec::new();
    let mut spoken_eval = Vec::new();
    for (pair, _rows) in eval_set {
        let words: Vec<&str> = pair.spoken.iter().map(String::as_str).collect();
        hyps.push(tag_to_written(&model, &resources.lexicon, &words));
        refs.push(pair.written.clone());
        spoken_eval.push(pair.spoken.join(" "));
    }
    write_lines(&dir.join("eval_ref.txt"), &refs)?;
    write_lines(&dir.join("eval_hyp.txt"), &hyps)?;
    write_lines(&dir.join("eval_spoken.txt"), &spoken_eval)?;
    let accuracy = itn_core::eval::evaluate_lines(
        &refs,
        &hyps,
        &itn_core::eval::EntityMatcher::default_three(),
    );

    // Domain overlap, written and spoken sides.
    let stop = itn_core::default_stopwords();
    let written_overlap = analyze_overlap_lines(&source, &target, &[1, 2], 10_000, false, &stop)?;
    let spoken_src = ops::spoken_text(&dir.join("source_pairs.jsonl"))?;
    let spoken_tgt = ops::spoken_text(&dir.join("target_pairs.jsonl"))?;
    let spoken_overlap =
        analyze_overlap_lines(&spoken_src, &spoken_tgt, &[1, 2], 10_000, false, &stop)?;

    let report = PipelineReport {
        source_sentences: source_summary.lines,
        target_sentences: target_summary.lines,
        source_pairs: source_summary.pairs,
        target_pairs: target_summary.pairs,
        source_written_entities: source_summary.written_entities,
        source_spoken_forms: source_summary.spoken_forms,
        source_diversity: source_summary.diversity().unwrap_or(0.0),
        skipped_sentences: source_summary.skipped_sentences + target_summary.skipped_sentences,
        vocab_size: model.vocab.len(),
        model_bytes,
        written_overlap,
        spoken_overlap,
        accuracy,
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(dir.join("report.json"), format!("{json}\n"))?;
    Ok(report)
}
