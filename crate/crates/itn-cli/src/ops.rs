//! Shared command implementations: everything the subcommands and the
//! pipeline do, as plain functions over files and loaded resources.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use itn_core::eval::{evaluate_lines, ngram_overlap, AccuracyReport, EntityMatcher, OverlapConfig};
use itn_core::labels::{
    apply_labels, infer_labels_from_trace, infer_labels_search, read_label_file, write_label_file,
};
use itn_core::tagger::{example_from_words, LabeledExample, TaggerModel};
use itn_core::tokenize::{build_vocab, grammar_spoken_vocabulary, PieceVocab};
use itn_core::verbalize::read_pairs;
use itn_core::{Grammar, LabelRow, PatternSet, RewriteLexicon, SpokenWrittenPair};

pub fn log(level: &str, message: &str) {
    eprintln!("{level}\t{message}");
}

/// Grammar, lexicon, and extraction patterns, from files or the embedded
/// defaults.
pub struct Resources {
    pub grammar: Grammar,
    pub lexicon: RewriteLexicon,
    pub patterns: PatternSet,
}

impl Resources {
    pub fn load(
        grammar: Option<&Path>,
        lexicon: Option<&Path>,
        patterns: Option<&Path>,
    ) -> Result<Resources> {
        Ok(Resources {
            grammar: match grammar {
                Some(p) => Grammar::from_path(p).with_context(|| format!("grammar {}", p.display()))?,
                None => Grammar::default_english(),
            },
            lexicon: match lexicon {
                Some(p) => {
                    RewriteLexicon::from_path(p).with_context(|| format!("lexicon {}", p.display()))?
                }
                None => RewriteLexicon::default_english(),
            },
            patterns: match patterns {
                Some(p) => {
                    PatternSet::from_path(p).with_context(|| format!("patterns {}", p.display()))?
                }
                None => PatternSet::default_english(),
            },
        })
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in lines {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Spoken-side text of a corpus file: JSONL pair records (detected by a
/// leading `{`) yield their joined spoken tokens, plain text passes through.
pub fn spoken_text(path: &Path) -> Result<Vec<String>> {
    let lines = read_lines(path)?;
    let jsonl = lines
        .iter()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    if !jsonl {
        return Ok(lines);
    }
    let pairs = read_pairs(std::io::Cursor::new(lines.join("\n")))?;
    Ok(pairs.iter().map(|p| p.spoken.join(" ")).collect())
}

/// Load JSONL pairs and derive per-token label rows from their traces.
pub fn load_labeled_pairs(
    path: &Path,
    grammar: &Grammar,
    lexicon: &RewriteLexicon,
) -> Result<Vec<(SpokenWrittenPair, Vec<LabelRow>)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let pairs = read_pairs(BufReader::new(file))?;
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let rows = infer_labels_from_trace(&pair, grammar, lexicon)
            .with_context(|| format!("labels for {:?}", pair.written))?;
        out.push((pair, rows));
    }
    Ok(out)
}

/// Piece-level training examples from labeled pairs.
pub fn examples_from_labeled(
    labeled: &[(SpokenWrittenPair, Vec<LabelRow>)],
    vocab: &PieceVocab,
) -> Vec<LabeledExample> {
    labeled
        .iter()
        .map(|(pair, rows)| {
            let words: Vec<&str> = pair.spoken.iter().map(String::as_str).collect();
            example_from_words(&words, rows, vocab)
        })
        .collect()
}

/// Model hypothesis for a spoken sentence: tag, then apply the labels. Falls
/// back to the identity transcription when the labels cannot apply.
pub fn tag_to_written(model: &TaggerModel, lexicon: &RewriteLexicon, words: &[&str]) -> String {
    match model.tag(words) {
        Ok((rows, _repaired)) => {
            apply_labels(words, &rows, lexicon).unwrap_or_else(|_| words.join(" "))
        }
        Err(_) => words.join(" "),
    }
}

pub fn build_vocab_from_corpus(
    corpus: &[String],
    grammar: &Grammar,
    target_size: usize,
) -> Result<PieceVocab> {
    let protected = grammar_spoken_vocabulary(grammar);
    Ok(build_vocab(corpus.iter(), &protected, target_size)?)
}

/// Minimum vocabulary size the protected set allows.
pub fn min_vocab_size(grammar: &Grammar) -> usize {
    3 + 256 + 2 * grammar_spoken_vocabulary(grammar).len()
}

// ------------------------------------------------------------ infer/apply

pub fn infer_labels_trace_file(
    pairs_path: &Path,
    out_path: &Path,
    grammar: &Grammar,
    lexicon: &RewriteLexicon,
) -> Result<usize> {
    let labeled = load_labeled_pairs(pairs_path, grammar, lexicon)?;
    let sentences: Vec<(Vec<String>, Vec<LabelRow>)> = labeled
        .into_iter()
        .map(|(pair, rows)| (pair.spoken, rows))
        .collect();
    let mut out = BufWriter::new(File::create(out_path)?);
    write_label_file(&mut out, &sentences)?;
    Ok(sentences.len())
}

pub fn infer_labels_search_files(
    spoken_path: &Path,
    written_path: &Path,
    out_path: &Path,
    lexicon: &RewriteLexicon,
) -> Result<(usize, usize)> {
    let spoken_lines = read_lines(spoken_path)?;
    let written_lines = read_lines(written_path)?;
    if spoken_lines.len() != written_lines.len() {
        bail!(
            "spoken and written files differ in length ({} vs {})",
            spoken_lines.len(),
            written_lines.len()
        );
    }
    let mut sentences = Vec::new();
    let mut underivable = 0usize;
    for (spoken, written) in spoken_lines.iter().zip(&written_lines) {
        let words: Vec<&str> = spoken.split_whitespace().collect();
        match infer_labels_search(&words, written, lexicon)? {
            Some(rows) => sentences.push((words.iter().map(|w| w.to_string()).collect(), rows)),
            None => {
                underivable += 1;
                log("warn", &format!("no derivation for {written:?}"));
            }
        }
    }
    let mut out = BufWriter::new(File::create(out_path)?);
    write_label_file(&mut out, &sentences)?;
    Ok((sentences.len(), underivable))
}

pub fn apply_labels_file(
    labels_path: &Path,
    out: &mut dyn Write,
    lexicon: &RewriteLexicon,
) -> Result<usize> {
    let file = File::open(labels_path).with_context(|| format!("opening {}", labels_path.display()))?;
    let sentences = read_label_file(BufReader::new(file))?;
    for (tokens, rows) in &sentences {
        let words: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let written = apply_labels(&words, rows, lexicon)?;
        writeln!(out, "{written}")?;
    }
    Ok(sentences.len())
}

// ----------------------------------------------------------------- scoring

pub fn evaluate_files(ref_path: &Path, hyp_path: &Path) -> Result<AccuracyReport> {
    let refs = read_lines(ref_path)?;
    let hyps = read_lines(hyp_path)?;
    if refs.len() != hyps.len() {
        bail!(
            "ref and hyp line counts differ ({} vs {})",
            refs.len(),
            hyps.len()
        );
    }
    Ok(evaluate_lines(&refs, &hyps, &EntityMatcher::default_three()))
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct OverlapReport {
    pub unigram: Option<f64>,
    pub bigram: Option<f64>,
}

pub fn analyze_overlap_lines(
    a: &[String],
    b: &[String],
    ns: &[usize],
    top_k: usize,
    jaccard: bool,
    stopwords: &std::collections::HashSet<String>,
) -> Result<OverlapReport> {
    let config = OverlapConfig { top_k, jaccard };
    let mut report = OverlapReport {
        unigram: None,
        bigram: None,
    };
    for &n in ns {
        let value = ngram_overlap(a, b, n, config, stopwords)?;
        match n {
            1 => report.unigram = Some(value),
            2 => report.bigram = Some(value),
            other => bail!("only unigram and bigram overlap are supported, got n={other}"),
        }
    }
    Ok(report)
}
