//! Scoring and analysis: minimal edit-distance token alignment, entity-typed
//! accuracy over aligned reference/hypothesis pairs, the augmentation
//! diversity ratio, and top-k n-gram domain overlap.

use std::collections::{BTreeMap, HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{ItnError, Result};
use crate::types::EntityKind;

// -------------------------------------------------------------- alignment

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// One step of a reference/hypothesis alignment. `Delete` drops a reference
/// token, `Insert` adds a hypothesis token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignStep {
    pub op: AlignOp,
    pub ref_tok: Option<String>,
    pub hyp_tok: Option<String>,
}

/// Minimal edit-distance alignment of token sequences. Ties are broken
/// preferring match over substitute over delete over insert, scanning left
/// to right.
pub fn align_tokens(ref_toks: &[&str], hyp_toks: &[&str]) -> Vec<AlignStep> {
    let n = ref_toks.len();
    let m = hyp_toks.len();
    // Suffix costs so the walk below can break ties left to right.
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let mut best = usize::MAX;
            if i < n && j < m {
                let step = if ref_toks[i] == hyp_toks[j] { 0 } else { 1 };
                best = best.min(cost[i + 1][j + 1] + step);
            }
            if i < n {
                best = best.min(cost[i + 1][j] + 1);
            }
            if j < m {
                best = best.min(cost[i][j + 1] + 1);
            }
            cost[i][j] = best;
        }
    }
    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        let here = cost[i][j];
        if i < n && j < m && ref_toks[i] == hyp_toks[j] && cost[i + 1][j + 1] == here {
            steps.push(AlignStep {
                op: AlignOp::Match,
                ref_tok: Some(ref_toks[i].to_string()),
                hyp_tok: Some(hyp_toks[j].to_string()),
            });
            i += 1;
            j += 1;
        } else if i < n && j < m && ref_toks[i] != hyp_toks[j] && cost[i + 1][j + 1] + 1 == here {
            steps.push(AlignStep {
                op: AlignOp::Substitute,
                ref_tok: Some(ref_toks[i].to_string()),
                hyp_tok: Some(hyp_toks[j].to_string()),
            });
            i += 1;
            j += 1;
        } else if i < n && cost[i + 1][j] + 1 == here {
            steps.push(AlignStep {
                op: AlignOp::Delete,
                ref_tok: Some(ref_toks[i].to_string()),
                hyp_tok: None,
            });
            i += 1;
        } else {
            steps.push(AlignStep {
                op: AlignOp::Insert,
                ref_tok: None,
                hyp_tok: Some(hyp_toks[j].to_string()),
            });
            j += 1;
        }
    }
    steps
}

pub fn alignment_cost(steps: &[AlignStep]) -> usize {
    steps.iter().filter(|s| s.op != AlignOp::Match).count()
}

// ----------------------------------------------------------- entity typing

/// Regex-based written-token classifier for the evaluated entity kinds.
#[derive(Debug)]
pub struct EntityMatcher {
    patterns: Vec<(EntityKind, Regex)>,
}

impl EntityMatcher {
    /// The paper's three evaluated kinds: cardinal, currency, fraction.
    pub fn default_three() -> EntityMatcher {
        EntityMatcher {
            patterns: vec![
                (
                    EntityKind::Currency,
                    Regex::new(r"^[$£€]\d+(\.\d{1,2})?$").unwrap(),
                ),
                (EntityKind::Fraction, Regex::new(r"^\d+/\d+$").unwrap()),
                (EntityKind::Cardinal, Regex::new(r"^\d+$").unwrap()),
            ],
        }
    }

    /// Extend the evaluated kinds with extra (kind, pattern) pairs.
    pub fn with_extra(mut self, kind: EntityKind, pattern: &str) -> Result<EntityMatcher> {
        let regex = Regex::new(&format!("^(?:{pattern})$"))
            .map_err(|e| ItnError::Grammar(format!("bad entity pattern: {e}")))?;
        self.patterns.push((kind, regex));
        Ok(self)
    }

    pub fn classify(&self, token: &str) -> Option<EntityKind> {
        self.patterns
            .iter()
            .find(|(_, re)| re.is_match(token))
            .map(|(k, _)| k)
            .copied()
    }
}

/// Classify a written token with the default three evaluated kinds.
pub fn classify_entity(token: &str) -> Option<EntityKind> {
    EntityMatcher::default_three().classify(token)
}

// ----------------------------------------------------------------- accuracy

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub correct: u64,
    pub error: u64,
    /// `None` renders as "n/a" when the kind never occurs.
    pub accuracy: Option<f64>,
}

impl KindScore {
    fn finalize(mut self) -> KindScore {
        let total = self.correct + self.error;
        self.accuracy = if total == 0 {
            None
        } else {
            Some(self.correct as f64 / total as f64)
        };
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: KindScore,
    pub cardinal: KindScore,
    pub currency: KindScore,
    pub fraction: KindScore,
}

impl AccuracyReport {
    pub fn kind(&self, kind: EntityKind) -> Option<&KindScore> {
        match kind {
            EntityKind::Cardinal => Some(&self.cardinal),
            EntityKind::Currency => Some(&self.currency),
            EntityKind::Fraction => Some(&self.fraction),
            _ => None,
        }
    }
}

/// Entity accuracy over aligned sentences: each reference token classified as
/// an evaluated entity kind is correct iff its aligned hypothesis token is
/// string-identical; accuracy = correct / (correct + error) per kind, with
/// all kinds pooled for the overall score.
pub fn accuracy(alignments: &[Vec<AlignStep>], matcher: &EntityMatcher) -> AccuracyReport {
    let mut per: HashMap<EntityKind, KindScore> = HashMap::new();
    for steps in alignments {
        for step in steps {
            let Some(ref_tok) = step.ref_tok.as_deref() else {
                continue;
            };
            let Some(kind) = matcher.classify(ref_tok) else {
                continue;
            };
            let entry = per.entry(kind).or_default();
            let correct = step.op == AlignOp::Match;
            if correct {
                entry.correct += 1;
            } else {
                entry.error += 1;
            }
        }
    }
    let mut overall = KindScore::default();
    for score in per.values() {
        overall.correct += score.correct;
        overall.error += score.error;
    }
    let take = |k: EntityKind, per: &HashMap<EntityKind, KindScore>| {
        per.get(&k).copied().unwrap_or_default().finalize()
    };
    AccuracyReport {
        overall: overall.finalize(),
        cardinal: take(EntityKind::Cardinal, &per),
        currency: take(EntityKind::Currency, &per),
        fraction: take(EntityKind::Fraction, &per),
    }
}

/// Align whitespace-tokenized reference/hypothesis line pairs and score them.
pub fn evaluate_lines(refs: &[String], hyps: &[String], matcher: &EntityMatcher) -> AccuracyReport {
    let alignments: Vec<Vec<AlignStep>> = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| {
            let rt: Vec<&str> = r.split_whitespace().collect();
            let ht: Vec<&str> = h.split_whitespace().collect();
            align_tokens(&rt, &ht)
        })
        .collect();
    accuracy(&alignments, matcher)
}

// ---------------------------------------------------------------- diversity

/// The ratio of generated spoken-form entities to written-form entities.
pub fn diversity(written_entity_count: u64, spoken_form_count: u64) -> Result<f64> {
    if written_entity_count == 0 {
        return Err(ItnError::ZeroWrittenEntities);
    }
    Ok(spoken_form_count as f64 / written_entity_count as f64)
}

// ------------------------------------------------------------ n-gram overlap

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapConfig {
    pub top_k: usize,
    /// When set, the denominator is the union size (Jaccard) instead of
    /// min(top_k, |A|, |B|).
    pub jaccard: bool,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            top_k: 10_000,
            jaccard: false,
        }
    }
}

fn top_ngrams(
    lines: &[String],
    n: usize,
    top_k: usize,
    stopwords: &HashSet<String>,
) -> Vec<String> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in lines {
        let toks: Vec<String> = line
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect();
        if toks.len() < n {
            continue;
        }
        for window in toks.windows(n) {
            if window.iter().any(|t| stopwords.contains(t)) {
                continue;
            }
            *counts.entry(window.join(" ")).or_default() += 1;
        }
    }
    let mut items: Vec<(String, u64)> = counts.into_iter().collect();
    // Frequency ties break lexicographically; BTreeMap order makes the sort
    // input deterministic.
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.truncate(top_k);
    items.into_iter().map(|(g, _)| g).collect()
}

/// Vocabulary overlap of the top-k most frequent n-grams of two corpora,
/// excluding stopwords, as a percentage.
pub fn ngram_overlap(
    corpus_a: &[String],
    corpus_b: &[String],
    n: usize,
    config: OverlapConfig,
    stopwords: &HashSet<String>,
) -> Result<f64> {
    let a: HashSet<String> = top_ngrams(corpus_a, n, config.top_k, stopwords)
        .into_iter()
        .collect();
    let b: HashSet<String> = top_ngrams(corpus_b, n, config.top_k, stopwords)
        .into_iter()
        .collect();
    if a.is_empty() {
        return Err(ItnError::EmptyCorpus(format!("no {n}-grams in corpus a")));
    }
    if b.is_empty() {
        return Err(ItnError::EmptyCorpus(format!("no {n}-grams in corpus b")));
    }
    let intersection = a.intersection(&b).count();
    let denom = if config.jaccard {
        a.union(&b).count()
    } else {
        config.top_k.min(a.len()).min(b.len())
    };
    Ok(intersection as f64 / denom as f64 * 100.0)
}
