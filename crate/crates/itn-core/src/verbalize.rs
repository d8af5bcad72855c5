//! The augmentation core: exhaustive recursive expansion of rewrite rules
//! into spoken variants, and splicing sampled variants back into sentences
//! with full generation traces.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ItnError, Result};
use crate::extract::{canonicalize, extract_entities, PatternSet};
use crate::grammar::{Grammar, TemplateItem};
use crate::labels;
use crate::lexicon::RewriteLexicon;
use crate::types::{
    EntityKind, LabelRow, PrependClass, RegionClass, RewriteClass, SpaceClass, SpokenWrittenPair,
    TraceEntry, WrittenEntity,
};

/// One spoken token produced by a rule alternative, with the label metadata
/// the template annotations assigned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpokenToken {
    pub word: String,
    pub class: RewriteClass,
    pub prepend: PrependClass,
    pub post_start: RegionClass,
    pub post_end: RegionClass,
    pub space_on: bool,
    /// Leaf rule and alternative that emitted the word.
    pub rule: String,
    pub alt: usize,
}

impl SpokenToken {
    pub fn label_row(&self) -> LabelRow {
        LabelRow {
            rewrite: self.class,
            prepend: self.prepend,
            space: if self.space_on {
                SpaceClass::On
            } else {
                SpaceClass::Off
            },
            post_start: self.post_start,
            post_end: self.post_end,
        }
    }
}

/// All spoken variants of one entity, de-duplicated by token sequence.
#[derive(Debug, Clone)]
pub struct VariantSet {
    pub entity: WrittenEntity,
    pub spoken_forms: Vec<Vec<SpokenToken>>,
}

impl VariantSet {
    pub fn words(&self) -> Vec<Vec<&str>> {
        self.spoken_forms
            .iter()
            .map(|f| f.iter().map(|t| t.word.as_str()).collect())
            .collect()
    }
}

/// Augmentation parameters. Sampling is reproducible bit-for-bit per seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Variants spliced back per sentence (the paper's N).
    pub n_variants_per_sentence: usize,
    /// Cap on expansions per entity.
    pub max_expansions_per_entity: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_variants_per_sentence: 8,
            max_expansions_per_entity: 64,
            seed: 0,
        }
    }
}

struct Expander<'g> {
    grammar: &'g Grammar,
    cap: usize,
    memo: HashMap<(String, String), Rc<Vec<Vec<SpokenToken>>>>,
}

impl<'g> Expander<'g> {
    fn new(grammar: &'g Grammar, cap: usize) -> Self {
        Expander {
            grammar,
            cap: cap.max(1),
            memo: HashMap::new(),
        }
    }

    fn expand(&mut self, rule_id: &str, text: &str) -> Result<Rc<Vec<Vec<SpokenToken>>>> {
        let key = (rule_id.to_string(), text.to_string());
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        let rule = self
            .grammar
            .rule(rule_id)
            .ok_or_else(|| ItnError::Grammar(format!("unknown rule {rule_id}")))?;

        let mut out: Vec<Vec<SpokenToken>> = Vec::new();
        let mut seen: HashSet<Vec<String>> = HashSet::new();

        if let Some(caps) = rule.pattern.captures(text) {
            'alts: for (alt_idx, template) in rule.alternatives.iter().enumerate() {
                // Expansion list per template item.
                let mut slots: Vec<Vec<Vec<SpokenToken>>> = Vec::with_capacity(template.items.len());
                let mut dead = false;
                for item in &template.items {
                    match item {
                        TemplateItem::Word(w) => {
                            slots.push(vec![vec![SpokenToken {
                                word: w.word.clone(),
                                class: w.class,
                                prepend: w.prepend,
                                post_start: w.post_start,
                                post_end: w.post_end,
                                space_on: w.space_on,
                                rule: rule_id.to_string(),
                                alt: alt_idx,
                            }]]);
                        }
                        TemplateItem::Invoke(inv) => {
                            let captured = caps
                                .get(inv.capture)
                                .map(|m| m.as_str())
                                .unwrap_or_default();
                            let subs = self.expand(&inv.rule, captured)?;
                            if subs.is_empty() {
                                dead = true;
                                break;
                            }
                            let mut adjusted = Vec::with_capacity(subs.len());
                            for sub in subs.iter() {
                                let mut sub = sub.clone();
                                annotate_edges(
                                    &mut sub,
                                    inv.prepend,
                                    inv.post_start,
                                    inv.post_end,
                                    inv.space_on,
                                )?;
                                adjusted.push(sub);
                            }
                            slots.push(adjusted);
                        }
                    }
                }
                if dead {
                    continue 'alts;
                }
                // Odometer over the slots, rightmost varying fastest.
                let sizes: Vec<usize> = slots.iter().map(Vec::len).collect();
                let mut idx = vec![0usize; slots.len()];
                let raw_budget = self.cap.saturating_mul(256);
                let mut raw = 0usize;
                loop {
                    let mut form: Vec<SpokenToken> = Vec::new();
                    for (slot, &i) in slots.iter().zip(&idx) {
                        form.extend_from_slice(&slot[i]);
                    }
                    let words: Vec<String> = form.iter().map(|t| t.word.clone()).collect();
                    if seen.insert(words) {
                        out.push(form);
                        if out.len() >= self.cap {
                            break 'alts;
                        }
                    }
                    raw += 1;
                    if raw >= raw_budget {
                        break 'alts;
                    }
                    // Advance odometer.
                    let mut k = idx.len();
                    loop {
                        if k == 0 {
                            break;
                        }
                        k -= 1;
                        idx[k] += 1;
                        if idx[k] < sizes[k] {
                            break;
                        }
                        idx[k] = 0;
                        if k == 0 {
                            break;
                        }
                    }
                    if idx.iter().all(|&i| i == 0) {
                        break;
                    }
                }
            }
        }

        let rc = Rc::new(out);
        self.memo.insert(key, rc.clone());
        Ok(rc)
    }
}

fn annotate_edges(
    tokens: &mut [SpokenToken],
    prepend: PrependClass,
    post_start: RegionClass,
    post_end: RegionClass,
    space_on: bool,
) -> Result<()> {
    if tokens.is_empty() {
        return Ok(());
    }
    if prepend != PrependClass::None {
        let first = tokens.first_mut().unwrap();
        if first.prepend != PrependClass::None {
            return Err(ItnError::Grammar(format!(
                "conflicting prepend annotations on token {:?}",
                first.word
            )));
        }
        first.prepend = prepend;
    }
    if post_start != RegionClass::None {
        let first = tokens.first_mut().unwrap();
        if first.post_start != RegionClass::None {
            return Err(ItnError::Grammar(format!(
                "conflicting post-start annotations on token {:?}",
                first.word
            )));
        }
        first.post_start = post_start;
    }
    if post_end != RegionClass::None {
        let last = tokens.last_mut().unwrap();
        if last.post_end != RegionClass::None {
            return Err(ItnError::Grammar(format!(
                "conflicting post-end annotations on token {:?}",
                last.word
            )));
        }
        last.post_end = post_end;
    }
    if space_on {
        tokens.first_mut().unwrap().space_on = true;
    }
    Ok(())
}

/// Expand a canonicalized entity into its full variant set: the cross-product
/// of all applicable rule alternatives, recursively expanded, de-duplicated,
/// and truncated at `cap` in rule-file depth-first order.
pub fn expand_entity(entity: &WrittenEntity, grammar: &Grammar, cap: usize) -> Result<VariantSet> {
    assert!(
        !entity.canonical.is_empty(),
        "expand_entity requires a canonicalized entity"
    );
    let entry = entity.kind.as_str();
    if grammar.rule(entry).is_none() {
        return Err(ItnError::NoRuleMatch {
            kind: entry.to_string(),
            canonical: entity.canonical.clone(),
        });
    }
    let mut expander = Expander::new(grammar, cap);
    let forms = expander.expand(entry, &entity.canonical)?;
    if forms.is_empty() {
        return Err(ItnError::NoRuleMatch {
            kind: entry.to_string(),
            canonical: entity.canonical.clone(),
        });
    }
    let mut spoken_forms: Vec<Vec<SpokenToken>> = forms.as_ref().clone();
    for form in &mut spoken_forms {
        if let Some(first) = form.first_mut() {
            first.space_on = true;
        }
    }
    Ok(VariantSet {
        entity: entity.clone(),
        spoken_forms,
    })
}

/// Re-derive a variant's annotated tokens from its wire trace: a guided
/// depth-first walk of the grammar constrained to the recorded (rule, alt)
/// leaf tags. Returns `None` when the trace does not replay.
pub fn replay_entity_tokens(
    grammar: &Grammar,
    entity: &WrittenEntity,
    words: &[&str],
    leaf_tags: &[(String, usize)],
) -> Option<Vec<SpokenToken>> {
    debug_assert_eq!(words.len(), leaf_tags.len());
    let mut pos = 0usize;
    let mut toks = replay_rule(grammar, entity.kind.as_str(), &entity.canonical, words, leaf_tags, &mut pos)?;
    if pos != words.len() {
        return None;
    }
    if let Some(first) = toks.first_mut() {
        first.space_on = true;
    }
    Some(toks)
}

fn replay_rule(
    grammar: &Grammar,
    rule_id: &str,
    text: &str,
    words: &[&str],
    tags: &[(String, usize)],
    pos: &mut usize,
) -> Option<Vec<SpokenToken>> {
    let rule = grammar.rule(rule_id)?;
    let caps = rule.pattern.captures(text)?;
    'alts: for (alt_idx, template) in rule.alternatives.iter().enumerate() {
        let saved = *pos;
        let mut toks: Vec<SpokenToken> = Vec::new();
        for item in &template.items {
            match item {
                TemplateItem::Word(w) => {
                    if *pos >= words.len() {
                        *pos = saved;
                        continue 'alts;
                    }
                    let tag = &tags[*pos];
                    if words[*pos] != w.word || tag.0 != rule_id || tag.1 != alt_idx {
                        *pos = saved;
                        continue 'alts;
                    }
                    toks.push(SpokenToken {
                        word: w.word.clone(),
                        class: w.class,
                        prepend: w.prepend,
                        post_start: w.post_start,
                        post_end: w.post_end,
                        space_on: w.space_on,
                        rule: rule_id.to_string(),
                        alt: alt_idx,
                    });
                    *pos += 1;
                }
                TemplateItem::Invoke(inv) => {
                    let captured = caps.get(inv.capture).map(|m| m.as_str()).unwrap_or("");
                    match replay_rule(grammar, &inv.rule, captured, words, tags, pos) {
                        Some(mut sub) => {
                            if annotate_edges(
                                &mut sub,
                                inv.prepend,
                                inv.post_start,
                                inv.post_end,
                                inv.space_on,
                            )
                            .is_err()
                            {
                                *pos = saved;
                                continue 'alts;
                            }
                            toks.extend(sub);
                        }
                        None => {
                            *pos = saved;
                            continue 'alts;
                        }
                    }
                }
            }
        }
        return Some(toks);
    }
    None
}

/// Lowercase and strip edge punctuation from non-entity text, keeping
/// word-internal apostrophes and hyphens, the way ASR output looks.
pub fn normalize_spoken_fragment(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|tok| {
            let lowered = tok.to_lowercase();
            let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}

/// A generated pair together with its per-token label rows.
#[derive(Debug, Clone)]
pub struct BuiltPair {
    pub pair: SpokenWrittenPair,
    pub rows: Vec<LabelRow>,
}

/// Per-sentence augmentation product: the sampled pairs plus the counts that
/// feed the diversity metric.
#[derive(Debug, Clone)]
pub struct SentenceAugmentation {
    pub pairs: Vec<BuiltPair>,
    pub written_entities: usize,
    pub spoken_forms: usize,
    pub entities_by_kind: Vec<(EntityKind, usize)>,
}

/// Expand and splice: produces up to `config.n_variants_per_sentence` pairs
/// for one sentence. Every emitted pair is verified to replay back to the
/// written sentence through the label algebra; a sentence whose pairs cannot
/// replay (e.g. punctuation the spoken side strips) fails as a unit and the
/// caller counts it.
pub fn augment_sentence(
    sentence: &str,
    config: &AugmentConfig,
    grammar: &Grammar,
    patterns: &PatternSet,
    lexicon: &RewriteLexicon,
) -> Result<SentenceAugmentation> {
    let entities = extract_entities(sentence, patterns);
    let mut variant_sets: Vec<VariantSet> = Vec::with_capacity(entities.len());
    for entity in &entities {
        let canonical = canonicalize(entity)?;
        variant_sets.push(expand_entity(&canonical, grammar, config.max_expansions_per_entity)?);
    }

    let mut kind_counts: BTreeMap<EntityKind, usize> = BTreeMap::new();
    for vs in &variant_sets {
        *kind_counts.entry(vs.entity.kind).or_default() += 1;
    }
    let spoken_forms = variant_sets.iter().map(|v| v.spoken_forms.len()).sum();

    let combos = sample_combos(
        &variant_sets.iter().map(|v| v.spoken_forms.len()).collect::<Vec<_>>(),
        config.n_variants_per_sentence,
        config.seed,
    );

    let mut pairs = Vec::with_capacity(combos.len());
    for combo in combos {
        let built = build_pair(sentence, &variant_sets, &combo)?;
        let words: Vec<&str> = built.pair.spoken.iter().map(String::as_str).collect();
        let replayed = labels::apply_labels(&words, &built.rows, lexicon)?;
        if replayed != built.pair.written {
            return Err(ItnError::Grammar(format!(
                "generated pair does not replay: {:?} -> {:?} != {:?}",
                words.join(" "),
                replayed,
                built.pair.written
            )));
        }
        pairs.push(built);
    }

    Ok(SentenceAugmentation {
        pairs,
        written_entities: variant_sets.len(),
        spoken_forms,
        entities_by_kind: kind_counts.into_iter().collect(),
    })
}

/// Deterministically choose up to `n` combo index vectors out of the cross
/// product of the per-entity variant counts. The full product is enumerated
/// when it fits; otherwise combos are sampled uniformly without replacement.
fn sample_combos(sizes: &[usize], n: usize, seed: u64) -> Vec<Vec<usize>> {
    if sizes.is_empty() {
        return vec![Vec::new()];
    }
    let total: u128 = sizes.iter().map(|&s| s as u128).fold(1u128, |a, b| a.saturating_mul(b));
    let decode = |mut k: u128| -> Vec<usize> {
        let mut combo = vec![0usize; sizes.len()];
        for i in (0..sizes.len()).rev() {
            combo[i] = (k % sizes[i] as u128) as usize;
            k /= sizes[i] as u128;
        }
        combo
    };
    if total <= n as u128 {
        return (0..total).map(decode).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<u128> = Vec::with_capacity(n);
    if total <= 65_536 {
        // Partial Fisher-Yates over the materialized index range.
        let mut all: Vec<u128> = (0..total).collect();
        let len = all.len();
        for i in 0..n.min(len) {
            let j = rng.gen_range(i..len);
            all.swap(i, j);
            picked.push(all[i]);
        }
    } else {
        let mut seen: HashSet<u128> = HashSet::new();
        let mut attempts = 0usize;
        while picked.len() < n && attempts < n.saturating_mul(1000) {
            attempts += 1;
            let mut k: u128 = 0;
            for &s in sizes {
                k = k * s as u128 + rng.gen_range(0..s) as u128;
            }
            if seen.insert(k) {
                picked.push(k);
            }
        }
    }
    picked.sort_unstable();
    picked.into_iter().map(decode).collect()
}

fn build_pair(
    sentence: &str,
    variant_sets: &[VariantSet],
    combo: &[usize],
) -> Result<BuiltPair> {
    let mut spoken: Vec<String> = Vec::new();
    let mut rows: Vec<LabelRow> = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut pos = 0usize;
    for (vs, &choice) in variant_sets.iter().zip(combo) {
        for w in normalize_spoken_fragment(&sentence[pos..vs.entity.start]) {
            spoken.push(w);
            rows.push(LabelRow::identity());
        }
        for tok in &vs.spoken_forms[choice] {
            trace.push(TraceEntry {
                tok_idx: spoken.len(),
                rule: tok.rule.clone(),
                alt: tok.alt,
                entity_kind: vs.entity.kind,
                entity_span: (vs.entity.start, vs.entity.end),
            });
            spoken.push(tok.word.clone());
            rows.push(tok.label_row());
        }
        pos = vs.entity.end;
    }
    for w in normalize_spoken_fragment(&sentence[pos..]) {
        spoken.push(w);
        rows.push(LabelRow::identity());
    }
    Ok(BuiltPair {
        pair: SpokenWrittenPair {
            spoken,
            written: sentence.to_string(),
            trace: Some(trace),
        },
        rows,
    })
}

/// Corpus-level counters reported after augmentation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub lines: u64,
    pub pairs: u64,
    pub written_entities: u64,
    pub spoken_forms: u64,
    pub entities_by_kind: BTreeMap<String, u64>,
    pub skipped_sentences: u64,
}

impl AugmentSummary {
    /// The Eq. 1 ratio of generated spoken-form entities to written-form
    /// entities.
    pub fn diversity(&self) -> Option<f64> {
        crate::eval::diversity(self.written_entities, self.spoken_forms).ok()
    }
}

/// Mixes the corpus seed with a line number so per-sentence sampling is
/// independent of worker count and chunking (splitmix64 finalizer).
pub fn line_seed(seed: u64, line_idx: u64) -> u64 {
    let mut z = seed ^ line_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Augment a line-delimited written corpus into JSONL pair records. Streaming
/// and chunked: memory stays bounded by the chunk size, not the corpus.
/// Failed sentences are logged through `log` and counted, and processing
/// continues. With `workers > 1` the chunk is processed by a rayon pool;
/// per-line seeds keep the output byte-identical for any worker count.
pub fn augment_corpus<R: BufRead, W: Write>(
    reader: R,
    writer: &mut W,
    config: &AugmentConfig,
    grammar: &Grammar,
    patterns: &PatternSet,
    lexicon: &RewriteLexicon,
    workers: usize,
    mut log: impl FnMut(&str),
) -> Result<AugmentSummary> {
    const CHUNK: usize = 256;
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| ItnError::Grammar(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let mut summary = AugmentSummary::default();
    let mut lines = reader.lines();
    let mut line_idx: u64 = 0;
    loop {
        let mut chunk: Vec<(u64, String)> = Vec::with_capacity(CHUNK);
        for _ in 0..CHUNK {
            match lines.next() {
                Some(line) => {
                    chunk.push((line_idx, line?));
                    line_idx += 1;
                }
                None => break,
            }
        }
        if chunk.is_empty() {
            break;
        }
        let run_one = |(idx, sentence): &(u64, String)| {
            let mut cfg = *config;
            cfg.seed = line_seed(config.seed, *idx);
            (*idx, augment_sentence(sentence, &cfg, grammar, patterns, lexicon))
        };
        let results: Vec<(u64, Result<SentenceAugmentation>)> = match &pool {
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                chunk.par_iter().map(run_one).collect()
            }),
            None => chunk.iter().map(run_one).collect(),
        };
        for (idx, result) in results {
            summary.lines += 1;
            match result {
                Ok(aug) => {
                    summary.written_entities += aug.written_entities as u64;
                    summary.spoken_forms += aug.spoken_forms as u64;
                    for (kind, count) in &aug.entities_by_kind {
                        *summary
                            .entities_by_kind
                            .entry(kind.as_str().to_string())
                            .or_default() += *count as u64;
                    }
                    for built in &aug.pairs {
                        serde_json::to_writer(&mut *writer, &built.pair)?;
                        writer.write_all(b"\n")?;
                        summary.pairs += 1;
                    }
                }
                Err(err) => {
                    summary.skipped_sentences += 1;
                    log(&format!("skipping line {idx}: {err}"));
                }
            }
        }
    }
    Ok(summary)
}

/// Read pair records back from a JSONL stream.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<SpokenWrittenPair>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> (Grammar, PatternSet, RewriteLexicon) {
        (
            Grammar::default_english(),
            PatternSet::default_english(),
            RewriteLexicon::default_english(),
        )
    }

    fn expand_words(kind: EntityKind, raw: &str, cap: usize) -> Vec<String> {
        let (grammar, _, _) = fixtures();
        let entity = canonicalize(&WrittenEntity::new(kind, raw, 0, raw.len())).unwrap();
        expand_entity(&entity, &grammar, cap)
            .unwrap()
            .spoken_forms
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| t.word.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn cardinal_123_matches_published_variants() {
        let got: HashSet<String> = expand_words(EntityKind::Cardinal, "123", 64).into_iter().collect();
        let want: HashSet<String> = [
            "one hundred twenty three",
            "one twenty three",
            "one hundred and twenty three",
            "one two three",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn currency_123_has_eight_variants() {
        let got: HashSet<String> = expand_words(EntityKind::Currency, "$123", 64).into_iter().collect();
        let want: HashSet<String> = [
            "one hundred twenty three dollars",
            "one hundred twenty three dollar",
            "one twenty three dollars",
            "one twenty three dollar",
            "one hundred and twenty three dollars",
            "one hundred and twenty three dollar",
            "one two three dollars",
            "one two three dollar",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn measure_123g_has_eight_variants() {
        let got: HashSet<String> = expand_words(EntityKind::Measure, "123g", 64).into_iter().collect();
        let want: HashSet<String> = [
            "one hundred twenty three grams",
            "one hundred twenty three gram",
            "one twenty three grams",
            "one twenty three gram",
            "one hundred and twenty three grams",
            "one hundred and twenty three gram",
            "one two three grams",
            "one two three gram",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn single_digit_has_one_form() {
        let got = expand_words(EntityKind::Cardinal, "5", 64);
        assert_eq!(got, vec!["five".to_string()]);
    }

    #[test]
    fn expansion_respects_cap_and_order() {
        let all = expand_words(EntityKind::Cardinal, "123", 64);
        let capped = expand_words(EntityKind::Cardinal, "123", 2);
        assert_eq!(capped.len(), 2);
        assert_eq!(&all[..2], &capped[..]);
    }

    #[test]
    fn entity_free_sentence_passes_through() {
        let (grammar, patterns, lexicon) = fixtures();
        let aug = augment_sentence(
            "hello",
            &AugmentConfig::default(),
            &grammar,
            &patterns,
            &lexicon,
        )
        .unwrap();
        assert_eq!(aug.pairs.len(), 1);
        assert_eq!(aug.pairs[0].pair.spoken, vec!["hello".to_string()]);
        assert_eq!(aug.pairs[0].pair.written, "hello");
        assert_eq!(aug.written_entities, 0);
    }

    #[test]
    fn time_sentence_includes_three_thirty() {
        let (grammar, patterns, lexicon) = fixtures();
        let cfg = AugmentConfig {
            n_variants_per_sentence: 16,
            ..AugmentConfig::default()
        };
        let aug = augment_sentence("let's meet at 3:30", &cfg, &grammar, &patterns, &lexicon).unwrap();
        let spoken: Vec<String> = aug
            .pairs
            .iter()
            .map(|p| p.pair.spoken.join(" "))
            .collect();
        assert!(
            spoken.contains(&"let's meet at three thirty".to_string()),
            "got {spoken:?}"
        );
        for p in &aug.pairs {
            assert_eq!(p.pair.written, "let's meet at 3:30");
        }
    }

    #[test]
    fn currency_sentence_includes_table3_spoken_form() {
        let (grammar, patterns, lexicon) = fixtures();
        let cfg = AugmentConfig {
            n_variants_per_sentence: 16,
            ..AugmentConfig::default()
        };
        let aug = augment_sentence("i have $120", &cfg, &grammar, &patterns, &lexicon).unwrap();
        let spoken: Vec<String> = aug.pairs.iter().map(|p| p.pair.spoken.join(" ")).collect();
        assert!(
            spoken.contains(&"i have one twenty dollar".to_string()),
            "got {spoken:?}"
        );
    }

    #[test]
    fn sampling_is_deterministic_and_capped() {
        let (grammar, patterns, lexicon) = fixtures();
        let cfg = AugmentConfig {
            n_variants_per_sentence: 3,
            max_expansions_per_entity: 64,
            seed: 17,
        };
        let a = augment_sentence("we sold 1234 units for $56", &cfg, &grammar, &patterns, &lexicon)
            .unwrap();
        let b = augment_sentence("we sold 1234 units for $56", &cfg, &grammar, &patterns, &lexicon)
            .unwrap();
        assert_eq!(a.pairs.len(), 3);
        let sa: Vec<String> = a.pairs.iter().map(|p| p.pair.spoken.join(" ")).collect();
        let sb: Vec<String> = b.pairs.iter().map(|p| p.pair.spoken.join(" ")).collect();
        assert_eq!(sa, sb);
        let unique: HashSet<&String> = sa.iter().collect();
        assert_eq!(unique.len(), sa.len(), "sampled combos must be distinct");
    }

    #[test]
    fn replay_reconstructs_token_metadata() {
        let (grammar, patterns, lexicon) = fixtures();
        let cfg = AugmentConfig {
            n_variants_per_sentence: 4,
            ..AugmentConfig::default()
        };
        let aug = augment_sentence("i have $120", &cfg, &grammar, &patterns, &lexicon).unwrap();
        for built in &aug.pairs {
            let trace = built.pair.trace.as_ref().unwrap();
            let entity_toks: Vec<&str> = trace
                .iter()
                .map(|t| built.pair.spoken[t.tok_idx].as_str())
                .collect();
            let tags: Vec<(String, usize)> =
                trace.iter().map(|t| (t.rule.clone(), t.alt)).collect();
            let span = trace[0].entity_span;
            let entity = canonicalize(&WrittenEntity::new(
                trace[0].entity_kind,
                &built.pair.written[span.0..span.1],
                span.0,
                span.1,
            ))
            .unwrap();
            let replayed = replay_entity_tokens(&grammar, &entity, &entity_toks, &tags)
                .expect("trace must replay");
            let replayed_words: Vec<&str> = replayed.iter().map(|t| t.word.as_str()).collect();
            assert_eq!(replayed_words, entity_toks);
        }
    }

    #[test]
    fn corpus_stream_counts_and_is_deterministic() {
        let (grammar, patterns, lexicon) = fixtures();
        let input = "123\n$123\n123g\n";
        let cfg = AugmentConfig {
            n_variants_per_sentence: 8,
            max_expansions_per_entity: 64,
            seed: 7,
        };
        let mut out_a = Vec::new();
        let sum_a = augment_corpus(
            input.as_bytes(),
            &mut out_a,
            &cfg,
            &grammar,
            &patterns,
            &lexicon,
            1,
            |_| {},
        )
        .unwrap();
        assert_eq!(sum_a.written_entities, 3);
        assert_eq!(sum_a.spoken_forms, 20);
        assert_eq!(sum_a.pairs, 4 + 8 + 8);
        assert_eq!(sum_a.skipped_sentences, 0);
        let mut out_b = Vec::new();
        let _ = augment_corpus(
            input.as_bytes(),
            &mut out_b,
            &cfg,
            &grammar,
            &patterns,
            &lexicon,
            2,
            |_| {},
        )
        .unwrap();
        assert_eq!(out_a, out_b, "identical inputs must produce identical bytes");
    }

    #[test]
    fn empty_corpus_yields_zero_counts() {
        let (grammar, patterns, lexicon) = fixtures();
        let mut out = Vec::new();
        let sum = augment_corpus(
            "".as_bytes(),
            &mut out,
            &AugmentConfig::default(),
            &grammar,
            &patterns,
            &lexicon,
            1,
            |_| {},
        )
        .unwrap();
        assert_eq!(sum.pairs, 0);
        assert_eq!(sum.written_entities, 0);
        assert!(out.is_empty());
    }
}
