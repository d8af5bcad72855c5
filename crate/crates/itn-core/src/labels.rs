//! The five-task label algebra: applying per-token labels to turn a spoken
//! sentence into written text, inferring labels from generation traces, and
//! searching for labels when no trace exists.
//!
//! Application order per token: rewrite through the lexicon (identity when
//! the class is `none`), prepend, then spacing. Adjacent cardinal-family
//! rewrites joined with Space=Off compose into digit strings through a value
//! accumulator; when a value breaks additive order (1 followed by 20) the
//! run splits and the segments concatenate as digits, which is what turns
//! "one twenty" into "120". Balanced PostStart/PostEnd markers then drive
//! region post-processing: currency symbols relocate to the region front,
//! measure units attach without a space, magnitude regions multiply.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::{ItnError, Result};
use crate::extract::canonicalize;
use crate::grammar::Grammar;
use crate::lexicon::RewriteLexicon;
use crate::types::{
    LabelRow, PrependClass, RegionClass, RewriteClass, SpaceClass, SpokenWrittenPair, WrittenEntity,
};
use crate::verbalize::replay_entity_tokens;

// ---------------------------------------------------------------- atoms

/// What a rewritten fragment contributes to number composition.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Atom {
    /// A plain value, possibly with a rendering suffix ("3rd", "90s").
    /// A non-empty suffix closes its segment.
    Value { v: u128, suffix: String },
    /// The "hundred" multiplier; scales the current sub-group.
    HundredMul(u128),
    /// Group multipliers thousand/million/billion; close the current group.
    GroupMul(u128),
    /// Contributes nothing ("and" inside a cascade).
    Connector,
    /// Literal text; closes any open segment.
    Literal(String),
}

fn split_digits_suffix(s: &str) -> Option<(u128, String)> {
    let digits_end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    if digits_end == 0 {
        return None;
    }
    let v: u128 = s[..digits_end].parse().ok()?;
    let suffix = &s[digits_end..];
    if suffix.chars().all(|c| c.is_ascii_alphabetic()) {
        Some((v, suffix.to_string()))
    } else {
        None
    }
}

fn atom_for(class: RewriteClass, output: &str) -> Atom {
    match class {
        RewriteClass::Cardinal | RewriteClass::CardinalDecade | RewriteClass::Ordinal => {
            if output.is_empty() {
                Atom::Connector
            } else if let Some((v, suffix)) = split_digits_suffix(output) {
                Atom::Value { v, suffix }
            } else {
                Atom::Literal(output.to_string())
            }
        }
        RewriteClass::CardinalHundred => match output.parse::<u128>() {
            Ok(v) => Atom::HundredMul(v),
            Err(_) => Atom::Literal(output.to_string()),
        },
        RewriteClass::CardinalThousand
        | RewriteClass::CardinalMillion
        | RewriteClass::CardinalBillion => match output.parse::<u128>() {
            Ok(v) => Atom::GroupMul(v),
            Err(_) => Atom::Literal(output.to_string()),
        },
        RewriteClass::Verbatim
        | RewriteClass::Abbreviate
        | RewriteClass::Measure
        | RewriteClass::CurrencySymbol => Atom::Literal(output.to_string()),
        RewriteClass::None => Atom::Literal(output.to_string()),
    }
}

// ------------------------------------------------------------- composition

#[derive(Debug, Clone, Default)]
struct NumSeg {
    acc: u128,
    cur: u128,
    prev_addend: Option<u128>,
    last_mul: Option<u128>,
    last_group: Option<u128>,
    suffix: String,
}

impl NumSeg {
    fn can_add_value(&self, v: u128) -> bool {
        if let Some(p) = self.prev_addend {
            // Successive addends must drop a decimal place ("twenty three"),
            // not merely shrink: "thirty eleven" reads as 30 then 11, which
            // splits the run and concatenates to 3011.
            return decimal_digits(v) < decimal_digits(p);
        }
        if self.cur > 0 {
            return self.last_mul.is_some_and(|m| v < m);
        }
        self.last_group.map_or(true, |g| v < g)
    }

    fn add_value(&mut self, v: u128) {
        self.cur += v;
        self.prev_addend = Some(v);
    }

    fn can_mul_hundred(&self) -> bool {
        self.cur < 100
    }

    fn mul_hundred(&mut self, m: u128) {
        self.cur = self.cur.max(1).saturating_mul(m);
        self.prev_addend = None;
        self.last_mul = Some(m);
    }

    fn can_close_group(&self, g: u128) -> bool {
        self.last_group.map_or(true, |lg| g < lg)
    }

    fn close_group(&mut self, g: u128) {
        self.acc = self
            .acc
            .saturating_add(self.cur.max(1).saturating_mul(g));
        self.cur = 0;
        self.prev_addend = None;
        self.last_mul = None;
        self.last_group = Some(g);
    }

    fn render(&self) -> String {
        format!("{}{}", self.acc + self.cur, self.suffix)
    }
}

fn decimal_digits(v: u128) -> u32 {
    let mut n = 1;
    let mut v = v / 10;
    while v > 0 {
        n += 1;
        v /= 10;
    }
    n
}

// ----------------------------------------------------------------- builder

#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    text: String,
    space_before: bool,
    post_start: Vec<RegionClass>,
    post_end: Vec<RegionClass>,
}

#[derive(Debug, Clone)]
struct OpenSeg {
    seg: NumSeg,
    space_before: bool,
    prefix: String,
    post_start: Vec<RegionClass>,
    post_end: Vec<RegionClass>,
}

/// Incremental label applier. `apply_labels` pushes every token and calls
/// `finish`; the label search also uses `committed_prefix` to prune partial
/// candidates against the target written form.
#[derive(Debug, Clone)]
pub(crate) struct Applier<'l> {
    lexicon: &'l RewriteLexicon,
    pieces: Vec<Piece>,
    seg: Option<OpenSeg>,
    pending_prefix: String,
    pending_space: bool,
    /// (region, index of the piece the region starts at)
    open_regions: Vec<(RegionClass, usize)>,
    tokens_pushed: usize,
}

impl<'l> Applier<'l> {
    pub(crate) fn new(lexicon: &'l RewriteLexicon) -> Self {
        Applier {
            lexicon,
            pieces: Vec::new(),
            seg: None,
            pending_prefix: String::new(),
            pending_space: false,
            open_regions: Vec::new(),
            tokens_pushed: 0,
        }
    }

    fn flush_seg(&mut self) {
        if let Some(open) = self.seg.take() {
            let mut text = open.prefix;
            text.push_str(&open.seg.render());
            self.pieces.push(Piece {
                text,
                space_before: open.space_before,
                post_start: open.post_start,
                post_end: open.post_end,
            });
        }
    }

    fn take_space(&mut self) -> bool {
        std::mem::take(&mut self.pending_space)
    }

    fn take_prefix(&mut self) -> String {
        std::mem::take(&mut self.pending_prefix)
    }

    fn push_literal(&mut self, text: String, ps: Vec<RegionClass>, pe: Vec<RegionClass>) {
        self.flush_seg();
        let space_before = self.take_space();
        let mut full = self.take_prefix();
        full.push_str(&text);
        self.pieces.push(Piece {
            text: full,
            space_before,
            post_start: ps,
            post_end: pe,
        });
    }

    pub(crate) fn push(&mut self, word: &str, row: &LabelRow) -> Result<()> {
        let index = self.tokens_pushed;
        self.tokens_pushed += 1;

        if row.space == SpaceClass::On {
            self.flush_seg();
            self.pending_space = true;
        }
        if let Some(sym) = row.prepend.symbol() {
            self.flush_seg();
            self.pending_prefix.push_str(sym);
        }

        // Region bookkeeping happens at piece granularity: the piece a
        // token's output lands in carries its markers.
        let ps = row.post_start;
        if ps != RegionClass::None {
            if self.open_regions.iter().any(|(r, _)| *r == ps) {
                return Err(ItnError::UnbalancedMarkers {
                    region: ps.as_str().to_string(),
                    index,
                });
            }
        }

        let mut atom = if row.rewrite == RewriteClass::None {
            Atom::Literal(word.to_string())
        } else {
            let output = self.lexicon.lookup(word, row.rewrite)?.to_string();
            atom_for(row.rewrite, &output)
        };
        if row.prepend == PrependClass::Digits {
            atom = Atom::Literal(match atom {
                Atom::Value { v, suffix } => format!("{v:0>2}{suffix}", v = v.to_string()),
                Atom::HundredMul(v) | Atom::GroupMul(v) => format!("{:0>2}", v.to_string()),
                Atom::Connector => "0".repeat(2),
                Atom::Literal(s) => {
                    if s.chars().all(|c| c.is_ascii_digit()) {
                        format!("{s:0>2}")
                    } else {
                        s
                    }
                }
            });
        }

        // Where does this token's output land? A segment flushes to
        // pieces.len(); a literal pushed while a segment is open lands one
        // slot later because the flush comes first.
        if ps != RegionClass::None {
            let start_piece_index = match &atom {
                Atom::Literal(_) if self.seg.is_some() => self.pieces.len() + 1,
                _ => self.pieces.len(),
            };
            self.open_regions.push((ps, start_piece_index));
        }

        match atom {
            Atom::Connector => {
                // Contributes no text; a region cannot start on a connective
                // inside a number in progress.
                if self.seg.is_some() {
                    if ps != RegionClass::None {
                        return Err(ItnError::UnbalancedMarkers {
                            region: ps.as_str().to_string(),
                            index,
                        });
                    }
                } else if ps != RegionClass::None || row.post_end != RegionClass::None {
                    self.push_literal(String::new(), ps_vec(ps), Vec::new());
                }
            }
            Atom::Literal(text) => {
                self.push_literal(text, ps_vec(ps), Vec::new());
            }
            Atom::Value { v, suffix } => {
                self.split_or_extend_seg(ps, index, |seg| seg.can_add_value(v))?;
                let open = self.seg.as_mut().unwrap();
                open.seg.add_value(v);
                if !suffix.is_empty() {
                    open.seg.suffix = suffix;
                    if row.post_end != RegionClass::None {
                        open.post_end.push(row.post_end);
                    }
                    self.close_region_marker(row.post_end, index)?;
                    self.flush_seg();
                    return Ok(());
                }
            }
            Atom::HundredMul(m) => {
                self.split_or_extend_seg(ps, index, |seg| seg.can_mul_hundred())?;
                self.seg.as_mut().unwrap().seg.mul_hundred(m);
            }
            Atom::GroupMul(g) => {
                self.split_or_extend_seg(ps, index, |seg| seg.can_close_group(g))?;
                self.seg.as_mut().unwrap().seg.close_group(g);
            }
        }

        if row.post_end != RegionClass::None {
            if let Some(open) = self.seg.as_mut() {
                open.post_end.push(row.post_end);
            } else if let Some(last) = self.pieces.last_mut() {
                last.post_end.push(row.post_end);
            }
            self.close_region_marker(row.post_end, index)?;
        }
        Ok(())
    }

    fn close_region_marker(&mut self, pe: RegionClass, index: usize) -> Result<()> {
        if pe == RegionClass::None {
            return Ok(());
        }
        match self.open_regions.iter().rposition(|(r, _)| *r == pe) {
            Some(at) => {
                self.open_regions.remove(at);
                Ok(())
            }
            None => Err(ItnError::UnbalancedMarkers {
                region: pe.as_str().to_string(),
                index,
            }),
        }
    }

    fn ensure_seg(&mut self, ps: RegionClass) {
        if self.seg.is_none() {
            let space_before = self.take_space();
            let prefix = self.take_prefix();
            self.seg = Some(OpenSeg {
                seg: NumSeg::default(),
                space_before,
                prefix,
                post_start: ps_vec(ps),
                post_end: Vec::new(),
            });
        } else if ps != RegionClass::None {
            self.seg.as_mut().unwrap().post_start.push(ps);
        }
    }

    /// Numeric feed: extend the open segment when the composition rules
    /// allow it, otherwise split the run. A region may not start on a token
    /// that extends a number already in progress.
    fn split_or_extend_seg(
        &mut self,
        ps: RegionClass,
        index: usize,
        fits: impl Fn(&NumSeg) -> bool,
    ) -> Result<()> {
        let extends = self.seg.as_ref().is_some_and(|open| fits(&open.seg));
        if extends && ps != RegionClass::None {
            return Err(ItnError::UnbalancedMarkers {
                region: ps.as_str().to_string(),
                index,
            });
        }
        if self.seg.is_some() && !extends {
            self.flush_seg();
        }
        self.ensure_seg(ps);
        Ok(())
    }

    /// The rendered text that can no longer change: pieces before the first
    /// open region, with their closed regions post-processed.
    pub(crate) fn committed_prefix(&self) -> Result<String> {
        let cut = self
            .open_regions
            .iter()
            .map(|&(_, i)| i)
            .min()
            .unwrap_or(self.pieces.len());
        let mut slice: Vec<Piece> = self.pieces[..cut].to_vec();
        process_regions(&mut slice, self.tokens_pushed)?;
        Ok(join_pieces(&slice))
    }

    pub(crate) fn finish(mut self) -> Result<String> {
        self.flush_seg();
        if let Some(&(r, _)) = self.open_regions.first() {
            return Err(ItnError::UnbalancedMarkers {
                region: r.as_str().to_string(),
                index: self.tokens_pushed,
            });
        }
        let mut pieces = self.pieces;
        process_regions(&mut pieces, self.tokens_pushed)?;
        Ok(join_pieces(&pieces))
    }
}

fn ps_vec(r: RegionClass) -> Vec<RegionClass> {
    if r == RegionClass::None {
        Vec::new()
    } else {
        vec![r]
    }
}

fn join_pieces(pieces: &[Piece]) -> String {
    let mut out = String::new();
    for piece in pieces {
        if piece.text.is_empty() {
            continue;
        }
        if !out.is_empty() && piece.space_before {
            out.push(' ');
        }
        out.push_str(&piece.text);
    }
    out
}

/// Join the interior of a region: the first piece drops its leading space,
/// later pieces keep theirs.
fn join_region_body(pieces: &[Piece]) -> String {
    let mut out = String::new();
    for (i, piece) in pieces.iter().enumerate() {
        if i > 0 && piece.space_before && !out.is_empty() && !piece.text.is_empty() {
            out.push(' ');
        }
        out.push_str(&piece.text);
    }
    out
}

fn process_regions(pieces: &mut Vec<Piece>, token_count: usize) -> Result<()> {
    // Magnitude regions resolve innermost values first; minor currency last
    // so it can glue onto the rendered major amount.
    for region in [
        RegionClass::Magnitude,
        RegionClass::MajorCurrency,
        RegionClass::Measure,
        RegionClass::MinorCurrency,
    ] {
        loop {
            let Some(start) = pieces.iter().position(|p| p.post_start.contains(&region)) else {
                break;
            };
            let end = pieces[start..]
                .iter()
                .position(|p| p.post_end.contains(&region))
                .map(|off| start + off)
                .ok_or_else(|| ItnError::UnbalancedMarkers {
                    region: region.as_str().to_string(),
                    index: token_count,
                })?;
            collapse_region(pieces, region, start, end)?;
        }
    }
    Ok(())
}

fn collapse_region(
    pieces: &mut Vec<Piece>,
    region: RegionClass,
    start: usize,
    end: usize,
) -> Result<()> {
    let body = join_region_body(&pieces[start..end]);
    let closer = pieces[end].text.clone();
    // A space before the closing token survives at the closer's original
    // position, so only Space=Off labellings produce the tight forms.
    let closer_space = if end > start && pieces[end].space_before {
        " "
    } else {
        ""
    };
    let text = match region {
        RegionClass::MajorCurrency => {
            // Relocate the currency symbol to the front of the region; the
            // symbol carries its own spacing, so only Space=Off produces the
            // tight "$431" form.
            format!("{closer}{closer_space}{body}")
        }
        RegionClass::Measure => {
            // Attach the unit abbreviation with no space.
            format!("{body}{closer_space}{closer}")
        }
        RegionClass::MinorCurrency => {
            let digits: String = pieces[start..=end]
                .iter()
                .flat_map(|p| p.text.chars())
                .filter(|c| c.is_ascii_digit())
                .collect();
            if digits.is_empty() || digits.len() > 2 {
                return Err(ItnError::MalformedNumberRun(format!(
                    "minor currency region must hold 1-2 digits, got {digits:?}"
                )));
            }
            format!("{closer_space}.{digits:0>2}")
        }
        RegionClass::Magnitude => {
            let multiplier: u128 = closer
                .chars()
                .filter(|c| c.is_ascii_digit())
                .collect::<String>()
                .parse()
                .map_err(|_| {
                    ItnError::MalformedNumberRun(format!(
                        "magnitude word renders {closer:?}, not a number"
                    ))
                })?;
            let rendered = multiply_decimal(&body, multiplier).ok_or_else(|| {
                ItnError::MalformedNumberRun(format!(
                    "magnitude region body {body:?} is not numeric"
                ))
            })?;
            format!("{closer_space}{rendered}")
        }
        RegionClass::None => unreachable!(),
    };

    let mut post_start: Vec<RegionClass> = Vec::new();
    let mut post_end: Vec<RegionClass> = Vec::new();
    let mut consumed_start = false;
    let mut consumed_end = false;
    for (i, piece) in pieces[start..=end].iter().enumerate() {
        for &r in &piece.post_start {
            if !consumed_start && i == 0 && r == region {
                consumed_start = true;
                continue;
            }
            post_start.push(r);
        }
        for &r in &piece.post_end {
            if !consumed_end && start + i == end && r == region {
                consumed_end = true;
                continue;
            }
            post_end.push(r);
        }
    }
    let space_before = match region {
        // Minor currency glues onto the preceding amount.
        RegionClass::MinorCurrency => false,
        _ => pieces[start].space_before,
    };
    let merged = Piece {
        text,
        space_before,
        post_start,
        post_end,
    };
    pieces.splice(start..=end, [merged]);
    Ok(())
}

/// Exact decimal multiply: `body` is digits with at most one dot. Renders an
/// integer when the product is whole, otherwise a trimmed decimal.
fn multiply_decimal(body: &str, multiplier: u128) -> Option<String> {
    if body.is_empty() {
        return None;
    }
    let mut int_digits = String::new();
    let mut frac_digits = String::new();
    let mut seen_dot = false;
    for c in body.chars() {
        match c {
            '.' if !seen_dot => seen_dot = true,
            c if c.is_ascii_digit() => {
                if seen_dot {
                    frac_digits.push(c)
                } else {
                    int_digits.push(c)
                }
            }
            _ => return None,
        }
    }
    if int_digits.is_empty() && frac_digits.is_empty() {
        return None;
    }
    let scale: u128 = 10u128.checked_pow(frac_digits.len() as u32)?;
    let raw: u128 = format!("{int_digits}{frac_digits}")
        .parse()
        .ok()
        .filter(|_| int_digits.len() + frac_digits.len() <= 30)?;
    let product = raw.checked_mul(multiplier)?;
    let whole = product / scale;
    let rem = product % scale;
    if rem == 0 {
        Some(whole.to_string())
    } else {
        let frac = format!("{rem:0>width$}", width = frac_digits.len());
        Some(format!("{whole}.{}", frac.trim_end_matches('0')))
    }
}

// ------------------------------------------------------------------- apply

/// Validate that PostStart/PostEnd markers are balanced and non-nested per
/// region type.
pub fn validate_markers(rows: &[LabelRow]) -> Result<()> {
    for &region in RegionClass::ALL.iter().filter(|r| **r != RegionClass::None) {
        let mut open = false;
        for (i, row) in rows.iter().enumerate() {
            if row.post_start == region {
                if open {
                    return Err(ItnError::UnbalancedMarkers {
                        region: region.as_str().to_string(),
                        index: i,
                    });
                }
                open = true;
            }
            if row.post_end == region {
                if !open {
                    return Err(ItnError::UnbalancedMarkers {
                        region: region.as_str().to_string(),
                        index: i,
                    });
                }
                open = false;
            }
        }
        if open {
            return Err(ItnError::UnbalancedMarkers {
                region: region.as_str().to_string(),
                index: rows.len(),
            });
        }
    }
    Ok(())
}

/// Apply per-token labels to a spoken token sequence, producing written text.
pub fn apply_labels(spoken: &[&str], rows: &[LabelRow], lexicon: &RewriteLexicon) -> Result<String> {
    if spoken.len() != rows.len() {
        return Err(ItnError::AlignmentMismatch(format!(
            "{} tokens vs {} label rows",
            spoken.len(),
            rows.len()
        )));
    }
    validate_markers(rows)?;
    let mut applier = Applier::new(lexicon);
    for (word, row) in spoken.iter().zip(rows) {
        applier.push(word, row)?;
    }
    applier.finish()
}

// --------------------------------------------------------- trace inference

/// Derive the label rows of a generated pair from its trace. The labels are
/// reconstructed by replaying the recorded rule alternatives against the
/// grammar, so `apply_labels` on the result reproduces the written form.
pub fn infer_labels_from_trace(
    pair: &SpokenWrittenPair,
    grammar: &Grammar,
    lexicon: &RewriteLexicon,
) -> Result<Vec<LabelRow>> {
    let trace = pair.trace.as_ref().ok_or(ItnError::TraceIncomplete {
        index: 0,
        word: String::new(),
    })?;
    let mut rows = vec![LabelRow::identity(); pair.spoken.len()];
    let mut used: HashSet<usize> = HashSet::new();

    let mut i = 0usize;
    while i < trace.len() {
        let span = trace[i].entity_span;
        let kind = trace[i].entity_kind;
        let mut j = i;
        while j < trace.len() && trace[j].entity_span == span && trace[j].entity_kind == kind {
            j += 1;
        }
        let group = &trace[i..j];
        for t in group {
            if t.tok_idx >= pair.spoken.len() || !used.insert(t.tok_idx) {
                return Err(ItnError::TraceIncomplete {
                    index: t.tok_idx,
                    word: pair
                        .spoken
                        .get(t.tok_idx)
                        .cloned()
                        .unwrap_or_default(),
                });
            }
        }
        let raw = pair
            .written
            .get(span.0..span.1)
            .ok_or_else(|| ItnError::Grammar(format!("trace span {span:?} out of bounds")))?;
        let entity = canonicalize(&WrittenEntity::new(kind, raw, span.0, span.1))?;
        let words: Vec<&str> = group
            .iter()
            .map(|t| pair.spoken[t.tok_idx].as_str())
            .collect();
        let tags: Vec<(String, usize)> = group.iter().map(|t| (t.rule.clone(), t.alt)).collect();
        let tokens = replay_entity_tokens(grammar, &entity, &words, &tags).ok_or_else(|| {
            ItnError::Grammar(format!(
                "trace for {kind} {raw:?} does not replay through the grammar"
            ))
        })?;
        for (t, tok) in group.iter().zip(&tokens) {
            if tok.class != RewriteClass::None {
                lexicon.lookup(&tok.word, tok.class)?;
            }
            rows[t.tok_idx] = tok.label_row();
        }
        i = j;
    }
    Ok(rows)
}

// ------------------------------------------------------------------ search

/// Search configuration for trace-free label inference.
#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    /// Hard cap on explored states before giving up with `None`.
    pub node_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            node_budget: 2_000_000,
        }
    }
}

/// Infer label rows for a (spoken, written) pair without a trace: a
/// depth-first search over per-token candidate rows proposed from lexicon
/// membership, pruned by prefix agreement of the incrementally applied
/// output. Returns the first complete derivation in label-enum order, or
/// `None` when no label sequence reproduces the written form.
pub fn infer_labels_search(
    spoken: &[&str],
    written: &str,
    lexicon: &RewriteLexicon,
) -> Result<Option<Vec<LabelRow>>> {
    infer_labels_search_with(spoken, written, lexicon, SearchConfig::default())
}

pub fn infer_labels_search_with(
    spoken: &[&str],
    written: &str,
    lexicon: &RewriteLexicon,
    config: SearchConfig,
) -> Result<Option<Vec<LabelRow>>> {
    // Per-token closing capability, used to propose region starts only when
    // some later token can close the region.
    let closers: Vec<(bool, bool, bool)> = spoken
        .iter()
        .map(|w| {
            let entries = lexicon.entries_for_word(w);
            let currency = entries
                .iter()
                .any(|(c, _)| *c == RewriteClass::CurrencySymbol);
            let measure = entries.iter().any(|(c, _)| *c == RewriteClass::Measure);
            let magnitude = entries.iter().any(|(c, _)| {
                matches!(
                    c,
                    RewriteClass::CardinalThousand
                        | RewriteClass::CardinalMillion
                        | RewriteClass::CardinalBillion
                )
            });
            (currency, measure, magnitude)
        })
        .collect();

    let prune = PruneInfo {
        has_period: written.contains('.'),
        has_colon: written.contains(':'),
        has_slash: written.contains('/'),
        has_hyphen: written.contains('-'),
        has_zero: written.contains('0'),
    };
    let mut budget = config.node_budget;
    let mut rows: Vec<LabelRow> = Vec::with_capacity(spoken.len());
    let root = Applier::new(lexicon);
    let found = search_token(
        spoken,
        written,
        lexicon,
        &closers,
        &prune,
        &root,
        &mut rows,
        &mut budget,
    )?;
    Ok(found.then_some(rows))
}

/// Character-inventory facts about the written target, used to drop
/// candidate rows that cannot possibly contribute.
struct PruneInfo {
    has_period: bool,
    has_colon: bool,
    has_slash: bool,
    has_hyphen: bool,
    has_zero: bool,
}

impl PruneInfo {
    fn allows_prepend(&self, p: PrependClass) -> bool {
        match p {
            PrependClass::None => true,
            PrependClass::Period => self.has_period,
            PrependClass::Colon => self.has_colon,
            PrependClass::Slash => self.has_slash,
            PrependClass::Hyphen => self.has_hyphen,
            PrependClass::Digits => self.has_zero,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search_token(
    spoken: &[&str],
    written: &str,
    lexicon: &RewriteLexicon,
    closers: &[(bool, bool, bool)],
    prune: &PruneInfo,
    applier: &Applier<'_>,
    rows: &mut Vec<LabelRow>,
    budget: &mut usize,
) -> Result<bool> {
    let idx = rows.len();
    if idx == spoken.len() {
        let full = applier.clone().finish();
        return Ok(matches!(full, Ok(text) if text == written));
    }
    if *budget == 0 {
        return Ok(false);
    }

    let open_regions: Vec<RegionClass> = applier.open_regions.iter().map(|&(r, _)| r).collect();
    for candidate in candidate_rows(spoken, idx, lexicon, closers, prune, &open_regions) {
        if *budget == 0 {
            return Ok(false);
        }
        *budget -= 1;
        let mut next = applier.clone();
        if next.push(spoken[idx], &candidate).is_err() {
            continue;
        }
        let committed = match next.committed_prefix() {
            Ok(c) => c,
            Err(_) => continue,
        };
        if !written.starts_with(&committed) {
            continue;
        }
        rows.push(candidate);
        if search_token(spoken, written, lexicon, closers, prune, &next, rows, budget)? {
            return Ok(true);
        }
        rows.pop();
    }
    Ok(false)
}

fn candidate_rows(
    spoken: &[&str],
    idx: usize,
    lexicon: &RewriteLexicon,
    closers: &[(bool, bool, bool)],
    prune: &PruneInfo,
    open_regions: &[RegionClass],
) -> Vec<LabelRow> {
    let word = spoken[idx];
    let later = &closers[idx + 1..];
    let currency_later = later.iter().any(|c| c.0);
    let measure_later = later.iter().any(|c| c.1);
    let magnitude_later = later.iter().any(|c| c.2);

    let mut out: Vec<LabelRow> = Vec::new();

    // Rewrite options in enum order; identity first.
    let mut entries: Vec<(RewriteClass, String)> = lexicon
        .entries_for_word(word)
        .iter()
        .map(|(c, o)| (*c, o.clone()))
        .collect();
    entries.sort_by_key(|(c, _)| c.index());

    let push_combos = |rewrite: RewriteClass, can_close: bool, numeric: bool, out: &mut Vec<LabelRow>| {
        for &prepend in PrependClass::ALL {
            // Digits only makes sense padding a numeric fragment, and a
            // symbol prepend is pointless when the symbol never appears in
            // the written target.
            if prepend == PrependClass::Digits && !numeric {
                continue;
            }
            if !prune.allows_prepend(prepend) {
                continue;
            }
            for &space in SpaceClass::ALL {
                // Region starts only on numeric tokens, and only when a
                // later token can close that region type.
                let mut ps_options = vec![RegionClass::None];
                if numeric {
                    if currency_later && !open_regions.contains(&RegionClass::MajorCurrency) {
                        ps_options.push(RegionClass::MajorCurrency);
                    }
                    if currency_later
                        && prune.has_period
                        && !open_regions.contains(&RegionClass::MinorCurrency)
                    {
                        ps_options.push(RegionClass::MinorCurrency);
                    }
                    if measure_later && !open_regions.contains(&RegionClass::Measure) {
                        ps_options.push(RegionClass::Measure);
                    }
                    if magnitude_later && !open_regions.contains(&RegionClass::Magnitude) {
                        ps_options.push(RegionClass::Magnitude);
                    }
                    ps_options.sort_by_key(|r| r.index());
                }
                for &ps in &ps_options {
                    let mut pe_options = vec![RegionClass::None];
                    if can_close {
                        for &r in open_regions {
                            if closes(rewrite, r) {
                                pe_options.push(r);
                            }
                        }
                        if ps != RegionClass::None && closes(rewrite, ps) {
                            pe_options.push(ps);
                        }
                        pe_options.sort_by_key(|r| r.index());
                        pe_options.dedup();
                    }
                    for &pe in &pe_options {
                        out.push(LabelRow {
                            rewrite,
                            prepend,
                            space,
                            post_start: ps,
                            post_end: pe,
                        });
                    }
                }
            }
        }
    };

    // Identity rows first (rewrite None sorts lowest).
    for &space in SpaceClass::ALL {
        out.push(LabelRow {
            rewrite: RewriteClass::None,
            prepend: PrependClass::None,
            space,
            post_start: RegionClass::None,
            post_end: RegionClass::None,
        });
    }
    for (class, _output) in entries {
        let numeric = class.is_cardinal_family() || class == RewriteClass::Verbatim;
        push_combos(class, true, numeric, &mut out);
    }
    out
}

/// Which rewrite classes plausibly close each region type.
fn closes(class: RewriteClass, region: RegionClass) -> bool {
    match region {
        RegionClass::MajorCurrency | RegionClass::MinorCurrency => {
            class == RewriteClass::CurrencySymbol
        }
        RegionClass::Measure => class == RewriteClass::Measure,
        RegionClass::Magnitude => matches!(
            class,
            RewriteClass::CardinalThousand
                | RewriteClass::CardinalMillion
                | RewriteClass::CardinalBillion
        ),
        RegionClass::None => false,
    }
}

// ---------------------------------------------------------------- file I/O

/// Write sentences as the label TSV format: `token` plus five label columns,
/// blank line between sentences.
pub fn write_label_file<W: Write>(
    writer: &mut W,
    sentences: &[(Vec<String>, Vec<LabelRow>)],
) -> Result<()> {
    for (i, (tokens, rows)) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(writer)?;
        }
        for (tok, row) in tokens.iter().zip(rows) {
            writeln!(writer, "{tok}\t{}", row.render())?;
        }
    }
    Ok(())
}

/// Read the label TSV format back.
pub fn read_label_file<R: BufRead>(reader: R) -> Result<Vec<(Vec<String>, Vec<LabelRow>)>> {
    let mut out: Vec<(Vec<String>, Vec<LabelRow>)> = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut rows: Vec<LabelRow> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                out.push((std::mem::take(&mut tokens), std::mem::take(&mut rows)));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(ItnError::LabelFile {
                line: line_no,
                reason: format!("expected 6 columns, got {}", fields.len()),
            });
        }
        tokens.push(fields[0].to_string());
        rows.push(LabelRow::parse(&fields[1..]).map_err(|e| match e {
            ItnError::LabelFile { reason, .. } => ItnError::LabelFile {
                line: line_no,
                reason,
            },
            other => other,
        })?);
    }
    if !tokens.is_empty() {
        out.push((tokens, rows));
    }
    Ok(out)
}

// ------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{
        EntityKind, PrependClass as P, RegionClass as G, RewriteClass as R, SpaceClass as S,
    };

    fn lex() -> RewriteLexicon {
        RewriteLexicon::default_english()
    }

    fn row(rewrite: R, prepend: P, space: S, ps: G, pe: G) -> LabelRow {
        LabelRow {
            rewrite,
            prepend,
            space,
            post_start: ps,
            post_end: pe,
        }
    }

    /// The exact five rows of the running example.
    pub(crate) fn table3_rows() -> Vec<LabelRow> {
        vec![
            row(R::None, P::None, S::On, G::None, G::None),
            row(R::None, P::None, S::On, G::None, G::None),
            row(R::Cardinal, P::None, S::On, G::MajorCurrency, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::CurrencySymbol, P::None, S::Off, G::None, G::MajorCurrency),
        ]
    }

    #[test]
    fn table3_apply() {
        let spoken = ["i", "have", "one", "twenty", "dollar"];
        let got = apply_labels(&spoken, &table3_rows(), &lex()).unwrap();
        assert_eq!(got, "i have $120");
    }

    #[test]
    fn identity_rows_pass_through() {
        let spoken = ["hello", "world"];
        let rows = vec![LabelRow::identity(); 2];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "hello world");
    }

    #[test]
    fn measure_word_unit_keeps_space() {
        let spoken = ["three", "thirty", "kilos"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Measure, P::None, S::On, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "330 kilos");
    }

    #[test]
    fn measure_region_attaches_unit() {
        let spoken = ["one", "twenty", "three", "grams"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::Measure, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Measure, P::None, S::Off, G::None, G::Measure),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "123g");
    }

    #[test]
    fn cascade_composition() {
        let spoken = ["one", "hundred", "twenty", "three"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::CardinalHundred, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "123");
    }

    #[test]
    fn cascade_with_and_connector() {
        let spoken = ["one", "hundred", "and", "twenty", "three"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::CardinalHundred, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "123");
    }

    #[test]
    fn grouped_thousands() {
        let spoken = ["five", "thousand", "one", "hundred", "five"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::CardinalThousand, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
            row(R::CardinalHundred, P::None, S::Off, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "5105");
    }

    #[test]
    fn additive_violation_concatenates() {
        // Table 1: "three thirty kilos" relies on 3 | 30 -> "330".
        let spoken = ["three", "thirty"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "330");
    }

    #[test]
    fn verbatim_concatenates_in_order() {
        let spoken = ["three", "two", "one"];
        let rows = vec![
            row(R::Verbatim, P::None, S::On, G::None, G::None),
            row(R::Verbatim, P::None, S::Off, G::None, G::None),
            row(R::Verbatim, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "321");
    }

    #[test]
    fn ordinal_composes_with_suffix() {
        let spoken = ["twenty", "third"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Ordinal, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "23rd");
    }

    #[test]
    fn decade_closes_segment() {
        let spoken = ["nineteen", "nineties"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::CardinalDecade, P::None, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "1990s");
    }

    #[test]
    fn colon_prepend_builds_times() {
        let spoken = ["three", "thirty"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Cardinal, P::Colon, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "3:30");
    }

    #[test]
    fn digits_prepend_zero_pads() {
        let spoken = ["three", "five"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Verbatim, P::Digits, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "305");
    }

    #[test]
    fn minor_currency_renders_cents() {
        let spoken = ["three", "dollars", "fifty", "cents"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::MajorCurrency, G::None),
            row(R::CurrencySymbol, P::None, S::Off, G::None, G::MajorCurrency),
            row(R::Cardinal, P::None, S::Off, G::MinorCurrency, G::None),
            row(R::CurrencySymbol, P::None, S::Off, G::None, G::MinorCurrency),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "$3.50");
    }

    #[test]
    fn minor_currency_zero_pads_single_digit() {
        let spoken = ["three", "dollars", "five", "cents"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::MajorCurrency, G::None),
            row(R::CurrencySymbol, P::None, S::Off, G::None, G::MajorCurrency),
            row(R::Cardinal, P::None, S::Off, G::MinorCurrency, G::None),
            row(R::CurrencySymbol, P::None, S::Off, G::None, G::MinorCurrency),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "$3.05");
    }

    #[test]
    fn magnitude_region_multiplies() {
        // "three point five million" -> 3500000
        let spoken = ["three", "point", "five", "million"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::Magnitude, G::None),
            row(R::Verbatim, P::None, S::Off, G::None, G::None),
            row(R::Verbatim, P::None, S::Off, G::None, G::None),
            row(R::CardinalMillion, P::None, S::Off, G::None, G::Magnitude),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "3500000");
    }

    #[test]
    fn unbalanced_markers_rejected() {
        let spoken = ["one", "twenty"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::MajorCurrency, G::None),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert!(matches!(
            apply_labels(&spoken, &rows, &lex()),
            Err(ItnError::UnbalancedMarkers { .. })
        ));
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::MajorCurrency),
            row(R::Cardinal, P::None, S::Off, G::None, G::None),
        ];
        assert!(matches!(
            apply_labels(&spoken, &rows, &lex()),
            Err(ItnError::UnbalancedMarkers { .. })
        ));
    }

    #[test]
    fn unknown_word_surfaces() {
        let spoken = ["blorp"];
        let rows = vec![row(R::Cardinal, P::None, S::On, G::None, G::None)];
        assert!(matches!(
            apply_labels(&spoken, &rows, &lex()),
            Err(ItnError::UnknownWord { .. })
        ));
    }

    #[test]
    fn sentence_initial_space_emits_nothing() {
        let spoken = ["one"];
        let rows = vec![row(R::Cardinal, P::None, S::On, G::None, G::None)];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "1");
    }

    #[test]
    fn search_reproduces_table3() {
        let spoken = ["i", "have", "one", "twenty", "dollar"];
        let rows = infer_labels_search(&spoken, "i have $120", &lex())
            .unwrap()
            .expect("derivation exists");
        assert_eq!(
            apply_labels(&spoken, &rows, &lex()).unwrap(),
            "i have $120"
        );
    }

    #[test]
    fn search_identity_for_entity_free_pair() {
        let spoken = ["hello", "world"];
        let rows = infer_labels_search(&spoken, "hello world", &lex())
            .unwrap()
            .expect("identity derivation");
        assert_eq!(rows, vec![LabelRow::identity(); 2]);
    }

    #[test]
    fn search_decade_pair() {
        let spoken = ["do", "you", "like", "nineties", "music"];
        let rows = infer_labels_search(&spoken, "do you like 90s music", &lex())
            .unwrap()
            .expect("decade derivation");
        assert_eq!(rows[3].rewrite, R::CardinalDecade);
        assert_eq!(
            apply_labels(&spoken, &rows, &lex()).unwrap(),
            "do you like 90s music"
        );
    }

    #[test]
    fn search_returns_none_when_underivable() {
        let spoken = ["hello"];
        assert_eq!(infer_labels_search(&spoken, "goodbye", &lex()).unwrap(), None);
    }

    #[test]
    fn label_file_round_trip() {
        let sentences = vec![
            (
                vec!["i".to_string(), "have".to_string()],
                vec![LabelRow::identity(); 2],
            ),
            (
                vec!["one".to_string(), "twenty".to_string(), "dollar".to_string()],
                table3_rows()[2..].to_vec(),
            ),
        ];
        let mut buf = Vec::new();
        write_label_file(&mut buf, &sentences).unwrap();
        let parsed = read_label_file(buf.as_slice()).unwrap();
        assert_eq!(parsed, sentences);
    }

    #[test]
    fn trace_inference_matches_direct_rows() {
        let grammar = Grammar::default_english();
        let patterns = crate::extract::PatternSet::default_english();
        let lexicon = lex();
        let cfg = crate::verbalize::AugmentConfig {
            n_variants_per_sentence: 16,
            ..Default::default()
        };
        let aug = crate::verbalize::augment_sentence(
            "i have $120",
            &cfg,
            &grammar,
            &patterns,
            &lexicon,
        )
        .unwrap();
        for built in &aug.pairs {
            let inferred = infer_labels_from_trace(&built.pair, &grammar, &lexicon).unwrap();
            assert_eq!(inferred, built.rows);
            let spoken: Vec<&str> = built.pair.spoken.iter().map(String::as_str).collect();
            assert_eq!(
                apply_labels(&spoken, &inferred, &lexicon).unwrap(),
                built.pair.written
            );
        }
    }

    #[test]
    fn trace_inference_table3_pair_yields_table3_rows() {
        let grammar = Grammar::default_english();
        let patterns = crate::extract::PatternSet::default_english();
        let lexicon = lex();
        let cfg = crate::verbalize::AugmentConfig {
            n_variants_per_sentence: 16,
            ..Default::default()
        };
        let aug = crate::verbalize::augment_sentence(
            "i have $120",
            &cfg,
            &grammar,
            &patterns,
            &lexicon,
        )
        .unwrap();
        let built = aug
            .pairs
            .iter()
            .find(|p| p.pair.spoken.join(" ") == "i have one twenty dollar")
            .expect("table 3 spoken form generated");
        let inferred = infer_labels_from_trace(&built.pair, &grammar, &lexicon).unwrap();
        assert_eq!(inferred, table3_rows());
    }

    #[test]
    fn entity_free_trace_gives_identity() {
        let pair = SpokenWrittenPair {
            spoken: vec!["hello".into()],
            written: "hello".into(),
            trace: Some(vec![]),
        };
        let grammar = Grammar::default_english();
        let rows = infer_labels_from_trace(&pair, &grammar, &lex()).unwrap();
        assert_eq!(rows, vec![LabelRow::identity()]);
    }

    #[test]
    fn missing_trace_is_an_error() {
        let pair = SpokenWrittenPair::untraced(vec!["hi".into()], "hi");
        let grammar = Grammar::default_english();
        assert!(matches!(
            infer_labels_from_trace(&pair, &grammar, &lex()),
            Err(ItnError::TraceIncomplete { .. })
        ));
    }

    #[test]
    fn fraction_rows_apply() {
        let spoken = ["three", "fourths"];
        let rows = vec![
            row(R::Cardinal, P::None, S::On, G::None, G::None),
            row(R::Measure, P::Slash, S::Off, G::None, G::None),
        ];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "3/4");
    }

    #[test]
    fn abbreviation_rows_apply() {
        let spoken = ["versus"];
        let rows = vec![row(R::Abbreviate, P::None, S::On, G::None, G::None)];
        assert_eq!(apply_labels(&spoken, &rows, &lex()).unwrap(), "vs.");
        let _ = EntityKind::Abbreviation;
    }
}
