//! Rewrite-rule grammar: written-side patterns mapped to alternative
//! spoken-side templates, applied recursively by the verbalizer.
//!
//! File format, one rule per stanza:
//!
//! ```text
//! rule currency_usd
//! match (\d{1,15}) \$
//! emit {1:cardinal}<major-currency dollars@currency-symbol>major-currency
//! emit {1:cardinal}<major-currency dollar@currency-symbol>major-currency
//! ```
//!
//! `match` takes a regex that must cover the whole input; `emit` lines are
//! alternatives in priority order. Template items are spoken words or capture
//! invocations `{N:rule_id}`. Annotations on an item:
//!
//! * `@class`  rewrite class of a word (lexicon key for the written fragment)
//! * `+p`      prepend label (`+period +colon +slash +hyphen +digits`)
//! * `<r`      open a post-processing region on the item's first token
//! * `>r`      close a region on the item's last token
//! * `^sp`     force a leading space (entity-internal tokens default to off)
//!
//! Region names are `major-currency`, `minor-currency`, `measure`,
//! `magnitude`. A rule invoked on a capture that cannot match contributes no
//! expansions; dispatch rules rely on that to select by shape.

use std::collections::{HashMap, HashSet};

use regex::Regex;

use crate::error::{ItnError, Result};
use crate::types::{PrependClass, RegionClass, RewriteClass};

/// One spoken word in a template, with its label annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordItem {
    pub word: String,
    pub class: RewriteClass,
    pub prepend: PrependClass,
    pub post_start: RegionClass,
    pub post_end: RegionClass,
    pub space_on: bool,
}

/// A recursive invocation of another rule on a capture group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvokeItem {
    pub capture: usize,
    pub rule: String,
    /// Annotations that attach to the first (prepend, post_start, space_on)
    /// or last (post_end) token of the sub-expansion.
    pub prepend: PrependClass,
    pub post_start: RegionClass,
    pub post_end: RegionClass,
    pub space_on: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateItem {
    Word(WordItem),
    Invoke(InvokeItem),
}

/// One spoken-side alternative of a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub items: Vec<TemplateItem>,
}

/// A written-side pattern with its ordered spoken-side alternatives.
#[derive(Debug)]
pub struct RewriteRule {
    pub id: String,
    pub raw_pattern: String,
    pub pattern: Regex,
    pub captures: usize,
    pub alternatives: Vec<Template>,
    /// Capture indexes that span the entire pattern (used by the cycle check).
    full_span_captures: Vec<usize>,
}

/// A loaded, validated rule set.
#[derive(Debug)]
pub struct Grammar {
    rules: Vec<RewriteRule>,
    index: HashMap<String, usize>,
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Grammar> {
        let mut rules: Vec<RewriteRule> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();

        let mut current: Option<(String, Option<String>, Vec<String>, usize)> = None;
        let flush = |cur: &mut Option<(String, Option<String>, Vec<String>, usize)>,
                         rules: &mut Vec<RewriteRule>,
                         index: &mut HashMap<String, usize>|
         -> Result<()> {
            if let Some((id, pattern, emits, line)) = cur.take() {
                let raw_pattern = pattern.ok_or_else(|| {
                    ItnError::Grammar(format!("rule {id} (line {line}) has no match pattern"))
                })?;
                if emits.is_empty() {
                    return Err(ItnError::Grammar(format!(
                        "rule {id} (line {line}) has no emit alternatives"
                    )));
                }
                let anchored = format!("^(?:{raw_pattern})$");
                let pattern = Regex::new(&anchored).map_err(|e| {
                    ItnError::Grammar(format!("rule {id}: bad pattern {raw_pattern:?}: {e}"))
                })?;
                let captures = pattern.captures_len() - 1;
                let full_span_captures = full_span_captures(&raw_pattern);
                let alternatives = emits
                    .iter()
                    .map(|e| parse_template(&id, e))
                    .collect::<Result<Vec<_>>>()?;
                if index.contains_key(&id) {
                    return Err(ItnError::Grammar(format!("duplicate rule id {id}")));
                }
                index.insert(id.clone(), rules.len());
                rules.push(RewriteRule {
                    id,
                    raw_pattern,
                    pattern,
                    captures,
                    alternatives,
                    full_span_captures,
                });
            }
            Ok(())
        };

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(id) = line.strip_prefix("rule ") {
                flush(&mut current, &mut rules, &mut index)?;
                current = Some((id.trim().to_string(), None, Vec::new(), line_no));
            } else if let Some(pat) = line.strip_prefix("match ") {
                match current.as_mut() {
                    Some((id, pattern, _, _)) => {
                        if pattern.is_some() {
                            return Err(ItnError::Grammar(format!(
                                "rule {id}: second match line at {line_no} (one pattern per rule)"
                            )));
                        }
                        *pattern = Some(pat.trim().to_string());
                    }
                    None => {
                        return Err(ItnError::Grammar(format!(
                            "line {line_no}: match outside a rule stanza"
                        )))
                    }
                }
            } else if let Some(tpl) = line.strip_prefix("emit ") {
                match current.as_mut() {
                    Some((_, _, emits, _)) => emits.push(tpl.trim().to_string()),
                    None => {
                        return Err(ItnError::Grammar(format!(
                            "line {line_no}: emit outside a rule stanza"
                        )))
                    }
                }
            } else {
                return Err(ItnError::Grammar(format!(
                    "line {line_no}: expected rule/match/emit, got {line:?}"
                )));
            }
        }
        flush(&mut current, &mut rules, &mut index)?;

        let grammar = Grammar { rules, index };
        grammar.validate()?;
        Ok(grammar)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Grammar> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped default English grammar.
    pub fn default_english() -> Grammar {
        static DEFAULT: &str = include_str!("../data/default.g");
        Self::parse(DEFAULT).expect("embedded default grammar parses")
    }

    pub fn rule(&self, id: &str) -> Option<&RewriteRule> {
        self.index.get(id).map(|&i| &self.rules[i])
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    fn validate(&self) -> Result<()> {
        for rule in &self.rules {
            for (alt_idx, alt) in rule.alternatives.iter().enumerate() {
                if alt.items.is_empty() {
                    return Err(ItnError::Grammar(format!(
                        "rule {}: alternative {alt_idx} is empty",
                        rule.id
                    )));
                }
                for item in &alt.items {
                    if let TemplateItem::Invoke(inv) = item {
                        if !self.index.contains_key(&inv.rule) {
                            return Err(ItnError::Grammar(format!(
                                "rule {}: alternative {alt_idx} references unknown rule {}",
                                rule.id, inv.rule
                            )));
                        }
                        if inv.capture == 0 || inv.capture > rule.captures {
                            return Err(ItnError::Grammar(format!(
                                "rule {}: capture {{{}}} out of range (pattern has {})",
                                rule.id, inv.capture, rule.captures
                            )));
                        }
                    }
                }
            }
        }
        self.check_acyclic()
    }

    /// Rejects cycles made entirely of non-shrinking edges. An invocation is
    /// non-shrinking when its capture spans the rule's whole pattern, so the
    /// sub-rule sees the same text and recursion cannot terminate. Invocations
    /// on proper sub-captures shrink the input and are allowed to recurse.
    fn check_acyclic(&self) -> Result<()> {
        let mut edges: HashMap<&str, HashSet<&str>> = HashMap::new();
        for rule in &self.rules {
            for alt in &rule.alternatives {
                for item in &alt.items {
                    if let TemplateItem::Invoke(inv) = item {
                        if rule.full_span_captures.contains(&inv.capture) {
                            edges
                                .entry(rule.id.as_str())
                                .or_default()
                                .insert(inv.rule.as_str());
                        }
                    }
                }
            }
        }
        // Depth-first cycle detection over the non-shrinking subgraph.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut marks: HashMap<&str, Mark> = self
            .rules
            .iter()
            .map(|r| (r.id.as_str(), Mark::White))
            .collect();

        fn visit<'a>(
            node: &'a str,
            edges: &HashMap<&'a str, HashSet<&'a str>>,
            marks: &mut HashMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            marks.insert(node, Mark::Grey);
            stack.push(node);
            if let Some(next) = edges.get(node) {
                let mut sorted: Vec<&&str> = next.iter().collect();
                sorted.sort();
                for &succ in sorted {
                    match marks.get(succ).copied().unwrap_or(Mark::Black) {
                        Mark::Grey => {
                            let from = stack.iter().position(|n| *n == succ).unwrap_or(0);
                            let mut cycle: Vec<String> =
                                stack[from..].iter().map(|s| s.to_string()).collect();
                            cycle.push(succ.to_string());
                            return Some(cycle);
                        }
                        Mark::White => {
                            if let Some(c) = visit(succ, edges, marks, stack) {
                                return Some(c);
                            }
                        }
                        Mark::Black => {}
                    }
                }
            }
            stack.pop();
            marks.insert(node, Mark::Black);
            None
        }

        let ids: Vec<&str> = self.rules.iter().map(|r| r.id.as_str()).collect();
        for id in ids {
            if marks[id] == Mark::White {
                let mut stack = Vec::new();
                if let Some(cycle) = visit(id, &edges, &mut marks, &mut stack) {
                    return Err(ItnError::GrammarCycle(cycle.join(" -> ")));
                }
            }
        }
        Ok(())
    }
}

/// Capture indexes whose group spans the entire pattern text, e.g. capture 1
/// of `(\d{1,15})`. Escapes and character classes are skipped; only capturing
/// groups are counted.
fn full_span_captures(pattern: &str) -> Vec<usize> {
    let bytes = pattern.as_bytes();
    let mut stack: Vec<Option<(usize, usize)>> = Vec::new(); // (capture_idx, open_pos)
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    let mut capture_idx = 0usize;
    let mut in_class = false;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 1,
            b'[' if !in_class => in_class = true,
            b']' if in_class => in_class = false,
            b'(' if !in_class => {
                if bytes.get(i + 1) == Some(&b'?') {
                    stack.push(None);
                } else {
                    capture_idx += 1;
                    stack.push(Some((capture_idx, i)));
                }
            }
            b')' if !in_class => {
                if let Some(Some((idx, start))) = stack.pop() {
                    spans.push((idx, start, i + 1));
                }
            }
            _ => {}
        }
        i += 1;
    }
    spans
        .into_iter()
        .filter(|&(_, start, end)| start == 0 && end == bytes.len())
        .map(|(idx, _, _)| idx)
        .collect()
}

fn parse_template(rule_id: &str, text: &str) -> Result<Template> {
    let mut items = Vec::new();
    for token in text.split_whitespace() {
        items.push(parse_item(rule_id, token)?);
    }
    Ok(Template { items })
}

fn parse_item(rule_id: &str, token: &str) -> Result<TemplateItem> {
    let err = |msg: String| ItnError::Grammar(format!("rule {rule_id}: {msg}"));
    let (head, rest) = if let Some(stripped) = token.strip_prefix('{') {
        let close = stripped
            .find('}')
            .ok_or_else(|| err(format!("unterminated invocation in {token:?}")))?;
        (&stripped[..close], &stripped[close + 1..])
    } else {
        let boundary = token
            .find(|c| ['@', '+', '<', '>', '^'].contains(&c))
            .unwrap_or(token.len());
        (&token[..boundary], &token[boundary..])
    };

    let mut prepend = PrependClass::None;
    let mut post_start = RegionClass::None;
    let mut post_end = RegionClass::None;
    let mut space_on = false;
    let mut class = RewriteClass::None;

    let mut rest = rest;
    while !rest.is_empty() {
        let sigil = rest.chars().next().unwrap();
        let body = &rest[1..];
        let end = body
            .find(|c| ['@', '+', '<', '>', '^'].contains(&c))
            .unwrap_or(body.len());
        let (arg, tail) = body.split_at(end);
        match sigil {
            '@' => {
                class = RewriteClass::parse(arg)
                    .filter(|c| *c != RewriteClass::None)
                    .ok_or_else(|| err(format!("unknown rewrite class {arg:?}")))?;
            }
            '+' => {
                prepend = PrependClass::parse(arg)
                    .filter(|p| *p != PrependClass::None)
                    .ok_or_else(|| err(format!("unknown prepend {arg:?}")))?;
            }
            '<' => {
                post_start = RegionClass::parse(arg)
                    .filter(|r| *r != RegionClass::None)
                    .ok_or_else(|| err(format!("unknown region {arg:?}")))?;
            }
            '>' => {
                post_end = RegionClass::parse(arg)
                    .filter(|r| *r != RegionClass::None)
                    .ok_or_else(|| err(format!("unknown region {arg:?}")))?;
            }
            '^' => {
                if arg != "sp" {
                    return Err(err(format!("unknown annotation ^{arg}")));
                }
                space_on = true;
            }
            _ => unreachable!(),
        }
        rest = tail;
    }

    if token.starts_with('{') {
        let (cap_str, rule) = head
            .split_once(':')
            .ok_or_else(|| err(format!("invocation {token:?} must be {{N:rule_id}}")))?;
        let capture: usize = cap_str
            .parse()
            .map_err(|_| err(format!("bad capture number in {token:?}")))?;
        if class != RewriteClass::None {
            return Err(err(format!(
                "invocation {token:?} cannot carry a rewrite class"
            )));
        }
        Ok(TemplateItem::Invoke(InvokeItem {
            capture,
            rule: rule.to_string(),
            prepend,
            post_start,
            post_end,
            space_on,
        }))
    } else {
        if head.is_empty() {
            return Err(err(format!("empty word in template item {token:?}")));
        }
        Ok(TemplateItem::Word(WordItem {
            word: head.to_string(),
            class,
            prepend,
            post_start,
            post_end,
            space_on,
        }))
    }
}
