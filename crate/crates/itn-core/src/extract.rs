//! Entity extraction and canonicalization: find typed numeric spans in
//! written text and normalize them into the form the verbalizer consumes.

use regex::Regex;

use crate::error::{ItnError, Result};
use crate::types::{EntityKind, WrittenEntity};

/// One extraction pattern with its priority.
#[derive(Debug)]
struct KindPattern {
    kind: EntityKind,
    regex: Regex,
    priority: i64,
}

/// The set of per-kind extraction patterns, loadable from the stanza config
/// format (`kind` / `pattern` / `priority`).
#[derive(Debug)]
pub struct PatternSet {
    patterns: Vec<KindPattern>,
}

impl PatternSet {
    pub fn parse(text: &str) -> Result<PatternSet> {
        let mut patterns = Vec::new();
        let mut current: Option<(EntityKind, Option<String>, Option<i64>)> = None;
        let flush = |cur: &mut Option<(EntityKind, Option<String>, Option<i64>)>,
                         out: &mut Vec<KindPattern>,
                         line: usize|
         -> Result<()> {
            if let Some((kind, pat, prio)) = cur.take() {
                let pat = pat.ok_or_else(|| ItnError::PatternConfig {
                    line,
                    reason: format!("kind {kind} has no pattern"),
                })?;
                let regex = Regex::new(&pat).map_err(|e| ItnError::PatternConfig {
                    line,
                    reason: format!("bad pattern for {kind}: {e}"),
                })?;
                out.push(KindPattern {
                    kind,
                    regex,
                    priority: prio.unwrap_or(0),
                });
            }
            Ok(())
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix("kind ") {
                flush(&mut current, &mut patterns, line_no)?;
                let kind = EntityKind::parse(name.trim()).ok_or_else(|| ItnError::PatternConfig {
                    line: line_no,
                    reason: format!("unknown entity kind {name:?}"),
                })?;
                current = Some((kind, None, None));
            } else if let Some(pat) = line.strip_prefix("pattern ") {
                match current.as_mut() {
                    Some((_, p, _)) => *p = Some(pat.trim().to_string()),
                    None => {
                        return Err(ItnError::PatternConfig {
                            line: line_no,
                            reason: "pattern outside a kind stanza".into(),
                        })
                    }
                }
            } else if let Some(prio) = line.strip_prefix("priority ") {
                match current.as_mut() {
                    Some((_, _, p)) => {
                        *p = Some(prio.trim().parse().map_err(|_| ItnError::PatternConfig {
                            line: line_no,
                            reason: format!("bad priority {prio:?}"),
                        })?)
                    }
                    None => {
                        return Err(ItnError::PatternConfig {
                            line: line_no,
                            reason: "priority outside a kind stanza".into(),
                        })
                    }
                }
            } else {
                return Err(ItnError::PatternConfig {
                    line: line_no,
                    reason: format!("expected kind/pattern/priority, got {line:?}"),
                });
            }
        }
        flush(&mut current, &mut patterns, text.lines().count())?;
        Ok(PatternSet { patterns })
    }

    pub fn from_path(path: &std::path::Path) -> Result<PatternSet> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn default_english() -> PatternSet {
        static DEFAULT: &str = include_str!("../data/patterns.cfg");
        Self::parse(DEFAULT).expect("embedded default patterns parse")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Find entity spans in a written sentence. Candidates from every kind are
/// ranked by (priority, longer match, earlier start) and accepted greedily
/// without overlap; matches must sit on non-alphanumeric boundaries.
pub fn extract_entities(sentence: &str, patterns: &PatternSet) -> Vec<WrittenEntity> {
    let mut candidates: Vec<(i64, usize, usize, EntityKind)> = Vec::new();
    for kp in &patterns.patterns {
        for m in kp.regex.find_iter(sentence) {
            let (start, end) = (m.start(), m.end());
            let left_ok = sentence[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
            let right_ok = sentence[end..].chars().next().is_none_or(|c| !is_word_char(c));
            if left_ok && right_ok {
                candidates.push((kp.priority, start, end, kp.kind));
            }
        }
    }
    // Highest priority first, then longest, then leftmost.
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then((b.2 - b.1).cmp(&(a.2 - a.1)))
            .then(a.1.cmp(&b.1))
    });
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out: Vec<WrittenEntity> = Vec::new();
    for (_, start, end, kind) in candidates {
        if taken.iter().any(|&(s, e)| start < e && s < end) {
            continue;
        }
        taken.push((start, end));
        out.push(WrittenEntity::new(kind, &sentence[start..end], start, end));
    }
    out.sort_by_key(|e| e.start);
    out
}

/// Fill `canonical` with the cleaned, unit-separated rendering the verbalizer
/// consumes. Idempotent: canonicalizing an already canonicalized entity is a
/// no-op.
pub fn canonicalize(entity: &WrittenEntity) -> Result<WrittenEntity> {
    let mut out = entity.clone();
    out.canonical = canonical_form(entity.kind, &entity.raw)?;
    Ok(out)
}

fn malformed(kind: EntityKind, raw: &str, reason: impl Into<String>) -> ItnError {
    ItnError::MalformedEntity {
        kind: kind.as_str().to_string(),
        raw: raw.to_string(),
        reason: reason.into(),
    }
}

fn canonical_form(kind: EntityKind, raw: &str) -> Result<String> {
    match kind {
        EntityKind::Cardinal => {
            let digits: String = raw.chars().filter(|c| c.is_ascii_digit()).collect();
            if digits.is_empty() || digits.len() > 15 {
                return Err(malformed(kind, raw, "expected 1 to 15 digits"));
            }
            if raw.chars().any(|c| !c.is_ascii_digit() && c != ',') {
                return Err(malformed(kind, raw, "unexpected character"));
            }
            Ok(digits)
        }
        EntityKind::Ordinal => {
            let lower = raw.to_ascii_lowercase();
            let (num, suffix) = lower.split_at(lower.len().saturating_sub(2));
            if num.is_empty() || !num.chars().all(|c| c.is_ascii_digit()) {
                return Err(malformed(kind, raw, "expected digits before the suffix"));
            }
            let value: u64 = num
                .parse()
                .map_err(|_| malformed(kind, raw, "unparseable value"))?;
            let expected = ordinal_suffix(value);
            if suffix != expected {
                return Err(malformed(
                    kind,
                    raw,
                    format!("suffix {suffix:?} does not match value (expected {expected:?})"),
                ));
            }
            Ok(lower)
        }
        EntityKind::Currency => {
            let mut chars = raw.chars();
            let symbol = chars
                .next()
                .filter(|c| ['$', '£', '€'].contains(c))
                .ok_or_else(|| malformed(kind, raw, "expected a currency symbol"))?;
            let rest: &str = chars.as_str();
            let (int_part, cents) = match rest.split_once('.') {
                Some((i, c)) => (i, Some(c)),
                None => (rest, None),
            };
            if int_part.is_empty() || !int_part.chars().all(|c| c.is_ascii_digit()) {
                return Err(malformed(kind, raw, "bad integer amount"));
            }
            let minor = match symbol {
                '$' | '€' => '¢',
                _ => 'p',
            };
            match cents {
                None => Ok(format!("{int_part} {symbol}")),
                Some(c) => {
                    if c.is_empty() || c.len() > 2 || !c.chars().all(|ch| ch.is_ascii_digit()) {
                        return Err(malformed(kind, raw, "bad cents"));
                    }
                    let value: u64 = c.parse().unwrap();
                    if value == 0 {
                        Ok(format!("{int_part} {symbol}"))
                    } else {
                        Ok(format!("{int_part} {symbol} {value} {minor}"))
                    }
                }
            }
        }
        EntityKind::Fraction => {
            let (num, den) = raw
                .split_once('/')
                .ok_or_else(|| malformed(kind, raw, "expected numerator/denominator"))?;
            let num = num.trim();
            let den = den.trim();
            if num.is_empty()
                || den.is_empty()
                || !num.chars().all(|c| c.is_ascii_digit())
                || !den.chars().all(|c| c.is_ascii_digit())
            {
                return Err(malformed(kind, raw, "expected digits on both sides"));
            }
            Ok(format!("{num} / {den}"))
        }
        EntityKind::Measure => {
            // Numeric part: digits, optional fraction, optional uppercase
            // K/M/B multiplier; the rest is the unit.
            let mut rest = raw;
            let digits_end = rest
                .find(|c: char| !c.is_ascii_digit() && c != '.')
                .unwrap_or(rest.len());
            let (mut number, tail) = rest.split_at(digits_end);
            rest = tail;
            let mut owned_number = number.to_string();
            if let Some(c) = rest.chars().next() {
                if matches!(c, 'K' | 'M' | 'B') {
                    owned_number.push(c);
                    rest = &rest[1..];
                }
            }
            number = &owned_number;
            let number = expand_multiplier(number)
                .ok_or_else(|| malformed(kind, raw, "bad numeric part"))?;
            let unit = rest.trim();
            if unit.is_empty() || !unit.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(malformed(kind, raw, "missing or bad unit"));
            }
            Ok(format!("{number} {unit}"))
        }
        EntityKind::Abbreviation => Ok(raw.to_string()),
        EntityKind::PhoneNumber => {
            let parts: Vec<&str> = raw.split('-').collect();
            if parts.iter().any(|p| {
                p.is_empty() || !p.chars().all(|c| c.is_ascii_digit())
            }) {
                return Err(malformed(kind, raw, "expected hyphen-separated digit groups"));
            }
            Ok(parts.join(" - "))
        }
        EntityKind::Time => {
            let (h, m) = raw
                .split_once(':')
                .ok_or_else(|| malformed(kind, raw, "expected H:MM"))?;
            let hours: u32 = h.parse().map_err(|_| malformed(kind, raw, "bad hours"))?;
            let minutes: u32 = m.parse().map_err(|_| malformed(kind, raw, "bad minutes"))?;
            if hours > 23 {
                return Err(malformed(kind, raw, format!("hours {hours} out of range")));
            }
            if minutes > 59 {
                return Err(malformed(
                    kind,
                    raw,
                    format!("minutes {minutes} out of range"),
                ));
            }
            Ok(format!("{hours} hours {minutes} minutes"))
        }
        EntityKind::Decade => {
            let body = raw.trim_start_matches('\'');
            if !body.ends_with('s') {
                return Err(malformed(kind, raw, "expected trailing s"));
            }
            let digits = &body[..body.len() - 1];
            if !(digits.len() == 2 || digits.len() == 4)
                || !digits.chars().all(|c| c.is_ascii_digit())
                || !digits.ends_with('0')
            {
                return Err(malformed(kind, raw, "expected a decade like 90s or 1990s"));
            }
            Ok(format!("{digits}s"))
        }
        EntityKind::Percent => {
            let body = raw
                .strip_suffix('%')
                .ok_or_else(|| malformed(kind, raw, "expected trailing %"))?;
            if body.is_empty()
                || !body.chars().all(|c| c.is_ascii_digit() || c == '.')
                || body.starts_with('.')
                || body.ends_with('.')
                || body.matches('.').count() > 1
            {
                return Err(malformed(kind, raw, "bad percentage value"));
            }
            Ok(format!("{body} %"))
        }
    }
}

/// Expand trailing K/M/B multipliers on a measure's numeric part,
/// e.g. `10K` becomes `10000`.
fn expand_multiplier(number: &str) -> Option<String> {
    let (body, mul) = match number.chars().next_back()? {
        'K' => (&number[..number.len() - 1], 1_000u64),
        'M' => (&number[..number.len() - 1], 1_000_000),
        'B' => (&number[..number.len() - 1], 1_000_000_000),
        _ => (number, 1),
    };
    if body.is_empty() {
        return None;
    }
    if mul == 1 {
        // Plain integer or decimal.
        let ok = body.chars().all(|c| c.is_ascii_digit() || c == '.')
            && !body.starts_with('.')
            && !body.ends_with('.')
            && body.matches('.').count() <= 1;
        return ok.then(|| body.to_string());
    }
    if body.chars().all(|c| c.is_ascii_digit()) {
        let v: u64 = body.parse().ok()?;
        return Some((v.checked_mul(mul)?).to_string());
    }
    None
}

fn ordinal_suffix(value: u64) -> &'static str {
    match (value % 10, value % 100) {
        (1, 11) | (2, 12) | (3, 13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extract(s: &str) -> Vec<WrittenEntity> {
        extract_entities(s, &PatternSet::default_english())
    }

    #[test]
    fn decade_sentence() {
        let ents = extract("do you like 90s music");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::Decade);
        assert_eq!(ents[0].raw, "90s");
        assert_eq!(&"do you like 90s music"[ents[0].start..ents[0].end], "90s");
    }

    #[test]
    fn percent_sentence() {
        let ents = extract("he is at 30% of his goal");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::Percent);
        assert_eq!(ents[0].raw, "30%");
    }

    #[test]
    fn no_entities() {
        assert!(extract("hello world").is_empty());
    }

    #[test]
    fn time_beats_cardinal() {
        let ents = extract("meet at 3:30 sharp");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::Time);
        assert_eq!(ents[0].raw, "3:30");
    }

    #[test]
    fn measure_claims_attached_unit() {
        let ents = extract("i bought 123g of flour");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::Measure);
        assert_eq!(ents[0].raw, "123g");
    }

    #[test]
    fn digits_followed_by_letters_are_not_cardinals() {
        // "123rd" exceeds the two-digit ordinal pattern and the cardinal
        // cannot claim the digit prefix because of the boundary rule.
        assert!(extract("the 123rd time").is_empty());
    }

    #[test]
    fn offsets_reconstruct_sentence() {
        let s = "pay $50 by 4:15 or lose 20%";
        let ents = extract(s);
        assert_eq!(ents.len(), 3);
        let mut rebuilt = String::new();
        let mut pos = 0;
        for e in &ents {
            rebuilt.push_str(&s[pos..e.start]);
            rebuilt.push_str(&e.raw);
            pos = e.end;
        }
        rebuilt.push_str(&s[pos..]);
        assert_eq!(rebuilt, s);
    }

    #[test]
    fn canonicalize_time_example() {
        let e = WrittenEntity::new(EntityKind::Time, "12:45", 0, 5);
        assert_eq!(canonicalize(&e).unwrap().canonical, "12 hours 45 minutes");
    }

    #[test]
    fn canonicalize_measure_multiplier() {
        let e = WrittenEntity::new(EntityKind::Measure, "10K lb", 0, 6);
        assert_eq!(canonicalize(&e).unwrap().canonical, "10000 lb");
    }

    #[test]
    fn canonicalize_trivial_cardinal() {
        let e = WrittenEntity::new(EntityKind::Cardinal, "7", 0, 1);
        assert_eq!(canonicalize(&e).unwrap().canonical, "7");
    }

    #[test]
    fn canonicalize_rejects_bad_time() {
        let e = WrittenEntity::new(EntityKind::Time, "25:99", 0, 5);
        assert!(matches!(
            canonicalize(&e),
            Err(ItnError::MalformedEntity { .. })
        ));
    }

    #[test]
    fn canonicalize_idempotent() {
        for (kind, raw) in [
            (EntityKind::Cardinal, "1,234"),
            (EntityKind::Time, "9:05"),
            (EntityKind::Currency, "$3.50"),
            (EntityKind::Percent, "12.5%"),
            (EntityKind::Decade, "'90s"),
            (EntityKind::Ordinal, "23rd"),
        ] {
            let e = WrittenEntity::new(kind, raw, 0, raw.len());
            let once = canonicalize(&e).unwrap();
            let twice = canonicalize(&once).unwrap();
            assert_eq!(once, twice, "{kind} {raw}");
        }
    }

    #[test]
    fn canonicalize_currency_cents() {
        let e = WrittenEntity::new(EntityKind::Currency, "$3.50", 0, 5);
        assert_eq!(canonicalize(&e).unwrap().canonical, "3 $ 50 ¢");
        let e = WrittenEntity::new(EntityKind::Currency, "$3.05", 0, 5);
        assert_eq!(canonicalize(&e).unwrap().canonical, "3 $ 5 ¢");
        let e = WrittenEntity::new(EntityKind::Currency, "$3.00", 0, 5);
        assert_eq!(canonicalize(&e).unwrap().canonical, "3 $");
    }

    #[test]
    fn canonicalize_ordinal_suffix_validation() {
        let good = WrittenEntity::new(EntityKind::Ordinal, "23rd", 0, 4);
        assert_eq!(canonicalize(&good).unwrap().canonical, "23rd");
        let bad = WrittenEntity::new(EntityKind::Ordinal, "23th", 0, 4);
        assert!(canonicalize(&bad).is_err());
        let teen = WrittenEntity::new(EntityKind::Ordinal, "11th", 0, 4);
        assert_eq!(canonicalize(&teen).unwrap().canonical, "11th");
    }

    #[test]
    fn comma_cardinal_extracts_as_one_entity() {
        let ents = extract("population 1,234 reported");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].raw, "1,234");
        let c = canonicalize(&ents[0]).unwrap();
        assert_eq!(c.canonical, "1234");
    }

    #[test]
    fn phone_number_beats_cardinal_runs() {
        let ents = extract("call 555-123-4567 now");
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::PhoneNumber);
        let c = canonicalize(&ents[0]).unwrap();
        assert_eq!(c.canonical, "555 - 123 - 4567");
    }
}
