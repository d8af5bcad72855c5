//! The rewrite lexicon: a total map from (spoken word, rewrite class) to the
//! written fragment that token contributes. Loaded from a TSV file with
//! columns `word<TAB>class<TAB>output`; `#` starts a comment line.

use std::collections::HashMap;

use crate::error::{ItnError, Result};
use crate::types::RewriteClass;

/// Word-to-output table keyed by (word, rewrite class). Immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct RewriteLexicon {
    entries: HashMap<(String, RewriteClass), String>,
    /// Entries grouped by word, in file order, for candidate proposal during
    /// label search.
    by_word: HashMap<String, Vec<(RewriteClass, String)>>,
}

impl RewriteLexicon {
    /// Parse the TSV format. Duplicate (word, class) keys are rejected.
    pub fn parse(text: &str) -> Result<RewriteLexicon> {
        let mut lex = RewriteLexicon::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            // The output column may be empty (a connective word that
            // contributes no text), so two columns are accepted.
            if cols.len() != 3 && cols.len() != 2 {
                return Err(ItnError::Lexicon {
                    line: line_no,
                    reason: format!("expected 3 tab-separated columns, got {}", cols.len()),
                });
            }
            let word = cols[0].to_string();
            let class = RewriteClass::parse(cols[1]).ok_or_else(|| ItnError::Lexicon {
                line: line_no,
                reason: format!("unknown rewrite class {:?}", cols[1]),
            })?;
            if class == RewriteClass::None {
                return Err(ItnError::Lexicon {
                    line: line_no,
                    reason: "class `none` entries are not allowed".into(),
                });
            }
            let output = cols.get(2).unwrap_or(&"").to_string();
            if word.is_empty() {
                return Err(ItnError::Lexicon {
                    line: line_no,
                    reason: "empty word".into(),
                });
            }
            if lex
                .entries
                .insert((word.clone(), class), output.clone())
                .is_some()
            {
                return Err(ItnError::Lexicon {
                    line: line_no,
                    reason: format!("duplicate entry for ({word:?}, {class})"),
                });
            }
            lex.by_word.entry(word).or_default().push((class, output));
        }
        Ok(lex)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RewriteLexicon> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped default English lexicon.
    pub fn default_english() -> RewriteLexicon {
        static DEFAULT: &str = include_str!("../data/default_lexicon.tsv");
        Self::parse(DEFAULT).expect("embedded default lexicon parses")
    }

    /// The written fragment `word` contributes under `class`. Deterministic;
    /// `UnknownWord` when the pair is not in the table.
    pub fn lookup(&self, word: &str, class: RewriteClass) -> Result<&str> {
        assert_ne!(class, RewriteClass::None, "lookup requires a rewrite class");
        self.entries
            .get(&(word.to_string(), class))
            .map(String::as_str)
            .ok_or_else(|| ItnError::UnknownWord {
                word: word.to_string(),
                class: class.as_str().to_string(),
            })
    }

    pub fn contains(&self, word: &str, class: RewriteClass) -> bool {
        self.entries.contains_key(&(word.to_string(), class))
    }

    /// All (class, output) entries for a word, in file order.
    pub fn entries_for_word(&self, word: &str) -> &[(RewriteClass, String)] {
        self.by_word.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every distinct spoken word in the table.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.by_word.keys().map(String::as_str)
    }
}

/// Free-function form matching the operation name used elsewhere.
pub fn lexicon_lookup<'a>(
    lexicon: &'a RewriteLexicon,
    word: &str,
    class: RewriteClass,
) -> Result<&'a str> {
    lexicon.lookup(word, class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_table3_rows() {
        let lex = RewriteLexicon::default_english();
        assert_eq!(lex.lookup("twenty", RewriteClass::Cardinal).unwrap(), "20");
        assert_eq!(lex.lookup("one", RewriteClass::Cardinal).unwrap(), "1");
        assert_eq!(
            lex.lookup("dollar", RewriteClass::CurrencySymbol).unwrap(),
            "$"
        );
        assert_eq!(lex.lookup("seven", RewriteClass::Verbatim).unwrap(), "7");
    }

    #[test]
    fn unknown_word_errors() {
        let lex = RewriteLexicon::default_english();
        let err = lex.lookup("blorp", RewriteClass::Cardinal).unwrap_err();
        assert!(matches!(err, ItnError::UnknownWord { .. }));
        // Known word, wrong class.
        assert!(lex.lookup("dollar", RewriteClass::Cardinal).is_err());
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = RewriteLexicon::parse("one\tcardinal\t1\none\tcardinal\t1\n").unwrap_err();
        assert!(matches!(err, ItnError::Lexicon { line: 2, .. }));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let lex = RewriteLexicon::parse("# header\n\none\tcardinal\t1\n").unwrap();
        assert_eq!(lex.len(), 1);
    }

    #[test]
    fn same_word_different_classes_coexist() {
        let lex = RewriteLexicon::default_english();
        assert_eq!(
            lex.lookup("pounds", RewriteClass::CurrencySymbol).unwrap(),
            "£"
        );
        assert_eq!(lex.lookup("pounds", RewriteClass::Measure).unwrap(), "lb");
    }
}
