//! Property tests: extraction span soundness, canonicalization idempotence,
//! tokenizer round trips, and marker-balance rejection under mutation.

use itn_core::extract::{canonicalize, extract_entities, PatternSet};
use itn_core::labels::{apply_labels, validate_markers};
use itn_core::lexicon::RewriteLexicon;
use itn_core::tokenize::{build_vocab, grammar_spoken_vocabulary};
use itn_core::types::{LabelRow, RegionClass};
use itn_core::Grammar;
use proptest::prelude::*;

fn digit_dense_sentence() -> impl Strategy<Value = String> {
    // Words mixing digits, units, symbols, and plain text, joined by spaces.
    let word = prop_oneof![
        "[0-9]{1,6}",
        "[0-9]{1,3}(kg|g|lb|km)",
        "\\$[0-9]{1,4}",
        "[0-9]{1,2}:[0-5][0-9]",
        "[0-9]{1,2}/[0-9]{1,2}",
        "[0-9]{1,3}%",
        "[2-9]0s",
        "[a-z]{1,8}",
        "[0-9]{3}-[0-9]{4}",
    ];
    proptest::collection::vec(word, 1..8).prop_map(|ws| ws.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extraction_reconstructs_and_never_overlaps(sentence in digit_dense_sentence()) {
        let patterns = PatternSet::default_english();
        let entities = extract_entities(&sentence, &patterns);
        // Non-overlap, sorted by start.
        for pair in entities.windows(2) {
            prop_assert!(pair[0].end <= pair[1].start);
        }
        // Offsets reconstruct the sentence exactly.
        let mut rebuilt = String::new();
        let mut pos = 0;
        for e in &entities {
            prop_assert_eq!(&sentence[e.start..e.end], e.raw.as_str());
            rebuilt.push_str(&sentence[pos..e.start]);
            rebuilt.push_str(&e.raw);
            pos = e.end;
        }
        rebuilt.push_str(&sentence[pos..]);
        prop_assert_eq!(rebuilt, sentence);
    }

    #[test]
    fn canonicalize_is_idempotent(sentence in digit_dense_sentence()) {
        let patterns = PatternSet::default_english();
        for entity in extract_entities(&sentence, &patterns) {
            if let Ok(once) = canonicalize(&entity) {
                let twice = canonicalize(&once).expect("second canonicalization");
                prop_assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn tokenizer_round_trips_printable_ascii(text in "[ -~]{0,64}") {
        // Alphabet limited to the training byte range (all single bytes are
        // seeded), excluding the word-marker character itself.
        use std::sync::OnceLock;
        static VOCAB: OnceLock<itn_core::PieceVocab> = OnceLock::new();
        let vocab = VOCAB.get_or_init(|| {
            let grammar = Grammar::default_english();
            let protected = grammar_spoken_vocabulary(&grammar);
            build_vocab(
                ["one twenty dollar and ninety nine cents"],
                &protected,
                3 + 256 + 2 * protected.len() + 32,
            )
            .unwrap()
        });
        let ids = vocab.encode(&text);
        prop_assert_eq!(vocab.decode(&ids), text);
    }

    #[test]
    fn mutated_markers_are_rejected_or_balanced(
        starts in proptest::collection::vec(0usize..5, 6),
        ends in proptest::collection::vec(0usize..5, 6),
    ) {
        // Random marker assignments over a fixed six-token row template:
        // apply_labels must either reject with UnbalancedMarkers or accept a
        // sequence validate_markers also accepts.
        let lexicon = RewriteLexicon::default_english();
        let spoken = ["one", "two", "three", "four", "five", "six"];
        let mut rows = vec![LabelRow::identity(); 6];
        for i in 0..6 {
            rows[i].post_start = RegionClass::ALL[starts[i]];
            rows[i].post_end = RegionClass::ALL[ends[i]];
        }
        let valid = validate_markers(&rows).is_ok();
        let spoken_refs: Vec<&str> = spoken.to_vec();
        match apply_labels(&spoken_refs, &rows, &lexicon) {
            Ok(_) => prop_assert!(valid, "apply accepted rows validate_markers rejects"),
            Err(itn_core::ItnError::UnbalancedMarkers { .. }) => {
                prop_assert!(!valid, "apply rejected rows validate_markers accepts")
            }
            // Other errors (e.g. a malformed region body) are fine; marker
            // balance itself held.
            Err(_) => prop_assert!(valid),
        }
    }
}

#[test]
fn grammar_vocabulary_is_fully_rewritable() {
    // Every (word, class) a template can emit has a lexicon entry.
    let grammar = Grammar::default_english();
    let lexicon = RewriteLexicon::default_english();
    for rule in grammar.rules() {
        for alt in &rule.alternatives {
            for item in alt.items.iter() {
                if let itn_core::grammar::TemplateItem::Word(w) = item {
                    if w.class != itn_core::RewriteClass::None {
                        assert!(
                            lexicon.contains(&w.word, w.class),
                            "rule {} emits ({}, {}) with no lexicon entry",
                            rule.id,
                            w.word,
                            w.class
                        );
                    }
                }
            }
        }
    }
}
