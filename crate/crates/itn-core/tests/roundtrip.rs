//! End-to-end label round trips over generated corpora: trace inference must
//! replay every pair exactly, and the trace-free search must rediscover
//! derivations that agree with the traces.

use itn_core::extract::PatternSet;
use itn_core::labels::{apply_labels, infer_labels_from_trace, infer_labels_search};
use itn_core::lexicon::RewriteLexicon;
use itn_core::verbalize::{augment_corpus, read_pairs, AugmentConfig};
use itn_core::Grammar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small template pool, independent of the CLI's corpus generator.
fn mini_corpus(lines: usize, seed: u64) -> String {
    let templates = [
        "the crowd reached {C} people",
        "they paid {$} for the parts",
        "split it {F} and move on",
        "be there at {T} tomorrow",
        "the sample weighed {M}",
        "roughly {P} answered yes",
        "music from the {D} played all night",
        "we logged {C} steps before {T}",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..lines {
        let template = templates[i % templates.len()];
        let line = template
            .replace("{C}", &rng.gen_range(2..99999u32).to_string())
            .replace("{$}", &format!("${}", rng.gen_range(1..5000)))
            .replace("{F}", &format!("{}/{}", rng.gen_range(1..9), rng.gen_range(2..10)))
            .replace(
                "{T}",
                &format!("{}:{:02}", rng.gen_range(1..13), rng.gen_range(0..60)),
            )
            .replace("{M}", &format!("{}kg", rng.gen_range(1..500)))
            .replace("{P}", &format!("{}%", rng.gen_range(1..100)))
            .replace("{D}", &format!("{}0s", rng.gen_range(2..10)));
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[test]
fn trace_labels_replay_generated_corpus() {
    let grammar = Grammar::default_english();
    let patterns = PatternSet::default_english();
    let lexicon = RewriteLexicon::default_english();
    let corpus = mini_corpus(400, 5);
    let config = AugmentConfig {
        n_variants_per_sentence: 4,
        max_expansions_per_entity: 64,
        seed: 5,
    };
    let mut sink = Vec::new();
    let summary = augment_corpus(
        corpus.as_bytes(),
        &mut sink,
        &config,
        &grammar,
        &patterns,
        &lexicon,
        1,
        |msg| panic!("no sentence should be skipped: {msg}"),
    )
    .unwrap();
    assert_eq!(summary.skipped_sentences, 0);
    assert!(summary.pairs >= 1000, "only {} pairs", summary.pairs);

    // Round trip through the wire format, the way training will read them.
    let pairs = read_pairs(sink.as_slice()).unwrap();
    assert_eq!(pairs.len() as u64, summary.pairs);
    for pair in &pairs {
        let rows = infer_labels_from_trace(&pair, &grammar, &lexicon)
            .unwrap_or_else(|e| panic!("{}: {e}", pair.written));
        let spoken: Vec<&str> = pair.spoken.iter().map(String::as_str).collect();
        let replayed = apply_labels(&spoken, &rows, &lexicon).unwrap();
        assert_eq!(replayed, pair.written, "spoken: {:?}", pair.spoken);
    }
}

#[test]
fn search_rediscovers_trace_derivations() {
    let grammar = Grammar::default_english();
    let patterns = PatternSet::default_english();
    let lexicon = RewriteLexicon::default_english();
    let corpus = mini_corpus(200, 21);
    let config = AugmentConfig {
        n_variants_per_sentence: 4,
        max_expansions_per_entity: 64,
        seed: 21,
    };
    let mut sink = Vec::new();
    augment_corpus(
        corpus.as_bytes(),
        &mut sink,
        &config,
        &grammar,
        &patterns,
        &lexicon,
        1,
        |_| {},
    )
    .unwrap();
    let pairs = read_pairs(sink.as_slice()).unwrap();
    let sample: Vec<_> = pairs.iter().take(500).collect();
    assert!(sample.len() >= 400, "sample too small: {}", sample.len());

    let mut agree = 0usize;
    for pair in &sample {
        let trace_rows = infer_labels_from_trace(pair, &grammar, &lexicon).unwrap();
        let spoken: Vec<&str> = pair.spoken.iter().map(String::as_str).collect();
        let found = infer_labels_search(&spoken, &pair.written, &lexicon)
            .unwrap()
            .unwrap_or_else(|| panic!("no derivation for generated pair {:?}", pair.spoken));
        // Search soundness: the derivation replays exactly.
        let replayed = apply_labels(&spoken, &found, &lexicon).unwrap();
        assert_eq!(replayed, pair.written);
        if found == trace_rows {
            agree += 1;
        }
    }
    let ratio = agree as f64 / sample.len() as f64;
    assert!(
        ratio >= 0.95,
        "search agreed with traces on only {agree}/{} pairs",
        sample.len()
    );
}
