//! The shipped demo pipeline must reproduce its committed golden report:
//! corpus and augmentation counts byte-exact, model metrics within a small
//! tolerance (training goes through libm, which may differ across hosts).

use std::path::Path;
use std::time::Instant;

use itn_cli::config::Config;
use itn_cli::pipeline::{self, PipelineConfig};

#[test]
fn demo_pipeline_matches_golden_report() {
    let start = Instant::now();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let demo_cfg = manifest.join("../../demo/demo.cfg");
    let mut config = PipelineConfig::from_config(&Config::load(&demo_cfg).unwrap()).unwrap();
    // Run in a scratch dir instead of the configured one.
    let dir = tempfile::tempdir().unwrap();
    config.workdir = dir.path().to_path_buf();

    let report = pipeline::run(&config).unwrap();

    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(manifest.join("../../demo/golden_report.json")).unwrap(),
    )
    .unwrap();

    assert_eq!(report.source_sentences, golden["source_sentences"].as_u64().unwrap());
    assert_eq!(report.target_sentences, golden["target_sentences"].as_u64().unwrap());
    assert_eq!(report.source_pairs, golden["source_pairs"].as_u64().unwrap());
    assert_eq!(report.target_pairs, golden["target_pairs"].as_u64().unwrap());
    assert_eq!(
        report.source_written_entities,
        golden["source_written_entities"].as_u64().unwrap()
    );
    assert_eq!(
        report.source_spoken_forms,
        golden["source_spoken_forms"].as_u64().unwrap()
    );
    assert_eq!(report.skipped_sentences, 0);
    assert_eq!(report.vocab_size as u64, golden["vocab_size"].as_u64().unwrap());
    assert_eq!(report.model_bytes, golden["model_bytes"].as_u64().unwrap());
    assert!((report.source_diversity - golden["source_diversity"].as_f64().unwrap()).abs() < 1e-9);
    assert!(
        (report.written_overlap.unigram.unwrap()
            - golden["written_overlap"]["unigram"].as_f64().unwrap())
        .abs()
            < 1e-9
    );
    // Learned-model numbers tolerate float library drift across hosts.
    let got = report.accuracy.overall.accuracy.unwrap_or(0.0);
    let want = golden["accuracy"]["overall"]["accuracy"].as_f64().unwrap_or(0.0);
    assert!(
        (got - want).abs() <= 0.25,
        "overall accuracy drifted: {got} vs golden {want}"
    );

    // Pipeline artifacts all exist.
    for file in [
        "source.txt",
        "target.txt",
        "general.txt",
        "source_pairs.jsonl",
        "target_pairs.jsonl",
        "vocab.tsv",
        "model.itnf",
        "eval_ref.txt",
        "eval_hyp.txt",
        "report.json",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "pipeline took {elapsed:?}");
    println!("demo pipeline reproduced the golden report in {elapsed:?}");
}
