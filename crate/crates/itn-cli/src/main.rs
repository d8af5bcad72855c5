//! `itn`: inverse-text-normalization toolkit commands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use itn_cli::config::{pick, Config};
use itn_cli::ops::{self, log, Resources};
use itn_cli::pipeline;
use itn_cli::synth::{synth_corpus, Domain};
use itn_core::tagger::{self, TaggerConfig, TaggerModel};
use itn_core::tokenize::PieceVocab;
use itn_core::verbalize::{augment_corpus, AugmentConfig};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (pairs format 1, label file 1, model format ITNF 1)"
);

#[derive(Parser)]
#[command(name = "itn", version = VERSION, about = "Spoken-to-written inverse text normalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand written entities into spoken variants and emit JSONL pairs.
    Augment(AugmentArgs),
    /// Learn the protected subword vocabulary from spoken-side text.
    BuildVocab(BuildVocabArgs),
    /// Derive per-token label files from pair traces or by search.
    InferLabels(InferLabelsArgs),
    /// Apply a label file, printing the written form per sentence.
    ApplyLabels(ApplyLabelsArgs),
    /// Train the multitask tagger with the pretrain/finetune recipe.
    Train(TrainArgs),
    /// Tag spoken sentences and write written-form hypotheses.
    Tag(TagArgs),
    /// Entity-typed accuracy of hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Top-k n-gram vocabulary overlap between two corpora.
    AnalyzeOverlap(AnalyzeOverlapArgs),
    /// Generate a synthetic template corpus (source/target/general).
    SynthCorpus(SynthCorpusArgs),
    /// Run the full demo pipeline from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct CommonResources {
    /// Rewrite grammar file (embedded default when omitted).
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Rewrite lexicon TSV (embedded default when omitted).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Extraction pattern config (embedded default when omitted).
    #[arg(long)]
    patterns: Option<PathBuf>,
}

impl CommonResources {
    fn load(&self, cfg: &Config) -> Result<Resources> {
        Resources::load(
            self.grammar.clone().or_else(|| cfg.get_path("grammar")).as_deref(),
            self.lexicon.clone().or_else(|| cfg.get_path("lexicon")).as_deref(),
            self.patterns.clone().or_else(|| cfg.get_path("patterns")).as_deref(),
        )
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Written input corpus, one sentence per line.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output JSONL pair file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Spoken variants per sentence (the N of the augmentation step).
    #[arg(long)]
    n: Option<usize>,
    /// Cap on expansions per entity.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for corpus augmentation.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the run summary as JSON here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let input = args
        .input
        .or_else(|| cfg.get_path("in"))
        .context("--in is required")?;
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let aug = AugmentConfig {
        n_variants_per_sentence: pick(args.n, cfg.get_parsed("n")?, 8),
        max_expansions_per_entity: pick(args.cap, cfg.get_parsed("cap")?, 64),
        seed: pick(args.seed, cfg.get_parsed("seed")?, 0),
    };
    let workers = pick(args.workers, cfg.get_parsed("workers")?, 1);
    let resources = args.resources.load(&cfg)?;
    let reader = BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?);
    let mut writer = BufWriter::new(File::create(&out)?);
    let summary = augment_corpus(
        reader,
        &mut writer,
        &aug,
        &resources.grammar,
        &resources.patterns,
        &resources.lexicon,
        workers,
        |msg| log("warn", msg),
    )?;
    writer.flush()?;
    log(
        "info",
        &format!(
            "lines {} pairs {} entities {} spoken_forms {} skipped {} diversity {}",
            summary.lines,
            summary.pairs,
            summary.written_entities,
            summary.spoken_forms,
            summary.skipped_sentences,
            summary
                .diversity()
                .map_or("n/a".into(), |d| format!("{d:.2}")),
        ),
    );
    if let Some(path) = args.summary.or_else(|| cfg.get_path("summary")) {
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
    }
    Ok(())
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Spoken-side corpus: JSONL pairs or plain text.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Total vocabulary size.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_build_vocab(args: BuildVocabArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let corpus = args
        .corpus
        .or_else(|| cfg.get_path("corpus"))
        .context("--corpus is required")?;
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let size = pick(args.size, cfg.get_parsed("size")?, 4096);
    let resources = args.resources.load(&cfg)?;
    let lines = ops::spoken_text(&corpus)?;
    let vocab = ops::build_vocab_from_corpus(&lines, &resources.grammar, size)?;
    vocab.save(&out)?;
    log(
        "info",
        &format!("vocabulary of {} pieces written to {}", vocab.len(), out.display()),
    );
    Ok(())
}

#[derive(Args)]
struct InferLabelsArgs {
    /// JSONL pairs with traces (trace mode).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Spoken text file (search mode, with --written).
    #[arg(long)]
    spoken: Option<PathBuf>,
    /// Written text file (search mode).
    #[arg(long)]
    written: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_infer_labels(args: InferLabelsArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let resources = args.resources.load(&cfg)?;
    let pairs = args.pairs.or_else(|| cfg.get_path("pairs"));
    match pairs {
        Some(pairs) => {
            let n = ops::infer_labels_trace_file(&pairs, &out, &resources.grammar, &resources.lexicon)?;
            log("info", &format!("labeled {n} sentences from traces"));
        }
        None => {
            let spoken = args
                .spoken
                .or_else(|| cfg.get_path("spoken"))
                .context("need --pairs, or --spoken with --written")?;
            let written = args
                .written
                .or_else(|| cfg.get_path("written"))
                .context("--written is required in search mode")?;
            let (ok, underivable) =
                ops::infer_labels_search_files(&spoken, &written, &out, &resources.lexicon)?;
            log(
                "info",
                &format!("derived labels for {ok} sentences, {underivable} underivable"),
            );
        }
    }
    Ok(())
}

#[derive(Args)]
struct ApplyLabelsArgs {
    /// Label TSV file (token plus five label columns, blank line between
    /// sentences).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_apply_labels(args: ApplyLabelsArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let labels = args
        .labels
        .or_else(|| cfg.get_path("labels"))
        .context("--labels is required")?;
    let resources = args.resources.load(&cfg)?;
    match args.out.or_else(|| cfg.get_path("out")) {
        Some(path) => {
            let mut out = BufWriter::new(File::create(&path)?);
            ops::apply_labels_file(&labels, &mut out, &resources.lexicon)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            ops::apply_labels_file(&labels, &mut out, &resources.lexicon)?;
        }
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Augmented source-domain pairs (JSONL) for pretraining.
    #[arg(long)]
    pretrain: Option<PathBuf>,
    /// Target-domain pairs (JSONL) for finetuning.
    #[arg(long)]
    finetune: Option<PathBuf>,
    /// Vocabulary TSV from build-vocab.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// General-domain text for language-model embedding pretraining.
    #[arg(long)]
    general: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    head_hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lm_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let vocab_path = args
        .vocab
        .or_else(|| cfg.get_path("vocab"))
        .context("--vocab is required")?;
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let defaults = TaggerConfig::default();
    let tagger_cfg = TaggerConfig {
        embed_dim: pick(args.embed_dim, cfg.get_parsed("embed_dim")?, defaults.embed_dim),
        hidden_dim: pick(args.hidden_dim, cfg.get_parsed("hidden_dim")?, defaults.hidden_dim),
        layers: pick(args.layers, cfg.get_parsed("layers")?, defaults.layers),
        head_hidden: pick(args.head_hidden, cfg.get_parsed("head_hidden")?, defaults.head_hidden),
        learning_rate: pick(
            args.learning_rate,
            cfg.get_parsed("learning_rate")?,
            defaults.learning_rate,
        ),
        pretrain_epochs: pick(
            args.pretrain_epochs,
            cfg.get_parsed("pretrain_epochs")?,
            defaults.pretrain_epochs,
        ),
        finetune_epochs: pick(
            args.finetune_epochs,
            cfg.get_parsed("finetune_epochs")?,
            defaults.finetune_epochs,
        ),
        batch_size: pick(args.batch_size, cfg.get_parsed("batch_size")?, defaults.batch_size),
        seed: pick(args.seed, cfg.get_parsed("seed")?, defaults.seed),
        patience: pick(args.patience, cfg.get_parsed("patience")?, defaults.patience),
    };
    let resources = args.resources.load(&cfg)?;
    let vocab = PieceVocab::load(&vocab_path)?;

    let load_examples = |path: Option<PathBuf>| -> Result<Vec<tagger::LabeledExample>> {
        match path {
            None => Ok(Vec::new()),
            Some(p) => {
                let labeled = ops::load_labeled_pairs(&p, &resources.grammar, &resources.lexicon)?;
                Ok(ops::examples_from_labeled(&labeled, &vocab))
            }
        }
    };
    let pretrain = load_examples(args.pretrain.or_else(|| cfg.get_path("pretrain")))?;
    let finetune = load_examples(args.finetune.or_else(|| cfg.get_path("finetune")))?;
    if pretrain.is_empty() && finetune.is_empty() {
        bail!("nothing to train on: give --pretrain and/or --finetune");
    }

    let mut model = TaggerModel::new(tagger_cfg.clone(), vocab);
    if let Some(general) = args.general.or_else(|| cfg.get_path("general")) {
        let lines = ops::read_lines(&general)?;
        let lm_epochs = pick(args.lm_epochs, cfg.get_parsed("lm_epochs")?, 3);
        let embedding = tagger::pretrain_embeddings(
            &lines,
            &model.vocab,
            tagger_cfg.embed_dim,
            tagger_cfg.seed,
            lm_epochs,
            2e-3,
        )?;
        model.set_embedding(embedding)?;
        log("info", "embedding layer initialized from general-domain language model");
    }
    tagger::train(&mut model, &pretrain, &finetune, |m| {
        log(
            "info",
            &format!(
                "{} epoch {} train_loss {:.4} val_loss {} val_acc {}",
                m.phase,
                m.epoch,
                m.train_loss,
                m.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
                m.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            ),
        )
    })?;
    model.save(&out)?;
    let bytes = std::fs::metadata(&out)?.len();
    log(
        "info",
        &format!(
            "model with {} parameters saved to {} ({} bytes)",
            model.param_count(),
            out.display(),
            bytes
        ),
    );
    Ok(())
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Spoken sentences, one per line.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Written hypotheses output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    resources: CommonResources,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_tag(args: TagArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let model_path = args
        .model
        .or_else(|| cfg.get_path("model"))
        .context("--model is required")?;
    let input = args
        .input
        .or_else(|| cfg.get_path("in"))
        .context("--in is required")?;
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let resources = args.resources.load(&cfg)?;
    let model = TaggerModel::load(&model_path)?;
    let lines = ops::read_lines(&input)?;
    let hyps: Vec<String> = lines
        .iter()
        .map(|line| {
            let words: Vec<&str> = line.split_whitespace().collect();
            ops::tag_to_written(&model, &resources.lexicon, &words)
        })
        .collect();
    ops::write_lines(&out, &hyps)?;
    log("info", &format!("tagged {} sentences", hyps.len()));
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let reference = args
        .reference
        .or_else(|| cfg.get_path("ref"))
        .context("--ref is required")?;
    let hyp = args
        .hyp
        .or_else(|| cfg.get_path("hyp"))
        .context("--hyp is required")?;
    let report = ops::evaluate_files(&reference, &hyp)?;
    let fmt = |s: &itn_core::eval::KindScore| {
        s.accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
    };
    log(
        "info",
        &format!(
            "overall {} cardinal {} currency {} fraction {}",
            fmt(&report.overall),
            fmt(&report.cardinal),
            fmt(&report.currency),
            fmt(&report.fraction)
        ),
    );
    let json = format!("{}\n", serde_json::to_string_pretty(&report)?);
    match args.report.or_else(|| cfg.get_path("report")) {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Args)]
struct AnalyzeOverlapArgs {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    /// Comma-separated n-gram orders, e.g. `1,2`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    topk: Option<usize>,
    /// Stopword list override, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Use the union (Jaccard) denominator instead of top-k.
    #[arg(long)]
    jaccard: bool,
    /// JSON output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_analyze_overlap(args: AnalyzeOverlapArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let a = args.a.or_else(|| cfg.get_path("a")).context("--a is required")?;
    let b = args.b.or_else(|| cfg.get_path("b")).context("--b is required")?;
    let ns: Vec<usize> = pick(args.n, cfg.get("n").map(String::from), "1,2".to_string())
        .split(',')
        .map(|p| p.trim().parse().context("bad n-gram order"))
        .collect::<Result<_>>()?;
    let top_k = pick(args.topk, cfg.get_parsed("topk")?, 10_000);
    let stopwords = match args.stopwords.or_else(|| cfg.get_path("stopwords")) {
        Some(path) => ops::read_lines(&path)?
            .into_iter()
            .map(|w| w.trim().to_string())
            .filter(|w| !w.is_empty())
            .collect(),
        None => itn_core::default_stopwords(),
    };
    let report = ops::analyze_overlap_lines(
        &ops::spoken_text(&a)?,
        &ops::spoken_text(&b)?,
        &ns,
        top_k,
        args.jaccard,
        &stopwords,
    )?;
    let json = format!("{}\n", serde_json::to_string_pretty(&report)?);
    match args.out.or_else(|| cfg.get_path("out")) {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Args)]
struct SynthCorpusArgs {
    /// One of source, target, general.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_synth_corpus(args: SynthCorpusArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let domain_str = args
        .domain
        .or_else(|| cfg.get("domain").map(String::from))
        .context("--domain is required")?;
    let Some(domain) = Domain::parse(&domain_str) else {
        return Err(UsageError(format!("unknown domain {domain_str:?}")).into());
    };
    let size = pick(args.size, cfg.get_parsed("size")?, 0);
    if size == 0 {
        return Err(UsageError("--size must be positive".into()).into());
    }
    let seed = pick(args.seed, cfg.get_parsed("seed")?, 0);
    let out = args
        .out
        .or_else(|| cfg.get_path("out"))
        .context("--out is required")?;
    let lines = synth_corpus(domain, size, seed);
    ops::write_lines(&out, &lines)?;
    log("info", &format!("wrote {} sentences to {}", lines.len(), out.display()));
    Ok(())
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let pipeline_cfg = pipeline::PipelineConfig::from_config(&cfg)?;
    let report = pipeline::run(&pipeline_cfg)?;
    log(
        "info",
        &format!(
            "pipeline done: {} source pairs, diversity {:.2}, report in {}",
            report.source_pairs,
            report.source_diversity,
            pipeline_cfg.workdir.join("report.json").display()
        ),
    );
    Ok(())
}

/// Marker for argument problems detected after clap parsing; exits with the
/// usage code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Augment(args) => cmd_augment(args),
        Command::BuildVocab(args) => cmd_build_vocab(args),
        Command::InferLabels(args) => cmd_infer_labels(args),
        Command::ApplyLabels(args) => cmd_apply_labels(args),
        Command::Train(args) => cmd_train(args),
        Command::Tag(args) => cmd_tag(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::AnalyzeOverlap(args) => cmd_analyze_overlap(args),
        Command::SynthCorpus(args) => cmd_synth_corpus(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let _ = Cli::command();
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.downcast_ref::<UsageError>().is_some()
                || err.to_string().contains("is required")
            {
                log("error", &format!("usage: {err}"));
                ExitCode::from(1)
            } else {
                log("error", &format!("{err:#}"));
                ExitCode::from(2)
            }
        }
    }
}
