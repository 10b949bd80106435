use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hrsn::eval::{cross_validate, evaluate_distances, verify_pair, CvReport};
use hrsn::gradcheck::{lstm_suite, pipeline_suite, Tolerance};
use hrsn::preprocess::{read_corpus, tokenize_document};
use hrsn::synthetic::{generate, SyntheticConfig};
use hrsn::train::{encode_instance, fit, make_cv_splits, pair_distances, TrainConfig};
use hrsn::{EmbeddingTable, Label, Model, Rng};

#[derive(Parser)]
#[command(name = "hrsn", version, about = "Hierarchical recurrent Siamese network for authorship verification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML file with TrainConfig keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSONL corpus: one {"known": [...], "unknown": "...", "label": 0|1} per line
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Word embeddings in GloVe text format
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Model checkpoint to write (train) or read (verify)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Ordered gradient reduction, for bit-for-bit repeatable runs
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; stdout when omitted (a directory for `synthetic`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its embeddings
    Synthetic {
        #[arg(long, default_value_t = 800)]
        instances: usize,
        #[arg(long, default_value_t = 40)]
        authors: usize,
    },
    /// Tokenize a corpus into a cache and report the OOV rate
    Preprocess,
    /// Train on one cross-validation split, write a checkpoint and an epoch log
    Train {
        /// Which split's train/dev part to use
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Score two text files with a trained model
    Verify { doc_a: PathBuf, doc_b: PathBuf },
    /// Run k-fold cross-validation and write the report
    CrossValidate,
    /// Run the finite-difference gradient checks
    Gradcheck {
        /// Number of random LSTM configurations
        #[arg(long, default_value_t = 20)]
        configs: usize,
    },
    /// Render a cross-validation report as a table
    Report { report: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| format!("--{flag} is required"))
}

impl Global {
    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.deterministic |= self.deterministic;
        cfg.validate()?;
        Ok(cfg)
    }

    fn embeddings(&self, dim: usize) -> Result<EmbeddingTable> {
        let path = required(&self.embeddings, "embeddings")?;
        EmbeddingTable::load(path, dim).with_context(|| format!("loading {}", path.display()))
    }

    fn corpus(&self) -> Result<Vec<hrsn::VerificationInstance>> {
        let path = required(&self.corpus, "corpus")?;
        read_corpus(path).with_context(|| format!("loading {}", path.display()))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synthetic { instances, authors } => synthetic(g, instances, authors),
        Command::Preprocess => preprocess(g),
        Command::Train { fold } => train(g, fold),
        Command::Verify { doc_a, doc_b } => verify(g, &doc_a, &doc_b),
        Command::CrossValidate => {
            let cfg = g.train_config()?;
            let table = g.embeddings(cfg.word_dim)?;
            let report = cross_validate(&g.corpus()?, &table, &cfg)?;
            let mut out = output(g.out.as_deref())?;
            writeln!(out, "{}", report.to_json()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { configs } => gradcheck(g, configs),
        Command::Report { report } => {
            let report: CvReport = serde_json::from_str(&fs::read_to_string(&report)?)?;
            render_report(&report, &mut output(g.out.as_deref())?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn synthetic(g: &Global, instances: usize, authors: usize) -> Result<ExitCode> {
    let dir = required(&g.out, "out")?;
    fs::create_dir_all(dir)?;
    let config = SyntheticConfig {
        instances,
        authors,
        ..Default::default()
    };
    let corpus = generate(&config, g.seed.unwrap_or(0))?;
    hrsn::preprocess::write_corpus(BufWriter::new(File::create(dir.join("corpus.jsonl"))?), &corpus.instances)?;
    corpus.embeddings.write_to(BufWriter::new(File::create(dir.join("embeddings.txt"))?))?;
    eprintln!("wrote {} instances and {} embeddings to {}", corpus.instances.len(), corpus.embeddings.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn preprocess(g: &Global) -> Result<ExitCode> {
    let cfg = g.train_config()?;
    let table = g.embeddings(cfg.word_dim)?;
    let corpus = g.corpus()?;
    let mut out = output(g.out.as_deref())?;
    let truncate = |text: &str| -> Vec<Vec<String>> {
        let mut doc = tokenize_document(text);
        doc.truncate(cfg.max_sentences);
        for s in &mut doc {
            s.truncate(cfg.max_words);
        }
        doc
    };
    let (mut lookups, mut misses) = (0u64, 0u64);
    for (id, inst) in corpus.iter().enumerate() {
        let known = truncate(&inst.known_text());
        let unknown = truncate(&inst.unknown);
        if known.is_empty() || unknown.is_empty() {
            bail!("instance {id} has an empty document after preprocessing");
        }
        for tok in known.iter().chain(&unknown).flatten() {
            lookups += 1;
            misses += u64::from(table.get(tok).is_none());
        }
        let label: u8 = inst.label.into();
        writeln!(out, "{}", json!({"id": id, "label": label, "known": known, "unknown": unknown}))?;
    }
    out.flush()?;
    let rate = if lookups == 0 { 0.0 } else { misses as f64 / lookups as f64 };
    eprintln!("{}", json!({"instances": corpus.len(), "tokens": lookups, "oov": misses, "oov_rate": rate}));
    Ok(ExitCode::SUCCESS)
}

fn train(g: &Global, fold: usize) -> Result<ExitCode> {
    let cfg = g.train_config()?;
    let checkpoint = required(&g.checkpoint, "checkpoint")?;
    let table = g.embeddings(cfg.word_dim)?;
    let corpus = g.corpus()?;
    let root = Rng::new(cfg.seed);
    let splits = make_cv_splits(corpus.len(), cfg.folds, &mut root.derive(999))?;
    let split = splits.get(fold).with_context(|| format!("fold {fold} out of range for {} folds", cfg.folds))?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();

    let fitted = fit(&pick(&split.train), &pick(&split.dev), &table, &cfg, &root.derive(1000 + fold as u64))?;
    fitted.model.save(checkpoint)?;
    let mut out = output(g.out.as_deref())?;
    for entry in &fitted.log {
        writeln!(out, "{}", serde_json::to_string(entry)?)?;
    }
    out.flush()?;

    let test: Vec<_> = split.test.iter().map(|&i| encode_instance(&corpus[i], &table, &cfg)).collect::<Result<_, _>>()?;
    let distances = pair_distances(&fitted.model.params, &test)?;
    let labels: Vec<Label> = test.iter().map(|p| p.label).collect();
    let eval = evaluate_distances(&distances, &labels, fitted.model.thresholds().midpoint())?;
    eprintln!("{}", json!({"best_epoch": fitted.best_epoch, "test": eval}));
    Ok(ExitCode::SUCCESS)
}

fn verify(g: &Global, a: &Path, b: &Path) -> Result<ExitCode> {
    let model = Model::load(required(&g.checkpoint, "checkpoint")?)?;
    let table = g.embeddings(model.config.word_dim)?;
    let score = verify_pair(&model, &table, &fs::read_to_string(a)?, &fs::read_to_string(b)?)?;
    writeln!(output(g.out.as_deref())?, "{}", serde_json::to_string(&score)?)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(g: &Global, configs: usize) -> Result<ExitCode> {
    let tol = Tolerance::default();
    let seed = g.seed.unwrap_or(0);
    let mut reports = lstm_suite(configs, seed, &tol)?;
    reports.extend(pipeline_suite(seed, &tol)?);
    let mut out = output(g.out.as_deref())?;
    for r in &reports {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    eprintln!("{} checks, {failed} failed", reports.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn render_report(r: &CvReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{:>4}  {:>9}  {:>9}  {:>9}  {:>9}  {:>5}", "fold", "precision", "recall", "F1", "accuracy", "n")?;
    for f in &r.folds {
        let m = &f.test.metrics;
        writeln!(
            out,
            "{:>4}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9.2}  {:>5}",
            f.fold,
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1,
            100.0 * m.accuracy,
            f.test_ids.len()
        )?;
    }
    let a = &r.aggregate;
    let cell = |s: &hrsn::eval::Summary| format!("{:.1} ± {:.1}", s.mean_percent, s.std_percent);
    writeln!(out, "mean ± sample std (%): precision {}, recall {}, F1 {}, accuracy {}", cell(&a.precision), cell(&a.recall), cell(&a.f1), cell(&a.accuracy))?;
    Ok(())
}
