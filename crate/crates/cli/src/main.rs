use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aecbir::dataset::{generate_synthetic_corpus, load_image, load_manifest, DatasetManifest, SyntheticSpec, MANIFEST_FILE};
use aecbir::evaluation::{classification_accuracy, run_benchmark, BenchmarkSettings, IrmaErrorConfig};
use aecbir::pipeline::{train_pipeline, PipelineConfig, TrainedArtifacts};
use aecbir::retrieval::{SearchScope, Searcher, Similarity};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aecbir", version, about = "Block-relevance image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus and its manifest.
    Gen(GenArgs),
    /// Train autoencoder, error histogram, SVM and index.
    Train(TrainArgs),
    /// Retrieve the top-m images for one query image.
    Query(QueryArgs),
    /// Sweep grid orders and reductions, writing benchmark.csv/.txt.
    Benchmark(BenchmarkArgs),
    /// Classification accuracy and IRMA error on the test split.
    EvalClassify(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Grid order used to place class regions.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    svm_gamma: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    similarity: Option<Similarity>,
    #[arg(long)]
    scope: Option<SearchScope>,
}

impl ConfigArgs {
    fn resolve(&self, k: Option<usize>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field.clone() { cfg.$field = v; } )* };
        }
        set!(d, s, p, epochs, learning_rate, batch_size, svm_c, svm_tol, seed, workers, similarity, scope, artifacts);
        if let Some(g) = self.svm_gamma {
            cfg.svm_gamma = Some(g);
        }
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(k) = k {
            cfg.k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn manifest_of(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let path = cfg
        .manifest
        .as_ref()
        .context("no manifest given (use --manifest or set `manifest` in the config file)")?;
    Ok(load_manifest(path)?)
}

fn load_artifacts(cfg: &PipelineConfig, k: usize) -> Result<TrainedArtifacts> {
    let dir = cfg.artifact_dir(k);
    TrainedArtifacts::load(&dir).with_context(|| format!("loading artifacts for k = {k} from {}", dir.display()))
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid orders to train, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    k: Option<usize>,
    /// Query image (PGM).
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 10)]
    m: usize,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 5, 6])]
    k: Vec<usize>,
    #[arg(long = "reductions", value_delimiter = ',', default_values_t = [0.0, 0.125, 0.25, 0.5])]
    reductions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 30])]
    m: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Directory for the report files; defaults to the artifact root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    k: Option<usize>,
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        seed: a.seed,
        num_classes: a.classes,
        per_class: a.per_class,
        image_size: a.size,
        grid_k: a.k,
        test_fraction: a.test_fraction,
    };
    let manifest = generate_synthetic_corpus(&spec, &a.out)?;
    println!(
        "wrote {} images to {}",
        manifest.entries().len(),
        a.out.display()
    );
    println!("manifest: {}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let base = a.config.resolve(None)?;
    let ks = if a.k.is_empty() { vec![base.k] } else { a.k.clone() };
    let manifest = manifest_of(&base)?;
    for k in ks {
        let cfg = a.config.resolve(Some(k))?;
        let (artifacts, summary) = train_pipeline(&manifest, &cfg)?;
        let dir = cfg.artifact_dir(k);
        artifacts.save(&dir, &cfg)?;
        println!("k = {k}: artifacts in {}", dir.display());
        let losses: Vec<String> = summary.epoch_losses.iter().map(|l| format!("{l:.6}")).collect();
        println!("  autoencoder: {} blocks, epoch losses {}", summary.autoencoder_samples, losses.join(" "));
        println!("  class counts: {:?}", summary.class_counts);
        let unconverged = summary.pairs.iter().filter(|p| !p.converged).count();
        println!("  svm: {} pairwise models, {unconverged} hit the pass limit", summary.pairs.len());
    }
    Ok(())
}

fn cmd_query(a: &QueryArgs) -> Result<()> {
    let cfg = a.config.resolve(a.k)?;
    let artifacts = load_artifacts(&cfg, cfg.k)?;
    let image = load_image(&a.image)?;
    let searcher = Searcher::new(&artifacts.index, &artifacts.svm, &artifacts.histogram, cfg.workers)?;
    let res = searcher.query(&image, &cfg.query_options(a.m))?;
    let manifest = cfg.manifest.as_ref().map(load_manifest).transpose()?;
    let label = |c: usize| manifest.as_ref().map_or(c.to_string(), |m| m.labels()[c].clone());

    println!("predicted class: {} (label {})", res.predicted_class, label(res.predicted_class));
    println!("dropped blocks: {:?}", res.mask.dropped_blocks());
    println!("scored length: {}", res.scored_length);
    println!("rank image_id class score");
    for (rank, h) in res.hits.hits().iter().enumerate() {
        println!("{} {} {} {:.12}", rank + 1, h.image_id, label(h.class), h.score);
    }
    println!("scoring time: {:.3} us", res.scoring_time.as_secs_f64() * 1e6);
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<ExitCode> {
    let cfg = a.config.resolve(None)?;
    let manifest = manifest_of(&cfg)?;
    let mut artifacts = BTreeMap::new();
    for &k in &a.k {
        artifacts.insert(k, load_artifacts(&cfg, k)?);
    }
    let settings = BenchmarkSettings {
        ks: a.k.clone(),
        ds: a.reductions.clone(),
        ms: a.m.clone(),
        queries: a.queries,
        seed: cfg.seed,
        workers: cfg.workers,
        similarity: cfg.similarity,
        scope: cfg.scope,
        irma: IrmaErrorConfig::default(),
    };
    let mut report = run_benchmark(&manifest, &artifacts, &settings)?;
    report.header.push(format!("manifest = {}", cfg.manifest.as_deref().unwrap_or(Path::new("")).display()));
    report.header.push(format!("artifacts = {}", cfg.artifacts.display()));
    let out = a.out.clone().unwrap_or_else(|| cfg.artifacts.clone());
    report.write_files(&out)?;
    print!("{}", report.to_table());
    println!("reports written to {}", out.display());
    if !report.audit_passed() {
        eprintln!("error: benchmark self-audit failed ({} findings)", report.audit_failures.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.config.resolve(a.k)?;
    let manifest = manifest_of(&cfg)?;
    let artifacts = load_artifacts(&cfg, cfg.k)?;
    let has_codes = manifest.entries().iter().all(|e| e.code.is_some());
    let irma = IrmaErrorConfig::default();
    let summary = classification_accuracy(&artifacts.svm, &manifest, cfg.k, has_codes.then_some(&irma))?;
    println!("k = {}", cfg.k);
    println!("test images: {}", summary.test_count);
    println!("accuracy: {:.4} ({} correct)", summary.accuracy, summary.correct);
    match summary.summed_irma_error {
        Some(sum) => println!(
            "IRMA error: summed {sum:.4}, mean {:.4}",
            summary.mean_irma_error().unwrap_or_default()
        ),
        None => println!("IRMA error: not scored (manifest lacks codes)"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Query(a) => cmd_query(a)?,
        Command::Benchmark(a) => return cmd_benchmark(a),
        Command::EvalClassify(a) => cmd_eval(a)?,
    }
    Ok(ExitCode::SUCCESS)
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
