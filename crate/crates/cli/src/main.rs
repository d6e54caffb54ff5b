//! `copsel`: generate synthetic data, train and evaluate selectors, verify
//! the sampler theorems and export learned structure.
//!
//! Exit codes: 0 success, 1 usage error (including invalid parameter
//! values), 2 tolerance violated, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use copsel::config::{self, ExperimentConfig};
use copsel::copula::{CorrelationModel, NoiseConstruction, RankMode};
use copsel::dataset::Dataset;
use copsel::evaluation::{self, text_report};
use copsel::experiment::{self, EvalReport, Model64};
use copsel::networks::{load_checkpoint, ScoreHead};
use copsel::samplers::DEFAULT_DELTA;
use copsel::synthetic::{self, Family, SyntheticSpec};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "copsel", version, about = "Copula-based instance-wise feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Write a synthetic dataset as CSV plus a JSON sidecar.
    Generate(GenerateArgs),
    /// Train a selector and write metrics, logs and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Monte-Carlo checks of the samplers and the copula.
    Verify(VerifyArgs),
    /// Export the covariance, masks or score ranking of a checkpoint.
    Export(ExportArgs),
    /// Train the full method and an ablated variant identically and compare.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// Seed for data generation and training.
    #[arg(long, env = "COPSEL_SEED", global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, default_value = "syn1")]
    family: String,
    #[arg(long, default_value_t = 11)]
    d: usize,
    /// AR(1) feature covariance with coefficient 0.5.
    #[arg(long)]
    correlated: bool,
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    /// File stem; defaults to the family name.
    #[arg(long)]
    stem: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum RankArg {
    Low,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum NoiseArg {
    Cholesky,
    Factor,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum HeadArg {
    Linear,
    Sigmoid,
}

/// Where the experiment comes from, plus overrides.
#[derive(Debug, Args, Serialize)]
struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (see `--list-presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, env = "MNIST_DIR", default_value = "mnist")]
    mnist_dir: PathBuf,
    #[arg(long)]
    list_presets: bool,
    /// Replace the copula with independent noise.
    #[arg(long)]
    nola: bool,
    #[arg(long, value_enum)]
    rank: Option<RankArg>,
    /// Columns of the low-rank factor.
    #[arg(long)]
    factor_rank: Option<usize>,
    /// How correlated noise is drawn.
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated λ values searched on a validation split.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Sampler temperature.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    score_head: Option<HeadArg>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    export_masks: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    common: Common,
    /// Print per-epoch progress to stderr.
    #[arg(long)]
    verbose: bool,
}

/// A checkpoint and the data it is applied to: a CSV file, or the test set
/// of a config or preset.
#[derive(Debug, Args, Serialize)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV; with a JSON sidecar only its test rows are used.
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    data: Option<PathBuf>,
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, env = "MNIST_DIR", default_value = "mnist")]
    mnist_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum Check {
    Theorem1,
    Theorem2,
    Copula,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    #[arg(value_enum)]
    check: Check,
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.01)]
    t: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Shared-noise scale for theorem 2.
    #[arg(long, default_value_t = 1e4)]
    tau: f64,
    /// Defaults to 10⁵ (theorem 1, copula) or 10⁴ (theorem 2).
    #[arg(long)]
    draws: Option<usize>,
    /// TV bound (theorem 1), minimum match rate (theorem 2) or correlation
    /// tolerance (copula).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Minimum KS p-value for the copula check.
    #[arg(long, default_value_t = 0.01)]
    p_floor: f64,
    /// Copula check factor, one comma-separated row per feature, rows
    /// separated by `;`. Defaults to `2;2;0;0;0` (R₁₂ = 0.8).
    #[arg(long, default_value = "2;2;0;0;0")]
    factor: String,
    /// Copula check scale of `L Lᵀ`; 0 gives R = I.
    #[arg(long, default_value_t = 1.0)]
    copula_tau: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ExportWhat {
    Sigma,
    Masks,
    Ranking,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[arg(value_enum)]
    what: ExportWhat,
    #[command(flatten)]
    source: CheckpointArgs,
    /// Row whose covariance is exported; default averages over all rows.
    #[arg(long)]
    sample: Option<usize>,
    /// Indices per row of the ranking export.
    #[arg(long, default_value_t = 120)]
    m: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum Ablation {
    Nola,
    Rank,
}

#[derive(Debug, Args, Serialize)]
struct AblateArgs {
    /// `nola` drops the copula; `rank` swaps full-rank for a rank-1 factor.
    #[arg(long, value_enum, default_value = "nola")]
    ablation: Ablation,
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    verbose: bool,
}

enum Failure {
    Usage(String),
    Tolerance(String),
    Runtime(String),
}

impl From<copsel::Error> for Failure {
    fn from(e: copsel::Error) -> Self {
        match e {
            copsel::Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
        Command::Export(a) => export(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Tolerance(msg)) => {
            eprintln!("tolerance violated: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Records the invocation next to the command's outputs.
fn snapshot<A: Serialize>(out: &Path, command: &str, args: &A) -> Outcome {
    fs::create_dir_all(out)?;
    let value = serde_json::json!({ "command": command, "args": args });
    fs::write(out.join(format!("{command}.args.json")), serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Outcome {
    let family: Family = a.family.parse()?;
    let spec = SyntheticSpec {
        family,
        d: a.d,
        correlated: a.correlated,
        n_train: a.n_train,
        n_test: a.n_test,
        seed: a.common.seed.unwrap_or(0),
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    snapshot(&a.common.out, "generate", a)?;
    let stem = a.stem.clone().unwrap_or_else(|| family.to_string());
    synthetic::write(&spec, &a.common.out, &stem)?;
    println!("wrote {}", a.common.out.join(format!("{stem}.csv")).display());
    Ok(())
}

fn resolve(e: &ExperimentArgs, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&e.config, &e.preset) {
        (Some(path), _) => ExperimentConfig::read(path)?,
        (None, Some(name)) => config::preset(name, &e.mnist_dir)?,
        (None, None) => return Err(Failure::Usage("pass --config PATH or --preset NAME".into())),
    };
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let tr = &mut cfg.training;
    tr.nola |= e.nola;
    if let Some(r) = e.rank {
        tr.rank_mode = match r {
            RankArg::Low => RankMode::Low,
            RankArg::Full => RankMode::Full,
        };
    }
    if let Some(p) = e.factor_rank {
        tr.factor_rank = p;
    }
    if let Some(n) = e.noise {
        tr.noise_construction = match n {
            NoiseArg::Cholesky => NoiseConstruction::Cholesky,
            NoiseArg::Factor => NoiseConstruction::Factor,
        };
    }
    if let Some(l) = e.lambda {
        tr.sampler.lambda = l;
    }
    if let Some(n) = e.epochs {
        tr.epochs = n;
    }
    if let Some(t) = e.t {
        tr.sampler.t = t;
    }
    if let Some(k) = e.k {
        tr.sampler.k = k;
    }
    if let Some(h) = e.score_head {
        tr.score_head = match h {
            HeadArg::Linear => ScoreHead::Linear,
            HeadArg::Sigmoid => ScoreHead::Sigmoid,
        };
    }
    if let Some(grid) = &e.lambda_grid {
        cfg.lambda_grid = grid.clone();
    }
    if let Some(n) = e.eval_every {
        cfg.eval_every = n;
    }
    cfg.export_masks |= e.export_masks;
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(title: &str, report: &EvalReport) -> Outcome {
    print!("{}", text_report(title, report)?);
    Ok(())
}

fn run_experiment(cfg: &ExperimentConfig, out: &Path, verbose: bool) -> Result<EvalReport, Failure> {
    let run = experiment::run(cfg, out, |rec| {
        if verbose {
            match &rec.test {
                Some(t) => eprintln!(
                    "epoch {} loss {:.4} accuracy {:.2} selected {:.2}{}",
                    rec.train.epoch,
                    rec.train.loss,
                    t.accuracy,
                    t.mean_selected,
                    t.selection.map(|s| format!(" tpr {:.1} fdr {:.1}", s.tpr, s.fdr)).unwrap_or_default()
                ),
                None => eprintln!("epoch {} loss {:.4}", rec.train.epoch, rec.train.loss),
            }
        }
    })?;
    Ok(run.report)
}

fn train(a: &TrainArgs) -> Outcome {
    if a.experiment.list_presets {
        println!("{}", config::preset_names().join("\n"));
        return Ok(());
    }
    let cfg = resolve(&a.experiment, a.common.seed)?;
    snapshot(&a.common.out, "train", a)?;
    let report = run_experiment(&cfg, &a.common.out, a.verbose)?;
    print_report(&cfg.name, &report)
}

fn load_data(s: &CheckpointArgs, seed: Option<u64>) -> Result<Dataset, Failure> {
    if let Some(path) = &s.data {
        if path.with_extension("json").exists() {
            return Ok(synthetic::read(path)?.2);
        }
        return Ok(Dataset::read_csv(path)?);
    }
    let cfg = match (&s.config, &s.preset) {
        (Some(path), _) => ExperimentConfig::read(path)?,
        (None, Some(name)) => config::preset(name, &s.mnist_dir)?,
        (None, None) => return Err(Failure::Usage("pass --data, --config or --preset".into())),
    };
    let cfg = match seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    Ok(cfg.data.load(cfg.training.seed)?.1)
}

fn load_model(s: &CheckpointArgs) -> Result<Model64, Failure> {
    Ok(load_checkpoint::<f64>(&s.checkpoint)?)
}

fn eval(a: &EvalArgs) -> Outcome {
    let model = load_model(&a.source)?;
    let data = load_data(&a.source, a.common.seed)?;
    snapshot(&a.common.out, "eval", a)?;
    let report = experiment::evaluate(&model, &data)?;
    let out = &a.common.out;
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let name = a.source.checkpoint.display().to_string();
    fs::write(out.join("eval.csv"), experiment::metrics_csv(&name, &model.config, &report))?;
    print_report("eval", &report)
}

fn parse_factor(text: &str) -> Result<Array2<f64>, Failure> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| r.split(',').map(|v| v.trim().parse::<f64>()).collect())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("bad --factor: {e}")))?;
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Failure::Usage("bad --factor: rows must have equal, nonzero length".into()));
    }
    Ok(Array2::from_shape_vec((rows.len(), p), rows.concat()).expect("rectangular"))
}

fn verify(a: &VerifyArgs) -> Outcome {
    let out = &a.common.out;
    snapshot(out, "verify", a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed.unwrap_or(0));
    let (name, text, json, passed) = match a.check {
        Check::Theorem1 => {
            let r = evaluation::verify_theorem1(
                &a.alpha,
                a.k,
                a.t,
                a.delta,
                a.draws.unwrap_or(100_000),
                a.tolerance.unwrap_or(0.02),
                &mut rng,
            )?;
            ("theorem1", text_report("theorem 1", &r)?, serde_json::to_string_pretty(&r)?, r.passed)
        }
        Check::Theorem2 => {
            let r = evaluation::verify_theorem2(
                &a.alpha,
                a.k,
                a.t,
                a.delta,
                a.tau,
                a.draws.unwrap_or(10_000),
                a.tolerance.unwrap_or(0.999),
                &mut rng,
            )?;
            ("theorem2", text_report("theorem 2", &r)?, serde_json::to_string_pretty(&r)?, r.passed)
        }
        Check::Copula => {
            let model = CorrelationModel::scaled(parse_factor(&a.factor)?, a.copula_tau);
            let r = evaluation::copula_marginal_check(
                &model,
                a.draws.unwrap_or(100_000),
                a.p_floor,
                a.tolerance.unwrap_or(0.02),
                &mut rng,
            )?;
            ("copula", text_report("copula", &r)?, serde_json::to_string_pretty(&r)?, r.passed)
        }
    };
    fs::write(out.join(format!("{name}.json")), json + "\n")?;
    fs::write(out.join(format!("{name}.txt")), &text)?;
    print!("{text}");
    if passed {
        Ok(())
    } else {
        Err(Failure::Tolerance(name.into()))
    }
}

fn export(a: &ExportArgs) -> Outcome {
    let model = load_model(&a.source)?;
    let data = load_data(&a.source, a.common.seed)?;
    let out = &a.common.out;
    snapshot(out, "export", a)?;
    let path = match a.what {
        ExportWhat::Sigma => {
            let path = out.join("sigma.csv");
            let cov = experiment::model_covariance(&model, &data.x, a.sample)?;
            copsel::copula::write_matrix_csv(&path, &cov)?;
            path
        }
        ExportWhat::Masks => {
            let path = out.join("masks.csv");
            experiment::write_masks(&model, &data.x, &path)?;
            path
        }
        ExportWhat::Ranking => {
            let path = out.join("ranking.csv");
            experiment::write_ranking(&model, &data.x, a.m, &path)?;
            path
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

fn ablate(a: &AblateArgs) -> Outcome {
    let full = resolve(&a.experiment, a.common.seed)?;
    let mut ablated = full.clone();
    match a.ablation {
        Ablation::Nola => ablated.training.nola = true,
        Ablation::Rank => {
            ablated.training.rank_mode = RankMode::Low;
            ablated.training.factor_rank = 1;
        }
    }
    ablated.name = format!("{}-{:?}", full.name, a.ablation).to_lowercase();
    let out = &a.common.out;
    snapshot(out, "ablate", a)?;
    let base = run_experiment(&full, &out.join("full"), a.verbose)?;
    let abl = run_experiment(&ablated, &out.join("ablated"), a.verbose)?;
    let row = |name: &str, r: &EvalReport| {
        let (tpr, fdr) = r.selection.map(|s| (s.tpr.to_string(), s.fdr.to_string())).unwrap_or_default();
        format!("{name},{tpr},{fdr},{},{}\n", r.mean_selected, r.accuracy)
    };
    let text = format!(
        "variant,tpr,fdr,mean_selected,accuracy\n{}{}",
        row("full", &base),
        row("ablated", &abl)
    );
    fs::write(out.join("comparison.csv"), &text)?;
    print!("{text}");
    Ok(())
}
