//! End-to-end experiment runs: data loading, training with periodic test
//! metrics, λ search, evaluation and artifact export.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis, Ix2};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::copula::{self, write_matrix_csv};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{self, SelectionMetrics};
use crate::networks::{self, save_checkpoint, EpochLog, Model, TrainingConfig};
use crate::samplers::MaskMode;
use crate::tensor::Tape;

pub type Model64 = Model<f64>;

/// Test-set quality of a trained model under its inference masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// TPR/FDR when the data carries ground truth.
    pub selection: Option<SelectionMetrics>,
    pub accuracy: f64,
    pub mean_selected: f64,
    pub n_samples: usize,
}

pub fn evaluate(model: &Model64, data: &Dataset) -> Result<EvalReport> {
    if data.dim() != model.d {
        return Err(Error::LengthMismatch {
            what: "features",
            expected: model.d,
            got: data.dim(),
        });
    }
    let masks = networks::infer_masks(model, &data.x, None)?;
    let probs = networks::predict_proba(model, &data.x, &masks.hard)?;
    let selection = match &data.relevant {
        Some(truth) => Some(evaluation::tpr_fdr(&masks.hard, truth)?),
        None => None,
    };
    let n = data.len().max(1) as f64;
    Ok(EvalReport {
        selection,
        accuracy: evaluation::accuracy(&probs, &data.y)?,
        mean_selected: masks.hard.sum() / n,
        n_samples: data.len(),
    })
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub train: EpochLog,
    pub test: Option<EvalReport>,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,loss,soft_mass,seconds,tpr,fdr,mean_selected,accuracy";

impl EpochRecord {
    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let sel = self.test.as_ref().and_then(|t| t.selection);
        format!(
            "{},{},{},{},{},{},{},{}",
            self.train.epoch,
            self.train.loss,
            self.train.mean_soft_mass,
            self.train.seconds,
            opt(sel.map(|s| s.tpr)),
            opt(sel.map(|s| s.fdr)),
            opt(self.test.as_ref().map(|t| t.mean_selected)),
            opt(self.test.as_ref().map(|t| t.accuracy)),
        )
    }
}

/// Trains on `train`, evaluating on `test` every `eval_every` epochs and
/// after the last one. `progress` sees every record as it is produced.
pub fn train_with_metrics<F>(
    config: &TrainingConfig,
    train: &Dataset,
    test: &Dataset,
    eval_every: usize,
    mut progress: F,
) -> Result<(Model64, Vec<EpochRecord>)>
where
    F: FnMut(&EpochRecord),
{
    let mut records = Vec::with_capacity(config.epochs);
    let last = config.epochs.saturating_sub(1);
    let outcome = networks::train::<f64, _>(config, train, |log, model| {
        let due = (log.epoch + 1) % eval_every.max(1) == 0 || log.epoch == last;
        let test = if due { Some(evaluate(model, test)?) } else { None };
        let rec = EpochRecord {
            train: log.clone(),
            test,
        };
        progress(&rec);
        records.push(rec);
        Ok(())
    })?;
    Ok((outcome.model, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCandidate {
    pub lambda: f64,
    pub validation_accuracy: f64,
    pub validation_mean_selected: f64,
}

/// Trains once per λ on a seeded split of `train` and returns the λ with the
/// best validation accuracy (ties go to the larger λ) and every candidate.
pub fn search_lambda(
    config: &TrainingConfig,
    train: &Dataset,
    grid: &[f64],
    validation_fraction: f64,
) -> Result<(f64, Vec<LambdaCandidate>)> {
    if grid.is_empty() {
        return Err(invalid("lambda_grid", "empty grid"));
    }
    let (fit, val) = train.split(validation_fraction, config.seed)?;
    let mut candidates = Vec::new();
    for &lambda in grid {
        let mut cfg = config.clone();
        cfg.sampler.lambda = lambda;
        let model = networks::train::<f64, _>(&cfg, &fit, |_, _| Ok(()))?.model;
        let report = evaluate(&model, &val)?;
        candidates.push(LambdaCandidate {
            lambda,
            validation_accuracy: report.accuracy,
            validation_mean_selected: report.mean_selected,
        });
    }
    let best = candidates
        .iter()
        .fold(None::<&LambdaCandidate>, |best, c| match best {
            Some(b) if b.validation_accuracy > c.validation_accuracy => Some(b),
            Some(b) if b.validation_accuracy == c.validation_accuracy && b.lambda >= c.lambda => Some(b),
            _ => Some(c),
        })
        .expect("nonempty grid");
    Ok((best.lambda, candidates))
}

/// Paths written by [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub config: PathBuf,
    pub epochs: PathBuf,
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub sigma: PathBuf,
    pub masks: Option<PathBuf>,
    pub lambda_search: Option<PathBuf>,
}

impl RunArtifacts {
    pub fn paths(&self) -> Vec<&Path> {
        let mut out = vec![
            self.config.as_path(),
            &self.epochs,
            &self.metrics_json,
            &self.metrics_csv,
            &self.checkpoint,
            &self.sigma,
        ];
        out.extend(self.masks.as_deref());
        out.extend(self.lambda_search.as_deref());
        out
    }
}

pub const METRICS_CSV_HEADER: &str = "name,mode,lambda,tpr,fdr,mean_selected,accuracy,n_samples";

pub fn metrics_csv(name: &str, config: &TrainingConfig, r: &EvalReport) -> String {
    let mode = match config.mode {
        MaskMode::Binary => "binary",
        MaskMode::Topk => "topk",
    };
    let (tpr, fdr) = r
        .selection
        .map(|s| (s.tpr.to_string(), s.fdr.to_string()))
        .unwrap_or_default();
    format!(
        "{METRICS_CSV_HEADER}\n{name},{mode},{},{tpr},{fdr},{},{},{}\n",
        config.sampler.lambda, r.mean_selected, r.accuracy, r.n_samples
    )
}

/// Outcome of [`run`].
pub struct RunOutput {
    pub model: Model64,
    pub report: EvalReport,
    pub records: Vec<EpochRecord>,
    pub artifacts: RunArtifacts,
}

/// Full training run: optional λ search, training with the per-epoch log,
/// final evaluation, checkpoint, covariance export and (optionally) masks.
/// Writes the resolved config (with the chosen λ) first.
pub fn run<F>(config: &ExperimentConfig, out: &Path, mut progress: F) -> Result<RunOutput>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    fs::create_dir_all(out)?;
    let (train, test) = config.data.load(config.training.seed)?;
    let mut resolved = config.clone();
    let mut lambda_search = None;
    if !config.lambda_grid.is_empty() {
        let (best, candidates) = search_lambda(
            &config.training,
            &train,
            &config.lambda_grid,
            config.validation_fraction,
        )?;
        resolved.training.sampler.lambda = best;
        let path = out.join("lambda_search.csv");
        let mut text = String::from("lambda,validation_accuracy,validation_mean_selected,chosen\n");
        for c in &candidates {
            text += &format!(
                "{},{},{},{}\n",
                c.lambda,
                c.validation_accuracy,
                c.validation_mean_selected,
                u8::from(c.lambda == best)
            );
        }
        fs::write(&path, text)?;
        lambda_search = Some(path);
    }
    let config_path = out.join("config.json");
    fs::write(&config_path, resolved.to_json()?)?;

    let epochs_path = out.join("epochs.csv");
    let mut epochs_file = std::io::BufWriter::new(fs::File::create(&epochs_path)?);
    writeln!(epochs_file, "{EPOCH_CSV_HEADER}")?;
    let mut write_err = None;
    let (model, records) = train_with_metrics(&resolved.training, &train, &test, resolved.eval_every, |rec| {
        if let Err(e) = writeln!(epochs_file, "{}", rec.csv_row()) {
            write_err.get_or_insert(e);
        }
        progress(rec);
    })?;
    epochs_file.flush()?;
    if let Some(e) = write_err {
        return Err(e.into());
    }

    let report = records
        .last()
        .and_then(|r| r.test.clone())
        .map_or_else(|| evaluate(&model, &test), Ok)?;
    let metrics_json = out.join("metrics.json");
    fs::write(&metrics_json, serde_json::to_string_pretty(&report)? + "\n")?;
    let metrics_csv_path = out.join("metrics.csv");
    fs::write(&metrics_csv_path, metrics_csv(&resolved.name, &resolved.training, &report))?;
    let checkpoint = out.join("model.json");
    save_checkpoint(&model, &checkpoint)?;
    let sigma = out.join("sigma.csv");
    write_matrix_csv(&sigma, &model_covariance(&model, &test.x, None)?)?;
    let masks = if resolved.export_masks {
        let path = out.join("masks.csv");
        write_masks(&model, &test.x, &path)?;
        Some(path)
    } else {
        None
    };
    let artifacts = RunArtifacts {
        config: config_path,
        epochs: epochs_path,
        metrics_json,
        metrics_csv: metrics_csv_path,
        checkpoint,
        sigma,
        masks,
        lambda_search,
    };
    Ok(RunOutput {
        model,
        report,
        records,
        artifacts,
    })
}

/// Covariance `Σ` of the selector's correlation model for sample `row` of
/// `x`, or for the factor and noise level averaged over all rows.
pub fn model_covariance(model: &Model64, x: &Array2<f64>, row: Option<usize>) -> Result<Array2<f64>> {
    let rows = match row {
        Some(i) if i < x.nrows() => x.slice(s![i..i + 1, ..]).to_owned(),
        Some(i) => return Err(invalid("sample", format!("row {i} out of range for {} rows", x.nrows()))),
        None => x.clone(),
    };
    let tape = Tape::new();
    let bound = model.params.bind(&tape, false);
    let out = model.choice.forward(&bound, tape.constant(rows.into_dyn()))?;
    let (d, p) = (model.choice.d, model.choice.p);
    let factor = out.factor.mean_axis(0)?.reshape(&[1, d, p])?;
    let cov = match out.sigma {
        Some(s) => copula::covariance_noise_level(factor, s.mean()?.reshape(&[1])?)?,
        None => copula::covariance_scaled(factor, model.config.tau)?,
    };
    let cov = cov.array();
    Ok(cov
        .into_shape_with_order((d, d))
        .expect("single matrix")
        .into_dimensionality::<Ix2>()
        .expect("2-D"))
}

/// One row of 0/1 values per sample.
pub fn write_masks(model: &Model64, x: &Array2<f64>, path: &Path) -> Result<()> {
    let masks = networks::infer_masks(model, x, None)?;
    write_matrix_csv(path, &masks.hard)?;
    Ok(())
}

/// The `m` highest-scoring feature indices (1-based) per sample, best first.
pub fn write_ranking(model: &Model64, x: &Array2<f64>, m: usize, path: &Path) -> Result<()> {
    if m == 0 || m > model.d {
        return Err(invalid("m", format!("must lie in 1..={}, got {m}", model.d)));
    }
    let scores = networks::scores(model, x)?;
    let ranks = evaluation::top_m_indices(&scores, m)?;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = (1..=m).map(|r| format!("rank_{r}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in ranks {
        let cells: Vec<String> = row.iter().map(|i| (i + 1).to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Selection frequency of each feature over `x`, `[d]`.
pub fn selection_frequency(model: &Model64, x: &Array2<f64>) -> Result<Vec<f64>> {
    let masks = networks::infer_masks(model, x, None)?;
    Ok(masks.hard.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default())
}
