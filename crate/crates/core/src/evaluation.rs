//! Selection metrics, accuracy, and Monte-Carlo verifiers for the sampler
//! convergence results and the copula marginals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::CorrelationModel;
use crate::error::{invalid, Error, Result};
use crate::samplers::{self, MAX_ENUMERATION_DIM};
use crate::tensor::Tape;

/// Percentages, macro-averaged over samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tpr: f64,
    pub fdr: f64,
    pub n_samples: usize,
    pub mean_selected: f64,
}

/// Per-sample `TPR = |S ∩ T| / |T|` and `FDR = |S \ T| / max(|S|, 1)`,
/// averaged over samples. An empty selection scores 0 on both. Masks are
/// `[n, d]` with nonzero entries marking selected features; `truth` holds
/// 0-based indices.
pub fn tpr_fdr(masks: &Array2<f64>, truth: &[Vec<usize>]) -> Result<SelectionMetrics> {
    if masks.nrows() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "ground-truth sets",
            expected: masks.nrows(),
            got: truth.len(),
        });
    }
    let (mut tpr, mut fdr, mut selected) = (0.0, 0.0, 0.0);
    for (row, t) in masks.axis_iter(Axis(0)).zip(truth) {
        let chosen: Vec<usize> = (0..row.len()).filter(|&i| row[i] != 0.0).collect();
        let hits = chosen.iter().filter(|i| t.contains(i)).count();
        tpr += hits as f64 / t.len().max(1) as f64;
        fdr += (chosen.len() - hits) as f64 / chosen.len().max(1) as f64;
        selected += chosen.len() as f64;
    }
    let n = truth.len().max(1) as f64;
    Ok(SelectionMetrics {
        tpr: 100.0 * tpr / n,
        fdr: 100.0 * fdr / n,
        n_samples: truth.len(),
        mean_selected: selected / n,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Percentage of rows whose argmax equals the label.
pub fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: probs.nrows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let correct = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckReport {
    pub theorem: u8,
    pub alpha: Vec<f64>,
    pub k: usize,
    pub t: f64,
    pub delta: f64,
    pub tau: f64,
    pub n_draws: usize,
    /// Distance between empirical and exact subset frequencies, when the
    /// enumeration oracle applies.
    pub tv_distance: Option<f64>,
    /// Fraction of draws whose hard mask equals `trunc(α, k)`.
    pub match_rate: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Rows evaluated per tape in the verifiers.
const DRAW_CHUNK: usize = 8192;

/// Hard top-k subsets (sorted index lists) for `n_draws` copula draws.
fn draw_subsets<R: Rng + ?Sized>(
    model: &CorrelationModel<f64>,
    alpha: &[f64],
    k: usize,
    t: f64,
    delta: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let d = alpha.len();
    let mut out = Vec::with_capacity(n_draws);
    let mut left = n_draws;
    while left > 0 {
        let n = left.min(DRAW_CHUNK);
        left -= n;
        let (_, u) = model.sample_many(n, rng)?;
        let tape = Tape::new();
        let a = tape.constant(Array2::from_shape_fn((n, d), |(_, j)| alpha[j]).into_dyn());
        let soft = samplers::topk_relaxed(a, tape.constant(u.into_dyn()), t, delta, k)?.array();
        let soft = soft.into_shape_with_order((n, d)).expect("[n, d]");
        for row in soft.axis_iter(Axis(0)) {
            let mut idx = samplers::top_indices(row, k)?;
            idx.sort_unstable();
            out.push(idx);
        }
    }
    Ok(out)
}

fn check_alpha(alpha: &[f64], k: usize) -> Result<()> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(invalid("alpha", "weights must be positive and finite"));
    }
    if !(1..=alpha.len()).contains(&k) {
        return Err(invalid("k", format!("must lie in 1..={}, got {k}", alpha.len())));
    }
    Ok(())
}

fn match_rate(subsets: &[Vec<usize>], alpha: &[f64], k: usize) -> Result<f64> {
    let view = ArrayView1::from(alpha);
    let mut target = samplers::top_indices(view, k)?;
    target.sort_unstable();
    let hits = subsets.iter().filter(|s| **s == target).count();
    Ok(hits as f64 / subsets.len().max(1) as f64)
}

/// Total variation distance between the empirical subset frequencies and
/// the exact weighted-sampling distribution over unordered subsets.
pub fn subset_tv_distance(subsets: &[Vec<usize>], alpha: &[f64], k: usize) -> Result<f64> {
    let exact = samplers::unordered(&samplers::exact_wrs_distribution(alpha, k)?);
    let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for s in subsets {
        *counts.entry(s.clone()).or_default() += 1.0;
    }
    let n = subsets.len().max(1) as f64;
    let mut tv = 0.0;
    for (set, p) in &exact {
        tv += (counts.get(set).copied().unwrap_or(0.0) / n - p).abs();
    }
    for (set, c) in &counts {
        if !exact.contains_key(set) {
            tv += c / n;
        }
    }
    Ok(0.5 * tv)
}

/// Independent noise (`R = I`): the relaxed top-k mask at small `t` should
/// select subsets with the weighted-sampling-without-replacement law.
/// Passes when the TV distance is at most `tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem1<R: Rng + ?Sized>(
    alpha: &[f64],
    k: usize,
    t: f64,
    delta: f64,
    n_draws: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<TheoremCheckReport> {
    check_alpha(alpha, k)?;
    let d = alpha.len();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::OracleTooLarge {
            d,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let model = CorrelationModel::scaled(Array2::ones((d, 1)), 0.0);
    let subsets = draw_subsets(&model, alpha, k, t, delta, n_draws, rng)?;
    let tv = subset_tv_distance(&subsets, alpha, k)?;
    Ok(TheoremCheckReport {
        theorem: 1,
        alpha: alpha.to_vec(),
        k,
        t,
        delta,
        tau: 0.0,
        n_draws,
        tv_distance: Some(tv),
        match_rate: match_rate(&subsets, alpha, k)?,
        tolerance,
        passed: tv <= tolerance,
    })
}

/// Fully shared noise (`L = 1`, large `τ`): the mask should collapse onto
/// the `k` largest weights. Passes when the match rate is at least
/// `min_match_rate`.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem2<R: Rng + ?Sized>(
    alpha: &[f64],
    k: usize,
    t: f64,
    delta: f64,
    tau: f64,
    n_draws: usize,
    min_match_rate: f64,
    rng: &mut R,
) -> Result<TheoremCheckReport> {
    check_alpha(alpha, k)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be non-negative, got {tau}")));
    }
    let d = alpha.len();
    let model = CorrelationModel::scaled(Array2::ones((d, 1)), tau);
    let subsets = draw_subsets(&model, alpha, k, t, delta, n_draws, rng)?;
    let rate = match_rate(&subsets, alpha, k)?;
    let tv = if d <= MAX_ENUMERATION_DIM {
        Some(subset_tv_distance(&subsets, alpha, k)?)
    } else {
        None
    };
    Ok(TheoremCheckReport {
        theorem: 2,
        alpha: alpha.to_vec(),
        k,
        t,
        delta,
        tau,
        n_draws,
        tv_distance: tv,
        match_rate: rate,
        tolerance: min_match_rate,
        passed: rate >= min_match_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u32 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against Uniform(0, 1), with the
/// Stephens small-sample correction of the asymptotic p-value.
pub fn ks_uniform(sample: ArrayView1<f64>) -> KsResult {
    let mut x: Vec<f64> = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut stat: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        stat = stat.max((i as f64 + 1.0) / n - v).max(v - i as f64 / n);
    }
    let root = n.sqrt();
    KsResult {
        statistic: stat,
        p_value: kolmogorov_survival((root + 0.12 + 0.11 / root) * stat),
    }
}

/// Pearson correlation matrix of the columns of `x`.
pub fn column_correlations(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let centered = x - &x.mean_axis(Axis(0)).expect("nonempty");
    let cov = centered.t().dot(&centered) / n;
    let sd = cov.diag().mapv(f64::sqrt);
    Array2::from_shape_fn(cov.raw_dim(), |(i, j)| cov[[i, j]] / (sd[i] * sd[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaReport {
    pub n_draws: usize,
    pub ks: Vec<KsResult>,
    pub target: Vec<Vec<f64>>,
    pub empirical: Vec<Vec<f64>>,
    pub max_correlation_error: f64,
    pub min_p_value: f64,
    pub passed: bool,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

/// Draws `n_draws` copula samples, tests each uniform marginal with KS and
/// compares the latent Pearson correlations with the target `R`. Passes when
/// every p-value is at least `p_floor` and every correlation is within
/// `corr_tolerance`.
pub fn copula_marginal_check<R: Rng + ?Sized>(
    model: &CorrelationModel<f64>,
    n_draws: usize,
    p_floor: f64,
    corr_tolerance: f64,
    rng: &mut R,
) -> Result<CopulaReport> {
    if n_draws < 2 {
        return Err(invalid("n_draws", "need at least two draws"));
    }
    let target = model.correlation()?;
    let (q, u) = model.sample_many(n_draws, rng)?;
    let ks: Vec<KsResult> = u.axis_iter(Axis(1)).map(ks_uniform).collect();
    let empirical = column_correlations(&q);
    let max_err = (&empirical - &target).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_p = ks.iter().map(|r| r.p_value).fold(1.0, f64::min);
    Ok(CopulaReport {
        n_draws,
        passed: min_p >= p_floor && max_err <= corr_tolerance,
        ks,
        target: rows(&target),
        empirical: rows(&empirical),
        max_correlation_error: max_err,
        min_p_value: min_p,
    })
}

/// Aligned two-column text rendering of any serialisable report.
pub fn text_report<S: Serialize>(title: &str, report: &S) -> Result<String> {
    let value = serde_json::to_value(report)?;
    let mut out = format!("{title}\n");
    if let serde_json::Value::Object(map) = value {
        let width = map.keys().map(String::len).max().unwrap_or(0);
        for (k, v) in map {
            let v = match v {
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            let _ = writeln!(out, "  {k:<width$}  {v}");
        }
    }
    Ok(out)
}

/// First `m` feature indices per row ordered by decreasing score.
pub fn top_m_indices(scores: &Array2<f64>, m: usize) -> Result<Vec<Vec<usize>>> {
    scores
        .axis_iter(Axis(0))
        .map(|row| samplers::top_indices(row, m))
        .collect()
}

/// Mean of the soft or hard masks over samples, `[d]`.
pub fn selection_frequency(masks: &Array2<f64>) -> Vec<f64> {
    masks.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}
