//! Per-event MAE evaluation with mean/median aggregation, the Wilcoxon
//! signed-rank comparison, and the inference-latency benchmark.

use crate::data::{make_windows, Dataset, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::seq2seq::{count_params, Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::TrainedModel;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

/// Mean absolute error in target units: mean over time of the mean over
/// the angle channels.
pub fn event_mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape {
            op: "event_mae",
            detail: format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        });
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// How per-event scores are aggregated across a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Mean,
    Median,
}

/// Mean, or median with even-count midpoint averaging.
pub fn aggregate(values: &[f64], mode: AggMode) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Numeric("cannot aggregate an empty list".into()));
    }
    Ok(match mode {
        AggMode::Mean => values.iter().sum::<f64>() / values.len() as f64,
        AggMode::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
    })
}

/// Per-event evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventScore {
    pub event_id: String,
    pub n_windows: usize,
    pub mae: f64,
    pub per_angle: Vec<f64>,
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<EventScore>,
    pub mean: f64,
    pub median: f64,
}

impl EvalReport {
    pub fn maes(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.mae).collect()
    }
}

/// Slides windows over every event, predicts, inverse-normalizes the
/// predictions, and scores per-event MAE in target units.
pub fn evaluate(trained: &TrainedModel, dataset: &Dataset, spec: &WindowSpec) -> Result<EvalReport> {
    spec.validate()?;
    let m_k = trained.model_cfg.dec_output_size;
    let mut scores = Vec::with_capacity(dataset.len());
    for ev in &dataset.events {
        if ev.len() < spec.feature_win {
            continue;
        }
        let (forces, _) = trained.feature_norm.apply(&ev.forces);
        let (_, target_stats) = trained.target_norm.apply(&ev.kinematics);
        // Targets stay in raw units; predictions are inverse-normalized.
        let windows = make_windows(&forces, &ev.kinematics, spec);
        if windows.is_empty() {
            continue;
        }
        let mut abs_sum = vec![0.0; m_k];
        let mut count = 0usize;
        for w in &windows {
            let pred_norm = trained.model.predict(&w.features, &trained.model_cfg)?;
            let pred = trained.target_norm.invert_with(&pred_norm, &target_stats);
            for step in 0..pred.dim(0) {
                for c in 0..m_k {
                    abs_sum[c] += (pred.row(step)[c] - w.targets.row(step)[c]).abs();
                }
                count += 1;
            }
        }
        let per_angle: Vec<f64> = abs_sum.iter().map(|s| s / count as f64).collect();
        let mae = per_angle.iter().sum::<f64>() / m_k as f64;
        scores.push(EventScore {
            event_id: ev.id.clone(),
            n_windows: windows.len(),
            mae,
            per_angle,
        });
    }
    if scores.is_empty() {
        return Err(Error::Numeric(
            "no event long enough to evaluate".into(),
        ));
    }
    let maes: Vec<f64> = scores.iter().map(|s| s.mae).collect();
    Ok(EvalReport {
        mean: aggregate(&maes, AggMode::Mean)?,
        median: aggregate(&maes, AggMode::Median)?,
        scores,
    })
}

/// Writes the per-event table as CSV.
pub fn write_eval_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let m_k = report.scores.first().map_or(0, |s| s.per_angle.len());
    let angle_cols: Vec<String> = (0..m_k).map(|i| format!("mae_angle{i}")).collect();
    writeln!(out, "event_id,n_windows,mae,{}", angle_cols.join(","))?;
    for s in &report.scores {
        let angles: Vec<String> = s.per_angle.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            s.event_id,
            s.n_windows,
            s.mae,
            angles.join(",")
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

/// Outcome of a paired Wilcoxon signed-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences (W+).
    pub statistic: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// P(W+ at least as large under the null); alternative a > b.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    /// All differences were zero.
    pub degenerate: bool,
    /// Whether the exact null distribution was used.
    pub exact: bool,
}

/// Exact enumeration for n <= 12, normal approximation with tie correction
/// above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_mode(a, b, None)
}

/// `force_exact` overrides the automatic exact/approximate choice.
pub fn wilcoxon_signed_rank_mode(
    a: &[f64],
    b: &[f64],
    force_exact: Option<bool>,
) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "wilcoxon_signed_rank",
            detail: format!("paired samples differ in length: {} vs {}", a.len(), b.len()),
        });
    }
    // Zero differences are dropped (classic handling).
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            n_used: 0,
            p_one_sided: 1.0,
            p_two_sided: 1.0,
            degenerate: true,
            exact: true,
        });
    }

    // Midranks of |d|.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0.0; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = midrank;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }

    let w_plus: f64 = diffs
        .iter()
        .zip(ranks.iter())
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let use_exact = force_exact.unwrap_or(n <= 12);
    let (p_greater, p_less, exact) = if use_exact {
        let (pg, pl) = exact_tail_probs(&ranks, w_plus);
        (pg, pl, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        if sigma == 0.0 {
            (1.0, 1.0, false)
        } else {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let pg = 1.0 - normal.cdf((w_plus - mean - 0.5) / sigma);
            let pl = normal.cdf((w_plus - mean + 0.5) / sigma);
            (pg, pl, false)
        }
    };
    let p_two = (2.0 * p_greater.min(p_less)).min(1.0);
    Ok(WilcoxonResult {
        statistic: w_plus,
        n_used: n,
        p_one_sided: p_greater,
        p_two_sided: p_two,
        degenerate: false,
        exact,
    })
}

/// Exact tail probabilities of W+ over all 2^n sign assignments, computed
/// by dynamic programming over doubled (integer) ranks.
fn exact_tail_probs(ranks: &[f64], w_plus: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max_sum).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total: f64 = counts.iter().sum();
    let w2 = (2.0 * w_plus).round() as usize;
    let ge: f64 = counts[w2..].iter().sum();
    let le: f64 = counts[..=w2.min(max_sum)].iter().sum();
    (ge / total, le / total)
}

// ---------------------------------------------------------------------------
// Latency benchmark
// ---------------------------------------------------------------------------

/// Robust latency summary over repeated single-window forward passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    /// Median absolute deviation from the median.
    pub mad_ms: f64,
    pub reps: usize,
}

/// Times eval-mode single-window forward passes after `warmup` discarded
/// iterations.
pub fn bench_latency(
    model: &Model,
    cfg: &ModelConfig,
    reps: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if reps == 0 {
        return Err(Error::Config("bench reps must be at least 1".into()));
    }
    let mut rng = Rng::new(0xbe9c);
    let window = Tensor::rand_uniform(&[cfg.feature_win, cfg.input_channels], 1.0, &mut rng);
    let mut eval_rng = Rng::new(0);
    for _ in 0..warmup {
        model.forward(&window, cfg, Mode::Eval, &mut eval_rng)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = model.forward(&window, cfg, Mode::Eval, &mut eval_rng)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out.0);
    }
    let median = aggregate(&samples, AggMode::Median)?;
    let deviations: Vec<f64> = samples.iter().map(|s| (s - median).abs()).collect();
    Ok(LatencyStats {
        median_ms: median,
        mad_ms: aggregate(&deviations, AggMode::Median)?,
        reps,
    })
}

/// One row of the parameter-count/latency sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub enc_hidden_size: usize,
    pub param_count: usize,
    pub latency: LatencyStats,
}

/// Widens the encoder hidden size over `hidden_sizes` and measures
/// single-window inference latency per configuration.
pub fn param_sweep(
    base: &ModelConfig,
    class: crate::seq2seq::ModelClass,
    hidden_sizes: &[usize],
    reps: usize,
    warmup: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(hidden_sizes.len());
    for &hidden in hidden_sizes {
        let cfg = ModelConfig {
            enc_hidden_size: hidden,
            ..base.clone()
        };
        let mut rng = Rng::new(3407);
        let model = Model::new(class, &cfg, &mut rng)?;
        let latency = bench_latency(&model, &cfg, reps, warmup)?;
        rows.push(SweepRow {
            enc_hidden_size: hidden,
            param_count: count_params(class, &cfg)?,
            latency,
        });
    }
    Ok(rows)
}

/// Writes the sweep table as CSV.
pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "enc_hidden_size,param_count,median_ms,mad_ms,reps")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.enc_hidden_size,
            row.param_count,
            row.latency.median_ms,
            row.latency.mad_ms,
            row.latency.reps
        )?;
    }
    Ok(())
}
