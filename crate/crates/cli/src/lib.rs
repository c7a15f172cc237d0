//! Library behind the `flapinv` binary. Every command is an ordinary
//! function over the core crate, so anything the CLI produces can be
//! reproduced with library calls alone.

use flapinv::checkpoint;
use flapinv::config::RunConfig;
use flapinv::data::{load_dataset, save_dataset, split, Dataset};
use flapinv::error::{Error, Result};
use flapinv::eval::{
    aggregate, bench_latency, evaluate, param_sweep, wilcoxon_signed_rank, write_eval_report,
    write_sweep, AggMode, EvalReport,
};
use flapinv::seq2seq::count_params;
use flapinv::synth::generate_dataset;
use flapinv::tensor::Tensor;
use flapinv::train::{train, TrainSetup, TrainedModel};
use std::path::{Path, PathBuf};

/// Which split of a dataset a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

impl SplitChoice {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(SplitChoice::Train),
            "val" => Ok(SplitChoice::Val),
            "test" => Ok(SplitChoice::Test),
            "all" => Ok(SplitChoice::All),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train, val, test, or all)"
            ))),
        }
    }
}

/// Builds a [`RunConfig`] from an optional config file plus `--key value`
/// override pairs.
pub fn resolve_config(config_file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = match config_file {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `synth`: generates a synthetic dataset directory.
pub fn run_synth(cfg: &RunConfig, out_dir: &Path) -> Result<usize> {
    let dataset = generate_dataset(&cfg.synth_config(), &cfg.qs_params())?;
    save_dataset(&dataset, out_dir)?;
    Ok(dataset.len())
}

/// `train`: split, normalize, window, train, and write checkpoint + report.
pub fn run_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out_path: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let dataset = load_dataset(data_dir)?;
    let (train_ds, val_ds, _) = split(&dataset, cfg.train_percent, cfg.val_percent, cfg.seed)?;
    let setup = TrainSetup::from_run_config(cfg, dataset.m_f, dataset.sample_rate)?;
    let (trained, report) = train(&setup, &train_ds, &val_ds)?;
    checkpoint::save(out_path, &trained, cfg)?;
    let report_path = report_path
        .map(PathBuf::from)
        .unwrap_or_else(|| out_path.with_extension("report.json"));
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train {:.6}  val {:.6}  ({:.2}s)",
            e.epoch, e.train_loss, e.val_loss, e.wall_s
        );
    }
    println!(
        "best epoch {} (val {:.6}); checkpoint {} report {}",
        report.best_epoch,
        report.best_val_loss,
        out_path.display(),
        report_path.display()
    );
    Ok(())
}

fn select_split(dataset: Dataset, run: &RunConfig, choice: SplitChoice) -> Result<Dataset> {
    if choice == SplitChoice::All {
        return Ok(dataset);
    }
    let (train_ds, val_ds, test_ds) =
        split(&dataset, run.train_percent, run.val_percent, run.seed)?;
    Ok(match choice {
        SplitChoice::Train => train_ds,
        SplitChoice::Val => val_ds,
        SplitChoice::Test => test_ds,
        SplitChoice::All => unreachable!(),
    })
}

fn check_channels(trained: &TrainedModel, dataset: &Dataset, ckpt: &Path) -> Result<()> {
    if dataset.m_f != trained.model_cfg.input_channels {
        return Err(Error::Data {
            path: ckpt.display().to_string(),
            line: None,
            msg: format!(
                "checkpoint expects {} force channels but the dataset has {}",
                trained.model_cfg.input_channels, dataset.m_f
            ),
        });
    }
    Ok(())
}

/// `eval`: per-event MAE table with aggregates and an optional paired
/// Wilcoxon comparison against a second checkpoint.
pub fn run_eval(
    ckpt_path: &Path,
    data_dir: &Path,
    split_choice: SplitChoice,
    headline: AggMode,
    compare: Option<&Path>,
    out_path: Option<&Path>,
) -> Result<EvalReport> {
    let (trained, run) = checkpoint::load(ckpt_path)?;
    let dataset = load_dataset(data_dir)?;
    check_channels(&trained, &dataset, ckpt_path)?;
    let subset = select_split(dataset, &run, split_choice)?;
    let spec = run.window_spec();
    let report = evaluate(&trained, &subset, &spec)?;

    println!("event_id,n_windows,mae");
    for s in &report.scores {
        println!("{},{},{:.6}", s.event_id, s.n_windows, s.mae);
    }
    let headline_value = match headline {
        AggMode::Mean => report.mean,
        AggMode::Median => report.median,
    };
    println!(
        "aggregate: mean {:.6} rad, median {:.6} rad (headline {} = {:.6})",
        report.mean,
        report.median,
        match headline {
            AggMode::Mean => "mean",
            AggMode::Median => "median",
        },
        headline_value
    );

    if let Some(other_path) = compare {
        let (other, other_run) = checkpoint::load(other_path)?;
        let other_subset = {
            let dataset = load_dataset(data_dir)?;
            check_channels(&other, &dataset, other_path)?;
            select_split(dataset, &other_run, split_choice)?
        };
        let other_report = evaluate(&other, &other_subset, &other_run.window_spec())?;
        // The Wilcoxon pairing is by event; both checkpoints must have been
        // scored on the same events in the same order.
        let ids: Vec<&str> = report.scores.iter().map(|s| s.event_id.as_str()).collect();
        let other_ids: Vec<&str> = other_report
            .scores
            .iter()
            .map(|s| s.event_id.as_str())
            .collect();
        if ids != other_ids {
            return Err(Error::Config(
                "compared checkpoints evaluate different event sets; use identical split settings"
                    .into(),
            ));
        }
        let a: Vec<f64> = report.maes();
        let b: Vec<f64> = other_report.maes();
        let w = wilcoxon_signed_rank(&a, &b)?;
        println!(
            "wilcoxon vs {}: W+ {:.1} over n={} pairs, one-sided p {:.6}, two-sided p {:.6}{}{}",
            other_path.display(),
            w.statistic,
            w.n_used,
            w.p_one_sided,
            w.p_two_sided,
            if w.exact { " (exact)" } else { " (normal approx.)" },
            if w.degenerate { " [degenerate]" } else { "" }
        );
    }
    if let Some(out) = out_path {
        write_eval_report(&report, out)?;
        println!("wrote {}", out.display());
    }
    // Sanity: the printed aggregates recompute from the emitted table.
    debug_assert!((aggregate(&report.maes(), AggMode::Mean)? - report.mean).abs() < 1e-12);
    Ok(report)
}

/// Reads a force-window CSV (`t,F1..F{M_F}` header) of exactly
/// `feature_win` rows.
pub fn load_force_window(path: &Path, feature_win: usize, m_f: usize) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.display().to_string(),
        line: None,
        msg: format!("cannot read: {e}"),
    })?;
    let mut expected_header = String::from("t");
    for i in 1..=m_f {
        expected_header.push_str(&format!(",F{i}"));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if line != expected_header {
                return Err(Error::Data {
                    path: path.display().to_string(),
                    line: Some(1),
                    msg: format!("bad header: expected '{expected_header}'"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m_f + 1 {
            return Err(Error::Data {
                path: path.display().to_string(),
                line: Some(i + 1),
                msg: format!("expected {} columns, got {}", m_f + 1, fields.len()),
            });
        }
        for field in &fields[1..] {
            let v: f64 = field.trim().parse().map_err(|_| Error::Data {
                path: path.display().to_string(),
                line: Some(i + 1),
                msg: format!("invalid number '{field}'"),
            })?;
            rows.push(v);
        }
        count += 1;
    }
    if count != feature_win {
        return Err(Error::Data {
            path: path.display().to_string(),
            line: None,
            msg: format!("window has {count} samples but the model expects feature_win = {feature_win}"),
        });
    }
    Tensor::new(vec![feature_win, m_f], rows)
}

/// `infer`: predicts the kinematics for one force window, in radians.
pub fn run_infer(ckpt_path: &Path, window_path: &Path, out_path: Option<&Path>) -> Result<Tensor> {
    let (trained, _) = checkpoint::load(ckpt_path)?;
    let window = load_force_window(
        window_path,
        trained.model_cfg.feature_win,
        trained.model_cfg.input_channels,
    )?;
    let angles = predict_window(&trained, &window)?;
    let mut text = String::from("phi,theta,psi\n");
    for step in 0..angles.dim(0) {
        let row = angles.row(step);
        text.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
    }
    match out_path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(angles)
}

/// Library form of one-window inference: normalize, forward, de-normalize.
pub fn predict_window(trained: &TrainedModel, window: &Tensor) -> Result<Tensor> {
    let (normalized, _) = trained.feature_norm.apply(window);
    let pred = trained.model.predict(&normalized, &trained.model_cfg)?;
    if trained.target_norm.global || trained.target_norm.method == flapinv::data::NormMethod::Identity
    {
        let stats = trained
            .target_norm
            .stats
            .clone()
            .unwrap_or_else(|| flapinv::data::ChannelStats::identity(pred.dim(1)));
        Ok(trained.target_norm.invert_with(&pred, &stats))
    } else {
        Err(Error::Config(
            "per-event target normalization cannot be inverted for single-window inference".into(),
        ))
    }
}

/// `bench` on a checkpoint: latency of the deployed model.
pub fn run_bench_checkpoint(ckpt_path: &Path, reps: usize, warmup: usize) -> Result<()> {
    let (trained, _) = checkpoint::load(ckpt_path)?;
    let stats = bench_latency(&trained.model, &trained.model_cfg, reps, warmup)?;
    println!(
        "params {}  median {:.4} ms  mad {:.4} ms  ({} reps, {} warmup)",
        trained.model.param_count(),
        stats.median_ms,
        stats.mad_ms,
        reps,
        warmup
    );
    Ok(())
}

/// `bench --sweep`: latency vs parameter count over encoder widths.
pub fn run_bench_sweep(
    cfg: &RunConfig,
    channels: usize,
    sample_rate: f64,
    hidden_sizes: &[usize],
    reps: usize,
    warmup: usize,
    out_path: Option<&Path>,
) -> Result<()> {
    let base = cfg.model_config(channels, sample_rate)?;
    let class = cfg.model_class()?;
    let rows = param_sweep(&base, class, hidden_sizes, reps, warmup)?;
    println!("enc_hidden_size,param_count,median_ms,mad_ms");
    for row in &rows {
        println!(
            "{},{},{:.4},{:.4}",
            row.enc_hidden_size, row.param_count, row.latency.median_ms, row.latency.mad_ms
        );
    }
    let base_check = count_params(class, &base)?;
    debug_assert!(base_check > 0);
    if let Some(out) = out_path {
        write_sweep(&rows, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
