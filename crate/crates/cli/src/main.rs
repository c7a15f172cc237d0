use clap::{Args, Parser, Subcommand};
use flapinv::error::{Error, Result};
use flapinv::eval::AggMode;
use flapinv_cli::{
    resolve_config, run_bench_checkpoint, run_bench_sweep, run_eval, run_infer, run_synth,
    run_train, SplitChoice,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Inverse mapping of a flapping-wing system: train and deploy models that
/// recover wing kinematics from desired aerodynamic force time-series.
#[derive(Parser)]
#[command(name = "flapinv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared config plumbing: a config file plus inline overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Config file: JSON object or `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable `--set key=value` override using config key names
    /// (`feature_win`, `model_args_enc_hidden_size`, ...).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Bare `--key value` overrides with the same key names.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn parse_overrides(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for item in &self.set {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got '{item}'"))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let mut it = self.overrides.iter();
        while let Some(token) = it.next() {
            let key = token.strip_prefix("--").ok_or_else(|| {
                Error::Config(format!("expected '--key value' override, got '{token}'"))
            })?;
            let value = it.next().ok_or_else(|| {
                Error::Config(format!("override '--{key}' is missing a value"))
            })?;
            pairs.push((key.to_string(), value.clone()));
        }
        Ok(pairs)
    }

    fn resolve(&self) -> Result<flapinv::config::RunConfig> {
        resolve_config(self.config.as_deref(), &self.parse_overrides()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic force/kinematics dataset directory.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model on a dataset directory and write a checkpoint.
    Train {
        /// Dataset directory (manifest.json plus event CSVs).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-report JSON path (default: next to the checkpoint).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint: per-event MAE plus aggregates.
    Eval {
        /// Checkpoint to evaluate.
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Which split of the dataset to score (train, val, test, all).
        #[arg(long, default_value = "test")]
        split: String,
        /// Headline aggregate: median of the per-event MAE list.
        #[arg(long, conflicts_with = "mean")]
        median: bool,
        /// Headline aggregate: mean of the per-event MAE list.
        #[arg(long)]
        mean: bool,
        /// Second checkpoint for a paired Wilcoxon signed-rank comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Write the per-event table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the wing kinematics for one force window.
    Infer {
        /// Checkpoint to run.
        checkpoint: PathBuf,
        /// Force-window CSV (`t,F1..F{M_F}`, exactly feature_win rows).
        #[arg(long)]
        window: PathBuf,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure single-window inference latency.
    Bench {
        /// Checkpoint to time; omit when sweeping.
        checkpoint: Option<PathBuf>,
        /// Comma-separated encoder hidden sizes to sweep instead.
        #[arg(long)]
        sweep: Option<String>,
        /// Timed repetitions.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Discarded warmup iterations.
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        /// Force channel count for sweep-built models.
        #[arg(long, default_value_t = 4)]
        channels: usize,
        /// Sample rate in Hz for sweep-built models.
        #[arg(long, default_value_t = 5000.0)]
        sample_rate: f64,
        /// Sweep output CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, config } => {
            let cfg = config.resolve()?;
            let n = run_synth(&cfg, &out)?;
            println!("wrote {n} events to {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            out,
            report,
            config,
        } => {
            let cfg = config.resolve()?;
            run_train(&cfg, &data, &out, report.as_deref())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            median,
            mean,
            compare,
            out,
        } => {
            let headline = if mean { AggMode::Mean } else { AggMode::Median };
            let _ = median;
            run_eval(
                &checkpoint,
                &data,
                SplitChoice::parse(&split)?,
                headline,
                compare.as_deref(),
                out.as_deref(),
            )?;
            Ok(())
        }
        Command::Infer {
            checkpoint,
            window,
            out,
        } => {
            run_infer(&checkpoint, &window, out.as_deref())?;
            Ok(())
        }
        Command::Bench {
            checkpoint,
            sweep,
            reps,
            warmup,
            channels,
            sample_rate,
            out,
            config,
        } => match (checkpoint, sweep) {
            (Some(ckpt), None) => run_bench_checkpoint(&ckpt, reps, warmup),
            (None, Some(sizes)) => {
                let cfg = config.resolve()?;
                let hidden: Vec<usize> = sizes
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<usize>().map_err(|_| {
                            Error::Config(format!("invalid sweep size '{s}'"))
                        })
                    })
                    .collect::<Result<_>>()?;
                run_bench_sweep(
                    &cfg,
                    channels,
                    sample_rate,
                    &hidden,
                    reps,
                    warmup,
                    out.as_deref(),
                )
            }
            (Some(_), Some(_)) => Err(Error::Config(
                "pass either a checkpoint or --sweep, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "bench needs a checkpoint or a --sweep list".into(),
            )),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
