//! L1-loss training with Adam, early stopping, and grid hyperparameter
//! search.

use crate::config::RunConfig;
use crate::data::{make_windows, split, Dataset, NormMethod, Normalizer, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::seq2seq::{Model, ModelClass, ModelConfig};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_epochs: usize,
    pub patience: usize,
    pub patience_tolerance: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub regularization_factor: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            n_epochs: 30,
            patience: 10,
            patience_tolerance: 0.005,
            learning_rate: 1e-3,
            seed: 3407,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            regularization_factor: 0.0,
            grad_clip: Some(5.0),
        }
    }
}

/// Why the epoch loop ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EpochBudget,
    EarlyStopping,
    NoWindows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub skipped_events: Vec<String>,
}

/// Mean absolute error over all elements.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "l1_loss",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        });
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Gradient of [`l1_loss`] with respect to the prediction: sign / n.
pub fn l1_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "l1_grad",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        });
    }
    let n = pred.len().max(1) as f64;
    let mut out = Tensor::zeros(pred.shape());
    for ((g, a), b) in out
        .data_mut()
        .iter_mut()
        .zip(pred.data().iter())
        .zip(target.data().iter())
    {
        *g = (a - b).signum() / n;
        if a == b {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Sum of absolute parameter values (the L1 regularization term).
pub fn param_l1(model: &Model) -> f64 {
    let mut acc = 0.0;
    model.visit_params(&mut |_, p| acc += p.value.data().iter().map(|v| v.abs()).sum::<f64>());
    acc
}

/// One Adam update on a flat value/grad pair with bias correction.
/// `t` is the 1-based step count.
pub fn adam_step(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..value.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Adam state for a whole model: one moment pair per parameter tensor, in
/// manifest order.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
    t: usize,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            slots: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, lr: f64) {
        if self.slots.is_empty() {
            model.visit_params(&mut |_, p| {
                self.slots.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            });
        }
        self.t += 1;
        let t = self.t;
        let (beta1, beta2, epsilon) = (self.beta1, self.beta2, self.epsilon);
        let slots = &mut self.slots;
        let mut idx = 0;
        model.visit_params_mut(&mut |_, p| {
            let (m, v) = &mut slots[idx];
            adam_step(
                p.value.data_mut(),
                p.grad.data(),
                m,
                v,
                t,
                lr,
                beta1,
                beta2,
                epsilon,
            );
            idx += 1;
        });
    }
}

/// A trained model bundled with everything inference needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub class: ModelClass,
    pub model_cfg: ModelConfig,
    pub model: Model,
    pub feature_norm: Normalizer,
    pub target_norm: Normalizer,
}

/// Everything `train` needs besides the datasets.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub class: ModelClass,
    pub model_cfg: ModelConfig,
    pub window_spec: WindowSpec,
    pub feature_norm: (NormMethod, bool),
    pub target_norm: (NormMethod, bool),
    pub train_cfg: TrainConfig,
}

impl TrainSetup {
    pub fn from_run_config(cfg: &RunConfig, input_channels: usize, sample_rate: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            class: cfg.model_class()?,
            model_cfg: cfg.model_config(input_channels, sample_rate)?,
            window_spec: cfg.window_spec(),
            feature_norm: cfg.feature_norm()?,
            target_norm: cfg.target_norm()?,
            train_cfg: cfg.train_config(),
        })
    }
}

/// Normalizes an event set and extracts its windows.
fn windows_of(
    dataset: &Dataset,
    spec: &WindowSpec,
    feature_norm: &Normalizer,
    target_norm: &Normalizer,
    skipped: &mut Vec<String>,
) -> Vec<Window> {
    let mut out = Vec::new();
    for ev in &dataset.events {
        if ev.len() < spec.feature_win {
            skipped.push(ev.id.clone());
            continue;
        }
        let (forces, _) = feature_norm.apply(&ev.forces);
        let (kin, _) = target_norm.apply(&ev.kinematics);
        out.extend(make_windows(&forces, &kin, spec));
    }
    out
}

fn mean_window_loss(
    model: &Model,
    cfg: &ModelConfig,
    windows: &[Window],
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = Rng::new(0);
    let mut acc = 0.0;
    for w in windows {
        let (pred, _) = model.forward(&w.features, cfg, Mode::Eval, &mut rng)?;
        acc += l1_loss(&pred, &w.targets)?;
    }
    Ok(acc / windows.len() as f64)
}

const EPOCH_STREAM: u64 = 1 << 33;
const DROPOUT_STREAM: u64 = 1 << 34;

/// Trains a model: epoch loop over shuffled window batches, validation
/// after every epoch, early stopping on stalled improvement, returning the
/// state at the best validation loss.
pub fn train(
    setup: &TrainSetup,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(TrainedModel, TrainReport)> {
    let spec = &setup.window_spec;
    spec.validate()?;
    let cfg = &setup.train_cfg;

    // Normalizers are fitted on the training events only.
    let train_forces: Vec<&Tensor> = train_ds.events.iter().map(|e| &e.forces).collect();
    let train_kin: Vec<&Tensor> = train_ds.events.iter().map(|e| &e.kinematics).collect();
    let feature_norm = Normalizer::fit(setup.feature_norm.0, setup.feature_norm.1, &train_forces)?;
    let target_norm = Normalizer::fit(setup.target_norm.0, setup.target_norm.1, &train_kin)?;

    let mut skipped = Vec::new();
    let train_windows = windows_of(train_ds, spec, &feature_norm, &target_norm, &mut skipped);
    let val_windows = windows_of(val_ds, spec, &feature_norm, &target_norm, &mut skipped);
    for id in &skipped {
        eprintln!("warning: event '{id}' shorter than feature_win, skipped");
    }
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config(
            "no training or validation windows; events shorter than feature_win?".into(),
        ));
    }

    let mut init_rng = Rng::new(cfg.seed);
    let mut model = Model::new(setup.class, &setup.model_cfg, &mut init_rng)?;
    let mut adam = Adam::new(cfg);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::EpochBudget,
        skipped_events: skipped,
    };
    let mut best_model = model.clone();
    let mut stall_streak = 0usize;
    let lambda = cfg.regularization_factor;

    for epoch in 0..cfg.n_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        // Shuffling is a pure function of (seed, epoch).
        Rng::substream(cfg.seed, EPOCH_STREAM + epoch as u64).shuffle(&mut order);
        let mut dropout_rng = Rng::substream(cfg.seed, DROPOUT_STREAM + epoch as u64);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            model.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let w = &train_windows[idx];
                let (pred, cache) =
                    model.forward(&w.features, &setup.model_cfg, Mode::Train, &mut dropout_rng)?;
                batch_loss += l1_loss(&pred, &w.targets)?;
                let dpred = l1_grad(&pred, &w.targets)?.scale(scale);
                model.backward(&setup.model_cfg, &cache, &dpred)?;
            }
            batch_loss /= chunk.len() as f64;
            if lambda > 0.0 {
                batch_loss += lambda * param_l1(&model);
                model.visit_params_mut(&mut |_, p| {
                    let vals = p.value.data().to_vec();
                    for (g, v) in p.grad.data_mut().iter_mut().zip(vals.iter()) {
                        *g += lambda * v.signum();
                    }
                });
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            if let Some(clip) = cfg.grad_clip {
                clip_global_norm(&mut model, clip);
            }
            adam.step(&mut model, cfg.learning_rate);
            epoch_loss += batch_loss * chunk.len() as f64;
            seen += chunk.len();
        }
        epoch_loss /= seen.max(1) as f64;

        let val_loss = mean_window_loss(&model, &setup.model_cfg, &val_windows)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_loss,
            wall_s: started.elapsed().as_secs_f64(),
        });

        let improvement = report.best_val_loss - val_loss;
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_model = model.clone();
        }
        if epoch == 0 || improvement > cfg.patience_tolerance {
            stall_streak = 0;
        } else {
            stall_streak += 1;
            if stall_streak >= cfg.patience {
                report.stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    let trained = TrainedModel {
        class: setup.class,
        model_cfg: setup.model_cfg.clone(),
        model: best_model,
        feature_norm,
        target_norm,
    };
    Ok((trained, report))
}

fn clip_global_norm(model: &mut Model, clip: f64) {
    let mut sq = 0.0;
    model.visit_params(&mut |_, p| {
        sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
    });
    let norm = sq.sqrt();
    if norm > clip {
        let scale = clip / norm;
        model.visit_params_mut(&mut |_, p| {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// One completed grid trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub overrides: Vec<(String, serde_json::Value)>,
    pub config: RunConfig,
    pub best_val_loss: f64,
    pub wall_s: f64,
}

/// Cartesian product over the value lists (optionally budget-truncated by
/// seeded sampling), each point trained on a fresh split of `data` and
/// ranked by best validation loss.
pub fn grid_search(
    space: &[(String, Vec<serde_json::Value>)],
    base: &RunConfig,
    data: &Dataset,
    budget: Option<usize>,
) -> Result<Vec<Trial>> {
    for (key, values) in space {
        if values.is_empty() {
            return Err(Error::Config(format!("grid key '{key}' has no values")));
        }
        // Surface unknown keys before any training starts.
        base.clone().set_value(key, values[0].clone())?;
    }
    let total: usize = space.iter().map(|(_, v)| v.len()).product();
    let mut combos: Vec<Vec<usize>> = Vec::with_capacity(total);
    let mut odometer = vec![0usize; space.len()];
    loop {
        combos.push(odometer.clone());
        let mut d = space.len();
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            odometer[d] += 1;
            if odometer[d] < space[d].1.len() {
                break;
            }
            odometer[d] = 0;
            if d == 0 {
                odometer.clear();
                break;
            }
        }
        if odometer.is_empty() || space.is_empty() {
            break;
        }
    }
    if let Some(budget) = budget {
        if budget < combos.len() {
            let mut rng = Rng::substream(base.seed, 0x6e1d);
            rng.shuffle(&mut combos);
            combos.truncate(budget);
        }
    }

    let mut trials = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut cfg = base.clone();
        let mut overrides = Vec::with_capacity(space.len());
        for (d, &vi) in combo.iter().enumerate() {
            let (key, values) = &space[d];
            cfg.set_value(key, values[vi].clone())?;
            overrides.push((key.clone(), values[vi].clone()));
        }
        let started = Instant::now();
        let (train_ds, val_ds, _) = split(data, cfg.train_percent, cfg.val_percent, cfg.seed)?;
        let setup = TrainSetup::from_run_config(&cfg, data.m_f, data.sample_rate)?;
        let (_, report) = train(&setup, &train_ds, &val_ds)?;
        trials.push(Trial {
            overrides,
            config: cfg,
            best_val_loss: report.best_val_loss,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }
    trials.sort_by(|a, b| a.best_val_loss.total_cmp(&b.best_val_loss));
    Ok(trials)
}

/// Writes the grid ledger: one row per trial, columns = flattened config
/// plus best validation loss and wall time.
pub fn write_grid_ledger(trials: &[Trial], path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let mut keys: Vec<String> = Vec::new();
    if let Some(first) = trials.first() {
        if let serde_json::Value::Object(map) =
            serde_json::to_value(&first.config).expect("config serializes")
        {
            keys = map.keys().cloned().collect();
        }
    }
    writeln!(out, "{},best_val_loss,wall_s", keys.join(","))?;
    for trial in trials {
        let map = match serde_json::to_value(&trial.config).expect("config serializes") {
            serde_json::Value::Object(map) => map,
            _ => unreachable!(),
        };
        let row: Vec<String> = keys
            .iter()
            .map(|k| render_cell(map.get(k).unwrap_or(&serde_json::Value::Null)))
            .collect();
        writeln!(
            out,
            "{},{},{}",
            row.join(","),
            trial.best_val_loss,
            trial.wall_s
        )?;
    }
    Ok(())
}

fn render_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(xs) => xs
            .iter()
            .map(render_cell)
            .collect::<Vec<_>>()
            .join(";"),
        other => other.to_string(),
    }
}
