//! Run configuration: one flat key space covering split fractions,
//! windowing, training, model architecture, and the synthetic generator.
//!
//! Keys use the spellings printed by the training framework's hyperparameter
//! ledger (`train_percent`, `model_args_enc_hidden_size`, ...), so a config
//! file is a plain dictionary of those names. Files may be JSON objects or
//! `key = value` lines; unknown keys are rejected, omitted keys keep their
//! defaults.

use crate::asl::{AslConfig, SkipMode};
use crate::data::{NormMethod, WindowSpec};
use crate::error::{Error, Result};
use crate::seq2seq::{ModelClass, ModelConfig};
use crate::synth::{QsParams, SynthConfig, SynthRanges};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Split and windowing.
    pub train_percent: f64,
    pub val_percent: f64,
    pub feature_win: usize,
    pub target_win: usize,
    pub intersect: usize,
    pub stride: usize,

    // Training.
    pub batch_size: usize,
    pub model_class_name: String,
    pub optimizer_name: String,
    pub criterion_name: String,
    pub patience: usize,
    pub patience_tolerance: f64,
    pub n_epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub regularization_factor: f64,

    // Normalization.
    pub features_norm_method: String,
    pub targets_norm_method: String,
    pub features_global_normalizer: bool,
    pub targets_global_normalizer: bool,

    // Model architecture.
    pub model_args_enc_embedding_size: usize,
    pub model_args_enc_hidden_size: usize,
    pub model_args_enc_num_layers: usize,
    pub model_args_enc_bidirectional: bool,
    pub model_args_dec_embedding_size: usize,
    pub model_args_dec_hidden_size: usize,
    pub model_args_dec_output_size: usize,
    pub model_args_attn_heads: usize,
    pub model_args_use_asl: bool,
    pub model_args_concat_asl: bool,
    pub model_args_complexify: bool,
    pub model_args_gate: bool,
    pub model_args_multidim_fft: bool,
    pub model_args_dropout: f64,
    pub model_args_freq_threshold: f64,
    pub model_args_per_freq_layer: bool,
    pub model_args_cross_spectrum_density: bool,
    pub model_args_use_freqs: bool,
    pub model_args_angular_phase: bool,
    /// Hidden width of the spectral layer; defaults to the encoder hidden
    /// size when absent.
    pub model_args_asl_hidden_size: Option<usize>,
    /// Explicit skip mode (`add`, `concat`, `off`); when absent it follows
    /// `model_args_concat_asl`.
    pub model_args_skip_mode: Option<String>,
    /// Optional `[batch, feature_win, input_dim]` shape hint, cross-checked
    /// against the dataset when present.
    pub model_args_input_dim: Option<Vec<usize>>,

    // Synthetic generator.
    pub synth_n_events: usize,
    pub synth_sample_rate: f64,
    pub synth_noise_std: f64,
    pub synth_vibration_amp: f64,
    pub synth_vibration_freq_min: f64,
    pub synth_vibration_freq_max: f64,
    pub synth_f_min: f64,
    pub synth_f_max: f64,
    pub synth_amp_min: f64,
    pub synth_amp_max: f64,
    pub synth_k_min: f64,
    pub synth_k_max: f64,
    pub synth_duration_min: f64,
    pub synth_duration_max: f64,
    pub synth_pitch_lag: f64,
    pub synth_pitch_amp: f64,
    pub synth_elev_amp: f64,
    pub qs_density: f64,
    pub qs_wing_area: f64,
    pub qs_moment_arm: f64,
    pub qs_lift_coeff: f64,
    pub qs_drag_coeff: f64,
    pub qs_sensor_offset: f64,

    // Paths (flags may override these).
    pub data_dir: Option<String>,
    pub out_path: Option<String>,
    pub report_path: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let ranges = SynthRanges::default();
        let qs = QsParams::default();
        Self {
            train_percent: 0.75,
            val_percent: 0.10,
            feature_win: 512,
            target_win: 1,
            intersect: 1,
            stride: 1,
            batch_size: 512,
            model_class_name: "Seq2Seq".into(),
            optimizer_name: "Adam".into(),
            criterion_name: "L1Loss".into(),
            patience: 10,
            patience_tolerance: 0.005,
            n_epochs: 30,
            seed: 3407,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            regularization_factor: 0.0,
            features_norm_method: "zscore".into(),
            targets_norm_method: "identity".into(),
            features_global_normalizer: true,
            targets_global_normalizer: true,
            model_args_enc_embedding_size: 10,
            model_args_enc_hidden_size: 110,
            model_args_enc_num_layers: 1,
            model_args_enc_bidirectional: false,
            model_args_dec_embedding_size: 10,
            model_args_dec_hidden_size: 110,
            model_args_dec_output_size: 3,
            model_args_attn_heads: 1,
            model_args_use_asl: true,
            model_args_concat_asl: false,
            model_args_complexify: false,
            model_args_gate: true,
            model_args_multidim_fft: false,
            model_args_dropout: 0.1,
            model_args_freq_threshold: 210.0,
            model_args_per_freq_layer: true,
            model_args_cross_spectrum_density: false,
            model_args_use_freqs: false,
            model_args_angular_phase: false,
            model_args_asl_hidden_size: None,
            model_args_skip_mode: None,
            model_args_input_dim: None,
            synth_n_events: synth.n_events,
            synth_sample_rate: synth.sample_rate,
            synth_noise_std: synth.noise_std,
            synth_vibration_amp: synth.vibration_amp,
            synth_vibration_freq_min: synth.vibration_freq.0,
            synth_vibration_freq_max: synth.vibration_freq.1,
            synth_f_min: ranges.frequency.0,
            synth_f_max: ranges.frequency.1,
            synth_amp_min: ranges.amplitude.0,
            synth_amp_max: ranges.amplitude.1,
            synth_k_min: ranges.shape_k.0,
            synth_k_max: ranges.shape_k.1,
            synth_duration_min: ranges.duration.0,
            synth_duration_max: ranges.duration.1,
            synth_pitch_lag: synth.pitch_lag,
            synth_pitch_amp: synth.pitch_amp,
            synth_elev_amp: synth.elev_amp,
            qs_density: qs.density,
            qs_wing_area: qs.wing_area,
            qs_moment_arm: qs.moment_arm,
            qs_lift_coeff: qs.lift_coeff,
            qs_drag_coeff: qs.drag_coeff,
            qs_sensor_offset: qs.sensor_offset,
            data_dir: None,
            out_path: None,
            report_path: None,
        }
    }
}

impl RunConfig {
    /// Sets one key from its textual value. The value may be any JSON
    /// literal; bare words are treated as strings. Unknown keys and type
    /// mismatches are config errors naming the key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value: serde_json::Value = match serde_json::from_str(raw.trim()) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(raw.trim().trim_matches('"').to_string()),
        };
        self.set_value(key, value)
    }

    /// Same as [`Self::set`] with an already-typed value.
    pub fn set_value(&mut self, key: &str, value: serde_json::Value) -> Result<()> {
        let mut object = match serde_json::to_value(&*self).expect("config serializes") {
            serde_json::Value::Object(map) => map,
            _ => unreachable!("config is a struct"),
        };
        if !object.contains_key(key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        object.insert(key.to_string(), value);
        *self = serde_json::from_value(serde_json::Value::Object(object))
            .map_err(|e| Error::Config(format!("invalid value for '{key}': {e}")))?;
        Ok(())
    }

    /// Loads a config file: a JSON object, or `key = value` lines with `#`
    /// comments.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies config text (JSON object or key=value lines) on top of self.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let object: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(trimmed)
                    .map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?;
            for (key, value) in object {
                self.set_value(&key, value)?;
            }
            return Ok(());
        }
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.optimizer_name != "Adam" {
            return Err(Error::Config(format!(
                "optimizer_name '{}' is not supported (only Adam)",
                self.optimizer_name
            )));
        }
        if self.criterion_name != "L1Loss" {
            return Err(Error::Config(format!(
                "criterion_name '{}' is not supported (only L1Loss)",
                self.criterion_name
            )));
        }
        if self.train_percent <= 0.0 || self.val_percent <= 0.0 {
            return Err(Error::Config(
                "train_percent and val_percent must be positive".into(),
            ));
        }
        if self.train_percent + self.val_percent >= 1.0 {
            return Err(Error::Config(
                "train_percent + val_percent must leave room for a test split".into(),
            ));
        }
        ModelClass::parse(&self.model_class_name)?;
        NormMethod::parse(&self.features_norm_method)?;
        NormMethod::parse(&self.targets_norm_method)?;
        self.window_spec().validate()?;
        Ok(())
    }

    pub fn model_class(&self) -> Result<ModelClass> {
        ModelClass::parse(&self.model_class_name)
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            feature_win: self.feature_win,
            target_win: self.target_win,
            intersect: self.intersect,
            stride: self.stride,
        }
    }

    fn skip_mode(&self) -> Result<SkipMode> {
        match self.model_args_skip_mode.as_deref() {
            None => Ok(if self.model_args_concat_asl {
                SkipMode::Concat
            } else {
                SkipMode::Add
            }),
            Some("add") => Ok(SkipMode::Add),
            Some("concat") => Ok(SkipMode::Concat),
            Some("off") => Ok(SkipMode::Off),
            Some(other) => Err(Error::Config(format!(
                "model_args_skip_mode '{other}' is not one of add, concat, off"
            ))),
        }
    }

    /// Builds the model configuration for a dataset with `input_channels`
    /// force channels sampled at `sample_rate`.
    pub fn model_config(&self, input_channels: usize, sample_rate: f64) -> Result<ModelConfig> {
        if let Some(dim) = &self.model_args_input_dim {
            if dim.len() != 3 || dim[1] != self.feature_win || dim[2] != input_channels {
                return Err(Error::Config(format!(
                    "model_args_input_dim {dim:?} does not match [_, feature_win={}, channels={input_channels}]",
                    self.feature_win
                )));
            }
        }
        let asl = AslConfig {
            hidden_size: self
                .model_args_asl_hidden_size
                .unwrap_or(self.model_args_enc_hidden_size),
            dropout: self.model_args_dropout,
            freq_threshold: self.model_args_freq_threshold,
            sample_rate,
            gate: self.model_args_gate,
            complexify: self.model_args_complexify,
            per_freq_layer: self.model_args_per_freq_layer,
            cross_spectrum_density: self.model_args_cross_spectrum_density,
            use_freqs: self.model_args_use_freqs,
            multidim_fft: self.model_args_multidim_fft,
            angular_phase: self.model_args_angular_phase,
            skip_mode: self.skip_mode()?,
        };
        let cfg = ModelConfig {
            input_channels,
            feature_win: self.feature_win,
            target_win: self.target_win,
            enc_embedding_size: self.model_args_enc_embedding_size,
            enc_hidden_size: self.model_args_enc_hidden_size,
            enc_num_layers: self.model_args_enc_num_layers,
            enc_bidirectional: self.model_args_enc_bidirectional,
            dec_embedding_size: self.model_args_dec_embedding_size,
            dec_hidden_size: self.model_args_dec_hidden_size,
            dec_output_size: self.model_args_dec_output_size,
            attn_heads: self.model_args_attn_heads,
            use_asl: self.model_args_use_asl,
            asl,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            n_epochs: self.n_epochs,
            patience: self.patience,
            patience_tolerance: self.patience_tolerance,
            learning_rate: self.learning_rate,
            seed: self.seed,
            regularization_factor: self.regularization_factor,
            grad_clip: if self.grad_clip > 0.0 {
                Some(self.grad_clip)
            } else {
                None
            },
            ..TrainConfig::default()
        }
    }

    pub fn feature_norm(&self) -> Result<(NormMethod, bool)> {
        Ok((
            NormMethod::parse(&self.features_norm_method)?,
            self.features_global_normalizer,
        ))
    }

    pub fn target_norm(&self) -> Result<(NormMethod, bool)> {
        Ok((
            NormMethod::parse(&self.targets_norm_method)?,
            self.targets_global_normalizer,
        ))
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_events: self.synth_n_events,
            seed: self.seed,
            sample_rate: self.synth_sample_rate,
            ranges: SynthRanges {
                frequency: (self.synth_f_min, self.synth_f_max),
                amplitude: (self.synth_amp_min, self.synth_amp_max),
                shape_k: (self.synth_k_min, self.synth_k_max),
                duration: (self.synth_duration_min, self.synth_duration_max),
            },
            pitch_lag: self.synth_pitch_lag,
            pitch_amp: self.synth_pitch_amp,
            elev_amp: self.synth_elev_amp,
            noise_std: self.synth_noise_std,
            vibration_amp: self.synth_vibration_amp,
            vibration_freq: (self.synth_vibration_freq_min, self.synth_vibration_freq_max),
        }
    }

    pub fn qs_params(&self) -> QsParams {
        QsParams {
            density: self.qs_density,
            wing_area: self.qs_wing_area,
            moment_arm: self.qs_moment_arm,
            lift_coeff: self.qs_lift_coeff,
            drag_coeff: self.qs_drag_coeff,
            sensor_offset: self.qs_sensor_offset,
        }
    }
}
