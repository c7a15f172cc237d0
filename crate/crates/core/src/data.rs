//! Event ingestion, normalization, windowing, deterministic splitting, and
//! force/kinematics onset alignment.
//!
//! A dataset on disk is a directory with a `manifest.json` listing the event
//! files, the sample rate, and the channel names. Each event file is UTF-8
//! CSV with header `t,F1..F{M_F},phi,theta,psi`, one row per sample, time in
//! seconds, strictly increasing with uniform step `1/sample_rate`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// One synchronized force + kinematics recording.
#[derive(Debug, Clone)]
pub struct Event {
    pub id: String,
    pub sample_rate: f64,
    /// `[T x M_F]` force (or force+torque) channels.
    pub forces: Tensor,
    /// `[T x 3]` stroke, elevation, pitch angles in radians.
    pub kinematics: Tensor,
}

impl Event {
    pub fn len(&self) -> usize {
        self.forces.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.forces.dim(0) != self.kinematics.dim(0) {
            return Err(Error::Data {
                path: self.id.clone(),
                line: None,
                msg: format!(
                    "forces ({}) and kinematics ({}) disagree on sample count",
                    self.forces.dim(0),
                    self.kinematics.dim(0)
                ),
            });
        }
        if !self.forces.all_finite() || !self.kinematics.all_finite() {
            return Err(Error::Data {
                path: self.id.clone(),
                line: None,
                msg: "non-finite sample".into(),
            });
        }
        Ok(())
    }
}

/// An ordered collection of events sharing channel counts.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub events: Vec<Event>,
    pub m_f: usize,
    pub m_k: usize,
    pub sample_rate: f64,
}

impl Dataset {
    pub fn from_events(events: Vec<Event>) -> Result<Self> {
        let first = events.first().ok_or_else(|| Error::Data {
            path: "<dataset>".into(),
            line: None,
            msg: "no events".into(),
        })?;
        let (m_f, m_k) = (first.forces.dim(1), first.kinematics.dim(1));
        let sample_rate = first.sample_rate;
        for ev in &events {
            ev.validate()?;
            if ev.forces.dim(1) != m_f || ev.kinematics.dim(1) != m_k {
                return Err(Error::Data {
                    path: ev.id.clone(),
                    line: None,
                    msg: format!(
                        "inconsistent channel counts: [{} x {}] vs expected [{} x {}]",
                        ev.forces.dim(1),
                        ev.kinematics.dim(1),
                        m_f,
                        m_k
                    ),
                });
            }
            if ev.sample_rate != sample_rate {
                return Err(Error::Data {
                    path: ev.id.clone(),
                    line: None,
                    msg: format!(
                        "inconsistent sample rate: {} vs expected {sample_rate}",
                        ev.sample_rate
                    ),
                });
            }
        }
        Ok(Self {
            events,
            m_f,
            m_k,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Normalization scheme for one group of channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Zscore,
    Minmax,
    Identity,
}

impl NormMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zscore" => Ok(NormMethod::Zscore),
            "minmax" => Ok(NormMethod::Minmax),
            "identity" | "none" => Ok(NormMethod::Identity),
            other => Err(Error::Config(format!(
                "unknown normalization method '{other}' (expected zscore, minmax, or identity)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormMethod::Zscore => "zscore",
            NormMethod::Minmax => "minmax",
            NormMethod::Identity => "identity",
        }
    }
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine per-channel statistics: `x' = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            offset: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }
}

const SPREAD_FLOOR: f64 = 1e-8;

fn fit_stats(method: NormMethod, columns: &[Vec<f64>]) -> ChannelStats {
    let channels = columns.len();
    match method {
        NormMethod::Identity => ChannelStats::identity(channels),
        NormMethod::Zscore => {
            let mut offset = Vec::with_capacity(channels);
            let mut scale = Vec::with_capacity(channels);
            for col in columns {
                let n = col.len().max(1) as f64;
                let mean: f64 = col.iter().sum::<f64>() / n;
                let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                offset.push(mean);
                scale.push(var.sqrt().max(SPREAD_FLOOR));
            }
            ChannelStats { offset, scale }
        }
        NormMethod::Minmax => {
            let mut offset = Vec::with_capacity(channels);
            let mut scale = Vec::with_capacity(channels);
            for col in columns {
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                offset.push(lo);
                scale.push((hi - lo).max(SPREAD_FLOOR));
            }
            ChannelStats { offset, scale }
        }
    }
}

/// A fitted normalizer. With `global` the statistics come from the training
/// events it was fitted on; without it each tensor is normalized by its own
/// per-event statistics, computed on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub method: NormMethod,
    pub global: bool,
    pub stats: Option<ChannelStats>,
}

impl Normalizer {
    /// Fits on training tensors only.
    pub fn fit(method: NormMethod, global: bool, tensors: &[&Tensor]) -> Result<Self> {
        let stats = if global {
            let first = tensors.first().ok_or_else(|| {
                Error::Config("cannot fit a global normalizer on zero events".into())
            })?;
            let channels = first.dim(1);
            let mut columns: Vec<Vec<f64>> = vec![Vec::new(); channels];
            for t in tensors {
                for c in 0..channels {
                    columns[c].extend(t.col(c));
                }
            }
            Some(fit_stats(method, &columns))
        } else {
            None
        };
        Ok(Self {
            method,
            global,
            stats,
        })
    }

    /// Normalizes a `[T x C]` tensor. Returns the normalized tensor and the
    /// statistics actually used, which `invert_with` needs.
    pub fn apply(&self, x: &Tensor) -> (Tensor, ChannelStats) {
        let stats = match (&self.stats, self.global) {
            (Some(s), true) => s.clone(),
            _ => {
                let channels = x.dim(1);
                let columns: Vec<Vec<f64>> = (0..channels).map(|c| x.col(c)).collect();
                fit_stats(self.method, &columns)
            }
        };
        let mut out = x.clone();
        let channels = x.dim(1);
        for t in 0..x.dim(0) {
            let row = out.row_mut(t);
            for c in 0..channels {
                row[c] = (row[c] - stats.offset[c]) / stats.scale[c];
            }
        }
        (out, stats)
    }

    pub fn invert_with(&self, x: &Tensor, stats: &ChannelStats) -> Tensor {
        let mut out = x.clone();
        let channels = x.dim(1);
        for t in 0..x.dim(0) {
            let row = out.row_mut(t);
            for c in 0..channels {
                row[c] = row[c] * stats.scale[c] + stats.offset[c];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Window extraction rule. The target block overlaps the feature window's
/// leading edge by `intersect` samples: with the default
/// `target_win = intersect = 1` each window is labeled with the kinematics
/// sample co-timed with the window's final force sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub feature_win: usize,
    pub target_win: usize,
    pub intersect: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            feature_win: 512,
            target_win: 1,
            intersect: 1,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_win == 0 || self.target_win == 0 || self.stride == 0 {
            return Err(Error::Config(
                "feature_win, target_win, and stride must be positive".into(),
            ));
        }
        if self.intersect == 0 || self.intersect > self.feature_win {
            return Err(Error::Config(format!(
                "intersect must be in 1..=feature_win, got {}",
                self.intersect
            )));
        }
        Ok(())
    }
}

/// One training pair: a force window, its kinematics target block, and the
/// absolute index of the target block's first sample.
#[derive(Debug, Clone)]
pub struct Window {
    pub features: Tensor,
    pub targets: Tensor,
    pub t_target: usize,
}

/// Extracts all windows of an event. Events shorter than the feature window
/// yield an empty list (the caller decides whether to warn).
pub fn make_windows(forces: &Tensor, kinematics: &Tensor, spec: &WindowSpec) -> Vec<Window> {
    let t_total = forces.dim(0);
    let m_f = forces.dim(1);
    let m_k = kinematics.dim(1);
    if t_total < spec.feature_win {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + spec.feature_win <= t_total {
        let t_target = start + spec.feature_win - spec.intersect;
        if t_target + spec.target_win > t_total {
            break;
        }
        let mut features = Tensor::zeros(&[spec.feature_win, m_f]);
        for t in 0..spec.feature_win {
            features.row_mut(t).copy_from_slice(forces.row(start + t));
        }
        let mut targets = Tensor::zeros(&[spec.target_win, m_k]);
        for t in 0..spec.target_win {
            targets
                .row_mut(t)
                .copy_from_slice(kinematics.row(t_target + t));
        }
        out.push(Window {
            features,
            targets,
            t_target,
        });
        start += spec.stride;
    }
    out
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Splits by whole events, never by window: floor(train_frac * N) train,
/// floor(val_frac * N) validation, remainder test.
pub fn split(
    dataset: &Dataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to at most 1, got {train_frac} + {val_frac}"
        )));
    }
    let n = dataset.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} events produces an empty partition ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::substream(seed, 0x5e17);
    rng.shuffle(&mut order);
    let pick = |idx: &[usize]| -> Dataset {
        Dataset {
            events: idx.iter().map(|&i| dataset.events[i].clone()).collect(),
            m_f: dataset.m_f,
            m_k: dataset.m_k,
            sample_rate: dataset.sample_rate,
        }
    };
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Knobs for the force/motion onset detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Moving-average width in samples (centered).
    pub smooth_window: usize,
    /// Force onset: first index where the absolute difference between
    /// consecutive smoothed samples exceeds this, on any channel.
    pub force_onset_thresh: f64,
    /// Motion onset: first index where any smoothed channel magnitude
    /// exceeds this.
    pub motion_onset_thresh: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            smooth_window: 11,
            force_onset_thresh: 0.05,
            motion_onset_thresh: 0.05,
        }
    }
}

fn moving_average(x: &Tensor, window: usize) -> Tensor {
    let (rows, cols) = (x.dim(0), x.dim(1));
    let half = window / 2;
    let mut out = Tensor::zeros(&[rows, cols]);
    for t in 0..rows {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(rows - 1);
        let count = (hi - lo + 1) as f64;
        for c in 0..cols {
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += x.row(s)[c];
            }
            out.row_mut(t)[c] = acc / count;
        }
    }
    out
}

fn force_onset(smoothed: &Tensor, thresh: f64) -> Option<usize> {
    let (rows, cols) = (smoothed.dim(0), smoothed.dim(1));
    for t in 1..rows {
        for c in 0..cols {
            if (smoothed.row(t)[c] - smoothed.row(t - 1)[c]).abs() > thresh {
                return Some(t);
            }
        }
    }
    None
}

fn motion_onset(smoothed: &Tensor, thresh: f64) -> Option<usize> {
    let (rows, cols) = (smoothed.dim(0), smoothed.dim(1));
    for t in 0..rows {
        for c in 0..cols {
            if smoothed.row(t)[c].abs() > thresh {
                return Some(t);
            }
        }
    }
    None
}

/// Aligns a force series with a kinematics series by their detected onsets,
/// trims both to common support, and returns the synchronized event.
pub fn align(
    forces: &Tensor,
    kinematics: &Tensor,
    sample_rate: f64,
    id: &str,
    cfg: &AlignConfig,
) -> Result<Event> {
    let f_smooth = moving_average(forces, cfg.smooth_window);
    let k_smooth = moving_average(kinematics, cfg.smooth_window);
    let f_on = force_onset(&f_smooth, cfg.force_onset_thresh)
        .ok_or_else(|| Error::Alignment(format!("{id}: no force onset found")))?;
    let k_on = motion_onset(&k_smooth, cfg.motion_onset_thresh)
        .ok_or_else(|| Error::Alignment(format!("{id}: no motion onset found")))?;

    let f_rows = forces.dim(0) - f_on;
    let k_rows = kinematics.dim(0) - k_on;
    let rows = f_rows.min(k_rows);
    if rows == 0 {
        return Err(Error::Alignment(format!(
            "{id}: no overlap after alignment"
        )));
    }
    let mut f_out = Tensor::zeros(&[rows, forces.dim(1)]);
    let mut k_out = Tensor::zeros(&[rows, kinematics.dim(1)]);
    for t in 0..rows {
        f_out.row_mut(t).copy_from_slice(forces.row(f_on + t));
        k_out.row_mut(t).copy_from_slice(kinematics.row(k_on + t));
    }
    let event = Event {
        id: id.to_string(),
        sample_rate,
        forces: f_out,
        kinematics: k_out,
    };
    event.validate()?;
    Ok(event)
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

/// Sidecar manifest describing a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: f64,
    pub force_channels: Vec<String>,
    pub kinematics_channels: Vec<String>,
    pub events: Vec<String>,
}

fn data_err(path: &Path, line: Option<usize>, msg: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a dataset directory: `manifest.json` plus one CSV per event.
/// Events are loaded in path-sorted order regardless of manifest order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| data_err(&manifest_path, None, format!("cannot read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| data_err(&manifest_path, None, format!("invalid manifest: {e}")))?;
    if manifest.sample_rate <= 0.0 {
        return Err(data_err(&manifest_path, None, "sample_rate must be positive"));
    }
    let mut files = manifest.events.clone();
    files.sort();
    let mut events = Vec::with_capacity(files.len());
    for file in &files {
        let path = dir.join(file);
        events.push(load_event(
            &path,
            manifest.sample_rate,
            manifest.force_channels.len(),
        )?);
    }
    Dataset::from_events(events)
}

/// Parses one event CSV. `m_f` is the expected force channel count.
pub fn load_event(path: &Path, sample_rate: f64, m_f: usize) -> Result<Event> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(path, None, format!("cannot read: {e}")))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| data_err(path, Some(1), "empty file"))?;
    let expected_header = expected_header(m_f);
    if header.trim() != expected_header {
        return Err(data_err(
            path,
            Some(1),
            format!("bad header: expected '{expected_header}', got '{}'", header.trim()),
        ));
    }
    let n_cols = 1 + m_f + 3;
    let dt = 1.0 / sample_rate;
    let mut forces: Vec<f64> = Vec::new();
    let mut kinematics: Vec<f64> = Vec::new();
    let mut prev_t: Option<f64> = None;
    let mut rows = 0usize;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(data_err(
                path,
                Some(lineno),
                format!("expected {n_cols} columns, got {}", fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(n_cols);
        for field in &fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                data_err(path, Some(lineno), format!("invalid number '{field}'"))
            })?;
            if !v.is_finite() {
                return Err(data_err(path, Some(lineno), "non-finite value"));
            }
            values.push(v);
        }
        let t = values[0];
        if let Some(prev) = prev_t {
            if t <= prev {
                return Err(data_err(path, Some(lineno), "time not strictly increasing"));
            }
            if ((t - prev) - dt).abs() > 1e-6 * dt.max(1e-12) + 1e-9 {
                return Err(data_err(
                    path,
                    Some(lineno),
                    format!("non-uniform time step: {} vs expected {dt}", t - prev),
                ));
            }
        }
        prev_t = Some(t);
        forces.extend_from_slice(&values[1..1 + m_f]);
        kinematics.extend_from_slice(&values[1 + m_f..]);
        rows += 1;
    }
    if rows == 0 {
        return Err(data_err(path, None, "no samples"));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Event {
        id,
        sample_rate,
        forces: Tensor::new(vec![rows, m_f], forces)?,
        kinematics: Tensor::new(vec![rows, 3], kinematics)?,
    })
}

fn expected_header(m_f: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=m_f {
        h.push_str(&format!(",F{i}"));
    }
    h.push_str(",phi,theta,psi");
    h
}

/// Writes a dataset directory in the same format `load_dataset` consumes.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(dataset.len());
    for ev in &dataset.events {
        let file = format!("{}.csv", ev.id);
        let path = dir.join(&file);
        let mut out = std::fs::File::create(&path)?;
        writeln!(out, "{}", expected_header(dataset.m_f))?;
        for t in 0..ev.len() {
            let mut line = format!("{:.9}", t as f64 / ev.sample_rate);
            for v in ev.forces.row(t) {
                line.push_str(&format!(",{v:.12e}"));
            }
            for v in ev.kinematics.row(t) {
                line.push_str(&format!(",{v:.12e}"));
            }
            writeln!(out, "{line}")?;
        }
        files.push(path);
    }
    let manifest = Manifest {
        sample_rate: dataset.sample_rate,
        force_channels: (1..=dataset.m_f).map(|i| format!("F{i}")).collect(),
        kinematics_channels: vec!["phi".into(), "theta".into(), "psi".into()],
        events: dataset
            .events
            .iter()
            .map(|ev| format!("{}.csv", ev.id))
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    files.push(manifest_path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_event(id: &str, t_len: usize, m_f: usize) -> Event {
        let mut rng = Rng::new(id.len() as u64 + t_len as u64);
        Event {
            id: id.into(),
            sample_rate: 100.0,
            forces: Tensor::rand_uniform(&[t_len, m_f], 1.0, &mut rng),
            kinematics: Tensor::rand_uniform(&[t_len, 3], 0.5, &mut rng),
        }
    }

    #[test]
    fn zscore_constant_channel_is_zero() {
        let x = Tensor::filled(&[10, 1], 4.2);
        let norm = Normalizer::fit(NormMethod::Zscore, true, &[&x]).unwrap();
        let (y, _) = norm.apply(&x);
        assert!(y.max_abs() < 1e-6);
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let norm = Normalizer::fit(NormMethod::Minmax, true, &[&x]).unwrap();
        let (y, _) = norm.apply(&x);
        assert!((y.data()[0] - 0.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_round_trips() {
        let mut rng = Rng::new(1);
        let x = Tensor::rand_uniform(&[50, 3], 2.0, &mut rng);
        for method in [NormMethod::Zscore, NormMethod::Minmax, NormMethod::Identity] {
            for global in [true, false] {
                let norm = Normalizer::fit(method, global, &[&x]).unwrap();
                let (y, stats) = norm.apply(&x);
                let back = norm.invert_with(&y, &stats);
                let diff = back.sub(&x).unwrap().max_abs();
                assert!(diff < 1e-10, "{method:?} global={global}: {diff}");
            }
        }
    }

    #[test]
    fn window_count_formula() {
        let ev = synthetic_event("e", 550, 4);
        let spec = WindowSpec {
            feature_win: 512,
            ..WindowSpec::default()
        };
        let windows = make_windows(&ev.forces, &ev.kinematics, &spec);
        assert_eq!(windows.len(), 39);
    }

    #[test]
    fn window_exact_length_yields_one() {
        let ev = synthetic_event("e", 64, 2);
        let spec = WindowSpec {
            feature_win: 64,
            ..WindowSpec::default()
        };
        let windows = make_windows(&ev.forces, &ev.kinematics, &spec);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].t_target, 63);
    }

    #[test]
    fn window_target_is_last_covered_sample() {
        let ev = synthetic_event("e", 80, 2);
        let spec = WindowSpec {
            feature_win: 64,
            target_win: 1,
            intersect: 1,
            stride: 1,
        };
        let windows = make_windows(&ev.forces, &ev.kinematics, &spec);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.t_target, i + 63);
            assert_eq!(w.targets.row(0), ev.kinematics.row(i + 63));
            assert_eq!(w.features.row(0), ev.forces.row(i));
        }
    }

    #[test]
    fn window_stride_and_count_property() {
        let spec = WindowSpec {
            feature_win: 32,
            target_win: 1,
            intersect: 1,
            stride: 3,
        };
        for t_len in [32usize, 33, 64, 100] {
            let ev = synthetic_event("e", t_len, 1);
            let windows = make_windows(&ev.forces, &ev.kinematics, &spec);
            assert_eq!(windows.len(), (t_len - 32) / 3 + 1, "T={t_len}");
        }
    }

    #[test]
    fn short_event_yields_no_windows() {
        let ev = synthetic_event("e", 10, 2);
        let spec = WindowSpec {
            feature_win: 64,
            ..WindowSpec::default()
        };
        assert!(make_windows(&ev.forces, &ev.kinematics, &spec).is_empty());
    }

    #[test]
    fn split_floor_arithmetic() {
        for (n, expected) in [(153usize, (114usize, 15usize, 24usize)), (548, (411, 54, 83))] {
            let events = (0..n)
                .map(|i| synthetic_event(&format!("e{i}"), 20, 1))
                .collect();
            let ds = Dataset::from_events(events).unwrap();
            let (train, val, test) = split(&ds, 0.75, 0.10, 3407).unwrap();
            assert_eq!(
                (train.len(), val.len(), test.len()),
                expected,
                "N={n}"
            );
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let events = (0..31)
            .map(|i| synthetic_event(&format!("e{i}"), 20, 1))
            .collect();
        let ds = Dataset::from_events(events).unwrap();
        let (a_train, a_val, a_test) = split(&ds, 0.75, 0.10, 42).unwrap();
        let (b_train, b_val, b_test) = split(&ds, 0.75, 0.10, 42).unwrap();
        let ids = |d: &Dataset| -> Vec<String> { d.events.iter().map(|e| e.id.clone()).collect() };
        assert_eq!(ids(&a_train), ids(&b_train));
        assert_eq!(ids(&a_val), ids(&b_val));
        assert_eq!(ids(&a_test), ids(&b_test));
        // Union is the whole set, no duplicates across partitions.
        let mut all: Vec<String> = ids(&a_train)
            .into_iter()
            .chain(ids(&a_val))
            .chain(ids(&a_test))
            .collect();
        all.sort();
        let mut expected: Vec<String> = (0..31).map(|i| format!("e{i}")).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_rejects_empty_partition() {
        let events = (0..3)
            .map(|i| synthetic_event(&format!("e{i}"), 20, 1))
            .collect();
        let ds = Dataset::from_events(events).unwrap();
        assert!(matches!(split(&ds, 0.9, 0.09, 1), Err(Error::Config(_))));
    }

    fn step_signal(t_len: usize, onset: usize, cols: usize) -> Tensor {
        let mut x = Tensor::zeros(&[t_len, cols]);
        for t in onset..t_len {
            for c in 0..cols {
                x.row_mut(t)[c] = 1.0;
            }
        }
        x
    }

    #[test]
    fn align_identical_steps_zero_shift() {
        let f = step_signal(400, 100, 2);
        let k = step_signal(400, 100, 3);
        let ev = align(&f, &k, 100.0, "ev", &AlignConfig::default()).unwrap();
        assert_eq!(ev.forces.dim(0), ev.kinematics.dim(0));
        // Same onset: both series keep the same number of samples.
        assert_eq!(ev.len(), 400 - 95);
    }

    #[test]
    fn align_recovers_exact_shift() {
        let f = step_signal(400, 100, 1);
        let k = step_signal(400, 130, 3);
        let ev = align(&f, &k, 100.0, "ev", &AlignConfig::default()).unwrap();
        // After alignment the step edges coincide.
        let f_edge = (0..ev.len())
            .find(|&t| ev.forces.row(t)[0] > 0.5)
            .unwrap();
        let k_edge = (0..ev.len())
            .find(|&t| ev.kinematics.row(t)[0] > 0.5)
            .unwrap();
        assert_eq!(f_edge, k_edge);
    }

    #[test]
    fn align_flat_force_errors() {
        let f = Tensor::zeros(&[200, 1]);
        let k = step_signal(200, 50, 3);
        assert!(matches!(
            align(&f, &k, 100.0, "ev", &AlignConfig::default()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn dataset_round_trip_through_disk() {
        let events = (0..2)
            .map(|i| synthetic_event(&format!("ev_{i:03}"), 40, 4))
            .collect();
        let ds = Dataset::from_events(events).unwrap();
        let dir = std::env::temp_dir().join(format!("flapinv_data_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.m_f, 4);
        for (a, b) in ds.events.iter().zip(loaded.events.iter()) {
            assert_eq!(a.id, b.id);
            let diff = a.forces.sub(&b.forces).unwrap().max_abs();
            assert!(diff < 1e-9, "diff {diff}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn loader_rejects_nan_with_line_number() {
        let dir = std::env::temp_dir().join(format!("flapinv_nan_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("manifest.json"),
            r#"{"sample_rate":100.0,"force_channels":["F1"],"kinematics_channels":["phi","theta","psi"],"events":["bad.csv"]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.join("bad.csv"),
            "t,F1,phi,theta,psi\n0.0,1.0,0.0,0.0,0.0\n0.01,NaN,0.0,0.0,0.0\n",
        )
        .unwrap();
        let err = load_dataset(&dir).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("expected data error, got {other}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn loader_accepts_five_force_channels() {
        let dir = std::env::temp_dir().join(format!("flapinv_m5_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("manifest.json"),
            r#"{"sample_rate":25.0,"force_channels":["F1","F2","F3","F4","F5"],"kinematics_channels":["phi","theta","psi"],"events":["a.csv"]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.join("a.csv"),
            "t,F1,F2,F3,F4,F5,phi,theta,psi\n0.0,1,2,3,4,5,0.1,0.2,0.3\n0.04,1,2,3,4,5,0.1,0.2,0.3\n",
        )
        .unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert_eq!(ds.m_f, 5);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn loader_rejects_ragged_rows() {
        let dir = std::env::temp_dir().join(format!("flapinv_ragged_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("manifest.json"),
            r#"{"sample_rate":100.0,"force_channels":["F1"],"kinematics_channels":["phi","theta","psi"],"events":["r.csv"]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.join("r.csv"),
            "t,F1,phi,theta,psi\n0.0,1.0,0.0,0.0\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&dir),
            Err(Error::Data { line: Some(2), .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
