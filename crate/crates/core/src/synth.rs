//! Synthetic flapping-wing data at desk scale.
//!
//! Builds labeled force/kinematics events from a parametric stroke profile,
//! surrogate passive pitch and elevation dynamics, and a quasi-steady force
//! oracle that distributes the total vertical force over four virtual
//! sensors arranged in a symmetric cross. The oracle is deliberately simple:
//! its job is to produce a learnable, physically flavored inverse-mapping
//! benchmark, not aerodynamic fidelity. Also houses the marker-triangle to
//! Euler-angle geometry and its exact inverse.

use crate::data::{Dataset, Event};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The stroke shape parameter is capped below the singular triangle-wave
/// limit.
pub const MAX_SHAPE_K: f64 = 0.99;

/// Kinematics of one synthetic event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsSpec {
    /// Wingbeat frequency in Hz.
    pub frequency: f64,
    /// Peak-to-peak stroke amplitude in radians.
    pub amplitude: f64,
    /// Stroke shape in [0, 0.99]: 0 is sinusoidal, larger is closer to
    /// triangular.
    pub shape_k: f64,
    pub duration: f64,
    pub sample_rate: f64,
    /// Lag of the passive pitch response in seconds.
    pub pitch_lag: f64,
    /// Peak passive pitch angle in radians.
    pub pitch_amp: f64,
    /// Peak elevation (figure-eight) angle in radians.
    pub elev_amp: f64,
}

impl Default for KinematicsSpec {
    fn default() -> Self {
        Self {
            frequency: 5.0,
            amplitude: PI / 4.0,
            shape_k: 0.5,
            duration: 0.5,
            sample_rate: 500.0,
            pitch_lag: 0.01,
            pitch_amp: 0.35,
            elev_amp: 0.12,
        }
    }
}

/// Stroke angle at time `t`:
/// `phi(t) = (amplitude/2) * asin(k sin(2 pi f t)) / asin(k)`,
/// with the analytic sinusoid limit for `k -> 0`.
pub fn stroke_profile(t: f64, frequency: f64, amplitude: f64, shape_k: f64) -> Result<f64> {
    if !(0.0..=MAX_SHAPE_K).contains(&shape_k) {
        return Err(Error::Config(format!(
            "shape_k must be in [0, {MAX_SHAPE_K}], got {shape_k}"
        )));
    }
    let s = (2.0 * PI * frequency * t).sin();
    if shape_k < 1e-6 {
        Ok(0.5 * amplitude * s)
    } else {
        Ok(0.5 * amplitude * (shape_k * s).asin() / shape_k.asin())
    }
}

/// Samples the stroke profile over the event duration.
pub fn stroke_series(spec: &KinematicsSpec) -> Result<Vec<f64>> {
    let n = (spec.duration * spec.sample_rate).round() as usize;
    (0..n)
        .map(|i| {
            stroke_profile(
                i as f64 / spec.sample_rate,
                spec.frequency,
                spec.amplitude,
                spec.shape_k,
            )
        })
        .collect()
}

/// Central-difference derivative on a uniform grid, one-sided at the ends.
fn derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (x[1] - x[0]) / dt;
    out[n - 1] = (x[n - 1] - x[n - 2]) / dt;
    for i in 1..n - 1 {
        out[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
    }
    out
}

/// Surrogate passive dynamics: pitch follows the lagged stroke rate through
/// a saturating response, elevation oscillates at twice the wingbeat
/// frequency (figure-eight). Returns (theta, psi) series.
pub fn passive_angles(phi: &[f64], spec: &KinematicsSpec) -> (Vec<f64>, Vec<f64>) {
    let n = phi.len();
    let dt = 1.0 / spec.sample_rate;
    let rate = derivative(phi, dt);
    // Normalize the stroke rate so tanh saturates at the sinusoid's peak.
    let peak_rate = (spec.amplitude * PI * spec.frequency).max(1e-12);
    let lag_samples = (spec.pitch_lag * spec.sample_rate).round() as isize;
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let j = (i as isize - lag_samples).clamp(0, n as isize - 1) as usize;
            spec.pitch_amp * (rate[j] / peak_rate).tanh()
        })
        .collect();
    let theta: Vec<f64> = (0..n)
        .map(|i| spec.elev_amp * (4.0 * PI * spec.frequency * i as f64 * dt).sin())
        .collect();
    (theta, psi)
}

/// Quasi-steady oracle parameters: the vertical force law plus the virtual
/// sensor geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsParams {
    /// Fluid density in kg/m^3.
    pub density: f64,
    /// Wing area in m^2.
    pub wing_area: f64,
    /// Second-moment arm of the wing in m.
    pub moment_arm: f64,
    /// Lift coefficient amplitude in the sin(2 psi) law.
    pub lift_coeff: f64,
    /// Drag coefficient amplitude; drives the overturning moment that skews
    /// the sensor load distribution (unit mount height folded in).
    pub drag_coeff: f64,
    /// Distance of each sensor from the cross center in m.
    pub sensor_offset: f64,
}

impl Default for QsParams {
    fn default() -> Self {
        Self {
            density: 1.2,
            wing_area: 2.1e-3,
            moment_arm: 0.05,
            lift_coeff: 1.8,
            drag_coeff: 0.4,
            sensor_offset: 0.04,
        }
    }
}

impl QsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("density", self.density),
            ("wing_area", self.wing_area),
            ("moment_arm", self.moment_arm),
            ("lift_coeff", self.lift_coeff),
            ("drag_coeff", self.drag_coeff),
            ("sensor_offset", self.sensor_offset),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Quasi-steady vertical forces at four virtual sensors.
///
/// Total vertical force: `F = 1/2 rho A r^2 C_L(psi) phidot^2` with
/// `C_L(psi) = lift_coeff * sin(2 psi)`. The total is distributed over the
/// symmetric cross by static moment balance about the center, with the
/// instantaneous center of pressure at `moment_arm * (cos phi, sin phi)`
/// and a drag-induced overturning moment; channels always sum to `F`.
pub fn qs_forces(kinematics: &Tensor, sample_rate: f64, p: &QsParams) -> Result<Tensor> {
    p.validate()?;
    if kinematics.rank() != 2 || kinematics.dim(1) != 3 {
        return Err(Error::Shape {
            op: "qs_forces",
            detail: format!("expected [T x 3] kinematics, got {:?}", kinematics.shape()),
        });
    }
    let n = kinematics.dim(0);
    let dt = 1.0 / sample_rate;
    let phi: Vec<f64> = kinematics.col(0);
    let psi: Vec<f64> = kinematics.col(2);
    let phidot = derivative(&phi, dt);
    let mut out = Tensor::zeros(&[n, 4]);
    let pressure = 0.5 * p.density * p.wing_area * p.moment_arm * p.moment_arm;
    for t in 0..n {
        let loads = qs_sensor_loads(phi[t], psi[t], phidot[t], pressure, p);
        out.row_mut(t).copy_from_slice(&loads);
    }
    Ok(out)
}

/// Straight-line form of the per-sample load computation (kept separate so
/// tests can recompute it independently of the series plumbing).
pub fn qs_sensor_loads(phi: f64, psi: f64, phidot: f64, pressure: f64, p: &QsParams) -> [f64; 4] {
    let dyn_term = pressure * phidot * phidot;
    let total = dyn_term * p.lift_coeff * (2.0 * psi).sin();
    // Center of pressure sweeps with the stroke angle.
    let cp_x = p.moment_arm * phi.cos();
    let cp_y = p.moment_arm * phi.sin();
    // Drag opposes the stroke direction; applied above the plane it tips
    // the plate, adding an in-plane moment perpendicular to the motion.
    let drag = dyn_term * p.drag_coeff * (1.0 - (2.0 * psi).cos()) * 0.5 * phidot.signum();
    let (m_x, m_y) = {
        // moment = z_hat x (-drag * u), u = tangential direction.
        let (sin_phi, cos_phi) = phi.sin_cos();
        let u = (-sin_phi, cos_phi);
        (drag * u.1, -drag * u.0)
    };
    let d = p.sensor_offset;
    let f1 = 0.25 * total + 0.5 * (total * cp_x + m_x) / d;
    let f2 = 0.25 * total - 0.5 * (total * cp_x + m_x) / d;
    let f3 = 0.25 * total + 0.5 * (total * cp_y + m_y) / d;
    let f4 = 0.25 * total - 0.5 * (total * cp_y + m_y) / d;
    [f1, f2, f3, f4]
}

/// Parameter ranges sampled per generated event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRanges {
    pub frequency: (f64, f64),
    pub amplitude: (f64, f64),
    pub shape_k: (f64, f64),
    pub duration: (f64, f64),
}

impl Default for SynthRanges {
    fn default() -> Self {
        Self {
            frequency: (3.0, 8.0),
            amplitude: (PI / 6.0, PI / 3.0),
            shape_k: (0.0, 0.9),
            duration: (0.5, 0.5),
        }
    }
}

/// Full synthetic-dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_events: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub ranges: SynthRanges,
    pub pitch_lag: f64,
    pub pitch_amp: f64,
    pub elev_amp: f64,
    /// Gaussian noise added to every force sample.
    pub noise_std: f64,
    /// Amplitude of an optional narrowband disturbance on the force
    /// channels (rig vibration surrogate); 0 disables it.
    pub vibration_amp: f64,
    /// Disturbance frequency range in Hz; one frequency is drawn per event.
    pub vibration_freq: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_events: 64,
            seed: 3407,
            sample_rate: 500.0,
            ranges: SynthRanges::default(),
            pitch_lag: 0.01,
            pitch_amp: 0.35,
            elev_amp: 0.12,
            noise_std: 0.0,
            vibration_amp: 0.0,
            vibration_freq: (80.0, 180.0),
        }
    }
}

/// Generates a dataset of labeled force -> kinematics events. Each event
/// draws from its own derived stream, so the output is a pure function of
/// the seed regardless of event count or order.
pub fn generate_dataset(cfg: &SynthConfig, qs: &QsParams) -> Result<Dataset> {
    if cfg.n_events == 0 {
        return Err(Error::Config("n_events must be at least 1".into()));
    }
    qs.validate()?;
    let mut events = Vec::with_capacity(cfg.n_events);
    for i in 0..cfg.n_events {
        let mut rng = Rng::substream(cfg.seed, i as u64);
        let spec = KinematicsSpec {
            frequency: rng.uniform(cfg.ranges.frequency.0, cfg.ranges.frequency.1),
            amplitude: rng.uniform(cfg.ranges.amplitude.0, cfg.ranges.amplitude.1),
            shape_k: rng.uniform(cfg.ranges.shape_k.0, cfg.ranges.shape_k.1),
            duration: rng.uniform(cfg.ranges.duration.0, cfg.ranges.duration.1),
            sample_rate: cfg.sample_rate,
            pitch_lag: cfg.pitch_lag,
            pitch_amp: cfg.pitch_amp,
            elev_amp: cfg.elev_amp,
        };
        let phi = stroke_series(&spec)?;
        let (theta, psi) = passive_angles(&phi, &spec);
        let n = phi.len();
        let mut kin = Tensor::zeros(&[n, 3]);
        for t in 0..n {
            kin.row_mut(t).copy_from_slice(&[phi[t], theta[t], psi[t]]);
        }
        let mut forces = qs_forces(&kin, cfg.sample_rate, qs)?;
        if cfg.vibration_amp > 0.0 {
            let freq = rng.uniform(cfg.vibration_freq.0, cfg.vibration_freq.1);
            let phases: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 2.0 * PI)).collect();
            for t in 0..n {
                let arg = 2.0 * PI * freq * t as f64 / cfg.sample_rate;
                for (c, phase) in phases.iter().enumerate() {
                    forces.row_mut(t)[c] += cfg.vibration_amp * (arg + phase).sin();
                }
            }
        }
        if cfg.noise_std > 0.0 {
            for v in forces.data_mut() {
                *v += rng.normal(0.0, cfg.noise_std);
            }
        }
        events.push(Event {
            id: format!("synth_{i:04}"),
            sample_rate: cfg.sample_rate,
            forces,
            kinematics: kin,
        });
    }
    Dataset::from_events(events)
}

// ---------------------------------------------------------------------------
// Marker geometry
// ---------------------------------------------------------------------------

/// Marker positions on the flat wing, in the wing frame: x along the chord
/// (toward the trailing edge), y along the span, z normal to the plate.
/// Two markers sit on the leading edge, one mid-span near the trailing edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WingGeometry {
    pub markers: [[f64; 3]; 3],
}

impl Default for WingGeometry {
    fn default() -> Self {
        Self {
            markers: [
                [0.0, 0.015, 0.0],
                [0.0, 0.065, 0.0],
                [0.025, 0.040, 0.0],
            ],
        }
    }
}

/// Rotation matrix for the intrinsic z-x-y convention: stroke about the lab
/// z axis, elevation about the rotated x axis, pitch about the span (y)
/// axis. Columns are the wing frame axes expressed in the lab frame.
fn rotation(phi: f64, theta: f64, psi: f64) -> [[f64; 3]; 3] {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (ss, cs) = psi.sin_cos();
    [
        [cp * cs - sp * st * ss, -sp * ct, cp * ss + sp * st * cs],
        [sp * cs + cp * st * ss, cp * ct, sp * ss - cp * st * cs],
        [-ct * ss, st, ct * cs],
    ]
}

fn mat_apply(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Places the wing markers in the lab frame for the given angles.
pub fn euler_to_markers(
    phi: f64,
    theta: f64,
    psi: f64,
    geometry: &WingGeometry,
) -> [[f64; 3]; 3] {
    let rot = rotation(phi, theta, psi);
    [
        mat_apply(&rot, &geometry.markers[0]),
        mat_apply(&rot, &geometry.markers[1]),
        mat_apply(&rot, &geometry.markers[2]),
    ]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: &[f64; 3]) -> Result<[f64; 3]> {
    let n = dot3(v, v).sqrt();
    if n < 1e-12 {
        return Err(Error::Geometry("degenerate marker configuration".into()));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Recovers (phi, theta, psi) from the three tracked markers: the span axis
/// comes from the leading-edge pair, the chord axis from the in-plane
/// component toward the third marker. Markers must not be collinear.
pub fn markers_to_euler(p1: &[f64; 3], p2: &[f64; 3], p3: &[f64; 3]) -> Result<(f64, f64, f64)> {
    let span = normalize(&sub(p2, p1))?;
    let towards_te = sub(p3, p1);
    let proj = dot3(&towards_te, &span);
    let in_plane = [
        towards_te[0] - proj * span[0],
        towards_te[1] - proj * span[1],
        towards_te[2] - proj * span[2],
    ];
    let chord = normalize(&in_plane).map_err(|_| {
        Error::Geometry("collinear markers: cannot build the wing frame".into())
    })?;
    let normal = cross(&chord, &span);
    // Columns of the rotation: chord (x), span (y), normal (z).
    let r01 = span[0];
    let r11 = span[1];
    let r21 = span[2];
    let r20 = chord[2];
    let r22 = normal[2];
    let theta = r21.asin();
    let phi = (-r01).atan2(r11);
    let psi = (-r20).atan2(r22);
    Ok((phi, theta, psi))
}
