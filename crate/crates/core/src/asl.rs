//! Adaptive spectrum layer: representation learning in Fourier space with
//! per-frequency gated reweighting.
//!
//! The forward pass transforms each input channel with a real FFT, keeps the
//! bins at or below a cutoff frequency, stacks magnitude and sin/cos phase
//! per retained bin, and learns a bounded weight per bin through two fully
//! connected layers with a silu-then-sigmoid gate. Retained bins are scaled
//! by their weights, the spectrum is zero-padded back to full length, and an
//! inverse FFT returns the reweighted signal, which is combined with the
//! input through a skip connection.
//!
//! All ablation switches are supported: turning the gate off (pure low-pass),
//! learning a replacement complex spectrum (`complexify`), mixing bins in the
//! fully connected layers (`per_freq_layer`), appending the cross-spectral
//! density or the static bin frequencies to the stacked features, an angular
//! instead of sin/cos phase encoding, and a 2-D spectrum feature path
//! (`multidim_fft`).

use crate::error::{Error, Result};
use crate::fft::{irfft, irfft_adjoint, rfft, rfft_adjoint};
use crate::nn::{dropout, sigmoid, silu, silu_prime, Linear, Mode};
use crate::rng::Rng;
use crate::tensor::{Parameter, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// How the layer output is combined with the layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// Output = reweighted signal + input (default).
    Add,
    /// Output = [reweighted signal, input] stacked along channels.
    Concat,
    /// Output = reweighted signal only.
    Off,
}

/// Configuration of the adaptive spectrum layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AslConfig {
    pub hidden_size: usize,
    pub dropout: f64,
    /// Low-pass cutoff in Hz; bins with center frequency above it are dropped.
    pub freq_threshold: f64,
    /// Sampling frequency of the input windows in Hz.
    pub sample_rate: f64,
    /// Learn a weight per retained bin; off means unit weights (pure low-pass).
    pub gate: bool,
    /// Learn a replacement magnitude and phase per retained bin and channel.
    pub complexify: bool,
    /// FC layers mix across bins (flattened input) instead of acting per bin.
    pub per_freq_layer: bool,
    /// Append the channel cross-spectral density to the stacked features.
    pub cross_spectrum_density: bool,
    /// Append the normalized bin frequency to the stacked features.
    pub use_freqs: bool,
    /// Feed the gate from a 2-D (time x channel) spectrum instead of
    /// per-channel spectra. Weights still apply per time bin.
    pub multidim_fft: bool,
    /// Encode phase as a raw angle instead of its sine and cosine.
    pub angular_phase: bool,
    pub skip_mode: SkipMode,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self {
            hidden_size: 110,
            dropout: 0.1,
            freq_threshold: 210.0,
            sample_rate: 5000.0,
            gate: true,
            complexify: false,
            per_freq_layer: true,
            cross_spectrum_density: false,
            use_freqs: false,
            multidim_fft: false,
            angular_phase: false,
            skip_mode: SkipMode::Add,
        }
    }
}

impl AslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate <= 0.0 {
            return Err(Error::Config(format!(
                "asl sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.freq_threshold < 0.0 {
            return Err(Error::Config(format!(
                "asl freq_threshold must be non-negative, got {}",
                self.freq_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "asl dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if (self.gate || self.complexify) && self.hidden_size == 0 {
            return Err(Error::Config("asl hidden_size must be positive".into()));
        }
        Ok(())
    }

    /// Number of output channels for a given input channel count.
    pub fn output_channels(&self, channels: usize) -> usize {
        match self.skip_mode {
            SkipMode::Concat => 2 * channels,
            _ => channels,
        }
    }

    fn phase_width(&self) -> usize {
        if self.angular_phase {
            2
        } else {
            3
        }
    }

    /// Width of one stacked bin row for `channels` input channels.
    fn bin_width(&self, channels: usize) -> usize {
        self.phase_width() * channels + usize::from(self.use_freqs)
    }
}

/// Count of real-FFT bins whose center frequency `k * f_s / H` does not
/// exceed `f_max`.
pub fn retained_bins(h: usize, sample_rate: f64, freq_threshold: f64) -> usize {
    (0..=h / 2)
        .take_while(|&k| k as f64 * sample_rate / h as f64 <= freq_threshold)
        .count()
}

/// Stacks a truncated spectrum `[bin][channel]` into a real tensor of
/// magnitude and phase features per bin. Zero-magnitude bins use the
/// zero-phase convention (cos = 1, sin = 0, angle = 0).
pub fn stack_spectrum(spectrum: &[Vec<Complex64>], angular_phase: bool) -> Tensor {
    let bins = spectrum.len();
    let channels = spectrum.first().map_or(0, |row| row.len());
    let width = if angular_phase { 2 } else { 3 };
    let mut out = Tensor::zeros(&[bins, width * channels]);
    for (k, row) in spectrum.iter().enumerate() {
        let dst = out.row_mut(k);
        for (c, z) in row.iter().enumerate() {
            let mag = z.norm();
            dst[c] = mag;
            if angular_phase {
                dst[channels + c] = if mag == 0.0 { 0.0 } else { z.im.atan2(z.re) };
            } else if mag == 0.0 {
                dst[channels + c] = 1.0;
                dst[2 * channels + c] = 0.0;
            } else {
                dst[channels + c] = z.re / mag;
                dst[2 * channels + c] = z.im / mag;
            }
        }
    }
    out
}

/// Mean over all spectrum bins of the FFT of the pairwise circular
/// cross-correlations of the channels. Normalized so the single-channel
/// value equals the mean signal power (Parseval).
pub fn cross_spectral_density(x: &Tensor) -> Result<Tensor> {
    let h = x.dim(0);
    let channels = x.dim(1);
    let mut specs = Vec::with_capacity(channels);
    for c in 0..channels {
        specs.push(rfft(&x.col(c))?);
    }
    Ok(csd_from_specs(&specs, h))
}

fn csd_from_specs(specs: &[Vec<Complex64>], h: usize) -> Tensor {
    let channels = specs.len();
    let norm = 1.0 / (h as f64 * h as f64);
    let mut out = Tensor::zeros(&[channels, channels]);
    for a in 0..channels {
        for b in 0..channels {
            let mut acc = 0.0;
            for k in 0..=h / 2 {
                let dup = if k == 0 || k == h / 2 { 1.0 } else { 2.0 };
                let z = specs[a][k].conj() * specs[b][k];
                acc += dup * z.re;
            }
            out.data_mut()[a * channels + b] = acc * norm;
        }
    }
    out
}

/// Learnable state of the layer. Which sublayers exist depends on the flags:
/// the hidden representation is only built when the gate or complexify path
/// needs it.
#[derive(Debug, Clone)]
pub struct AslState {
    pub fc1: Option<Linear>,
    pub fc2: Option<Linear>,
    pub mag_fc: Option<Linear>,
    pub phase_fc: Option<Linear>,
    window_len: usize,
    channels: usize,
    n_bins: usize,
}

/// Everything the backward pass needs from one forward call.
pub struct AslCache {
    full_specs: Vec<Vec<Complex64>>,
    trunc: Vec<Vec<Complex64>>,
    feat: Vec<Vec<Complex64>>,
    stacked: Tensor,
    pre_relu: Option<Tensor>,
    mask: Option<Tensor>,
    hidden: Option<Tensor>,
    logits: Vec<f64>,
    weights: Vec<f64>,
    mags: Vec<f64>,
    phases: Vec<f64>,
    complexified: Vec<Vec<Complex64>>,
}

impl AslState {
    pub fn new(window_len: usize, channels: usize, cfg: &AslConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if window_len < 2 || window_len % 2 != 0 {
            return Err(Error::Config(format!(
                "asl window length must be even and >= 2, got {window_len}"
            )));
        }
        let n_bins = retained_bins(window_len, cfg.sample_rate, cfg.freq_threshold);
        let bin_w = cfg.bin_width(channels);
        let csd_w = if cfg.cross_spectrum_density {
            channels * channels
        } else {
            0
        };
        let fc1_in = if cfg.per_freq_layer {
            n_bins * bin_w + csd_w
        } else {
            bin_w + csd_w
        };
        let need_hidden = cfg.gate || cfg.complexify;
        let fc1 = need_hidden.then(|| Linear::new(fc1_in, cfg.hidden_size, rng));
        let fc2 = cfg.gate.then(|| {
            let out = if cfg.per_freq_layer { n_bins } else { 1 };
            Linear::new(cfg.hidden_size, out, rng)
        });
        let (mag_fc, phase_fc) = if cfg.complexify {
            let out = if cfg.per_freq_layer {
                n_bins * channels
            } else {
                channels
            };
            (
                Some(Linear::new(cfg.hidden_size, out, rng)),
                Some(Linear::new(cfg.hidden_size, out, rng)),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            fc1,
            fc2,
            mag_fc,
            phase_fc,
            window_len,
            channels,
            n_bins,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("asl", &mut |_, p| n += p.len());
        n
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        if let Some(fc1) = &self.fc1 {
            fc1.visit(&format!("{prefix}.fc1"), f);
        }
        if let Some(fc2) = &self.fc2 {
            fc2.visit(&format!("{prefix}.fc2"), f);
        }
        if let Some(m) = &self.mag_fc {
            m.visit(&format!("{prefix}.mag_fc"), f);
        }
        if let Some(p) = &self.phase_fc {
            p.visit(&format!("{prefix}.phase_fc"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        if let Some(fc1) = &mut self.fc1 {
            fc1.visit_mut(&format!("{prefix}.fc1"), f);
        }
        if let Some(fc2) = &mut self.fc2 {
            fc2.visit_mut(&format!("{prefix}.fc2"), f);
        }
        if let Some(m) = &mut self.mag_fc {
            m.visit_mut(&format!("{prefix}.mag_fc"), f);
        }
        if let Some(p) = &mut self.phase_fc {
            p.visit_mut(&format!("{prefix}.phase_fc"), f);
        }
    }

    /// Forward pass over a `[H x F]` window.
    pub fn forward(
        &self,
        x: &Tensor,
        cfg: &AslConfig,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, AslCache)> {
        let h = self.window_len;
        let channels = self.channels;
        if x.rank() != 2 || x.dim(0) != h || x.dim(1) != channels {
            return Err(Error::Shape {
                op: "asl_forward",
                detail: format!("expected [{h} x {channels}], got {:?}", x.shape()),
            });
        }
        let nf = self.n_bins;

        let mut full_specs = Vec::with_capacity(channels);
        for c in 0..channels {
            full_specs.push(rfft(&x.col(c))?);
        }
        // Truncated spectrum, [bin][channel].
        let trunc: Vec<Vec<Complex64>> = (0..nf)
            .map(|k| (0..channels).map(|c| full_specs[c][k]).collect())
            .collect();

        // Gate features come either from the per-channel spectra or from an
        // additional DFT across the channel axis.
        let feat = if cfg.multidim_fft {
            channel_dft(&trunc, false)
        } else {
            trunc.clone()
        };

        let mut stacked = stack_spectrum(&feat, cfg.angular_phase);
        if cfg.use_freqs {
            stacked = append_freq_column(&stacked, h);
        }
        let csd = cfg
            .cross_spectrum_density
            .then(|| csd_from_specs(&full_specs, h));
        let fc1_input = build_fc1_input(&stacked, csd.as_ref(), cfg.per_freq_layer);

        let mut pre_relu = None;
        let mut mask = None;
        let mut hidden = None;
        let mut logits = vec![0.0; nf];
        let mut weights = vec![1.0; nf];
        let mut mags = Vec::new();
        let mut phases = Vec::new();
        let mut complexified: Vec<Vec<Complex64>> = Vec::new();

        if let Some(fc1) = &self.fc1 {
            let a1 = fc1.forward(&fc1_input)?;
            let h1 = a1.map(|v| v.max(0.0));
            let (hd, m) = dropout(&h1, cfg.dropout, mode, rng)?;
            pre_relu = Some(a1);
            mask = m;

            if let Some(fc2) = &self.fc2 {
                let raw = fc2.forward(&hd)?;
                logits = raw.data().to_vec();
                for (w, &l) in weights.iter_mut().zip(logits.iter()) {
                    *w = sigmoid(silu(l));
                }
            }
            if let (Some(mag_fc), Some(phase_fc)) = (&self.mag_fc, &self.phase_fc) {
                mags = mag_fc.forward(&hd)?.into_data();
                phases = phase_fc.forward(&hd)?.into_data();
                complexified = (0..nf)
                    .map(|k| {
                        (0..channels)
                            .map(|c| {
                                let i = k * channels + c;
                                Complex64::new(
                                    mags[i] * phases[i].cos(),
                                    mags[i] * phases[i].sin(),
                                )
                            })
                            .collect()
                    })
                    .collect();
            }
            hidden = Some(hd);
        }

        let spec_used = if cfg.complexify { &complexified } else { &trunc };
        let mut y = Tensor::zeros(&[h, channels]);
        for c in 0..channels {
            let mut padded = vec![Complex64::new(0.0, 0.0); h / 2 + 1];
            for k in 0..nf {
                padded[k] = spec_used[k][c] * weights[k];
            }
            let col = irfft(&padded, h)?;
            for (t, v) in col.into_iter().enumerate() {
                y.data_mut()[t * channels + c] = v;
            }
        }

        let out = match cfg.skip_mode {
            SkipMode::Add => y.add(x)?,
            SkipMode::Off => y,
            SkipMode::Concat => {
                let mut out = Tensor::zeros(&[h, 2 * channels]);
                for t in 0..h {
                    out.row_mut(t)[..channels].copy_from_slice(y.row(t));
                    out.row_mut(t)[channels..].copy_from_slice(x.row(t));
                }
                out
            }
        };

        let cache = AslCache {
            full_specs,
            trunc,
            feat,
            stacked,
            pre_relu,
            mask,
            hidden,
            logits,
            weights,
            mags,
            phases,
            complexified,
        };
        Ok((out, cache))
    }

    /// Backward pass: accumulates parameter gradients and returns the input
    /// gradient. `upstream` must match the forward output shape.
    pub fn backward(
        &mut self,
        cfg: &AslConfig,
        cache: &AslCache,
        upstream: &Tensor,
    ) -> Result<Tensor> {
        let h = self.window_len;
        let channels = self.channels;
        let nf = self.n_bins;

        // Split the skip connection.
        let (dy, mut dx) = match cfg.skip_mode {
            SkipMode::Add => (upstream.clone(), upstream.clone()),
            SkipMode::Off => (upstream.clone(), Tensor::zeros(&[h, channels])),
            SkipMode::Concat => {
                let mut dy = Tensor::zeros(&[h, channels]);
                let mut dx = Tensor::zeros(&[h, channels]);
                for t in 0..h {
                    dy.row_mut(t).copy_from_slice(&upstream.row(t)[..channels]);
                    dx.row_mut(t).copy_from_slice(&upstream.row(t)[channels..]);
                }
                (dy, dx)
            }
        };

        // Through the inverse FFT and the zero padding.
        let mut dgated: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); channels]; nf];
        for c in 0..channels {
            let dcol = irfft_adjoint(&dy.col(c))?;
            for k in 0..nf {
                dgated[k][c] = dcol[k];
            }
        }

        // Through the gating multiply.
        let spec_used = if cfg.complexify {
            &cache.complexified
        } else {
            &cache.trunc
        };
        let mut dweights = vec![0.0; nf];
        let mut dspec_used: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); channels]; nf];
        for k in 0..nf {
            for c in 0..channels {
                if cfg.gate {
                    dweights[k] += (dgated[k][c] * spec_used[k][c].conj()).re;
                }
                dspec_used[k][c] = dgated[k][c] * cache.weights[k];
            }
        }

        // Gradient sinks for the hidden representation.
        let mut dhidden: Option<Tensor> = None;
        let add_dhidden = |acc: &mut Option<Tensor>, t: Tensor| -> Result<()> {
            match acc {
                Some(existing) => existing.add_assign(&t)?,
                None => *acc = Some(t),
            }
            Ok(())
        };

        if cfg.gate {
            let fc2 = self.fc2.as_mut().expect("gate implies fc2");
            let mut dlogits = vec![0.0; nf];
            for k in 0..nf {
                let l = cache.logits[k];
                let w = cache.weights[k];
                dlogits[k] = dweights[k] * w * (1.0 - w) * silu_prime(l);
            }
            let shape = if cfg.per_freq_layer {
                vec![1, nf]
            } else {
                vec![nf, 1]
            };
            let dlogits = Tensor::new(shape, dlogits)?;
            let hd = cache.hidden.as_ref().expect("gate implies hidden");
            add_dhidden(&mut dhidden, fc2.backward(hd, &dlogits)?)?;
        }

        // Where the gradient of the truncated spectrum accumulates.
        let mut dtrunc: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); channels]; nf];

        if cfg.complexify {
            let mut dmag = vec![0.0; nf * channels];
            let mut dphase = vec![0.0; nf * channels];
            for k in 0..nf {
                for c in 0..channels {
                    let i = k * channels + c;
                    let g = dspec_used[k][c];
                    let (sin_p, cos_p) = cache.phases[i].sin_cos();
                    dmag[i] = g.re * cos_p + g.im * sin_p;
                    dphase[i] = cache.mags[i] * (-g.re * sin_p + g.im * cos_p);
                }
            }
            let shape = if cfg.per_freq_layer {
                vec![1, nf * channels]
            } else {
                vec![nf, channels]
            };
            let hd = cache.hidden.as_ref().expect("complexify implies hidden");
            let mag_fc = self.mag_fc.as_mut().expect("complexify implies mag_fc");
            add_dhidden(&mut dhidden, mag_fc.backward(hd, &Tensor::new(shape.clone(), dmag)?)?)?;
            let phase_fc = self.phase_fc.as_mut().expect("complexify implies phase_fc");
            add_dhidden(&mut dhidden, phase_fc.backward(hd, &Tensor::new(shape, dphase)?)?)?;
        } else {
            for k in 0..nf {
                for c in 0..channels {
                    dtrunc[k][c] += dspec_used[k][c];
                }
            }
        }

        // Back through dropout, relu, and the first FC into the stack.
        let mut dstacked = Tensor::zeros(cache.stacked.shape());
        let mut dcsd: Option<Tensor> = None;
        if let Some(dhd) = dhidden {
            let fc1 = self.fc1.as_mut().expect("hidden implies fc1");
            let dh1 = match &cache.mask {
                Some(mask) => dhd.hadamard(mask)?,
                None => dhd,
            };
            let pre = cache.pre_relu.as_ref().expect("hidden implies pre_relu");
            let mut da1 = dh1;
            for (g, &a) in da1.data_mut().iter_mut().zip(pre.data().iter()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let csd = cfg
                .cross_spectrum_density
                .then(|| csd_from_specs(&cache.full_specs, h));
            let fc1_input = build_fc1_input(&cache.stacked, csd.as_ref(), cfg.per_freq_layer);
            let dinput = fc1.backward(&fc1_input, &da1)?;
            let (ds, dc) = split_fc1_grad(
                &dinput,
                cache.stacked.shape(),
                channels,
                cfg.cross_spectrum_density,
                cfg.per_freq_layer,
            );
            dstacked = ds;
            dcsd = dc;
        }

        // Unstack magnitude/phase gradients into complex bin gradients.
        let mut dfeat: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); channels]; nf];
        for k in 0..nf {
            let row = dstacked.row(k);
            for c in 0..channels {
                let z = cache.feat[k][c];
                let m = z.norm();
                if m == 0.0 {
                    continue;
                }
                let (re, im) = (z.re, z.im);
                let dmag = row[c];
                let mut dre = dmag * re / m;
                let mut dim = dmag * im / m;
                if cfg.angular_phase {
                    let dang = row[channels + c];
                    dre += dang * (-im) / (m * m);
                    dim += dang * re / (m * m);
                } else {
                    let dcos = row[channels + c];
                    let dsin = row[2 * channels + c];
                    let m3 = m * m * m;
                    dre += dcos * im * im / m3 - dsin * re * im / m3;
                    dim += -dcos * re * im / m3 + dsin * re * re / m3;
                }
                dfeat[k][c] = Complex64::new(dre, dim);
            }
        }

        // Feature path back to the truncated spectrum.
        if cfg.multidim_fft {
            let back = channel_dft(&dfeat, true);
            for k in 0..nf {
                for c in 0..channels {
                    dtrunc[k][c] += back[k][c];
                }
            }
        } else {
            for k in 0..nf {
                for c in 0..channels {
                    dtrunc[k][c] += dfeat[k][c];
                }
            }
        }

        // Full-spectrum gradient: truncation adjoint plus the CSD path.
        let bins = h / 2 + 1;
        let mut dspec_full: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); bins]; channels];
        for k in 0..nf {
            for c in 0..channels {
                dspec_full[c][k] = dtrunc[k][c];
            }
        }
        if let Some(dcsd) = dcsd {
            let norm = 1.0 / (h as f64 * h as f64);
            for a in 0..channels {
                for b in 0..channels {
                    let g = dcsd.data()[a * channels + b] * norm;
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..bins {
                        let dup = if k == 0 || k == h / 2 { 1.0 } else { 2.0 };
                        // d Re(conj(A) B) / dA = B, / dB = A.
                        dspec_full[a][k] += cache.full_specs[b][k] * (g * dup);
                        dspec_full[b][k] += cache.full_specs[a][k] * (g * dup);
                    }
                }
            }
        }

        for c in 0..channels {
            let dcol = rfft_adjoint(&dspec_full[c], h)?;
            for (t, v) in dcol.into_iter().enumerate() {
                dx.data_mut()[t * channels + c] += v;
            }
        }
        Ok(dx)
    }
}

/// Complex DFT across the channel axis, per bin. `inverse` applies the
/// conjugate-transpose map (the adjoint used in backward).
fn channel_dft(rows: &[Vec<Complex64>], inverse: bool) -> Vec<Vec<Complex64>> {
    let channels = rows.first().map_or(0, |r| r.len());
    let sign = if inverse { 1.0 } else { -1.0 };
    rows.iter()
        .map(|row| {
            (0..channels)
                .map(|cf| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, z) in row.iter().enumerate() {
                        let ang =
                            sign * 2.0 * std::f64::consts::PI * (c * cf) as f64 / channels as f64;
                        acc += z * Complex64::new(ang.cos(), ang.sin());
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn append_freq_column(stacked: &Tensor, window_len: usize) -> Tensor {
    let (bins, width) = (stacked.dim(0), stacked.dim(1));
    let mut out = Tensor::zeros(&[bins, width + 1]);
    for k in 0..bins {
        out.row_mut(k)[..width].copy_from_slice(stacked.row(k));
        // Normalized bin frequency in [0, 1].
        out.row_mut(k)[width] = k as f64 / (window_len as f64 / 2.0);
    }
    out
}

fn build_fc1_input(stacked: &Tensor, csd: Option<&Tensor>, per_freq_layer: bool) -> Tensor {
    let (bins, width) = (stacked.dim(0), stacked.dim(1));
    if per_freq_layer {
        let mut data = stacked.data().to_vec();
        if let Some(csd) = csd {
            data.extend_from_slice(csd.data());
        }
        let n = data.len();
        Tensor::new(vec![1, n], data).expect("flat layout")
    } else {
        let csd_w = csd.map_or(0, |c| c.len());
        let mut out = Tensor::zeros(&[bins, width + csd_w]);
        for k in 0..bins {
            out.row_mut(k)[..width].copy_from_slice(stacked.row(k));
            if let Some(csd) = csd {
                out.row_mut(k)[width..].copy_from_slice(csd.data());
            }
        }
        out
    }
}

/// Splits the FC1 input gradient back into stack and CSD parts.
fn split_fc1_grad(
    dinput: &Tensor,
    stacked_shape: &[usize],
    channels: usize,
    has_csd: bool,
    per_freq_layer: bool,
) -> (Tensor, Option<Tensor>) {
    let (bins, width) = (stacked_shape[0], stacked_shape[1]);
    if per_freq_layer {
        let flat = dinput.data();
        let ds = Tensor::new(vec![bins, width], flat[..bins * width].to_vec()).expect("layout");
        let dc = has_csd.then(|| {
            Tensor::new(vec![channels, channels], flat[bins * width..].to_vec()).expect("layout")
        });
        (ds, dc)
    } else {
        let mut ds = Tensor::zeros(&[bins, width]);
        let mut dc = has_csd.then(|| Tensor::zeros(&[channels, channels]));
        for k in 0..bins {
            let row = dinput.row(k);
            ds.row_mut(k).copy_from_slice(&row[..width]);
            if let Some(dc) = dc.as_mut() {
                // The same CSD block feeds every bin row; gradients sum.
                for (acc, g) in dc.data_mut().iter_mut().zip(row[width..].iter()) {
                    *acc += g;
                }
            }
        }
        (ds, dc)
    }
}
