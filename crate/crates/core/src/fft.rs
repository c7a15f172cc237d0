//! Radix-2 real FFT, its inverse, and the adjoints the spectral layer's
//! backward pass needs.
//!
//! Conventions: the forward transform is unnormalized,
//! `X[k] = sum_n x[n] exp(-2 pi i k n / H)` for `k = 0..H/2`, and the inverse
//! carries the full `1/H` factor so `irfft(rfft(x)) == x`. Before inversion
//! the imaginary parts of the DC and Nyquist bins are forcibly zeroed, which
//! guarantees a real output even after the spectrum has been reweighted.
//! Only power-of-two lengths are supported; odd and other composite lengths
//! are rejected with distinct errors.

use crate::error::{Error, Result};
use num_complex::Complex64;

fn check_len(h: usize) -> Result<()> {
    if h < 2 || h % 2 != 0 {
        return Err(Error::FftLength {
            len: h,
            requirement: "length must be even and at least 2",
        });
    }
    if !h.is_power_of_two() {
        return Err(Error::FftLength {
            len: h,
            requirement: "radix-2 transform requires a power-of-two length",
        });
    }
    Ok(())
}

/// In-place iterative Cooley-Tukey FFT. `inverse` conjugates the twiddles
/// but applies no normalization.
fn fft_inplace(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    debug_assert!(n.is_power_of_two());

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if j > i {
            buf.swap(i, j);
        }
    }

    // One twiddle table at full resolution; stage m uses stride n/m.
    let sign = if inverse { 1.0 } else { -1.0 };
    let half = n / 2;
    let mut twiddle = Vec::with_capacity(half);
    for j in 0..half {
        let ang = sign * 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        twiddle.push(Complex64::new(ang.cos(), ang.sin()));
    }

    let mut m = 2;
    while m <= n {
        let stride = n / m;
        for start in (0..n).step_by(m) {
            for j in 0..m / 2 {
                let w = twiddle[j * stride];
                let a = buf[start + j];
                let b = buf[start + j + m / 2] * w;
                buf[start + j] = a + b;
                buf[start + j + m / 2] = a - b;
            }
        }
        m *= 2;
    }
}

/// Forward real FFT: `H` real samples to `H/2 + 1` complex bins.
pub fn rfft(x: &[f64]) -> Result<Vec<Complex64>> {
    let h = x.len();
    check_len(h)?;
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_inplace(&mut buf, false);
    buf.truncate(h / 2 + 1);
    Ok(buf)
}

/// Inverse real FFT: `H/2 + 1` complex bins back to `H` real samples,
/// normalized by `1/H`. DC and Nyquist imaginary parts are zeroed first.
pub fn irfft(spectrum: &[Complex64], h: usize) -> Result<Vec<f64>> {
    check_len(h)?;
    if spectrum.len() != h / 2 + 1 {
        return Err(Error::Shape {
            op: "irfft",
            detail: format!("expected {} bins for length {h}, got {}", h / 2 + 1, spectrum.len()),
        });
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    buf[0] = Complex64::new(spectrum[0].re, 0.0);
    buf[h / 2] = Complex64::new(spectrum[h / 2].re, 0.0);
    for k in 1..h / 2 {
        buf[k] = spectrum[k];
        buf[h - k] = spectrum[k].conj();
    }
    fft_inplace(&mut buf, true);
    let scale = 1.0 / h as f64;
    Ok(buf.into_iter().map(|c| c.re * scale).collect())
}

/// Adjoint of [`rfft`] under the real inner product on stacked (re, im)
/// components: maps a cotangent on the `H/2 + 1` bins back to the `H` input
/// samples. Interior bins carry double weight because each represents a
/// conjugate pair in the full spectrum.
pub fn rfft_adjoint(grad: &[Complex64], h: usize) -> Result<Vec<f64>> {
    check_len(h)?;
    if grad.len() != h / 2 + 1 {
        return Err(Error::Shape {
            op: "rfft_adjoint",
            detail: format!("expected {} bins for length {h}, got {}", h / 2 + 1, grad.len()),
        });
    }
    let mut halved = vec![Complex64::new(0.0, 0.0); grad.len()];
    halved[0] = Complex64::new(grad[0].re, 0.0);
    halved[h / 2] = Complex64::new(grad[h / 2].re, 0.0);
    for k in 1..h / 2 {
        halved[k] = grad[k] * 0.5;
    }
    let y = irfft(&halved, h)?;
    Ok(y.into_iter().map(|v| v * h as f64).collect())
}

/// Adjoint of [`irfft`]: maps a cotangent on the `H` output samples to the
/// `H/2 + 1` spectrum bins. The DC and Nyquist gradients are real because
/// those imaginary parts are zeroed on the forward path.
pub fn irfft_adjoint(upstream: &[f64]) -> Result<Vec<Complex64>> {
    let h = upstream.len();
    check_len(h)?;
    let spec = rfft(upstream)?;
    let scale = 1.0 / h as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); h / 2 + 1];
    out[0] = Complex64::new(spec[0].re * scale, 0.0);
    out[h / 2] = Complex64::new(spec[h / 2].re * scale, 0.0);
    for k in 1..h / 2 {
        out[k] = spec[k] * (2.0 * scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// O(H^2) reference DFT, independent of the radix-2 path.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let h = x.len();
        (0..=h / 2)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / h as f64;
                    acc += Complex64::new(ang.cos(), ang.sin()) * v;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn dc_only_signal() {
        let spec = rfft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((spec[0].re - 4.0).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
        for bin in &spec[1..] {
            assert!(bin.norm() < 1e-12);
        }
    }

    #[test]
    fn single_bin_tone() {
        let h = 16;
        let x: Vec<f64> = (0..h)
            .map(|n| (2.0 * std::f64::consts::PI * 3.0 * n as f64 / h as f64).cos())
            .collect();
        let spec = rfft(&x).unwrap();
        for (k, bin) in spec.iter().enumerate() {
            if k == 3 {
                assert!((bin.re - 8.0).abs() < 1e-12);
                assert!(bin.im.abs() < 1e-12);
            } else {
                assert!(bin.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        for &h in &[8usize, 64, 512] {
            let mut rng = Rng::new(h as u64);
            let mut x = vec![0.0; h];
            rng.fill_uniform(&mut x, -1.0, 1.0);
            let fast = rfft(&x).unwrap();
            let slow = naive_dft(&x);
            let scale = slow.iter().map(|c| c.norm()).fold(1.0f64, f64::max);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() / scale < 1e-9, "H={h}");
            }
        }
    }

    #[test]
    fn round_trip_identity() {
        let mut rng = Rng::new(9);
        for &h in &[8usize, 64, 512, 4096] {
            let mut x = vec![0.0; h];
            rng.fill_uniform(&mut x, -1.0, 1.0);
            let back = irfft(&rfft(&x).unwrap(), h).unwrap();
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in x.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_signal() {
        let spec = vec![Complex64::new(0.0, 0.0); 33];
        let x = irfft(&spec, 64).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_spectrum_gives_constant_ones() {
        let h = 64;
        let mut spec = vec![Complex64::new(0.0, 0.0); h / 2 + 1];
        spec[0] = Complex64::new(h as f64, 0.0);
        let x = irfft(&spec, h).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(
            rfft(&[1.0, 2.0, 3.0]),
            Err(Error::FftLength { .. })
        ));
        assert!(matches!(
            rfft(&vec![0.0; 12]),
            Err(Error::FftLength { .. })
        ));
        let spec = vec![Complex64::new(0.0, 0.0); 4];
        assert!(matches!(irfft(&spec, 64), Err(Error::Shape { .. })));
    }

    #[test]
    fn parseval_identity() {
        let mut rng = Rng::new(77);
        for &h in &[8usize, 256, 1024] {
            let mut x = vec![0.0; h];
            rng.fill_uniform(&mut x, -1.0, 1.0);
            let spec = rfft(&x).unwrap();
            let time_energy: f64 = x.iter().map(|v| v * v).sum();
            let mut freq_energy = spec[0].norm_sqr() + spec[h / 2].norm_sqr();
            for bin in &spec[1..h / 2] {
                freq_energy += 2.0 * bin.norm_sqr();
            }
            freq_energy /= h as f64;
            assert!((time_energy - freq_energy).abs() / time_energy < 1e-9);
        }
    }

    /// The adjoint identity <rfft(x), g> = <x, rfft_adjoint(g)> with the
    /// stacked real inner product on the complex side.
    #[test]
    fn rfft_adjoint_identity() {
        let h = 32;
        let mut rng = Rng::new(5);
        let mut x = vec![0.0; h];
        rng.fill_uniform(&mut x, -1.0, 1.0);
        let mut g = vec![Complex64::new(0.0, 0.0); h / 2 + 1];
        for (k, gk) in g.iter_mut().enumerate() {
            let re = rng.uniform(-1.0, 1.0);
            // DC/Nyquist cotangents are real by construction.
            let im = if k == 0 || k == h / 2 {
                0.0
            } else {
                rng.uniform(-1.0, 1.0)
            };
            *gk = Complex64::new(re, im);
        }
        let fx = rfft(&x).unwrap();
        let lhs: f64 = fx
            .iter()
            .zip(g.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        let adj = rfft_adjoint(&g, h).unwrap();
        let rhs: f64 = x.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn irfft_adjoint_identity() {
        let h = 32;
        let mut rng = Rng::new(6);
        let mut spec = vec![Complex64::new(0.0, 0.0); h / 2 + 1];
        for bin in spec.iter_mut() {
            *bin = Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        }
        // Forward zeroes DC/Nyquist imag, so restrict the primal to that space.
        spec[0].im = 0.0;
        spec[h / 2].im = 0.0;
        let mut u = vec![0.0; h];
        rng.fill_uniform(&mut u, -1.0, 1.0);
        let y = irfft(&spec, h).unwrap();
        let lhs: f64 = y.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let adj = irfft_adjoint(&u).unwrap();
        let rhs: f64 = spec
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
