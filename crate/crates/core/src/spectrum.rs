//! Power spectra and dominant frequencies of uniformly sampled signals.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided periodogram of the mean-removed, Hann-windowed signal,
/// zero-padded by `pad` (≥ 1). Returns `(frequencies, power)`.
pub fn power_spectrum(signal: &[f64], dt: f64, pad: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n < 4 || !(dt > 0.0) {
        return Err(Error::InvalidConfiguration(format!(
            "cannot take the spectrum of {n} samples"
        )));
    }
    let len = (n * pad.max(1)).next_power_of_two();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            if k < n {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
                Complex::new((signal[k] - mean) * w, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2 + 1;
    let df = 1.0 / (len as f64 * dt);
    let freqs = (0..half).map(|k| k as f64 * df).collect();
    let power = buf[..half].iter().map(|c| c.norm_sqr()).collect();
    Ok((freqs, power))
}

/// Frequency of the strongest spectral peak above `f_min`, refined by a
/// parabola through the log power of the peak bin and its neighbours.
pub fn dominant_frequency(signal: &[f64], dt: f64, f_min: f64) -> Result<f64> {
    let (f, p) = power_spectrum(signal, dt, 8)?;
    let k = (1..p.len() - 1)
        .filter(|&k| f[k] >= f_min)
        .max_by(|&a, &b| p[a].total_cmp(&p[b]))
        .ok_or_else(|| Error::InvalidConfiguration("no frequency above the cutoff".into()))?;
    let (a, b, c) = (
        p[k - 1].max(1e-300).ln(),
        p[k].max(1e-300).ln(),
        p[k + 1].max(1e-300).ln(),
    );
    let den = a - 2.0 * b + c;
    let shift = if den < 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Ok(f[k] + shift * (f[1] - f[0]))
}

/// Root-mean-square deviation from the mean.
pub fn rms(signal: &[f64]) -> f64 {
    let n = signal.len().max(1) as f64;
    let mean = signal.iter().sum::<f64>() / n;
    (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
