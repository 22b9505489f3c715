//! Measurement helpers for audio tests.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Peak frequency of the Hann-windowed spectrum, zero-padded 8x, refined by
/// a parabola through the log magnitudes around the peak.
pub fn fft_peak_hz(x: &[f64], sr: u32) -> f64 {
    let n = x.len();
    let nfft = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| {
            if i < n {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex64::new(x[i] * w, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2].iter().map(|c| c.norm().max(1e-300).ln()).collect();
    let k = (1..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + delta) * sr as f64 / nfft as f64
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rms(x: &[f64]) -> f64 {
    (energy(x) / x.len() as f64).sqrt()
}

/// SNR of `noisy` against its clean source, in dB.
pub fn measured_snr(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(a, b)| a - b).collect();
    10.0 * (energy(clean) / energy(&noise)).log10()
}

/// Least-squares slope of 10·log10(P) against log10(f), Welch-averaged.
pub fn periodogram_slope(x: &[f64], sr: f64, lo: f64, hi: f64) -> f64 {
    let seg = 4096;
    let mut acc = vec![0.0; seg / 2 + 1];
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut count = 0;
    for start in (0..x.len() - seg).step_by(seg / 2) {
        let mut buf: Vec<Complex64> = (0..seg)
            .map(|i| Complex64::new(x[start + i] * (0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos()), 0.0))
            .collect();
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        count += 1;
    }
    let pts: Vec<(f64, f64)> = (1..acc.len())
        .map(|k| (k as f64 * sr / seg as f64, acc[k] / count as f64))
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .map(|(f, p)| (f.log10(), 10.0 * p.log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
