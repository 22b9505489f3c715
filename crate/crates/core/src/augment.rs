//! Two-stage degradation pipeline.
//!
//! Stage one works on the raw signal: calibrated white and pink noise,
//! micro-gaps and a smooth frequency-response curve. Stage two is
//! time-domain restructuring: WSOLA time stretching (optionally limited to
//! aligned phone segments), room-impulse-response convolution and constant
//! pitch shifting. [`substitute_consonants`] swaps voiced/voiceless
//! consonant spans when a phone alignment is available.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{resample_ratio, Waveform};
use crate::util::{fft_forward, fft_inverse, hann, rng};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("input signal has zero power; SNR is undefined")]
    ZeroPower,
    #[error("clip of {len} samples cannot host {n_gaps} gaps of {gap_len} samples plus fades")]
    TooShortForGaps {
        len: usize,
        n_gaps: usize,
        gap_len: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),
    #[error("room impulse response is empty")]
    EmptyRir,
    #[error("stage order violation: {op} (stage {stage}) at position {index} follows a stage-{prev} op")]
    StageOrder {
        index: usize,
        op: &'static str,
        stage: u8,
        prev: u8,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One augmentation with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum AugmentOp {
    WhiteNoise { snr_db: f64 },
    PinkNoise { snr_db: f64 },
    MicroGap { n_gaps: usize, gap_ms: f64 },
    FreqResponse { bands: Vec<(f64, f64)> },
    TimeStretch { rate: f64 },
    /// Synthetic exponentially decaying noise response.
    RirConvolve { rt60_s: f64, length_s: f64 },
    PitchShift { semitones: f64 },
}

impl AugmentOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentOp::WhiteNoise { .. } => "white_noise",
            AugmentOp::PinkNoise { .. } => "pink_noise",
            AugmentOp::MicroGap { .. } => "micro_gap",
            AugmentOp::FreqResponse { .. } => "freq_response",
            AugmentOp::TimeStretch { .. } => "time_stretch",
            AugmentOp::RirConvolve { .. } => "rir_convolve",
            AugmentOp::PitchShift { .. } => "pitch_shift",
        }
    }

    /// 1 for signal-level ops, 2 for restructuring ops.
    pub fn stage(&self) -> u8 {
        match self {
            AugmentOp::WhiteNoise { .. }
            | AugmentOp::PinkNoise { .. }
            | AugmentOp::MicroGap { .. }
            | AugmentOp::FreqResponse { .. } => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidParam(m));
        match self {
            AugmentOp::WhiteNoise { snr_db } | AugmentOp::PinkNoise { snr_db } => {
                if !snr_db.is_finite() {
                    return bad(format!("snr_db must be finite, got {snr_db}"));
                }
            }
            AugmentOp::MicroGap { n_gaps, gap_ms } => {
                if *n_gaps < 1 || !(1.0..=100.0).contains(gap_ms) {
                    return bad(format!("micro_gap needs n_gaps >= 1 and gap_ms in [1, 100], got {n_gaps}, {gap_ms}"));
                }
            }
            AugmentOp::FreqResponse { bands } => {
                if bands.is_empty() || bands.len() > 16 {
                    return bad(format!("freq_response needs 1..=16 bands, got {}", bands.len()));
                }
                for &(f, g) in bands {
                    if !(f > 0.0 && f.is_finite()) || !(-24.0..=24.0).contains(&g) {
                        return bad(format!("band ({f}, {g}) out of range"));
                    }
                }
            }
            AugmentOp::TimeStretch { rate } => {
                if !(0.5..=2.0).contains(rate) {
                    return bad(format!("rate must be in [0.5, 2], got {rate}"));
                }
            }
            AugmentOp::RirConvolve { rt60_s, length_s } => {
                if !(*rt60_s > 0.0 && *rt60_s <= 3.0) || !(*length_s > 0.0 && *length_s <= 1.0) {
                    return bad(format!("rir needs rt60_s in (0, 3] and length_s in (0, 1], got {rt60_s}, {length_s}"));
                }
            }
            AugmentOp::PitchShift { semitones } => {
                if !(-12.0..=12.0).contains(semitones) {
                    return bad(format!("semitones must be in [-12, 12], got {semitones}"));
                }
            }
        }
        Ok(())
    }
}

/// An op plus the seed fixing all of its randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(flatten)]
    pub op: AugmentOp,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(op: AugmentOp, seed: u64) -> Self {
        Self { op, seed }
    }
}

/// Labeled phone segments of one clip, in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentTrack {
    pub clip_id: String,
    pub segments: Vec<(String, f64, f64)>,
}

impl AlignmentTrack {
    /// Converts to sample ranges, checking order, overlap and bounds.
    fn sample_ranges(&self, w: &Waveform) -> Result<Vec<(usize, usize)>, AugmentError> {
        let sr = w.sample_rate_hz as f64;
        let dur = w.duration_s();
        let mut prev_end = 0.0;
        let mut out = Vec::with_capacity(self.segments.len());
        for (label, start, end) in &self.segments {
            if !(start.is_finite() && end.is_finite()) || *start < prev_end || end <= start || *end > dur + 1e-9 {
                return Err(AugmentError::InvalidAlignment(format!(
                    "segment {label} [{start}, {end}] is out of order, empty or beyond {dur:.3} s"
                )));
            }
            prev_end = *end;
            let a = (start * sr).round() as usize;
            let b = ((end * sr).round() as usize).min(w.len());
            out.push((a, b));
        }
        Ok(out)
    }
}

fn mix_at_snr(w: &Waveform, noise: &[f64], snr_db: f64) -> Result<Waveform, AugmentError> {
    let p_sig = w.power();
    if p_sig <= 0.0 {
        return Err(AugmentError::ZeroPower);
    }
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let scale = (p_sig / 10f64.powf(snr_db / 10.0) / p_noise).sqrt();
    Ok(w.with_samples(
        w.samples
            .iter()
            .zip(noise)
            .map(|(s, n)| (s + scale * n).clamp(-1.0, 1.0))
            .collect(),
    ))
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Adds Gaussian white noise scaled to `snr_db` over the whole clip.
pub fn add_white_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform, AugmentError> {
    AugmentOp::WhiteNoise { snr_db }.validate()?;
    mix_at_snr(w, &gaussian(w.len(), seed), snr_db)
}

/// Gaussian noise with a 1/f power spectrum (DC removed).
pub fn pink_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut spec: Vec<Complex64> = gaussian(n, seed)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    fft_forward(&mut spec);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k.min(n - k);
        *c *= if f == 0 { 0.0 } else { (f as f64).powf(-0.5) };
    }
    fft_inverse(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

/// Adds 1/f noise scaled to `snr_db` over the whole clip.
pub fn add_pink_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform, AugmentError> {
    AugmentOp::PinkNoise { snr_db }.validate()?;
    if w.len() < 2 {
        return Err(AugmentError::InvalidParam("pink noise needs at least 2 samples".into()));
    }
    mix_at_snr(w, &pink_noise(w.len(), seed), snr_db)
}

/// Length of the linear fade on each side of a gap, in samples (1 ms).
pub fn gap_fade_len(sample_rate: u32) -> usize {
    (sample_rate as f64 / 1000.0).round() as usize
}

/// Zeroes `n_gaps` non-overlapping spans of `gap_ms`, each with a 1 ms linear
/// fade-out before and fade-in after. Returns the gap interiors as sample ranges too.
pub fn insert_micro_gaps_with_positions(
    w: &Waveform,
    n_gaps: usize,
    gap_ms: f64,
    seed: u64,
) -> Result<(Waveform, Vec<(usize, usize)>), AugmentError> {
    AugmentOp::MicroGap { n_gaps, gap_ms }.validate()?;
    let gap_len = (gap_ms * w.sample_rate_hz as f64 / 1000.0).round().max(1.0) as usize;
    let fade = gap_fade_len(w.sample_rate_hz);
    let footprint = gap_len + 2 * fade;
    let needed = n_gaps * footprint;
    if needed > w.len() {
        return Err(AugmentError::TooShortForGaps {
            len: w.len(),
            n_gaps,
            gap_len,
        });
    }
    let free = w.len() - needed;
    let mut r = rng(seed);
    let mut offsets: Vec<usize> = (0..n_gaps).map(|_| r.random_range(0..=free)).collect();
    offsets.sort_unstable();

    let mut out = w.samples.clone();
    let mut gaps = Vec::with_capacity(n_gaps);
    for (i, off) in offsets.into_iter().enumerate() {
        let start = off + i * footprint;
        for j in 0..fade {
            out[start + j] *= (fade - j) as f64 / (fade + 1) as f64;
        }
        let g0 = start + fade;
        out[g0..g0 + gap_len].iter_mut().for_each(|s| *s = 0.0);
        let f0 = g0 + gap_len;
        for j in 0..fade {
            out[f0 + j] *= (j + 1) as f64 / (fade + 1) as f64;
        }
        gaps.push((g0, g0 + gap_len));
    }
    Ok((w.with_samples(out), gaps))
}

pub fn insert_micro_gaps(
    w: &Waveform,
    n_gaps: usize,
    gap_ms: f64,
    seed: u64,
) -> Result<Waveform, AugmentError> {
    insert_micro_gaps_with_positions(w, n_gaps, gap_ms, seed).map(|(w, _)| w)
}

/// Gain in dB at `hz`: linear in log-frequency between anchors, flat outside.
pub fn gain_curve_db(bands: &[(f64, f64)], hz: f64) -> f64 {
    let mut anchors = bands.to_vec();
    anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = anchors[0];
    let last = anchors[anchors.len() - 1];
    if hz <= first.0 {
        return first.1;
    }
    if hz >= last.0 {
        return last.1;
    }
    for pair in anchors.windows(2) {
        let ((f0, g0), (f1, g1)) = (pair[0], pair[1]);
        if hz <= f1 {
            if f1 == f0 {
                return g1;
            }
            let t = (hz.ln() - f0.ln()) / (f1.ln() - f0.ln());
            return g0 + t * (g1 - g0);
        }
    }
    last.1
}

const SHAPE_NFFT: usize = 1024;
const SHAPE_HOP: usize = SHAPE_NFFT / 4;

/// Multiplies the short-time spectrum by the interpolated gain curve using
/// Hann analysis/synthesis overlap-add.
pub fn shape_freq_response(w: &Waveform, bands: &[(f64, f64)]) -> Result<Waveform, AugmentError> {
    AugmentOp::FreqResponse {
        bands: bands.to_vec(),
    }
    .validate()?;
    let n = SHAPE_NFFT;
    let sr = w.sample_rate_hz as f64;
    let gains: Vec<f64> = (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 * sr / n as f64;
            10f64.powf(gain_curve_db(bands, f) / 20.0)
        })
        .collect();
    let window = hann(n);
    let padded_len = w.len() + 2 * n;
    let mut padded = vec![0.0; padded_len];
    padded[n..n + w.len()].copy_from_slice(&w.samples);
    let mut acc = vec![0.0; padded_len + n];
    let mut wsum = vec![0.0; padded_len + n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= padded_len + SHAPE_HOP {
        for i in 0..n {
            let x = padded.get(start + i).copied().unwrap_or(0.0);
            buf[i] = Complex64::new(x * window[i], 0.0);
        }
        fft_forward(&mut buf);
        for (c, g) in buf.iter_mut().zip(&gains) {
            *c *= g;
        }
        fft_inverse(&mut buf);
        for i in 0..n {
            acc[start + i] += buf[i].re * window[i];
            wsum[start + i] += window[i] * window[i];
        }
        start += SHAPE_HOP;
    }
    let out = (n..n + w.len())
        .map(|i| {
            if wsum[i] > 1e-8 {
                (acc[i] / wsum[i]).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(w.with_samples(out))
}

/// WSOLA frame length: 32 ms.
fn wsola_frame(sample_rate: u32) -> usize {
    let n = (0.032 * sample_rate as f64).round() as usize;
    (n + 1) & !1
}

/// Waveform-similarity overlap-add. `rate` > 1 shortens, < 1 lengthens;
/// output length is `round(len / rate)`.
pub fn wsola(x: &[f64], rate: f64, sample_rate: u32) -> Vec<f64> {
    let out_len = (x.len() as f64 / rate).round() as usize;
    if x.is_empty() || out_len == 0 {
        return Vec::new();
    }
    let n = wsola_frame(sample_rate).max(8);
    let hs = n / 2;
    let tol = (n / 4) as isize;
    let pad = n as isize;
    let window = hann(n);
    let get = |i: isize| -> f64 {
        let j = i - pad;
        if j >= 0 && (j as usize) < x.len() {
            x[j as usize]
        } else {
            0.0
        }
    };

    let total = out_len + 2 * n;
    let n_frames = total / hs + 2;
    let mut acc = vec![0.0; n_frames * hs + n];
    let mut wsum = vec![0.0; n_frames * hs + n];
    let mut prev: Option<isize> = None;
    for k in 0..n_frames {
        let o = (k * hs) as isize;
        let nominal = pad as f64 + (o - pad) as f64 * rate;
        let nominal = nominal.round() as isize;
        let chosen = match prev {
            None => nominal,
            Some(p) => {
                let cont = p + hs as isize;
                let target: Vec<f64> = (0..n as isize).map(|i| get(cont + i)).collect();
                let mut best = nominal;
                let mut best_score = f64::NEG_INFINITY;
                for delta in -tol..=tol {
                    let cand = nominal + delta;
                    let mut dot = 0.0;
                    let mut energy = 0.0;
                    for (i, t) in target.iter().enumerate() {
                        let v = get(cand + i as isize);
                        dot += t * v;
                        energy += v * v;
                    }
                    let score = if energy > 0.0 { dot / energy.sqrt() } else { 0.0 };
                    if score > best_score + 1e-12 {
                        best_score = score;
                        best = cand;
                    }
                }
                best
            }
        };
        for i in 0..n {
            acc[k * hs + i] += get(chosen + i as isize) * window[i];
            wsum[k * hs + i] += window[i];
        }
        prev = Some(chosen);
    }
    (n..n + out_len)
        .map(|i| if wsum[i] > 1e-6 { acc[i] / wsum[i] } else { 0.0 })
        .collect()
}

/// Time stretch without pitch change. With an alignment, only the listed
/// segments are stretched and everything between them is copied.
pub fn time_stretch(
    w: &Waveform,
    rate: f64,
    segments: Option<&AlignmentTrack>,
) -> Result<Waveform, AugmentError> {
    AugmentOp::TimeStretch { rate }.validate()?;
    let sr = w.sample_rate_hz;
    let out = match segments {
        None => wsola(&w.samples, rate, sr),
        Some(track) => {
            let ranges = track.sample_ranges(w)?;
            let mut out = Vec::with_capacity(w.len());
            let mut cursor = 0;
            for (a, b) in ranges {
                out.extend_from_slice(&w.samples[cursor..a]);
                out.extend(wsola(&w.samples[a..b], rate, sr));
                cursor = b;
            }
            out.extend_from_slice(&w.samples[cursor..]);
            out
        }
    };
    if out.is_empty() {
        return Err(AugmentError::InvalidParam("stretch produced an empty signal".into()));
    }
    Ok(w.with_samples(out.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()))
}

/// Exponentially decaying Gaussian noise with a unit direct-path tap.
pub fn synthetic_rir(rt60_s: f64, length_s: f64, sample_rate: u32, seed: u64) -> Waveform {
    let len = ((length_s * sample_rate as f64).round() as usize).max(1);
    let decay = 6.907_755_278_982_137 / (rt60_s * sample_rate as f64); // ln(1000): -60 dB
    let noise = gaussian(len, seed);
    let mut h: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(t, g)| 0.3 * g * (-decay * t as f64).exp())
        .collect();
    h[0] = 1.0;
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    h.iter_mut().for_each(|v| *v /= peak);
    Waveform::new(h, sample_rate)
}

/// FFT convolution truncated to the input length and peak-normalized to the input peak.
pub fn rir_convolve(w: &Waveform, rir: &Waveform) -> Result<Waveform, AugmentError> {
    if rir.is_empty() {
        return Err(AugmentError::EmptyRir);
    }
    if rir.len() > rir.sample_rate_hz as usize {
        return Err(AugmentError::InvalidParam(format!(
            "room impulse response longer than 1 s ({} samples)",
            rir.len()
        )));
    }
    let n = (w.len() + rir.len() - 1).next_power_of_two();
    let to_complex = |s: &[f64]| {
        let mut v: Vec<Complex64> = s.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut a = to_complex(&w.samples);
    let mut b = to_complex(&rir.samples);
    fft_forward(&mut a);
    fft_forward(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_inverse(&mut a);
    let mut out: Vec<f64> = a[..w.len()].iter().map(|c| c.re).collect();
    let peak_out = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_in = w.peak();
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        out.iter_mut().for_each(|v| *v = (*v * g).clamp(-1.0, 1.0));
    }
    Ok(w.with_samples(out))
}

/// Constant pitch shift: stretch by the pitch factor, then resample back to the
/// original duration. The output has exactly the input length.
pub fn pitch_shift(w: &Waveform, semitones: f64) -> Result<Waveform, AugmentError> {
    AugmentOp::PitchShift { semitones }.validate()?;
    if semitones == 0.0 {
        return Ok(w.clone());
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = wsola(&w.samples, 1.0 / factor, w.sample_rate_hz);
    let mut out = resample_ratio(&stretched, 1.0 / factor);
    out.resize(w.len(), 0.0);
    Ok(w.with_samples(out.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()))
}

/// Voiced/voiceless consonant pairs (ARPAbet, case-insensitive).
const VOICING_PAIRS: [(&str, &str); 8] = [
    ("b", "p"),
    ("d", "t"),
    ("g", "k"),
    ("v", "f"),
    ("z", "s"),
    ("zh", "sh"),
    ("dh", "th"),
    ("jh", "ch"),
];

fn voicing_partner(label: &str) -> Option<&'static str> {
    let l = label.trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_lowercase();
    VOICING_PAIRS.iter().find_map(|&(v, u)| {
        if l == v {
            Some(u)
        } else if l == u {
            Some(v)
        } else {
            None
        }
    })
}

/// Swaps the audio of voiced/voiceless partner segments within one clip.
/// Segments are matched greedily left to right; returns the number of swaps.
pub fn substitute_consonants(
    w: &Waveform,
    track: &AlignmentTrack,
) -> Result<(Waveform, usize), AugmentError> {
    let ranges = track.sample_ranges(w)?;
    let labels: Vec<String> = track
        .segments
        .iter()
        .map(|(l, _, _)| l.trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_lowercase())
        .collect();
    let mut source: Vec<usize> = (0..ranges.len()).collect();
    let mut used = vec![false; ranges.len()];
    let mut swaps = 0;
    for i in 0..ranges.len() {
        if used[i] {
            continue;
        }
        let Some(partner) = voicing_partner(&labels[i]) else {
            continue;
        };
        if let Some(j) = (i + 1..ranges.len()).find(|&j| !used[j] && labels[j] == partner) {
            source.swap(i, j);
            used[i] = true;
            used[j] = true;
            swaps += 1;
        }
    }
    let mut out = Vec::with_capacity(w.len());
    let mut cursor = 0;
    for (i, &(a, b)) in ranges.iter().enumerate() {
        out.extend_from_slice(&w.samples[cursor..a]);
        let (sa, sb) = ranges[source[i]];
        out.extend_from_slice(&w.samples[sa..sb]);
        cursor = b;
    }
    out.extend_from_slice(&w.samples[cursor..]);
    Ok((w.with_samples(out), swaps))
}

/// Checks validity of each spec and that no stage-1 op follows a stage-2 op.
pub fn validate_pipeline(specs: &[AugmentSpec]) -> Result<(), AugmentError> {
    let mut prev = 1u8;
    for (index, spec) in specs.iter().enumerate() {
        spec.op.validate()?;
        let stage = spec.op.stage();
        if stage < prev {
            return Err(AugmentError::StageOrder {
                index,
                op: spec.op.name(),
                stage,
                prev,
            });
        }
        prev = stage;
    }
    Ok(())
}

pub fn apply_op(
    w: &Waveform,
    spec: &AugmentSpec,
    alignment: Option<&AlignmentTrack>,
) -> Result<Waveform, AugmentError> {
    match &spec.op {
        AugmentOp::WhiteNoise { snr_db } => add_white_noise(w, *snr_db, spec.seed),
        AugmentOp::PinkNoise { snr_db } => add_pink_noise(w, *snr_db, spec.seed),
        AugmentOp::MicroGap { n_gaps, gap_ms } => insert_micro_gaps(w, *n_gaps, *gap_ms, spec.seed),
        AugmentOp::FreqResponse { bands } => shape_freq_response(w, bands),
        AugmentOp::TimeStretch { rate } => time_stretch(w, *rate, alignment),
        AugmentOp::RirConvolve { rt60_s, length_s } => {
            let rir = synthetic_rir(*rt60_s, *length_s, w.sample_rate_hz, spec.seed);
            rir_convolve(w, &rir)
        }
        AugmentOp::PitchShift { semitones } => pitch_shift(w, *semitones),
    }
}

/// Left-to-right composition of `specs` after stage-order validation.
pub fn apply_pipeline(
    w: &Waveform,
    specs: &[AugmentSpec],
    alignment: Option<&AlignmentTrack>,
) -> Result<Waveform, AugmentError> {
    validate_pipeline(specs)?;
    specs
        .iter()
        .try_fold(w.clone(), |acc, spec| apply_op(&acc, spec, alignment))
}

/// One line of a recipe file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeEntry {
    pub clip_id: String,
    pub specs: Vec<AugmentSpec>,
}

/// Parses a JSON-lines recipe; blank lines are skipped.
pub fn read_recipe(reader: impl BufRead) -> Result<Vec<RecipeEntry>, AugmentError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RecipeEntry = serde_json::from_str(&line).map_err(|e| AugmentError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Parses `clip_id<TAB>label<TAB>start_s<TAB>end_s` lines into one track per clip.
pub fn read_alignments(reader: impl BufRead) -> Result<BTreeMap<String, AlignmentTrack>, AugmentError> {
    let mut tracks: BTreeMap<String, AlignmentTrack> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| AugmentError::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let start: f64 = fields[2].trim().parse().map_err(|e| parse_err(format!("start: {e}")))?;
        let end: f64 = fields[3].trim().parse().map_err(|e| parse_err(format!("end: {e}")))?;
        let track = tracks.entry(fields[0].to_string()).or_insert_with(|| AlignmentTrack {
            clip_id: fields[0].to_string(),
            segments: Vec::new(),
        });
        track.segments.push((fields[1].to_string(), start, end));
    }
    Ok(tracks)
}

pub fn load_alignments(path: impl AsRef<Path>) -> Result<BTreeMap<String, AlignmentTrack>, AugmentError> {
    read_alignments(std::io::BufReader::new(std::fs::File::open(path)?))
}
