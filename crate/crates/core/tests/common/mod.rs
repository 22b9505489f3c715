#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod signal;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ttseval::audio_io::{save_wav, Waveform};

pub const SR: u32 = 16_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tone(freq: f64, dur_s: f64, amp: f64) -> Waveform {
    let n = (dur_s * SR as f64).round() as usize;
    Waveform::new(
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect(),
        SR,
    )
}

/// Noise through two formant resonators, amplitude-modulated at a syllable rate.
pub fn speech_like(seed: u64, dur_s: f64) -> Waveform {
    let mut r = rng(seed);
    let n = (dur_s * SR as f64).round() as usize;
    let g = Normal::new(0.0, 1.0).unwrap();
    let excitation: Vec<f64> = (0..n).map(|_| g.sample(&mut r)).collect();
    let mut out = vec![0.0; n];
    for (lo, hi, gain) in [(300.0, 900.0, 1.0), (900.0, 2500.0, 0.6)] {
        let f: f64 = r.random_range(lo..hi);
        let bw = 120.0;
        let rad = (-PI * bw / SR as f64).exp();
        let c1 = 2.0 * rad * (2.0 * PI * f / SR as f64).cos();
        let c2 = -rad * rad;
        let (mut y1, mut y2) = (0.0, 0.0);
        for (o, x) in out.iter_mut().zip(&excitation) {
            let y = x + c1 * y1 + c2 * y2;
            y2 = y1;
            y1 = y;
            *o += gain * y;
        }
    }
    let rate: f64 = r.random_range(3.0..5.0);
    let phase: f64 = r.random_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / SR as f64;
        *o *= 0.2 + 0.8 * (0.5 - 0.5 * (2.0 * PI * rate * t + phase).cos());
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    Waveform::new(out, SR)
}

pub struct Clip {
    pub clip_id: String,
    pub text_id: String,
    pub transcript: String,
    pub latent: f64,
    pub wave: Waveform,
}

const WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "speech", "model", "sounds", "clear", "voice",
    "river", "morning", "light", "green", "stone", "window", "garden",
];

pub fn transcript(seed: u64) -> String {
    let mut r = rng(seed ^ 0xabcdef);
    let n = r.random_range(4..9);
    (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Writes clips as WAVs plus a manifest CSV; returns the manifest path.
pub fn write_corpus(dir: &Path, clips: &[Clip]) -> PathBuf {
    fs::create_dir_all(dir.join("wav")).unwrap();
    let mut m = String::from("clip_id,text_id,transcript,audio_path\n");
    for c in clips {
        let rel = format!("wav/{}.wav", c.clip_id);
        save_wav(&c.wave, dir.join(&rel)).unwrap();
        writeln!(m, "{},{},{},{}", c.clip_id, c.text_id, c.transcript, rel).unwrap();
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, m).unwrap();
    path
}

/// Every rater scores every clip: `latent·scale + bias + noise`, rounded to 0.5 and clipped to [1, 5].
pub fn write_ratings(dir: &Path, clips: &[Clip], n_raters: usize, seed: u64) -> PathBuf {
    let mut r = rng(seed);
    let g = Normal::new(0.0, 0.3).unwrap();
    let mut s = String::from("rater_id,clip_id,system_id,score\n");
    for k in 0..n_raters {
        let bias: f64 = r.random_range(-0.5..0.5);
        let scale: f64 = r.random_range(0.8..1.2);
        for c in clips {
            let v = 3.0 + (c.latent - 3.0) * scale + bias + g.sample(&mut r);
            let v = ((v * 2.0).round() / 2.0).clamp(1.0, 5.0);
            writeln!(s, "r{k},{},sys,{v}", c.clip_id).unwrap();
        }
    }
    let path = dir.join("ratings.csv");
    fs::write(&path, s).unwrap();
    path
}

/// Clean utterances paired with a degraded copy (white noise at 10 dB SNR and
/// three micro-gaps) under the same text id.
pub fn clean_vs_augmented(n: usize, seed: u64) -> Vec<Clip> {
    use ttseval::augment::{apply_pipeline, AugmentOp, AugmentSpec};
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let clean = speech_like(s, 1.0);
        let specs = [
            AugmentSpec::new(AugmentOp::WhiteNoise { snr_db: 10.0 }, s),
            AugmentSpec::new(AugmentOp::MicroGap { n_gaps: 3, gap_ms: 20.0 }, s + 1),
        ];
        let degraded = apply_pipeline(&clean, &specs, None).unwrap();
        let text = transcript(s);
        out.push(Clip {
            clip_id: format!("u{i:04}_clean"),
            text_id: format!("t{i:04}"),
            transcript: text.clone(),
            latent: 4.3,
            wave: clean,
        });
        out.push(Clip {
            clip_id: format!("u{i:04}_aug"),
            text_id: format!("t{i:04}"),
            transcript: text,
            latent: 1.8,
            wave: degraded,
        });
    }
    out
}

/// Clips whose latent quality is a monotone function of an injected white-noise SNR.
pub fn snr_graded(n_texts: usize, snrs: &[f64], seed: u64) -> Vec<Clip> {
    use ttseval::augment::add_white_noise;
    let (lo, hi) = snrs.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    let mut out = Vec::new();
    for t in 0..n_texts {
        let s = seed.wrapping_mul(1000).wrapping_add(t as u64);
        let clean = speech_like(s, 0.8);
        let text = transcript(s);
        for (k, &snr) in snrs.iter().enumerate() {
            out.push(Clip {
                clip_id: format!("t{t:03}_s{k}"),
                text_id: format!("t{t:03}"),
                transcript: text.clone(),
                latent: 1.5 + 3.0 * (snr - lo) / (hi - lo),
                wave: add_white_noise(&clean, snr, s + k as u64).unwrap(),
            });
        }
    }
    out
}
