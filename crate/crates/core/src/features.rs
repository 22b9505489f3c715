//! Frame-level features and utterance embeddings.
//!
//! The built-in front end is a Hann-windowed power STFT followed by a
//! Slaney-scale log-mel filterbank; utterance embeddings are masked temporal
//! means of the frames. Transcripts are embedded by signed feature hashing.
//! Externally computed embeddings can be loaded from a tab-separated file
//! and used through the same [`EmbeddingExtractor`] trait.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::util::{fnv1a, hann};

/// Floor added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
    #[error("invalid STFT geometry: {0}")]
    Geometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no embedding for clip {0}")]
    Missing(String),
    #[error("embedding file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// T×D row-major feature matrix. Rows past `valid_frames` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
    pub frame_hop_s: f64,
    pub valid_frames: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>], frame_hop_s: f64) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged feature rows");
        Self {
            data: rows.concat(),
            n_frames: rows.len(),
            dim,
            frame_hop_s,
            valid_frames: rows.len(),
        }
    }

    pub fn from_flat(data: Vec<f64>, n_frames: usize, dim: usize, frame_hop_s: f64) -> Self {
        assert_eq!(data.len(), n_frames * dim);
        Self {
            data,
            n_frames,
            dim,
            frame_hop_s,
            valid_frames: n_frames,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n_frames)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Appends `extra` rows of `fill` and keeps `valid_frames` unchanged.
    pub fn padded(&self, extra: usize, fill: f64) -> Self {
        let mut data = self.data.clone();
        data.extend(std::iter::repeat_n(fill, extra * self.dim));
        Self {
            data,
            n_frames: self.n_frames + extra,
            dim: self.dim,
            frame_hop_s: self.frame_hop_s,
            valid_frames: self.valid_frames,
        }
    }
}

/// Fixed-dimension vector summarizing one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEmbedding {
    pub vector: Vec<f64>,
    pub clip_id: String,
}

impl UtteranceEmbedding {
    pub fn new(clip_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            vector,
            clip_id: clip_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Power spectrogram `|X_k|^2`, one row per full frame (the partial tail is dropped).
pub fn stft_power(
    w: &Waveform,
    win: usize,
    hop: usize,
    nfft: usize,
) -> Result<FeatureMatrix, FeatureError> {
    if win == 0 || win > nfft || hop == 0 {
        return Err(FeatureError::Geometry(format!(
            "win={win} hop={hop} nfft={nfft} (need 1 <= win <= nfft, hop >= 1)"
        )));
    }
    let len = w.samples.len();
    if len < win {
        return Err(FeatureError::TooShort { len, win });
    }
    let n_frames = (len - win) / hop + 1;
    let n_bins = nfft / 2 + 1;
    let window = hann(win);
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let frame = &w.samples[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex64::new(frame[i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        data.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(FeatureMatrix::from_flat(
        data,
        n_frames,
        n_bins,
        hop as f64 / w.sample_rate_hz as f64,
    ))
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    }
}

/// Triangular mel filterbank, `n_mels` rows of `n_bins` weights, each row
/// normalized to unit sum. A filter narrower than one bin collapses onto the
/// bin nearest its center.
pub fn mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
) -> Vec<Vec<f64>> {
    let nfft = 2 * (n_bins - 1);
    let bin_hz = sample_rate / nfft as f64;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut row: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (center - lo);
                    let down = (hi - f) / (hi - center);
                    up.min(down).max(0.0)
                })
                .collect();
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            } else {
                let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
                row[k] = 1.0;
            }
            row
        })
        .collect()
}

/// Natural-log mel energies of a power spectrogram.
pub fn log_mel(
    spec: &FeatureMatrix,
    sample_rate: u32,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<FeatureMatrix, FeatureError> {
    if n_mels < 4 {
        return Err(FeatureError::Geometry(format!("n_mels={n_mels} (need >= 4)")));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate as f64 / 2.0) {
        return Err(FeatureError::Geometry(format!(
            "mel range [{fmin}, {fmax}] invalid for {sample_rate} Hz"
        )));
    }
    if spec.dim() < 2 {
        return Err(FeatureError::Geometry("spectrogram needs >= 2 bins".into()));
    }
    let bank = mel_filterbank(n_mels, spec.dim(), sample_rate as f64, fmin, fmax);
    let mut data = Vec::with_capacity(spec.n_frames() * n_mels);
    for frame in spec.rows() {
        for filt in &bank {
            let e: f64 = filt.iter().zip(frame).map(|(a, b)| a * b).sum();
            data.push((e + LOG_FLOOR).ln());
        }
    }
    let mut out = FeatureMatrix::from_flat(data, spec.n_frames(), n_mels, spec.frame_hop_s);
    out.valid_frames = spec.valid_frames;
    Ok(out)
}

/// Mean of the first `valid_frames` rows, optionally projected by a D×E matrix
/// (row-major, `projection[i][j]` maps input dim i to output dim j).
pub fn embed_utterance(
    f: &FeatureMatrix,
    clip_id: &str,
    projection: Option<&[Vec<f64>]>,
) -> Result<UtteranceEmbedding, FeatureError> {
    let valid = f.valid_frames.min(f.n_frames());
    if valid == 0 {
        return Err(FeatureError::Geometry("no valid frames to pool".into()));
    }
    let mut mean = vec![0.0; f.dim()];
    for row in f.rows().take(valid) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= valid as f64);
    let vector = match projection {
        None => mean,
        Some(p) => {
            if p.len() != f.dim() {
                return Err(FeatureError::DimensionMismatch {
                    expected: f.dim(),
                    got: p.len(),
                });
            }
            let e = p.first().map_or(0, Vec::len);
            let mut out = vec![0.0; e];
            for (x, prow) in mean.iter().zip(p) {
                for (o, w) in out.iter_mut().zip(prow) {
                    *o += x * w;
                }
            }
            out
        }
    };
    Ok(UtteranceEmbedding::new(clip_id, vector))
}

/// Signed feature hashing of lowercase word unigrams and bigrams, L2-normalized.
/// An empty transcript maps to the zero vector.
pub fn text_embed(transcript: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 8, "text embedding dimension must be at least 8");
    let lower = transcript.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .collect();
    let mut v = vec![0.0; dim];
    let mut add = |token: &str| {
        let h = fnv1a(seed, token.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for w in &words {
        add(w);
    }
    for pair in words.windows(2) {
        add(&format!("{}\u{1f}{}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Per-dimension affine normalization fitted on training vectors.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation per dimension; a zero
    /// deviation is replaced by 1 so constant dimensions pass through centered.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((acc, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Front-end geometry for the built-in log-mel extractor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelConfig {
    pub win: usize,
    pub hop: usize,
    pub nfft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            win: 400,
            hop: 160,
            nfft: 512,
            n_mels: 40,
            fmin: 20.0,
            fmax: 7600.0,
        }
    }
}

/// Log-mel frames of a waveform.
pub fn log_mel_frames(w: &Waveform, cfg: &MelConfig) -> Result<FeatureMatrix, FeatureError> {
    let spec = stft_power(w, cfg.win, cfg.hop, cfg.nfft)?;
    log_mel(&spec, w.sample_rate_hz, cfg.n_mels, cfg.fmin, cfg.fmax)
}

/// Source of utterance embeddings.
pub trait EmbeddingExtractor: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, clip_id: &str, w: Option<&Waveform>) -> Result<Vec<f64>, FeatureError>;
}

/// Mean-pooled log-mel embedding computed from audio.
#[derive(Debug, Clone, Default)]
pub struct LogMelExtractor {
    pub config: MelConfig,
}

impl EmbeddingExtractor for LogMelExtractor {
    fn dim(&self) -> usize {
        self.config.n_mels
    }

    fn embed(&self, clip_id: &str, w: Option<&Waveform>) -> Result<Vec<f64>, FeatureError> {
        let w = w.ok_or_else(|| FeatureError::Missing(clip_id.to_string()))?;
        let frames = log_mel_frames(w, &self.config)?;
        Ok(embed_utterance(&frames, clip_id, None)?.vector)
    }
}

/// Embeddings loaded from a file, keyed by clip id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn insert(&mut self, clip_id: impl Into<String>, v: Vec<f64>) -> Result<(), FeatureError> {
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = v.len();
        }
        if v.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        self.vectors.insert(clip_id.into(), v);
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> Option<&[f64]> {
        self.vectors.get(clip_id).map(Vec::as_slice)
    }

    /// Parses `clip_id<TAB>f,f,...` lines; blank lines are skipped.
    pub fn read(reader: impl BufRead) -> Result<Self, FeatureError> {
        let mut table = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line.split_once('\t').ok_or_else(|| FeatureError::Parse {
                line: lineno,
                reason: "missing tab separator".into(),
            })?;
            let v = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| FeatureError::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::Parse {
                    line: lineno,
                    reason: "non-finite value".into(),
                });
            }
            table.insert(id, v).map_err(|e| FeatureError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    /// Writes the table in clip-id order with shortest round-trip float formatting.
    pub fn write(&self, mut out: impl Write) -> Result<(), FeatureError> {
        for (id, v) in &self.vectors {
            let joined: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{id}\t{}", joined.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

impl EmbeddingExtractor for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, clip_id: &str, _w: Option<&Waveform>) -> Result<Vec<f64>, FeatureError> {
        self.get(clip_id)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| FeatureError::Missing(clip_id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        Waveform::new(s, 16_000)
    }

    #[test]
    fn stft_frame_count_and_peak() {
        let w = tone(1000.0, 16_000);
        let s = stft_power(&w, 400, 160, 512).unwrap();
        assert_eq!(s.n_frames(), (16_000 - 400) / 160 + 1);
        assert_eq!(s.dim(), 257);
        let expected = (1000.0f64 * 512.0 / 16_000.0).round() as usize;
        for row in s.rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn stft_of_silence_is_zero() {
        let w = Waveform::new(vec![0.0; 2000], 16_000);
        let s = stft_power(&w, 400, 160, 512).unwrap();
        assert!(s.as_flat().iter().all(|&v| v == 0.0));
        let m = log_mel(&s, 16_000, 40, 20.0, 7600.0).unwrap();
        assert!(m.as_flat().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn stft_rejects_short_signal_and_bad_geometry() {
        let w = Waveform::new(vec![0.0; 100], 16_000);
        assert!(matches!(
            stft_power(&w, 400, 160, 512),
            Err(FeatureError::TooShort { len: 100, win: 400 })
        ));
        let w = Waveform::new(vec![0.0; 1000], 16_000);
        assert!(stft_power(&w, 600, 160, 512).is_err());
        assert!(stft_power(&w, 400, 0, 512).is_err());
    }

    #[test]
    fn filterbank_rows_have_unit_sum() {
        for (n_mels, nfft) in [(40, 512), (80, 512), (4, 256), (64, 1024)] {
            let bank = mel_filterbank(n_mels, nfft / 2 + 1, 16_000.0, 20.0, 7600.0);
            for row in bank {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 20.0, 500.0, 999.0, 1000.0, 4000.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn log_mel_validates_arguments() {
        let w = tone(440.0, 4000);
        let s = stft_power(&w, 400, 160, 512).unwrap();
        assert!(log_mel(&s, 16_000, 3, 20.0, 7600.0).is_err());
        assert!(log_mel(&s, 16_000, 40, 500.0, 400.0).is_err());
        assert!(log_mel(&s, 16_000, 40, 20.0, 9000.0).is_err());
    }

    #[test]
    fn embedding_of_constant_rows_and_single_frame() {
        let rows = vec![vec![1.5, -2.0, 0.25]; 7];
        let f = FeatureMatrix::from_rows(&rows, 0.01);
        assert_eq!(embed_utterance(&f, "c", None).unwrap().vector, rows[0]);

        let mut g = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![9.0, 9.0]], 0.01);
        g.valid_frames = 1;
        assert_eq!(embed_utterance(&g, "c", None).unwrap().vector, vec![1.0, 2.0]);
    }

    #[test]
    fn embedding_projection() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 0.01);
        let p = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let e = embed_utterance(&f, "c", Some(&p)).unwrap();
        assert_eq!(e.vector, vec![2.0, 3.0, 5.0]);
        assert!(embed_utterance(&f, "c", Some(&p[..1])).is_err());
    }

    #[test]
    fn text_embedding_basics() {
        assert!(text_embed("", 16, 0).iter().all(|&x| x == 0.0));
        assert_eq!(text_embed("Hello there", 32, 7), text_embed("hello there", 32, 7));
        let v = text_embed("the quick brown fox", 64, 3);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let a = text_embed("a b", 64, 0);
        let b = text_embed("b a", 64, 0);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos < 1.0 - 1e-9, "cosine {cos}");
    }

    #[test]
    fn embedding_table_round_trip_and_validation() {
        let mut t = EmbeddingTable::default();
        t.insert("b", vec![0.1, -2.5]).unwrap();
        t.insert("a", vec![1e-300, 3.0]).unwrap();
        assert!(t.insert("c", vec![1.0]).is_err());
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(&buf[..]).unwrap();
        assert_eq!(back, t);

        let bad = "a\t1,2\nb\t1,2,3\n";
        match EmbeddingTable::read(bad.as_bytes()) {
            Err(FeatureError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingTable::read("a 1,2\n".as_bytes()).is_err());
        assert!(EmbeddingTable::read("a\t1,x\n".as_bytes()).is_err());
    }
}
