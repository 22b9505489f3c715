//! WAV input/output and the canonical in-memory waveform.
//!
//! Everything downstream works on mono `f64` samples at [`CANONICAL_RATE`].
//! Files may arrive as 16-bit PCM or 32-bit float, mono or stereo, at any
//! rate; [`load_wav`] downmixes and resamples. [`save_wav`] always writes
//! 16-bit PCM mono.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

/// Sample rate every loaded clip is brought to.
pub const CANONICAL_RATE: u32 = 16_000;

/// Taps of the windowed-sinc kernel evaluated for each output sample.
const RESAMPLE_TAPS: usize = 64;
/// Kaiser shape parameter, roughly 80 dB of stopband attenuation.
const KAISER_BETA: f64 = 8.6;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read audio file {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("unsupported codec in {path}: {detail}")]
    UnsupportedCodec { path: String, detail: String },
    #[error("audio file {0} contains no samples")]
    Empty(String),
    #[error("cannot write audio file {path}: {reason}")]
    Unwritable { path: String, reason: String },
    #[error("invalid waveform: {0}")]
    Invalid(String),
}

/// Mono PCM signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub clip_id: Option<String>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
            clip_id: None,
        }
    }

    pub fn with_clip_id(mut self, id: impl Into<String>) -> Self {
        self.clip_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Returns a copy with the same rate and id but new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            clip_id: self.clip_id.clone(),
        }
    }

    /// Checks the type invariants: nonempty, positive rate, finite samples in [-1, 1].
    pub fn validate(&self) -> Result<(), AudioError> {
        if self.sample_rate_hz == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(AudioError::Invalid("waveform has no samples".into()));
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::Invalid(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                self.samples[i]
            )));
        }
        Ok(())
    }
}

/// Reads a RIFF/WAVE file into a mono waveform at [`CANONICAL_RATE`].
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => AudioError::UnsupportedCodec {
            path: shown.clone(),
            detail: "unsupported WAVE format".into(),
        },
        other => AudioError::Unreadable {
            path: shown.clone(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedCodec {
            path: shown,
            detail: format!("{channels} channels (mono or stereo expected)"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>(),
        (fmt, bits) => {
            return Err(AudioError::UnsupportedCodec {
                path: shown,
                detail: format!("{fmt:?} {bits}-bit (PCM16 or float32 expected)"),
            })
        }
    }
    .map_err(|e| AudioError::Unreadable {
        path: shown.clone(),
        reason: e.to_string(),
    })?;

    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    if mono.is_empty() {
        return Err(AudioError::Empty(shown));
    }
    let clip_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut wave = Waveform {
        samples: mono,
        sample_rate_hz: spec.sample_rate,
        clip_id,
    };
    if wave.sample_rate_hz != CANONICAL_RATE {
        wave = resample(&wave, CANONICAL_RATE);
    }
    for s in wave.samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(wave)
}

/// Writes `w` as 16-bit PCM mono at its own sample rate.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let unwritable = |e: hound::Error| AudioError::Unwritable {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    w.validate()?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(unwritable)?;
    for &s in &w.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(unwritable)?;
    }
    writer.finalize().map_err(unwritable)
}

/// Nearest 16-bit code for a sample in [-1, 1].
pub fn quantize_pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Band-limited resampling to `target_hz`.
///
/// # Panics
/// If `target_hz` is zero.
pub fn resample(w: &Waveform, target_hz: u32) -> Waveform {
    assert!(target_hz > 0, "target rate must be positive");
    if target_hz == w.sample_rate_hz {
        return w.clone();
    }
    let ratio = target_hz as f64 / w.sample_rate_hz as f64;
    Waveform {
        samples: resample_ratio(&w.samples, ratio),
        sample_rate_hz: target_hz,
        clip_id: w.clip_id.clone(),
    }
}

/// Resamples by an arbitrary positive `ratio` (output rate / input rate).
///
/// Each output sample is a Kaiser-windowed sinc interpolation over
/// [`RESAMPLE_TAPS`] input samples. The cutoff follows the lower of the
/// two Nyquist rates; weights are normalized to unit sum so DC passes
/// unchanged. Output length is `round(len * ratio)`.
pub fn resample_ratio(samples: &[f64], ratio: f64) -> Vec<f64> {
    assert!(ratio > 0.0 && ratio.is_finite(), "ratio must be positive");
    let n_out = ((samples.len() as f64) * ratio).round().max(1.0) as usize;
    let cutoff = ratio.min(1.0);
    let half = (RESAMPLE_TAPS / 2) as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let n_in = samples.len() as isize;

    let mut weights = [0.0f64; RESAMPLE_TAPS];
    (0..n_out)
        .map(|j| {
            let t = j as f64 / ratio;
            let base = t.floor() as isize;
            let frac = t - base as f64;
            let mut wsum = 0.0;
            for (k, wk) in weights.iter_mut().enumerate() {
                let offset = k as isize - half + 1;
                // distance from the ideal sample position, in input samples
                let d = offset as f64 - frac;
                let x = d / half as f64;
                let win = if x.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / i0_beta
                };
                *wk = cutoff * sinc(cutoff * d) * win;
                wsum += *wk;
            }
            let mut acc = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                let idx = base + k as isize - half + 1;
                if idx >= 0 && idx < n_in {
                    acc += samples[idx as usize] * wk;
                }
            }
            acc / wsum
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_i16(path: &Path, rate: u32, channels: u16, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn zeros_load_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_i16(&p, 16_000, 1, &vec![0; 16_000]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 16_000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
        assert_eq!(w.clip_id.as_deref(), Some("z"));
    }

    #[test]
    fn pcm16_full_scale_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("max.wav");
        write_i16(&p, 16_000, 1, &[32767, -32768, 0]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.samples[0], 32767.0 / 32768.0);
        assert_eq!(w.samples[1], -1.0);
    }

    #[test]
    fn identical_stereo_channels_downmix_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let data: Vec<i16> = (0..200).flat_map(|i| [i * 37 - 3000, i * 37 - 3000]).collect();
        write_i16(&p, 16_000, 2, &data);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 200);
        for (i, s) in w.samples.iter().enumerate() {
            assert_eq!(*s, (i as i16 * 37 - 3000) as f64 / 32768.0);
        }
    }

    #[test]
    fn float32_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for s in [0.25f32, -0.5, 0.75] {
            wr.write_sample(s).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![0.25, -0.5, 0.75]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        assert!(matches!(load_wav(&missing), Err(AudioError::Unreadable { .. })));

        let empty = dir.path().join("empty.wav");
        write_i16(&empty, 16_000, 1, &[]);
        assert!(matches!(load_wav(&empty), Err(AudioError::Empty(_))));

        let pcm8 = dir.path().join("pcm8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&pcm8, spec).unwrap();
        wr.write_sample(3i8).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(load_wav(&pcm8), Err(AudioError::UnsupportedCodec { .. })));

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"not a riff file at all").unwrap();
        assert!(load_wav(&garbage).is_err());
    }

    #[test]
    fn save_to_missing_directory_fails() {
        let w = Waveform::new(vec![0.1; 10], 16_000);
        let err = save_wav(&w, "/nonexistent-dir/x/y.wav").unwrap_err();
        assert!(matches!(err, AudioError::Unwritable { .. }));
    }

    #[test]
    fn resample_identity_rate() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16_000);
        assert_eq!(resample(&w, 16_000), w);
    }

    #[test]
    fn resample_preserves_dc_away_from_edges() {
        let w = Waveform::new(vec![0.5; 48_000], 48_000);
        let r = resample(&w, 16_000);
        assert_eq!(r.len(), 16_000);
        for s in &r.samples[64..r.len() - 64] {
            assert!((s - 0.5).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn bessel_i0_reference_values() {
        // Abramowitz & Stegun table 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }
}
