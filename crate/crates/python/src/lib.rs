//! Python bindings: audio helpers, augmentation, metrics, rating
//! standardization, batching, the preference and MOS models, and the
//! pipeline commands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use ttseval::audio_io::{self, Waveform};
use ttseval::augment;
use ttseval::batching;
use ttseval::ensemble::{self, StackConfig, StackedFeature, StackedMosModel};
use ttseval::features::{self, FeatureMatrix};
use ttseval::metrics::{self, BinaryScoredSeries, PairedSeries};
use ttseval::pipeline::{self, RunConfig};
use ttseval::ratings::{self, RatingRecord, SbsPair};
use ttseval::sbs::{self, SbsExample, SbsModelFile, SbsModelParams, SbsTrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Loads a WAV file as mono samples at the canonical rate; returns `(samples, rate)`.
#[pyfunction]
fn load_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let w = audio_io::load_wav(path).map_err(value_err)?;
    Ok((w.samples, w.sample_rate_hz))
}

#[pyfunction]
fn save_wav(samples: Vec<f64>, rate: u32, path: PathBuf) -> PyResult<()> {
    audio_io::save_wav(&Waveform::new(samples, rate), path).map_err(value_err)
}

#[pyfunction]
fn add_white_noise(samples: Vec<f64>, rate: u32, snr_db: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(augment::add_white_noise(&Waveform::new(samples, rate), snr_db, seed)
        .map_err(value_err)?
        .samples)
}

#[pyfunction]
fn add_pink_noise(samples: Vec<f64>, rate: u32, snr_db: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(augment::add_pink_noise(&Waveform::new(samples, rate), snr_db, seed)
        .map_err(value_err)?
        .samples)
}

#[pyfunction]
fn pitch_shift(samples: Vec<f64>, rate: u32, semitones: f64) -> PyResult<Vec<f64>> {
    Ok(augment::pitch_shift(&Waveform::new(samples, rate), semitones)
        .map_err(value_err)?
        .samples)
}

#[pyfunction]
fn time_stretch(samples: Vec<f64>, rate: u32, stretch: f64) -> PyResult<Vec<f64>> {
    Ok(augment::time_stretch(&Waveform::new(samples, rate), stretch, None)
        .map_err(value_err)?
        .samples)
}

#[pyfunction]
#[pyo3(signature = (transcript, dim = 64, seed = 0))]
fn text_embed(transcript: &str, dim: usize, seed: u64) -> Vec<f64> {
    features::text_embed(transcript, dim, seed)
}

fn paired<'a>(p: &'a [f64], t: &'a [f64]) -> PyResult<PairedSeries<'a>> {
    PairedSeries::new(p, t).map_err(value_err)
}

#[pyfunction]
fn mse(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    Ok(metrics::mse(paired(&predictions, &targets)?))
}

#[pyfunction]
fn rmse(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    Ok(metrics::rmse(paired(&predictions, &targets)?))
}

#[pyfunction]
fn lcc(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    metrics::lcc(paired(&predictions, &targets)?).map_err(value_err)
}

#[pyfunction]
fn srcc(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    metrics::srcc(paired(&predictions, &targets)?).map_err(value_err)
}

#[pyfunction]
fn kendall_tau(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    metrics::kendall_tau(paired(&predictions, &targets)?).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = 0.5))]
fn accuracy(scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> PyResult<f64> {
    let b = BinaryScoredSeries::new(&scores, &labels).map_err(value_err)?;
    Ok(metrics::accuracy(b, threshold))
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let b = BinaryScoredSeries::new(&scores, &labels).map_err(value_err)?;
    metrics::auc_roc(b).map_err(value_err)
}

fn records(rows: Vec<(String, String, String, f64)>) -> Vec<RatingRecord> {
    rows.into_iter()
        .map(|(rater_id, clip_id, system_id, score)| RatingRecord {
            rater_id,
            clip_id,
            system_id,
            score,
        })
        .collect()
}

/// Per-rater z-scoring of `(rater, clip, system, score)` rows. Returns
/// `(rater, clip, system, score, z, std_score)` rows in input order.
#[pyfunction]
#[pyo3(signature = (rows, sigma_floor = 1e-6))]
#[allow(clippy::type_complexity)]
fn standardize(
    rows: Vec<(String, String, String, f64)>,
    sigma_floor: f64,
) -> PyResult<Vec<(String, String, String, f64, f64, f64)>> {
    let recs = records(rows);
    ratings::validate_records(&recs).map_err(value_err)?;
    let std = ratings::standardize(&recs, &ratings::rater_stats(&recs), sigma_floor).map_err(value_err)?;
    Ok(std
        .into_iter()
        .map(|s| (s.rater_id, s.clip_id, s.system_id, s.score, s.z, s.std_score))
        .collect())
}

/// Leave-one-out inter-rater RMSE over `(clip, score)` pairs.
#[pyfunction]
fn inter_rater_rmse(rows: Vec<(String, f64)>) -> PyResult<f64> {
    ratings::inter_rater_rmse(rows.iter().map(|(c, s)| (c.as_str(), *s))).map_err(value_err)
}

/// Returns `(batches, padding_ratio)`.
#[pyfunction]
#[pyo3(signature = (durations, batch_size, seed = 0))]
fn length_sorted_batches(durations: Vec<f64>, batch_size: usize, seed: u64) -> PyResult<(Vec<Vec<usize>>, f64)> {
    let plan = batching::length_sorted_batches(&durations, batch_size, seed).map_err(value_err)?;
    let ratio = plan.padding_ratio();
    Ok((plan.batches, ratio))
}

/// Mean of each score row over its first `valid_frames[i]` entries.
#[pyfunction]
fn masked_sequence_pool(per_frame_scores: Vec<Vec<f64>>, valid_frames: Vec<usize>) -> PyResult<Vec<f64>> {
    if per_frame_scores.len() != valid_frames.len() {
        return Err(PyValueError::new_err("one valid-frame count per sequence is required"));
    }
    let frames: Vec<FeatureMatrix> = per_frame_scores
        .iter()
        .zip(&valid_frames)
        .map(|(s, &v)| {
            let mut m = FeatureMatrix::from_flat(Vec::new(), s.len(), 0, 0.01);
            m.valid_frames = v;
            m
        })
        .collect();
    batching::masked_sequence_pool(&frames, &per_frame_scores).map_err(value_err)
}

/// Antisymmetric bilinear preference model.
#[pyclass(module = "ttseval_py")]
struct SbsModel {
    file: SbsModelFile,
    params: SbsModelParams,
}

#[pymethods]
impl SbsModel {
    #[new]
    #[pyo3(signature = (w, projection = None))]
    fn new(w: Vec<Vec<f64>>, projection: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let w = matrix(&w)?;
        if !w.is_square() {
            return Err(PyValueError::new_err("W must be square"));
        }
        let params = match projection {
            Some(p) => {
                let p = matrix(&p)?;
                if p.ncols() != w.nrows() {
                    return Err(PyValueError::new_err("projection must have d columns"));
                }
                SbsModelParams::with_projection(w, p)
            }
            None => SbsModelParams::new(w),
        };
        Ok(Self {
            file: SbsModelFile::new(&params, SbsTrainConfig::default()),
            params,
        })
    }

    /// Trains on `(clip_a, clip_b, label)` triples.
    #[staticmethod]
    #[pyo3(signature = (pairs, embeddings, epochs = 50, learning_rate = 0.05, batch_size = 32, l2_weight = 1e-4, seed = 0, projection_dim = None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        pairs: Vec<(String, String, u8)>,
        embeddings: BTreeMap<String, Vec<f64>>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        l2_weight: f64,
        seed: u64,
        projection_dim: Option<usize>,
    ) -> PyResult<(Self, Vec<f64>)> {
        let pairs: Vec<SbsPair> = pairs
            .into_iter()
            .map(|(clip_a, clip_b, label)| SbsPair {
                clip_a,
                clip_b,
                label,
                margin: 0.0,
                text_id: String::new(),
            })
            .collect();
        let cfg = SbsTrainConfig {
            epochs,
            learning_rate,
            batch_size,
            l2_weight,
            seed,
            projection_dim,
            ..SbsTrainConfig::default()
        };
        let t = sbs::train_sbs(&pairs, &embeddings, &cfg).map_err(value_err)?;
        Ok((
            Self {
                file: SbsModelFile::new(&t.params, cfg),
                params: t.params,
            },
            t.loss_history,
        ))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = SbsModelFile::load(path).map_err(value_err)?;
        let params = file.params().map_err(value_err)?;
        Ok(Self { file, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.file.save(path).map_err(value_err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.params.d()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        rows(&self.params.w)
    }

    /// Applies the stored input normalization (if any) to a raw embedding.
    fn prepare(&self, raw: Vec<f64>) -> Vec<f64> {
        self.file.prepare(&raw)
    }

    fn score(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        sbs::score(&self.params, &a, &b).map_err(value_err)
    }

    fn predict(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        sbs::predict(&self.params, &a, &b).map_err(value_err)
    }

    /// Returns `(loss, grad_w, grad_projection)` for `(a, b, label)` examples.
    #[pyo3(signature = (examples, l2_weight = 0.0))]
    #[allow(clippy::type_complexity)]
    fn loss_and_grad(
        &self,
        examples: Vec<(Vec<f64>, Vec<f64>, u8)>,
        l2_weight: f64,
    ) -> PyResult<(f64, Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
        let batch: Vec<SbsExample> = examples.iter().map(|(a, b, l)| (a.as_slice(), b.as_slice(), *l)).collect();
        let g = sbs::loss_and_grad(&self.params, &batch, l2_weight).map_err(value_err)?;
        Ok((g.loss, rows(&g.grad_w), g.grad_projection.as_ref().map(rows)))
    }

    fn __repr__(&self) -> String {
        format!("SbsModel(d={}, input_dim={})", self.params.d(), self.params.input_dim())
    }
}

/// Stacked weak learners with an MLP meta-learner.
#[pyclass(module = "ttseval_py")]
struct MosModel {
    inner: StackedMosModel,
}

#[pymethods]
impl MosModel {
    /// Fits on `{clip_id: feature}` and `{clip_id: mos}`; returns the model
    /// and its out-of-fold weak-learner predictions in clip-id order.
    #[staticmethod]
    #[pyo3(signature = (features, targets, k_folds = 5, seed = 0))]
    fn fit(
        features: BTreeMap<String, Vec<f64>>,
        targets: BTreeMap<String, f64>,
        k_folds: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<[f64; 3]>)> {
        let feats: Vec<StackedFeature> = features
            .into_iter()
            .map(|(clip_id, vector)| StackedFeature { clip_id, vector })
            .collect();
        let cfg = StackConfig {
            k_folds,
            seed,
            ..StackConfig::default()
        };
        let (inner, diag) = ensemble::fit_stack(&feats, &targets, &cfg).map_err(value_err)?;
        Ok((Self { inner }, diag.oof_predictions))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: StackedMosModel::load(path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    fn predict(&self, feature: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&feature).map_err(value_err)
    }

    fn weak_predictions(&self, feature: Vec<f64>) -> PyResult<[f64; 3]> {
        self.inner.weak_predictions(&feature).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("MosModel(feature_dim={})", self.inner.feature_dim)
    }
}

fn to_python<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Runs a pipeline command (`standardize`, `featurize`, `augment`, `pairs`,
/// `train_sbs`, `train_mos`, `evaluate`, `gate`) and returns its report.
#[pyfunction]
#[pyo3(signature = (command, config = None, overrides = Vec::new()))]
fn run<'py>(
    py: Python<'py>,
    command: &str,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let err = |e: pipeline::PipelineError| PyRuntimeError::new_err(e.to_string());
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(&p).map_err(err)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&overrides).map_err(err)?;
    match command {
        "standardize" => to_python(py, &pipeline::cmd_standardize(&cfg).map_err(err)?),
        "featurize" => to_python(py, &pipeline::cmd_featurize(&cfg).map_err(err)?),
        "augment" => to_python(py, &pipeline::cmd_augment(&cfg).map_err(err)?),
        "pairs" => {
            let sets = pipeline::cmd_pairs(&cfg).map_err(err)?;
            to_python(py, &(sets.train.len(), sets.test.len()))
        }
        "train_sbs" => to_python(py, &pipeline::cmd_pipeline_train_sbs(&cfg).map_err(err)?),
        "train_mos" => to_python(py, &pipeline::cmd_pipeline_train_mos(&cfg).map_err(err)?),
        "evaluate" => to_python(py, &pipeline::cmd_evaluate(&cfg).map_err(err)?),
        "gate" => to_python(py, &pipeline::cmd_gate(&cfg).map_err(err)?),
        other => Err(PyValueError::new_err(format!("unknown command {other}"))),
    }
}

#[pymodule]
fn ttseval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(save_wav, m)?)?;
    m.add_function(wrap_pyfunction!(add_white_noise, m)?)?;
    m.add_function(wrap_pyfunction!(add_pink_noise, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_shift, m)?)?;
    m.add_function(wrap_pyfunction!(time_stretch, m)?)?;
    m.add_function(wrap_pyfunction!(text_embed, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(lcc, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(inter_rater_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(length_sorted_batches, m)?)?;
    m.add_function(wrap_pyfunction!(masked_sequence_pool, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<SbsModel>()?;
    m.add_class::<MosModel>()?;
    Ok(())
}
