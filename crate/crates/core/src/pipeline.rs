//! End-to-end commands behind the `ttseval` binary.
//!
//! Every command is a function of a [`RunConfig`]: it reads only configured
//! inputs and writes only under `output_dir`. Outputs are deterministic given
//! the config and seed, so reruns produce byte-identical artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{load_wav, save_wav};
use crate::augment::{self, AugmentError, AugmentSpec};
use crate::ensemble::{self, StackConfig, StackedFeature, StackedMosModel};
use crate::features::{
    text_embed, EmbeddingExtractor, EmbeddingTable, LogMelExtractor, MelConfig, Standardizer,
};
use crate::metrics::MetricsReport;
use crate::ratings::{self, ClipEntry, SbsPair, SplitManifest, DEFAULT_SIGMA_FLOOR};
use crate::sbs::{self, SbsModelFile, SbsTrainConfig};
use crate::util::clip_seed;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {origin} line {line}: {reason}")]
    ConfigSyntax { origin: String, line: usize, reason: String },
    #[error("unknown setting '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}'")]
    BadValue { key: String, value: String },
    #[error("setting '{0}' is required for this command")]
    MissingSetting(&'static str),
    #[error("input does not exist: {0}")]
    MissingInput(PathBuf),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("recipe line {line}: {source}")]
    Recipe { line: usize, source: AugmentError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn stage<E: Into<BoxError>>(name: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    MosThreshold,
    SbsWinrate,
}

/// All settings of a run. Loaded from a flat `key = value` file, then
/// overridden by command-line `key=value` pairs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    /// Precomputed embeddings (`clip_id<TAB>v1,v2,...`) used instead of audio when present.
    pub feature_cache: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub recipe: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub sigma_floor: f64,
    pub split_fraction: f64,
    pub n_pairs: usize,
    pub min_margin: f64,
    pub same_text_only: bool,
    pub text_dim: usize,
    pub mel: MelConfig,
    pub sbs: SbsTrainConfig,
    pub stack: StackConfig,
    pub gate_mode: GateMode,
    pub gate_threshold: f64,
    pub eval_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            ratings: None,
            feature_cache: None,
            model: None,
            recipe: None,
            alignments: None,
            candidates: None,
            baseline: None,
            predictions: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            split_fraction: 0.7,
            n_pairs: 90_000,
            min_margin: 0.3,
            same_text_only: true,
            text_dim: 64,
            mel: MelConfig::default(),
            sbs: SbsTrainConfig::default(),
            stack: StackConfig::default(),
            gate_mode: GateMode::MosThreshold,
            gate_threshold: 3.0,
            eval_threshold: 0.5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(PipelineError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

impl RunConfig {
    /// Applies one setting. Relative paths are resolved against `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), PipelineError> {
        let path = || {
            let p = PathBuf::from(value);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "manifest" => self.manifest = Some(path()),
            "ratings" => self.ratings = Some(path()),
            "feature_cache" => self.feature_cache = Some(path()),
            "model" => self.model = Some(path()),
            "recipe" => self.recipe = Some(path()),
            "alignments" => self.alignments = Some(path()),
            "candidates" => self.candidates = Some(path()),
            "baseline" => self.baseline = Some(path()),
            "predictions" => self.predictions = Some(path()),
            "output_dir" => self.output_dir = path(),
            "seed" => self.seed = parse(key, value)?,
            "sigma_floor" => self.sigma_floor = parse(key, value)?,
            "split_fraction" => self.split_fraction = parse(key, value)?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "min_margin" => self.min_margin = parse(key, value)?,
            "same_text_only" => self.same_text_only = parse_bool(key, value)?,
            "text_dim" => self.text_dim = parse(key, value)?,
            "mel.win" => self.mel.win = parse(key, value)?,
            "mel.hop" => self.mel.hop = parse(key, value)?,
            "mel.nfft" => self.mel.nfft = parse(key, value)?,
            "mel.n_mels" => self.mel.n_mels = parse(key, value)?,
            "mel.fmin" => self.mel.fmin = parse(key, value)?,
            "mel.fmax" => self.mel.fmax = parse(key, value)?,
            "sbs.learning_rate" => self.sbs.learning_rate = parse(key, value)?,
            "sbs.epochs" => self.sbs.epochs = parse(key, value)?,
            "sbs.batch_size" => self.sbs.batch_size = parse(key, value)?,
            "sbs.l2_weight" => self.sbs.l2_weight = parse(key, value)?,
            "sbs.init_scale" => self.sbs.init_scale = parse(key, value)?,
            "sbs.momentum" => self.sbs.momentum = parse(key, value)?,
            "sbs.projection_dim" => {
                self.sbs.projection_dim = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "stack.k_folds" => self.stack.k_folds = parse(key, value)?,
            "stack.ridge_lambda" => self.stack.ridge_lambda = parse(key, value)?,
            "svr.epsilon" => self.stack.svr.epsilon = parse(key, value)?,
            "svr.c" => self.stack.svr.c = parse(key, value)?,
            "svr.epochs" => self.stack.svr.epochs = parse(key, value)?,
            "svr.learning_rate" => self.stack.svr.learning_rate = parse(key, value)?,
            "svr.batch_size" => self.stack.svr.batch_size = parse(key, value)?,
            "tree.max_depth" => self.stack.tree_max_depth = parse(key, value)?,
            "tree.min_leaf" => self.stack.tree_min_leaf = parse(key, value)?,
            "meta.hidden" => self.stack.meta.hidden = parse(key, value)?,
            "meta.learning_rate" => self.stack.meta.learning_rate = parse(key, value)?,
            "meta.epochs" => self.stack.meta.epochs = parse(key, value)?,
            "meta.batch_size" => self.stack.meta.batch_size = parse(key, value)?,
            "meta.dropout" => self.stack.meta.dropout = parse(key, value)?,
            "meta.append_raw_features" => self.stack.meta.append_raw_features = parse_bool(key, value)?,
            "gate.mode" => {
                self.gate_mode = match value {
                    "mos_threshold" => GateMode::MosThreshold,
                    "sbs_winrate" => GateMode::SbsWinrate,
                    _ => {
                        return Err(PipelineError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "gate.threshold" => self.gate_threshold = parse(key, value)?,
            "eval.threshold" => self.eval_threshold = parse(key, value)?,
            _ => return Err(PipelineError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str, base: Option<&Path>) -> Result<(), PipelineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PipelineError::ConfigSyntax {
                origin: origin.to_string(),
                line: i + 1,
                reason: "expected key = value".into(),
            })?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    /// Reads a config file; its relative paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingInput(path.to_path_buf()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string(), path.parent())?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (relative paths resolve against the working directory).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), PipelineError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| PipelineError::ConfigSyntax {
                origin: "command line".into(),
                line: 0,
                reason: format!("expected key=value, got '{o}'"),
            })?;
            self.set(k.trim(), v.trim(), None)?;
        }
        Ok(())
    }

    /// Propagates the global seed into module configs.
    pub fn seeded_sbs(&self) -> SbsTrainConfig {
        SbsTrainConfig {
            seed: self.seed,
            ..self.sbs.clone()
        }
    }

    pub fn seeded_stack(&self) -> StackConfig {
        StackConfig {
            seed: self.seed,
            ..self.stack
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path, PipelineError> {
    let p = p.as_deref().ok_or(PipelineError::MissingSetting(name))?;
    if !p.exists() {
        return Err(PipelineError::MissingInput(p.to_path_buf()));
    }
    Ok(p)
}

fn optional<'a>(p: &'a Option<PathBuf>) -> Result<Option<&'a Path>, PipelineError> {
    match p.as_deref() {
        Some(p) if !p.exists() => Err(PipelineError::MissingInput(p.to_path_buf())),
        other => Ok(other),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// An artifact is reusable when its `.sha256` sidecar matches the input key.
fn cache_hit(artifact: &Path, key: &str) -> bool {
    artifact.exists() && fs::read_to_string(sidecar(artifact)).is_ok_and(|k| k.trim() == key)
}

fn sidecar(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

fn resolve_audio(manifest_path: &Path, entry: &ClipEntry) -> PathBuf {
    let p = PathBuf::from(&entry.audio_path);
    match manifest_path.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

/// Embeds every clip of a manifest, preferring the precomputed table.
/// Audio clips are embedded in parallel; the result is keyed by clip id.
pub fn embed_manifest(
    manifest_path: &Path,
    manifest: &[ClipEntry],
    table: Option<&EmbeddingTable>,
    mel: &MelConfig,
) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
    let extractor = LogMelExtractor { config: mel.clone() };
    let rows: Vec<(String, Vec<f64>)> = manifest
        .par_iter()
        .map(|c| {
            if let Some(v) = table.and_then(|t| t.get(&c.clip_id)) {
                return Ok((c.clip_id.clone(), v.to_vec()));
            }
            if c.audio_path.is_empty() {
                return Err(PipelineError::Invalid(format!(
                    "clip {} has no audio path and no precomputed embedding",
                    c.clip_id
                )));
            }
            let w = load_wav(resolve_audio(manifest_path, c)).map_err(stage("featurize"))?;
            let v = extractor.embed(&c.clip_id, Some(&w)).map_err(stage("featurize"))?;
            Ok((c.clip_id.clone(), v))
        })
        .collect::<Result<_, PipelineError>>()?;
    let dims: BTreeSet<usize> = rows.iter().map(|(_, v)| v.len()).collect();
    if dims.len() > 1 {
        return Err(PipelineError::Invalid(format!("embeddings have mixed dimensions {dims:?}")));
    }
    Ok(rows.into_iter().collect())
}

fn featurize_key(cfg: &RunConfig, manifest_path: &Path, manifest: &[ClipEntry]) -> Result<String, PipelineError> {
    let mut parts: Vec<Vec<u8>> = vec![fs::read(manifest_path)?, serde_json::to_vec(&cfg.mel)?];
    if let Some(t) = optional(&cfg.feature_cache)? {
        parts.push(fs::read(t)?);
    }
    for c in manifest {
        let p = resolve_audio(manifest_path, c);
        if !c.audio_path.is_empty() && p.exists() {
            parts.push(fs::read(p)?);
        }
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&refs))
}

/// Featurizes the configured manifest into `output_dir/features.tsv`, reusing
/// the file when the manifest, audio, and front-end settings are unchanged.
pub fn cmd_featurize(cfg: &RunConfig) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
    let manifest_path = require(&cfg.manifest, "manifest")?;
    let manifest = ratings::load_manifest(manifest_path).map_err(stage("manifest"))?;
    fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.join("features.tsv");
    let key = featurize_key(cfg, manifest_path, &manifest)?;
    if cache_hit(&out, &key) {
        info!("feature cache hit: {}", out.display());
        let t = EmbeddingTable::load(&out).map_err(stage("featurize"))?;
        if manifest.iter().all(|c| t.get(&c.clip_id).is_some()) {
            return Ok(t.vectors);
        }
    }
    let table = optional(&cfg.feature_cache)?
        .map(EmbeddingTable::load)
        .transpose()
        .map_err(stage("feature cache"))?;
    let emb = embed_manifest(manifest_path, &manifest, table.as_ref(), &cfg.mel)?;
    let mut t = EmbeddingTable::default();
    for (k, v) in &emb {
        t.insert(k.clone(), v.clone()).map_err(stage("featurize"))?;
    }
    t.save(&out).map_err(stage("featurize"))?;
    fs::write(sidecar(&out), format!("{key}\n"))?;
    info!("featurized {} clips", emb.len());
    Ok(emb)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizeReport {
    pub n_ratings: usize,
    pub n_raters: usize,
    pub n_clips: usize,
    pub sigma_floor: f64,
    pub inter_rater_rmse_raw: f64,
    pub inter_rater_rmse_std: f64,
}

#[derive(Serialize)]
struct RaterStatsRow<'a> {
    rater_id: &'a str,
    mu: f64,
    sigma: f64,
    count: usize,
}

/// Writes `std_ratings.csv`, `rater_stats.csv`, and `standardize_report.json`.
pub fn cmd_standardize(cfg: &RunConfig) -> Result<StandardizeReport, PipelineError> {
    let path = require(&cfg.ratings, "ratings")?;
    let records = ratings::load_ratings(path).map_err(stage("standardize"))?;
    let stats = ratings::rater_stats(&records);
    let std = ratings::standardize(&records, &stats, cfg.sigma_floor).map_err(stage("standardize"))?;
    let report = StandardizeReport {
        n_ratings: records.len(),
        n_raters: stats.len(),
        n_clips: records.iter().map(|r| r.clip_id.as_str()).collect::<BTreeSet<_>>().len(),
        sigma_floor: cfg.sigma_floor,
        inter_rater_rmse_raw: ratings::inter_rater_rmse_raw(&records).map_err(stage("standardize"))?,
        inter_rater_rmse_std: ratings::inter_rater_rmse_std(&std).map_err(stage("standardize"))?,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    ratings::save_rows(cfg.output_dir.join("std_ratings.csv"), &std).map_err(stage("standardize"))?;
    let rows: Vec<RaterStatsRow> = stats
        .iter()
        .map(|(id, s)| RaterStatsRow {
            rater_id: id,
            mu: s.mu,
            sigma: s.sigma,
            count: s.count,
        })
        .collect();
    ratings::save_rows(cfg.output_dir.join("rater_stats.csv"), &rows).map_err(stage("standardize"))?;
    write_json(&cfg.output_dir.join("standardize_report.json"), &report)?;
    Ok(report)
}

/// Standardized per-clip MOS from the configured ratings.
fn std_clip_mos(cfg: &RunConfig) -> Result<BTreeMap<String, f64>, PipelineError> {
    let path = require(&cfg.ratings, "ratings")?;
    let records = ratings::load_ratings(path).map_err(stage("ratings"))?;
    let stats = ratings::rater_stats(&records);
    let std = ratings::standardize(&records, &stats, cfg.sigma_floor).map_err(stage("ratings"))?;
    Ok(ratings::clip_mos(&std, true))
}

/// Pairs within one side of a split; the request is capped at what the side supports.
fn pairs_for(
    cfg: &RunConfig,
    mos: &BTreeMap<String, f64>,
    entries: &[ClipEntry],
    n: usize,
    seed: u64,
) -> Result<Vec<SbsPair>, PipelineError> {
    let n = n.max(1);
    match ratings::generate_pairs(mos, entries, n, cfg.min_margin, cfg.same_text_only, seed) {
        Err(ratings::RatingsError::InsufficientPairs { available, .. }) if available > 0 => {
            debug!("capping pair request {n} to {available}");
            ratings::generate_pairs(mos, entries, available, cfg.min_margin, cfg.same_text_only, seed)
                .map_err(stage("pairs"))
        }
        other => other.map_err(stage("pairs")),
    }
}

#[derive(Debug, Clone)]
pub struct PairSets {
    pub split: SplitManifest,
    pub train: Vec<SbsPair>,
    pub test: Vec<SbsPair>,
}

fn build_pairs(cfg: &RunConfig, manifest: &[ClipEntry], mos: &BTreeMap<String, f64>) -> Result<PairSets, PipelineError> {
    let split = ratings::split_by_text(manifest, cfg.split_fraction, cfg.seed).map_err(stage("split"))?;
    let side = |train: bool| -> Vec<ClipEntry> { split.select(manifest, train).into_iter().cloned().collect() };
    let n_train = ((cfg.n_pairs as f64) * cfg.split_fraction).round() as usize;
    let n_test = cfg.n_pairs.saturating_sub(n_train);
    let train = pairs_for(cfg, mos, &side(true), n_train, cfg.seed.wrapping_add(1))?;
    let test = pairs_for(cfg, mos, &side(false), n_test, cfg.seed.wrapping_add(2))?;
    Ok(PairSets { split, train, test })
}

/// Text ids of pairs; fallback pairs contribute both of their texts.
fn pair_texts(pairs: &[SbsPair], manifest: &[ClipEntry]) -> BTreeSet<String> {
    let text_of: BTreeMap<&str, &str> = manifest.iter().map(|c| (c.clip_id.as_str(), c.text_id.as_str())).collect();
    pairs
        .iter()
        .flat_map(|p| [p.clip_a.as_str(), p.clip_b.as_str()])
        .filter_map(|c| text_of.get(c).map(|t| t.to_string()))
        .collect()
}

/// Writes `split.csv`, `pairs_train.csv`, and `pairs_test.csv`.
pub fn cmd_pairs(cfg: &RunConfig) -> Result<PairSets, PipelineError> {
    let manifest_path = require(&cfg.manifest, "manifest")?;
    let manifest = ratings::load_manifest(manifest_path).map_err(stage("manifest"))?;
    let mos = std_clip_mos(cfg)?;
    let sets = build_pairs(cfg, &manifest, &mos)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut f = fs::File::create(cfg.output_dir.join("split.csv"))?;
    ratings::write_split(&mut f, &sets.split).map_err(stage("pairs"))?;
    f.flush()?;
    ratings::save_rows(cfg.output_dir.join("pairs_train.csv"), &sets.train).map_err(stage("pairs"))?;
    ratings::save_rows(cfg.output_dir.join("pairs_test.csv"), &sets.test).map_err(stage("pairs"))?;
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbsRunReport {
    pub n_clips: usize,
    pub n_train_texts: usize,
    pub n_test_texts: usize,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
    pub shared_texts: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_auc: f64,
    pub final_loss: f64,
    pub seed: u64,
}

/// Featurize, split by text, pair each side, train, and evaluate on held-out texts.
/// Writes `sbs_model.json`, `pairs_train.csv`, `pairs_test.csv`, and `sbs_metrics.json`.
pub fn cmd_pipeline_train_sbs(cfg: &RunConfig) -> Result<SbsRunReport, PipelineError> {
    let manifest_path = require(&cfg.manifest, "manifest")?;
    let manifest = ratings::load_manifest(manifest_path).map_err(stage("manifest"))?;
    let raw = cmd_featurize(cfg)?;
    let mos = std_clip_mos(cfg)?;
    let sets = build_pairs(cfg, &manifest, &mos)?;

    let shared = pair_texts(&sets.train, &manifest)
        .intersection(&pair_texts(&sets.test, &manifest))
        .count();
    if shared > 0 {
        return Err(PipelineError::Invalid(format!("{shared} text ids appear in both train and test pairs")));
    }

    // normalize with train-side statistics only, then append a constant coordinate
    let train_clips: BTreeSet<&str> = sets
        .train
        .iter()
        .flat_map(|p| [p.clip_a.as_str(), p.clip_b.as_str()])
        .collect();
    let train_rows: Vec<&[f64]> = train_clips
        .iter()
        .filter_map(|c| raw.get(*c).map(Vec::as_slice))
        .collect();
    let normalizer = Standardizer::fit(train_rows);
    let sbs_cfg = cfg.seeded_sbs();
    let prepared: BTreeMap<String, Vec<f64>> = raw
        .iter()
        .map(|(k, v)| {
            let mut z = normalizer.apply(v);
            z.push(1.0);
            (k.clone(), z)
        })
        .collect();

    let trained = sbs::train_sbs(&sets.train, &prepared, &sbs_cfg).map_err(stage("train-sbs"))?;
    let (train_accuracy, _) = sbs::evaluate_sbs(&trained.params, &sets.train, &prepared).map_err(stage("evaluate"))?;
    let (test_accuracy, test_auc) =
        sbs::evaluate_sbs(&trained.params, &sets.test, &prepared).map_err(stage("evaluate"))?;

    let mut model = SbsModelFile::new(&trained.params, sbs_cfg);
    model.normalizer = Some(normalizer);
    model.append_bias = true;
    fs::create_dir_all(&cfg.output_dir)?;
    model.save(cfg.output_dir.join("sbs_model.json")).map_err(stage("train-sbs"))?;
    ratings::save_rows(cfg.output_dir.join("pairs_train.csv"), &sets.train).map_err(stage("pairs"))?;
    ratings::save_rows(cfg.output_dir.join("pairs_test.csv"), &sets.test).map_err(stage("pairs"))?;

    let report = SbsRunReport {
        n_clips: raw.len(),
        n_train_texts: sets.split.train_text_ids.len(),
        n_test_texts: sets.split.test_text_ids.len(),
        n_train_pairs: sets.train.len(),
        n_test_pairs: sets.test.len(),
        shared_texts: shared,
        train_accuracy,
        test_accuracy,
        test_auc,
        final_loss: trained.loss_history.last().copied().unwrap_or(f64::NAN),
        seed: cfg.seed,
    };
    write_json(&cfg.output_dir.join("sbs_metrics.json"), &report)?;
    Ok(report)
}

/// Audio embedding followed by the hashed text embedding of the transcript.
fn stacked_features(
    cfg: &RunConfig,
    manifest: &[ClipEntry],
    audio: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<StackedFeature>, PipelineError> {
    manifest
        .iter()
        .map(|c| {
            let a = audio
                .get(&c.clip_id)
                .ok_or_else(|| PipelineError::Invalid(format!("no embedding for clip {}", c.clip_id)))?;
            Ok(StackedFeature::concat(
                c.clip_id.clone(),
                a,
                &text_embed(&c.transcript, cfg.text_dim, cfg.seed),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosRunReport {
    pub n_train_clips: usize,
    pub n_test_clips: usize,
    pub feature_dim: usize,
    pub test: MetricsReport,
    /// Why correlation metrics are absent, when they are.
    pub correlation_error: Option<String>,
    pub seed: u64,
}

/// Featurize audio and text, fit the stacked predictor on train texts, and
/// score held-out texts. Writes `mos_model.json`, `mos_predictions.csv`, and `mos_metrics.json`.
pub fn cmd_pipeline_train_mos(cfg: &RunConfig) -> Result<MosRunReport, PipelineError> {
    let manifest_path = require(&cfg.manifest, "manifest")?;
    let manifest = ratings::load_manifest(manifest_path).map_err(stage("manifest"))?;
    let audio = cmd_featurize(cfg)?;
    let mos = std_clip_mos(cfg)?;
    let rated: Vec<ClipEntry> = manifest.iter().filter(|c| mos.contains_key(&c.clip_id)).cloned().collect();
    let split = ratings::split_by_text(&rated, cfg.split_fraction, cfg.seed).map_err(stage("split"))?;
    let feats = stacked_features(cfg, &rated, &audio)?;
    let (train, test): (Vec<StackedFeature>, Vec<StackedFeature>) = feats
        .into_iter()
        .zip(&rated)
        .partition_map_by(|(_, c)| split.is_train(&c.text_id));
    if test.is_empty() {
        return Err(PipelineError::Invalid("no rated clips in the test split".into()));
    }
    let (model, _) = ensemble::fit_stack(&train, &mos, &cfg.seeded_stack()).map_err(stage("train-mos"))?;
    let preds = model.predict_batch(&test).map_err(stage("train-mos"))?;
    let targets: Vec<f64> = test.iter().map(|f| mos[&f.clip_id]).collect();
    let metrics = MetricsReport::regression(&preds, &targets).map_err(stage("evaluate"))?;
    let correlation_error = if metrics.lcc.is_none() {
        crate::metrics::PairedSeries::new(&preds, &targets)
            .and_then(crate::metrics::lcc)
            .err()
            .map(|e| e.to_string())
    } else {
        None
    };

    fs::create_dir_all(&cfg.output_dir)?;
    model.save(cfg.output_dir.join("mos_model.json")).map_err(stage("train-mos"))?;
    let rows: Vec<PredictionRow> = test
        .iter()
        .zip(preds.iter().zip(&targets))
        .map(|(f, (&prediction, &target))| PredictionRow {
            clip_id: f.clip_id.clone(),
            prediction,
            target,
        })
        .collect();
    ratings::save_rows(cfg.output_dir.join("mos_predictions.csv"), &rows).map_err(stage("train-mos"))?;
    let report = MosRunReport {
        n_train_clips: train.len(),
        n_test_clips: test.len(),
        feature_dim: model.feature_dim,
        test: metrics,
        correlation_error,
        seed: cfg.seed,
    };
    write_json(&cfg.output_dir.join("mos_metrics.json"), &report)?;
    Ok(report)
}

trait PartitionBy<A, B> {
    fn partition_map_by(self, f: impl Fn(&(A, B)) -> bool) -> (Vec<A>, Vec<A>);
}

impl<A, B, I: Iterator<Item = (A, B)>> PartitionBy<A, B> for I {
    fn partition_map_by(self, f: impl Fn(&(A, B)) -> bool) -> (Vec<A>, Vec<A>) {
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for item in self {
            if f(&item) {
                yes.push(item.0);
            } else {
                no.push(item.0);
            }
        }
        (yes, no)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PredictionRow {
    pub clip_id: String,
    pub prediction: f64,
    pub target: f64,
}

#[derive(Debug, serde::Deserialize)]
struct EvalRow {
    prediction: f64,
    target: f64,
    #[serde(default)]
    group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub utterance: MetricsReport,
    /// Metrics over per-group means, when a `group` column is present.
    pub group: Option<MetricsReport>,
}

/// Scores a `prediction,target[,group]` CSV. Targets that are all 0/1 are
/// treated as binary labels; otherwise regression metrics are reported.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateReport, PipelineError> {
    let path = require(&cfg.predictions, "predictions")?;
    let mut rdr = csv::Reader::from_path(path).map_err(stage("evaluate"))?;
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<EvalRow>().enumerate() {
        rows.push(r.map_err(|e| PipelineError::Stage {
            stage: "evaluate",
            source: format!("line {}: {e}", i + 2).into(),
        })?);
    }
    let preds: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
    let targets: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let binary = !targets.is_empty() && targets.iter().all(|&t| t == 0.0 || t == 1.0);
    let utterance = if binary {
        let labels: Vec<u8> = targets.iter().map(|&t| t as u8).collect();
        MetricsReport::binary(&preds, &labels, cfg.eval_threshold)
    } else {
        MetricsReport::regression(&preds, &targets)
    }
    .map_err(stage("evaluate"))?;
    let group = if !binary && rows.iter().all(|r| r.group.is_some()) && !rows.is_empty() {
        let keys: Vec<&str> = rows.iter().map(|r| r.group.as_deref().unwrap_or("")).collect();
        let gp = crate::metrics::group_means(&keys, &preds);
        let gt = crate::metrics::group_means(&keys, &targets);
        let p: Vec<f64> = gp.values().copied().collect();
        let t: Vec<f64> = gt.values().copied().collect();
        Some(MetricsReport::regression(&p, &t).map_err(stage("evaluate"))?)
    } else {
        None
    };
    let report = EvaluateReport { utterance, group };
    fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("eval_metrics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentRow {
    pub line: usize,
    pub clip_id: String,
    pub output: String,
    pub recipe_hash: String,
    pub specs: Vec<AugmentSpec>,
}

fn recipe_hash(specs: &[AugmentSpec]) -> Result<String, PipelineError> {
    Ok(sha256_hex(&[&serde_json::to_vec(specs)?])[..12].to_string())
}

/// Applies each recipe line to its clip. Output files are named
/// `<clip_id>_<recipe hash>.wav`; `augment_manifest.jsonl` records the
/// effective specs of every output. Spec seeds are mixed with the global seed and clip id.
pub fn cmd_augment(cfg: &RunConfig) -> Result<Vec<AugmentRow>, PipelineError> {
    let recipe_path = require(&cfg.recipe, "recipe")?;
    let manifest_path = require(&cfg.manifest, "manifest")?;
    let manifest = ratings::load_manifest(manifest_path).map_err(stage("manifest"))?;
    let by_id: BTreeMap<&str, &ClipEntry> = manifest.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let alignments = optional(&cfg.alignments)?
        .map(augment::load_alignments)
        .transpose()
        .map_err(stage("alignments"))?
        .unwrap_or_default();
    let text = fs::read_to_string(recipe_path)?;
    let mut jobs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let entry = augment::read_recipe(BufReader::new(raw.as_bytes()))
            .map_err(|source| PipelineError::Recipe { line, source })?
            .pop()
            .ok_or_else(|| PipelineError::Invalid(format!("recipe line {line} is empty")))?;
        augment::validate_pipeline(&entry.specs).map_err(|source| PipelineError::Recipe { line, source })?;
        if !by_id.contains_key(entry.clip_id.as_str()) {
            return Err(PipelineError::Invalid(format!(
                "recipe line {line}: clip {} is not in the manifest",
                entry.clip_id
            )));
        }
        let specs: Vec<AugmentSpec> = entry
            .specs
            .iter()
            .map(|s| AugmentSpec {
                op: s.op.clone(),
                seed: s.seed ^ clip_seed(cfg.seed, &entry.clip_id),
            })
            .collect();
        let hash = recipe_hash(&specs)?;
        jobs.push(AugmentRow {
            line,
            output: format!("augmented/{}_{hash}.wav", entry.clip_id),
            clip_id: entry.clip_id,
            recipe_hash: hash,
            specs,
        });
    }
    fs::create_dir_all(cfg.output_dir.join("augmented"))?;
    jobs.par_iter()
        .map(|job| {
            let w = load_wav(resolve_audio(manifest_path, by_id[job.clip_id.as_str()])).map_err(stage("augment"))?;
            let out = augment::apply_pipeline(&w, &job.specs, alignments.get(&job.clip_id))
                .map_err(|source| PipelineError::Recipe { line: job.line, source })?;
            save_wav(&out, cfg.output_dir.join(&job.output)).map_err(stage("augment"))?;
            Ok(())
        })
        .collect::<Result<Vec<()>, PipelineError>>()?;
    let mut f = fs::File::create(cfg.output_dir.join("augment_manifest.jsonl"))?;
    for row in &jobs {
        serde_json::to_writer(&mut f, row)?;
        f.write_all(b"\n")?;
    }
    info!("augmented {} clips", jobs.len());
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub mode: GateMode,
    pub threshold: f64,
    /// Mean predicted MOS, or the candidate win rate.
    pub statistic: f64,
    pub n_comparisons: usize,
    pub passed: bool,
    /// Predicted MOS per candidate, or its mean win probability against the baseline.
    pub clips: Vec<ClipScore>,
}

fn gate_embeddings(
    cfg: &RunConfig,
    path: &Path,
) -> Result<(Vec<ClipEntry>, BTreeMap<String, Vec<f64>>), PipelineError> {
    let manifest = ratings::load_manifest(path).map_err(stage("gate"))?;
    if manifest.is_empty() {
        return Err(PipelineError::Invalid(format!("clip set {} is empty", path.display())));
    }
    let table = optional(&cfg.feature_cache)?
        .map(EmbeddingTable::load)
        .transpose()
        .map_err(stage("feature cache"))?;
    let emb = embed_manifest(path, &manifest, table.as_ref(), &cfg.mel)?;
    Ok((manifest, emb))
}

/// Release gate. `mos_threshold` passes when the mean predicted MOS of the
/// candidates reaches the threshold; `sbs_winrate` passes when the fraction of
/// candidate-vs-baseline comparisons (distinct clip ids) won with p > 0.5 does.
pub fn cmd_gate(cfg: &RunConfig) -> Result<GateReport, PipelineError> {
    let model_path = require(&cfg.model, "model")?;
    let cand_path = require(&cfg.candidates, "candidates")?;
    let (cands, cand_emb) = gate_embeddings(cfg, cand_path)?;
    let report = match cfg.gate_mode {
        GateMode::MosThreshold => {
            let model = StackedMosModel::load(model_path).map_err(stage("gate"))?;
            let feats = stacked_features(cfg, &cands, &cand_emb)?;
            let preds = model.predict_batch(&feats).map_err(stage("gate"))?;
            let mean = preds.iter().sum::<f64>() / preds.len() as f64;
            GateReport {
                mode: cfg.gate_mode,
                threshold: cfg.gate_threshold,
                statistic: mean,
                n_comparisons: preds.len(),
                passed: mean >= cfg.gate_threshold,
                clips: feats
                    .iter()
                    .zip(preds)
                    .map(|(f, score)| ClipScore {
                        clip_id: f.clip_id.clone(),
                        score,
                    })
                    .collect(),
            }
        }
        GateMode::SbsWinrate => {
            let base_path = require(&cfg.baseline, "baseline")?;
            let (base, base_emb) = gate_embeddings(cfg, base_path)?;
            let file = SbsModelFile::load(model_path).map_err(stage("gate"))?;
            let params = file.params().map_err(stage("gate"))?;
            let prep = |e: &BTreeMap<String, Vec<f64>>, id: &str| file.prepare(&e[id]);
            let base_prepared: Vec<(String, Vec<f64>)> =
                base.iter().map(|b| (b.clip_id.clone(), prep(&base_emb, &b.clip_id))).collect();
            let per_clip: Vec<(ClipScore, usize, usize)> = cands
                .par_iter()
                .map(|c| {
                    let za = prep(&cand_emb, &c.clip_id);
                    let (mut wins, mut n, mut psum) = (0usize, 0usize, 0.0);
                    for (bid, zb) in &base_prepared {
                        if *bid == c.clip_id {
                            continue;
                        }
                        let p = sbs::predict(&params, &za, zb).map_err(stage("gate"))?;
                        wins += usize::from(p > 0.5);
                        n += 1;
                        psum += p;
                    }
                    let score = if n > 0 { psum / n as f64 } else { f64::NAN };
                    Ok((
                        ClipScore {
                            clip_id: c.clip_id.clone(),
                            score,
                        },
                        wins,
                        n,
                    ))
                })
                .collect::<Result<_, PipelineError>>()?;
            let wins: usize = per_clip.iter().map(|x| x.1).sum();
            let n: usize = per_clip.iter().map(|x| x.2).sum();
            if n == 0 {
                return Err(PipelineError::Invalid("no candidate-baseline comparisons".into()));
            }
            let rate = wins as f64 / n as f64;
            GateReport {
                mode: cfg.gate_mode,
                threshold: cfg.gate_threshold,
                statistic: rate,
                n_comparisons: n,
                passed: rate >= cfg.gate_threshold,
                clips: per_clip.into_iter().map(|x| x.0).collect(),
            }
        }
    };
    fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("gate_report.json"), &report)?;
    Ok(report)
}
