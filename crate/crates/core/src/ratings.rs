//! Rating ingestion, per-rater standardization and SBS pair construction.
//!
//! Each rater's scores are z-normalized with that rater's own mean and
//! standard deviation, then a single global affine map sends the observed
//! z range to [1, 5]. Clip MOS is the mean over raters of either the raw or
//! the standardized score.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::rng;

/// Default floor on a rater's standard deviation.
pub const DEFAULT_SIGMA_FLOOR: f64 = 0.25;

#[derive(Debug, Error)]
pub enum RatingsError {
    #[error("no rating records")]
    Empty,
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("rater {rater_id} rated clip {clip_id} more than once")]
    DuplicateRating { rater_id: String, clip_id: String },
    #[error("score {score} for clip {clip_id} is outside [1, 5]")]
    ScoreOutOfRange { clip_id: String, score: f64 },
    #[error("no statistics for rater {0}")]
    MissingRater(String),
    #[error("no clip has two or more ratings")]
    NoMultiplyRatedClip,
    #[error("need at least 2 distinct text ids, found {0}")]
    TooFewTexts(usize),
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("requested {requested} pairs but only {available} eligible pairs exist")]
    InsufficientPairs { requested: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub clip_id: String,
    pub system_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaterStats {
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdRatingRecord {
    pub rater_id: String,
    pub clip_id: String,
    pub system_id: String,
    pub score: f64,
    pub z: f64,
    pub std_score: f64,
}

/// One row of the clip manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub text_id: String,
    #[serde(default)]
    pub transcript: String,
    #[serde(default)]
    pub audio_path: String,
}

/// Ordered clip pair; `label` is 1 when `clip_a` is preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbsPair {
    pub clip_a: String,
    pub clip_b: String,
    pub label: u8,
    pub margin: f64,
    pub text_id: String,
}

impl SbsPair {
    pub fn swapped(&self) -> Self {
        Self {
            clip_a: self.clip_b.clone(),
            clip_b: self.clip_a.clone(),
            label: 1 - self.label,
            margin: self.margin,
            text_id: self.text_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub train_text_ids: BTreeSet<String>,
    pub test_text_ids: BTreeSet<String>,
    pub fraction: f64,
}

impl SplitManifest {
    pub fn is_train(&self, text_id: &str) -> bool {
        self.train_text_ids.contains(text_id)
    }

    /// Manifest rows whose text id is on the requested side.
    pub fn select<'a>(&self, manifest: &'a [ClipEntry], train: bool) -> Vec<&'a ClipEntry> {
        let side = if train { &self.train_text_ids } else { &self.test_text_ids };
        manifest.iter().filter(|c| side.contains(&c.text_id)).collect()
    }
}

/// Checks score range and (rater, clip) uniqueness.
pub fn validate_records(records: &[RatingRecord]) -> Result<(), RatingsError> {
    if records.is_empty() {
        return Err(RatingsError::Empty);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !(1.0..=5.0).contains(&r.score) {
            return Err(RatingsError::ScoreOutOfRange {
                clip_id: r.clip_id.clone(),
                score: r.score,
            });
        }
        if !seen.insert((r.rater_id.as_str(), r.clip_id.as_str())) {
            return Err(RatingsError::DuplicateRating {
                rater_id: r.rater_id.clone(),
                clip_id: r.clip_id.clone(),
            });
        }
    }
    Ok(())
}

/// Per-rater population mean and standard deviation.
pub fn rater_stats(records: &[RatingRecord]) -> BTreeMap<String, RaterStats> {
    let mut by_rater: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_rater.entry(&r.rater_id).or_default().push(r.score);
    }
    by_rater
        .into_iter()
        .map(|(id, scores)| {
            let n = scores.len() as f64;
            let mu = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
            (
                id.to_string(),
                RaterStats {
                    mu,
                    sigma: var.sqrt(),
                    count: scores.len(),
                },
            )
        })
        .collect()
}

/// z-scores each rating with its rater's moments, then rescales all z values
/// with one affine map onto [1, 5].
pub fn standardize(
    records: &[RatingRecord],
    stats: &BTreeMap<String, RaterStats>,
    sigma_floor: f64,
) -> Result<Vec<StdRatingRecord>, RatingsError> {
    let zs = records
        .iter()
        .map(|r| {
            let s = stats
                .get(&r.rater_id)
                .ok_or_else(|| RatingsError::MissingRater(r.rater_id.clone()))?;
            Ok((r.score - s.mu) / s.sigma.max(sigma_floor))
        })
        .collect::<Result<Vec<f64>, RatingsError>>()?;
    let min_z = zs.iter().copied().fold(f64::INFINITY, f64::min);
    let max_z = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(records
        .iter()
        .zip(zs)
        .map(|(r, z)| {
            let std_score = if max_z > min_z {
                (1.0 + 4.0 * (z - min_z) / (max_z - min_z)).clamp(1.0, 5.0)
            } else {
                3.0
            };
            StdRatingRecord {
                rater_id: r.rater_id.clone(),
                clip_id: r.clip_id.clone(),
                system_id: r.system_id.clone(),
                score: r.score,
                z,
                std_score,
            }
        })
        .collect())
}

fn mean_by_clip<'a>(items: impl Iterator<Item = (&'a str, f64)>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (clip, s) in items {
        let e = acc.entry(clip).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k.to_string(), sum / n as f64))
        .collect()
}

/// Per-clip mean of raw scores (`use_std == false`) or standardized scores.
pub fn clip_mos(records: &[StdRatingRecord], use_std: bool) -> BTreeMap<String, f64> {
    mean_by_clip(
        records
            .iter()
            .map(|r| (r.clip_id.as_str(), if use_std { r.std_score } else { r.score })),
    )
}

pub fn clip_mos_raw(records: &[RatingRecord]) -> BTreeMap<String, f64> {
    mean_by_clip(records.iter().map(|r| (r.clip_id.as_str(), r.score)))
}

/// RMSE of each rating against the leave-one-out mean of the other ratings of
/// the same clip, over every clip with at least two ratings.
pub fn inter_rater_rmse<'a>(
    ratings: impl IntoIterator<Item = (&'a str, f64)>,
) -> Result<f64, RatingsError> {
    let mut by_clip: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (clip, s) in ratings {
        by_clip.entry(clip).or_default().push(s);
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    for scores in by_clip.values().filter(|v| v.len() >= 2) {
        let total: f64 = scores.iter().sum();
        let others = (scores.len() - 1) as f64;
        for &y in scores {
            let loo = (total - y) / others;
            sq += (y - loo).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(RatingsError::NoMultiplyRatedClip);
    }
    Ok((sq / n as f64).sqrt())
}

pub fn inter_rater_rmse_raw(records: &[RatingRecord]) -> Result<f64, RatingsError> {
    inter_rater_rmse(records.iter().map(|r| (r.clip_id.as_str(), r.score)))
}

pub fn inter_rater_rmse_std(records: &[StdRatingRecord]) -> Result<f64, RatingsError> {
    inter_rater_rmse(records.iter().map(|r| (r.clip_id.as_str(), r.std_score)))
}

/// Text-disjoint split: shuffled text ids, the first `ceil(fraction * N)` go to train.
pub fn split_by_text(
    manifest: &[ClipEntry],
    fraction: f64,
    seed: u64,
) -> Result<SplitManifest, RatingsError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(RatingsError::BadFraction(fraction));
    }
    let texts: BTreeSet<&str> = manifest.iter().map(|c| c.text_id.as_str()).collect();
    if texts.len() < 2 {
        return Err(RatingsError::TooFewTexts(texts.len()));
    }
    let mut order: Vec<&str> = texts.into_iter().collect();
    order.shuffle(&mut rng(seed));
    let n = order.len();
    let n_train = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    Ok(SplitManifest {
        train_text_ids: order[..n_train].iter().map(|s| s.to_string()).collect(),
        test_text_ids: order[n_train..].iter().map(|s| s.to_string()).collect(),
        fraction,
    })
}

/// Above this many candidate pairs, unrestricted sampling switches from
/// enumeration to rejection sampling.
const ENUMERATION_LIMIT: usize = 4_000_000;

/// Samples `n_pairs` distinct unordered clip pairs with MOS margin strictly
/// above `min_margin`, then orients each pair by a fair coin.
///
/// With `same_text_only`, pairs share a text id; clips whose text has no
/// other clip may pair with any clip (their `text_id` is then `a|b`).
pub fn generate_pairs(
    clip_mos: &BTreeMap<String, f64>,
    manifest: &[ClipEntry],
    n_pairs: usize,
    min_margin: f64,
    same_text_only: bool,
    seed: u64,
) -> Result<Vec<SbsPair>, RatingsError> {
    if n_pairs == 0 || !(min_margin >= 0.0) {
        return Err(RatingsError::InvalidArgument(format!(
            "n_pairs must be >= 1 and min_margin >= 0 (got {n_pairs}, {min_margin})"
        )));
    }
    // deterministic clip order, restricted to clips with a MOS
    let mut clips: Vec<(&str, &str, f64)> = manifest
        .iter()
        .filter_map(|c| clip_mos.get(&c.clip_id).map(|&m| (c.clip_id.as_str(), c.text_id.as_str(), m)))
        .collect();
    clips.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
    clips.dedup_by(|a, b| a.0 == b.0);
    let eligible = |i: usize, j: usize| (clips[i].2 - clips[j].2).abs() > min_margin;

    let mut r = rng(seed);
    let n = clips.len();
    let total_unrestricted = n * n.saturating_sub(1) / 2;

    let chosen: Vec<(usize, usize)> = if same_text_only || total_unrestricted <= ENUMERATION_LIMIT {
        let mut cand = Vec::new();
        if same_text_only {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, c) in clips.iter().enumerate() {
                groups.entry(c.1).or_default().push(i);
            }
            let mut singles = Vec::new();
            for idx in groups.values() {
                if idx.len() < 2 {
                    singles.extend_from_slice(idx);
                    continue;
                }
                for (p, &i) in idx.iter().enumerate() {
                    for &j in &idx[p + 1..] {
                        if eligible(i, j) {
                            cand.push((i, j));
                        }
                    }
                }
            }
            let mut is_single = vec![false; n];
            singles.iter().for_each(|&s| is_single[s] = true);
            for &s in &singles {
                for j in 0..n {
                    // a single-single pair is emitted once, from its lower index
                    if j == s || (is_single[j] && j < s) {
                        continue;
                    }
                    if eligible(s, j) {
                        cand.push((s.min(j), s.max(j)));
                    }
                }
            }
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    if eligible(i, j) {
                        cand.push((i, j));
                    }
                }
            }
        }
        if cand.len() < n_pairs {
            return Err(RatingsError::InsufficientPairs {
                requested: n_pairs,
                available: cand.len(),
            });
        }
        cand.shuffle(&mut r);
        cand.truncate(n_pairs);
        cand
    } else {
        let mut seen = HashSet::with_capacity(n_pairs);
        let mut out = Vec::with_capacity(n_pairs);
        let max_draws = n_pairs.saturating_mul(200).max(1_000_000);
        let mut draws = 0;
        while out.len() < n_pairs {
            if draws >= max_draws {
                return Err(RatingsError::InsufficientPairs {
                    requested: n_pairs,
                    available: out.len(),
                });
            }
            draws += 1;
            let i = r.random_range(0..n);
            let j = r.random_range(0..n);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if eligible(key.0, key.1) && seen.insert(key) {
                out.push(key);
            }
        }
        out
    };

    Ok(chosen
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = if r.random_bool(0.5) { (i, j) } else { (j, i) };
            let (ca, cb) = (clips[a], clips[b]);
            let text_id = if ca.1 == cb.1 {
                ca.1.to_string()
            } else {
                let (lo, hi) = if ca.1 < cb.1 { (ca.1, cb.1) } else { (cb.1, ca.1) };
                format!("{lo}|{hi}")
            };
            SbsPair {
                clip_a: ca.0.to_string(),
                clip_b: cb.0.to_string(),
                label: u8::from(ca.2 > cb.2),
                margin: (ca.2 - cb.2).abs(),
                text_id,
            }
        })
        .collect())
}

fn row_error(e: csv::Error) -> RatingsError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => RatingsError::MalformedRow {
            line,
            reason: err.to_string(),
        },
        _ => RatingsError::MalformedRow {
            line,
            reason: e.to_string(),
        },
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(
    reader: impl Read,
    header: &[&str],
) -> Result<Vec<T>, RatingsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for h in header {
        if !found.iter().any(|f| f == h) {
            return Err(RatingsError::MalformedRow {
                line: 1,
                reason: format!("missing column {h} (header is {})", found.join(",")),
            });
        }
    }
    rdr.deserialize().map(|r| r.map_err(row_error)).collect()
}

/// Reads `rater_id,clip_id,system_id,score` and validates the records.
pub fn read_ratings(reader: impl Read) -> Result<Vec<RatingRecord>, RatingsError> {
    let rows: Vec<RatingRecord> = read_rows(reader, &["rater_id", "clip_id", "system_id", "score"])?;
    validate_records(&rows)?;
    Ok(rows)
}

pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, RatingsError> {
    read_ratings(std::fs::File::open(path)?)
}

/// Reads `clip_id,text_id,transcript,audio_path`.
pub fn read_manifest(reader: impl Read) -> Result<Vec<ClipEntry>, RatingsError> {
    read_rows(reader, &["clip_id", "text_id"])
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipEntry>, RatingsError> {
    read_manifest(std::fs::File::open(path)?)
}

pub fn read_pairs(reader: impl Read) -> Result<Vec<SbsPair>, RatingsError> {
    read_rows(reader, &["clip_a", "clip_b", "label", "margin", "text_id"])
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SbsPair>, RatingsError> {
    read_pairs(std::fs::File::open(path)?)
}

pub fn write_rows<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<(), RatingsError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), RatingsError> {
    write_rows(std::fs::File::create(path)?, rows)
}

/// Writes `text_id,split` lines in text-id order.
pub fn write_split(writer: impl Write, split: &SplitManifest) -> Result<(), RatingsError> {
    #[derive(Serialize)]
    struct Row<'a> {
        text_id: &'a str,
        split: &'static str,
    }
    let mut rows: Vec<Row> = split
        .train_text_ids
        .iter()
        .map(|t| Row { text_id: t, split: "train" })
        .chain(split.test_text_ids.iter().map(|t| Row { text_id: t, split: "test" }))
        .collect();
    rows.sort_by(|a, b| a.text_id.cmp(b.text_id));
    write_rows(writer, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rater: &str, clip: &str, score: f64) -> RatingRecord {
        RatingRecord {
            rater_id: rater.into(),
            clip_id: clip.into(),
            system_id: "sys".into(),
            score,
        }
    }

    fn entry(clip: &str, text: &str) -> ClipEntry {
        ClipEntry {
            clip_id: clip.into(),
            text_id: text.into(),
            transcript: String::new(),
            audio_path: String::new(),
        }
    }

    #[test]
    fn textbook_moments() {
        let recs: Vec<_> = (1..=5).map(|s| rec("r", &format!("c{s}"), s as f64)).collect();
        let st = rater_stats(&recs)["r"];
        assert_eq!(st.mu, 3.0);
        assert!((st.sigma - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(st.count, 5);
        let one = rater_stats(&[rec("q", "c", 4.0)])["q"];
        assert_eq!((one.mu, one.sigma), (4.0, 0.0));
    }

    #[test]
    fn standardize_closed_form() {
        let recs = vec![rec("r", "a", 1.0), rec("r", "b", 3.0), rec("r", "c", 5.0)];
        let st = rater_stats(&recs);
        let out = standardize(&recs, &st, DEFAULT_SIGMA_FLOOR).unwrap();
        let zs: Vec<f64> = out.iter().map(|r| r.z).collect();
        let k = 1.5f64.sqrt(); // 2 / sqrt(8/3)
        assert!((zs[0] + k).abs() < 1e-12 && zs[1].abs() < 1e-12 && (zs[2] - k).abs() < 1e-12);
        let std: Vec<f64> = out.iter().map(|r| r.std_score).collect();
        assert_eq!(std, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn degenerate_panel_maps_to_three() {
        let recs = vec![rec("r", "a", 4.0), rec("r", "b", 4.0), rec("q", "a", 2.0)];
        let out = standardize(&recs, &rater_stats(&recs), DEFAULT_SIGMA_FLOOR).unwrap();
        assert!(out.iter().all(|r| r.std_score == 3.0));
    }

    #[test]
    fn missing_rater_is_an_error() {
        let recs = vec![rec("r", "a", 4.0)];
        assert!(matches!(
            standardize(&recs, &BTreeMap::new(), 0.25),
            Err(RatingsError::MissingRater(_))
        ));
    }

    #[test]
    fn clip_means() {
        let recs = vec![
            rec("r1", "a", 4.0),
            rec("r2", "a", 4.0),
            rec("r3", "a", 4.0),
            rec("r1", "b", 3.0),
            rec("r2", "b", 5.0),
        ];
        let m = clip_mos_raw(&recs);
        assert_eq!(m["a"], 4.0);
        assert_eq!(m["b"], 4.0);
    }

    #[test]
    fn inter_rater_rmse_cases() {
        let same = vec![rec("r1", "a", 3.0), rec("r2", "a", 3.0), rec("r1", "b", 5.0), rec("r2", "b", 5.0)];
        assert_eq!(inter_rater_rmse_raw(&same).unwrap(), 0.0);
        let split = vec![rec("r1", "a", 3.0), rec("r2", "a", 5.0)];
        assert_eq!(inter_rater_rmse_raw(&split).unwrap(), 2.0);
        let single = vec![rec("r1", "a", 3.0), rec("r1", "b", 5.0)];
        assert!(matches!(inter_rater_rmse_raw(&single), Err(RatingsError::NoMultiplyRatedClip)));
    }

    #[test]
    fn split_seventy_thirty() {
        let m: Vec<_> = (0..10)
            .flat_map(|t| (0..3).map(move |c| entry(&format!("c{t}_{c}"), &format!("t{t}"))))
            .collect();
        let s = split_by_text(&m, 0.7, 42).unwrap();
        assert_eq!(s.train_text_ids.len(), 7);
        assert_eq!(s.test_text_ids.len(), 3);
        assert!(s.train_text_ids.is_disjoint(&s.test_text_ids));
        assert_eq!(s, split_by_text(&m, 0.7, 42).unwrap());
        assert!(matches!(split_by_text(&m[..3], 0.7, 1), Err(RatingsError::TooFewTexts(1))));
        assert!(split_by_text(&m, 1.0, 1).is_err());
    }

    #[test]
    fn two_clip_pair() {
        let mos: BTreeMap<String, f64> = [("hi".to_string(), 4.2), ("lo".to_string(), 3.1)].into();
        let m = vec![entry("hi", "t"), entry("lo", "t")];
        let pairs = generate_pairs(&mos, &m, 1, 0.0, true, 3).unwrap();
        assert_eq!(pairs.len(), 1);
        let p = &pairs[0];
        assert!((p.margin - 1.1).abs() < 1e-12);
        let winner = if p.label == 1 { &p.clip_a } else { &p.clip_b };
        assert_eq!(winner, "hi");
        assert!(matches!(
            generate_pairs(&mos, &m, 2, 0.0, true, 3),
            Err(RatingsError::InsufficientPairs { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn ties_are_never_emitted() {
        let mos: BTreeMap<String, f64> = [("a".to_string(), 3.0), ("b".to_string(), 3.0), ("c".to_string(), 4.0)].into();
        let m = vec![entry("a", "t"), entry("b", "t"), entry("c", "t")];
        let pairs = generate_pairs(&mos, &m, 2, 0.0, true, 0).unwrap();
        assert!(pairs.iter().all(|p| p.margin > 0.0));
    }

    #[test]
    fn singleton_texts_fall_back_to_cross_text_pairs() {
        let mos: BTreeMap<String, f64> = [("a".to_string(), 2.0), ("b".to_string(), 4.0)].into();
        let m = vec![entry("a", "t1"), entry("b", "t2")];
        let pairs = generate_pairs(&mos, &m, 1, 0.0, true, 0).unwrap();
        assert_eq!(pairs[0].text_id, "t1|t2");
    }

    #[test]
    fn ratings_csv_reports_line_numbers() {
        let good = "rater_id,clip_id,system_id,score\nr1,c1,s1,4\nr2,c1,s1,3.5\n";
        assert_eq!(read_ratings(good.as_bytes()).unwrap().len(), 2);
        let bad = "rater_id,clip_id,system_id,score\nr1,c1,s1,4\nr2,c1,s1,abc\n";
        match read_ratings(bad.as_bytes()) {
            Err(RatingsError::MalformedRow { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_ratings("rater_id,clip_id,system_id,score\n".as_bytes()),
            Err(RatingsError::Empty)
        ));
        assert!(matches!(
            read_ratings("rater_id,clip_id,system_id,score\nr,c,s,7\n".as_bytes()),
            Err(RatingsError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            read_ratings("rater_id,clip_id,system_id,score\nr,c,s,3\nr,c,s,4\n".as_bytes()),
            Err(RatingsError::DuplicateRating { .. })
        ));
        assert!(read_ratings("rater,clip,score\nr,c,3\n".as_bytes()).is_err());
    }

    #[test]
    fn split_file_format() {
        let split = SplitManifest {
            train_text_ids: ["b".to_string()].into(),
            test_text_ids: ["a".to_string()].into(),
            fraction: 0.5,
        };
        let mut buf = Vec::new();
        write_split(&mut buf, &split).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "text_id,split\na,test\nb,train\n");
    }
}
