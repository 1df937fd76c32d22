//! Patch-level metrics across models and the region-level TIL counting
//! experiment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationManifest;
use crate::calibration::{apply_threshold, auc, ScoredSet};
use crate::cancer::CancerType;
use crate::error::{check_unit, Result, TilError};
use crate::inference::{score_checked, PatchScorer};
use crate::synthetic::REGION_PX;
use crate::tiling::PatchImage;
use crate::tilmap::TilMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(predictions: &[bool], truths: &[bool]) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(TilError::LengthMismatch {
                left: predictions.len(),
                right: truths.len(),
            });
        }
        if predictions.is_empty() {
            return Err(TilError::EmptyInput);
        }
        let mut c = Confusion::default();
        for (&p, &t) in predictions.iter().zip(truths) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Positive-class F1, `None` when neither predictions nor truths contain
    /// a positive.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Mean of the per-class F1 scores that are defined.
    pub fn macro_f1(&self) -> Option<f64> {
        let swapped = Confusion {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        };
        let defined: Vec<f64> = [self.f1(), swapped.f1()].into_iter().flatten().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    #[default]
    Positive,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMetrics {
    /// `null` in JSON when undefined.
    pub f1: Option<f64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub confusion: Confusion,
}

pub fn patch_metrics(predictions: &[bool], truths: &[bool]) -> Result<PatchMetrics> {
    patch_metrics_with(predictions, truths, F1Mode::Positive)
}

pub fn patch_metrics_with(predictions: &[bool], truths: &[bool], mode: F1Mode) -> Result<PatchMetrics> {
    let c = Confusion::from_pairs(predictions, truths)?;
    Ok(PatchMetrics {
        f1: match mode {
            F1Mode::Positive => c.f1(),
            F1Mode::Macro => c.macro_f1(),
        },
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        confusion: c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub f1: Option<f64>,
    pub accuracy: f64,
    /// `None` when the subset holds a single class.
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub threshold: f64,
    pub overall: MetricRow,
    pub per_cancer_type: BTreeMap<CancerType, MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub f1_mode: F1Mode,
    pub per_model: BTreeMap<String, ModelReport>,
}

/// Scores for one model over the test manifest, in record order.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub name: String,
    pub scores: Vec<f64>,
}

fn metric_row(scores: &[f64], truths: &[bool], threshold: f64, mode: F1Mode) -> Result<MetricRow> {
    let preds = apply_threshold(scores, threshold)?;
    let m = patch_metrics_with(&preds, truths, mode)?;
    let auc = match auc(&ScoredSet::new(scores.to_vec(), truths.to_vec())?) {
        Ok(a) => Some(a),
        Err(TilError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricRow {
        n: scores.len(),
        f1: m.f1,
        accuracy: m.accuracy,
        auc,
        confusion: m.confusion,
    })
}

fn check_thresholds<'a>(
    names: impl Iterator<Item = &'a str> + Clone,
    thresholds: &BTreeMap<String, f64>,
) -> Result<()> {
    for name in names.clone() {
        match thresholds.get(name) {
            None => return Err(TilError::MissingThreshold(name.to_string())),
            Some(&t) => check_unit("threshold", t)?,
        }
    }
    if let Some(extra) = thresholds.keys().find(|k| !names.clone().any(|n| n == k.as_str())) {
        return Err(TilError::UnknownThresholdModel(extra.clone()));
    }
    Ok(())
}

/// Builds the report from precomputed scores.
pub fn evaluate_scored(
    test: &AnnotationManifest,
    models: &[ModelScores],
    thresholds: &BTreeMap<String, f64>,
    mode: F1Mode,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(TilError::EmptyInput);
    }
    check_thresholds(models.iter().map(|m| m.name.as_str()), thresholds)?;
    let truths: Vec<bool> = test.records().iter().map(|r| r.label.is_positive()).collect();

    let mut by_type: BTreeMap<CancerType, Vec<usize>> = BTreeMap::new();
    for (i, r) in test.records().iter().enumerate() {
        by_type.entry(r.cancer_type).or_default().push(i);
    }

    let mut per_model = BTreeMap::new();
    for m in models {
        if m.scores.len() != truths.len() {
            return Err(TilError::LengthMismatch {
                left: m.scores.len(),
                right: truths.len(),
            });
        }
        let t = thresholds[&m.name];
        let overall = metric_row(&m.scores, &truths, t, mode)?;
        let mut per_cancer_type = BTreeMap::new();
        for (&ct, idx) in &by_type {
            let s: Vec<f64> = idx.iter().map(|&i| m.scores[i]).collect();
            let y: Vec<bool> = idx.iter().map(|&i| truths[i]).collect();
            per_cancer_type.insert(ct, metric_row(&s, &y, t, mode)?);
        }
        per_model.insert(
            m.name.clone(),
            ModelReport {
                threshold: t,
                overall,
                per_cancer_type,
            },
        );
    }
    Ok(EvalReport {
        n_test: test.len(),
        f1_mode: mode,
        per_model,
    })
}

/// Loads every test patch once.
pub fn load_test_patches(test: &AnnotationManifest) -> Result<Vec<PatchImage>> {
    test.records()
        .iter()
        .map(|r| {
            let mut p = PatchImage::load(&test.resolve_patch_path(r))?;
            p.grid_x = r.grid_x;
            p.grid_y = r.grid_y;
            Ok(p)
        })
        .collect()
}

pub fn score_patches_batched(model: &dyn PatchScorer, patches: &[PatchImage], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch_size.max(1)) {
        out.extend(score_checked(model, chunk)?);
    }
    Ok(out)
}

/// Looks up each test record in a set of TIL maps, for models whose only
/// artifact is their probability maps.
pub fn scores_from_maps(test: &AnnotationManifest, maps: &[TilMap]) -> Result<Vec<f64>> {
    let by_slide: HashMap<&str, &TilMap> = maps.iter().map(|m| (m.slide_id.as_str(), m)).collect();
    test.records()
        .iter()
        .map(|r| {
            let m = by_slide.get(r.slide_id.as_str()).ok_or_else(|| {
                TilError::InvalidArgument(format!("no TIL map for slide {}", r.slide_id))
            })?;
            if r.grid_x >= m.n_cols || r.grid_y >= m.n_rows {
                return Err(TilError::OutOfBounds {
                    grid_x: r.grid_x,
                    grid_y: r.grid_y,
                    n_cols: m.n_cols,
                    n_rows: m.n_rows,
                });
            }
            Ok(m.prob(r.grid_x, r.grid_y))
        })
        .collect()
}

pub fn evaluate_models(
    models: &[(&str, &dyn PatchScorer)],
    test: &AnnotationManifest,
    thresholds: &BTreeMap<String, f64>,
    mode: F1Mode,
) -> Result<EvalReport> {
    check_thresholds(models.iter().map(|(n, _)| *n), thresholds)?;
    let patches = load_test_patches(test)?;
    let mut scored = Vec::with_capacity(models.len());
    for (name, model) in models {
        scored.push(ModelScores {
            name: name.to_string(),
            scores: score_patches_batched(*model, &patches, 64)?,
        });
    }
    evaluate_scored(test, &scored, thresholds, mode)
}

/// Picks up to `per_bin` unmasked cells from each probability bin.
///
/// `edges` are ascending bin boundaries in [0, 1]; bin `i` is
/// `[edges[i], edges[i+1])`, with the last bin closed on the right.
/// Returned cells are grouped by bin, row-major within a bin.
pub fn stratified_cells(map: &TilMap, edges: &[f64], per_bin: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TilError::InvalidArgument("bin edges must be strictly ascending, at least two".into()));
    }
    for &e in edges {
        check_unit("bin edge", e)?;
    }
    let last = edges.len() - 2;
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); edges.len() - 1];
    for (i, (&p, &masked)) in map.probs().iter().zip(map.mask()).enumerate() {
        if masked {
            continue;
        }
        let bin = (0..=last).find(|&b| p >= edges[b] && (p < edges[b + 1] || (b == last && p <= edges[b + 1])));
        if let Some(b) = bin {
            bins[b].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for cells in bins {
        let mut picked: Vec<usize> = index::sample(&mut rng, cells.len(), per_bin.min(cells.len()))
            .into_iter()
            .map(|k| cells[k])
            .collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| map.coords(i)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TilLevel {
    Low,
    Medium,
    High,
}

impl TilLevel {
    pub const ALL: [TilLevel; 3] = [TilLevel::Low, TilLevel::Medium, TilLevel::High];

    pub fn ordinal(self) -> u32 {
        self as u32
    }

    pub fn from_ordinal(v: u32) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

impl fmt::Display for TilLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TilLevel::Low => "LOW",
            TilLevel::Medium => "MEDIUM",
            TilLevel::High => "HIGH",
        })
    }
}

impl FromStr for TilLevel {
    type Err = TilError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LOW" => Ok(TilLevel::Low),
            "MEDIUM" => Ok(TilLevel::Medium),
            "HIGH" => Ok(TilLevel::High),
            _ => Err(TilError::InvalidArgument(format!("unknown TIL level {s:?}"))),
        }
    }
}

/// Rounded mean of the ordinal ratings, halves rounding up.
pub fn consensus_label(expert_labels: &[TilLevel]) -> Result<TilLevel> {
    if expert_labels.is_empty() {
        return Err(TilError::EmptyInput);
    }
    let n = expert_labels.len() as u32;
    let sum: u32 = expert_labels.iter().map(|l| l.ordinal()).sum();
    Ok(TilLevel::from_ordinal((2 * sum + n) / (2 * n)).expect("mean of ordinals stays in range"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub region_id: String,
    pub expert_labels: Vec<TilLevel>,
    pub final_label: TilLevel,
    pub predicted_count: u32,
}

impl RegionRecord {
    pub fn new(region_id: impl Into<String>, expert_labels: Vec<TilLevel>, predicted_count: u32) -> Result<Self> {
        if predicted_count > 64 {
            return Err(TilError::InvalidArgument(format!("predicted count {predicted_count} exceeds 64")));
        }
        Ok(Self {
            region_id: region_id.into(),
            final_label: consensus_label(&expert_labels)?,
            expert_labels,
            predicted_count,
        })
    }
}

/// The 64 sub-patches of an 800×800 region, row-major.
pub fn region_subpatches(region: &RgbImage) -> Result<Vec<PatchImage>> {
    let (w, h) = region.dimensions();
    if (w, h) != (REGION_PX, REGION_PX) {
        return Err(TilError::WrongRegionSize {
            expected: REGION_PX,
            width: w,
            height: h,
        });
    }
    let sub = REGION_PX / 8;
    let mut out = Vec::with_capacity(64);
    for gy in 0..8 {
        for gx in 0..8 {
            let crop = image::imageops::crop_imm(region, gx * sub, gy * sub, sub, sub).to_image();
            out.push(PatchImage::new(gx, gy, crop)?);
        }
    }
    Ok(out)
}

pub fn region_cell_scores(model: &dyn PatchScorer, region: &RgbImage) -> Result<Vec<f64>> {
    score_checked(model, &region_subpatches(region)?)
}

pub fn region_count(model: &dyn PatchScorer, region: &RgbImage, threshold: f64) -> Result<u32> {
    let scores = region_cell_scores(model, region)?;
    Ok(apply_threshold(&scores, threshold)?.into_iter().filter(|&b| b).count() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
fn quantile(sorted: &[u32], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64)
}

impl Quantiles {
    pub fn of(sorted: &[u32]) -> Option<Self> {
        if sorted.is_empty() {
            return None;
        }
        Some(Self {
            min: sorted[0] as f64,
            q1: quantile(sorted, 0.25),
            median: quantile(sorted, 0.5),
            q3: quantile(sorted, 0.75),
            max: sorted[sorted.len() - 1] as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    /// Ascending.
    pub counts: Vec<u32>,
    pub quantiles: Option<Quantiles>,
}

/// Per-class count distributions; all three classes are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDistribution {
    pub classes: BTreeMap<TilLevel, ClassDistribution>,
}

pub fn region_distribution(records: &[RegionRecord]) -> RegionDistribution {
    let mut counts: BTreeMap<TilLevel, Vec<u32>> = TilLevel::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for r in records {
        counts.get_mut(&r.final_label).expect("all levels seeded").push(r.predicted_count);
    }
    let classes = counts
        .into_iter()
        .map(|(level, mut c)| {
            c.sort_unstable();
            let quantiles = Quantiles::of(&c);
            (level, ClassDistribution { counts: c, quantiles })
        })
        .collect();
    RegionDistribution { classes }
}

/// Writes `label,region_id,predicted_count` rows to `csv_path` and the
/// per-class quantiles to a sibling `<stem>.quantiles.json`. Returns the
/// JSON path.
pub fn write_plot_data(records: &[RegionRecord], csv_path: &Path) -> Result<PathBuf> {
    let mut csv = b"label,region_id,predicted_count\n".to_vec();
    let mut sorted: Vec<&RegionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.final_label, a.predicted_count, &a.region_id).cmp(&(b.final_label, b.predicted_count, &b.region_id)));
    for r in sorted {
        writeln!(csv, "{},{},{}", r.final_label, r.region_id, r.predicted_count).expect("write to Vec");
    }
    std::fs::write(csv_path, csv).map_err(|e| TilError::io(csv_path, e))?;

    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("regions");
    let json_path = csv_path.with_file_name(format!("{stem}.quantiles.json"));
    let dist = region_distribution(records);
    let json = serde_json::to_vec_pretty(&dist)?;
    std::fs::write(&json_path, json).map_err(|e| TilError::io(&json_path, e))?;
    Ok(json_path)
}
