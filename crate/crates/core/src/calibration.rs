//! ROC analysis and fixed decision-threshold selection.
//!
//! Decisions use `score >= threshold` everywhere. Candidate thresholds are
//! the distinct observed scores plus the sentinels 0.0 and 1.0. Criteria are
//! compared in exact integer arithmetic so ties are detected exactly and
//! resolved towards the smallest threshold.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Result, TilError};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(TilError::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            });
        }
        for &s in &scores {
            check_unit("score", s)?;
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            Err(TilError::SingleClass)
        } else {
            Ok((p, n))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by strictly increasing threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc_curve(s: &ScoredSet) -> Result<RocCurve> {
    let (positives, negatives) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    let mut candidates: Vec<f64> = Vec::with_capacity(s.len() + 2);
    candidates.push(0.0);
    candidates.extend(order.iter().map(|&i| s.scores[i]));
    candidates.push(1.0);
    candidates.dedup();

    // Sweep thresholds upwards; everything strictly below the threshold is
    // predicted negative.
    let mut points = Vec::with_capacity(candidates.len());
    let (mut below_pos, mut below_neg) = (0usize, 0usize);
    let mut cursor = 0;
    for &t in &candidates {
        while cursor < order.len() && s.scores[order[cursor]] < t {
            if s.labels[order[cursor]] {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            cursor += 1;
        }
        let tp = positives - below_pos;
        let fp = negatives - below_neg;
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            fnr: below_pos as f64 / positives as f64,
            tpr: tp as f64 / positives as f64,
            tp,
            fp,
            tn: below_neg,
            fn_: below_pos,
        });
    }

    Ok(RocCurve {
        points,
        auc: auc(s)?,
        positives,
        negatives,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, computed from mid-ranks.
pub fn auc(s: &ScoredSet) -> Result<f64> {
    let (positives, negatives) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    let mut positive_rank_sum = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && s.scores[order[end]] == s.scores[order[start]] {
            end += 1;
        }
        // Ranks start+1..=end share their mean.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| s.labels[i]).count();
        positive_rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// A rule that picks one ROC point as the operating threshold.
pub trait ThresholdCriterion: Send + Sync {
    fn name(&self) -> &'static str;

    /// Index into `roc.points` and the criterion value there.
    fn select(&self, roc: &RocCurve) -> (usize, f64);
}

/// Minimises |FPR − FNR|: the equal-error-rate point.
#[derive(Debug, Default, Clone, Copy)]
pub struct EqualErrorRate;

impl ThresholdCriterion for EqualErrorRate {
    fn name(&self) -> &'static str {
        "eer"
    }

    fn select(&self, roc: &RocCurve) -> (usize, f64) {
        let (p, n) = (roc.positives as i128, roc.negatives as i128);
        // |fp/n - fn/p| scaled by n*p.
        let key = |pt: &RocPoint| (pt.fp as i128 * p - pt.fn_ as i128 * n).abs();
        let best = first_extreme(&roc.points, |a, b| key(a) < key(b));
        let pt = &roc.points[best];
        (best, (pt.fpr - pt.fnr).abs())
    }
}

/// Classical Youden's J: maximises TPR − FPR.
#[derive(Debug, Default, Clone, Copy)]
pub struct YoudenJ;

impl ThresholdCriterion for YoudenJ {
    fn name(&self) -> &'static str {
        "youden-j"
    }

    fn select(&self, roc: &RocCurve) -> (usize, f64) {
        let (p, n) = (roc.positives as i128, roc.negatives as i128);
        let key = |pt: &RocPoint| pt.tp as i128 * n - pt.fp as i128 * p;
        let best = first_extreme(&roc.points, |a, b| key(a) > key(b));
        let pt = &roc.points[best];
        (best, pt.tpr - pt.fpr)
    }
}

// First index whose point is not beaten by any earlier one; points are in
// ascending threshold order so ties resolve to the smallest threshold.
fn first_extreme(points: &[RocPoint], better: impl Fn(&RocPoint, &RocPoint) -> bool) -> usize {
    let mut best = 0;
    for (i, pt) in points.iter().enumerate().skip(1) {
        if better(pt, &points[best]) {
            best = i;
        }
    }
    best
}

pub fn criterion_registry() -> Registry<dyn ThresholdCriterion> {
    let mut reg: Registry<dyn ThresholdCriterion> = Registry::new("threshold criterion");
    reg.register("eer", Arc::new(EqualErrorRate));
    reg.register("youden-j", Arc::new(YoudenJ));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub chosen_threshold: f64,
    pub criterion_value: f64,
    pub method: String,
    pub auc: f64,
    pub roc: RocCurve,
    pub validation_manifest_name: String,
    pub validation_size: usize,
}

pub fn calibrate(
    s: &ScoredSet,
    criterion: &dyn ThresholdCriterion,
    validation_manifest_name: &str,
) -> Result<CalibrationResult> {
    let roc = roc_curve(s)?;
    let (idx, criterion_value) = criterion.select(&roc);
    Ok(CalibrationResult {
        chosen_threshold: roc.points[idx].threshold,
        criterion_value,
        method: criterion.name().to_string(),
        auc: roc.auc,
        roc,
        validation_manifest_name: validation_manifest_name.to_string(),
        validation_size: s.len(),
    })
}

/// The fixed operating threshold: the candidate minimising |FPR − FNR|.
pub fn youden_threshold(s: &ScoredSet) -> Result<CalibrationResult> {
    calibrate(s, &EqualErrorRate, "")
}

pub fn apply_threshold(scores: &[f64], threshold: f64) -> Result<Vec<bool>> {
    check_unit("threshold", threshold)?;
    Ok(scores.iter().map(|&s| s >= threshold).collect())
}
