//! Frame-wise and segmental quality measures for action segmentation.
//!
//! * MoF: fraction of frames whose predicted label equals the ground truth.
//!   MoF-BG restricts the count to frames whose ground truth is not
//!   background.
//! * IoU / IoD: for every non-background ground-truth segment, take the
//!   predicted segment of the same label with the largest overlap and score
//!   `I / |gt ∪ pred|` and `I / |pred|`; average over ground-truth segments.
//! * Edit: `1 - lev(a, b) / max(|a|, |b|)` on the run-length label sequences.
//! * F1@τ: predicted non-background segments are matched greedily, in temporal
//!   order, to the unmatched ground-truth segment of the same label with the
//!   highest IoU; a match counts if its IoU is at least τ.
//!
//! All values are fractions in `[0, 1]`. Quantities with an empty denominator
//! (no non-background ground truth) are vacuously 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Run, Segmentation};

/// Overlap thresholds reported by [`evaluate`].
pub const F1_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mof: f64,
    pub mof_bg: f64,
    pub iou: f64,
    pub iod: f64,
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
}

impl MetricReport {
    /// F1 at one of the reported thresholds.
    pub fn f1(&self, threshold: f64) -> Option<f64> {
        match threshold {
            t if t == F1_THRESHOLDS[0] => Some(self.f1_10),
            t if t == F1_THRESHOLDS[1] => Some(self.f1_25),
            t if t == F1_THRESHOLDS[2] => Some(self.f1_50),
            _ => None,
        }
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.mof,
            self.mof_bg,
            self.iou,
            self.iod,
            self.edit,
            self.f1_10,
            self.f1_25,
            self.f1_50,
        ]
    }
}

fn check_lengths(pred: &Segmentation, gt: &Segmentation) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Validation(format!(
            "prediction has {} frames, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// All metrics at once.
pub fn evaluate(pred: &Segmentation, gt: &Segmentation, background: &[usize]) -> Result<MetricReport> {
    let (iou, iod) = iou_iod(pred, gt, background)?;
    Ok(MetricReport {
        mof: mof(pred, gt)?,
        mof_bg: mof_bg(pred, gt, background)?,
        iou,
        iod,
        edit: edit_score(pred, gt),
        f1_10: f1_at(pred, gt, F1_THRESHOLDS[0], background),
        f1_25: f1_at(pred, gt, F1_THRESHOLDS[1], background),
        f1_50: f1_at(pred, gt, F1_THRESHOLDS[2], background),
    })
}

pub fn mof(pred: &Segmentation, gt: &Segmentation) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred.labels().iter().zip(gt.labels()).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gt.len() as f64)
}

pub fn mof_bg(pred: &Segmentation, gt: &Segmentation, background: &[usize]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let (hits, total) = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .filter(|(_, g)| !background.contains(g))
        .fold((0usize, 0usize), |(h, n), (p, g)| (h + usize::from(p == g), n + 1));
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

fn intersection(a: &Run, b: &Run) -> usize {
    a.end().min(b.end()).saturating_sub(a.start.max(b.start))
}

fn segment_iou(a: &Run, b: &Run) -> f64 {
    let i = intersection(a, b);
    i as f64 / (a.len + b.len - i) as f64
}

pub fn iou_iod(pred: &Segmentation, gt: &Segmentation, background: &[usize]) -> Result<(f64, f64)> {
    check_lengths(pred, gt)?;
    let pred_segs = pred.segments();
    let mut iou_sum = 0.0;
    let mut iod_sum = 0.0;
    let mut count = 0usize;
    for g in gt.segments().iter().filter(|s| !background.contains(&s.label)) {
        count += 1;
        let matched = pred_segs
            .iter()
            .filter(|p| p.label == g.label)
            .map(|p| (intersection(g, p), p))
            .filter(|(i, _)| *i > 0)
            .max_by_key(|(i, p)| (*i, std::cmp::Reverse(p.start)));
        if let Some((i, p)) = matched {
            iou_sum += i as f64 / (g.len + p.len - i) as f64;
            iod_sum += i as f64 / p.len as f64;
        }
    }
    if count == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((iou_sum / count as f64, iod_sum / count as f64))
}

/// Segmental edit score on run-length label sequences.
pub fn edit_score(pred: &Segmentation, gt: &Segmentation) -> f64 {
    let a: Vec<usize> = pred.segments().iter().map(|s| s.label).collect();
    let b: Vec<usize> = gt.segments().iter().map(|s| s.label).collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Segmental F1 at IoU threshold `threshold`.
pub fn f1_at(pred: &Segmentation, gt: &Segmentation, threshold: f64, background: &[usize]) -> f64 {
    let pred_segs: Vec<Run> = pred
        .segments()
        .into_iter()
        .filter(|s| !background.contains(&s.label))
        .collect();
    let gt_segs: Vec<Run> = gt
        .segments()
        .into_iter()
        .filter(|s| !background.contains(&s.label))
        .collect();
    if pred_segs.is_empty() && gt_segs.is_empty() {
        return 1.0;
    }
    let mut hit = vec![false; gt_segs.len()];
    let mut tp = 0usize;
    for p in &pred_segs {
        let best = gt_segs
            .iter()
            .enumerate()
            .filter(|(_, g)| g.label == p.label)
            .map(|(i, g)| (i, segment_iou(p, g)))
            .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
                Some((_, b)) if b >= v => acc,
                _ => Some((i, v)),
            });
        if let Some((i, v)) = best {
            if v >= threshold && !hit[i] {
                hit[i] = true;
                tp += 1;
            }
        }
    }
    let fp = pred_segs.len() - tp;
    let fn_ = gt_segs.len() - tp;
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}
