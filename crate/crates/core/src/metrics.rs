//! Evaluation metrics over saliency maps, masks, points and boxes.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::map::{Mask, PixelBox, SaliencyMap};
use crate::tasks::LabelMap;

pub const DEFAULT_ETA2: f64 = 0.3;
pub const LOCALIZATION_TOLERANCE: usize = 18;
pub const DETECTION_IOU: f64 = 0.5;

fn check_pair(map: &SaliencyMap, gt: &Mask) -> Result<usize> {
    if map.dims() != gt.dims() {
        return Err(crate::error::dim_mismatch(format!(
            "map {}x{} vs mask {}x{}",
            map.height(),
            map.width(),
            gt.height(),
            gt.width()
        )));
    }
    match gt.count() {
        0 => Err(Error::EmptyGroundTruth),
        n => Ok(n),
    }
}

/// Precision and recall at every distinct map value, thresholds ascending.
/// A pixel is predicted positive when its value is `>=` the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `(true positives, predicted positives)` per threshold.
    pub counts: Vec<(usize, usize)>,
    pub positives: usize,
}

impl PRCurve {
    pub fn new(map: &SaliencyMap, gt: &Mask) -> Result<Self> {
        let positives = check_pair(map, gt)?;
        let mut order: Vec<usize> = (0..map.len()).collect();
        order.sort_by(|&a, &b| map.values()[b].total_cmp(&map.values()[a]));
        let mut thresholds = Vec::new();
        let mut counts = Vec::new();
        let (mut tp, mut pred) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let t = map.values()[order[i]];
            while i < order.len() && map.values()[order[i]] == t {
                pred += 1;
                tp += gt.bits()[order[i]] as usize;
                i += 1;
            }
            thresholds.push(t);
            counts.push((tp, pred));
        }
        thresholds.reverse();
        counts.reverse();
        let precision = counts.iter().map(|&(tp, pred)| tp as f64 / pred as f64).collect();
        let recall = counts.iter().map(|&(tp, _)| tp as f64 / positives as f64).collect();
        Ok(Self {
            thresholds,
            precision,
            recall,
            counts,
            positives,
        })
    }

    /// Index of the threshold minimising `|P - R|`, compared exactly in
    /// integers; ties go to the higher threshold.
    pub fn eer_index(&self) -> usize {
        // |tp/pred - tp/pos| = tp * |pos - pred| / (pred * pos); pos is shared.
        let gap = |&(tp, pred): &(usize, usize)| (tp as u128 * self.positives.abs_diff(pred) as u128, pred as u128);
        let mut best = self.counts.len() - 1;
        for i in (0..self.counts.len()).rev() {
            let (n_i, d_i) = gap(&self.counts[i]);
            let (n_b, d_b) = gap(&self.counts[best]);
            if n_i * d_b < n_b * d_i {
                best = i;
            }
        }
        best
    }
}

/// Precision at the threshold where precision and recall are closest.
pub fn precision_at_eer(map: &SaliencyMap, gt: &Mask) -> Result<f64> {
    let curve = PRCurve::new(map, gt)?;
    Ok(curve.precision[curve.eer_index()])
}

/// `(1 + eta2) P R / (eta2 P + R)`, 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, eta2: f64) -> f64 {
    let denom = eta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + eta2) * precision * recall / denom
    }
}

/// Precision and recall of the map binarised at `min(2 * mean, 1)`; only
/// strictly positive pixels can be predicted.
pub fn adaptive_pr(map: &SaliencyMap, gt: &Mask) -> Result<(f64, f64)> {
    let positives = check_pair(map, gt)?;
    let t = (2.0 * map.mean()).min(1.0);
    let (mut tp, mut pred) = (0usize, 0usize);
    for (&v, &g) in map.values().iter().zip(gt.bits()) {
        if v >= t && v > 0.0 {
            pred += 1;
            tp += g as usize;
        }
    }
    let p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    Ok((p, tp as f64 / positives as f64))
}

pub fn f_measure_with(map: &SaliencyMap, gt: &Mask, eta2: f64) -> Result<f64> {
    let (p, r) = adaptive_pr(map, gt)?;
    Ok(f_beta(p, r, eta2))
}

pub fn f_measure(map: &SaliencyMap, gt: &Mask) -> Result<f64> {
    f_measure_with(map, gt, DEFAULT_ETA2)
}

/// Intersection over union; two empty masks score 1.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(crate::error::dim_mismatch(format!(
            "mask {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizationMode {
    Exact,
    Tolerance,
}

pub fn localization_hit(pt: (usize, usize), boxes: &[PixelBox], mode: LocalizationMode) -> bool {
    let tol = match mode {
        LocalizationMode::Exact => 0,
        LocalizationMode::Tolerance => LOCALIZATION_TOLERANCE,
    };
    let (x, y) = pt;
    boxes.iter().any(|b| {
        x + tol >= b.x && x < b.x + b.w + tol && y + tol >= b.y && y < b.y + b.h + tol
    })
}

/// 11-point interpolated average precision of detections pooled over
/// images. `detections` holds `(image, box, score)`; `gt[image]` the
/// ground-truth boxes of that image. Ranking is by score descending, stable.
/// A detection is a true positive when its best-IoU unmatched ground truth
/// has IoU above 0.5.
pub fn average_precision(detections: &[(usize, PixelBox, f64)], gt: &[Vec<PixelBox>]) -> Result<f64> {
    let total: usize = gt.iter().map(Vec::len).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].2.total_cmp(&detections[a].2));
    let mut matched: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut points = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let (img, bx, _) = detections[i];
        let boxes = gt.get(img).ok_or(Error::IndexOutOfRange {
            index: img,
            len: gt.len(),
        })?;
        let mut best: Option<(usize, f64)> = None;
        for (g, gb) in boxes.iter().enumerate() {
            if matched[img][g] {
                continue;
            }
            let iou = bx.iou(gb);
            if best.map_or(true, |(_, b)| iou.partial_cmp(&b) == Some(Ordering::Greater)) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou > DETECTION_IOU {
                matched[img][g] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / total as f64, tp as f64 / (rank + 1) as f64));
    }
    Ok(eleven_point(&points))
}

/// Mean over recall levels `0, 0.1, .., 1` of the best precision at recall
/// at least that level.
pub fn eleven_point(points: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|k| {
            let level = k as f64 / 10.0;
            points
                .iter()
                .filter(|(r, _)| *r >= level - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// 11-point AP of localization points pooled over images. `points` holds
/// `(image, point, score)`; a point is a true positive when it hits a box of
/// its image, and recall counts images with at least one box. At most one
/// point per image counts as a hit.
pub fn localization_ap(
    points: &[(usize, (usize, usize), f64)],
    gt: &[Vec<PixelBox>],
    mode: LocalizationMode,
) -> Result<f64> {
    let total = gt.iter().filter(|g| !g.is_empty()).count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].2.total_cmp(&points[a].2));
    let mut hit_image = vec![false; gt.len()];
    let mut curve = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let (img, pt, _) = points[i];
        let boxes = gt.get(img).ok_or(Error::IndexOutOfRange {
            index: img,
            len: gt.len(),
        })?;
        if !hit_image[img] && localization_hit(pt, boxes, mode) {
            hit_image[img] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total as f64, tp as f64 / (rank + 1) as f64));
    }
    Ok(eleven_point(&curve))
}

/// AP for one image's ranked boxes.
pub fn detection_ap(ranked: &[PixelBox], gt: &[PixelBox]) -> Result<f64> {
    let n = ranked.len();
    let dets: Vec<(usize, PixelBox, f64)> = ranked
        .iter()
        .enumerate()
        .map(|(i, &b)| (0, b, (n - i) as f64))
        .collect();
    average_precision(&dets, &[gt.to_vec()])
}

/// Per-class confusion counts for label maps with `classes` labels
/// (background included as label 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, predicted: &LabelMap, truth: &LabelMap) -> Result<()> {
        if predicted.dims() != truth.dims() {
            return Err(crate::error::dim_mismatch("label maps differ in size"));
        }
        for (&p, &t) in predicted.labels().iter().zip(truth.labels()) {
            if p >= self.classes || t >= self.classes {
                return Err(Error::IndexOutOfRange {
                    index: p.max(t),
                    len: self.classes,
                });
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes never seen.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let fn_: u64 = (0..k).map(|p| self.counts[c * k + p]).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|t| self.counts[t * k + c]).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes that occur in prediction or truth.
    pub fn mean_iou(&self) -> f64 {
        let seen: Vec<f64> = self.iou().into_iter().flatten().collect();
        if seen.is_empty() {
            0.0
        } else {
            seen.iter().sum::<f64>() / seen.len() as f64
        }
    }
}
