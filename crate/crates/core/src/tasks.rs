//! Application adapters on top of category saliency maps.

use crate::error::{dim_mismatch, Result};
use crate::map::{Mask, PixelBox, SaliencyMap};

pub const TASK_THRESHOLD: f64 = 0.5;
pub const LOCALIZE_WINDOW: usize = 64;

/// Per-pixel labels: 0 is background, `c + 1` is the `c`-th category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(dim_mismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    /// Labels from per-category masks; overlapping pixels take the lowest
    /// category index.
    pub fn from_masks(masks: &[Option<&Mask>], height: usize, width: usize) -> Result<Self> {
        let mut labels = vec![0; height * width];
        for (c, mask) in masks.iter().enumerate().rev() {
            if let Some(mask) = mask {
                if mask.dims() != (height, width) {
                    return Err(dim_mismatch(format!(
                        "mask {}x{} vs {height}x{width}",
                        mask.height(),
                        mask.width()
                    )));
                }
                for (l, &b) in labels.iter_mut().zip(mask.bits()) {
                    if b {
                        *l = c + 1;
                    }
                }
            }
        }
        Ok(Self { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Per-pixel argmax over a constant 0.5 background and the category maps.
/// Ties go to background, then to the lowest category index.
pub fn semantic_labels(maps: &[&SaliencyMap]) -> Result<LabelMap> {
    let Some(first) = maps.first() else {
        return Err(dim_mismatch("no category maps"));
    };
    for m in maps {
        first.check_same_dims(m)?;
    }
    let labels = (0..first.len())
        .map(|p| {
            let mut best = 0;
            let mut best_v = TASK_THRESHOLD;
            for (c, m) in maps.iter().enumerate() {
                let v = m.values()[p];
                if v > best_v {
                    best = c + 1;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    LabelMap::new(first.height(), first.width(), labels)
}

pub fn segment_object(map: &SaliencyMap) -> Mask {
    Mask::from_fn(map.height(), map.width(), |r, c| map.get(r, c) >= TASK_THRESHOLD)
}

/// Zero-padded 64x64 mean filter. The window of pixel `(r, c)` covers rows
/// `r - 32 .. r + 31` and the same columns. Window sums are accumulated in a
/// fixed order so equal windows produce bit-equal sums.
pub fn box_filter(map: &SaliencyMap) -> SaliencyMap {
    let (h, w) = map.dims();
    let half = LOCALIZE_WINDOW / 2;
    let window = |n: usize, i: usize| i.saturating_sub(half)..(i + half).min(n);
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        let line = &map.values()[r * w..(r + 1) * w];
        for c in 0..w {
            rows[r * w + c] = line[window(w, c)].iter().sum();
        }
    }
    let area = (LOCALIZE_WINDOW * LOCALIZE_WINDOW) as f64;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let s: f64 = window(h, r).map(|rr| rows[rr * w + c]).sum();
            out[r * w + c] = s / area;
        }
    }
    SaliencyMap::clamped(h, w, out).expect("filter output has the input's dims")
}

/// `(x, y)` of the box-filter maximum; ties go to the smallest row-major index.
pub fn localize(map: &SaliencyMap) -> (usize, usize) {
    let filtered = box_filter(map);
    let mut best = 0;
    for (i, &v) in filtered.values().iter().enumerate() {
        if v > filtered.values()[best] {
            best = i;
        }
    }
    (best % map.width(), best / map.width())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBox {
    pub category: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Mean saliency over the component's pixels.
    pub score: f64,
}

impl DetectionBox {
    pub fn pixel_box(&self) -> PixelBox {
        PixelBox::new(self.x, self.y, self.w, self.h)
    }
}

/// 4-connected components of `mask` in row-major order of their first pixel.
pub fn components(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && mask.bits()[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Tight boxes around the 4-connected components of `map >= 0.5`, sorted by
/// score descending (stable).
pub fn detect(map: &SaliencyMap, category: &str) -> Vec<DetectionBox> {
    let w = map.width();
    let mut boxes: Vec<DetectionBox> = components(&segment_object(map))
        .into_iter()
        .map(|comp| {
            let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
            let mut sum = 0.0;
            for &p in &comp {
                let (r, c) = (p / w, p % w);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
                sum += map.values()[p];
            }
            DetectionBox {
                category: category.to_string(),
                x: c0,
                y: r0,
                w: c1 - c0 + 1,
                h: r1 - r0 + 1,
                score: sum / comp.len() as f64,
            }
        })
        .collect();
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn semantic_label_examples() {
        let zero = SaliencyMap::zeros(2, 2);
        let high = SaliencyMap::constant(2, 2, 0.9);
        assert!(semantic_labels(&[&zero, &zero]).unwrap().labels().iter().all(|&l| l == 0));
        assert!(semantic_labels(&[&zero, &high]).unwrap().labels().iter().all(|&l| l == 2));
        let cat = map(1, 1, &[0.6]);
        let dog = map(1, 1, &[0.7]);
        assert_eq!(semantic_labels(&[&cat, &dog]).unwrap().labels(), &[2]);
        let half = map(1, 1, &[0.5]);
        assert_eq!(semantic_labels(&[&half]).unwrap().labels(), &[0]);
        assert_eq!(semantic_labels(&[&cat, &cat]).unwrap().labels(), &[1]);
        assert!(semantic_labels(&[&cat, &zero]).is_err());
    }

    #[test]
    fn segment_examples() {
        let m = segment_object(&map(1, 2, &[0.4, 0.6]));
        assert_eq!(m.bits(), &[false, true]);
        assert_eq!(segment_object(&SaliencyMap::constant(3, 3, 0.49)).count(), 0);
    }

    #[test]
    fn localize_block_centre() {
        let m = SaliencyMap::from_fn(160, 200, |r, c| {
            if (40..104).contains(&r) && (90..154).contains(&c) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(localize(&m), (90 + 32, 40 + 32));
        assert_eq!(localize(&SaliencyMap::constant(20, 30, 0.7)), (0, 0));
    }

    #[test]
    fn detect_examples() {
        let m = SaliencyMap::from_fn(8, 10, |r, c| {
            if (2..=4).contains(&r) && (3..=6).contains(&c) {
                0.8
            } else {
                0.0
            }
        })
        .unwrap();
        let boxes = detect(&m, "cat");
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].x, boxes[0].y, boxes[0].w, boxes[0].h), (3, 2, 4, 3));
        assert!((boxes[0].score - 0.8).abs() < 1e-12);
        assert!(detect(&SaliencyMap::zeros(4, 4), "cat").is_empty());
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let m = map(2, 2, &[1.0, 0.0, 0.0, 0.9]);
        let boxes = detect(&m, "x");
        assert_eq!(boxes.len(), 2);
        assert_eq!((boxes[0].x, boxes[0].y), (0, 0));
        assert_eq!((boxes[1].x, boxes[1].y), (1, 1));
    }

    #[test]
    fn label_map_from_masks_prefers_lowest_index() {
        let a = Mask::from_fn(1, 3, |_, c| c < 2);
        let b = Mask::from_fn(1, 3, |_, c| c > 0);
        let l = LabelMap::from_masks(&[Some(&a), Some(&b)], 1, 3).unwrap();
        assert_eq!(l.labels(), &[1, 1, 2]);
    }
}
