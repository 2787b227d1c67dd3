//! Bottom-up maps and their classifier-driven selection.
//!
//! A candidate map `rho` is scored by pooling the features weighted by `rho`
//! and by its inversion `max(rho) - rho`, evaluating the classifier on both
//! pooled vectors and penalising maps that are salient everywhere:
//!
//! ```text
//! objective = (B_hat - B_tilde) * (1 - mean(rho))
//! ```

use crate::error::{dim_mismatch, Error, Result};
use crate::map::{FeatureMap, RgbImage, SaliencyMap};
use crate::pooling::{pool_with, PooledVector, PyramidLayout};
use crate::svm::LinearModel;

/// Pixel stride between feature cells.
pub const FEATURE_STRIDE: usize = 16;

pub const MAX_CANDIDATE: &str = "max";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuMethod {
    /// Global colour-histogram contrast.
    Contrast,
    /// Colour distance from the mean border colour.
    Boundary,
}

impl BuMethod {
    pub fn name(self) -> &'static str {
        match self {
            BuMethod::Contrast => "contrast",
            BuMethod::Boundary => "boundary",
        }
    }
}

const LEVELS: usize = 12;

fn rgb_unit(p: [u8; 3]) -> [f64; 3] {
    p.map(|c| c as f64 / 255.0)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

fn contrast_map(image: &RgbImage) -> Vec<f64> {
    let bin_of = |p: [u8; 3]| {
        let q = p.map(|c| c as usize * LEVELS / 256);
        (q[0] * LEVELS + q[1]) * LEVELS + q[2]
    };
    let center = |bin: usize| {
        let q = [bin / (LEVELS * LEVELS), (bin / LEVELS) % LEVELS, bin % LEVELS];
        q.map(|v| (v as f64 + 0.5) / LEVELS as f64)
    };
    let total = (image.height() * image.width()) as f64;
    let mut hist = vec![0usize; LEVELS * LEVELS * LEVELS];
    for r in 0..image.height() {
        for c in 0..image.width() {
            hist[bin_of(image.pixel(r, c))] += 1;
        }
    }
    let used: Vec<usize> = (0..hist.len()).filter(|&b| hist[b] > 0).collect();
    let mut bin_saliency = vec![0.0; hist.len()];
    for &a in &used {
        let ca = center(a);
        bin_saliency[a] = used
            .iter()
            .map(|&b| hist[b] as f64 / total * dist(ca, center(b)))
            .sum();
    }
    let mut out = Vec::with_capacity(image.height() * image.width());
    for r in 0..image.height() {
        for c in 0..image.width() {
            out.push(bin_saliency[bin_of(image.pixel(r, c))]);
        }
    }
    min_max_normalize(&mut out);
    out
}

fn boundary_map(image: &RgbImage) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                let p = image.pixel(r, c);
                for k in 0..3 {
                    sum[k] += p[k] as u64;
                }
                n += 1;
            }
        }
    }
    // Integer sums keep the border mean exact for uniform borders.
    let border = sum.map(|s| s as f64 / n as f64 / 255.0);
    let mut out: Vec<f64> = (0..h * w)
        .map(|i| dist(rgb_unit(image.pixel(i / w, i % w)), border))
        .collect();
    let hi = out.iter().copied().fold(0.0, f64::max);
    for v in out.iter_mut() {
        *v = if hi > 0.0 { *v / hi } else { 0.0 };
    }
    out
}

/// Built-in bottom-up map at pixel resolution.
pub fn builtin_bu(image: &RgbImage, method: BuMethod) -> Result<SaliencyMap> {
    if image.is_empty() {
        return Err(Error::EmptyImage);
    }
    let values = match method {
        BuMethod::Contrast => contrast_map(image),
        BuMethod::Boundary => boundary_map(image),
    };
    SaliencyMap::clamped(image.height(), image.width(), values)
}

/// Built-in map brought to the `grid_h x grid_w` feature grid.
pub fn builtin_bu_cells(
    image: &RgbImage,
    method: BuMethod,
    grid_h: usize,
    grid_w: usize,
) -> Result<SaliencyMap> {
    builtin_bu(image, method)?.to_grid(grid_h, grid_w, FEATURE_STRIDE)
}

fn check_rho(f: &FeatureMap, rho: &SaliencyMap) -> Result<()> {
    if rho.dims() != (f.height(), f.width()) {
        return Err(dim_mismatch(format!(
            "bottom-up map {}x{} vs feature grid {}x{}",
            rho.height(),
            rho.width(),
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// Pools the features after scaling each cell's vector by `rho` at that cell.
pub fn weighted_pool(f: &FeatureMap, rho: &SaliencyMap, layout: &PyramidLayout) -> Result<PooledVector> {
    check_rho(f, rho)?;
    layout.check(f)?;
    let weights = rho.values();
    Ok(pool_with(layout, f.depth(), |m, j| f.value(m, j) * weights[m]))
}

/// `max(rho) - rho`.
pub fn invert_map(rho: &SaliencyMap) -> SaliencyMap {
    let top = rho.max();
    rho.map_values(|v| top - v)
}

/// Pixelwise maximum of the given maps.
pub fn max_combination(maps: &[&SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps.first().ok_or(Error::EmptyCandidates)?;
    maps.iter()
        .skip(1)
        .try_fold((*first).clone(), |acc, m| acc.zip_with(m, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScore {
    pub b_hat: f64,
    pub b_tilde: f64,
    pub mean_mu: f64,
    pub objective: f64,
}

/// Classifier confidence split by weight sign:
/// `sum_{w>0} w z - sum_{w<0} |w| z + b`.
fn split_confidence(model: &LinearModel, z: &[f64]) -> f64 {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&w, &v) in model.weights.iter().zip(z) {
        if w > 0.0 {
            pos += w * v;
        } else if w < 0.0 {
            neg += w.abs() * v;
        }
    }
    pos - neg + model.bias
}

pub fn selection_objective(
    f: &FeatureMap,
    rho: &SaliencyMap,
    model: &LinearModel,
    layout: &PyramidLayout,
) -> Result<SelectionScore> {
    let n = layout.pooled_len(f.depth());
    if model.dim() != n {
        return Err(dim_mismatch(format!(
            "classifier dim {} vs pooled length {n}",
            model.dim()
        )));
    }
    let z_hat = weighted_pool(f, rho, layout)?;
    let z_tilde = weighted_pool(f, &invert_map(rho), layout)?;
    let b_hat = split_confidence(model, z_hat.values());
    let b_tilde = split_confidence(model, z_tilde.values());
    let mean_mu = rho.mean();
    Ok(SelectionScore {
        b_hat,
        b_tilde,
        mean_mu,
        objective: (b_hat - b_tilde) * (1.0 - mean_mu),
    })
}

/// Named candidate maps at feature-grid resolution. With two or more inputs
/// the pixelwise maximum is appended as [`MAX_CANDIDATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuCandidateSet {
    maps: Vec<(String, SaliencyMap)>,
}

impl BuCandidateSet {
    pub fn new(candidates: Vec<(String, SaliencyMap)>) -> Result<Self> {
        let (_, first) = candidates.first().ok_or(Error::EmptyCandidates)?;
        for (_, m) in &candidates {
            first.check_same_dims(m)?;
        }
        let mut maps = candidates;
        if maps.len() >= 2 {
            let refs: Vec<&SaliencyMap> = maps.iter().map(|(_, m)| m).collect();
            let max = max_combination(&refs)?;
            maps.push((MAX_CANDIDATE.to_string(), max));
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[(String, SaliencyMap)] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Candidate set for one image: the given maps brought to the feature grid;
/// without any, the built-in maps of `image`; without an image, a single
/// uniform map.
pub fn build_candidates(
    grid_h: usize,
    grid_w: usize,
    image: Option<&RgbImage>,
    maps: &[(String, SaliencyMap)],
) -> Result<BuCandidateSet> {
    let mut candidates = Vec::with_capacity(maps.len().max(2));
    for (name, m) in maps {
        let cells = m
            .to_grid(grid_h, grid_w, FEATURE_STRIDE)
            .map_err(|e| e.context(format!("bottom-up map {name}")))?;
        candidates.push((name.clone(), cells));
    }
    if candidates.is_empty() {
        match image {
            Some(img) => {
                for method in [BuMethod::Contrast, BuMethod::Boundary] {
                    candidates.push((
                        method.name().to_string(),
                        builtin_bu_cells(img, method, grid_h, grid_w)?,
                    ));
                }
            }
            None => candidates.push(("uniform".to_string(), SaliencyMap::constant(grid_h, grid_w, 1.0))),
        }
    }
    BuCandidateSet::new(candidates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub name: String,
    pub map: SaliencyMap,
    pub score: SelectionScore,
    pub scores: Vec<SelectionScore>,
}

/// Candidate with the largest objective; ties keep the earliest.
pub fn select(
    f: &FeatureMap,
    candidates: &BuCandidateSet,
    model: &LinearModel,
    layout: &PyramidLayout,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scores = candidates
        .maps()
        .iter()
        .map(|(_, m)| selection_objective(f, m, model, layout))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.objective > scores[best].objective {
            best = i;
        }
    }
    let (name, map) = candidates.maps()[best].clone();
    Ok(Selection {
        index: best,
        name,
        map,
        score: scores[best],
        scores,
    })
}

/// Combined map `H`: elementwise product.
pub fn combine(bcspp: &SaliencyMap, bu: &SaliencyMap) -> Result<SaliencyMap> {
    bcspp.zip_with(bu, |a, b| a * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> (FeatureMap, LinearModel, PyramidLayout) {
        let f = FeatureMap::new(2, 2, 1, vec![5.0, 0.1, 0.2, 0.3]).unwrap();
        let model = LinearModel::new(vec![1.0, -1.0, -1.0, -1.0], 0.0).unwrap();
        let l = PyramidLayout::new(2, 2, &[2]).unwrap();
        (f, model, l)
    }

    fn map(values: &[f64]) -> SaliencyMap {
        SaliencyMap::new(2, 2, values.to_vec()).unwrap()
    }

    #[test]
    fn hand_traced_objective() {
        let (f, model, l) = example();
        let s = selection_objective(&f, &map(&[1.0, 0.0, 0.0, 0.0]), &model, &l).unwrap();
        assert_eq!(s.b_hat, 5.0);
        assert!((s.b_tilde + 0.6).abs() < 1e-12);
        assert_eq!(s.mean_mu, 0.25);
        assert!((s.objective - 4.2).abs() < 1e-12);
        assert_eq!(s.objective, (s.b_hat - s.b_tilde) * (1.0 - s.mean_mu));

        let s = selection_objective(&f, &map(&[1.0; 4]), &model, &l).unwrap();
        assert_eq!(s.objective, 0.0);

        let s = selection_objective(&f, &map(&[0.0, 1.0, 1.0, 1.0]), &model, &l).unwrap();
        assert!((s.b_hat + 0.6).abs() < 1e-12);
        assert_eq!(s.b_tilde, 5.0);
        assert_eq!(s.mean_mu, 0.75);
        assert!((s.objective + 1.4).abs() < 1e-12);
    }

    #[test]
    fn selects_ground_truth() {
        let (f, model, l) = example();
        let set = BuCandidateSet::new(vec![
            ("gt".into(), map(&[1.0, 0.0, 0.0, 0.0])),
            ("inv".into(), map(&[0.0, 1.0, 1.0, 1.0])),
            ("uniform".into(), map(&[1.0; 4])),
        ])
        .unwrap();
        assert_eq!(set.len(), 4);
        let sel = select(&f, &set, &model, &l).unwrap();
        assert_eq!(sel.name, "gt");
    }

    #[test]
    fn single_and_duplicate_candidates() {
        let (f, model, l) = example();
        let one = BuCandidateSet::new(vec![("a".into(), map(&[0.3; 4]))]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(select(&f, &one, &model, &l).unwrap().name, "a");
        let dup = BuCandidateSet::new(vec![
            ("a".into(), map(&[1.0, 0.0, 0.0, 0.0])),
            ("b".into(), map(&[1.0, 0.0, 0.0, 0.0])),
        ])
        .unwrap();
        assert_eq!(select(&f, &dup, &model, &l).unwrap().name, "a");
        assert!(matches!(
            BuCandidateSet::new(vec![]).unwrap_err(),
            Error::EmptyCandidates
        ));
    }

    #[test]
    fn weighted_pool_examples() {
        let f = FeatureMap::new(1, 2, 2, vec![3.0, 0.0, 0.0, 5.0]).unwrap();
        let l = PyramidLayout::new(1, 2, &[1]).unwrap();
        let rho = SaliencyMap::new(1, 2, vec![1.0, 0.1]).unwrap();
        assert_eq!(weighted_pool(&f, &rho, &l).unwrap().values(), &[3.0, 0.5]);
        let ones = SaliencyMap::constant(1, 2, 1.0);
        assert_eq!(
            weighted_pool(&f, &ones, &l).unwrap(),
            crate::pooling::pool(&f, &l).unwrap()
        );
        let zeros = SaliencyMap::zeros(1, 2);
        assert!(weighted_pool(&f, &zeros, &l).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(weighted_pool(&f, &SaliencyMap::zeros(2, 1), &l).is_err());
    }

    #[test]
    fn invert_examples() {
        let m = SaliencyMap::new(1, 3, vec![0.0, 0.4, 1.0]).unwrap();
        let inv = invert_map(&m);
        assert_eq!(inv.values()[0], 1.0);
        assert!((inv.values()[1] - 0.6).abs() < 1e-15);
        assert_eq!(inv.values()[2], 0.0);
        assert!(invert_map(&SaliencyMap::constant(2, 2, 0.3)).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combine_examples() {
        let a = SaliencyMap::new(1, 1, vec![0.8]).unwrap();
        let b = SaliencyMap::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(combine(&a, &b).unwrap().values(), &[0.4]);
        assert_eq!(combine(&a, &SaliencyMap::constant(1, 1, 1.0)).unwrap(), a);
        assert!(combine(&a, &SaliencyMap::zeros(1, 2)).is_err());
    }

    #[test]
    fn constant_image_has_no_contrast() {
        let img = RgbImage::from_fn(20, 20, |_, _| [40, 90, 200]);
        let m = builtin_bu(&img, BuMethod::Contrast).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        let m = builtin_bu(&img, BuMethod::Boundary).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_square_is_salient() {
        let img = RgbImage::from_fn(32, 32, |r, c| {
            if (8..24).contains(&r) && (8..24).contains(&c) {
                [255; 3]
            } else {
                [0; 3]
            }
        });
        for method in [BuMethod::Contrast, BuMethod::Boundary] {
            let m = builtin_bu(&img, method).unwrap();
            let (mut inside, mut outside, mut ni, mut no) = (0.0, 0.0, 0.0, 0.0);
            for r in 0..32 {
                for c in 0..32 {
                    if (8..24).contains(&r) && (8..24).contains(&c) {
                        inside += m.get(r, c);
                        ni += 1.0;
                    } else {
                        outside += m.get(r, c);
                        no += 1.0;
                    }
                }
            }
            assert!(inside / ni > outside / no, "{method:?}");
        }
        let cells = builtin_bu_cells(&img, BuMethod::Boundary, 2, 2).unwrap();
        assert_eq!(cells.dims(), (2, 2));
        let border = builtin_bu(&img, BuMethod::Boundary).unwrap();
        assert!(border.get(0, 0) < 1e-12);
        assert!(matches!(
            builtin_bu(&RgbImage::from_fn(0, 0, |_, _| [0; 3]), BuMethod::Contrast).unwrap_err(),
            Error::EmptyImage
        ));
    }
}
