//! Planted-object synthetic datasets with known ground truth.
//!
//! Category `c` of `n` owns the channels `j` with `j % n == c`. Object cells
//! draw those channels from `N(object_mean, sigma)` and the rest from the
//! background distribution `N(background_mean, sigma)`; background cells draw
//! every channel from the background distribution. Draws are clamped at 0.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bu::{invert_map, FEATURE_STRIDE};
use crate::error::{Error, Result};
use crate::inference::ImageInput;
use crate::io::{save_map, save_mask, save_ppm, save_tensor};
use crate::manifest::{save_manifest, DatasetManifest, ManifestEntry};
use crate::map::{FeatureMap, Mask, PixelBox, RgbImage, SaliencyMap};
use crate::training::TrainingImage;

/// Cell rectangle on the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl CellRect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    pub fn pixel_box(&self, stride: usize) -> PixelBox {
        PixelBox::new(self.col * stride, self.row * stride, self.width * stride, self.height * stride)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub depth: usize,
    pub categories: Vec<String>,
    /// Positive images per category.
    pub positives_per_category: usize,
    /// Images containing no object.
    pub negatives: usize,
    /// Fixed placement; `None` draws a rectangle per image with sides in
    /// `[grid / 4, grid / 2]`.
    pub rect: Option<CellRect>,
    pub object_mean: f64,
    pub background_mean: f64,
    pub sigma: f64,
    pub render_images: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            grid_h: 16,
            grid_w: 16,
            depth: 8,
            categories: vec!["object".to_string()],
            positives_per_category: 40,
            negatives: 40,
            rect: None,
            object_mean: 3.0,
            background_mean: 0.5,
            sigma: 0.3,
            render_images: false,
            seed: crate::svm::DEFAULT_SEED,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.grid_h == 0 || self.grid_w == 0 || self.depth == 0 {
            return bad(format!("empty grid {}x{}x{}", self.grid_h, self.grid_w, self.depth));
        }
        if self.categories.is_empty() {
            return bad("no categories".into());
        }
        if self.categories.len() > self.depth {
            return bad(format!("{} categories need at least as many channels", self.categories.len()));
        }
        let unique: BTreeSet<&String> = self.categories.iter().collect();
        if unique.len() != self.categories.len() {
            return bad("duplicate category".into());
        }
        if let Some(name) = self.categories.iter().find(|c| c.is_empty() || c.contains([',', ';', ':'])) {
            return bad(format!("invalid category name {name:?}"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.object_mean.is_finite() && self.background_mean.is_finite()) {
            return bad("means must be finite".into());
        }
        if let Some(r) = self.rect {
            if r.height == 0 || r.width == 0 {
                return bad("object rectangle covers no cells".into());
            }
            if r.row + r.height > self.grid_h || r.col + r.width > self.grid_w {
                return bad("object rectangle leaves the grid".into());
            }
        } else if self.grid_h < 2 || self.grid_w < 2 {
            return bad("random placement needs a grid of at least 2x2".into());
        }
        Ok(())
    }

    pub fn pixel_dims(&self) -> (usize, usize) {
        (self.grid_h * FEATURE_STRIDE, self.grid_w * FEATURE_STRIDE)
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    /// Index into the spec's categories; `None` for object-free images.
    pub category: Option<usize>,
    pub features: FeatureMap,
    pub rect: Option<CellRect>,
    pub cell_mask: Mask,
    /// Named candidates at cell resolution: `gt`, `inverted`, `uniform`, `random`.
    pub bu_maps: Vec<(String, SaliencyMap)>,
    pub image: Option<RgbImage>,
}

impl SynthImage {
    pub fn labels(&self, spec: &SynthSpec) -> BTreeSet<String> {
        self.category.map(|c| spec.categories[c].clone()).into_iter().collect()
    }

    /// Ground-truth mask at pixel resolution.
    pub fn pixel_mask(&self) -> Mask {
        let s = FEATURE_STRIDE;
        let m = &self.cell_mask;
        Mask::from_fn(m.height() * s, m.width() * s, |r, c| m.get(r / s, c / s))
    }

    pub fn input(&self, with_bu: bool) -> ImageInput {
        ImageInput {
            features: self.features.clone(),
            image: self.image.clone(),
            bu_maps: if with_bu { self.bu_maps.clone() } else { Vec::new() },
        }
    }

    pub fn training_image(&self, spec: &SynthSpec, with_bu: bool) -> TrainingImage {
        TrainingImage {
            id: self.id.clone(),
            labels: self.labels(spec),
            input: self.input(with_bu),
        }
    }
}

fn draw_rect(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CellRect {
    let side = |rng: &mut ChaCha8Rng, n: usize| rng.gen_range((n / 4).max(1)..=(n / 2).max(1));
    let height = side(rng, h);
    let width = side(rng, w);
    CellRect {
        row: rng.gen_range(0..=h - height),
        col: rng.gen_range(0..=w - width),
        height,
        width,
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [220, 40, 40],
    [40, 180, 60],
    [50, 80, 220],
    [230, 200, 40],
    [200, 60, 200],
    [40, 200, 210],
];

fn render(spec: &SynthSpec, rect: Option<CellRect>, category: Option<usize>, rng: &mut ChaCha8Rng) -> RgbImage {
    let (ph, pw) = spec.pixel_dims();
    let colour = category.map(|c| PALETTE[c % PALETTE.len()]);
    let base = 110 + rng.gen_range(0..30u8);
    RgbImage::from_fn(ph, pw, |r, c| {
        let inside = rect.is_some_and(|rc| rc.contains(r / FEATURE_STRIDE, c / FEATURE_STRIDE));
        match (inside, colour) {
            (true, Some(col)) => col,
            _ => [base, base, base.saturating_add(10)],
        }
    })
}

/// Images in order: positives of each category, then negatives. Ids are
/// `pos_<category>_<k>` and `neg_<k>`.
pub fn generate_images(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::BadSpec(e.to_string()))?;
    let n_c = spec.categories.len();
    let (h, w, d) = (spec.grid_h, spec.grid_w, spec.depth);
    let mut jobs: Vec<(String, Option<usize>)> = Vec::new();
    for (c, name) in spec.categories.iter().enumerate() {
        for k in 0..spec.positives_per_category {
            jobs.push((format!("pos_{name}_{k:03}"), Some(c)));
        }
    }
    for k in 0..spec.negatives {
        jobs.push((format!("neg_{k:03}"), None));
    }
    let mut out = Vec::with_capacity(jobs.len());
    for (id, category) in jobs {
        let rect = category.map(|_| spec.rect.unwrap_or_else(|| draw_rect(&mut rng, h, w)));
        let mut data = Vec::with_capacity(h * w * d);
        for r in 0..h {
            for c in 0..w {
                let inside = rect.is_some_and(|rc| rc.contains(r, c));
                for j in 0..d {
                    let mean = match category {
                        Some(cat) if inside && j % n_c == cat => spec.object_mean,
                        _ => spec.background_mean,
                    };
                    let v: f64 = mean + noise.sample(&mut rng);
                    data.push(v.max(0.0));
                }
            }
        }
        let features = FeatureMap::new(h, w, d, data)?;
        let cell_mask = Mask::from_fn(h, w, |r, c| rect.is_some_and(|rc| rc.contains(r, c)));
        let gt = cell_mask.to_map();
        let random = SaliencyMap::from_fn(h, w, |_, _| rng.gen::<f64>())?;
        let bu_maps = vec![
            ("gt".to_string(), gt.clone()),
            ("inverted".to_string(), invert_map(&gt)),
            ("uniform".to_string(), SaliencyMap::constant(h, w, 1.0)),
            ("random".to_string(), random),
        ];
        let image = spec.render_images.then(|| render(spec, rect, category, &mut rng));
        out.push(SynthImage {
            id,
            category,
            features,
            rect,
            cell_mask,
            bu_maps,
            image,
        });
    }
    Ok(out)
}

/// A dataset written to disk.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    pub images: Vec<SynthImage>,
}

/// Writes features, cell-resolution candidate maps, pixel-resolution masks,
/// optional renders and `manifest.csv` under `out_dir`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthDataset> {
    let images = generate_images(spec)?;
    let mut manifest = DatasetManifest::default();
    for img in &images {
        let features_path = out_dir.join("features").join(format!("{}.ften", img.id));
        save_tensor(&img.features, &features_path)?;
        let mut entry = ManifestEntry::new(img.id.clone(), features_path);
        for (name, map) in &img.bu_maps {
            let p = out_dir.join("bu").join(format!("{}_{name}.pgm", img.id));
            save_map(map, &p, false)?;
            entry.bu_map_paths.push(p);
        }
        if let Some(image) = &img.image {
            let p = out_dir.join("images").join(format!("{}.ppm", img.id));
            save_ppm(image, &p)?;
            entry.image_path = Some(p);
        }
        entry.labels = img.labels(spec);
        if let (Some(c), Some(rect)) = (img.category, img.rect) {
            let name = &spec.categories[c];
            let p = out_dir.join("gt").join(format!("{}_{name}.pgm", img.id));
            save_mask(&img.pixel_mask(), &p)?;
            entry.gt_masks.push((name.clone(), p));
            entry.gt_boxes.push((name.clone(), rect.pixel_box(FEATURE_STRIDE)));
        }
        manifest.entries.push(entry);
    }
    let manifest_path = out_dir.join("manifest.csv");
    save_manifest(&manifest, &manifest_path)?;
    Ok(SynthDataset {
        manifest_path,
        manifest,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            grid_h: 6,
            grid_w: 6,
            depth: 4,
            positives_per_category: 3,
            negatives: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_area_rect_rejected() {
        let spec = SynthSpec {
            rect: Some(CellRect {
                row: 1,
                col: 1,
                height: 0,
                width: 3,
            }),
            ..small()
        };
        assert!(matches!(generate_images(&spec).unwrap_err(), Error::BadSpec(_)));
    }

    #[test]
    fn zero_sigma_gives_exact_means() {
        let rect = CellRect {
            row: 1,
            col: 2,
            height: 2,
            width: 3,
        };
        let spec = SynthSpec {
            sigma: 0.0,
            rect: Some(rect),
            ..small()
        };
        let imgs = generate_images(&spec).unwrap();
        let pos = &imgs[0];
        for m in 0..pos.features.len() {
            let (r, c) = (m / 6, m % 6);
            let want = if rect.contains(r, c) { 3.0 } else { 0.5 };
            assert!(pos.features.feature(m).iter().all(|&v| v == want));
            assert_eq!(pos.cell_mask.get(r, c), rect.contains(r, c));
        }
        assert!(imgs[3].features.data().iter().all(|&v| v == 0.5));
        assert_eq!(imgs[3].cell_mask.count(), 0);
    }

    #[test]
    fn deterministic_and_non_negative() {
        let spec = SynthSpec {
            sigma: 2.0,
            ..small()
        };
        let a = generate_images(&spec).unwrap();
        let b = generate_images(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.rect, y.rect);
        }
        assert!(a.iter().all(|i| i.features.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn random_rects_stay_inside() {
        let spec = SynthSpec {
            positives_per_category: 50,
            ..small()
        };
        for img in generate_images(&spec).unwrap().iter().filter(|i| i.category.is_some()) {
            let r = img.rect.unwrap();
            assert!(r.height >= 1 && r.row + r.height <= 6 && r.col + r.width <= 6);
            assert_eq!(img.cell_mask.count(), r.height * r.width);
        }
    }

    #[test]
    fn pixel_mask_scales_cells() {
        let img = &generate_images(&small()).unwrap()[0];
        let pm = img.pixel_mask();
        assert_eq!(pm.dims(), (96, 96));
        assert_eq!(pm.count(), img.cell_mask.count() * 256);
    }
}
