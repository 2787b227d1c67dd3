//! Per-image saliency inference and the trained model bundle.
//!
//! Bundle layout (little-endian):
//!
//! ```text
//! "BSPP" | u32 version = 1 | u32 n_categories
//! | u32 n_levels | n_levels x u32 grid size | u32 depth | u32 pooled_len
//! | per category: u32 name_len | name (UTF-8) | pooled_len x f32 w | f32 b
//!                 | depth x f32 v | f32 b_v
//! ```

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::backtrack::{attribute, bcspp_map};
use crate::bu::{build_candidates, combine, select, FEATURE_STRIDE};
use crate::error::{dim_mismatch, Error, Result};
use crate::featsal::l_map;
use crate::io::{read_file, write_atomic};
use crate::map::{FeatureMap, RgbImage, SaliencyMap};
use crate::pooling::{pool, PyramidLayout};
use crate::refine::{multiscale_average, upsample, DEFAULT_SCALES};
use crate::svm::{score, LinearModel};

pub const BUNDLE_MAGIC: &[u8; 4] = b"BSPP";
pub const BUNDLE_VERSION: u32 = 1;
pub const CONFIDENCE_FLOOR: f64 = 0.5;
pub const BACKGROUND_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModel {
    pub name: String,
    pub image: LinearModel,
    pub feature: LinearModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub levels: Vec<usize>,
    pub depth: usize,
    pub pooled_len: usize,
    pub categories: Vec<CategoryModel>,
}

impl ModelBundle {
    pub fn new(levels: Vec<usize>, depth: usize, pooled_len: usize, categories: Vec<CategoryModel>) -> Result<Self> {
        let bundle = Self {
            levels,
            depth,
            pooled_len,
            categories,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(dim_mismatch("bundle has no categories"));
        }
        if self.levels.is_empty() || self.depth == 0 || self.pooled_len == 0 {
            return Err(dim_mismatch("bundle layout is empty"));
        }
        if self.pooled_len % self.depth != 0 {
            return Err(dim_mismatch(format!(
                "pooled length {} is not a multiple of depth {}",
                self.pooled_len, self.depth
            )));
        }
        let mut names = HashSet::new();
        for c in &self.categories {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate category {:?}", c.name)));
            }
            if c.image.dim() != self.pooled_len || c.feature.dim() != self.depth {
                return Err(dim_mismatch(format!(
                    "category {:?}: image model dim {}, feature model dim {}",
                    c.name,
                    c.image.dim(),
                    c.feature.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    /// Layout for a feature map, checked against the trained pooled length.
    pub fn layout_for(&self, f: &FeatureMap) -> Result<PyramidLayout> {
        if f.depth() != self.depth {
            return Err(dim_mismatch(format!(
                "feature depth {} vs bundle depth {}",
                f.depth(),
                self.depth
            )));
        }
        let layout = PyramidLayout::new(f.height(), f.width(), &self.levels)?;
        if layout.pooled_len(self.depth) != self.pooled_len {
            return Err(dim_mismatch(format!(
                "{}x{} grid pools to {} slots, bundle expects {}",
                f.height(),
                f.width(),
                layout.pooled_len(self.depth),
                self.pooled_len
            )));
        }
        Ok(layout)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        let f32le = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        out.extend_from_slice(BUNDLE_MAGIC);
        u32le(&mut out, BUNDLE_VERSION as usize);
        u32le(&mut out, self.categories.len());
        u32le(&mut out, self.levels.len());
        for &g in &self.levels {
            u32le(&mut out, g);
        }
        u32le(&mut out, self.depth);
        u32le(&mut out, self.pooled_len);
        for c in &self.categories {
            u32le(&mut out, c.name.len());
            out.extend_from_slice(c.name.as_bytes());
            for &w in &c.image.weights {
                f32le(&mut out, w);
            }
            f32le(&mut out, c.image.bias);
            for &v in &c.feature.weights {
                f32le(&mut out, v);
            }
            f32le(&mut out, c.feature.bias);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        struct Reader<'a> {
            bytes: &'a [u8],
            pos: usize,
        }
        impl Reader<'_> {
            fn take(&mut self, n: usize) -> Result<&[u8]> {
                let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
                let end = end.ok_or_else(|| Error::Truncated(format!("bundle at byte {}", self.pos)))?;
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            fn u32(&mut self) -> Result<usize> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
            }
            fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
                let raw = self.take(n.checked_mul(4).ok_or_else(|| dim_mismatch("bundle size"))?)?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect())
            }
        }
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(BUNDLE_MAGIC.as_slice()) {
            return Err(Error::BadMagic { expected: "BSPP" });
        }
        let version = r.u32()? as u32;
        if version != BUNDLE_VERSION {
            return Err(Error::BadVersion(version));
        }
        let n_c = r.u32()?;
        let n_levels = r.u32()?;
        let levels = (0..n_levels).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let depth = r.u32()?;
        let pooled_len = r.u32()?;
        let mut categories = Vec::with_capacity(n_c.min(1024));
        for _ in 0..n_c {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::BadImage("category name is not UTF-8".into()))?;
            let w = r.f32s(pooled_len)?;
            let b = r.f32s(1)?[0];
            let v = r.f32s(depth)?;
            let bv = r.f32s(1)?[0];
            categories.push(CategoryModel {
                name,
                image: LinearModel::new(w, b)?,
                feature: LinearModel::new(v, bv)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(dim_mismatch(format!(
                "{} trailing bytes after bundle",
                bytes.len() - r.pos
            )));
        }
        ModelBundle::new(levels, depth, pooled_len, categories)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
    }
}

/// `S_p = (H + L) / 2`.
pub fn s_p(h: &SaliencyMap, l: &SaliencyMap) -> Result<SaliencyMap> {
    h.zip_with(l, |a, b| 0.5 * (a + b))
}

/// Raw classifier scores of every category.
pub fn category_scores(bundle: &ModelBundle, f: &FeatureMap) -> Result<Vec<f64>> {
    let layout = bundle.layout_for(f)?;
    let z = pool(f, &layout)?;
    bundle
        .categories
        .iter()
        .map(|c| score(&c.image, z.values()))
        .collect()
}

/// Max-normalised exponentiated scores with values below 0.5 zeroed.
pub fn normalize_confidence(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .map(|&s| {
            let v = (s - top).exp();
            if v < CONFIDENCE_FLOOR {
                0.0
            } else {
                v
            }
        })
        .collect()
}

pub fn confidence(bundle: &ModelBundle, f: &FeatureMap) -> Result<Vec<f64>> {
    Ok(normalize_confidence(&category_scores(bundle, f)?))
}

/// Maps `[0.5, 1]` linearly onto `[0, 1]`; values below 0.5 become 0.
pub fn rescale_independent(map: &SaliencyMap) -> SaliencyMap {
    map.map_values(|v| {
        if v < BACKGROUND_LEVEL {
            0.0
        } else {
            (v - BACKGROUND_LEVEL) / (1.0 - BACKGROUND_LEVEL)
        }
    })
}

/// Pixelwise maximum over the maps.
pub fn pixel_max(maps: &[&SaliencyMap]) -> Result<SaliencyMap> {
    crate::bu::max_combination(maps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOptions {
    pub superpixel: bool,
    pub scales: Vec<usize>,
    pub stride: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            superpixel: true,
            scales: DEFAULT_SCALES.to_vec(),
            stride: FEATURE_STRIDE,
        }
    }
}

/// Everything known about one test image.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub features: FeatureMap,
    pub image: Option<RgbImage>,
    /// Named bottom-up maps at pixel or feature-grid resolution.
    pub bu_maps: Vec<(String, SaliencyMap)>,
}

impl ImageInput {
    pub fn features_only(features: FeatureMap) -> Self {
        Self {
            features,
            image: None,
            bu_maps: Vec::new(),
        }
    }

    /// Pixel size of the output maps.
    pub fn pixel_dims(&self, stride: usize) -> (usize, usize) {
        match &self.image {
            Some(img) => (img.height(), img.width()),
            None => (self.features.height() * stride, self.features.width() * stride),
        }
    }
}

/// Intermediate maps of one category's chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMaps {
    pub bcspp: SaliencyMap,
    pub selected_bu: String,
    pub bu: SaliencyMap,
    pub combined: SaliencyMap,
    pub feature: SaliencyMap,
    pub s_p: SaliencyMap,
    /// `S_p` upsampled to pixels, before superpixel averaging.
    pub s_pre: SaliencyMap,
    pub s_pix: SaliencyMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryOutput {
    pub name: String,
    pub score: f64,
    pub phi_hat: f64,
    pub s_categ: SaliencyMap,
    /// `None` when the category was skipped for low confidence.
    pub maps: Option<CategoryMaps>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSaliency {
    pub categories: Vec<CategoryOutput>,
    /// Pixelwise max of the category maps.
    pub s_ind_raw: SaliencyMap,
    /// [`rescale_independent`] of `s_ind_raw`.
    pub s_ind: SaliencyMap,
}

/// Runs the per-category chains for a bundle. Counts how many chains were
/// actually executed.
#[derive(Debug)]
pub struct SaliencyEngine<'a> {
    bundle: &'a ModelBundle,
    opts: InferenceOptions,
    chains_run: AtomicUsize,
}

impl<'a> SaliencyEngine<'a> {
    pub fn new(bundle: &'a ModelBundle, opts: InferenceOptions) -> Self {
        Self {
            bundle,
            opts,
            chains_run: AtomicUsize::new(0),
        }
    }

    pub fn bundle(&self) -> &ModelBundle {
        self.bundle
    }

    pub fn options(&self) -> &InferenceOptions {
        &self.opts
    }

    pub fn chains_run(&self) -> usize {
        self.chains_run.load(Ordering::Relaxed)
    }

    /// Backtracking, BU selection, feature saliency, fusion and refinement
    /// for category `idx`.
    pub fn category_chain(&self, idx: usize, input: &ImageInput) -> Result<CategoryMaps> {
        self.chains_run.fetch_add(1, Ordering::Relaxed);
        let cat = &self.bundle.categories[idx];
        let f = &input.features;
        let layout = self.bundle.layout_for(f)?;
        let (gh, gw) = (f.height(), f.width());
        let attr = attribute(f, &cat.image, &layout)?;
        let bcspp = bcspp_map(&attr, gh, gw)?;
        let candidates = build_candidates(gh, gw, input.image.as_ref(), &input.bu_maps)?;
        let selection = select(f, &candidates, &cat.image, &layout)?;
        let combined = combine(&bcspp, &selection.map)?;
        let feature = l_map(&cat.feature, f)?;
        let fused = s_p(&combined, &feature)?;
        let (ph, pw) = input.pixel_dims(self.opts.stride);
        let s_pre = upsample(&fused, ph, pw)?;
        let s_pix = match (&input.image, self.opts.superpixel) {
            (Some(img), true) => multiscale_average(&s_pre, img, &self.opts.scales)?,
            _ => s_pre.clone(),
        };
        Ok(CategoryMaps {
            bcspp,
            selected_bu: selection.name,
            bu: selection.map,
            combined,
            feature,
            s_p: fused,
            s_pre,
            s_pix,
        })
    }

    fn output_for(&self, idx: usize, score: f64, phi_hat: f64, input: &ImageInput) -> Result<CategoryOutput> {
        let name = self.bundle.categories[idx].name.clone();
        if phi_hat == 0.0 {
            let (ph, pw) = input.pixel_dims(self.opts.stride);
            return Ok(CategoryOutput {
                name,
                score,
                phi_hat,
                s_categ: SaliencyMap::zeros(ph, pw),
                maps: None,
            });
        }
        let maps = self
            .category_chain(idx, input)
            .map_err(|e| e.context(format!("category {name:?}")))?;
        let s_categ = maps.s_pix.map_values(|v| v * phi_hat);
        Ok(CategoryOutput {
            name,
            score,
            phi_hat,
            s_categ,
            maps: Some(maps),
        })
    }

    /// `S_pix * phi_hat` for one category; the chain is skipped when the
    /// category's normalised confidence is zero.
    pub fn s_categ(&self, category: &str, input: &ImageInput) -> Result<CategoryOutput> {
        let idx = self.bundle.index_of(category)?;
        let scores = category_scores(self.bundle, &input.features)?;
        let phi = normalize_confidence(&scores);
        self.output_for(idx, scores[idx], phi[idx], input)
    }

    /// All categories plus the category-independent map.
    pub fn run(&self, input: &ImageInput) -> Result<ImageSaliency> {
        let scores = category_scores(self.bundle, &input.features)?;
        let phi = normalize_confidence(&scores);
        let categories = (0..scores.len())
            .map(|i| self.output_for(i, scores[i], phi[i], input))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SaliencyMap> = categories.iter().map(|c| &c.s_categ).collect();
        let s_ind_raw = pixel_max(&refs)?;
        let s_ind = rescale_independent(&s_ind_raw);
        Ok(ImageSaliency {
            categories,
            s_ind_raw,
            s_ind,
        })
    }

    pub fn s_ind(&self, input: &ImageInput) -> Result<SaliencyMap> {
        Ok(self.run(input)?.s_ind)
    }
}
