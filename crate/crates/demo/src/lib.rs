//! Browser demo: trains a small two-category model on synthetic scenes and
//! exposes intermediate maps, bottom-up selection scores and detections.
//!
//! [`DemoState`] holds all logic so it can be tested natively; [`Demo`] is the
//! thin `wasm-bindgen` wrapper the page talks to.

use std::str::FromStr;

use wasm_bindgen::prelude::*;

use tdsal::bu::{build_candidates, select, FEATURE_STRIDE};
use tdsal::error::{Error, Result};
use tdsal::inference::{CategoryMaps, InferenceOptions, SaliencyEngine};
use tdsal::synth::{generate_images, SynthImage, SynthSpec};
use tdsal::tasks::{detect, DetectionBox};
use tdsal::training::{train_bundle, TrainOptions};
use tdsal::{ImageInput, ModelBundle, SaliencyMap};

pub const CATEGORIES: [&str; 2] = ["cat", "dog"];
const GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Bcspp,
    Bu,
    Combined,
    Feature,
    Fused,
    Final,
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "bcspp" => Stage::Bcspp,
            "bu" => Stage::Bu,
            "combined" => Stage::Combined,
            "feature" => Stage::Feature,
            "fused" => Stage::Fused,
            "final" => Stage::Final,
            _ => return Err(format!("unknown stage {s:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub name: String,
    pub objective: f64,
    pub selected: bool,
}

pub struct DemoState {
    bundle: ModelBundle,
    images: Vec<SynthImage>,
    current: usize,
    /// Offer the synthetic candidate maps as well as the built-in ones.
    pub use_candidates: bool,
    pub superpixel: bool,
}

impl DemoState {
    pub fn new(seed: u64) -> Result<Self> {
        let spec = SynthSpec {
            grid_h: GRID,
            grid_w: GRID,
            categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
            positives_per_category: 12,
            negatives: 12,
            render_images: true,
            seed,
            ..SynthSpec::default()
        };
        let train: Vec<_> = generate_images(&spec)?
            .iter()
            .map(|i| i.training_image(&spec, true))
            .collect();
        let (bundle, _) = train_bundle(&train, &spec.categories, &TrainOptions::with_seed(seed))?;
        let test = SynthSpec {
            positives_per_category: 4,
            negatives: 2,
            seed: seed.wrapping_add(1),
            ..spec
        };
        Ok(Self {
            bundle,
            images: generate_images(&test)?,
            current: 0,
            use_candidates: true,
            superpixel: true,
        })
    }

    pub fn categories(&self) -> Vec<&str> {
        self.bundle.category_names()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn image_id(&self) -> &str {
        &self.images[self.current].id
    }

    pub fn select_image(&mut self, index: usize) -> Result<()> {
        if index >= self.images.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.images.len(),
            });
        }
        self.current = index;
        Ok(())
    }

    /// Pixel dimensions `(height, width)` of the current image.
    pub fn dims(&self) -> (usize, usize) {
        let f = &self.images[self.current].features;
        (f.height() * FEATURE_STRIDE, f.width() * FEATURE_STRIDE)
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        match &self.images[self.current].image {
            Some(img) => img.data().chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
            None => Vec::new(),
        }
    }

    fn input(&self) -> ImageInput {
        self.images[self.current].input(self.use_candidates)
    }

    fn engine(&self) -> SaliencyEngine<'_> {
        let opts = InferenceOptions {
            superpixel: self.superpixel,
            ..InferenceOptions::default()
        };
        SaliencyEngine::new(&self.bundle, opts)
    }

    fn chain(&self, category: &str) -> Result<CategoryMaps> {
        let idx = self.bundle.index_of(category)?;
        self.engine().category_chain(idx, &self.input())
    }

    /// The requested map at pixel resolution; cell maps are replicated.
    pub fn stage_map(&self, category: &str, stage: Stage) -> Result<SaliencyMap> {
        if stage == Stage::Final {
            return Ok(self.engine().s_categ(category, &self.input())?.s_categ);
        }
        let maps = self.chain(category)?;
        let cells = match stage {
            Stage::Bcspp => maps.bcspp,
            Stage::Bu => maps.bu,
            Stage::Combined => maps.combined,
            Stage::Feature => maps.feature,
            Stage::Fused => maps.s_p,
            Stage::Final => unreachable!(),
        };
        let (h, w) = self.dims();
        SaliencyMap::from_fn(h, w, |r, c| cells.get(r / FEATURE_STRIDE, c / FEATURE_STRIDE))
    }

    pub fn bu_scores(&self, category: &str) -> Result<Vec<CandidateScore>> {
        let model = &self.bundle.categories[self.bundle.index_of(category)?].image;
        let input = self.input();
        let f = &input.features;
        let layout = self.bundle.layout_for(f)?;
        let candidates = build_candidates(f.height(), f.width(), input.image.as_ref(), &input.bu_maps)?;
        let sel = select(f, &candidates, model, &layout)?;
        Ok(candidates
            .maps()
            .iter()
            .zip(&sel.scores)
            .enumerate()
            .map(|(i, ((name, _), s))| CandidateScore {
                name: name.clone(),
                objective: s.objective,
                selected: i == sel.index,
            })
            .collect())
    }

    pub fn detections(&self, category: &str) -> Result<Vec<DetectionBox>> {
        Ok(detect(&self.stage_map(category, Stage::Final)?, category))
    }
}

/// Black to red to yellow to white ramp over `[0, 1]`.
pub fn heat_rgba(map: &SaliencyMap) -> Vec<u8> {
    map.values()
        .iter()
        .flat_map(|&v| {
            let t = v.clamp(0.0, 1.0) * 3.0;
            let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            [ch(t), ch(t - 1.0), ch(t - 2.0), 255]
        })
        .collect()
}

#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            state: DemoState::new(seed as u64)?,
        })
    }

    /// Comma-separated category names.
    pub fn categories(&self) -> String {
        self.state.categories().join(",")
    }

    pub fn image_count(&self) -> usize {
        self.state.image_count()
    }

    pub fn image_id(&self) -> String {
        self.state.image_id().to_string()
    }

    pub fn select_image(&mut self, index: usize) -> std::result::Result<(), JsError> {
        Ok(self.state.select_image(index)?)
    }

    pub fn set_options(&mut self, use_candidates: bool, superpixel: bool) {
        self.state.use_candidates = use_candidates;
        self.state.superpixel = superpixel;
    }

    pub fn width(&self) -> usize {
        self.state.dims().1
    }

    pub fn height(&self) -> usize {
        self.state.dims().0
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        self.state.image_rgba()
    }

    pub fn map_rgba(&self, category: &str, stage: &str) -> std::result::Result<Vec<u8>, JsError> {
        let stage = stage.parse().map_err(|e: String| JsError::new(&e))?;
        Ok(heat_rgba(&self.state.stage_map(category, stage)?))
    }

    /// One `name<TAB>objective<TAB>selected` line per candidate.
    pub fn bu_scores(&self, category: &str) -> std::result::Result<String, JsError> {
        Ok(self
            .state
            .bu_scores(category)?
            .iter()
            .map(|c| format!("{}\t{:.4}\t{}\n", c.name, c.objective, c.selected))
            .collect())
    }

    /// Flattened `[x, y, w, h, score]` per box, best first.
    pub fn detections(&self, category: &str) -> std::result::Result<Vec<f64>, JsError> {
        Ok(self
            .state
            .detections(category)?
            .iter()
            .flat_map(|d| [d.x as f64, d.y as f64, d.w as f64, d.h as f64, d.score])
            .collect())
    }
}
