//! Training of the per-category image and feature classifiers.

use std::collections::BTreeSet;

use crate::backtrack::{attribute, bcspp_map};
use crate::bu::{build_candidates, combine, select};
use crate::error::{dim_mismatch, Error, Result};
use crate::featsal::{harvest, HarvestConfig, HarvestImage};
use crate::inference::{CategoryModel, ImageInput, ModelBundle};
use crate::map::SaliencyMap;
use crate::pooling::{pool, PyramidLayout, DEFAULT_LEVELS};
use crate::svm::{train_with_report, TrainConfig};

#[derive(Debug, Clone)]
pub struct TrainingImage {
    pub id: String,
    pub labels: BTreeSet<String>,
    pub input: ImageInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub levels: Vec<usize>,
    pub svm: TrainConfig,
    pub harvest: HarvestConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            svm: TrainConfig::default(),
            harvest: HarvestConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn with_seed(seed: u64) -> Self {
        let mut o = Self::default();
        o.svm.seed = seed;
        o.harvest.seed = seed;
        o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    pub name: String,
    pub image_objective: f64,
    pub image_epochs: usize,
    pub image_converged: bool,
    pub feature_objective: f64,
    pub feature_epochs: usize,
    pub feature_converged: bool,
    pub positives: usize,
    pub negatives: usize,
    /// Selected bottom-up candidate name for each positive image, in input order.
    pub selected_bu: Vec<(String, String)>,
}

/// Combined map `H` and its parts for one positive training image.
struct PositiveMaps {
    combined: SaliencyMap,
    bcspp: SaliencyMap,
    bu: SaliencyMap,
    bu_name: String,
}

pub fn train_bundle(
    images: &[TrainingImage],
    categories: &[String],
    opts: &TrainOptions,
) -> Result<(ModelBundle, Vec<CategoryReport>)> {
    opts.svm.validate()?;
    if categories.is_empty() {
        return Err(Error::Config("no categories to train".into()));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateData("no training images".into()))?;
    let depth = first.input.features.depth();

    let mut layouts = Vec::with_capacity(images.len());
    let mut pooled = Vec::with_capacity(images.len());
    let mut pooled_len = None;
    for img in images {
        let f = &img.input.features;
        if f.depth() != depth {
            return Err(dim_mismatch(format!("feature depth {} vs {depth}", f.depth())).context(format!("image {}", img.id)));
        }
        let layout = PyramidLayout::new(f.height(), f.width(), &opts.levels)?;
        let n = layout.pooled_len(depth);
        if *pooled_len.get_or_insert(n) != n {
            return Err(dim_mismatch(format!(
                "pooled length {n} differs from earlier images; keep every grid at least as large as the finest level"
            ))
            .context(format!("image {}", img.id)));
        }
        pooled.push(pool(f, &layout)?.values().to_vec());
        layouts.push(layout);
    }
    let pooled_len = pooled_len.unwrap_or(0);
    let levels = layouts[0].levels().to_vec();

    let mut models = Vec::with_capacity(categories.len());
    let mut reports = Vec::with_capacity(categories.len());
    for (ci, cat) in categories.iter().enumerate() {
        let ctx = |e: Error| e.context(format!("category {cat:?}"));
        let ys: Vec<f64> = images
            .iter()
            .map(|i| if i.labels.contains(cat) { 1.0 } else { -1.0 })
            .collect();
        let n_pos = ys.iter().filter(|&&y| y > 0.0).count();
        if n_pos == 0 || n_pos == ys.len() {
            return Err(Error::DegenerateData(format!(
                "category {cat:?} needs at least one positive and one negative image ({n_pos} of {} positive)",
                ys.len()
            )));
        }
        let image_report = train_with_report(&pooled, &ys, &opts.svm).map_err(ctx)?;
        let image_model = image_report.model.clone();

        let mut positive_maps = Vec::with_capacity(n_pos);
        for (img, layout) in images.iter().zip(&layouts).filter(|(i, _)| i.labels.contains(cat)) {
            let f = &img.input.features;
            let run = || -> Result<PositiveMaps> {
                let attr = attribute(f, &image_model, layout)?;
                let bcspp = bcspp_map(&attr, f.height(), f.width())?;
                let candidates = build_candidates(f.height(), f.width(), img.input.image.as_ref(), &img.input.bu_maps)?;
                let sel = select(f, &candidates, &image_model, layout)?;
                Ok(PositiveMaps {
                    combined: combine(&bcspp, &sel.map)?,
                    bcspp,
                    bu: sel.map,
                    bu_name: sel.name,
                })
            };
            positive_maps.push((img, run().map_err(|e| ctx(e.context(format!("image {}", img.id))))?));
        }

        let mut harvest_input = Vec::with_capacity(images.len());
        for (img, m) in &positive_maps {
            harvest_input.push(HarvestImage::Positive {
                features: &img.input.features,
                combined: &m.combined,
                bcspp: &m.bcspp,
                bu: &m.bu,
            });
        }
        for img in images.iter().filter(|i| !i.labels.contains(cat)) {
            harvest_input.push(HarvestImage::Negative {
                features: &img.input.features,
            });
        }
        let hcfg = HarvestConfig {
            seed: opts.harvest.seed.wrapping_add(ci as u64),
            ..opts.harvest.clone()
        };
        let set = harvest(&harvest_input, &hcfg).map_err(ctx)?;
        let (fx, fy) = set.to_samples();
        if set.negatives.is_empty() {
            return Err(Error::DegenerateData(format!(
                "category {cat:?}: no negative features harvested"
            )));
        }
        let feature_report = train_with_report(&fx, &fy, &opts.svm).map_err(ctx)?;

        reports.push(CategoryReport {
            name: cat.clone(),
            image_objective: image_report.objective(),
            image_epochs: image_report.epochs,
            image_converged: image_report.converged,
            feature_objective: feature_report.objective(),
            feature_epochs: feature_report.epochs,
            feature_converged: feature_report.converged,
            positives: set.positives.len(),
            negatives: set.negatives.len(),
            selected_bu: positive_maps
                .iter()
                .map(|(img, m)| (img.id.clone(), m.bu_name.clone()))
                .collect(),
        });
        models.push(CategoryModel {
            name: cat.clone(),
            image: image_model,
            feature: feature_report.model,
        });
    }
    let bundle = ModelBundle::new(levels, depth, pooled_len, models)?;
    Ok((bundle, reports))
}
