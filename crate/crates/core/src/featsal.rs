//! Per-feature saliency classifier and its weakly labelled training set.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::map::{FeatureMap, SaliencyMap};
use crate::svm::{sigmoid, LinearModel};

pub const POSITIVE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NEG_PER_IMAGE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestConfig {
    pub neg_per_image: usize,
    pub seed: u64,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            neg_per_image: DEFAULT_NEG_PER_IMAGE,
            seed: crate::svm::DEFAULT_SEED,
        }
    }
}

/// One training image as seen by the harvester. Positive images carry their
/// cell-resolution combined, backtracked and selected bottom-up maps.
#[derive(Debug, Clone, Copy)]
pub enum HarvestImage<'a> {
    Positive {
        features: &'a FeatureMap,
        combined: &'a SaliencyMap,
        bcspp: &'a SaliencyMap,
        bu: &'a SaliencyMap,
    },
    Negative {
        features: &'a FeatureMap,
    },
}

/// Where a harvested vector came from: image index in the harvest input and cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSource {
    pub image: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTrainSet {
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub positive_sources: Vec<FeatureSource>,
    pub negative_sources: Vec<FeatureSource>,
    pub pos_image_object: usize,
    pub pos_image_background: usize,
    pub neg_image: usize,
}

impl FeatureTrainSet {
    /// Samples and `+1/-1` labels in SVM form.
    pub fn to_samples(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = self.positives.iter().chain(&self.negatives).cloned().collect();
        let ys = std::iter::repeat(1.0)
            .take(self.positives.len())
            .chain(std::iter::repeat(-1.0).take(self.negatives.len()))
            .collect();
        (xs, ys)
    }
}

fn check_grid(f: &FeatureMap, m: &SaliencyMap, what: &str) -> Result<()> {
    if m.dims() != (f.height(), f.width()) {
        return Err(dim_mismatch(format!(
            "{what} map {}x{} vs feature grid {}x{}",
            m.height(),
            m.width(),
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// Positive images contribute every cell with combined saliency above 0.5 as
/// a positive, and every cell with zero backtracked saliency and bottom-up
/// saliency below 0.5 as a negative. Each negative image contributes up to
/// `neg_per_image` cells drawn without replacement.
pub fn harvest(images: &[HarvestImage<'_>], cfg: &HarvestConfig) -> Result<FeatureTrainSet> {
    let mut set = FeatureTrainSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut depth = None;
    for (image, item) in images.iter().enumerate() {
        let features = match item {
            HarvestImage::Positive { features, .. } | HarvestImage::Negative { features } => *features,
        };
        if *depth.get_or_insert(features.depth()) != features.depth() {
            return Err(dim_mismatch(format!("image {image} has feature depth {}", features.depth())));
        }
        match item {
            HarvestImage::Positive {
                features,
                combined,
                bcspp,
                bu,
            } => {
                check_grid(features, combined, "combined")?;
                check_grid(features, bcspp, "backtracked")?;
                check_grid(features, bu, "bottom-up")?;
                for cell in 0..features.len() {
                    let source = FeatureSource { image, cell };
                    if combined.values()[cell] > POSITIVE_THRESHOLD {
                        set.positives.push(features.feature(cell).to_vec());
                        set.positive_sources.push(source);
                        set.pos_image_object += 1;
                    } else if bcspp.values()[cell] == 0.0 && bu.values()[cell] < POSITIVE_THRESHOLD {
                        set.negatives.push(features.feature(cell).to_vec());
                        set.negative_sources.push(source);
                        set.pos_image_background += 1;
                    }
                }
            }
            HarvestImage::Negative { features } => {
                let cells = features.len();
                let take = cfg.neg_per_image.min(cells);
                let mut picked = sample(&mut rng, cells, take).into_vec();
                picked.sort_unstable();
                for cell in picked {
                    set.negatives.push(features.feature(cell).to_vec());
                    set.negative_sources.push(FeatureSource { image, cell });
                    set.neg_image += 1;
                }
            }
        }
    }
    if set.positives.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(set)
}

/// `sigmoid(v . u + b_v)`.
pub fn feature_prob(model: &LinearModel, u: &[f64]) -> Result<f64> {
    Ok(sigmoid(crate::svm::score(model, u)?))
}

/// Feature-saliency map: [`feature_prob`] at every cell.
pub fn l_map(model: &LinearModel, f: &FeatureMap) -> Result<SaliencyMap> {
    if model.dim() != f.depth() {
        return Err(dim_mismatch(format!(
            "feature classifier dim {} vs depth {}",
            model.dim(),
            f.depth()
        )));
    }
    let values = (0..f.len())
        .map(|m| feature_prob(model, f.feature(m)))
        .collect::<Result<Vec<_>>>()?;
    SaliencyMap::new(f.height(), f.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> SaliencyMap {
        SaliencyMap::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn positive_threshold() {
        let f = FeatureMap::new(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let h = row(&[0.7, 0.3, 0.6]);
        let bcspp = row(&[0.9, 0.5, 0.8]);
        let bu = row(&[0.8, 0.6, 0.7]);
        let set = harvest(
            &[HarvestImage::Positive {
                features: &f,
                combined: &h,
                bcspp: &bcspp,
                bu: &bu,
            }],
            &HarvestConfig::default(),
        )
        .unwrap();
        assert_eq!(set.positives, vec![vec![1.0], vec![3.0]]);
        assert!(set.negatives.is_empty());
    }

    #[test]
    fn negative_rule_in_positive_image() {
        let f = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let h = row(&[0.9, 0.0]);
        let bcspp = row(&[0.95, 0.0]);
        let bu = row(&[0.95, 0.4]);
        let set = harvest(
            &[HarvestImage::Positive {
                features: &f,
                combined: &h,
                bcspp: &bcspp,
                bu: &bu,
            }],
            &HarvestConfig::default(),
        )
        .unwrap();
        assert_eq!(set.negatives, vec![vec![2.0]]);
        assert_eq!(set.pos_image_background, 1);
    }

    #[test]
    fn no_positives() {
        let f = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let h = row(&[0.4, 0.4]);
        let err = harvest(
            &[HarvestImage::Positive {
                features: &f,
                combined: &h,
                bcspp: &h,
                bu: &h,
            }],
            &HarvestConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoPositives));
    }

    #[test]
    fn negative_images_sampled_without_replacement() {
        let pos = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let one = row(&[1.0]);
        let small = FeatureMap::new(2, 3, 1, (0..6).map(|v| v as f64).collect()).unwrap();
        let big = FeatureMap::new(10, 10, 1, (0..100).map(|v| v as f64).collect()).unwrap();
        let images = [
            HarvestImage::Positive {
                features: &pos,
                combined: &one,
                bcspp: &one,
                bu: &one,
            },
            HarvestImage::Negative { features: &small },
            HarvestImage::Negative { features: &big },
        ];
        let set = harvest(&images, &HarvestConfig::default()).unwrap();
        assert_eq!(set.neg_image, 6 + 50);
        let mut cells: Vec<usize> = set
            .negative_sources
            .iter()
            .filter(|s| s.image == 2)
            .map(|s| s.cell)
            .collect();
        cells.dedup();
        assert_eq!(cells.len(), 50);
        assert_eq!(harvest(&images, &HarvestConfig::default()).unwrap(), set);
    }

    #[test]
    fn feature_prob_examples() {
        let zero = LinearModel::zeros(2);
        assert_eq!(feature_prob(&zero, &[3.0, 9.0]).unwrap(), 0.5);
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!((feature_prob(&m, &[3.0, 9.0]).unwrap() - 0.952574).abs() < 1e-6);
        assert!(feature_prob(&m, &[3.0]).is_err());
    }

    #[test]
    fn l_map_examples() {
        let f = FeatureMap::new(1, 2, 2, vec![3.0, 0.0, 0.0, 5.0]).unwrap();
        let zero = l_map(&LinearModel::zeros(2), &f).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.5));
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let l = l_map(&m, &f).unwrap();
        assert!((l.values()[0] - 0.952574).abs() < 1e-6);
        assert_eq!(l.values()[1], 0.5);
        assert!(l_map(&LinearModel::zeros(3), &f).is_err());
    }
}
