//! Backtracked classifier saliency: attributes the pooled-classifier score to
//! the feature cells whose values won pyramid slots.
//!
//! For each cell `m`:
//!
//! * `psi_card` counts the slots it won,
//! * `p_r` is that count over the total number of won slots,
//! * `theta` sums `w_i * z_i` over its slots (its share of the bias-free score),
//! * `p_c_given_r` is `sigmoid(theta)` for non-negative `theta`, else 0,
//! * cells with a strictly positive contribution and at least one won slot
//!   form the set `omega`,
//! * `s_t` is `sigmoid(w . pool_single(m) + b)` on `omega`, 0 elsewhere.

use crate::error::{dim_mismatch, Result};
use crate::map::{FeatureMap, SaliencyMap};
use crate::pooling::{pool, PyramidLayout};
use crate::svm::{sigmoid, LinearModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub psi_card: Vec<usize>,
    pub p_r: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_c_given_r: Vec<f64>,
    pub omega: Vec<bool>,
    pub s_t: Vec<f64>,
}

impl Attribution {
    pub fn len(&self) -> usize {
        self.s_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_t.is_empty()
    }
}

/// `w . pool_single(f, m) + b`, summing only the slots of `m`'s regions.
///
/// Slots are visited in ascending index order and the skipped slots are all
/// zero, so the result equals the dense dot product over the isolated pooled
/// vector.
pub fn isolated_score(f: &FeatureMap, m: usize, model: &LinearModel, layout: &PyramidLayout) -> f64 {
    let d = f.depth();
    let u = f.feature(m);
    let mut sum = 0.0;
    for &r in layout.regions_of(m) {
        for (j, &v) in u.iter().enumerate() {
            if v > 0.0 {
                sum += model.weights[r * d + j] * v;
            }
        }
    }
    sum + model.bias
}

pub fn attribute(f: &FeatureMap, model: &LinearModel, layout: &PyramidLayout) -> Result<Attribution> {
    let n = layout.pooled_len(f.depth());
    if model.dim() != n {
        return Err(dim_mismatch(format!(
            "classifier dim {} vs pooled length {n}",
            model.dim()
        )));
    }
    let pv = pool(f, layout)?;
    let cells = f.len();
    let mut psi_card = vec![0usize; cells];
    let mut theta = vec![0.0; cells];
    for (i, winner) in pv.provenance().iter().enumerate() {
        if let Some(w) = winner {
            psi_card[w.feature] += 1;
            theta[w.feature] += model.weights[i] * pv.values()[i];
        }
    }
    let total: usize = psi_card.iter().sum();
    let p_r: Vec<f64> = if total == 0 {
        vec![0.0; cells]
    } else {
        psi_card.iter().map(|&c| c as f64 / total as f64).collect()
    };
    let p_c_given_r: Vec<f64> = theta
        .iter()
        .map(|&t| if t >= 0.0 { sigmoid(t) } else { 0.0 })
        .collect();
    let omega: Vec<bool> = (0..cells)
        .map(|m| theta[m] > 0.0 && psi_card[m] > 0 && p_c_given_r[m] * p_r[m] > 0.0)
        .collect();
    let s_t = (0..cells)
        .map(|m| {
            if omega[m] {
                sigmoid(isolated_score(f, m, model, layout))
            } else {
                0.0
            }
        })
        .collect();
    Ok(Attribution {
        psi_card,
        p_r,
        theta,
        p_c_given_r,
        omega,
        s_t,
    })
}

/// Lays `s_t` out on the `h x w` feature grid.
pub fn bcspp_map(attr: &Attribution, h: usize, w: usize) -> Result<SaliencyMap> {
    if attr.len() != h * w {
        return Err(dim_mismatch(format!(
            "attribution over {} cells vs {h}x{w} grid",
            attr.len()
        )));
    }
    SaliencyMap::new(h, w, attr.s_t.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell() -> (FeatureMap, PyramidLayout) {
        let f = FeatureMap::new(1, 2, 2, vec![3.0, 0.0, 0.0, 5.0]).unwrap();
        let l = PyramidLayout::new(1, 2, &[1]).unwrap();
        (f, l)
    }

    #[test]
    fn hand_traced_example() {
        let (f, l) = two_cell();
        let model = LinearModel::new(vec![1.0, -1.0], 0.0).unwrap();
        let a = attribute(&f, &model, &l).unwrap();
        assert_eq!(a.psi_card, vec![1, 1]);
        assert_eq!(a.p_r, vec![0.5, 0.5]);
        assert_eq!(a.theta, vec![3.0, -5.0]);
        assert_eq!(a.omega, vec![true, false]);
        assert!((a.s_t[0] - 0.952574).abs() < 1e-6);
        assert_eq!(a.s_t[1], 0.0);
        let map = bcspp_map(&a, 1, 2).unwrap();
        assert!((map.get(0, 0) - 0.952574).abs() < 1e-6);
        assert_eq!(map.get(0, 1), 0.0);
    }

    #[test]
    fn zero_model_selects_nothing() {
        let (f, l) = two_cell();
        let a = attribute(&f, &LinearModel::zeros(2), &l).unwrap();
        assert!(a.omega.iter().all(|&o| !o));
        assert!(a.s_t.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn all_zero_features() {
        let f = FeatureMap::zeros(2, 2, 3);
        let l = PyramidLayout::new(2, 2, &[1, 2]).unwrap();
        let model = LinearModel::new(vec![1.0; 15], 0.5).unwrap();
        let a = attribute(&f, &model, &l).unwrap();
        assert!(a.p_r.iter().all(|&p| p == 0.0));
        assert!(a.s_t.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn model_dim_checked() {
        let (f, l) = two_cell();
        assert!(attribute(&f, &LinearModel::zeros(3), &l).is_err());
        let a = attribute(&f, &LinearModel::zeros(2), &l).unwrap();
        assert!(bcspp_map(&a, 2, 2).is_err());
    }
}
