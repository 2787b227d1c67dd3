//! Multi-scale spatial pyramid max-pooling with winner tracking.
//!
//! A pooled vector has one slot per (region, channel). Regions are ordered
//! level by level in the order the levels were given, row-major within a
//! level; channels vary fastest, so slot `i` reads channel `i % depth` of
//! region `i / depth`.

use std::ops::Range;

use crate::error::{dim_mismatch, Error, Result};
use crate::map::FeatureMap;

pub const DEFAULT_LEVELS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub level: usize,
    pub grid: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows.contains(&row) && self.cols.contains(&col)
    }
}

/// Region geometry of a pyramid over an `height x width` feature grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidLayout {
    height: usize,
    width: usize,
    levels: Vec<usize>,
    regions: Vec<Region>,
    /// For each cell, the index of its region at every kept level.
    cell_regions: Vec<Vec<usize>>,
}

fn bounds(dim: usize, g: usize) -> Vec<usize> {
    (0..=g).map(|k| k * dim / g).collect()
}

impl PyramidLayout {
    /// Builds the layout; grid sizes larger than `min(height, width)` are
    /// dropped, preserving the order of the rest.
    pub fn new(height: usize, width: usize, levels: &[usize]) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_mismatch(format!("empty feature grid {height}x{width}")));
        }
        if levels.contains(&0) {
            return Err(dim_mismatch("pyramid grid size 0"));
        }
        let kept: Vec<usize> = levels
            .iter()
            .copied()
            .filter(|&g| g <= height.min(width))
            .collect();
        if kept.is_empty() {
            return Err(dim_mismatch(format!(
                "no pyramid level fits a {height}x{width} grid"
            )));
        }
        let mut regions = Vec::new();
        let mut cell_regions = vec![Vec::with_capacity(kept.len()); height * width];
        for (level, &g) in kept.iter().enumerate() {
            let rb = bounds(height, g);
            let cb = bounds(width, g);
            for gr in 0..g {
                for gc in 0..g {
                    let idx = regions.len();
                    let region = Region {
                        level,
                        grid: g,
                        rows: rb[gr]..rb[gr + 1],
                        cols: cb[gc]..cb[gc + 1],
                    };
                    for r in region.rows.clone() {
                        for c in region.cols.clone() {
                            cell_regions[r * width + c].push(idx);
                        }
                    }
                    regions.push(region);
                }
            }
        }
        Ok(Self {
            height,
            width,
            levels: kept,
            regions,
            cell_regions,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Grid sizes actually used after clamping.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Pooled vector length for features of `depth` channels.
    pub fn pooled_len(&self, depth: usize) -> usize {
        self.regions.len() * depth
    }

    /// Regions (one per level, ascending) containing cell `m`.
    pub fn regions_of(&self, m: usize) -> &[usize] {
        &self.cell_regions[m]
    }

    pub fn check(&self, f: &FeatureMap) -> Result<()> {
        if (f.height(), f.width()) != (self.height, self.width) {
            return Err(dim_mismatch(format!(
                "layout is {}x{}, feature map is {}x{}",
                self.height,
                self.width,
                f.height(),
                f.width()
            )));
        }
        Ok(())
    }
}

/// Cell and channel whose value won a pooled slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Winner {
    pub feature: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    values: Vec<f64>,
    provenance: Vec<Option<Winner>>,
}

impl PooledVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &[Option<Winner>] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pools an implicit map whose value at (cell `m`, channel `j`) is `value(m, j)`.
///
/// The winner of a slot is the first strictly positive maximum in row-major
/// cell order; a slot whose candidates are all zero pools to 0 with no winner.
pub fn pool_with(
    layout: &PyramidLayout,
    depth: usize,
    value: impl Fn(usize, usize) -> f64,
) -> PooledVector {
    let n = layout.pooled_len(depth);
    let mut values = vec![0.0; n];
    let mut provenance = vec![None; n];
    let width = layout.width;
    for (r, region) in layout.regions.iter().enumerate() {
        let slots = r * depth..(r + 1) * depth;
        let (vals, prov) = (&mut values[slots.clone()], &mut provenance[slots]);
        for row in region.rows.clone() {
            for col in region.cols.clone() {
                let m = row * width + col;
                for j in 0..depth {
                    let v = value(m, j);
                    if v > vals[j] {
                        vals[j] = v;
                        prov[j] = Some(Winner {
                            feature: m,
                            channel: j,
                        });
                    }
                }
            }
        }
    }
    PooledVector { values, provenance }
}

pub fn pool(f: &FeatureMap, layout: &PyramidLayout) -> Result<PooledVector> {
    layout.check(f)?;
    Ok(pool_with(layout, f.depth(), |m, j| f.value(m, j)))
}

/// Pooled vector of the map with every feature except `m` zeroed, built from
/// `m`'s region memberships alone.
pub fn pool_single(f: &FeatureMap, m: usize, layout: &PyramidLayout) -> Result<PooledVector> {
    layout.check(f)?;
    if m >= f.len() {
        return Err(Error::IndexOutOfRange {
            index: m,
            len: f.len(),
        });
    }
    let d = f.depth();
    let n = layout.pooled_len(d);
    let mut values = vec![0.0; n];
    let mut provenance = vec![None; n];
    let u = f.feature(m);
    for &r in layout.regions_of(m) {
        for (j, &v) in u.iter().enumerate() {
            if v > 0.0 {
                values[r * d + j] = v;
                provenance[r * d + j] = Some(Winner {
                    feature: m,
                    channel: j,
                });
            }
        }
    }
    Ok(PooledVector { values, provenance })
}

/// Winner of slot `i`, or `None` for a zero slot.
pub fn inverse(pv: &PooledVector, i: usize) -> Result<Option<Winner>> {
    pv.provenance
        .get(i)
        .copied()
        .ok_or(Error::IndexOutOfRange {
            index: i,
            len: pv.len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(h: usize, w: usize, d: usize, data: &[f64]) -> FeatureMap {
        FeatureMap::new(h, w, d, data.to_vec()).unwrap()
    }

    #[test]
    fn default_layout_on_4x4() {
        let l = PyramidLayout::new(4, 4, &DEFAULT_LEVELS).unwrap();
        assert_eq!(l.num_regions(), 21);
        for region in &l.regions()[5..] {
            assert_eq!(region.rows.len(), 1);
            assert_eq!(region.cols.len(), 1);
        }
    }

    #[test]
    fn small_grid_drops_levels() {
        let l = PyramidLayout::new(2, 2, &DEFAULT_LEVELS).unwrap();
        assert_eq!(l.levels(), &[1, 2]);
        assert_eq!(l.num_regions(), 5);
    }

    #[test]
    fn non_divisible_bounds() {
        let l = PyramidLayout::new(3, 3, &[2]).unwrap();
        let rows: Vec<_> = l.regions().iter().map(|r| r.rows.clone()).collect();
        assert_eq!(rows, vec![0..1, 0..1, 1..3, 1..3]);
    }

    #[test]
    fn regions_partition_the_grid() {
        let l = PyramidLayout::new(7, 5, &DEFAULT_LEVELS).unwrap();
        for level in 0..l.levels().len() {
            for row in 0..7 {
                for col in 0..5 {
                    let n = l
                        .regions()
                        .iter()
                        .filter(|r| r.level == level && r.contains(row, col))
                        .count();
                    assert_eq!(n, 1);
                }
            }
        }
    }

    #[test]
    fn global_max() {
        let f = fm(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        let l = PyramidLayout::new(2, 2, &[1]).unwrap();
        let pv = pool(&f, &l).unwrap();
        assert_eq!(pv.values(), &[4.0]);
        assert_eq!(inverse(&pv, 0).unwrap(), Some(Winner { feature: 3, channel: 0 }));
    }

    #[test]
    fn two_levels() {
        let f = fm(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        let l = PyramidLayout::new(2, 2, &[1, 2]).unwrap();
        assert_eq!(pool(&f, &l).unwrap().values(), &[4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn per_channel_max_and_single() {
        let f = fm(1, 2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let l = PyramidLayout::new(1, 2, &[1]).unwrap();
        let pv = pool(&f, &l).unwrap();
        assert_eq!(pv.values(), &[3.0, 5.0]);
        assert_eq!(
            pv.provenance(),
            &[
                Some(Winner { feature: 0, channel: 0 }),
                Some(Winner { feature: 1, channel: 1 })
            ]
        );
        assert_eq!(pool_single(&f, 0, &l).unwrap().values(), &[3.0, 0.0]);
        assert_eq!(pool_single(&f, 1, &l).unwrap().values(), &[0.0, 5.0]);
        assert!(matches!(
            pool_single(&f, 2, &l).unwrap_err(),
            Error::IndexOutOfRange { .. }
        ));
    }

    #[test]
    fn zero_slots_have_no_winner() {
        let f = fm(1, 2, 2, &[3.0, 0.0, 1.0, 0.0]);
        let l = PyramidLayout::new(1, 2, &[1]).unwrap();
        let pv = pool(&f, &l).unwrap();
        assert_eq!(inverse(&pv, 1).unwrap(), None);
        assert!(inverse(&pv, 2).is_err());
    }

    #[test]
    fn ties_go_to_first_cell() {
        let f = fm(2, 2, 1, &[2.0, 2.0, 2.0, 1.0]);
        let l = PyramidLayout::new(2, 2, &[1]).unwrap();
        let pv = pool(&f, &l).unwrap();
        assert_eq!(pv.provenance()[0], Some(Winner { feature: 0, channel: 0 }));
    }

    #[test]
    fn layout_must_match() {
        let f = fm(2, 2, 1, &[1.0; 4]);
        let l = PyramidLayout::new(3, 2, &[1]).unwrap();
        assert!(pool(&f, &l).is_err());
    }
}
