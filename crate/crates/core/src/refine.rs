//! Pixel-level refinement: bicubic upsampling, SLIC superpixels and
//! multi-scale superpixel averaging.

use std::collections::VecDeque;

use crate::error::{dim_mismatch, Error, Result};
use crate::map::{RgbImage, SaliencyMap};

pub const DEFAULT_SCALES: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const SLIC_ITERATIONS: usize = 10;

/// Catmull-Rom cubic kernel (`a = -0.5`).
#[inline]
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Taps and weights for resampling `src` samples to `dst` samples with
/// pixel-centre alignment and replicated borders.
fn taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = (i as f64 + 0.5) * scale - 0.5;
            let base = x.floor();
            let t = x - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let offset = k as f64 - 1.0;
                idx[k] = (base + offset).clamp(0.0, (src - 1) as f64) as usize;
                w[k] = cubic(t - offset);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic upsampling, clamped to `[0, 1]`.
pub fn upsample(map: &SaliencyMap, target_h: usize, target_w: usize) -> Result<SaliencyMap> {
    let (h, w) = map.dims();
    if target_h < h || target_w < w {
        return Err(Error::BadTarget {
            src_h: h,
            src_w: w,
            target_h,
            target_w,
        });
    }
    let col_taps = taps(w, target_w);
    let row_taps = taps(h, target_h);
    let mut horiz = vec![0.0; h * target_w];
    for r in 0..h {
        for (c, (idx, wt)) in col_taps.iter().enumerate() {
            horiz[r * target_w + c] = (0..4).map(|k| wt[k] * map.get(r, idx[k])).sum();
        }
    }
    let mut out = vec![0.0; target_h * target_w];
    for (r, (idx, wt)) in row_taps.iter().enumerate() {
        for c in 0..target_w {
            out[r * target_w + c] = (0..4).map(|k| wt[k] * horiz[idx[k] * target_w + c]).sum();
        }
    }
    SaliencyMap::clamped(target_h, target_w, out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub k_actual: usize,
    pub scale_k: usize,
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(p: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = p.map(srgb_to_linear);
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

/// SLIC with grid seeding, 10 k-means iterations restricted to `2s x 2s`
/// windows and a final connectivity pass merging fragments smaller than
/// `s^2 / 4` into their largest 4-neighbour.
pub fn slic(image: &RgbImage, k: usize, compactness: f64) -> Result<SuperpixelLabeling> {
    let (h, w) = (image.height(), image.width());
    let pixels = h * w;
    if k == 0 || k > pixels {
        return Err(Error::BadK { k, pixels });
    }
    let lab: Vec<[f64; 3]> = (0..pixels).map(|i| rgb_to_lab(image.pixel(i / w, i % w))).collect();
    let s = (pixels as f64 / k as f64).sqrt();
    let nx = ((w as f64 / s).round() as usize).clamp(1, w);
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);

    let grad = |y: usize, x: usize| -> f64 {
        let at = |yy: usize, xx: usize| lab[yy * w + xx];
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
        d(at(y, x1), at(y, x0)) + d(at(y1, x), at(y0, x))
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let fy = (gy as f64 + 0.5) * h as f64 / ny as f64;
            let fx = (gx as f64 + 0.5) * w as f64 / nx as f64;
            let (cy, cx) = ((fy as usize).min(h - 1), (fx as usize).min(w - 1));
            // Move the seed to the lowest-gradient pixel of its 3x3 neighbourhood.
            let mut best = (grad(cy, cx), cy, cx);
            for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = grad(yy, xx);
                    if g < best.0 {
                        best = (g, yy, xx);
                    }
                }
            }
            let (_, by, bx) = best;
            let (y, x) = if (by, bx) == (cy, cx) {
                (fy, fx)
            } else {
                (by as f64 + 0.5, bx as f64 + 0.5)
            };
            centers.push(Center {
                lab: lab[by * w + bx],
                y,
                x,
            });
        }
    }

    let m2 = compactness * compactness;
    let inv_s2 = 1.0 / (s * s);
    let mut labels = vec![usize::MAX; pixels];
    let mut dist = vec![f64::INFINITY; pixels];
    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let y0 = (c.y - s).floor().max(0.0) as usize;
            let y1 = ((c.y + s).ceil() as usize).min(h);
            let x0 = (c.x - s).floor().max(0.0) as usize;
            let x1 = ((c.x + s).ceil() as usize).min(w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (0..3).map(|q| (p[q] - c.lab[q]).powi(2)).sum::<f64>();
                    let dy = y as f64 + 0.5 - c.y;
                    let dx = x as f64 + 0.5 - c.x;
                    let d = dc + (dy * dy + dx * dx) * inv_s2 * m2;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l == usize::MAX {
                continue;
            }
            let a = &mut acc[l];
            for q in 0..3 {
                a[q] += lab[i][q];
            }
            a[3] += (i / w) as f64 + 0.5;
            a[4] += (i % w) as f64 + 0.5;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.y = a[3] / a[5];
                c.x = a[4] / a[5];
            }
        }
    }

    let min_size = ((s * s / 4.0).floor() as usize).max(1);
    let (labels, k_actual) = enforce_connectivity(&labels, h, w, min_size);
    Ok(SuperpixelLabeling {
        height: h,
        width: w,
        labels,
        k_actual,
        scale_k: k,
    })
}

/// Splits labels into 4-connected components, merges components smaller
/// than `min_size` into their largest neighbouring component and relabels
/// in row-major order of first appearance.
fn enforce_connectivity(labels: &[usize], h: usize, w: usize, min_size: usize) -> (Vec<usize>, usize) {
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[start] {
                    comp[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }

    let ncomp = sizes.len();
    let mut neighbours = vec![Vec::new(); ncomp];
    for i in 0..n {
        let (y, x) = (i / w, i % w);
        for j in [
            (x + 1 < w).then(|| i + 1),
            (y + 1 < h).then(|| i + w),
        ]
        .into_iter()
        .flatten()
        {
            let (a, b) = (comp[i], comp[j]);
            if a != b {
                neighbours[a].push(b);
                neighbours[b].push(a);
            }
        }
    }
    for nb in neighbours.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }

    let mut parent: Vec<usize> = (0..ncomp).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merged_size = sizes.clone();
    let mut order: Vec<usize> = (0..ncomp).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let root = find(&mut parent, c);
        if merged_size[root] >= min_size {
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for &nb in &neighbours[c] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            let sz = merged_size[r];
            if best.map_or(true, |(bs, br)| sz > bs || (sz == bs && r < br)) {
                best = Some((sz, r));
            }
        }
        if let Some((_, target)) = best {
            parent[root] = target;
            merged_size[target] += merged_size[root];
        }
    }

    let mut remap = vec![usize::MAX; ncomp];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, comp[i]);
        if remap[r] == usize::MAX {
            remap[r] = next;
            next += 1;
        }
        out[i] = remap[r];
    }
    (out, next)
}

/// Replaces every pixel by the mean of its superpixel.
pub fn average_over_labels(map: &SaliencyMap, labeling: &SuperpixelLabeling) -> Result<SaliencyMap> {
    if map.dims() != (labeling.height, labeling.width) {
        return Err(dim_mismatch(format!(
            "map {}x{} vs labeling {}x{}",
            map.height(),
            map.width(),
            labeling.height,
            labeling.width
        )));
    }
    let mut sums = vec![0.0; labeling.k_actual];
    let mut counts = vec![0usize; labeling.k_actual];
    for (&l, &v) in labeling.labels.iter().zip(map.values()) {
        sums[l] += v;
        counts[l] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let values = labeling.labels.iter().map(|&l| means[l]).collect();
    SaliencyMap::clamped(map.height(), map.width(), values)
}

/// Mean over scales of the superpixel-averaged map; scales larger than the
/// pixel count are clamped to it.
pub fn multiscale_average(s_p: &SaliencyMap, image: &RgbImage, scales: &[usize]) -> Result<SaliencyMap> {
    Ok(multiscale_layers(s_p, image, scales)?.0)
}

/// Like [`multiscale_average`] but also returns each per-scale map.
pub fn multiscale_layers(
    s_p: &SaliencyMap,
    image: &RgbImage,
    scales: &[usize],
) -> Result<(SaliencyMap, Vec<SaliencyMap>)> {
    if s_p.dims() != (image.height(), image.width()) {
        return Err(dim_mismatch(format!(
            "map {}x{} vs image {}x{}",
            s_p.height(),
            s_p.width(),
            image.height(),
            image.width()
        )));
    }
    if scales.is_empty() {
        return Ok((s_p.clone(), Vec::new()));
    }
    let pixels = image.height() * image.width();
    let mut layers = Vec::with_capacity(scales.len());
    for &k in scales {
        let labeling = slic(image, k.clamp(1, pixels), DEFAULT_COMPACTNESS)?;
        layers.push(average_over_labels(s_p, &labeling)?);
    }
    let n = layers.len() as f64;
    let values = (0..pixels)
        .map(|i| layers.iter().map(|l| l.values()[i]).sum::<f64>() / n)
        .collect();
    Ok((SaliencyMap::clamped(s_p.height(), s_p.width(), values)?, layers))
}
