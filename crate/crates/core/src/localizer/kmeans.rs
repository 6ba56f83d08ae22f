//! Seeded k-means (k-means++ init, Lloyd iterations) and the two-garment
//! split: cluster the masked feature map, drop the background cluster,
//! then divide the rest at the largest vertical gap between centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::localizer::Mask;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Clustering result: per-point assignment plus final centers.
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f32>>,
    pub sizes: Vec<usize>,
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a fixed
/// seed; stops when assignments stabilize or after `max_iters`.
pub fn kmeans(points: &[Vec<f32>], k: usize, seed: u64, max_iters: usize) -> Result<KmeansOutcome> {
    if k == 0 || max_iters == 0 {
        return Err(Error::InvalidArg("k and max_iters must be >= 1".into()));
    }
    if points.is_empty() || k > points.len() {
        return Err(Error::InvalidArg(format!(
            "need at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "inconsistent point dimensions".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding: squared-distance-weighted draws.
    let mut centers: Vec<Vec<f32>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center; any pick works.
            rng.gen_range(0..points.len())
        } else {
            let r = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if r < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, centers.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, &v) in sums[assignments[i]].iter_mut().zip(p) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, &s) in centers[c].iter_mut().zip(&sums[c]) {
                    *dst = (s / counts[c] as f64) as f32;
                }
            }
        }
    }
    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    Ok(KmeansOutcome { assignments, centers, sizes })
}

/// Result of splitting a whole-outfit mask into upper and lower garments.
/// `degraded` flags the fallback (fewer than two non-background clusters):
/// the full mask is returned as `up` and `low` is empty.
#[derive(Debug, Clone)]
pub struct GarmentSplit {
    pub up: Mask,
    pub low: Mask,
    pub degraded: bool,
}

const SPLIT_SEED: u64 = 0xA11CE;
const SPLIT_ITERS: usize = 100;

/// Split a garment mask into upper/lower parts by clustering the masked
/// feature map `m · i3` (mask block-averaged down to feature resolution,
/// scaling each pixel's feature vector). The cluster with the smallest
/// mean feature value (the zeroed background) is dropped; the remaining
/// clusters are divided at the largest vertical gap between their pixel
/// centroids, and both groups are upsampled and intersected with `m`.
pub fn split_garments(m: &Mask, i3: &Tensor, k: usize) -> Result<GarmentSplit> {
    if k < 3 {
        return Err(Error::InvalidArg(format!("need k >= 3 clusters, got {k}")));
    }
    if m.fg_count() == 0 {
        return Err(Error::InvalidArg("mask has no foreground".into()));
    }
    let shape = i3.shape();
    if shape.len() != 3 {
        return Err(Error::shape("split_garments", format!("features {shape:?}")));
    }
    let (c, fh, fw) = (shape[0], shape[1], shape[2]);
    if fh == 0 || fw == 0 || m.height() % fh != 0 || m.width() % fw != 0
        || m.height() / fh != m.width() / fw
    {
        return Err(Error::shape(
            "split_garments",
            format!("mask {}x{} vs features {fh}x{fw}", m.height(), m.width()),
        ));
    }
    let f = m.height() / fh;
    // Soft mask at feature resolution: block means of the binarized mask.
    let mut mf = vec![0.0f32; fh * fw];
    for y in 0..fh {
        for x in 0..fw {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    if m.is_fg(y * f + dy, x * f + dx) {
                        acc += 1.0;
                    }
                }
            }
            mf[y * fw + x] = acc / (f * f) as f32;
        }
    }
    let points: Vec<Vec<f32>> = (0..fh * fw)
        .map(|p| (0..c).map(|ch| mf[p] * i3.data()[ch * fh * fw + p]).collect())
        .collect();
    let km = kmeans(&points, k, SPLIT_SEED, SPLIT_ITERS)?;
    // Mean feature value and pixel-centroid row per nonempty cluster.
    let mut stats: Vec<(usize, f64, f64)> = Vec::new();
    for cl in 0..k {
        if km.sizes[cl] == 0 {
            continue;
        }
        let mut val = 0.0f64;
        let mut row = 0.0f64;
        for (p, &a) in km.assignments.iter().enumerate() {
            if a == cl {
                val += points[p].iter().map(|&v| v as f64).sum::<f64>();
                row += (p / fw) as f64;
            }
        }
        let n = km.sizes[cl] as f64;
        stats.push((cl, val / (n * c as f64), row / n));
    }
    stats.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    stats.remove(0); // background: smallest mean feature value
    if stats.len() < 2 {
        return Ok(GarmentSplit {
            up: m.binarized(),
            low: Mask::zeros(m.height(), m.width()),
            degraded: true,
        });
    }
    stats.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
    let mut gap_at = 0;
    let mut gap = f64::NEG_INFINITY;
    for i in 0..stats.len() - 1 {
        let g = stats[i + 1].2 - stats[i].2;
        if g > gap {
            gap = g;
            gap_at = i;
        }
    }
    let top: Vec<usize> = stats[..=gap_at].iter().map(|s| s.0).collect();
    let mut up = Mask::zeros(m.height(), m.width());
    let mut low = Mask::zeros(m.height(), m.width());
    for y in 0..m.height() {
        for x in 0..m.width() {
            if !m.is_fg(y, x) {
                continue;
            }
            let cl = km.assignments[(y / f) * fw + x / f];
            if km.sizes[cl] == 0 || !stats.iter().any(|s| s.0 == cl) {
                continue;
            }
            if top.contains(&cl) {
                up.set(y, x, 1.0);
            } else {
                low.set(y, x, 1.0);
            }
        }
    }
    Ok(GarmentSplit { up, low, degraded: false })
}
