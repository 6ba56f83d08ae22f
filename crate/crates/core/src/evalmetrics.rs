//! Similarity and overlap metrics: SSIM over luma, IoU/Dice on binarized
//! masks, and the per-category localizer evaluation report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::localizer::Mask;
use crate::numerics::Tensor;
use crate::synthdata::Scene;
use crate::{Category, Error, Result};

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 1.0;

fn luma(img: &Tensor) -> Result<Vec<f64>> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape("ssim", format!("want [3,H,W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(
                0.299 * img.at3(0, y, x) as f64
                    + 0.587 * img.at3(1, y, x) as f64
                    + 0.114 * img.at3(2, y, x) as f64,
            );
        }
    }
    Ok(out)
}

fn gaussian_window() -> [f64; WIN * WIN] {
    let mut w = [0.0; WIN * WIN];
    let c = (WIN / 2) as f64;
    let mut sum = 0.0;
    for i in 0..WIN {
        for j in 0..WIN {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SIGMA * SIGMA)).exp();
            w[i * WIN + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Structural similarity between two [3,H,W] images in [0,1]: luma
/// conversion, 11x11 Gaussian-weighted local statistics (sigma 1.5),
/// stability constants K1=0.01 / K2=0.03 at dynamic range 1, averaged over
/// all fully-valid window positions.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (h, w) = (a.shape()[1], a.shape()[2]);
    if h < WIN || w < WIN {
        return Err(Error::InvalidArg(format!("ssim needs at least {WIN}x{WIN}, got {h}x{w}")));
    }
    let la = luma(a)?;
    let lb = luma(b)?;
    let win = gaussian_window();
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=(h - WIN) {
        for x0 in 0..=(w - WIN) {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..WIN {
                for j in 0..WIN {
                    let g = win[i * WIN + j];
                    let va = la[(y0 + i) * w + x0 + j];
                    let vb = lb[(y0 + i) * w + x0 + j];
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cab = sab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cab + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn overlap_counts(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            "mask overlap",
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    let (mut inter, mut ca, mut cb) = (0usize, 0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let fa = a.is_fg(y, x);
            let fb = b.is_fg(y, x);
            inter += (fa && fb) as usize;
            ca += fa as usize;
            cb += fb as usize;
        }
    }
    Ok((inter, ca, cb))
}

/// Intersection over union on binarized masks; 1.0 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, ca, cb) = overlap_counts(a, b)?;
    let union = ca + cb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Dice coefficient on binarized masks; 1.0 when both are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, ca, cb) = overlap_counts(a, b)?;
    Ok(if ca + cb == 0 { 1.0 } else { 2.0 * inter as f64 / (ca + cb) as f64 })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OverlapStats {
    pub iou: f64,
    pub dice: f64,
    pub count: usize,
}

/// Per-category and overall localizer quality.
#[derive(Debug, Clone, Serialize)]
pub struct LocalizerReport {
    pub per_category: BTreeMap<String, OverlapStats>,
    pub overall: OverlapStats,
}

/// Ground truth a predictor is scored against: the scene category's own
/// garment region (the outfit for dresses).
pub fn scene_target_mask(scene: &Scene) -> &Mask {
    match scene.category {
        Category::Upper => &scene.mask_up,
        Category::Lower => &scene.mask_low,
        _ => &scene.mask_full,
    }
}

/// Score a mask predictor against ground truth, scene by scene, and
/// aggregate mean IoU/Dice per category and overall.
pub fn eval_localizer(
    predict: impl Fn(&Scene) -> Result<Mask>,
    scenes: &[Scene],
) -> Result<LocalizerReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidArg("eval_localizer: empty dataset".into()));
    }
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let (mut ti, mut td, mut tc) = (0.0f64, 0.0f64, 0usize);
    for scene in scenes {
        let pred = predict(scene)?;
        let gt = scene_target_mask(scene);
        let i = iou(&pred, gt)?;
        let d = dice(&pred, gt)?;
        let e = sums.entry(scene.category.to_string()).or_insert((0.0, 0.0, 0));
        e.0 += i;
        e.1 += d;
        e.2 += 1;
        ti += i;
        td += d;
        tc += 1;
    }
    let per_category = sums
        .into_iter()
        .map(|(k, (i, d, c))| {
            (k, OverlapStats { iou: i / c as f64, dice: d / c as f64, count: c })
        })
        .collect();
    Ok(LocalizerReport {
        per_category,
        overall: OverlapStats { iou: ti / tc as f64, dice: td / tc as f64, count: tc },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(&[3, h, w]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    t.set3(c, y, x, rng.gen_range(0.0..=1.0));
                }
            }
        }
        t
    }

    #[test]
    fn ssim_identity_and_constant_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = rand_img(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
        let zero = Tensor::zeros(&[3, 16, 16]);
        let one = Tensor::full(&[3, 16, 16], 1.0);
        let v = ssim(&zero, &one).unwrap();
        // Closed form for constants: C1/(1 + C1).
        assert!(v < 1e-3, "constant-gap ssim {v}");
        assert!((v - 1e-4 / (1.0 + 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let a = rand_img(&mut rng, 14, 18);
            let b = rand_img(&mut rng, 14, 18);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
        assert!(ssim(&rand_img(&mut rng, 16, 16), &rand_img(&mut rng, 16, 17)).is_err());
        assert!(ssim(&rand_img(&mut rng, 8, 8), &rand_img(&mut rng, 8, 8)).is_err());
    }

    #[test]
    fn ssim_drops_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = rand_img(&mut rng, 20, 20);
        let mut small = a.clone();
        let mut big = a.clone();
        for y in 0..20 {
            for x in 0..20 {
                for c in 0..3 {
                    let n: f32 = rng.gen_range(-1.0..1.0);
                    small.set3(c, y, x, (small.at3(c, y, x) + 0.02 * n).clamp(0.0, 1.0));
                    big.set3(c, y, x, (big.at3(c, y, x) + 0.3 * n).clamp(0.0, 1.0));
                }
            }
        }
        let s_small = ssim(&a, &small).unwrap();
        let s_big = ssim(&a, &big).unwrap();
        assert!(s_small > s_big, "{s_small} vs {s_big}");
        assert!(s_small > 0.9);
    }

    #[test]
    fn iou_dice_conventions() {
        let a = Mask::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = Mask::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // Equal-area half overlap: IoU 1/3, Dice 1/2.
        let c = Mask::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((iou(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((dice(&a, &c).unwrap() - 0.5).abs() < 1e-12);
        // Both empty: 1.0 by convention.
        let e = Mask::zeros(2, 2);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(iou(&a, &Mask::zeros(3, 2)).is_err());
    }

    #[test]
    fn dice_is_two_iou_over_one_plus_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                let data = (0..64).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
                Mask::new(8, 8, data).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let i = iou(&a, &b).unwrap();
            let d = dice(&a, &b).unwrap();
            assert!((d - 2.0 * i / (1.0 + i)).abs() <= 1e-12);
            assert!(d >= i);
        }
    }

    #[test]
    fn localizer_eval_oracle_and_empty_predictors() {
        let scenes: Vec<Scene> =
            (0..12).map(|s| generate_scene(&SceneSpec::from_seed(s))).collect();
        let perfect = eval_localizer(|s| Ok(scene_target_mask(s).clone()), &scenes).unwrap();
        assert_eq!(perfect.overall.iou, 1.0);
        assert_eq!(perfect.overall.dice, 1.0);
        for (_, st) in &perfect.per_category {
            assert_eq!(st.iou, 1.0);
        }
        let empty = eval_localizer(
            |_| Ok(Mask::zeros(crate::synthdata::IMG, crate::synthdata::IMG)),
            &scenes,
        )
        .unwrap();
        assert_eq!(empty.overall.iou, 0.0);
        assert!(eval_localizer(|s| Ok(s.mask_full.clone()), &[]).is_err());
        // Report serializes to JSON.
        let js = serde_json::to_string(&perfect).unwrap();
        assert!(js.contains("per_category") && js.contains("overall"));
    }
}
