//! Bounding boxes, homography estimation, perspective warping, and garment
//! alignment (box-to-box mapping with aspect-preserving height correction
//! and an optional inward yaw).

use crate::localizer::Mask;
use crate::numerics::Tensor;
use crate::{Category, Error, Result};

/// Axis-aligned pixel box, inclusive-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<BBox> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidArg(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Corners in boundary coordinates: TL, TR, BR, BL.
    fn corners(&self) -> [(f64, f64); 4] {
        let (x0, y0) = (self.x0 as f64, self.y0 as f64);
        let (x1, y1) = (self.x1 as f64, self.y1 as f64);
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    }
}

/// Tight box over the binarized foreground.
pub fn mask_bbox(mask: &Mask) -> Result<BBox> {
    let (mut min_x, mut min_y) = (usize::MAX, usize::MAX);
    let (mut max_x, mut max_y) = (0usize, 0usize);
    let mut any = false;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_fg(y, x) {
                any = true;
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
    }
    if !any {
        return Err(Error::InvalidArg("mask_bbox: empty mask".into()));
    }
    BBox::new(min_x, min_y, max_x + 1, max_y + 1)
}

/// 3x3 projective map, normalized so the bottom-right entry is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    const DET_EPS: f64 = 1e-9;

    pub fn identity() -> Homography {
        Homography { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Homography> {
        if m[2][2].abs() < Self::DET_EPS {
            return Err(Error::InvalidArg("homography: bottom-right entry ~ 0".into()));
        }
        let s = 1.0 / m[2][2];
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        let h = Homography { m: n };
        if h.det().abs() <= Self::DET_EPS {
            return Err(Error::InvalidArg("homography: singular matrix".into()));
        }
        Ok(h)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Apply to a point; errors if the point maps to the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < Self::DET_EPS {
            return Err(Error::NonFinite("homography application"));
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let d = self.det();
        if d.abs() <= Self::DET_EPS {
            return Err(Error::InvalidArg("homography: singular matrix".into()));
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut inv = adj;
        for row in &mut inv {
            for v in row.iter_mut() {
                *v /= d;
            }
        }
        Homography::from_matrix(inv)
    }
}

/// Solve the 8-unknown direct linear system mapping four source points onto
/// four destination points. The solve is verified: each correspondence must
/// reproject within 1e-6 px or the configuration is reported degenerate.
pub fn solve_homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Homography> {
    let mut a = [[0.0f64; 9]; 8]; // augmented [A | b]
    for (k, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = gauss_solve8(&mut a)?;
    let hom = Homography::from_matrix([
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], 1.0],
    ])?;
    for (&(x, y), &(u, v)) in src.iter().zip(dst.iter()) {
        let (px, py) = hom.apply(x, y)?;
        let resid = ((px - u).powi(2) + (py - v).powi(2)).sqrt();
        if resid > 1e-6 {
            return Err(Error::InvalidArg(format!(
                "homography residual {resid:.3e} px — near-degenerate correspondences"
            )));
        }
    }
    Ok(hom)
}

/// Partial-pivot Gaussian elimination on an 8x8 system with an augmented
/// column.
fn gauss_solve8(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8]> {
    for col in 0..8 {
        let pivot_row = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 {
            return Err(Error::InvalidArg("homography: degenerate point configuration".into()));
        }
        a.swap(col, pivot_row);
        for row in (col + 1)..8 {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..9 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0f64; 8];
    for row in (0..8).rev() {
        let mut acc = a[row][8];
        for k in (row + 1)..8 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Bilinear sample of one channel at a continuous pixel-center position.
/// Positions within half a pixel of the border clamp to the edge; beyond
/// that, `fill` is returned.
fn sample_channel(chan: &[f32], h: usize, w: usize, u: f64, v: f64, fill: f32) -> f32 {
    let (uw, vh) = (w as f64 - 0.5, h as f64 - 0.5);
    if !(-0.5..=uw).contains(&u) || !(-0.5..=vh).contains(&v) {
        return fill;
    }
    let uc = u.clamp(0.0, w as f64 - 1.0);
    let vc = v.clamp(0.0, h as f64 - 1.0);
    let j0 = uc.floor() as usize;
    let i0 = vc.floor() as usize;
    let j1 = (j0 + 1).min(w - 1);
    let i1 = (i0 + 1).min(h - 1);
    let fu = (uc - j0 as f64) as f32;
    let fv = (vc - i0 as f64) as f32;
    let p00 = chan[i0 * w + j0];
    let p01 = chan[i0 * w + j1];
    let p10 = chan[i1 * w + j0];
    let p11 = chan[i1 * w + j1];
    let top = p00 + fu * (p01 - p00);
    let bot = p10 + fu * (p11 - p10);
    top + fv * (bot - top)
}

/// Inverse-mapped bilinear warp of a [3,H,W] image. `hmg` maps source
/// coordinates to output coordinates (boundary convention: pixel (y,x)
/// has its center at (x+0.5, y+0.5)).
pub fn warp_image(
    img: &Tensor,
    hmg: &Homography,
    out_h: usize,
    out_w: usize,
    fill: [f32; 3],
) -> Result<Tensor> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape("warp_image", format!("want [3,H,W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let inv = hmg.inverse()?;
    let mut out = Tensor::zeros(&[3, out_h, out_w]);
    for yo in 0..out_h {
        for xo in 0..out_w {
            let (xs, ys) = inv.apply(xo as f64 + 0.5, yo as f64 + 0.5)?;
            let (u, v) = (xs - 0.5, ys - 0.5);
            for c in 0..3 {
                let chan = &img.data()[c * h * w..(c + 1) * h * w];
                out.set3(c, yo, xo, sample_channel(chan, h, w, u, v, fill[c]));
            }
        }
    }
    Ok(out)
}

/// Warp a mask with the same mapping as [`warp_image`], fill 0, then
/// re-binarize.
pub fn warp_mask(mask: &Mask, hmg: &Homography, out_h: usize, out_w: usize) -> Result<Mask> {
    let inv = hmg.inverse()?;
    let (h, w) = (mask.height(), mask.width());
    let mut out = Mask::zeros(out_h, out_w);
    for yo in 0..out_h {
        for xo in 0..out_w {
            let (xs, ys) = inv.apply(xo as f64 + 0.5, yo as f64 + 0.5)?;
            let s = sample_channel(mask.data(), h, w, xs - 0.5, ys - 0.5, 0.0);
            out.set(yo, xo, s.clamp(0.0, 1.0));
        }
    }
    Ok(out.binarized())
}

/// Fraction of the destination box width used as the depth proxy when
/// insetting corners for yaw.
pub const DEFAULT_YAW_DEPTH_FRAC: f64 = 0.25;

/// Map a garment crop onto the model's garment region: box-to-box
/// homography, aspect-preserving height correction clamped to
/// [0.8, 1.25]x the model box height and anchored at the box top (the
/// waistband for lower garments), and an inward yaw that vertically insets
/// the corners of the receding side by tan(yaw) times the depth proxy.
/// The garment lands on a white canvas of the model image's size; the mask
/// is warped identically and re-binarized.
pub fn align_garment(
    garment_img: &Tensor,
    garment_mask: &Mask,
    bbox_g: BBox,
    bbox_m: BBox,
    out_h: usize,
    out_w: usize,
    category: Category,
    yaw_deg: f64,
    depth_frac: f64,
) -> Result<(Tensor, Mask)> {
    if yaw_deg.abs() > 30.0 {
        return Err(Error::InvalidArg(format!("|yaw| must be <= 30 deg, got {yaw_deg}")));
    }
    if depth_frac < 0.0 {
        return Err(Error::InvalidArg("depth_frac must be >= 0".into()));
    }
    // Anchoring at the box top is right for every category: an upper
    // garment or dress hangs from the shoulders at the box top, and a
    // lower garment's box starts at the waistband.
    let _ = category;
    let aspect = bbox_g.height() as f64 / bbox_g.width() as f64;
    let target_h = (aspect * bbox_m.width() as f64)
        .clamp(0.8 * bbox_m.height() as f64, 1.25 * bbox_m.height() as f64);
    let (x0, y0) = (bbox_m.x0 as f64, bbox_m.y0 as f64);
    let x1 = bbox_m.x1 as f64;
    let y1 = y0 + target_h;
    // TL, TR, BR, BL matching BBox::corners ordering.
    let mut dst = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    if yaw_deg != 0.0 {
        let inset = 0.5 * yaw_deg.abs().to_radians().tan() * depth_frac * bbox_m.width() as f64;
        // Positive yaw turns the left side away: its column shrinks
        // toward the vertical center. Negative yaw recedes on the right.
        let (top, bot) = if yaw_deg > 0.0 { (0, 3) } else { (1, 2) };
        dst[top].1 += inset;
        dst[bot].1 -= inset;
        if dst[top].1 >= dst[bot].1 {
            return Err(Error::InvalidArg("yaw inset collapses the destination quad".into()));
        }
    }
    let hmg = solve_homography(&bbox_g.corners(), &dst)?;
    let img = warp_image(garment_img, &hmg, out_h, out_w, [1.0, 1.0, 1.0])?;
    let mask = warp_mask(garment_mask, &hmg, out_h, out_w)?;
    Ok((img, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bbox_basics() {
        assert!(BBox::new(3, 3, 3, 4).is_err());
        let full = Mask::filled(5, 6, 1.0).unwrap();
        assert_eq!(mask_bbox(&full).unwrap(), BBox::new(0, 0, 6, 5).unwrap());
        let mut one = Mask::zeros(10, 10);
        one.set(7, 3, 1.0);
        assert_eq!(mask_bbox(&one).unwrap(), BBox::new(3, 7, 4, 8).unwrap());
        assert!(mask_bbox(&Mask::zeros(4, 4)).is_err());
    }

    #[test]
    fn bbox_spans_disjoint_blobs_matching_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let mut m = Mask::zeros(16, 16);
            for _ in 0..2 {
                let y = rng.gen_range(0..14);
                let x = rng.gen_range(0..14);
                for dy in 0..2 {
                    for dx in 0..2 {
                        m.set(y + dy, x + dx, 1.0);
                    }
                }
            }
            let b = mask_bbox(&m).unwrap();
            // Independent scan.
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for y in 0..16 {
                for x in 0..16 {
                    if m.get(y, x) >= 0.5 {
                        xs.push(x);
                        ys.push(y);
                    }
                }
            }
            assert_eq!(b.x0, *xs.iter().min().unwrap());
            assert_eq!(b.x1, *xs.iter().max().unwrap() + 1);
            assert_eq!(b.y0, *ys.iter().min().unwrap());
            assert_eq!(b.y1, *ys.iter().max().unwrap() + 1);
        }
    }

    #[test]
    fn homography_identity_and_translation() {
        let pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        let id = solve_homography(&pts, &pts).unwrap();
        for (r, row) in id.matrix().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "[{r}][{c}] = {v}");
            }
        }
        let shifted = [(2.0, 3.0), (6.0, 3.0), (6.0, 7.0), (2.0, 7.0)];
        let tr = solve_homography(&pts, &shifted).unwrap();
        let m = tr.matrix();
        assert!((m[0][2] - 2.0).abs() < 1e-9 && (m[1][2] - 3.0).abs() < 1e-9);
        assert!((m[0][0] - 1.0).abs() < 1e-9 && (m[1][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn homography_residual_on_random_quads() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let quad = |rng: &mut ChaCha8Rng| {
            // Jittered square corners stay non-degenerate.
            let base = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
            base.map(|(x, y): (f64, f64)| {
                (x + rng.gen_range(-2.0..2.0), y + rng.gen_range(-2.0..2.0))
            })
        };
        for _ in 0..100 {
            let src = quad(&mut rng);
            let dst = quad(&mut rng);
            let h = solve_homography(&src, &dst).unwrap();
            let m = h.matrix();
            for k in 0..4 {
                // Independent projective application.
                let (x, y) = src[k];
                let w = m[2][0] * x + m[2][1] * y + m[2][2];
                let px = (m[0][0] * x + m[0][1] * y + m[0][2]) / w;
                let py = (m[1][0] * x + m[1][1] * y + m[1][2]) / w;
                let r = ((px - dst[k].0).powi(2) + (py - dst[k].1).powi(2)).sqrt();
                assert!(r <= 1e-6, "residual {r}");
            }
        }
    }

    #[test]
    fn degenerate_points_rejected() {
        // Three collinear source points.
        let src = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 4.0)];
        let dst = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        assert!(solve_homography(&src, &dst).is_err());
    }

    fn gradient_image(h: usize, w: usize) -> Tensor {
        let mut img = Tensor::zeros(&[3, h, w]);
        for y in 0..h {
            for x in 0..w {
                img.set3(0, y, x, x as f32 / (w - 1) as f32);
                img.set3(1, y, x, y as f32 / (h - 1) as f32);
                img.set3(2, y, x, 0.25 + 0.5 * ((x + y) as f32 / (h + w - 2) as f32));
            }
        }
        img
    }

    #[test]
    fn warp_identity_is_exact() {
        let img = gradient_image(16, 12);
        let out = warp_image(&img, &Homography::identity(), 16, 12, [0.0; 3]).unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-6);
    }

    #[test]
    fn warp_scaling_keeps_constant_image_constant() {
        let img = Tensor::full(&[3, 8, 8], 0.6);
        let h = Homography::from_matrix([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        let out = warp_image(&img, &h, 8, 8, [0.0; 3]).unwrap();
        // Every output pixel pulls from inside (or the clamped border of)
        // the source, so the constant survives.
        assert!(out.max_abs_diff(&img) <= 1e-6);
    }

    #[test]
    fn warp_roundtrip_on_smooth_gradient() {
        let img = gradient_image(32, 32);
        let h = Homography::from_matrix([
            [0.9, 0.05, 1.0],
            [-0.03, 0.95, 0.5],
            [1e-4, -2e-4, 1.0],
        ])
        .unwrap();
        let fwd = warp_image(&img, &h, 32, 32, [0.5; 3]).unwrap();
        let back = warp_image(&fwd, &h.inverse().unwrap(), 32, 32, [0.5; 3]).unwrap();
        // Interior comparison: skip a 4-pixel rim where fill leaks in.
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for c in 0..3 {
            for y in 4..28 {
                for x in 4..28 {
                    sum += (back.at3(c, y, x) - img.at3(c, y, x)).abs() as f64;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        assert!(mean <= 2.0 / 255.0, "roundtrip interior mean err {mean}");
    }

    #[test]
    fn warp_preserves_value_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut img = Tensor::zeros(&[3, 10, 10]);
        for c in 0..3 {
            for y in 0..10 {
                for x in 0..10 {
                    img.set3(c, y, x, rng.gen_range(0.0..=1.0));
                }
            }
        }
        let h = Homography::from_matrix([
            [1.2, 0.1, -1.0],
            [0.05, 0.8, 2.0],
            [1e-3, 5e-4, 1.0],
        ])
        .unwrap();
        let out = warp_image(&img, &h, 12, 12, [1.0, 0.0, 0.5]).unwrap();
        for &v in out.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    fn block_mask(h: usize, w: usize, b: BBox) -> Mask {
        let mut m = Mask::zeros(h, w);
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                m.set(y, x, 1.0);
            }
        }
        m
    }

    #[test]
    fn align_equal_boxes_pastes_in_place() {
        let img = gradient_image(24, 24);
        let b = BBox::new(6, 4, 18, 20).unwrap();
        let mask = block_mask(24, 24, b);
        let (out, omask) =
            align_garment(&img, &mask, b, b, 24, 24, Category::Upper, 0.0, DEFAULT_YAW_DEPTH_FRAC)
                .unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-6);
        assert_eq!(omask.data(), mask.data());
    }

    #[test]
    fn align_halves_width_when_aspect_clamp_inactive() {
        // Garment box 40x20 onto model box 20x10: aspect 0.5 wants height
        // 10 = model height, so the clamp stays inactive and x scales 0.5.
        let bg = BBox::new(0, 0, 40, 20).unwrap();
        let bm = BBox::new(10, 5, 30, 15).unwrap();
        let aspect = bg.height() as f64 / bg.width() as f64;
        let want_h = aspect * bm.width() as f64;
        assert_eq!(want_h, bm.height() as f64);
        let dst = [(10.0, 5.0), (30.0, 5.0), (30.0, 15.0), (10.0, 15.0)];
        let h = solve_homography(
            &[(0.0, 0.0), (40.0, 0.0), (40.0, 20.0), (0.0, 20.0)],
            &dst,
        )
        .unwrap();
        // Corner arithmetic: horizontal scale is uniformly 0.5.
        for (sx, sy) in [(0.0, 0.0), (40.0, 0.0), (40.0, 20.0), (0.0, 20.0), (20.0, 10.0)] {
            let (px, _) = h.apply(sx, sy).unwrap();
            assert!((px - (10.0 + 0.5 * sx)).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_shortens_the_receding_column() {
        let size = 64usize;
        let img = Tensor::full(&[3, size, size], 0.2);
        let bg = BBox::new(10, 10, 50, 50).unwrap();
        let mask = block_mask(size, size, bg);
        let bm = bg;
        let run = |yaw: f64| {
            let (_, m) = align_garment(
                &img,
                &mask,
                bg,
                bm,
                size,
                size,
                Category::Upper,
                yaw,
                DEFAULT_YAW_DEPTH_FRAC,
            )
            .unwrap();
            // Vertical extents of the leftmost and rightmost foreground
            // columns.
            let col_extent = |m: &Mask, x: usize| -> usize {
                let rows: Vec<usize> =
                    (0..size).filter(|&y| m.is_fg(y, x)).collect();
                if rows.is_empty() {
                    0
                } else {
                    rows.last().unwrap() - rows.first().unwrap() + 1
                }
            };
            let b = mask_bbox(&m).unwrap();
            (col_extent(&m, b.x0), col_extent(&m, b.x1 - 1))
        };
        let (l0, r0) = run(0.0);
        assert_eq!(l0, r0);
        let (l, r) = run(15.0);
        let proxy = (15.0f64).to_radians().tan() * DEFAULT_YAW_DEPTH_FRAC * bm.width() as f64;
        assert!(l < r, "left {l} right {r}");
        assert!(
            ((r as f64 - l as f64) - proxy).abs() <= 1.5,
            "extent diff {} vs proxy {proxy}",
            r - l
        );
        // Mirrored for negative yaw.
        let (ln, rn) = run(-15.0);
        assert!(rn < ln);
    }

    #[test]
    fn align_mask_area_stays_near_destination_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let size = 64usize;
        let img = Tensor::full(&[3, size, size], 0.3);
        for _ in 0..25 {
            let gx0 = rng.gen_range(0..20);
            let gy0 = rng.gen_range(0..20);
            let bg = BBox::new(gx0, gy0, gx0 + rng.gen_range(12..40), gy0 + rng.gen_range(12..40))
                .unwrap();
            let mask = block_mask(size, size, bg);
            let mx0 = rng.gen_range(0..16);
            let my0 = rng.gen_range(0..16);
            let bm = BBox::new(mx0, my0, mx0 + rng.gen_range(16..36), my0 + rng.gen_range(16..36))
                .unwrap();
            let yaw = rng.gen_range(-20.0..20.0);
            let (out, om) = align_garment(
                &img,
                &mask,
                bg,
                bm,
                size,
                size,
                Category::Lower,
                yaw,
                DEFAULT_YAW_DEPTH_FRAC,
            )
            .unwrap();
            for &v in out.data() {
                assert!((0.0..=1.0).contains(&v));
            }
            let area = om.fg_count() as f64;
            let box_area = bm.area() as f64;
            assert!(
                area >= 0.5 * box_area && area <= 2.0 * box_area,
                "area {area} vs box {box_area}"
            );
        }
    }

    #[test]
    fn yaw_out_of_range_rejected() {
        let img = Tensor::full(&[3, 8, 8], 0.5);
        let m = Mask::filled(8, 8, 1.0).unwrap();
        let b = BBox::new(0, 0, 8, 8).unwrap();
        assert!(align_garment(&img, &m, b, b, 8, 8, Category::Dress, 31.0, 0.25).is_err());
    }
}
