//! End-to-end try-on orchestration: a lossless latent codec, dual DDIM
//! inversion of the model and the aligned garment, garment-latent infusion
//! at an early sampling index, background restoration at a late index, and
//! a perceptual color probe that can stop sampling early and roll back to
//! the best intermediate result.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colorspace::region_mean_de;
use crate::diffusion::{
    invert_trajectory, sample_with_probe, ConditionedDenoiser, Guidance, Hook, NoiseSchedule,
    StepControl,
};
use crate::geometry::{align_garment, mask_bbox};
use crate::localizer::{LocalizerNet, Mask};
use crate::numerics::Tensor;
use crate::tiny_denoiser::MODEL_LABEL;
use crate::{Category, Error, Result};

/// Yaw inset depth proxy as a fraction of the destination box width.
const DEPTH_FRAC: f64 = 0.25;

/// Lossless image ↔ latent rearrangement. `Patchify(f)` moves f×f spatial
/// blocks into channels ([c,h,w] → [c·f², h/f, w/f]); `Identity` leaves the
/// tensor untouched. Both round-trip bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Identity,
    Patchify(usize),
}

impl Codec {
    /// Spatial downsampling factor f.
    pub fn factor(&self) -> usize {
        match self {
            Codec::Identity => 1,
            Codec::Patchify(f) => *f,
        }
    }

    fn check(&self) -> Result<usize> {
        let f = self.factor();
        if f == 0 {
            return Err(Error::InvalidArg("patchify factor must be >= 1".into()));
        }
        Ok(f)
    }

    /// Latent shape for a [c,h,w] image.
    pub fn latent_shape(&self, image_shape: &[usize]) -> Result<[usize; 3]> {
        let f = self.check()?;
        if image_shape.len() != 3 {
            return Err(Error::shape("codec", format!("want [c,h,w], got {image_shape:?}")));
        }
        let (c, h, w) = (image_shape[0], image_shape[1], image_shape[2]);
        if h % f != 0 || w % f != 0 {
            return Err(Error::InvalidArg(format!(
                "image {h}x{w} not divisible by patch factor {f}"
            )));
        }
        Ok([c * f * f, h / f, w / f])
    }

    /// Rearrange an image into its latent; exact and invertible.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let [cl, hl, wl] = self.latent_shape(image.shape())?;
        let f = self.factor();
        if f == 1 {
            return Ok(image.clone());
        }
        let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        let src = image.data();
        let mut out = vec![0.0f32; cl * hl * wl];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let co = (ci * f + y % f) * f + x % f;
                    out[(co * hl + y / f) * wl + x / f] = src[(ci * h + y) * w + x];
                }
            }
        }
        Tensor::from_vec(&[cl, hl, wl], out)
    }

    /// Exact inverse of [`Codec::encode`].
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let f = self.check()?;
        if f == 1 {
            return Ok(latent.clone());
        }
        let s = latent.shape();
        if s.len() != 3 {
            return Err(Error::shape("codec", format!("want [c,h,w] latent, got {s:?}")));
        }
        let (cl, hl, wl) = (s[0], s[1], s[2]);
        if cl % (f * f) != 0 {
            return Err(Error::InvalidArg(format!(
                "latent channels {cl} not divisible by patch factor squared {}",
                f * f
            )));
        }
        let (c, h, w) = (cl / (f * f), hl * f, wl * f);
        let src = latent.data();
        let mut out = vec![0.0f32; c * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let co = (ci * f + y % f) * f + x % f;
                    out[(ci * h + y) * w + x] = src[(co * hl + y / f) * wl + x / f];
                }
            }
        }
        Tensor::from_vec(&[c, h, w], out)
    }
}

/// Downsample a mask to the latent grid: area average over f×f blocks,
/// then binarize at the mask threshold.
pub fn latent_mask(mask: &Mask, f: usize) -> Result<Mask> {
    if f == 0 {
        return Err(Error::InvalidArg("downsample factor must be >= 1".into()));
    }
    if f == 1 {
        return Ok(mask.binarized());
    }
    let (h, w) = (mask.height(), mask.width());
    if h % f != 0 || w % f != 0 {
        return Err(Error::InvalidArg(format!("mask {h}x{w} not divisible by {f}")));
    }
    let (hl, wl) = (h / f, w / f);
    let mut out = vec![0.0f32; hl * wl];
    for by in 0..hl {
        for bx in 0..wl {
            let mut sum = 0.0f32;
            for dy in 0..f {
                for dx in 0..f {
                    sum += mask.get(by * f + dy, bx * f + dx);
                }
            }
            out[by * wl + bx] = sum / (f * f) as f32;
        }
    }
    Ok(Mask::new(hl, wl, out)?.binarized())
}

/// Complement of the union of the two garment regions: pixels belonging to
/// neither the model's garment nor the warped target garment.
pub fn background_mask(mm: &Mask, mg: &Mask) -> Result<Mask> {
    Ok(mm.union(mg)?.binarized().complement())
}

/// Cellwise select: `keep` outside the binarized mask, `take` inside.
fn blend_by_mask(keep: &Tensor, take: &Tensor, mask: &Mask) -> Result<Tensor> {
    if keep.shape() != take.shape() {
        return Err(Error::shape(
            "latent blend",
            format!("{:?} vs {:?}", keep.shape(), take.shape()),
        ));
    }
    let s = keep.shape();
    if s.len() != 3 || s[1] != mask.height() || s[2] != mask.width() {
        return Err(Error::shape(
            "latent blend",
            format!("latent {s:?} vs mask {}x{}", mask.height(), mask.width()),
        ));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = keep.data().to_vec();
    for y in 0..h {
        for x in 0..w {
            if mask.is_fg(y, x) {
                for ci in 0..c {
                    out[(ci * h + y) * w + x] = take.data()[(ci * h + y) * w + x];
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Copy the garment inversion state into the current latent inside the
/// garment mask: z ← z·(1−Mᵍ) + z*ᵍ·Mᵍ.
pub fn infuse_garment(z_m: &Tensor, z_star_g: &Tensor, mg_latent: &Mask) -> Result<Tensor> {
    blend_by_mask(z_m, z_star_g, mg_latent)
}

/// Restore background cells from the model inversion state:
/// z ← z·(1−Mᵇᵍ) + z*ᵐ·Mᵇᵍ.
pub fn restore_background(z_cur: &Tensor, z_star_m: &Tensor, mbg_latent: &Mask) -> Result<Tensor> {
    blend_by_mask(z_cur, z_star_m, mbg_latent)
}

/// Verdict of the color-difference termination rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationDecision {
    Continue,
    /// Stop sampling; roll back to this completed-step count.
    Stop { best_step: usize },
}

/// Stop at the first increase of the probe metric over its predecessor;
/// the rollback target is the earliest evaluation holding the lowest value
/// seen. A lone evaluation can never stop (nothing to compare against).
pub fn adaptive_termination_check(
    history: &[(usize, f64)],
    new: (usize, f64),
) -> TerminationDecision {
    let Some(last) = history.last() else {
        return TerminationDecision::Continue;
    };
    if new.1 <= last.1 {
        return TerminationDecision::Continue;
    }
    let mut best = history[0];
    for &(step, de) in history.iter().chain(std::iter::once(&new)) {
        if de < best.1 {
            best = (step, de);
        }
    }
    TerminationDecision::Stop { best_step: best.0 }
}

/// Sampling-stage layout of a try-on run. `t1`/`t2` are ddim indices
/// (remaining denoising steps): with the defaults the garment latent is
/// infused after 10 completed steps and the background restored after 35.
/// `t2 = 0` disables restoration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub t1: usize,
    pub t2: usize,
    pub s: usize,
    pub cfg_scale: f32,
    pub adaptive: bool,
    /// Probe evaluations begin after this many completed denoising steps.
    pub activation_completed_steps: usize,
    pub yaw_deg: f64,
    pub category: Category,
    /// Seeds echoed into reports for bookkeeping (scene/net provenance);
    /// the sampling path itself is deterministic.
    pub seeds: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            t1: 40,
            t2: 15,
            s: 50,
            cfg_scale: 7.5,
            adaptive: true,
            activation_completed_steps: 45,
            yaw_deg: 0.0,
            category: Category::Clothes,
            seeds: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::InvalidArg("need at least one sampling step".into()));
        }
        if self.t1 == 0 || self.t1 > self.s {
            return Err(Error::InvalidArg(format!(
                "infusion index t1 = {} must satisfy 0 < t1 <= {}",
                self.t1, self.s
            )));
        }
        if self.t2 >= self.t1 {
            return Err(Error::InvalidArg(format!(
                "restoration index t2 = {} must be below t1 = {} (0 disables it)",
                self.t2, self.t1
            )));
        }
        if !self.cfg_scale.is_finite() || self.cfg_scale < 0.0 {
            return Err(Error::InvalidArg(format!("bad guidance scale {}", self.cfg_scale)));
        }
        if self.activation_completed_steps > self.s {
            return Err(Error::InvalidArg(format!(
                "activation step {} exceeds step count {}",
                self.activation_completed_steps, self.s
            )));
        }
        Ok(())
    }
}

/// Masks resolved during a try-on run, at image resolution.
#[derive(Debug, Clone)]
pub struct TryOnMasks {
    /// Garment region on the model image.
    pub model: Mask,
    /// Warped target-garment region in the model frame.
    pub garment: Mask,
    /// Complement of the union of the two.
    pub background: Mask,
}

/// Run record: probe history of (completed step, region mean color
/// difference), where sampling stopped, optional paired-reconstruction
/// similarity (filled by evaluation harnesses), and phase wall-times.
#[derive(Debug, Clone, Serialize)]
pub struct TryOnReport {
    pub config: PipelineConfig,
    pub de_history: Vec<(usize, f64)>,
    pub termination_step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_paired: Option<f64>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub masks: TryOnMasks,
    /// Warped in-store garment in the model frame; the color-difference
    /// reference for `de_history` and for swap-improvement scoring.
    #[serde(skip)]
    pub aligned_garment: Tensor,
    /// Decoded clean estimate at each probe evaluation, positionally
    /// paired with `de_history`; the early-stop rollback source.
    #[serde(skip)]
    pub probe_decodes: Vec<Tensor>,
}

fn clamp01(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Full try-on. Localizes the garment on both images, warps the in-store
/// garment into the model frame, inverts both latents unconditioned,
/// re-samples the model latent under guidance with the infusion edit at t1
/// and the restoration edit at t2, probes the garment-region color
/// difference after the activation step, and decodes the best state.
pub fn tryon(
    model_img: &Tensor,
    garment_img: &Tensor,
    localizer: &LocalizerNet,
    denoiser: &dyn ConditionedDenoiser,
    codec: &Codec,
    cfg: &PipelineConfig,
) -> Result<(Tensor, TryOnReport)> {
    cfg.validate()?;
    let t_total = Instant::now();
    let shape = model_img.shape();
    if shape != garment_img.shape() {
        return Err(Error::shape(
            "tryon",
            format!("model {shape:?} vs garment {:?}", garment_img.shape()),
        ));
    }
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape("tryon", format!("want [3,h,w] images, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let f = codec.check()?;
    let mut timings = BTreeMap::new();

    // Garment regions on both inputs. The in-store image always gets the
    // whole-garment prompt: it shows a single garment on a blank canvas.
    let t = Instant::now();
    let loc_m = localizer.predict_mask(model_img, cfg.category, true)?;
    let mm = loc_m.select(cfg.category).clone();
    if mm.fg_count() == 0 {
        return Err(Error::msg("no garment region found on the model image"));
    }
    let loc_g = localizer.predict_mask(garment_img, Category::Clothes, true)?;
    let mg_store = loc_g.select(Category::Clothes).clone();
    if mg_store.fg_count() == 0 {
        return Err(Error::msg("no garment region found on the garment image"));
    }
    timings.insert("localize".to_string(), ms_since(t));

    // Warp the garment into the model frame; masks for blending.
    let t = Instant::now();
    let bbox_g = mask_bbox(&mg_store)?;
    let bbox_m = mask_bbox(&mm)?;
    let (aligned_img, mg) = align_garment(
        garment_img,
        &mg_store,
        bbox_g,
        bbox_m,
        h,
        w,
        cfg.category,
        cfg.yaw_deg,
        DEPTH_FRAC,
    )?;
    if mg.fg_count() == 0 {
        return Err(Error::msg("garment mask vanished during alignment"));
    }
    let mbg = background_mask(&mm, &mg)?;
    let mg_lat = latent_mask(&mg, f)?;
    let mbg_lat = latent_mask(&mbg, f)?;
    if mg_lat.fg_count() == 0 {
        return Err(Error::msg("garment region smaller than one latent cell"));
    }
    timings.insert("align".to_string(), ms_since(t));

    // Dual inversion, unconditioned.
    let sched = match denoiser.schedule() {
        Some(ds) => {
            if ds.num_steps() != cfg.s {
                return Err(Error::InvalidArg(format!(
                    "denoiser schedule has {} steps, config wants {}",
                    ds.num_steps(),
                    cfg.s
                )));
            }
            ds.clone()
        }
        None => NoiseSchedule::default_with_steps(cfg.s)?,
    };
    let z0_m = codec.encode(model_img)?;
    let z0_g = codec.encode(&aligned_img)?;
    let t = Instant::now();
    let traj_m = invert_trajectory(&z0_m, denoiser, None, &sched)?;
    let traj_g = invert_trajectory(&z0_g, denoiser, None, &sched)?;
    timings.insert("invert".to_string(), ms_since(t));

    // Latent edits: garment infusion at t1, background restoration at t2.
    let z_g_t1 = traj_g.at(cfg.t1)?.clone();
    let z_m_t2 = if cfg.t2 > 0 { Some(traj_m.at(cfg.t2)?.clone()) } else { None };
    let mut hooks = vec![Hook {
        index: cfg.t1,
        edit: Box::new(|z: &Tensor| infuse_garment(z, &z_g_t1, &mg_lat)),
    }];
    if let Some(z_restore) = &z_m_t2 {
        hooks.push(Hook {
            index: cfg.t2,
            edit: Box::new(|z: &Tensor| restore_background(z, z_restore, &mbg_lat)),
        });
    }

    // Guided resampling with the color probe.
    let guidance =
        Guidance { cond: Some(denoiser.embed_label(MODEL_LABEL)?), scale: cfg.cfg_scale };
    let t = Instant::now();
    let mut de_history: Vec<(usize, f64)> = Vec::new();
    let mut probe_decodes: Vec<Tensor> = Vec::new();
    let mut best: Option<(usize, f64, usize)> = None;
    let mut stopped_at: Option<usize> = None;
    let record = sample_with_probe(traj_m.top(), denoiser, &guidance, &sched, &hooks, |p| {
        if p.completed <= cfg.activation_completed_steps {
            return Ok(StepControl::Continue);
        }
        let decoded = clamp01(&codec.decode(p.z0_hat)?);
        let de = region_mean_de(&decoded, &aligned_img, &mg)?;
        let point = (p.completed, de);
        let decision = adaptive_termination_check(&de_history, point);
        de_history.push(point);
        probe_decodes.push(decoded);
        if best.as_ref().is_none_or(|&(_, b, _)| de < b) {
            best = Some((p.completed, de, probe_decodes.len() - 1));
        }
        if cfg.adaptive {
            if let TerminationDecision::Stop { best_step } = decision {
                debug_assert_eq!(best.map(|(s, _, _)| s), Some(best_step));
                stopped_at = Some(p.completed);
                return Ok(StepControl::Stop);
            }
        }
        Ok(StepControl::Continue)
    })?;
    timings.insert("sample".to_string(), ms_since(t));

    // Result selection: the stored best probe decode when the adaptive rule
    // governs the run, the final state otherwise.
    let t = Instant::now();
    let (result, termination_step) = match (best, stopped_at) {
        (Some((_, _, idx)), Some(stop)) => (probe_decodes[idx].clone(), stop),
        (Some((_, _, idx)), None) if cfg.adaptive => (probe_decodes[idx].clone(), cfg.s),
        _ => {
            let (idx, z_final) = record.last().expect("sampling yields states");
            debug_assert_eq!(*idx, 0);
            (clamp01(&codec.decode(z_final)?), cfg.s)
        }
    };
    timings.insert("decode".to_string(), ms_since(t));
    timings.insert("total".to_string(), ms_since(t_total));

    let report = TryOnReport {
        config: cfg.clone(),
        de_history,
        termination_step,
        ssim_paired: None,
        timings_ms: timings,
        masks: TryOnMasks { model: mm, garment: mg, background: mbg },
        aligned_garment: aligned_img,
        probe_decodes,
    };
    Ok((result, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::AnalyticGaussianDenoiser;
    use crate::numerics::randn;
    use crate::synthdata::{generate_scene, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn codec_roundtrips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = randn(&mut rng, &[3, 8, 8]);
        for codec in [Codec::Identity, Codec::Patchify(2), Codec::Patchify(4)] {
            let z = codec.encode(&img).unwrap();
            let f = codec.factor();
            assert_eq!(z.shape(), &[3 * f * f, 8 / f, 8 / f]);
            let back = codec.decode(&z).unwrap();
            assert_eq!(back.data(), img.data());
        }
        assert!(Codec::Patchify(2).encode(&randn(&mut rng, &[3, 5, 4])).is_err());
        assert!(Codec::Patchify(2).decode(&randn(&mut rng, &[3, 4, 4])).is_err());
        assert!(Codec::Patchify(0).encode(&img).is_err());
    }

    #[test]
    fn patchify_moves_blocks_into_channels() {
        let img = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let z = Codec::Patchify(2).encode(&img).unwrap();
        assert_eq!(z.shape(), &[4, 2, 2]);
        // Latent channel dy*2+dx holds the (dy,dx) offset of every block.
        for by in 0..2 {
            for bx in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let want = ((by * 2 + dy) * 4 + bx * 2 + dx) as f32;
                        let got = z.data()[((dy * 2 + dx) * 2 + by) * 2 + bx];
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn latent_mask_averages_blocks_then_thresholds() {
        let mut m = Mask::zeros(4, 4);
        // TL block fully on; TR block half on (mean exactly 0.5, inclusive
        // threshold keeps it); BL one pixel (0.25, off); BR off.
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            m.set(y, x, 1.0);
        }
        m.set(0, 2, 1.0);
        m.set(0, 3, 1.0);
        m.set(2, 0, 1.0);
        let d = latent_mask(&m, 2).unwrap();
        assert_eq!((d.get(0, 0), d.get(0, 1), d.get(1, 0), d.get(1, 1)), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(latent_mask(&m, 1).unwrap().data(), m.binarized().data());
        assert!(latent_mask(&m, 3).is_err());
        assert!(latent_mask(&m, 0).is_err());
    }

    #[test]
    fn background_complements_garment_union() {
        let h = 8;
        let zeros = Mask::zeros(h, h);
        let all = background_mask(&zeros, &zeros).unwrap();
        assert_eq!(all.fg_count(), h * h);

        let full = Mask::filled(h, h, 1.0).unwrap();
        assert_eq!(background_mask(&full, &zeros).unwrap().fg_count(), 0);

        // A short-sleeve model mask and long-sleeve garment mask: the extra
        // sleeve columns must not count as background.
        let mut short = Mask::zeros(h, h);
        let mut long = Mask::zeros(h, h);
        for y in 0..h {
            for x in 2..5 {
                short.set(y, x, 1.0);
            }
            for x in 2..7 {
                long.set(y, x, 1.0);
            }
        }
        let bg = background_mask(&short, &long).unwrap();
        for y in 0..h {
            for x in 0..h {
                let in_union = (2..7).contains(&x);
                assert_eq!(bg.is_fg(y, x), !in_union, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn blends_partition_every_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(&mut rng, &[2, 4, 6]);
        let b = randn(&mut rng, &[2, 4, 6]);
        let full = Mask::filled(4, 6, 1.0).unwrap();
        let empty = Mask::zeros(4, 6);
        assert_eq!(infuse_garment(&a, &b, &full).unwrap().data(), b.data());
        assert_eq!(infuse_garment(&a, &b, &empty).unwrap().data(), a.data());
        assert_eq!(restore_background(&a, &b, &full).unwrap().data(), b.data());

        let mut half = Mask::zeros(4, 6);
        for y in 0..4 {
            for x in 3..6 {
                half.set(y, x, 1.0);
            }
        }
        let out = infuse_garment(&a, &b, &half).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..6 {
                    let i = (c * 4 + y) * 6 + x;
                    let want = if x >= 3 { b.data()[i] } else { a.data()[i] };
                    assert_eq!(out.data()[i], want);
                }
            }
        }
        assert!(infuse_garment(&a, &b, &Mask::zeros(3, 3)).is_err());
        assert!(infuse_garment(&a, &randn(&mut rng, &[2, 6, 4]), &half).is_err());
    }

    #[test]
    fn termination_rule_examples() {
        use TerminationDecision::*;
        assert_eq!(adaptive_termination_check(&[], (46, 3.0)), Continue);
        assert_eq!(adaptive_termination_check(&[(46, 3.0)], (47, 2.5)), Continue);
        assert_eq!(adaptive_termination_check(&[(46, 3.0)], (47, 3.0)), Continue);
        assert_eq!(
            adaptive_termination_check(&[(46, 3.0)], (47, 3.5)),
            Stop { best_step: 46 }
        );
        assert_eq!(
            adaptive_termination_check(&[(46, 5.0), (47, 2.0)], (48, 2.5)),
            Stop { best_step: 47 }
        );
        // Strictly decreasing histories never stop.
        let mut hist = Vec::new();
        for i in 0..5 {
            let point = (46 + i, 3.0 - i as f64 * 0.1);
            assert_eq!(adaptive_termination_check(&hist, point), Continue);
            hist.push(point);
        }
    }

    #[test]
    fn config_validation_bounds() {
        let ok = PipelineConfig::default();
        assert!(ok.validate().is_ok());
        assert!(PipelineConfig { t2: 40, ..ok.clone() }.validate().is_err());
        assert!(PipelineConfig { t1: 0, ..ok.clone() }.validate().is_err());
        assert!(PipelineConfig { t1: 51, ..ok.clone() }.validate().is_err());
        assert!(PipelineConfig { t2: 0, ..ok.clone() }.validate().is_ok());
        assert!(PipelineConfig { cfg_scale: -1.0, ..ok.clone() }.validate().is_err());
        assert!(PipelineConfig { activation_completed_steps: 51, ..ok.clone() }
            .validate()
            .is_err());
        assert!(PipelineConfig { s: 0, t1: 0, ..ok.clone() }.validate().is_err());
    }

    fn smoke_parts() -> (Tensor, Tensor, LocalizerNet, PipelineConfig) {
        let scene = generate_scene(&SceneSpec::from_seed(31));
        let localizer = LocalizerNet::new(4);
        let cfg = PipelineConfig {
            t1: 8,
            t2: 3,
            s: 10,
            cfg_scale: 7.5,
            adaptive: true,
            activation_completed_steps: 8,
            category: Category::Clothes,
            ..PipelineConfig::default()
        };
        (scene.model_img, scene.garment_img, localizer, cfg)
    }

    #[test]
    fn tryon_runs_end_to_end_and_serializes() {
        let (model, garment, localizer, cfg) = smoke_parts();
        let codec = Codec::Identity;
        let sched = NoiseSchedule::default_with_steps(cfg.s).unwrap();
        let denoiser =
            AnalyticGaussianDenoiser::new(codec.encode(&model).unwrap(), 0.5, sched).unwrap();

        let (img, report) = tryon(&model, &garment, &localizer, &denoiser, &codec, &cfg).unwrap();
        assert_eq!(img.shape(), &[3, 64, 64]);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(report.termination_step <= cfg.s);
        assert!(!report.de_history.is_empty());
        assert_eq!(report.de_history[0].0, cfg.activation_completed_steps + 1);
        assert_eq!(report.probe_decodes.len(), report.de_history.len());
        for d in &report.probe_decodes {
            assert_eq!(d.shape(), &[3, 64, 64]);
        }
        assert!(report.masks.model.fg_count() > 0);
        for key in ["localize", "align", "invert", "sample", "decode", "total"] {
            assert!(report.timings_ms.contains_key(key), "missing timing {key}");
        }

        let json = serde_json::to_string(&report).unwrap();
        for field in ["\"config\"", "\"de_history\"", "\"termination_step\"", "\"timings_ms\""] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
        assert!(!json.contains("ssim_paired"));
        assert!(!json.contains("masks"));
        assert!(!json.contains("aligned_garment"));
        assert!(!json.contains("probe_decodes"));

        // Deterministic end to end.
        let (img2, _) = tryon(&model, &garment, &localizer, &denoiser, &codec, &cfg).unwrap();
        assert_eq!(img.data(), img2.data());

        // Restoration disabled still runs.
        let no_restore = PipelineConfig { t2: 0, ..cfg.clone() };
        tryon(&model, &garment, &localizer, &denoiser, &codec, &no_restore).unwrap();

        // Schedule length mismatch is rejected.
        let bad = PipelineConfig { s: 12, t1: 8, ..cfg.clone() };
        assert!(tryon(&model, &garment, &localizer, &denoiser, &codec, &bad).is_err());
    }
}
