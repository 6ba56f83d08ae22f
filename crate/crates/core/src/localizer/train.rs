//! Localizer training: per-sample Adam on the ℓ1 distance between the
//! fused mask and ground truth, learning rate halved every ten epochs,
//! with a held-out validation slice tracked before and after.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::localizer::{LocalizerNet, Mask};
use crate::numerics::{Adam, Graph, Tensor};
use crate::synthdata::{garment_silhouette, render_bare_model, Scene, SceneSpec};
use crate::{Category, Error, Result};

/// Training controls. `lr` is the initial rate; it halves every ten
/// epochs. A `val_frac` slice of the (shuffled) dataset is held out for
/// the before/after validation ℓ1; zero keeps everything in training and
/// validates on the training set itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocTrainHyper {
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
    pub val_frac: f32,
}

impl Default for LocTrainHyper {
    fn default() -> Self {
        LocTrainHyper { epochs: 35, lr: 1e-4, seed: 0, val_frac: 0.1 }
    }
}

impl LocTrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArg("epochs must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArg("lr must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::InvalidArg("val_frac must lie in [0,1)".into()));
        }
        Ok(())
    }

    /// Learning rate at a given epoch: halved every ten epochs.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.lr * 0.5f32.powi((epoch / 10) as i32)
    }
}

/// Loss curve and validation summary from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocTrainReport {
    pub epoch_loss: Vec<f32>,
    pub lr_by_epoch: Vec<f32>,
    pub val_l1_initial: f32,
    pub val_l1_final: f32,
}

/// A labelled training sample: image, category prompt, target mask.
pub type LocSample = (Tensor, Category, Mask);

/// Expand one scene into prompt-supervised samples: every applicable
/// category prompt on the model image maps to the full outfit region
/// (upper/lower separation happens at prediction time), and the in-store
/// canvas teaches the whole-garment prompt on white backgrounds.
pub fn scene_training_pairs(scene: &Scene) -> Result<Vec<LocSample>> {
    let mut out = vec![(scene.model_img.clone(), Category::Clothes, scene.mask_full.clone())];
    match scene.category {
        Category::Dress => {
            out.push((scene.model_img.clone(), Category::Dress, scene.mask_full.clone()))
        }
        _ => {
            out.push((scene.model_img.clone(), Category::Upper, scene.mask_full.clone()));
            out.push((scene.model_img.clone(), Category::Lower, scene.mask_full.clone()));
        }
    }
    let silhouette = garment_silhouette(&scene.garment_img)?;
    out.push((scene.garment_img.clone(), Category::Clothes, silhouette));
    Ok(out)
}

/// Garment-free negative: a bare mannequin maps the whole-garment prompt
/// to the empty mask.
pub fn garment_free_sample(spec: &SceneSpec) -> LocSample {
    let img = render_bare_model(spec);
    let (h, w) = (img.shape()[1], img.shape()[2]);
    (img, Category::Clothes, Mask::zeros(h, w))
}

fn mask_tensor(mask: &Mask) -> Result<Tensor> {
    Tensor::from_vec(&[1, mask.height(), mask.width()], mask.data().to_vec())
}

fn mean_val_l1(net: &LocalizerNet, samples: &[&LocSample]) -> Result<f32> {
    let mut acc = 0.0f64;
    for (img, cat, gt) in samples.iter() {
        let i3 = net.image_features(img)?;
        let t2 = net.text_features(*cat)?;
        let m = net.fuse_mask(&i3, &t2)?;
        let n = (m.height() * m.width()) as f64;
        let l1: f64 = m
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / n;
        acc += l1;
    }
    Ok((acc / samples.len() as f64) as f32)
}

/// Train the fused-mask head end to end (conv branch, text branch, fusion).
pub fn train_localizer(
    net: &mut LocalizerNet,
    data: &[LocSample],
    hp: &LocTrainHyper,
) -> Result<LocTrainReport> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArg("training dataset is empty".into()));
    }
    for (img, _, gt) in data {
        let s = img.shape();
        if s.len() != 3 || s[0] != 3 || gt.height() != s[1] || gt.width() != s[2] {
            return Err(Error::shape(
                "train_localizer",
                format!("image {s:?} vs mask {}x{}", gt.height(), gt.width()),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f32) * hp.val_frac).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx: Vec<usize> = train_idx.to_vec();
    let val_samples: Vec<&LocSample> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| &data[i]).collect()
    } else {
        val_idx.iter().map(|&i| &data[i]).collect()
    };
    if train_idx.is_empty() {
        return Err(Error::InvalidArg("validation split leaves no training data".into()));
    }

    let val_l1_initial = mean_val_l1(net, &val_samples)?;
    let mut adam = Adam::new(hp.lr);
    let mut epoch_loss = Vec::with_capacity(hp.epochs);
    let mut lr_by_epoch = Vec::with_capacity(hp.epochs);
    let mut shuffled = train_idx.clone();
    for epoch in 0..hp.epochs {
        let lr = hp.lr_at(epoch);
        adam.set_lr(lr);
        lr_by_epoch.push(lr);
        shuffled.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for &i in &shuffled {
            let (img, cat, gt) = &data[i];
            let mut g = Graph::new();
            let x = g.input(img.clone());
            let e = g.input(net.embedding(*cat));
            let (mask_node, _, wnodes) = net.wire(&mut g, x, e)?;
            let target = g.input(mask_tensor(gt)?);
            let loss = g.l1_loss(mask_node, target)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { step: epoch, loss: lv });
            }
            loss_sum += lv as f64;
            g.backward(loss)?;
            let grads: Vec<Tensor> = wnodes
                .iter()
                .map(|&n| g.grad(n).cloned().unwrap_or_else(|| Tensor::zeros(g.value(n).shape())))
                .collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> = net.weights_mut().iter_mut().collect();
            adam.step(&mut params, &grad_refs)?;
        }
        epoch_loss.push((loss_sum / shuffled.len() as f64) as f32);
    }
    let val_l1_final = mean_val_l1(net, &val_samples)?;
    Ok(LocTrainReport { epoch_loss, lr_by_epoch, val_l1_initial, val_l1_final })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneSpec};

    fn tiny_dataset() -> Vec<LocSample> {
        (0..4)
            .map(|i| {
                let scene = generate_scene(&SceneSpec::from_seed(100 + i));
                (scene.model_img.clone(), Category::Clothes, scene.mask_full.clone())
            })
            .collect()
    }

    #[test]
    fn scene_pairs_cover_prompts_and_store_canvas() {
        let spec_of = |cat: Category| {
            (0..64)
                .map(SceneSpec::from_seed)
                .find(|s| s.category == cat)
                .expect("category appears in small seed range")
        };
        for cat in [Category::Upper, Category::Lower] {
            let scene = generate_scene(&spec_of(cat));
            let pairs = scene_training_pairs(&scene).unwrap();
            assert_eq!(pairs.len(), 4);
            let prompts: Vec<Category> = pairs.iter().map(|p| p.1).collect();
            assert_eq!(
                prompts,
                [Category::Clothes, Category::Upper, Category::Lower, Category::Clothes]
            );
            for (img, _, gt) in &pairs[..3] {
                assert_eq!(img.data(), scene.model_img.data());
                assert_eq!(gt.data(), scene.mask_full.data());
            }
            let (img, _, sil) = &pairs[3];
            assert_eq!(img.data(), scene.garment_img.data());
            assert_eq!(sil.data(), garment_silhouette(&scene.garment_img).unwrap().data());
        }
        let dress = generate_scene(&spec_of(Category::Dress));
        let pairs = scene_training_pairs(&dress).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1].1, Category::Dress);

        let neg = garment_free_sample(&spec_of(Category::Upper));
        assert_eq!(neg.1, Category::Clothes);
        assert_eq!(neg.2.fg_count(), 0);
        assert_eq!(neg.0.shape(), [3, 64, 64]);
    }

    #[test]
    fn lr_schedule_halves_every_ten_epochs() {
        let hp = LocTrainHyper::default();
        assert_eq!(hp.lr_at(0), 1e-4);
        assert_eq!(hp.lr_at(9), 1e-4);
        assert_eq!(hp.lr_at(10), 5e-5);
        assert_eq!(hp.lr_at(19), 5e-5);
        assert_eq!(hp.lr_at(20), 2.5e-5);
        assert_eq!(hp.lr_at(29), 2.5e-5);
        assert_eq!(hp.lr_at(34), 1.25e-5);
    }

    #[test]
    fn zero_lr_leaves_net_unchanged() {
        let mut net = LocalizerNet::new(2);
        let before = net.named_tensors();
        let data = tiny_dataset();
        let hp = LocTrainHyper { epochs: 2, lr: 0.0, seed: 3, val_frac: 0.0 };
        let report = train_localizer(&mut net, &data, &hp).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(net.named_tensors().iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(report.epoch_loss.len(), 2);
        assert_eq!(report.lr_by_epoch, vec![0.0, 0.0]);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let data = tiny_dataset();
        let hp = LocTrainHyper { epochs: 2, lr: 1e-3, seed: 7, val_frac: 0.25 };
        let run = || {
            let mut net = LocalizerNet::new(5);
            let report = train_localizer(&mut net, &data, &hp).unwrap();
            (report.epoch_loss, net.named_tensors())
        };
        let (c1, t1) = run();
        let (c2, t2) = run();
        assert_eq!(c1, c2);
        for ((_, a), (_, b)) in t1.iter().zip(t2.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn rejects_empty_and_mismatched_data() {
        let mut net = LocalizerNet::new(8);
        let hp = LocTrainHyper::default();
        assert!(train_localizer(&mut net, &[], &hp).is_err());
        let bad = vec![(Tensor::zeros(&[3, 64, 64]), Category::Clothes, Mask::zeros(32, 32))];
        assert!(train_localizer(&mut net, &bad, &hp).is_err());
        let data = tiny_dataset();
        let bad_hp = LocTrainHyper { epochs: 0, ..hp.clone() };
        assert!(train_localizer(&mut net, &data, &bad_hp).is_err());
    }


    /// Snap a mask to its 4x4 majority blocks: upsampled predictions are
    /// block-constant, so only a block-aligned target can be fit exactly.
    fn snap_to_blocks(m: &Mask) -> Mask {
        let (h, w) = (m.height(), m.width());
        let mut out = vec![0.0f32; h * w];
        for by in 0..h / 4 {
            for bx in 0..w / 4 {
                let mut fg = 0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        if m.data()[(by * 4 + dy) * w + bx * 4 + dx] > 0.5 {
                            fg += 1;
                        }
                    }
                }
                if fg > 8 {
                    for dy in 0..4 {
                        for dx in 0..4 {
                            out[(by * 4 + dy) * w + bx * 4 + dx] = 1.0;
                        }
                    }
                }
            }
        }
        Mask::new(h, w, out).unwrap()
    }

    /// Memorizing a single pair drives the training ℓ1 under 0.02, and
    /// trained text features diverge across categories. The pair is
    /// replicated because the halving schedule caps total parameter travel
    /// at ~20·lr per epoch-step; the target is block-snapped because the
    /// upsampled mask is constant on 4x4 blocks.
    #[test]
    fn memorizes_one_pair() {
        let scene = generate_scene(&SceneSpec::from_seed(42));
        let target = snap_to_blocks(&scene.mask_full);
        let pair = (scene.model_img.clone(), Category::Clothes, target.clone());
        let data: Vec<_> = (0..200).map(|_| pair.clone()).collect();
        let mut net = LocalizerNet::new(9);
        let hp = LocTrainHyper { epochs: 35, lr: 1e-4, seed: 10, val_frac: 0.0 };
        let report = train_localizer(&mut net, &data, &hp).unwrap();
        let last = *report.epoch_loss.last().unwrap();
        assert!(last < 0.02, "final l1 {last}");
        assert!(report.val_l1_final < report.val_l1_initial);
        // The trained net reproduces the memorized mask through inference.
        let i3 = net.image_features(&scene.model_img).unwrap();
        let t2 = net.text_features(Category::Clothes).unwrap();
        let m = net.fuse_mask(&i3, &t2).unwrap();
        let iou = crate::evalmetrics::iou(&m, &target).unwrap();
        assert!(iou > 0.95, "memorized-mask IoU {iou}");
        // Distinct categories give distinct text features.
        for a in Category::ALL {
            for b in Category::ALL {
                if a == b {
                    continue;
                }
                let ta = net.text_features(a).unwrap();
                let tb = net.text_features(b).unwrap();
                let dot: f64 =
                    ta.data().iter().zip(tb.data()).map(|(x, y)| (x * y) as f64).sum();
                let na: f64 = ta.data().iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                let nb: f64 = tb.data().iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                let cos = dot / (na * nb);
                assert!(cos < 0.99, "categories {a} vs {b} collapsed: cos {cos}");
            }
        }
    }
}
