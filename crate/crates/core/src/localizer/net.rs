//! Apparel-localization network: three conv layers distill the image,
//! two dense layers distill a frozen per-category embedding, a 1×1
//! fusion conv over the channel-scaled features yields a sigmoid mask,
//! and prediction routes upper/lower requests through the garment split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::localizer::kmeans::split_garments;
use crate::localizer::snake::{refine_contour, SnakeParams};
use crate::localizer::Mask;
use crate::numerics::{kaiming_uniform, randn, Graph, NodeId, Tensor};
use crate::{Category, Error, Result};

/// Width of the frozen category embeddings and of the final conv features.
pub const EMBED_DIM: usize = 64;
/// Conv channel widths of the image branch.
pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
/// Spatial shrink factor between input and feature grid.
pub const FEATURE_STRIDE: usize = 4;
/// Default cluster count for the garment split.
pub const DEFAULT_K: usize = 5;

/// Seed for the frozen embedding table (independent of the weight seed so
/// the "text encoder" is identical across differently-initialized nets).
const EMBED_SEED: u64 = 0xC10_7E5;

const WEIGHT_NAMES: [&str; 12] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fuse.weight",
    "fuse.bias",
];

const EMBED_NAME: &str = "embed.table";

/// Compact segmentation net; weights live in plain tensors and are wired
/// into a fresh graph per call.
#[derive(Debug, Clone)]
pub struct LocalizerNet {
    weights: Vec<Tensor>,
    /// Frozen [4, 64] table, rows in `Category::ALL` order.
    embed: Tensor,
}

/// Prediction output: a whole-outfit (or dress) mask, or an upper/lower
/// pair from the garment split (`degraded` marks the split fallback).
#[derive(Debug, Clone)]
pub enum Localization {
    Whole(Mask),
    Split { up: Mask, low: Mask, degraded: bool },
}

impl Localization {
    /// The mask answering the original category request.
    pub fn select(&self, category: Category) -> &Mask {
        match self {
            Localization::Whole(m) => m,
            Localization::Split { up, low, .. } => match category {
                Category::Lower => low,
                _ => up,
            },
        }
    }
}

fn category_row(category: Category) -> usize {
    Category::ALL.iter().position(|&c| c == category).expect("category in table")
}

impl LocalizerNet {
    pub fn new(seed: u64) -> LocalizerNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = CONV_CHANNELS;
        let mut weights = Vec::with_capacity(12);
        weights.push(kaiming_uniform(&mut rng, &[c1, 3, 3, 3], 3 * 9));
        weights.push(Tensor::zeros(&[c1]));
        weights.push(kaiming_uniform(&mut rng, &[c2, c1, 3, 3], c1 * 9));
        weights.push(Tensor::zeros(&[c2]));
        weights.push(kaiming_uniform(&mut rng, &[c3, c2, 3, 3], c2 * 9));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(kaiming_uniform(&mut rng, &[EMBED_DIM, EMBED_DIM], EMBED_DIM));
        weights.push(Tensor::zeros(&[EMBED_DIM]));
        weights.push(kaiming_uniform(&mut rng, &[EMBED_DIM, EMBED_DIM], EMBED_DIM));
        weights.push(Tensor::zeros(&[EMBED_DIM]));
        // Small fusion init keeps initial logits near zero; a saturated
        // sigmoid at the start starves the l1 objective of gradient.
        let mut fuse = kaiming_uniform(&mut rng, &[1, c3, 1, 1], c3);
        fuse.scale(0.1);
        weights.push(fuse);
        weights.push(Tensor::zeros(&[1]));
        let mut table_rng = ChaCha8Rng::seed_from_u64(EMBED_SEED);
        let embed = randn(&mut table_rng, &[Category::ALL.len(), EMBED_DIM]);
        LocalizerNet { weights, embed }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|t| t.numel()).sum()
    }

    /// Trainable weights in wiring order (embedding table excluded).
    pub(crate) fn weights_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.weights
    }

    /// Frozen embedding row for a category (T_0).
    pub fn embedding(&self, category: Category) -> Tensor {
        let row = category_row(category);
        let data = self.embed.data()[row * EMBED_DIM..(row + 1) * EMBED_DIM].to_vec();
        Tensor::from_vec(&[EMBED_DIM], data).expect("embed row")
    }

    /// Named parameter snapshot (embedding table included for fidelity,
    /// though it is never trained).
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = WEIGHT_NAMES
            .iter()
            .zip(&self.weights)
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        out.push((EMBED_NAME.to_string(), self.embed.clone()));
        out
    }

    pub fn from_named(tensors: &mut dyn FnMut(&str) -> Option<Tensor>) -> Result<LocalizerNet> {
        let template = LocalizerNet::new(0);
        let mut weights = Vec::with_capacity(12);
        for (name, t) in WEIGHT_NAMES.iter().zip(&template.weights) {
            let got = tensors(name).ok_or_else(|| Error::msg(format!("missing tensor {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::shape(
                    "localizer load",
                    format!("{name}: {:?} vs {:?}", got.shape(), t.shape()),
                ));
            }
            weights.push(got);
        }
        let embed =
            tensors(EMBED_NAME).ok_or_else(|| Error::msg(format!("missing tensor {EMBED_NAME}")))?;
        if embed.shape() != template.embed.shape() {
            return Err(Error::shape("localizer load", format!("{EMBED_NAME} {:?}", embed.shape())));
        }
        Ok(LocalizerNet { weights, embed })
    }

    fn check_image(&self, image: &Tensor) -> Result<(usize, usize)> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::shape("localizer", format!("image {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        if h % FEATURE_STRIDE != 0 || w % FEATURE_STRIDE != 0 || h < FEATURE_STRIDE || w < FEATURE_STRIDE {
            return Err(Error::InvalidArg(format!(
                "image dims must be positive multiples of {FEATURE_STRIDE}, got {h}x{w}"
            )));
        }
        Ok((h, w))
    }

    /// Wire image branch → fused sigmoid mask into `g`; returns
    /// (mask node [1,H,W], feature node I3, weight param nodes).
    pub(crate) fn wire(
        &self,
        g: &mut Graph,
        image: NodeId,
        embed: NodeId,
    ) -> Result<(NodeId, NodeId, Vec<NodeId>)> {
        let w: Vec<NodeId> = self.weights.iter().map(|t| g.param(t.clone())).collect();
        let i1 = g.conv2d(image, w[0], w[1], 2, 1)?;
        let i1 = g.relu(i1)?;
        let i2 = g.conv2d(i1, w[2], w[3], 2, 1)?;
        let i2 = g.relu(i2)?;
        let i3 = g.conv2d(i2, w[4], w[5], 1, 1)?;
        let i3 = g.relu(i3)?;
        let t1 = g.dense(embed, w[6], w[7])?;
        let t1 = g.relu(t1)?;
        let t2 = g.dense(t1, w[8], w[9])?;
        let scaled = g.mul_channel(i3, t2)?;
        let logit = g.conv2d(scaled, w[10], w[11], 1, 0)?;
        let prob = g.sigmoid(logit)?;
        let mask = g.upsample_nearest(prob, FEATURE_STRIDE)?;
        Ok((mask, i3, w))
    }

    /// I_3: three conv+ReLU stages at a quarter of the input resolution.
    pub fn image_features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let w0 = g.input(self.weights[0].clone());
        let b0 = g.input(self.weights[1].clone());
        let w1 = g.input(self.weights[2].clone());
        let b1 = g.input(self.weights[3].clone());
        let w2 = g.input(self.weights[4].clone());
        let b2 = g.input(self.weights[5].clone());
        let i1 = g.conv2d(x, w0, b0, 2, 1)?;
        let i1 = g.relu(i1)?;
        let i2 = g.conv2d(i1, w1, b1, 2, 1)?;
        let i2 = g.relu(i2)?;
        let i3 = g.conv2d(i2, w2, b2, 1, 1)?;
        let i3 = g.relu(i3)?;
        Ok(g.value(i3).clone())
    }

    /// T_2 = FC2(ReLU(FC1(T_0))) from the frozen category row.
    pub fn text_features(&self, category: Category) -> Result<Tensor> {
        let mut g = Graph::new();
        let t0 = g.input(self.embedding(category));
        let w1 = g.input(self.weights[6].clone());
        let b1 = g.input(self.weights[7].clone());
        let w2 = g.input(self.weights[8].clone());
        let b2 = g.input(self.weights[9].clone());
        let t1 = g.dense(t0, w1, b1)?;
        let t1 = g.relu(t1)?;
        let t2 = g.dense(t1, w2, b2)?;
        Ok(g.value(t2).clone())
    }

    /// M = Upsample(Sigmoid(Conv1×1(I3 · T2))); the product scales channel
    /// k of I3 by T2[k].
    pub fn fuse_mask(&self, i3: &Tensor, t2: &Tensor) -> Result<Mask> {
        let s = i3.shape();
        if s.len() != 3 || t2.shape() != [s[0]] {
            return Err(Error::shape(
                "fuse_mask",
                format!("features {s:?} vs text {:?}", t2.shape()),
            ));
        }
        let mut g = Graph::new();
        let f = g.input(i3.clone());
        let t = g.input(t2.clone());
        let w = g.input(self.weights[10].clone());
        let b = g.input(self.weights[11].clone());
        let scaled = g.mul_channel(f, t)?;
        let logit = g.conv2d(scaled, w, b, 1, 0)?;
        let prob = g.sigmoid(logit)?;
        let up = g.upsample_nearest(prob, FEATURE_STRIDE)?;
        let out = g.value(up);
        let (h, w_) = (out.shape()[1], out.shape()[2]);
        Mask::new(h, w_, out.data().to_vec())
    }

    /// End-to-end localization. Upper/lower categories run the garment
    /// split on the fused whole-outfit mask; `refine` applies the active
    /// contour to each nonempty output mask.
    pub fn predict_mask(
        &self,
        image: &Tensor,
        category: Category,
        refine: bool,
    ) -> Result<Localization> {
        self.check_image(image)?;
        let i3 = self.image_features(image)?;
        let t2 = self.text_features(category)?;
        let mask = self.fuse_mask(&i3, &t2)?;
        let polish = |m: Mask| -> Result<Mask> {
            if refine && m.fg_count() > 0 {
                refine_contour(&m, &SnakeParams::default())
            } else {
                Ok(m)
            }
        };
        match category {
            Category::Clothes | Category::Dress => Ok(Localization::Whole(polish(mask)?)),
            Category::Upper | Category::Lower => {
                if mask.fg_count() == 0 {
                    // Nothing to split; report an empty degraded pair.
                    return Ok(Localization::Split {
                        up: Mask::zeros(mask.height(), mask.width()),
                        low: Mask::zeros(mask.height(), mask.width()),
                        degraded: true,
                    });
                }
                let split = split_garments(&mask, &i3, DEFAULT_K)?;
                Ok(Localization::Split {
                    up: polish(split.up)?,
                    low: polish(split.low)?,
                    degraded: split.degraded,
                })
            }
        }
    }
}
