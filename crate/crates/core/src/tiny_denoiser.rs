//! Compact conditional noise-prediction network and its training loop: a
//! three-level conv encoder/decoder with concatenation skips, sinusoidal
//! timestep features injected as per-level channel biases, a learned
//! three-word condition vocabulary,
//! trained with the standard eps-MSE objective (conditions randomly
//! dropped to support classifier-free guidance).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, ConditionEmbedding, ConditionedDenoiser, Denoiser, NoiseSchedule};
use crate::numerics::{kaiming_uniform, randn, Adam, Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Condition vocabulary. The empty label doubles as the null condition.
pub const NULL_LABEL: &str = "";
pub const MODEL_LABEL: &str = "model wearing clothes";
pub const GARMENT_LABEL: &str = "clothes";

pub const VOCAB: [&str; 3] = [NULL_LABEL, MODEL_LABEL, GARMENT_LABEL];

/// Interleaved sin/cos features of a timestep at geometric frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArg(format!("embedding dim must be even and > 0, got {dim}")));
    }
    let half = dim / 2;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        data.push(arg.sin() as f32);
        data.push(arg.cos() as f32);
    }
    Tensor::from_vec(&[dim], data)
}

/// Architecture knobs for [`DenoiserNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub emb_dim: usize,
    pub cond_dim: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { c1: 12, c2: 24, c3: 48, emb_dim: 32, cond_dim: 16, h: 64, w: 64 }
    }
}

impl NetConfig {
    fn validate(&self) -> Result<()> {
        if self.h % 8 != 0 || self.w % 8 != 0 {
            return Err(Error::InvalidArg(format!(
                "latent dims must be divisible by 8, got {}x{}",
                self.h, self.w
            )));
        }
        if self.emb_dim % 2 != 0 || self.emb_dim == 0 {
            return Err(Error::InvalidArg("emb_dim must be even and > 0".into()));
        }
        if [self.c1, self.c2, self.c3, self.cond_dim].iter().any(|&c| c == 0) {
            return Err(Error::InvalidArg("channel sizes must be > 0".into()));
        }
        Ok(())
    }
}

/// Noise-prediction net. Weights live in plain tensors; each forward or
/// training step wires them into a fresh graph.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    cfg: NetConfig,
    sched: NoiseSchedule,
    weights: Vec<Tensor>,
    cond_rows: [Tensor; 3],
}

/// Names for the non-embedding weights, in wiring order.
const WEIGHT_NAMES: [&str; 26] = [
    "enc1.weight",
    "enc1.bias",
    "time1.weight",
    "time1.bias",
    "enc2.weight",
    "enc2.bias",
    "time2.weight",
    "time2.bias",
    "enc3.weight",
    "enc3.bias",
    "time3.weight",
    "time3.bias",
    "mid.weight",
    "mid.bias",
    "time_mid.weight",
    "time_mid.bias",
    "cond_proj.weight",
    "cond_proj.bias",
    "dec1.weight",
    "dec1.bias",
    "dec2.weight",
    "dec2.bias",
    "dec3.weight",
    "dec3.bias",
    "out.weight",
    "out.bias",
];

const COND_NAMES: [&str; 3] = ["cond.null", "cond.model", "cond.garment"];

impl DenoiserNet {
    pub fn new(cfg: NetConfig, sched: NoiseSchedule, seed: u64) -> Result<DenoiserNet> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = |rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize| {
            kaiming_uniform(rng, &[co, ci, k, k], ci * k * k)
        };
        let (c1, c2, c3) = (cfg.c1, cfg.c2, cfg.c3);
        // Embedding projections start small so condition/timestep biases
        // perturb rather than saturate the early activations.
        let proj = |rng: &mut ChaCha8Rng, co: usize, ci: usize| {
            let mut t = kaiming_uniform(rng, &[co, ci], ci);
            t.scale(0.1);
            t
        };
        let mut weights = Vec::with_capacity(26);
        weights.push(conv(&mut rng, c1, 3, 3));
        weights.push(Tensor::zeros(&[c1]));
        weights.push(proj(&mut rng, c1, cfg.emb_dim));
        weights.push(Tensor::zeros(&[c1]));
        weights.push(conv(&mut rng, c2, c1, 3));
        weights.push(Tensor::zeros(&[c2]));
        weights.push(proj(&mut rng, c2, cfg.emb_dim));
        weights.push(Tensor::zeros(&[c2]));
        weights.push(conv(&mut rng, c3, c2, 3));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(proj(&mut rng, c3, cfg.emb_dim));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(conv(&mut rng, c3, c3, 3));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(proj(&mut rng, c3, cfg.emb_dim));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(proj(&mut rng, c3, cfg.cond_dim));
        weights.push(Tensor::zeros(&[c3]));
        weights.push(conv(&mut rng, c2, 2 * c3, 3));
        weights.push(Tensor::zeros(&[c2]));
        weights.push(conv(&mut rng, c1, 2 * c2, 3));
        weights.push(Tensor::zeros(&[c1]));
        weights.push(conv(&mut rng, c1, 2 * c1, 3));
        weights.push(Tensor::zeros(&[c1]));
        weights.push(conv(&mut rng, 3, c1, 3));
        weights.push(Tensor::zeros(&[3]));
        let mut row = || {
            let mut t = randn(&mut rng, &[cfg.cond_dim]);
            t.scale(0.5);
            t
        };
        let cond_rows = [row(), row(), row()];
        Ok(DenoiserNet { cfg, sched, weights, cond_rows })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [3, self.cfg.h, self.cfg.w]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|t| t.numel()).sum::<usize>()
            + self.cond_rows.iter().map(|t| t.numel()).sum::<usize>()
    }

    /// Look up a vocabulary label (the empty string is the null row).
    pub fn embed_condition(&self, label: &str) -> Result<ConditionEmbedding> {
        let k = VOCAB
            .iter()
            .position(|&v| v == label)
            .ok_or_else(|| Error::InvalidArg(format!("label '{label}' not in vocabulary")))?;
        Ok(ConditionEmbedding { label: label.to_string(), vector: self.cond_rows[k].data().to_vec() })
    }

    /// Named parameter snapshot, checkpoint-ready.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = WEIGHT_NAMES
            .iter()
            .zip(&self.weights)
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (n, t) in COND_NAMES.iter().zip(&self.cond_rows) {
            out.push((n.to_string(), t.clone()));
        }
        out
    }

    /// Rebuild a net from named tensors (shape-checked against `cfg`).
    pub fn from_named(
        cfg: NetConfig,
        sched: NoiseSchedule,
        tensors: &mut dyn FnMut(&str) -> Option<Tensor>,
    ) -> Result<DenoiserNet> {
        cfg.validate()?;
        let template = DenoiserNet::new(cfg, sched.clone(), 0)?;
        let mut weights = Vec::with_capacity(26);
        for (name, t) in WEIGHT_NAMES.iter().zip(&template.weights) {
            let got = tensors(name).ok_or_else(|| Error::msg(format!("missing tensor {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::shape(
                    "denoiser load",
                    format!("{name}: {:?} vs {:?}", got.shape(), t.shape()),
                ));
            }
            weights.push(got);
        }
        let mut rows = Vec::with_capacity(3);
        for name in COND_NAMES {
            let got = tensors(name).ok_or_else(|| Error::msg(format!("missing tensor {name}")))?;
            if got.shape() != [cfg.cond_dim] {
                return Err(Error::shape("denoiser load", format!("{name} shape {:?}", got.shape())));
            }
            rows.push(got);
        }
        Ok(DenoiserNet {
            cfg,
            sched,
            weights,
            cond_rows: rows.try_into().map_err(|_| Error::msg("cond rows"))?,
        })
    }

    /// Wire the forward pass into `g`. Weight tensors become params (in
    /// `WEIGHT_NAMES` order, returned for gradient collection); the caller
    /// provides the latent and condition nodes.
    fn wire_forward(
        &self,
        g: &mut Graph,
        z: NodeId,
        ddim_index: usize,
        cond: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let tau = self.sched.timestep_at(ddim_index)?;
        let temb = g.input(timestep_embedding(tau, self.cfg.emb_dim)?);
        let w: Vec<NodeId> = self.weights.iter().map(|t| g.param(t.clone())).collect();
        let x1 = g.conv2d(z, w[0], w[1], 1, 1)?;
        let t1 = g.dense(temb, w[2], w[3])?;
        let x1 = g.add_channel(x1, t1)?;
        let x1 = g.relu(x1)?;
        let p1 = g.mean_pool2(x1)?;
        let x2 = g.conv2d(p1, w[4], w[5], 1, 1)?;
        let t2 = g.dense(temb, w[6], w[7])?;
        let x2 = g.add_channel(x2, t2)?;
        let x2 = g.relu(x2)?;
        let p2 = g.mean_pool2(x2)?;
        let x3 = g.conv2d(p2, w[8], w[9], 1, 1)?;
        let t3 = g.dense(temb, w[10], w[11])?;
        let x3 = g.add_channel(x3, t3)?;
        let x3 = g.relu(x3)?;
        let p3 = g.mean_pool2(x3)?;
        let mid = g.conv2d(p3, w[12], w[13], 1, 1)?;
        let tm = g.dense(temb, w[14], w[15])?;
        let cp = g.dense(cond, w[16], w[17])?;
        let mid = g.add_channel(mid, tm)?;
        let mid = g.add_channel(mid, cp)?;
        let mid = g.relu(mid)?;
        let u1 = g.upsample_nearest(mid, 2)?;
        let cat1 = g.concat_channels(u1, x3)?;
        let y1 = g.conv2d(cat1, w[18], w[19], 1, 1)?;
        let y1 = g.relu(y1)?;
        let u2 = g.upsample_nearest(y1, 2)?;
        let cat2 = g.concat_channels(u2, x2)?;
        let y2 = g.conv2d(cat2, w[20], w[21], 1, 1)?;
        let y2 = g.relu(y2)?;
        let u3 = g.upsample_nearest(y2, 2)?;
        let cat3 = g.concat_channels(u3, x1)?;
        let y3 = g.conv2d(cat3, w[22], w[23], 1, 1)?;
        let y3 = g.relu(y3)?;
        let eps = g.conv2d(y3, w[24], w[25], 1, 1)?;
        Ok((eps, w))
    }

    /// Weights as f64 vectors in wiring order, for the reference forward.
    pub fn weights_f64(&self) -> Vec<Vec<f64>> {
        self.weights.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect()
    }

    /// ε-prediction MSE against `target` at one (latent, step, label)
    /// triple, with analytic gradients per weight tensor in wiring order —
    /// the training objective exposed for external verification.
    pub fn eps_mse_gradients(
        &self,
        z: &Tensor,
        ddim_index: usize,
        label: &str,
        target: &Tensor,
    ) -> Result<(f32, Vec<Tensor>)> {
        let k = vocab_index(label)?;
        let mut g = Graph::new();
        let zi = g.input(z.clone());
        let ci = g.input(self.cond_rows[k].clone());
        let (eps, wnodes) = self.wire_forward(&mut g, zi, ddim_index, ci)?;
        let t = g.input(target.clone());
        let loss = g.mse_loss(eps, t)?;
        g.backward(loss)?;
        let grads = wnodes
            .iter()
            .map(|n| g.grad(*n).cloned().ok_or_else(|| Error::msg("missing weight gradient")))
            .collect::<Result<Vec<_>>>()?;
        Ok((g.value(loss).item(), grads))
    }

    fn cond_vector(&self, cond: Option<&ConditionEmbedding>) -> Result<Tensor> {
        match cond {
            None => Ok(self.cond_rows[0].clone()),
            Some(c) => {
                if c.vector.len() != self.cfg.cond_dim {
                    return Err(Error::shape(
                        "condition",
                        format!("dim {} vs net {}", c.vector.len(), self.cfg.cond_dim),
                    ));
                }
                Tensor::from_vec(&[self.cfg.cond_dim], c.vector.clone())
            }
        }
    }
}

impl Denoiser for DenoiserNet {
    fn predict_eps(
        &self,
        z: &Tensor,
        ddim_index: usize,
        cond: Option<&ConditionEmbedding>,
    ) -> Result<Tensor> {
        if z.shape() != self.latent_shape() {
            return Err(Error::shape(
                "denoiser",
                format!("latent {:?} vs net {:?}", z.shape(), self.latent_shape()),
            ));
        }
        let mut g = Graph::new();
        let zi = g.input(z.clone());
        let ci = g.input(self.cond_vector(cond)?);
        let (eps, _) = self.wire_forward(&mut g, zi, ddim_index, ci)?;
        Ok(g.value(eps).clone())
    }
}

impl ConditionedDenoiser for DenoiserNet {
    fn embed_label(&self, label: &str) -> Result<ConditionEmbedding> {
        self.embed_condition(label)
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        Some(&self.sched)
    }
}

/// Straight-line f64 re-implementation of the forward pass. Serves as a
/// validation oracle: finite-difference gradient checks run against it
/// (f64 kills the rounding floor of f32 differences), and agreement with
/// the graph execution cross-checks both implementations.
///
/// `weights` must follow the wiring order of [`DenoiserNet::weights_f64`];
/// `cond` is a condition vector of the net's cond dim.
pub fn forward_f64(
    net: &DenoiserNet,
    weights: &[Vec<f64>],
    z: &[f64],
    ddim_index: usize,
    cond: &[f64],
) -> Result<Vec<f64>> {
    let cfg = *net.config();
    let (c1, c2, c3) = (cfg.c1, cfg.c2, cfg.c3);
    if weights.len() != WEIGHT_NAMES.len() {
        return Err(Error::shape("forward_f64", format!("{} weight tensors", weights.len())));
    }
    if z.len() != 3 * cfg.h * cfg.w || cond.len() != cfg.cond_dim {
        return Err(Error::shape("forward_f64", "input sizes".to_string()));
    }
    let conv = |x: &[f64], ci: usize, h: usize, w: usize, wt: &[f64], b: &[f64], co: usize| {
        let mut out = vec![0.0f64; co * h * w];
        for o in 0..co {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..3 {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = ox as isize + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * ci + c) * 3 + ky) * 3 + kx]
                                    * x[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * h + oy) * w + ox] = acc;
                }
            }
        }
        out
    };
    let dense = |x: &[f64], wt: &[f64], b: &[f64], m: usize| -> Vec<f64> {
        let n = x.len();
        (0..m).map(|i| b[i] + (0..n).map(|j| wt[i * n + j] * x[j]).sum::<f64>()).collect()
    };
    let add_ch = |x: &mut [f64], v: &[f64], hw: usize| {
        for (c, &b) in v.iter().enumerate() {
            for p in &mut x[c * hw..(c + 1) * hw] {
                *p += b;
            }
        }
    };
    let relu = |x: &mut [f64]| {
        for p in x.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
    };
    let pool = |x: &[f64], c: usize, h: usize, w: usize| -> Vec<f64> {
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f64; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = (ch * h + 2 * y) * w + 2 * xx;
                    out[(ch * oh + y) * ow + xx] =
                        0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        out
    };
    let up = |x: &[f64], c: usize, h: usize, w: usize| -> Vec<f64> {
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f64; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        out
    };
    let cat = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        out.extend_from_slice(a);
        out.extend_from_slice(b);
        out
    };
    let tau = net.sched.timestep_at(ddim_index)?;
    let temb: Vec<f64> =
        timestep_embedding(tau, cfg.emb_dim)?.data().iter().map(|&v| v as f64).collect();
    let (h, w) = (cfg.h, cfg.w);
    let mut x1 = conv(z, 3, h, w, &weights[0], &weights[1], c1);
    add_ch(&mut x1, &dense(&temb, &weights[2], &weights[3], c1), h * w);
    relu(&mut x1);
    let p1 = pool(&x1, c1, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let mut x2 = conv(&p1, c1, h2, w2, &weights[4], &weights[5], c2);
    add_ch(&mut x2, &dense(&temb, &weights[6], &weights[7], c2), h2 * w2);
    relu(&mut x2);
    let p2 = pool(&x2, c2, h2, w2);
    let (h4, w4) = (h / 4, w / 4);
    let mut x3 = conv(&p2, c2, h4, w4, &weights[8], &weights[9], c3);
    add_ch(&mut x3, &dense(&temb, &weights[10], &weights[11], c3), h4 * w4);
    relu(&mut x3);
    let p3 = pool(&x3, c3, h4, w4);
    let (h8, w8) = (h / 8, w / 8);
    let mut mid = conv(&p3, c3, h8, w8, &weights[12], &weights[13], c3);
    add_ch(&mut mid, &dense(&temb, &weights[14], &weights[15], c3), h8 * w8);
    add_ch(&mut mid, &dense(cond, &weights[16], &weights[17], c3), h8 * w8);
    relu(&mut mid);
    let u1 = up(&mid, c3, h8, w8);
    let mut y1 = conv(&cat(&u1, &x3), 2 * c3, h4, w4, &weights[18], &weights[19], c2);
    relu(&mut y1);
    let u2 = up(&y1, c2, h4, w4);
    let mut y2 = conv(&cat(&u2, &x2), 2 * c2, h2, w2, &weights[20], &weights[21], c1);
    relu(&mut y2);
    let u3 = up(&y2, c1, h2, w2);
    let mut y3 = conv(&cat(&u3, &x1), 2 * c1, h, w, &weights[22], &weights[23], c1);
    relu(&mut y3);
    Ok(conv(&y3, c1, h, w, &weights[24], &weights[25], 3))
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    /// Probability a sample's condition is replaced by the null label.
    pub cond_drop: f32,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArg("steps and batch must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArg("lr must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.cond_drop) {
            return Err(Error::InvalidArg("cond_drop must lie in [0,1)".into()));
        }
        Ok(())
    }
}

const WARMUP_STEPS: usize = 50;

fn vocab_index(label: &str) -> Result<usize> {
    VOCAB
        .iter()
        .position(|&v| v == label)
        .ok_or_else(|| Error::InvalidArg(format!("label '{label}' not in vocabulary")))
}

/// eps-MSE training over clean latents. Each sample draws a uniform ddim
/// index, fresh Gaussian noise, and keeps or drops its condition label;
/// gradients are averaged over the batch. Returns the per-step loss curve.
pub fn train(
    net: &mut DenoiserNet,
    data: &[(Tensor, String)],
    sched: &NoiseSchedule,
    hp: &TrainHyper,
) -> Result<Vec<f32>> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArg("training dataset is empty".into()));
    }
    if sched.num_steps() != net.sched.num_steps()
        || sched.t_train() != net.sched.t_train()
        || sched.beta_range() != net.sched.beta_range()
    {
        return Err(Error::InvalidArg("schedule differs from the net's schedule".into()));
    }
    for (z, label) in data {
        if z.shape() != net.latent_shape() {
            return Err(Error::shape(
                "train",
                format!("latent {:?} vs net {:?}", z.shape(), net.latent_shape()),
            ));
        }
        vocab_index(label)?;
    }
    let s = sched.num_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut adam = Adam::new(hp.lr);
    let mut curve = Vec::with_capacity(hp.steps);
    let n_params = net.weights.len() + 3;
    for step in 0..hp.steps {
        let mut grad_acc: Vec<Tensor> = net
            .weights
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .chain(net.cond_rows.iter().map(|t| Tensor::zeros(t.shape())))
            .collect();
        debug_assert_eq!(grad_acc.len(), n_params);
        let mut loss_sum = 0.0f64;
        for _ in 0..hp.batch {
            let (z0, label) = &data[rng.gen_range(0..data.len())];
            let idx = rng.gen_range(1..=s);
            let eps = randn(&mut rng, z0.shape());
            let z_t = forward_diffuse(z0, idx, &eps, sched)?;
            let dropped = rng.gen::<f32>() < hp.cond_drop;
            let row = if dropped { 0 } else { vocab_index(label)? };
            let mut g = Graph::new();
            let zi = g.input(z_t);
            let ci = g.param(net.cond_rows[row].clone());
            let (eps_hat, wnodes) = net.wire_forward(&mut g, zi, idx, ci)?;
            let target = g.input(eps);
            let loss = g.mse_loss(eps_hat, target)?;
            loss_sum += g.value(loss).item() as f64;
            g.backward(loss)?;
            let inv_b = 1.0 / hp.batch as f32;
            for (k, node) in wnodes.iter().enumerate() {
                if let Some(gr) = g.grad(*node) {
                    grad_acc[k].axpy(inv_b, gr);
                }
            }
            if let Some(gr) = g.grad(ci) {
                grad_acc[net.weights.len() + row].axpy(inv_b, gr);
            }
        }
        let mean_loss = (loss_sum / hp.batch as f64) as f32;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { step, loss: mean_loss });
        }
        curve.push(mean_loss);
        // Short warmup, then cosine decay to a tenth of the peak rate.
        let warmup = ((step + 1) as f32 / WARMUP_STEPS as f32).min(1.0);
        let frac = step as f32 / hp.steps as f32;
        let decayed = hp.lr * warmup * (0.1 + 0.45 * (1.0 + (std::f32::consts::PI * frac).cos()));
        adam.set_lr(decayed);
        let (weights, rows) = (&mut net.weights, &mut net.cond_rows);
        let mut params: Vec<&mut Tensor> = weights.iter_mut().chain(rows.iter_mut()).collect();
        let grads: Vec<&Tensor> = grad_acc.iter().collect();
        adam.step(&mut params, &grads)?;
    }
    Ok(curve)
}
