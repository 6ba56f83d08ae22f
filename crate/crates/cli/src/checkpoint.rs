//! Binary tensor checkpoints: a fixed magic, a format version, and a flat
//! list of named f32 tensors with explicit shapes, all little-endian.
//! Save→load→save is byte-identical; unknown versions and malformed or
//! trailing bytes are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dtrend_core::diffusion::NoiseSchedule;
use dtrend_core::localizer::LocalizerNet;
use dtrend_core::numerics::Tensor;
use dtrend_core::tiny_denoiser::{DenoiserNet, NetConfig};

const MAGIC: [u8; 4] = *b"DTWN";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Denoiser architecture record: [c1, c2, c3, emb_dim, cond_dim, h, w].
const META_CONFIG: &str = "meta.config";
/// Denoiser step-grid record: [t_train, ddim_steps]. Betas are the fixed
/// linear default and are not stored.
const META_SCHEDULE: &str = "meta.schedule";

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    ensure!(tensors.len() <= u32::MAX as usize, "too many tensors");
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let nb = name.as_bytes();
        ensure!(nb.len() <= u16::MAX as usize, "tensor name too long: {name}");
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(DTYPE_F32);
        let shape = t.shape();
        ensure!(shape.len() <= u8::MAX as usize, "too many dimensions: {name}");
        buf.push(shape.len() as u8);
        for &d in shape {
            ensure!(d <= u32::MAX as usize, "dimension too large: {name}");
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).with_context(|| format!("writing checkpoint {}", path.display()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.buf.len() - self.pos >= n, "truncated checkpoint");
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    ensure!(r.take(4)? == MAGIC, "not a checkpoint file (bad magic)");
    let version = r.u32()?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .context("tensor name is not UTF-8")?
            .to_string();
        let dtype = r.u8()?;
        ensure!(dtype == DTYPE_F32, "unsupported dtype {dtype} for tensor {name}");
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel.checked_mul(d).context("tensor size overflow")?;
            dims.push(d);
        }
        let raw = r.take(numel.checked_mul(4).context("tensor size overflow")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name.clone(), Tensor::from_vec(&dims, data)?));
    }
    if r.pos != buf.len() {
        bail!("trailing bytes after last tensor");
    }
    Ok(out)
}

fn into_map(tensors: Vec<(String, Tensor)>) -> Result<BTreeMap<String, Tensor>> {
    let mut map = BTreeMap::new();
    for (name, t) in tensors {
        ensure!(map.insert(name.clone(), t).is_none(), "duplicate tensor {name}");
    }
    Ok(map)
}

pub fn save_localizer(path: &Path, net: &LocalizerNet) -> Result<()> {
    save(path, &net.named_tensors())
}

pub fn load_localizer(path: &Path) -> Result<LocalizerNet> {
    let map = into_map(load(path)?)?;
    LocalizerNet::from_named(&mut |n| map.get(n).cloned())
        .with_context(|| format!("loading localizer {}", path.display()))
}

pub fn save_denoiser(path: &Path, net: &DenoiserNet) -> Result<()> {
    let mut tensors = net.named_tensors();
    let c = net.config();
    let cfg_rec =
        [c.c1, c.c2, c.c3, c.emb_dim, c.cond_dim, c.h, c.w].map(|v| v as f32).to_vec();
    tensors.push((META_CONFIG.to_string(), Tensor::from_vec(&[7], cfg_rec)?));
    let s = net.schedule();
    let sched_rec = vec![s.t_train() as f32, s.num_steps() as f32];
    tensors.push((META_SCHEDULE.to_string(), Tensor::from_vec(&[2], sched_rec)?));
    save(path, &tensors)
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserNet> {
    load_denoiser_with_steps(path, None)
}

/// Load a denoiser, optionally re-gridding its DDIM schedule onto a
/// different step count over the same training horizon.
pub fn load_denoiser_with_steps(path: &Path, steps: Option<usize>) -> Result<DenoiserNet> {
    let map = into_map(load(path)?)?;
    let meta_usize = |name: &str, want: usize| -> Result<Vec<usize>> {
        let t = map.get(name).with_context(|| format!("missing tensor {name}"))?;
        ensure!(t.shape() == [want], "bad {name} shape {:?}", t.shape());
        t.data()
            .iter()
            .map(|&v| {
                ensure!(v >= 0.0 && v.fract() == 0.0, "non-integer value in {name}");
                Ok(v as usize)
            })
            .collect()
    };
    let c = meta_usize(META_CONFIG, 7)?;
    let cfg =
        NetConfig { c1: c[0], c2: c[1], c3: c[2], emb_dim: c[3], cond_dim: c[4], h: c[5], w: c[6] };
    let s = meta_usize(META_SCHEDULE, 2)?;
    let (beta_lo, beta_hi) = NoiseSchedule::default().beta_range();
    let sched = NoiseSchedule::new(s[0], beta_lo, beta_hi, steps.unwrap_or(s[1]))?;
    DenoiserNet::from_named(cfg, sched, &mut |n| map.get(n).cloned())
        .with_context(|| format!("loading denoiser {}", path.display()))
}
