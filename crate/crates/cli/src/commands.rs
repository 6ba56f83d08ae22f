//! Subcommand implementations: dataset generation, the two training loops,
//! segmentation, single try-on runs, the evaluation suites, and ablation
//! grids. Every command prints one summary JSON line on success; eval-style
//! commands fan independent jobs across worker threads capped by the
//! DTREND_THREADS environment variable.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use dtrend_core::colorspace::region_mean_de;
use dtrend_core::diffusion::NoiseSchedule;
use dtrend_core::evalmetrics::{self, ssim};
use dtrend_core::localizer::{self, Localization, LocalizerNet, LocTrainHyper};
use dtrend_core::numerics::Tensor;
use dtrend_core::pipeline::{self, Codec, PipelineConfig};
use dtrend_core::synthdata::{self, ManifestEntry, Scene, SceneSpec};
use dtrend_core::tiny_denoiser::{self, DenoiserNet, NetConfig, TrainHyper};
use dtrend_core::Category;

use crate::checkpoint;
use crate::config::{self, RunConfig};

/// Cap on worker threads for `n` independent jobs: DTREND_THREADS when
/// set, available parallelism otherwise.
fn eval_threads(jobs: usize) -> usize {
    let cap = std::env::var("DTREND_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1);
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cap.unwrap_or(avail).min(jobs.max(1))
}

/// Order-preserving parallel map; the first failing index wins.
fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled every claimed slot"))
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Manifest rows of one split, loaded into scenes (`limit` trims first).
fn load_split(
    data: &Path,
    validation: bool,
    limit: Option<usize>,
) -> Result<Vec<(ManifestEntry, Scene)>> {
    let mut entries: Vec<ManifestEntry> = synthdata::load_manifest(data)?
        .into_iter()
        .filter(|e| synthdata::is_validation(e.seed) == validation)
        .collect();
    if let Some(n) = limit {
        entries.truncate(n);
    }
    let split = if validation { "validation" } else { "training" };
    ensure!(!entries.is_empty(), "no {split} scenes under {}", data.display());
    entries
        .into_iter()
        .map(|e| {
            let scene = synthdata::load_scene(data, &e)?;
            Ok((e, scene))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CategoryArg {
    Clothes,
    Upper,
    Lower,
    Dress,
}

impl From<CategoryArg> for Category {
    fn from(c: CategoryArg) -> Category {
        match c {
            CategoryArg::Clothes => Category::Clothes,
            CategoryArg::Upper => Category::Upper,
            CategoryArg::Lower => Category::Lower,
            CategoryArg::Dress => Category::Dress,
        }
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub count: usize,
    /// Master seed; every scene seed derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let entries = synthdata::generate_dataset(a.count, a.seed, &a.out)?;
    let val = entries.iter().filter(|e| synthdata::is_validation(e.seed)).count();
    println!(
        "{}",
        json!({
            "dir": a.out,
            "scenes": entries.len(),
            "train": entries.len() - val,
            "val": val,
        })
    );
    Ok(())
}

// --------------------------------------------------------- train-localizer

#[derive(Debug, Args)]
pub struct TrainLocalizerArgs {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 35)]
    pub epochs: usize,
    /// Initial learning rate; halves every ten epochs.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f32,
    /// Seeds both the net init and the shuffle order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra in-training holdout fraction (the dataset split already
    /// reserves validation scenes).
    #[arg(long, default_value_t = 0.0)]
    pub val_frac: f32,
    /// Add one garment-free negative sample every N scenes (0 disables).
    #[arg(long, default_value_t = 8)]
    pub negative_every: usize,
}

pub fn train_localizer(a: &TrainLocalizerArgs) -> Result<()> {
    let scenes = load_split(&a.data, false, None)?;
    let mut samples = Vec::new();
    for (i, (entry, scene)) in scenes.iter().enumerate() {
        samples.extend(localizer::scene_training_pairs(scene)?);
        if a.negative_every > 0 && i % a.negative_every == 0 {
            samples.push(localizer::garment_free_sample(&SceneSpec::from_seed(entry.seed)));
        }
    }
    let mut net = LocalizerNet::new(a.seed);
    let hp = LocTrainHyper { epochs: a.epochs, lr: a.lr, seed: a.seed, val_frac: a.val_frac };
    let report = localizer::train_localizer(&mut net, &samples, &hp)?;
    ensure_parent(&a.out)?;
    checkpoint::save_localizer(&a.out, &net)?;
    println!(
        "{}",
        json!({
            "out": a.out,
            "scenes": scenes.len(),
            "samples": samples.len(),
            "epochs": a.epochs,
            "final_l1": report.epoch_loss.last(),
            "val_l1_initial": report.val_l1_initial,
            "val_l1_final": report.val_l1_final,
        })
    );
    Ok(())
}

// ---------------------------------------------------------- train-denoiser

#[derive(Debug, Args)]
pub struct TrainDenoiserArgs {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: usize,
    /// Samples per step.
    #[arg(long)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    /// Seeds net init, sample draws, and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of dropping a sample's condition label.
    #[arg(long, default_value_t = 0.1)]
    pub cond_drop: f32,
    /// DDIM step count baked into the checkpoint schedule.
    #[arg(long, default_value_t = 50)]
    pub ddim_steps: usize,
    /// Width of the first encoder level; deeper levels double twice.
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
}

pub fn train_denoiser(a: &TrainDenoiserArgs) -> Result<()> {
    let scenes = load_split(&a.data, false, None)?;
    let mut data: Vec<(Tensor, String)> = Vec::with_capacity(2 * scenes.len());
    for (_, scene) in &scenes {
        data.push((scene.model_img.clone(), tiny_denoiser::MODEL_LABEL.to_string()));
        data.push((scene.garment_img.clone(), tiny_denoiser::GARMENT_LABEL.to_string()));
    }
    let shape = data[0].0.shape().to_vec();
    ensure!(shape.len() == 3 && shape[0] == 3, "scene images must be [3,h,w]");
    let bc = a.base_channels;
    let cfg = NetConfig {
        c1: bc,
        c2: 2 * bc,
        c3: 4 * bc,
        emb_dim: 2 * bc,
        cond_dim: bc,
        h: shape[1],
        w: shape[2],
    };
    let sched = NoiseSchedule::default_with_steps(a.ddim_steps)?;
    let mut net = DenoiserNet::new(cfg, sched.clone(), a.seed)?;
    let hp = TrainHyper {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
        cond_drop: a.cond_drop,
    };
    let losses = tiny_denoiser::train(&mut net, &data, &sched, &hp)?;
    ensure_parent(&a.out)?;
    checkpoint::save_denoiser(&a.out, &net)?;
    let tail = &losses[losses.len().saturating_sub(50)..];
    let tail_mean = tail.iter().map(|&v| v as f64).sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "{}",
        json!({
            "out": a.out,
            "images": data.len(),
            "steps": a.steps,
            "params": net.param_count(),
            "loss_first": losses.first(),
            "loss_tail_mean": tail_mean,
        })
    );
    Ok(())
}

// ----------------------------------------------------------------- segment

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Localizer checkpoint.
    #[arg(long)]
    pub localizer: PathBuf,
    /// Input RGB PNG.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum)]
    pub category: CategoryArg,
    /// Polish the mask boundary with an active contour.
    #[arg(long)]
    pub refine: bool,
    /// Output mask PNG (the requested category's region).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let net = checkpoint::load_localizer(&a.localizer)?;
    let img = synthdata::load_image_png(&a.image)?;
    let category: Category = a.category.into();
    let loc = net.predict_mask(&img, category, a.refine)?;
    let mask = loc.select(category);
    ensure_parent(&a.out)?;
    synthdata::save_mask_png(&a.out, mask)?;
    let degraded = matches!(loc, Localization::Split { degraded: true, .. });
    let fg = mask.fg_count() as f64 / (mask.height() * mask.width()) as f64;
    let mut line = json!({
        "out": a.out,
        "category": category.as_str(),
        "fg_fraction": fg,
        "degraded": degraded,
    });
    if fg < 0.05 {
        line["warning"] = json!("near-empty mask");
    }
    println!("{line}");
    Ok(())
}

// ------------------------------------------------------------------- tryon

#[derive(Debug, Args)]
pub struct TryonArgs {
    /// JSON run config; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Person RGB PNG.
    #[arg(long)]
    pub model_image: Option<PathBuf>,
    /// In-store garment RGB PNG.
    #[arg(long)]
    pub garment: Option<PathBuf>,
    /// Localizer checkpoint.
    #[arg(long)]
    pub localizer: Option<PathBuf>,
    /// Denoiser checkpoint.
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Garment infusion step, counted in remaining denoising steps
    /// (t1=40 of 50 fires after 10 steps). Default 40.
    #[arg(long)]
    pub t1: Option<usize>,
    /// Background restoration step, remaining-step convention; 0 disables.
    /// Default 15.
    #[arg(long)]
    pub t2: Option<usize>,
    /// DDIM step count; must match the denoiser checkpoint grid. Default 50.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Classifier-free guidance scale. Default 7.5.
    #[arg(long)]
    pub cfg: Option<f32>,
    /// Adaptive color-difference termination (true/false). Default true.
    #[arg(long, value_name = "BOOL")]
    pub adaptive: Option<bool>,
    /// Completed steps before termination probes begin; defaults to five
    /// steps before the end.
    #[arg(long)]
    pub activation: Option<usize>,
    /// In-plane garment rotation in degrees applied during alignment.
    #[arg(long)]
    pub yaw: Option<f64>,
    /// Bookkeeping seed echoed into the report.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Garment category to replace on the model. Default clothes.
    #[arg(long, value_enum)]
    pub category: Option<CategoryArg>,
    /// Output image PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional run report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn tryon(a: &TryonArgs) -> Result<()> {
    let mut rc = match &a.config {
        Some(p) => config::load_run_config(p)?,
        None => RunConfig::default(),
    };
    let p = &mut rc.pipeline;
    if let Some(v) = a.t1 {
        p.t1 = v;
    }
    if let Some(v) = a.t2 {
        p.t2 = v;
    }
    if let Some(v) = a.steps {
        p.s = v;
    }
    if let Some(v) = a.cfg {
        p.cfg_scale = v;
    }
    if let Some(v) = a.adaptive {
        p.adaptive = v;
    }
    if let Some(v) = a.activation {
        p.activation_completed_steps = v;
    } else if p.activation_completed_steps > p.s {
        p.activation_completed_steps = p.s.saturating_sub(5);
    }
    if let Some(v) = a.yaw {
        p.yaw_deg = v;
    }
    if let Some(v) = a.seed {
        p.seeds = vec![v];
    }
    if let Some(c) = a.category {
        p.category = c.into();
    }

    let model_path = a.model_image.clone().or(rc.model_image).context("missing --model-image")?;
    let garment_path = a.garment.clone().or(rc.garment_image).context("missing --garment")?;
    let loc_path = a.localizer.clone().or(rc.localizer).context("missing --localizer")?;
    let den_path = a.denoiser.clone().or(rc.denoiser).context("missing --denoiser")?;
    let out_path = a.out.clone().or(rc.out).context("missing --out")?;
    let report_path = a.report.clone().or(rc.report);

    let loc = checkpoint::load_localizer(&loc_path)?;
    let den = checkpoint::load_denoiser(&den_path)?;
    let model_img = synthdata::load_image_png(&model_path)?;
    let garment_img = synthdata::load_image_png(&garment_path)?;

    let (result, report) =
        pipeline::tryon(&model_img, &garment_img, &loc, &den, &Codec::Identity, &rc.pipeline)?;
    ensure_parent(&out_path)?;
    synthdata::save_image_png(&out_path, &result)?;
    if let Some(rp) = &report_path {
        write_json(rp, &serde_json::to_value(&report)?)?;
    }
    println!(
        "{}",
        json!({
            "out": out_path,
            "report": report_path,
            "termination_step": report.termination_step,
            "probes": report.de_history.len(),
            "de_final": report.de_history.last().map(|p| p.1),
            "total_ms": report.timings_ms.get("total"),
        })
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Reconstruct each model with its own garment; score SSIM.
    Paired,
    /// Swap garments across scenes; score color-transfer improvement.
    Unpaired,
    /// Score predicted masks against ground truth (IoU/Dice).
    Localizer,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Dataset directory; the suite runs on its validation split.
    #[arg(long)]
    pub data: PathBuf,
    /// Localizer checkpoint.
    #[arg(long)]
    pub localizer: PathBuf,
    /// Denoiser checkpoint (paired/unpaired suites).
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate at most this many scenes.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub t1: usize,
    #[arg(long, default_value_t = 15)]
    pub t2: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 7.5)]
    pub cfg: f32,
}

/// Pipeline settings shared by the try-on suites. Paired runs disable the
/// adaptive controller (and with it per-step probing) so every value is a
/// full-trajectory reconstruction; unpaired runs keep it on.
fn suite_config(a: &EvalArgs, adaptive: bool) -> PipelineConfig {
    PipelineConfig {
        t1: a.t1,
        t2: a.t2,
        s: a.steps,
        cfg_scale: a.cfg,
        adaptive,
        activation_completed_steps: if adaptive { a.steps.saturating_sub(5) } else { a.steps },
        ..PipelineConfig::default()
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    match a.suite {
        Suite::Localizer => eval_localizer_suite(a),
        Suite::Paired => eval_paired_suite(a),
        Suite::Unpaired => eval_unpaired_suite(a),
    }
}

fn eval_localizer_suite(a: &EvalArgs) -> Result<()> {
    let net = checkpoint::load_localizer(&a.localizer)?;
    let pairs = load_split(&a.data, true, a.limit)?;
    let scenes: Vec<Scene> = pairs.into_iter().map(|(_, s)| s).collect();
    let threads = eval_threads(scenes.len());
    let preds = par_map(&scenes, threads, |s| {
        Ok(net.predict_mask(&s.model_img, s.category, true)?.select(s.category).clone())
    })?;
    let cursor = Cell::new(0usize);
    let report = evalmetrics::eval_localizer(
        |_| {
            let i = cursor.get();
            cursor.set(i + 1);
            Ok(preds[i].clone())
        },
        &scenes,
    )?;
    write_json(&a.out, &serde_json::to_value(&report)?)?;
    println!(
        "{}",
        json!({
            "suite": "localizer",
            "cases": scenes.len(),
            "threads": threads,
            "mean_iou": report.overall.iou,
            "mean_dice": report.overall.dice,
            "out": a.out,
        })
    );
    Ok(())
}

struct PairedOutcome {
    seed: u64,
    ssim: f64,
    region_de: f64,
    termination_step: usize,
}

/// Reconstruct every scene with its own garment and score similarity to
/// the original plus garment-region color fidelity.
fn run_paired(
    scenes: &[(ManifestEntry, Scene)],
    loc: &LocalizerNet,
    den: &DenoiserNet,
    base: &PipelineConfig,
    threads: usize,
) -> Result<Vec<PairedOutcome>> {
    par_map(scenes, threads, |(entry, scene)| {
        let mut cfg = base.clone();
        cfg.category = scene.category;
        cfg.seeds = vec![entry.seed];
        let (out, report) = pipeline::tryon(
            &scene.model_img,
            &scene.garment_img,
            loc,
            den,
            &Codec::Identity,
            &cfg,
        )?;
        let s = ssim(&out, &scene.model_img)?;
        let de = region_mean_de(&out, &report.aligned_garment, &report.masks.garment)?;
        Ok(PairedOutcome {
            seed: entry.seed,
            ssim: s,
            region_de: de,
            termination_step: report.termination_step,
        })
    })
}

fn eval_paired_suite(a: &EvalArgs) -> Result<()> {
    let den_path = a.denoiser.as_ref().context("paired suite needs --denoiser")?;
    let loc = checkpoint::load_localizer(&a.localizer)?;
    let den = checkpoint::load_denoiser_with_steps(den_path, Some(a.steps))?;
    let scenes = load_split(&a.data, true, a.limit)?;
    let threads = eval_threads(scenes.len());
    let rows = run_paired(&scenes, &loc, &den, &suite_config(a, false), threads)?;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
    let mean_de = rows.iter().map(|r| r.region_de).sum::<f64>() / rows.len() as f64;
    let per_scene: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "ssim": r.ssim,
                "region_de": r.region_de,
                "termination_step": r.termination_step,
            })
        })
        .collect();
    let doc = json!({
        "suite": "paired",
        "cases": rows.len(),
        "t1": a.t1, "t2": a.t2, "steps": a.steps, "cfg": a.cfg,
        "mean_ssim": mean_ssim,
        "mean_region_de": mean_de,
        "per_scene": per_scene,
    });
    write_json(&a.out, &doc)?;
    println!(
        "{}",
        json!({
            "suite": "paired",
            "cases": rows.len(),
            "threads": threads,
            "mean_ssim": mean_ssim,
            "out": a.out,
        })
    );
    Ok(())
}

fn eval_unpaired_suite(a: &EvalArgs) -> Result<()> {
    let den_path = a.denoiser.as_ref().context("unpaired suite needs --denoiser")?;
    let loc = checkpoint::load_localizer(&a.localizer)?;
    let den = checkpoint::load_denoiser_with_steps(den_path, Some(a.steps))?;
    let scenes = load_split(&a.data, true, a.limit)?;

    // Donor rotation inside each category keeps swaps type-consistent.
    let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, scene)) in scenes.iter().enumerate() {
        by_cat.entry(scene.category.as_str()).or_default().push(i);
    }
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for idxs in by_cat.values() {
        if idxs.len() >= 2 {
            for k in 0..idxs.len() {
                jobs.push((idxs[k], idxs[(k + 1) % idxs.len()]));
            }
        }
    }
    ensure!(!jobs.is_empty(), "need two validation scenes sharing a category");

    let base = suite_config(a, true);
    let threads = eval_threads(jobs.len());
    let rows = par_map(&jobs, threads, |&(mi, di)| {
        let (entry, model_scene) = &scenes[mi];
        let (donor_entry, donor_scene) = &scenes[di];
        let mut cfg = base.clone();
        cfg.category = model_scene.category;
        cfg.seeds = vec![entry.seed, donor_entry.seed];
        let (out, report) = pipeline::tryon(
            &model_scene.model_img,
            &donor_scene.garment_img,
            &loc,
            &den,
            &Codec::Identity,
            &cfg,
        )?;
        let de_out = region_mean_de(&out, &report.aligned_garment, &report.masks.garment)?;
        let de_in =
            region_mean_de(&model_scene.model_img, &report.aligned_garment, &report.masks.garment)?;
        Ok(json!({
            "model_seed": entry.seed,
            "donor_seed": donor_entry.seed,
            "category": model_scene.category.as_str(),
            "de_output": de_out,
            "de_input": de_in,
            "improved": de_out < de_in,
            "termination_step": report.termination_step,
        }))
    })?;
    let improved = rows.iter().filter(|r| r["improved"] == json!(true)).count();
    let mean = |key: &str| {
        rows.iter().map(|r| r[key].as_f64().unwrap_or(0.0)).sum::<f64>() / rows.len() as f64
    };
    let doc = json!({
        "suite": "unpaired",
        "cases": rows.len(),
        "improved": improved,
        "improved_fraction": improved as f64 / rows.len() as f64,
        "mean_de_output": mean("de_output"),
        "mean_de_input": mean("de_input"),
        "per_scene": rows,
    });
    write_json(&a.out, &doc)?;
    println!(
        "{}",
        json!({
            "suite": "unpaired",
            "cases": doc["cases"],
            "threads": threads,
            "improved_fraction": doc["improved_fraction"],
            "out": a.out,
        })
    );
    Ok(())
}

// ------------------------------------------------------------------ ablate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    T1,
    T2,
    Steps,
}

impl Axis {
    fn as_str(self) -> &'static str {
        match self {
            Axis::T1 => "t1",
            Axis::T2 => "t2",
            Axis::Steps => "steps",
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Dataset directory; runs on its validation split.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub localizer: PathBuf,
    #[arg(long)]
    pub denoiser: PathBuf,
    /// Grid JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate at most this many scenes per value.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub t1: usize,
    #[arg(long, default_value_t = 15)]
    pub t2: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 7.5)]
    pub cfg: f32,
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let loc = checkpoint::load_localizer(&a.localizer)?;
    let scenes = load_split(&a.data, true, a.limit)?;
    let threads = eval_threads(scenes.len());
    let mut rows = Vec::new();
    for &v in &a.values {
        let mut cfg = PipelineConfig {
            t1: a.t1,
            t2: a.t2,
            s: a.steps,
            cfg_scale: a.cfg,
            adaptive: false,
            ..PipelineConfig::default()
        };
        match a.axis {
            Axis::T1 => cfg.t1 = v,
            Axis::T2 => cfg.t2 = v,
            Axis::Steps => {
                // t1/t2 keep their relative position on the shorter grid.
                ensure!(v >= 2, "step axis values must be >= 2");
                let scale = |x: usize| (x * v + a.steps / 2) / a.steps;
                cfg.s = v;
                cfg.t1 = scale(a.t1).clamp(1, v);
                cfg.t2 = scale(a.t2).min(cfg.t1 - 1);
            }
        }
        cfg.activation_completed_steps = cfg.s;
        cfg.validate()?;
        let den = checkpoint::load_denoiser_with_steps(&a.denoiser, Some(cfg.s))?;
        let outcomes = run_paired(&scenes, &loc, &den, &cfg, threads)?;
        let n = outcomes.len() as f64;
        rows.push(json!({
            "value": v,
            "t1": cfg.t1, "t2": cfg.t2, "steps": cfg.s,
            "cases": outcomes.len(),
            "mean_ssim": outcomes.iter().map(|r| r.ssim).sum::<f64>() / n,
            "mean_region_de": outcomes.iter().map(|r| r.region_de).sum::<f64>() / n,
        }));
    }
    let doc = json!({"axis": a.axis.as_str(), "rows": rows});
    write_json(&a.out, &doc)?;
    println!(
        "{}",
        json!({
            "axis": a.axis.as_str(),
            "values": a.values,
            "cases_per_value": scenes.len(),
            "threads": threads,
            "out": a.out,
        })
    );
    Ok(())
}
