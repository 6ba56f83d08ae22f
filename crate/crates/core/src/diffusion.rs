//! DDIM noise schedule, deterministic denoise/invert steps, trajectory
//! runners with latent-editing hooks, classifier-free guidance and an
//! analytic Gaussian oracle denoiser.
//!
//! Indexing convention: a "ddim index" counts remaining denoising steps.
//! Index 0 is the clean state (alpha_bar treated as exactly 1), index `s`
//! is the noisiest. Index `i >= 1` maps to training timestep
//! `ddim_steps[i-1]`; the selected timesteps are uniformly spaced and end
//! at `t_train - 1`.

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Linear-beta schedule plus the DDIM timestep subsequence.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
    s: usize,
    alpha_bar: Vec<f64>,
    ddim_steps: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(t_train: usize, beta_start: f64, beta_end: f64, s: usize) -> Result<NoiseSchedule> {
        if t_train < 2 {
            return Err(Error::InvalidArg("t_train must be >= 2".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArg(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        if s == 0 || s > t_train {
            return Err(Error::InvalidArg(format!("s must be in [1, t_train], got {s}")));
        }
        let mut alpha_bar = Vec::with_capacity(t_train);
        let mut prod = 1.0f64;
        for t in 0..t_train {
            let beta = beta_start + (beta_end - beta_start) * t as f64 / (t_train - 1) as f64;
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        let ddim_steps: Vec<usize> = (0..s).map(|j| ((j + 1) * t_train) / s - 1).collect();
        Ok(NoiseSchedule { t_train, beta_start, beta_end, s, alpha_bar, ddim_steps })
    }

    /// 1000 training steps, betas 1e-4..0.02, `s` sampling steps.
    pub fn default_with_steps(s: usize) -> Result<NoiseSchedule> {
        NoiseSchedule::new(1000, 1e-4, 0.02, s)
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    /// Number of sampling steps `s`; valid ddim indices are `0..=s`.
    pub fn num_steps(&self) -> usize {
        self.s
    }

    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    /// Training timestep carried by a ddim index (0 for the clean state).
    pub fn timestep_at(&self, ddim_index: usize) -> Result<usize> {
        self.check_index(ddim_index)?;
        Ok(if ddim_index == 0 { 0 } else { self.ddim_steps[ddim_index - 1] })
    }

    /// Cumulative alpha at a ddim index; exactly 1 at index 0.
    pub fn alpha_bar_at(&self, ddim_index: usize) -> Result<f64> {
        self.check_index(ddim_index)?;
        Ok(if ddim_index == 0 { 1.0 } else { self.alpha_bar[self.ddim_steps[ddim_index - 1]] })
    }

    fn check_index(&self, ddim_index: usize) -> Result<()> {
        if ddim_index > self.s {
            return Err(Error::IndexRange { index: ddim_index, limit: self.s + 1 });
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` as f32 application scalars.
    fn ab(&self, ddim_index: usize) -> Result<(f32, f32)> {
        let abar = self.alpha_bar_at(ddim_index)?;
        Ok((abar.sqrt() as f32, (1.0 - abar).sqrt() as f32))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::default_with_steps(50).unwrap()
    }
}

/// Condition passed to a denoiser: a text label resolved to a fixed-width
/// embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub label: String,
    pub vector: Vec<f32>,
}

/// Noise predictor interface shared by the trained net and the oracles.
pub trait Denoiser {
    /// Predict the noise content of `z` at the given ddim index. `None`
    /// condition means unconditional.
    fn predict_eps(
        &self,
        z: &Tensor,
        ddim_index: usize,
        cond: Option<&ConditionEmbedding>,
    ) -> Result<Tensor>;
}

/// Denoisers that also resolve text labels into the condition embeddings
/// they were trained with, and can report the schedule they expect.
/// Condition-blind oracles return an empty vector (guidance then collapses
/// to the unconditional prediction).
pub trait ConditionedDenoiser: Denoiser {
    fn embed_label(&self, label: &str) -> Result<ConditionEmbedding>;

    /// Schedule this denoiser was built for, when it has one; used by
    /// orchestration code to reject mismatched step counts.
    fn schedule(&self) -> Option<&NoiseSchedule> {
        None
    }
}

/// z_t = sqrt(abar)*z0 + sqrt(1-abar)*eps at the given ddim index.
pub fn forward_diffuse(
    z0: &Tensor,
    ddim_index: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::shape("forward_diffuse", format!("{:?} vs {:?}", z0.shape(), eps.shape())));
    }
    let (a, b) = sched.ab(ddim_index)?;
    let mut out = z0.clone();
    out.scale(a);
    out.axpy(b, eps);
    Ok(out)
}

/// Clean-state estimate implied by a noise prediction:
/// (z_t - sqrt(1-abar)*eps_hat) / sqrt(abar).
pub fn predict_z0(
    z_t: &Tensor,
    ddim_index: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if z_t.shape() != eps_hat.shape() {
        return Err(Error::shape("predict_z0", format!("{:?} vs {:?}", z_t.shape(), eps_hat.shape())));
    }
    let (a, b) = sched.ab(ddim_index)?;
    if a == 0.0 {
        return Err(Error::InvalidArg("predict_z0: alpha_bar underflowed to 0".into()));
    }
    let mut out = z_t.clone();
    out.axpy(-b, eps_hat);
    out.scale(1.0 / a);
    Ok(out)
}

/// One deterministic DDIM step from index `i` to `i-1`, computed through the
/// implied clean estimate: z_{i-1} = a_{i-1}*z0_hat + b_{i-1}*eps_hat. At
/// i = 1 this degenerates to z0_hat exactly (a_0 = 1, b_0 = 0).
pub fn ddim_denoise_step(
    z_t: &Tensor,
    ddim_index: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if ddim_index == 0 {
        return Err(Error::InvalidArg("ddim_denoise_step: index 0 is already clean".into()));
    }
    let z0_hat = predict_z0(z_t, ddim_index, eps_hat, sched)?;
    let (ap, bp) = sched.ab(ddim_index - 1)?;
    let mut out = z0_hat;
    out.scale(ap);
    out.axpy(bp, eps_hat);
    Ok(out)
}

/// Exact algebraic inverse of [`ddim_denoise_step`]: maps the state at index
/// `i-1` up to index `i` under the same eps_hat.
pub fn ddim_invert_step(
    z_prev: &Tensor,
    ddim_index: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if ddim_index == 0 {
        return Err(Error::InvalidArg("ddim_invert_step: index must be >= 1".into()));
    }
    let z0_hat = predict_z0(z_prev, ddim_index - 1, eps_hat, sched)?;
    let (a, b) = sched.ab(ddim_index)?;
    let mut out = z0_hat;
    out.scale(a);
    out.axpy(b, eps_hat);
    Ok(out)
}

/// Classifier-free guidance: eps_uncond + scale * (eps_cond - eps_uncond).
pub fn cfg_epsilon(eps_cond: &Tensor, eps_uncond: &Tensor, scale: f32) -> Result<Tensor> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::shape(
            "cfg_epsilon",
            format!("{:?} vs {:?}", eps_cond.shape(), eps_uncond.shape()),
        ));
    }
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    let data = eps_uncond
        .data()
        .iter()
        .zip(eps_cond.data())
        .map(|(&u, &c)| u + scale * (c - u))
        .collect();
    Tensor::from_vec(eps_cond.shape(), data)
}

/// Inversion record: `latents[i]` is the state at ddim index `i`,
/// from the clean input at 0 up to the noisiest state at `s`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    latents: Vec<Tensor>,
}

impl Trajectory {
    pub fn at(&self, ddim_index: usize) -> Result<&Tensor> {
        self.latents
            .get(ddim_index)
            .ok_or(Error::IndexRange { index: ddim_index, limit: self.latents.len() })
    }

    pub fn top(&self) -> &Tensor {
        self.latents.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Run DDIM inversion from a clean latent to the noisiest index.
///
/// The noise prediction for the step from `i-1` up to `i` is evaluated at
/// the previous state; its index argument is clamped to 1 for the first
/// step so denoisers are never queried at the degenerate clean index.
pub fn invert_trajectory(
    z0: &Tensor,
    denoiser: &dyn Denoiser,
    cond: Option<&ConditionEmbedding>,
    sched: &NoiseSchedule,
) -> Result<Trajectory> {
    let s = sched.num_steps();
    let mut latents = Vec::with_capacity(s + 1);
    latents.push(z0.clone());
    for i in 1..=s {
        let eval_index = (i - 1).max(1);
        let eps = denoiser.predict_eps(&latents[i - 1], eval_index, cond)?;
        latents.push(ddim_invert_step(&latents[i - 1], i, &eps, sched)?);
    }
    Ok(Trajectory { latents })
}

/// Guidance configuration for sampling. `scale = 1` or a missing condition
/// collapses to a single unconditional evaluation per step.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub cond: Option<ConditionEmbedding>,
    pub scale: f32,
}

impl Guidance {
    pub fn uncond() -> Guidance {
        Guidance { cond: None, scale: 1.0 }
    }
}

/// Latent edit applied when sampling reaches a given ddim index, before the
/// next denoise step (index 0 edits run after the final step).
pub struct Hook<'a> {
    pub index: usize,
    pub edit: Box<dyn Fn(&Tensor) -> Result<Tensor> + 'a>,
}

/// Per-step observation offered to a sampling probe: the step just finished
/// left the chain at `index_after`, with `z0_hat` the clean estimate implied
/// by that step's noise prediction.
pub struct ProbeStep<'a> {
    pub completed: usize,
    pub index_after: usize,
    pub z0_hat: &'a Tensor,
    pub latent: &'a Tensor,
}

/// Probe verdict after each completed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

fn guided_eps(
    denoiser: &dyn Denoiser,
    z: &Tensor,
    index: usize,
    guidance: &Guidance,
) -> Result<Tensor> {
    match (&guidance.cond, guidance.scale) {
        (None, _) => denoiser.predict_eps(z, index, None),
        (Some(c), s) if s == 1.0 => denoiser.predict_eps(z, index, Some(c)),
        (Some(c), s) => {
            let eps_c = denoiser.predict_eps(z, index, Some(c))?;
            let eps_u = denoiser.predict_eps(z, index, None)?;
            cfg_epsilon(&eps_c, &eps_u, s)
        }
    }
}

/// Deterministic DDIM sampling from the state at index `s` down to 0, with
/// hooks and an early-stop probe. Returns the visited `(ddim_index, latent)`
/// record, newest last; hook edits are recorded in place of the raw states.
pub fn sample_with_probe<'a>(
    z_top: &Tensor,
    denoiser: &dyn Denoiser,
    guidance: &Guidance,
    sched: &NoiseSchedule,
    hooks: &[Hook<'a>],
    mut probe: impl FnMut(&ProbeStep) -> Result<StepControl>,
) -> Result<Vec<(usize, Tensor)>> {
    let s = sched.num_steps();
    let mut seen = std::collections::HashSet::new();
    for h in hooks {
        if h.index > s {
            return Err(Error::IndexRange { index: h.index, limit: s + 1 });
        }
        if !seen.insert(h.index) {
            return Err(Error::InvalidArg(format!("duplicate hook at ddim index {}", h.index)));
        }
    }
    let hook_at = |idx: usize, z: &Tensor| -> Result<Option<Tensor>> {
        for h in hooks {
            if h.index == idx {
                return (h.edit)(z).map(Some);
            }
        }
        Ok(None)
    };

    let mut record: Vec<(usize, Tensor)> = Vec::with_capacity(s + 1);
    let mut z = z_top.clone();
    for i in (1..=s).rev() {
        if let Some(edited) = hook_at(i, &z)? {
            z = edited;
        }
        record.push((i, z.clone()));
        let eps = guided_eps(denoiser, &z, i, guidance)?;
        let z0_hat = predict_z0(&z, i, &eps, sched)?;
        let (ap, bp) = sched.ab(i - 1)?;
        let mut next = z0_hat.clone();
        next.scale(ap);
        next.axpy(bp, &eps);
        let completed = s - (i - 1);
        let control = probe(&ProbeStep {
            completed,
            index_after: i - 1,
            z0_hat: &z0_hat,
            latent: &next,
        })?;
        z = next;
        if control == StepControl::Stop {
            record.push((i - 1, z));
            return Ok(record);
        }
    }
    if let Some(edited) = hook_at(0, &z)? {
        z = edited;
    }
    record.push((0, z));
    Ok(record)
}

/// Full deterministic sampling pass (no probe).
pub fn sample_trajectory<'a>(
    z_top: &Tensor,
    denoiser: &dyn Denoiser,
    guidance: &Guidance,
    sched: &NoiseSchedule,
    hooks: &[Hook<'a>],
) -> Result<Vec<(usize, Tensor)>> {
    sample_with_probe(z_top, denoiser, guidance, sched, hooks, |_| Ok(StepControl::Continue))
}

/// Bayes-optimal noise predictor for the prior z0 ~ N(mu, sigma0^2 I).
///
/// At index i with a = sqrt(abar), b = sqrt(1-abar):
/// m = mu + (a*sigma0^2 / (a^2*sigma0^2 + b^2)) * (z - a*mu), eps = (z - a*m)/b.
pub struct AnalyticGaussianDenoiser {
    mu: Tensor,
    sigma0: f32,
    sched: NoiseSchedule,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Tensor, sigma0: f32, sched: NoiseSchedule) -> Result<AnalyticGaussianDenoiser> {
        if sigma0 < 0.0 {
            return Err(Error::InvalidArg("sigma0 must be >= 0".into()));
        }
        Ok(AnalyticGaussianDenoiser { mu, sigma0, sched })
    }

    /// Posterior mean E[z0 | z_t] under the Gaussian prior.
    pub fn posterior_mean(&self, z: &Tensor, ddim_index: usize) -> Result<Tensor> {
        let (a, b) = self.sched.ab(ddim_index)?;
        let s2 = self.sigma0 * self.sigma0;
        let gain = a * s2 / (a * a * s2 + b * b);
        let mut m = self.mu.clone();
        let mut resid = z.clone();
        resid.axpy(-a, &self.mu);
        m.axpy(gain, &resid);
        Ok(m)
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_eps(
        &self,
        z: &Tensor,
        ddim_index: usize,
        _cond: Option<&ConditionEmbedding>,
    ) -> Result<Tensor> {
        if z.shape() != self.mu.shape() {
            return Err(Error::shape(
                "analytic denoiser",
                format!("{:?} vs prior {:?}", z.shape(), self.mu.shape()),
            ));
        }
        let (a, b) = self.sched.ab(ddim_index)?;
        if b == 0.0 {
            return Err(Error::InvalidArg(
                "analytic denoiser undefined at the clean index (b = 0)".into(),
            ));
        }
        let m = self.posterior_mean(z, ddim_index)?;
        let mut eps = z.clone();
        eps.axpy(-a, &m);
        eps.scale(1.0 / b);
        Ok(eps)
    }
}

impl ConditionedDenoiser for AnalyticGaussianDenoiser {
    fn embed_label(&self, label: &str) -> Result<ConditionEmbedding> {
        Ok(ConditionEmbedding { label: label.to_string(), vector: Vec::new() })
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        Some(&self.sched)
    }
}

/// Fixed-output denoiser for plumbing tests.
pub struct ConstantDenoiser(pub Tensor);

impl Denoiser for ConstantDenoiser {
    fn predict_eps(&self, _z: &Tensor, _i: usize, _c: Option<&ConditionEmbedding>) -> Result<Tensor> {
        Ok(self.0.clone())
    }
}

impl ConditionedDenoiser for ConstantDenoiser {
    fn embed_label(&self, label: &str) -> Result<ConditionEmbedding> {
        Ok(ConditionEmbedding { label: label.to_string(), vector: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Tensor, b: &Tensor, tol: f32, what: &str) {
        let d = a.max_abs_diff(b);
        assert!(d <= tol, "{what}: max abs diff {d} > {tol}");
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert_eq!(s.t_train(), 1000);
        assert_eq!(s.beta_range(), (1e-4, 0.02));
        let ab0 = s.alpha_bar_at(1).unwrap();
        // alpha_bar at the first selected timestep is below 1 but near it;
        // the raw first training step keeps 1 - 1e-4.
        assert!((s.alpha_bar[0] - (1.0 - 1e-4)).abs() < 1e-12);
        assert!(ab0 < 1.0 && ab0 > 0.99);
        for w in s.alpha_bar.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(*s.alpha_bar.last().unwrap() > 0.0);
    }

    #[test]
    fn ddim_steps_uniform_and_complete() {
        let s = NoiseSchedule::default();
        assert_eq!(s.ddim_steps().len(), 50);
        assert_eq!(*s.ddim_steps().last().unwrap(), 999);
        for w in s.ddim_steps().windows(2) {
            assert_eq!(w[1] - w[0], 20);
        }
        let all = NoiseSchedule::new(1000, 1e-4, 0.02, 1000).unwrap();
        assert_eq!(all.ddim_steps(), (0..1000).collect::<Vec<_>>().as_slice());
        assert!(NoiseSchedule::new(1000, 1e-4, 0.02, 1001).is_err());
        assert!(NoiseSchedule::new(1000, 0.0, 0.02, 50).is_err());
    }

    #[test]
    fn forward_diffuse_clean_index_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = randn(&mut rng, &[3, 4, 4]);
        let eps = randn(&mut rng, &[3, 4, 4]);
        let s = NoiseSchedule::default();
        let z = forward_diffuse(&z0, 0, &eps, &s).unwrap();
        close(&z, &z0, 0.0, "index 0 forward");
    }

    #[test]
    fn forward_diffuse_zero_noise_is_pure_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z0 = randn(&mut rng, &[2, 3, 3]);
        let s = NoiseSchedule::default();
        let z = forward_diffuse(&z0, 30, &Tensor::zeros(&[2, 3, 3]), &s).unwrap();
        let a = s.alpha_bar_at(30).unwrap().sqrt() as f32;
        let mut want = z0.clone();
        want.scale(a);
        close(&z, &want, 0.0, "zero-noise forward");
    }

    #[test]
    fn forward_diffuse_monte_carlo_moments() {
        let s = NoiseSchedule::default();
        let idx = 35;
        let a = s.alpha_bar_at(idx).unwrap().sqrt();
        let b = (1.0 - s.alpha_bar_at(idx).unwrap()).sqrt();
        let z0 = Tensor::from_vec(&[2], vec![0.8, -0.4]).unwrap();
        let n = 20_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sums = [0.0f64; 2];
        let mut sqs = [0.0f64; 2];
        for _ in 0..n {
            let eps = randn(&mut rng, &[2]);
            let z = forward_diffuse(&z0, idx, &eps, &s).unwrap();
            for k in 0..2 {
                sums[k] += z.data()[k] as f64;
                sqs[k] += (z.data()[k] as f64).powi(2);
            }
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sqs[k] / n as f64 - mean * mean;
            let want_mean = a * z0.data()[k] as f64;
            let se_mean = b / (n as f64).sqrt();
            assert!((mean - want_mean).abs() < 3.0 * se_mean, "mean ch{k}");
            let want_var = b * b;
            let se_var = want_var * (2.0 / n as f64).sqrt();
            assert!((var - want_var).abs() < 3.0 * se_var, "var ch{k}");
        }
    }

    #[test]
    fn predict_z0_recovers_under_true_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = NoiseSchedule::default();
        let z0 = randn(&mut rng, &[3, 8, 8]);
        for idx in [1usize, 12, 27, 50] {
            let eps = randn(&mut rng, &[3, 8, 8]);
            let zt = forward_diffuse(&z0, idx, &eps, &s).unwrap();
            let rec = predict_z0(&zt, idx, &eps, &s).unwrap();
            // Rounding in z_t is amplified by 1/sqrt(abar) on the way back.
            let tol = 2e-6 / s.alpha_bar_at(idx).unwrap().sqrt() as f32;
            close(&rec, &z0, tol.max(1e-6), &format!("predict_z0 idx {idx}"));
        }
    }

    #[test]
    fn single_step_to_clean_with_true_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = NoiseSchedule::default();
        let z0 = randn(&mut rng, &[1, 6, 6]);
        let eps = randn(&mut rng, &[1, 6, 6]);
        let z1 = forward_diffuse(&z0, 1, &eps, &s).unwrap();
        let rec = ddim_denoise_step(&z1, 1, &eps, &s).unwrap();
        close(&rec, &z0, 1e-5, "single step to index 0");
    }

    #[test]
    fn denoise_with_zero_eps_is_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = NoiseSchedule::default();
        let z = randn(&mut rng, &[2, 4, 4]);
        let zero = Tensor::zeros(&[2, 4, 4]);
        let idx = 20;
        let out = ddim_denoise_step(&z, idx, &zero, &s).unwrap();
        let ratio = (s.alpha_bar_at(idx - 1).unwrap() / s.alpha_bar_at(idx).unwrap()).sqrt() as f32;
        let mut want = z.clone();
        want.scale(ratio);
        close(&out, &want, 1e-6, "zero-eps denoise");
        let back = ddim_invert_step(&out, idx, &zero, &s).unwrap();
        let ratio_up = (s.alpha_bar_at(idx).unwrap() / s.alpha_bar_at(idx - 1).unwrap()).sqrt() as f32;
        let mut want_up = out.clone();
        want_up.scale(ratio_up);
        close(&back, &want_up, 1e-6, "zero-eps invert");
    }

    #[test]
    fn denoise_closed_form_scalar_recomputation() {
        // Independent f64 evaluation of the two-term standard form:
        // z' = sqrt(abar_p/abar)*z + sqrt(abar_p)*(sqrt(1/abar_p - 1) - sqrt(1/abar - 1))*eps.
        let s = NoiseSchedule::default();
        let idx = 33;
        let abar = s.alpha_bar_at(idx).unwrap();
        let abar_p = s.alpha_bar_at(idx - 1).unwrap();
        let z = Tensor::from_vec(&[3], vec![0.7, -1.1, 0.25]).unwrap();
        let eps = Tensor::from_vec(&[3], vec![-0.3, 0.8, 1.5]).unwrap();
        let out = ddim_denoise_step(&z, idx, &eps, &s).unwrap();
        for k in 0..3 {
            let zv = z.data()[k] as f64;
            let ev = eps.data()[k] as f64;
            let want = (abar_p / abar).sqrt() * zv
                + abar_p.sqrt() * ((1.0 / abar_p - 1.0).sqrt() - (1.0 / abar - 1.0).sqrt()) * ev;
            assert!(
                (out.data()[k] as f64 - want).abs() < 1e-6,
                "component {k}: {} vs {want}",
                out.data()[k]
            );
        }
    }

    #[test]
    fn invert_then_denoise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = NoiseSchedule::default();
        for case in 0..100 {
            let idx = 1 + (case * 7) % 50;
            let z = randn(&mut rng, &[3, 8, 8]);
            let eps = randn(&mut rng, &[3, 8, 8]);
            let up = ddim_invert_step(&z, idx, &eps, &s).unwrap();
            let back = ddim_denoise_step(&up, idx, &eps, &s).unwrap();
            close(&back, &z, 1e-5, &format!("case {case} idx {idx}"));
        }
    }

    #[test]
    fn zero_eps_composition_telescopes() {
        let s = NoiseSchedule::default_with_steps(25).unwrap();
        let z0 = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let zero = Tensor::zeros(&[1]);
        // Denoise from the top with eps = 0: total scale sqrt(1/abar_top).
        let mut z = z0.clone();
        for i in (1..=25usize).rev() {
            z = ddim_denoise_step(&z, i, &zero, &s).unwrap();
        }
        let want = (1.0 / s.alpha_bar_at(25).unwrap()).sqrt() as f32;
        assert!((z.data()[0] - want).abs() < 1e-5 * want, "{} vs {want}", z.data()[0]);
    }

    #[test]
    fn cfg_endpoints() {
        let c = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let u = Tensor::from_vec(&[3], vec![0.5, 0.0, -1.0]).unwrap();
        assert_eq!(cfg_epsilon(&c, &u, 1.0).unwrap().data(), c.data());
        assert_eq!(cfg_epsilon(&c, &u, 0.0).unwrap().data(), u.data());
        let g = cfg_epsilon(&c, &u, 7.5).unwrap();
        for k in 0..3 {
            let want = u.data()[k] + 7.5 * (c.data()[k] - u.data()[k]);
            assert!((g.data()[k] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_denoiser_known_limits() {
        let s = NoiseSchedule::default();
        let mu = Tensor::from_vec(&[2], vec![0.3, -0.6]).unwrap();
        let z = Tensor::from_vec(&[2], vec![0.9, 0.1]).unwrap();
        let idx = 18;
        let (a, b) = s.ab(idx).unwrap();
        // sigma0 = 0: prior collapses to mu, eps = (z - a*mu)/b.
        let d0 = AnalyticGaussianDenoiser::new(mu.clone(), 0.0, s.clone()).unwrap();
        let e0 = d0.predict_eps(&z, idx, None).unwrap();
        for k in 0..2 {
            let want = (z.data()[k] - a * mu.data()[k]) / b;
            assert!((e0.data()[k] - want).abs() < 1e-6);
        }
        // mu = 0, sigma0 = 1: eps = b*z since a^2 + b^2 = 1.
        let d1 = AnalyticGaussianDenoiser::new(Tensor::zeros(&[2]), 1.0, s.clone()).unwrap();
        let e1 = d1.predict_eps(&z, idx, None).unwrap();
        for k in 0..2 {
            assert!((e1.data()[k] - b * z.data()[k]).abs() < 2e-5, "{} vs {}", e1.data()[k], b * z.data()[k]);
        }
        // Clean index is rejected.
        assert!(d1.predict_eps(&z, 0, None).is_err());
    }

    #[test]
    fn analytic_posterior_mean_matches_importance_sampling() {
        let s = NoiseSchedule::default();
        let idx = 30;
        let (a, b) = s.ab(idx).unwrap();
        let (mu, sigma0, zt) = (0.3f64, 0.7f64, 0.9f64);
        let den = AnalyticGaussianDenoiser::new(
            Tensor::from_vec(&[1], vec![mu as f32]).unwrap(),
            sigma0 as f32,
            s.clone(),
        )
        .unwrap();
        let m_closed = den
            .posterior_mean(&Tensor::from_vec(&[1], vec![zt as f32]).unwrap(), idx)
            .unwrap()
            .data()[0] as f64;
        // Importance sampling from the prior with Gaussian likelihood
        // weights; batched to estimate the standard error.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut batch_means = Vec::new();
        for _ in 0..10 {
            let mut num = 0.0f64;
            let mut den_w = 0.0f64;
            for _ in 0..20_000 {
                let z0 = mu + sigma0 * randn(&mut rng, &[1]).data()[0] as f64;
                let r = zt - a as f64 * z0;
                let w = (-r * r / (2.0 * (b as f64) * (b as f64))).exp();
                num += w * z0;
                den_w += w;
            }
            batch_means.push(num / den_w);
        }
        let mean = batch_means.iter().sum::<f64>() / 10.0;
        let var = batch_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / 9.0;
        let se = (var / 10.0).sqrt();
        assert!(
            (mean - m_closed).abs() < 3.0 * se.max(1e-4),
            "mc {mean} vs closed {m_closed} (se {se})"
        );
    }

    /// Image-like oracle scene: smooth prior mean in [0,1] and a bounded
    /// deviation from it. The roundtrip error is the deviation times a
    /// schedule-dependent amplification that shrinks as steps increase.
    fn oracle_scene(shape: &[usize], dev_cap: f32) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n: usize = shape.iter().product();
        let mu_data: Vec<f32> = (0..n)
            .map(|k| 0.5 + 0.4 * ((k as f32) * 0.37).sin())
            .collect();
        let mu = Tensor::from_vec(shape, mu_data).unwrap();
        let mut z0 = mu.clone();
        let noise = randn(&mut rng, shape);
        let capped = noise.map(|v| (0.5 * v).clamp(-dev_cap, dev_cap));
        z0.axpy(1.0, &capped);
        (mu, z0)
    }

    fn roundtrip_err(s: usize, mu: &Tensor, z0: &Tensor) -> f32 {
        let sched = NoiseSchedule::default_with_steps(s).unwrap();
        let den = AnalyticGaussianDenoiser::new(mu.clone(), 0.5, sched.clone()).unwrap();
        let traj = invert_trajectory(z0, &den, None, &sched).unwrap();
        assert_eq!(traj.len(), s + 1);
        let rec = sample_trajectory(traj.top(), &den, &Guidance::uncond(), &sched, &[]).unwrap();
        let (idx, z_rec) = rec.last().unwrap();
        assert_eq!(*idx, 0);
        z_rec.max_abs_diff(z0)
    }

    #[test]
    fn trajectory_roundtrip_with_analytic_denoiser() {
        let (mu, z0) = oracle_scene(&[2, 8, 8], 0.3);
        let err50 = roundtrip_err(50, &mu, &z0);
        assert!(err50 <= 5e-2, "roundtrip err {err50}");
        // Discretization error shrinks with more steps.
        let err25 = roundtrip_err(25, &mu, &z0);
        let err100 = roundtrip_err(100, &mu, &z0);
        assert!(err100 < err25, "err100 {err100} !< err25 {err25}");
    }

    #[test]
    fn hooks_fire_once_at_their_index() {
        let sched = NoiseSchedule::default_with_steps(10).unwrap();
        let den = ConstantDenoiser(Tensor::zeros(&[1]));
        let z = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let marker = Tensor::from_vec(&[1], vec![7.0]).unwrap();
        let hooks = vec![Hook {
            index: 4,
            edit: Box::new(move |_z: &Tensor| Ok(marker.clone())),
        }];
        let rec = sample_trajectory(&z, &den, &Guidance::uncond(), &sched, &hooks).unwrap();
        let at4 = rec.iter().find(|(i, _)| *i == 4).unwrap();
        assert_eq!(at4.1.data()[0], 7.0);
        // After the hook the chain continues from the edited latent.
        let at3 = rec.iter().find(|(i, _)| *i == 3).unwrap();
        let ratio = (sched.alpha_bar_at(3).unwrap() / sched.alpha_bar_at(4).unwrap()).sqrt() as f32;
        assert!((at3.1.data()[0] - 7.0 * ratio).abs() < 1e-5);
        // Duplicate hooks are rejected.
        let dup = vec![
            Hook { index: 2, edit: Box::new(|z: &Tensor| Ok(z.clone())) },
            Hook { index: 2, edit: Box::new(|z: &Tensor| Ok(z.clone())) },
        ];
        assert!(sample_trajectory(&z, &den, &Guidance::uncond(), &sched, &dup).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sched = NoiseSchedule::default_with_steps(20).unwrap();
        let mu = randn(&mut rng, &[1, 4, 4]);
        let den = AnalyticGaussianDenoiser::new(mu, 0.8, sched.clone()).unwrap();
        let top = randn(&mut rng, &[1, 4, 4]);
        let run = || {
            sample_trajectory(&top, &den, &Guidance::uncond(), &sched, &[])
                .unwrap()
                .last()
                .unwrap()
                .1
                .clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn probe_stops_early() {
        let sched = NoiseSchedule::default_with_steps(10).unwrap();
        let den = ConstantDenoiser(Tensor::zeros(&[1]));
        let z = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let rec = sample_with_probe(&z, &den, &Guidance::uncond(), &sched, &[], |p| {
            Ok(if p.completed == 3 { StepControl::Stop } else { StepControl::Continue })
        })
        .unwrap();
        // Visited 10, 9, 8 and stopped after landing on 7.
        assert_eq!(rec.last().unwrap().0, 7);
        assert_eq!(rec.len(), 4);
    }
}
