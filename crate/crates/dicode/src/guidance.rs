//! Critic-guided constrained sampling: projected universal guidance with
//! forward guidance, backward guidance, recurrence and projection-of-noise,
//! plus the baseline samplers used in ablations.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    clean_from_eps, ddim_step, ddim_stride, DesignSample, Denoiser, NoiseSchedule,
};
use crate::error::{DicodeError, Result};
use crate::nn::{time_embedding, Activation, Adam, Mlp};
use crate::projection::ProjectionOperator;
use crate::rng::{normal_vec, rng_from_seed, standard_normal, Prng};
use rand::Rng;

/// Linear schedule for the guidance weight over sampled environment batches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub omega_start: f64,
    pub omega_end: f64,
    pub n_batches: usize,
}

impl AnnealSchedule {
    pub fn omega_at(&self, batch: usize) -> f64 {
        if self.n_batches == 0 {
            return self.omega_end;
        }
        let frac = (batch as f64 / self.n_batches as f64).min(1.0);
        self.omega_start + frac * (self.omega_end - self.omega_start)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub omega: f64,
    pub recurrences_k: usize,
    pub backward_steps_m: usize,
    pub backward_lr: f64,
    pub n_ddim_steps: usize,
    pub anneal: Option<AnnealSchedule>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            omega: 5.0,
            recurrences_k: 4,
            backward_steps_m: 4,
            backward_lr: 0.01,
            n_ddim_steps: 50,
            anneal: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 0.0 {
            return Err(DicodeError::InvalidArgument(format!(
                "omega must be non-negative, got {}",
                self.omega
            )));
        }
        if self.recurrences_k < 1 {
            return Err(DicodeError::InvalidArgument(
                "recurrences_k must be at least 1".into(),
            ));
        }
        if self.backward_lr <= 0.0 || self.n_ddim_steps == 0 {
            return Err(DicodeError::InvalidArgument(
                "backward_lr must be positive and n_ddim_steps nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// A scalar value estimate of designs in the clean domain, differentiable
/// with respect to its input.
pub trait EnvCritic {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// MLP-backed environment critic; parameters live in `net.params`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpEnvCritic {
    pub net: Mlp,
}

impl MlpEnvCritic {
    pub fn new(dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        MlpEnvCritic {
            net: Mlp::new(&dims, Activation::Tanh, rng),
        }
    }
}

impl EnvCritic for MlpEnvCritic {
    fn value(&self, x: &[f64]) -> f64 {
        self.net.forward(x)[0]
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.net.input_gradient(x)
    }
}

/// Analytic critic v(x) = -||x - c||^2, used for guidance diagnostics.
#[derive(Debug, Clone)]
pub struct QuadraticCritic {
    pub center: Vec<f64>,
}

impl EnvCritic for QuadraticCritic {
    fn value(&self, x: &[f64]) -> f64 {
        -x.iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter())
            .map(|(a, b)| -2.0 * (a - b))
            .collect()
    }
}

fn check_nan(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DicodeError::Numeric(
            "non-finite value in sampling chain".into(),
        ));
    }
    Ok(())
}

/// Forward universal guidance: shift the predicted noise by the critic
/// gradient at the clean prediction (value ascent).
pub fn forward_guidance(
    x_t: &[f64],
    t: usize,
    d: &dyn Denoiser,
    v: &dyn EnvCritic,
    omega: f64,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let eps = d.predict_noise(x_t, t);
    let x0 = clean_from_eps(x_t, &eps, t, s)?;
    Ok(guided_eps(&eps, &v.grad(&x0), omega, t, s))
}

/// eps - omega * sqrt(1 - abar_t) * grad, the ascent form of forward
/// guidance with the gradient evaluated wherever the caller chose.
pub fn guided_eps(eps: &[f64], grad: &[f64], omega: f64, t: usize, s: &NoiseSchedule) -> Vec<f64> {
    let scale = omega * (1.0 - s.alpha_bar(t)).sqrt();
    eps.iter()
        .zip(grad.iter())
        .map(|(e, g)| e - scale * g)
        .collect()
}

/// Backward guidance: m adaptive-moment ascent steps on the clean prediction
/// offset, folded back into the noise estimate.
pub fn backward_guidance(
    eps_hat: &[f64],
    x_t: &[f64],
    t: usize,
    v: &dyn EnvCritic,
    m: usize,
    lr: f64,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(eps_hat.to_vec());
    }
    let x0_bar = clean_from_eps(x_t, eps_hat, t, s)?;
    let mut delta = vec![0.0; x0_bar.len()];
    let mut opt = Adam::new(delta.len(), lr);
    let mut point = vec![0.0; x0_bar.len()];
    for _ in 0..m {
        for i in 0..point.len() {
            point[i] = x0_bar[i] + delta[i];
        }
        // Adam minimizes, so feed the negated value gradient.
        let grads: Vec<f64> = v.grad(&point).iter().map(|g| -g).collect();
        opt.step(&mut delta, &grads);
    }
    let abar = s.alpha_bar(t);
    let scale = (abar / (1.0 - abar)).sqrt();
    Ok(eps_hat
        .iter()
        .zip(delta.iter())
        .map(|(e, dl)| e - scale * dl)
        .collect())
}

/// Projection applied in noise space: project the implied clean prediction
/// and re-express the result as a noise value.
pub fn project_noise(
    eps: &[f64],
    x_t: &[f64],
    t: usize,
    p: &dyn ProjectionOperator,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let clean = clean_from_eps(x_t, eps, t, s)?;
    let projected = p.project(&clean)?;
    let abar = s.alpha_bar(t);
    let root = (1.0 - abar).sqrt();
    let scale = abar.sqrt() / root;
    Ok(x_t
        .iter()
        .zip(projected.iter())
        .map(|(x, c)| x / root - scale * c)
        .collect())
}

/// One recurrence bounce: DDIM-denoise a single step to t-1, then re-noise
/// back to level t.
pub fn recurrence_step(
    x_t: &[f64],
    eps_bar: &[f64],
    t: usize,
    s: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(DicodeError::InvalidArgument(
            "recurrence_step needs t >= 1".into(),
        ));
    }
    let denoised = ddim_step(x_t, eps_bar, t, t - 1, s)?;
    let ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
    let keep = ratio.sqrt();
    let mix = (1.0 - ratio).sqrt();
    Ok(denoised
        .iter()
        .map(|d| keep * d + mix * standard_normal(rng))
        .collect())
}

/// Per-chain sampling diagnostics for the guidance log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    pub retries: usize,
    /// (t, critic value at the projected clean prediction) per strided step.
    pub step_values: Vec<(usize, f64)>,
    /// Whether the raw chain output was already feasible before exact
    /// finalization.
    pub feasible_before_finalization: bool,
}

fn feasible_under(p: &dyn ProjectionOperator, x: &[f64]) -> bool {
    match p.project(x) {
        Ok(px) => x
            .iter()
            .zip(px.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-9),
        Err(_) => false,
    }
}

/// The full guided noise estimate at the current chain state: forward
/// guidance at the projected clean prediction, backward refinement, then
/// projection of noise. Also reports the critic value at the projected clean
/// prediction for diagnostics.
fn guided_noise(
    x: &[f64],
    t: usize,
    d: &dyn Denoiser,
    v: &dyn EnvCritic,
    p: &dyn ProjectionOperator,
    cfg: &GuidanceConfig,
    omega: f64,
    s: &NoiseSchedule,
) -> Result<(Vec<f64>, f64)> {
    let eps = d.predict_noise(x, t);
    let clean = clean_from_eps(x, &eps, t, s)?;
    let clean_proj = p.project(&clean)?;
    let value = v.value(&clean_proj);
    let eps_hat = if omega == 0.0 {
        eps
    } else {
        guided_eps(&eps, &v.grad(&clean_proj), omega, t, s)
    };
    let eps_bar = backward_guidance(
        &eps_hat,
        x,
        t,
        v,
        cfg.backward_steps_m,
        cfg.backward_lr,
        s,
    )?;
    let eps_tilde = project_noise(&eps_bar, x, t, p, s)?;
    Ok((eps_tilde, value))
}

fn pug_chain(
    d: &dyn Denoiser,
    v: &dyn EnvCritic,
    p: &dyn ProjectionOperator,
    cfg: &GuidanceConfig,
    omega: f64,
    dim: usize,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    let mut rng = rng_from_seed(seed);
    let ts = ddim_stride(s.t_max, cfg.n_ddim_steps)?;
    let mut x = normal_vec(&mut rng, dim);
    let mut step_values = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        for _ in 0..cfg.recurrences_k {
            let (eps_tilde, _) = guided_noise(&x, t, d, v, p, cfg, omega, s)?;
            x = recurrence_step(&x, &eps_tilde, t, s, &mut rng)?;
            check_nan(&x)?;
        }
        // The transition to the next strided level re-estimates guidance at
        // the post-recurrence state.
        let (eps_tilde, value) = guided_noise(&x, t, d, v, p, cfg, omega, s)?;
        step_values.push((t, value));
        x = ddim_step(&x, &eps_tilde, t, t_prev, s)?;
        check_nan(&x)?;
    }
    Ok((x, step_values))
}

/// Projected universal guidance sampling. Every returned design has passed
/// the projection operator's exact finalization.
pub fn pug_sample(
    d: &dyn Denoiser,
    v: &dyn EnvCritic,
    p: &dyn ProjectionOperator,
    cfg: &GuidanceConfig,
    omega: f64,
    dim: usize,
    s: &NoiseSchedule,
    batch: usize,
    base_seed: u64,
) -> Result<(Vec<DesignSample>, Vec<ChainDiagnostics>)> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(batch);
    let mut diagnostics = Vec::with_capacity(batch);
    for i in 0..batch {
        let mut seed = base_seed.wrapping_add(i as u64);
        let mut last_err = None;
        let mut done = false;
        for retry in 0..=3usize {
            match pug_chain(d, v, p, cfg, omega, dim, s, seed) {
                Ok((x, step_values)) => {
                    let feasible = feasible_under(p, &x);
                    let data = p.finalize(&x)?;
                    samples.push(DesignSample {
                        data,
                        scenario_id: p.scenario_id().to_string(),
                        is_finalized: true,
                    });
                    diagnostics.push(ChainDiagnostics {
                        seed,
                        retries: retry,
                        step_values,
                        feasible_before_finalization: feasible,
                    });
                    done = true;
                    break;
                }
                Err(e @ DicodeError::Numeric(_)) => {
                    last_err = Some(e);
                    seed = seed ^ 0x517c_c1b7_2722_0a95 ^ (retry as u64 + 1);
                }
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(last_err.unwrap_or_else(|| {
                DicodeError::Numeric("sampling chain failed".into())
            }));
        }
    }
    Ok((samples, diagnostics))
}

/// Multi-restart projected gradient ascent on the critic (ablation
/// "Descent"). `init` draws the starting point of each restart.
pub fn descent_sample<R: Rng, F>(
    v: &dyn EnvCritic,
    p: &dyn ProjectionOperator,
    n_restarts: usize,
    n_steps: usize,
    lr: f64,
    mut init: F,
    rng: &mut R,
) -> Result<DesignSample>
where
    F: FnMut(&mut R) -> Vec<f64>,
{
    if n_restarts == 0 {
        return Err(DicodeError::InvalidArgument(
            "descent_sample needs at least one restart".into(),
        ));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..n_restarts {
        let mut x = p.project(&init(rng))?;
        for _ in 0..n_steps {
            let g = v.grad(&x);
            for (xi, gi) in x.iter_mut().zip(g.iter()) {
                *xi += lr * gi;
            }
            x = p.project(&x)?;
        }
        let val = v.value(&x);
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, x));
        }
    }
    let (_, x) = best.unwrap();
    Ok(DesignSample {
        data: p.finalize(&x)?,
        scenario_id: p.scenario_id().to_string(),
        is_finalized: true,
    })
}

/// Best-of-pool uniform sampling (ablation "Sampling"). Ties break toward
/// the earlier draw.
pub fn topk_sample<R: Rng, F>(
    v: &dyn EnvCritic,
    mut generator: F,
    pool: usize,
    keep: usize,
    scenario_id: &str,
    rng: &mut R,
) -> Result<Vec<DesignSample>>
where
    F: FnMut(&mut R) -> Result<Vec<f64>>,
{
    if keep == 0 || keep > pool {
        return Err(DicodeError::InvalidArgument(format!(
            "need 1 <= keep <= pool, got keep={keep}, pool={pool}"
        )));
    }
    let mut scored: Vec<(usize, f64, Vec<f64>)> = Vec::with_capacity(pool);
    for i in 0..pool {
        let x = generator(rng)?;
        let val = v.value(&x);
        scored.push((i, val, x));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(keep)
        .map(|(_, _, data)| DesignSample {
            data,
            scenario_id: scenario_id.to_string(),
            is_finalized: true,
        })
        .collect())
}

/// A value estimate conditioned on the diffusion time of a noisy design.
pub trait NoisyCritic {
    fn value(&self, x_t: &[f64], t: usize) -> f64;
    fn grad(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

/// Time-conditioned MLP critic trained on noise-injected designs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyMlpCritic {
    pub net: Mlp,
    pub dim: usize,
    pub time_dim: usize,
    pub t_max: usize,
}

impl NoisyMlpCritic {
    pub fn new(
        dim: usize,
        hidden: &[usize],
        time_dim: usize,
        t_max: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![dim + time_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        NoisyMlpCritic {
            net: Mlp::new(&dims, Activation::Tanh, rng),
            dim,
            time_dim,
            t_max,
        }
    }

    fn embed(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let mut input = x_t.to_vec();
        input.extend(time_embedding(t, self.t_max, self.time_dim));
        input
    }
}

impl NoisyCritic for NoisyMlpCritic {
    fn value(&self, x_t: &[f64], t: usize) -> f64 {
        self.net.forward(&self.embed(x_t, t))[0]
    }

    fn grad(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let mut g = self.net.input_gradient(&self.embed(x_t, t));
        g.truncate(self.dim);
        g
    }
}

/// Regress the noise-conditioned critic onto (noisify(design), t) -> value
/// pairs.
pub fn train_noisy_critic(
    critic: &mut NoisyMlpCritic,
    designs: &[Vec<f64>],
    values: &[f64],
    s: &NoiseSchedule,
    n_iters: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Prng,
) -> Result<Vec<f64>> {
    if designs.is_empty() || designs.len() != values.len() {
        return Err(DicodeError::InvalidArgument(
            "need matching non-empty designs and values".into(),
        ));
    }
    let mut opt = Adam::new(critic.net.params.len(), lr);
    let mut losses = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let mut grads = vec![0.0; critic.net.params.len()];
        let mut loss = 0.0;
        for _ in 0..batch_size {
            let idx = rng.random_range(0..designs.len());
            let t = rng.random_range(1..=s.t_max);
            let eps = normal_vec(rng, critic.dim);
            let x_t = crate::diffusion::noisify(&designs[idx], &eps, t, s)?;
            let input = critic.embed(&x_t, t);
            let (out, trace) = critic.net.forward_traced(&input);
            let err = out[0] - values[idx];
            loss += err * err;
            critic.net.backward(&trace, &[2.0 * err / batch_size as f64], &mut grads);
        }
        losses.push(loss / batch_size as f64);
        opt.step(&mut critic.net.params, &grads);
    }
    Ok(losses)
}

/// Classifier-guidance chain on the noise-conditioned critic (ablation
/// "ADD"): the guidance gradient is taken at the noisy state itself and the
/// projection is applied only once, at the end.
pub fn add_style_sample(
    d: &dyn Denoiser,
    v_noisy: &dyn NoisyCritic,
    p: &dyn ProjectionOperator,
    cfg: &GuidanceConfig,
    omega: f64,
    dim: usize,
    s: &NoiseSchedule,
    batch: usize,
    base_seed: u64,
) -> Result<(Vec<DesignSample>, Vec<ChainDiagnostics>)> {
    cfg.validate()?;
    let ts = ddim_stride(s.t_max, cfg.n_ddim_steps)?;
    let mut samples = Vec::with_capacity(batch);
    let mut diagnostics = Vec::with_capacity(batch);
    for i in 0..batch {
        let seed = base_seed.wrapping_add(i as u64);
        let mut rng = rng_from_seed(seed);
        let mut x = normal_vec(&mut rng, dim);
        let mut step_values = Vec::with_capacity(ts.len());
        for w in ts.windows(2) {
            let (t, t_prev) = (w[0], w[1]);
            let eps = d.predict_noise(&x, t);
            let eps_hat = if omega == 0.0 {
                eps
            } else {
                guided_eps(&eps, &v_noisy.grad(&x, t), omega, t, s)
            };
            step_values.push((t, v_noisy.value(&x, t)));
            x = ddim_step(&x, &eps_hat, t, t_prev, s)?;
            check_nan(&x)?;
        }
        let feasible = feasible_under(p, &x);
        samples.push(DesignSample {
            data: p.finalize(&x)?,
            scenario_id: p.scenario_id().to_string(),
            is_finalized: true,
        });
        diagnostics.push(ChainDiagnostics {
            seed,
            retries: 0,
            step_values,
            feasible_before_finalization: feasible,
        });
    }
    Ok((samples, diagnostics))
}
