//! The co-design training loop: environment-critic distillation against the
//! live agent critic, a FIFO design buffer, guidance-weight scheduling, and
//! orchestration of diffusion sampling with multi-agent PPO. Baselines
//! (fixed design, domain randomization, REINFORCE generator) and the sampler
//! ablations share the same loop skeleton and artifact layout.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::ema;
use crate::diffusion::{
    make_schedule, sample_unconditional, save_denoiser, train_prior, MlpDenoiser, NoiseSchedule,
    PriorTrainConfig,
};
use crate::envs::{DesignRecord, Scenario};
use crate::error::{DicodeError, Result};
use crate::guidance::{
    add_style_sample, descent_sample, pug_sample, topk_sample, train_noisy_critic,
    AnnealSchedule, ChainDiagnostics, EnvCritic, GuidanceConfig, MlpEnvCritic, NoisyMlpCritic,
};
use crate::marl::{
    cosine_lr, evaluate, gae, ppo_update, random_policy_return_stats, rollout, save_marl,
    AgentCritic, Policy, PpoConfig,
};
use crate::nn::Adam;
use crate::rng::{normal_vec, rng_from_seed, Prng};

// ---------------------------------------------------------------------------
// Design buffer
// ---------------------------------------------------------------------------

/// FIFO memory of the most recent generated designs.
#[derive(Debug, Clone)]
pub struct DesignBuffer {
    capacity: usize,
    items: VecDeque<Vec<f64>>,
}

impl DesignBuffer {
    pub fn new(capacity: usize) -> Self {
        DesignBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, design: Vec<f64>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(design);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Insertion-order iteration, oldest first.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Vec<f64>> {
        self.items.iter()
    }

    /// Sample `n` designs with replacement.
    pub fn minibatch(&self, n: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Schedule and configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoDesignSchedule {
    pub n_rl_iterations: usize,
    /// Number of designs drawn uniformly (no guidance) before guided
    /// sampling starts. Env-critic training begins immediately; its outputs
    /// are simply unused until warmup ends.
    pub warmup_envs: usize,
    pub env_repeat: usize,
    pub n_distill_updates: usize,
    pub m_distill: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
}

impl CoDesignSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.env_repeat < 1
            || self.m_distill < 1
            || self.batch_size < 1
            || self.buffer_capacity < 1
            || self.eval_every < 1
        {
            return Err(DicodeError::Config(
                "env_repeat, m_distill, batch_size, buffer_capacity and eval_every must be >= 1"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionBlock {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub n_ddim_steps: usize,
    pub pretrain_iters: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceBlock {
    pub omega: f64,
    pub recurrences_k: usize,
    pub backward_steps_m: usize,
    pub backward_lr: f64,
    pub anneal: Option<AnnealSchedule>,
    pub critic_hidden: Vec<usize>,
    pub distill_lr: f64,
    pub distill_minibatch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarlBlock {
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Normalize critic targets by return statistics of a uniform-random
    /// policy, estimated once at startup.
    pub value_norm: bool,
    pub ppo: PpoConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioBlock,
    pub diffusion: DiffusionBlock,
    pub guidance: GuidanceBlock,
    pub marl: MarlBlock,
    pub codesign: CoDesignSchedule,
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl ExperimentConfig {
    /// Desk-scale defaults per scenario.
    pub fn default_for(scenario_id: &str) -> Result<Self> {
        let scenario = Scenario::from_id(scenario_id)?;
        let (omega, recurrences_k, backward_steps_m, anneal, env_repeat) = match scenario {
            Scenario::Warehouse(_) => (5.0, 8, 16, None, 4),
            Scenario::Nav(_) => (50.0, 8, 6, None, 1),
            Scenario::Wind(_) => (
                3.0,
                4,
                0,
                Some(AnnealSchedule {
                    omega_start: 0.0,
                    omega_end: 3.0,
                    n_batches: 60,
                }),
                1,
            ),
        };
        Ok(ExperimentConfig {
            scenario: ScenarioBlock {
                id: scenario_id.to_string(),
            },
            diffusion: DiffusionBlock {
                t_max: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                n_ddim_steps: 50,
                pretrain_iters: 800,
                pretrain_batch: 32,
                pretrain_lr: 1e-3,
                hidden: vec![128, 128],
                time_dim: 8,
            },
            guidance: GuidanceBlock {
                omega,
                recurrences_k,
                backward_steps_m,
                backward_lr: 0.01,
                anneal,
                critic_hidden: vec![64, 64],
                distill_lr: 1e-3,
                distill_minibatch: 32,
            },
            marl: MarlBlock {
                policy_hidden: vec![64, 64],
                critic_hidden: vec![64, 64],
                value_norm: matches!(scenario, Scenario::Wind(_)),
                ppo: PpoConfig::default(),
            },
            codesign: CoDesignSchedule {
                n_rl_iterations: 60,
                warmup_envs: 32,
                env_repeat,
                n_distill_updates: 4,
                m_distill: 3,
                batch_size: 8,
                buffer_capacity: 2048,
                eval_every: 10,
            },
            seeds: vec![0, 1, 2],
            out_dir: "runs".to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        Scenario::from_id(&self.scenario.id)?;
        let d = &self.diffusion;
        if d.t_max == 0
            || d.beta_start <= 0.0
            || d.beta_end < d.beta_start
            || d.beta_end >= 1.0
            || d.n_ddim_steps == 0
            || d.n_ddim_steps > d.t_max
            || d.pretrain_batch == 0
            || d.pretrain_lr <= 0.0
            || d.time_dim == 0
        {
            return Err(DicodeError::Config("invalid diffusion block".into()));
        }
        let g = &self.guidance;
        if g.omega < 0.0
            || g.recurrences_k < 1
            || g.backward_lr <= 0.0
            || g.distill_lr <= 0.0
            || g.distill_minibatch == 0
        {
            return Err(DicodeError::Config("invalid guidance block".into()));
        }
        let p = &self.marl.ppo;
        if p.clip <= 0.0
            || !(0.0..=1.0).contains(&p.gamma)
            || !(0.0..=1.0).contains(&p.lam)
            || p.lr < 0.0
            || p.minibatch_size == 0
            || p.max_grad_norm <= 0.0
        {
            return Err(DicodeError::Config("invalid marl block".into()));
        }
        self.codesign.validate()?;
        if self.seeds.is_empty() {
            return Err(DicodeError::Config("seeds list must be non-empty".into()));
        }
        Ok(())
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig {
            omega: self.guidance.omega,
            recurrences_k: self.guidance.recurrences_k,
            backward_steps_m: self.guidance.backward_steps_m,
            backward_lr: self.guidance.backward_lr,
            n_ddim_steps: self.diffusion.n_ddim_steps,
            anneal: self.guidance.anneal,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| DicodeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| DicodeError::Serde(e.to_string()))
    }
}

/// Stable FNV-1a hash of the canonical JSON serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

/// Seed for the `rep`-th instantiation of the `design_index`-th design in a
/// distillation batch.
pub fn distill_seed(base_seed: u64, design_index: usize, rep: usize) -> u64 {
    base_seed ^ ((design_index as u64) << 32) ^ rep as u64
}

/// Distillation target per design: the mean of the current agent critic's
/// value at the initial state of `m_distill` seeded instantiations.
pub fn distill_targets(
    scenario: &Scenario,
    designs: &[Vec<f64>],
    agent_critic: &AgentCritic,
    m_distill: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    if m_distill == 0 {
        return Err(DicodeError::InvalidArgument("m_distill must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(designs.len());
    for (di, design) in designs.iter().enumerate() {
        let mut acc = 0.0;
        for rep in 0..m_distill {
            let env = scenario.instantiate(design, distill_seed(base_seed, di, rep))?;
            acc += agent_critic.value(&env.global_state());
        }
        out.push(acc / m_distill as f64);
    }
    Ok(out)
}

/// One squared-error regression step of the environment critic toward the
/// targets. Returns the pre-step loss (sum of squared residuals).
pub fn distill_update(
    env_critic: &mut MlpEnvCritic,
    designs: &[Vec<f64>],
    targets: &[f64],
    opt: &mut Adam,
) -> Result<f64> {
    if designs.is_empty() || designs.len() != targets.len() {
        return Err(DicodeError::InvalidArgument(format!(
            "need matching non-empty designs ({}) and targets ({})",
            designs.len(),
            targets.len()
        )));
    }
    let mut grads = vec![0.0; env_critic.net.params.len()];
    let mut loss = 0.0;
    for (design, target) in designs.iter().zip(targets.iter()) {
        let (out, trace) = env_critic.net.forward_traced(design);
        let err = out[0] - target;
        loss += err * err;
        env_critic.net.backward(&trace, &[2.0 * err], &mut grads);
    }
    if !loss.is_finite() {
        return Err(DicodeError::Numeric("non-finite distillation loss".into()));
    }
    opt.step(&mut env_critic.net.params, &grads);
    Ok(loss)
}

fn design_key(design: &[f64]) -> Vec<u64> {
    design.iter().map(|x| x.to_bits()).collect()
}

/// Log of undiscounted episode returns per design, keyed by the design's bit
/// pattern. Feeds the MC-target ablation and the REINFORCE baseline.
#[derive(Debug, Clone, Default)]
pub struct ReturnLog {
    map: BTreeMap<Vec<u64>, Vec<f64>>,
}

impl ReturnLog {
    pub fn push(&mut self, design: &[f64], episode_return: f64) {
        self.map
            .entry(design_key(design))
            .or_default()
            .push(episode_return);
    }

    pub fn returns_for(&self, design: &[f64]) -> Option<&[f64]> {
        self.map.get(&design_key(design)).map(|v| v.as_slice())
    }
}

/// MC-ablation target per design: the mean of all logged episode returns,
/// possibly collected under stale policies.
pub fn mc_targets(designs: &[Vec<f64>], log: &ReturnLog) -> Result<Vec<f64>> {
    designs
        .iter()
        .map(|d| {
            let returns = log
                .returns_for(d)
                .ok_or_else(|| DicodeError::InvalidArgument("design has no logged returns".into()))?;
            Ok(returns.iter().sum::<f64>() / returns.len() as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// REINFORCE design generator (baseline "rl")
// ---------------------------------------------------------------------------

/// Diagonal-Gaussian generator over the wide design domain, updated by the
/// score-function gradient with a moving-average baseline. Samples are
/// finalized through the scenario projection before instantiation.
#[derive(Debug, Clone)]
pub struct ReinforceGenerator {
    pub dim: usize,
    /// First `dim` entries are the mean, the rest log standard deviations.
    pub params: Vec<f64>,
    opt: Adam,
    baseline: Option<f64>,
}

impl ReinforceGenerator {
    pub fn new(dim: usize, lr: f64) -> Self {
        let mut params = vec![0.0; 2 * dim];
        for p in params[dim..].iter_mut() {
            *p = (0.5f64).ln();
        }
        ReinforceGenerator {
            dim,
            params,
            opt: Adam::new(2 * dim, lr),
            baseline: None,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.params[..self.dim]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let noise = normal_vec(rng, self.dim);
        (0..self.dim)
            .map(|i| self.params[i] + self.params[self.dim + i].exp() * noise[i])
            .collect()
    }

    /// Score-function update from raw samples and their episode rewards.
    pub fn update(&mut self, samples: &[Vec<f64>], rewards: &[f64]) -> Result<()> {
        if samples.is_empty() || samples.len() != rewards.len() {
            return Err(DicodeError::InvalidArgument(
                "need matching non-empty samples and rewards".into(),
            ));
        }
        let batch_mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let b = self.baseline.unwrap_or(batch_mean);
        let mut grads = vec![0.0; self.params.len()];
        let scale = 1.0 / samples.len() as f64;
        for (x, r) in samples.iter().zip(rewards.iter()) {
            let adv = r - b;
            for i in 0..self.dim {
                let sigma = self.params[self.dim + i].exp();
                let z = (x[i] - self.params[i]) / sigma;
                // Minimize -adv * log p(x).
                grads[i] -= adv * z / sigma * scale;
                grads[self.dim + i] -= adv * (z * z - 1.0) * scale;
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(DicodeError::Numeric("non-finite generator gradient".into()));
        }
        self.opt.step(&mut self.params, &grads);
        for p in self.params[self.dim..].iter_mut() {
            *p = p.clamp(-4.0, 1.0);
        }
        self.baseline = Some(0.9 * b + 0.1 * batch_mean);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Methods and artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dicode,
    Fixed,
    Dr,
    RlReinforce,
    DicodeDescent,
    DicodeSampling,
    DicodeAdd,
    DicodeMc,
}

impl Method {
    pub fn from_str(name: &str) -> Result<Method> {
        Ok(match name {
            "dicode" => Method::Dicode,
            "fixed" => Method::Fixed,
            "dr" => Method::Dr,
            "rl" => Method::RlReinforce,
            "dicode-descent" => Method::DicodeDescent,
            "dicode-sampling" => Method::DicodeSampling,
            "dicode-add" => Method::DicodeAdd,
            "dicode-mc" => Method::DicodeMc,
            other => {
                return Err(DicodeError::InvalidArgument(format!(
                    "unknown method {other:?}"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dicode => "dicode",
            Method::Fixed => "fixed",
            Method::Dr => "dr",
            Method::RlReinforce => "rl",
            Method::DicodeDescent => "dicode-descent",
            Method::DicodeSampling => "dicode-sampling",
            Method::DicodeAdd => "dicode-add",
            Method::DicodeMc => "dicode-mc",
        }
    }

    /// Whether the method samples designs through the diffusion prior.
    pub fn needs_prior(&self) -> bool {
        matches!(
            self,
            Method::Dicode | Method::DicodeSampling | Method::DicodeAdd | Method::DicodeMc
        )
    }

    /// Whether the method trains the environment critic.
    pub fn uses_env_critic(&self) -> bool {
        matches!(
            self,
            Method::Dicode
                | Method::DicodeDescent
                | Method::DicodeSampling
                | Method::DicodeAdd
                | Method::DicodeMc
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    /// Cumulative environment frames (steps x agents) consumed so far.
    pub frames: usize,
    pub mean_return: f64,
    pub distill_loss: f64,
    pub omega: f64,
    pub buffer_size: usize,
    pub wall_clock: f64,
}

pub const METRICS_HEADER: &str =
    "iteration,frames,mean_return,distill_loss,omega,buffer_size,wall_clock";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.frames,
            self.mean_return,
            self.distill_loss,
            self.omega,
            self.buffer_size,
            self.wall_clock
        )
    }

    pub fn from_csv(line: &str) -> Result<MetricsRow> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(DicodeError::Serde(format!("bad metrics row {line:?}")));
        }
        let bad = |e: std::num::ParseIntError| DicodeError::Serde(e.to_string());
        let badf = |e: std::num::ParseFloatError| DicodeError::Serde(e.to_string());
        Ok(MetricsRow {
            iteration: parts[0].parse().map_err(bad)?,
            frames: parts[1].parse().map_err(bad)?,
            mean_return: parts[2].parse().map_err(badf)?,
            distill_loss: parts[3].parse().map_err(badf)?,
            omega: parts[4].parse().map_err(badf)?,
            buffer_size: parts[5].parse().map_err(bad)?,
            wall_clock: parts[6].parse().map_err(badf)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub guided_mean: f64,
    pub guided_stderr: f64,
    pub uniform_mean: f64,
    pub uniform_stderr: f64,
}

#[derive(Debug)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub eval: Vec<EvalRow>,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

impl RunResult {
    /// Final training return smoothed with a 0.95 EMA.
    pub fn final_ema_return(&self) -> f64 {
        let returns: Vec<f64> = self.metrics.iter().map(|r| r.mean_return).collect();
        ema(&returns, 0.95).last().copied().unwrap_or(0.0)
    }
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::from_csv)
        .collect()
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// Train a diffusion prior over the scenario's uniform design distribution.
pub fn pretrain_prior(cfg: &ExperimentConfig, seed: u64) -> Result<(MlpDenoiser, NoiseSchedule)> {
    let scenario = Scenario::from_id(&cfg.scenario.id)?;
    let schedule = make_schedule(
        cfg.diffusion.t_max,
        cfg.diffusion.beta_start,
        cfg.diffusion.beta_end,
    )?;
    let mut rng = rng_from_seed(seed ^ 0x7072_696f_7200_0000);
    let mut denoiser = MlpDenoiser::new(
        scenario.design_dim(),
        &cfg.diffusion.hidden,
        cfg.diffusion.time_dim,
        schedule.t_max,
        &mut rng,
    );
    let prior_cfg = PriorTrainConfig {
        n_iters: cfg.diffusion.pretrain_iters,
        batch_size: cfg.diffusion.pretrain_batch,
        lr: cfg.diffusion.pretrain_lr,
        max_grad_norm: 10.0,
    };
    train_prior(
        &mut denoiser,
        |r| scenario.uniform_generate(r),
        &prior_cfg,
        &schedule,
        &mut rng,
    )?;
    Ok((denoiser, schedule))
}

/// Deterministic per-iteration seed stream.
pub fn iteration_seed(run_seed: u64, iteration: usize) -> u64 {
    run_seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(iteration as u64 + 1)
}

struct RunState {
    scenario: Scenario,
    schedule: NoiseSchedule,
    gcfg: GuidanceConfig,
    policy: Policy,
    agent_critic: AgentCritic,
    env_critic: MlpEnvCritic,
    noisy_critic: NoisyMlpCritic,
    denoiser: Option<MlpDenoiser>,
    fixed_design: Vec<f64>,
    generator: ReinforceGenerator,
    buffer: DesignBuffer,
    return_log: ReturnLog,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample one design batch with the method's generator. Returns finalized
/// designs, the raw (pre-projection) samples for REINFORCE, and any chain
/// diagnostics.
#[allow(clippy::type_complexity)]
fn sample_batch(
    method: Method,
    state: &RunState,
    cfg: &ExperimentConfig,
    omega: f64,
    warmup: bool,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<ChainDiagnostics>)> {
    let mut rng = rng_from_seed(seed);
    let proj = state.scenario.projection();
    let dim = state.scenario.design_dim();
    let uniform = |state: &RunState, rng: &mut Prng| -> Result<Vec<Vec<f64>>> {
        (0..n).map(|_| state.scenario.uniform_generate(rng)).collect()
    };
    match method {
        Method::Fixed => Ok((vec![state.fixed_design.clone(); n], Vec::new(), Vec::new())),
        Method::Dr => Ok((uniform(state, &mut rng)?, Vec::new(), Vec::new())),
        Method::RlReinforce => {
            let raws: Vec<Vec<f64>> = (0..n).map(|_| state.generator.sample(&mut rng)).collect();
            let designs = raws
                .iter()
                .map(|r| proj.finalize(r))
                .collect::<Result<Vec<_>>>()?;
            Ok((designs, raws, Vec::new()))
        }
        _ if warmup => Ok((uniform(state, &mut rng)?, Vec::new(), Vec::new())),
        Method::Dicode | Method::DicodeMc => {
            let d = state.denoiser.as_ref().unwrap();
            let (samples, diags) = pug_sample(
                d,
                &state.env_critic,
                proj.as_ref(),
                &state.gcfg,
                omega,
                dim,
                &state.schedule,
                n,
                seed,
            )?;
            Ok((samples.into_iter().map(|s| s.data).collect(), Vec::new(), diags))
        }
        Method::DicodeDescent => {
            let designs = (0..n)
                .map(|_| {
                    descent_sample(
                        &state.env_critic,
                        proj.as_ref(),
                        4,
                        50,
                        0.05,
                        |r| normal_vec(r, dim),
                        &mut rng,
                    )
                    .map(|s| s.data)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((designs, Vec::new(), Vec::new()))
        }
        Method::DicodeSampling => {
            let d = state.denoiser.as_ref().unwrap();
            let samples = topk_sample(
                &state.env_critic,
                |r: &mut Prng| {
                    let s = sample_unconditional(
                        d,
                        &state.schedule,
                        cfg.diffusion.n_ddim_steps,
                        dim,
                        state.scenario.scenario_id(),
                        r,
                    )?;
                    proj.finalize(&s.data)
                },
                n * 8,
                n,
                state.scenario.scenario_id(),
                &mut rng,
            )?;
            Ok((samples.into_iter().map(|s| s.data).collect(), Vec::new(), Vec::new()))
        }
        Method::DicodeAdd => {
            let d = state.denoiser.as_ref().unwrap();
            let (samples, diags) = add_style_sample(
                d,
                &state.noisy_critic,
                proj.as_ref(),
                &state.gcfg,
                omega,
                dim,
                &state.schedule,
                n,
                seed,
            )?;
            Ok((samples.into_iter().map(|s| s.data).collect(), Vec::new(), diags))
        }
    }
}

/// Run one seeded experiment to completion, writing artifacts under
/// `out_dir`: config copy and hash, prior (if trained here), metrics and
/// evaluation CSVs, generated-design archive, guidance diagnostics, and
/// latest policy/critic checkpoints.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    out_dir: &Path,
    prior: Option<(MlpDenoiser, NoiseSchedule)>,
) -> Result<RunResult> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config_hash(cfg)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string()?)?;
    std::fs::write(out_dir.join("config_hash.txt"), &hash)?;

    let scenario = Scenario::from_id(&cfg.scenario.id)?;
    let dim = scenario.design_dim();
    let sched = &cfg.codesign;
    let schedule = match &prior {
        Some((_, s)) => s.clone(),
        None => make_schedule(cfg.diffusion.t_max, cfg.diffusion.beta_start, cfg.diffusion.beta_end)?,
    };

    let mut master = rng_from_seed(seed);
    let policy = Policy::new(
        scenario.obs_dim(),
        &cfg.marl.policy_hidden,
        scenario.n_actions(),
        &mut master,
    );
    let mut agent_critic = AgentCritic::new(scenario.global_dim(), &cfg.marl.critic_hidden, &mut master);
    if cfg.marl.value_norm {
        agent_critic.norm = random_policy_return_stats(
            &scenario,
            16,
            cfg.marl.ppo.gamma,
            seed ^ 0x6e6f_726d_5f73_6565,
        )?;
    }
    let env_critic = MlpEnvCritic::new(dim, &cfg.guidance.critic_hidden, &mut master);
    let noisy_critic = NoisyMlpCritic::new(
        dim,
        &cfg.guidance.critic_hidden,
        cfg.diffusion.time_dim,
        schedule.t_max,
        &mut master,
    );

    let denoiser = if method.needs_prior() {
        Some(match prior {
            Some((d, _)) => d,
            None => {
                let (d, _) = pretrain_prior(cfg, seed)?;
                save_denoiser(&out_dir.join("prior.ckpt"), &d, &schedule, scenario.scenario_id())?;
                d
            }
        })
    } else {
        None
    };

    let fixed_design = scenario.uniform_generate(&mut master)?;
    let mut state = RunState {
        scenario,
        schedule,
        gcfg: cfg.guidance_config(),
        policy,
        agent_critic,
        env_critic,
        noisy_critic,
        denoiser,
        fixed_design,
        generator: ReinforceGenerator::new(dim, 0.02),
        buffer: DesignBuffer::new(sched.buffer_capacity),
        return_log: ReturnLog::default(),
    };

    let mut opt_policy = Adam::new(state.policy.net.params.len(), cfg.marl.ppo.lr);
    let mut opt_critic = Adam::new(state.agent_critic.net.params.len(), cfg.marl.ppo.lr);
    let mut opt_env = Adam::new(state.env_critic.net.params.len(), cfg.guidance.distill_lr);

    let mut metrics_file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("metrics.csv"))?);
    writeln!(metrics_file, "{METRICS_HEADER}")?;
    let mut eval_file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("eval.csv"))?);
    writeln!(eval_file, "iteration,guided_mean,guided_stderr,uniform_mean,uniform_stderr")?;
    let mut designs_file =
        std::io::BufWriter::new(std::fs::File::create(out_dir.join("designs.jsonl"))?);
    let mut diag_file =
        std::io::BufWriter::new(std::fs::File::create(out_dir.join("guidance.jsonl"))?);

    save_marl(
        &out_dir.join("marl.ckpt"),
        &state.policy,
        &state.agent_critic,
        state.scenario.scenario_id(),
        &hash,
    )?;
    std::fs::write(
        out_dir.join("env_critic.json"),
        serde_json::to_string(&state.env_critic)?,
    )?;

    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut eval_rows = Vec::new();
    let mut frames_total = 0usize;
    let mut designs_sampled = 0usize;

    for i in 0..sched.n_rl_iterations {
        let iter_seed = iteration_seed(seed, i);
        let result: Result<()> = (|| {
            let omega = match &state.gcfg.anneal {
                Some(a) => a.omega_at(i),
                None => state.gcfg.omega,
            };
            let warmup = designs_sampled < sched.warmup_envs;
            let (designs, raws, diags) = sample_batch(
                method,
                &state,
                cfg,
                omega,
                warmup,
                sched.batch_size,
                iter_seed ^ 0x5a11,
            )?;
            designs_sampled += designs.len();
            for design in &designs {
                state.buffer.push(design.clone());
                let mut meta = BTreeMap::new();
                meta.insert("iteration".to_string(), i.to_string());
                meta.insert("method".to_string(), method.as_str().to_string());
                meta.insert("omega".to_string(), omega.to_string());
                let record = DesignRecord {
                    scenario_id: state.scenario.scenario_id().to_string(),
                    data: design.clone(),
                    meta,
                };
                writeln!(designs_file, "{}", record.to_line()?)?;
            }
            for d in &diags {
                writeln!(diag_file, "{}", serde_json::to_string(d)?)?;
            }

            let mut batch = rollout(
                &state.scenario,
                &designs,
                &state.policy,
                &state.agent_critic,
                sched.env_repeat,
                iter_seed ^ 0x0e11,
            )?;
            gae(&mut batch, cfg.marl.ppo.gamma, cfg.marl.ppo.lam)?;
            frames_total += batch.n_frames();
            let mean_return = batch.mean_return();

            // Per-design mean returns feed the MC-target log and REINFORCE.
            let mut per_design = vec![Vec::new(); designs.len()];
            for ep in &batch.episodes {
                per_design[ep.design_index].push(ep.team_return());
            }
            let design_rewards: Vec<f64> = per_design
                .iter()
                .map(|rs| rs.iter().sum::<f64>() / rs.len() as f64)
                .collect();
            for (design, reward) in designs.iter().zip(design_rewards.iter()) {
                state.return_log.push(design, *reward);
            }
            if method == Method::RlReinforce {
                state.generator.update(&raws, &design_rewards)?;
            }

            let lr_now = cosine_lr(cfg.marl.ppo.lr, i, sched.n_rl_iterations);
            opt_policy.set_lr(lr_now);
            opt_critic.set_lr(lr_now);
            let mut ppo_rng = rng_from_seed(iter_seed ^ 0x9901);
            ppo_update(
                &mut state.policy,
                &mut state.agent_critic,
                &mut opt_policy,
                &mut opt_critic,
                &batch,
                &cfg.marl.ppo,
                &mut ppo_rng,
            )?;

            // Environment-critic distillation: targets recomputed per
            // minibatch against the freshly updated agent critic.
            let mut distill_loss = 0.0;
            if method.uses_env_critic() && !state.buffer.is_empty() {
                let mut distill_rng = rng_from_seed(iter_seed ^ 0xd157);
                let mb = cfg.guidance.distill_minibatch.min(state.buffer.len());
                for u in 0..sched.n_distill_updates {
                    let minibatch = state.buffer.minibatch(mb, &mut distill_rng);
                    let targets = if method == Method::DicodeMc {
                        mc_targets(&minibatch, &state.return_log)?
                    } else {
                        distill_targets(
                            &state.scenario,
                            &minibatch,
                            &state.agent_critic,
                            sched.m_distill,
                            iter_seed ^ (u as u64) << 8,
                        )?
                    };
                    distill_loss =
                        distill_update(&mut state.env_critic, &minibatch, &targets, &mut opt_env)?;
                }
                if method == Method::DicodeAdd {
                    let recent: Vec<Vec<f64>> =
                        state.buffer.iter().rev().take(64).cloned().collect();
                    let targets = distill_targets(
                        &state.scenario,
                        &recent,
                        &state.agent_critic,
                        sched.m_distill,
                        iter_seed ^ 0xadd0,
                    )?;
                    train_noisy_critic(
                        &mut state.noisy_critic,
                        &recent,
                        &targets,
                        &state.schedule,
                        20,
                        16,
                        1e-3,
                        &mut distill_rng,
                    )?;
                }
            }

            let row = MetricsRow {
                iteration: i,
                frames: frames_total,
                mean_return,
                distill_loss,
                omega,
                buffer_size: state.buffer.len(),
                wall_clock: start.elapsed().as_secs_f64(),
            };
            writeln!(metrics_file, "{}", row.to_csv())?;
            metrics_file.flush()?;
            metrics.push(row);

            if (i + 1) % sched.eval_every == 0 {
                let eval_seed = iter_seed ^ 0xe7a1;
                let (guided, _, _) =
                    sample_batch(method, &state, cfg, omega, warmup, 16, eval_seed)?;
                let mut eval_rng = rng_from_seed(eval_seed ^ 1);
                let uniform: Vec<Vec<f64>> = (0..16)
                    .map(|_| state.scenario.uniform_generate(&mut eval_rng))
                    .collect::<Result<_>>()?;
                let gm: Vec<f64> = evaluate(
                    &state.scenario,
                    &state.policy,
                    &state.agent_critic,
                    &guided,
                    1,
                    eval_seed ^ 2,
                )?
                .into_iter()
                .map(|(m, _)| m)
                .collect();
                let um: Vec<f64> = evaluate(
                    &state.scenario,
                    &state.policy,
                    &state.agent_critic,
                    &uniform,
                    1,
                    eval_seed ^ 3,
                )?
                .into_iter()
                .map(|(m, _)| m)
                .collect();
                let (guided_mean, guided_stderr) = mean_stderr(&gm);
                let (uniform_mean, uniform_stderr) = mean_stderr(&um);
                let row = EvalRow {
                    iteration: i,
                    guided_mean,
                    guided_stderr,
                    uniform_mean,
                    uniform_stderr,
                };
                writeln!(
                    eval_file,
                    "{},{},{},{},{}",
                    row.iteration, row.guided_mean, row.guided_stderr, row.uniform_mean, row.uniform_stderr
                )?;
                eval_file.flush()?;
                eval_rows.push(row);
            }

            save_marl(
                &out_dir.join("marl.ckpt"),
                &state.policy,
                &state.agent_critic,
                state.scenario.scenario_id(),
                &hash,
            )?;
            std::fs::write(
                out_dir.join("env_critic.json"),
                serde_json::to_string(&state.env_critic)?,
            )?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = std::fs::write(
                out_dir.join("failure.txt"),
                format!("iteration {i}, run seed {seed}, iteration seed {iter_seed}: {e}"),
            );
            return Err(e);
        }
    }
    designs_file.flush()?;
    diag_file.flush()?;

    Ok(RunResult {
        metrics,
        eval: eval_rows,
        out_dir: out_dir.to_path_buf(),
        config_hash: hash,
    })
}

// ---------------------------------------------------------------------------
// Scripted policy-shift experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PolicyShiftOutcome {
    /// First round at/after the swap where the distilled critic ranks the
    /// clusters in the new order, if any.
    pub distilled_flip: Option<usize>,
    pub mc_flip: Option<usize>,
    pub swap_round: usize,
}

/// Two design clusters whose true values swap at `swap_round`. A distilled
/// critic regresses the current values each round; an MC critic regresses
/// the running mean of all logged returns. Returns when each critic's
/// cluster ranking flips.
pub fn policy_shift_experiment(
    seed: u64,
    swap_round: usize,
    n_rounds: usize,
    updates_per_round: usize,
) -> Result<PolicyShiftOutcome> {
    let mut rng = rng_from_seed(seed);
    let n_per = 8;
    let mut designs = Vec::new();
    let mut cluster = Vec::new();
    for c in 0..2 {
        let center = if c == 0 { 0.6 } else { -0.6 };
        for _ in 0..n_per {
            designs.push(vec![
                center + 0.05 * crate::rng::standard_normal(&mut rng),
                center + 0.05 * crate::rng::standard_normal(&mut rng),
            ]);
            cluster.push(c);
        }
    }
    let true_value = |c: usize, round: usize| -> f64 {
        let a_high = round < swap_round;
        match (c, a_high) {
            (0, true) | (1, false) => 1.0,
            _ => 0.0,
        }
    };

    let mut distilled = MlpEnvCritic::new(2, &[32, 32], &mut rng);
    let mut mc = MlpEnvCritic::new(2, &[32, 32], &mut rng);
    let mut opt_d = Adam::new(distilled.net.params.len(), 1e-2);
    let mut opt_m = Adam::new(mc.net.params.len(), 1e-2);
    let mut log = ReturnLog::default();
    let mut distilled_flip = None;
    let mut mc_flip = None;

    for round in 0..n_rounds {
        let fresh: Vec<f64> = cluster.iter().map(|&c| true_value(c, round)).collect();
        for (design, value) in designs.iter().zip(fresh.iter()) {
            log.push(design, *value);
        }
        let stale = mc_targets(&designs, &log)?;
        for _ in 0..updates_per_round {
            distill_update(&mut distilled, &designs, &fresh, &mut opt_d)?;
            distill_update(&mut mc, &designs, &stale, &mut opt_m)?;
        }
        if round >= swap_round {
            let rank = |critic: &MlpEnvCritic| {
                let mut mean = [0.0; 2];
                for (design, &c) in designs.iter().zip(cluster.iter()) {
                    mean[c] += critic.value(design) / n_per as f64;
                }
                mean[1] > mean[0]
            };
            if distilled_flip.is_none() && rank(&distilled) {
                distilled_flip = Some(round);
            }
            if mc_flip.is_none() && rank(&mc) {
                mc_flip = Some(round);
            }
        }
    }
    Ok(PolicyShiftOutcome {
        distilled_flip,
        mc_flip,
        swap_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_nav_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for("nav_lite").unwrap();
        cfg.diffusion.t_max = 200;
        cfg.diffusion.n_ddim_steps = 10;
        cfg.diffusion.pretrain_iters = 30;
        cfg.diffusion.pretrain_batch = 8;
        cfg.diffusion.hidden = vec![32];
        cfg.diffusion.time_dim = 4;
        cfg.guidance.recurrences_k = 2;
        cfg.guidance.backward_steps_m = 2;
        cfg.guidance.critic_hidden = vec![16];
        cfg.marl.policy_hidden = vec![16];
        cfg.marl.critic_hidden = vec![16];
        cfg.marl.ppo.minibatch_size = 64;
        cfg.marl.ppo.n_epochs = 2;
        cfg.codesign = CoDesignSchedule {
            n_rl_iterations: 3,
            warmup_envs: 4,
            env_repeat: 1,
            n_distill_updates: 2,
            m_distill: 2,
            batch_size: 4,
            buffer_capacity: 64,
            eval_every: 2,
        };
        cfg
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dicode-codesign-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn buffer_is_fifo() {
        let mut buffer = DesignBuffer::new(4);
        for i in 0..7 {
            buffer.push(vec![i as f64]);
        }
        assert_eq!(buffer.len(), 4);
        let contents: Vec<f64> = buffer.iter().map(|d| d[0]).collect();
        assert_eq!(contents, vec![3.0, 4.0, 5.0, 6.0]);
        let mut rng = rng_from_seed(0);
        let mb = buffer.minibatch(10, &mut rng);
        assert_eq!(mb.len(), 10);
        assert!(mb.iter().all(|d| d[0] >= 3.0));
    }

    #[test]
    fn distill_targets_cases() {
        // Nav instantiation is deterministic, so any m gives V(s0) exactly.
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let mut rng = rng_from_seed(1);
        let design = scenario.uniform_generate(&mut rng).unwrap();
        let critic = AgentCritic::new(scenario.global_dim(), &[8], &mut rng);
        let s0 = scenario.instantiate(&design, 0).unwrap().global_state();
        let expected = critic.value(&s0);
        for m in [1, 3, 5] {
            let y = distill_targets(&scenario, &[design.clone()], &critic, m, 42).unwrap();
            assert!((y[0] - expected).abs() < 1e-12);
        }

        // A constant critic gives constant targets on any scenario.
        let wind = Scenario::from_id("wind_lite").unwrap();
        let mut constant = AgentCritic::new(wind.global_dim(), &[8], &mut rng);
        constant.net.params.iter_mut().for_each(|p| *p = 0.0);
        constant.norm = crate::marl::NormStats { mean: 2.5, std: 1.0 };
        let designs: Vec<Vec<f64>> = (0..3)
            .map(|_| wind.uniform_generate(&mut rng).unwrap())
            .collect();
        let y = distill_targets(&wind, &designs, &constant, 3, 7).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));

        // Stochastic wind: m = 3 equals the hand-averaged seeded replays.
        let critic = AgentCritic::new(wind.global_dim(), &[8], &mut rng);
        let y = distill_targets(&wind, &designs, &critic, 3, 99).unwrap();
        for (di, design) in designs.iter().enumerate() {
            let mut acc = 0.0;
            for rep in 0..3 {
                let env = wind.instantiate(design, distill_seed(99, di, rep)).unwrap();
                acc += critic.value(&env.global_state());
            }
            assert!((y[di] - acc / 3.0).abs() < 1e-12);
        }
        assert!(distill_targets(&wind, &designs, &critic, 0, 0).is_err());
    }

    #[test]
    fn distill_update_cases() {
        let mut rng = rng_from_seed(2);
        let designs: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, 2)).collect();
        // Critic already equal to its own outputs: zero loss, no movement.
        let mut critic = MlpEnvCritic::new(2, &[8], &mut rng);
        let targets: Vec<f64> = designs.iter().map(|d| critic.value(d)).collect();
        let before = critic.net.params.clone();
        let mut opt = Adam::new(critic.net.params.len(), 1e-2);
        let loss = distill_update(&mut critic, &designs, &targets, &mut opt).unwrap();
        assert!(loss.abs() < 1e-18);
        for (a, b) in critic.net.params.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // Constant critic c against targets t_i: loss = sum (c - t_i)^2.
        let mut constant = MlpEnvCritic::new(2, &[8], &mut rng);
        constant.net.params.iter_mut().for_each(|p| *p = 0.0);
        let targets = vec![1.0, -2.0, 0.5, 3.0];
        let expected: f64 = targets.iter().map(|t| t * t).sum();
        let loss = distill_update(&mut constant, &designs, &targets, &mut opt).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!(distill_update(&mut constant, &[], &[], &mut opt).is_err());
    }

    #[test]
    fn distill_regression_converges() {
        let mut rng = rng_from_seed(3);
        let target_fn = |d: &[f64]| d[0] * d[0] - 0.5 * d[1];
        let train: Vec<Vec<f64>> = (0..128)
            .map(|_| crate::rng::uniform_vec(&mut rng, 2, -1.0, 1.0))
            .collect();
        let held: Vec<Vec<f64>> = (0..64)
            .map(|_| crate::rng::uniform_vec(&mut rng, 2, -1.0, 1.0))
            .collect();
        let mut critic = MlpEnvCritic::new(2, &[32, 32], &mut rng);
        let mut opt = Adam::new(critic.net.params.len(), 5e-3);
        let held_loss = |critic: &MlpEnvCritic| {
            held.iter()
                .map(|d| (critic.value(d) - target_fn(d)).powi(2))
                .sum::<f64>()
                / held.len() as f64
        };
        let initial = held_loss(&critic);
        for _ in 0..200 {
            let minibatch: Vec<Vec<f64>> = (0..32)
                .map(|_| train[rng.random_range(0..train.len())].clone())
                .collect();
            let targets: Vec<f64> = minibatch.iter().map(|d| target_fn(d)).collect();
            distill_update(&mut critic, &minibatch, &targets, &mut opt).unwrap();
        }
        let final_loss = held_loss(&critic);
        assert!(
            final_loss < 0.1 * initial,
            "held-out loss {final_loss} vs initial {initial}"
        );
    }

    #[test]
    fn mc_targets_cases() {
        let mut log = ReturnLog::default();
        let a = vec![1.0, 2.0];
        let b = vec![3.0, 4.0];
        log.push(&a, 5.0);
        assert_eq!(mc_targets(&[a.clone()], &log).unwrap(), vec![5.0]);
        log.push(&a, 1.0);
        log.push(&a, 3.0);
        assert!((mc_targets(&[a.clone()], &log).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!(mc_targets(&[b], &log).is_err());
    }

    #[test]
    fn target_freshness_and_range() {
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let mut rng = rng_from_seed(4);
        let designs: Vec<Vec<f64>> = (0..4)
            .map(|_| scenario.uniform_generate(&mut rng).unwrap())
            .collect();
        let mut critic = AgentCritic::new(scenario.global_dim(), &[8], &mut rng);
        let before = distill_targets(&scenario, &designs, &critic, 2, 11).unwrap();
        let mut log = ReturnLog::default();
        for d in &designs {
            log.push(d, 100.0);
        }
        let mc_before = mc_targets(&designs, &log).unwrap();
        // Perturb psi: distilled targets move, MC targets do not.
        for p in critic.net.params.iter_mut() {
            *p += 0.5;
        }
        let after = distill_targets(&scenario, &designs, &critic, 2, 11).unwrap();
        assert!(before
            .iter()
            .zip(after.iter())
            .any(|(x, y)| (x - y).abs() > 1e-6));
        assert_eq!(mc_before, mc_targets(&designs, &log).unwrap());

        // Distilled targets stay inside the critic's value range over the
        // sampled initial states; MC targets can leave it.
        let mut values = Vec::new();
        for (di, d) in designs.iter().enumerate() {
            for rep in 0..2 {
                let env = scenario.instantiate(d, distill_seed(11, di, rep)).unwrap();
                values.push(critic.value(&env.global_state()));
            }
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for y in &after {
            assert!(*y >= lo - 1e-12 && *y <= hi + 1e-12);
        }
        assert!(mc_targets(&designs, &log).unwrap().iter().any(|y| *y > hi));
    }

    #[test]
    fn policy_shift_mc_lags_distilled() {
        let outcome = policy_shift_experiment(5, 8, 24, 30).unwrap();
        let d = outcome.distilled_flip.expect("distilled critic never flipped");
        assert!(
            d - outcome.swap_round < 3,
            "distilled flip at {d}, swap at {}",
            outcome.swap_round
        );
        let m = outcome.mc_flip.unwrap_or(24);
        assert!(
            m - outcome.swap_round >= 5,
            "mc flip at {m}, swap at {}",
            outcome.swap_round
        );
    }

    #[test]
    fn reinforce_moves_toward_optimum() {
        let center = [0.5, -0.3];
        let mut generator = ReinforceGenerator::new(2, 0.02);
        let mut rng = rng_from_seed(6);
        let dist = |g: &ReinforceGenerator| {
            g.mean()
                .iter()
                .zip(center.iter())
                .map(|(m, c)| (m - c) * (m - c))
                .sum::<f64>()
                .sqrt()
        };
        let initial = dist(&generator);
        for _ in 0..500 {
            let samples: Vec<Vec<f64>> = (0..16).map(|_| generator.sample(&mut rng)).collect();
            let rewards: Vec<f64> = samples
                .iter()
                .map(|x| {
                    -x.iter()
                        .zip(center.iter())
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                })
                .collect();
            generator.update(&samples, &rewards).unwrap();
        }
        let final_dist = dist(&generator);
        assert!(
            final_dist < 0.5 * initial,
            "distance {final_dist} vs initial {initial}"
        );
    }

    #[test]
    fn config_roundtrip_and_rejection() {
        let cfg = ExperimentConfig::default_for("nav_lite").unwrap();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config_hash(&cfg).unwrap(), config_hash(&back).unwrap());
        let bad = format!("{text}\n[scenario2]\nid = \"x\"\n");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let mut invalid = cfg.clone();
        invalid.diffusion.beta_start = 0.0;
        assert!(invalid.validate().is_err());
    }

    #[test]
    fn fixed_and_dr_design_streams() {
        let cfg = tiny_nav_cfg();
        let dir = temp_dir("fixed");
        run_experiment(&cfg, Method::Fixed, 7, &dir, None).unwrap();
        let lines = std::fs::read_to_string(dir.join("designs.jsonl")).unwrap();
        let mut unique = std::collections::BTreeSet::new();
        for line in lines.lines() {
            let record = DesignRecord::from_line(line).unwrap();
            unique.insert(design_key(&record.data));
        }
        assert_eq!(unique.len(), 1);

        let dir = temp_dir("dr");
        run_experiment(&cfg, Method::Dr, 7, &dir, None).unwrap();
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let lines = std::fs::read_to_string(dir.join("designs.jsonl")).unwrap();
        let mut lines = lines.lines();
        for i in 0..cfg.codesign.n_rl_iterations {
            let mut rng = rng_from_seed(iteration_seed(7, i) ^ 0x5a11);
            for _ in 0..cfg.codesign.batch_size {
                let expected = scenario.uniform_generate(&mut rng).unwrap();
                let record = DesignRecord::from_line(lines.next().unwrap()).unwrap();
                assert_eq!(record.data, expected);
            }
        }
    }

    #[test]
    fn zero_iterations_produces_initial_artifacts_only() {
        let mut cfg = tiny_nav_cfg();
        cfg.codesign.n_rl_iterations = 0;
        let dir = temp_dir("zero");
        let result = run_experiment(&cfg, Method::Dicode, 8, &dir, None).unwrap();
        assert!(result.metrics.is_empty());
        assert!(dir.join("prior.ckpt").exists());
        assert!(dir.join("marl.ckpt").exists());
        assert!(dir.join("env_critic.json").exists());
        assert_eq!(load_metrics(&dir.join("metrics.csv")).unwrap().len(), 0);
    }

    #[test]
    fn dicode_run_is_bit_identical_and_accounts_frames() {
        let cfg = tiny_nav_cfg();
        let dir_a = temp_dir("det-a");
        let dir_b = temp_dir("det-b");
        let a = run_experiment(&cfg, Method::Dicode, 9, &dir_a, None).unwrap();
        let b = run_experiment(&cfg, Method::Dicode, 9, &dir_b, None).unwrap();
        assert_eq!(a.metrics.len(), cfg.codesign.n_rl_iterations);
        for (x, y) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(x.iteration, y.iteration);
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.mean_return, y.mean_return);
            assert_eq!(x.distill_loss, y.distill_loss);
            assert_eq!(x.omega, y.omega);
            assert_eq!(x.buffer_size, y.buffer_size);
        }
        assert_eq!(
            std::fs::read_to_string(dir_a.join("designs.jsonl")).unwrap(),
            std::fs::read_to_string(dir_b.join("designs.jsonl")).unwrap()
        );
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let per_iter = cfg.codesign.batch_size
            * cfg.codesign.env_repeat
            * scenario.horizon()
            * scenario.n_agents();
        for (i, row) in a.metrics.iter().enumerate() {
            assert_eq!(row.frames, per_iter * (i + 1));
        }
        // Eval cadence: every eval_every iterations.
        assert_eq!(a.eval.len(), cfg.codesign.n_rl_iterations / cfg.codesign.eval_every);
    }

    #[test]
    fn metrics_csv_roundtrip() {
        let row = MetricsRow {
            iteration: 3,
            frames: 1024,
            mean_return: -1.25,
            distill_loss: 0.5,
            omega: 50.0,
            buffer_size: 12,
            wall_clock: 1.5,
        };
        assert_eq!(MetricsRow::from_csv(&row.to_csv()).unwrap(), row);
        assert!(MetricsRow::from_csv("1,2,3").is_err());
    }
}
