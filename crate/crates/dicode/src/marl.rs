//! Multi-agent PPO with shared-parameter categorical policies and a
//! centralized agent critic: rollout collection, generalized advantage
//! estimation, clipped updates and policy evaluation.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::Scenario;
use crate::error::{DicodeError, Result};
use crate::nn::{clip_grad_norm, Activation, Adam, Mlp};
use crate::rng::{rng_from_seed, Prng};
use rand::Rng;

pub const MARL_CHECKPOINT_MAGIC: &str = "DICODE-MARL-v1";

/// Shared-parameter categorical policy over per-agent observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    pub net: Mlp,
    pub n_actions: usize,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

impl Policy {
    pub fn new(obs_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_actions);
        Policy {
            net: Mlp::new(&dims, Activation::Tanh, rng),
            n_actions,
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Vec<f64> {
        log_softmax(&self.net.forward(obs))
            .iter()
            .map(|lp| lp.exp())
            .collect()
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> f64 {
        log_softmax(&self.net.forward(obs))[action]
    }

    /// Sample an action by inverse CDF; returns (action, log probability).
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> (usize, f64) {
        let log_probs = log_softmax(&self.net.forward(obs));
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for (a, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return (a, *lp);
            }
        }
        let last = log_probs.len() - 1;
        (last, log_probs[last])
    }

    pub fn greedy(&self, obs: &[f64]) -> usize {
        let logits = self.net.forward(obs);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    }
}

/// Return normalization statistics applied by the centralized critic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats {
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// Centralized critic over the global state (design context included). The
/// network regresses normalized returns; `value` rescales to raw returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentCritic {
    pub net: Mlp,
    pub norm: NormStats,
}

impl AgentCritic {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        AgentCritic {
            net: Mlp::new(&dims, Activation::Tanh, rng),
            norm: NormStats::default(),
        }
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.net.forward(state)[0] * self.norm.std + self.norm.mean
    }
}

/// One episode of a rollout. `states` and `values` carry T+1 entries, the
/// last being the bootstrap state at the horizon.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub design_index: usize,
    pub seed: u64,
    /// t -> agent -> observation.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<Vec<f64>>,
    /// Summed (team) shaped reward per step.
    pub team_rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EpisodeData {
    pub fn team_return(&self) -> f64 {
        self.team_rewards.iter().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub episodes: Vec<EpisodeData>,
}

impl RolloutBatch {
    pub fn n_frames(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.actions.len() * e.actions.first().map_or(0, |a| a.len()))
            .sum()
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.team_return()).sum::<f64>() / self.episodes.len() as f64
    }
}

/// Instantiate each design `episodes_per_design` times and roll the policy to
/// the horizon, recording transitions and value estimates. Fully determined
/// by `base_seed`.
pub fn rollout(
    scenario: &Scenario,
    designs: &[Vec<f64>],
    policy: &Policy,
    critic: &AgentCritic,
    episodes_per_design: usize,
    base_seed: u64,
) -> Result<RolloutBatch> {
    let mut episodes = Vec::with_capacity(designs.len() * episodes_per_design);
    for (di, design) in designs.iter().enumerate() {
        for rep in 0..episodes_per_design {
            let seed = base_seed
                .wrapping_add((di as u64) << 20)
                .wrapping_add(rep as u64);
            let mut env = scenario.instantiate(design, seed)?;
            let mut rng = rng_from_seed(seed ^ 0xd1ce_0de0_5eed_0001);
            let mut ep = EpisodeData {
                design_index: di,
                seed,
                obs: Vec::new(),
                states: Vec::new(),
                actions: Vec::new(),
                log_probs: Vec::new(),
                team_rewards: Vec::new(),
                values: Vec::new(),
                advantages: Vec::new(),
                returns: Vec::new(),
            };
            loop {
                let state = env.global_state();
                ep.values.push(critic.value(&state));
                ep.states.push(state);
                let obs = env.observe();
                let mut actions = Vec::with_capacity(obs.len());
                let mut log_probs = Vec::with_capacity(obs.len());
                for o in &obs {
                    let (a, lp) = policy.sample(o, &mut rng);
                    actions.push(a);
                    log_probs.push(lp);
                }
                let out = env.step(&actions)?;
                ep.obs.push(obs);
                ep.actions.push(actions);
                ep.log_probs.push(log_probs);
                ep.team_rewards.push(out.rewards.iter().sum());
                if out.done {
                    let state = env.global_state();
                    ep.values.push(critic.value(&state));
                    ep.states.push(state);
                    break;
                }
            }
            episodes.push(ep);
        }
    }
    Ok(RolloutBatch { episodes })
}

/// Generalized advantage estimation in place: advantages by exponentially
/// weighted TD residuals, returns = advantages + values.
pub fn gae(batch: &mut RolloutBatch, gamma: f64, lam: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lam) {
        return Err(DicodeError::InvalidArgument(format!(
            "gamma and lambda must lie in [0, 1], got ({gamma}, {lam})"
        )));
    }
    for ep in &mut batch.episodes {
        let t_len = ep.team_rewards.len();
        if ep.values.len() != t_len + 1 {
            return Err(DicodeError::ShapeMismatch(format!(
                "episode has {} rewards but {} values",
                t_len,
                ep.values.len()
            )));
        }
        ep.advantages = vec![0.0; t_len];
        ep.returns = vec![0.0; t_len];
        let mut acc = 0.0;
        for t in (0..t_len).rev() {
            let delta = ep.team_rewards[t] + gamma * ep.values[t + 1] - ep.values[t];
            acc = delta + gamma * lam * acc;
            ep.advantages[t] = acc;
            ep.returns[t] = acc + ep.values[t];
        }
        if ep.advantages.iter().any(|a| !a.is_finite()) {
            return Err(DicodeError::Numeric("non-finite advantage".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lam: f64,
    pub lr: f64,
    pub n_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub huber_delta: f64,
    pub advantage_norm: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            lam: 0.95,
            lr: 3e-4,
            n_epochs: 4,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            huber_delta: 1.0,
            advantage_norm: false,
        }
    }
}

/// Restartless cosine decay from `base` over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One PPO update over the batch: clipped surrogate + entropy bonus on the
/// policy, Huber regression on the critic, minibatched over epochs with
/// gradient-norm clipping.
pub fn ppo_update(
    policy: &mut Policy,
    critic: &mut AgentCritic,
    opt_policy: &mut Adam,
    opt_critic: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut Prng,
) -> Result<LossReport> {
    // Flatten (episode, t, agent) policy samples and (episode, t) critic
    // samples.
    struct PolicySample<'a> {
        obs: &'a [f64],
        action: usize,
        old_log_prob: f64,
        advantage: f64,
    }
    let mut policy_samples = Vec::new();
    let mut critic_samples: Vec<(&[f64], f64)> = Vec::new();
    for ep in &batch.episodes {
        for t in 0..ep.actions.len() {
            if ep.advantages.len() != ep.actions.len() {
                return Err(DicodeError::InvalidArgument(
                    "run gae before ppo_update".into(),
                ));
            }
            critic_samples.push((&ep.states[t], ep.returns[t]));
            for (i, o) in ep.obs[t].iter().enumerate() {
                policy_samples.push(PolicySample {
                    obs: o,
                    action: ep.actions[t][i],
                    old_log_prob: ep.log_probs[t][i],
                    advantage: ep.advantages[t],
                });
            }
        }
    }
    if policy_samples.is_empty() {
        return Err(DicodeError::InvalidArgument("empty rollout batch".into()));
    }
    if cfg.advantage_norm {
        let n = policy_samples.len() as f64;
        let mean = policy_samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = policy_samples
            .iter()
            .map(|s| (s.advantage - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-8);
        for s in &mut policy_samples {
            s.advantage = (s.advantage - mean) / std;
        }
    }

    let mut totals = LossReport {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
    };
    let mut n_minibatches = 0usize;
    let mut order: Vec<usize> = (0..policy_samples.len()).collect();
    let mut critic_order: Vec<usize> = (0..critic_samples.len()).collect();
    for _ in 0..cfg.n_epochs {
        // Fisher-Yates shuffle for minibatching.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for i in (1..critic_order.len()).rev() {
            critic_order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let mut grads = vec![0.0; policy.net.params.len()];
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            let mut entropy_sum = 0.0;
            let mut clipped = 0usize;
            for &idx in chunk {
                let s = &policy_samples[idx];
                let (logits, trace) = policy.net.forward_traced(s.obs);
                let log_probs = log_softmax(&logits);
                let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
                let ratio = (log_probs[s.action] - s.old_log_prob).exp();
                let clip_ratio = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                let u1 = ratio * s.advantage;
                let u2 = clip_ratio * s.advantage;
                let entropy: f64 = probs
                    .iter()
                    .zip(log_probs.iter())
                    .map(|(p, lp)| -p * lp)
                    .sum();
                loss += (-u1.min(u2) - cfg.entropy_coef * entropy) * scale;
                entropy_sum += entropy;
                // d(loss)/d(logits), averaged over the minibatch.
                let mut d_logits = vec![0.0; probs.len()];
                if u1 <= u2 {
                    // Surrogate gradient active.
                    for (i, dl) in d_logits.iter_mut().enumerate() {
                        let indicator = if i == s.action { 1.0 } else { 0.0 };
                        *dl -= s.advantage * ratio * (indicator - probs[i]);
                    }
                } else {
                    clipped += 1;
                }
                for (i, dl) in d_logits.iter_mut().enumerate() {
                    *dl += cfg.entropy_coef * probs[i] * (log_probs[i] + entropy);
                }
                for dl in d_logits.iter_mut() {
                    *dl *= scale;
                }
                policy.net.backward(&trace, &d_logits, &mut grads);
            }
            if !loss.is_finite() {
                return Err(DicodeError::Numeric("non-finite policy loss".into()));
            }
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt_policy.step(&mut policy.net.params, &grads);
            totals.policy_loss += loss;
            totals.entropy += entropy_sum / chunk.len() as f64;
            totals.clip_fraction += clipped as f64 / chunk.len() as f64;
            n_minibatches += 1;
        }
        for chunk in critic_order.chunks(cfg.minibatch_size.max(1)) {
            let mut grads = vec![0.0; critic.net.params.len()];
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &idx in chunk {
                let (state, ret) = critic_samples[idx];
                let target = (ret - critic.norm.mean) / critic.norm.std;
                let (out, trace) = critic.net.forward_traced(state);
                let err = out[0] - target;
                let delta = cfg.huber_delta;
                let (l, dl) = if err.abs() <= delta {
                    (0.5 * err * err, err)
                } else {
                    (delta * (err.abs() - 0.5 * delta), delta * err.signum())
                };
                loss += cfg.value_coef * l * scale;
                critic
                    .net
                    .backward(&trace, &[cfg.value_coef * dl * scale], &mut grads);
            }
            if !loss.is_finite() {
                return Err(DicodeError::Numeric("non-finite value loss".into()));
            }
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt_critic.step(&mut critic.net.params, &grads);
            totals.value_loss += loss;
        }
    }
    let n = n_minibatches.max(1) as f64;
    totals.policy_loss /= n;
    totals.entropy /= n;
    totals.clip_fraction /= n;
    totals.value_loss /= n;
    Ok(totals)
}

/// Mean and standard error of the summed team return per design.
pub fn evaluate(
    scenario: &Scenario,
    policy: &Policy,
    critic: &AgentCritic,
    designs: &[Vec<f64>],
    episodes_per_design: usize,
    base_seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(designs.len());
    for (di, design) in designs.iter().enumerate() {
        let batch = rollout(
            scenario,
            std::slice::from_ref(design),
            policy,
            critic,
            episodes_per_design,
            base_seed.wrapping_add((di as u64) << 32),
        )?;
        let returns: Vec<f64> = batch.episodes.iter().map(|e| e.team_return()).collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let stderr = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        out.push((mean, stderr));
    }
    Ok(out)
}

/// Discounted-return statistics of a uniform-random policy, used to seed the
/// critic's normalization for scenarios that enable it.
pub fn random_policy_return_stats(
    scenario: &Scenario,
    n_episodes: usize,
    gamma: f64,
    base_seed: u64,
) -> Result<NormStats> {
    let mut returns = Vec::new();
    let mut rng = rng_from_seed(base_seed);
    for ep in 0..n_episodes {
        let design = scenario.uniform_generate(&mut rng)?;
        let mut env = scenario.instantiate(&design, base_seed.wrapping_add(ep as u64))?;
        let mut rewards = Vec::new();
        loop {
            let actions: Vec<usize> = (0..scenario.n_agents())
                .map(|_| rng.random_range(0..scenario.n_actions()))
                .collect();
            let out = env.step(&actions)?;
            rewards.push(out.rewards.iter().sum::<f64>());
            if out.done {
                break;
            }
        }
        let mut acc = 0.0;
        for r in rewards.iter().rev() {
            acc = r + gamma * acc;
            returns.push(acc);
        }
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(NormStats {
        mean,
        std: var.sqrt().max(1e-6),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MarlCheckpoint {
    scenario_id: String,
    config_hash: String,
    policy: Policy,
    critic: AgentCritic,
}

pub fn save_marl(
    path: &Path,
    policy: &Policy,
    critic: &AgentCritic,
    scenario_id: &str,
    config_hash: &str,
) -> Result<()> {
    let ckpt = MarlCheckpoint {
        scenario_id: scenario_id.to_string(),
        config_hash: config_hash.to_string(),
        policy: policy.clone(),
        critic: critic.clone(),
    };
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{MARL_CHECKPOINT_MAGIC}")?;
    serde_json::to_writer(&mut file, &ckpt)?;
    Ok(())
}

pub fn load_marl(path: &Path) -> Result<(Policy, AgentCritic, String, String)> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim() != MARL_CHECKPOINT_MAGIC {
        return Err(DicodeError::Checkpoint(format!(
            "expected header {MARL_CHECKPOINT_MAGIC}, found {:?}",
            header.trim()
        )));
    }
    let ckpt: MarlCheckpoint = serde_json::from_reader(reader)?;
    Ok((ckpt.policy, ckpt.critic, ckpt.scenario_id, ckpt.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_policy(seed: u64) -> Policy {
        Policy::new(1, &[8], 2, &mut rng_from_seed(seed))
    }

    /// One-state bandit: action 0 pays 1, action 1 pays 0.
    fn bandit_batch(policy: &Policy, critic: &AgentCritic, n: usize, rng: &mut Prng) -> RolloutBatch {
        let obs = vec![1.0];
        let mut episodes = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, lp) = policy.sample(&obs, rng);
            let reward = if a == 0 { 1.0 } else { 0.0 };
            let v0 = critic.value(&obs);
            episodes.push(EpisodeData {
                design_index: 0,
                seed: 0,
                obs: vec![vec![obs.clone()]],
                states: vec![obs.clone(), obs.clone()],
                actions: vec![vec![a]],
                log_probs: vec![vec![lp]],
                team_rewards: vec![reward],
                values: vec![v0, 0.0],
                advantages: Vec::new(),
                returns: Vec::new(),
            });
        }
        RolloutBatch { episodes }
    }

    #[test]
    fn distributions_are_normalized() {
        let policy = tiny_policy(1);
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let obs = vec![crate::rng::standard_normal(&mut rng)];
            let dist = policy.distribution(&obs);
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
            assert!(dist.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn gae_closed_forms() {
        let mut rng = rng_from_seed(3);
        let t_len = 7;
        let rewards: Vec<f64> = (0..t_len)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let values: Vec<f64> = (0..=t_len)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let make = |rewards: &[f64], values: &[f64]| RolloutBatch {
            episodes: vec![EpisodeData {
                design_index: 0,
                seed: 0,
                obs: vec![Vec::new(); rewards.len()],
                states: vec![Vec::new(); values.len()],
                actions: vec![Vec::new(); rewards.len()],
                log_probs: vec![Vec::new(); rewards.len()],
                team_rewards: rewards.to_vec(),
                values: values.to_vec(),
                advantages: Vec::new(),
                returns: Vec::new(),
            }],
        };
        // lam = 0: one-step TD residual.
        let mut batch = make(&rewards, &values);
        gae(&mut batch, 0.9, 0.0).unwrap();
        for t in 0..t_len {
            let expected = rewards[t] + 0.9 * values[t + 1] - values[t];
            assert!((batch.episodes[0].advantages[t] - expected).abs() < 1e-12);
            assert!(
                (batch.episodes[0].returns[t] - (expected + values[t])).abs() < 1e-12
            );
        }
        // lam = 1, gamma = 1 with terminal value 0: undiscounted MC return.
        let mut zero_tail = values.clone();
        zero_tail[t_len] = 0.0;
        let mut batch = make(&rewards, &zero_tail);
        gae(&mut batch, 1.0, 1.0).unwrap();
        for t in 0..t_len {
            let mc: f64 = rewards[t..].iter().sum();
            assert!((batch.episodes[0].advantages[t] - (mc - zero_tail[t])).abs() < 1e-12);
        }
        // 3-step hand recursion with V = 0, gamma 0.99, lam 0.9.
        let rewards = [1.0, -2.0, 0.5];
        let values = [0.0, 0.0, 0.0, 0.0];
        let mut batch = make(&rewards, &values);
        gae(&mut batch, 0.99, 0.9).unwrap();
        let k = 0.99 * 0.9;
        let a2 = 0.5;
        let a1 = -2.0 + k * a2;
        let a0 = 1.0 + k * a1;
        for (got, want) in batch.episodes[0].advantages.iter().zip([a0, a1, a2]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(gae(&mut batch, 1.5, 0.5).is_err());
    }

    #[test]
    fn zero_advantages_freeze_surrogate() {
        // With zero advantages and zero entropy coefficient, an update leaves
        // the policy parameters bit-identical (all gradients vanish).
        let mut policy = tiny_policy(5);
        let mut critic = AgentCritic::new(1, &[8], &mut rng_from_seed(6));
        let mut rng = rng_from_seed(7);
        let mut batch = bandit_batch(&policy, &critic, 32, &mut rng);
        for ep in &mut batch.episodes {
            ep.advantages = vec![0.0];
            ep.returns = vec![ep.values[0]];
        }
        let before = policy.net.params.clone();
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut op = Adam::new(policy.net.params.len(), cfg.lr);
        let mut oc = Adam::new(critic.net.params.len(), cfg.lr);
        ppo_update(&mut policy, &mut critic, &mut op, &mut oc, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(policy.net.params, before);
    }

    #[test]
    fn lr_zero_is_bit_identical() {
        let mut policy = tiny_policy(8);
        let mut critic = AgentCritic::new(1, &[8], &mut rng_from_seed(9));
        let mut rng = rng_from_seed(10);
        let mut batch = bandit_batch(&policy, &critic, 32, &mut rng);
        gae(&mut batch, 0.99, 0.95).unwrap();
        let p_before = policy.net.params.clone();
        let c_before = critic.net.params.clone();
        let cfg = PpoConfig {
            lr: 0.0,
            ..PpoConfig::default()
        };
        let mut op = Adam::new(policy.net.params.len(), 0.0);
        let mut oc = Adam::new(critic.net.params.len(), 0.0);
        ppo_update(&mut policy, &mut critic, &mut op, &mut oc, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(policy.net.params, p_before);
        assert_eq!(critic.net.params, c_before);
    }

    #[test]
    fn bandit_converges() {
        let mut policy = tiny_policy(11);
        let mut critic = AgentCritic::new(1, &[8], &mut rng_from_seed(12));
        let cfg = PpoConfig {
            lr: 0.01,
            minibatch_size: 64,
            n_epochs: 2,
            entropy_coef: 0.001,
            ..PpoConfig::default()
        };
        let mut op = Adam::new(policy.net.params.len(), cfg.lr);
        let mut oc = Adam::new(critic.net.params.len(), cfg.lr);
        let mut rng = rng_from_seed(13);
        for _ in 0..200 {
            let mut batch = bandit_batch(&policy, &critic, 64, &mut rng);
            gae(&mut batch, 0.99, 0.95).unwrap();
            ppo_update(&mut policy, &mut critic, &mut op, &mut oc, &batch, &cfg, &mut rng)
                .unwrap();
        }
        let dist = policy.distribution(&[1.0]);
        assert!(dist[0] >= 0.95, "p(best action) = {}", dist[0]);
        // Critic learned the bandit value under the greedy-ish policy.
        assert!((critic.value(&[1.0]) - 1.0).abs() < 0.2);
    }

    #[test]
    fn rollout_is_deterministic_and_respects_horizon() {
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let mut rng = rng_from_seed(14);
        let design = scenario.uniform_generate(&mut rng).unwrap();
        let policy = Policy::new(scenario.obs_dim(), &[16], scenario.n_actions(), &mut rng);
        let critic = AgentCritic::new(scenario.global_dim(), &[16], &mut rng);
        let a = rollout(&scenario, &[design.clone()], &policy, &critic, 2, 99).unwrap();
        let b = rollout(&scenario, &[design.clone()], &policy, &critic, 2, 99).unwrap();
        assert_eq!(a.episodes.len(), 2);
        for (x, y) in a.episodes.iter().zip(b.episodes.iter()) {
            assert_eq!(x.actions, y.actions);
            assert_eq!(x.team_rewards, y.team_rewards);
        }
        assert_eq!(a.episodes[0].actions.len(), scenario.horizon());
        assert_eq!(a.n_frames(), 2 * scenario.horizon() * scenario.n_agents());
    }

    #[test]
    fn shared_parameters_permute_with_agents() {
        let policy = tiny_policy(15);
        let obs_a = vec![0.3];
        let obs_b = vec![-0.9];
        let forward = [policy.greedy(&obs_a), policy.greedy(&obs_b)];
        let swapped = [policy.greedy(&obs_b), policy.greedy(&obs_a)];
        assert_eq!(forward[0], swapped[1]);
        assert_eq!(forward[1], swapped[0]);
    }

    #[test]
    fn evaluate_deterministic_env_and_policy() {
        // Nav is deterministic at instantiation; a near-deterministic policy
        // gives identical episodes, hence zero standard error.
        let scenario = Scenario::from_id("nav_lite").unwrap();
        let mut rng = rng_from_seed(16);
        let design = scenario.uniform_generate(&mut rng).unwrap();
        let mut policy = Policy::new(scenario.obs_dim(), &[8], scenario.n_actions(), &mut rng);
        // Saturate the logits so sampling is a point mass.
        for p in policy.net.params.iter_mut() {
            *p *= 1e4;
        }
        let critic = AgentCritic::new(scenario.global_dim(), &[8], &mut rng);
        let out = evaluate(&scenario, &policy, &critic, &[design], 4, 21).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].1.abs() < 1e-12, "stderr {}", out[0].1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = std::env::temp_dir().join("dicode-marl-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("marl.ckpt");
        let policy = tiny_policy(17);
        let critic = AgentCritic::new(1, &[8], &mut rng_from_seed(18));
        save_marl(&path, &policy, &critic, "nav_lite", "abc123").unwrap();
        let (p2, c2, sid, hash) = load_marl(&path).unwrap();
        assert_eq!(p2.net.params, policy.net.params);
        assert_eq!(c2.net.params, critic.net.params);
        assert_eq!(sid, "nav_lite");
        assert_eq!(hash, "abc123");
        std::fs::write(&path, "WRONG\n{}").unwrap();
        assert!(load_marl(&path).is_err());
    }
}
