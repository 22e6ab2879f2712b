//! Designable multi-agent environments: a uniform procedural generator,
//! instantiation from a design to an initial state, stepping, validation and
//! potential-based reward shaping across three desk-scale scenarios.

pub mod nav;
pub mod warehouse;
pub mod wind;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicodeError, Result};
use crate::projection::ProjectionOperator;
use crate::rng::Prng;

pub use nav::NavSpec;
pub use warehouse::WarehouseSpec;
pub use wind::{wake_power, WindCondition, WindSpec};

/// Result of one environment step.
pub struct StepOutcome {
    /// Shaped per-agent rewards.
    pub rewards: Vec<f64>,
    /// Unshaped per-agent rewards (task events only).
    pub base_rewards: Vec<f64>,
    pub done: bool,
}

/// A running environment instance. Dynamics are deterministic given the
/// design, the instantiation seed and the action sequence.
pub trait Env {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Per-agent observations of the current state.
    fn observe(&self) -> Vec<Vec<f64>>;
    /// Global state for the centralized critic, including the design context.
    fn global_state(&self) -> Vec<f64>;
    /// Per-agent shaping potential of the current state.
    fn potential(&self) -> Vec<f64>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
    fn steps_taken(&self) -> usize;
}

/// Potential-based shaping, undiscounted: r = base + phi(s') - phi(s).
pub fn shaped_reward(prev_potential: &[f64], potential: &[f64], base: &[f64]) -> Vec<f64> {
    base.iter()
        .zip(potential.iter().zip(prev_potential.iter()))
        .map(|(b, (p, q))| b + p - q)
        .collect()
}

/// Validation outcome with one entry per violated rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok() -> Self {
        ValidationReport {
            valid: true,
            violations: Vec::new(),
        }
    }

    pub fn from_violations(violations: Vec<String>) -> Self {
        ValidationReport {
            valid: violations.is_empty(),
            violations,
        }
    }
}

/// A registered scenario: design domain, validation, projection binding,
/// uniform generator and instantiation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Scenario {
    Warehouse(WarehouseSpec),
    Nav(NavSpec),
    Wind(WindSpec),
}

impl Scenario {
    /// Desk-scale scenarios by id.
    pub fn from_id(id: &str) -> Result<Scenario> {
        match id {
            "warehouse_lite" => Ok(Scenario::Warehouse(WarehouseSpec::lite())),
            "nav_lite" => Ok(Scenario::Nav(NavSpec::lite())),
            "wind_lite" => Ok(Scenario::Wind(WindSpec::lite())),
            other => Err(DicodeError::Config(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn scenario_id(&self) -> &str {
        match self {
            Scenario::Warehouse(s) => &s.scenario_id,
            Scenario::Nav(s) => &s.scenario_id,
            Scenario::Wind(s) => &s.scenario_id,
        }
    }

    pub fn design_dim(&self) -> usize {
        match self {
            Scenario::Warehouse(s) => s.design_dim(),
            Scenario::Nav(s) => s.design_dim(),
            Scenario::Wind(s) => s.design_dim(),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Scenario::Warehouse(s) => s.n_agents,
            Scenario::Nav(s) => s.n_agents(),
            Scenario::Wind(s) => s.n_turbines,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Scenario::Warehouse(s) => s.horizon,
            Scenario::Nav(s) => s.horizon,
            Scenario::Wind(s) => s.horizon,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Scenario::Warehouse(s) => s.obs_dim(),
            Scenario::Nav(s) => s.obs_dim(),
            Scenario::Wind(s) => s.obs_dim(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Scenario::Warehouse(_) => warehouse::N_ACTIONS,
            Scenario::Nav(_) => nav::N_ACTIONS,
            Scenario::Wind(_) => wind::N_ACTIONS,
        }
    }

    pub fn global_dim(&self) -> usize {
        match self {
            Scenario::Warehouse(s) => s.global_dim(),
            Scenario::Nav(s) => s.global_dim(),
            Scenario::Wind(s) => s.global_dim(),
        }
    }

    /// The projection operator bound to this scenario.
    pub fn projection(&self) -> Box<dyn ProjectionOperator> {
        match self {
            Scenario::Warehouse(s) => Box::new(s.projection()),
            Scenario::Nav(s) => Box::new(s.projection()),
            Scenario::Wind(s) => Box::new(s.projection()),
        }
    }

    /// A valid design drawn uniformly, rejection-sampled against validation
    /// with a cap of 1000 retries.
    pub fn uniform_generate(&self, rng: &mut Prng) -> Result<Vec<f64>> {
        for _ in 0..1000 {
            let candidate = match self {
                Scenario::Warehouse(s) => s.uniform_candidate(rng),
                Scenario::Nav(s) => s.uniform_candidate(rng),
                Scenario::Wind(s) => s.uniform_candidate(rng),
            };
            if self.validate(&candidate).valid {
                return Ok(candidate);
            }
        }
        Err(DicodeError::Infeasible(format!(
            "uniform generator exceeded 1000 retries for {}",
            self.scenario_id()
        )))
    }

    pub fn validate(&self, design: &[f64]) -> ValidationReport {
        match self {
            Scenario::Warehouse(s) => s.validate(design),
            Scenario::Nav(s) => s.validate(design),
            Scenario::Wind(s) => s.validate(design),
        }
    }

    /// Instantiate a valid design into an initial environment state. The seed
    /// drives every stochastic element of instantiation.
    pub fn instantiate(&self, design: &[f64], seed: u64) -> Result<Box<dyn Env>> {
        let report = self.validate(design);
        if !report.valid {
            return Err(DicodeError::InvalidArgument(format!(
                "invalid design: {}",
                report.violations.join("; ")
            )));
        }
        match self {
            Scenario::Warehouse(s) => Ok(Box::new(s.instantiate(design, seed)?)),
            Scenario::Nav(s) => Ok(Box::new(s.instantiate(design, seed)?)),
            Scenario::Wind(s) => Ok(Box::new(s.instantiate(design, seed)?)),
        }
    }
}

/// Round-trip-stable serialized design record (one JSON object per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRecord {
    pub scenario_id: String,
    pub data: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl DesignRecord {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_line(line: &str) -> Result<DesignRecord> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Rollout an episode to the scenario horizon with an action callback.
/// Returns (sum of shaped team rewards, sum of base team rewards).
pub fn run_episode<F>(
    scenario: &Scenario,
    design: &[f64],
    seed: u64,
    mut act: F,
) -> Result<(f64, f64)>
where
    F: FnMut(&[Vec<f64>], &mut Prng) -> Vec<usize>,
{
    let mut env = scenario.instantiate(design, seed)?;
    let mut rng = crate::rng::rng_from_seed(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut shaped = 0.0;
    let mut base = 0.0;
    for _ in 0..scenario.horizon() {
        let obs = env.observe();
        let actions = act(&obs, &mut rng);
        let outcome = env.step(&actions)?;
        shaped += outcome.rewards.iter().sum::<f64>();
        base += outcome.base_rewards.iter().sum::<f64>();
        if outcome.done {
            break;
        }
    }
    Ok((shaped, base))
}

pub fn random_action(n_actions: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(0..n_actions)
}
