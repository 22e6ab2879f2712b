//! Cooperative yaw control on a small wind farm. The design is the turbine
//! layout inside a unit box subject to a minimum spacing; each agent trims one
//! turbine's yaw toward the episode wind while wakes couple the turbines.

use rand::Rng;
use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};

use crate::envs::{Env, StepOutcome, ValidationReport};
use crate::error::{DicodeError, Result};
use crate::projection::{MinDistanceProjection, Rect};
use crate::rng::{rng_from_seed, standard_normal, Prng};

/// Yaw decrement, hold, yaw increment.
pub const N_ACTIONS: usize = 3;

/// Rotor radius in box units.
const ROTOR_RADIUS: f64 = 0.03;
/// Wake expansion coefficient of the top-hat wake model.
const WAKE_EXPANSION: f64 = 0.05;
/// Axial induction factor.
const INDUCTION: f64 = 1.0 / 3.0;
/// Reference wind speed for power normalization.
const U_REF: f64 = 8.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindCondition {
    pub speed: f64,
    /// Direction the wind blows toward, radians.
    pub direction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindSpec {
    pub scenario_id: String,
    pub n_turbines: usize,
    pub horizon: usize,
    pub d_min: f64,
    pub bounds: Rect,
    pub yaw_step: f64,
    /// Weibull scale of the wind speed draw.
    pub speed_scale: f64,
    /// Weibull shape of the wind speed draw.
    pub speed_shape: f64,
    /// Mean and spread of the dominant wind direction.
    pub direction_mean: f64,
    pub direction_std: f64,
}

impl WindSpec {
    pub fn lite() -> Self {
        WindSpec {
            scenario_id: "wind_lite".into(),
            n_turbines: 4,
            horizon: 32,
            d_min: 0.18,
            bounds: Rect {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 1.0,
                max_y: 1.0,
            },
            yaw_step: 0.15,
            speed_scale: 8.0,
            speed_shape: 2.0,
            direction_mean: std::f64::consts::FRAC_PI_4,
            direction_std: 0.3,
        }
    }

    pub fn design_dim(&self) -> usize {
        2 * self.n_turbines
    }

    pub fn obs_dim(&self) -> usize {
        // Own position, own yaw (sin, cos), wind (sin, cos, speed), own
        // power, deltas to the other turbines.
        2 + 2 + 3 + 1 + 2 * (self.n_turbines - 1)
    }

    pub fn global_dim(&self) -> usize {
        2 * self.n_turbines + 2 * self.n_turbines + 3 + 1
    }

    pub fn projection(&self) -> MinDistanceProjection {
        MinDistanceProjection {
            scenario_id: self.scenario_id.clone(),
            d_min: self.d_min,
            bounds: self.bounds,
            tie_seed: 0x77ab_91d3,
        }
    }

    pub fn uniform_candidate(&self, rng: &mut Prng) -> Vec<f64> {
        (0..self.design_dim())
            .map(|i| {
                if i % 2 == 0 {
                    rng.random_range(self.bounds.min_x..=self.bounds.max_x)
                } else {
                    rng.random_range(self.bounds.min_y..=self.bounds.max_y)
                }
            })
            .collect()
    }

    pub fn layout(&self, design: &[f64]) -> Vec<(f64, f64)> {
        design.chunks(2).map(|c| (c[0], c[1])).collect()
    }

    pub fn validate(&self, design: &[f64]) -> ValidationReport {
        let mut violations = Vec::new();
        if design.len() != self.design_dim() {
            violations.push(format!(
                "expected {} coordinates, got {}",
                self.design_dim(),
                design.len()
            ));
            return ValidationReport::from_violations(violations);
        }
        let pts = self.layout(design);
        for (i, &p) in pts.iter().enumerate() {
            if !p.0.is_finite() || !p.1.is_finite() || !self.bounds.contains(p) {
                violations.push(format!("turbine {i} at {p:?} outside bounds"));
            }
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                if d < self.d_min - 1e-9 {
                    violations.push(format!(
                        "turbines {i} and {j} at distance {d} < {}",
                        self.d_min
                    ));
                }
            }
        }
        ValidationReport::from_violations(violations)
    }

    pub fn instantiate(&self, design: &[f64], seed: u64) -> Result<WindEnv> {
        let mut rng = rng_from_seed(seed);
        let weibull = Weibull::new(self.speed_scale, self.speed_shape)
            .map_err(|e| DicodeError::InvalidArgument(format!("bad Weibull parameters: {e}")))?;
        let speed = weibull.sample(&mut rng).clamp(0.5, 25.0);
        let direction = self.direction_mean + self.direction_std * standard_normal(&mut rng);
        Ok(WindEnv {
            spec: self.clone(),
            layout: self.layout(design),
            yaws: vec![0.0; self.n_turbines],
            wind: WindCondition { speed, direction },
            t: 0,
        })
    }
}

/// Per-turbine power under a Jensen top-hat wake model. A turbine strictly
/// downstream of another, within the linearly expanding wake cone, loses
/// speed by 2a (r0 / (r0 + k d))^2; deficits combine as the root of the sum
/// of squares. Power scales with the cube of effective speed and of the
/// cosine of the yaw misalignment (floored at zero).
pub fn wake_power(layout: &[(f64, f64)], yaws: &[f64], wind: &WindCondition) -> Vec<f64> {
    let (wx, wy) = (wind.direction.cos(), wind.direction.sin());
    layout
        .iter()
        .enumerate()
        .map(|(i, &(xi, yi))| {
            let mut sq = 0.0;
            for (j, &(xj, yj)) in layout.iter().enumerate() {
                if j == i {
                    continue;
                }
                let (dx, dy) = (xi - xj, yi - yj);
                let downstream = dx * wx + dy * wy;
                if downstream <= 1e-12 {
                    continue;
                }
                let crosswind = (-dx * wy + dy * wx).abs();
                let wake_radius = ROTOR_RADIUS + WAKE_EXPANSION * downstream;
                if crosswind < wake_radius {
                    let deficit = 2.0 * INDUCTION * (ROTOR_RADIUS / wake_radius).powi(2);
                    sq += deficit * deficit;
                }
            }
            let combined = sq.sqrt().min(1.0);
            let align = (yaws[i] - wind.direction).cos().max(0.0);
            (wind.speed / U_REF).powi(3) * (1.0 - combined).powi(3) * align.powi(3)
        })
        .collect()
}

pub struct WindEnv {
    spec: WindSpec,
    layout: Vec<(f64, f64)>,
    yaws: Vec<f64>,
    wind: WindCondition,
    t: usize,
}

impl WindEnv {
    fn powers(&self) -> Vec<f64> {
        wake_power(&self.layout, &self.yaws, &self.wind)
    }
}

impl Env for WindEnv {
    fn n_agents(&self) -> usize {
        self.spec.n_turbines
    }

    fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let powers = self.powers();
        (0..self.spec.n_turbines)
            .map(|i| {
                let (x, y) = self.layout[i];
                let mut obs = Vec::with_capacity(self.spec.obs_dim());
                obs.push(x);
                obs.push(y);
                obs.push(self.yaws[i].sin());
                obs.push(self.yaws[i].cos());
                obs.push(self.wind.direction.sin());
                obs.push(self.wind.direction.cos());
                obs.push(self.wind.speed / U_REF);
                obs.push(powers[i]);
                for (j, &(ox, oy)) in self.layout.iter().enumerate() {
                    if j != i {
                        obs.push(ox - x);
                        obs.push(oy - y);
                    }
                }
                obs
            })
            .collect()
    }

    fn global_state(&self) -> Vec<f64> {
        let mut state = Vec::with_capacity(self.spec.global_dim());
        for &(x, y) in &self.layout {
            state.push(x);
            state.push(y);
        }
        for &yaw in &self.yaws {
            state.push(yaw.sin());
            state.push(yaw.cos());
        }
        state.push(self.wind.direction.sin());
        state.push(self.wind.direction.cos());
        state.push(self.wind.speed / U_REF);
        state.push(self.t as f64 / self.spec.horizon as f64);
        state
    }

    fn potential(&self) -> Vec<f64> {
        vec![0.0; self.spec.n_turbines]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if actions.len() != self.spec.n_turbines {
            return Err(DicodeError::InvalidArgument(format!(
                "expected {} actions, got {}",
                self.spec.n_turbines,
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= N_ACTIONS) {
            return Err(DicodeError::InvalidArgument(format!(
                "action {a} out of range"
            )));
        }
        for (yaw, &a) in self.yaws.iter_mut().zip(actions.iter()) {
            *yaw += (a as f64 - 1.0) * self.spec.yaw_step;
            *yaw = yaw.clamp(-std::f64::consts::PI, std::f64::consts::PI);
        }
        self.t += 1;
        let powers = self.powers();
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        let base = vec![mean; self.spec.n_turbines];
        Ok(StepOutcome {
            rewards: base.clone(),
            base_rewards: base,
            done: self.t >= self.spec.horizon,
        })
    }

    fn steps_taken(&self) -> usize {
        self.t
    }
}
