//! Cooperative warehouse pickup-and-delivery on a small grid. The design is a
//! binary shelf mask with one channel per box color; agents fetch requested
//! boxes, deliver them to the matching color goal, and return the empty box to
//! a free shelf of that color.

use serde::{Deserialize, Serialize};

use crate::envs::{shaped_reward, Env, StepOutcome, ValidationReport};
use crate::error::{DicodeError, Result};
use crate::projection::BinaryMaskProjection;
use crate::rng::{rng_from_seed, Prng};
use rand::Rng;

/// Up, right, down, left, pick/drop toggle, noop.
pub const N_ACTIONS: usize = 6;

const MOVES: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

// Shaping constants. An idle agent is pulled toward the nearest requested
// shelf, a loaded agent toward its delivery goal (with a constant bonus for
// holding a requested box), and an agent with an empty box back to a free
// shelf of the matching color.
const C_SEEK: f64 = 0.02;
const C_HOLD: f64 = 0.5;
const C_GOAL: f64 = 0.05;
const C_EMPTY: f64 = 0.1;
const C_RETURN: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarehouseSpec {
    pub scenario_id: String,
    pub grid_w: usize,
    pub grid_h: usize,
    pub n_agents: usize,
    pub n_colors: usize,
    pub shelves_per_color: usize,
    pub n_requests: usize,
    pub horizon: usize,
    /// One goal cell per color.
    pub goals: Vec<(usize, usize)>,
    /// One spawn cell per agent.
    pub spawns: Vec<(usize, usize)>,
}

impl WarehouseSpec {
    pub fn lite() -> Self {
        WarehouseSpec {
            scenario_id: "warehouse_lite".into(),
            grid_w: 8,
            grid_h: 8,
            n_agents: 2,
            n_colors: 2,
            shelves_per_color: 4,
            n_requests: 2,
            horizon: 128,
            goals: vec![(0, 3), (7, 4)],
            spawns: vec![(3, 0), (4, 7)],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn design_dim(&self) -> usize {
        self.n_colors * self.n_cells()
    }

    fn cell(&self, x: usize, y: usize) -> usize {
        y * self.grid_w + x
    }

    /// Cells that can never hold a shelf: goals and agent spawns.
    pub fn forbidden_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self
            .goals
            .iter()
            .chain(self.spawns.iter())
            .map(|&(x, y)| self.cell(x, y))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    pub fn projection(&self) -> BinaryMaskProjection {
        BinaryMaskProjection {
            scenario_id: self.scenario_id.clone(),
            grid_w: self.grid_w,
            grid_h: self.grid_h,
            counts: vec![self.shelves_per_color; self.n_colors],
            forbidden_cells: self.forbidden_cells(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        // Scalars: position, carry one-hot (none/requested/empty), carry
        // color one-hot, target deltas (requested shelf, goal, return shelf),
        // other-agent delta. Crop: 5x5 with channels shelf, occupied,
        // requested, other agent, out-of-bounds.
        2 + 3 + self.n_colors + 2 + 2 + 2 + 2 + 5 * 25
    }

    pub fn global_dim(&self) -> usize {
        // Map channels: one shelf mask per color, occupied, requested; then
        // per-agent features and the episode clock.
        (self.n_colors + 2) * self.n_cells() + self.n_agents * (2 + 3 + self.n_colors) + 1
    }

    /// A design with exact shelf counts on distinct allowed cells.
    pub fn uniform_candidate(&self, rng: &mut Prng) -> Vec<f64> {
        let forbidden = self.forbidden_cells();
        let mut allowed: Vec<usize> = (0..self.n_cells())
            .filter(|c| !forbidden.contains(c))
            .collect();
        let n_shelves = self.n_colors * self.shelves_per_color;
        // Partial Fisher-Yates: the first n_shelves entries are a uniform
        // sample without replacement.
        for i in 0..n_shelves {
            let j = rng.random_range(i..allowed.len());
            allowed.swap(i, j);
        }
        let mut design = vec![0.0; self.design_dim()];
        for (i, &cell) in allowed[..n_shelves].iter().enumerate() {
            let color = i / self.shelves_per_color;
            design[color * self.n_cells() + cell] = 1.0;
        }
        design
    }

    pub fn validate(&self, design: &[f64]) -> ValidationReport {
        let mut violations = Vec::new();
        if design.len() != self.design_dim() {
            violations.push(format!(
                "expected {} values, got {}",
                self.design_dim(),
                design.len()
            ));
            return ValidationReport::from_violations(violations);
        }
        for (i, &v) in design.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                violations.push(format!("non-binary value {v} at index {i}"));
                return ValidationReport::from_violations(violations);
            }
        }
        let n_cells = self.n_cells();
        for color in 0..self.n_colors {
            let count = design[color * n_cells..(color + 1) * n_cells]
                .iter()
                .filter(|&&v| v == 1.0)
                .count();
            if count != self.shelves_per_color {
                violations.push(format!(
                    "channel {color} has {count} shelves, expected {}",
                    self.shelves_per_color
                ));
            }
        }
        for cell in 0..n_cells {
            let set = (0..self.n_colors)
                .filter(|c| design[c * n_cells + cell] == 1.0)
                .count();
            if set > 1 {
                violations.push(format!("cell {cell} set in {set} channels"));
            }
        }
        for &cell in &self.forbidden_cells() {
            for color in 0..self.n_colors {
                if design[color * n_cells + cell] == 1.0 {
                    violations.push(format!("forbidden cell {cell} holds a shelf"));
                }
            }
        }
        ValidationReport::from_violations(violations)
    }

    pub fn instantiate(&self, design: &[f64], seed: u64) -> Result<WarehouseEnv> {
        let n_cells = self.n_cells();
        let mut shelves = Vec::new();
        for cell in 0..n_cells {
            for color in 0..self.n_colors {
                if design[color * n_cells + cell] == 1.0 {
                    shelves.push(Shelf {
                        x: (cell % self.grid_w) as i32,
                        y: (cell / self.grid_w) as i32,
                        color,
                    });
                }
            }
        }
        let mut rng = rng_from_seed(seed);
        let mut requested = vec![false; shelves.len()];
        let mut open: Vec<usize> = (0..shelves.len()).collect();
        for _ in 0..self.n_requests.min(shelves.len()) {
            let pick = rng.random_range(0..open.len());
            requested[open.swap_remove(pick)] = true;
        }
        let agents = self
            .spawns
            .iter()
            .map(|&(x, y)| AgentState {
                x: x as i32,
                y: y as i32,
                carrying: None,
            })
            .collect();
        Ok(WarehouseEnv {
            spec: self.clone(),
            occupied: vec![true; shelves.len()],
            shelves,
            requested,
            agents,
            rng,
            t: 0,
        })
    }
}

#[derive(Debug, Clone)]
struct Shelf {
    x: i32,
    y: i32,
    color: usize,
}

#[derive(Debug, Clone, Copy)]
struct Carry {
    color: usize,
    requested: bool,
}

#[derive(Debug, Clone)]
struct AgentState {
    x: i32,
    y: i32,
    carrying: Option<Carry>,
}

pub struct WarehouseEnv {
    spec: WarehouseSpec,
    shelves: Vec<Shelf>,
    /// Whether the shelf still holds its box.
    occupied: Vec<bool>,
    /// Whether the shelf box is an outstanding request (cleared on pickup).
    requested: Vec<bool>,
    agents: Vec<AgentState>,
    rng: Prng,
    t: usize,
}

impl WarehouseEnv {
    fn shelf_at(&self, x: i32, y: i32) -> Option<usize> {
        self.shelves.iter().position(|s| s.x == x && s.y == y)
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.spec.grid_w && (y as usize) < self.spec.grid_h
    }

    fn resample_request(&mut self) {
        let open: Vec<usize> = (0..self.shelves.len())
            .filter(|&s| self.occupied[s] && !self.requested[s])
            .collect();
        if !open.is_empty() {
            let pick = self.rng.random_range(0..open.len());
            self.requested[open[pick]] = true;
        }
    }

    fn nearest_dist<F>(&self, x: i32, y: i32, mut keep: F) -> Option<(i32, i32, i32)>
    where
        F: FnMut(usize, &Shelf) -> bool,
    {
        self.shelves
            .iter()
            .enumerate()
            .filter(|&(i, s)| keep(i, s))
            .map(|(_, s)| ((s.x - x).abs() + (s.y - y).abs(), s.x, s.y))
            .min()
            .map(|(d, sx, sy)| (d, sx, sy))
    }

    fn agent_potential(&self, i: usize) -> f64 {
        let a = &self.agents[i];
        match a.carrying {
            None => match self.nearest_dist(a.x, a.y, |s, _| self.occupied[s] && self.requested[s])
            {
                Some((d, _, _)) => -C_SEEK * d as f64,
                None => 0.0,
            },
            Some(Carry {
                color,
                requested: true,
            }) => {
                let (gx, gy) = self.spec.goals[color];
                let d = (gx as i32 - a.x).abs() + (gy as i32 - a.y).abs();
                C_HOLD - C_GOAL * d as f64
            }
            Some(Carry {
                color,
                requested: false,
            }) => {
                match self.nearest_dist(a.x, a.y, |s, shelf| {
                    !self.occupied[s] && shelf.color == color
                }) {
                    Some((d, _, _)) => -C_EMPTY - C_RETURN * d as f64,
                    None => -C_EMPTY,
                }
            }
        }
    }

    #[cfg(test)]
    fn carried_boxes(&self) -> usize {
        self.agents.iter().filter(|a| a.carrying.is_some()).count()
    }

    #[cfg(test)]
    fn boxes_in_system(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count() + self.carried_boxes()
    }
}

impl Env for WarehouseEnv {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let norm = (self.spec.grid_w.max(self.spec.grid_h) - 1) as f64;
        (0..self.spec.n_agents)
            .map(|i| {
                let a = &self.agents[i];
                let mut obs = Vec::with_capacity(self.spec.obs_dim());
                obs.push(a.x as f64 / norm);
                obs.push(a.y as f64 / norm);
                let (none, req, empty) = match a.carrying {
                    None => (1.0, 0.0, 0.0),
                    Some(Carry {
                        requested: true, ..
                    }) => (0.0, 1.0, 0.0),
                    Some(Carry {
                        requested: false, ..
                    }) => (0.0, 0.0, 1.0),
                };
                obs.extend_from_slice(&[none, req, empty]);
                for color in 0..self.spec.n_colors {
                    obs.push(match a.carrying {
                        Some(c) if c.color == color => 1.0,
                        _ => 0.0,
                    });
                }
                // Delta to the nearest outstanding requested shelf.
                match self.nearest_dist(a.x, a.y, |s, _| self.occupied[s] && self.requested[s]) {
                    Some((_, sx, sy)) => {
                        obs.push((sx - a.x) as f64 / norm);
                        obs.push((sy - a.y) as f64 / norm);
                    }
                    None => obs.extend_from_slice(&[0.0, 0.0]),
                }
                // Delta to the matching goal while holding a requested box.
                match a.carrying {
                    Some(Carry {
                        color,
                        requested: true,
                    }) => {
                        let (gx, gy) = self.spec.goals[color];
                        obs.push((gx as i32 - a.x) as f64 / norm);
                        obs.push((gy as i32 - a.y) as f64 / norm);
                    }
                    _ => obs.extend_from_slice(&[0.0, 0.0]),
                }
                // Delta to the nearest free matching shelf while holding an
                // empty box.
                match a.carrying {
                    Some(Carry {
                        color,
                        requested: false,
                    }) => {
                        match self.nearest_dist(a.x, a.y, |s, shelf| {
                            !self.occupied[s] && shelf.color == color
                        }) {
                            Some((_, sx, sy)) => {
                                obs.push((sx - a.x) as f64 / norm);
                                obs.push((sy - a.y) as f64 / norm);
                            }
                            None => obs.extend_from_slice(&[0.0, 0.0]),
                        }
                    }
                    _ => obs.extend_from_slice(&[0.0, 0.0]),
                }
                // Delta to the other agent (mean over teammates).
                let (mut dx, mut dy, mut n) = (0.0, 0.0, 0.0);
                for (j, other) in self.agents.iter().enumerate() {
                    if j != i {
                        dx += (other.x - a.x) as f64;
                        dy += (other.y - a.y) as f64;
                        n += 1.0;
                    }
                }
                obs.push(dx / (n * norm));
                obs.push(dy / (n * norm));
                // 5x5 egocentric crop, channel-major.
                let mut crop = vec![0.0; 5 * 25];
                for dy in -2i32..=2 {
                    for dx in -2i32..=2 {
                        let (x, y) = (a.x + dx, a.y + dy);
                        let idx = ((dy + 2) * 5 + (dx + 2)) as usize;
                        if !self.in_bounds(x, y) {
                            crop[4 * 25 + idx] = 1.0;
                            continue;
                        }
                        if let Some(s) = self.shelf_at(x, y) {
                            crop[idx] = 1.0;
                            if self.occupied[s] {
                                crop[25 + idx] = 1.0;
                            }
                            if self.requested[s] {
                                crop[2 * 25 + idx] = 1.0;
                            }
                        }
                        if self
                            .agents
                            .iter()
                            .enumerate()
                            .any(|(j, o)| j != i && o.x == x && o.y == y)
                        {
                            crop[3 * 25 + idx] = 1.0;
                        }
                    }
                }
                obs.extend_from_slice(&crop);
                obs
            })
            .collect()
    }

    fn global_state(&self) -> Vec<f64> {
        let n_cells = self.spec.n_cells();
        let mut state = vec![0.0; self.spec.global_dim()];
        for (s, shelf) in self.shelves.iter().enumerate() {
            let cell = shelf.y as usize * self.spec.grid_w + shelf.x as usize;
            state[shelf.color * n_cells + cell] = 1.0;
            if self.occupied[s] {
                state[self.spec.n_colors * n_cells + cell] = 1.0;
            }
            if self.requested[s] {
                state[(self.spec.n_colors + 1) * n_cells + cell] = 1.0;
            }
        }
        let norm = (self.spec.grid_w.max(self.spec.grid_h) - 1) as f64;
        let mut k = (self.spec.n_colors + 2) * n_cells;
        for a in &self.agents {
            state[k] = a.x as f64 / norm;
            state[k + 1] = a.y as f64 / norm;
            match a.carrying {
                None => state[k + 2] = 1.0,
                Some(Carry {
                    requested: true, ..
                }) => state[k + 3] = 1.0,
                Some(Carry {
                    requested: false, ..
                }) => state[k + 4] = 1.0,
            }
            if let Some(c) = a.carrying {
                state[k + 5 + c.color] = 1.0;
            }
            k += 5 + self.spec.n_colors;
        }
        state[k] = self.t as f64 / self.spec.horizon as f64;
        state
    }

    fn potential(&self) -> Vec<f64> {
        (0..self.spec.n_agents)
            .map(|i| self.agent_potential(i))
            .collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if actions.len() != self.spec.n_agents {
            return Err(DicodeError::InvalidArgument(format!(
                "expected {} actions, got {}",
                self.spec.n_agents,
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= N_ACTIONS) {
            return Err(DicodeError::InvalidArgument(format!(
                "action {a} out of range"
            )));
        }
        let prev_potential = self.potential();
        let mut base = vec![0.0; self.spec.n_agents];
        for i in 0..self.spec.n_agents {
            match actions[i] {
                m @ 0..=3 => {
                    let (dx, dy) = MOVES[m];
                    let (nx, ny) = (self.agents[i].x + dx, self.agents[i].y + dy);
                    let blocked = !self.in_bounds(nx, ny)
                        || self
                            .agents
                            .iter()
                            .enumerate()
                            .any(|(j, o)| j != i && o.x == nx && o.y == ny);
                    if !blocked {
                        self.agents[i].x = nx;
                        self.agents[i].y = ny;
                    }
                }
                4 => {
                    let (x, y) = (self.agents[i].x, self.agents[i].y);
                    match self.agents[i].carrying {
                        None => {
                            if let Some(s) = self.shelf_at(x, y) {
                                if self.occupied[s] && self.requested[s] {
                                    self.occupied[s] = false;
                                    self.requested[s] = false;
                                    self.agents[i].carrying = Some(Carry {
                                        color: self.shelves[s].color,
                                        requested: true,
                                    });
                                }
                            }
                        }
                        Some(Carry {
                            color,
                            requested: true,
                        }) => {
                            let (gx, gy) = self.spec.goals[color];
                            if x == gx as i32 && y == gy as i32 {
                                base[i] += 1.0;
                                self.agents[i].carrying = Some(Carry {
                                    color,
                                    requested: false,
                                });
                                self.resample_request();
                            }
                        }
                        Some(Carry {
                            color,
                            requested: false,
                        }) => {
                            if let Some(s) = self.shelf_at(x, y) {
                                if !self.occupied[s] && self.shelves[s].color == color {
                                    self.occupied[s] = true;
                                    self.agents[i].carrying = None;
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        self.t += 1;
        let potential = self.potential();
        Ok(StepOutcome {
            rewards: shaped_reward(&prev_potential, &potential, &base),
            base_rewards: base,
            done: self.t >= self.spec.horizon,
        })
    }

    fn steps_taken(&self) -> usize {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{random_action, Scenario};

    fn lite() -> Scenario {
        Scenario::from_id("warehouse_lite").unwrap()
    }

    #[test]
    fn validate_catches_violations() {
        let spec = WarehouseSpec::lite();
        let mut rng = rng_from_seed(7);
        let design = spec.uniform_candidate(&mut rng);
        assert!(spec.validate(&design).valid);

        let mut short_count = design.clone();
        let idx = short_count.iter().position(|&v| v == 1.0).unwrap();
        short_count[idx] = 0.0;
        assert!(!spec.validate(&short_count).valid);

        let mut forbidden = design.clone();
        let cell = spec.forbidden_cells()[0];
        let free = forbidden.iter().position(|&v| v == 1.0).unwrap();
        forbidden[free] = 0.0;
        forbidden[cell] = 1.0;
        assert!(!spec.validate(&forbidden).valid);

        let mut fuzzy = design.clone();
        fuzzy[idx] = 0.5;
        assert!(!spec.validate(&fuzzy).valid);
    }

    #[test]
    fn uniform_generator_covers_allowed_cells() {
        let scenario = lite();
        let spec = WarehouseSpec::lite();
        let mut rng = rng_from_seed(11);
        let n_cells = spec.n_cells();
        let mut hits = vec![0usize; n_cells];
        let n_samples = 400;
        for _ in 0..n_samples {
            let d = scenario.uniform_generate(&mut rng).unwrap();
            assert!(spec.validate(&d).valid);
            for cell in 0..n_cells {
                if (0..spec.n_colors).any(|c| d[c * n_cells + cell] == 1.0) {
                    hits[cell] += 1;
                }
            }
        }
        let forbidden = spec.forbidden_cells();
        let allowed = n_cells - forbidden.len();
        let expected = n_samples as f64 * 8.0 / allowed as f64;
        for cell in 0..n_cells {
            if forbidden.contains(&cell) {
                assert_eq!(hits[cell], 0, "forbidden cell {cell} used");
            } else {
                let h = hits[cell] as f64;
                assert!(
                    (h - expected).abs() < 6.0 * expected.sqrt(),
                    "cell {cell}: {h} hits vs expected {expected}"
                );
            }
        }
    }

    #[test]
    fn box_conservation_under_random_play() {
        let scenario = lite();
        let spec = WarehouseSpec::lite();
        let mut rng = rng_from_seed(3);
        for ep in 0..20 {
            let design = scenario.uniform_generate(&mut rng).unwrap();
            let mut env = spec.instantiate(&design, 100 + ep).unwrap();
            let total = spec.n_colors * spec.shelves_per_color;
            for _ in 0..spec.horizon {
                let actions: Vec<usize> =
                    (0..2).map(|_| random_action(N_ACTIONS, &mut rng)).collect();
                env.step(&actions).unwrap();
                assert_eq!(env.boxes_in_system(), total);
                let outstanding = env.requested.iter().filter(|&&r| r).count()
                    + env
                        .agents
                        .iter()
                        .filter(|a| matches!(a.carrying, Some(Carry { requested: true, .. })))
                        .count();
                assert_eq!(outstanding, spec.n_requests);
            }
        }
    }

    #[test]
    fn deterministic_given_seed_and_actions() {
        let scenario = lite();
        let mut rng = rng_from_seed(5);
        let design = scenario.uniform_generate(&mut rng).unwrap();
        let actions: Vec<Vec<usize>> = (0..128)
            .map(|_| (0..2).map(|_| random_action(N_ACTIONS, &mut rng)).collect())
            .collect();
        let run = |seed: u64| {
            let mut env = scenario.instantiate(&design, seed).unwrap();
            let mut trace = vec![env.global_state()];
            for a in &actions {
                env.step(a).unwrap();
                trace.push(env.global_state());
            }
            trace
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43), "instantiation seed should matter");
    }

    #[test]
    fn shaping_telescopes() {
        let scenario = lite();
        let mut rng = rng_from_seed(9);
        for ep in 0..100 {
            let design = scenario.uniform_generate(&mut rng).unwrap();
            let mut env = scenario.instantiate(&design, ep).unwrap();
            let phi0: f64 = env.potential().iter().sum();
            let mut shaped = 0.0;
            let mut base = 0.0;
            loop {
                let actions: Vec<usize> =
                    (0..2).map(|_| random_action(N_ACTIONS, &mut rng)).collect();
                let out = env.step(&actions).unwrap();
                shaped += out.rewards.iter().sum::<f64>();
                base += out.base_rewards.iter().sum::<f64>();
                if out.done {
                    break;
                }
            }
            let phi_t: f64 = env.potential().iter().sum();
            assert!(
                (shaped - base - (phi_t - phi0)).abs() < 1e-9,
                "episode {ep}: shaping does not telescope"
            );
        }
    }

    #[test]
    fn scripted_pick_deliver_return() {
        let spec = WarehouseSpec::lite();
        // One shelf of color 0 next to the color-0 goal at (0, 3); the rest
        // placed out of the way on the bottom rows.
        let mut design = vec![0.0; spec.design_dim()];
        let n_cells = spec.n_cells();
        let place = |d: &mut Vec<f64>, color: usize, x: usize, y: usize| {
            d[color * n_cells + y * 8 + x] = 1.0;
        };
        place(&mut design, 0, 1, 3);
        place(&mut design, 0, 1, 6);
        place(&mut design, 0, 2, 6);
        place(&mut design, 0, 3, 6);
        place(&mut design, 1, 5, 6);
        place(&mut design, 1, 6, 6);
        place(&mut design, 1, 7, 6);
        place(&mut design, 1, 5, 5);
        assert!(spec.validate(&design).valid);
        // Find a seed whose initial requests include the shelf at (1, 3).
        let target = (1i32, 3i32);
        let seed = (0..200)
            .find(|&s| {
                let env = spec.instantiate(&design, s).unwrap();
                env.shelves
                    .iter()
                    .enumerate()
                    .any(|(i, sh)| (sh.x, sh.y) == target && env.requested[i])
            })
            .expect("some seed requests the target shelf");
        let mut env = spec.instantiate(&design, seed).unwrap();
        // Agent 0 walks from (3, 0) to (1, 3), picks, steps to the goal at
        // (0, 3), delivers, and returns the empty box to the now-free shelf.
        let noop = 5;
        let script: Vec<usize> = vec![3, 3, 2, 2, 2, 4, 3, 4, 1, 4];
        let mut delivered = 0.0;
        for &a in &script {
            let out = env.step(&[a, noop]).unwrap();
            delivered += out.base_rewards[0];
        }
        assert_eq!(delivered, 1.0);
        assert!(env.agents[0].carrying.is_none(), "empty box was returned");
        assert_eq!(env.boxes_in_system(), 8);
    }

    #[test]
    fn shelves_do_not_block_movement() {
        let spec = WarehouseSpec::lite();
        let mut design = vec![0.0; spec.design_dim()];
        let n_cells = spec.n_cells();
        // Two adjacent color-0 shelves at (1, 3) and (2, 3).
        for &(c, x, y) in &[
            (0usize, 1usize, 3usize),
            (0, 2, 3),
            (0, 1, 6),
            (0, 2, 6),
            (1, 5, 6),
            (1, 6, 6),
            (1, 7, 6),
            (1, 5, 5),
        ] {
            design[c * n_cells + y * 8 + x] = 1.0;
        }
        assert!(spec.validate(&design).valid);
        let seed = (0..200)
            .find(|&s| {
                let env = spec.instantiate(&design, s).unwrap();
                env.shelves
                    .iter()
                    .enumerate()
                    .any(|(i, sh)| (sh.x, sh.y) == (2, 3) && env.requested[i])
            })
            .unwrap();
        // Walk to (2, 3), pick up, then move left across the occupied shelf
        // at (1, 3): only walls and other agents block moves.
        let mut env = spec.instantiate(&design, seed).unwrap();
        for &a in &[3usize, 2, 2, 2, 4] {
            env.step(&[a, 5]).unwrap();
        }
        assert!(env.agents[0].carrying.is_some());
        env.step(&[3, 5]).unwrap();
        assert_eq!((env.agents[0].x, env.agents[0].y), (1, 3));
        // A move into the other agent's cell is still rejected.
        let mut env2 = spec.instantiate(&design, seed).unwrap();
        env2.agents[0].x = env2.agents[1].x;
        env2.agents[0].y = env2.agents[1].y - 1;
        env2.step(&[2, 5]).unwrap();
        assert_eq!(env2.agents[0].y, env2.agents[1].y - 1);
    }
}
