//! The regulation environment: per-grid allow/disallow actions are applied
//! to the microscopic simulator under zero-order hold, local rewards score
//! speed and density over each agent's neighborhood, and episodes advance at
//! the environment timescale.

pub mod scenario;

use crate::error::{ConfigError, SimError};
use crate::grid::{aggregate, observe, GridField, GridSpec, Observation, VehicleObs};
use crate::sim::{Direction, World};
use scenario::ScenarioSpec;
use serde::{Deserialize, Serialize};

/// Per-grid permission pair. Encoded as index `2*allow_left + allow_right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAction {
    pub allow_left: bool,
    pub allow_right: bool,
}

pub const N_ACTIONS: usize = 4;

impl GridAction {
    pub const ALLOW_ALL: GridAction = GridAction {
        allow_left: true,
        allow_right: true,
    };
    pub const BLOCK_ALL: GridAction = GridAction {
        allow_left: false,
        allow_right: false,
    };

    pub fn index(self) -> usize {
        2 * self.allow_left as usize + self.allow_right as usize
    }

    pub fn from_index(idx: usize) -> Self {
        GridAction {
            allow_left: idx & 0b10 != 0,
            allow_right: idx & 0b01 != 0,
        }
    }

    pub fn allows(self, dir: Direction) -> bool {
        match dir {
            Direction::Left => self.allow_left,
            Direction::Right => self.allow_right,
        }
    }
}

/// One action per (lane, grid).
#[derive(Debug, Clone, PartialEq)]
pub struct GridActionField {
    pub n_lanes: usize,
    pub n_grids: usize,
    grid_length: f64,
    data: Vec<GridAction>,
}

impl GridActionField {
    pub fn filled(n_lanes: usize, n_grids: usize, grid_length: f64, a: GridAction) -> Self {
        Self {
            n_lanes,
            n_grids,
            grid_length,
            data: vec![a; n_lanes * n_grids],
        }
    }

    pub fn all_allow(n_lanes: usize, n_grids: usize, grid_length: f64) -> Self {
        Self::filled(n_lanes, n_grids, grid_length, GridAction::ALLOW_ALL)
    }

    pub fn all_block(n_lanes: usize, n_grids: usize, grid_length: f64) -> Self {
        Self::filled(n_lanes, n_grids, grid_length, GridAction::BLOCK_ALL)
    }

    pub fn for_spec(spec: &GridSpec, a: GridAction) -> Self {
        Self::filled(spec.n_lanes, spec.n_grids, spec.grid_length_m(), a)
    }

    pub fn get(&self, lane: usize, grid: usize) -> GridAction {
        self.data[lane * self.n_grids + grid]
    }

    pub fn set(&mut self, lane: usize, grid: usize, a: GridAction) {
        self.data[lane * self.n_grids + grid] = a;
    }

    /// Gate check at a vehicle's current position.
    pub fn allows(&self, lane: usize, x: f64, dir: Direction) -> bool {
        let grid = ((x / self.grid_length) as usize).min(self.n_grids - 1);
        self.get(lane, grid).allows(dir)
    }

    pub fn actions(&self) -> &[GridAction] {
        &self.data
    }
}

/// Reward weights and normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    /// Speed normalization bound (m/s).
    pub v_max: f64,
    /// Density normalization bound (veh per lane-meter).
    pub rho_max: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            v_max: 24.59,
            rho_max: 0.133,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if (self.w1 + self.w2 - 1.0).abs() > 1e-9 || self.w1 < 0.0 || self.w2 < 0.0 {
            return Err(ConfigError::invalid("reward weights", "w1 + w2 must equal 1"));
        }
        if self.v_max <= 0.0 || self.rho_max <= 0.0 {
            return Err(ConfigError::invalid("reward bounds", "must be positive"));
        }
        Ok(())
    }
}

/// Environment stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Environment step (s): actions are held constant this long.
    pub env_step: f64,
    /// Reward sampling interval (s).
    pub reward_step: f64,
    /// Episode length in environment steps.
    pub episode_length: u32,
    /// Warm-up (s) run under all-allow before metrics and stepping start.
    pub warmup: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            env_step: 4.0,
            reward_step: 1.0,
            episode_length: 400,
            warmup: 120.0,
        }
    }
}

fn integral_ratio(num: f64, den: f64) -> Option<u32> {
    let r = num / den;
    ((r - r.round()).abs() < 1e-9 && r.round() >= 1.0).then(|| r.round() as u32)
}

impl EnvConfig {
    pub fn validate(&self, sim_step: f64) -> Result<(u32, u32), ConfigError> {
        let samples = integral_ratio(self.env_step, self.reward_step).ok_or_else(|| {
            ConfigError::invalid("env_step", "must be a multiple of reward_step")
        })?;
        let substeps = integral_ratio(self.reward_step, sim_step).ok_or_else(|| {
            ConfigError::invalid("reward_step", "must be a multiple of sim_step")
        })?;
        if self.warmup < 0.0 {
            return Err(ConfigError::invalid("warmup", "must be non-negative"));
        }
        Ok((samples, substeps))
    }
}

/// Reward neighborhood of agent `(lane, grid)`: the adjacent lanes and grids
/// within two grid lengths, clipped to the road.
pub fn neighborhood(
    lane: usize,
    grid: usize,
    n_lanes: usize,
    n_grids: usize,
) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1).flat_map(move |dl| {
        (-2i64..=2).filter_map(move |dg| {
            let l = lane as i64 + dl;
            let g = grid as i64 + dg;
            (l >= 0 && l < n_lanes as i64 && g >= 0 && g < n_grids as i64)
                .then_some((l as usize, g as usize))
        })
    })
}

/// Local reward of agent `(lane, grid)`: returns `(r, r1, r2)` where `r1`
/// averages normalized speed and `r2` one minus normalized density over the
/// clipped neighborhood, and `r = w1*r1 + w2*r2`.
pub fn reward(field: &GridField, lane: usize, grid: usize, w: &RewardWeights) -> (f64, f64, f64) {
    let spec = &field.spec;
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    let mut n = 0usize;
    for (l, g) in neighborhood(lane, grid, spec.n_lanes, spec.n_grids) {
        let cell = field.get(l, g);
        r1 += (cell.v / w.v_max).clamp(0.0, 1.0);
        r2 += 1.0 - (cell.rho / w.rho_max).clamp(0.0, 1.0);
        n += 1;
    }
    let r1 = r1 / n as f64;
    let r2 = r2 / n as f64;
    (w.w1 * r1 + w.w2 * r2, r1, r2)
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub done: bool,
}

/// POMDP wrapper around one [`World`].
#[derive(Debug, Clone)]
pub struct RegulationEnv {
    spec: ScenarioSpec,
    grid: GridSpec,
    reward_samples: u32,
    substeps_per_reward: u32,
    world: Option<World>,
    step_idx: u32,
    last_field: Option<GridField>,
    action_log: Vec<GridActionField>,
}

impl RegulationEnv {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let grid = GridSpec::new(spec.road.length, spec.grid_length, spec.road.lanes)
            .map_err(SimError::Config)?;
        let (reward_samples, substeps_per_reward) = spec
            .env
            .validate(spec.road.sim_step)
            .map_err(SimError::Config)?;
        Ok(Self {
            spec,
            grid,
            reward_samples,
            substeps_per_reward,
            world: None,
            step_idx: 0,
            last_field: None,
            action_log: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_agents(&self) -> usize {
        self.grid.n_agents()
    }

    pub fn agent_index(&self, lane: usize, grid: usize) -> usize {
        lane * self.grid.n_grids + grid
    }

    pub fn all_allow_actions(&self) -> GridActionField {
        GridActionField::for_spec(&self.grid, GridAction::ALLOW_ALL)
    }

    pub fn world(&self) -> &World {
        self.world.as_ref().expect("environment not reset")
    }

    pub fn world_mut(&mut self) -> &mut World {
        self.world.as_mut().expect("environment not reset")
    }

    pub fn action_log(&self) -> &[GridActionField] {
        &self.action_log
    }

    pub fn step_idx(&self) -> u32 {
        self.step_idx
    }

    pub fn done(&self) -> bool {
        self.step_idx >= self.spec.env.episode_length
    }

    /// Aggregate field at the most recent reward sample.
    pub fn current_field(&self) -> &GridField {
        self.last_field.as_ref().expect("environment not reset")
    }

    fn aggregate_world(&self) -> GridField {
        let world = self.world();
        let obs = world.vehicles().map(|v| VehicleObs {
            lane: v.lane,
            x: v.x,
            v: v.v,
            is_cv: v.is_cv,
        });
        aggregate(obs, &self.grid, self.spec.reward.v_max)
    }

    pub fn observations(&self) -> Vec<Observation> {
        let field = self.current_field();
        let w = &self.spec.reward;
        (0..self.grid.n_lanes)
            .flat_map(|lane| (0..self.grid.n_grids).map(move |grid| (lane, grid)))
            .map(|(lane, grid)| observe(field, lane, grid, w.v_max, w.rho_max))
            .collect()
    }

    /// Rebuild the world for a new episode: fresh demand with the given seed,
    /// event parameters drawn from the scenario's randomization ranges, and a
    /// warm-up run under all-allow permissions.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>, SimError> {
        let mut world = self.spec.build_world(seed)?;
        if self.spec.demand_config(seed).seed_road {
            let v = world.spawn_speed();
            world.seed_equilibrium(v)?;
        }
        let allow = self.all_allow_actions();
        let warm_steps = (self.spec.env.warmup / self.spec.road.sim_step).round() as u64;
        for _ in 0..warm_steps {
            world.step(&allow)?;
        }
        world.begin_metrics();
        self.world = Some(world);
        self.step_idx = 0;
        self.action_log.clear();
        self.last_field = Some(self.aggregate_world());
        Ok(self.observations())
    }

    /// Advance one environment step under zero-order hold: the action field
    /// stays fixed for `env_step` seconds while rewards are sampled every
    /// `reward_step` seconds and averaged.
    pub fn env_step(&mut self, actions: &GridActionField) -> Result<StepOutcome, SimError> {
        assert!(
            actions.n_lanes == self.grid.n_lanes && actions.n_grids == self.grid.n_grids,
            "action field shape mismatch"
        );
        let n = self.n_agents();
        let mut rewards = vec![0.0; n];
        let mut r1s = vec![0.0; n];
        let mut r2s = vec![0.0; n];
        for _ in 0..self.reward_samples {
            {
                let world = self.world.as_mut().expect("environment not reset");
                for _ in 0..self.substeps_per_reward {
                    world.step(actions)?;
                }
            }
            let field = self.aggregate_world();
            for lane in 0..self.grid.n_lanes {
                for grid in 0..self.grid.n_grids {
                    let (r, r1, r2) = reward(&field, lane, grid, &self.spec.reward);
                    let idx = self.agent_index(lane, grid);
                    rewards[idx] += r;
                    r1s[idx] += r1;
                    r2s[idx] += r2;
                }
            }
            self.last_field = Some(field);
        }
        let samples = self.reward_samples as f64;
        for v in rewards.iter_mut().chain(r1s.iter_mut()).chain(r2s.iter_mut()) {
            *v /= samples;
        }
        self.action_log.push(actions.clone());
        self.step_idx += 1;
        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            r1: r1s,
            r2: r2s,
            done: self.done(),
        })
    }
}
