//! Freeway lane-change regulation toolkit.
//!
//! The crate combines four layers that share one set of road/driver
//! parameters:
//!
//! * [`sim`] — a microscopic multi-lane freeway simulator (IDM car
//!   following, a two-intent lane-change model, safety-critical events).
//! * [`grid`] — aggregation of vehicle states onto fixed lane grids and
//!   construction of the local observation windows the agents see.
//! * [`env`] — the gym-style regulation environment: per-grid allow/disallow
//!   actions are broadcast to connected vehicles, rewards score local speed
//!   and density.
//! * [`qlearn`] — shared-parameter Double DQN over all grid agents.
//!
//! [`macroflow`] holds a finite-volume solver for the coupled per-lane
//! second-order traffic PDE system with lane-change source terms. It is a
//! verification oracle for conservation, gating semantics, and locality —
//! training always runs on the microscopic simulator. [`metrics`] computes
//! the evaluation measures (mean speed, CO2 surrogate, TTC exposure, TET,
//! lane-change counts, action-rate tables).

pub mod csvio;
pub mod env;
pub mod error;
pub mod grid;
pub mod idm;
pub mod macroflow;
pub mod metrics;
pub mod qlearn;
pub mod sim;
pub mod stats;

pub use env::{EnvConfig, GridAction, GridActionField, RegulationEnv, RewardWeights, StepOutcome};
pub use error::{ConfigError, SimError};
pub use grid::{GridField, GridSpec, GridState, Observation, OBS_DIM};
pub use idm::IdmParams;
pub use macroflow::{MacroField, PdeParams, TransitionRates};
pub use metrics::{EmissionParams, EpisodeMetrics, SafetyConfig};
pub use qlearn::{QNetwork, ReplayBuffer, TrainConfig};
pub use sim::{
    BehaviorConfig, DemandConfig, DemandLevel, RoadConfig, ScenarioEvent, ScenarioKind,
    ScenarioSpec, Vehicle, World,
};
