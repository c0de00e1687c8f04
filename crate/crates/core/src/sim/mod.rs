//! Microscopic multi-lane freeway simulator: IDM longitudinal dynamics,
//! binomial demand with entrance queueing, a two-intent lane-change model
//! with safety checking, finite-duration lane changes, and safety-critical
//! event injection (lane degrade, vehicle stop).

mod config;
mod lanechange;
mod record;
mod vehicle;
mod world;

pub use config::{
    BehaviorConfig, DemandConfig, DemandLevel, EventKind, RoadConfig, ScenarioEvent,
};
pub use lanechange::{
    anticipated_speed, keep_right_intent, lane_change_intent, required_decel, safety_check,
    speed_gain_intent, LaneView, NeighborView,
};
pub use record::{ChangeEvent, EpisodeRecord, IntentEvent, TrajectorySample, VehicleRecord};
pub use vehicle::{Direction, IntentReason, LcState, Vehicle};
pub use world::{World, WorldConfig};

pub use crate::env::scenario::{ScenarioKind, ScenarioSpec};
