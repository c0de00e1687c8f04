use crate::idm::IdmParams;
use serde::{Deserialize, Serialize};

/// Lateral direction of a lane change. Lane 0 is the rightmost lane, so a
/// left change increases the lane index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    /// Target lane for a change out of `lane`, if it exists.
    pub fn target(self, lane: usize, n_lanes: usize) -> Option<usize> {
        match self {
            Direction::Left => (lane + 1 < n_lanes).then_some(lane + 1),
            Direction::Right => lane.checked_sub(1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// Why an intent fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentReason {
    KeepRight,
    SpeedGain,
}

/// Lane-change progress. The lateral traverse takes `lc_duration` seconds;
/// the lane index flips when the vehicle crosses the lane boundary at the
/// halfway point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LcState {
    None,
    Changing { dir: Direction, elapsed: f64 },
}

impl LcState {
    pub fn is_changing(&self) -> bool {
        matches!(self, LcState::Changing { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            LcState::None => "none",
            LcState::Changing {
                dir: Direction::Left,
                ..
            } => "left",
            LcState::Changing {
                dir: Direction::Right,
                ..
            } => "right",
        }
    }
}

/// One simulated car.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u64,
    /// Current lane index (0 = rightmost); grid membership follows this.
    pub lane: usize,
    /// The other lane a mid-change vehicle still straddles.
    pub shadow_lane: Option<usize>,
    pub x: f64,
    pub v: f64,
    /// Realized acceleration of the last step.
    pub accel: f64,
    pub is_cv: bool,
    pub idm: IdmParams,
    /// Nominal time gap, or the raised value inside a degraded section.
    pub effective_time_gap: f64,
    pub lc_state: LcState,
    pub spawn_time: f64,
    pub cumulative_co2: f64,
    pub cumulative_ttc_exposure: f64,

    // Deliberation clocks (absolute times) for the two intent kinds, and the
    // post-change cooldown.
    pub(crate) next_speed_gain_eval: f64,
    pub(crate) next_keep_right_eval: f64,
    pub(crate) cooldown_until: f64,
    /// Set while a stop event controls this vehicle.
    pub(crate) stop_controlled: bool,

    // Metric-window accumulators (only advanced once metrics are active).
    pub(crate) window_time: f64,
    pub(crate) window_distance: f64,
    pub(crate) window_co2: f64,
    pub(crate) window_steps: u64,
    pub(crate) window_ttc_steps: u64,
    pub(crate) window_lane_changes: u32,
}

impl Vehicle {
    pub fn new(id: u64, lane: usize, x: f64, v: f64, is_cv: bool, idm: IdmParams, t: f64) -> Self {
        Self {
            id,
            lane,
            shadow_lane: None,
            x,
            v,
            accel: 0.0,
            is_cv,
            idm,
            effective_time_gap: idm.time_gap,
            lc_state: LcState::None,
            spawn_time: t,
            cumulative_co2: 0.0,
            cumulative_ttc_exposure: 0.0,
            next_speed_gain_eval: t,
            next_keep_right_eval: t,
            cooldown_until: t,
            stop_controlled: false,
            window_time: 0.0,
            window_distance: 0.0,
            window_co2: 0.0,
            window_steps: 0,
            window_ttc_steps: 0,
            window_lane_changes: 0,
        }
    }
}
