use super::vehicle::Direction;
use serde::{Deserialize, Serialize};

/// Per-vehicle episode summary. `window_*` fields only accumulate once the
/// metric window is active (after warm-up).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u64,
    pub is_cv: bool,
    pub spawn_time: f64,
    pub despawn_time: Option<f64>,
    pub window_time: f64,
    pub window_distance: f64,
    pub window_co2: f64,
    pub window_steps: u64,
    pub window_ttc_steps: u64,
    pub window_lane_changes: u32,
    pub cumulative_co2: f64,
    pub cumulative_ttc_exposure: f64,
}

/// An executed lane change, logged at the midpoint crossing where the lane
/// index flips.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub t: f64,
    pub vehicle: u64,
    pub is_cv: bool,
    pub dir: Direction,
    pub from_lane: usize,
    pub to_lane: usize,
    /// Grid the vehicle occupied when the intent passed gating.
    pub origin_grid: usize,
}

/// A lane-change intent that survived deliberation (before gating and the
/// safety check).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntentEvent {
    pub t: f64,
    pub vehicle: u64,
    pub is_cv: bool,
    pub dir: Direction,
    pub lane: usize,
    pub grid: usize,
}

/// One trajectory sample, written when trajectory recording is on.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub t: f64,
    pub id: u64,
    pub lane: usize,
    pub x: f64,
    pub v: f64,
    pub accel: f64,
    pub is_cv: bool,
    pub lc: &'static str,
}

/// Everything the metrics layer needs from one finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub sim_step: f64,
    pub ttc_threshold: f64,
    /// Start of the metric window (absolute sim time), if it was opened.
    pub metrics_start: Option<f64>,
    pub end_time: f64,
    /// Despawned vehicles first, then the ones still on the road.
    pub vehicles: Vec<VehicleRecord>,
    pub changes: Vec<ChangeEvent>,
    pub intents: Vec<IntentEvent>,
    pub spawned: u64,
    pub despawned: u64,
    pub spawn_queue_peak: usize,
}

impl EpisodeRecord {
    /// Executed changes inside the metric window.
    pub fn window_changes(&self) -> impl Iterator<Item = &ChangeEvent> {
        let start = self.metrics_start.unwrap_or(f64::INFINITY);
        self.changes.iter().filter(move |c| c.t >= start)
    }

    /// Vehicles despawned inside the metric window.
    pub fn window_despawned(&self) -> usize {
        let start = self.metrics_start.unwrap_or(f64::INFINITY);
        self.vehicles
            .iter()
            .filter(|v| v.despawn_time.map_or(false, |t| t >= start))
            .count()
    }
}
