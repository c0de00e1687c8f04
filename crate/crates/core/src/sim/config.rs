use crate::error::ConfigError;
use crate::idm::{self, IdmParams};
use serde::{Deserialize, Serialize};

/// Road geometry and stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadConfig {
    /// Road length L (m).
    pub length: f64,
    /// Number of lanes; lane 0 is the rightmost.
    pub lanes: usize,
    /// Lane width (m).
    pub lane_width: f64,
    /// Speed limit (m/s); 24.59 m/s is 55 mph.
    pub speed_limit: f64,
    /// Simulation step (s).
    pub sim_step: f64,
    /// Duration of a lane change (s); the lane index flips halfway through.
    pub lc_duration: f64,
    /// Lateral position quantum (m); the lateral traverse runs at
    /// lane_width / lc_duration, one quantum per lateral sub-step.
    pub lateral_resolution: f64,
    /// Periodic road (no inflow/outflow); used by equilibrium diagnostics.
    pub ring: bool,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length: 1000.0,
            lanes: 5,
            lane_width: 3.2,
            speed_limit: 24.59,
            sim_step: 0.1,
            lc_duration: 2.0,
            lateral_resolution: 0.8,
            ring: false,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("length", self.length),
            ("lane_width", self.lane_width),
            ("speed_limit", self.speed_limit),
            ("sim_step", self.sim_step),
            ("lc_duration", self.lc_duration),
            ("lateral_resolution", self.lateral_resolution),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.lanes == 0 {
            return Err(ConfigError::invalid("lanes", "need at least one lane"));
        }
        Ok(())
    }
}

/// Demand level presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandLevel {
    Low,
    High,
    CongestedHigh,
}

impl DemandLevel {
    pub fn per_lane_inflow(self) -> f64 {
        match self {
            DemandLevel::Low => 1100.0,
            DemandLevel::High => 1495.0,
            DemandLevel::CongestedHigh => 1410.0,
        }
    }

    /// The targeted branch of the fundamental diagram: congested-high sits on
    /// the high-density side, the others on the free-flow side.
    pub fn congested(self) -> bool {
        matches!(self, DemandLevel::CongestedHigh)
    }

    /// Equilibrium speed of this demand on its branch of the diagram.
    pub fn equilibrium_speed(self, p: &IdmParams) -> f64 {
        let (v_cap, _, q_cap) = idm::capacity(p);
        let q = self.per_lane_inflow();
        if q >= q_cap {
            return v_cap;
        }
        idm::equilibrium_speed_for_flow(q, self.congested(), p)
            .expect("demand below capacity")
    }

    pub fn id(self) -> &'static str {
        match self {
            DemandLevel::Low => "low",
            DemandLevel::High => "high",
            DemandLevel::CongestedHigh => "congested_high",
        }
    }
}

impl std::str::FromStr for DemandLevel {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "low" => Ok(DemandLevel::Low),
            "high" => Ok(DemandLevel::High),
            "congested_high" | "congested-high" => Ok(DemandLevel::CongestedHigh),
            other => Err(ConfigError::invalid("demand", format!("unknown demand '{other}'"))),
        }
    }
}

/// Traffic demand at the road entrance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    /// Arrival rate per lane (veh/h).
    pub per_lane_inflow: f64,
    /// Probability that a spawned vehicle is a connected vehicle.
    pub cv_rate: f64,
    pub seed: u64,
    /// Equilibrium speed of the demand; spawns enter at this speed. Derived
    /// from the free branch of the fundamental diagram when absent.
    pub equilibrium_speed: Option<f64>,
    /// Pre-seed the road at the equilibrium state on reset. Required to
    /// realize congested-branch demands, which an empty road never reaches.
    pub seed_road: bool,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            per_lane_inflow: 1100.0,
            cv_rate: 1.0,
            seed: 0,
            equilibrium_speed: None,
            seed_road: false,
        }
    }
}

impl DemandConfig {
    pub fn from_level(level: DemandLevel, cv_rate: f64, seed: u64, p: &IdmParams) -> Self {
        Self {
            per_lane_inflow: level.per_lane_inflow(),
            cv_rate,
            seed,
            equilibrium_speed: Some(level.equilibrium_speed(p)),
            seed_road: level.congested(),
        }
    }

    pub fn validate(&self, road: &RoadConfig) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.cv_rate) {
            return Err(ConfigError::invalid("cv_rate", "must lie in [0, 1]"));
        }
        if self.per_lane_inflow < 0.0 || !self.per_lane_inflow.is_finite() {
            return Err(ConfigError::invalid("per_lane_inflow", "must be non-negative"));
        }
        let p_step = self.per_lane_inflow * road.sim_step / 3600.0;
        if p_step > 1.0 {
            return Err(ConfigError::invalid(
                "per_lane_inflow",
                format!("per-step arrival probability {p_step} exceeds 1"),
            ));
        }
        Ok(())
    }

    /// Spawn speed, falling back to the free-branch equilibrium.
    pub fn spawn_speed(&self, p: &IdmParams) -> f64 {
        if let Some(v) = self.equilibrium_speed {
            return v;
        }
        let (v_cap, _, q_cap) = idm::capacity(p);
        if self.per_lane_inflow >= q_cap {
            v_cap
        } else {
            idm::equilibrium_speed_for_flow(self.per_lane_inflow, false, p)
                .expect("validated against capacity")
        }
    }
}

/// Lane-change behavior: the two-intent model (keep-right, speed-gain) with
/// anticipated-speed evaluation, plus safety and deliberation parameters.
///
/// Drivers re-evaluate each intent on an independent Poisson clock rather
/// than every step; keep-right deliberations are rare, speed-gain checks
/// frequent. Thresholds are calibrated so that baseline lane-change counts
/// sit near observed per-vehicle magnitudes (~0.1 at low demand, less when
/// congested).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Keep-right fires when the right lane's anticipated speed is within
    /// this margin of the current lane's (m/s).
    pub keep_right_epsilon: f64,
    /// Anticipated-speed advantage required for a left speed-gain change (m/s).
    pub speed_gain_left: f64,
    /// Advantage required for a right speed-gain change; rightward overtaking
    /// takes more deliberation (m/s).
    pub speed_gain_right: f64,
    /// Horizon over which surplus gap converts to anticipated speed (s).
    pub anticipation_time: f64,
    /// Leader perception range for anticipation (m).
    pub lookahead: f64,
    /// Maximum deceleration a lane change may impose on the new follower
    /// (m/s^2).
    pub safe_decel: f64,
    /// Poisson rate of keep-right deliberations (1/s).
    pub keep_right_rate: f64,
    /// Poisson rate of speed-gain deliberations (1/s).
    pub speed_gain_rate: f64,
    /// Mean delay before retrying after a gated or unsafe intent (s).
    pub blocked_retry: f64,
    /// Cooldown after a completed change before new intents (s).
    pub lc_cooldown: f64,
    /// Entrance admission: required bumper gap as a fraction of the
    /// equilibrium gap at the spawn speed.
    pub insertion_gap_factor: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            keep_right_epsilon: 0.5,
            speed_gain_left: 2.0,
            speed_gain_right: 3.0,
            anticipation_time: 10.0,
            lookahead: 120.0,
            safe_decel: 2.0,
            keep_right_rate: 1.0 / 240.0,
            speed_gain_rate: 1.0 / 8.0,
            blocked_retry: 4.0,
            lc_cooldown: 5.0,
            insertion_gap_factor: 0.6,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("anticipation_time", self.anticipation_time),
            ("lookahead", self.lookahead),
            ("safe_decel", self.safe_decel),
            ("blocked_retry", self.blocked_retry),
            ("insertion_gap_factor", self.insertion_gap_factor),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.keep_right_rate < 0.0 || self.speed_gain_rate < 0.0 {
            return Err(ConfigError::invalid("deliberation rates", "must be non-negative"));
        }
        Ok(())
    }
}

/// Kind of a safety-critical event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LaneDegrade,
    VehicleStop,
}

/// One concrete scheduled event. Lanes are 0-based internally; scenario
/// files use 1-based lane numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub kind: EventKind,
    pub lane: usize,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
    /// Raised IDM time gap inside a degraded section (s).
    #[serde(default = "default_degrade_gap")]
    pub degrade_time_gap: f64,
    /// Constant braking rate of the stopping vehicle (m/s^2).
    #[serde(default = "default_stop_decel")]
    pub stop_decel: f64,
    /// How long the stopped vehicle holds at v=0 (s).
    #[serde(default = "default_stop_hold")]
    pub stop_hold: f64,
}

fn default_degrade_gap() -> f64 {
    6.0
}
fn default_stop_decel() -> f64 {
    3.0
}
fn default_stop_hold() -> f64 {
    60.0
}

impl ScenarioEvent {
    pub fn active(&self, t: f64) -> bool {
        t >= self.t_range.0 && t < self.t_range.1
    }

    pub fn covers(&self, lane: usize, x: f64) -> bool {
        lane == self.lane && x >= self.x_range.0 && x < self.x_range.1
    }

    pub fn validate(&self, road: &RoadConfig) -> Result<(), ConfigError> {
        if self.lane >= road.lanes {
            return Err(ConfigError::invalid(
                "event.lane",
                format!("lane {} outside road with {} lanes", self.lane + 1, road.lanes),
            ));
        }
        if self.x_range.0 < 0.0 || self.x_range.1 > road.length || self.x_range.0 >= self.x_range.1 {
            return Err(ConfigError::invalid(
                "event.x_range",
                format!("range {:?} outside road [0, {}]", self.x_range, road.length),
            ));
        }
        if self.t_range.0 >= self.t_range.1 || self.t_range.0 < 0.0 {
            return Err(ConfigError::invalid("event.t_range", "must be well-ordered"));
        }
        if self.kind == EventKind::LaneDegrade
            && !(4.0..=10.0).contains(&self.degrade_time_gap)
        {
            return Err(ConfigError::invalid(
                "event.degrade_time_gap",
                "must lie in [4.0, 10.0] s",
            ));
        }
        if self.kind == EventKind::VehicleStop && (self.stop_decel <= 0.0 || self.stop_hold < 0.0) {
            return Err(ConfigError::invalid("event.stop", "decel must be positive"));
        }
        Ok(())
    }
}
