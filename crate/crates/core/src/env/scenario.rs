//! Scenario definitions: demand and event presets, per-episode event
//! randomization, and the structured scenario file format.

use super::{EnvConfig, RewardWeights};
use crate::error::{ConfigError, SimError};
use crate::idm::IdmParams;
use crate::metrics::{EmissionParams, SafetyConfig};
use crate::sim::{
    BehaviorConfig, DemandConfig, DemandLevel, EventKind, RoadConfig, ScenarioEvent, World,
    WorldConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The three evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Constant inflow on every lane, no events.
    StableFlow,
    /// One lane section loses capacity: raised IDM time gaps, lane changes
    /// into and out of the affected grids prohibited.
    LaneDegrade,
    /// One vehicle brakes to a stop, holds, then resumes.
    VehicleStop,
}

impl ScenarioKind {
    pub fn id(self) -> &'static str {
        match self {
            ScenarioKind::StableFlow => "stable_flow",
            ScenarioKind::LaneDegrade => "lane_degrade",
            ScenarioKind::VehicleStop => "vehicle_stop",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "stable_flow" | "stable-flow" => Ok(ScenarioKind::StableFlow),
            "lane_degrade" | "lane-degrade" => Ok(ScenarioKind::LaneDegrade),
            "vehicle_stop" | "vehicle-stop" => Ok(ScenarioKind::VehicleStop),
            other => Err(ConfigError::invalid(
                "scenario",
                format!("unknown scenario '{other}'"),
            )),
        }
    }
}

/// Ranges the per-episode event draw samples from. Times are offsets from
/// the end of warm-up; positions are absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventRandomization {
    pub degrade_time_gap: (f64, f64),
    pub degrade_zone_length: (f64, f64),
    pub degrade_zone_start: (f64, f64),
    pub degrade_onset: (f64, f64),
    pub degrade_duration: (f64, f64),
    pub stop_position: (f64, f64),
    pub stop_onset: (f64, f64),
    pub stop_hold: (f64, f64),
    pub stop_decel: f64,
}

impl Default for EventRandomization {
    fn default() -> Self {
        Self {
            degrade_time_gap: (4.0, 10.0),
            degrade_zone_length: (100.0, 300.0),
            degrade_zone_start: (100.0, 600.0),
            degrade_onset: (60.0, 400.0),
            degrade_duration: (300.0, 800.0),
            stop_position: (200.0, 800.0),
            stop_onset: (60.0, 600.0),
            stop_hold: (30.0, 120.0),
            stop_decel: 3.0,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    range.0 + u * (range.1 - range.0)
}

/// Event in a scenario file; lanes are 1-based there (lane 1 = rightmost).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FileEvent {
    pub kind: EventKind,
    pub lane: usize,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
    #[serde(default)]
    pub degrade_time_gap: Option<f64>,
    #[serde(default)]
    pub stop_decel: Option<f64>,
    #[serde(default)]
    pub stop_hold: Option<f64>,
}

impl FileEvent {
    fn to_event(self) -> Result<ScenarioEvent, ConfigError> {
        if self.lane == 0 {
            return Err(ConfigError::invalid("event.lane", "file lanes are 1-based"));
        }
        Ok(ScenarioEvent {
            kind: self.kind,
            lane: self.lane - 1,
            x_range: self.x_range,
            t_range: self.t_range,
            degrade_time_gap: self.degrade_time_gap.unwrap_or(6.0),
            stop_decel: self.stop_decel.unwrap_or(3.0),
            stop_hold: self.stop_hold.unwrap_or(60.0),
        })
    }
}

/// Full configuration of one training/evaluation environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub demand: DemandLevel,
    pub cv_rate: f64,
    pub grid_length: f64,
    pub road: RoadConfig,
    pub idm: IdmParams,
    pub behavior: BehaviorConfig,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub emission: EmissionParams,
    pub safety: SafetyConfig,
    pub randomization: EventRandomization,
    /// Explicit events override the per-episode randomization when present.
    pub events: Vec<FileEvent>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::StableFlow,
            demand: DemandLevel::Low,
            cv_rate: 1.0,
            grid_length: 100.0,
            road: RoadConfig::default(),
            idm: IdmParams::default(),
            behavior: BehaviorConfig::default(),
            env: EnvConfig::default(),
            reward: RewardWeights::default(),
            emission: EmissionParams::default(),
            safety: SafetyConfig::default(),
            randomization: EventRandomization::default(),
            events: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn preset(kind: ScenarioKind, demand: DemandLevel) -> Self {
        Self {
            kind,
            demand,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.road.validate()?;
        self.idm.validate()?;
        self.behavior.validate()?;
        self.reward.validate()?;
        self.env.validate(self.road.sim_step)?;
        if !(0.0..=1.0).contains(&self.cv_rate) {
            return Err(SimError::Config(ConfigError::invalid(
                "cv_rate",
                "must lie in [0, 1]",
            )));
        }
        for ev in &self.events {
            ev.to_event()?.validate(&self.road)?;
        }
        Ok(())
    }

    pub fn demand_config(&self, seed: u64) -> DemandConfig {
        let mut d = DemandConfig::from_level(self.demand, self.cv_rate, seed, &self.idm);
        d.seed = seed;
        d
    }

    /// Draw the episode's concrete events. Explicit file events win;
    /// otherwise the scenario kind decides what gets randomized.
    pub fn draw_events(&self, rng: &mut ChaCha8Rng) -> Result<Vec<ScenarioEvent>, SimError> {
        if !self.events.is_empty() {
            return self
                .events
                .iter()
                .map(|e| e.to_event().map_err(SimError::Config))
                .collect();
        }
        let r = &self.randomization;
        let warmup = self.env.warmup;
        let road = &self.road;
        let events = match self.kind {
            ScenarioKind::StableFlow => Vec::new(),
            ScenarioKind::LaneDegrade => {
                let lane = (rng.random::<f64>() * road.lanes as f64) as usize;
                let len = draw(rng, r.degrade_zone_length);
                let max_start = (road.length - len - 50.0).max(50.0);
                let x0 = draw(rng, (r.degrade_zone_start.0, r.degrade_zone_start.1.min(max_start)));
                let t0 = warmup + draw(rng, r.degrade_onset);
                let dur = draw(rng, r.degrade_duration);
                vec![ScenarioEvent {
                    kind: EventKind::LaneDegrade,
                    lane: lane.min(road.lanes - 1),
                    x_range: (x0, (x0 + len).min(road.length)),
                    t_range: (t0, t0 + dur),
                    degrade_time_gap: draw(rng, r.degrade_time_gap),
                    stop_decel: r.stop_decel,
                    stop_hold: 0.0,
                }]
            }
            ScenarioKind::VehicleStop => {
                let lane = (rng.random::<f64>() * road.lanes as f64) as usize;
                let x = draw(rng, r.stop_position);
                let t0 = warmup + draw(rng, r.stop_onset);
                vec![ScenarioEvent {
                    kind: EventKind::VehicleStop,
                    lane: lane.min(road.lanes - 1),
                    x_range: ((x - 50.0).max(0.0), (x + 50.0).min(road.length)),
                    t_range: (t0, f64::MAX),
                    degrade_time_gap: 6.0,
                    stop_decel: r.stop_decel,
                    stop_hold: draw(rng, r.stop_hold),
                }]
            }
        };
        for ev in &events {
            ev.validate(road)?;
        }
        Ok(events)
    }

    /// Build the world for one episode: demand seeded with `seed`, events
    /// drawn from an event stream derived from the same seed.
    pub fn build_world(&self, seed: u64) -> Result<World, SimError> {
        let mut event_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0x45564e54);
        let events = self.draw_events(&mut event_rng)?;
        World::new(WorldConfig {
            road: self.road,
            idm: self.idm,
            demand: self.demand_config(seed),
            behavior: self.behavior,
            emission: self.emission,
            safety: self.safety,
            grid_length: self.grid_length,
            events,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| ConfigError::ScenarioFile(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::ScenarioFile(format!("{}: {e}", path.display())))?;
        let spec = Self::from_toml(&text)?;
        spec.validate()
            .map_err(|e| ConfigError::ScenarioFile(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        let spec = ScenarioSpec::preset(ScenarioKind::LaneDegrade, DemandLevel::High);
        let text = spec.to_toml();
        let back = ScenarioSpec::from_toml(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn stable_flow_draws_no_events() {
        let spec = ScenarioSpec::preset(ScenarioKind::StableFlow, DemandLevel::Low);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(spec.draw_events(&mut rng).unwrap().is_empty());
    }

    #[test]
    fn lane_degrade_draws_one_event_in_range() {
        let spec = ScenarioSpec::preset(ScenarioKind::LaneDegrade, DemandLevel::Low);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events = spec.draw_events(&mut rng).unwrap();
            assert_eq!(events.len(), 1);
            let ev = events[0];
            assert_eq!(ev.kind, EventKind::LaneDegrade);
            assert!((4.0..=10.0).contains(&ev.degrade_time_gap));
            assert!(ev.lane < spec.road.lanes);
            assert!(ev.t_range.0 >= spec.env.warmup);
        }
    }

    #[test]
    fn same_seed_draws_identical_events() {
        let spec = ScenarioSpec::preset(ScenarioKind::VehicleStop, DemandLevel::High);
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            spec.draw_events(&mut a).unwrap(),
            spec.draw_events(&mut b).unwrap()
        );
    }

    #[test]
    fn file_events_use_one_based_lanes() {
        let mut spec = ScenarioSpec::preset(ScenarioKind::LaneDegrade, DemandLevel::Low);
        spec.events.push(FileEvent {
            kind: EventKind::LaneDegrade,
            lane: 3,
            x_range: (300.0, 500.0),
            t_range: (200.0, 600.0),
            degrade_time_gap: Some(5.0),
            stop_decel: None,
            stop_hold: None,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let events = spec.draw_events(&mut rng).unwrap();
        assert_eq!(events[0].lane, 2);
        // Out-of-road lanes are a load-time configuration error.
        spec.events[0].lane = 9;
        assert!(spec.validate().is_err());
    }
}
