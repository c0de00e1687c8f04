use super::config::{BehaviorConfig, DemandConfig, EventKind, RoadConfig, ScenarioEvent};
use super::lanechange::{
    keep_right_intent, safety_check, speed_gain_intent, LaneView, NeighborView,
};
use super::record::{ChangeEvent, EpisodeRecord, IntentEvent, TrajectorySample, VehicleRecord};
use super::vehicle::{Direction, LcState, Vehicle};
use crate::env::GridActionField;
use crate::error::SimError;
use crate::idm::{self, IdmParams, FREE_ROAD_GAP};
use crate::metrics::{self, EmissionParams, SafetyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

/// Everything needed to build a [`World`].
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub road: RoadConfig,
    pub idm: IdmParams,
    pub demand: DemandConfig,
    pub behavior: BehaviorConfig,
    pub emission: EmissionParams,
    pub safety: SafetyConfig,
    /// Lane grid length (m); must divide the road length exactly.
    pub grid_length: f64,
    pub events: Vec<ScenarioEvent>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            road: RoadConfig::default(),
            idm: IdmParams::default(),
            demand: DemandConfig::default(),
            behavior: BehaviorConfig::default(),
            emission: EmissionParams::default(),
            safety: SafetyConfig::default(),
            grid_length: 100.0,
            events: Vec::new(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<usize, SimError> {
        self.road.validate()?;
        self.idm.validate()?;
        self.demand.validate(&self.road)?;
        self.behavior.validate()?;
        let n = self.road.length / self.grid_length;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(SimError::Config(crate::error::ConfigError::invalid(
                "grid_length",
                format!("{} must divide the road length {}", self.grid_length, self.road.length),
            )));
        }
        for ev in &self.events {
            ev.validate(&self.road)?;
        }
        Ok(n.round() as usize)
    }
}

#[derive(Debug, Clone, Copy)]
enum StopPhase {
    Pending,
    Braking { slot: usize, id: u64 },
    Holding { slot: usize, id: u64, until: f64 },
    Done,
}

#[derive(Debug, Clone)]
struct EventRuntime {
    ev: ScenarioEvent,
    stop: StopPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeliberationKind {
    SpeedGain,
    KeepRight,
}

/// Microscopic multi-lane freeway world. One instance is single-threaded with
/// strict step ordering; independent worlds may run concurrently.
#[derive(Debug, Clone)]
pub struct World {
    pub road: RoadConfig,
    pub idm: IdmParams,
    pub demand: DemandConfig,
    pub behavior: BehaviorConfig,
    pub emission: EmissionParams,
    pub safety: SafetyConfig,
    pub grid_length: f64,
    n_grids: usize,

    time: f64,
    step_count: u64,
    slots: Vec<Option<Vehicle>>,
    free: Vec<usize>,
    /// Per-lane slot indices ordered by increasing position. Mid-change
    /// vehicles appear in both their current and shadow lane.
    lanes: Vec<Vec<usize>>,
    next_id: u64,

    spawn_rng: ChaCha8Rng,
    behavior_rng: ChaCha8Rng,
    queues: Vec<VecDeque<bool>>,
    spawn_speed: f64,
    insertion_gap: f64,
    p_arrival: f64,

    events_rt: Vec<EventRuntime>,
    hazard: Vec<bool>,
    hold_slots: Vec<usize>,

    metrics_start: Option<f64>,
    completed: Vec<VehicleRecord>,
    changes: Vec<ChangeEvent>,
    intents: Vec<IntentEvent>,
    spawned: u64,
    despawned: u64,
    queue_peak: usize,
    trajectory: Option<Vec<TrajectorySample>>,

    accel_buf: Vec<f64>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn exp_interval(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    -(1.0 - u).ln() / rate
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, SimError> {
        let n_grids = cfg.validate()?;
        let spawn_speed = cfg.demand.spawn_speed(&cfg.idm);
        let eq_gap = idm::equilibrium_gap(spawn_speed, &cfg.idm)?;
        let insertion_gap = (cfg.behavior.insertion_gap_factor * eq_gap).max(cfg.idm.min_gap);
        let p_arrival = cfg.demand.per_lane_inflow * cfg.road.sim_step / 3600.0;
        let lanes = cfg.road.lanes;
        Ok(Self {
            spawn_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.demand.seed, 1)),
            behavior_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.demand.seed, 2)),
            queues: vec![VecDeque::new(); lanes],
            spawn_speed,
            insertion_gap,
            p_arrival,
            events_rt: cfg
                .events
                .iter()
                .map(|&ev| EventRuntime {
                    ev,
                    stop: StopPhase::Pending,
                },)
                .collect(),
            hazard: vec![false; lanes * n_grids],
            hold_slots: Vec::new(),
            time: 0.0,
            step_count: 0,
            slots: Vec::new(),
            free: Vec::new(),
            lanes: vec![Vec::new(); lanes],
            next_id: 0,
            metrics_start: None,
            completed: Vec::new(),
            changes: Vec::new(),
            intents: Vec::new(),
            spawned: 0,
            despawned: 0,
            queue_peak: 0,
            trajectory: None,
            accel_buf: Vec::new(),
            n_grids,
            road: cfg.road,
            idm: cfg.idm,
            demand: cfg.demand,
            behavior: cfg.behavior,
            emission: cfg.emission,
            safety: cfg.safety,
            grid_length: cfg.grid_length,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn n_grids(&self) -> usize {
        self.n_grids
    }

    pub fn population(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn despawned(&self) -> u64 {
        self.despawned
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.slots.iter().flatten()
    }

    pub fn changes(&self) -> &[ChangeEvent] {
        &self.changes
    }

    pub fn intents(&self) -> &[IntentEvent] {
        &self.intents
    }

    pub fn spawn_speed(&self) -> f64 {
        self.spawn_speed
    }

    /// Open the metric window at the current time.
    pub fn begin_metrics(&mut self) {
        self.metrics_start = Some(self.time);
    }

    pub fn record_trajectory(&mut self, on: bool) {
        self.trajectory = on.then(Vec::new);
    }

    pub fn trajectory(&self) -> Option<&[TrajectorySample]> {
        self.trajectory.as_deref()
    }

    pub fn grid_of(&self, x: f64) -> usize {
        ((x / self.grid_length) as usize).min(self.n_grids - 1)
    }

    fn metrics_on(&self) -> bool {
        self.metrics_start.map_or(false, |s| self.time >= s)
    }

    /// Place vehicles at the exact equilibrium spacing for speed `v` on every
    /// lane, with a random per-lane phase. Used to start congested-branch
    /// demands, which an empty road cannot reach.
    pub fn seed_equilibrium(&mut self, v: f64) -> Result<(), SimError> {
        let gap = idm::equilibrium_gap(v, &self.idm)?;
        let spacing = gap + self.idm.vehicle_length;
        for lane in 0..self.road.lanes {
            let phase: f64 = self.spawn_rng.random::<f64>() * spacing;
            let mut xs = Vec::new();
            let mut x = self.road.length - self.idm.vehicle_length - phase;
            while x >= 0.0 {
                xs.push(x);
                x -= spacing;
            }
            xs.reverse();
            for x in xs {
                let cv: f64 = self.spawn_rng.random();
                self.insert_vehicle(lane, x, v, cv < self.demand.cv_rate);
            }
        }
        Ok(())
    }

    /// Place `n` equally spaced vehicles per lane on a ring road.
    pub fn seed_ring(&mut self, n: usize, v: f64) -> Result<(), SimError> {
        if !self.road.ring {
            return Err(SimError::Config(crate::error::ConfigError::invalid(
                "ring",
                "seed_ring requires a ring road",
            )));
        }
        let spacing = self.road.length / n as f64;
        if spacing <= self.idm.vehicle_length {
            return Err(SimError::Fault {
                time: self.time,
                detail: format!("ring spacing {spacing} below vehicle length"),
            });
        }
        for lane in 0..self.road.lanes {
            for j in 0..n {
                let cv: f64 = self.spawn_rng.random();
                self.insert_vehicle(lane, j as f64 * spacing, v, cv < self.demand.cv_rate);
            }
        }
        Ok(())
    }

    fn insert_vehicle(&mut self, lane: usize, x: f64, v: f64, is_cv: bool) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        let mut veh = Vehicle::new(id, lane, x, v, is_cv, self.idm, self.time);
        veh.next_speed_gain_eval =
            self.time + exp_interval(&mut self.behavior_rng, self.behavior.speed_gain_rate);
        veh.next_keep_right_eval =
            self.time + exp_interval(&mut self.behavior_rng, self.behavior.keep_right_rate);
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s] = Some(veh);
                s
            }
            None => {
                self.slots.push(Some(veh));
                self.slots.len() - 1
            }
        };
        let pos = self.lane_position(lane, x);
        self.lanes[lane].insert(pos, slot);
        self.spawned += 1;
        if self.accel_buf.len() < self.slots.len() {
            self.accel_buf.resize(self.slots.len(), 0.0);
        }
        slot
    }

    /// First index in `lanes[lane]` whose vehicle sits at or beyond `x`.
    fn lane_position(&self, lane: usize, x: f64) -> usize {
        self.lanes[lane].partition_point(|&s| {
            self.slots[s].as_ref().map_or(false, |v| v.x < x)
        })
    }

    fn remove_from_lane(&mut self, lane: usize, slot: usize) {
        if let Some(pos) = self.lanes[lane].iter().position(|&s| s == slot) {
            self.lanes[lane].remove(pos);
        }
    }

    /// Advance one simulation step under the given per-grid permissions.
    pub fn step(&mut self, permitted: &GridActionField) -> Result<(), SimError> {
        self.apply_events();
        if !self.road.ring {
            self.process_arrivals();
        }
        self.lane_change_pipeline(permitted);
        self.advance_lane_changes();
        self.compute_accelerations()?;
        self.kinematics_and_despawn();
        self.check_invariants()?;
        self.accumulate_exposure_and_trajectory()?;
        self.time += self.road.sim_step;
        self.step_count += 1;
        Ok(())
    }

    fn apply_events(&mut self) {
        let t = self.time;
        self.hold_slots.clear();
        // Stop-event phase machine.
        for i in 0..self.events_rt.len() {
            if self.events_rt[i].ev.kind != EventKind::VehicleStop {
                continue;
            }
            let ev = self.events_rt[i].ev;
            let phase = self.events_rt[i].stop;
            let next = match phase {
                StopPhase::Pending if t >= ev.t_range.0 => {
                    match self.pick_stop_victim(&ev) {
                        Some(slot) => {
                            let veh = self.slots[slot].as_mut().unwrap();
                            veh.stop_controlled = true;
                            StopPhase::Braking { slot, id: veh.id }
                        }
                        // Nobody in range; the event fizzles.
                        None => StopPhase::Done,
                    }
                }
                StopPhase::Pending => StopPhase::Pending,
                StopPhase::Braking { slot, id } => match self.slots[slot].as_ref() {
                    Some(v) if v.id == id && v.v <= 0.0 => StopPhase::Holding {
                        slot,
                        id,
                        until: t + ev.stop_hold,
                    },
                    Some(v) if v.id == id => StopPhase::Braking { slot, id },
                    _ => StopPhase::Done,
                },
                StopPhase::Holding { slot, id, until } => match self.slots[slot].as_ref() {
                    Some(v) if v.id == id && t < until => StopPhase::Holding { slot, id, until },
                    Some(v) if v.id == id => {
                        self.slots[slot].as_mut().unwrap().stop_controlled = false;
                        StopPhase::Done
                    }
                    _ => StopPhase::Done,
                },
                StopPhase::Done => StopPhase::Done,
            };
            self.events_rt[i].stop = next;
            if let StopPhase::Holding { slot, until, .. } = next {
                if t < until {
                    self.hold_slots.push(slot);
                }
            }
        }
        // Effective time gaps and the hazard-grid mask.
        for veh in self.slots.iter_mut().flatten() {
            veh.effective_time_gap = veh.idm.time_gap;
        }
        self.hazard.fill(false);
        for er in &self.events_rt {
            let ev = &er.ev;
            if ev.kind != EventKind::LaneDegrade || !ev.active(t) {
                continue;
            }
            for veh in self.slots.iter_mut().flatten() {
                if ev.covers(veh.lane, veh.x) {
                    veh.effective_time_gap = veh.effective_time_gap.max(ev.degrade_time_gap);
                }
            }
            let g0 = (ev.x_range.0 / self.grid_length) as usize;
            let g1 = ((ev.x_range.1 - 1e-9) / self.grid_length) as usize;
            for g in g0..=g1.min(self.n_grids - 1) {
                self.hazard[ev.lane * self.n_grids + g] = true;
            }
        }
    }

    /// Downstream-most vehicle inside the event range, so the queue builds
    /// behind it.
    fn pick_stop_victim(&self, ev: &ScenarioEvent) -> Option<usize> {
        self.lanes[ev.lane]
            .iter()
            .rev()
            .copied()
            .find(|&s| {
                self.slots[s]
                    .as_ref()
                    .map_or(false, |v| v.lane == ev.lane && ev.covers(v.lane, v.x))
            })
    }

    fn hazard_at(&self, lane: usize, grid: usize) -> bool {
        self.hazard[lane * self.n_grids + grid]
    }

    fn process_arrivals(&mut self) {
        for lane in 0..self.road.lanes {
            let u: f64 = self.spawn_rng.random();
            if u < self.p_arrival {
                let cv: f64 = self.spawn_rng.random();
                self.queues[lane].push_back(cv < self.demand.cv_rate);
            }
            if let Some(&is_cv) = self.queues[lane].front() {
                if self.entrance_clear(lane) {
                    self.queues[lane].pop_front();
                    self.insert_vehicle(lane, 0.0, self.spawn_speed, is_cv);
                }
            }
            self.queue_peak = self.queue_peak.max(self.queues[lane].len());
        }
    }

    fn entrance_clear(&self, lane: usize) -> bool {
        match self.lanes[lane].first() {
            None => true,
            Some(&s) => {
                let first = self.slots[s].as_ref().unwrap();
                first.x - self.idm.vehicle_length >= self.insertion_gap
            }
        }
    }

    /// View of lane `lane` from the position of the vehicle in `slot`,
    /// skipping the vehicle's own (possibly shadow) entry.
    fn lane_view(&self, slot: usize, lane: usize) -> LaneView {
        let veh = self.slots[slot].as_ref().unwrap();
        let list = &self.lanes[lane];
        let pos = self.lane_position(lane, veh.x);
        let mut leader = None;
        let mut idx = pos;
        while idx < list.len() {
            let s = list[idx];
            if s != slot {
                let other = self.slots[s].as_ref().unwrap();
                leader = Some((other.x - veh.x - self.idm.vehicle_length, other.v));
                break;
            }
            idx += 1;
        }
        let mut follower = None;
        let mut idx = pos;
        while idx > 0 {
            idx -= 1;
            let s = list[idx];
            if s != slot {
                let other = self.slots[s].as_ref().unwrap();
                follower = Some((veh.x - other.x - self.idm.vehicle_length, other.v));
                break;
            }
        }
        LaneView { leader, follower }
    }

    fn neighbor_view(&self, slot: usize) -> NeighborView {
        let veh = self.slots[slot].as_ref().unwrap();
        let lane = veh.lane;
        NeighborView {
            current_leader: self.lane_view(slot, lane).leader,
            left: (lane + 1 < self.road.lanes).then(|| self.lane_view(slot, lane + 1)),
            right: lane.checked_sub(1).map(|l| self.lane_view(slot, l)),
        }
    }

    fn lane_change_pipeline(&mut self, permitted: &GridActionField) {
        let t = self.time;
        for lane in 0..self.road.lanes {
            // Front to back, so downstream vehicles claim gaps first.
            let order: Vec<usize> = self.lanes[lane].iter().rev().copied().collect();
            for slot in order {
                let Some(veh) = self.slots[slot].as_ref() else {
                    continue;
                };
                if veh.lane != lane || veh.lc_state.is_changing() || veh.stop_controlled {
                    continue;
                }
                let kind = if t >= veh.next_speed_gain_eval {
                    DeliberationKind::SpeedGain
                } else if t >= veh.next_keep_right_eval {
                    DeliberationKind::KeepRight
                } else {
                    continue;
                };
                let in_cooldown = t < veh.cooldown_until;
                // Re-arm the clock that fired.
                let rate = match kind {
                    DeliberationKind::SpeedGain => self.behavior.speed_gain_rate,
                    DeliberationKind::KeepRight => self.behavior.keep_right_rate,
                };
                let next = t + exp_interval(&mut self.behavior_rng, rate);
                {
                    let veh = self.slots[slot].as_mut().unwrap();
                    match kind {
                        DeliberationKind::SpeedGain => veh.next_speed_gain_eval = next,
                        DeliberationKind::KeepRight => veh.next_keep_right_eval = next,
                    }
                }
                if in_cooldown {
                    continue;
                }
                let view = self.neighbor_view(slot);
                let veh = self.slots[slot].as_ref().unwrap();
                let intent = match kind {
                    DeliberationKind::SpeedGain => speed_gain_intent(veh, &view, &self.behavior),
                    DeliberationKind::KeepRight => keep_right_intent(veh, &view, &self.behavior),
                };
                let Some((dir, _reason)) = intent else {
                    continue;
                };
                let Some(target) = dir.target(lane, self.road.lanes) else {
                    continue;
                };
                let grid = self.grid_of(veh.x);
                self.intents.push(IntentEvent {
                    t,
                    vehicle: veh.id,
                    is_cv: veh.is_cv,
                    dir,
                    lane,
                    grid,
                });
                // Degraded grids block everyone, in and out.
                if self.hazard_at(lane, grid) || self.hazard_at(target, grid) {
                    self.retry_later(slot, kind);
                    continue;
                }
                // Regulation gating applies to connected vehicles only,
                // evaluated against the vehicle's current grid.
                if veh.is_cv && !permitted.allows(lane, veh.x, dir) {
                    self.retry_later(slot, kind);
                    continue;
                }
                let target_view = self.lane_view(slot, target);
                if !safety_check(veh, &target_view, &self.behavior) {
                    continue;
                }
                // Initiate: the vehicle keeps its lane index until the
                // midpoint but occupies the target lane as a shadow.
                let x = veh.x;
                {
                    let veh = self.slots[slot].as_mut().unwrap();
                    veh.lc_state = LcState::Changing { dir, elapsed: 0.0 };
                    veh.shadow_lane = Some(target);
                }
                let pos = self.lane_position(target, x);
                self.lanes[target].insert(pos, slot);
            }
        }
    }

    /// A gated intent persists: the driver retries soon instead of waiting
    /// out the full deliberation interval.
    fn retry_later(&mut self, slot: usize, kind: DeliberationKind) {
        let next = self.time
            + exp_interval(&mut self.behavior_rng, 1.0 / self.behavior.blocked_retry);
        let veh = self.slots[slot].as_mut().unwrap();
        match kind {
            DeliberationKind::SpeedGain => veh.next_speed_gain_eval = next,
            DeliberationKind::KeepRight => veh.next_keep_right_eval = next,
        }
    }

    fn advance_lane_changes(&mut self) {
        let dt = self.road.sim_step;
        let half = self.road.lc_duration * 0.5;
        let t = self.time;
        let metrics_on = self.metrics_on();
        for slot in 0..self.slots.len() {
            let Some(veh) = self.slots[slot].as_ref() else {
                continue;
            };
            let LcState::Changing { dir, elapsed } = veh.lc_state else {
                continue;
            };
            let advanced = elapsed + dt;
            if elapsed < half && advanced >= half {
                // Midpoint: the lane index flips; this is the executed change.
                let from = veh.lane;
                let to = veh.shadow_lane.expect("changing vehicle has a shadow lane");
                let origin_grid = self.grid_of(veh.x);
                let (id, is_cv) = (veh.id, veh.is_cv);
                {
                    let veh = self.slots[slot].as_mut().unwrap();
                    veh.lane = to;
                    veh.shadow_lane = Some(from);
                    if metrics_on {
                        veh.window_lane_changes += 1;
                    }
                }
                self.changes.push(ChangeEvent {
                    t,
                    vehicle: id,
                    is_cv,
                    dir,
                    from_lane: from,
                    to_lane: to,
                    origin_grid,
                });
            }
            if advanced >= self.road.lc_duration {
                let shadow = self.slots[slot].as_ref().unwrap().shadow_lane.unwrap();
                self.remove_from_lane(shadow, slot);
                let cooldown = self.behavior.lc_cooldown;
                let veh = self.slots[slot].as_mut().unwrap();
                veh.shadow_lane = None;
                veh.lc_state = LcState::None;
                veh.cooldown_until = t + cooldown;
            } else {
                self.slots[slot].as_mut().unwrap().lc_state = LcState::Changing {
                    dir,
                    elapsed: advanced,
                };
            }
        }
    }

    fn compute_accelerations(&mut self) -> Result<(), SimError> {
        let len = self.slots.len();
        self.accel_buf.resize(len, 0.0);
        // Free-road baseline; pair constraints lower it.
        for slot in 0..len {
            if let Some(veh) = self.slots[slot].as_ref() {
                self.accel_buf[slot] = idm::idm_acceleration(
                    veh.v,
                    FREE_ROAD_GAP,
                    0.0,
                    &veh.idm,
                    veh.effective_time_gap,
                )?;
            }
        }
        for lane in 0..self.road.lanes {
            let list = &self.lanes[lane];
            for k in 0..list.len() {
                let (f_slot, l_slot) = if k + 1 < list.len() {
                    (list[k], list[k + 1])
                } else if self.road.ring && list.len() >= 2 {
                    (list[k], list[0])
                } else {
                    continue;
                };
                let follower = self.slots[f_slot].as_ref().unwrap();
                let leader = self.slots[l_slot].as_ref().unwrap();
                let mut gap = leader.x - follower.x - self.idm.vehicle_length;
                if k + 1 >= list.len() {
                    gap += self.road.length;
                }
                if gap <= 0.0 {
                    return Err(SimError::Fault {
                        time: self.time,
                        detail: format!(
                            "negative gap {gap:.3} m between vehicles {} and {} in lane {}",
                            follower.id, leader.id, lane
                        ),
                    });
                }
                let a = idm::idm_acceleration(
                    follower.v,
                    gap,
                    follower.v - leader.v,
                    &follower.idm,
                    follower.effective_time_gap,
                )?;
                self.accel_buf[f_slot] = self.accel_buf[f_slot].min(a);
            }
        }
        // Stop-event overrides.
        for er in &self.events_rt {
            if let StopPhase::Braking { slot, id } = er.stop {
                if let Some(veh) = self.slots[slot].as_ref() {
                    if veh.id == id {
                        self.accel_buf[slot] = self.accel_buf[slot].min(-er.ev.stop_decel);
                    }
                }
            }
        }
        Ok(())
    }

    fn kinematics_and_despawn(&mut self) {
        let dt = self.road.sim_step;
        let metrics_on = self.metrics_on();
        let mut to_despawn: Vec<usize> = Vec::new();
        for slot in 0..self.slots.len() {
            let holding = self.hold_slots.contains(&slot);
            let Some(veh) = self.slots[slot].as_mut() else {
                continue;
            };
            let v_new = if holding {
                0.0
            } else {
                (veh.v + self.accel_buf[slot] * dt).max(0.0)
            };
            let realized = (v_new - veh.v) / dt;
            veh.x += v_new * dt;
            if self.road.ring {
                veh.x = veh.x.rem_euclid(self.road.length);
            }
            veh.v = v_new;
            veh.accel = realized;
            let co2 = metrics::co2_rate(v_new, realized, &self.emission) * dt;
            veh.cumulative_co2 += co2;
            if metrics_on {
                veh.window_co2 += co2;
                veh.window_time += dt;
                veh.window_distance += v_new * dt;
                veh.window_steps += 1;
            }
            if !self.road.ring && veh.x > self.road.length {
                to_despawn.push(slot);
            }
        }
        let end_time = self.time + dt;
        for slot in to_despawn {
            let veh = self.slots[slot].take().unwrap();
            self.remove_from_lane(veh.lane, slot);
            if let Some(shadow) = veh.shadow_lane {
                self.remove_from_lane(shadow, slot);
            }
            self.completed.push(vehicle_record(&veh, Some(end_time)));
            self.free.push(slot);
            self.despawned += 1;
        }
    }

    fn accumulate_exposure_and_trajectory(&mut self) -> Result<(), SimError> {
        let dt = self.road.sim_step;
        let metrics_on = self.metrics_on();
        let threshold = self.safety.ttc_threshold;
        for lane in 0..self.road.lanes {
            let list = &self.lanes[lane];
            for k in 0..list.len() {
                let f_slot = list[k];
                let follower = self.slots[f_slot].as_ref().unwrap();
                // Exposure is attributed in the vehicle's current lane only.
                if follower.lane != lane {
                    continue;
                }
                let leader = if k + 1 < list.len() {
                    Some((list[k + 1], 0.0))
                } else if self.road.ring && list.len() >= 2 {
                    Some((list[0], self.road.length))
                } else {
                    None
                };
                let Some((l_slot, wrap)) = leader else {
                    continue;
                };
                let lead = self.slots[l_slot].as_ref().unwrap();
                let ttc = metrics::ttc(
                    follower.x,
                    follower.v,
                    lead.x + wrap,
                    lead.v,
                    self.idm.vehicle_length,
                )?;
                if ttc < threshold {
                    let veh = self.slots[f_slot].as_mut().unwrap();
                    veh.cumulative_ttc_exposure += dt;
                    if metrics_on {
                        veh.window_ttc_steps += 1;
                    }
                }
            }
        }
        if self.trajectory.is_some() {
            let t = self.time + dt;
            let mut rows: Vec<TrajectorySample> = self
                .slots
                .iter()
                .flatten()
                .map(|veh| TrajectorySample {
                    t,
                    id: veh.id,
                    lane: veh.lane,
                    x: veh.x,
                    v: veh.v,
                    accel: veh.accel,
                    is_cv: veh.is_cv,
                    lc: veh.lc_state.label(),
                })
                .collect();
            rows.sort_by_key(|r| r.id);
            self.trajectory.as_mut().unwrap().extend(rows);
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let population = self.population() as u64;
        if self.spawned - self.despawned != population {
            return Err(SimError::Fault {
                time: self.time,
                detail: format!(
                    "conservation broken: spawned {} - despawned {} != population {}",
                    self.spawned, self.despawned, population
                ),
            });
        }
        for (lane, list) in self.lanes.iter().enumerate() {
            for pair in list.windows(2) {
                let a = self.slots[pair[0]].as_ref().unwrap();
                let b = self.slots[pair[1]].as_ref().unwrap();
                if b.x - a.x < self.idm.vehicle_length {
                    return Err(SimError::Fault {
                        time: self.time,
                        detail: format!(
                            "overlap in lane {}: vehicle {} at {:.2} behind {} at {:.2}",
                            lane, a.id, a.x, b.id, b.x
                        ),
                    });
                }
            }
            if self.road.ring && list.len() >= 2 {
                let back = self.slots[*list.last().unwrap()].as_ref().unwrap();
                let front = self.slots[list[0]].as_ref().unwrap();
                if front.x + self.road.length - back.x < self.idm.vehicle_length {
                    return Err(SimError::Fault {
                        time: self.time,
                        detail: format!("overlap across the ring seam in lane {lane}"),
                    });
                }
            }
        }
        for veh in self.vehicles() {
            if veh.v < 0.0 || !veh.v.is_finite() || !veh.x.is_finite() {
                return Err(SimError::Fault {
                    time: self.time,
                    detail: format!("vehicle {} has invalid state v={} x={}", veh.id, veh.v, veh.x),
                });
            }
        }
        Ok(())
    }

    /// Snapshot of everything the metrics layer consumes. Vehicles still on
    /// the road contribute partial records.
    pub fn episode_record(&self) -> EpisodeRecord {
        let mut vehicles = self.completed.clone();
        vehicles.extend(self.slots.iter().flatten().map(|v| vehicle_record(v, None)));
        EpisodeRecord {
            sim_step: self.road.sim_step,
            ttc_threshold: self.safety.ttc_threshold,
            metrics_start: self.metrics_start,
            end_time: self.time,
            vehicles,
            changes: self.changes.clone(),
            intents: self.intents.clone(),
            spawned: self.spawned,
            despawned: self.despawned,
            spawn_queue_peak: self.queue_peak,
        }
    }
}

fn vehicle_record(veh: &Vehicle, despawn_time: Option<f64>) -> VehicleRecord {
    VehicleRecord {
        id: veh.id,
        is_cv: veh.is_cv,
        spawn_time: veh.spawn_time,
        despawn_time,
        window_time: veh.window_time,
        window_distance: veh.window_distance,
        window_co2: veh.window_co2,
        window_steps: veh.window_steps,
        window_ttc_steps: veh.window_ttc_steps,
        window_lane_changes: veh.window_lane_changes,
        cumulative_co2: veh.cumulative_co2,
        cumulative_ttc_exposure: veh.cumulative_ttc_exposure,
    }
}
