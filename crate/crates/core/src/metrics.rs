//! Evaluation metrics: average speed, a power-based CO2 surrogate,
//! time-to-collision exposure, time-exposed-TTC, lane-change counts, and
//! action-rate tables. All metrics respect the warm-up exclusion: only
//! samples taken inside the metric window count.

use crate::env::GridActionField;
use crate::error::SimError;
use crate::sim::EpisodeRecord;
use serde::{Deserialize, Serialize};

/// Safety thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    /// TTC threshold below which a step counts as exposed (s).
    pub ttc_threshold: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self { ttc_threshold: 5.0 }
    }
}

/// Parameters of the power-based CO2 surrogate. Absolute grams are not
/// comparable to tabulated emission models; relative comparisons between
/// runs are the point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Rolling resistance coefficient.
    pub rolling: f64,
    /// Drag area Cd*A (m^2).
    pub drag_area: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
    /// Idle emission rate (g/s).
    pub idle_rate: f64,
    /// CO2 grams per joule of positive traction work.
    pub grams_per_joule: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            mass: 1400.0,
            rolling: 0.012,
            drag_area: 0.65,
            air_density: 1.225,
            idle_rate: 0.4,
            grams_per_joule: 2.9e-4,
        }
    }
}

const GRAVITY: f64 = 9.81;

/// Instantaneous CO2 emission rate (g/s) from speed and acceleration.
/// Traction power below zero (braking) emits at the idle rate.
pub fn co2_rate(v: f64, accel: f64, p: &EmissionParams) -> f64 {
    let power = p.mass * v * (accel + GRAVITY * p.rolling)
        + 0.5 * p.air_density * p.drag_area * v.powi(3);
    p.idle_rate.max(p.idle_rate + p.grams_per_joule * power.max(0.0))
}

/// Time to collision against the same-lane leader: bumper gap over closing
/// speed when closing, +inf otherwise. Overlapping vehicles are an invariant
/// fault, not a metric.
pub fn ttc(
    follower_x: f64,
    follower_v: f64,
    leader_x: f64,
    leader_v: f64,
    vehicle_length: f64,
) -> Result<f64, SimError> {
    let gap = leader_x - follower_x - vehicle_length;
    if gap < 0.0 {
        return Err(SimError::Fault {
            time: f64::NAN,
            detail: format!("ttc on overlapping vehicles: gap {gap:.3} m"),
        });
    }
    let closing = follower_v - leader_v;
    if closing > 0.0 {
        Ok(gap / closing)
    } else {
        Ok(f64::INFINITY)
    }
}

/// Mean TTC exposure (s): per-vehicle total time spent below the TTC
/// threshold, averaged over vehicles present in the metric window.
pub fn mean_ttc_exposure(record: &EpisodeRecord) -> f64 {
    let present: Vec<_> = record.vehicles.iter().filter(|v| v.window_steps > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    let total: f64 = present
        .iter()
        .map(|v| v.window_ttc_steps as f64 * record.sim_step)
        .sum();
    total / present.len() as f64
}

/// Time-exposed TTC: fraction of each vehicle's (windowed) travel time spent
/// below the threshold, averaged over vehicles. Both the exposure and the
/// travel time are counted in steps, so the result lies in [0, 1].
pub fn tet(record: &EpisodeRecord) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in &record.vehicles {
        if v.window_steps == 0 {
            continue;
        }
        n += 1;
        sum += v.window_ttc_steps as f64 / v.window_steps as f64;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Space-mean travel speed over the metric window: total distance over total
/// time present, across all vehicles.
pub fn avg_speed(record: &EpisodeRecord) -> f64 {
    let dist: f64 = record.vehicles.iter().map(|v| v.window_distance).sum();
    let time: f64 = record.vehicles.iter().map(|v| v.window_time).sum();
    if time > 0.0 {
        dist / time
    } else {
        0.0
    }
}

/// Mean CO2 grams per vehicle present in the metric window.
pub fn co2_per_vehicle(record: &EpisodeRecord) -> f64 {
    let present: Vec<_> = record.vehicles.iter().filter(|v| v.window_steps > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().map(|v| v.window_co2).sum::<f64>() / present.len() as f64
}

/// Executed lane changes per vehicle: midpoint crossings inside the metric
/// window over vehicles despawned inside the window.
pub fn lane_change_count(record: &EpisodeRecord) -> f64 {
    let despawned = record.window_despawned();
    if despawned == 0 {
        return f64::NAN;
    }
    record.window_changes().count() as f64 / despawned as f64
}

/// Per-lane action-rate row over (grid, step) samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneActionRates {
    pub lane: usize,
    pub left_allow: f64,
    pub right_allow: f64,
    /// At least one direction allowed.
    pub any: f64,
    pub left_only: f64,
    pub right_only: f64,
}

/// Fraction of (grid, step) samples per lane with each permission pattern.
/// The identities `any = left + right - both` and
/// `left_allow = any - right_only` hold exactly.
pub fn action_distribution(log: &[GridActionField]) -> Vec<LaneActionRates> {
    let Some(first) = log.first() else {
        return Vec::new();
    };
    let lanes = first.n_lanes;
    let grids = first.n_grids;
    let mut rows = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let mut left = 0u64;
        let mut right = 0u64;
        let mut both = 0u64;
        let mut total = 0u64;
        for field in log {
            for grid in 0..grids {
                let a = field.get(lane, grid);
                total += 1;
                left += a.allow_left as u64;
                right += a.allow_right as u64;
                both += (a.allow_left && a.allow_right) as u64;
            }
        }
        let t = total as f64;
        let (l, r, b) = (left as f64 / t, right as f64 / t, both as f64 / t);
        rows.push(LaneActionRates {
            lane,
            left_allow: l,
            right_allow: r,
            any: l + r - b,
            left_only: l - b,
            right_only: r - b,
        });
    }
    rows
}

/// All evaluation metrics of one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Vehicles present in the metric window.
    pub n_vehicles: usize,
    pub avg_speed: f64,
    pub co2_per_vehicle: f64,
    pub mean_ttc_exposure: f64,
    pub tet: f64,
    pub lane_changes_per_vehicle: f64,
    pub action_rates: Vec<LaneActionRates>,
}

impl EpisodeMetrics {
    /// Compute all metrics; `None` when the episode contributed no samples
    /// inside the metric window (empty metrics, not zeros).
    pub fn compute(record: &EpisodeRecord, action_log: &[GridActionField]) -> Option<Self> {
        let n_vehicles = record.vehicles.iter().filter(|v| v.window_steps > 0).count();
        if n_vehicles == 0 {
            return None;
        }
        Some(Self {
            n_vehicles,
            avg_speed: avg_speed(record),
            co2_per_vehicle: co2_per_vehicle(record),
            mean_ttc_exposure: mean_ttc_exposure(record),
            tet: tet(record),
            lane_changes_per_vehicle: lane_change_count(record),
            action_rates: action_distribution(action_log),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GridAction;
    use crate::sim::VehicleRecord;

    fn base_vehicle(id: u64) -> VehicleRecord {
        VehicleRecord {
            id,
            is_cv: false,
            spawn_time: 0.0,
            despawn_time: Some(100.0),
            window_time: 0.0,
            window_distance: 0.0,
            window_co2: 0.0,
            window_steps: 0,
            window_ttc_steps: 0,
            window_lane_changes: 0,
            cumulative_co2: 0.0,
            cumulative_ttc_exposure: 0.0,
        }
    }

    fn record(vehicles: Vec<VehicleRecord>) -> EpisodeRecord {
        EpisodeRecord {
            sim_step: 0.1,
            ttc_threshold: 5.0,
            metrics_start: Some(0.0),
            end_time: 100.0,
            vehicles,
            changes: Vec::new(),
            intents: Vec::new(),
            spawned: 0,
            despawned: 0,
            spawn_queue_peak: 0,
        }
    }

    #[test]
    fn ttc_arithmetic() {
        // 50 m bumper gap, closing at 10 m/s.
        let t = ttc(0.0, 20.0, 55.0, 10.0, 5.0).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert_eq!(ttc(0.0, 10.0, 55.0, 10.0, 5.0).unwrap(), f64::INFINITY);
        assert!(ttc(0.0, 10.0, 4.0, 10.0, 5.0).is_err());
    }

    #[test]
    fn ttc_matches_kinematic_intercept_oracle() {
        // Oracle: integrate both vehicles at constant speed and find the
        // first time the bumper gap hits zero.
        let intercept = |gap0: f64, vf: f64, vl: f64| -> f64 {
            let dt = 1e-4;
            let mut gap = gap0;
            let mut t = 0.0;
            while t < 1000.0 {
                gap += (vl - vf) * dt;
                t += dt;
                if gap <= 0.0 {
                    return t;
                }
            }
            f64::INFINITY
        };
        let cases = [(30.0, 20.0, 14.0), (12.5, 8.0, 3.0), (80.0, 24.0, 23.0)];
        for (gap, vf, vl) in cases {
            let got = ttc(0.0, vf, gap + 5.0, vl, 5.0).unwrap();
            let want = intercept(gap, vf, vl);
            assert!((got - want).abs() < 1e-2, "gap {gap}: {got} vs {want}");
        }
    }

    #[test]
    fn exposure_and_tet_arithmetic() {
        // One vehicle below threshold for exactly 10 s of a 2-vehicle episode.
        let mut a = base_vehicle(0);
        a.window_steps = 400;
        a.window_ttc_steps = 100; // 10 s at 0.1 s steps
        let mut b = base_vehicle(1);
        b.window_steps = 400;
        let rec = record(vec![a, b]);
        assert!((mean_ttc_exposure(&rec) - 5.0).abs() < 1e-12);
        assert!((tet(&rec) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn tet_half_exposed() {
        let mut a = base_vehicle(0);
        a.window_steps = 200;
        a.window_ttc_steps = 100;
        let mut b = base_vehicle(1);
        b.window_steps = 600;
        b.window_ttc_steps = 300;
        let rec = record(vec![a, b]);
        assert!((tet(&rec) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exposure_matches_brute_force_recount() {
        // Oracle: rebuild the step indicators from a synthetic stop-wave TTC
        // series and recount.
        let threshold = 5.0;
        let dt = 0.1;
        let mut vehicles = Vec::new();
        let mut expected_exposure = Vec::new();
        for i in 0..20u64 {
            // TTC series: starts high, dips during the "stop wave", recovers.
            let series: Vec<f64> = (0..600)
                .map(|k| {
                    let phase = (k as f64 / 600.0 + i as f64 * 0.05) * std::f64::consts::TAU;
                    8.0 + 6.0 * phase.sin()
                })
                .collect();
            let below = series.iter().filter(|&&x| x < threshold).count();
            let mut v = base_vehicle(i);
            v.window_steps = series.len() as u64;
            v.window_ttc_steps = below as u64;
            expected_exposure.push(below as f64 * dt);
            vehicles.push(v);
        }
        let rec = record(vehicles);
        let want = expected_exposure.iter().sum::<f64>() / expected_exposure.len() as f64;
        assert!((mean_ttc_exposure(&rec) - want).abs() < 1e-12);
    }

    #[test]
    fn co2_idle_and_convexity() {
        let p = EmissionParams::default();
        assert_eq!(co2_rate(0.0, 0.0, &p), p.idle_rate);
        // Doubling speed more than doubles the above-idle rate (cubic drag).
        let r10 = co2_rate(10.0, 0.0, &p) - p.idle_rate;
        let r20 = co2_rate(20.0, 0.0, &p) - p.idle_rate;
        assert!(r20 > 2.0 * r10);
        // Braking emits at idle.
        assert_eq!(co2_rate(15.0, -3.0, &p), p.idle_rate);
    }

    #[test]
    fn steady_cruise_matches_trapezoid_integration() {
        // Oracle: trapezoid-integrate the rate along a constant-speed
        // trajectory over 1000 m and compare against rate * duration.
        let p = EmissionParams::default();
        let v = 22.93;
        let duration = 1000.0 / v;
        let n = 2000;
        let dt = duration / n as f64;
        let mut total = 0.0;
        for k in 0..n {
            let _ = k;
            let r0 = co2_rate(v, 0.0, &p);
            let r1 = co2_rate(v, 0.0, &p);
            total += 0.5 * (r0 + r1) * dt;
        }
        let direct = co2_rate(v, 0.0, &p) * duration;
        assert!((total - direct).abs() < 1e-9);
    }

    #[test]
    fn lane_change_count_arithmetic() {
        use crate::sim::{ChangeEvent, Direction};
        let mut a = base_vehicle(0);
        a.window_steps = 10;
        a.despawn_time = Some(50.0);
        let mut b = base_vehicle(1);
        b.window_steps = 10;
        b.despawn_time = Some(60.0);
        let mut rec = record(vec![a, b]);
        let change = |t: f64| ChangeEvent {
            t,
            vehicle: 0,
            is_cv: false,
            dir: Direction::Left,
            from_lane: 0,
            to_lane: 1,
            origin_grid: 3,
        };
        rec.changes = vec![change(10.0), change(20.0), change(30.0)];
        assert!((lane_change_count(&rec) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn action_rate_identities_hold_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let log: Vec<GridActionField> = (0..50)
            .map(|_| {
                let mut f = GridActionField::all_allow(3, 10, 100.0);
                for lane in 0..3 {
                    for grid in 0..10 {
                        f.set(
                            lane,
                            grid,
                            GridAction {
                                allow_left: rng.random::<bool>(),
                                allow_right: rng.random::<bool>(),
                            },
                        );
                    }
                }
                f
            })
            .collect();
        for row in action_distribution(&log) {
            let both = row.left_allow + row.right_allow - row.any;
            assert!((row.left_only - (row.left_allow - both)).abs() < 1e-12);
            assert!((row.right_only - (row.right_allow - both)).abs() < 1e-12);
            assert!((row.left_allow - (row.any - row.right_only)).abs() < 1e-12);
            // Uniform actions: any ~ 0.75 within 3 sigma of Bernoulli(0.75)
            // over 500 samples.
            let sigma = (0.75f64 * 0.25 / 500.0).sqrt();
            assert!((row.any - 0.75).abs() < 3.0 * sigma, "any = {}", row.any);
        }
    }

    #[test]
    fn all_allow_and_all_block_rates() {
        let allow = vec![GridActionField::all_allow(2, 5, 100.0); 10];
        for row in action_distribution(&allow) {
            assert_eq!(row.any, 1.0);
            assert_eq!(row.left_only, 0.0);
            assert_eq!(row.right_only, 0.0);
        }
        let block = vec![GridActionField::all_block(2, 5, 100.0); 10];
        for row in action_distribution(&block) {
            assert_eq!(row.any, 0.0);
        }
    }

    #[test]
    fn warmup_only_episode_yields_empty_metrics() {
        let rec = record(vec![base_vehicle(0)]);
        assert!(EpisodeMetrics::compute(&rec, &[]).is_none());
    }
}
