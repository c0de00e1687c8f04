//! Lane-change decision functions: the two-intent model (keep-right and
//! speed-gain) over anticipated speeds, and the gap/deceleration safety
//! check applied before a change starts.

use super::config::BehaviorConfig;
use super::vehicle::{Direction, IntentReason, Vehicle};
use crate::idm::IdmParams;

/// Leader or follower as seen from a candidate position: bumper gap (m) and
/// speed (m/s).
pub type GapSpeed = (f64, f64);

/// What a vehicle sees in one adjacent lane at its own longitudinal position.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaneView {
    pub leader: Option<GapSpeed>,
    pub follower: Option<GapSpeed>,
}

/// Neighborhood of one vehicle: its current-lane leader and the adjacent
/// lanes (absent at the road borders).
#[derive(Debug, Clone, Copy, Default)]
pub struct NeighborView {
    pub current_leader: Option<GapSpeed>,
    pub left: Option<LaneView>,
    pub right: Option<LaneView>,
}

/// Speed a driver anticipates sustaining behind the given leader.
///
/// With no leader inside the lookahead range this is the desired speed.
/// Behind a leader it is the leader's speed plus the surplus gap (beyond the
/// comfortable following distance) spent over the anticipation horizon —
/// i.e. the steady following speed, slightly optimistic while the gap is
/// still open.
pub fn anticipated_speed(leader: Option<GapSpeed>, p: &IdmParams, b: &BehaviorConfig) -> f64 {
    match leader {
        None => p.desired_speed,
        Some((gap, _)) if gap > b.lookahead => p.desired_speed,
        Some((gap, v_leader)) => {
            let comfortable = p.min_gap + v_leader * p.time_gap;
            let surplus = (gap - comfortable).max(0.0);
            (v_leader + surplus / b.anticipation_time).min(p.desired_speed)
        }
    }
}

/// Speed-gain intent: change toward the adjacent lane whose anticipated
/// speed beats the current lane's by the direction's threshold. Rightward
/// overtaking carries the higher threshold.
pub fn speed_gain_intent(
    veh: &Vehicle,
    view: &NeighborView,
    b: &BehaviorConfig,
) -> Option<(Direction, IntentReason)> {
    let current = anticipated_speed(view.current_leader, &veh.idm, b);
    let mut best: Option<(Direction, f64)> = None;
    if let Some(left) = &view.left {
        let margin = anticipated_speed(left.leader, &veh.idm, b) - current - b.speed_gain_left;
        if margin > 0.0 {
            best = Some((Direction::Left, margin));
        }
    }
    if let Some(right) = &view.right {
        let margin = anticipated_speed(right.leader, &veh.idm, b) - current - b.speed_gain_right;
        if margin > 0.0 && best.map_or(true, |(_, m)| margin > m) {
            best = Some((Direction::Right, margin));
        }
    }
    best.map(|(dir, _)| (dir, IntentReason::SpeedGain))
}

/// Keep-right intent: clear the overtaking lane when the right lane costs
/// no more than `keep_right_epsilon` of anticipated speed.
pub fn keep_right_intent(
    veh: &Vehicle,
    view: &NeighborView,
    b: &BehaviorConfig,
) -> Option<(Direction, IntentReason)> {
    let right = view.right.as_ref()?;
    let current = anticipated_speed(view.current_leader, &veh.idm, b);
    let right_speed = anticipated_speed(right.leader, &veh.idm, b);
    (right_speed >= current - b.keep_right_epsilon)
        .then_some((Direction::Right, IntentReason::KeepRight))
}

/// Combined intent with speed-gain taking precedence over keep-right.
/// Absence of an intent is a valid result.
pub fn lane_change_intent(
    veh: &Vehicle,
    view: &NeighborView,
    b: &BehaviorConfig,
) -> Option<(Direction, IntentReason)> {
    speed_gain_intent(veh, view, b).or_else(|| keep_right_intent(veh, view, b))
}

/// Required constant deceleration for a follower at `v_follow` to avoid
/// reaching a leader moving steadily at `v_lead` from bumper gap `gap`.
pub fn required_decel(v_follow: f64, v_lead: f64, gap: f64) -> f64 {
    let closing = v_follow - v_lead;
    if closing <= 0.0 {
        return 0.0;
    }
    closing * closing / (2.0 * gap.max(1e-9))
}

/// Whether `veh` may start a change into the lane described by `target`.
///
/// The change is safe when both the new leader and the new follower keep at
/// least the minimum gap, and the follower can avoid conflict braking no
/// harder than `safe_decel`.
pub fn safety_check(veh: &Vehicle, target: &LaneView, b: &BehaviorConfig) -> bool {
    if let Some((gap, _)) = target.leader {
        if gap < veh.idm.min_gap {
            return false;
        }
    }
    if let Some((gap, v_follower)) = target.follower {
        if gap < veh.idm.min_gap {
            return false;
        }
        if required_decel(v_follower, veh.v, gap) > b.safe_decel {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idm::IdmParams;
    use crate::sim::vehicle::Vehicle;

    fn test_vehicle(lane: usize, v: f64) -> Vehicle {
        Vehicle::new(0, lane, 500.0, v, false, IdmParams::default(), 0.0)
    }

    fn empty_lane() -> Option<LaneView> {
        Some(LaneView::default())
    }

    #[test]
    fn empty_road_clears_the_overtaking_lane() {
        // A vehicle in lane 2 (index 1) with everything free must keep right.
        let veh = test_vehicle(1, 24.0);
        let view = NeighborView {
            current_leader: None,
            left: empty_lane(),
            right: empty_lane(),
        };
        let b = BehaviorConfig::default();
        assert_eq!(
            lane_change_intent(&veh, &view, &b),
            Some((Direction::Right, IntentReason::KeepRight))
        );
    }

    #[test]
    fn slow_leader_triggers_a_left_speed_gain() {
        let b = BehaviorConfig::default();
        let veh = test_vehicle(0, 18.0);
        let view = NeighborView {
            current_leader: Some((30.0, 10.0)),
            left: empty_lane(),
            right: None,
        };
        assert_eq!(
            lane_change_intent(&veh, &view, &b),
            Some((Direction::Left, IntentReason::SpeedGain))
        );
    }

    #[test]
    fn rightmost_vehicle_on_free_road_stays_put() {
        let b = BehaviorConfig::default();
        let veh = test_vehicle(0, 24.0);
        let view = NeighborView {
            current_leader: None,
            left: empty_lane(),
            right: None,
        };
        assert_eq!(lane_change_intent(&veh, &view, &b), None);
    }

    #[test]
    fn intent_decision_matches_equilibrium_speed_oracle() {
        // Oracle: the steady speed behind a leader is the leader's own speed
        // (capped at v0); with a tight gap the surplus term vanishes and the
        // decision must coincide with comparing equilibrium speeds directly.
        let b = BehaviorConfig::default();
        let p = IdmParams::default();
        for leader_v in [2.0f64, 5.0, 8.0, 11.0, 14.0, 17.0, 20.0, 22.0] {
            let tight_gap = 0.9 * (p.min_gap + leader_v * p.time_gap);
            let veh = test_vehicle(0, leader_v);
            let view = NeighborView {
                current_leader: Some((tight_gap, leader_v)),
                left: empty_lane(),
                right: None,
            };
            let oracle_gain = p.desired_speed.min(p.desired_speed) - leader_v.min(p.desired_speed);
            let expected = oracle_gain > b.speed_gain_left;
            let got = speed_gain_intent(&veh, &view, &b).is_some();
            assert_eq!(
                got, expected,
                "leader_v={leader_v}: oracle gain {oracle_gain} vs threshold {}",
                b.speed_gain_left
            );
        }
    }

    #[test]
    fn keep_right_respects_the_epsilon_margin() {
        let b = BehaviorConfig::default();
        let veh = test_vehicle(1, 20.0);
        // Right lane anticipated speed far below the current lane's: no.
        let slow_right = NeighborView {
            current_leader: None,
            left: None,
            right: Some(LaneView {
                leader: Some((20.0, 8.0)),
                follower: None,
            }),
        };
        assert_eq!(keep_right_intent(&veh, &slow_right, &b), None);
        // Right lane as fast as the current lane: yes.
        let fast_right = NeighborView {
            current_leader: Some((40.0, 20.0)),
            left: None,
            right: Some(LaneView {
                leader: Some((40.0, 20.0)),
                follower: None,
            }),
        };
        assert!(keep_right_intent(&veh, &fast_right, &b).is_some());
    }

    #[test]
    fn safety_rejects_sub_minimum_gaps() {
        let b = BehaviorConfig::default();
        let veh = test_vehicle(0, 20.0);
        let tight_leader = LaneView {
            leader: Some((2.0, 20.0)),
            follower: None,
        };
        assert!(!safety_check(&veh, &tight_leader, &b));
        let empty = LaneView::default();
        assert!(safety_check(&veh, &empty, &b));
    }

    #[test]
    fn safety_matches_constant_braking_collision_predictor() {
        // Oracle: forward-simulate the new follower braking at exactly
        // safe_decel until speeds match; the change is safe iff the bumper
        // gap stays positive throughout. For a steady leader this is the
        // closed-form criterion (dv)^2 / (2 gap) <= safe_decel.
        let b = BehaviorConfig::default();
        let dt = 0.1;
        let sim_safe = |gap0: f64, v_follow: f64, v_lead: f64| -> bool {
            let mut gap = gap0;
            let mut v = v_follow;
            for _ in 0..3000 {
                v = (v - b.safe_decel * dt).max(v_lead.min(v));
                gap += (v_lead - v) * dt;
                if gap <= 0.0 {
                    return false;
                }
                if v <= v_lead {
                    break;
                }
            }
            true
        };
        // Follower at 20 m/s, 15 m behind the merge slot; sweep the merging
        // vehicle's speed avoiding the exact decision boundary.
        let veh_speeds = [6.0, 8.0, 10.0, 11.0, 13.0, 14.0, 16.0, 20.0, 24.0];
        for &vc in &veh_speeds {
            let veh = test_vehicle(0, vc);
            let target = LaneView {
                leader: None,
                follower: Some((15.0, 20.0)),
            };
            let expected = sim_safe(15.0, 20.0, vc);
            assert_eq!(
                safety_check(&veh, &target, &b),
                expected,
                "merging at {vc} m/s ahead of a 20 m/s follower at 15 m"
            );
        }
    }
}
