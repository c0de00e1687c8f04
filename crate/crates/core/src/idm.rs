//! Intelligent driver model: car-following acceleration and the equilibrium
//! flow-density relation (fundamental diagram) it induces.

use crate::error::{ConfigError, SimError};
use serde::{Deserialize, Serialize};

/// Sentinel gap used when a vehicle has no leader.
pub const FREE_ROAD_GAP: f64 = 1.0e6;

/// Driver/vehicle parameters of the intelligent driver model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Vehicle length (m).
    pub vehicle_length: f64,
    /// Desired speed v0 (m/s).
    pub desired_speed: f64,
    /// Desired time gap T (s).
    pub time_gap: f64,
    /// Minimum bumper gap s0 (m).
    pub min_gap: f64,
    /// Acceleration exponent.
    pub accel_exponent: f64,
    /// Maximum acceleration a (m/s^2).
    pub max_accel: f64,
    /// Comfortable deceleration b (m/s^2).
    pub comfort_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            vehicle_length: 5.0,
            desired_speed: 24.59,
            time_gap: 1.4,
            min_gap: 2.5,
            accel_exponent: 4.0,
            max_accel: 0.73,
            comfort_decel: 1.67,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("vehicle_length", self.vehicle_length),
            ("desired_speed", self.desired_speed),
            ("time_gap", self.time_gap),
            ("min_gap", self.min_gap),
            ("accel_exponent", self.accel_exponent),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(ConfigError::invalid(name, format!("must be positive, got {value}")));
            }
        }
        if self.accel_exponent < 1.0 {
            return Err(ConfigError::invalid("accel_exponent", "must be >= 1"));
        }
        Ok(())
    }
}

/// IDM acceleration for a vehicle at speed `v` with bumper gap `gap` to its
/// leader and closing speed `dv` (positive when approaching).
///
/// `eff_time_gap` replaces the nominal time gap; degraded road sections raise
/// it. Pass [`FREE_ROAD_GAP`] when there is no leader. The result never
/// exceeds `p.max_accel`; it is unbounded below (collision avoidance may
/// demand arbitrarily strong braking).
pub fn idm_acceleration(
    v: f64,
    gap: f64,
    dv: f64,
    p: &IdmParams,
    eff_time_gap: f64,
) -> Result<f64, SimError> {
    if !(v.is_finite() && gap.is_finite() && dv.is_finite() && eff_time_gap.is_finite()) {
        return Err(SimError::NonFinite {
            op: "idm_acceleration",
            detail: format!("v={v}, gap={gap}, dv={dv}, eff_time_gap={eff_time_gap}"),
        });
    }
    if gap <= 0.0 {
        return Err(SimError::NonFinite {
            op: "idm_acceleration",
            detail: format!("gap must be positive, got {gap}"),
        });
    }
    let desired_gap =
        p.min_gap + v * eff_time_gap + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    let free_term = (v / p.desired_speed).powf(p.accel_exponent);
    Ok(p.max_accel * (1.0 - free_term - (desired_gap / gap).powi(2)))
}

/// Equilibrium bumper gap s_e(v) = (s0 + v T) / sqrt(1 - (v/v0)^delta).
///
/// Defined for 0 <= v < v0; the gap diverges at the desired speed.
pub fn equilibrium_gap(v: f64, p: &IdmParams) -> Result<f64, SimError> {
    if v < 0.0 || !v.is_finite() {
        return Err(SimError::NonFinite {
            op: "equilibrium_gap",
            detail: format!("v={v}"),
        });
    }
    if v >= p.desired_speed {
        return Err(SimError::FreeFlowLimit {
            v,
            v0: p.desired_speed,
        });
    }
    let free = 1.0 - (v / p.desired_speed).powf(p.accel_exponent);
    Ok((p.min_gap + v * p.time_gap) / free.sqrt())
}

/// Equilibrium (density, flow) at steady speed `v`: density in veh/m,
/// flow in veh/h.
pub fn equilibrium_state(v: f64, p: &IdmParams) -> Result<(f64, f64), SimError> {
    let gap = equilibrium_gap(v, p)?;
    let density = 1.0 / (gap + p.vehicle_length);
    let flow = 3600.0 * density * v;
    Ok((density, flow))
}

/// Equilibrium speed V_e(rho) — the inverse of the density branch of
/// [`equilibrium_state`], solved by bisection. Densities at or above the
/// jam density map to 0; vanishing densities map to the desired speed.
pub fn equilibrium_speed_for_density(density: f64, p: &IdmParams) -> f64 {
    let jam = 1.0 / (p.min_gap + p.vehicle_length);
    if density <= 0.0 {
        return p.desired_speed;
    }
    if density >= jam {
        return 0.0;
    }
    // density(v) is strictly decreasing on [0, v0).
    let mut lo = 0.0;
    let mut hi = p.desired_speed * (1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (rho, _) = equilibrium_state(mid, p).expect("mid < v0");
        if rho > density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Capacity of the fundamental diagram: (speed, density, flow) at the
/// maximum of q(v) = 3600 v / (s_e(v) + L), found by golden-section search.
pub fn capacity(p: &IdmParams) -> (f64, f64, f64) {
    let flow_at = |v: f64| equilibrium_state(v, p).map(|(_, q)| q).unwrap_or(0.0);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, p.desired_speed * (1.0 - 1e-9));
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (flow_at(a), flow_at(b));
    for _ in 0..200 {
        if fa > fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = flow_at(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = flow_at(b);
        }
    }
    let v = 0.5 * (lo + hi);
    let (rho, q) = equilibrium_state(v, p).expect("capacity speed < v0");
    (v, rho, q)
}

/// Equilibrium speed sustaining per-lane inflow `flow_veh_h`, on the free or
/// the congested branch of the fundamental diagram.
pub fn equilibrium_speed_for_flow(
    flow_veh_h: f64,
    congested: bool,
    p: &IdmParams,
) -> Result<f64, SimError> {
    let (v_cap, _, q_cap) = capacity(p);
    if flow_veh_h < 0.0 || flow_veh_h > q_cap {
        return Err(SimError::Config(ConfigError::invalid(
            "per_lane_inflow",
            format!("flow {flow_veh_h} veh/h exceeds capacity {q_cap:.1} veh/h"),
        )));
    }
    // q(v) rises from 0 on the congested branch [0, v_cap] and falls back to 0
    // on the free branch [v_cap, v0); bisect the requested branch.
    let (mut lo, mut hi) = if congested {
        (0.0, v_cap)
    } else {
        (v_cap, p.desired_speed * (1.0 - 1e-12))
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (_, q) = equilibrium_state(mid, p).expect("mid < v0");
        let q_low_side = if congested { q < flow_veh_h } else { q > flow_veh_h };
        if q_low_side {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standstill_on_empty_road_accelerates_at_max() {
        let p = IdmParams::default();
        let a = idm_acceleration(0.0, FREE_ROAD_GAP, 0.0, &p, p.time_gap).unwrap();
        assert_relative_eq!(a, 0.73, max_relative = 1e-6);
    }

    #[test]
    fn desired_speed_is_a_fixed_point() {
        let p = IdmParams::default();
        let a = idm_acceleration(p.desired_speed, FREE_ROAD_GAP, 0.0, &p, p.time_gap).unwrap();
        assert!(a.abs() < 1e-6, "accel at v0 on empty road: {a}");
    }

    #[test]
    fn equilibrium_gap_zeroes_the_net_force() {
        // Independent oracle: the analytic equilibrium gap must make the IDM
        // acceleration vanish for any speed below v0.
        let p = IdmParams::default();
        for &v in &[3.0, 10.0, 17.5, 20.76, 24.0] {
            let gap = equilibrium_gap(v, &p).unwrap();
            let a = idm_acceleration(v, gap, 0.0, &p, p.time_gap).unwrap();
            assert!(a.abs() < 1e-12, "v={v}: accel {a} at equilibrium gap {gap}");
        }
        // The high-demand operating point from the demand table.
        let gap = equilibrium_gap(20.76, &p).unwrap();
        assert_relative_eq!(gap, 45.0, max_relative = 2e-3);
        let a = idm_acceleration(20.76, 45.0, 0.0, &p, p.time_gap).unwrap();
        assert!(a.abs() < 1e-3);
    }

    #[test]
    fn demand_table_operating_points() {
        // (speed, density, flow) triples for the low / high / congested-high
        // demand settings; density and flow must match within 2%.
        let p = IdmParams::default();
        for &(v, rho_ref, q_ref) in &[
            (22.93, 0.013, 1100.0),
            (20.76, 0.02, 1495.0),
            (6.53, 0.06, 1410.0),
        ] {
            let (rho, q) = equilibrium_state(v, &p).unwrap();
            assert_relative_eq!(rho, rho_ref, max_relative = 0.02);
            assert_relative_eq!(q, q_ref, max_relative = 0.02);
        }
    }

    #[test]
    fn density_decreases_and_flow_is_concave_in_speed() {
        let p = IdmParams::default();
        let vs: Vec<f64> = (1..98).map(|i| i as f64 * 0.25).collect();
        let states: Vec<(f64, f64)> = vs
            .iter()
            .map(|&v| equilibrium_state(v, &p).unwrap())
            .collect();
        for w in states.windows(2) {
            assert!(w[1].0 < w[0].0, "density must fall as speed rises");
        }
        // Flow as a function of density is concave: sample q(rho) along the
        // curve and check midpoint chords.
        let mut curve: Vec<(f64, f64)> = states.iter().map(|&(rho, q)| (rho, q)).collect();
        curve.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in curve.windows(3) {
            let (r0, q0) = w[0];
            let (r1, q1) = w[1];
            let (r2, q2) = w[2];
            let chord = q0 + (q2 - q0) * (r1 - r0) / (r2 - r0);
            assert!(q1 >= chord - 1e-6, "flow curve not concave near rho={r1}");
        }
    }

    #[test]
    fn above_desired_speed_is_rejected() {
        let p = IdmParams::default();
        assert!(matches!(
            equilibrium_state(24.59, &p),
            Err(SimError::FreeFlowLimit { .. })
        ));
        assert!(matches!(
            equilibrium_state(30.0, &p),
            Err(SimError::FreeFlowLimit { .. })
        ));
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let p = IdmParams::default();
        assert!(idm_acceleration(f64::NAN, 10.0, 0.0, &p, 1.4).is_err());
        assert!(idm_acceleration(10.0, f64::INFINITY, 0.0, &p, 1.4).is_err());
        assert!(idm_acceleration(10.0, -1.0, 0.0, &p, 1.4).is_err());
    }

    #[test]
    fn acceleration_never_exceeds_max() {
        let p = IdmParams::default();
        for v in [0.0, 5.0, 15.0, 24.0] {
            for gap in [1.0, 10.0, 100.0, FREE_ROAD_GAP] {
                for dv in [-10.0, -1.0, 0.0, 1.0, 10.0] {
                    let a = idm_acceleration(v, gap, dv, &p, p.time_gap).unwrap();
                    assert!(a <= p.max_accel + 1e-12);
                }
            }
        }
    }

    #[test]
    fn speed_for_density_inverts_the_diagram() {
        let p = IdmParams::default();
        for &v in &[2.0, 6.53, 12.0, 20.76, 22.93] {
            let (rho, _) = equilibrium_state(v, &p).unwrap();
            let back = equilibrium_speed_for_density(rho, &p);
            assert_relative_eq!(back, v, max_relative = 1e-6);
        }
        assert_relative_eq!(
            equilibrium_speed_for_density(0.0, &p),
            p.desired_speed,
            max_relative = 1e-12
        );
        assert_eq!(equilibrium_speed_for_density(0.2, &p), 0.0);
    }

    #[test]
    fn speed_for_flow_hits_both_branches() {
        let p = IdmParams::default();
        let v_free = equilibrium_speed_for_flow(1100.0, false, &p).unwrap();
        assert_relative_eq!(v_free, 22.93, max_relative = 5e-3);
        let v_cong = equilibrium_speed_for_flow(1410.0, true, &p).unwrap();
        assert_relative_eq!(v_cong, 6.53, max_relative = 5e-3);
        let (_, _, q_cap) = capacity(&p);
        assert!(equilibrium_speed_for_flow(q_cap + 10.0, false, &p).is_err());
    }

    #[test]
    fn capacity_matches_high_demand_setting() {
        // The high-demand point sits at the top of the diagram.
        let p = IdmParams::default();
        let (v, rho, q) = capacity(&p);
        assert_relative_eq!(q, 1495.0, max_relative = 0.01);
        assert_relative_eq!(v, 20.76, max_relative = 0.01);
        assert_relative_eq!(rho, 0.02, max_relative = 0.01);
    }
}
