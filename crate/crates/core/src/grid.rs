//! Lane grids: aggregation of microscopic vehicle states into per-grid
//! macroscopic features, and the local observation windows served to the
//! per-grid agents.

use crate::error::ConfigError;
use serde::{Deserialize, Serialize};

/// Observation window: 3 lanes x 5 grids x 4 features, plus one boundary
/// mask value per window cell.
pub const WINDOW_LANES: usize = 3;
pub const WINDOW_GRIDS: usize = 5;
pub const WINDOW_CELLS: usize = WINDOW_LANES * WINDOW_GRIDS;
pub const FEATURES_PER_CELL: usize = 4;
pub const OBS_DIM: usize = WINDOW_CELLS * FEATURES_PER_CELL + WINDOW_CELLS;

/// Spatial discretization of the road into lane grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lanes: usize,
    pub n_grids: usize,
    /// Grid length (m); `grid_length * n_grids` equals the road length.
    pub grid_length: f64,
}

impl GridSpec {
    pub fn new(road_length: f64, grid_length: f64, n_lanes: usize) -> Result<Self, ConfigError> {
        if grid_length <= 0.0 || road_length <= 0.0 {
            return Err(ConfigError::invalid("grid_length", "must be positive"));
        }
        let n = road_length / grid_length;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(ConfigError::invalid(
                "grid_length",
                format!("{grid_length} m must divide the road length {road_length} m exactly"),
            ));
        }
        Ok(Self {
            n_lanes,
            n_grids: n.round() as usize,
            grid_length,
        })
    }

    pub fn grid_length_m(&self) -> f64 {
        self.grid_length
    }

    pub fn road_length(&self) -> f64 {
        self.grid_length * self.n_grids as f64
    }

    pub fn n_agents(&self) -> usize {
        self.n_lanes * self.n_grids
    }

    /// Grid index of position `x`; grid `i` covers `[i*dx, (i+1)*dx)`, with
    /// the road's end point folded into the last grid.
    pub fn grid_of(&self, x: f64) -> usize {
        ((x / self.grid_length_m()) as usize).min(self.n_grids - 1)
    }
}

/// Aggregate state of one lane grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    /// Total vehicle density (veh/m).
    pub rho: f64,
    /// Connected-vehicle density (veh/m).
    pub rho_c: f64,
    /// Mean speed over all vehicles (m/s).
    pub v: f64,
    /// Mean speed over connected vehicles (m/s).
    pub v_c: f64,
}

/// Minimal view of one vehicle for aggregation.
#[derive(Debug, Clone, Copy)]
pub struct VehicleObs {
    pub lane: usize,
    pub x: f64,
    pub v: f64,
    pub is_cv: bool,
}

/// Per-grid aggregate field over the whole road.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    cells: Vec<GridState>,
}

impl GridField {
    pub fn from_cells(spec: GridSpec, cells: Vec<GridState>) -> Self {
        assert_eq!(cells.len(), spec.n_agents());
        Self { spec, cells }
    }

    pub fn get(&self, lane: usize, grid: usize) -> &GridState {
        &self.cells[lane * self.spec.n_grids + grid]
    }

    pub fn cells(&self) -> &[GridState] {
        &self.cells
    }

    /// Total vehicle count implied by the densities; exact by construction.
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.rho * self.spec.grid_length_m()).sum()
    }
}

/// Count vehicles per grid and average their speeds. Empty grids use the
/// free-flow convention `v = v_c = v_max` so downstream rewards stay
/// well-defined and non-punitive.
pub fn aggregate(
    vehicles: impl Iterator<Item = VehicleObs>,
    spec: &GridSpec,
    v_max: f64,
) -> GridField {
    let n = spec.n_agents();
    let mut count = vec![0u32; n];
    let mut count_cv = vec![0u32; n];
    let mut speed = vec![0.0f64; n];
    let mut speed_cv = vec![0.0f64; n];
    for veh in vehicles {
        let idx = veh.lane * spec.n_grids + spec.grid_of(veh.x);
        count[idx] += 1;
        speed[idx] += veh.v;
        if veh.is_cv {
            count_cv[idx] += 1;
            speed_cv[idx] += veh.v;
        }
    }
    let dx = spec.grid_length_m();
    let cells = (0..n)
        .map(|i| GridState {
            rho: count[i] as f64 / dx,
            rho_c: count_cv[i] as f64 / dx,
            v: if count[i] > 0 {
                speed[i] / count[i] as f64
            } else {
                v_max
            },
            v_c: if count_cv[i] > 0 {
                speed_cv[i] / count_cv[i] as f64
            } else {
                v_max
            },
        })
        .collect();
    GridField {
        spec: *spec,
        cells,
    }
}

/// Flattened, normalized observation window for one agent. Layout: for each
/// window lane (below, same, above) and each window grid (-2..+2), the four
/// features (rho, rho_c, v, v_c) scaled into [0, 1]; then one mask value per
/// window cell in the same lane-major order (1 = outside the road).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Build the observation of agent `(lane, grid)` from the aggregate field,
/// normalizing by `v_max` and `rho_max`.
pub fn observe(field: &GridField, lane: usize, grid: usize, v_max: f64, rho_max: f64) -> Observation {
    let spec = &field.spec;
    debug_assert!(lane < spec.n_lanes && grid < spec.n_grids);
    let mut out = [0.0f64; OBS_DIM];
    let mut f = 0;
    let mask_base = WINDOW_CELLS * FEATURES_PER_CELL;
    let mut cell = 0;
    for dl in -1i64..=1 {
        for dg in -2i64..=2 {
            let l = lane as i64 + dl;
            let g = grid as i64 + dg;
            let inside =
                l >= 0 && l < spec.n_lanes as i64 && g >= 0 && g < spec.n_grids as i64;
            if inside {
                let s = field.get(l as usize, g as usize);
                out[f] = (s.rho / rho_max).clamp(0.0, 1.0);
                out[f + 1] = (s.rho_c / rho_max).clamp(0.0, 1.0);
                out[f + 2] = (s.v / v_max).clamp(0.0, 1.0);
                out[f + 3] = (s.v_c / v_max).clamp(0.0, 1.0);
            } else {
                out[mask_base + cell] = 1.0;
            }
            f += FEATURES_PER_CELL;
            cell += 1;
        }
    }
    Observation(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(1000.0, 100.0, 5).unwrap()
    }

    const V_MAX: f64 = 24.59;

    #[test]
    fn two_vehicle_grid_arithmetic() {
        let vehicles = [
            VehicleObs { lane: 0, x: 120.0, v: 20.0, is_cv: false },
            VehicleObs { lane: 0, x: 180.0, v: 24.0, is_cv: false },
        ];
        let field = aggregate(vehicles.into_iter(), &spec(), V_MAX);
        let cell = field.get(0, 1);
        assert!((cell.rho - 0.02).abs() < 1e-12);
        assert!((cell.v - 22.0).abs() < 1e-12);
        assert_eq!(cell.rho_c, 0.0);
    }

    #[test]
    fn empty_grid_uses_free_flow_convention() {
        let field = aggregate(std::iter::empty(), &spec(), V_MAX);
        for cell in field.cells() {
            assert_eq!(cell.rho, 0.0);
            assert_eq!(cell.v, V_MAX);
            assert_eq!(cell.v_c, V_MAX);
        }
    }

    #[test]
    fn mass_consistency_against_direct_count() {
        // Oracle: sum of rho*dx per lane equals the direct vehicle count.
        let spec = spec();
        let mut state = 123456789u64;
        let mut next = || {
            // xorshift, deterministic placement
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let vehicles: Vec<VehicleObs> = (0..500)
            .map(|_| VehicleObs {
                lane: (next() % 5) as usize,
                x: (next() % 100_000) as f64 / 100.0,
                v: (next() % 2459) as f64 / 100.0,
                is_cv: next() % 2 == 0,
            })
            .collect();
        let field = aggregate(vehicles.iter().copied(), &spec, V_MAX);
        for lane in 0..5 {
            let direct = vehicles.iter().filter(|v| v.lane == lane).count() as f64;
            let mass: f64 = (0..spec.n_grids)
                .map(|g| field.get(lane, g).rho * spec.grid_length_m())
                .sum();
            assert!((mass - direct).abs() < 1e-9, "lane {lane}: {mass} vs {direct}");
            let cv_direct = vehicles.iter().filter(|v| v.lane == lane && v.is_cv).count() as f64;
            let cv_mass: f64 = (0..spec.n_grids)
                .map(|g| field.get(lane, g).rho_c * spec.grid_length_m())
                .sum();
            assert!((cv_mass - cv_direct).abs() < 1e-9);
        }
    }

    #[test]
    fn cv_density_never_exceeds_total() {
        let spec = spec();
        let vehicles = [
            VehicleObs { lane: 2, x: 450.0, v: 10.0, is_cv: true },
            VehicleObs { lane: 2, x: 460.0, v: 12.0, is_cv: false },
            VehicleObs { lane: 2, x: 470.0, v: 14.0, is_cv: true },
        ];
        let field = aggregate(vehicles.into_iter(), &spec, V_MAX);
        for cell in field.cells() {
            assert!(cell.rho_c <= cell.rho + 1e-12);
        }
    }

    #[test]
    fn uniform_interior_observation_is_flat_and_unmasked() {
        let spec = spec();
        let vehicles: Vec<VehicleObs> = (0..5)
            .flat_map(|lane| {
                (0..10).map(move |g| VehicleObs {
                    lane,
                    x: g as f64 * 100.0 + 50.0,
                    v: 12.0,
                    is_cv: false,
                })
            })
            .collect();
        let field = aggregate(vehicles.into_iter(), &spec, V_MAX);
        let obs = observe(&field, 2, 5, V_MAX, 0.133);
        let features = &obs.0[..WINDOW_CELLS * FEATURES_PER_CELL];
        for cell in features.chunks(FEATURES_PER_CELL) {
            assert_eq!(cell, &features[..FEATURES_PER_CELL]);
        }
        assert!(obs.0[WINDOW_CELLS * FEATURES_PER_CELL..].iter().all(|&m| m == 0.0));
        assert!(obs.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rightmost_lane_masks_the_missing_lane_row() {
        let spec = spec();
        let field = aggregate(std::iter::empty(), &spec, V_MAX);
        let obs = observe(&field, 0, 5, V_MAX, 0.133);
        let mask = &obs.0[WINDOW_CELLS * FEATURES_PER_CELL..];
        // First window lane (lane - 1) does not exist: 5 masked cells.
        assert_eq!(mask.iter().filter(|&&m| m == 1.0).count(), 5);
        assert!(mask[..WINDOW_GRIDS].iter().all(|&m| m == 1.0));
        // Masked cells carry zeroed features.
        for c in 0..WINDOW_GRIDS {
            let f = &obs.0[c * FEATURES_PER_CELL..(c + 1) * FEATURES_PER_CELL];
            assert!(f.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn observation_is_translation_equivariant() {
        // Oracle: shifting every vehicle downstream by one grid makes the
        // observation at grid i+1 equal the prior observation at grid i.
        let spec = spec();
        let base: Vec<VehicleObs> = (0..40)
            .map(|k| VehicleObs {
                lane: k % 5,
                x: 37.0 + 19.0 * k as f64 % 700.0,
                v: 3.0 + (k % 7) as f64 * 2.5,
                is_cv: k % 3 == 0,
            })
            .collect();
        let shifted: Vec<VehicleObs> = base
            .iter()
            .map(|v| VehicleObs { x: v.x + 100.0, ..*v })
            .collect();
        let f0 = aggregate(base.into_iter(), &spec, V_MAX);
        let f1 = aggregate(shifted.into_iter(), &spec, V_MAX);
        for lane in 0..5 {
            for grid in 2..7 {
                let a = observe(&f0, lane, grid, V_MAX, 0.133);
                let b = observe(&f1, lane, grid + 1, V_MAX, 0.133);
                assert_eq!(a.0, b.0, "lane {lane} grid {grid}");
            }
        }
    }
}
