//! Single-shell Walker constellations on circular orbits, and the graph of
//! satellite pairs that stay within laser range over a time window.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Hard upper bound on laser link length regardless of clearance.
pub const ISL_RANGE_CAP_M: f64 = 5_000_000.0;

#[derive(Debug, Error)]
pub enum ConstellationError {
    #[error("invalid shell configuration: {0}")]
    InvalidConfig(String),
    #[error("ephemeris needs at least one time sample")]
    EmptyTimeGrid,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellConfig {
    pub altitude_m: f64,
    pub inclination_rad: f64,
    pub num_orbits: usize,
    pub sats_per_orbit: usize,
    /// In-orbit shift between adjacent orbits, as a fraction of the slot spacing.
    pub phase_offset: f64,
    pub mean_motion_rad_s: f64,
    /// Explicit laser range; derived from the clearance altitude when absent.
    pub isl_max_range_m: Option<f64>,
    pub min_altitude_clearance_m: f64,
}

impl ShellConfig {
    /// 72 × 22 satellites at 550 km and 53°, half-step phasing, 3.98 rad/h.
    pub fn phase1() -> Self {
        ShellConfig {
            altitude_m: 550_000.0,
            inclination_rad: 53f64.to_radians(),
            num_orbits: 72,
            sats_per_orbit: 22,
            phase_offset: 0.5,
            mean_motion_rad_s: 3.98 / 3600.0,
            isl_max_range_m: None,
            min_altitude_clearance_m: 80_000.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConstellationError> {
        let bad = |m: &str| Err(ConstellationError::InvalidConfig(m.to_string()));
        if self.num_orbits == 0 || self.sats_per_orbit == 0 {
            return bad("num_orbits and sats_per_orbit must be at least 1");
        }
        if !(self.altitude_m > 0.0) {
            return bad("altitude must be positive");
        }
        if !(self.inclination_rad > 0.0 && self.inclination_rad <= PI / 2.0 + 1e-12) {
            return bad("inclination must lie in (0, 90] degrees");
        }
        if !self.mean_motion_rad_s.is_finite() || !self.phase_offset.is_finite() {
            return bad("mean motion and phase offset must be finite");
        }
        if let Some(r) = self.isl_max_range_m {
            if !(r > 0.0) {
                return bad("explicit ISL range must be positive");
            }
        }
        Ok(())
    }

    pub fn shell_radius(&self) -> f64 {
        EARTH_RADIUS_M + self.altitude_m
    }

    pub fn num_satellites(&self) -> usize {
        self.num_orbits * self.sats_per_orbit
    }

    pub fn isl_range(&self) -> f64 {
        self.isl_max_range_m
            .unwrap_or_else(|| max_isl_range(self.shell_radius(), EARTH_RADIUS_M + self.min_altitude_clearance_m))
    }

    /// Position of satellite `(orbit, slot)` at time `t` seconds.
    ///
    /// The slot is placed on the equatorial circle at its phase angle, tilted
    /// by the inclination about +X, then turned by the orbit's right ascension
    /// `2π·orbit/N_O` about +Z. Both rotations are right-handed.
    pub fn position(&self, orbit: usize, slot: usize, t: f64) -> Vec3 {
        let step = 2.0 * PI / self.sats_per_orbit as f64;
        let shift = orbit as f64 * self.phase_offset * step;
        let phase = slot as f64 * step + shift + self.mean_motion_rad_s * t;
        let rho = self.shell_radius();
        let (sp, cp) = phase.sin_cos();
        let (si, ci) = self.inclination_rad.sin_cos();
        // Tilt about X.
        let (x, y, z) = (rho * cp, rho * sp * ci, rho * sp * si);
        let raan = 2.0 * PI * orbit as f64 / self.num_orbits as f64;
        let (sr, cr) = raan.sin_cos();
        Vec3::new(x * cr - y * sr, x * sr + y * cr, z)
    }

    /// Slot shift accumulated over a full turn of orbits: satellite
    /// `(N_O − 1, j)` sits next to `(0, j + shift)` rather than `(0, j)`.
    pub fn seam_slot_shift(&self) -> usize {
        let turns = (self.num_orbits as f64 * self.phase_offset).round() as i64;
        turns.rem_euclid(self.sats_per_orbit as i64) as usize
    }

    /// Latitude bound of coverage: the inclination itself.
    pub fn crown_latitude(&self) -> f64 {
        self.inclination_rad
    }

    pub fn satellite(&self, flat: usize) -> SatelliteId {
        SatelliteId { orbit: flat / self.sats_per_orbit, slot: flat % self.sats_per_orbit }
    }
}

/// Longest chord between two points of radius `shell_radius` whose midpoint
/// stays above the sphere of radius `clearance_radius`, capped at 5000 km.
pub fn max_isl_range(shell_radius: f64, clearance_radius: f64) -> f64 {
    if clearance_radius >= shell_radius {
        return 0.0;
    }
    let chord = 2.0 * (shell_radius * shell_radius - clearance_radius * clearance_radius).sqrt();
    chord.min(ISL_RANGE_CAP_M)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SatelliteId {
    pub orbit: usize,
    pub slot: usize,
}

impl SatelliteId {
    pub fn flat(&self, sats_per_orbit: usize) -> usize {
        self.orbit * sats_per_orbit + self.slot
    }
}

/// Satellite positions sampled on a time grid. `positions[k][s]` is the
/// position of flat satellite `s` at `times[k]`.
#[derive(Debug, Clone)]
pub struct Ephemeris {
    pub config: ShellConfig,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<Vec3>>,
}

impl Ephemeris {
    pub fn num_satellites(&self) -> usize {
        self.config.num_satellites()
    }

    pub fn shell_radius(&self) -> f64 {
        self.config.shell_radius()
    }

    /// Positions at an arbitrary time, evaluated in closed form.
    pub fn positions_at(&self, t: f64) -> Vec<Vec3> {
        snapshot(&self.config, t)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start() + self.end())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ConstellationError> {
        writeln!(w, "time_s,orbit,slot,x_m,y_m,z_m")?;
        let n_s = self.config.sats_per_orbit;
        for (t, row) in self.times.iter().zip(&self.positions) {
            for (flat, p) in row.iter().enumerate() {
                writeln!(w, "{},{},{},{:.3},{:.3},{:.3}", t, flat / n_s, flat % n_s, p.x, p.y, p.z)?;
            }
        }
        Ok(())
    }
}

pub fn snapshot(config: &ShellConfig, t: f64) -> Vec<Vec3> {
    (0..config.num_orbits)
        .flat_map(|o| (0..config.sats_per_orbit).map(move |s| (o, s)))
        .map(|(o, s)| config.position(o, s, t))
        .collect()
}

pub fn generate_shell(config: &ShellConfig, times: &[f64]) -> Result<Ephemeris, ConstellationError> {
    config.validate()?;
    if times.is_empty() {
        return Err(ConstellationError::EmptyTimeGrid);
    }
    let positions = times.iter().map(|&t| snapshot(config, t)).collect();
    Ok(Ephemeris { config: config.clone(), times: times.to_vec(), positions })
}

/// Evenly spaced samples covering `[start, end]`, both ends included.
pub fn sample_times(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && end >= start);
    let n = ((end - start) / step).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| start + k as f64 * step).collect();
    if end - times[n] > 1e-9 {
        times.push(end);
    }
    times
}

/// Satellite pairs within range at every sampled time. Adjacency lists are
/// sorted by flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeGraph {
    adjacency: Vec<Vec<usize>>,
}

impl RangeGraph {
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Self {
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        RangeGraph { adjacency }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.adjacency[s]
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|l| l.binary_search(&b).is_ok())
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, l)| l.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }
}

pub fn range_graph(eph: &Ephemeris, max_range: f64) -> RangeGraph {
    let n = eph.num_satellites();
    let r2 = max_range * max_range;
    let first = &eph.positions[0];
    let mut adjacency = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            if (first[a] - first[b]).norm_squared() > r2 {
                continue;
            }
            let always = eph.positions[1..].iter().all(|snap| (snap[a] - snap[b]).norm_squared() <= r2);
            if always {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    RangeGraph::from_adjacency(adjacency)
}
