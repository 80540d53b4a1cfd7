//! Demand-aware topologies: Starfield, its static variant and epoch schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::baselines::feasible_offsets;
use super::{Provenance, Result, Topology, TopologyError};
use crate::constellation::{generate_shell, range_graph, sample_times, Ephemeris, RangeGraph, ShellConfig};
use crate::demand::{CrownParams, DemandMatrix, FieldParams, GroundStation};
use crate::geometry::{angular_ranking, GeometryError, SpherePoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// `|f⊥ · (P_s − P_s′)|`.
    Plain,
    /// `|f⊥ · (P_s − P_s′)| / ‖P_s − P_s′‖^(2·exp(−‖f‖))`: weak fields favour
    /// longer links, strong fields behave like `Plain`.
    Prioritized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarfieldParams {
    pub kappa: usize,
    pub field: FieldParams,
    /// Weight of the geometric length term `ε·‖P_s − P_s′‖` (per metre).
    pub epsilon: f64,
    pub mode: DistanceMode,
}

impl StarfieldParams {
    /// κ = 4, K = 1e7, crown reorientation with η = 1 and ω = 10, field
    /// distances floored at the intra-orbit spacing.
    pub fn for_shell(cfg: &ShellConfig) -> Self {
        let spacing = 2.0 * cfg.shell_radius() * (PI / cfg.sats_per_orbit as f64).sin();
        StarfieldParams {
            kappa: 4,
            field: FieldParams {
                k: 1e7,
                length_unit_m: 1000.0,
                distance_floor_m: spacing,
                crown: Some(CrownParams { inclination_rad: cfg.inclination_rad, eta: 1.0, omega: 10.0 }),
            },
            epsilon: 1e-12,
            mode: DistanceMode::Plain,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kappa < 2 {
            return Err(TopologyError::InvalidParams(format!("κ must be at least 2, got {}", self.kappa)));
        }
        if !(self.epsilon >= 0.0) || !(self.field.k > 0.0) || !(self.field.length_unit_m > 0.0) {
            return Err(TopologyError::InvalidParams("K and the length unit must be positive, ε non-negative".into()));
        }
        Ok(())
    }
}

/// Per-flow distance of the link `s → s′` under the field `f` sampled at `s`.
///
/// Lengths in the prioritized denominator are measured in `length_unit_m`.
pub fn link_distance(
    s: &SpherePoint,
    s2: &SpherePoint,
    f: Vec3,
    mode: DistanceMode,
    length_unit_m: f64,
) -> Result<f64> {
    let delta = s.position() - s2.position();
    let len = delta.norm();
    if len == 0.0 {
        return Err(GeometryError::Degenerate("coincident satellites").into());
    }
    let f_perp = f.cross(s.position()) / s.radius();
    let along = f_perp.dot(delta).abs();
    Ok(match mode {
        DistanceMode::Plain => along,
        DistanceMode::Prioritized => along / (len / length_unit_m).powf(2.0 * (-f.norm()).exp()),
    })
}

/// Rotated fields of every flow at one satellite, laid out for fast sums.
struct FlowTerms {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    /// Prioritized exponent `2·exp(−‖f‖)`.
    power: Vec<f64>,
}

/// Flow endpoints lifted to the shell radius, with their rates.
fn shell_flows(demand: &DemandMatrix, stations: &[GroundStation], rho: f64) -> Vec<(Vec3, Vec3, f64)> {
    let lift: Vec<Vec3> = stations.iter().map(|s| s.shell_position.rescaled(rho).position()).collect();
    demand.flows().map(|(i, j, d)| (lift[i], lift[j], d)).collect()
}

impl FlowTerms {
    fn at(p: Vec3, rho: f64, flows: &[(Vec3, Vec3, f64)], field: &FieldParams) -> Self {
        let n = flows.len();
        let mut t = FlowTerms {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            power: Vec::with_capacity(n),
        };
        for &(u, v, d) in flows {
            let f = field.adjust(field.flow_field_raw(p, u, v, d, rho), p);
            let perp = f.cross(p) / rho;
            t.x.push(perp.x);
            t.y.push(perp.y);
            t.z.push(perp.z);
            t.power.push(2.0 * (-f.norm()).exp());
        }
        t
    }

    /// `Σ_f D_f(s, s′) + ε·‖P_s − P_s′‖`.
    fn aggregate(&self, delta: Vec3, mode: DistanceMode, epsilon: f64, unit: f64) -> f64 {
        let len = delta.norm();
        let mut total = 0.0;
        match mode {
            DistanceMode::Plain => {
                for k in 0..self.x.len() {
                    total += (self.x[k] * delta.x + self.y[k] * delta.y + self.z[k] * delta.z).abs();
                }
            }
            DistanceMode::Prioritized => {
                let log_len = (len / unit).ln();
                for k in 0..self.x.len() {
                    let along = (self.x[k] * delta.x + self.y[k] * delta.y + self.z[k] * delta.z).abs();
                    total += along * (-self.power[k] * log_len).exp();
                }
            }
        }
        total + epsilon * len
    }
}

/// Walks `ranked` and links `s` to the first candidate that keeps the degree
/// bound. Existing edges are skipped for free; a full candidate counts as a
/// failure and the search stops after κ failures.
fn link_first_available(topo: &mut Topology, s: usize, ranked: impl Iterator<Item = usize>) -> Option<usize> {
    let mut failures = 0;
    for c in ranked {
        if c == s || topo.has_edge(s, c) {
            continue;
        }
        if topo.add_edge(s, c) {
            return Some(c);
        }
        if topo.degree(s) >= topo.kappa {
            return None;
        }
        failures += 1;
        if failures >= topo.kappa {
            return None;
        }
    }
    None
}

/// Starfield on the positions at the ephemeris midpoint.
///
/// Satellites are processed in flat-index order. Each one links to the
/// in-range neighbour with the smallest aggregate demand distance, then adds
/// `⌊κ/2⌋ − 1` angular links spaced by `π/(⌊κ/2⌋)` from that reference link.
pub fn starfield(
    range: &RangeGraph,
    eph: &Ephemeris,
    demand: &DemandMatrix,
    stations: &[GroundStation],
    params: &StarfieldParams,
) -> Result<Topology> {
    params.validate()?;
    let cfg = &eph.config;
    let rho = eph.shell_radius();
    let positions = eph.positions_at(eph.midpoint());
    let flows = shell_flows(demand, stations, rho);
    let angular = params.kappa / 2 - 1;

    let mut prov = Provenance::new("starfield");
    prov.params = serde_json::to_value(params)?;
    prov.window = Some((eph.start(), eph.end()));
    let mut topo = Topology::empty(cfg.num_orbits, cfg.sats_per_orbit, params.kappa, prov);

    for s in 0..positions.len() {
        let candidates = range.neighbors(s);
        if candidates.is_empty() || topo.degree(s) >= params.kappa {
            continue;
        }
        let p = positions[s];
        let terms = FlowTerms::at(p, rho, &flows, &params.field);
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&c| (terms.aggregate(p - positions[c], params.mode, params.epsilon, params.field.length_unit_m), c))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let chosen = link_first_available(&mut topo, s, scored.iter().map(|&(_, c)| c));
        let reference = chosen.unwrap_or(scored[0].1);
        let cand_pos: Vec<Vec3> = candidates.iter().map(|&c| positions[c]).collect();
        for j in 1..=angular {
            if topo.degree(s) >= params.kappa {
                break;
            }
            let beta = j as f64 * PI / (angular + 1) as f64;
            let ranked = angular_ranking(p, positions[reference], beta, &cand_pos);
            link_first_available(&mut topo, s, ranked.iter().map(|&(i, _)| candidates[i]));
        }
    }
    topo.record_isolated();
    Ok(topo)
}

/// Static Starfield: fixed ±1 intra-orbit links and, for every pair of
/// adjacent orbits, the single slot offset minimising the summed demand
/// distance among offsets that stay in range for the whole window.
pub fn static_starfield(
    range: &RangeGraph,
    eph: &Ephemeris,
    demand: &DemandMatrix,
    stations: &[GroundStation],
    params: &StarfieldParams,
) -> Result<Topology> {
    params.validate()?;
    if params.kappa < 4 {
        return Err(TopologyError::InvalidParams("static Starfield needs κ ≥ 4 (2 intra + 2 inter)".into()));
    }
    let cfg = &eph.config;
    let (n_o, n_s) = (cfg.num_orbits, cfg.sats_per_orbit);
    let idx = |o: usize, s: usize| o * n_s + s;
    let rho = eph.shell_radius();
    let positions = eph.positions_at(eph.midpoint());
    let flows = shell_flows(demand, stations, rho);

    let mut offsets = Vec::new();
    let pairs = if n_o > 2 { n_o } else { n_o.saturating_sub(1) };
    for o in 0..pairs {
        let o2 = (o + 1) % n_o;
        let feasible = feasible_offsets(range, n_s, o, o2);
        if feasible.is_empty() {
            return Err(TopologyError::NoFeasibleOffset(o, o2));
        }
        let terms: Vec<FlowTerms> =
            (0..n_s).map(|j| FlowTerms::at(positions[idx(o, j)], rho, &flows, &params.field)).collect();
        let cost = |p: usize| -> f64 {
            (0..n_s)
                .map(|j| {
                    let delta = positions[idx(o, j)] - positions[idx(o2, (j + p) % n_s)];
                    terms[j].aggregate(delta, params.mode, params.epsilon, params.field.length_unit_m)
                })
                .sum()
        };
        let best = feasible
            .iter()
            .map(|&p| (cost(p), p))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, p)| p)
            .unwrap();
        offsets.push((o, o2, best));
    }

    let mut prov = Provenance::new("static_starfield");
    prov.params = serde_json::json!({
        "starfield": params,
        "offsets": offsets.iter().map(|&(o, o2, p)| [o, o2, p]).collect::<Vec<_>>(),
    });
    prov.window = Some((eph.start(), eph.end()));
    let mut topo = Topology::empty(n_o, n_s, params.kappa, prov);
    for o in 0..n_o {
        for j in 0..n_s {
            topo.add_edge(idx(o, j), idx(o, (j + 1) % n_s));
        }
    }
    for &(o, o2, p) in &offsets {
        for j in 0..n_s {
            topo.add_edge(idx(o, j), idx(o2, (j + p) % n_s));
        }
    }
    topo.record_isolated();
    Ok(topo)
}

/// One topology held fixed over `[start, end]`.
#[derive(Debug, Clone)]
pub struct Epoch {
    pub start: f64,
    pub end: f64,
    pub topology: Topology,
}

/// Recomputes Starfield for each contiguous window, using the window's own
/// midpoint positions and the range graph intersected over samples spaced
/// `sample_step` seconds apart.
pub fn dynamic_schedule(
    cfg: &ShellConfig,
    windows: &[(f64, f64)],
    sample_step: f64,
    demand: &DemandMatrix,
    stations: &[GroundStation],
    params: &StarfieldParams,
) -> Result<Vec<Epoch>> {
    if windows.is_empty() {
        return Err(TopologyError::InvalidParams("no epochs given".into()));
    }
    for (k, &(a, b)) in windows.iter().enumerate() {
        if !(b > a) {
            return Err(TopologyError::InvalidParams(format!("epoch {k} is empty: [{a}, {b}]")));
        }
        if k > 0 && (windows[k - 1].1 - a).abs() > 1e-9 {
            return Err(TopologyError::InvalidParams(format!("epoch {k} does not start where epoch {} ends", k - 1)));
        }
    }
    windows
        .iter()
        .map(|&(a, b)| {
            let eph = generate_shell(cfg, &sample_times(a, b, sample_step))?;
            let range = range_graph(&eph, cfg.isl_range());
            let topology = starfield(&range, &eph, demand, stations, params)?;
            Ok(Epoch { start: a, end: b, topology })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::plus_grid;
    use approx::assert_relative_eq;

    #[test]
    fn link_distance_examples() {
        let rho = 6_921_000.0;
        let s = SpherePoint::from_lat_lon_deg(0.0, 0.0, rho);
        let east = SpherePoint::from_lat_lon_deg(0.0, 2.0, rho);
        let north = SpherePoint::from_lat_lon_deg(2.0, 0.0, rho);
        // Field pointing east at s: f⊥ = f × P / ρ points north-south.
        let f = Vec3::new(0.0, 3.0, 0.0);
        for mode in [DistanceMode::Plain, DistanceMode::Prioritized] {
            assert!(link_distance(&s, &east, f, mode, 1000.0).unwrap() < 1e-6);
        }
        let d = link_distance(&s, &north, f, DistanceMode::Plain, 1000.0).unwrap();
        let chord = (s.position() - north.position()).norm();
        // The link is not exactly along f⊥ (it tilts towards the centre).
        assert_relative_eq!(d, 3.0 * chord * (1.0f64).to_radians().cos(), max_relative = 1e-4);
        let f_strong = Vec3::new(0.0, 20.0, 0.0);
        let plain = link_distance(&s, &north, f_strong, DistanceMode::Plain, 1000.0).unwrap();
        let prio = link_distance(&s, &north, f_strong, DistanceMode::Prioritized, 1000.0).unwrap();
        let expected = plain / (chord / 1000.0).powf(2.0 * (-20f64).exp());
        assert_relative_eq!(prio, expected, max_relative = 1e-12);
        assert_relative_eq!(prio, plain, max_relative = 1e-6);
        assert!(link_distance(&s, &s, f, DistanceMode::Plain, 1000.0).is_err());
    }

    fn toy() -> (ShellConfig, Ephemeris, RangeGraph) {
        let cfg = ShellConfig { num_orbits: 8, sats_per_orbit: 10, altitude_m: 1_200_000.0, ..ShellConfig::phase1() };
        let eph = generate_shell(&cfg, &sample_times(0.0, 100.0, 50.0)).unwrap();
        let range = range_graph(&eph, cfg.isl_range());
        (cfg, eph, range)
    }

    #[test]
    fn zero_demand_links_nearest_neighbour() {
        let (cfg, eph, range) = toy();
        let params = StarfieldParams::for_shell(&cfg);
        let topo = starfield(&range, &eph, &DemandMatrix::zeros(0), &[], &params).unwrap();
        topo.validate(&range).unwrap();
        let pos = eph.positions_at(eph.midpoint());
        // Satellite 0 is processed first, so its nearest in-range neighbour
        // must be linked.
        let nearest = *range
            .neighbors(0)
            .iter()
            .min_by(|&&a, &&b| (pos[0] - pos[a]).norm().total_cmp(&(pos[0] - pos[b]).norm()))
            .unwrap();
        assert!(topo.has_edge(0, nearest));
        assert!(topo.max_degree() <= 4);
    }

    #[test]
    fn angular_count_follows_kappa() {
        let (cfg, eph, range) = toy();
        for kappa in [2, 4, 6] {
            let params = StarfieldParams { kappa, ..StarfieldParams::for_shell(&cfg) };
            let topo = starfield(&range, &eph, &DemandMatrix::zeros(0), &[], &params).unwrap();
            topo.validate(&range).unwrap();
            // Each satellite proposes ⌊κ/2⌋ links; satellites already full
            // when their turn comes propose none.
            assert!(topo.num_edges() * 10 >= topo.num_satellites() * (kappa / 2) * 8, "κ={kappa}");
        }
    }

    #[test]
    fn static_zero_demand_matches_plus_grid_offsets() {
        let (cfg, eph, range) = toy();
        let params = StarfieldParams::for_shell(&cfg);
        let topo = static_starfield(&range, &eph, &DemandMatrix::zeros(0), &[], &params).unwrap();
        topo.validate(&range).unwrap();
        assert!((0..topo.num_satellites()).all(|s| topo.degree(s) == 4));
        // With no demand the shortest inter-orbit pattern is chosen, which is
        // the +Grid one up to the half-step phasing (offset 0 or −1).
        let grid = plus_grid(cfg.num_orbits, cfg.sats_per_orbit, cfg.seam_slot_shift());
        let pos = eph.positions_at(eph.midpoint());
        let total = |t: &Topology| t.edges().map(|(a, b)| (pos[a] - pos[b]).norm()).sum::<f64>();
        assert!(total(&topo) <= total(&grid) + 1e-6);
    }

    #[test]
    fn dynamic_schedule_single_epoch_matches_starfield() {
        let (cfg, eph, range) = toy();
        let params = StarfieldParams::for_shell(&cfg);
        let stations: Vec<GroundStation> = crate::demand::bundled_cities(cfg.shell_radius())[..6].to_vec();
        let demand = crate::demand::build_demand(&stations, crate::demand::DemandPattern::Uniform, 1.0, 4).unwrap();
        let one = dynamic_schedule(&cfg, &[(0.0, 100.0)], 50.0, &demand, &stations, &params).unwrap();
        let direct = starfield(&range, &eph, &demand, &stations, &params).unwrap();
        assert_eq!(one[0].topology, direct);
        let two = dynamic_schedule(&cfg, &[(0.0, 50.0), (50.0, 100.0)], 25.0, &demand, &stations, &params).unwrap();
        assert_eq!(two.len(), 2);
        assert!(dynamic_schedule(&cfg, &[(0.0, 50.0), (60.0, 100.0)], 25.0, &demand, &stations, &params).is_err());
    }
}
