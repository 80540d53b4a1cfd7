//! Ground stations, traffic matrices and the demand vector field.
//!
//! Each flow `u → v` induces a tangent field on the shell that is strongest
//! near the endpoints and points along the geodesic from `u` towards `v`.
//! The field is what the topology generators use to orient links.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::EARTH_RADIUS_M;
use crate::geometry::{self, arc_length, lat_lon_basis, tangent_towards, GeometryError, SpherePoint, Vec3};

const BUNDLED_CITIES: &str = include_str!("../data/cities100.csv");

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("pattern {0:?} needs populations for every station")]
    MissingPopulation(DemandPattern),
    #[error("invalid station record: {0}")]
    BadStation(String),
    #[error("invalid demand record: {0}")]
    BadRecord(String),
    #[error("region steps must divide 180° (latitude) and 360° (longitude), got {0}° × {1}°")]
    BadRegionGrid(f64, f64),
    #[error("field is singular at a flow endpoint")]
    Singularity,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DemandError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub id: usize,
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub population: Option<f64>,
    /// Position on the Earth's surface.
    pub position: Vec3,
    /// Radial lift of `position` onto the satellite shell.
    pub shell_position: SpherePoint,
}

impl GroundStation {
    pub fn new(
        id: usize,
        name: impl Into<String>,
        lat_deg: f64,
        lon_deg: f64,
        population: Option<f64>,
        shell_radius: f64,
    ) -> Result<Self> {
        let name = name.into();
        if !(-90.0..=90.0).contains(&lat_deg) || !lon_deg.is_finite() {
            return Err(DemandError::BadStation(format!("{name}: latitude {lat_deg}, longitude {lon_deg}")));
        }
        // Normalise longitude into [-180, 180).
        let lon_deg = (lon_deg + 180.0).rem_euclid(360.0) - 180.0;
        let surface = SpherePoint::from_lat_lon_deg(lat_deg, lon_deg, EARTH_RADIUS_M);
        let shell_position = geometry::scale_to_shell(surface.position(), EARTH_RADIUS_M, shell_radius)?;
        Ok(GroundStation { id, name, lat_deg, lon_deg, population, position: surface.position(), shell_position })
    }

    pub fn surface_point(&self) -> SpherePoint {
        SpherePoint::from_position(self.position).expect("station position is nonzero")
    }
}

#[derive(Debug, Deserialize)]
struct StationRecord {
    name: String,
    lat_deg: f64,
    lon_deg: f64,
    population: Option<f64>,
}

/// Reads `name,lat_deg,lon_deg,population` rows; ids follow row order.
pub fn read_stations<R: Read>(reader: R, shell_radius: f64) -> Result<Vec<GroundStation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<StationRecord>()
        .enumerate()
        .map(|(id, rec)| {
            let rec = rec?;
            GroundStation::new(id, rec.name, rec.lat_deg, rec.lon_deg, rec.population, shell_radius)
        })
        .collect()
}

pub fn load_stations(path: &Path, shell_radius: f64) -> Result<Vec<GroundStation>> {
    read_stations(std::fs::File::open(path)?, shell_radius)
}

/// The 100 bundled cities, largest population first.
pub fn bundled_cities(shell_radius: f64) -> Vec<GroundStation> {
    read_stations(BUNDLED_CITIES.as_bytes(), shell_radius).expect("bundled city table is well formed")
}

/// Dense `m × m` traffic matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandMatrix {
    m: usize,
    data: Vec<f64>,
}

impl DemandMatrix {
    pub fn zeros(m: usize) -> Self {
        DemandMatrix { m, data: vec![0.0; m * m] }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    /// Sets one entry. Diagonal writes and negative values are rejected.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i == j && value != 0.0 {
            return Err(DemandError::BadRecord(format!("diagonal entry ({i}, {i}) must be zero")));
        }
        if !(value >= 0.0) || !value.is_finite() {
            return Err(DemandError::BadRecord(format!(
                "entry ({i}, {j}) = {value} is not a finite non-negative rate"
            )));
        }
        self.data[i * self.m + j] = value;
        Ok(())
    }

    /// Non-zero entries in row-major order.
    pub fn flows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v > 0.0).map(move |(k, &v)| (k / self.m, k % self.m, v))
    }

    pub fn num_flows(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> DemandMatrix {
        DemandMatrix { m: self.m, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "src_id,dst_id,intensity")?;
        for (i, j, v) in self.flows() {
            writeln!(w, "{i},{j},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, m: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            src_id: usize,
            dst_id: usize,
            intensity: f64,
        }
        let mut out = DemandMatrix::zeros(m);
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            if row.src_id >= m || row.dst_id >= m {
                return Err(DemandError::BadRecord(format!(
                    "station id out of range in ({}, {})",
                    row.src_id, row.dst_id
                )));
            }
            out.set(row.src_id, row.dst_id, row.intensity)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandPattern {
    Uniform,
    /// Weight `exp(−(i+j)/m)`: traffic concentrates on low station ids.
    Hotspot,
    /// Weight proportional to the surface geodesic between the stations.
    Distance,
    /// Weight `p_i·p_j`.
    Population,
    /// Mean of the normalised distance and population weights.
    Merged,
    /// Product `d_ij·p_i·p_j` of distance and population.
    DistancePopulation,
}

impl DemandPattern {
    pub const ALL: [DemandPattern; 6] = [
        DemandPattern::Uniform,
        DemandPattern::Hotspot,
        DemandPattern::Distance,
        DemandPattern::Population,
        DemandPattern::Merged,
        DemandPattern::DistancePopulation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DemandPattern::Uniform => "uniform",
            DemandPattern::Hotspot => "hotspot",
            DemandPattern::Distance => "distance",
            DemandPattern::Population => "population",
            DemandPattern::Merged => "merged",
            DemandPattern::DistancePopulation => "distance_population",
        }
    }

    fn needs_population(&self) -> bool {
        matches!(self, DemandPattern::Population | DemandPattern::Merged | DemandPattern::DistancePopulation)
    }
}

impl std::str::FromStr for DemandPattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        DemandPattern::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown demand pattern `{s}`"))
    }
}

/// Scales off-diagonal weights to unit mean over the non-zero entries.
fn normalize_unit_mean(weights: &mut [f64], m: usize) {
    let nonzero: Vec<f64> = (0..m * m).filter(|k| k / m != k % m).map(|k| weights[k]).filter(|&w| w > 0.0).collect();
    if nonzero.is_empty() {
        return;
    }
    let mean = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
    for w in weights.iter_mut() {
        *w /= mean;
    }
}

fn pattern_weights(stations: &[GroundStation], pattern: DemandPattern) -> Result<Vec<f64>> {
    let m = stations.len();
    if pattern.needs_population() && stations.iter().any(|s| s.population.is_none()) {
        return Err(DemandError::MissingPopulation(pattern));
    }
    let pop = |i: usize| stations[i].population.unwrap_or(0.0);
    let dist = |i: usize, j: usize| arc_length(stations[i].position, stations[j].position, EARTH_RADIUS_M);
    let raw = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        let mut w: Vec<f64> = (0..m * m).map(|k| if k / m == k % m { 0.0 } else { f(k / m, k % m) }).collect();
        normalize_unit_mean(&mut w, m);
        w
    };
    Ok(match pattern {
        DemandPattern::Uniform => raw(&|_, _| 1.0),
        DemandPattern::Hotspot => raw(&|i, j| (-((i + j) as f64) / m as f64).exp()),
        DemandPattern::Distance => raw(&dist),
        DemandPattern::Population => raw(&|i, j| pop(i) * pop(j)),
        DemandPattern::DistancePopulation => raw(&|i, j| dist(i, j) * pop(i) * pop(j)),
        DemandPattern::Merged => {
            let d = raw(&dist);
            let p = raw(&|i, j| pop(i) * pop(j));
            d.iter().zip(&p).map(|(a, b)| 0.5 * (a + b)).collect()
        }
    })
}

/// `Δ_ij = c_ij · Ŵ_ij` with `c_ij ~ U(0, base_intensity]` drawn in row-major
/// order from a seeded generator and `Ŵ` the unit-mean pattern weight.
pub fn build_demand(
    stations: &[GroundStation],
    pattern: DemandPattern,
    base_intensity: f64,
    seed: u64,
) -> Result<DemandMatrix> {
    let m = stations.len();
    let weights = pattern_weights(stations, pattern)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DemandMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let u: f64 = rng.random();
            let constant = base_intensity * (1.0 - u);
            out.data[i * m + j] = constant * weights[i * m + j];
        }
    }
    Ok(out)
}

/// Scales every non-zero entry by `max(0, 1 + x)` with `x ~ N(μ, σ)`.
pub fn perturb_demand(demand: &DemandMatrix, mu: f64, sigma: f64, seed: u64) -> DemandMatrix {
    let normal = Normal::new(mu, sigma.max(0.0)).expect("finite noise parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = demand.clone();
    for v in out.data.iter_mut().filter(|v| **v > 0.0) {
        *v *= (1.0 + normal.sample(&mut rng)).max(0.0);
    }
    out
}

/// Parameters of the flow field and its crown reorientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Field strength constant.
    pub k: f64,
    /// Length unit (metres) in which squared distances enter the field.
    pub length_unit_m: f64,
    /// Distances below this are clamped before squaring.
    pub distance_floor_m: f64,
    pub crown: Option<CrownParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrownParams {
    pub inclination_rad: f64,
    pub eta: f64,
    pub omega: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams { k: 1e7, length_unit_m: 1000.0, distance_floor_m: 0.0, crown: None }
    }
}

impl FieldParams {
    /// Field at `p` (on the shell) for the flow from `u` to `v` (lifted onto
    /// the same shell), before any crown adjustment.
    ///
    /// `F = KΔ·[ τ_pv / d²(p,u) − τ_pu / d²(p,v) ]` where `τ_pq` is the unit
    /// tangent at `p` towards `q`; near `u` the field points towards `v` and
    /// near `v` it points away from `u`.
    #[inline]
    pub fn flow_field_raw(&self, p: Vec3, u: Vec3, v: Vec3, delta: f64, radius: f64) -> Vec3 {
        if delta == 0.0 {
            return Vec3::ZERO;
        }
        let floor = self.distance_floor_m;
        let unit = self.length_unit_m;
        let du = arc_length(p, u, radius).max(floor) / unit;
        let dv = arc_length(p, v, radius).max(floor) / unit;
        let to_u = tangent_towards(p, u).unwrap_or(Vec3::ZERO);
        let to_v = tangent_towards(p, v).unwrap_or(Vec3::ZERO);
        (to_v / (du * du) - to_u / (dv * dv)) * (self.k * delta)
    }

    /// Checked single-flow field; fails when `p` sits on an endpoint and no
    /// distance floor is configured.
    pub fn demand_field(&self, p: &SpherePoint, u: &SpherePoint, v: &SpherePoint, delta: f64) -> Result<Vec3> {
        let rho = p.radius();
        geometry::geodesic_distance(p, u)?;
        geometry::geodesic_distance(p, v)?;
        let du = arc_length(p.position(), u.position(), rho);
        let dv = arc_length(p.position(), v.position(), rho);
        if self.distance_floor_m <= 0.0 && (du == 0.0 || dv == 0.0) && delta != 0.0 {
            return Err(DemandError::Singularity);
        }
        if (du == 0.0 || dv == 0.0) && delta != 0.0 {
            return Err(DemandError::Singularity);
        }
        Ok(self.flow_field_raw(p.position(), u.position(), v.position(), delta, rho))
    }

    #[inline]
    pub fn adjust(&self, f: Vec3, p: Vec3) -> Vec3 {
        match self.crown {
            Some(c) => crown_adjust_raw(f, p, c.inclination_rad, c.eta, c.omega),
            None => f,
        }
    }
}

#[inline]
fn crown_adjust_raw(f: Vec3, p: Vec3, inclination: f64, eta: f64, omega: f64) -> Vec3 {
    let Some((_, east)) = lat_lon_basis(p) else { return f };
    let rho = p.norm();
    let gain = eta * (-omega * (inclination.sin() - p.z.abs() / rho)).exp();
    f + east * (gain * f.dot(east))
}

/// `f + η·exp(−ω·(sin i − |p·ẑ|/ρ))·(f·φ̂)·φ̂`: boosts the east–west part of
/// the field as `p` approaches the coverage boundary.
pub fn crown_adjust(f: Vec3, p: &SpherePoint, inclination: f64, eta: f64, omega: f64) -> Result<Vec3> {
    geometry::lat_lon_unit_vectors(p)?;
    Ok(crown_adjust_raw(f, p.position(), inclination, eta, omega))
}

/// Aggregate field at one point, with the per-flow contributions kept.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub point: SpherePoint,
    pub f: Vec3,
    pub f_perp: Vec3,
    /// `(src, dst, field)` for every non-zero flow, crown-adjusted.
    pub per_flow: Vec<(usize, usize, Vec3)>,
}

/// Sums the (crown-adjusted) fields of all non-zero flows at `p`.
pub fn aggregate_field(
    p: &SpherePoint,
    demand: &DemandMatrix,
    stations: &[GroundStation],
    params: &FieldParams,
) -> FieldSample {
    let rho = p.radius();
    let pos = p.position();
    let shell: Vec<Vec3> = stations.iter().map(|s| s.shell_position.rescaled(rho).position()).collect();
    let per_flow: Vec<(usize, usize, Vec3)> = demand
        .flows()
        .map(|(i, j, d)| (i, j, params.adjust(params.flow_field_raw(pos, shell[i], shell[j], d, rho), pos)))
        .collect();
    let raw: Vec3 = per_flow.iter().map(|&(_, _, f)| f).sum();
    let n = p.unit();
    let f = raw.reject_from(n);
    let f_perp = f.cross(pos) / rho;
    FieldSample { point: *p, f, f_perp, per_flow }
}

/// One cell of the latitude/longitude mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCell {
    pub lat_idx: usize,
    pub lon_idx: usize,
    /// Northward component of the weighted tangent sum.
    pub theta: f64,
    /// Eastward component of the weighted tangent sum.
    pub phi: f64,
    /// Weighted sums of `cos 2α` and `sin 2α`, with `α` the tangent's
    /// bearing measured from north.
    pub axial: (f64, f64),
    /// Total traffic of flows attributed to the cell.
    pub weight: f64,
}

impl RegionCell {
    /// `‖Σ Δ_f τ_f‖ / Σ Δ_f` in the chosen orientation, or zero for an empty cell.
    pub fn resultant_length(&self, orientation: FlowOrientation) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        match orientation {
            FlowOrientation::Directional => self.theta.hypot(self.phi) / self.weight,
            FlowOrientation::Axial => self.axial.0.hypot(self.axial.1) / self.weight,
        }
    }
}

/// How flow tangents are combined inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowOrientation {
    /// Tangents keep their sign: `u → v` and `v → u` cancel.
    Directional,
    /// Bearings are doubled, so a flow and its reverse reinforce.
    Axial,
}

/// How per-region resultant lengths combine into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionCombine {
    /// Plain mean over regions that carry traffic.
    RegionMean,
    /// Mean weighted by each region's total traffic.
    TrafficWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionOptions {
    pub orientation: FlowOrientation,
    pub combine: RegionCombine,
    /// Count a flow only where the projected point lies between its endpoints.
    pub minor_arc_only: bool,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions { orientation: FlowOrientation::Axial, combine: RegionCombine::RegionMean, minor_arc_only: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGrid {
    pub l_theta_deg: f64,
    pub l_phi_deg: f64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub cells: Vec<RegionCell>,
}

impl RegionGrid {
    /// Latitude step from the `l_θ = l_φ·cos 45°` rule, snapped to the nearest
    /// divisor of 180°.
    pub fn auto_lat_step(l_phi_deg: f64) -> f64 {
        let target = l_phi_deg * std::f64::consts::FRAC_1_SQRT_2;
        (1..=180)
            .filter(|d| 180 % d == 0)
            .map(|d| d as f64)
            .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
            .unwrap()
    }

    pub fn mean_resultant_length(&self, orientation: FlowOrientation, combine: RegionCombine) -> f64 {
        let busy = self.cells.iter().filter(|c| c.weight > 0.0);
        let (num, den) = busy.fold((0.0, 0.0), |(n, d), c| {
            let w = match combine {
                RegionCombine::RegionMean => 1.0,
                RegionCombine::TrafficWeighted => c.weight,
            };
            (n + w * c.resultant_length(orientation), d + w)
        });
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lat_idx,lon_idx,theta_component,phi_component,weight")?;
        for c in &self.cells {
            writeln!(w, "{},{},{},{},{}", c.lat_idx, c.lon_idx, c.theta, c.phi, c.weight)?;
        }
        Ok(())
    }
}

fn divides(step: f64, span: f64) -> bool {
    step > 0.0 && ((span / step) - (span / step).round()).abs() < 1e-9
}

/// Attributes every flow's geodesic to the mesh cells it passes through and
/// returns the per-cell tangent sums plus a global mean resultant length in
/// `[0, 1]`, using the default [`RegionOptions`].
///
/// A flow belongs to a cell when the point of its geodesic closest to the
/// cell centre falls inside the cell and (by default) on the minor arc
/// between the two endpoints.
pub fn regional_flow_stats(
    demand: &DemandMatrix,
    stations: &[GroundStation],
    l_theta_deg: f64,
    l_phi_deg: f64,
) -> Result<(RegionGrid, f64)> {
    regional_flow_stats_with(demand, stations, l_theta_deg, l_phi_deg, RegionOptions::default())
}

pub fn regional_flow_stats_with(
    demand: &DemandMatrix,
    stations: &[GroundStation],
    l_theta_deg: f64,
    l_phi_deg: f64,
    options: RegionOptions,
) -> Result<(RegionGrid, f64)> {
    if !divides(l_theta_deg, 180.0) || !divides(l_phi_deg, 360.0) {
        return Err(DemandError::BadRegionGrid(l_theta_deg, l_phi_deg));
    }
    let n_lat = (180.0 / l_theta_deg).round() as usize;
    let n_lon = (360.0 / l_phi_deg).round() as usize;
    let index_of = |p: &SpherePoint| -> (usize, usize) {
        let lat = p.latitude().to_degrees();
        let lon = p.longitude().to_degrees();
        let li = (((lat + 90.0) / l_theta_deg).floor() as usize).min(n_lat - 1);
        let lj = (((lon + 180.0) / l_phi_deg).floor() as usize).min(n_lon - 1);
        (li, lj)
    };
    let mut cells: Vec<RegionCell> = (0..n_lat)
        .flat_map(|i| {
            (0..n_lon).map(move |j| RegionCell {
                lat_idx: i,
                lon_idx: j,
                theta: 0.0,
                phi: 0.0,
                axial: (0.0, 0.0),
                weight: 0.0,
            })
        })
        .collect();
    let centres: Vec<SpherePoint> = cells
        .iter()
        .map(|c| {
            let lat = -90.0 + (c.lat_idx as f64 + 0.5) * l_theta_deg;
            let lon = -180.0 + (c.lon_idx as f64 + 0.5) * l_phi_deg;
            SpherePoint::from_lat_lon_deg(lat, lon, EARTH_RADIUS_M)
        })
        .collect();
    let r = EARTH_RADIUS_M;
    for (a, b, delta) in demand.flows() {
        let u = stations[a].surface_point();
        let v = stations[b].surface_point();
        let span = arc_length(u.position(), v.position(), r);
        for (cell, centre) in cells.iter_mut().zip(&centres) {
            let Ok(q) = geometry::project_to_geodesic(centre, &u, &v) else { continue };
            if index_of(&q) != (cell.lat_idx, cell.lon_idx) {
                continue;
            }
            let via = arc_length(u.position(), q.position(), r) + arc_length(q.position(), v.position(), r);
            if options.minor_arc_only && via > span + 1e-6 * r {
                continue;
            }
            let tangent = tangent_towards(q.position(), v.position())
                .or_else(|| tangent_towards(q.position(), u.position()).map(|t| -t));
            let (Some(t), Some((north, east))) = (tangent, lat_lon_basis(q.position())) else { continue };
            let (a, b) = (t.dot(north), t.dot(east));
            cell.theta += delta * a;
            cell.phi += delta * b;
            cell.axial.0 += delta * (a * a - b * b);
            cell.axial.1 += delta * 2.0 * a * b;
            cell.weight += delta;
        }
    }
    let grid = RegionGrid { l_theta_deg, l_phi_deg, n_lat, n_lon, cells };
    let global = grid.mean_resultant_length(options.orientation, options.combine);
    Ok((grid, global))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const RHO: f64 = 6_921_000.0;

    fn station(id: usize, lat: f64, lon: f64, pop: Option<f64>) -> GroundStation {
        GroundStation::new(id, format!("s{id}"), lat, lon, pop, RHO).unwrap()
    }

    #[test]
    fn bundled_cities_load() {
        let cities = bundled_cities(RHO);
        assert_eq!(cities.len(), 100);
        assert!(cities.iter().all(|c| c.population.is_some()));
        assert_eq!(cities[0].name, "Tokyo");
        for c in &cities {
            assert_relative_eq!(c.position.norm(), EARTH_RADIUS_M, max_relative = 1e-12);
            assert_relative_eq!(c.shell_position.position().norm(), RHO, max_relative = 1e-12);
        }
    }

    #[test]
    fn uniform_demand_is_reproducible() {
        let st: Vec<_> = (0..5).map(|i| station(i, i as f64 * 10.0, i as f64 * 20.0, None)).collect();
        let a = build_demand(&st, DemandPattern::Uniform, 100.0, 3).unwrap();
        let b = build_demand(&st, DemandPattern::Uniform, 100.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_flows(), 20);
        for (i, j, v) in a.flows() {
            assert_ne!(i, j);
            assert!(v > 0.0 && v <= 100.0);
        }
        let c = build_demand(&st, DemandPattern::Uniform, 100.0, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn distance_weights_track_geodesics() {
        let st = vec![station(0, 0.0, 0.0, None), station(1, 0.0, 10.0, None), station(2, 0.0, 120.0, None)];
        let w = pattern_weights(&st, DemandPattern::Distance).unwrap();
        assert_relative_eq!(w[2] / w[1], 12.0, max_relative = 1e-9);
        let mean: f64 = w.iter().sum::<f64>() / 6.0;
        assert_relative_eq!(mean, 1.0, max_relative = 1e-12);
        // With a unit constant the matrix reduces to the weights.
        let d = build_demand(&st, DemandPattern::Distance, 1.0, 9).unwrap();
        assert!(d.get(0, 2) > 0.0);
    }

    #[test]
    fn population_required() {
        let st = vec![station(0, 0.0, 0.0, None), station(1, 0.0, 10.0, Some(1.0))];
        assert!(matches!(build_demand(&st, DemandPattern::Population, 1.0, 0), Err(DemandError::MissingPopulation(_))));
    }

    #[test]
    fn merged_is_mean_of_components() {
        let st: Vec<_> = (0..4).map(|i| station(i, 5.0 * i as f64, 30.0 * i as f64, Some(1.0 + i as f64))).collect();
        let d = pattern_weights(&st, DemandPattern::Distance).unwrap();
        let p = pattern_weights(&st, DemandPattern::Population).unwrap();
        let m = pattern_weights(&st, DemandPattern::Merged).unwrap();
        for k in 0..16 {
            assert_relative_eq!(m[k], 0.5 * (d[k] + p[k]));
        }
    }

    #[test]
    fn field_zero_demand_and_antisymmetry() {
        let params = FieldParams::default();
        let p = SpherePoint::from_lat_lon_deg(10.0, 20.0, RHO);
        let u = SpherePoint::from_lat_lon_deg(0.0, 0.0, RHO);
        let v = SpherePoint::from_lat_lon_deg(30.0, 50.0, RHO);
        assert_eq!(params.demand_field(&p, &u, &v, 0.0).unwrap(), Vec3::ZERO);
        let f = params.demand_field(&p, &u, &v, 2.0).unwrap();
        let g = params.demand_field(&p, &v, &u, 2.0).unwrap();
        assert!((f + g).norm() <= 1e-12 * f.norm());
        assert!(f.dot(p.unit()).abs() < 1e-6 * f.norm());
        assert!(params.demand_field(&u, &u, &v, 1.0).is_err());
    }

    #[test]
    fn field_on_bisector_follows_flow() {
        // u and v symmetric about the prime meridian on the equator; p on the
        // perpendicular bisector (the meridian) north of the equator.
        let params = FieldParams::default();
        let u = SpherePoint::from_lat_lon_deg(0.0, -20.0, RHO);
        let v = SpherePoint::from_lat_lon_deg(0.0, 20.0, RHO);
        let p = SpherePoint::from_lat_lon_deg(15.0, 0.0, RHO);
        let f = params.demand_field(&p, &u, &v, 1.0).unwrap();
        let (north, east) = lat_lon_unit_vectors_of(&p);
        assert!(f.dot(north).abs() < 1e-6 * f.norm());
        // Points eastward, i.e. from u's side towards v's side.
        assert!(f.dot(east) > 0.0);
    }

    fn lat_lon_unit_vectors_of(p: &SpherePoint) -> (Vec3, Vec3) {
        geometry::lat_lon_unit_vectors(p).unwrap()
    }

    #[test]
    fn field_scales_linearly() {
        let params = FieldParams::default();
        let p = SpherePoint::from_lat_lon_deg(-5.0, 3.0, RHO);
        let u = SpherePoint::from_lat_lon_deg(10.0, 40.0, RHO);
        let v = SpherePoint::from_lat_lon_deg(-30.0, -70.0, RHO);
        let f1 = params.demand_field(&p, &u, &v, 1.5).unwrap();
        let f3 = params.demand_field(&p, &u, &v, 4.5).unwrap();
        assert!((f1 * 3.0 - f3).norm() <= 1e-12 * f3.norm());
        let doubled = FieldParams { k: 2e7, ..FieldParams::default() };
        let f2 = doubled.demand_field(&p, &u, &v, 1.5).unwrap();
        assert!((f1 * 2.0 - f2).norm() <= 1e-12 * f2.norm());
    }

    #[test]
    fn crown_adjust_examples() {
        let incl = 53f64.to_radians();
        let eq = SpherePoint::from_lat_lon_deg(0.0, 0.0, RHO);
        let f = Vec3::new(0.0, 3.0, 4.0);
        assert_eq!(crown_adjust(f, &eq, incl, 0.0, 10.0).unwrap(), f);
        let far = crown_adjust(f, &eq, incl, 1.0, 100.0).unwrap();
        assert!((far - f).norm() < 1e-6);
        // At the crown the exponent vanishes: the east part grows by (1 + η).
        let crown = SpherePoint::from_lat_lon_deg(53.0, 30.0, RHO);
        let (north, east) = geometry::lat_lon_unit_vectors(&crown).unwrap();
        let f = north * 2.0 + east * 5.0;
        let g = crown_adjust(f, &crown, incl, 0.7, 10.0).unwrap();
        assert_relative_eq!(g.dot(east), 5.0 * 1.7, max_relative = 1e-9);
        assert_relative_eq!(g.dot(north), 2.0, max_relative = 1e-9);
        assert!(crown_adjust(f, &SpherePoint::from_lat_lon_deg(90.0, 0.0, RHO), incl, 1.0, 1.0).is_err());
    }

    #[test]
    fn aggregate_field_examples() {
        let st = vec![station(0, 10.0, 0.0, None), station(1, -20.0, 60.0, None)];
        let params = FieldParams::default();
        let p = SpherePoint::from_lat_lon_deg(5.0, 25.0, RHO);
        let empty = aggregate_field(&p, &DemandMatrix::zeros(2), &st, &params);
        assert_eq!(empty.f, Vec3::ZERO);
        let mut one = DemandMatrix::zeros(2);
        one.set(0, 1, 3.0).unwrap();
        let sample = aggregate_field(&p, &one, &st, &params);
        let single = params.demand_field(&p, &st[0].shell_position, &st[1].shell_position, 3.0).unwrap();
        assert!((sample.f - single).norm() <= 1e-9 * single.norm());
        assert_relative_eq!(sample.f_perp.norm(), sample.f.norm(), max_relative = 1e-6);
        assert!(sample.f_perp.dot(sample.f).abs() <= 1e-9 * sample.f.norm_squared());
        let mut both = one.clone();
        both.set(1, 0, 3.0).unwrap();
        let zero = aggregate_field(&p, &both, &st, &params);
        assert!(zero.f.norm() <= 1e-9 * single.norm());
    }

    fn equator_band() -> Vec<GroundStation> {
        vec![
            station(0, 1.0, -40.0, None),
            station(1, 1.0, 40.0, None),
            station(2, -1.0, -40.0, None),
            station(3, -1.0, 40.0, None),
        ]
    }

    const DIRECTIONAL: RegionOptions = RegionOptions {
        orientation: FlowOrientation::Directional,
        combine: RegionCombine::TrafficWeighted,
        minor_arc_only: true,
    };

    #[test]
    fn regional_stats_alignment() {
        // Two parallel eastward flows along the equator: perfectly aligned.
        let st = equator_band();
        let mut d = DemandMatrix::zeros(4);
        d.set(0, 1, 1.0).unwrap();
        d.set(2, 3, 2.0).unwrap();
        for options in [DIRECTIONAL, RegionOptions::default()] {
            let (grid, global) = regional_flow_stats_with(&d, &st, 20.0, 30.0, options).unwrap();
            assert!(grid.cells.iter().any(|c| c.weight > 0.0));
            assert_relative_eq!(global, 1.0, epsilon = 1e-3);
        }
        assert!(regional_flow_stats(&d, &st, 25.0, 30.0).is_err());
    }

    #[test]
    fn regional_stats_opposed_flows() {
        let st = equator_band();
        let mut d = DemandMatrix::zeros(4);
        d.set(0, 1, 1.0).unwrap();
        d.set(3, 2, 1.0).unwrap();
        // The two arcs bulge in opposite directions, so a small residue stays.
        let (_, signed) = regional_flow_stats_with(&d, &st, 20.0, 30.0, DIRECTIONAL).unwrap();
        assert!(signed < 1e-2, "signed {signed}");
        let (_, axial) = regional_flow_stats(&d, &st, 20.0, 30.0).unwrap();
        assert_relative_eq!(axial, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn regional_stats_crossing_flows_cancel_axially() {
        // A meridional and a zonal flow crossing at the centre (0°, 15°E) of
        // one cell: their doubled bearings are opposite.
        let st = vec![
            station(0, 0.0, 7.0, None),
            station(1, 0.0, 23.0, None),
            station(2, -8.0, 15.0, None),
            station(3, 8.0, 15.0, None),
        ];
        let mut d = DemandMatrix::zeros(4);
        d.set(0, 1, 1.0).unwrap();
        d.set(2, 3, 1.0).unwrap();
        let (grid, _) = regional_flow_stats(&d, &st, 20.0, 30.0).unwrap();
        let busy: Vec<_> = grid.cells.iter().filter(|c| c.weight >= 2.0).collect();
        assert_eq!(busy.len(), 1);
        assert!(busy[0].resultant_length(FlowOrientation::Axial) < 1e-6);
    }

    #[test]
    fn auto_lat_step_snaps_to_divisor() {
        assert_eq!(RegionGrid::auto_lat_step(30.0), 20.0);
    }

    #[test]
    fn perturbation_examples() {
        let st = bundled_cities(RHO);
        let d = build_demand(&st[..30], DemandPattern::Uniform, 10.0, 1).unwrap();
        assert_eq!(perturb_demand(&d, 0.0, 0.0, 5), d);
        let p = perturb_demand(&d, 1.0, 0.25, 5);
        let ratio = p.total() / d.total();
        // E[1 + N(1, .25)] = 2; 870 flows put 3σ of the ratio well under 0.1.
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        let wild = perturb_demand(&d, -1.0, 2.0, 6);
        assert!(wild.flows().all(|(_, _, v)| v >= 0.0));
        assert_eq!(perturb_demand(&d, 1.0, 0.25, 5), p);
    }

    #[test]
    fn demand_csv_round_trip() {
        let st = bundled_cities(RHO);
        let d = build_demand(&st[..6], DemandPattern::Hotspot, 5.0, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DemandMatrix::read_csv(buf.as_slice(), 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(back.get(i, j), d.get(i, j), max_relative = 1e-15);
            }
        }
        assert!(DemandMatrix::read_csv("src_id,dst_id,intensity\n1,1,2.0\n".as_bytes(), 3).is_err());
    }
}
