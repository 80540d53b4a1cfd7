//! Shortest-path routing over ISLs plus ground–satellite links.
//!
//! Ground stations never relay: a path leaves its source station once, stays
//! on satellites, and lands at the destination station.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::Serialize;

use crate::constellation::{EARTH_RADIUS_M, SPEED_OF_LIGHT};
use crate::demand::{DemandMatrix, GroundStation};
use crate::geometry::{arc_length, Vec3};
use crate::topology::Topology;

/// Default minimum elevation for a ground–satellite link, degrees.
pub const MIN_ELEVATION_DEG: f64 = 25.0;

/// Angle of `sat` above the local horizon plane at `station`, radians.
pub fn elevation(station: Vec3, sat: Vec3) -> f64 {
    let los = sat - station;
    let up = station / station.norm();
    (los.dot(up) / los.norm()).clamp(-1.0, 1.0).asin()
}

/// Satellites and stations with link lengths in metres.
#[derive(Debug, Clone)]
pub struct WeightedNet {
    pub sat_positions: Vec<Vec3>,
    pub station_positions: Vec<Vec3>,
    /// `isl[s]`: `(neighbour, length)` sorted by neighbour.
    pub isl: Vec<Vec<(usize, f64)>>,
    /// `gsl[g]`: visible `(satellite, length)` sorted by satellite.
    pub gsl: Vec<Vec<(usize, f64)>>,
    /// Stations that see no satellite.
    pub unreachable: Vec<usize>,
}

impl WeightedNet {
    pub fn num_sats(&self) -> usize {
        self.sat_positions.len()
    }

    pub fn num_stations(&self) -> usize {
        self.station_positions.len()
    }

    /// Propagation delay of a link of `length` metres.
    pub fn delay(length: f64) -> f64 {
        length / SPEED_OF_LIGHT
    }

    pub fn gsl_length(&self, station: usize, sat: usize) -> Option<f64> {
        let list = &self.gsl[station];
        list.binary_search_by_key(&sat, |&(s, _)| s).ok().map(|i| list[i].1)
    }

    /// Shortest-path tree of satellites towards (or, equivalently, from)
    /// `root`, a station.
    pub fn station_tree(&self, root: usize) -> StationTree {
        let n = self.num_sats();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![Parent::None; n];
        let mut heap = BinaryHeap::new();
        for &(s, len) in &self.gsl[root] {
            dist[s] = len;
            parent[s] = Parent::Root;
            heap.push(Entry { dist: len, node: s });
        }
        while let Some(Entry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, len) in &self.isl[node] {
                let nd = d + len;
                if nd < dist[next] {
                    dist[next] = nd;
                    parent[next] = Parent::Sat(node);
                    heap.push(Entry { dist: nd, node: next });
                }
            }
        }
        StationTree { root, dist, parent }
    }

    /// Shortest path from station `src` to station `dst`.
    pub fn route(&self, src: usize, dst: usize) -> Option<FlowPathStats> {
        if src == dst {
            return Some(FlowPathStats::trivial(src));
        }
        self.station_tree(dst).path_from(self, src)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parent {
    /// Not reachable.
    None,
    /// One hop from the root station.
    Root,
    Sat(usize),
}

/// Distances and next hops of every satellite towards one root station.
#[derive(Debug, Clone)]
pub struct StationTree {
    pub root: usize,
    /// Path length (metres) from the satellite to the root station.
    pub dist: Vec<f64>,
    /// Next node on the way to the root.
    pub parent: Vec<Parent>,
}

impl StationTree {
    /// First satellite for traffic entering at `station`: the visible satellite
    /// minimising uplink plus remaining distance, smallest index on ties.
    pub fn entry(&self, net: &WeightedNet, station: usize) -> Option<(usize, f64)> {
        net.gsl[station]
            .iter()
            .filter(|&&(s, _)| self.dist[s].is_finite())
            .map(|&(s, up)| (s, up + self.dist[s]))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Full path from `station` to the root along the tree.
    pub fn path_from(&self, net: &WeightedNet, station: usize) -> Option<FlowPathStats> {
        let (first, total) = self.entry(net, station)?;
        let mut sats = vec![first];
        let mut at = first;
        while let Parent::Sat(next) = self.parent[at] {
            sats.push(next);
            at = next;
        }
        let geodesic = arc_length(net.station_positions[station], net.station_positions[self.root], EARTH_RADIUS_M);
        Some(FlowPathStats {
            src: station,
            dst: self.root,
            hops: sats.len() + 1,
            sats,
            path_length_m: total,
            geodesic_m: geodesic,
            stretch: if geodesic > 0.0 { total / geodesic } else { 1.0 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then on node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds the routing graph at one instant: ISLs from `topology` and a GSL
/// from every station to every satellite at least `min_elevation_deg` above
/// its horizon. Stations are fixed in the same inertial frame as the shell.
pub fn attach_stations(
    topology: &Topology,
    sat_positions: &[Vec3],
    stations: &[GroundStation],
    min_elevation_deg: f64,
) -> WeightedNet {
    let min_elev = min_elevation_deg.to_radians();
    let isl = (0..topology.num_satellites())
        .map(|s| topology.neighbors(s).iter().map(|&t| (t, (sat_positions[s] - sat_positions[t]).norm())).collect())
        .collect();
    let station_positions: Vec<Vec3> = stations.iter().map(|g| g.position).collect();
    let gsl: Vec<Vec<(usize, f64)>> = station_positions
        .iter()
        .map(|&g| {
            sat_positions
                .iter()
                .enumerate()
                .filter(|&(_, &p)| elevation(g, p) >= min_elev - 1e-12)
                .map(|(s, &p)| (s, (p - g).norm()))
                .collect()
        })
        .collect();
    let unreachable = gsl.iter().enumerate().filter(|(_, l)| l.is_empty()).map(|(g, _)| g).collect();
    WeightedNet { sat_positions: sat_positions.to_vec(), station_positions, isl, gsl, unreachable }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPathStats {
    pub src: usize,
    pub dst: usize,
    /// Satellites visited in order.
    pub sats: Vec<usize>,
    pub path_length_m: f64,
    pub geodesic_m: f64,
    pub stretch: f64,
    /// Links traversed, including both ground–satellite links.
    pub hops: usize,
}

impl FlowPathStats {
    fn trivial(station: usize) -> Self {
        FlowPathStats {
            src: station,
            dst: station,
            sats: Vec::new(),
            path_length_m: 0.0,
            geodesic_m: 0.0,
            stretch: 1.0,
            hops: 0,
        }
    }
}

/// Paths from `src` to every station (`None` where unreachable).
pub fn shortest_paths(net: &WeightedNet, src: usize) -> Vec<Option<FlowPathStats>> {
    let tree = net.station_tree(src);
    (0..net.num_stations())
        .map(|dst| {
            if dst == src {
                return Some(FlowPathStats::trivial(src));
            }
            // Links are symmetric, so the reversed path from dst is optimal.
            let back = tree.path_from(net, dst)?;
            let mut sats = back.sats;
            sats.reverse();
            Some(FlowPathStats { src, dst, sats, ..back })
        })
        .collect()
}

/// Hop-count buckets: 1–4, 5–10, 11–15 and 16 or more.
pub const HOP_BUCKETS: [(&str, usize, usize); 4] =
    [("short", 1, 4), ("midsize", 5, 10), ("long", 11, 15), ("very_long", 16, usize::MAX)];

pub fn hop_bucket(hops: usize) -> Option<usize> {
    HOP_BUCKETS.iter().position(|&(_, lo, hi)| hops >= lo && hops <= hi)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 100.0) / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Empirical CDF points `(value, fraction ≤ value)` of sorted data.
pub fn cdf_points(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}

pub fn write_cdf_csv<W: Write>(mut w: W, sorted: &[f64]) -> std::io::Result<()> {
    writeln!(w, "value,cumulative_fraction")?;
    for (v, f) in cdf_points(sorted) {
        writeln!(w, "{v},{f}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = if sorted.is_empty() { f64::NAN } else { sorted.iter().sum::<f64>() / sorted.len() as f64 };
        Summary {
            count: sorted.len(),
            mean,
            p50: percentile(&sorted, 50.0),
            p75: percentile(&sorted, 75.0),
            p90: percentile(&sorted, 90.0),
            p99: percentile(&sorted, 99.0),
        }
    }
}

/// Graph-level per-flow statistics for every non-zero demand entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StretchReport {
    pub flows: Vec<FlowPathStats>,
    pub unreachable: Vec<(usize, usize)>,
    pub stretch: Summary,
    pub hops: Summary,
    pub hop_histogram: [usize; 4],
}

impl StretchReport {
    pub fn from_flows(flows: Vec<FlowPathStats>, unreachable: Vec<(usize, usize)>) -> Self {
        let stretch: Vec<f64> = flows.iter().map(|f| f.stretch).collect();
        let hops: Vec<f64> = flows.iter().map(|f| f.hops as f64).collect();
        let mut hop_histogram = [0; 4];
        for f in &flows {
            if let Some(b) = hop_bucket(f.hops) {
                hop_histogram[b] += 1;
            }
        }
        StretchReport { stretch: Summary::of(&stretch), hops: Summary::of(&hops), flows, unreachable, hop_histogram }
    }

    /// Pools the flows of several reports (e.g. one per epoch).
    pub fn pooled(reports: &[StretchReport]) -> Self {
        let flows = reports.iter().flat_map(|r| r.flows.iter().cloned()).collect();
        let unreachable = reports.iter().flat_map(|r| r.unreachable.iter().copied()).collect();
        StretchReport::from_flows(flows, unreachable)
    }

    pub fn sorted_stretch(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.flows.iter().map(|f| f.stretch).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn sorted_hops(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.flows.iter().map(|f| f.hops as f64).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn write_flows_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "src,dst,stretch,hops,path_length_m,geodesic_m")?;
        for f in &self.flows {
            writeln!(w, "{},{},{},{},{},{}", f.src, f.dst, f.stretch, f.hops, f.path_length_m, f.geodesic_m)?;
        }
        Ok(())
    }
}

/// Routes every non-zero flow of `demand` over `topology` at the given
/// satellite positions.
pub fn stretch_report(
    topology: &Topology,
    sat_positions: &[Vec3],
    stations: &[GroundStation],
    demand: &DemandMatrix,
    min_elevation_deg: f64,
) -> StretchReport {
    let net = attach_stations(topology, sat_positions, stations, min_elevation_deg);
    let mut flows = Vec::new();
    let mut unreachable = Vec::new();
    let mut by_dst: Vec<Vec<usize>> = vec![Vec::new(); stations.len()];
    for (i, j, _) in demand.flows() {
        by_dst[j].push(i);
    }
    for (dst, srcs) in by_dst.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
        let tree = net.station_tree(dst);
        for &src in srcs {
            match tree.path_from(&net, src) {
                Some(p) => flows.push(p),
                None => unreachable.push((src, dst)),
            }
        }
    }
    flows.sort_by_key(|f: &FlowPathStats| (f.src, f.dst));
    unreachable.sort_unstable();
    StretchReport::from_flows(flows, unreachable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{snapshot, ShellConfig};
    use crate::topology::{plus_grid, Provenance};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RHO: f64 = 6_921_000.0;

    fn station(id: usize, lat: f64, lon: f64) -> GroundStation {
        GroundStation::new(id, format!("g{id}"), lat, lon, None, RHO).unwrap()
    }

    #[test]
    fn elevation_matches_spherical_trig() {
        // Oracle: for a satellite at radius r seen from a station at radius
        // R_E with central angle γ, tan(el) = (cos γ − R_E/r) / sin γ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let g = station(0, rng.random_range(-80.0..80.0), rng.random_range(-179.0..179.0));
            let lat = rng.random_range(-80.0..80.0);
            let lon = rng.random_range(-179.0..179.0);
            let sat = crate::geometry::SpherePoint::from_lat_lon_deg(lat, lon, RHO).position();
            let gamma = (g.position / g.position.norm()).dot(sat / RHO).clamp(-1.0, 1.0).acos();
            if gamma < 1e-6 {
                continue;
            }
            let oracle = ((gamma.cos() - EARTH_RADIUS_M / RHO) / gamma.sin()).atan();
            assert!((elevation(g.position, sat) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn zenith_and_min_elevation() {
        let g = station(0, 10.0, 20.0);
        let sat = g.shell_position.position();
        assert_relative_eq!(elevation(g.position, sat), std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        let topo = Topology::empty(1, 1, 4, Provenance::new("test"));
        let net = attach_stations(&topo, &[sat], std::slice::from_ref(&g), 25.0);
        assert_eq!(net.gsl[0].len(), 1);
        let off = crate::geometry::SpherePoint::from_lat_lon_deg(12.0, 20.0, RHO).position();
        let net = attach_stations(&topo, &[off], &[g], 90.0);
        assert!(net.gsl[0].is_empty());
        assert_eq!(net.unreachable, vec![0]);
    }

    #[test]
    fn shared_satellite_two_hop_path() {
        let a = station(0, 0.0, 0.0);
        let b = station(1, 0.0, 4.0);
        let sat = crate::geometry::SpherePoint::from_lat_lon_deg(0.0, 2.0, RHO).position();
        let topo = Topology::empty(1, 1, 4, Provenance::new("test"));
        let net = attach_stations(&topo, &[sat], &[a.clone(), b.clone()], 25.0);
        let p = net.route(0, 1).unwrap();
        assert_eq!(p.hops, 2);
        let up = (sat - a.position).norm();
        let down = (sat - b.position).norm();
        let geo = arc_length(a.position, b.position, EARTH_RADIUS_M);
        assert_relative_eq!(p.stretch, (up + down) / geo, max_relative = 1e-12);
        let z = net.route(1, 1).unwrap();
        assert_eq!((z.hops, z.path_length_m), (0, 0.0));
    }

    fn toy_net() -> (WeightedNet, Vec<GroundStation>) {
        let cfg = ShellConfig { num_orbits: 3, sats_per_orbit: 4, altitude_m: 4_000_000.0, ..ShellConfig::phase1() };
        let pos = snapshot(&cfg, 0.0);
        let topo = plus_grid(3, 4, 0);
        let stations: Vec<GroundStation> = [(0.0, 0.0), (30.0, 100.0), (-40.0, -120.0), (10.0, 170.0)]
            .iter()
            .enumerate()
            .map(|(i, &(la, lo))| GroundStation::new(i, "g", la, lo, None, cfg.shell_radius()).unwrap())
            .collect();
        (attach_stations(&topo, &pos, &stations, 10.0), stations)
    }

    /// All-pairs oracle over the full node set with stations made
    /// non-transit by giving them only outgoing (source) or incoming
    /// (destination) links per query.
    fn floyd_oracle(net: &WeightedNet, src: usize, dst: usize) -> f64 {
        let n = net.num_sats() + 2;
        let (s_node, d_node) = (n - 2, n - 1);
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for (a, l) in net.isl.iter().enumerate() {
            for &(b, w) in l {
                d[a][b] = w;
            }
        }
        for &(s, w) in &net.gsl[src] {
            d[s_node][s] = w;
        }
        for &(s, w) in &net.gsl[dst] {
            d[s][d_node] = w;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d[s_node][d_node]
    }

    #[test]
    fn dijkstra_matches_floyd_oracle() {
        let (net, _) = toy_net();
        for src in 0..net.num_stations() {
            for (dst, p) in shortest_paths(&net, src).into_iter().enumerate() {
                if src == dst {
                    continue;
                }
                let oracle = floyd_oracle(&net, src, dst);
                match p {
                    Some(p) => {
                        assert_relative_eq!(p.path_length_m, oracle, max_relative = 1e-9);
                        // Path length equals the sum of its links.
                        let mut len = net.gsl_length(src, p.sats[0]).unwrap()
                            + net.gsl_length(dst, *p.sats.last().unwrap()).unwrap();
                        for w in p.sats.windows(2) {
                            len += (net.sat_positions[w[0]] - net.sat_positions[w[1]]).norm();
                        }
                        assert_relative_eq!(len, p.path_length_m, max_relative = 1e-12);
                    }
                    None => assert!(oracle.is_infinite()),
                }
            }
        }
    }

    #[test]
    fn percentile_and_cdf() {
        assert_eq!(percentile(&[3.0], 90.0), 3.0);
        assert_relative_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), 2.5);
        let cdf = cdf_points(&[1.0, 1.0, 2.0, 5.0]);
        assert_eq!(cdf, vec![(1.0, 0.5), (2.0, 0.75), (5.0, 1.0)]);
        assert_eq!(hop_bucket(4), Some(0));
        assert_eq!(hop_bucket(5), Some(1));
        assert_eq!(hop_bucket(15), Some(2));
        assert_eq!(hop_bucket(16), Some(3));
        assert_eq!(hop_bucket(0), None);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = ShellConfig::phase1();
        let pos = snapshot(&cfg, 0.0);
        let stations = crate::demand::bundled_cities(cfg.shell_radius())[..20].to_vec();
        let demand = crate::demand::build_demand(&stations, crate::demand::DemandPattern::Distance, 1.0, 1).unwrap();
        let topo = plus_grid(72, 22, 14);
        let a = stretch_report(&topo, &pos, &stations, &demand, 25.0);
        let b = stretch_report(&topo, &pos, &stations, &demand, 25.0);
        assert_eq!(a, b);
        assert_eq!(a.flows.len() + a.unreachable.len(), demand.num_flows());
        assert!(a.flows.iter().all(|f| f.stretch >= 1.0));
    }
}
