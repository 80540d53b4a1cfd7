//! GeoJSON and CZML exports for external globe viewers.

use leo_topo::constellation::{Ephemeris, ShellConfig};
use leo_topo::demand::{DemandMatrix, GroundStation};
use leo_topo::geometry::Vec3;
use leo_topo::routing::FlowPathStats;
use leo_topo::topology::Topology;
use serde_json::{json, Value};

/// Nominal epoch for the CZML time axis; simulation time 0 maps to it.
const CZML_EPOCH: &str = "2000-01-01T12:00:00Z";
/// Points per demand geodesic polyline.
const GEODESIC_POINTS: usize = 16;

pub struct Scene<'a> {
    pub shell: &'a ShellConfig,
    pub topology: &'a Topology,
    pub positions: &'a [Vec3],
    pub stations: &'a [GroundStation],
    /// Drawn as geodesics when present.
    pub demand: Option<&'a DemandMatrix>,
    /// Drawn as `selected` polylines through their satellites.
    pub paths: &'a [FlowPathStats],
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// `[lon, lat]` in degrees of the direction of `p`, in the frame `p` is given in.
fn lon_lat(p: Vec3) -> [f64; 2] {
    let r = p.norm();
    [round6(p.y.atan2(p.x).to_degrees()), round6((p.z / r).clamp(-1.0, 1.0).asin().to_degrees())]
}

fn slerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    let (ua, ub) = (a * (1.0 / a.norm()), b * (1.0 / b.norm()));
    let omega = ua.dot(ub).clamp(-1.0, 1.0).acos();
    if omega < 1e-12 {
        return ua;
    }
    let s = omega.sin();
    ua * (((1.0 - t) * omega).sin() / s) + ub * ((t * omega).sin() / s)
}

fn line(coords: Vec<[f64; 2]>, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": { "type": "LineString", "coordinates": coords },
        "properties": properties,
    })
}

/// Satellites as points, ISLs as `intra`/`inter` lines, demand as `demand`
/// geodesics carrying their intensity and selected paths as `selected` lines.
pub fn geojson(scene: &Scene) -> Value {
    let topo = scene.topology;
    let n_s = topo.sats_per_orbit;
    let mut features = Vec::new();
    for (s, &p) in scene.positions.iter().enumerate() {
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": lon_lat(p) },
            "properties": { "role": "satellite", "orbit": s / n_s, "slot": s % n_s, "degree": topo.degree(s) },
        }));
    }
    for (a, b) in topo.edges() {
        let role = if topo.is_intra(a, b) { "intra" } else { "inter" };
        features.push(line(
            vec![lon_lat(scene.positions[a]), lon_lat(scene.positions[b])],
            json!({ "role": role, "a": a, "b": b }),
        ));
    }
    if let Some(demand) = scene.demand {
        for (i, j, intensity) in demand.flows() {
            let (u, v) = (scene.stations[i].position, scene.stations[j].position);
            let coords = (0..GEODESIC_POINTS).map(|k| lon_lat(slerp(u, v, k as f64 / (GEODESIC_POINTS - 1) as f64)));
            features
                .push(line(coords.collect(), json!({ "role": "demand", "src": i, "dst": j, "intensity": intensity })));
        }
    }
    for f in scene.paths {
        let mut coords = vec![lon_lat(scene.stations[f.src].position)];
        coords.extend(f.sats.iter().map(|&s| lon_lat(scene.positions[s])));
        coords.push(lon_lat(scene.stations[f.dst].position));
        features.push(line(
            coords,
            json!({ "role": "selected", "src": f.src, "dst": f.dst, "stretch": f.stretch, "hops": f.hops }),
        ));
    }
    json!({ "type": "FeatureCollection", "features": features })
}

/// Satellite tracks sampled from `eph` in the inertial frame, plus ISL
/// polylines that follow the satellites by reference.
pub fn czml(scene: &Scene, eph: &Ephemeris) -> Value {
    let n_s = scene.shell.sats_per_orbit;
    let id = |s: usize| format!("sat-{}-{}", s / n_s, s % n_s);
    let mut packets = vec![json!({ "id": "document", "name": "leo-topo", "version": "1.0" })];
    for s in 0..eph.num_satellites() {
        let mut cartesian = Vec::with_capacity(4 * eph.times.len());
        for (t, row) in eph.times.iter().zip(&eph.positions) {
            let p = row[s];
            cartesian.extend([*t, p.x.round(), p.y.round(), p.z.round()]);
        }
        packets.push(json!({
            "id": id(s),
            "position": { "epoch": CZML_EPOCH, "referenceFrame": "INERTIAL", "cartesian": cartesian },
            "point": { "pixelSize": 3 },
        }));
    }
    let topo = scene.topology;
    for (a, b) in topo.edges() {
        let role = if topo.is_intra(a, b) { "intra" } else { "inter" };
        packets.push(json!({
            "id": format!("isl-{a}-{b}"),
            "polyline": { "positions": { "references": [format!("{}#position", id(a)), format!("{}#position", id(b))] }, "width": 1 },
            "properties": { "role": role },
        }));
    }
    Value::Array(packets)
}
