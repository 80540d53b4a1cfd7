//! Per-region rotated grids and the matching path-length upper bound.

use std::collections::HashMap;

use serde::Serialize;

use super::{angle_between, FlatError, FlatField, FlatTopology, Result, Vec2};

/// Relative tolerance for "on the boundary" and "at a crossing" tests.
const TOL: f64 = 1e-9;

/// One straight piece of the reference path, travelled inside one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionSegment {
    pub from: Vec2,
    pub to: Vec2,
    pub primary: Vec2,
}

impl RegionSegment {
    pub fn length(&self) -> f64 {
        self.from.dist(self.to)
    }

    /// `|cos θ| + |sin θ|` for the angle θ between the segment and the
    /// region's primary direction; 1 for an empty segment.
    pub fn manhattan_factor(&self) -> f64 {
        let d = self.to - self.from;
        if d.norm() == 0.0 {
            return 1.0;
        }
        let theta = angle_between(d, self.primary);
        theta.cos().abs() + theta.sin().abs()
    }
}

fn jitter_allowance(density: f64, distortion: f64) -> f64 {
    2.0 * distortion + 1.0 / (std::f64::consts::SQRT_2 * density)
}

fn check_bound_inputs(segments: &[RegionSegment], range: f64, density: f64) -> Result<()> {
    if segments.is_empty() {
        return Err(FlatError::InvalidParams("at least one region segment is required".into()));
    }
    if !(range > 0.0 && density > 0.0) {
        return Err(FlatError::InvalidParams("range and density must be positive".into()));
    }
    Ok(())
}

/// `(1 + (4/R)(2η + 1/(√2ρ)))·Σ_h [R + ‖seg_h‖(|cos θ_h| + |sin θ_h|)] + (k − 1)R/2`.
pub fn path_upper_bound(segments: &[RegionSegment], range: f64, density: f64, distortion: f64) -> Result<f64> {
    check_bound_inputs(segments, range, density)?;
    let factor = 1.0 + 4.0 / range * jitter_allowance(density, distortion);
    let sum: f64 = segments.iter().map(|s| range + s.length() * s.manhattan_factor()).sum();
    Ok(factor * sum + (segments.len() - 1) as f64 * range / 2.0)
}

/// The same bound when every primary direction follows the demand, with
/// `|cos θ| + |sin θ|` replaced by `1 + R/(2√2‖seg‖)`.
pub fn simplified_upper_bound(segments: &[RegionSegment], range: f64, density: f64, distortion: f64) -> Result<f64> {
    check_bound_inputs(segments, range, density)?;
    let factor = 1.0 + 4.0 / range * jitter_allowance(density, distortion);
    let extra = range / (2.0 * std::f64::consts::SQRT_2);
    let sum: f64 = segments.iter().map(|s| range + s.length() + extra).sum();
    Ok(factor * sum + (segments.len() - 1) as f64 * range / 2.0)
}

/// Grid points of one square region and the satellites they map to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGrid {
    pub i: usize,
    pub j: usize,
    pub min: Vec2,
    pub max: Vec2,
    pub primary: Vec2,
    pub points: Vec<Vec2>,
    pub on_boundary: Vec<bool>,
    pub satellite: Vec<usize>,
}

impl RegionGrid {
    /// Grid point of the closed region nearest to `p`.
    pub fn nearest_point(&self, p: Vec2) -> Vec2 {
        *self.points.iter().min_by(|a, b| a.dist(p).total_cmp(&b.dist(p))).expect("region grids are never empty")
    }

    /// Parameter interval of `a + t(b − a)`, `t ∈ [0, 1]`, inside the
    /// region's cell: the region widened by half a lattice spacing so that
    /// cells tile the plane without gaps.
    fn clip_cell(&self, a: Vec2, b: Vec2, density: f64) -> Option<(f64, f64)> {
        let half = Vec2::new(0.5 / density, 0.5 / density);
        clip_to_box(a, b - a, 0.0, 1.0, self.min - half, self.max + half)
    }
}

/// Liang–Barsky clipping of `a + t·d` with `t ∈ [lo, hi]` to a box.
fn clip_to_box(a: Vec2, d: Vec2, mut lo: f64, mut hi: f64, min: Vec2, max: Vec2) -> Option<(f64, f64)> {
    for (p, dir, mn, mx) in [(a.x, d.x, min.x, max.x), (a.y, d.y, min.y, max.y)] {
        if dir.abs() < 1e-300 {
            if p < mn || p > mx {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((mn - p) / dir, (mx - p) / dir);
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo > hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// The topology built from one rotated grid per region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotatedGrid {
    pub topology: FlatTopology,
    pub regions: Vec<RegionGrid>,
    pub regions_x: usize,
    pub regions_y: usize,
    pub lattice_per_region: usize,
    pub range: f64,
    pub density: f64,
    pub distortion: f64,
    pub cols: usize,
    /// Links added between adjacent regions.
    pub stitch_edges: usize,
    /// Grid points sharing their nearest satellite with another point.
    pub merged_points: usize,
    /// Largest degree counting only links inside a region. Boundary points
    /// carry a perimeter link on each side, so this can exceed 4.
    pub max_region_degree: usize,
    pub max_edge_length: f64,
}

/// Splits the field into square regions of side `region_side` (a whole
/// number of lattice spacings), lays a grid of spacing R/2 along each
/// region's primary direction, links the satellites nearest to adjacent grid
/// points and stitches facing boundary points of neighbouring regions.
///
/// `primary` holds one direction per region, row-major from the origin.
pub fn rotated_grid_topology(field: &FlatField, region_side: f64, range: f64, primary: &[Vec2]) -> Result<RotatedGrid> {
    let rho = field.density;
    let slack = range / 2.0 + 2.0 * jitter_allowance(rho, field.distortion) - range;
    if slack >= 0.0 {
        return Err(FlatError::RangeCondition(slack));
    }
    let per = (region_side * rho).round();
    if per < 2.0 || (region_side * rho - per).abs() > 1e-9 {
        return Err(FlatError::InvalidParams(format!(
            "region side must be a whole number (≥ 2) of lattice spacings, got {}",
            region_side * rho
        )));
    }
    let per = per as usize;
    let (nx, ny) = (field.cols / per, field.rows / per);
    if nx == 0 || ny == 0 {
        return Err(FlatError::InvalidParams("field is smaller than one region".into()));
    }
    if primary.len() != nx * ny {
        return Err(FlatError::InvalidParams(format!(
            "expected {} primary directions, got {}",
            nx * ny,
            primary.len()
        )));
    }
    if primary.iter().any(|p| !(p.norm() > 0.0 && p.norm().is_finite())) {
        return Err(FlatError::InvalidParams("primary directions must be non-zero".into()));
    }

    let mut topology = FlatTopology::new(field.positions.clone());
    let mut regions = Vec::with_capacity(nx * ny);
    let mut merged_points = 0;
    for j in 0..ny {
        for i in 0..nx {
            let (mut region, local) = region_grid(field, per, i, j, primary[j * nx + i].normalized(), range / 2.0);
            let (edges, merged) = map_to_satellites(field, per, &mut region, &local);
            merged_points += merged;
            for (a, b) in edges {
                topology.add_edge(a, b);
            }
            regions.push(region);
        }
    }
    let max_region_degree = (0..topology.positions.len()).map(|v| topology.degree(v)).max().unwrap_or(0);

    let mut stitch_edges = 0;
    for j in 0..ny {
        for i in 0..nx {
            let a = &regions[j * nx + i];
            if i + 1 < nx {
                stitch_edges += stitch(&mut topology, a, &regions[j * nx + i + 1], |p| p.x);
            }
            if j + 1 < ny {
                stitch_edges += stitch(&mut topology, a, &regions[(j + 1) * nx + i], |p| p.y);
            }
        }
    }

    let max_edge_length = topology.edges().map(|(a, b)| topology.edge_length(a, b)).fold(0.0, f64::max);
    Ok(RotatedGrid {
        max_edge_length,
        topology,
        regions,
        regions_x: nx,
        regions_y: ny,
        lattice_per_region: per,
        range,
        density: rho,
        distortion: field.distortion,
        cols: field.cols,
        stitch_edges,
        merged_points,
        max_region_degree,
    })
}

/// Grid points of region `(i, j)` plus the links between consecutive points
/// on every grid line, as local point indices.
fn region_grid(
    field: &FlatField,
    per: usize,
    i: usize,
    j: usize,
    p: Vec2,
    h: f64,
) -> (RegionGrid, Vec<(usize, usize)>) {
    let min = field.lattice_point(i * per, j * per);
    let max = field.lattice_point((i + 1) * per - 1, (j + 1) * per - 1);
    let s = p.perp();
    let corners = [min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)];
    let u: Vec<f64> = corners.iter().map(|&c| (c - min).dot(p)).collect();
    let v: Vec<f64> = corners.iter().map(|&c| (c - min).dot(s)).collect();
    let span = |xs: &[f64]| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ((lo / h - TOL).ceil() as i64, (hi / h + TOL).floor() as i64)
    };
    let (m_lo, m_hi) = span(&u);
    let (k_lo, k_hi) = span(&v);
    let scale = (max - min).norm().max(h);
    let eps = TOL * scale;

    let mut region =
        RegionGrid { i, j, min, max, primary: p, points: Vec::new(), on_boundary: Vec::new(), satellite: Vec::new() };
    let mut crossings: HashMap<(i64, i64), usize> = HashMap::new();
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let on_edge = |q: Vec2| {
        (q.x - min.x).abs() <= eps
            || (q.x - max.x).abs() <= eps
            || (q.y - min.y).abs() <= eps
            || (q.y - max.y).abs() <= eps
    };
    let push = |region: &mut RegionGrid, q: Vec2, boundary: bool| {
        let q = Vec2::new(q.x.clamp(min.x, max.x), q.y.clamp(min.y, max.y));
        region.points.push(q);
        region.on_boundary.push(boundary || on_edge(q));
        region.points.len() - 1
    };

    // Lines along p sit at v = k·h; lines along s at u = m·h.
    for (along, across, (c_lo, c_hi), along_p) in [(p, s, (k_lo, k_hi), true), (s, p, (m_lo, m_hi), false)] {
        for c in c_lo..=c_hi {
            let base = min + across * (c as f64 * h);
            let Some((t0, t1)) = clip_to_box(
                base,
                along,
                f64::NEG_INFINITY,
                f64::INFINITY,
                min - Vec2::new(eps, eps),
                max + Vec2::new(eps, eps),
            ) else {
                continue;
            };
            if t1 - t0 <= eps {
                continue;
            }
            let key = |o: i64| if along_p { (c, o) } else { (o, c) };
            let mut ids = Vec::new();
            let mut add_at = |region: &mut RegionGrid, t: f64, boundary: bool, ids: &mut Vec<usize>| {
                let o = (t / h).round() as i64;
                let id = if (t - o as f64 * h).abs() <= eps {
                    *crossings.entry(key(o)).or_insert_with(|| push(region, base + along * (o as f64 * h), boundary))
                } else {
                    push(region, base + along * t, boundary)
                };
                if let Some(&r) = region.on_boundary.get(id) {
                    if boundary && !r {
                        region.on_boundary[id] = true;
                    }
                }
                if ids.last() != Some(&id) {
                    ids.push(id);
                }
            };
            add_at(&mut region, t0, true, &mut ids);
            let first = (t0 / h + TOL).ceil() as i64;
            let last = (t1 / h - TOL).floor() as i64;
            for o in first..=last {
                let t = o as f64 * h;
                if t - t0 > eps && t1 - t > eps {
                    add_at(&mut region, t, false, &mut ids);
                }
            }
            add_at(&mut region, t1, true, &mut ids);
            lines.push(ids);
        }
    }
    let mut edges: Vec<(usize, usize)> = lines.iter().flat_map(|ids| ids.windows(2).map(|w| (w[0], w[1]))).collect();

    // Consecutive boundary points around the perimeter are neighbours too.
    let (w, ht) = (max.x - min.x, max.y - min.y);
    let perimeter = |q: Vec2| {
        if (q.y - min.y).abs() <= eps {
            q.x - min.x
        } else if (q.x - max.x).abs() <= eps {
            w + q.y - min.y
        } else if (q.y - max.y).abs() <= eps {
            w + ht + max.x - q.x
        } else {
            2.0 * w + ht + max.y - q.y
        }
    };
    let mut ring: Vec<(f64, usize)> =
        (0..region.points.len()).filter(|&k| region.on_boundary[k]).map(|k| (perimeter(region.points[k]), k)).collect();
    ring.sort_by(|a, b| a.0.total_cmp(&b.0));
    ring.dedup_by(|a, b| region.points[a.1].dist(region.points[b.1]) <= eps);
    if ring.len() > 1 {
        for k in 0..ring.len() {
            let next = (k + 1) % ring.len();
            if ring.len() > 2 || next > k {
                edges.push((ring[k].1, ring[next].1));
            }
        }
    }
    (region, edges)
}

/// Fills `region.satellite` and translates local links to satellite links.
/// Also returns the number of merged points.
fn map_to_satellites(
    field: &FlatField,
    per: usize,
    region: &mut RegionGrid,
    local: &[(usize, usize)],
) -> (Vec<(usize, usize)>, usize) {
    let (i0, j0) = (region.i * per, region.j * per);
    let rho = field.density;
    let nearest = |q: Vec2| {
        let ci = (q.x * rho).round() as i64;
        let cj = (q.y * rho).round() as i64;
        let mut best = (f64::INFINITY, 0);
        for dj in -2..=2 {
            for di in -2..=2 {
                let (a, b) = (ci + di, cj + dj);
                if a < i0 as i64 || b < j0 as i64 || a >= (i0 + per) as i64 || b >= (j0 + per) as i64 {
                    continue;
                }
                let k = field.index(a as usize, b as usize);
                let d = field.positions[k].dist(q);
                if d < best.0 {
                    best = (d, k);
                }
            }
        }
        best.1
    };
    region.satellite = region.points.iter().map(|&q| nearest(q)).collect();
    let mut seen = HashMap::new();
    let merged = region.satellite.iter().filter(|&&s| seen.insert(s, ()).is_some()).count();
    let edges = local.iter().map(|&(a, b)| (region.satellite[a], region.satellite[b])).collect();
    (edges, merged)
}

/// Links each boundary point on the shared side to the nearest boundary
/// point of the other region. `coord` picks the axis across the shared side.
fn stitch(topology: &mut FlatTopology, a: &RegionGrid, b: &RegionGrid, coord: impl Fn(Vec2) -> f64) -> usize {
    let eps = TOL * (a.max - a.min).norm().max(1.0);
    let side = |r: &RegionGrid, at: f64| -> Vec<usize> {
        (0..r.points.len()).filter(|&k| r.on_boundary[k] && (coord(r.points[k]) - at).abs() <= eps).collect()
    };
    let sa = side(a, coord(a.max));
    let sb = side(b, coord(b.min));
    if sa.is_empty() || sb.is_empty() {
        return 0;
    }
    let mut added = 0;
    let mut link = |from: &RegionGrid, fk: usize, to: &RegionGrid, cands: &[usize]| {
        let q = from.points[fk];
        let tk = *cands.iter().min_by(|&&x, &&y| to.points[x].dist(q).total_cmp(&to.points[y].dist(q))).unwrap();
        if topology.add_edge(from.satellite[fk], to.satellite[tk]) {
            added += 1;
        }
    };
    for &k in &sa {
        link(a, k, b, &sb);
    }
    for &k in &sb {
        link(b, k, a, &sa);
    }
    added
}

impl RotatedGrid {
    fn region_of(&self, sat: usize) -> usize {
        let (i, j) = (sat % self.cols, sat / self.cols);
        let (ri, rj) = (i / self.lattice_per_region, j / self.lattice_per_region);
        rj * self.regions_x + ri
    }

    /// Satellites carrying at least one link.
    pub fn active_satellites(&self) -> Vec<usize> {
        (0..self.topology.positions.len()).filter(|&v| self.topology.degree(v) > 0).collect()
    }

    /// Reference path pieces for the demand `src → dst`: from the source to
    /// the exit grid point of its region, between entry and exit grid points
    /// of every region crossed, and from the last entry grid point to the
    /// destination.
    pub fn bound_segments(&self, src: usize, dst: usize) -> Result<Vec<RegionSegment>> {
        let n = self.topology.positions.len();
        if src >= n || dst >= n {
            return Err(FlatError::InvalidParams("demand endpoint out of range".into()));
        }
        let (xs, xd) = (self.topology.positions[src], self.topology.positions[dst]);
        let (rs, rd) = (self.region_of(src), self.region_of(dst));
        if rs == rd {
            return Ok(vec![RegionSegment { from: xs, to: xd, primary: self.regions[rs].primary }]);
        }
        let mut crossed: Vec<(f64, f64, usize)> = self
            .regions
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != rs && k != rd)
            .filter_map(|(k, r)| {
                r.clip_cell(xs, xd, self.density).filter(|(t0, t1)| t1 > t0).map(|(t0, t1)| (t0, t1, k))
            })
            .collect();
        crossed.sort_by(|a, b| a.0.total_cmp(&b.0));
        let at = |t: f64| xs + (xd - xs) * t;

        let first = &self.regions[rs];
        let exit = first.clip_cell(xs, xd, self.density).map_or(xs, |(_, t1)| at(t1));
        let mut out = vec![RegionSegment { from: xs, to: first.nearest_point(exit), primary: first.primary }];
        for (t0, t1, k) in crossed {
            let r = &self.regions[k];
            out.push(RegionSegment { from: r.nearest_point(at(t0)), to: r.nearest_point(at(t1)), primary: r.primary });
        }
        let last = &self.regions[rd];
        let entry = last.clip_cell(xs, xd, self.density).map_or(xd, |(t0, _)| at(t0));
        out.push(RegionSegment { from: last.nearest_point(entry), to: xd, primary: last.primary });
        Ok(out)
    }

    pub fn upper_bound(&self, src: usize, dst: usize) -> Result<f64> {
        path_upper_bound(&self.bound_segments(src, dst)?, self.range, self.density, self.distortion)
    }

    pub fn simplified_bound(&self, src: usize, dst: usize) -> Result<f64> {
        simplified_upper_bound(&self.bound_segments(src, dst)?, self.range, self.density, self.distortion)
    }

    /// Shortest-path length through the topology.
    pub fn path_length(&self, src: usize, dst: usize) -> f64 {
        self.topology.distances(src)[dst]
    }
}
