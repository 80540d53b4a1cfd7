//! Flat-plane model: jittered satellite lattices, the 7×7 motivating grid,
//! and the stretch lower and upper bounds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod experiment;
mod rotated;

pub use experiment::{run_flat_trial, write_bounds_csv, FlatTrial, FlatTrialConfig, PathSample};

pub use rotated::{
    path_upper_bound, rotated_grid_topology, simplified_upper_bound, RegionGrid, RegionSegment, RotatedGrid,
};

#[derive(Debug, Error)]
pub enum FlatError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("range condition violated: R/2 + 2(2η + 1/(√2ρ)) exceeds R by {0}")]
    RangeCondition(f64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlatError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotated 90° anticlockwise.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        self * (1.0 / self.norm())
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }

    /// Orientation in `[0, 2π)`, anticlockwise from +x.
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x).rem_euclid(std::f64::consts::TAU)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Angle between two vectors, in `[0, π]`.
pub fn angle_between(a: Vec2, b: Vec2) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
}

/// Euclidean distance from `p` to the segment `a–b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// One satellite near every lattice point `(i/ρ, j/ρ)` of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatField {
    pub density: f64,
    pub distortion: f64,
    pub cols: usize,
    pub rows: usize,
    pub seed: u64,
    /// Row-major: satellite `j·cols + i` belongs to lattice point `(i, j)`.
    pub positions: Vec<Vec2>,
}

impl FlatField {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cols + i
    }

    pub fn lattice(&self, sat: usize) -> (usize, usize) {
        (sat % self.cols, sat / self.cols)
    }

    pub fn lattice_point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(i as f64 / self.density, j as f64 / self.density)
    }
}

/// Samples one satellite uniformly in the η-disk around each lattice point of
/// the `width × height` window anchored at the origin.
pub fn gen_flat_field(density: f64, distortion: f64, width: f64, height: f64, seed: u64) -> Result<FlatField> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(FlatError::InvalidParams(format!("density must be positive, got {density}")));
    }
    if !(0.0..0.5 / density).contains(&distortion) {
        return Err(FlatError::InvalidParams(format!("distortion must lie in [0, 1/(2ρ)), got {distortion}")));
    }
    if !(width >= 0.0 && height >= 0.0) {
        return Err(FlatError::InvalidParams("window must be non-negative".into()));
    }
    // Tolerate rounding when the window is an exact multiple of 1/ρ.
    let cols = (width * density + 1.0 + 1e-9).floor() as usize;
    let rows = (height * density + 1.0 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let r = distortion * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            positions.push(Vec2::new(i as f64 / density, j as f64 / density) + Vec2::from_angle(theta) * r);
        }
    }
    Ok(FlatField { density, distortion, cols, rows, seed, positions })
}

/// Undirected graph over planar points with Euclidean edge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTopology {
    pub positions: Vec<Vec2>,
    adjacency: Vec<Vec<usize>>,
}

impl FlatTopology {
    pub fn new(positions: Vec<Vec2>) -> Self {
        let n = positions.len();
        FlatTopology { positions, adjacency: vec![Vec::new(); n] }
    }

    /// Adds `a–b` unless it is a loop or already present.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.adjacency[a].contains(&b) {
            return false;
        }
        self.adjacency[a].push(b);
        self.adjacency[b].push(a);
        true
    }

    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.adjacency[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adjacency[a].len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, l)| l.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        self.positions[a].dist(self.positions[b])
    }

    /// Shortest distances from `src`, using only nodes for which `allowed`
    /// holds.
    pub fn distances_within(&self, src: usize, allowed: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.positions.len()];
        if !allowed(src) {
            return dist;
        }
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry(0.0, src));
        while let Some(HeapEntry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &v in &self.adjacency[u] {
                if !allowed(v) {
                    continue;
                }
                let nd = d + self.edge_length(u, v);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapEntry(nd, v));
                }
            }
        }
        dist
    }

    pub fn distances(&self, src: usize) -> Vec<f64> {
        self.distances_within(src, |_| true)
    }

    /// Shortest-path length over straight-line distance.
    pub fn stretch(&self, src: usize, dst: usize) -> f64 {
        self.distances(src)[dst] / self.positions[src].dist(self.positions[dst])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Links every satellite to its lattice neighbours along both axes.
pub fn flat_plus_grid(field: &FlatField) -> FlatTopology {
    let mut t = FlatTopology::new(field.positions.clone());
    for j in 0..field.rows {
        for i in 0..field.cols {
            if i + 1 < field.cols {
                t.add_edge(field.index(i, j), field.index(i + 1, j));
            }
            if j + 1 < field.rows {
                t.add_edge(field.index(i, j), field.index(i, j + 1));
            }
        }
    }
    t
}

/// Stretches on the 7×7 unit grid with demands between its corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotivatingExample {
    /// A1 → G7 over the +Grid.
    pub grid_stretch: f64,
    /// A1 → G7 over the diagonal layout.
    pub diagonal_stretch: f64,
    /// A1 → A7 over each layout.
    pub grid_axis_stretch: f64,
    pub diagonal_axis_stretch: f64,
}

const SIDE: usize = 7;

/// The diagonal layout: the border ring, one spoke from each non-corner
/// border node to its inner neighbour, and both diagonals of every interior
/// cell. Degrees stay within 4 and links within 2 units.
pub fn motivating_diagonal_topology() -> FlatTopology {
    let at = |r: usize, c: usize| r * SIDE + c;
    let mut t = FlatTopology::new(motivating_points());
    let last = SIDE - 1;
    for k in 0..last {
        t.add_edge(at(0, k), at(0, k + 1));
        t.add_edge(at(last, k), at(last, k + 1));
        t.add_edge(at(k, 0), at(k + 1, 0));
        t.add_edge(at(k, last), at(k + 1, last));
    }
    for k in 1..last {
        t.add_edge(at(0, k), at(1, k));
        t.add_edge(at(last, k), at(last - 1, k));
        t.add_edge(at(k, 0), at(k, 1));
        t.add_edge(at(k, last), at(k, last - 1));
    }
    for r in 1..last - 1 {
        for c in 1..last - 1 {
            t.add_edge(at(r, c), at(r + 1, c + 1));
            t.add_edge(at(r, c + 1), at(r + 1, c));
        }
    }
    t
}

/// Row `A..G` is `y`, column `1..7` is `x`, one unit apart.
fn motivating_points() -> Vec<Vec2> {
    (0..SIDE).flat_map(|r| (0..SIDE).map(move |c| Vec2::new(c as f64, r as f64))).collect()
}

pub fn motivating_grid_topology() -> FlatTopology {
    let field =
        FlatField { density: 1.0, distortion: 0.0, cols: SIDE, rows: SIDE, seed: 0, positions: motivating_points() };
    flat_plus_grid(&field)
}

pub fn motivating_example() -> MotivatingExample {
    let (a1, a7, g7) = (0, SIDE - 1, SIDE * SIDE - 1);
    let grid = motivating_grid_topology();
    let diag = motivating_diagonal_topology();
    MotivatingExample {
        grid_stretch: grid.stretch(a1, g7),
        diagonal_stretch: diag.stretch(a1, g7),
        grid_axis_stretch: grid.stretch(a1, a7),
        diagonal_axis_stretch: diag.stretch(a1, a7),
    }
}

/// Inputs of the lower bound on the worst stretch inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    /// Area of the cell discretisation of the region.
    pub area: f64,
    pub density: f64,
    pub degree_bound: usize,
    pub range: f64,
    pub epsilon: f64,
    pub num_demands: usize,
    /// Most demands within ε of a single direction.
    pub lambda: usize,
}

/// Lower bound for a demand of length `length`: with
/// `L = min(l, Rλ(2αρ² + 1)δ / |D|)` it is `(L + (l − L)/|cos ε|) / l`.
/// Infinite when `cos ε = 0` and `L < l`.
pub fn stretch_lower_bound(p: &LowerBoundParams, length: f64) -> Result<f64> {
    if !(0.0..std::f64::consts::PI).contains(&p.epsilon) {
        return Err(FlatError::InvalidParams(format!("ε must lie in [0, π), got {}", p.epsilon)));
    }
    if p.num_demands == 0 || !(length > 0.0) || !(p.range > 0.0) || !(p.density > 0.0) || p.area < 0.0 {
        return Err(FlatError::InvalidParams("lengths, range, density and demand count must be positive".into()));
    }
    let budget = p.range * p.lambda as f64 * (2.0 * p.area * p.density.powi(2) + 1.0) * p.degree_bound as f64
        / p.num_demands as f64;
    let aligned = length.min(budget);
    let cos = p.epsilon.cos().abs();
    let rest = length - aligned;
    if rest <= 0.0 {
        return Ok(1.0);
    }
    if cos < 1e-15 {
        return Ok(f64::INFINITY);
    }
    Ok((aligned + rest / cos) / length)
}

/// Largest number of orientations (radians) falling in one closed arc of
/// half-width `epsilon`. Exact: an optimal arc can always start at a sample.
pub fn lambda_count(orientations: &[f64], epsilon: f64) -> usize {
    let tau = std::f64::consts::TAU;
    let mut sorted: Vec<f64> = orientations.iter().map(|a| a.rem_euclid(tau)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let width = 2.0 * epsilon;
    if width >= tau {
        return n;
    }
    let mut best = 0;
    let mut end = 0;
    for start in 0..n {
        if end < start {
            end = start;
        }
        // Walk around the circle using unwrapped angles.
        let unwrapped = |k: usize| if k < n { sorted[k] } else { sorted[k - n] + tau };
        while end + 1 < start + n && unwrapped(end + 1) - sorted[start] <= width + 1e-12 {
            end += 1;
        }
        best = best.max(end - start + 1);
    }
    best
}

/// Area of the union of `1/ρ` cells meeting the closed rectangle.
pub fn discretized_area(min: Vec2, max: Vec2, density: f64) -> f64 {
    let cells = |lo: f64, hi: f64| {
        let first = (lo * density).floor();
        let last = (hi * density).ceil().max(first + 1.0);
        // A side lying exactly on a cell line also touches the cell beyond it.
        let extra_lo = if (lo * density).fract() == 0.0 { 1.0 } else { 0.0 };
        let extra_hi = if (hi * density).fract() == 0.0 { 1.0 } else { 0.0 };
        last - first + extra_lo + extra_hi
    };
    cells(min.x, max.x) * cells(min.y, max.y) / density.powi(2)
}

/// A demand between two satellites of a flat instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatDemand {
    pub src: usize,
    pub dst: usize,
}

impl FlatDemand {
    pub fn vector(&self, positions: &[Vec2]) -> Vec2 {
        positions[self.dst] - positions[self.src]
    }
}

/// Everything needed to re-run a flat experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatInstance {
    pub field: FlatField,
    pub range: f64,
    pub demands: Vec<FlatDemand>,
    /// Primary direction per region, row-major, when a rotated grid is used.
    #[serde(default)]
    pub region_side: Option<f64>,
    #[serde(default)]
    pub primary_directions: Vec<Vec2>,
}

impl FlatInstance {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Outcome of checking the lower bound on one region of one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundCheck {
    pub params: LowerBoundParams,
    /// Largest `measured stretch − bound` over the region's demands; the
    /// bound holds when this is non-negative.
    pub best_margin: f64,
    pub max_stretch: f64,
}

/// Measures corridor-restricted stretches of the demands whose R-corridor
/// lies inside the rectangle `[min, max]` and compares them with the bound.
/// Returns `None` when no demand qualifies.
#[allow(clippy::too_many_arguments)]
pub fn check_lower_bound(
    topo: &FlatTopology,
    demands: &[FlatDemand],
    min: Vec2,
    max: Vec2,
    density: f64,
    range: f64,
    degree_bound: usize,
    epsilon: f64,
) -> Result<Option<LowerBoundCheck>> {
    let pos = &topo.positions;
    let inside = |p: Vec2| p.x - range >= min.x && p.x + range <= max.x && p.y - range >= min.y && p.y + range <= max.y;
    let local: Vec<FlatDemand> =
        demands.iter().copied().filter(|d| d.src != d.dst && inside(pos[d.src]) && inside(pos[d.dst])).collect();
    if local.is_empty() {
        return Ok(None);
    }
    let orientations: Vec<f64> = local.iter().map(|d| d.vector(pos).angle()).collect();
    let params = LowerBoundParams {
        area: discretized_area(min, max, density),
        density,
        degree_bound,
        range,
        epsilon,
        num_demands: local.len(),
        lambda: lambda_count(&orientations, epsilon),
    };
    let mut best_margin = f64::NEG_INFINITY;
    let mut max_stretch: f64 = 0.0;
    for d in &local {
        let (a, b) = (pos[d.src], pos[d.dst]);
        let dist = topo.distances_within(d.src, |v| point_segment_distance(pos[v], a, b) <= range);
        let length = a.dist(b);
        let stretch = dist[d.dst] / length;
        max_stretch = max_stretch.max(stretch);
        best_margin = best_margin.max(stretch - stretch_lower_bound(&params, length)?);
    }
    Ok(Some(LowerBoundCheck { params, best_margin, max_stretch }))
}
