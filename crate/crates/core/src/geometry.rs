//! Spherical and vector primitives on a single shell.
//!
//! Everything here works in the Earth-centred inertial frame: the origin is
//! the Earth's centre, `z` points through the north pole and the `xy` plane is
//! the equator. Positions are in metres.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for unit-vector checks.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Relative tolerance (fraction of the radius) for on-shell checks.
pub const SHELL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("points lie on different shells ({0} m vs {1} m)")]
    RadiusMismatch(f64, f64),
    #[error("point of norm {norm} m is not on the shell of radius {radius} m")]
    NotOnShell { norm: f64, radius: f64 },
    #[error("degenerate great circle: {0}")]
    Degenerate(&'static str),
    #[error("latitude/longitude basis is undefined at a pole")]
    Pole,
    #[error("no candidate satisfies the orientation criterion")]
    NoAngularNeighbor,
    #[error("zero-length vector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction, or an error for the zero vector.
    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::ZeroVector);
        }
        Ok(self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Component of `self` orthogonal to the unit vector `axis`.
    #[inline]
    pub fn reject_from(self, axis: Vec3) -> Vec3 {
        self - axis * self.dot(axis)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, k: f64) -> Vec3 {
        Vec3::new(self.x / k, self.y / k, self.z / k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::iter::Sum for Vec3 {
    fn sum<I: Iterator<Item = Vec3>>(iter: I) -> Vec3 {
        iter.fold(Vec3::ZERO, |a, b| a + b)
    }
}

/// A point on a spherical shell of known radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    position: Vec3,
    radius: f64,
}

impl SpherePoint {
    /// Wraps `position`, checking that it lies on the shell of `radius`.
    pub fn new(position: Vec3, radius: f64) -> Result<Self> {
        let norm = position.norm();
        if !position.is_finite() || !(radius > 0.0) || (norm - radius).abs() > SHELL_TOLERANCE * radius {
            return Err(GeometryError::NotOnShell { norm, radius });
        }
        Ok(SpherePoint { position, radius })
    }

    /// Takes the shell radius from the vector's own norm.
    pub fn from_position(position: Vec3) -> Result<Self> {
        let radius = position.norm();
        if radius == 0.0 || !position.is_finite() {
            return Err(GeometryError::ZeroVector);
        }
        Ok(SpherePoint { position, radius })
    }

    /// Point at geodetic-free (spherical) latitude/longitude in degrees.
    pub fn from_lat_lon_deg(lat: f64, lon: f64, radius: f64) -> Self {
        let (lat, lon) = (lat.to_radians(), lon.to_radians());
        let position = Vec3::new(radius * lat.cos() * lon.cos(), radius * lat.cos() * lon.sin(), radius * lat.sin());
        SpherePoint { position, radius }
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn unit(&self) -> Vec3 {
        self.position / self.position.norm()
    }

    /// Spherical latitude in radians, in [-π/2, π/2].
    pub fn latitude(&self) -> f64 {
        (self.position.z / self.position.norm()).clamp(-1.0, 1.0).asin()
    }

    /// Longitude in radians, in [-π, π).
    pub fn longitude(&self) -> f64 {
        let lon = self.position.y.atan2(self.position.x);
        if lon >= std::f64::consts::PI {
            lon - 2.0 * std::f64::consts::PI
        } else {
            lon
        }
    }

    /// Same direction, rescaled onto another shell.
    pub fn rescaled(&self, radius: f64) -> SpherePoint {
        SpherePoint { position: self.position * (radius / self.position.norm()), radius }
    }
}

fn check_same_shell(p: &SpherePoint, q: &SpherePoint) -> Result<()> {
    if (p.radius - q.radius).abs() > SHELL_TOLERANCE * p.radius.max(q.radius) {
        return Err(GeometryError::RadiusMismatch(p.radius, q.radius));
    }
    Ok(())
}

/// Great-circle distance from the chord: `2ρ·asin(‖p−q‖ / 2ρ)`.
///
/// Unchecked variant for hot loops; the argument is clamped so rounding near
/// antipodes cannot produce NaN.
#[inline]
pub fn arc_length(p: Vec3, q: Vec3, radius: f64) -> f64 {
    let half_chord = (p - q).norm() / (2.0 * radius);
    2.0 * radius * half_chord.min(1.0).asin()
}

pub fn geodesic_distance(p: &SpherePoint, q: &SpherePoint) -> Result<f64> {
    check_same_shell(p, q)?;
    Ok(arc_length(p.position, q.position, p.radius))
}

/// Unchecked unit tangent at `p` of the great circle towards `q`.
///
/// Returns `None` when `p` and `q` coincide or are antipodal.
#[inline]
pub fn tangent_towards(p: Vec3, q: Vec3) -> Option<Vec3> {
    let t = p.cross(q).cross(p);
    let n = t.norm();
    // The cross products scale with ‖p‖²‖q‖; compare against that scale.
    let scale = p.norm_squared() * q.norm();
    if n <= 1e-12 * scale || !n.is_finite() {
        None
    } else {
        Some(t / n)
    }
}

/// Unit tangent at `p` of the geodesic from `p` to `q`, pointing towards `q`.
///
/// Computed as `((p×q)×p)/‖(p×q)×p‖`, which is orthogonal to `p` and lies in
/// the plane spanned by `p` and `q`.
pub fn unit_tangent(p: &SpherePoint, q: &SpherePoint) -> Result<Vec3> {
    check_same_shell(p, q)?;
    tangent_towards(p.position, q.position).ok_or(GeometryError::Degenerate("coincident or antipodal points"))
}

/// Local (north, east) frame at `p`.
///
/// Returns `(θ̂, φ̂)` where `θ̂` points north along the meridian and `φ̂` points
/// east along the parallel. Together with the outward radial `p̂` the frame
/// satisfies `θ̂ × φ̂ = −p̂`.
pub fn lat_lon_unit_vectors(p: &SpherePoint) -> Result<(Vec3, Vec3)> {
    lat_lon_basis(p.position).ok_or(GeometryError::Pole)
}

#[inline]
pub(crate) fn lat_lon_basis(p: Vec3) -> Option<(Vec3, Vec3)> {
    let Vec3 { x, y, z } = p;
    let horiz_sq = x * x + y * y;
    let rho = p.norm();
    if horiz_sq <= (1e-12 * rho) * (1e-12 * rho) {
        return None;
    }
    let horiz = horiz_sq.sqrt();
    let phi = Vec3::new(-y / horiz, x / horiz, 0.0);
    let theta = Vec3::new(-x * z / (rho * horiz), -y * z / (rho * horiz), horiz_sq / (rho * horiz));
    Some((theta, phi))
}

/// Picks the candidate whose link from `s` makes an angle closest to `beta`
/// with the reference link `s → s_star`.
///
/// Only candidates on the clockwise side are considered, i.e. those with
/// `((s − s′) × (s − s*)) · s > 0`. Ties resolve to the smaller index.
pub fn angular_select(s: Vec3, s_star: Vec3, beta: f64, candidates: &[Vec3]) -> Result<usize> {
    angular_ranking(s, s_star, beta, candidates).first().map(|&(i, _)| i).ok_or(GeometryError::NoAngularNeighbor)
}

/// All orientation-admissible candidates, best first, with their score
/// `|cos∠(s−s′, s−s*) − cos β|`. Stable for equal scores.
pub fn angular_ranking(s: Vec3, s_star: Vec3, beta: f64, candidates: &[Vec3]) -> Vec<(usize, f64)> {
    let reference = s - s_star;
    let ref_norm = reference.norm();
    let cos_beta = beta.cos();
    let mut ranked: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let link = s - c;
            let link_norm = link.norm();
            if link_norm == 0.0 || ref_norm == 0.0 {
                return None;
            }
            if link.cross(reference).dot(s) <= 0.0 {
                return None;
            }
            let cos = link.dot(reference) / (link_norm * ref_norm);
            Some((i, (cos - cos_beta).abs()))
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Closest point to `p` on the great circle through `u` and `v`.
pub fn project_to_geodesic(p: &SpherePoint, u: &SpherePoint, v: &SpherePoint) -> Result<SpherePoint> {
    let normal = u
        .position
        .cross(v.position)
        .normalized()
        .map_err(|_| GeometryError::Degenerate("u and v do not define a great circle"))?;
    let in_plane = p.position.reject_from(normal);
    let len = in_plane.norm();
    if len <= 1e-12 * p.radius {
        return Err(GeometryError::Degenerate("point is a pole of the great circle"));
    }
    Ok(SpherePoint { position: in_plane * (p.radius / len), radius: p.radius })
}

/// Radially lifts a ground position of radius `earth_radius` onto the shell of
/// radius `shell_radius`.
pub fn scale_to_shell(ground: Vec3, earth_radius: f64, shell_radius: f64) -> Result<SpherePoint> {
    let norm = ground.norm();
    if norm == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    if (norm - earth_radius).abs() > SHELL_TOLERANCE * earth_radius {
        return Err(GeometryError::NotOnShell { norm, radius: earth_radius });
    }
    Ok(SpherePoint { position: ground * (shell_radius / earth_radius), radius: shell_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const RHO: f64 = 6_921_000.0;

    fn random_point(rng: &mut ChaCha8Rng, radius: f64) -> SpherePoint {
        let z: f64 = rng.random_range(-1.0..1.0);
        let lon: f64 = rng.random_range(-PI..PI);
        let r = (1.0 - z * z).sqrt();
        SpherePoint::new(Vec3::new(r * lon.cos(), r * lon.sin(), z) * radius, radius).unwrap()
    }

    fn sp(x: f64, y: f64, z: f64) -> SpherePoint {
        SpherePoint::from_position(Vec3::new(x, y, z)).unwrap()
    }

    #[test]
    fn geodesic_examples() {
        let p = sp(RHO, 0.0, 0.0);
        assert_eq!(geodesic_distance(&p, &p).unwrap(), 0.0);
        let anti = sp(-RHO, 0.0, 0.0);
        assert_relative_eq!(geodesic_distance(&p, &anti).unwrap(), PI * RHO, max_relative = 1e-12);
        let q = sp(0.0, RHO, 0.0);
        let d = geodesic_distance(&p, &q).unwrap();
        assert_relative_eq!(d, PI / 2.0 * RHO, max_relative = 1e-12);
        assert_relative_eq!(d, haversine(0.0, 0.0, 0.0, PI / 2.0, RHO), max_relative = 1e-12);
    }

    fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64, r: f64) -> f64 {
        let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
        2.0 * r * h.sqrt().asin()
    }

    #[test]
    fn geodesic_matches_haversine() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let (la1, lo1, la2, lo2) = (
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.1..3.1),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.1..3.1),
            );
            let p = SpherePoint::from_lat_lon_deg(f64::to_degrees(la1), f64::to_degrees(lo1), RHO);
            let q = SpherePoint::from_lat_lon_deg(f64::to_degrees(la2), f64::to_degrees(lo2), RHO);
            let d = geodesic_distance(&p, &q).unwrap();
            assert_relative_eq!(d, haversine(la1, lo1, la2, lo2, RHO), epsilon = 1e-3, max_relative = 1e-9);
        }
    }

    #[test]
    fn geodesic_rejects_radius_mismatch() {
        let p = sp(RHO, 0.0, 0.0);
        let q = sp(0.0, RHO * 1.01, 0.0);
        assert!(matches!(geodesic_distance(&p, &q), Err(GeometryError::RadiusMismatch(..))));
    }

    #[test]
    fn tangent_quarter_circle() {
        let p = sp(RHO, 0.0, 0.0);
        let q = sp(0.0, RHO, 0.0);
        let t = unit_tangent(&p, &q).unwrap();
        assert!(t.dot(p.unit()).abs() < 1e-12);
        assert!(t.z.abs() < 1e-12);
        assert!(t.y > 0.0);
        assert_relative_eq!(t.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_is_asymmetric() {
        let p = sp(RHO, 0.0, 0.0);
        let q = sp(0.0, RHO, 0.0);
        let tp = unit_tangent(&p, &q).unwrap();
        let tq = unit_tangent(&q, &p).unwrap();
        // At q the tangent towards p is +x, which is not −tp = −y.
        assert_relative_eq!(tq.x, 1.0, epsilon = 1e-12);
        assert!((tq + tp).norm() > 1.0);
    }

    #[test]
    fn tangent_degenerate_inputs() {
        let p = sp(RHO, 0.0, 0.0);
        assert!(unit_tangent(&p, &p).is_err());
        assert!(unit_tangent(&p, &sp(-RHO, 0.0, 0.0)).is_err());
    }

    #[test]
    fn tangent_orthogonality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_point(&mut rng, RHO);
            let q = random_point(&mut rng, RHO);
            let t = unit_tangent(&p, &q).unwrap();
            assert!(t.dot(p.unit()).abs() < 1e-9);
            assert!(t.is_unit());
            // Moving a little along t brings p closer to q.
            let step = SpherePoint::from_position((p.position() + t * 1000.0).normalized().unwrap() * RHO).unwrap();
            assert!(geodesic_distance(&step, &q).unwrap() < geodesic_distance(&p, &q).unwrap());
        }
    }

    #[test]
    fn lat_lon_equator_examples() {
        let (theta, phi) = lat_lon_unit_vectors(&sp(RHO, 0.0, 0.0)).unwrap();
        assert_relative_eq!(phi.y, 1.0);
        assert_relative_eq!(theta.z, 1.0);
        let (theta, phi) = lat_lon_unit_vectors(&sp(0.0, RHO, 0.0)).unwrap();
        assert_relative_eq!(phi.x, -1.0);
        assert_relative_eq!(theta.z, 1.0);
    }

    #[test]
    fn lat_lon_pole_rejected() {
        assert_eq!(lat_lon_unit_vectors(&sp(0.0, 0.0, RHO)), Err(GeometryError::Pole));
    }

    #[test]
    fn lat_lon_frame_is_orthonormal_and_left_handed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = random_point(&mut rng, RHO);
            let (theta, phi) = lat_lon_unit_vectors(&p).unwrap();
            let n = p.unit();
            assert!(theta.is_unit() && phi.is_unit());
            assert!(theta.dot(phi).abs() < 1e-9);
            assert!(theta.dot(n).abs() < 1e-9);
            assert!(phi.dot(n).abs() < 1e-9);
            assert!((theta.cross(phi) + n).norm() < 1e-9);
        }
    }

    #[test]
    fn angular_select_square_neighbourhood() {
        let s = Vec3::new(RHO, 0.0, 0.0);
        let d = 1_000_000.0;
        let star = s + Vec3::new(0.0, d, 0.0);
        let candidates = [star, s + Vec3::new(0.0, -d, 0.0), s + Vec3::new(0.0, 0.0, d), s + Vec3::new(0.0, 0.0, -d)];
        // Hand evaluation: only s + (0,0,−d) has a positive orientation sign,
        // and it is exactly perpendicular to the reference link.
        assert_eq!(angular_select(s, star, PI / 2.0, &candidates).unwrap(), 3);
    }

    #[test]
    fn angular_select_single_and_empty() {
        let s = Vec3::new(RHO, 0.0, 0.0);
        let star = s + Vec3::new(0.0, 1e6, 0.0);
        let good = s + Vec3::new(0.0, 0.0, -1e6);
        assert_eq!(angular_select(s, star, PI / 2.0, &[good]).unwrap(), 0);
        let bad = s + Vec3::new(0.0, 0.0, 1e6);
        assert_eq!(angular_select(s, star, PI / 2.0, &[bad, star]), Err(GeometryError::NoAngularNeighbor));
    }

    #[test]
    fn angular_select_ties_prefer_lower_index() {
        let s = Vec3::new(RHO, 0.0, 0.0);
        let star = s + Vec3::new(0.0, 1e6, 0.0);
        let c = s + Vec3::new(0.0, 0.0, -1e6);
        assert_eq!(angular_select(s, star, PI / 2.0, &[c, c, c]).unwrap(), 0);
    }

    #[test]
    fn projection_examples() {
        let u = sp(RHO, 0.0, 0.0);
        let v = sp(0.0, RHO, 0.0);
        let p = sp(0.0, 0.6 * RHO, 0.8 * RHO);
        let q = project_to_geodesic(&p, &u, &v).unwrap();
        assert!((q.position() - Vec3::new(0.0, RHO, 0.0)).norm() < 1e-6);
        let on = sp(RHO / 2f64.sqrt(), RHO / 2f64.sqrt(), 0.0);
        let q = project_to_geodesic(&on, &u, &v).unwrap();
        assert!((q.position() - on.position()).norm() < 1e-6);
        assert!(project_to_geodesic(&sp(0.0, 0.0, RHO), &u, &v).is_err());
    }

    #[test]
    fn scale_to_shell_examples() {
        let re = 6_371_000.0;
        let g = Vec3::new(re, 0.0, 0.0);
        let s = scale_to_shell(g, re, RHO).unwrap();
        assert_relative_eq!(s.position().x, 6_921_000.0, epsilon = 1e-6);
        assert_eq!(scale_to_shell(g, re, re).unwrap().position(), g);
        assert_eq!(scale_to_shell(Vec3::ZERO, re, RHO), Err(GeometryError::ZeroVector));
    }

    #[test]
    fn lat_lon_round_trip() {
        let p = SpherePoint::from_lat_lon_deg(35.0, -120.0, RHO);
        assert_relative_eq!(p.latitude().to_degrees(), 35.0, epsilon = 1e-9);
        assert_relative_eq!(p.longitude().to_degrees(), -120.0, epsilon = 1e-9);
    }
}
