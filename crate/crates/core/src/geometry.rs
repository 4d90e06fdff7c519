//! Cuboid rooms, microphone arrays and image-source enumeration.
//!
//! Coordinates are in meters with the origin at one room vertex and the axes
//! aligned with the walls, so the room occupies `[0, Lx] × [0, Ly] × [0, Lz]`.
//! An image source is indexed by an integer vector `q` and a sign vector `ε`
//! and sits at `ε ⊙ src + 2 q ⊙ dims`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Radius of the em32 spherical array, in meters.
pub const EM32_RADIUS: f64 = 0.042;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn hadamard(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x * other.x, self.y * other.y, self.z * other.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn rotate(self, rotation: &Matrix3<f64>) -> Vec3 {
        let v = rotation * nalgebra::Vector3::new(self.x, self.y, self.z);
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.z)
    }
}

/// A cuboid room with one absorption coefficient per wall.
///
/// Wall order: `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: Vec3,
    pub absorption: [f64; 6],
}

impl Room {
    pub fn new(dims: Vec3, absorption: [f64; 6]) -> Result<Self> {
        if !(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0) || !dims.is_finite() {
            return Err(Error::invalid(format!("room dimensions must be positive, got {dims}")));
        }
        if let Some(a) = absorption.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(Error::invalid(format!("absorption {a} outside [0, 1)")));
        }
        Ok(Room { dims, absorption })
    }

    /// Pressure reflection coefficients `sqrt(1 - α)`, in wall order.
    pub fn reflection_coefficients(&self) -> [f64; 6] {
        self.absorption.map(|a| (1.0 - a).sqrt())
    }

    pub fn contains_strictly(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }

    /// Smallest distance from `p` to any of the six wall planes.
    pub fn wall_clearance(&self, p: Vec3) -> f64 {
        (0..3).map(|i| p[i].min(self.dims[i] - p[i])).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    pub positions: Vec<Vec3>,
    pub label: String,
}

impl MicArray {
    pub fn new(positions: Vec<Vec3>, label: impl Into<String>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("microphone array needs at least one position"));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite microphone position {p}")));
        }
        for (i, a) in positions.iter().enumerate() {
            if positions[..i].iter().any(|b| b == a) {
                return Err(Error::invalid(format!("duplicate microphone position {a}")));
            }
        }
        Ok(MicArray { positions, label: label.into() })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn center(&self) -> Vec3 {
        let sum = self.positions.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        sum * (1.0 / self.positions.len() as f64)
    }

    /// Distance from `r` to the closest microphone, with its index.
    pub fn nearest(&self, r: Vec3) -> (usize, f64) {
        self.positions
            .iter()
            .enumerate()
            .map(|(i, &m)| (i, m.distance(r)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }
}

/// Capsule directions of the em32 Eigenmike as `(colatitude, azimuth)` in
/// degrees, from the manufacturer's published capsule table (rounded to whole
/// degrees by the manufacturer).
pub const EM32_CAPSULES_DEG: [(f64, f64); 32] = [
    (69.0, 0.0),
    (90.0, 32.0),
    (111.0, 0.0),
    (90.0, 328.0),
    (32.0, 0.0),
    (55.0, 45.0),
    (90.0, 69.0),
    (125.0, 45.0),
    (148.0, 0.0),
    (125.0, 315.0),
    (90.0, 291.0),
    (55.0, 315.0),
    (21.0, 91.0),
    (58.0, 90.0),
    (121.0, 90.0),
    (159.0, 89.0),
    (69.0, 180.0),
    (90.0, 212.0),
    (111.0, 180.0),
    (90.0, 148.0),
    (32.0, 180.0),
    (55.0, 225.0),
    (90.0, 249.0),
    (125.0, 225.0),
    (148.0, 180.0),
    (125.0, 135.0),
    (90.0, 111.0),
    (55.0, 135.0),
    (21.0, 269.0),
    (58.0, 270.0),
    (122.0, 270.0),
    (159.0, 271.0),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayLayout {
    /// em32 capsule table.
    #[default]
    Em32,
    /// 32-point Fibonacci sphere, for when the capsule table is not wanted.
    Fibonacci32,
}

fn check_rotation(rotation: &Matrix3<f64>) -> Result<()> {
    let defect = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    if !(defect <= 1e-10) {
        return Err(Error::invalid(format!(
            "rotation is not orthogonal (|RᵀR − I|∞ = {defect:.3e})"
        )));
    }
    Ok(())
}

/// Builds a 32-microphone spherical array around `center`.
pub fn make_spherical_array(
    layout: ArrayLayout,
    center: Vec3,
    radius: f64,
    rotation: &Matrix3<f64>,
) -> Result<MicArray> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("array radius must be positive, got {radius}")));
    }
    check_rotation(rotation)?;
    let directions: Vec<Vec3> = match layout {
        ArrayLayout::Em32 => EM32_CAPSULES_DEG
            .iter()
            .map(|&(theta, phi)| {
                let (t, p) = (theta.to_radians(), phi.to_radians());
                Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
            })
            .collect(),
        ArrayLayout::Fibonacci32 => fibonacci_sphere(32),
    };
    let positions = directions
        .into_iter()
        .map(|d| center + d.rotate(rotation) * radius)
        .collect();
    let label = match layout {
        ArrayLayout::Em32 => format!("em32 r={radius}"),
        ArrayLayout::Fibonacci32 => format!("fibonacci32 r={radius}"),
    };
    MicArray::new(positions, label)
}

/// em32 layout with the given radius and rotation.
pub fn make_em32_array(center: Vec3, radius: f64, rotation: &Matrix3<f64>) -> Result<MicArray> {
    make_spherical_array(ArrayLayout::Em32, center, radius, rotation)
}

/// `count` unit vectors on a Fibonacci (golden-angle) lattice.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSource {
    pub q: [i32; 3],
    pub eps: [i8; 3],
    pub position: Vec3,
    pub amplitude: f64,
    pub order: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSourceSet {
    pub sources: Vec<ImageSource>,
    pub room: Room,
    pub src: Vec3,
    pub max_order: u32,
}

impl ImageSourceSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.sources.iter().map(|s| s.position)
    }
}

/// Number of reflections along one axis.
pub fn axis_order(q: i32, eps: i8) -> u32 {
    if eps > 0 {
        (2 * q).unsigned_abs()
    } else {
        (2 * q - 1).unsigned_abs()
    }
}

/// Hits on the `(low, high)` walls of one axis for the image `(q, eps)`.
///
/// A `+1` image bounces `|q|` times off each wall. A `-1` image with `q ≥ 1`
/// ends on the high wall, one with `q ≤ 0` on the low wall.
pub fn axis_wall_hits(q: i32, eps: i8) -> (u32, u32) {
    if eps > 0 {
        (q.unsigned_abs(), q.unsigned_abs())
    } else if q >= 1 {
        (q as u32 - 1, q as u32)
    } else {
        ((1 - q) as u32, (-q) as u32)
    }
}

/// All image sources of reflection order `≤ max_order`, ordered by order and
/// then lexicographically by `(q, ε)`.
pub fn enumerate_image_sources(room: &Room, src: Vec3, max_order: u32) -> Result<ImageSourceSet> {
    if !room.contains_strictly(src) {
        return Err(Error::invalid(format!("source {src} is not strictly inside the room")));
    }
    let refl = room.reflection_coefficients();
    let bound = (max_order / 2 + 1) as i32;
    let mut sources = Vec::new();
    for qx in -bound..=bound {
        for qy in -bound..=bound {
            for qz in -bound..=bound {
                let q = [qx, qy, qz];
                for ex in [-1i8, 1] {
                    for ey in [-1i8, 1] {
                        for ez in [-1i8, 1] {
                            let eps = [ex, ey, ez];
                            let order: u32 = (0..3).map(|i| axis_order(q[i], eps[i])).sum();
                            if order > max_order {
                                continue;
                            }
                            let mut amplitude = 1.0;
                            let mut pos = [0.0; 3];
                            for i in 0..3 {
                                let (lo, hi) = axis_wall_hits(q[i], eps[i]);
                                amplitude *= refl[2 * i].powi(lo as i32) * refl[2 * i + 1].powi(hi as i32);
                                pos[i] = f64::from(eps[i]) * src[i] + 2.0 * f64::from(q[i]) * room.dims[i];
                            }
                            sources.push(ImageSource {
                                q,
                                eps,
                                position: pos.into(),
                                amplitude,
                                order,
                            });
                        }
                    }
                }
            }
        }
    }
    // loops already visit (q, ε) lexicographically; the sort is stable
    sources.sort_by_key(|s| s.order);
    Ok(ImageSourceSet { sources, room: room.clone(), src, max_order })
}

/// Keeps the sources seen by every microphone within `t_max` and farther than
/// `eps_excl` from all microphones.
pub fn observable_subset(
    set: &ImageSourceSet,
    array: &MicArray,
    t_max: f64,
    c: f64,
    eps_excl: f64,
) -> ImageSourceSet {
    let reach = c * t_max;
    let sources = set
        .sources
        .iter()
        .filter(|s| {
            array.positions.iter().all(|&m| {
                let d = s.position.distance(m);
                d <= reach && d > eps_excl
            })
        })
        .cloned()
        .collect();
    ImageSourceSet { sources, room: set.room.clone(), src: set.src, max_order: set.max_order }
}

/// A room, a true source and a microphone array.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub room: Room,
    pub src: Vec3,
    pub array: MicArray,
    pub rng_seed: u64,
    pub c: f64,
}

/// Minimum distance between the array center and each wall.
pub const MIN_WALL_CLEARANCE: f64 = 0.25;
/// Minimum distance between the source and the array center.
pub const MIN_SOURCE_SEPARATION: f64 = 1.0;

impl Scenario {
    pub fn new(room: Room, src: Vec3, array: MicArray, rng_seed: u64, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("speed of sound must be positive, got {c}")));
        }
        if !room.contains_strictly(src) {
            return Err(Error::invalid(format!("source {src} is not strictly inside the room")));
        }
        let center = array.center();
        if room.wall_clearance(center) < MIN_WALL_CLEARANCE {
            return Err(Error::invalid(format!(
                "array center {center} is closer than {MIN_WALL_CLEARANCE} m to a wall"
            )));
        }
        if src.distance(center) < MIN_SOURCE_SEPARATION {
            return Err(Error::invalid(format!(
                "source is closer than {MIN_SOURCE_SEPARATION} m to the array center"
            )));
        }
        Ok(Scenario { room, src, array, rng_seed, c })
    }
}

/// On-disk scenario document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub dims: [f64; 3],
    pub absorption: [f64; 6],
    pub src: [f64; 3],
    pub mic_positions: Vec<[f64; 3]>,
    pub rng_seed: u64,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            dims: s.room.dims.into(),
            absorption: s.room.absorption,
            src: s.src.into(),
            mic_positions: s.array.positions.iter().map(|&p| p.into()).collect(),
            rng_seed: s.rng_seed,
            c: s.c,
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;
    fn try_from(f: ScenarioFile) -> Result<Self> {
        let room = Room::new(f.dims.into(), f.absorption)?;
        let array = MicArray::new(f.mic_positions.into_iter().map(Vec3::from).collect(), "file")?;
        Scenario::new(room, f.src.into(), array, f.rng_seed, f.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> Room {
        Room::new(Vec3::new(4.0, 5.0, 3.0), [0.1, 0.2, 0.05, 0.3, 0.15, 0.25]).unwrap()
    }

    #[test]
    fn order_zero_is_the_source() {
        let src = Vec3::new(1.0, 2.0, 1.5);
        let set = enumerate_image_sources(&room(), src, 0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.sources[0].position, src);
        assert_eq!(set.sources[0].amplitude, 1.0);
        assert_eq!(set.sources[0].order, 0);
    }

    #[test]
    fn order_one_mirrors_each_wall_once() {
        let r = room();
        let src = Vec3::new(1.0, 2.0, 1.5);
        let set = enumerate_image_sources(&r, src, 1).unwrap();
        assert_eq!(set.len(), 7);
        let refl = r.reflection_coefficients();
        let mut seen = Vec::new();
        for s in &set.sources[1..] {
            assert_eq!(s.order, 1);
            // mirrored axis is the one whose coordinate moved
            let axis = (0..3).find(|&i| s.position[i] != src[i]).unwrap();
            let wall = if s.position[axis] < 0.0 { 2 * axis } else { 2 * axis + 1 };
            let plane = if wall % 2 == 0 { 0.0 } else { r.dims[axis] };
            assert!((s.position[axis] - (2.0 * plane - src[axis])).abs() < 1e-12);
            assert!((s.amplitude - refl[wall]).abs() < 1e-15);
            seen.push(wall);
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_source_on_wall() {
        let err = enumerate_image_sources(&room(), Vec3::new(0.0, 1.0, 1.0), 2).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(enumerate_image_sources(&room(), Vec3::new(5.0, 1.0, 1.0), 2).is_err());
    }

    #[test]
    fn room_validation() {
        assert!(Room::new(Vec3::new(1.0, 0.0, 1.0), [0.0; 6]).is_err());
        assert!(Room::new(Vec3::new(1.0, 1.0, 1.0), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Room::new(Vec3::new(1.0, 1.0, 1.0), [0.0, 0.0, -0.1, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn em32_identity_on_sphere() {
        let arr = make_em32_array(Vec3::ZERO, EM32_RADIUS, &Matrix3::identity()).unwrap();
        assert_eq!(arr.len(), 32);
        for p in &arr.positions {
            assert!((p.norm() - EM32_RADIUS).abs() < 1e-15);
        }
        assert!(arr.center().norm() < 1e-3 * EM32_RADIUS);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let center = Vec3::new(1.0, 2.0, 1.0);
        let a = make_em32_array(center, 0.21, &Matrix3::identity()).unwrap();
        let b = make_em32_array(center, 0.21, &rot).unwrap();
        for i in 0..32 {
            assert!((b.positions[i].distance(center) - 0.21).abs() < 1e-14);
            for j in 0..32 {
                let da = a.positions[i].distance(a.positions[j]);
                let db = b.positions[i].distance(b.positions[j]);
                assert!((da - db).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-6;
        assert!(matches!(
            make_em32_array(Vec3::ZERO, 0.042, &m),
            Err(Error::InvalidInput(_))
        ));
        assert!(make_em32_array(Vec3::ZERO, 0.0, &Matrix3::identity()).is_err());
    }

    #[test]
    fn fibonacci_fallback_is_distinct_and_unit() {
        let arr = make_spherical_array(ArrayLayout::Fibonacci32, Vec3::ZERO, 1.0, &Matrix3::identity())
            .unwrap();
        for p in &arr.positions {
            assert!((p.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scenario_constraints() {
        let r = room();
        let arr = make_em32_array(Vec3::new(2.0, 2.5, 1.5), EM32_RADIUS, &Matrix3::identity()).unwrap();
        assert!(Scenario::new(r.clone(), Vec3::new(1.0, 1.0, 1.0), arr.clone(), 1, 343.0).is_ok());
        // too close to the array
        assert!(Scenario::new(r.clone(), Vec3::new(2.5, 2.5, 1.5), arr.clone(), 1, 343.0).is_err());
        let near_wall = make_em32_array(Vec3::new(0.2, 2.5, 1.5), EM32_RADIUS, &Matrix3::identity()).unwrap();
        assert!(Scenario::new(r, Vec3::new(3.0, 1.0, 1.0), near_wall, 1, 343.0).is_err());
    }

    #[test]
    fn scenario_file_round_trip() {
        let arr = make_em32_array(Vec3::new(2.0, 2.5, 1.5), EM32_RADIUS, &Matrix3::identity()).unwrap();
        let s = Scenario::new(room(), Vec3::new(1.0, 1.0, 1.0), arr, 7, 340.0).unwrap();
        let json = serde_json::to_string(&ScenarioFile::from(&s)).unwrap();
        let back: ScenarioFile = serde_json::from_str(&json).unwrap();
        let s2 = Scenario::try_from(back).unwrap();
        assert_eq!(s.room, s2.room);
        assert_eq!(s.src, s2.src);
        assert_eq!(s.array.positions, s2.array.positions);
        assert_eq!(s2.rng_seed, 7);
        assert_eq!(s2.c, 340.0);
    }
}
