//! Points, rigid transforms, object meshes and contact-map labeling.
//!
//! A hand joint is a *contact* point when its distance to the closest mesh
//! vertex is strictly below `eta_c`, and a *distant* point when that distance
//! is strictly above `eta_d`. Distances are point-to-vertex; mesh faces are
//! never consulted.

mod kdtree;
mod mesh;

pub use kdtree::SpatialIndex;
pub use mesh::{parse_obj, write_obj, ObjectMesh};

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Squared Euclidean distance. Every distance in the crate goes through
    /// this expression so indexed and brute-force answers agree bit-for-bit.
    #[inline]
    pub fn distance_squared(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(self, other: Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub(crate) fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

pub(crate) fn check_finite(points: &[Point3], what: &str) -> Result<()> {
    match points.iter().position(|p| !p.is_finite()) {
        Some(i) => Err(Error::Validation(format!("{what}: point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

/// Tolerance on `|RᵀR − I|` entries accepted by [`RigidTransform::new`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// A homogeneous 4×4 rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct RigidTransform {
    m: [[f64; 4]; 4],
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    /// Validates a row-major homogeneous matrix.
    pub fn new(m: [[f64; 4]; 4]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("transform has non-finite entries".into()));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation(format!(
                "transform bottom row must be (0,0,0,1), got {:?}",
                m[3]
            )));
        }
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expected).abs());
            }
        }
        if worst > ORTHONORMAL_TOLERANCE {
            return Err(Error::Validation(format!(
                "transform rotation block is not orthonormal (max |RᵀR − I| = {worst:e})"
            )));
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det <= 0.0 {
            return Err(Error::Validation(format!("transform rotation has determinant {det}")));
        }
        Ok(Self { m })
    }

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: Point3) -> Result<Self> {
        Self::new([
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    pub fn translation(t: Point3) -> Self {
        let mut m = Self::IDENTITY.m;
        m[0][3] = t.x;
        m[1][3] = t.y;
        m[2][3] = t.z;
        Self { m }
    }

    /// Rotation by `angle` radians about a unit `axis` (Rodrigues).
    pub fn rotation(axis: Point3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::Validation("rotation axis must be non-zero and finite".into()));
        }
        let (x, y, z) = (axis.x / n, axis.y / n, axis.z / n);
        let (s, c) = angle.sin_cos();
        let k = 1.0 - c;
        Self::from_rotation_translation(
            [
                [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
                [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
                [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
            ],
            Point3::ORIGIN,
        )
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn translation_part(&self) -> Point3 {
        Point3::new(self.m[0][3], self.m[1][3], self.m[2][3])
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.m;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }

    /// Applies only the rotation block.
    pub fn rotate(&self, v: Point3) -> Point3 {
        let m = &self.m;
        Point3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        RigidTransform { m }
    }
}

impl TryFrom<[[f64; 4]; 4]> for RigidTransform {
    type Error = Error;
    fn try_from(m: [[f64; 4]; 4]) -> Result<Self> {
        RigidTransform::new(m)
    }
}

impl From<RigidTransform> for [[f64; 4]; 4] {
    fn from(t: RigidTransform) -> Self {
        t.m
    }
}

/// Maps every point through `transform`, preserving order.
pub fn transform_points(transform: &RigidTransform, points: &[Point3]) -> Vec<Point3> {
    points.iter().map(|&p| transform.apply(p)).collect()
}

/// Contact (`eta_c`) and distant (`eta_d`) distance thresholds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct ContactThresholds {
    eta_c: f64,
    eta_d: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    eta_c: f64,
    eta_d: f64,
}

impl TryFrom<RawThresholds> for ContactThresholds {
    type Error = Error;
    fn try_from(raw: RawThresholds) -> Result<Self> {
        ContactThresholds::new(raw.eta_c, raw.eta_d)
    }
}

impl ContactThresholds {
    /// 2 cm contact, 20 cm distant.
    pub const H2O: ContactThresholds = ContactThresholds { eta_c: 0.02, eta_d: 0.20 };
    /// 2 cm contact, 10 cm distant.
    pub const FPHA: ContactThresholds = ContactThresholds { eta_c: 0.02, eta_d: 0.10 };

    pub fn new(eta_c: f64, eta_d: f64) -> Result<Self> {
        if !(eta_c.is_finite() && eta_d.is_finite() && 0.0 < eta_c && eta_c < eta_d) {
            return Err(Error::Validation(format!(
                "thresholds must satisfy 0 < eta_c < eta_d (got eta_c={eta_c}, eta_d={eta_d})"
            )));
        }
        Ok(Self { eta_c, eta_d })
    }

    pub fn eta_c(&self) -> f64 {
        self.eta_c
    }

    pub fn eta_d(&self) -> f64 {
        self.eta_d
    }
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self::H2O
    }
}

/// Per-joint contact and distant bits, joints ordered left hand then right.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContactMap {
    pub contact: Vec<u8>,
    pub distant: Vec<u8>,
}

impl ContactMap {
    pub fn new(contact: Vec<u8>, distant: Vec<u8>) -> Result<Self> {
        if contact.len() != distant.len() {
            return Err(Error::Shape(format!(
                "contact has {} entries but distant has {}",
                contact.len(),
                distant.len()
            )));
        }
        if contact.iter().chain(&distant).any(|&b| b > 1) {
            return Err(Error::Validation("contact-map entries must be 0 or 1".into()));
        }
        if contact.iter().zip(&distant).any(|(&c, &d)| c + d > 1) {
            return Err(Error::Validation("a joint cannot be both contact and distant".into()));
        }
        Ok(Self { contact, distant })
    }

    pub fn joint_count(&self) -> usize {
        self.contact.len()
    }

    /// `[contact | distant]` as 0.0/1.0 values.
    pub fn to_target(&self) -> Vec<f64> {
        self.contact.iter().chain(&self.distant).map(|&b| f64::from(b)).collect()
    }
}

/// Builds an exact nearest-vertex index. Fails on empty or non-finite input.
pub fn build_vertex_index(vertices: &[Point3]) -> Result<SpatialIndex> {
    SpatialIndex::build(vertices)
}

/// Distance from `query` to the closest indexed vertex.
pub fn nearest_vertex_distance(index: &SpatialIndex, query: Point3) -> Result<f64> {
    if !query.is_finite() {
        return Err(Error::Validation("query point has a non-finite coordinate".into()));
    }
    Ok(index.nearest_distance(query))
}

/// Labels each joint against an index built over world-frame mesh vertices.
pub fn label_contact_map(
    joints: &[Point3],
    index: &SpatialIndex,
    thresholds: &ContactThresholds,
    expected_joints: usize,
) -> Result<ContactMap> {
    if joints.len() != expected_joints {
        return Err(Error::Shape(format!(
            "expected {expected_joints} joints, got {}",
            joints.len()
        )));
    }
    check_finite(joints, "joints")?;
    let mut contact = Vec::with_capacity(joints.len());
    let mut distant = Vec::with_capacity(joints.len());
    for &joint in joints {
        let d = index.nearest_distance(joint);
        contact.push(u8::from(d < thresholds.eta_c));
        distant.push(u8::from(d > thresholds.eta_d));
    }
    Ok(ContactMap { contact, distant })
}

/// Number of points produced by [`expand_bbox_21`].
pub const BBOX_POINTS: usize = 21;

/// Box edges as corner pairs differing in one bit, sorted by (min, max).
pub const BBOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (0, 4),
    (1, 3),
    (1, 5),
    (2, 3),
    (2, 6),
    (3, 7),
    (4, 5),
    (4, 6),
    (5, 7),
    (6, 7),
];

/// Corner `i` of an axis-aligned box: bit k of `i` picks min (0) or max (1)
/// along axis k.
pub fn box_corners(min: Point3, max: Point3) -> [Point3; 8] {
    std::array::from_fn(|i| {
        Point3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    })
}

/// Expands 8 corners into `[center, corners 0..7, 12 edge midpoints]`.
pub fn expand_bbox_21(corners: &[Point3]) -> Result<Vec<Point3>> {
    if corners.len() != 8 {
        return Err(Error::Shape(format!("expected 8 bbox corners, got {}", corners.len())));
    }
    let sum = corners.iter().fold(Point3::ORIGIN, |acc, &c| acc + c);
    let mut out = Vec::with_capacity(BBOX_POINTS);
    out.push(sum * (1.0 / 8.0));
    out.extend_from_slice(corners);
    out.extend(BBOX_EDGES.iter().map(|&(a, b)| (corners[a] + corners[b]) * 0.5));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(vertices: &[Point3], q: Point3) -> f64 {
        vertices
            .iter()
            .map(|&v| q.distance_squared(v))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    #[test]
    fn single_vertex_index() {
        let index = build_vertex_index(&[Point3::ORIGIN]).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(nearest_vertex_distance(&index, Point3::new(1.0, 0.0, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn cube_corner_index() {
        let corners = box_corners(Point3::ORIGIN, Point3::new(1.0, 1.0, 1.0));
        let index = build_vertex_index(&corners).unwrap();
        assert_eq!(index.len(), 8);
        for c in corners {
            assert_eq!(index.nearest_distance(c), 0.0);
        }
    }

    #[test]
    fn two_vertex_query() {
        let index =
            build_vertex_index(&[Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)]).unwrap();
        assert_eq!(nearest_vertex_distance(&index, Point3::ORIGIN).unwrap(), 1.0);
    }

    #[test]
    fn index_rejects_bad_input() {
        assert!(matches!(build_vertex_index(&[]), Err(Error::Validation(_))));
        assert!(matches!(
            build_vertex_index(&[Point3::new(f64::NAN, 0.0, 0.0)]),
            Err(Error::Validation(_))
        ));
        let index = build_vertex_index(&[Point3::ORIGIN]).unwrap();
        assert!(nearest_vertex_distance(&index, Point3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn index_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vertices: Vec<Point3> = (0..5000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let copy = vertices.clone();
        let index = build_vertex_index(&vertices).unwrap();
        assert_eq!(vertices, copy);
        for _ in 0..1000 {
            let q = Point3::new(
                rng.random_range(-0.2..1.2),
                rng.random_range(-0.2..1.2),
                rng.random_range(-0.2..1.2),
            );
            let expected = brute_force(&vertices, q);
            assert!((index.nearest_distance(q) - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn transform_examples() {
        let pts = vec![Point3::new(0.3, -1.0, 2.0), Point3::ORIGIN];
        assert_eq!(transform_points(&RigidTransform::IDENTITY, &pts), pts);

        let t = RigidTransform::translation(Point3::new(1.0, 2.0, 3.0));
        assert_eq!(transform_points(&t, &[Point3::ORIGIN]), vec![Point3::new(1.0, 2.0, 3.0)]);

        let rz = RigidTransform::rotation(Point3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2).unwrap();
        let p = rz.apply(Point3::new(1.0, 0.0, 0.0));
        assert!(p.distance(Point3::new(0.0, 1.0, 0.0)) < 1e-9);
    }

    #[test]
    fn transform_validation() {
        let mut m = *RigidTransform::IDENTITY.matrix();
        m[3][0] = 0.5;
        assert!(RigidTransform::new(m).is_err());
        let mut m = *RigidTransform::IDENTITY.matrix();
        m[0][0] = 1.01;
        assert!(RigidTransform::new(m).is_err());
        // reflection
        let mut m = *RigidTransform::IDENTITY.matrix();
        m[2][2] = -1.0;
        assert!(RigidTransform::new(m).is_err());
        let mut m = *RigidTransform::IDENTITY.matrix();
        m[0][0] = 1.0 + 4e-7;
        assert!(RigidTransform::new(m).is_ok());
    }

    #[test]
    fn threshold_labels() {
        let th = ContactThresholds::new(0.02, 0.20).unwrap();
        let index = build_vertex_index(&[Point3::ORIGIN]).unwrap();
        let joints = [
            Point3::new(0.015, 0.0, 0.0),
            Point3::new(0.25, 0.0, 0.0),
            Point3::new(0.0, 0.10, 0.0),
        ];
        let map = label_contact_map(&joints, &index, &th, 3).unwrap();
        assert_eq!(map.contact, vec![1, 0, 0]);
        assert_eq!(map.distant, vec![0, 1, 0]);
        assert!(matches!(label_contact_map(&joints, &index, &th, 42), Err(Error::Shape(_))));
    }

    #[test]
    fn threshold_boundaries_are_strict() {
        let th = ContactThresholds::new(0.25, 0.5).unwrap();
        let index = build_vertex_index(&[Point3::ORIGIN]).unwrap();
        let joints = [Point3::new(0.25, 0.0, 0.0), Point3::new(0.5, 0.0, 0.0)];
        let map = label_contact_map(&joints, &index, &th, 2).unwrap();
        assert_eq!(map.contact, vec![0, 0]);
        assert_eq!(map.distant, vec![0, 0]);
    }

    #[test]
    fn thresholds_validation() {
        assert!(ContactThresholds::new(0.3, 0.2).is_err());
        assert!(ContactThresholds::new(0.0, 0.2).is_err());
        assert!(ContactThresholds::new(0.2, 0.2).is_err());
        assert!(serde_json::from_str::<ContactThresholds>(r#"{"eta_c":0.3,"eta_d":0.2}"#).is_err());
    }

    #[test]
    fn bbox_unit_cube() {
        let corners = box_corners(Point3::ORIGIN, Point3::new(1.0, 1.0, 1.0));
        let pts = expand_bbox_21(&corners).unwrap();
        assert_eq!(pts.len(), 21);
        assert_eq!(pts[0], Point3::new(0.5, 0.5, 0.5));
        assert_eq!(&pts[1..9], &corners[..]);
        for m in &pts[9..] {
            let a = m.to_array();
            assert_eq!(a.iter().filter(|&&v| v == 0.5).count(), 1);
            assert_eq!(a.iter().filter(|&&v| v == 0.0 || v == 1.0).count(), 2);
        }
    }

    #[test]
    fn bbox_degenerate_and_shape() {
        let p = Point3::new(1.0, 1.0, 1.0);
        assert!(expand_bbox_21(&[p; 8]).unwrap().iter().all(|&q| q == p));
        assert!(matches!(expand_bbox_21(&[p; 7]), Err(Error::Shape(_))));
    }

    #[test]
    fn edges_differ_in_one_bit() {
        for (a, b) in BBOX_EDGES {
            assert!(a < b);
            assert_eq!((a ^ b).count_ones(), 1);
        }
        let mut sorted = BBOX_EDGES;
        sorted.sort();
        assert_eq!(sorted, BBOX_EDGES);
    }

    #[test]
    fn contact_map_rejects_overlap() {
        assert!(ContactMap::new(vec![1], vec![1]).is_err());
        assert!(ContactMap::new(vec![1, 0], vec![0]).is_err());
        assert!(ContactMap::new(vec![2], vec![0]).is_err());
    }
}
