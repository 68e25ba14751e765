use super::{check_finite, Point3};
use crate::error::{Error, Result};

/// Implicit balanced kd-tree over a private copy of the vertices.
///
/// The point at the middle of every sub-slice is that subtree's splitting
/// node; everything left of it is `<=` on the split axis, everything right
/// is `>=`.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    axes: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(vertices: &[Point3]) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Validation("cannot index an empty vertex list".into()));
        }
        check_finite(vertices, "mesh vertices")?;
        let mut points = vertices.to_vec();
        let mut axes = vec![0u8; points.len()];
        build_recursive(&mut points, &mut axes, 0);
        Ok(Self { points, axes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact Euclidean distance to the nearest vertex.
    pub fn nearest_distance(&self, query: Point3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), query, &mut best);
        best.sqrt()
    }

    fn search(&self, lo: usize, hi: usize, q: Point3, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let node = self.points[mid];
        let d2 = q.distance_squared(node);
        if d2 < *best {
            *best = d2;
        }
        let axis = self.axes[mid] as usize;
        let diff = q.axis(axis) - node.axis(axis);
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff <= *best {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_recursive(points: &mut [Point3], axes: &mut [u8], depth: usize) {
    if points.is_empty() {
        return;
    }
    let axis = widest_axis(points).unwrap_or(depth % 3);
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a.axis(axis).total_cmp(&b.axis(axis)));
    axes[mid] = axis as u8;
    let (left, rest) = points.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_recursive(left, left_axes, depth + 1);
    build_recursive(&mut rest[1..], &mut rest_axes[1..], depth + 1);
}

fn widest_axis(points: &[Point3]) -> Option<usize> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p.axis(k));
            hi[k] = hi[k].max(p.axis(k));
        }
    }
    (0..3)
        .map(|k| (k, hi[k] - lo[k]))
        .filter(|&(_, w)| w > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}
