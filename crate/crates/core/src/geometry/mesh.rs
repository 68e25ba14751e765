use std::fmt::Write as _;
use std::path::Path;

use super::{check_finite, Point3};
use crate::error::{Error, Result};

/// Object mesh in its canonical frame. Only vertices are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMesh {
    pub mesh_id: String,
    pub vertices: Vec<Point3>,
}

impl ObjectMesh {
    pub fn new(mesh_id: impl Into<String>, vertices: Vec<Point3>) -> Result<Self> {
        let mesh_id = mesh_id.into();
        if vertices.is_empty() {
            return Err(Error::Validation(format!("mesh '{mesh_id}' has no vertices")));
        }
        check_finite(&vertices, &format!("mesh '{mesh_id}'"))?;
        Ok(Self { mesh_id, vertices })
    }

    /// Axis-aligned extents `(min, max)` of the vertices.
    pub fn extents(&self) -> (Point3, Point3) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Point3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z));
            hi = Point3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z));
        }
        (lo, hi)
    }
}

/// Parses the `v x y z` lines of an OBJ file; every other line is skipped.
pub fn parse_obj(mesh_id: &str, text: &str, source: &Path) -> Result<ObjectMesh> {
    let mut vertices = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("v") {
            continue;
        }
        let coords: Vec<&str> = tokens.collect();
        // OBJ allows an optional w component
        if coords.len() != 3 && coords.len() != 4 {
            return Err(Error::parse(source, lineno + 1, "vertex line needs 3 coordinates"));
        }
        let mut xyz = [0.0; 3];
        for (slot, tok) in xyz.iter_mut().zip(&coords) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(source, lineno + 1, format!("bad coordinate '{tok}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(source, lineno + 1, "non-finite coordinate"));
            }
            *slot = v;
        }
        vertices.push(Point3::from(xyz));
    }
    if vertices.is_empty() {
        return Err(Error::parse(source, 0, format!("mesh '{mesh_id}' has no vertex lines")));
    }
    Ok(ObjectMesh {
        mesh_id: mesh_id.to_string(),
        vertices,
    })
}

/// Canonical text form: one `v x y z` line per vertex.
pub fn write_obj(mesh: &ObjectMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 32);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    out
}
