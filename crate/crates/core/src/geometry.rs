//! Triangle meshes, sphere sets and bounding boxes shared by the kinematic
//! and collision layers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::Pose;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("OBJ parse error at line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("triangle {triangle} references vertex {index}, mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, count: usize },
    #[error("mesh is degenerate: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot read mesh {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn include_point(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb { min: self.min.add_scalar(-margin), max: self.max.add_scalar(margin) }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Indexed triangle mesh in meters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange { triangle: t, index, count: vertices.len() });
                }
            }
        }
        Ok(Self { vertices, triangles })
    }

    /// Closed axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let v = |x: f64, y: f64, z: f64| Vector3::new(x, y, z);
        let vertices = vec![
            v(min.x, min.y, min.z),
            v(max.x, min.y, min.z),
            v(max.x, max.y, min.z),
            v(min.x, max.y, min.z),
            v(min.x, min.y, max.z),
            v(max.x, min.y, max.z),
            v(max.x, max.y, max.z),
            v(min.x, max.y, max.z),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        Self { vertices, triangles }
    }

    /// Box of the given full size centered at the origin.
    pub fn centered_box(size: [f64; 3]) -> Self {
        let h = Vector3::new(size[0], size[1], size[2]) * 0.5;
        Self::cuboid(-h, h)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn aabb(&self) -> Aabb {
        let mut bb = Aabb::empty();
        for v in &self.vertices {
            bb.include_point(v);
        }
        bb
    }

    pub fn vertex_centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    pub fn has_area(&self) -> bool {
        (0..self.triangles.len()).any(|t| {
            let [a, b, c] = self.triangle(t);
            (b - a).cross(&(c - a)).norm() > 0.0
        })
    }

    pub fn transformed(&self, pose: &Pose) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Non-uniform scale about the local origin.
    pub fn scaled(&self, scale: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v.component_mul(scale)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn scaled_about(&self, factor: f64, center: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| center + (v - center) * factor).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Concatenates several meshes into one.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a Mesh>) -> Mesh {
        let mut out = Mesh::default();
        for part in parts {
            let offset = out.vertices.len();
            out.vertices.extend_from_slice(&part.vertices);
            out.triangles
                .extend(part.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        }
        out
    }

    /// Parses the ASCII OBJ subset: `v x y z` and triangular `f a b c` lines.
    /// Face tokens may carry `/vt/vn` suffixes; negative indices are relative.
    /// Any other statement is skipped with a warning.
    pub fn from_obj_str(text: &str) -> Result<Mesh, GeometryError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut ignored: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap_or("");
            match keyword {
                "v" => {
                    let coords: Vec<f64> = tokens
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| GeometryError::Obj { line: line_no, message: format!("bad vertex: {e}") })?;
                    if coords.len() != 3 {
                        return Err(GeometryError::Obj {
                            line: line_no,
                            message: "vertex needs 3 coordinates".into(),
                        });
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                "f" => {
                    let idx: Vec<&str> = tokens.collect();
                    if idx.len() != 3 {
                        return Err(GeometryError::Obj {
                            line: line_no,
                            message: format!("only triangular faces are supported, found {} indices", idx.len()),
                        });
                    }
                    let mut tri = [0usize; 3];
                    for (k, tok) in idx.iter().enumerate() {
                        let first = tok.split('/').next().unwrap_or("");
                        let v: i64 = first.parse().map_err(|_| GeometryError::Obj {
                            line: line_no,
                            message: format!("bad face index '{tok}'"),
                        })?;
                        let resolved = if v > 0 {
                            v - 1
                        } else if v < 0 {
                            vertices.len() as i64 + v
                        } else {
                            -1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(GeometryError::Obj {
                                line: line_no,
                                message: format!("face index {v} out of range"),
                            });
                        }
                        tri[k] = resolved as usize;
                    }
                    triangles.push(tri);
                }
                other => {
                    if !ignored.iter().any(|k| k == other) {
                        ignored.push(other.to_string());
                    }
                }
            }
        }
        if !ignored.is_empty() {
            log::warn!("OBJ statements ignored: {}", ignored.join(", "));
        }
        Ok(Mesh { vertices, triangles })
    }

    pub fn load_obj(path: &Path) -> Result<Mesh, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
        Mesh::from_obj_str(&text)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Collision spheres expressed in a link frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SphereSet {
    pub spheres: Vec<Sphere>,
}

impl SphereSet {
    pub fn new(spheres: Vec<Sphere>) -> Result<Self, GeometryError> {
        if let Some(s) = spheres.iter().find(|s| !(s.radius > 0.0) || !s.radius.is_finite()) {
            return Err(GeometryError::InvalidParameter(format!("sphere radius must be positive, got {}", s.radius)));
        }
        Ok(Self { spheres })
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.spheres.is_empty() {
            return Vector3::zeros();
        }
        self.spheres.iter().map(|s| s.center).sum::<Vector3<f64>>() / self.spheres.len() as f64
    }

    pub fn transformed(&self, pose: &Pose) -> SphereSet {
        SphereSet {
            spheres: self
                .spheres
                .iter()
                .map(|s| Sphere { center: pose.transform_point(&s.center), radius: s.radius })
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> SphereSet {
        SphereSet {
            spheres: self
                .spheres
                .iter()
                .map(|s| Sphere { center: s.center * factor, radius: s.radius * factor })
                .collect(),
        }
    }

    /// Smallest-effort enclosing sphere (centroid-centred), used as a broad phase.
    pub fn bounding_sphere(&self) -> Option<Sphere> {
        if self.spheres.is_empty() {
            return None;
        }
        let c = self.centroid();
        let r = self.spheres.iter().map(|s| (s.center - c).norm() + s.radius).fold(0.0, f64::max);
        Some(Sphere { center: c, radius: r })
    }
}
