//! Triangle meshes: representation, OBJ I/O, height normalization, sampling, occupancy
//! and edge extraction.
//!
//! The vertical axis is `y`. Lengths are in meters; after [`normalize_height`] a mesh is
//! exactly 1 m tall.

mod obj;
mod sample;
mod winding;

use std::collections::BTreeSet;

pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use sample::{sample_queries, sample_surface, QuerySample, SurfacePoint, DEFAULT_QUERY_SIGMA};
pub use winding::{occupancy, WindingIndex};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking that every face index refers to an existing vertex.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((fi, f)) = faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&i| i >= n))
        {
            return Err(Error::Invalid(format!(
                "face {fi} {f:?} references a vertex beyond {n}"
            )));
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("mesh vertex {v:?}")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same faces, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        crate::error::check_dims("with_vertices", self.vertices.len(), vertices.len())?;
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Appends another mesh as a separate component.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// Axis-aligned bounds `(min, max)`. Zero vectors for an empty mesh.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut it = self.vertices.iter();
        let Some(first) = it.next() else {
            return (Vec3::zeros(), Vec3::zeros());
        };
        it.fold((*first, *first), |(lo, hi), v| (lo.inf(v), hi.sup(v)))
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        let sum = self.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v);
        sum / self.vertices.len() as f64
    }

    pub fn vertical_extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        hi.y - lo.y
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Applies `v -> center + scale * (v - center)` to every vertex.
    pub fn scaled_about(&self, center: &Vec3, scale: f64) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| center + (v - center) * scale)
                .collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Scales the mesh uniformly about its centroid so its vertical extent is 1.
///
/// Returns the scaled mesh and the applied scale factor.
pub fn normalize_height(mesh: &Mesh) -> Result<(Mesh, f64)> {
    let extent = mesh.vertical_extent();
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Degenerate(format!(
            "vertical extent {extent} cannot be normalized"
        )));
    }
    let scale = 1.0 / extent;
    Ok((mesh.scaled_about(&mesh.centroid(), scale), scale))
}

/// Unique undirected edges, each stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn edges(mesh: &Mesh) -> EdgeSet {
    let mut set = BTreeSet::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
    }
    EdgeSet {
        edges: set.into_iter().collect(),
    }
}

/// Small closed reference meshes.
pub mod primitives {
    use super::*;

    #[rustfmt::skip]
    /// Closed unit cube `[0,1]^3` with outward-facing triangles.
    pub fn unit_cube() -> Mesh {
        let v = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let faces = vec![
            [0, 2, 1], [1, 2, 3], // z = 0
            [4, 5, 6], [5, 7, 6], // z = 1
            [0, 1, 4], [1, 5, 4], // y = 0
            [2, 6, 3], [3, 6, 7], // y = 1
            [0, 4, 2], [2, 4, 6], // x = 0
            [1, 3, 5], [3, 7, 5], // x = 1
        ];
        Mesh::new(v, faces).unwrap()
    }

    #[rustfmt::skip]
    pub fn icosahedron() -> Mesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let v = [
            (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
            (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
            (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let faces = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        Mesh::new(v, faces).unwrap()
    }

    /// Icosphere of radius 1 obtained by `levels` rounds of midpoint subdivision.
    pub fn icosphere(levels: usize) -> Mesh {
        let mut mesh = icosahedron();
        for _ in 0..levels {
            let mut mids = std::collections::HashMap::new();
            let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
            let mut verts = mesh.vertices.clone();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
                *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            for &[a, b, c] in &mesh.faces {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            mesh = Mesh::new(verts, faces).unwrap();
        }
        mesh
    }
}
