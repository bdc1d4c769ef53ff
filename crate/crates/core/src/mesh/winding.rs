//! Inside/outside classification by generalized winding number.
//!
//! The winding number of a point is the signed solid angle subtended by all triangles
//! divided by 4π. It is 1 inside a closed, outward-oriented surface, 0 outside, and
//! degrades gracefully on surfaces with small holes. A point is labeled inside when the
//! winding number is at least 0.5.
//!
//! Connected components that are closed and consistently oriented contribute exactly
//! zero at points outside their bounding box, so [`WindingIndex`] skips them there.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Mesh, Vec3};

struct Component {
    faces: Vec<usize>,
    closed: bool,
    lo: Vec3,
    hi: Vec3,
}

/// Precomputed per-component data for repeated winding-number queries on one mesh.
pub struct WindingIndex<'a> {
    mesh: &'a Mesh,
    components: Vec<Component>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl<'a> WindingIndex<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let mut degenerate = 0usize;
        let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
        for f in &mesh.faces {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }

        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut components: Vec<Component> = Vec::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            if mesh.face_area(fi) <= 1e-300 {
                degenerate += 1;
                continue;
            }
            let root = find(&mut parent, f[0]);
            let ci = *by_root.entry(root).or_insert_with(|| {
                components.push(Component {
                    faces: Vec::new(),
                    closed: false,
                    lo: Vec3::repeat(f64::INFINITY),
                    hi: Vec3::repeat(f64::NEG_INFINITY),
                });
                components.len() - 1
            });
            let c = &mut components[ci];
            c.faces.push(fi);
            for &v in f {
                c.lo = c.lo.inf(&mesh.vertices[v]);
                c.hi = c.hi.sup(&mesh.vertices[v]);
            }
        }
        if degenerate > 0 {
            log::warn!("winding number: skipped {degenerate} degenerate triangles");
        }

        for c in &mut components {
            let mut directed: HashMap<(usize, usize), i32> = HashMap::new();
            for &fi in &c.faces {
                let f = mesh.faces[fi];
                for k in 0..3 {
                    *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
                }
            }
            c.closed = directed
                .iter()
                .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1));
        }
        Self { mesh, components }
    }

    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for c in &self.components {
            if c.closed {
                let outside = (0..3).any(|k| p[k] < c.lo[k] || p[k] > c.hi[k]);
                if outside {
                    continue;
                }
            }
            for &fi in &c.faces {
                let [a, b, cc] = self.mesh.triangle(fi);
                total += solid_angle(&(a - p), &(b - p), &(cc - p));
            }
        }
        total / (4.0 * PI)
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        self.winding_number(p) >= 0.5
    }
}

/// Signed solid angle of a triangle seen from the origin (Van Oosterom & Strackee).
///
/// A point lying in the plane of the triangle gets 0, including points on the
/// triangle itself.
fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let det = a.dot(&b.cross(c));
    if det.abs() <= 1e-14 * la * lb * lc {
        return 0.0;
    }
    let denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * det.atan2(denom)
}

/// Occupancy labels (`true` = inside) for a batch of points.
pub fn occupancy(mesh: &Mesh, points: &[Vec3]) -> Vec<bool> {
    let index = WindingIndex::new(mesh);
    points.iter().map(|p| index.is_inside(p)).collect()
}
