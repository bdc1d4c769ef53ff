//! Area-uniform surface sampling and labeled query generation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Mesh, Vec3, WindingIndex};
use crate::error::{Error, Result};
use crate::seed;

/// Default perturbation of near-surface queries, as a fraction of a 1 m height.
pub const DEFAULT_QUERY_SIGMA: f64 = 0.05;

/// Relative padding of the uniform sampling cube around the mesh bounds.
const BOX_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
}

impl SurfacePoint {
    /// Index (0..3) of the face corner with the largest barycentric weight.
    pub fn dominant_corner(&self) -> usize {
        let b = self.barycentric;
        if b[0] >= b[1] && b[0] >= b[2] {
            0
        } else if b[1] >= b[2] {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuerySample {
    pub position: Vec3,
    pub occupied: bool,
}

impl QuerySample {
    pub fn target(&self) -> f64 {
        if self.occupied {
            1.0
        } else {
            0.0
        }
    }
}

/// Draws `n` points uniformly by area: faces proportional to area, then a uniform point
/// on the chosen triangle.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<SurfacePoint>> {
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }

    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= target)
            .min(mesh.face_count() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let barycentric = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.triangle(face);
        let position = a * barycentric[0] + b * barycentric[1] + c * barycentric[2];
        out.push(SurfacePoint {
            position,
            face,
            barycentric,
        });
    }
    Ok(out)
}

/// Cube around the mesh bounds used for uniform query sampling: centered on the bounding
/// box, side equal to its largest extent plus a small margin.
pub fn sampling_box(mesh: &Mesh) -> (Vec3, Vec3) {
    let (lo, hi) = mesh.bounds();
    let center = (lo + hi) * 0.5;
    let half = 0.5 * (hi - lo).max() * (1.0 + 2.0 * BOX_MARGIN);
    (center - Vec3::repeat(half), center + Vec3::repeat(half))
}

/// Half of the queries are surface samples perturbed by isotropic Gaussian noise of
/// standard deviation `sigma`, the other half are uniform in [`sampling_box`]. Each
/// query is labeled by winding-number occupancy.
pub fn sample_queries(mesh: &Mesh, n: usize, sigma: f64, seed: u64) -> Result<Vec<QuerySample>> {
    let n_surface = n.div_ceil(2);
    let surface = sample_surface(mesh, n_surface, seed::derive(seed, "surface"))?;
    let mut rng = seed::rng(seed::derive(seed, "queries"));
    let mut positions: Vec<Vec3> = Vec::with_capacity(n);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
        positions.extend(surface.iter().map(|s| {
            s.position
                + Vec3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                )
        }));
    } else {
        positions.extend(surface.iter().map(|s| s.position));
    }
    let (lo, hi) = sampling_box(mesh);
    for _ in n_surface..n {
        positions.push(Vec3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        ));
    }

    let index = WindingIndex::new(mesh);
    Ok(positions
        .into_iter()
        .map(|position| QuerySample {
            position,
            occupied: index.is_inside(&position),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::*;

    #[test]
    fn zero_samples() {
        assert!(sample_surface(&unit_cube(), 0, 1).unwrap().is_empty());
    }

    #[test]
    fn zero_area_is_an_error() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]).unwrap();
        assert!(sample_surface(&m, 3, 1).is_err());
    }

    #[test]
    fn samples_reconstruct_from_barycentrics() {
        let sphere = icosphere(1);
        for s in sample_surface(&sphere, 2000, 9).unwrap() {
            let b = s.barycentric;
            assert!(b.iter().all(|&w| w >= 0.0));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let [p, q, r] = sphere.triangle(s.face);
            let rec = p * b[0] + q * b[1] + r * b[2];
            assert!((rec - s.position).norm() < 1e-9);
        }
    }

    #[test]
    fn single_triangle_samples_are_planar() {
        let tri = Mesh::new(
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.5, 1.0), Vec3::new(0.3, 1.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for s in sample_surface(&tri, 500, 2).unwrap() {
            assert!((s.position.z - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn face_choice_follows_area() {
        // two triangles with areas 1:3
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0), Vec3::new(8.0, 0.0, 0.0), Vec3::new(5.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 40_000;
        let first = sample_surface(&m, n, 17).unwrap().iter().filter(|s| s.face == 0).count();
        // binomial(n, 1/4): mean 10000, sd sqrt(n p (1-p)) = 86.6
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((first as f64 - 10_000.0).abs() < 3.0 * sd, "{first}");
    }

    #[test]
    fn queries_are_deterministic() {
        let cube = unit_cube();
        let a = sample_queries(&cube, 10, 0.05, 4).unwrap();
        let b = sample_queries(&cube, 10, 0.05, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn unperturbed_surface_queries_sit_on_the_half_level() {
        let sphere = icosphere(2);
        let idx = WindingIndex::new(&sphere);
        let q = sample_queries(&sphere, 200, 0.0, 8).unwrap();
        for s in &q[..100] {
            let w = idx.winding_number(&s.position);
            assert!((w - 0.5).abs() < 1e-6, "{w}");
            assert_eq!(s.occupied, w >= 0.5);
        }
    }

    #[test]
    fn uniform_half_estimates_cube_volume() {
        let cube = unit_cube();
        let n = 100_000;
        let q = sample_queries(&cube, n, 0.05, 21).unwrap();
        let uniform = &q[n / 2..];
        let inside = uniform.iter().filter(|s| s.occupied).count() as f64;
        let m = uniform.len() as f64;
        let (lo, hi) = sampling_box(&cube);
        let p = 1.0 / (hi - lo).iter().product::<f64>();
        let sd = (m * p * (1.0 - p)).sqrt();
        assert!((inside - m * p).abs() < 3.0 * sd, "{inside} vs {}", m * p);
    }
}
