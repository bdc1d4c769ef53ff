//! Joint-angle pose sampling and a PCA pose latent space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use super::character::BONE_COUNT;
use super::lbs::PoseSample;
use crate::error::{check_dims, Error, Result};
use crate::mesh::Vec3;

/// Dimension of the pose latent.
pub const POSE_DIM: usize = 32;

/// Largest rotation angle of any joint.
pub const MAX_JOINT_ANGLE: f64 = 1.2;

/// Per-bone `[lo, hi]` ranges of the local rotation-vector components. `None` marks a
/// locked axis.
type Limits = [Option<(f64, f64)>; 3];

const fn sym(a: f64) -> Option<(f64, f64)> {
    Some((-a, a))
}

#[rustfmt::skip]
const JOINT_LIMITS: [Limits; BONE_COUNT] = [
    [None, None, None],                                  // pelvis (global orientation removed)
    [sym(0.4), None, sym(0.3)],                          // abdomen
    [sym(0.4), sym(0.5), sym(0.3)],                      // chest
    [sym(0.6), sym(0.8), sym(0.4)],                      // head
    [sym(1.0), sym(1.2), sym(1.2)],                      // l upper arm
    [None, Some((-1.2, 0.0)), None],                     // l forearm
    [None, sym(0.6), sym(0.6)],                          // l hand
    [sym(1.0), sym(1.2), sym(1.2)],                      // r upper arm
    [None, Some((0.0, 1.2)), None],                      // r forearm
    [None, sym(0.6), sym(0.6)],                          // r hand
    [Some((-1.2, 0.6)), sym(0.5), Some((-0.2, 0.7))],    // l thigh
    [Some((0.0, 1.2)), None, None],                      // l shin
    [sym(0.5), None, None],                              // l foot
    [Some((-1.2, 0.6)), sym(0.5), Some((-0.7, 0.2))],    // r thigh
    [Some((0.0, 1.2)), None, None],                      // r shin
    [sym(0.5), None, None],                              // r foot
];

/// Number of free rotation components of the synthetic rig.
pub fn degrees_of_freedom() -> usize {
    JOINT_LIMITS.iter().flatten().filter(|l| l.is_some()).count()
}

/// Independent uniform angles per free axis, each joint's total angle clamped to
/// [`MAX_JOINT_ANGLE`].
pub fn sample_pose(rng: &mut impl Rng) -> PoseSample {
    let rotations = JOINT_LIMITS
        .iter()
        .map(|limits| {
            let mut r = Vec3::zeros();
            for (k, l) in limits.iter().enumerate() {
                if let Some((lo, hi)) = *l {
                    r[k] = rng.random_range(lo..=hi);
                }
            }
            let angle = r.norm();
            if angle > MAX_JOINT_ANGLE {
                r *= MAX_JOINT_ANGLE / angle;
            }
            r
        })
        .collect();
    PoseSample { rotations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSpace {
    pub mean: Vec<f64>,
    /// `basis[k]` is the k-th principal direction (unit length).
    pub basis: Vec<Vec<f64>>,
    /// Standard deviation along each retained direction.
    pub component_scales: Vec<f64>,
    /// Every eigenvalue of the covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Number of retained directions with non-negligible variance.
    pub effective_rank: usize,
}

/// PCA of flattened rotation vectors with `1/n` covariance.
pub fn fit_pose_space(poses: &[PoseSample], dim: usize) -> Result<PoseSpace> {
    if poses.len() < dim + 1 {
        return Err(Error::Invalid(format!(
            "need at least {} poses to fit a {dim}-dimensional pose space, got {}",
            dim + 1,
            poses.len()
        )));
    }
    let flat: Vec<Vec<f64>> = poses.iter().map(PoseSample::flatten).collect();
    let width = flat[0].len();
    if dim > width {
        return Err(Error::Invalid(format!("pose space dimension {dim} exceeds {width}")));
    }
    for f in &flat {
        check_dims("pose vector", width, f.len())?;
    }
    let n = flat.len() as f64;
    let mut mean = vec![0.0; width];
    for f in &flat {
        mean.iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(width, width);
    for f in &flat {
        let c = DVector::from_iterator(width, f.iter().zip(&mean).map(|(x, m)| x - m));
        cov.ger(1.0 / n, &c, &c, 1.0);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues[0];
    let rank_total = eigenvalues.iter().filter(|&&e| e > 1e-12 * top.max(1e-300)).count();
    let effective_rank = rank_total.min(dim);
    if effective_rank < dim {
        log::warn!("pose space: only {effective_rank} of {dim} components carry variance");
    }

    let basis: Vec<Vec<f64>> = order[..dim]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().cloned().collect();
            // sign convention: largest-magnitude entry positive
            let pivot = v
                .iter()
                .cloned()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PoseSpace {
        mean,
        component_scales: eigenvalues[..dim].iter().map(|e| e.sqrt()).collect(),
        basis,
        eigenvalues,
        effective_rank,
    })
}

impl PoseSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn encode(&self, pose: &PoseSample) -> Result<Vec<f64>> {
        let f = pose.flatten();
        check_dims("pose vector", self.width(), f.len())?;
        Ok(self
            .basis
            .iter()
            .map(|b| b.iter().zip(&f).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect())
    }

    pub fn decode(&self, code: &[f64]) -> Result<PoseSample> {
        check_dims("pose code", self.dim(), code.len())?;
        let mut f = self.mean.clone();
        for (b, c) in self.basis.iter().zip(code) {
            f.iter_mut().zip(b).for_each(|(x, b)| *x += c * b);
        }
        PoseSample::from_flat(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poses(n: usize, seed: u64) -> Vec<PoseSample> {
        let mut rng = crate::seed::rng(seed);
        (0..n).map(|_| sample_pose(&mut rng)).collect()
    }

    #[test]
    fn sampled_poses_respect_limits() {
        for p in poses(500, 1) {
            assert_eq!(p.rotations[0], Vec3::zeros());
            assert!(p.rotations.iter().all(|r| r.norm() <= MAX_JOINT_ANGLE + 1e-12));
        }
        assert_eq!(degrees_of_freedom(), 30);
    }

    #[test]
    fn basis_is_orthonormal() {
        let space = fit_pose_space(&poses(400, 2), POSE_DIM).unwrap();
        for i in 0..POSE_DIM {
            for j in 0..POSE_DIM {
                let d: f64 = space.basis[i].iter().zip(&space.basis[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-9);
            }
        }
        assert_eq!(space.effective_rank, 30);
    }

    #[test]
    fn mean_pose_encodes_to_zero() {
        let space = fit_pose_space(&poses(200, 3), POSE_DIM).unwrap();
        let mean = PoseSample::from_flat(&space.mean).unwrap();
        assert!(space.encode(&mean).unwrap().iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn reconstruction_error_is_the_discarded_variance() {
        let set = poses(300, 4);
        let dim = 12;
        let space = fit_pose_space(&set, dim).unwrap();
        let mse: f64 = set
            .iter()
            .map(|p| {
                let r = space.decode(&space.encode(p).unwrap()).unwrap().flatten();
                p.flatten().iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / set.len() as f64;
        let tail: f64 = space.eigenvalues[dim..].iter().sum();
        assert!((mse - tail).abs() < 1e-6, "{mse} vs {tail}");
    }

    #[test]
    fn too_few_poses() {
        assert!(fit_pose_space(&poses(10, 5), POSE_DIM).is_err());
    }
}
