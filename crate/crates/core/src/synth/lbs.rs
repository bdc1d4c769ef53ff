//! Forward kinematics and linear blend skinning.

use nalgebra::{Matrix3, Rotation3};

use super::character::{Rig, SkinWeights, SkinnedCharacter};
use crate::error::{check_dims, Error, Result};
use crate::mesh::{Mesh, Vec3};

/// Per-bone local rotations as rotation vectors (axis times angle, radians).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub rotations: Vec<Vec3>,
}

impl PoseSample {
    pub fn identity(bones: usize) -> Self {
        Self {
            rotations: vec![Vec3::zeros(); bones],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| [r.x, r.y, r.z]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::Invalid(format!(
                "pose vector length {} is not a multiple of 3",
                values.len()
            )));
        }
        Ok(Self {
            rotations: values
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }
}

/// World transform `x -> rotation * x + translation` of one bone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl BoneTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }
}

/// Composes local rotations about each bone's rest head down the hierarchy.
pub fn forward_kinematics(rig: &Rig, pose: &PoseSample) -> Result<Vec<BoneTransform>> {
    check_dims("pose bones", rig.bone_count(), pose.rotations.len())?;
    if !pose.rotations.iter().all(|r| r.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("pose rotation".into()));
    }
    let mut out: Vec<BoneTransform> = Vec::with_capacity(rig.bone_count());
    for b in 0..rig.bone_count() {
        let local = Rotation3::new(pose.rotations[b]).into_inner();
        let h = rig.rest_head[b];
        let local_t = h - local * h;
        let t = match rig.parent[b] {
            None => BoneTransform {
                rotation: local,
                translation: local_t,
            },
            Some(p) => {
                let parent = out[p];
                BoneTransform {
                    rotation: parent.rotation * local,
                    translation: parent.rotation * local_t + parent.translation,
                }
            }
        };
        out.push(t);
    }
    Ok(out)
}

/// `v + sum_b w_b ((R_b - I) v + t_b)`, which equals the usual weighted blend for
/// normalized weights and is exactly `v` for the rest pose.
pub fn skin_vertex(v: &Vec3, weights: &[f64], transforms: &[BoneTransform]) -> Vec3 {
    let mut offset = Vec3::zeros();
    for (w, t) in weights.iter().zip(transforms) {
        if *w != 0.0 {
            offset += (t.rotation * v - v + t.translation) * *w;
        }
    }
    v + offset
}

pub fn skin_mesh(mesh: &Mesh, weights: &SkinWeights, transforms: &[BoneTransform]) -> Result<Mesh> {
    check_dims("skin weights", mesh.vertex_count(), weights.vertex_count())?;
    check_dims("skin bones", transforms.len(), weights.bones)?;
    let vertices = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| skin_vertex(v, weights.row(i), transforms))
        .collect();
    mesh.with_vertices(vertices)
}

pub fn lbs_deform(character: &SkinnedCharacter, pose: &PoseSample) -> Result<Mesh> {
    let transforms = forward_kinematics(&character.rig, pose)?;
    skin_mesh(&character.mesh, &character.weights, &transforms)
}
