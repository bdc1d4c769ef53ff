//! Procedural biped characters built as a union of capsules, with a 16-bone rig,
//! distance-based skinning weights and stylized variants.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::mesh::{Mesh, Vec3};

pub const BONE_COUNT: usize = 16;

pub const PELVIS: usize = 0;
pub const ABDOMEN: usize = 1;
pub const CHEST: usize = 2;
pub const HEAD: usize = 3;
pub const LEFT_UPPER_ARM: usize = 4;
pub const RIGHT_UPPER_ARM: usize = 7;
pub const LEFT_THIGH: usize = 10;
pub const RIGHT_THIGH: usize = 13;

pub const BONE_NAMES: [&str; BONE_COUNT] = [
    "pelvis", "abdomen", "chest", "head",
    "l_upper_arm", "l_forearm", "l_hand",
    "r_upper_arm", "r_forearm", "r_hand",
    "l_thigh", "l_shin", "l_foot",
    "r_thigh", "r_shin", "r_foot",
];

const PARENTS: [Option<usize>; BONE_COUNT] = [
    None, Some(0), Some(1), Some(2),
    Some(2), Some(4), Some(5),
    Some(2), Some(7), Some(8),
    Some(0), Some(10), Some(11),
    Some(0), Some(13), Some(14),
];

/// Falloff sharpness of the skinning weights.
const SKIN_SHARPNESS: f64 = 8.0;
/// Weights below this fraction of a vertex's largest weight are dropped.
const SKIN_CUTOFF: f64 = 1e-3;

const RING_SEGMENTS: usize = 16;
const HEMISPHERE_RINGS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub parent: Vec<Option<usize>>,
    pub rest_head: Vec<Vec3>,
    pub rest_tail: Vec<Vec3>,
}

impl Rig {
    pub fn bone_count(&self) -> usize {
        self.parent.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bone_count();
        check_dims("rig heads", n, self.rest_head.len())?;
        check_dims("rig tails", n, self.rest_tail.len())?;
        if n == 0 || self.parent[0].is_some() {
            return Err(Error::Invalid("bone 0 must be the root".into()));
        }
        for (b, p) in self.parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < b => {}
                _ => return Err(Error::Invalid(format!("bone {b} has invalid parent {p:?}"))),
            }
            if (self.rest_tail[b] - self.rest_head[b]).norm() <= 0.0 {
                return Err(Error::Degenerate(format!("bone {b} has zero length")));
            }
        }
        Ok(())
    }

    fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Rig {
        Rig {
            parent: self.parent.clone(),
            rest_head: self.rest_head.iter().map(&f).collect(),
            rest_tail: self.rest_tail.iter().map(&f).collect(),
        }
    }
}

/// Limb lengths and radii in meters, before height normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub pelvis_width: f64,
    pub pelvis_radius: f64,
    pub abdomen_length: f64,
    pub abdomen_radius: f64,
    pub chest_width: f64,
    pub chest_radius: f64,
    pub neck_length: f64,
    pub head_length: f64,
    pub head_radius: f64,
    pub upper_arm_length: f64,
    pub forearm_length: f64,
    pub hand_length: f64,
    pub arm_radius: f64,
    pub thigh_length: f64,
    pub shin_length: f64,
    pub foot_length: f64,
    pub leg_radius: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            pelvis_width: 0.24,
            pelvis_radius: 0.11,
            abdomen_length: 0.22,
            abdomen_radius: 0.12,
            chest_width: 0.26,
            chest_radius: 0.13,
            neck_length: 0.08,
            head_length: 0.08,
            head_radius: 0.1,
            upper_arm_length: 0.28,
            forearm_length: 0.26,
            hand_length: 0.14,
            arm_radius: 0.045,
            thigh_length: 0.42,
            shin_length: 0.4,
            foot_length: 0.18,
            leg_radius: 0.065,
        }
    }
}

impl BodyParams {
    fn as_array(&self) -> [f64; 17] {
        [
            self.pelvis_width, self.pelvis_radius, self.abdomen_length, self.abdomen_radius,
            self.chest_width, self.chest_radius, self.neck_length, self.head_length,
            self.head_radius, self.upper_arm_length, self.forearm_length, self.hand_length,
            self.arm_radius, self.thigh_length, self.shin_length, self.foot_length,
            self.leg_radius,
        ]
    }

    fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut p = *self;
        for x in [
            &mut p.pelvis_width, &mut p.pelvis_radius, &mut p.abdomen_length, &mut p.abdomen_radius,
            &mut p.chest_width, &mut p.chest_radius, &mut p.neck_length, &mut p.head_length,
            &mut p.head_radius, &mut p.upper_arm_length, &mut p.forearm_length, &mut p.hand_length,
            &mut p.arm_radius, &mut p.thigh_length, &mut p.shin_length, &mut p.foot_length,
            &mut p.leg_radius,
        ] {
            *x = f(*x);
        }
        p
    }

    /// Every default dimension scaled by an independent factor in `[0.85, 1.15]`.
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self::default().map(|x| x * rng.random_range(0.85..1.15))
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::Degenerate(format!("body dimensions must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn center(&self) -> Vec3 {
        (self.a + self.b) * 0.5
    }

    /// Distance from `p` to the capsule's core segment.
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.a + ab * t)).norm()
    }
}

/// Ellipsoid rigidly bound to one bone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accessory {
    pub center: Vec3,
    pub radii: Vec3,
    pub bone: usize,
}

/// Geometric description a character mesh is generated from: one capsule per bone plus
/// accessories.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPlan {
    pub capsules: Vec<Capsule>,
    pub accessories: Vec<Accessory>,
    pub rig: Rig,
}

impl BodyPlan {
    pub fn from_params(p: &BodyParams) -> Result<Self> {
        p.validate()?;
        let foot_y = p.leg_radius;
        let hip_y = foot_y + p.shin_length + p.thigh_length;
        let pelvis_top = hip_y + p.pelvis_radius;
        let chest_base = pelvis_top + p.abdomen_length;
        let chest_y = chest_base + 0.5 * p.chest_radius;
        let neck_y = chest_y + 0.7 * p.chest_radius;
        let shoulder_x = 0.5 * p.chest_width + p.chest_radius * 0.8;
        let hip_x = 0.5 * p.pelvis_width;
        let y = Vec3::y();

        let mut head = vec![Vec3::zeros(); BONE_COUNT];
        let mut tail = vec![Vec3::zeros(); BONE_COUNT];
        let mut capsules = vec![
            Capsule {
                a: Vec3::zeros(),
                b: Vec3::zeros(),
                radius: 0.0
            };
            BONE_COUNT
        ];

        head[PELVIS] = Vec3::new(0.0, hip_y, 0.0);
        tail[PELVIS] = Vec3::new(0.0, pelvis_top, 0.0);
        capsules[PELVIS] = Capsule {
            a: Vec3::new(-hip_x, hip_y, 0.0),
            b: Vec3::new(hip_x, hip_y, 0.0),
            radius: p.pelvis_radius,
        };
        head[ABDOMEN] = tail[PELVIS];
        tail[ABDOMEN] = Vec3::new(0.0, chest_base, 0.0);
        capsules[ABDOMEN] = Capsule {
            a: head[ABDOMEN],
            b: tail[ABDOMEN],
            radius: p.abdomen_radius,
        };
        head[CHEST] = tail[ABDOMEN];
        tail[CHEST] = Vec3::new(0.0, neck_y, 0.0);
        capsules[CHEST] = Capsule {
            a: Vec3::new(-0.5 * p.chest_width, chest_y, 0.0),
            b: Vec3::new(0.5 * p.chest_width, chest_y, 0.0),
            radius: p.chest_radius,
        };
        head[HEAD] = tail[CHEST];
        let skull = head[HEAD] + y * (p.neck_length + 0.5 * p.head_radius);
        tail[HEAD] = skull + y * (p.head_length + p.head_radius);
        capsules[HEAD] = Capsule {
            a: skull,
            b: skull + y * p.head_length,
            radius: p.head_radius,
        };

        let shoulder_y = chest_y + 0.4 * p.chest_radius;
        for (first, side) in [(LEFT_UPPER_ARM, 1.0), (RIGHT_UPPER_ARM, -1.0)] {
            let dir = Vec3::x() * side;
            let mut at = Vec3::new(side * shoulder_x, shoulder_y, 0.0);
            let radii = [p.arm_radius, 0.9 * p.arm_radius, 0.8 * p.arm_radius];
            for (k, len) in [p.upper_arm_length, p.forearm_length, p.hand_length].into_iter().enumerate() {
                head[first + k] = at;
                tail[first + k] = at + dir * len;
                capsules[first + k] = Capsule {
                    a: at,
                    b: at + dir * len,
                    radius: radii[k],
                };
                at += dir * len;
            }
        }
        for (first, side) in [(LEFT_THIGH, 1.0), (RIGHT_THIGH, -1.0)] {
            let hip = Vec3::new(side * hip_x, hip_y, 0.0);
            let knee = hip - y * p.thigh_length;
            let ankle = knee - y * p.shin_length;
            head[first] = hip;
            tail[first] = knee;
            capsules[first] = Capsule { a: hip, b: knee, radius: p.leg_radius };
            head[first + 1] = knee;
            tail[first + 1] = ankle;
            capsules[first + 1] = Capsule { a: knee, b: ankle, radius: 0.9 * p.leg_radius };
            head[first + 2] = ankle;
            tail[first + 2] = ankle + Vec3::z() * p.foot_length;
            capsules[first + 2] = Capsule {
                a: ankle,
                b: ankle + Vec3::z() * p.foot_length,
                radius: 0.8 * p.leg_radius,
            };
        }

        let rig = Rig {
            parent: PARENTS.to_vec(),
            rest_head: head,
            rest_tail: tail,
        };
        rig.validate()?;
        Ok(Self {
            capsules,
            accessories: Vec::new(),
            rig,
        })
    }

    /// Applies `p -> center + scale * (p - center)` to every point and length.
    pub fn scaled_about(&self, center: &Vec3, scale: f64) -> Self {
        let f = |p: &Vec3| center + (p - center) * scale;
        Self {
            capsules: self
                .capsules
                .iter()
                .map(|c| Capsule {
                    a: f(&c.a),
                    b: f(&c.b),
                    radius: c.radius * scale,
                })
                .collect(),
            accessories: self
                .accessories
                .iter()
                .map(|a| Accessory {
                    center: f(&a.center),
                    radii: a.radii * scale,
                    bone: a.bone,
                })
                .collect(),
            rig: self.rig.transformed(f),
        }
    }
}

/// What a contiguous vertex range of a character mesh was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartSource {
    Bone(usize),
    Accessory(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshComponent {
    pub source: PartSource,
    pub vertices: Range<usize>,
}

/// Row-major `vertices x bones` skinning weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    pub bones: usize,
    pub data: Vec<f64>,
}

impl SkinWeights {
    pub fn vertex_count(&self) -> usize {
        self.data.len() / self.bones
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.bones..(v + 1) * self.bones]
    }

    /// Index of the largest weight per vertex; ties go to the lowest bone index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .map(|v| {
                let row = self.row(v);
                let mut best = 0;
                for (b, &w) in row.iter().enumerate() {
                    if w > row[best] {
                        best = b;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedCharacter {
    pub mesh: Mesh,
    pub rig: Rig,
    pub weights: SkinWeights,
    pub part_labels: Vec<usize>,
    /// False for stylized variants: their labels exist for evaluation only.
    pub labeled: bool,
    pub plan: BodyPlan,
    pub components: Vec<MeshComponent>,
}

/// Style applied to a character in its rest pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub head_scale: f64,
    pub limb_radius_scale: f64,
    pub torso_radius_scale: f64,
    pub hat: bool,
}

impl StyleParams {
    pub fn identity() -> Self {
        Self {
            head_scale: 1.0,
            limb_radius_scale: 1.0,
            torso_radius_scale: 1.0,
            hat: false,
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            head_scale: rng.random_range(1.5..2.5),
            limb_radius_scale: rng.random_range(0.8..1.4),
            torso_radius_scale: rng.random_range(0.9..1.3),
            hat: rng.random_bool(0.5),
        }
    }
}

/// Surface of revolution around axis `u` through `origin`. `profile` lists
/// `(axial offset, ring radius)` from one pole to the other; the first and last
/// entries are the poles (radius 0). Faces are oriented outward.
fn revolve(origin: &Vec3, u: &Vec3, profile: &[(f64, f64)], scale: &Vec3) -> Mesh {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let v = u.cross(&helper).normalize();
    let w = u.cross(&v);
    let n = RING_SEGMENTS;
    let rings = profile.len() - 2;
    let place = |p: Vec3| origin + p.component_mul(scale);

    let mut vertices = Vec::with_capacity(2 + rings * n);
    vertices.push(place(u * profile[0].0));
    for &(axial, radius) in &profile[1..=rings] {
        for k in 0..n {
            let t = 2.0 * PI * k as f64 / n as f64;
            vertices.push(place(u * axial + (v * t.cos() + w * t.sin()) * radius));
        }
    }
    vertices.push(place(u * profile[rings + 1].0));

    let last = vertices.len() - 1;
    let ring = |r: usize, k: usize| 1 + r * n + (k % n);
    let mut faces = Vec::with_capacity(2 * n * rings);
    for k in 0..n {
        faces.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for r in 0..rings - 1 {
        for k in 0..n {
            faces.push([ring(r, k), ring(r, k + 1), ring(r + 1, k + 1)]);
            faces.push([ring(r, k), ring(r + 1, k + 1), ring(r + 1, k)]);
        }
    }
    for k in 0..n {
        faces.push([last, ring(rings - 1, k), ring(rings - 1, k + 1)]);
    }

    let mut mesh = Mesh { vertices, faces };
    if signed_volume(&mesh) < 0.0 {
        mesh.faces.iter_mut().for_each(|f| f.swap(1, 2));
    }
    mesh
}

fn signed_volume(mesh: &Mesh) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

fn hemisphere_angles() -> impl Iterator<Item = f64> {
    (1..=HEMISPHERE_RINGS).map(|k| 0.5 * PI * k as f64 / HEMISPHERE_RINGS as f64)
}

pub fn capsule_mesh(c: &Capsule) -> Mesh {
    let axis = c.b - c.a;
    let len = axis.norm();
    let u = if len > 0.0 { axis / len } else { Vec3::y() };
    let r = c.radius;
    let mut profile = vec![(-r, 0.0)];
    profile.extend(hemisphere_angles().map(|phi| (-r * phi.cos(), r * phi.sin())));
    profile.extend(
        hemisphere_angles()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .map(|phi| (len + r * phi.cos(), r * phi.sin())),
    );
    profile.push((len + r, 0.0));
    revolve(&c.a, &u, &profile, &Vec3::repeat(1.0))
}

pub fn ellipsoid_mesh(center: &Vec3, radii: &Vec3) -> Mesh {
    let rings = 2 * HEMISPHERE_RINGS;
    let mut profile = vec![(-1.0, 0.0)];
    for k in 1..rings {
        let phi = PI * k as f64 / rings as f64;
        profile.push((-phi.cos(), phi.sin()));
    }
    profile.push((1.0, 0.0));
    revolve(center, &Vec3::y(), &profile, radii)
}

fn build_geometry(plan: &BodyPlan) -> (Mesh, Vec<MeshComponent>) {
    let mut mesh = Mesh {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    let mut components = Vec::new();
    let mut push = |part: Mesh, source: PartSource, mesh: &mut Mesh| {
        let start = mesh.vertices.len();
        mesh.append(&part);
        components.push(MeshComponent {
            source,
            vertices: start..mesh.vertices.len(),
        });
    };
    for (b, c) in plan.capsules.iter().enumerate() {
        push(capsule_mesh(c), PartSource::Bone(b), &mut mesh);
    }
    for (i, a) in plan.accessories.iter().enumerate() {
        push(ellipsoid_mesh(&a.center, &a.radii), PartSource::Accessory(i), &mut mesh);
    }
    (mesh, components)
}

fn skin(plan: &BodyPlan, mesh: &Mesh, components: &[MeshComponent]) -> SkinWeights {
    let bones = plan.capsules.len();
    let mut data = vec![0.0; mesh.vertex_count() * bones];
    for comp in components {
        for v in comp.vertices.clone() {
            let row = &mut data[v * bones..(v + 1) * bones];
            if let PartSource::Accessory(i) = comp.source {
                row[plan.accessories[i].bone] = 1.0;
                continue;
            }
            let p = mesh.vertices[v];
            let scaled: Vec<f64> = plan
                .capsules
                .iter()
                .map(|c| c.axis_distance(&p) / c.radius)
                .collect();
            let nearest = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
            for (w, d) in row.iter_mut().zip(&scaled) {
                *w = (-SKIN_SHARPNESS * (d - nearest)).exp();
            }
            let max = row.iter().cloned().fold(0.0, f64::max);
            row.iter_mut()
                .filter(|w| **w < SKIN_CUTOFF * max)
                .for_each(|w| *w = 0.0);
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= sum);
        }
    }
    SkinWeights { bones, data }
}

impl SkinnedCharacter {
    /// Generates mesh, components, weights and labels from a plan, as-is (no
    /// normalization).
    pub fn from_plan(plan: BodyPlan, labeled: bool) -> Result<Self> {
        plan.rig.validate()?;
        let (mesh, components) = build_geometry(&plan);
        let weights = skin(&plan, &mesh, &components);
        let part_labels = weights.argmax_labels();
        Ok(Self {
            mesh,
            rig: plan.rig.clone(),
            weights,
            part_labels,
            labeled,
            plan,
            components,
        })
    }

    /// Uniformly rescaled about the mesh centroid to a height of 1.
    pub fn normalized(&self) -> Result<Self> {
        let extent = self.mesh.vertical_extent();
        if !(extent > 0.0) {
            return Err(Error::Degenerate("character has zero height".into()));
        }
        let center = self.mesh.centroid();
        let plan = self.plan.scaled_about(&center, 1.0 / extent);
        Self::from_plan(plan, self.labeled)
    }

    pub fn bone_count(&self) -> usize {
        self.rig.bone_count()
    }

    /// Vertex range of the capsule generated for `bone`.
    pub fn bone_vertices(&self, bone: usize) -> Option<Range<usize>> {
        self.components
            .iter()
            .find(|c| c.source == PartSource::Bone(bone))
            .map(|c| c.vertices.clone())
    }

    pub fn accessory_vertices(&self) -> Vec<Range<usize>> {
        self.components
            .iter()
            .filter(|c| matches!(c.source, PartSource::Accessory(_)))
            .map(|c| c.vertices.clone())
            .collect()
    }
}

/// Builds a height-normalized character. Geometry depends only on `params`.
pub fn build_character(params: &BodyParams) -> Result<SkinnedCharacter> {
    let plan = BodyPlan::from_params(params)?;
    SkinnedCharacter::from_plan(plan, true)?.normalized()
}

/// Rest-pose stylization: the head capsule scaled about its center, limb and torso
/// radii multiplied, and optionally a hat bound to the head. Skinning is re-derived and
/// the result is flagged as unlabeled; it is not renormalized.
pub fn stylize(character: &SkinnedCharacter, style: &StyleParams) -> Result<SkinnedCharacter> {
    let s = style;
    if ![s.head_scale, s.limb_radius_scale, s.torso_radius_scale]
        .iter()
        .all(|x| x.is_finite() && *x > 0.0)
    {
        return Err(Error::Invalid(format!("style scales must be positive: {style:?}")));
    }
    let mut plan = character.plan.clone();
    for (b, c) in plan.capsules.iter_mut().enumerate() {
        match b {
            HEAD => {
                let center = c.center();
                c.a = center + (c.a - center) * s.head_scale;
                c.b = center + (c.b - center) * s.head_scale;
                c.radius *= s.head_scale;
            }
            PELVIS | ABDOMEN | CHEST => c.radius *= s.torso_radius_scale,
            _ => c.radius *= s.limb_radius_scale,
        }
    }
    if s.hat {
        let head = plan.capsules[HEAD];
        let r = head.radius;
        let top = if head.a.y >= head.b.y { head.a } else { head.b };
        plan.accessories.push(Accessory {
            center: top + Vec3::y() * (0.75 * r),
            radii: Vec3::new(1.25 * r, 0.4 * r, 1.25 * r),
            bone: HEAD,
        });
    }
    SkinnedCharacter::from_plan(plan, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{edges, WindingIndex};

    fn default_character() -> SkinnedCharacter {
        build_character(&BodyParams::default()).unwrap()
    }

    #[test]
    fn rig_is_a_tree_rooted_at_pelvis() {
        let c = default_character();
        c.rig.validate().unwrap();
        assert_eq!(c.bone_count(), BONE_COUNT);
        assert_eq!(c.rig.parent[HEAD], Some(CHEST));
        assert_eq!(c.rig.parent[LEFT_THIGH], Some(PELVIS));
    }

    #[test]
    fn normalized_to_unit_height() {
        let c = default_character();
        assert!((c.mesh.vertical_extent() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn components_are_closed_and_outward() {
        let c = default_character();
        for comp in &c.components {
            let sub = Mesh {
                vertices: c.mesh.vertices[comp.vertices.clone()].to_vec(),
                faces: c
                    .mesh
                    .faces
                    .iter()
                    .filter(|f| comp.vertices.contains(&f[0]))
                    .map(|f| f.map(|i| i - comp.vertices.start))
                    .collect(),
            };
            assert!(signed_volume(&sub) > 0.0);
            // closed genus-0 surface
            let e = edges(&sub).len() as i64;
            assert_eq!(sub.vertex_count() as i64 - e + sub.face_count() as i64, 2);
        }
    }

    #[test]
    fn capsule_centers_are_inside() {
        let c = default_character();
        let index = WindingIndex::new(&c.mesh);
        for cap in &c.plan.capsules {
            assert!(index.winding_number(&cap.center()) > 1.0 - 1e-6);
        }
        let torso = c.plan.capsules[ABDOMEN].center();
        assert!(index.is_inside(&torso));
        assert!(!index.is_inside(&(torso + Vec3::new(0.0, 0.0, 2.0))));
    }

    #[test]
    fn weight_rows_are_a_simplex_and_labels_are_argmax() {
        let c = default_character();
        for v in 0..c.mesh.vertex_count() {
            let row = c.weights.row(v);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(c.part_labels, c.weights.argmax_labels());
        // a capsule's own bone dominates its far end
        let hand = c.bone_vertices(6).unwrap();
        assert_eq!(c.part_labels[hand.end - 1], 6);
    }

    #[test]
    fn geometry_depends_only_on_params() {
        let a = build_character(&BodyParams::default()).unwrap();
        let b = build_character(&BodyParams::default()).unwrap();
        assert_eq!(a, b);
        let mut rng = crate::seed::rng(3);
        let p = BodyParams::sample(&mut rng);
        assert_ne!(build_character(&p).unwrap().mesh, a.mesh);
    }

    #[test]
    fn degenerate_params_are_rejected() {
        let p = BodyParams {
            thigh_length: 0.0,
            ..BodyParams::default()
        };
        assert!(build_character(&p).is_err());
    }

    #[test]
    fn identity_style_keeps_geometry() {
        let c = default_character();
        let s = stylize(&c, &StyleParams::identity()).unwrap();
        assert_eq!(s.mesh, c.mesh);
        assert_eq!(s.part_labels, c.part_labels);
        assert!(!s.labeled);
    }

    #[test]
    fn head_scale_doubles_head_bounds() {
        let c = default_character();
        let style = StyleParams {
            head_scale: 2.0,
            ..StyleParams::identity()
        };
        let s = stylize(&c, &style).unwrap();
        let bbox = |ch: &SkinnedCharacter| {
            let r = ch.bone_vertices(HEAD).unwrap();
            let part = Mesh {
                vertices: ch.mesh.vertices[r].to_vec(),
                faces: vec![],
            };
            let (lo, hi) = part.bounds();
            hi - lo
        };
        let (before, after) = (bbox(&c), bbox(&s));
        for k in 0..3 {
            assert!((after[k] - 2.0 * before[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn hat_is_bound_to_head() {
        let c = default_character();
        let style = StyleParams {
            hat: true,
            ..StyleParams::identity()
        };
        let s = stylize(&c, &style).unwrap();
        let hat = &s.accessory_vertices()[0];
        assert!(!hat.is_empty());
        for v in hat.clone() {
            assert_eq!(s.weights.row(v)[HEAD], 1.0);
            assert_eq!(s.part_labels[v], HEAD);
        }
        assert!(s.mesh.vertical_extent() > 1.0);
    }
}
