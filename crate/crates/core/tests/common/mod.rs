//! Independent reference implementations used as test oracles. Plain arrays and loops,
//! no library geometry helpers.
#![allow(dead_code)]

use std::collections::BTreeSet;

use unrig::synth::{PoseSample, SkinnedCharacter};
use unrig::ttt::PartPair;
use unrig::{Mesh, Vec3};

pub type M4 = [[f64; 4]; 4];

fn v3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Rodrigues' formula for a rotation vector.
pub fn rodrigues(r: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = norm(r);
    if theta == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [r[0] / theta, r[1] / theta, r[2] / theta];
    let (s, c) = theta.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let eye = if i == j { 1.0 } else { 0.0 };
            let kk: f64 = (0..3).map(|l| kx[i][l] * kx[l][j]).sum();
            m[i][j] = eye + s * kx[i][j] + (1.0 - c) * kk;
        }
    }
    m
}

fn mat4_mul(a: &M4, b: &M4) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn translation(t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        m[i][i] = 1.0;
    }
    m[0][3] = t[0];
    m[1][3] = t[1];
    m[2][3] = t[2];
    m
}

fn rotation4(r: [[f64; 3]; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j];
        }
    }
    m[3][3] = 1.0;
    m
}

/// World matrix of bone `b`: the product, root first, of `T(h) R T(-h)` along its chain.
pub fn bone_matrix(c: &SkinnedCharacter, pose: &PoseSample, b: usize) -> M4 {
    let mut chain = vec![b];
    while let Some(p) = c.rig.parent[*chain.last().unwrap()] {
        chain.push(p);
    }
    let mut m = translation([0.0; 3]);
    for &j in chain.iter().rev() {
        let h = v3(&c.rig.rest_head[j]);
        let local = mat4_mul(
            &mat4_mul(&translation(h), &rotation4(rodrigues(v3(&pose.rotations[j])))),
            &translation([-h[0], -h[1], -h[2]]),
        );
        m = mat4_mul(&m, &local);
    }
    m
}

/// Linear blend skinning with per-vertex matrix chains.
pub fn lbs_oracle(c: &SkinnedCharacter, pose: &PoseSample) -> Vec<Vec3> {
    let bones = c.rig.parent.len();
    let mats: Vec<M4> = (0..bones).map(|b| bone_matrix(c, pose, b)).collect();
    c.mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = [v.x, v.y, v.z, 1.0];
            let mut out = [0.0; 3];
            for b in 0..bones {
                let w = c.weights.data[i * bones + b];
                for r in 0..3 {
                    out[r] += w * (0..4).map(|k| mats[b][r][k] * p[k]).sum::<f64>();
                }
            }
            Vec3::new(out[0], out[1], out[2])
        })
        .collect()
}

/// Counts crossings of a ray in a fixed generic direction (Moller-Trumbore).
pub fn ray_parity_inside(mesh: &Mesh, p: &Vec3) -> bool {
    let dir = [0.5377, 0.7153, 0.4462];
    let o = v3(p);
    let mut hits = 0;
    for f in &mesh.faces {
        let a = v3(&mesh.vertices[f[0]]);
        let b = v3(&mesh.vertices[f[1]]);
        let c = v3(&mesh.vertices[f[2]]);
        let e1 = sub(b, a);
        let e2 = sub(c, a);
        let pv = cross(dir, e2);
        let det = dot(e1, pv);
        if det.abs() < 1e-15 {
            continue;
        }
        let tv = sub(o, a);
        let u = dot(tv, pv) / det;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let qv = cross(tv, e1);
        let v = dot(dir, qv) / det;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        if dot(e2, qv) / det > 0.0 {
            hits += 1;
        }
    }
    hits % 2 == 1
}

/// Distance from `p` to triangle `(a, b, c)` by projection onto the plane and edges.
pub fn point_triangle_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    let nn = dot(n, n);
    if nn > 0.0 {
        let d = dot(sub(p, a), n) / nn;
        let q = [p[0] - d * n[0], p[1] - d * n[1], p[2] - d * n[2]];
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(s, e)| dot(cross(sub(*e, *s), sub(q, *s)), n) >= 0.0);
        if inside {
            return norm(sub(p, q));
        }
    }
    [(a, b), (b, c), (c, a)]
        .iter()
        .map(|(s, e)| {
            let se = sub(*e, *s);
            let t = (dot(sub(p, *s), se) / dot(se, se).max(1e-300)).clamp(0.0, 1.0);
            norm(sub(p, [s[0] + t * se[0], s[1] + t * se[1], s[2] + t * se[2]]))
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn distance_to_mesh(mesh: &Mesh, p: &Vec3) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            point_triangle_distance(
                v3(p),
                v3(&mesh.vertices[f[0]]),
                v3(&mesh.vertices[f[1]]),
                v3(&mesh.vertices[f[2]]),
            )
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn edge_list(mesh: &Mesh) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

pub fn pmd_oracle(pred: &Mesh, truth: &Mesh) -> f64 {
    let mut s = 0.0;
    for i in 0..truth.vertices.len() {
        s += norm(sub(v3(&pred.vertices[i]), v3(&truth.vertices[i])));
    }
    100.0 * s / truth.vertices.len() as f64
}

pub fn els_oracle(pred: &Mesh, truth: &Mesh) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for (i, j) in edge_list(truth) {
        let l = norm(sub(v3(&truth.vertices[i]), v3(&truth.vertices[j])));
        if l == 0.0 {
            continue;
        }
        let lp = norm(sub(v3(&pred.vertices[i]), v3(&pred.vertices[j])));
        s += 1.0 - (lp / l - 1.0).abs();
        n += 1.0;
    }
    s / n
}

pub fn volume_oracle(pairs: &[PartPair], points: &[Vec3], offsets: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for p in pairs {
        let rest = norm(sub(v3(&points[p.i]), v3(&points[p.j])));
        let a = v3(&(points[p.i] + offsets[p.i]));
        let b = v3(&(points[p.j] + offsets[p.j]));
        let r = rest - norm(sub(a, b));
        s += r * r;
    }
    s
}

pub fn edge_loss_oracle(rest: &Mesh, deformed: &[Vec3]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for (i, j) in edge_list(rest) {
        let l = norm(sub(v3(&rest.vertices[i]), v3(&rest.vertices[j])));
        if l == 0.0 {
            continue;
        }
        let r = norm(sub(v3(&deformed[i]), v3(&deformed[j]))) - l;
        s += r * r;
        n += 1.0;
    }
    if n == 0.0 {
        0.0
    } else {
        s / n
    }
}

pub fn driving_oracle(pred: &[Vec3], truth: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        for k in 0..3 {
            s += (pred[i][k] - truth[i][k]).powi(2);
        }
    }
    s
}

/// Random closed mesh: an icosphere with jittered radii.
pub fn jittered_sphere(levels: usize, seed: u64) -> Mesh {
    use rand::Rng;
    let mut rng = unrig::seed::rng(seed);
    let mut m = unrig::mesh::primitives::icosphere(levels);
    for v in &mut m.vertices {
        *v *= rng.random_range(0.8..1.2);
    }
    m
}

/// Layer-by-layer evaluation with explicit loops.
pub fn mlp_oracle(net: &unrig::nn::Mlp, input: &[f64]) -> Vec<f64> {
    use unrig::nn::{Activation, OutputActivation};
    let spec = net.spec();
    let layers = net.layers();
    let mut x = input.to_vec();
    for (l, d) in layers.iter().enumerate() {
        let mut y = vec![0.0; d.outputs];
        for o in 0..d.outputs {
            let mut acc = d.bias[o];
            for i in 0..d.inputs {
                acc += d.weight[o * d.inputs + i] * x[i];
            }
            y[o] = acc;
        }
        if l + 1 < layers.len() {
            for v in &mut y {
                *v = match spec.hidden {
                    Activation::Relu => v.max(0.0),
                    Activation::Softplus => (1.0 + v.exp()).ln(),
                };
            }
        }
        x = y;
    }
    match spec.output {
        OutputActivation::Identity => x,
        OutputActivation::Sigmoid => x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
        OutputActivation::Softmax => {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
            x.iter().map(|v| (v - m).exp() / z).collect()
        }
    }
}
