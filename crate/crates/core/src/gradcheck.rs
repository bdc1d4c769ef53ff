//! Central finite-difference checks of every training and test-time loss gradient.
//!
//! Each loss is evaluated on small random instances of the real networks. Parameters
//! are flattened into one vector; a random subset of coordinates is perturbed by `±h`
//! and the central difference is compared with the analytic gradient. Coordinates whose
//! one-sided differences disagree sit next to a ReLU kink, where the loss is not
//! differentiable; they are skipped and counted.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::mesh::primitives::{icosahedron, icosphere};
use crate::mesh::Vec3;
use crate::nn::{Gradients, Mlp};
use crate::pose::{deform_loss_and_grad, PoseNet};
use crate::seed;
use crate::shape::{shape_loss_and_grad, ShapeDecoder, ShapeGrads, ShapeLossWeights, ShapeRow};
use crate::synth::DeformSample;
use crate::ttt::{sample_pairs, ttt_loss_and_grad, DrivingSource, TttConfig, TttSubject};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub seeds: usize,
    /// Accepted coordinates per loss and seed.
    pub coordinates: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            coordinates: 16,
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub loss: String,
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub const LOSSES: [&str; 8] = ["L_O", "L_P", "L_Q", "L_D", "L_v", "L_e", "L_dr", "L_T"];

/// Every loss in [`LOSSES`] over `cfg.seeds` random instances.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<Vec<GradCheckResult>> {
    LOSSES.iter().map(|name| check_loss(name, cfg)).collect()
}

pub fn check_loss(name: &str, cfg: &GradCheckConfig) -> Result<GradCheckResult> {
    let mut out = GradCheckResult {
        loss: name.to_string(),
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for s in 0..cfg.seeds {
        let root = seed::derive_indexed(seed::derive(cfg.seed, name), "instance", s as u64);
        let (theta, f) = problem(name, root)?;
        let (err, checked, skipped) = compare(&theta, &*f, cfg, seed::derive(root, "coords"))?;
        out.max_relative_error = out.max_relative_error.max(err);
        out.checked += checked;
        out.skipped += skipped;
    }
    Ok(out)
}

type Objective = dyn Fn(&[f64], bool) -> Result<(f64, Vec<f64>)>;

fn compare(theta: &[f64], f: &Objective, cfg: &GradCheckConfig, coord_seed: u64) -> Result<(f64, usize, usize)> {
    let (f0, grad) = f(theta, true)?;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut rng = seed::rng(coord_seed);
    let h = cfg.step;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let mut x = theta.to_vec();
    for _ in 0..cfg.coordinates * 8 {
        if checked == cfg.coordinates {
            break;
        }
        let k = rng.random_range(0..theta.len());
        x[k] = theta[k] + h;
        let fp = f(&x, false)?.0;
        x[k] = theta[k] - h;
        let fm = f(&x, false)?.0;
        x[k] = theta[k];
        let (dp, dm) = ((fp - f0) / h, (f0 - fm) / h);
        if (dp - dm).abs() > 1e-4 * dp.abs().max(dm.abs()) + 1e-9 * scale.max(1.0) {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let denom = grad[k].abs().max(numeric.abs()).max(1e-6 * scale).max(1e-12);
        worst = worst.max((grad[k] - numeric).abs() / denom);
        checked += 1;
    }
    Ok((worst, checked, skipped))
}

fn flatten(nets: &[&Mlp], codes: &[Vec<f64>]) -> Vec<f64> {
    let mut v = Vec::new();
    for n in nets {
        n.params().iter().for_each(|p| v.extend_from_slice(p));
    }
    codes.iter().for_each(|c| v.extend_from_slice(c));
    v
}

fn unflatten(theta: &[f64], nets: &mut [&mut Mlp], codes: &mut [Vec<f64>]) {
    let mut at = 0;
    for n in nets.iter_mut() {
        for p in n.params_mut() {
            p.copy_from_slice(&theta[at..at + p.len()]);
            at += p.len();
        }
    }
    for c in codes.iter_mut() {
        let len = c.len();
        c.copy_from_slice(&theta[at..at + len]);
        at += len;
    }
}

fn flat_grads(grads: &[&Gradients], codes: &[Vec<f64>]) -> Vec<f64> {
    let mut v = Vec::new();
    for g in grads {
        g.slices().iter().for_each(|p| v.extend_from_slice(p));
    }
    codes.iter().for_each(|c| v.extend_from_slice(c));
    v
}

fn random_point(rng: &mut impl Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_vec(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

const CODE_DIM: usize = 8;
const PARTS: usize = 5;
const POSE_DIM: usize = 6;

fn problem(name: &str, root: u64) -> Result<(Vec<f64>, Box<Objective>)> {
    match name {
        "L_O" | "L_P" | "L_Q" => shape_problem(name, root),
        "L_D" => deform_problem(root),
        _ => ttt_problem(name, root),
    }
}

fn shape_problem(name: &str, root: u64) -> Result<(Vec<f64>, Box<Objective>)> {
    let decoder = ShapeDecoder::new(CODE_DIM, PARTS, seed::derive(root, "decoder"))?;
    let mut rng = seed::rng(seed::derive(root, "data"));
    let codes: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, CODE_DIM, 0.5)).collect();
    let weights = match name {
        "L_O" => ShapeLossWeights { occupancy: 1.0, part: 0.0, inverse: 0.0 },
        "L_P" => ShapeLossWeights { occupancy: 0.0, part: 1.0, inverse: 0.0 },
        _ => ShapeLossWeights { occupancy: 0.0, part: 0.0, inverse: 1.0 },
    };
    let rows: Vec<ShapeRow> = (0..12)
        .map(|i| ShapeRow {
            x: random_point(&mut rng, 0.6),
            code: i % 2,
            occupancy: Some(rng.random_bool(0.5)),
            part: Some(rng.random_range(0..PARTS)),
            inverse: true,
        })
        .collect();
    let theta = flatten(&decoder.nets(), &codes);
    let f = move |theta: &[f64], grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut dec = decoder.clone();
        let mut cs = codes.clone();
        unflatten(theta, &mut dec.nets_mut(), &mut cs);
        if !grad {
            return Ok((shape_loss_and_grad(&dec, &cs, &rows, weights, None)?.total, Vec::new()));
        }
        let mut g = ShapeGrads::zeros(&dec, cs.len(), true);
        let loss = shape_loss_and_grad(&dec, &cs, &rows, weights, Some(&mut g))?.total;
        let nets: Vec<&Gradients> = [&g.f, &g.o, &g.p, &g.q].iter().map(|x| x.as_ref().expect("params")).collect();
        Ok((loss, flat_grads(&nets, &g.codes)))
    };
    Ok((theta, Box::new(f)))
}

fn random_pose_net(root: u64) -> Result<PoseNet> {
    let spec = PoseNet::spec(CODE_DIM, POSE_DIM)?;
    PoseNet::from_mlp(Mlp::kaiming(spec, seed::derive(root, "net")), CODE_DIM, POSE_DIM)
}

fn net_objective(
    net: PoseNet,
    eval: impl Fn(&PoseNet, Option<&mut Gradients>) -> Result<f64> + 'static,
) -> (Vec<f64>, Box<Objective>) {
    let theta = flatten(&[&net.m], &[]);
    let f = move |theta: &[f64], grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut n = net.clone();
        unflatten(theta, &mut [&mut n.m], &mut []);
        if !grad {
            return Ok((eval(&n, None)?, Vec::new()));
        }
        let mut g = Gradients::zeros_like(&n.m);
        let loss = eval(&n, Some(&mut g))?;
        Ok((loss, flat_grads(&[&g], &[])))
    };
    (theta, Box::new(f))
}

fn deform_problem(root: u64) -> Result<(Vec<f64>, Box<Objective>)> {
    let net = random_pose_net(root)?;
    let mut rng = seed::rng(seed::derive(root, "data"));
    let codes: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, CODE_DIM, 0.5)).collect();
    let samples: Vec<DeformSample> = (0..10)
        .map(|i| DeformSample {
            x: random_point(&mut rng, 0.5),
            dx: random_point(&mut rng, 0.2),
            shape_index: i % 2,
            pose: random_vec(&mut rng, POSE_DIM, 1.0),
        })
        .collect();
    Ok(net_objective(net, move |n, g| deform_loss_and_grad(n, &codes, &samples, g)))
}

fn ttt_problem(name: &str, root: u64) -> Result<(Vec<f64>, Box<Objective>)> {
    let net = random_pose_net(root)?;
    let mut rng = seed::rng(seed::derive(root, "data"));
    let mut mesh = icosphere(1);
    for v in &mut mesh.vertices {
        *v = *v * 0.3 + random_point(&mut rng, 0.02);
    }
    let surface: Vec<Vec3> = (0..24).map(|_| random_point(&mut rng, 0.4)).collect();
    let labels: Vec<usize> = (0..surface.len()).map(|_| rng.random_range(0..3)).collect();
    let subject = TttSubject::new(mesh, random_vec(&mut rng, CODE_DIM, 0.5), surface, labels)?;
    let rest = icosahedron();
    let source = DrivingSource {
        points: rest.vertices.iter().map(|v| v * 0.4).collect(),
        code: random_vec(&mut rng, CODE_DIM, 0.5),
        offsets: (0..rest.vertex_count()).map(|_| random_point(&mut rng, 0.1)).collect(),
    };
    let m = random_vec(&mut rng, POSE_DIM, 1.0);
    let pairs = sample_pairs(&subject.labels, 6, seed::derive(root, "pairs"));
    let only = |v: f64, e: f64, dr: f64| TttConfig {
        lambda_v: v,
        lambda_e: e,
        lambda_dr: dr,
        ..TttConfig::default()
    };
    let cfg = match name {
        "L_v" => only(1.0, 0.0, 0.0),
        "L_e" => only(0.0, 1.0, 0.0),
        "L_dr" => only(0.0, 0.0, 1.0),
        _ => TttConfig::default(),
    };
    Ok(net_objective(net, move |n, g| {
        Ok(ttt_loss_and_grad(n, &subject, &source, &m, &pairs, &cfg, g)?.total)
    }))
}
