//! Test-time training: per-(character, pose) fine-tuning of the pose network with a
//! part-wise distance-preservation loss `L_v`, an edge loss `L_e` on the stylized
//! character and a driving loss `L_dr` on a source character with known motion.

use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::mesh::{edges, sample_surface, Mesh, Vec3};
use crate::nn::{AdamState, Gradients};
use crate::pose::{offsets, transfer_pose, PoseNet};
use crate::seed;
use crate::shape::{segment_points, ShapeDecoder};

#[derive(Debug, Clone, PartialEq)]
pub struct TttConfig {
    pub lambda_v: f64,
    pub lambda_e: f64,
    pub lambda_dr: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub pairs_per_part: usize,
    /// Surface points sampled on the stylized character for `L_v`.
    pub surface_samples: usize,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            lambda_v: 0.05,
            lambda_e: 0.01,
            lambda_dr: 1.0,
            iterations: 20,
            learning_rate: 5e-3,
            pairs_per_part: 256,
            surface_samples: 1024,
            seed: 0,
        }
    }
}

/// Two points carrying the same predicted part label, as indices into a point list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartPair {
    pub part: usize,
    pub i: usize,
    pub j: usize,
}

/// `pairs_per_part` uniformly random unordered pairs of distinct points per part;
/// parts with fewer than two points are skipped.
pub fn sample_pairs(labels: &[usize], pairs_per_part: usize, seed: u64) -> Vec<PartPair> {
    let parts = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); parts];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(parts * pairs_per_part);
    for (part, m) in members.iter().enumerate() {
        if m.len() < 2 {
            continue;
        }
        for _ in 0..pairs_per_part {
            let a = rng.random_range(0..m.len());
            let mut b = rng.random_range(0..m.len() - 1);
            if b >= a {
                b += 1;
            }
            out.push(PartPair { part, i: m[a], j: m[b] });
        }
    }
    out
}

/// Gradient of `|d|` with respect to `d`, taken as zero at `d = 0`.
fn unit_or_zero(d: &Vec3) -> Vec3 {
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vec3::zeros()
    }
}

/// `sum (|x_i - x_j| - |(x_i + dx_i) - (x_j + dx_j)|)^2` over all pairs.
pub fn loss_volume(pairs: &[PartPair], points: &[Vec3], offsets: &[Vec3]) -> Result<f64> {
    Ok(volume_loss_and_grad(pairs, points, offsets, false)?.0)
}

pub(crate) fn volume_loss_and_grad(
    pairs: &[PartPair],
    points: &[Vec3],
    offsets: &[Vec3],
    with_grad: bool,
) -> Result<(f64, Vec<Vec3>)> {
    check_dims("volume offsets", points.len(), offsets.len())?;
    let mut grad = vec![Vec3::zeros(); if with_grad { points.len() } else { 0 }];
    let mut loss = 0.0;
    for p in pairs {
        if p.i >= points.len() || p.j >= points.len() {
            return Err(Error::Invalid(format!("pair ({}, {}) out of range", p.i, p.j)));
        }
        let rest = (points[p.i] - points[p.j]).norm();
        let d = (points[p.i] + offsets[p.i]) - (points[p.j] + offsets[p.j]);
        let r = rest - d.norm();
        loss += r * r;
        if with_grad {
            let g = unit_or_zero(&d) * (-2.0 * r);
            grad[p.i] += g;
            grad[p.j] -= g;
        }
    }
    Ok((loss, grad))
}

/// Mean over rest edges of the squared change in edge length. Zero-length rest edges
/// are skipped.
pub fn loss_edge(rest: &Mesh, deformed: &[Vec3]) -> Result<f64> {
    Ok(edge_loss_and_grad(rest, &edges(rest).edges, deformed, false)?.0)
}

pub(crate) fn edge_loss_and_grad(
    rest: &Mesh,
    edge_list: &[(usize, usize)],
    deformed: &[Vec3],
    with_grad: bool,
) -> Result<(f64, Vec<Vec3>)> {
    check_dims("deformed vertices", rest.vertex_count(), deformed.len())?;
    let mut grad = vec![Vec3::zeros(); if with_grad { deformed.len() } else { 0 }];
    let valid: Vec<(usize, usize, f64)> = edge_list
        .iter()
        .map(|&(i, j)| (i, j, (rest.vertices[i] - rest.vertices[j]).norm()))
        .filter(|e| e.2 > 0.0)
        .collect();
    let skipped = edge_list.len() - valid.len();
    if skipped > 0 {
        log::warn!("edge loss: skipped {skipped} zero-length rest edges");
    }
    if valid.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / valid.len() as f64;
    let mut loss = 0.0;
    for (i, j, len) in valid {
        let d = deformed[i] - deformed[j];
        let r = d.norm() - len;
        loss += r * r;
        if with_grad {
            let g = unit_or_zero(&d) * (2.0 * r * scale);
            grad[i] += g;
            grad[j] -= g;
        }
    }
    Ok((loss * scale, grad))
}

/// Summed squared error between predicted and true source-character offsets.
pub fn loss_driving(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    check_dims("driving loss", truth.len(), pred.len())?;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum())
}

/// The stylized character being posed: rest mesh, fitted code, and surface samples
/// with their predicted part labels.
#[derive(Debug, Clone)]
pub struct TttSubject {
    pub mesh: Mesh,
    pub code: Vec<f64>,
    pub surface: Vec<Vec3>,
    pub labels: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl TttSubject {
    pub fn new(mesh: Mesh, code: Vec<f64>, surface: Vec<Vec3>, labels: Vec<usize>) -> Result<Self> {
        check_dims("surface labels", surface.len(), labels.len())?;
        let edges = edges(&mesh).edges;
        Ok(Self {
            mesh,
            code,
            surface,
            labels,
            edges,
        })
    }

    /// Samples `n` surface points and labels them with the shape module.
    pub fn prepare(mesh: Mesh, code: Vec<f64>, decoder: &ShapeDecoder, n: usize, seed: u64) -> Result<Self> {
        let surface: Vec<Vec3> = sample_surface(&mesh, n, seed)?
            .into_iter()
            .map(|s| s.position)
            .collect();
        let labels = segment_points(&surface, &code, decoder)?;
        Self::new(mesh, code, surface, labels)
    }
}

/// The driving character: rest vertices, fitted code and its ground-truth offsets for
/// the target pose.
#[derive(Debug, Clone)]
pub struct DrivingSource {
    pub points: Vec<Vec3>,
    pub code: Vec<f64>,
    pub offsets: Vec<Vec3>,
}

impl DrivingSource {
    pub fn from_meshes(rest: &Mesh, posed: &Mesh, code: Vec<f64>) -> Result<Self> {
        check_dims("driving target", rest.vertex_count(), posed.vertex_count())?;
        Ok(Self {
            points: rest.vertices.clone(),
            code,
            offsets: posed.vertices.iter().zip(&rest.vertices).map(|(p, r)| p - r).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TttLossTerms {
    pub volume: f64,
    pub edge: f64,
    pub driving: f64,
    pub total: f64,
}

/// `L_T = lambda_v L_v + lambda_e L_e + lambda_dr L_dr` with one forward pass over the
/// stylized vertices, the stylized surface samples and the source vertices.
pub fn ttt_loss_and_grad(
    net: &PoseNet,
    subject: &TttSubject,
    source: &DrivingSource,
    m: &[f64],
    pairs: &[PartPair],
    cfg: &TttConfig,
    grads: Option<&mut Gradients>,
) -> Result<TttLossTerms> {
    let nv = subject.mesh.vertex_count();
    let ns = subject.surface.len();
    let nd = source.points.len();
    check_dims("driving offsets", nd, source.offsets.len())?;
    let mut input = net.inputs(&subject.mesh.vertices, &subject.code, m)?;
    input.extend(net.inputs(&subject.surface, &subject.code, m)?);
    input.extend(net.inputs(&source.points, &source.code, m)?);
    let tape = net.m.forward_batch(&input, nv + ns + nd)?;
    let dx = offsets(&tape);
    let with_grad = grads.is_some();

    let deformed: Vec<Vec3> = subject.mesh.vertices.iter().zip(&dx[..nv]).map(|(v, d)| v + d).collect();
    let (edge, edge_grad) = edge_loss_and_grad(&subject.mesh, &subject.edges, &deformed, with_grad)?;
    let (volume, volume_grad) = volume_loss_and_grad(pairs, &subject.surface, &dx[nv..nv + ns], with_grad)?;
    let pred_dr = &dx[nv + ns..];
    let driving = loss_driving(pred_dr, &source.offsets)?;
    let total = cfg.lambda_v * volume + cfg.lambda_e * edge + cfg.lambda_dr * driving;
    let terms = TttLossTerms {
        volume,
        edge,
        driving,
        total,
    };
    if let Some(g) = grads {
        let mut out = Vec::with_capacity((nv + ns + nd) * 3);
        for e in &edge_grad {
            out.extend((e * cfg.lambda_e).iter());
        }
        for v in &volume_grad {
            out.extend((v * cfg.lambda_v).iter());
        }
        for (p, t) in pred_dr.iter().zip(&source.offsets) {
            out.extend(((p - t) * (2.0 * cfg.lambda_dr)).iter());
        }
        net.m.backward_batch(&tape, &out, Some(g))?;
    }
    Ok(terms)
}

#[derive(Debug, Clone)]
pub struct TttOutcome {
    pub net: PoseNet,
    pub mesh: Mesh,
    pub history: Vec<TttLossTerms>,
    /// Set when optimization produced a non-finite value; `net` and `mesh` are then the
    /// pre-TTT results.
    pub diverged: bool,
}

/// Fine-tunes a copy of `net` for `cfg.iterations` Adam steps on `L_T`, resampling
/// the part pairs every iteration, and returns the stylized mesh deformed by it.
pub fn run_ttt(
    subject: &TttSubject,
    source: &DrivingSource,
    m: &[f64],
    net: &PoseNet,
    cfg: &TttConfig,
) -> Result<TttOutcome> {
    if ![cfg.lambda_v, cfg.lambda_e, cfg.lambda_dr].iter().all(|l| *l >= 0.0) {
        return Err(Error::Config("TTT loss weights must be non-negative".into()));
    }
    let mut tuned = net.clone();
    let mut adam = AdamState::new(cfg.learning_rate, tuned.m.params().iter().map(|p| p.len()));
    let mut history = Vec::with_capacity(cfg.iterations);
    let fallback = |history: Vec<TttLossTerms>| -> Result<TttOutcome> {
        log::warn!("test-time training diverged; returning the untuned result");
        Ok(TttOutcome {
            net: net.clone(),
            mesh: transfer_pose(&subject.mesh, &subject.code, m, net)?,
            history,
            diverged: true,
        })
    };
    for it in 0..cfg.iterations {
        let pairs = sample_pairs(
            &subject.labels,
            cfg.pairs_per_part,
            seed::derive_indexed(cfg.seed, "ttt-pairs", it as u64),
        );
        let mut grads = Gradients::zeros_like(&tuned.m);
        let terms = ttt_loss_and_grad(&tuned, subject, source, m, &pairs, cfg, Some(&mut grads))?;
        history.push(terms);
        if !terms.total.is_finite() || adam.update(&mut tuned.m.params_mut(), &grads.slices()).is_err() {
            return fallback(history);
        }
    }
    let mesh = transfer_pose(&subject.mesh, &subject.code, m, &tuned)?;
    if !tuned.m.all_finite() || !mesh.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        return fallback(history);
    }
    Ok(TttOutcome {
        net: tuned,
        mesh,
        history,
        diverged: false,
    })
}
