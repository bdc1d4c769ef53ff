//! Implicit pose deformation: `M(x, s, m) -> dx`, its training on skinning ground truth
//! and whole-mesh transfer.

use std::path::Path;

use crate::error::{check_dims, Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::nn::{Activation, AdamState, Checkpoint, Gradients, Mlp, MlpSpec, OutputActivation, Tape, Tensor};
use crate::seed;
use crate::shape::ShapeCode;
use crate::synth::{DeformSample, PoseTrainingSet};

pub type PoseCode = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    pub m: Mlp,
    pub code_dim: usize,
    pub pose_dim: usize,
}

impl PoseNet {
    pub fn spec(code_dim: usize, pose_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            vec![3 + code_dim + pose_dim, 256, 256, 256, 3],
            Activation::Relu,
            OutputActivation::Identity,
        )
    }

    /// Kaiming-initialized hidden layers and a zero output layer, so the untrained
    /// network is the identity deformation.
    pub fn new(code_dim: usize, pose_dim: usize, seed: u64) -> Result<Self> {
        let mut m = Mlp::kaiming(Self::spec(code_dim, pose_dim)?, seed);
        m.zero_output_layer();
        Ok(Self { m, code_dim, pose_dim })
    }

    pub fn from_mlp(m: Mlp, code_dim: usize, pose_dim: usize) -> Result<Self> {
        check_dims("M input", 3 + code_dim + pose_dim, m.input_dim())?;
        check_dims("M output", 3, m.output_dim())?;
        Ok(Self { m, code_dim, pose_dim })
    }

    /// Row-major `[x, s, m]` network inputs for `points` under one code pair.
    pub fn inputs(&self, points: &[Vec3], s: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        check_dims("shape code", self.code_dim, s.len())?;
        check_dims("pose code", self.pose_dim, m.len())?;
        let mut input = Vec::with_capacity(points.len() * self.m.input_dim());
        for p in points {
            input.extend_from_slice(&[p.x, p.y, p.z]);
            input.extend_from_slice(s);
            input.extend_from_slice(m);
        }
        Ok(input)
    }

    pub fn deform_point(&self, x: &Vec3, s: &[f64], m: &[f64]) -> Result<Vec3> {
        Ok(self.deform_batch(std::slice::from_ref(x), s, m)?[0])
    }

    pub fn deform_batch(&self, points: &[Vec3], s: &[f64], m: &[f64]) -> Result<Vec<Vec3>> {
        let tape = self.forward_points(points, s, m)?;
        Ok(offsets(&tape))
    }

    pub fn forward_points(&self, points: &[Vec3], s: &[f64], m: &[f64]) -> Result<Tape> {
        let input = self.inputs(points, s, m)?;
        self.m.forward_batch(&input, points.len())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_mlp("net/m", &self.m);
        ck.insert("meta/d", Tensor::scalar(self.code_dim as f64));
        ck.insert("meta/pose_dim", Tensor::scalar(self.pose_dim as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_mlp(
            ck.mlp("net/m")?,
            ck.scalar("meta/d")? as usize,
            ck.scalar("meta/pose_dim")? as usize,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Rows of a pose-network tape as 3D offsets.
pub fn offsets(tape: &Tape) -> Vec<Vec3> {
    tape.output()
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Summed squared Euclidean error.
pub fn loss_deform(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    check_dims("deform loss", truth.len(), pred.len())?;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum())
}

/// `L_D` over `samples`, adding parameter gradients into `grads` when given.
pub fn deform_loss_and_grad(
    net: &PoseNet,
    codes: &[ShapeCode],
    samples: &[DeformSample],
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let width = net.m.input_dim();
    let mut input = Vec::with_capacity(samples.len() * width);
    for s in samples {
        let code = codes
            .get(s.shape_index)
            .ok_or_else(|| Error::Invalid(format!("shape index {} out of range", s.shape_index)))?;
        check_dims("shape code", net.code_dim, code.len())?;
        check_dims("pose code", net.pose_dim, s.pose.len())?;
        input.extend_from_slice(&[s.x.x, s.x.y, s.x.z]);
        input.extend_from_slice(code);
        input.extend_from_slice(&s.pose);
    }
    let tape = net.m.forward_batch(&input, samples.len())?;
    let pred = offsets(&tape);
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(samples.len() * 3);
    for (p, s) in pred.iter().zip(samples) {
        let diff = p - s.dx;
        loss += diff.norm_squared();
        g.extend_from_slice(&[2.0 * diff.x, 2.0 * diff.y, 2.0 * diff.z]);
    }
    if let Some(grads) = grads {
        net.m.backward_batch(&tape, &g, Some(grads))?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// (character, pose) pairs per step.
    pub batch: usize,
    /// Vertices drawn from each pair per step; 0 uses every vertex.
    pub points_per_item: usize,
    pub seed: u64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 3e-4,
            batch: 128,
            points_per_item: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoseTraining {
    pub net: PoseNet,
    /// `L_D` per step, divided by the number of points in the step.
    pub history: Vec<f64>,
}

/// Adam on `L_D` with frozen shape codes. `codes[i]` belongs to rest mesh `i` of `set`.
pub fn train_pose_module(
    set: &PoseTrainingSet,
    codes: &[ShapeCode],
    pose_dim: usize,
    cfg: &PoseConfig,
) -> Result<PoseTraining> {
    check_dims("shape codes", set.rest.len(), codes.len())?;
    let d = codes.first().map(Vec::len).unwrap_or(0);
    if set.pairs.is_empty() || d == 0 {
        return Err(Error::Invalid("pose training needs pairs and non-empty codes".into()));
    }
    let mut net = PoseNet::new(d, pose_dim, seed::derive(cfg.seed, "pose-net"))?;
    let mut adam = AdamState::new(cfg.learning_rate, net.m.params().iter().map(|p| p.len()));
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let samples = set.sample_batch(
            cfg.batch,
            cfg.points_per_item,
            seed::derive_indexed(cfg.seed, "pose-batch", step as u64),
        );
        let mut grads = Gradients::zeros_like(&net.m);
        let loss = deform_loss_and_grad(&net, codes, &samples, Some(&mut grads))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        history.push(loss / samples.len() as f64);
        adam.update(&mut net.m.params_mut(), &grads.slices())
            .map_err(|_| Error::Divergence { step, loss })?;
        if step % 500 == 0 || step + 1 == cfg.steps {
            log::info!("pose step {step}: mean squared error {:.3e}", loss / samples.len() as f64);
        }
    }
    Ok(PoseTraining { net, history })
}

/// Moves every vertex by the predicted offset; faces are untouched.
pub fn transfer_pose(mesh: &Mesh, s: &[f64], m: &[f64], net: &PoseNet) -> Result<Mesh> {
    let dx = net.deform_batch(&mesh.vertices, s, m)?;
    mesh.with_vertices(mesh.vertices.iter().zip(&dx).map(|(v, d)| v + d).collect())
}
