//! Shape understanding: an auto-decoder `F(x, s) -> e` with occupancy (`O`), part (`P`)
//! and inverse (`Q`) heads, joint training of decoder and per-character codes, code
//! fitting for unseen characters, and segmentation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dims, Error, Result};
use crate::mesh::{sample_queries, sample_surface, Mesh, QuerySample, SurfacePoint, Vec3};
use crate::nn::{Activation, AdamState, Checkpoint, Gradients, Mlp, MlpSpec, OutputActivation, Tensor};
use crate::seed;

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub type ShapeCode = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDecoder {
    pub f: Mlp,
    pub o: Mlp,
    pub p: Mlp,
    pub q: Mlp,
}

impl ShapeDecoder {
    pub fn specs(d: usize, parts: usize) -> Result<[MlpSpec; 4]> {
        let relu = Activation::Relu;
        Ok([
            MlpSpec::new(vec![3 + d, 256, 256, d], relu, OutputActivation::Identity)?,
            MlpSpec::new(vec![d, 128, 1], relu, OutputActivation::Sigmoid)?,
            MlpSpec::new(vec![d, 128, parts], relu, OutputActivation::Softmax)?,
            MlpSpec::new(vec![2 * d, 256, 3], relu, OutputActivation::Identity)?,
        ])
    }

    /// Kaiming-initialized decoder.
    pub fn new(d: usize, parts: usize, seed: u64) -> Result<Self> {
        let [f, o, p, q] = Self::specs(d, parts)?;
        Ok(Self {
            f: Mlp::kaiming(f, seed::derive(seed, "f")),
            o: Mlp::kaiming(o, seed::derive(seed, "o")),
            p: Mlp::kaiming(p, seed::derive(seed, "p")),
            q: Mlp::kaiming(q, seed::derive(seed, "q")),
        })
    }

    pub fn zeros(d: usize, parts: usize) -> Result<Self> {
        let [f, o, p, q] = Self::specs(d, parts)?;
        Ok(Self {
            f: Mlp::zeros(f),
            o: Mlp::zeros(o),
            p: Mlp::zeros(p),
            q: Mlp::zeros(q),
        })
    }

    pub fn code_dim(&self) -> usize {
        self.f.output_dim()
    }

    pub fn part_count(&self) -> usize {
        self.p.output_dim()
    }

    fn validate(&self) -> Result<()> {
        let d = self.code_dim();
        check_dims("F input", 3 + d, self.f.input_dim())?;
        check_dims("O input", d, self.o.input_dim())?;
        check_dims("P input", d, self.p.input_dim())?;
        check_dims("Q input", 2 * d, self.q.input_dim())?;
        check_dims("Q output", 3, self.q.output_dim())?;
        check_dims("O output", 1, self.o.output_dim())
    }

    pub fn nets(&self) -> [&Mlp; 4] {
        [&self.f, &self.o, &self.p, &self.q]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.f, &mut self.o, &mut self.p, &mut self.q]
    }

    /// `e = F(x, s)`.
    pub fn embed(&self, x: &Vec3, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_batch(std::slice::from_ref(x), s)?)
    }

    /// Embeddings of many points under one code, `points.len() x d` row-major.
    pub fn embed_batch(&self, points: &[Vec3], s: &[f64]) -> Result<Vec<f64>> {
        check_dims("shape code", self.code_dim(), s.len())?;
        let input = stack_points_with(points, s);
        Ok(self.f.forward_batch(&input, points.len())?.output().to_vec())
    }

    pub fn predict_occupancy(&self, e: &[f64]) -> Result<f64> {
        Ok(self.o.forward(e)?.0[0])
    }

    pub fn predict_parts(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.p.forward(e)?.0)
    }

    /// `x_hat = Q(s, e)`.
    pub fn invert(&self, s: &[f64], e: &[f64]) -> Result<Vec3> {
        check_dims("shape code", self.code_dim(), s.len())?;
        let mut input = s.to_vec();
        input.extend_from_slice(e);
        let y = self.q.forward(&input)?.0;
        Ok(Vec3::new(y[0], y[1], y[2]))
    }

    /// Occupancy probabilities of many points under one code.
    pub fn occupancy_batch(&self, points: &[Vec3], s: &[f64]) -> Result<Vec<f64>> {
        let e = self.embed_batch(points, s)?;
        Ok(self.o.forward_batch(&e, points.len())?.output().to_vec())
    }

    /// Part probabilities of many points under one code, `points.len() x K`.
    pub fn parts_batch(&self, points: &[Vec3], s: &[f64]) -> Result<Vec<f64>> {
        let e = self.embed_batch(points, s)?;
        Ok(self.p.forward_batch(&e, points.len())?.output().to_vec())
    }

    pub fn to_checkpoint(&self, codes: &[(String, ShapeCode)]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, net) in ["f", "o", "p", "q"].iter().zip(self.nets()) {
            ck.insert_mlp(&format!("net/{name}"), net);
        }
        for (i, (id, code)) in codes.iter().enumerate() {
            ck.insert(format!("code/{i:05}/{id}"), Tensor::vector(code));
        }
        ck.insert("meta/d", Tensor::scalar(self.code_dim() as f64));
        ck.insert("meta/parts", Tensor::scalar(self.part_count() as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vec<(String, ShapeCode)>)> {
        let decoder = Self {
            f: ck.mlp("net/f")?,
            o: ck.mlp("net/o")?,
            p: ck.mlp("net/p")?,
            q: ck.mlp("net/q")?,
        };
        decoder.validate()?;
        check_dims("checkpoint d", decoder.code_dim(), ck.scalar("meta/d")? as usize)?;
        check_dims("checkpoint parts", decoder.part_count(), ck.scalar("meta/parts")? as usize)?;
        let mut codes = Vec::new();
        for name in ck.names() {
            if let Some(rest) = name.strip_prefix("code/") {
                let id = rest.split_once('/').map(|(_, id)| id).unwrap_or(rest);
                let code = ck.vector(name)?.to_vec();
                check_dims("checkpoint code", decoder.code_dim(), code.len())?;
                codes.push((id.to_string(), code));
            }
        }
        Ok((decoder, codes))
    }

    pub fn save(&self, codes: &[(String, ShapeCode)], path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(codes).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<(String, ShapeCode)>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn stack_points_with(points: &[Vec3], s: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(points.len() * (3 + s.len()));
    for p in points {
        input.extend_from_slice(&[p.x, p.y, p.z]);
        input.extend_from_slice(s);
    }
    input
}

// ---------------------------------------------------------------------------
// Losses

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (c, c != p)
}

/// Binary cross-entropy of one prediction and its derivative with respect to the
/// prediction (zero where the clamp is active).
pub(crate) fn bce_point(pred: f64, truth: bool) -> (f64, f64) {
    let (p, clamped) = clamp_prob(pred);
    let (loss, grad) = if truth {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    };
    (loss, if clamped { 0.0 } else { grad })
}

/// Negative log-likelihood of the true-class probability, clamped from below.
pub(crate) fn nll_point(p_true: f64) -> (f64, f64) {
    if p_true < PROB_CLAMP {
        (-PROB_CLAMP.ln(), 0.0)
    } else {
        (-p_true.ln(), -1.0 / p_true)
    }
}

/// Summed binary cross-entropy.
pub fn loss_occupancy(pred: &[f64], truth: &[bool]) -> Result<f64> {
    check_dims("occupancy loss", pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).map(|(&p, &t)| bce_point(p, t).0).sum())
}

/// Summed negative log-likelihood of the true classes.
pub fn loss_part(pred: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    check_dims("part loss", pred.len(), truth.len())?;
    let mut total = 0.0;
    for (p, &k) in pred.iter().zip(truth) {
        if k >= p.len() {
            return Err(Error::Invalid(format!("part index {k} out of range 0..{}", p.len())));
        }
        total += nll_point(p[k]).0;
    }
    Ok(total)
}

/// Summed squared Euclidean error.
pub fn loss_inverse(x_hat: &[Vec3], x: &[Vec3]) -> Result<f64> {
    check_dims("inverse loss", x.len(), x_hat.len())?;
    Ok(x_hat.iter().zip(x).map(|(a, b)| (a - b).norm_squared()).sum())
}

/// One supervision point for the shape losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRow {
    pub x: Vec3,
    pub code: usize,
    pub occupancy: Option<bool>,
    pub part: Option<usize>,
    pub inverse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeLossWeights {
    pub occupancy: f64,
    pub part: f64,
    pub inverse: f64,
}

impl Default for ShapeLossWeights {
    fn default() -> Self {
        Self {
            occupancy: 1.0,
            part: 1.0,
            inverse: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeLossTerms {
    pub occupancy: f64,
    pub part: f64,
    pub inverse: f64,
    pub total: f64,
}

/// Gradient buffers. A `None` network slot skips that network's parameter gradients.
#[derive(Debug, Clone)]
pub struct ShapeGrads {
    pub f: Option<Gradients>,
    pub o: Option<Gradients>,
    pub p: Option<Gradients>,
    pub q: Option<Gradients>,
    pub codes: Vec<Vec<f64>>,
}

impl ShapeGrads {
    pub fn zeros(decoder: &ShapeDecoder, codes: usize, with_params: bool) -> Self {
        let g = |n: &Mlp| with_params.then(|| Gradients::zeros_like(n));
        Self {
            f: g(&decoder.f),
            o: g(&decoder.o),
            p: g(&decoder.p),
            q: g(&decoder.q),
            codes: vec![vec![0.0; decoder.code_dim()]; codes],
        }
    }
}

/// Weighted `L_O + L_P + L_Q` over `rows`, accumulating gradients into `grads` when
/// given.
pub fn shape_loss_and_grad(
    decoder: &ShapeDecoder,
    codes: &[ShapeCode],
    rows: &[ShapeRow],
    weights: ShapeLossWeights,
    grads: Option<&mut ShapeGrads>,
) -> Result<ShapeLossTerms> {
    let d = decoder.code_dim();
    let k = decoder.part_count();
    let n = rows.len();
    for r in rows {
        if r.code >= codes.len() {
            return Err(Error::Invalid(format!("code index {} out of range", r.code)));
        }
        check_dims("shape code", d, codes[r.code].len())?;
        if let Some(p) = r.part {
            if p >= k {
                return Err(Error::Invalid(format!("part index {p} out of range 0..{k}")));
            }
        }
    }
    if n == 0 {
        return Ok(ShapeLossTerms::default());
    }

    let mut f_in = Vec::with_capacity(n * (3 + d));
    for r in rows {
        f_in.extend_from_slice(&[r.x.x, r.x.y, r.x.z]);
        f_in.extend_from_slice(&codes[r.code]);
    }
    let f_tape = decoder.f.forward_batch(&f_in, n)?;
    let e = f_tape.output();

    let use_o = rows.iter().any(|r| r.occupancy.is_some());
    let use_p = rows.iter().any(|r| r.part.is_some());
    let use_q = rows.iter().any(|r| r.inverse);
    let o_tape = use_o.then(|| decoder.o.forward_batch(e, n)).transpose()?;
    let p_tape = use_p.then(|| decoder.p.forward_batch(e, n)).transpose()?;
    let q_in = use_q.then(|| {
        let mut q_in = Vec::with_capacity(n * 2 * d);
        for (i, r) in rows.iter().enumerate() {
            q_in.extend_from_slice(&codes[r.code]);
            q_in.extend_from_slice(&e[i * d..(i + 1) * d]);
        }
        q_in
    });
    let q_tape = q_in.map(|q| decoder.q.forward_batch(&q, n)).transpose()?;

    let mut terms = ShapeLossTerms::default();
    let mut go = vec![0.0; if use_o { n } else { 0 }];
    let mut gp = vec![0.0; if use_p { n * k } else { 0 }];
    let mut gq = vec![0.0; if use_q { n * 3 } else { 0 }];
    for (i, r) in rows.iter().enumerate() {
        if let (Some(t), Some(tape)) = (r.occupancy, &o_tape) {
            let (l, g) = bce_point(tape.output()[i], t);
            terms.occupancy += l;
            go[i] = weights.occupancy * g;
        }
        if let (Some(c), Some(tape)) = (r.part, &p_tape) {
            let (l, g) = nll_point(tape.output()[i * k + c]);
            terms.part += l;
            gp[i * k + c] = weights.part * g;
        }
        if let (true, Some(tape)) = (r.inverse, &q_tape) {
            let y = &tape.output()[i * 3..i * 3 + 3];
            let diff = Vec3::new(y[0], y[1], y[2]) - r.x;
            terms.inverse += diff.norm_squared();
            for c in 0..3 {
                gq[i * 3 + c] = weights.inverse * 2.0 * diff[c];
            }
        }
    }
    terms.total = weights.occupancy * terms.occupancy
        + weights.part * terms.part
        + weights.inverse * terms.inverse;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("shape loss".into()));
    }

    let Some(g) = grads else {
        return Ok(terms);
    };
    check_dims("code gradients", codes.len(), g.codes.len())?;
    let mut de = vec![0.0; n * d];
    if let Some(tape) = &o_tape {
        let gi = decoder.o.backward_batch(tape, &go, g.o.as_mut())?;
        de.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    if let Some(tape) = &p_tape {
        let gi = decoder.p.backward_batch(tape, &gp, g.p.as_mut())?;
        de.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    if let Some(tape) = &q_tape {
        let gi = decoder.q.backward_batch(tape, &gq, g.q.as_mut())?;
        for (i, r) in rows.iter().enumerate() {
            let row = &gi[i * 2 * d..(i + 1) * 2 * d];
            g.codes[r.code].iter_mut().zip(&row[..d]).for_each(|(a, b)| *a += b);
            de[i * d..(i + 1) * d].iter_mut().zip(&row[d..]).for_each(|(a, b)| *a += b);
        }
    }
    let gf = decoder.f.backward_batch(&f_tape, &de, g.f.as_mut())?;
    for (i, r) in rows.iter().enumerate() {
        let row = &gf[i * (3 + d) + 3..(i + 1) * (3 + d)];
        g.codes[r.code].iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(terms)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone)]
pub struct ShapeTrainItem {
    pub id: String,
    pub mesh: Mesh,
    /// Per-vertex part labels; `None` for unlabeled (stylized) characters.
    pub vertex_labels: Option<Vec<usize>>,
}

impl ShapeTrainItem {
    pub fn labeled(&self) -> bool {
        self.vertex_labels.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeConfig {
    pub code_dim: usize,
    pub parts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub code_learning_rate: f64,
    /// Characters per step.
    pub batch_characters: usize,
    /// Query points per character per step.
    pub points_per_character: usize,
    /// Surface points (part supervision) per labeled character per step.
    pub surface_per_character: usize,
    /// Size of each character's query and surface pools; pools are redrawn once used up.
    pub pool_size: usize,
    pub sigma: f64,
    pub code_init_std: f64,
    pub weights: ShapeLossWeights,
    pub seed: u64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            code_dim: 128,
            parts: 16,
            steps: 3000,
            learning_rate: 1e-4,
            code_learning_rate: 1e-4,
            batch_characters: 64,
            points_per_character: 256,
            surface_per_character: 128,
            pool_size: 10_000,
            sigma: crate::mesh::DEFAULT_QUERY_SIGMA,
            code_init_std: 0.01,
            weights: ShapeLossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShapeTraining {
    pub decoder: ShapeDecoder,
    pub codes: Vec<ShapeCode>,
    pub history: Vec<ShapeLossTerms>,
    /// Occupancy accuracy of each item on freshly drawn queries after training.
    pub occupancy_accuracy: Vec<f64>,
}

impl ShapeTraining {
    pub fn named_codes(&self, items: &[ShapeTrainItem]) -> Vec<(String, ShapeCode)> {
        items.iter().map(|i| i.id.clone()).zip(self.codes.iter().cloned()).collect()
    }
}

pub fn init_code(d: usize, std: f64, seed: u64) -> Result<ShapeCode> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    Ok((0..d).map(|_| normal.sample(&mut rng)).collect())
}

struct Pool {
    queries: Vec<QuerySample>,
    surface: Vec<(Vec3, Option<usize>)>,
    query_cursor: usize,
    surface_cursor: usize,
    epoch: u64,
}

fn surface_labels(mesh: &Mesh, samples: &[SurfacePoint], labels: Option<&Vec<usize>>) -> Vec<(Vec3, Option<usize>)> {
    samples
        .iter()
        .map(|s| {
            let label = labels.map(|l| l[mesh.faces[s.face][s.dominant_corner()]]);
            (s.position, label)
        })
        .collect()
}

impl Pool {
    fn draw(item: &ShapeTrainItem, cfg: &ShapeConfig, root: u64, index: usize, epoch: u64) -> Result<Self> {
        let s = seed::derive_indexed(seed::derive_indexed(root, "pool", index as u64), "epoch", epoch);
        let queries = sample_queries(&item.mesh, cfg.pool_size, cfg.sigma, seed::derive(s, "queries"))?;
        let surface = match &item.vertex_labels {
            Some(labels) => {
                // half area-uniform samples, half mesh vertices
                let n_area = cfg.pool_size.div_ceil(2);
                let pts = sample_surface(&item.mesh, n_area, seed::derive(s, "surface"))?;
                let mut pool = surface_labels(&item.mesh, &pts, Some(labels));
                let mut rng = seed::rng(seed::derive(s, "vertices"));
                pool.extend((n_area..cfg.pool_size).map(|_| {
                    let v = rng.random_range(0..item.mesh.vertex_count());
                    (item.mesh.vertices[v], Some(labels[v]))
                }));
                pool.shuffle(&mut rng);
                pool
            }
            None => Vec::new(),
        };
        Ok(Self {
            queries,
            surface,
            query_cursor: 0,
            surface_cursor: 0,
            epoch,
        })
    }

    fn exhausted(&self, cfg: &ShapeConfig) -> bool {
        self.query_cursor + cfg.points_per_character > self.queries.len()
            || (!self.surface.is_empty()
                && self.surface_cursor + cfg.surface_per_character > self.surface.len())
    }
}

fn check_items(items: &[ShapeTrainItem], parts: usize) -> Result<()> {
    if !items.iter().any(ShapeTrainItem::labeled) {
        return Err(Error::Invalid("shape training needs at least one labeled item".into()));
    }
    for it in items {
        if let Some(l) = &it.vertex_labels {
            check_dims("vertex labels", it.mesh.vertex_count(), l.len())?;
            if let Some(bad) = l.iter().find(|&&x| x >= parts) {
                return Err(Error::Invalid(format!("{}: part label {bad} >= {parts}", it.id)));
            }
        }
    }
    Ok(())
}

/// Joint Adam optimization of the decoder and one code per item.
pub fn train_shape_module(items: &[ShapeTrainItem], cfg: &ShapeConfig) -> Result<ShapeTraining> {
    check_items(items, cfg.parts)?;
    if cfg.points_per_character > cfg.pool_size || cfg.surface_per_character > cfg.pool_size {
        return Err(Error::Config("per-step point counts exceed the pool size".into()));
    }
    let root = cfg.seed;
    let mut decoder = ShapeDecoder::new(cfg.code_dim, cfg.parts, seed::derive(root, "decoder"))?;
    let mut codes: Vec<ShapeCode> = (0..items.len())
        .map(|i| init_code(cfg.code_dim, cfg.code_init_std, seed::derive_indexed(root, "code", i as u64)))
        .collect::<Result<_>>()?;
    let mut pools: Vec<Pool> = items
        .iter()
        .enumerate()
        .map(|(i, it)| Pool::draw(it, cfg, root, i, 0))
        .collect::<Result<_>>()?;

    let mut adam_net = {
        let shapes: Vec<usize> = decoder
            .nets()
            .iter()
            .flat_map(|n| n.params().into_iter().map(<[f64]>::len).collect::<Vec<_>>())
            .collect();
        AdamState::new(cfg.learning_rate, shapes)
    };
    let mut adam_code = AdamState::new(cfg.code_learning_rate, vec![cfg.code_dim; items.len()]);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut batch_rng = seed::rng(seed::derive(root, "batches"));
    let mut order: Vec<usize> = (0..items.len()).collect();

    for step in 0..cfg.steps {
        let chosen: Vec<usize> = if items.len() <= cfg.batch_characters {
            order.clone()
        } else {
            order.shuffle(&mut batch_rng);
            let mut c = order[..cfg.batch_characters].to_vec();
            c.sort_unstable();
            c
        };
        let mut rows = Vec::new();
        for &i in &chosen {
            if pools[i].exhausted(cfg) {
                let next = pools[i].epoch + 1;
                pools[i] = Pool::draw(&items[i], cfg, root, i, next)?;
            }
            let pool = &mut pools[i];
            for q in &pool.queries[pool.query_cursor..pool.query_cursor + cfg.points_per_character] {
                rows.push(ShapeRow {
                    x: q.position,
                    code: i,
                    occupancy: Some(q.occupied),
                    part: None,
                    inverse: true,
                });
            }
            pool.query_cursor += cfg.points_per_character;
            if !pool.surface.is_empty() {
                let end = pool.surface_cursor + cfg.surface_per_character;
                for &(x, label) in &pool.surface[pool.surface_cursor..end] {
                    rows.push(ShapeRow {
                        x,
                        code: i,
                        occupancy: None,
                        part: label,
                        inverse: false,
                    });
                }
                pool.surface_cursor = end;
            }
        }

        let mut grads = ShapeGrads::zeros(&decoder, items.len(), true);
        let terms = shape_loss_and_grad(&decoder, &codes, &rows, cfg.weights, Some(&mut grads))
            .map_err(|_| Error::Divergence { step, loss: f64::NAN })?;
        if !terms.total.is_finite() {
            return Err(Error::Divergence { step, loss: terms.total });
        }
        history.push(terms);

        let ShapeGrads { f, o, p, q, codes: code_grads } = grads;
        let net_grads: Vec<Gradients> = [f, o, p, q].into_iter().map(Option::unwrap).collect();
        let gslices: Vec<&[f64]> = net_grads.iter().flat_map(|g| g.slices()).collect();
        {
            let [fm, om, pm, qm] = decoder.nets_mut();
            let mut params: Vec<&mut [f64]> = Vec::new();
            for net in [fm, om, pm, qm] {
                params.extend(net.params_mut());
            }
            adam_net
                .update(&mut params, &gslices)
                .map_err(|_| Error::Divergence { step, loss: terms.total })?;
        }
        let mut cparams: Vec<&mut [f64]> = codes.iter_mut().map(|c| c.as_mut_slice()).collect();
        let cgrads: Vec<&[f64]> = code_grads.iter().map(|c| c.as_slice()).collect();
        adam_code
            .update(&mut cparams, &cgrads)
            .map_err(|_| Error::Divergence { step, loss: terms.total })?;
        if step % 500 == 0 || step + 1 == cfg.steps {
            log::info!(
                "shape step {step}: total {:.4} occ {:.4} part {:.4} inv {:.4}",
                terms.total,
                terms.occupancy,
                terms.part,
                terms.inverse
            );
        }
    }

    let occupancy_accuracy = items
        .iter()
        .zip(&codes)
        .enumerate()
        .map(|(i, (it, code))| {
            let q = sample_queries(&it.mesh, 2000, cfg.sigma, seed::derive_indexed(root, "final-eval", i as u64))?;
            occupancy_accuracy(&decoder, code, &q)
        })
        .collect::<Result<_>>()?;
    Ok(ShapeTraining {
        decoder,
        codes,
        history,
        occupancy_accuracy,
    })
}

/// Fraction of queries whose predicted occupancy (`>= 0.5`) matches the label.
pub fn occupancy_accuracy(decoder: &ShapeDecoder, code: &[f64], queries: &[QuerySample]) -> Result<f64> {
    if queries.is_empty() {
        return Ok(1.0);
    }
    let pts: Vec<Vec3> = queries.iter().map(|q| q.position).collect();
    let probs = decoder.occupancy_batch(&pts, code)?;
    let correct = probs
        .iter()
        .zip(queries)
        .filter(|(&p, q)| (p >= 0.5) == q.occupied)
        .count();
    Ok(correct as f64 / queries.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch: usize,
    pub pool_size: usize,
    pub learning_rate: f64,
    pub sigma: f64,
    pub code_init_std: f64,
    pub weights: ShapeLossWeights,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 2000,
            pool_size: 10_000,
            learning_rate: 1e-4,
            sigma: crate::mesh::DEFAULT_QUERY_SIGMA,
            code_init_std: 0.01,
            weights: ShapeLossWeights {
                occupancy: 1.0,
                part: 0.0,
                inverse: 1.0,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub code: ShapeCode,
    pub history: Vec<ShapeLossTerms>,
}

/// Optimizes a fresh code for `mesh` against the frozen decoder (`L_O + L_Q` by
/// default). The code starts from `init` when given, otherwise from a seeded
/// `N(0, code_init_std^2)` draw.
pub fn fit_shape_code(
    mesh: &Mesh,
    decoder: &ShapeDecoder,
    cfg: &FitConfig,
    init: Option<&[f64]>,
) -> Result<FitResult> {
    let d = decoder.code_dim();
    let mut code = match init {
        Some(c) => {
            check_dims("initial code", d, c.len())?;
            c.to_vec()
        }
        None => init_code(d, cfg.code_init_std, seed::derive(cfg.seed, "init"))?,
    };
    if cfg.iterations == 0 {
        return Ok(FitResult {
            code,
            history: Vec::new(),
        });
    }
    let batch = cfg.batch.min(cfg.pool_size).max(1);
    let pool = sample_queries(mesh, cfg.pool_size, cfg.sigma, seed::derive(cfg.seed, "pool"))?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = seed::rng(seed::derive(cfg.seed, "batches"));
    let mut cursor = pool.len();
    let mut adam = AdamState::new(cfg.learning_rate, [d]);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if cursor + batch > pool.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows: Vec<ShapeRow> = order[cursor..cursor + batch]
            .iter()
            .map(|&i| ShapeRow {
                x: pool[i].position,
                code: 0,
                occupancy: Some(pool[i].occupied),
                part: None,
                inverse: cfg.weights.inverse != 0.0,
            })
            .collect();
        cursor += batch;
        let codes = [code];
        let mut grads = ShapeGrads::zeros(decoder, 1, false);
        let terms = shape_loss_and_grad(decoder, &codes, &rows, cfg.weights, Some(&mut grads))
            .map_err(|_| Error::Divergence { step: it, loss: f64::NAN })?;
        let [c] = codes;
        code = c;
        history.push(terms);
        adam.update(&mut [code.as_mut_slice()], &[&grads.codes[0]])
            .map_err(|_| Error::Divergence { step: it, loss: terms.total })?;
    }
    Ok(FitResult { code, history })
}

/// Per-vertex `argmax P(F(v, s))`, ties to the lowest part index.
pub fn segment_mesh(mesh: &Mesh, code: &[f64], decoder: &ShapeDecoder) -> Result<Vec<usize>> {
    segment_points(&mesh.vertices, code, decoder)
}

pub fn segment_points(points: &[Vec3], code: &[f64], decoder: &ShapeDecoder) -> Result<Vec<usize>> {
    let k = decoder.part_count();
    let mut labels = Vec::with_capacity(points.len());
    for chunk in points.chunks(4096) {
        let probs = decoder.parts_batch(chunk, code)?;
        labels.extend(probs.chunks(k).map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        }));
    }
    Ok(labels)
}

/// The codes of `ids`, in order, looked up by name.
pub fn codes_for(named: &[(String, ShapeCode)], ids: &[String]) -> Result<Vec<ShapeCode>> {
    ids.iter()
        .map(|id| {
            named
                .iter()
                .find(|(k, _)| k == id)
                .map(|(_, c)| c.clone())
                .ok_or_else(|| Error::Invalid(format!("no shape code for character {id}")))
        })
        .collect()
}

/// Code with entries uniform in `[-0.5, 0.5)`, for tests and diagnostics.
pub fn random_code(d: usize, rng: &mut impl Rng) -> ShapeCode {
    (0..d).map(|_| rng.random_range(-0.5..0.5)).collect()
}
