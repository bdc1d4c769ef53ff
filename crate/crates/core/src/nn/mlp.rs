use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub(crate) fn code(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Softplus => 1.0,
        }
    }

    pub(crate) fn from_code(c: f64) -> Option<Self> {
        match c as i64 {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

impl OutputActivation {
    pub(crate) fn code(self) -> f64 {
        match self {
            OutputActivation::Identity => 0.0,
            OutputActivation::Sigmoid => 1.0,
            OutputActivation::Softmax => 2.0,
        }
    }

    pub(crate) fn from_code(c: f64) -> Option<Self> {
        match c as i64 {
            0 => Some(OutputActivation::Identity),
            1 => Some(OutputActivation::Sigmoid),
            2 => Some(OutputActivation::Softmax),
            _ => None,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Invalid(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self {
            widths,
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// One affine layer. `weight` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Activation record of a (batched) forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    /// Input to each layer, `rows x inputs`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer, `rows x outputs`.
    pre: Vec<Vec<f64>>,
    /// Network output after the output activation, `rows x output_dim`.
    output: Vec<f64>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.output.len() / self.rows.max(1);
        &self.output[r * w..(r + 1) * w]
    }
}

/// Parameter gradients with the same shapes as the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&x| x == 0.0))
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= k);
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable with the given dimensions and
    // strides; callers pass row-major buffers of exactly these shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// All weights and biases zero.
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Self { spec, layers }
    }

    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
    pub fn kaiming(spec: MlpSpec, seed: u64) -> Self {
        let mut net = Self::zeros(spec);
        let mut rng = seed::rng(seed);
        for l in &mut net.layers {
            let bound = (6.0 / l.inputs as f64).sqrt();
            l.weight
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-bound..bound));
        }
        net
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        check_dims("mlp layer count", spec.widths.len() - 1, layers.len())?;
        for (l, w) in layers.iter().zip(spec.widths.windows(2)) {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weight.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(Error::Invalid(format!(
                    "layer shape {}x{} does not match widths {:?}",
                    l.outputs, l.inputs, w
                )));
            }
        }
        let net = Self { spec, layers };
        if !net.all_finite() {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        Ok(net)
    }

    /// Zeroes the last layer so the network outputs exactly zero (identity output
    /// activation) until trained.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let tape = self.forward_batch(input, 1)?;
        Ok((tape.output.clone(), tape))
    }

    /// Forward pass over `rows` inputs stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Result<Tape> {
        check_dims("mlp input", rows * self.input_dim(), inputs.len())?;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut current = inputs.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(rows * layer.outputs);
            for _ in 0..rows {
                pre.extend_from_slice(&layer.bias);
            }
            gemm(
                rows,
                layer.inputs,
                layer.outputs,
                1.0,
                &current,
                (layer.inputs as isize, 1),
                &layer.weight,
                (1, layer.inputs as isize),
                1.0,
                &mut pre,
            );
            let next: Vec<f64> = if li == last {
                self.output_activation(&pre, rows)
            } else {
                pre.iter().map(|&z| self.spec.hidden.apply(z)).collect()
            };
            layer_inputs.push(std::mem::replace(&mut current, next));
            pre_acts.push(pre);
        }
        Ok(Tape {
            rows,
            inputs: layer_inputs,
            pre: pre_acts,
            output: current,
        })
    }

    fn output_activation(&self, pre: &[f64], rows: usize) -> Vec<f64> {
        match self.spec.output {
            OutputActivation::Identity => pre.to_vec(),
            OutputActivation::Sigmoid => pre.iter().map(|&z| sigmoid(z)).collect(),
            OutputActivation::Softmax => {
                let w = self.output_dim();
                let mut out = Vec::with_capacity(pre.len());
                for r in 0..rows {
                    let row = &pre[r * w..(r + 1) * w];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    out.extend(exps.iter().map(|e| e / sum));
                }
                out
            }
        }
    }

    /// Single-input backward pass: parameter gradients and the input gradient for the
    /// loss whose gradient with respect to the network output is `output_grad`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_batch(tape, output_grad, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Batched backward pass. Parameter gradients are summed over rows and *added* to
    /// `grads` when given; the per-row input gradients are returned.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        let rows = tape.rows;
        check_dims("mlp output grad", rows * self.output_dim(), output_grad.len())?;
        check_dims("mlp tape", self.layers.len(), tape.pre.len())?;
        if let Some(g) = grads.as_deref() {
            check_dims("gradient layers", self.layers.len(), g.layers.len())?;
        }

        let mut delta = self.output_activation_backward(tape, output_grad);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &tape.inputs[li];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[li];
                // dW (out x in) += delta^T (out x rows) * input (rows x in)
                gemm(
                    layer.outputs,
                    rows,
                    layer.inputs,
                    1.0,
                    &delta,
                    (1, layer.outputs as isize),
                    input,
                    (layer.inputs as isize, 1),
                    1.0,
                    &mut gl.weight,
                );
                for r in 0..rows {
                    let d = &delta[r * layer.outputs..(r + 1) * layer.outputs];
                    gl.bias.iter_mut().zip(d).for_each(|(b, x)| *b += x);
                }
            }
            // d input (rows x in) = delta (rows x out) * W (out x in)
            let mut d_input = vec![0.0; rows * layer.inputs];
            gemm(
                rows,
                layer.outputs,
                layer.inputs,
                1.0,
                &delta,
                (layer.outputs as isize, 1),
                &layer.weight,
                (layer.inputs as isize, 1),
                0.0,
                &mut d_input,
            );
            if li > 0 {
                let pre = &tape.pre[li - 1];
                d_input
                    .iter_mut()
                    .zip(pre)
                    .for_each(|(d, &z)| *d *= self.spec.hidden.derivative(z));
            }
            delta = d_input;
        }
        Ok(delta)
    }

    fn output_activation_backward(&self, tape: &Tape, output_grad: &[f64]) -> Vec<f64> {
        let y = &tape.output;
        match self.spec.output {
            OutputActivation::Identity => output_grad.to_vec(),
            OutputActivation::Sigmoid => output_grad
                .iter()
                .zip(y)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
            OutputActivation::Softmax => {
                let w = self.output_dim();
                let mut out = Vec::with_capacity(y.len());
                for r in 0..tape.rows {
                    let yr = &y[r * w..(r + 1) * w];
                    let gr = &output_grad[r * w..(r + 1) * w];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    out.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                out
            }
        }
    }
}
