//! A small dense multi-layer perceptron with hand-written backpropagation.
//!
//! Hidden layers use the rectifier (derivative 0 at 0); the output layer is
//! linear, logistic or softmax. Parameters are `f64` and stored row-major,
//! `weights[o * inputs + i]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Logistic,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *acc += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Activations recorded by [`Mlp::forward_trace`]: `values[0]` is the input,
/// `values[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }
}

/// Gradients matching one [`Mlp`]'s shape, plus the gradient w.r.t. its input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<Dense>,
    pub input: Vec<f64>,
}

impl GradientTape {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &GradientTape) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += b;
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.params_mut().for_each(|g| *g *= c);
        self.input.iter_mut().for_each(|g| *g *= c);
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite) && self.input.iter().all(|g| g.is_finite())
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for l in &mut net.layers {
            let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            l.weights.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(domain(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(domain("a network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            check_dim(l.inputs * l.outputs, l.weights.len())?;
            check_dim(l.outputs, l.bias.len())?;
            if k > 0 {
                check_dim(layers[k - 1].outputs, l.inputs)?;
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameter".into()));
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.values.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim(self.input_dim(), x.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&values[k], &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                apply_output(self.output, &mut z);
            }
            values.push(z);
        }
        Ok(Trace { values })
    }

    /// Gradients of `upstream · output` w.r.t. every parameter and the input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<GradientTape> {
        let mut tape = GradientTape::zeros_like(self);
        self.backward_into(trace, upstream, &mut tape)?;
        Ok(tape)
    }

    /// Like [`Mlp::backward`] but accumulates into `tape`.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], tape: &mut GradientTape) -> Result<()> {
        let input = self.propagate(trace, upstream, Some(&mut tape.layers))?;
        for (g, d) in tape.input.iter_mut().zip(input) {
            *g += d;
        }
        Ok(())
    }

    /// Gradient w.r.t. the input only; used for frozen networks.
    pub fn input_gradient(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.propagate(trace, upstream, None)
    }

    fn propagate(&self, trace: &Trace, upstream: &[f64], mut grads: Option<&mut Vec<Dense>>) -> Result<Vec<f64>> {
        check_dim(self.output_dim(), upstream.len())?;
        check_dim(self.layers.len() + 1, trace.values.len())?;
        let out = trace.output();
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Linear => upstream.to_vec(),
            OutputActivation::Logistic => upstream
                .iter()
                .zip(out)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
            OutputActivation::Softmax => {
                let dot: f64 = upstream.iter().zip(out).map(|(g, y)| g * y).sum();
                upstream.iter().zip(out).map(|(g, y)| y * (g - dot)).collect()
            }
        };
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.values[k];
            if let Some(grads) = grads.as_deref_mut() {
                let grad = &mut grads[k];
                for (o, &d) in delta.iter().enumerate() {
                    grad.bias[o] += d;
                    let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if k > 0 {
                // Rectifier derivative, taken as 0 at 0.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            sizes: self.sizes(),
            hidden: "relu".to_string(),
            output: self.output,
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(domain(format!("unsupported checkpoint version {}", c.version)));
        }
        if c.hidden != "relu" {
            return Err(domain(format!("unsupported hidden activation {:?}", c.hidden)));
        }
        let net = Self::from_layers(c.layers, c.output)?;
        if net.sizes() != c.sizes {
            return Err(domain("checkpoint sizes disagree with its layers"));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }
}

fn apply_output(act: OutputActivation, z: &mut [f64]) {
    match act {
        OutputActivation::Linear => {}
        OutputActivation::Logistic => z.iter_mut().for_each(|v| *v = logistic(*v)),
        OutputActivation::Softmax => softmax_in_place(z),
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network. JSON floats are written in shortest round-trip form,
/// so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub sizes: Vec<usize>,
    pub hidden: String,
    pub output: OutputActivation,
    pub layers: Vec<Dense>,
}

/// First-order update rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with per-parameter state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Mlp) -> Self {
        let n = net.num_params();
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum { .. } => (vec![0.0; n], Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            lr,
            step: 0,
            first,
            second,
        }
    }

    /// Adam with the default decay rates and `lr = 1e-3`.
    pub fn adam(net: &Mlp) -> Self {
        Self::new(OptimizerKind::default(), 1e-3, net)
    }

    /// Applies one descent step. Non-finite gradients leave `net` untouched.
    pub fn step(&mut self, net: &mut Mlp, tape: &GradientTape) -> Result<()> {
        check_dim(net.num_params(), tape.params().count())?;
        if !tape.params().all(f64::is_finite) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.params_mut().zip(tape.params()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((p, g), v) in net.params_mut().zip(tape.params()).zip(&mut self.first) {
                    *v = beta * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in net
                    .params_mut()
                    .zip(tape.params())
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Plain gradient step `p <- p - lr * g`.
pub fn sgd_step(net: &mut Mlp, tape: &GradientTape, lr: f64) -> Result<()> {
    Optimizer::new(OptimizerKind::Sgd, lr, net).step(net, tape)
}
