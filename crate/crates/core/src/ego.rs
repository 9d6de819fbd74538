//! Evaluator-generator weight optimization.
//!
//! The evaluator `M` predicts whether a (context, weights) pair beats the
//! baseline; a trainable network `M_R` distilling a frozen random network
//! `M_R*` measures how familiar an input is. The generator `g` maps a context
//! to weights and is trained through the frozen evaluator to maximize
//! `sigmoid(M) + alpha * ||M_R - M_R*||^2`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, domain, Error, Result};
use crate::neural::{logistic, softmax_in_place, Checkpoint, Mlp, Optimizer, OptimizerKind, OutputActivation};

/// Lower end of the generated decay range `(GAMMA_MIN, 1)`.
pub const GAMMA_MIN: f64 = 0.05;

const SIMPLEX_TOL: f64 = 1e-9;

/// One logged outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per-sub-model decay factors; empty when decay is not optimized.
    #[serde(default)]
    pub decay: Vec<f64>,
    /// Reward gap against the baseline, in `[-1, 1]`.
    pub label: f64,
    pub count: u64,
}

impl Sample {
    pub fn new(context: Vec<f64>, weights: Vec<f64>, decay: Vec<f64>, label: f64, count: u64) -> Result<Self> {
        let s = Self {
            context,
            weights,
            decay,
            label,
            count,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.label) {
            return Err(domain(format!("label {} outside [-1, 1]", self.label)));
        }
        if self.count == 0 {
            return Err(domain("sample count must be positive"));
        }
        check_simplex(&self.weights)?;
        if !self.decay.is_empty() {
            check_dim(self.weights.len(), self.decay.len())?;
            if self.decay.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
                return Err(domain("decay factors must lie in (0, 1]"));
            }
        }
        if !self.context.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("context".into()));
        }
        Ok(())
    }

    /// Evaluator input `context ⊕ weights ⊕ decay`.
    pub fn input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.context.len() + self.weights.len() + self.decay.len());
        x.extend(&self.context);
        x.extend(&self.weights);
        x.extend(&self.decay);
        x
    }

    fn key(&self) -> Vec<u64> {
        let mut k: Vec<u64> = self.context.iter().map(|v| v.to_bits()).collect();
        k.push(u64::MAX);
        k.extend(self.weights.iter().map(|v| v.to_bits()));
        k.push(u64::MAX);
        k.extend(self.decay.iter().map(|v| v.to_bits()));
        k
    }
}

pub fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(domain("empty weight vector"));
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(domain("weights must be finite and non-negative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(domain(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Samples keyed by (context, weights, decay). Pushing an existing key adds
/// the counts and takes the count-weighted mean label.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    index: HashMap<Vec<u64>, usize>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        sample.validate()?;
        if let Some(first) = self.samples.first() {
            check_dim(first.context.len(), sample.context.len())?;
            check_dim(first.weights.len(), sample.weights.len())?;
            check_dim(first.decay.len(), sample.decay.len())?;
        }
        match self.index.get(&sample.key()) {
            Some(&i) => {
                let s = &mut self.samples[i];
                let total = s.count + sample.count;
                s.label = (s.label * s.count as f64 + sample.label * sample.count as f64) / total as f64;
                s.count = total;
            }
            None => {
                self.index.insert(sample.key(), self.samples.len());
                self.samples.push(sample);
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total underlying interactions.
    pub fn total_count(&self) -> u64 {
        self.samples.iter().map(|s| s.count).sum()
    }

    /// Distinct contexts in first-seen order.
    pub fn contexts(&self) -> Vec<Vec<f64>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            let k: Vec<u64> = s.context.iter().map(|v| v.to_bits()).collect();
            if seen.insert(k) {
                out.push(s.context.clone());
            }
        }
        out
    }

    /// CSV `context_json,weights,label,count`; weights (then decay factors,
    /// if any) are `;`-separated.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["context_json", "weights", "label", "count"])?;
        for s in &self.samples {
            let weights: Vec<String> = s.weights.iter().chain(&s.decay).map(|v| format!("{v:?}")).collect();
            w.write_record([
                serde_json::to_string(&s.context)?,
                weights.join(";"),
                format!("{:?}", s.label),
                s.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`Dataset::write_csv`] output. `with_decay` says whether the
    /// weight column carries `2n` values.
    pub fn read_csv<R: Read>(reader: R, with_decay: bool) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut out = Dataset::new();
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let perr = |msg: String| Error::Parse { line, msg };
            if rec.len() != 4 {
                return Err(perr(format!("expected 4 fields, got {}", rec.len())));
            }
            let context: Vec<f64> = serde_json::from_str(&rec[0]).map_err(|e| perr(e.to_string()))?;
            let mut values = rec[1]
                .split(';')
                .map(|v| v.trim().parse::<f64>().map_err(|e| perr(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let decay = if with_decay {
                if values.len() % 2 != 0 {
                    return Err(perr("odd number of weight and decay values".into()));
                }
                values.split_off(values.len() / 2)
            } else {
                Vec::new()
            };
            let label = rec[2].trim().parse::<f64>().map_err(|e| perr(e.to_string()))?;
            let count = rec[3].trim().parse::<u64>().map_err(|e| perr(e.to_string()))?;
            let sample = Sample::new(context, values, decay, label, count).map_err(|e| perr(e.to_string()))?;
            out.push(sample).map_err(|e| perr(e.to_string()))?;
        }
        Ok(out)
    }
}

/// One raw context feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Categorical { name: String, levels: Vec<String> },
    Numeric { name: String, min: f64, max: f64 },
}

/// A raw feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Level(String),
}

/// Encodes raw contexts: categorical features one-hot, numeric features
/// min-max scaled and clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextSchema {
    pub features: Vec<Feature>,
}

impl ContextSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        for f in &features {
            match f {
                Feature::Categorical { name, levels } if levels.is_empty() => {
                    return Err(domain(format!("feature {name:?} has no levels")));
                }
                Feature::Numeric { name, min, max } if !(min < max) => {
                    return Err(domain(format!("feature {name:?} needs min < max")));
                }
                _ => {}
            }
        }
        Ok(Self { features })
    }

    pub fn dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                Feature::Categorical { levels, .. } => levels.len(),
                Feature::Numeric { .. } => 1,
            })
            .sum()
    }

    pub fn encode(&self, values: &[FeatureValue]) -> Result<Vec<f64>> {
        check_dim(self.features.len(), values.len())?;
        let mut out = Vec::with_capacity(self.dim());
        for (f, v) in self.features.iter().zip(values) {
            match (f, v) {
                (Feature::Categorical { name, levels }, FeatureValue::Level(l)) => {
                    let at = levels
                        .iter()
                        .position(|x| x == l)
                        .ok_or_else(|| domain(format!("unknown level {l:?} for {name:?}")))?;
                    out.extend((0..levels.len()).map(|k| if k == at { 1.0 } else { 0.0 }));
                }
                (Feature::Numeric { min, max, .. }, FeatureValue::Number(x)) => {
                    out.push(((x - min) / (max - min)).clamp(0.0, 1.0));
                }
                (f, v) => return Err(domain(format!("value {v:?} does not fit feature {f:?}"))),
            }
        }
        Ok(out)
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoConfig {
    pub hidden: Vec<usize>,
    pub rnd_dim: usize,
    /// Gain on the frozen target's output layer; sets the bonus scale.
    pub rnd_scale: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub evaluator_lr: f64,
    pub generator_steps: usize,
    pub generator_lr: f64,
    pub holdout_fraction: f64,
    pub with_decay: bool,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            rnd_dim: 8,
            rnd_scale: 3.0,
            alpha: 1.0,
            epochs: 200,
            batch_size: 32,
            evaluator_lr: 1e-3,
            generator_steps: 300,
            generator_lr: 1e-2,
            holdout_fraction: 0.1,
            with_decay: false,
        }
    }
}

impl EgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.rnd_dim == 0 || self.batch_size == 0 {
            return Err(domain("layer sizes and batch size must be positive"));
        }
        if !(self.rnd_scale > 0.0 && self.rnd_scale.is_finite()) {
            return Err(domain("rnd scale must be finite and positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(domain("alpha must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(domain("holdout fraction must lie in [0, 1)"));
        }
        if !(self.evaluator_lr > 0.0 && self.generator_lr > 0.0) {
            return Err(domain("learning rates must be positive"));
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }
}

/// Reward model `M`, distilled network `M_R` and its frozen target `M_R*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorBundle {
    pub model: Mlp,
    pub rnd: Mlp,
    pub target: Mlp,
}

impl EvaluatorBundle {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: &EgoConfig, rng: &mut R) -> Result<Self> {
        let model = Mlp::new(&config.sizes(input_dim, 1), OutputActivation::Linear, rng)?;
        let rnd = Mlp::new(&config.sizes(input_dim, config.rnd_dim), OutputActivation::Linear, rng)?;
        let mut target = Mlp::new(&config.sizes(input_dim, config.rnd_dim), OutputActivation::Linear, rng)?;
        let last = target.layers_mut().last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w *= config.rnd_scale);
        Ok(Self { model, rnd, target })
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// `sigmoid(M(x))`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(logistic(self.model.forward(x)?[0]))
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, computed stably.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sample_loss(bundle: &EvaluatorBundle, s: &Sample) -> Result<f64> {
    let x = s.input();
    let z = bundle.model.forward(&x)?[0];
    let y = if s.label > 0.0 { 1.0 } else { 0.0 };
    let wce = bce_with_logit(z, y) * s.count as f64 * s.label.abs();
    let r = bundle.rnd.forward(&x)?;
    let t = bundle.target.forward(&x)?;
    let mse = r.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
    Ok(wce + mse)
}

/// Sum over the batch of count- and |label|-weighted cross-entropy plus the
/// distillation mean-squared error.
pub fn evaluator_loss(bundle: &EvaluatorBundle, batch: &[Sample]) -> Result<f64> {
    batch.iter().map(|s| sample_loss(bundle, s)).sum()
}

/// `||M_R(x) - M_R*(x)||^2` at `x = context ⊕ weights ⊕ decay`.
pub fn bonus(bundle: &EvaluatorBundle, x: &[f64]) -> Result<f64> {
    let r = bundle.rnd.forward(x)?;
    let t = bundle.target.forward(x)?;
    Ok(r.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorReport {
    pub train_loss: f64,
    /// Mean per-sample loss on the held-out split, if it is non-empty.
    pub holdout_loss: Option<f64>,
    pub train_size: usize,
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn key_hash(s: &Sample) -> u64 {
    fnv1a(s.key().into_iter().flat_map(u64::to_le_bytes))
}

fn in_holdout(s: &Sample, fraction: f64) -> bool {
    fraction > 0.0 && (key_hash(s) % 10_000) as f64 / 10_000.0 < fraction
}

/// Mini-batch Adam on [`evaluator_loss`]. The batch gradient is averaged
/// over the batch. `M_R*` is never modified.
pub fn train_evaluator<R: Rng + ?Sized>(
    bundle: &mut EvaluatorBundle,
    samples: &[Sample],
    config: &EgoConfig,
    rng: &mut R,
) -> Result<EvaluatorReport> {
    if samples.is_empty() {
        return Err(domain("cannot train an evaluator on an empty dataset"));
    }
    for s in samples {
        check_dim(bundle.input_dim(), s.input().len())?;
    }
    let (mut train, holdout): (Vec<&Sample>, Vec<&Sample>) =
        samples.iter().partition(|s| !in_holdout(s, config.holdout_fraction));
    let fallback = train.is_empty();
    if fallback {
        // Tiny datasets may hash entirely into the holdout.
        train = holdout.clone();
    }
    let adam = OptimizerKind::default();
    let mut opt_model = Optimizer::new(adam, config.evaluator_lr, &bundle.model);
    let mut opt_rnd = Optimizer::new(adam, config.evaluator_lr, &bundle.rnd);
    let mut last = f64::NAN;
    for _ in 0..config.epochs {
        train.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in train.chunks(config.batch_size) {
            let mut g_model = crate::neural::GradientTape::zeros_like(&bundle.model);
            let mut g_rnd = crate::neural::GradientTape::zeros_like(&bundle.rnd);
            for s in batch {
                let x = s.input();
                let tm = bundle.model.forward_trace(&x)?;
                let z = tm.output()[0];
                let y = if s.label > 0.0 { 1.0 } else { 0.0 };
                let weight = s.count as f64 * s.label.abs();
                epoch_loss += bce_with_logit(z, y) * weight;
                bundle.model.backward_into(&tm, &[(logistic(z) - y) * weight], &mut g_model)?;

                let tr = bundle.rnd.forward_trace(&x)?;
                let t = bundle.target.forward(&x)?;
                let k = t.len() as f64;
                let up: Vec<f64> = tr.output().iter().zip(&t).map(|(a, b)| 2.0 * (a - b) / k).collect();
                epoch_loss += tr.output().iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
                bundle.rnd.backward_into(&tr, &up, &mut g_rnd)?;
            }
            let scale = 1.0 / batch.len() as f64;
            g_model.scale(scale);
            g_rnd.scale(scale);
            if !epoch_loss.is_finite() {
                return Err(Error::NonFinite(format!("evaluator loss {epoch_loss}")));
            }
            opt_model.step(&mut bundle.model, &g_model)?;
            opt_rnd.step(&mut bundle.rnd, &g_rnd)?;
        }
        last = epoch_loss;
    }
    if config.epochs == 0 {
        last = train.iter().map(|s| sample_loss(bundle, s)).sum::<Result<f64>>()?;
    }
    let holdout_loss = if holdout.is_empty() || fallback {
        None
    } else {
        let total: f64 = holdout.iter().map(|s| sample_loss(bundle, s)).sum::<Result<f64>>()?;
        Some(total / holdout.len() as f64)
    };
    Ok(EvaluatorReport {
        train_loss: last,
        holdout_loss,
        train_size: train.len(),
    })
}

/// Weights (and optionally decay factors) emitted for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub weights: Vec<f64>,
    pub decay: Vec<f64>,
}

/// Context -> weights network with its exploration coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorPolicy {
    pub net: Mlp,
    pub alpha: f64,
    pub n: usize,
    pub context_dim: usize,
    pub with_decay: bool,
}

impl GeneratorPolicy {
    pub fn new<R: Rng + ?Sized>(context_dim: usize, n: usize, config: &EgoConfig, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(domain("generator needs at least one sub-model"));
        }
        let out = if config.with_decay { 2 * n } else { n };
        Ok(Self {
            net: Mlp::new(&config.sizes(context_dim.max(1), out), OutputActivation::Linear, rng)?,
            alpha: config.alpha,
            n,
            context_dim,
            with_decay: config.with_decay,
        })
    }

    /// An empty context feeds the network a constant 1.
    fn net_input(&self, context: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.context_dim, context.len())?;
        Ok(if context.is_empty() { vec![1.0] } else { context.to_vec() })
    }

    pub fn act(&self, context: &[f64]) -> Result<Action> {
        let raw = self.net.forward(&self.net_input(context)?)?;
        Ok(self.squash(&raw))
    }

    fn squash(&self, raw: &[f64]) -> Action {
        let mut weights = raw[..self.n].to_vec();
        softmax_in_place(&mut weights);
        let decay = if self.with_decay {
            // The floor keeps saturated outputs strictly above GAMMA_MIN.
            raw[self.n..]
                .iter()
                .map(|&r| GAMMA_MIN + (1.0 - GAMMA_MIN) * logistic(r).max(1e-12))
                .collect()
        } else {
            Vec::new()
        };
        Action { weights, decay }
    }

    pub fn to_file(&self, schema: &ContextSchema) -> PolicyFile {
        PolicyFile {
            schema: schema.clone(),
            alpha: self.alpha,
            n: self.n,
            context_dim: self.context_dim,
            with_decay: self.with_decay,
            generator: self.net.to_checkpoint(),
        }
    }

    pub fn from_file(file: PolicyFile) -> Result<Self> {
        let net = Mlp::from_checkpoint(file.generator)?;
        check_dim(if file.with_decay { 2 * file.n } else { file.n }, net.output_dim())?;
        check_dim(file.context_dim.max(1), net.input_dim())?;
        Ok(Self {
            net,
            alpha: file.alpha,
            n: file.n,
            context_dim: file.context_dim,
            with_decay: file.with_decay,
        })
    }
}

/// Persisted generator with its context encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema: ContextSchema,
    pub alpha: f64,
    pub n: usize,
    pub context_dim: usize,
    pub with_decay: bool,
    pub generator: Checkpoint,
}

/// Objective `sigmoid(M(x)) + alpha * bonus(x)` at the policy's action for
/// `context`.
pub fn generator_objective(policy: &GeneratorPolicy, bundle: &EvaluatorBundle, context: &[f64]) -> Result<f64> {
    let a = policy.act(context)?;
    let x = Sample {
        context: context.to_vec(),
        weights: a.weights,
        decay: a.decay,
        label: 0.0,
        count: 1,
    }
    .input();
    Ok(bundle.predict(&x)? + policy.alpha * bonus(bundle, &x)?)
}

/// Adam on `-(1/|C|) * sum_c [sigmoid(M(c, g(c))) + alpha * bonus(c, g(c))]`.
/// Gradients pass through the bundle's networks but only `g` is updated.
/// Returns the final loss.
pub fn train_generator(
    policy: &mut GeneratorPolicy,
    bundle: &EvaluatorBundle,
    contexts: &[Vec<f64>],
    steps: usize,
    lr: f64,
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(domain("generator training needs at least one context"));
    }
    let decay_dim = if policy.with_decay { policy.n } else { 0 };
    check_dim(policy.context_dim + policy.n + decay_dim, bundle.input_dim())?;
    let inputs = contexts
        .iter()
        .map(|c| policy.net_input(c))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = Optimizer::new(OptimizerKind::default(), lr, &policy.net);
    let scale = 1.0 / contexts.len() as f64;
    let mut loss = f64::NAN;
    for step in 0..=steps {
        let mut tape = crate::neural::GradientTape::zeros_like(&policy.net);
        let mut total = 0.0;
        for (c, gin) in contexts.iter().zip(&inputs) {
            let trace = policy.net.forward_trace(gin)?;
            let raw = trace.output();
            let act = policy.squash(raw);
            let mut x = c.clone();
            x.extend(&act.weights);
            x.extend(&act.decay);

            let tm = bundle.model.forward_trace(&x)?;
            let p = logistic(tm.output()[0]);
            let mut gx = bundle.model.input_gradient(&tm, &[-p * (1.0 - p)])?;
            total -= p;
            if policy.alpha > 0.0 {
                let tr = bundle.rnd.forward_trace(&x)?;
                let tt = bundle.target.forward_trace(&x)?;
                let diff: Vec<f64> = tr.output().iter().zip(tt.output()).map(|(a, b)| a - b).collect();
                total -= policy.alpha * diff.iter().map(|d| d * d).sum::<f64>();
                let up: Vec<f64> = diff.iter().map(|d| -2.0 * policy.alpha * d).collect();
                let neg: Vec<f64> = up.iter().map(|u| -u).collect();
                let g1 = bundle.rnd.input_gradient(&tr, &up)?;
                let g2 = bundle.target.input_gradient(&tt, &neg)?;
                for ((g, a), b) in gx.iter_mut().zip(g1).zip(g2) {
                    *g += a + b;
                }
            }

            let cd = c.len();
            let gw = &gx[cd..cd + policy.n];
            let dot: f64 = gw.iter().zip(&act.weights).map(|(g, w)| g * w).sum();
            let mut draw: Vec<f64> = act.weights.iter().zip(gw).map(|(w, g)| w * (g - dot)).collect();
            if policy.with_decay {
                for (k, &g) in gx[cd + policy.n..].iter().enumerate() {
                    let s = logistic(raw[policy.n + k]);
                    draw.push(g * (1.0 - GAMMA_MIN) * s * (1.0 - s));
                }
            }
            draw.iter_mut().for_each(|d| *d *= scale);
            policy.net.backward_into(&trace, &draw, &mut tape)?;
        }
        loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {loss}")));
        }
        if step == steps {
            break;
        }
        opt.step(&mut policy.net, &tape)?;
    }
    Ok(loss)
}

/// A fitted generator together with the evaluator it was trained against.
#[derive(Debug, Clone)]
pub struct EgoFit {
    pub policy: GeneratorPolicy,
    pub bundle: EvaluatorBundle,
    pub report: EvaluatorReport,
    pub generator_loss: f64,
}

/// Trains a fresh evaluator on `dataset`, then a fresh generator over the
/// dataset's contexts.
pub fn ego_fit<R: Rng + ?Sized>(dataset: &Dataset, config: &EgoConfig, rng: &mut R) -> Result<EgoFit> {
    config.validate()?;
    let first = dataset
        .samples()
        .first()
        .ok_or_else(|| domain("cannot fit on an empty dataset"))?;
    if config.with_decay != !first.decay.is_empty() {
        return Err(domain("dataset decay columns disagree with the decay setting"));
    }
    let (cd, n) = (first.context.len(), first.weights.len());
    // Independent streams keep the evaluator and generator draws decoupled.
    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut gen_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut bundle = EvaluatorBundle::new(first.input().len(), config, &mut eval_rng)?;
    let report = train_evaluator(&mut bundle, dataset.samples(), config, &mut eval_rng)?;
    let mut policy = GeneratorPolicy::new(cd, n, config, &mut gen_rng)?;
    let generator_loss = train_generator(
        &mut policy,
        &bundle,
        &dataset.contexts(),
        config.generator_steps,
        config.generator_lr,
    )?;
    Ok(EgoFit {
        policy,
        bundle,
        report,
        generator_loss,
    })
}

pub mod toy;

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config() -> EgoConfig {
        EgoConfig {
            hidden: vec![16, 8],
            holdout_fraction: 0.0,
            ..EgoConfig::default()
        }
    }

    fn sample(context: &[f64], weights: &[f64], label: f64, count: u64) -> Sample {
        Sample::new(context.to_vec(), weights.to_vec(), Vec::new(), label, count).unwrap()
    }

    #[test]
    fn sample_validation() {
        assert!(Sample::new(vec![], vec![0.5, 0.5], vec![], 1.5, 1).is_err());
        assert!(Sample::new(vec![], vec![0.5, 0.5], vec![], 0.5, 0).is_err());
        assert!(Sample::new(vec![], vec![0.6, 0.5], vec![], 0.5, 1).is_err());
        assert!(Sample::new(vec![], vec![0.5, 0.5], vec![0.0, 1.0], 0.5, 1).is_err());
        assert!(Sample::new(vec![], vec![0.5, 0.5], vec![0.3, 1.0], 0.5, 1).is_ok());
    }

    #[test]
    fn dataset_merges_by_key() {
        let mut d = Dataset::new();
        d.push(sample(&[1.0], &[1.0, 0.0], 0.5, 1)).unwrap();
        d.push(sample(&[1.0], &[1.0, 0.0], -0.1, 3)).unwrap();
        d.push(sample(&[0.0], &[1.0, 0.0], 0.2, 1)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples()[0].count, 4);
        assert!((d.samples()[0].label - 0.05).abs() < 1e-15);
        assert_eq!(d.contexts(), vec![vec![1.0], vec![0.0]]);
        assert!(d.push(sample(&[1.0, 0.0], &[1.0, 0.0], 0.2, 1)).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let mut d = Dataset::new();
        d.push(sample(&[0.25, 1.0], &[0.1, 0.9], 0.375, 2)).unwrap();
        d.push(sample(&[0.0, 0.0], &[1.0 / 3.0, 2.0 / 3.0], -1.0, 7)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), false).unwrap();
        assert_eq!(back.samples(), d.samples());
        let bad = "context_json,weights,label,count\n[0],1.0,2.0,1\n";
        assert!(matches!(Dataset::read_csv(bad.as_bytes(), false), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn schema_encoding() {
        let schema = ContextSchema::new(vec![
            Feature::Categorical {
                name: "gender".into(),
                levels: vec!["male".into(), "female".into()],
            },
            Feature::Numeric {
                name: "age".into(),
                min: 10.0,
                max: 60.0,
            },
        ])
        .unwrap();
        assert_eq!(schema.dim(), 3);
        let x = schema
            .encode(&[FeatureValue::Level("female".into()), FeatureValue::Number(35.0)])
            .unwrap();
        assert_eq!(x, vec![0.0, 1.0, 0.5]);
        let clamp = schema
            .encode(&[FeatureValue::Level("male".into()), FeatureValue::Number(99.0)])
            .unwrap();
        assert_eq!(clamp, vec![1.0, 0.0, 1.0]);
        assert!(schema.encode(&[FeatureValue::Level("other".into()), FeatureValue::Number(1.0)]).is_err());
        let json = serde_json::to_string(&schema).unwrap();
        assert_eq!(serde_json::from_str::<ContextSchema>(&json).unwrap(), schema);
    }

    #[test]
    fn loss_terms() {
        let cfg = small_config();
        let mut b = EvaluatorBundle::new(3, &cfg, &mut rng(1)).unwrap();
        b.rnd = b.target.clone();
        let zero = sample(&[1.0], &[0.5, 0.5], 0.0, 5);
        assert_eq!(evaluator_loss(&b, &[zero]).unwrap(), 0.0);
        let one = sample(&[1.0], &[0.5, 0.5], 0.4, 1);
        let two = sample(&[1.0], &[0.5, 0.5], 0.4, 2);
        let (a, c) = (evaluator_loss(&b, &[one]).unwrap(), evaluator_loss(&b, &[two]).unwrap());
        assert!(a > 0.0);
        assert_eq!(c, 2.0 * a);
        assert_eq!(bonus(&b, &[0.3, 0.2, 0.8]).unwrap(), 0.0);
    }

    #[test]
    fn bonus_ignores_output_order() {
        let cfg = small_config();
        let b = EvaluatorBundle::new(2, &cfg, &mut rng(2)).unwrap();
        let mut swapped = b.clone();
        for net in [&mut swapped.rnd, &mut swapped.target] {
            let last = net.layers_mut().last_mut().unwrap();
            let cols = last.inputs;
            let (head, tail) = last.weights.split_at_mut(cols);
            head.swap_with_slice(&mut tail[..cols]);
            last.bias.swap(0, 1);
        }
        let x = [0.4, 0.6];
        assert!((bonus(&b, &x).unwrap() - bonus(&swapped, &x).unwrap()).abs() < 1e-15);
        assert!(bonus(&b, &x).unwrap() > 0.0);
    }

    #[test]
    fn evaluator_learns_separable_labels() {
        // Label sign is determined by x0 > x1.
        let mut r = rng(3);
        let mut data = Vec::new();
        for _ in 0..200 {
            let a: f64 = r.random();
            let b: f64 = r.random();
            if (a - b).abs() < 0.05 {
                continue;
            }
            let label = if a > b { 0.5 } else { -0.5 };
            data.push(sample(&[a, b], &[1.0], label, 1));
        }
        let cfg = EgoConfig {
            epochs: 200,
            ..small_config()
        };
        let mut bundle = EvaluatorBundle::new(3, &cfg, &mut r).unwrap();
        train_evaluator(&mut bundle, &data, &cfg, &mut r).unwrap();
        let correct = data
            .iter()
            .filter(|s| (bundle.predict(&s.input()).unwrap() > 0.5) == (s.label > 0.0))
            .count();
        assert!(correct as f64 / data.len() as f64 >= 0.95, "{correct}/{}", data.len());
    }

    #[test]
    fn single_sample_fit_is_monotone() {
        let cfg = EgoConfig {
            epochs: 1,
            ..small_config()
        };
        let s = vec![sample(&[0.2], &[0.3, 0.7], 0.8, 1)];
        let mut r = rng(4);
        let mut bundle = EvaluatorBundle::new(3, &cfg, &mut r).unwrap();
        let mut last = evaluator_loss(&bundle, &s).unwrap();
        let mut p0 = bundle.predict(&s[0].input()).unwrap();
        let mut adam = Optimizer::new(OptimizerKind::default(), 1e-2, &bundle.model);
        for _ in 0..200 {
            let t = bundle.model.forward_trace(&s[0].input()).unwrap();
            let z = t.output()[0];
            let tape = bundle.model.backward(&t, &[(logistic(z) - 1.0) * 0.8]).unwrap();
            adam.step(&mut bundle.model, &tape).unwrap();
            let now = evaluator_loss(&bundle, &s).unwrap();
            assert!(now <= last);
            last = now;
            let p = bundle.predict(&s[0].input()).unwrap();
            assert!(p >= p0);
            p0 = p;
        }
        assert!(p0 > 0.95);
    }

    #[test]
    fn distillation_gap_off_support() {
        // Train on a small corner of the unit square, probe the opposite corner.
        let cfg = EgoConfig {
            epochs: 300,
            evaluator_lr: 3e-3,
            ..small_config()
        };
        let mut r = rng(5);
        let train: Vec<Sample> = (0..64)
            .map(|_| sample(&[r.random::<f64>() * 0.2, r.random::<f64>() * 0.2], &[1.0], 0.0, 1))
            .collect();
        let mut bundle = EvaluatorBundle::new(3, &cfg, &mut r).unwrap();
        let frozen = bundle.target.clone();
        train_evaluator(&mut bundle, &train, &cfg, &mut r).unwrap();
        assert_eq!(bundle.target, frozen);
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let on = median(
            (0..100)
                .map(|_| bonus(&bundle, &[r.random::<f64>() * 0.2, r.random::<f64>() * 0.2, 1.0]).unwrap())
                .collect(),
        );
        let off = median(
            (0..100)
                .map(|_| bonus(&bundle, &[0.8 + r.random::<f64>() * 0.2, 0.8 + r.random::<f64>() * 0.2, 1.0]).unwrap())
                .collect(),
        );
        assert!(off >= 2.0 * on, "on {on} off {off}");
    }

    #[test]
    fn evaluator_loss_drops_early() {
        let mut drops = Vec::new();
        for seed in 0..10 {
            let mut r = rng(100 + seed);
            let data: Vec<Sample> = (0..64)
                .map(|_| {
                    let a: f64 = r.random();
                    sample(&[a], &[1.0], if a > 0.5 { 0.6 } else { -0.6 }, 1 + r.random_range(0..3))
                })
                .collect();
            let cfg = EgoConfig {
                epochs: 25,
                batch_size: 32,
                ..small_config()
            };
            let mut bundle = EvaluatorBundle::new(2, &cfg, &mut r).unwrap();
            let before = evaluator_loss(&bundle, &data).unwrap();
            train_evaluator(&mut bundle, &data, &cfg, &mut r).unwrap();
            drops.push(before - evaluator_loss(&bundle, &data).unwrap());
        }
        drops.sort_by(f64::total_cmp);
        assert!(drops[5] > 0.0);
    }

    /// Bundle whose `M` is linear in the weights with a unique best vertex and
    /// whose distillation pair agrees everywhere.
    fn linear_bundle(coef: &[f64], cfg: &EgoConfig) -> EvaluatorBundle {
        let n = coef.len();
        let mut layer = crate::neural::Dense {
            inputs: n,
            outputs: 1,
            weights: coef.to_vec(),
            bias: vec![0.0],
        };
        layer.weights.iter_mut().for_each(|w| *w *= 4.0);
        let model = Mlp::from_layers(vec![layer], OutputActivation::Linear).unwrap();
        let target = Mlp::new(&cfg.sizes(n, cfg.rnd_dim), OutputActivation::Linear, &mut rng(6)).unwrap();
        EvaluatorBundle {
            model,
            rnd: target.clone(),
            target,
        }
    }

    #[test]
    fn generator_reaches_best_vertex_without_bonus() {
        let cfg = EgoConfig {
            alpha: 0.0,
            ..small_config()
        };
        let bundle = linear_bundle(&[0.1, 0.9, -0.3], &cfg);
        let before = bundle.clone();
        let mut policy = GeneratorPolicy::new(0, 3, &cfg, &mut rng(7)).unwrap();
        train_generator(&mut policy, &bundle, &[vec![]], 500, 1e-2).unwrap();
        assert_eq!(bundle, before);
        let w = policy.act(&[]).unwrap().weights;
        let l1 = w[0] + (1.0 - w[1]) + w[2];
        assert!(l1 < 0.05, "{w:?}");
    }

    #[test]
    fn bonus_grows_with_alpha() {
        let cfg = EgoConfig {
            epochs: 100,
            ..small_config()
        };
        let mut r = rng(8);
        let mut data = Dataset::new();
        for (w, l) in [([1.0, 0.0, 0.0], -0.1), ([0.0, 1.0, 0.0], 0.2), ([0.0, 0.0, 1.0], 0.0)] {
            data.push(sample(&[], &w, l, 1)).unwrap();
        }
        let mut bundle = EvaluatorBundle::new(3, &cfg, &mut r).unwrap();
        train_evaluator(&mut bundle, data.samples(), &cfg, &mut r).unwrap();
        let frozen = bundle.clone();
        let mut last = -1.0;
        for alpha in [0.0, 1.0, 10.0] {
            let c = EgoConfig { alpha, ..cfg.clone() };
            let mut policy = GeneratorPolicy::new(0, 3, &c, &mut rng(9)).unwrap();
            train_generator(&mut policy, &bundle, &[vec![]], 300, 1e-2).unwrap();
            let b = bonus(&bundle, &policy.act(&[]).unwrap().weights).unwrap();
            assert!(b >= last - 1e-12, "alpha {alpha}: {b} < {last}");
            last = b;
        }
        assert_eq!(bundle, frozen);
    }

    #[test]
    fn decay_outputs_in_range() {
        let cfg = EgoConfig {
            with_decay: true,
            ..small_config()
        };
        let mut policy = GeneratorPolicy::new(2, 3, &cfg, &mut rng(10)).unwrap();
        for l in policy.net.layers_mut() {
            l.bias.iter_mut().enumerate().for_each(|(k, b)| *b = (k as f64 - 2.5) * 40.0);
        }
        let a = policy.act(&[0.5, 0.1]).unwrap();
        assert!(check_simplex(&a.weights).is_ok());
        assert!(a.decay.iter().all(|&g| g > GAMMA_MIN && g <= 1.0));
    }

    fn two_context_dataset(opposite: bool) -> Dataset {
        let mut d = Dataset::new();
        let verts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (c, ctx) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let best = if opposite && c == 1 { 2 } else { 0 };
            for (k, v) in verts.iter().enumerate() {
                let label = if k == best { 0.5 } else { -0.3 };
                d.push(sample(ctx, v, label, 20)).unwrap();
            }
            d.push(sample(ctx, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], -0.1, 20)).unwrap();
        }
        d
    }

    fn fit_config() -> EgoConfig {
        EgoConfig {
            alpha: 0.0,
            epochs: 300,
            evaluator_lr: 3e-3,
            ..small_config()
        }
    }

    #[test]
    fn ego_fit_context_free_optimum() {
        let fit = ego_fit(&two_context_dataset(false), &fit_config(), &mut rng(11)).unwrap();
        let a = fit.policy.act(&[1.0, 0.0]).unwrap().weights;
        let b = fit.policy.act(&[0.0, 1.0]).unwrap().weights;
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 <= 0.1, "{a:?} vs {b:?}");
    }

    #[test]
    fn ego_fit_opposite_contexts() {
        let fit = ego_fit(&two_context_dataset(true), &fit_config(), &mut rng(12)).unwrap();
        let a = fit.policy.act(&[1.0, 0.0]).unwrap().weights;
        let b = fit.policy.act(&[0.0, 1.0]).unwrap().weights;
        assert!((1.0 - a[0]) + a[1] + a[2] <= 0.2, "{a:?}");
        assert!(b[0] + b[1] + (1.0 - b[2]) <= 0.2, "{b:?}");
    }

    #[test]
    fn ego_fit_is_deterministic() {
        let d = two_context_dataset(true);
        let a = ego_fit(&d, &fit_config(), &mut rng(13)).unwrap();
        let b = ego_fit(&d, &fit_config(), &mut rng(13)).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.bundle, b.bundle);
    }

    #[test]
    fn policy_file_round_trip() {
        let cfg = small_config();
        let policy = GeneratorPolicy::new(2, 4, &cfg, &mut rng(14)).unwrap();
        let json = serde_json::to_string(&policy.to_file(&ContextSchema::default())).unwrap();
        let back = GeneratorPolicy::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn holdout_is_reported() {
        let cfg = EgoConfig {
            holdout_fraction: 0.5,
            epochs: 2,
            ..small_config()
        };
        let mut r = rng(15);
        let data: Vec<Sample> = (0..40).map(|k| sample(&[k as f64 / 40.0], &[1.0], 0.1, 1)).collect();
        let mut bundle = EvaluatorBundle::new(2, &cfg, &mut r).unwrap();
        let rep = train_evaluator(&mut bundle, &data, &cfg, &mut r).unwrap();
        assert!(rep.train_size > 0 && rep.train_size < 40);
        assert!(rep.holdout_loss.is_some());
    }
}
