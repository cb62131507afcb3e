//! Toy differentiable models over flat parameter vectors.
//!
//! Parameter layout (row-major throughout):
//!
//! * linear / logistic: `W[num_classes][input_dim]`, then `b[num_classes]`
//! * mlp: `W1[hidden][input_dim]`, `b1[hidden]`, `W2[num_classes][hidden]`, `b2[num_classes]`
//!
//! Linear regression uses squared error `(w.x + b - y)^2`; logistic regression
//! and the MLP use softmax cross-entropy. Batch losses and gradients are means
//! over the batch.

use std::borrow::Borrow;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};

/// Flat model parameter vector.
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
    }
}

impl ParamVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns an error naming the first non-finite coordinate, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn ensure_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_dim(other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_dim(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &ParamVector) -> Result<()> {
        self.ensure_dim(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// One labelled example. For regression the label is the target value; for
/// classification it is the class index stored as an integral float.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Example { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Mlp,
}

impl ModelKind {
    pub fn is_classifier(self) -> bool {
        !matches!(self, ModelKind::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            input_dim,
            hidden_dim: 0,
            num_classes: 1,
        }
    }

    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            hidden_dim: 0,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        match self.kind {
            ModelKind::Linear => {
                if self.num_classes != 1 {
                    return bad(format!(
                        "linear regression has one output, got num_classes={}",
                        self.num_classes
                    ));
                }
                if self.hidden_dim != 0 {
                    return bad("hidden_dim must be 0 for linear models".into());
                }
            }
            ModelKind::Logistic => {
                if self.num_classes < 2 {
                    return bad(format!(
                        "logistic regression needs num_classes >= 2, got {}",
                        self.num_classes
                    ));
                }
                if self.hidden_dim != 0 {
                    return bad("hidden_dim must be 0 for logistic models".into());
                }
            }
            ModelKind::Mlp => {
                if self.num_classes < 2 {
                    return bad(format!(
                        "mlp classifier needs num_classes >= 2, got {}",
                        self.num_classes
                    ));
                }
                if self.hidden_dim == 0 {
                    return bad("mlp needs hidden_dim >= 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => {
                self.input_dim * self.num_classes + self.num_classes
            }
            ModelKind::Mlp => {
                self.input_dim * self.hidden_dim
                    + self.hidden_dim
                    + self.hidden_dim * self.num_classes
                    + self.num_classes
            }
        }
    }

    fn check_inputs<E: Borrow<Example>>(&self, w: &ParamVector, batch: &[E]) -> Result<()> {
        if w.dim() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                found: w.dim(),
            });
        }
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for ex in batch {
            self.check_example(ex.borrow())?;
        }
        Ok(())
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: ex.features.len(),
            });
        }
        if self.kind.is_classifier() {
            let label = ex.label;
            if !(label >= 0.0 && label.fract() == 0.0 && (label as usize) < self.num_classes) {
                return Err(Error::InvalidExample(format!(
                    "label {label} is not a class index below {}",
                    self.num_classes
                )));
            }
        } else if !ex.label.is_finite() {
            return Err(Error::InvalidExample("regression label must be finite".into()));
        }
        Ok(())
    }
}

/// Closed-form parameter count for a model.
pub fn param_count(spec: &ModelSpec) -> usize {
    spec.param_count()
}

/// Mean per-example loss over the batch.
pub fn loss<E: Borrow<Example>>(spec: &ModelSpec, w: &ParamVector, batch: &[E]) -> Result<f64> {
    spec.check_inputs(w, batch)?;
    let mut scratch = Scratch::new(spec);
    let total: f64 = batch
        .iter()
        .map(|ex| example_loss(spec, w.as_slice(), ex.borrow(), &mut scratch))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`loss`] with respect to the parameters.
pub fn gradient<E: Borrow<Example>>(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &[E],
) -> Result<ParamVector> {
    spec.check_inputs(w, batch)?;
    let mut grad = vec![0.0; w.dim()];
    let mut scratch = Scratch::new(spec);
    for ex in batch {
        accumulate_gradient(spec, w.as_slice(), ex.borrow(), &mut scratch, &mut grad);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(ParamVector(grad))
}

/// Central-difference gradient, used as a test oracle for [`gradient`].
pub fn finite_diff_gradient<E: Borrow<Example>>(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &[E],
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    spec.check_inputs(w, batch)?;
    let mut probe = w.clone();
    let mut grad = Vec::with_capacity(w.dim());
    for i in 0..w.dim() {
        let orig = probe.0[i];
        probe.0[i] = orig + h;
        let up = loss(spec, &probe, batch)?;
        probe.0[i] = orig - h;
        let down = loss(spec, &probe, batch)?;
        probe.0[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(ParamVector(grad))
}

/// Loss and accuracy of a model over a data set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction of correctly classified examples; NaN for regression.
    pub accuracy: f64,
}

pub fn evaluate<E: Borrow<Example>>(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &[E],
) -> Result<Evaluation> {
    spec.check_inputs(w, data)?;
    let mut scratch = Scratch::new(spec);
    let mut total = 0.0;
    let mut correct = 0usize;
    for ex in data {
        let ex = ex.borrow();
        total += example_loss(spec, w.as_slice(), ex, &mut scratch);
        if spec.kind.is_classifier() && argmax(&scratch.logits) == ex.label as usize {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    let accuracy = if spec.kind.is_classifier() {
        correct as f64 / n
    } else {
        f64::NAN
    };
    Ok(Evaluation {
        loss: total / n,
        accuracy,
    })
}

/// Scaled-uniform initialisation: weights of each layer are drawn from
/// `U(-scale/sqrt(fan_in), scale/sqrt(fan_in))`, biases start at zero.
pub fn init_weights(spec: &ModelSpec, scale: f64, seed: u64) -> ParamVector {
    let mut rng = StreamKey::new(seed, Purpose::Init).rng();
    let mut values = Vec::with_capacity(spec.param_count());
    let mut layer = |values: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
        let bound = scale / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            let u: f64 = if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            };
            values.push(u);
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    };
    match spec.kind {
        ModelKind::Linear | ModelKind::Logistic => {
            layer(&mut values, spec.input_dim, spec.num_classes);
        }
        ModelKind::Mlp => {
            layer(&mut values, spec.input_dim, spec.hidden_dim);
            layer(&mut values, spec.hidden_dim, spec.num_classes);
        }
    }
    ParamVector(values)
}

struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Scratch {
            hidden: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.num_classes],
            delta_hidden: vec![0.0; spec.hidden_dim],
        }
    }
}

fn affine(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * n_in..(j + 1) * n_in];
        *o = bias[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the forward pass into `scratch`, returning the example loss.
fn example_loss(spec: &ModelSpec, w: &[f64], ex: &Example, scratch: &mut Scratch) -> f64 {
    let d = spec.input_dim;
    let c = spec.num_classes;
    match spec.kind {
        ModelKind::Linear | ModelKind::Logistic => {
            let (weights, bias) = w.split_at(d * c);
            affine(weights, bias, &ex.features, &mut scratch.logits);
        }
        ModelKind::Mlp => {
            let h = spec.hidden_dim;
            let (w1, rest) = w.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * c);
            affine(w1, b1, &ex.features, &mut scratch.hidden);
            scratch.hidden.iter_mut().for_each(|a| *a = a.tanh());
            affine(w2, b2, &scratch.hidden, &mut scratch.logits);
        }
    }
    if spec.kind.is_classifier() {
        log_sum_exp(&scratch.logits) - scratch.logits[ex.label as usize]
    } else {
        let r = scratch.logits[0] - ex.label;
        r * r
    }
}

fn accumulate_gradient(
    spec: &ModelSpec,
    w: &[f64],
    ex: &Example,
    scratch: &mut Scratch,
    grad: &mut [f64],
) {
    example_loss(spec, w, ex, scratch);
    // dL/dlogits, written in place over the logits.
    if spec.kind.is_classifier() {
        let lse = log_sum_exp(&scratch.logits);
        let label = ex.label as usize;
        for (j, z) in scratch.logits.iter_mut().enumerate() {
            *z = (*z - lse).exp() - if j == label { 1.0 } else { 0.0 };
        }
    } else {
        scratch.logits[0] = 2.0 * (scratch.logits[0] - ex.label);
    }
    let d = spec.input_dim;
    let c = spec.num_classes;
    match spec.kind {
        ModelKind::Linear | ModelKind::Logistic => {
            let (gw, gb) = grad.split_at_mut(d * c);
            outer_accumulate(gw, gb, &scratch.logits, &ex.features);
        }
        ModelKind::Mlp => {
            let h = spec.hidden_dim;
            let w2 = &w[d * h + h..d * h + h + h * c];
            let (g1, rest) = grad.split_at_mut(d * h + h);
            let (gw1, gb1) = g1.split_at_mut(d * h);
            let (gw2, gb2) = rest.split_at_mut(h * c);
            outer_accumulate(gw2, gb2, &scratch.logits, &scratch.hidden);
            for k in 0..h {
                let back: f64 = (0..c).map(|j| w2[j * h + k] * scratch.logits[j]).sum();
                let act = scratch.hidden[k];
                scratch.delta_hidden[k] = back * (1.0 - act * act);
            }
            outer_accumulate(gw1, gb1, &scratch.delta_hidden, &ex.features);
        }
    }
}

fn outer_accumulate(gw: &mut [f64], gb: &mut [f64], delta: &[f64], input: &[f64]) {
    let n_in = input.len();
    for (j, &dj) in delta.iter().enumerate() {
        gb[j] += dj;
        for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
            *g += dj * x;
        }
    }
}
