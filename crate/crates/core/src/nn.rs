//! Minimal multilayer perceptron with exact per-example gradients.
//!
//! Hidden layers use ReLU, the head is a softmax over the output logits.
//! Parameters live in one flat [`ParamVector`] with a fixed layout:
//!
//! ```text
//! for each layer l = 0..L-1 (input side first):
//!     weights  W_l  [out_l x in_l], row-major  (W_l[o][i] at offset + o * in_l + i)
//!     biases   b_l  [out_l]
//! ```
//!
//! Every optimizer, noise stream and equivalence test relies on this layout
//! being stable, so do not reorder it.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
}

/// Layer widths of an MLP: `[input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    widths: Vec<usize>,
}

/// Shape and parameter offset of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ModelSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::InvalidSpec(format!(
                "need at least 2 layers, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(NnError::InvalidSpec("layer widths must be >= 1".into()));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let shape = LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            shape
        })
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform Glorot initialization, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.num_params()];
        for layer in self.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut values[layer.weight_offset..layer.bias_offset] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        ParamVector(values)
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.num_params() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                found: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what: "feature vector",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Flat model parameters in the layout documented at the module level.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn affine(params: &[f64], layer: LayerShape, input: &[f64], out: &mut [f64]) {
    let weights = &params[layer.weight_offset..layer.bias_offset];
    let biases = &params[layer.bias_offset..layer.bias_offset + layer.fan_out];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &weights[o * layer.fan_in..(o + 1) * layer.fan_in];
        let mut acc = biases[o];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *slot = acc;
    }
}

/// Pre-softmax logits of the network at `x`.
pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>, NnError> {
    spec.check_params(params.as_slice())?;
    spec.check_input(x)?;
    let mut current = x.to_vec();
    let last = spec.num_layers() - 1;
    for (l, layer) in spec.layers().enumerate() {
        let mut next = vec![0.0; layer.fan_out];
        affine(params.as_slice(), layer, &current, &mut next);
        if l < last {
            next.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        current = next;
    }
    Ok(current)
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}

/// `-ln softmax(logits)[label]`, stabilized with log-sum-exp.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> f64 {
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// 0 when the (lowest-index) argmax equals `label`, 1 otherwise.
pub fn zero_one_loss(logits: &[f64], label: usize) -> f64 {
    if argmax(logits) == label {
        0.0
    } else {
        1.0
    }
}

/// Reusable buffers for forward/backward passes of one [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    spec: ModelSpec,
    shapes: Vec<LayerShape>,
    // activations[0] = input, activations[l + 1] = output of layer l (post-ReLU for hidden)
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl GradientWorkspace {
    pub fn new(spec: &ModelSpec) -> Self {
        let widths = spec.widths();
        Self {
            spec: spec.clone(),
            shapes: spec.layers().collect(),
            activations: widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: widths[1..].iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn run_forward(&mut self, params: &[f64], x: &[f64]) {
        self.activations[0].copy_from_slice(x);
        let last = self.shapes.len() - 1;
        for (l, &layer) in self.shapes.iter().enumerate() {
            let (head, tail) = self.activations.split_at_mut(l + 1);
            let out = &mut tail[0];
            affine(params, layer, &head[l], out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Logits at `x` using the workspace buffers.
    pub fn logits(&mut self, params: &[f64], x: &[f64]) -> Result<&[f64], NnError> {
        self.spec.check_params(params)?;
        self.spec.check_input(x)?;
        self.run_forward(params, x);
        Ok(self.activations.last().expect("at least one layer"))
    }

    /// Writes the cross-entropy gradient at `(x, label)` into `grad` and
    /// returns the loss.
    pub fn gradient(
        &mut self,
        params: &[f64],
        x: &[f64],
        label: usize,
        grad: &mut [f64],
    ) -> Result<f64, NnError> {
        self.spec.check_params(params)?;
        self.spec.check_input(x)?;
        if grad.len() != params.len() {
            return Err(NnError::DimensionMismatch {
                what: "gradient buffer",
                expected: params.len(),
                found: grad.len(),
            });
        }
        let k = self.spec.num_classes();
        if label >= k {
            return Err(NnError::LabelOutOfRange {
                label,
                num_classes: k,
            });
        }
        self.run_forward(params, x);

        let num_layers = self.shapes.len();
        let logits = &self.activations[num_layers];
        let lse = log_sum_exp(logits);
        let loss = (lse - logits[label]).max(0.0);
        let out_delta = &mut self.deltas[num_layers - 1];
        for (i, d) in out_delta.iter_mut().enumerate() {
            *d = (logits[i] - lse).exp();
        }
        out_delta[label] -= 1.0;

        for l in (0..num_layers).rev() {
            let layer = self.shapes[l];
            let input = &self.activations[l];
            let delta = &self.deltas[l];
            let (w_grad, rest) =
                grad[layer.weight_offset..].split_at_mut(layer.fan_in * layer.fan_out);
            let b_grad = &mut rest[..layer.fan_out];
            for o in 0..layer.fan_out {
                let d = delta[o];
                b_grad[o] = d;
                let row = &mut w_grad[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = d * x;
                }
            }
            if l > 0 {
                let weights = &params[layer.weight_offset..layer.bias_offset];
                let (lower, upper) = self.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                let act = &self.activations[l];
                for (i, p) in prev.iter_mut().enumerate() {
                    if act[i] <= 0.0 {
                        *p = 0.0;
                        continue;
                    }
                    let mut acc = 0.0;
                    for (o, d) in delta.iter().enumerate() {
                        acc += weights[o * layer.fan_in + i] * d;
                    }
                    *p = acc;
                }
            }
        }
        Ok(loss)
    }
}

/// Exact gradient of the cross-entropy loss at one example, plus the loss.
pub fn per_example_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    example: &LabeledExample,
) -> Result<(ParamVector, f64), NnError> {
    let mut ws = GradientWorkspace::new(spec);
    let mut grad = ParamVector::zeros(spec.num_params());
    let loss = ws.gradient(
        params.as_slice(),
        &example.features,
        example.label,
        grad.as_mut_slice(),
    )?;
    Ok((grad, loss))
}

/// Mean of per-example gradients over `examples`, summed in input order.
pub fn batch_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    examples: &[LabeledExample],
) -> Result<ParamVector, NnError> {
    if examples.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut ws = GradientWorkspace::new(spec);
    let mut buf = vec![0.0; spec.num_params()];
    let mut sum = vec![0.0; spec.num_params()];
    for ex in examples {
        ws.gradient(params.as_slice(), &ex.features, ex.label, &mut buf)?;
        sum.iter_mut().zip(&buf).for_each(|(s, g)| *s += g);
    }
    let inv = 1.0 / examples.len() as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(ParamVector(sum))
}
