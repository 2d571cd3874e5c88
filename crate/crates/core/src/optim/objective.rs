//! Per-example objectives driven by the optimizers.

use crate::data::Dataset;
use crate::nn::{GradientWorkspace, ModelSpec};

/// A finite-sum objective `F(w, S) = (1/n) sum_i F(w, z_i)`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn num_examples(&self) -> usize;

    /// Overwrites `grad` with `grad_w F(w, z_index)` and returns `F(w, z_index)`.
    fn example_gradient(&mut self, params: &[f64], index: usize, grad: &mut [f64]) -> f64;
}

/// Per-example loss built on the network's softmax output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `-ln p_y`.
    CrossEntropy,
    /// `scale * (1 - p_y)`: bounded in `[0, scale]`, with gradient
    /// `scale * p_y * grad(-ln p_y)`.
    BoundedLikelihood { scale: f64 },
}

/// An MLP over a borrowed dataset, with optional `lambda/2 ||w||^2` added to
/// every per-example term.
#[derive(Debug, Clone)]
pub struct MlpObjective<'a> {
    ws: GradientWorkspace,
    data: &'a Dataset,
    loss: LossKind,
    l2: f64,
}

impl<'a> MlpObjective<'a> {
    /// Panics if the dataset does not match the model's input width or class count.
    pub fn new(spec: &ModelSpec, data: &'a Dataset) -> Self {
        assert_eq!(spec.input_dim(), data.feature_dim(), "feature width");
        assert!(data.num_classes <= spec.num_classes(), "class count");
        Self {
            ws: GradientWorkspace::new(spec),
            data,
            loss: LossKind::CrossEntropy,
            l2: 0.0,
        }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_l2(mut self, lambda: f64) -> Self {
        self.l2 = lambda;
        self
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn spec(&self) -> &ModelSpec {
        self.ws.spec()
    }

    /// Mean 0/1 loss of `params` over `data`.
    pub fn zero_one_error(&mut self, params: &[f64], data: &Dataset) -> f64 {
        let wrong: f64 = data
            .examples
            .iter()
            .map(|ex| {
                let logits = self
                    .ws
                    .logits(params, &ex.features)
                    .expect("validated dims");
                crate::nn::zero_one_loss(logits, ex.label)
            })
            .sum();
        wrong / data.len() as f64
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.ws.spec().num_params()
    }

    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn example_gradient(&mut self, params: &[f64], index: usize, grad: &mut [f64]) -> f64 {
        let ex = &self.data.examples[index];
        let ce = self
            .ws
            .gradient(params, &ex.features, ex.label, grad)
            .expect("dimensions validated at construction");
        let mut value = match self.loss {
            LossKind::CrossEntropy => ce,
            LossKind::BoundedLikelihood { scale } => {
                let p = (-ce).exp();
                grad.iter_mut().for_each(|g| *g *= scale * p);
                scale * (1.0 - p)
            }
        };
        if self.l2 != 0.0 {
            for (g, w) in grad.iter_mut().zip(params) {
                *g += self.l2 * w;
            }
            value += 0.5 * self.l2 * crate::nn::norm_sq(params);
        }
        value
    }
}

/// `F(w, z_i) = 1/2 ||w - c_i||^2` with per-example centers; handy for
/// closed-form checks.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub centers: Vec<Vec<f64>>,
}

impl QuadraticObjective {
    pub fn new(centers: Vec<Vec<f64>>) -> Self {
        assert!(!centers.is_empty());
        Self { centers }
    }

    /// `n` copies of the origin, i.e. `1/2 ||w||^2`.
    pub fn centered(dim: usize, n: usize) -> Self {
        Self::new(vec![vec![0.0; dim]; n])
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn num_examples(&self) -> usize {
        self.centers.len()
    }

    fn example_gradient(&mut self, params: &[f64], index: usize, grad: &mut [f64]) -> f64 {
        let c = &self.centers[index];
        let mut value = 0.0;
        for ((g, w), c) in grad.iter_mut().zip(params).zip(c) {
            *g = w - c;
            value += 0.5 * (w - c) * (w - c);
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_gaussian_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_likelihood_matches_finite_differences() {
        let data = synthetic_gaussian_blobs(3, 2, 6, 1.0, 1).unwrap();
        let spec = ModelSpec::new(vec![2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = spec.init_params(&mut rng).into_inner();
        let mut obj = MlpObjective::new(&spec, &data)
            .with_loss(LossKind::BoundedLikelihood { scale: 2.0 })
            .with_l2(0.3);
        let mut grad = vec![0.0; params.len()];
        let f0 = obj.example_gradient(&params, 2, &mut grad);
        assert!(f0 >= 0.0);
        let mut scratch = vec![0.0; params.len()];
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = obj.example_gradient(&p, 2, &mut scratch);
            p[i] -= 2.0 * h;
            let down = obj.example_gradient(&p, 2, &mut scratch);
            assert!(((up - down) / (2.0 * h) - grad[i]).abs() < 1e-7);
        }
    }
}
