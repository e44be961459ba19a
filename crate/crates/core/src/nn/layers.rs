use ndarray::{Array1, Array2, Axis};

use crate::rng::SplitMix64;

/// Fully connected layer, `y = x W^T + b` with `W` stored out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Uniform in [-sqrt(6 / fan_in), +sqrt(6 / fan_in)], zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.uniform_symmetric(bound));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Returns (dW, db, dx).
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&self.weights);
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

impl BatchNormLayer {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum,
            epsilon,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize with the batch's own statistics and fold them into the
    /// running estimates. Requires at least two rows.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let b = x.nrows() as f64;
        debug_assert!(x.nrows() >= 2);
        // Second pass corrects the rounding of the first, so a constant
        // column has a mean equal to its value and centers to exactly zero.
        let rough = x.sum_axis(Axis(0)) / b;
        let mean = (x - &rough).sum_axis(Axis(0)) / b + &rough;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;

        let m = self.momentum;
        let unbiased = &var * (b / (b - 1.0));
        self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;

        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + self.epsilon).sqrt());
        (x - &self.running_mean) * &scale + &self.beta
    }

    /// Returns (dx, dgamma, dbeta).
    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let b = dy.nrows() as f64;
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (&dxhat * b - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / b);
        (dx, dgamma, dbeta)
    }
}

/// Inverted dropout: kept units are scaled by 1/(1-p) at train time, so the
/// layer is the identity at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLayer {
    pub p: f64,
}

impl DropoutLayer {
    /// Mask entries are either 0 or 1/(1-p), drawn row-major.
    pub fn sample_mask(&self, rows: usize, cols: usize, rng: &mut SplitMix64) -> Array2<f64> {
        if self.p == 0.0 {
            return Array2::ones((rows, cols));
        }
        let scale = 1.0 / (1.0 - self.p);
        Array2::from_shape_simple_fn((rows, cols), || if rng.next_f64() >= self.p { scale } else { 0.0 })
    }

    pub fn apply(x: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
        x * mask
    }
}
