//! Affine, batch-norm, PReLU and dropout layers over `[B, D]` row batches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{join, Module, Param};
use super::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc};

/// `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Param,
    pub bias: Param,
}

impl Affine {
    /// Uniform `±1/sqrt(fan_in)` weights and biases.
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: Param::uniform(&[output], bound, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Param::zeros(&[output, input]),
            bias: Param::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut y = Vec::with_capacity(batch * o);
        for b in 0..batch {
            let mut row = self.bias.v().to_vec();
            matvec_acc(self.weight.v(), &x[b * i..(b + 1) * i], &mut row);
            y.extend(row);
        }
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut dx = vec![0.0; batch * i];
        for b in 0..batch {
            let g = &dy[b * o..(b + 1) * o];
            let xb = &x[b * i..(b + 1) * i];
            outer_acc(g, xb, self.weight.g());
            axpy(1.0, g, self.bias.g());
            matvec_t_acc(self.weight.v(), g, &mut dx[b * i..(b + 1) * i]);
        }
        dx
    }
}

impl Module for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Batch normalization over the batch axis. Training uses the batch's
/// population statistics and updates running estimates; evaluation uses the
/// running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        let mut running_var = Param::filled(&[dim], 1.0);
        running_var.trainable = false;
        let mut running_mean = Param::zeros(&[dim]);
        running_mean.trainable = false;
        Self {
            gamma: Param::filled(&[dim], 1.0),
            beta: Param::zeros(&[dim]),
            running_mean,
            running_var,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> (Vec<f64>, BatchNormCache) {
        let d = self.dim();
        let n = batch as f64;
        let mut mean = vec![0.0; d];
        for b in 0..batch {
            axpy(1.0, &x[b * d..(b + 1) * d], &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for b in 0..batch {
            for j in 0..d {
                let c = x[b * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut xhat = vec![0.0; batch * d];
        let mut y = vec![0.0; batch * d];
        let (gamma, beta) = (self.gamma.v(), self.beta.v());
        for b in 0..batch {
            for j in 0..d {
                let k = b * d + j;
                xhat[k] = (x[k] - mean[j]) * inv_std[j];
                y[k] = gamma[j] * xhat[k] + beta[j];
            }
        }

        let m = self.momentum;
        let unbias = if batch > 1 { n / (n - 1.0) } else { 1.0 };
        for j in 0..d {
            let rm = &mut self.running_mean.value.data_mut()[j];
            *rm = (1.0 - m) * *rm + m * mean[j];
            let rv = &mut self.running_var.value.data_mut()[j];
            *rv = (1.0 - m) * *rv + m * var[j] * unbias;
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let d = self.dim();
        let (gamma, beta) = (self.gamma.v(), self.beta.v());
        let (rm, rv) = (self.running_mean.v(), self.running_var.v());
        let mut y = vec![0.0; batch * d];
        for b in 0..batch {
            for j in 0..d {
                let k = b * d + j;
                y[k] = gamma[j] * (x[k] - rm[j]) / (rv[j] + self.eps).sqrt() + beta[j];
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &[f64], batch: usize) -> Vec<f64> {
        let d = self.dim();
        let n = batch as f64;
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        let gamma = self.gamma.v().to_vec();
        {
            let dg = self.gamma.grad.data_mut();
            for b in 0..batch {
                for j in 0..d {
                    let k = b * d + j;
                    dg[j] += dy[k] * cache.xhat[k];
                }
            }
        }
        {
            let db = self.beta.grad.data_mut();
            for b in 0..batch {
                axpy(1.0, &dy[b * d..(b + 1) * d], db);
            }
        }
        for b in 0..batch {
            for j in 0..d {
                let k = b * d + j;
                let dxh = dy[k] * gamma[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * cache.xhat[k];
            }
        }
        let mut dx = vec![0.0; batch * d];
        for b in 0..batch {
            for j in 0..d {
                let k = b * d + j;
                let dxh = dy[k] * gamma[j];
                dx[k] = cache.inv_std[j] / n
                    * (n * dxh - sum_dxhat[j] - cache.xhat[k] * sum_dxhat_xhat[j]);
            }
        }
        dx
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Parametric ReLU with one learned slope shared across units.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Param,
}

impl Default for PRelu {
    fn default() -> Self {
        Self {
            slope: Param::filled(&[1], 0.25),
        }
    }
}

impl PRelu {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let a = self.slope.v()[0];
        x.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect()
    }

    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let a = self.slope.v()[0];
        let mut da = 0.0;
        let dx = x
            .iter()
            .zip(dy)
            .map(|(&v, &g)| {
                if v > 0.0 {
                    g
                } else {
                    da += g * v;
                    a * g
                }
            })
            .collect();
        self.slope.g()[0] += da;
        dx
    }
}

impl Module for PRelu {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "slope"), &self.slope);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "slope"), &mut self.slope);
    }
}

/// Inverted-dropout mask: kept units scaled by `1/(1-rate)`. `None` when
/// the layer is an identity (rate 0 or no RNG, i.e. evaluation).
pub fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

pub fn apply_mask(x: &[f64], mask: Option<&Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(dropout_mask(10, 0.0, Some(&mut rng)).is_none());
        assert!(dropout_mask(10, 0.5, None).is_none());
        let x = vec![1.0, 2.0];
        assert_eq!(apply_mask(&x, None), x);
        let m = dropout_mask(1000, 0.5, Some(&mut rng)).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::new(2);
        let x = [1.0, 2.0, 3.0, 6.0];
        let (y, _) = bn.forward_train(&x, 2);
        // batch-normalized columns have zero mean
        assert!((y[0] + y[2]).abs() < 1e-12 && (y[1] + y[3]).abs() < 1e-12);
        assert!((bn.running_mean.v()[0] - 0.2).abs() < 1e-12);
        let e = bn.forward_eval(&x, 2);
        assert_ne!(e, y);
    }

    #[test]
    fn prelu_slope() {
        let p = PRelu::default();
        assert_eq!(p.forward(&[2.0, -2.0]), vec![2.0, -0.5]);
    }
}
