use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::param::{Module, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}`"
            ))),
        }
    }
}

/// First-order optimizer. State is indexed by the visiting order of
/// trainable parameters, so one optimizer serves one model layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter of `module` using its
    /// current gradients.
    pub fn step(&mut self, module: &mut dyn Module) {
        self.t += 1;
        let mut idx = 0;
        module.visit_mut("", &mut |_, p| {
            if p.trainable {
                self.update(idx, p);
                idx += 1;
            }
        });
    }

    fn update(&mut self, idx: usize, p: &mut Param) {
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                let g = p.grad.data().to_vec();
                for (x, g) in p.value.data_mut().iter_mut().zip(g) {
                    *x -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() <= idx {
                    self.m.resize(idx + 1, Vec::new());
                    self.v.resize(idx + 1, Vec::new());
                }
                let n = p.value.len();
                if self.m[idx].len() != n {
                    self.m[idx] = vec![0.0; n];
                    self.v[idx] = vec![0.0; n];
                }
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
                let g = p.grad.data();
                let mut delta = vec![0.0; n];
                for k in 0..n {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    let mh = m[k] / c1;
                    let vh = v[k] / c2;
                    delta[k] = self.lr * mh / (vh.sqrt() + self.eps);
                }
                for (x, d) in p.value.data_mut().iter_mut().zip(delta) {
                    *x -= d;
                }
            }
        }
    }
}

impl Module for Param {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(prefix, self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(prefix, self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn quadratic_run(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        // loss = (x - 1.5)^2, minimum at x* = 1.5
        let target = 1.5;
        let mut x = Param::new(Tensor::zeros(&[1]));
        let mut opt = Optimizer::new(kind, lr).unwrap();
        for _ in 0..steps {
            let xv = x.v()[0];
            x.g()[0] = 2.0 * (xv - target);
            opt.step(&mut x);
        }
        x.v()[0]
    }

    #[test]
    fn adam_reaches_quadratic_minimum() {
        let x = quadratic_run(OptimizerKind::Adam, 0.05, 200);
        assert!((x - 1.5).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn sgd_reaches_quadratic_minimum() {
        let x = quadratic_run(OptimizerKind::Sgd, 0.1, 200);
        assert!((x - 1.5).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            assert_eq!(quadratic_run(kind, 0.0, 5), 0.0);
        }
    }

    #[test]
    fn buffers_untouched() {
        let mut p = Param::buffer(Tensor::zeros(&[2]));
        p.g()[0] = 1.0;
        Optimizer::adam(0.1).unwrap().step(&mut p);
        assert_eq!(p.v(), &[0.0, 0.0]);
    }

    #[test]
    fn kind_parses() {
        assert_eq!(
            "Adam".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
