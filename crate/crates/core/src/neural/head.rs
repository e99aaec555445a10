//! Classification heads on top of the recurrent stack.

use rand_chacha::ChaCha8Rng;

use super::layers::{apply_mask, dropout_mask, Affine, BatchNorm, BatchNormCache, PRelu};
use super::param::{join, Module, Param};

/// Replacement for the final affine layer used when fine-tuning: the
/// penultimate activation is concatenated with extra per-speech inputs and
/// passed through two fresh affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneHead {
    pub fc_a: Affine,
    pub prelu: PRelu,
    pub dropout: f64,
    pub fc_b: Affine,
    pub extra_dims: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Linear(Affine),
    FineTune(FineTuneHead),
}

/// `fc1 -> batchnorm -> prelu -> dropout -> output -> sigmoid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc1: Affine,
    pub bn: BatchNorm,
    pub prelu: PRelu,
    pub dropout: f64,
    pub out: Output,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    batch: usize,
    x: Vec<f64>,
    bn: BatchNormCache,
    b1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    d1: Vec<f64>,
    ft: Option<FtCache>,
}

#[derive(Debug, Clone)]
struct FtCache {
    cat: Vec<f64>,
    za: Vec<f64>,
    mask: Option<Vec<f64>>,
    da: Vec<f64>,
}

impl Head {
    pub fn new(input: usize, width: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Affine::new(input, width, rng),
            bn: BatchNorm::new(width),
            prelu: PRelu::default(),
            dropout,
            out: Output::Linear(Affine::new(width, 1, rng)),
        }
    }

    pub fn zeros(input: usize, width: usize, dropout: f64) -> Self {
        Self {
            fc1: Affine::zeros(input, width),
            bn: BatchNorm::new(width),
            prelu: PRelu::default(),
            dropout,
            out: Output::Linear(Affine::zeros(width, 1)),
        }
    }

    pub fn width(&self) -> usize {
        self.fc1.output_dim()
    }

    /// Swaps the final affine layer for a freshly initialized fine-tune head.
    pub fn replace_output(
        &mut self,
        width: usize,
        extra_dims: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let input = self.width() + extra_dims;
        self.out = Output::FineTune(FineTuneHead {
            fc_a: Affine::new(input, width, rng),
            prelu: PRelu::default(),
            dropout,
            fc_b: Affine::new(width, 1, rng),
            extra_dims,
        });
    }

    pub fn extra_dims(&self) -> usize {
        match &self.out {
            Output::Linear(_) => 0,
            Output::FineTune(ft) => ft.extra_dims,
        }
    }

    fn concat(d1: &[f64], extras: &[f64], batch: usize, w: usize, e: usize) -> Vec<f64> {
        let mut cat = Vec::with_capacity(batch * (w + e));
        for b in 0..batch {
            cat.extend_from_slice(&d1[b * w..(b + 1) * w]);
            cat.extend_from_slice(&extras[b * e..(b + 1) * e]);
        }
        cat
    }

    /// Evaluation-mode logits.
    pub fn logits_eval(&self, x: &[f64], extras: &[f64], batch: usize) -> Vec<f64> {
        let a1 = self.fc1.forward(x, batch);
        let b1 = self.bn.forward_eval(&a1, batch);
        let d1 = self.prelu.forward(&b1);
        match &self.out {
            Output::Linear(fc2) => fc2.forward(&d1, batch),
            Output::FineTune(ft) => {
                let cat = Self::concat(&d1, extras, batch, self.width(), ft.extra_dims);
                let za = ft.fc_a.forward(&cat, batch);
                ft.fc_b.forward(&ft.prelu.forward(&za), batch)
            }
        }
    }

    /// Training-mode logits. Dropout is applied when `rng` is given.
    pub(crate) fn logits_train(
        &mut self,
        x: &[f64],
        extras: &[f64],
        batch: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, HeadCache) {
        let a1 = self.fc1.forward(x, batch);
        let (b1, bn) = self.bn.forward_train(&a1, batch);
        let p1 = self.prelu.forward(&b1);
        let mask1 = dropout_mask(p1.len(), self.dropout, rng.as_deref_mut());
        let d1 = apply_mask(&p1, mask1.as_ref());
        let w = self.width();
        let (logits, ft) = match &self.out {
            Output::Linear(fc2) => (fc2.forward(&d1, batch), None),
            Output::FineTune(ft) => {
                let cat = Self::concat(&d1, extras, batch, w, ft.extra_dims);
                let za = ft.fc_a.forward(&cat, batch);
                let pa = ft.prelu.forward(&za);
                let mask = dropout_mask(pa.len(), ft.dropout, rng.as_deref_mut());
                let da = apply_mask(&pa, mask.as_ref());
                (
                    ft.fc_b.forward(&da, batch),
                    Some(FtCache { cat, za, mask, da }),
                )
            }
        };
        let cache = HeadCache {
            batch,
            x: x.to_vec(),

            bn,
            b1,
            mask1,
            d1,
            ft,
        };
        (logits, cache)
    }

    /// Accumulates gradients from `dL/d logits`; returns `dL/dx`.
    pub(crate) fn backward(&mut self, cache: &HeadCache, dlogits: &[f64]) -> Vec<f64> {
        let batch = cache.batch;
        let w = self.width();
        let dd1 = match (&mut self.out, &cache.ft) {
            (Output::Linear(fc2), _) => fc2.backward(&cache.d1, dlogits, batch),
            (Output::FineTune(ft), Some(fc)) => {
                let dda = ft.fc_b.backward(&fc.da, dlogits, batch);
                let dpa = apply_mask(&dda, fc.mask.as_ref());
                let dza = ft.prelu.backward(&fc.za, &dpa);
                let dcat = ft.fc_a.backward(&fc.cat, &dza, batch);
                let e = ft.extra_dims;
                (0..batch)
                    .flat_map(|b| dcat[b * (w + e)..b * (w + e) + w].to_vec())
                    .collect()
            }
            (Output::FineTune(_), None) => unreachable!("fine-tune head trace missing"),
        };
        let dp1 = apply_mask(&dd1, cache.mask1.as_ref());
        let db1 = self.prelu.backward(&cache.b1, &dp1);
        let da1 = self.bn.backward(&cache.bn, &db1, batch);
        self.fc1.backward(&cache.x, &da1, batch)
    }
}

impl Module for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.prelu.visit(&join(prefix, "prelu"), f);
        match &self.out {
            Output::Linear(fc2) => fc2.visit(&join(prefix, "fc2"), f),
            Output::FineTune(ft) => {
                ft.fc_a.visit(&join(prefix, "fc_a"), f);
                ft.prelu.visit(&join(prefix, "prelu_a"), f);
                ft.fc_b.visit(&join(prefix, "fc_b"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.prelu.visit_mut(&join(prefix, "prelu"), f);
        match &mut self.out {
            Output::Linear(fc2) => fc2.visit_mut(&join(prefix, "fc2"), f),
            Output::FineTune(ft) => {
                ft.fc_a.visit_mut(&join(prefix, "fc_a"), f);
                ft.prelu.visit_mut(&join(prefix, "prelu_a"), f);
                ft.fc_b.visit_mut(&join(prefix, "fc_b"), f);
            }
        }
    }
}
