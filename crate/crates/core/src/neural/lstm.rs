//! Bidirectional LSTM stack with per-sample, length-masked recurrences.

use rand_chacha::ChaCha8Rng;

use super::param::{join, Module, Param};
use super::tensor::{axpy, matvec_acc, matvec_t_acc, outer_acc};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One direction of one layer. Gate blocks are stacked in the order
/// input, forget, cell, output along the `4H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
    input: usize,
    hidden: usize,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct CellTrace {
    /// Step inputs in processing order.
    xs: Vec<Vec<f64>>,
    /// Post-activation gates `[i, f, g, o]` per processed step.
    gates: Vec<Vec<f64>>,
    /// Cell states `c_t` per processed step.
    cs: Vec<Vec<f64>>,
    /// Hidden states `h_t` per processed step.
    hs: Vec<Vec<f64>>,
}

impl CellTrace {
    pub fn hidden_states(&self) -> &[Vec<f64>] {
        &self.hs
    }
}

impl LstmCell {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = Param::uniform(&[4 * hidden, input], 1.0 / (input as f64).sqrt(), rng);
        let w_hh = Param::uniform(&[4 * hidden, hidden], bound, rng);
        let mut bias = Param::uniform(&[4 * hidden], bound, rng);
        for b in &mut bias.value.data_mut()[hidden..2 * hidden] {
            *b = 1.0;
        }
        Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Param::zeros(&[4 * hidden, input]),
            w_hh: Param::zeros(&[4 * hidden, hidden]),
            bias: Param::zeros(&[4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs over `xs` in the given order from zero state.
    pub fn run<'a>(&self, xs: impl Iterator<Item = &'a [f64]>) -> CellTrace {
        let h = self.hidden;
        let mut trace = CellTrace::default();
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in xs {
            let mut z = self.bias.v().to_vec();
            matvec_acc(self.w_ih.v(), x, &mut z);
            matvec_acc(self.w_hh.v(), &h_prev, &mut z);
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let c: Vec<f64> = (0..h)
                .map(|k| z[h + k] * c_prev[k] + z[k] * z[2 * h + k])
                .collect();
            let hn: Vec<f64> = (0..h).map(|k| z[3 * h + k] * c[k].tanh()).collect();
            trace.xs.push(x.to_vec());
            trace.gates.push(z);
            trace.cs.push(c.clone());
            trace.hs.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        trace
    }

    /// Backpropagation through time. `dhs[s]` is the loss gradient flowing
    /// into the hidden output of processed step `s`. Returns input gradients
    /// in processing order.
    pub fn backward(&mut self, trace: &CellTrace, dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let steps = trace.hs.len();
        let mut dxs = vec![vec![0.0; self.input]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zero = vec![0.0; h];
        for s in (0..steps).rev() {
            let z = &trace.gates[s];
            let c = &trace.cs[s];
            let c_prev = if s > 0 { &trace.cs[s - 1] } else { &zero };
            let h_prev = if s > 0 { &trace.hs[s - 1] } else { &zero };
            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let dh = dhs[s][k] + dh_next[k];
                let (i, f, g, o) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let tc = c[k].tanh();
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            outer_acc(&dz, &trace.xs[s], self.w_ih.g());
            outer_acc(&dz, h_prev, self.w_hh.g());
            axpy(1.0, &dz, self.bias.g());
            matvec_t_acc(self.w_ih.v(), &dz, &mut dxs[s]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(self.w_hh.v(), &dz, &mut dh_next);
        }
        dxs
    }
}

impl Module for LstmCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and backward cells of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

/// Activations of one sequence through the whole stack.
#[derive(Debug, Clone)]
pub struct StackTrace {
    layers: Vec<(CellTrace, CellTrace)>,
    len: usize,
}

/// Stacked bidirectional LSTM. Layer `k > 0` consumes the `2H`
/// concatenation of both directions of layer `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmStack {
    pub layers: Vec<BiLayer>,
    input: usize,
    hidden: usize,
}

impl BiLstmStack {
    pub fn new(input: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..layers)
            .map(|k| {
                let i = if k == 0 { input } else { 2 * hidden };
                BiLayer {
                    fwd: LstmCell::new(i, hidden, rng),
                    bwd: LstmCell::new(i, hidden, rng),
                }
            })
            .collect();
        Self {
            layers,
            input,
            hidden,
        }
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|k| {
                let i = if k == 0 { input } else { 2 * hidden };
                BiLayer {
                    fwd: LstmCell::zeros(i, hidden),
                    bwd: LstmCell::zeros(i, hidden),
                }
            })
            .collect();
        Self {
            layers,
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Runs one sequence of `len` rows (each `input_dim` wide, row-major in
    /// `x`). Returns `[h_fwd(last step) | h_bwd(first step)]` from the top
    /// layer together with the trace.
    pub fn forward(&self, x: &[f64], len: usize) -> (Vec<f64>, StackTrace) {
        debug_assert!(len > 0);
        let h = self.hidden;
        let mut seq: Vec<Vec<f64>> = x[..len * self.input]
            .chunks_exact(self.input)
            .map(<[f64]>::to_vec)
            .collect();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let tf = layer.fwd.run(seq.iter().map(Vec::as_slice));
            let tb = layer.bwd.run(seq.iter().rev().map(Vec::as_slice));
            seq = (0..len)
                .map(|t| {
                    let mut row = tf.hs[t].clone();
                    row.extend_from_slice(&tb.hs[len - 1 - t]);
                    row
                })
                .collect();
            traces.push((tf, tb));
        }
        let mut out = seq[len - 1][..h].to_vec();
        out.extend_from_slice(&seq[0][h..]);
        (
            out,
            StackTrace {
                layers: traces,
                len,
            },
        )
    }

    /// Accumulates parameter gradients given `dL/d out` for the vector
    /// returned by [`forward`](Self::forward). Returns input gradients
    /// `[len, input_dim]` row-major.
    pub fn backward(&mut self, trace: &StackTrace, dout: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let len = trace.len;
        // gradient w.r.t. each layer's time-indexed output rows [len][2H]
        let mut dseq = vec![vec![0.0; 2 * h]; len];
        dseq[len - 1][..h].copy_from_slice(&dout[..h]);
        dseq[0][h..].copy_from_slice(&dout[h..]);
        for (layer, (tf, tb)) in self.layers.iter_mut().zip(&trace.layers).rev() {
            let dhf: Vec<Vec<f64>> = dseq.iter().map(|r| r[..h].to_vec()).collect();
            // backward cell processed step s corresponds to time len-1-s
            let dhb: Vec<Vec<f64>> = (0..len).map(|s| dseq[len - 1 - s][h..].to_vec()).collect();
            let dxf = layer.fwd.backward(tf, &dhf);
            let dxb = layer.bwd.backward(tb, &dhb);
            dseq = (0..len)
                .map(|t| {
                    let mut r = dxf[t].clone();
                    axpy(1.0, &dxb[len - 1 - t], &mut r);
                    r
                })
                .collect();
        }
        dseq.concat()
    }
}

impl Module for BiLstmStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (k, l) in self.layers.iter().enumerate() {
            l.fwd.visit(&join(prefix, &format!("layer{k}.fwd")), f);
            l.bwd.visit(&join(prefix, &format!("layer{k}.bwd")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.fwd.visit_mut(&join(prefix, &format!("layer{k}.fwd")), f);
            l.bwd.visit_mut(&join(prefix, &format!("layer{k}.bwd")), f);
        }
    }
}
