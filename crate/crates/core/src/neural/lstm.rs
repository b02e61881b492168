use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, ParamStore, Tensor};
use crate::rng::Rng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One-directional LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

struct Weights<'a> {
    w_ih: &'a [f64],
    w_hh: &'a [f64],
    bias: &'a [f64],
}

/// Per-step activations kept for backpropagation, in processing order.
#[derive(Clone, Debug, Default)]
pub struct LstmTrace {
    order: Vec<usize>,
    gates: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

/// Recurrent state carried between single steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Lstm {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Lstm { prefix: prefix.into(), input_dim, hidden_dim }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut Rng) {
        let h4 = 4 * self.hidden_dim;
        store.insert(self.name("w_ih"), Tensor::xavier(&[h4, self.input_dim], rng));
        store.insert(self.name("w_hh"), Tensor::xavier(&[h4, self.hidden_dim], rng));
        store.insert(self.name("bias"), Tensor::zeros(&[h4]));
    }

    fn weights<'a>(&self, params: &'a ParamStore) -> Weights<'a> {
        Weights {
            w_ih: &params.get(&self.name("w_ih")).data,
            w_hh: &params.get(&self.name("w_hh")).data,
            bias: &params.get(&self.name("bias")).data,
        }
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState { h: vec![0.0; self.hidden_dim], c: vec![0.0; self.hidden_dim] }
    }

    /// Post-activation gates for one step.
    fn gates(&self, w: &Weights<'_>, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let h = self.hidden_dim;
        let mut a = w.bias.to_vec();
        matvec_acc(w.w_ih, x, &mut a);
        matvec_acc(w.w_hh, h_prev, &mut a);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        a
    }

    pub fn step(&self, params: &ParamStore, x: &[f64], state: &LstmState) -> LstmState {
        let h = self.hidden_dim;
        let g = self.gates(&self.weights(params), x, &state.h);
        let c: Vec<f64> = (0..h).map(|k| g[h + k] * state.c[k] + g[k] * g[2 * h + k]).collect();
        let hs = (0..h).map(|k| g[3 * h + k] * c[k].tanh()).collect();
        LstmState { h: hs, c }
    }

    /// Runs over `xs` (reversed when `reverse`), returning hidden states
    /// indexed by input position.
    pub fn forward(&self, params: &ParamStore, xs: &[Vec<f64>], reverse: bool) -> (Vec<Vec<f64>>, LstmTrace) {
        let n = xs.len();
        let h = self.hidden_dim;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let mut trace = LstmTrace { order: order.clone(), ..Default::default() };
        let mut out = vec![Vec::new(); n];
        let zeros = vec![0.0; h];
        let w = self.weights(params);
        for (s, &pos) in order.iter().enumerate() {
            let h_prev = if s == 0 { &zeros } else { &trace.h[s - 1] };
            let c_prev = if s == 0 { &zeros } else { &trace.c[s - 1] };
            let g = self.gates(&w, &xs[pos], h_prev);
            let c: Vec<f64> = (0..h).map(|k| g[h + k] * c_prev[k] + g[k] * g[2 * h + k]).collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hs: Vec<f64> = (0..h).map(|k| g[3 * h + k] * tc[k]).collect();
            out[pos] = hs.clone();
            trace.gates.push(g);
            trace.c.push(c);
            trace.tanh_c.push(tc);
            trace.h.push(hs);
        }
        (out, trace)
    }

    /// Backpropagates `d_hs` (indexed by position), accumulating parameter
    /// gradients and returning input gradients indexed by position.
    pub fn backward(
        &self,
        params: &ParamStore,
        trace: &LstmTrace,
        xs: &[Vec<f64>],
        d_hs: &[Vec<f64>],
        grads: &mut ParamStore,
    ) -> Vec<Vec<f64>> {
        let h = self.hidden_dim;
        let n = xs.len();
        let w_ih = &params.get(&self.name("w_ih")).data;
        let w_hh = &params.get(&self.name("w_hh")).data;
        let mut d_xs = vec![vec![0.0; self.input_dim]; n];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let mut g_ih = std::mem::take(&mut grads.get_mut(&self.name("w_ih")).data);
        let mut g_hh = std::mem::take(&mut grads.get_mut(&self.name("w_hh")).data);
        let mut g_b = std::mem::take(&mut grads.get_mut(&self.name("bias")).data);
        for s in (0..n).rev() {
            let pos = trace.order[s];
            let g = &trace.gates[s];
            let tc = &trace.tanh_c[s];
            let c_prev = if s == 0 { &zeros } else { &trace.c[s - 1] };
            let h_prev = if s == 0 { &zeros } else { &trace.h[s - 1] };
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let dh = d_hs[pos][k] + dh_next[k];
                let d_o = dh * tc[k];
                let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
                da[k] = dc * gg * i * (1.0 - i);
                da[h + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - gg * gg);
                da[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            outer_acc(&mut g_ih, &da, &xs[pos]);
            outer_acc(&mut g_hh, &da, h_prev);
            g_b.iter_mut().zip(&da).for_each(|(b, d)| *b += d);
            matvec_t_acc(w_ih, &da, &mut d_xs[pos]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(w_hh, &da, &mut dh_next);
        }
        grads.get_mut(&self.name("w_ih")).data = g_ih;
        grads.get_mut(&self.name("w_hh")).data = g_hh;
        grads.get_mut(&self.name("bias")).data = g_b;
        d_xs
    }
}
