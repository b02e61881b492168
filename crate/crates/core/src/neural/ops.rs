use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, ParamStore, Tensor};
use crate::rng::Rng;

/// Affine map `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    prefix: String,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input_dim: usize, output_dim: usize) -> Self {
        Linear { prefix: prefix.into(), input_dim, output_dim }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut Rng) {
        store.insert(self.w(), Tensor::xavier(&[self.output_dim, self.input_dim], rng));
        store.insert(self.b(), Tensor::zeros(&[self.output_dim]));
    }

    pub fn forward(&self, params: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut y = params.get(&self.b()).data.clone();
        matvec_acc(&params.get(&self.w()).data, x, &mut y);
        y
    }

    pub fn forward_seq(&self, params: &ParamStore, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = &params.get(&self.w()).data;
        let b = &params.get(&self.b()).data;
        xs.iter()
            .map(|x| {
                let mut y = b.clone();
                matvec_acc(w, x, &mut y);
                y
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx` per row.
    pub fn backward_seq(
        &self,
        params: &ParamStore,
        xs: &[Vec<f64>],
        dys: &[Vec<f64>],
        grads: &mut ParamStore,
    ) -> Vec<Vec<f64>> {
        let w = &params.get(&self.w()).data;
        let mut gw = std::mem::take(&mut grads.get_mut(&self.w()).data);
        let gb = grads.get_mut(&self.b());
        let mut dxs = Vec::with_capacity(xs.len());
        for (x, dy) in xs.iter().zip(dys) {
            gb.data.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            outer_acc(&mut gw, dy, x);
            let mut dx = vec![0.0; self.input_dim];
            matvec_t_acc(w, dy, &mut dx);
            dxs.push(dx);
        }
        grads.get_mut(&self.w()).data = gw;
        dxs
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|x| x - z).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
