//! Small numeric core: parameter storage, a BiLSTM encoder with explicit
//! backward passes, linear layers, SGD and a finite-difference checker.

mod checkpoint;
mod encoder;
mod gradcheck;
mod lstm;
mod ops;
mod optim;
mod tensor;

pub use checkpoint::{checkpoint_kind, load_checkpoint, save_checkpoint, to_checkpoint_string, FORMAT_TAG};
pub use encoder::{encode, BiLstmCache, BiLstmEncoder, Encoder, EncoderConfig, HiddenSeq};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use lstm::{Lstm, LstmState, LstmTrace};
pub use ops::{log_softmax, log_sum_exp, softmax, Linear};
pub use optim::{sgd_step, CLIP_NORM};
pub use tensor::{dot, matvec_acc, matvec_t_acc, outer_acc, ParamStore, Tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization settings shared by every trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 10,
            lr: 0.01,
            seed: 0,
            embed_dim: EncoderConfig::DEFAULT_EMBED_DIM,
            hidden_dim: EncoderConfig::DEFAULT_HIDDEN_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::rng(crate::rng::derive(seed, "epoch", &[epoch as u64])));
    order
}

/// Mini-batch SGD over `n` examples. `loss_grad(i, params, grads)` adds the
/// gradient of example `i` into `grads` and returns its loss; gradients are
/// averaged over the batch. Returns the mean example loss of each epoch.
pub(crate) fn run_sgd<F>(params: &mut ParamStore, n: usize, cfg: &TrainConfig, mut loss_grad: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, &ParamStore, &mut ParamStore) -> Result<f64>,
{
    cfg.validate()?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                total += loss_grad(i, params, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(params, &grads, cfg.lr)?;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
        }
        losses.push(total / n.max(1) as f64);
    }
    Ok(losses)
}
