use super::tensor::ParamStore;
use crate::error::{Error, Result};

pub const CLIP_NORM: f64 = 5.0;

/// `θ ← θ − lr·g` after rescaling `g` so its global L2 norm is at most
/// [`CLIP_NORM`]. Fails on layout mismatch or if the update leaves a
/// non-finite value behind.
pub fn sgd_step(params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
    params.check_same_layout(grads)?;
    let norm = grads.l2_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    let scale = if norm > CLIP_NORM { CLIP_NORM / norm } else { 1.0 };
    for ((name, p), g) in params.tensors.iter_mut().zip(grads.tensors.values()) {
        for (x, d) in p.data.iter_mut().zip(&g.data) {
            *x -= lr * scale * d;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("parameter {name} after update")));
        }
    }
    Ok(())
}
