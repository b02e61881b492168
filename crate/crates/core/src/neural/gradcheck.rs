//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;

use super::tensor::ParamStore;
use crate::error::{Error, Result};
use crate::rng::rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates, drawn with `seed`. `None`
    /// checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub floor: f64,
    /// `(tensor, flat index range)` pairs the model never updates, such as
    /// the zero PAD embedding row; skipped.
    pub frozen: Vec<(String, std::ops::Range<usize>)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-4, max_coords: None, seed: 0, floor: 1e-6, frozen: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `loss_fn` returns the loss and its analytic gradient at the given
/// parameters. Returns the largest `|a − n| / max(|a|, |n|, floor)` over
/// the checked coordinates.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamStore)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    params.check_same_layout(&analytic)?;
    let mut coords: Vec<(String, usize)> = params
        .coordinates()
        .into_iter()
        .filter(|(n, i)| !opts.frozen.iter().any(|(f, r)| f == n && r.contains(i)))
        .collect();
    if let Some(m) = opts.max_coords {
        if m < coords.len() {
            let mut r = rng(opts.seed);
            let mut idx = sample(&mut r, coords.len(), m).into_vec();
            idx.sort_unstable();
            coords = idx.into_iter().map(|i| coords[i].clone()).collect();
        }
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: coords.len() };
    for (name, i) in coords {
        let orig = probe.get(&name).data[i];
        probe.get_mut(&name).data[i] = orig + opts.eps;
        let plus = loss_fn(&probe)?.0;
        probe.get_mut(&name).data[i] = orig - opts.eps;
        let minus = loss_fn(&probe)?.0;
        probe.get_mut(&name).data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss near {name}[{i}]")));
        }
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic.get(&name).data[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some((name, i));
        }
    }
    Ok(report)
}
