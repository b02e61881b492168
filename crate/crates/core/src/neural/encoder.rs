use serde::{Deserialize, Serialize};

use super::lstm::{Lstm, LstmTrace};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::{MASK_ENT, MASK_TRG, PAD, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per direction; the encoder output is twice this.
    pub hidden_dim: usize,
    pub tagset_size: usize,
    /// Hold the MASK_ENT and MASK_TRG rows at zero, like PAD.
    #[serde(default)]
    pub zero_masks: bool,
}

impl EncoderConfig {
    pub const DEFAULT_EMBED_DIM: usize = 50;
    pub const DEFAULT_HIDDEN_DIM: usize = 200;

    pub fn new(vocab_size: usize, tagset_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            hidden_dim: Self::DEFAULT_HIDDEN_DIM,
            tagset_size,
            zero_masks: false,
        }
    }

    /// Embedding rows that stay at zero and receive no updates.
    pub fn frozen_rows(&self) -> &'static [usize] {
        if self.zero_masks {
            &[PAD, MASK_ENT, MASK_TRG]
        } else {
            &[PAD]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let specials = [PAD, UNK, MASK_ENT, MASK_TRG];
        if specials.iter().any(|&s| s >= self.vocab_size) {
            return Err(Error::Config(format!("vocab_size {} does not cover the special token ids", self.vocab_size)));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// Per-token encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSeq {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl HiddenSeq {
    pub fn zeros(len: usize, dim: usize) -> Self {
        HiddenSeq { dim, rows: vec![vec![0.0; dim]; len] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A contextual token encoder with an explicit backward pass.
pub trait Encoder {
    type Cache;

    fn output_dim(&self) -> usize;

    fn forward(&self, params: &ParamStore, ids: &[usize]) -> Result<(HiddenSeq, Self::Cache)>;

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    fn backward(&self, params: &ParamStore, cache: &Self::Cache, d_out: &HiddenSeq, grads: &mut ParamStore);
}

/// Embedding table followed by a bidirectional LSTM; each token's output is
/// the concatenation of the forward and backward hidden states.
///
/// The PAD row is held at zero and never updated, so occluding a phrase
/// with PAD feeds zero vectors into the recurrence.
#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    pub config: EncoderConfig,
    prefix: String,
    fwd: Lstm,
    bwd: Lstm,
}

pub struct BiLstmCache {
    ids: Vec<usize>,
    xs: Vec<Vec<f64>>,
    fwd: LstmTrace,
    bwd: LstmTrace,
}

impl BiLstmEncoder {
    pub fn new(prefix: &str, config: EncoderConfig) -> Self {
        let fwd = Lstm::new(format!("{prefix}.fwd"), config.embed_dim, config.hidden_dim);
        let bwd = Lstm::new(format!("{prefix}.bwd"), config.embed_dim, config.hidden_dim);
        BiLstmEncoder { config, prefix: prefix.to_string(), fwd, bwd }
    }

    fn embed_name(&self) -> String {
        format!("{}.embed", self.prefix)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut Rng) {
        let mut emb = Tensor::xavier(&[self.config.vocab_size, self.config.embed_dim], rng);
        for &r in self.config.frozen_rows() {
            emb.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        store.insert(self.embed_name(), emb);
        self.fwd.register(store, rng);
        self.bwd.register(store, rng);
    }

    fn embed(&self, params: &ParamStore, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let table = params.get(&self.embed_name());
        ids.iter()
            .map(|&id| {
                if id >= self.config.vocab_size {
                    Err(Error::Input(format!("token id {id} >= vocab size {}", self.config.vocab_size)))
                } else {
                    Ok(table.row(id).to_vec())
                }
            })
            .collect()
    }

    /// Output without keeping activations for backpropagation.
    pub fn encode(&self, params: &ParamStore, ids: &[usize]) -> Result<HiddenSeq> {
        Ok(self.forward(params, ids)?.0)
    }
}

impl Encoder for BiLstmEncoder {
    type Cache = BiLstmCache;

    fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn forward(&self, params: &ParamStore, ids: &[usize]) -> Result<(HiddenSeq, BiLstmCache)> {
        let xs = self.embed(params, ids)?;
        let (hf, tf) = self.fwd.forward(params, &xs, false);
        let (hb, tb) = self.bwd.forward(params, &xs, true);
        let rows = hf
            .into_iter()
            .zip(hb)
            .map(|(mut a, b)| {
                a.extend(b);
                a
            })
            .collect();
        let out = HiddenSeq { dim: self.output_dim(), rows };
        Ok((out, BiLstmCache { ids: ids.to_vec(), xs, fwd: tf, bwd: tb }))
    }

    fn backward(&self, params: &ParamStore, cache: &BiLstmCache, d_out: &HiddenSeq, grads: &mut ParamStore) {
        let h = self.config.hidden_dim;
        let d_f: Vec<Vec<f64>> = d_out.rows.iter().map(|r| r[..h].to_vec()).collect();
        let d_b: Vec<Vec<f64>> = d_out.rows.iter().map(|r| r[h..].to_vec()).collect();
        let dx_f = self.fwd.backward(params, &cache.fwd, &cache.xs, &d_f, grads);
        let dx_b = self.bwd.backward(params, &cache.bwd, &cache.xs, &d_b, grads);
        let frozen = self.config.frozen_rows();
        let g_emb = grads.get_mut(&self.embed_name());
        for ((&id, a), b) in cache.ids.iter().zip(&dx_f).zip(&dx_b) {
            if frozen.contains(&id) {
                continue;
            }
            for ((g, x), y) in g_emb.row_mut(id).iter_mut().zip(a).zip(b) {
                *g += x + y;
            }
        }
    }
}

/// Runs the encoder stored under `prefix` in `params`.
pub fn encode(params: &ParamStore, config: &EncoderConfig, ids: &[usize]) -> Result<HiddenSeq> {
    BiLstmEncoder::new("enc", config.clone()).encode(params, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (BiLstmEncoder, ParamStore) {
        let cfg = EncoderConfig { vocab_size: 10, embed_dim: 4, hidden_dim: 3, tagset_size: 3, zero_masks: false };
        let enc = BiLstmEncoder::new("enc", cfg);
        let mut p = ParamStore::new(5);
        enc.register(&mut p, &mut crate::rng::rng(5));
        (enc, p)
    }

    #[test]
    fn pad_only_shape() {
        let (enc, p) = setup();
        let h = enc.encode(&p, &[PAD, PAD, PAD]).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.dim, 6);
        assert_eq!(encode(&p, &enc.config, &[PAD, PAD, PAD]).unwrap(), h);
    }

    #[test]
    fn pure() {
        let (enc, p) = setup();
        assert_eq!(enc.encode(&p, &[4, 5, 6]).unwrap(), enc.encode(&p, &[4, 5, 6]).unwrap());
    }

    #[test]
    fn out_of_range_id() {
        let (enc, p) = setup();
        assert!(enc.encode(&p, &[4, 10]).is_err());
    }

    #[test]
    fn embedding_perturbation_is_directional() {
        // Token 7 sits at position 2 of 5. The forward half may change only
        // at positions >= 2, the backward half only at positions <= 2.
        let (enc, p) = setup();
        let ids = [4, 5, 7, 6, 8];
        let base = enc.encode(&p, &ids).unwrap();
        let mut q = p.clone();
        q.get_mut("enc.embed").row_mut(7)[1] += 0.5;
        let moved = enc.encode(&q, &ids).unwrap();
        for pos in 0..5 {
            let (f0, b0) = base.rows[pos].split_at(3);
            let (f1, b1) = moved.rows[pos].split_at(3);
            assert_eq!(f0 == f1, pos < 2, "forward half at {pos}");
            assert_eq!(b0 == b1, pos > 2, "backward half at {pos}");
        }
    }

    #[test]
    fn specials_must_fit() {
        let cfg = EncoderConfig { vocab_size: 3, embed_dim: 2, hidden_dim: 2, tagset_size: 1, zero_masks: false };
        assert!(cfg.validate().is_err());
    }
}
