//! Left-to-right LSTM language model used to resample context words.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Tag, TaggedSentence};
use crate::error::{Error, Result};
use crate::neural::{
    load_checkpoint, log_softmax, run_sgd, save_checkpoint, Linear, Lstm, LstmState, ParamStore, Tensor, TrainConfig,
};
use crate::rng::rng;
use crate::vocab::{Vocab, PAD};

pub const CHECKPOINT_KIND: &str = "lm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub temperature: f64,
    /// Drop tokens seen inside training entities from the sampling support.
    pub no_entity_samples: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        LmConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
            temperature: 1.0,
            no_entity_samples: false,
        }
    }
}

impl LmConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        self.train_config().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangModel {
    pub vocab: Vocab,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub temperature: f64,
    /// Token ids that may be sampled.
    pub support: Vec<bool>,
    pub params: ParamStore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrainLog {
    pub epoch_losses: Vec<f64>,
    pub perplexity: f64,
}

impl LangModel {
    pub fn init(vocab: Vocab, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be positive".into()));
        }
        let support = (0..vocab.len()).map(|i| !Vocab::is_special(i)).collect();
        let mut m =
            LangModel { vocab, embed_dim, hidden_dim, temperature: 1.0, support, params: ParamStore::new(seed) };
        let mut r = rng(seed);
        let mut emb = Tensor::xavier(&[m.vocab.len(), embed_dim], &mut r);
        emb.row_mut(PAD).iter_mut().for_each(|v| *v = 0.0);
        let mut params = ParamStore::new(seed);
        params.insert("lm.embed", emb);
        m.rnn().register(&mut params, &mut r);
        m.out().register(&mut params, &mut r);
        m.params = params;
        Ok(m)
    }

    fn rnn(&self) -> Lstm {
        Lstm::new("lm.rnn", self.embed_dim, self.hidden_dim)
    }

    fn out(&self) -> Linear {
        Linear::new("lm.out", self.hidden_dim, self.vocab.len())
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab.len()) {
            Some(i) => Err(Error::Input(format!("token id {i} >= vocab size {}", self.vocab.len()))),
            None => Ok(()),
        }
    }

    /// Summed next-token negative log-likelihood of `ids` (PAD serves as the
    /// start symbol), with gradients added into `grads`.
    pub fn sentence_loss(&self, params: &ParamStore, ids: &[usize], grads: &mut ParamStore) -> Result<f64> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Ok(0.0);
        }
        let inputs: Vec<usize> = std::iter::once(PAD).chain(ids[..ids.len() - 1].iter().copied()).collect();
        let table = params.get("lm.embed");
        let xs: Vec<Vec<f64>> = inputs.iter().map(|&i| table.row(i).to_vec()).collect();
        let rnn = self.rnn();
        let out = self.out();
        let (hs, trace) = rnn.forward(params, &xs, false);
        let logits = out.forward_seq(params, &hs);
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(ids.len());
        for (l, &y) in logits.iter().zip(ids) {
            let lp = log_softmax(l);
            loss -= lp[y];
            let mut d: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            d[y] -= 1.0;
            d_logits.push(d);
        }
        let dh = out.backward_seq(params, &hs, &d_logits, grads);
        let dx = rnn.backward(params, &trace, &xs, &dh, grads);
        let g = grads.get_mut("lm.embed");
        for (&i, d) in inputs.iter().zip(&dx) {
            if i != PAD {
                g.row_mut(i).iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
        }
        Ok(loss)
    }

    pub fn perplexity(&self, data: &[Vec<usize>]) -> Result<f64> {
        let mut nll = 0.0;
        let mut n = 0usize;
        let mut scratch = self.params.zeros_like();
        for ids in data {
            nll += self.sentence_loss(&self.params, ids, &mut scratch)?;
            n += ids.len();
        }
        Ok(if n == 0 { 1.0 } else { (nll / n as f64).exp() })
    }

    fn advance(&self, token: usize, state: &LstmState) -> LstmState {
        self.rnn().step(&self.params, self.params.get("lm.embed").row(token), state)
    }

    /// Sampling distribution over the vocabulary after reading `state`:
    /// temperature-scaled softmax restricted to the support.
    fn distribution(&self, state: &LstmState) -> Vec<f64> {
        let logits = self.out().forward(&self.params, &state.h);
        let scaled: Vec<f64> = logits
            .iter()
            .zip(&self.support)
            .map(|(&l, &ok)| if ok { l / self.temperature } else { f64::NEG_INFINITY })
            .collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return vec![0.0; scaled.len()];
        }
        let e: Vec<f64> = scaled.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Predictive sampling distribution for the token following `prefix`.
    pub fn predictive(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(prefix)?;
        let mut state = self.advance(PAD, &self.rnn().initial_state());
        for &t in prefix {
            state = self.advance(t, &state);
        }
        Ok(self.distribution(&state))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: LangModel = load_checkpoint(path, &[CHECKPOINT_KIND])?;
        let fresh = LangModel::init(m.vocab.clone(), m.embed_dim, m.hidden_dim, 0)?;
        fresh.params.check_same_layout(&m.params)?;
        if m.support.len() != m.vocab.len() {
            return Err(Error::Shape("support mask does not match vocabulary".into()));
        }
        Ok(m)
    }
}

fn draw(probs: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return last;
            }
        }
    }
    last
}

/// Trains on the sentences of `data`, building its own vocabulary from them.
pub fn train_lm(data: &[TaggedSentence], cfg: &LmConfig) -> Result<(LangModel, LmTrainLog)> {
    train_lm_with_vocab(data, Vocab::build(data), cfg)
}

/// Trains with a fixed vocabulary, so sampled ids line up with a classifier
/// built over the same vocabulary.
pub fn train_lm_with_vocab(data: &[TaggedSentence], vocab: Vocab, cfg: &LmConfig) -> Result<(LangModel, LmTrainLog)> {
    if data.is_empty() {
        return Err(Error::Input("cannot train a language model on an empty corpus".into()));
    }
    cfg.validate()?;
    let mut model = LangModel::init(vocab, cfg.embed_dim, cfg.hidden_dim, cfg.seed)?;
    model.temperature = cfg.temperature;
    if cfg.no_entity_samples {
        for s in data {
            for (tok, tag) in s.tokens.iter().zip(s.tags.tags()) {
                if *tag != Tag::O {
                    let id = model.vocab.id(tok);
                    model.support[id] = false;
                }
            }
        }
    }
    let encoded: Vec<Vec<usize>> = data.iter().map(|s| model.vocab.encode(s)).collect();
    let mut params = std::mem::take(&mut model.params);
    let losses =
        run_sgd(&mut params, encoded.len(), &cfg.train_config(), |i, p, g| model.sentence_loss(p, &encoded[i], g))?;
    model.params = params;
    let perplexity = model.perplexity(&encoded)?;
    Ok((model, LmTrainLog { epoch_losses: losses, perplexity }))
}

/// Draws `n_samples` replacement maps for the positions in `delta`. Each
/// draw walks the sentence left to right, sampling at delta positions and
/// feeding the sampled token forward; other positions keep their ids.
pub fn sample_replacements(
    model: &LangModel,
    ids: &[usize],
    delta: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<BTreeMap<usize, usize>>> {
    model.check_ids(ids)?;
    if let Some(&bad) = delta.iter().find(|&&d| d >= ids.len()) {
        return Err(Error::Input(format!("delta position {bad} outside sentence of length {}", ids.len())));
    }
    if delta.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("delta positions must be strictly increasing".into()));
    }
    if delta.is_empty() {
        return Ok(vec![BTreeMap::new(); n_samples]);
    }
    let first = delta[0];
    let last = *delta.last().unwrap();
    // The prefix before the first sampled position is shared by all draws.
    let mut prefix = model.advance(PAD, &model.rnn().initial_state());
    for &t in &ids[..first] {
        prefix = model.advance(t, &prefix);
    }
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut state = prefix.clone();
        let mut map = BTreeMap::new();
        for (pos, &orig) in ids.iter().enumerate().take(last + 1).skip(first) {
            let tok = if delta.binary_search(&pos).is_ok() {
                let u: f64 = r.gen();
                let t = draw(&model.distribution(&state), u)
                    .ok_or_else(|| Error::Input("language model sampling support is empty".into()))?;
                map.insert(pos, t);
                t
            } else {
                orig
            };
            if pos < last {
                state = model.advance(tok, &state);
            }
        }
        out.push(map);
    }
    Ok(out)
}
