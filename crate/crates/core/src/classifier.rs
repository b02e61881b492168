//! Entity token classifier: BiLSTM encoder with a per-token softmax head.
//! Its per-token tag probabilities define the entity score used to rank
//! trigger candidates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, TaggedSentence};
use crate::error::{Error, Result};
use crate::neural::{
    load_checkpoint, log_softmax, run_sgd, save_checkpoint, softmax, BiLstmEncoder, Encoder, EncoderConfig, HiddenSeq,
    Linear, ParamStore, TrainConfig,
};
use crate::rng::rng;
use crate::vocab::{TagSet, Vocab};

pub const CHECKPOINT_KIND: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenClassifier {
    pub vocab: Vocab,
    pub tagset: TagSet,
    pub config: EncoderConfig,
    pub params: ParamStore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TokenClassifier {
    pub fn init(vocab: Vocab, tagset: TagSet, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            embed_dim,
            hidden_dim,
            tagset_size: tagset.len(),
            zero_masks: false,
        };
        config.validate()?;
        let mut params = ParamStore::new(seed);
        let mut r = rng(seed);
        let model = TokenClassifier { vocab, tagset, config, params: ParamStore::new(seed) };
        model.encoder().register(&mut params, &mut r);
        model.head().register(&mut params, &mut r);
        Ok(TokenClassifier { params, ..model })
    }

    pub fn encoder(&self) -> BiLstmEncoder {
        BiLstmEncoder::new("enc", self.config.clone())
    }

    pub fn head(&self) -> Linear {
        Linear::new("head", self.config.output_dim(), self.config.tagset_size)
    }

    fn logits(&self, params: &ParamStore, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let h = self.encoder().encode(params, ids)?;
        Ok(self.head().forward_seq(params, &h.rows))
    }

    /// Per-token tag distributions.
    pub fn token_probs(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits(&self.params, ids)?.iter().map(|l| softmax(l)).collect())
    }

    pub fn predict(&self, ids: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .token_probs(ids)?
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Summed token cross-entropy of one sentence at `params`, with its
    /// gradient added into `grads`.
    pub fn sentence_loss(
        &self,
        params: &ParamStore,
        ids: &[usize],
        gold: &[usize],
        grads: &mut ParamStore,
    ) -> Result<f64> {
        let enc = self.encoder();
        let head = self.head();
        let (h, cache) = enc.forward(params, ids)?;
        let logits = head.forward_seq(params, &h.rows);
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(logits.len());
        for (l, &y) in logits.iter().zip(gold) {
            let lp = log_softmax(l);
            loss -= lp[y];
            let mut d: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            d[y] -= 1.0;
            d_logits.push(d);
        }
        let dh = head.backward_seq(params, &h.rows, &d_logits, grads);
        enc.backward(params, &cache, &HiddenSeq { dim: h.dim, rows: dh }, grads);
        Ok(loss)
    }

    pub fn token_accuracy(&self, data: &[TaggedSentence]) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for s in data {
            let gold = self.tagset.encode(&s.tags)?;
            let pred = self.predict(&self.vocab.encode(s))?;
            correct += gold.iter().zip(&pred).filter(|(a, b)| a == b).count();
            total += gold.len();
        }
        Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: TokenClassifier = load_checkpoint(path, &[CHECKPOINT_KIND])?;
        let fresh =
            TokenClassifier::init(m.vocab.clone(), m.tagset.clone(), m.config.embed_dim, m.config.hidden_dim, 0)?;
        fresh.params.check_same_layout(&m.params)?;
        Ok(m)
    }
}

/// Trains the classifier with token cross-entropy. The vocabulary and tag
/// set come from `data`.
pub fn train_classifier(data: &[TaggedSentence], cfg: &TrainConfig) -> Result<(TokenClassifier, TrainLog)> {
    if data.is_empty() {
        return Err(Error::Input("cannot train a classifier on an empty corpus".into()));
    }
    let vocab = Vocab::build(data);
    let tagset = TagSet::from_data(data);
    let mut model = TokenClassifier::init(vocab, tagset, cfg.embed_dim, cfg.hidden_dim, cfg.seed)?;
    let encoded: Vec<(Vec<usize>, Vec<usize>)> =
        data.iter().map(|s| Ok((model.vocab.encode(s), model.tagset.encode(&s.tags)?))).collect::<Result<_>>()?;
    let mut params = std::mem::take(&mut model.params);
    let losses =
        run_sgd(&mut params, encoded.len(), cfg, |i, p, g| model.sentence_loss(p, &encoded[i].0, &encoded[i].1, g))?;
    model.params = params;
    Ok((model, TrainLog { epoch_losses: losses }))
}

/// Mean probability the classifier gives to the entity's own BIO tags over
/// the entity's tokens, conditioned on the whole sentence.
pub fn entity_score(model: &TokenClassifier, token_ids: &[usize], entity: &EntitySpan) -> Result<f64> {
    if entity.is_empty() {
        return Err(Error::Input(format!("empty entity span {entity}")));
    }
    if entity.end > token_ids.len() {
        return Err(Error::Input(format!("entity {entity} outside sentence of length {}", token_ids.len())));
    }
    let tags = model.tagset.span_tags(entity)?;
    let probs = model.token_probs(token_ids)?;
    Ok(score_from_probs(&probs, entity.start, &tags))
}

pub(crate) fn score_from_probs(probs: &[Vec<f64>], start: usize, tags: &[usize]) -> f64 {
    let sum: f64 = tags.iter().enumerate().map(|(j, &y)| probs[start + j][y]).sum();
    sum / tags.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{grad_check, GradCheckOptions};

    fn tiny_data() -> Vec<TaggedSentence> {
        vec![
            TaggedSentence::from_strs("0", "mr smith said hi", "O B-PER O O").unwrap(),
            TaggedSentence::from_strs("1", "in paris today", "O B-LOC O").unwrap(),
            TaggedSentence::from_strs("2", "mr john smith left", "O B-PER I-PER O").unwrap(),
        ]
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 2, lr: 0.1, seed: 11, embed_dim: 6, hidden_dim: 5 }
    }

    #[test]
    fn mean_over_entity_tokens() {
        let probs = vec![vec![0.2, 0.8, 0.0], vec![0.1, 0.3, 0.6]];
        assert!((score_from_probs(&probs, 0, &[1]) - 0.8).abs() < 1e-15);
        assert!((score_from_probs(&probs, 0, &[1, 2]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn uniform_head_gives_inverse_tagset_size() {
        let data = vec![TaggedSentence::from_strs("0", "a b c d", "B-X B-Y B-Z O").unwrap()];
        let mut m = TokenClassifier::init(Vocab::build(&data), TagSet::from_data(&data), 4, 3, 1).unwrap();
        assert_eq!(m.tagset.len(), 7);
        m.params.get_mut("head.weight").data.iter_mut().for_each(|v| *v = 0.0);
        let ids = m.vocab.encode(&data[0]);
        let s = entity_score(&m, &ids, &EntitySpan::new(0, 1, "X")).unwrap();
        assert!((s - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalized() {
        let (m, _) = train_classifier(&tiny_data(), &small_cfg()).unwrap();
        for p in m.token_probs(&[4, 5, 6, 1, 0]).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_epochs_is_init_and_training_is_deterministic() {
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let (m0, log) = train_classifier(&tiny_data(), &cfg).unwrap();
        assert!(log.epoch_losses.is_empty());
        let init = TokenClassifier::init(m0.vocab.clone(), m0.tagset.clone(), 6, 5, 11).unwrap();
        assert_eq!(m0.params, init.params);
        let (a, _) = train_classifier(&tiny_data(), &small_cfg()).unwrap();
        let (b, _) = train_classifier(&tiny_data(), &small_cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, m0.params);
    }

    #[test]
    fn empty_data_and_bad_span() {
        assert!(train_classifier(&[], &small_cfg()).is_err());
        let (m, _) = train_classifier(&tiny_data(), &small_cfg()).unwrap();
        assert!(entity_score(&m, &[4, 5], &EntitySpan::new(1, 1, "PER")).is_err());
        assert!(entity_score(&m, &[4, 5], &EntitySpan::new(1, 3, "PER")).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let (m, _) = train_classifier(&tiny_data(), &TrainConfig { epochs: 1, ..small_cfg() }).unwrap();
        let ids = m.vocab.encode(&tiny_data()[2]);
        let gold = m.tagset.encode(&tiny_data()[2].tags).unwrap();
        let f = |p: &ParamStore| {
            let mut g = p.zeros_like();
            let l = m.sentence_loss(p, &ids, &gold, &mut g)?;
            Ok((l, g))
        };
        let r = grad_check(f, &m.params, &GradCheckOptions::default()).unwrap();
        assert!(r.max_relative_error < 1e-3, "{r:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, _) = train_classifier(&tiny_data(), &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.json");
        m.save(&path).unwrap();
        assert_eq!(TokenClassifier::load(&path).unwrap(), m);
    }
}
