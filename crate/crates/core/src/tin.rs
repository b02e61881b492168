//! Trigger interpolation network and the BiLSTM-CRF baseline.
//!
//! Training runs the shared encoder twice, on the entity-masked and on the
//! trigger-masked sentence, mixes the two outputs per token with weight λ
//! and scores the mix with a CRF. Prediction runs the encoder once on the
//! raw sentence.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{entity_f1, EvalReport, TagSeq, TaggedSentence, TriggerLabeledExample};
use crate::crf::Crf;
use crate::error::{Error, Result};
use crate::neural::{
    checkpoint_kind, load_checkpoint, run_sgd, save_checkpoint, BiLstmEncoder, Encoder, EncoderConfig, HiddenSeq,
    Linear, ParamStore, Tensor, TrainConfig,
};
use crate::rng::rng;
use crate::vocab::{TagSet, Vocab, MASK_ENT, MASK_TRG};

pub const KIND_TIN: &str = "tin";
pub const KIND_BASELINE: &str = "baseline";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lambda: f64,
    pub mask_embedding: MaskEmbedding,
}

/// How the MASK_ENT and MASK_TRG embedding rows are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskEmbedding {
    /// Fixed zero vectors, the same input PAD gives.
    #[default]
    Zero,
    /// Trained like any other token.
    Learned,
}

impl Default for TinConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TinConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
            lambda: 0.5,
            mask_embedding: MaskEmbedding::Zero,
        }
    }
}

impl TinConfig {
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
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        self.train_config().validate()
    }
}

/// The baseline has no λ; a config that sets one is rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        BaselineConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
        }
    }
}

impl BaselineConfig {
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
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedPair {
    pub ids_entity_masked: Vec<usize>,
    pub ids_trigger_masked: Vec<usize>,
}

/// Masks every gold entity in one view and every trigger index in the other.
pub fn build_masked_pair(example: &TriggerLabeledExample, vocab: &Vocab) -> MaskedPair {
    let ids = vocab.encode(&example.sentence);
    let mut ent = ids.clone();
    for span in example.sentence.spans() {
        ent[span.start..span.end].iter_mut().for_each(|t| *t = MASK_ENT);
    }
    let mut trg = ids;
    for t in &example.triggers {
        for &i in &t.indices {
            trg[i] = MASK_TRG;
        }
    }
    MaskedPair { ids_entity_masked: ent, ids_trigger_masked: trg }
}

/// `λ·h + (1−λ)·h′` per token and dimension.
pub fn interpolate(h: &HiddenSeq, h_prime: &HiddenSeq, lambda: f64) -> Result<HiddenSeq> {
    if h.dim != h_prime.dim || h.len() != h_prime.len() {
        return Err(Error::Shape(format!(
            "cannot interpolate {}x{} with {}x{}",
            h.len(),
            h.dim,
            h_prime.len(),
            h_prime.dim
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let mu = 1.0 - lambda;
    let rows = h
        .rows
        .iter()
        .zip(&h_prime.rows)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| lambda * x + mu * y).collect())
        .collect();
    Ok(HiddenSeq { dim: h.dim, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggerKind {
    Tin,
    Baseline,
}

/// Encoder, emission head and CRF transitions in one parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinModel {
    pub kind: TaggerKind,
    /// `None` for the baseline.
    pub lambda: Option<f64>,
    pub vocab: Vocab,
    pub tagset: TagSet,
    pub config: EncoderConfig,
    pub params: ParamStore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TinTrainLog {
    pub epoch_losses: Vec<f64>,
}

const TRANSITIONS: &str = "crf.transitions";

impl TinModel {
    pub fn init(
        kind: TaggerKind,
        lambda: Option<f64>,
        vocab: Vocab,
        tagset: TagSet,
        embed_dim: usize,
        hidden_dim: usize,
        zero_masks: bool,
        seed: u64,
    ) -> Result<Self> {
        let config =
            EncoderConfig { vocab_size: vocab.len(), embed_dim, hidden_dim, tagset_size: tagset.len(), zero_masks };
        config.validate()?;
        let mut m = TinModel { kind, lambda, vocab, tagset, config, params: ParamStore::new(seed) };
        let mut r = rng(seed);
        let mut p = ParamStore::new(seed);
        m.encoder().register(&mut p, &mut r);
        m.head().register(&mut p, &mut r);
        p.insert(TRANSITIONS, Tensor::zeros(&m.crf().transitions_shape()));
        m.params = p;
        Ok(m)
    }

    pub fn encoder(&self) -> BiLstmEncoder {
        BiLstmEncoder::new("enc", self.config.clone())
    }

    pub fn head(&self) -> Linear {
        Linear::new("head", self.config.output_dim(), self.config.tagset_size)
    }

    pub fn crf(&self) -> Crf {
        Crf::bio(&self.tagset)
    }

    /// CRF loss of the interpolated encoding of one example at `params`,
    /// with gradients added into `grads`.
    pub fn tin_loss(
        &self,
        params: &ParamStore,
        pair: &MaskedPair,
        gold: &[usize],
        lambda: f64,
        grads: &mut ParamStore,
    ) -> Result<f64> {
        let enc = self.encoder();
        let mu = 1.0 - lambda;
        // A pass with zero weight contributes nothing, forward or backward.
        let ent = if lambda != 0.0 { Some(enc.forward(params, &pair.ids_entity_masked)?) } else { None };
        let trg = if mu != 0.0 { Some(enc.forward(params, &pair.ids_trigger_masked)?) } else { None };
        let mixed = match (&ent, &trg) {
            (Some((h, _)), Some((hp, _))) => interpolate(h, hp, lambda)?,
            (Some((h, _)), None) => h.clone(),
            (None, Some((hp, _))) => hp.clone(),
            (None, None) => unreachable!(),
        };
        let d_mixed = self.crf_loss(params, &mixed, gold, grads)?;
        let (loss, dh) = d_mixed;
        if let Some((_, cache)) = &ent {
            enc.backward(params, cache, &scaled(&dh, lambda), grads);
        }
        if let Some((_, cache)) = &trg {
            enc.backward(params, cache, &scaled(&dh, mu), grads);
        }
        Ok(loss)
    }

    /// CRF loss on the plain encoding (the baseline objective).
    pub fn plain_loss(
        &self,
        params: &ParamStore,
        ids: &[usize],
        gold: &[usize],
        grads: &mut ParamStore,
    ) -> Result<f64> {
        let enc = self.encoder();
        let (h, cache) = enc.forward(params, ids)?;
        let (loss, dh) = self.crf_loss(params, &h, gold, grads)?;
        enc.backward(params, &cache, &dh, grads);
        Ok(loss)
    }

    fn crf_loss(
        &self,
        params: &ParamStore,
        h: &HiddenSeq,
        gold: &[usize],
        grads: &mut ParamStore,
    ) -> Result<(f64, HiddenSeq)> {
        let head = self.head();
        let em = head.forward_seq(params, &h.rows);
        let (nll, d_em) = self.crf().nll_backward(params.get(TRANSITIONS), &em, gold, grads.get_mut(TRANSITIONS))?;
        let dh = head.backward_seq(params, &h.rows, &d_em, grads);
        Ok((nll, HiddenSeq { dim: h.dim, rows: dh }))
    }

    /// Viterbi decode of a single unmasked encoder pass.
    pub fn predict(&self, ids: &[usize]) -> Result<TagSeq> {
        if ids.is_empty() {
            return Err(Error::Input("cannot tag an empty sentence".into()));
        }
        let h = self.encoder().encode(&self.params, ids)?;
        let em = self.head().forward_seq(&self.params, &h.rows);
        let (path, _) = self.crf().viterbi(self.params.get(TRANSITIONS), &em)?;
        Ok(self.tagset.decode(&path))
    }

    pub fn predict_sentence(&self, s: &TaggedSentence) -> Result<TagSeq> {
        self.predict(&self.vocab.encode(s))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let kind = match self.kind {
            TaggerKind::Tin => KIND_TIN,
            TaggerKind::Baseline => KIND_BASELINE,
        };
        save_checkpoint(path, kind, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kind = checkpoint_kind(path)?;
        let m: TinModel = load_checkpoint(path, &[KIND_TIN, KIND_BASELINE])?;
        let expect = if kind == KIND_TIN { TaggerKind::Tin } else { TaggerKind::Baseline };
        if m.kind != expect {
            return Err(Error::Input(format!("checkpoint tagged {kind} holds a {:?} model", m.kind)));
        }
        let fresh = TinModel::init(
            m.kind,
            m.lambda,
            m.vocab.clone(),
            m.tagset.clone(),
            m.config.embed_dim,
            m.config.hidden_dim,
            m.config.zero_masks,
            0,
        )?;
        fresh.params.check_same_layout(&m.params)?;
        Ok(m)
    }
}

fn scaled(h: &HiddenSeq, s: f64) -> HiddenSeq {
    HiddenSeq { dim: h.dim, rows: h.rows.iter().map(|r| r.iter().map(|v| v * s).collect()).collect() }
}

pub fn train_tin(data: &[TriggerLabeledExample], cfg: &TinConfig) -> Result<(TinModel, TinTrainLog)> {
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty corpus".into()));
    }
    cfg.validate()?;
    let sentences: Vec<&TaggedSentence> = data.iter().map(|e| &e.sentence).collect();
    let vocab = Vocab::build(sentences.iter().copied());
    let tagset = TagSet::from_data(sentences.iter().copied());
    let mut model = TinModel::init(
        TaggerKind::Tin,
        Some(cfg.lambda),
        vocab,
        tagset,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.mask_embedding == MaskEmbedding::Zero,
        cfg.seed,
    )?;
    let prepared: Vec<(MaskedPair, Vec<usize>)> = data
        .iter()
        .map(|e| Ok((build_masked_pair(e, &model.vocab), model.tagset.encode(&e.sentence.tags)?)))
        .collect::<Result<_>>()?;
    let mut params = std::mem::take(&mut model.params);
    let losses = run_sgd(&mut params, prepared.len(), &cfg.train_config(), |i, p, g| {
        model.tin_loss(p, &prepared[i].0, &prepared[i].1, cfg.lambda, g)
    })?;
    model.params = params;
    Ok((model, TinTrainLog { epoch_losses: losses }))
}

pub fn train_baseline(data: &[TaggedSentence], cfg: &BaselineConfig) -> Result<(TinModel, TinTrainLog)> {
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty corpus".into()));
    }
    let tc = cfg.train_config();
    tc.validate()?;
    let vocab = Vocab::build(data);
    let tagset = TagSet::from_data(data);
    let mut model =
        TinModel::init(TaggerKind::Baseline, None, vocab, tagset, cfg.embed_dim, cfg.hidden_dim, false, cfg.seed)?;
    let prepared: Vec<(Vec<usize>, Vec<usize>)> =
        data.iter().map(|s| Ok((model.vocab.encode(s), model.tagset.encode(&s.tags)?))).collect::<Result<_>>()?;
    let mut params = std::mem::take(&mut model.params);
    let losses =
        run_sgd(&mut params, prepared.len(), &tc, |i, p, g| model.plain_loss(p, &prepared[i].0, &prepared[i].1, g))?;
    model.params = params;
    Ok((model, TinTrainLog { epoch_losses: losses }))
}

/// Tags every sentence and scores the result against the gold tags.
pub fn evaluate(model: &TinModel, data: &[TaggedSentence]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty corpus".into()));
    }
    let preds: Vec<TagSeq> = data.par_iter().map(|s| model.predict_sentence(s)).collect::<Result<_>>()?;
    entity_f1(data, &preds)
}
