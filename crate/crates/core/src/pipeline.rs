//! End-to-end runs on planted-trigger corpora: stage one (classifier, LM,
//! extraction) and stage two (TIN against the baseline), as used by the
//! sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_classifier, TokenClassifier};
use crate::corpus::TriggerLabeledExample;
use crate::error::{Error, Result};
use crate::extract::{extract_dataset, jaccard, CandidateSource, Extraction, ParseInputs, SocConfig};
use crate::lm::{train_lm_with_vocab, LangModel, LmConfig};
use crate::neural::TrainConfig;
use crate::rng::derive;
use crate::synthgen::{generate, SynthConfig, SynthCorpus};
use crate::tin::{evaluate, train_baseline, train_tin, BaselineConfig, TinConfig};

/// Settings for one experiment cell. Every `seed` field is overwritten by
/// the cell seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `n_sentences` is the size of the training pool.
    pub synth: SynthConfig,
    pub test_sentences: usize,
    pub clf: TrainConfig,
    pub lm: LmConfig,
    pub soc: SocConfig,
    pub tin: TinConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            test_sentences: 200,
            clf: TrainConfig::default(),
            lm: LmConfig::default(),
            soc: SocConfig::default(),
            tin: TinConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.clf.seed = derive(seed, "clf", &[]);
        c.lm.seed = derive(seed, "lm", &[]);
        c.soc.seed = derive(seed, "soc", &[]);
        c.tin.seed = derive(seed, "tagger", &[]);
        c.baseline.seed = c.tin.seed;
        c
    }

    /// Training pool and held-out test corpus for the current seed.
    pub fn corpora(&self) -> Result<(SynthCorpus, SynthCorpus)> {
        let train = generate(&self.synth)?;
        let test = generate(&SynthConfig {
            n_sentences: self.test_sentences,
            seed: derive(self.synth.seed, "test", &[]),
            ..self.synth.clone()
        })?;
        Ok((train, test))
    }
}

pub struct Stage1 {
    pub classifier: TokenClassifier,
    pub train_accuracy: f64,
    pub lm: LangModel,
    pub perplexity: f64,
}

pub fn train_stage1(train: &SynthCorpus, cfg: &ExperimentConfig) -> Result<Stage1> {
    let (classifier, _) = train_classifier(&train.sentences, &cfg.clf)?;
    let train_accuracy = classifier.token_accuracy(&train.sentences)?;
    let (lm, log) = train_lm_with_vocab(&train.sentences, classifier.vocab.clone(), &cfg.lm)?;
    Ok(Stage1 { classifier, train_accuracy, lm, perplexity: log.perplexity })
}

pub fn extract_corpus(stage1: &Stage1, corpus: &SynthCorpus, soc: &SocConfig) -> Result<Extraction> {
    let parses = ParseInputs { trees: Some(&corpus.trees), dep_heads: Some(&corpus.dep_heads) };
    extract_dataset(&corpus.sentences, parses, &stage1.classifier, &stage1.lm, soc)
}

/// Share of gold entities whose first auto trigger has Jaccard overlap of
/// at least `threshold` with the gold trigger.
pub fn trigger_recovery(auto: &[TriggerLabeledExample], gold: &[TriggerLabeledExample], threshold: f64) -> Result<f64> {
    if auto.len() != gold.len() {
        return Err(Error::Input(format!("{} extracted examples vs {} gold", auto.len(), gold.len())));
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for (a, g) in auto.iter().zip(gold) {
        for gt in &g.triggers {
            total += 1;
            if let Some(top) = a.triggers.iter().find(|t| t.entity == gt.entity) {
                if jaccard(&top.indices, &gt.indices) >= threshold {
                    hit += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub train_accuracy: f64,
    pub recovery: f64,
    pub flagged: usize,
}

/// Trains stage one on the training pool and measures planted-cue recovery
/// on the test corpus.
pub fn recovery_cell(cfg: &ExperimentConfig, source: CandidateSource, seed: u64) -> Result<RecoveryResult> {
    let cfg = cfg.with_seed(seed);
    let (train, test) = cfg.corpora()?;
    let stage1 = train_stage1(&train, &cfg)?;
    let soc = SocConfig { candidate_source: source, ..cfg.soc.clone() };
    let ex = extract_corpus(&stage1, &test, &soc)?;
    Ok(RecoveryResult {
        train_accuracy: stage1.train_accuracy,
        recovery: trigger_recovery(&ex.examples, &test.gold, 0.5)?,
        flagged: ex.flagged.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Tin,
    Baseline,
}

/// Test F1 of one arm trained on the first `size` sentences of the pool.
/// TIN trains on triggers extracted from that split.
pub fn f1_cell(cfg: &ExperimentConfig, arm: Arm, size: usize, seed: u64) -> Result<f64> {
    let mut cfg = cfg.with_seed(seed);
    cfg.synth.n_sentences = cfg.synth.n_sentences.max(size);
    let (pool, test) = cfg.corpora()?;
    let train = pool.truncated(size);
    let report = match arm {
        Arm::Baseline => evaluate(&train_baseline(&train.sentences, &cfg.baseline)?.0, &test.sentences)?,
        Arm::Tin => {
            let stage1 = train_stage1(&train, &cfg)?;
            let ex = extract_corpus(&stage1, &train, &cfg.soc)?;
            evaluate(&train_tin(&ex.examples, &cfg.tin)?.0, &test.sentences)?
        }
    };
    Ok(report.f1)
}

/// Sweep axes. Every axis except `Size` trains TIN on a pool of
/// `synth.n_sentences`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lambda,
    K,
    Source,
    /// Training size; rows for both TIN and the baseline.
    Size,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" => Ok(SweepAxis::Lambda),
            "k" | "topk" => Ok(SweepAxis::K),
            "source" | "candidate_source" => Ok(SweepAxis::Source),
            "size" => Ok(SweepAxis::Size),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?} (lambda, k, source, size)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub size: usize,
    pub seed: u64,
    pub f1: f64,
}

/// Runs every (value, seed) cell with seeds `base_seed + i`. Rows come back
/// in value-major, seed-minor order (TIN before baseline on the size axis)
/// whatever the thread count.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds == 0 {
        return Err(Error::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut cells: Vec<(String, Arm, usize, ExperimentConfig, u64)> = Vec::new();
    let pool = cfg.synth.n_sentences;
    for v in values {
        let v = v.trim();
        let bad = |what: &str| Error::Config(format!("bad {what} value {v:?}"));
        let mut c = cfg.clone();
        let mut arms = vec![(format!("{}={v}", axis_name(axis)), Arm::Tin, pool)];
        match axis {
            SweepAxis::Lambda => c.tin.lambda = v.parse().map_err(|_| bad("lambda"))?,
            SweepAxis::K => c.soc.k = v.parse().map_err(|_| bad("k"))?,
            SweepAxis::Source => c.soc.candidate_source = v.parse()?,
            SweepAxis::Size => {
                let n: usize = v.parse().map_err(|_| bad("size"))?;
                if n == 0 {
                    return Err(bad("size"));
                }
                arms = vec![("tin".into(), Arm::Tin, n), ("baseline".into(), Arm::Baseline, n)];
            }
        }
        c.tin.validate()?;
        c.soc.validate()?;
        for i in 0..seeds {
            for (name, arm, size) in &arms {
                cells.push((name.clone(), *arm, *size, c.clone(), base_seed + i as u64));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(variant, arm, size, c, seed)| Ok(SweepRow { f1: f1_cell(&c, arm, size, seed)?, variant, size, seed }))
        .collect()
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Lambda => "lambda",
        SweepAxis::K => "k",
        SweepAxis::Source => "source",
        SweepAxis::Size => "size",
    }
}
