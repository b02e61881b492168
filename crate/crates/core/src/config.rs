//! Run configuration as a flat set of dotted keys (`tin.lambda`,
//! `soc.n_samples`, ...). Files may also nest objects; they are flattened
//! before validation. Unknown keys are reported with the nearest valid one.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::extract::SocConfig;
use crate::lm::LmConfig;
use crate::neural::TrainConfig;
use crate::pipeline::ExperimentConfig;
use crate::refine::DEFAULT_K_SHOWN;
use crate::synthgen::SynthConfig;
use crate::tin::{BaselineConfig, TinConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub k_shown: usize,
    pub port: u16,
    pub cors_origin: Option<String>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { k_shown: DEFAULT_K_SHOWN, port: 8080, cors_origin: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub test_sentences: usize,
    pub clf: TrainConfig,
    pub lm: LmConfig,
    pub soc: SocConfig,
    pub tin: TinConfig,
    pub baseline: BaselineConfig,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            synth: e.synth,
            test_sentences: e.test_sentences,
            clf: e.clf,
            lm: e.lm,
            soc: e.soc,
            tin: e.tin,
            baseline: e.baseline,
            refine: RefineConfig::default(),
        }
    }
}

/// Key, description, and whether the default is the published setting.
const KEY_DOCS: &[(&str, &str, bool)] = &[
    ("synth.entity_types", "entity types of the planted corpus", false),
    ("synth.cues_per_type", "distinct cue phrases per type", false),
    ("synth.cue_length", "tokens per cue phrase", false),
    ("synth.shared_entity_vocab", "entity surface forms shared by all types", false),
    ("synth.filler_vocab_size", "filler word vocabulary size", false),
    ("synth.sentence_length_min", "shortest sentence", false),
    ("synth.sentence_length_max", "longest sentence", false),
    ("synth.n_sentences", "training pool size", false),
    ("synth.seed", "corpus seed", false),
    ("synth.distractor_phrases", "extra filler constituents per tree", false),
    ("test_sentences", "held-out synthetic test sentences", false),
    ("clf.epochs", "token classifier epochs", true),
    ("clf.batch_size", "token classifier batch size", true),
    ("clf.lr", "token classifier learning rate", true),
    ("clf.seed", "token classifier seed", false),
    ("clf.embed_dim", "token classifier embedding size", false),
    ("clf.hidden_dim", "token classifier LSTM size per direction", true),
    ("lm.epochs", "language model epochs", true),
    ("lm.batch_size", "language model batch size", true),
    ("lm.lr", "language model learning rate", true),
    ("lm.seed", "language model seed", false),
    ("lm.embed_dim", "language model embedding size", false),
    ("lm.hidden_dim", "language model LSTM size", true),
    ("lm.temperature", "sampling temperature", false),
    ("lm.no_entity_samples", "never sample tokens seen inside training entities", false),
    ("soc.n_samples", "context samples per phrase", false),
    ("soc.context_radius", "sampled context radius around the phrase", false),
    ("soc.k", "auto triggers kept per entity", true),
    ("soc.max_phrase_len", "longest candidate phrase", false),
    ("soc.candidate_source", "CP, RS or DP", true),
    ("soc.rs_num_spans", "random spans per entity for RS", false),
    ("soc.rs_span_len", "longest random span for RS", false),
    ("soc.seed", "extraction seed", false),
    ("tin.epochs", "trigger interpolation network epochs", true),
    ("tin.batch_size", "trigger interpolation network batch size", true),
    ("tin.lr", "trigger interpolation network learning rate", true),
    ("tin.seed", "trigger interpolation network seed", false),
    ("tin.embed_dim", "tagger embedding size", false),
    ("tin.hidden_dim", "tagger LSTM size per direction", true),
    ("tin.lambda", "weight of the entity-masked view", true),
    ("tin.mask_embedding", "zero or learned mask token embeddings", false),
    ("baseline.epochs", "BiLSTM-CRF baseline epochs", true),
    ("baseline.batch_size", "baseline batch size", true),
    ("baseline.lr", "baseline learning rate", true),
    ("baseline.seed", "baseline seed", false),
    ("baseline.embed_dim", "baseline embedding size", false),
    ("baseline.hidden_dim", "baseline LSTM size per direction", true),
    ("refine.k_shown", "candidates shown per entity", true),
    ("refine.port", "refinement service port", false),
    ("refine.cors_origin", "allowed browser origin (any when null)", false),
];

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten_into("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (k, v) in flat {
        let parts: Vec<&str> = k.split('.').collect();
        let mut cur = &mut root;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("keys are prefix-free");
        }
        cur.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    /// Every valid key with its default value.
    pub fn defaults() -> BTreeMap<String, Value> {
        flatten(&serde_json::to_value(RunConfig::default()).expect("config serializes"))
    }

    pub fn keys() -> Vec<String> {
        Self::defaults().into_keys().collect()
    }

    /// One line per key: name, default, description.
    pub fn help_text() -> String {
        let defaults = Self::defaults();
        let width = defaults.keys().map(String::len).max().unwrap_or(0);
        let mut s = String::new();
        for (k, doc, published) in KEY_DOCS {
            let d = defaults.get(*k).map(Value::to_string).unwrap_or_default();
            let mark = if *published { " (published setting)" } else { "" };
            s.push_str(&format!("  {k:width$}  {d}  {doc}{mark}\n"));
        }
        s
    }

    /// Closest valid key by edit distance.
    pub fn nearest_key(key: &str) -> Option<String> {
        Self::keys().into_iter().min_by_key(|k| strsim::levenshtein(k, key))
    }

    fn check_keys(flat: &BTreeMap<String, Value>) -> Result<()> {
        let defaults = Self::defaults();
        for k in flat.keys() {
            if !defaults.contains_key(k) {
                let hint = Self::nearest_key(k).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default();
                return Err(Error::Config(format!("unknown config key `{k}`{hint}")));
            }
        }
        Ok(())
    }

    /// Applies `overrides` (flat or nested) on top of this config.
    pub fn merged(&self, overrides: &Value) -> Result<Self> {
        if !overrides.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let upd = flatten(overrides);
        Self::check_keys(&upd)?;
        let mut flat = flatten(&serde_json::to_value(self)?);
        flat.extend(upd);
        let v = unflatten(&flat);
        let cfg: RunConfig = serde_path_to_error::deserialize(v)
            .map_err(|e| Error::Config(format!("config key `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        RunConfig::default().merged(&v)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Applies `key=value` overrides. Values are read as JSON when they
    /// parse, otherwise as strings.
    pub fn with_sets(&self, sets: &[String]) -> Result<Self> {
        let mut flat = BTreeMap::new();
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
            let val = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            flat.insert(k.trim().to_string(), val);
        }
        Self::check_keys(&flat)?;
        self.merged(&unflatten(&flat))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            synth: self.synth.clone(),
            test_sentences: self.test_sentences,
            clf: self.clf.clone(),
            lm: self.lm.clone(),
            soc: self.soc.clone(),
            tin: self.tin.clone(),
            baseline: self.baseline.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self;
        e.synth.validate()?;
        e.clf.validate()?;
        e.lm.validate()?;
        e.soc.validate()?;
        e.tin.validate()?;
        e.baseline.train_config().validate()?;
        if self.refine.k_shown == 0 {
            return Err(Error::Config("refine.k_shown must be at least 1".into()));
        }
        if e.test_sentences == 0 {
            return Err(Error::Config("test_sentences must be positive".into()));
        }
        Ok(())
    }

    /// Resolved config as flat, sorted, pretty JSON.
    pub fn to_flat_json(&self) -> Result<String> {
        let flat = flatten(&serde_json::to_value(self)?);
        Ok(serde_json::to_string_pretty(&flat)? + "\n")
    }
}
