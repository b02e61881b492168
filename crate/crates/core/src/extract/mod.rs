//! Trigger extraction: phrase candidates, sampling-and-occlusion scores and
//! top-k selection.

mod candidates;
mod soc;

pub use candidates::{candidates_cp, candidates_dp, candidates_rs};
pub use soc::{context_positions, mean, occlusion_phi, soc_differences, soc_phi, ContextSampler, EntityScorer};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::TokenClassifier;
use crate::corpus::{EntitySpan, ParseTree, TaggedSentence, Trigger, TriggerLabeledExample};
use crate::error::{Error, Result};
use crate::lm::LangModel;
use crate::rng::derive;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidateSource {
    #[serde(rename = "CP")]
    Cp,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "DP")]
    Dp,
}

impl FromStr for CandidateSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CP" => Ok(CandidateSource::Cp),
            "RS" => Ok(CandidateSource::Rs),
            "DP" => Ok(CandidateSource::Dp),
            _ => Err(Error::Config(format!("unknown candidate source {s:?} (expected CP, RS or DP)"))),
        }
    }
}

impl fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CandidateSource::Cp => "CP",
            CandidateSource::Rs => "RS",
            CandidateSource::Dp => "DP",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseCandidate {
    pub start: usize,
    pub end: usize,
    pub origin: CandidateSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: PhraseCandidate,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocConfig {
    pub n_samples: usize,
    pub context_radius: usize,
    pub k: usize,
    pub max_phrase_len: usize,
    pub candidate_source: CandidateSource,
    pub rs_num_spans: usize,
    pub rs_span_len: usize,
    pub seed: u64,
}

impl Default for SocConfig {
    fn default() -> Self {
        SocConfig {
            n_samples: 20,
            context_radius: 4,
            k: 2,
            max_phrase_len: 10,
            candidate_source: CandidateSource::Cp,
            rs_num_spans: 10,
            rs_span_len: 3,
            seed: 0,
        }
    }
}

impl SocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_phrase_len == 0 {
            return Err(Error::Config("max_phrase_len must be at least 1".into()));
        }
        Ok(())
    }
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    let len = |c: &ScoredCandidate| c.candidate.end - c.candidate.start;
    b.phi.total_cmp(&a.phi).then(len(a).cmp(&len(b))).then(a.candidate.start.cmp(&b.candidate.start))
}

/// Candidates in ranking order: φ descending, then shorter, then leftmost.
pub fn rank_candidates(scored: &[ScoredCandidate]) -> Vec<ScoredCandidate> {
    let mut v = scored.to_vec();
    v.sort_by(rank_order);
    v
}

/// Greedy pick of at most `k` pairwise disjoint candidates in ranking
/// order, as triggers for `entity`.
pub fn select_top_k(scored: &[ScoredCandidate], entity: &EntitySpan, k: usize) -> Result<Vec<Trigger>> {
    let mut kept: Vec<ScoredCandidate> = Vec::new();
    for c in rank_candidates(scored) {
        if kept.len() == k {
            break;
        }
        let (s, e) = (c.candidate.start, c.candidate.end);
        if kept.iter().all(|k| k.candidate.end <= s || e <= k.candidate.start) {
            kept.push(c);
        }
    }
    kept.iter().map(|c| Trigger::contiguous(entity.clone(), c.candidate.start, c.candidate.end, c.phi)).collect()
}

/// Audit record of every scored candidate for one entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub id: String,
    pub entity_index: usize,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateScore {
    pub start: usize,
    pub end: usize,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub examples: Vec<TriggerLabeledExample>,
    pub scores: Vec<ScoreRecord>,
    /// `(sentence id, entity index)` pairs that had no candidates.
    pub flagged: Vec<(String, usize)>,
}

/// Parse inputs for the candidate sources that need them.
#[derive(Clone, Copy, Debug, Default)]
pub struct ParseInputs<'a> {
    pub trees: Option<&'a [ParseTree]>,
    pub dep_heads: Option<&'a [Vec<Option<usize>>]>,
}

fn candidates_for(
    sentence: &TaggedSentence,
    index: usize,
    entity: &EntitySpan,
    parses: &ParseInputs<'_>,
    cfg: &SocConfig,
    seed: u64,
) -> Result<Vec<PhraseCandidate>> {
    let missing = |what: &str| Error::Input(format!("no {what} for sentence {}", sentence.id));
    match cfg.candidate_source {
        CandidateSource::Cp => {
            let tree = parses.trees.and_then(|t| t.get(index)).ok_or_else(|| missing("parse tree"))?;
            candidates_cp(tree, sentence.len(), entity, cfg)
        }
        CandidateSource::Dp => {
            let heads = parses.dep_heads.and_then(|d| d.get(index)).ok_or_else(|| missing("dependency heads"))?;
            if heads.len() != sentence.len() {
                return Err(Error::Length {
                    sentence: sentence.id.clone(),
                    msg: format!("{} heads for {} tokens", heads.len(), sentence.len()),
                });
            }
            candidates_dp(heads, entity, cfg)
        }
        CandidateSource::Rs => Ok(candidates_rs(sentence.len(), entity, cfg, derive(seed, "rs", &[]))),
    }
}

/// Scores every candidate for every gold entity and keeps the top `k` as
/// auto triggers. Work is spread over the rayon pool; each (sentence,
/// entity) pair draws from its own seed so the output does not depend on
/// the number of threads.
pub fn extract_dataset(
    data: &[TaggedSentence],
    parses: ParseInputs<'_>,
    model: &TokenClassifier,
    lm: &LangModel,
    cfg: &SocConfig,
) -> Result<Extraction> {
    cfg.validate()?;
    if lm.vocab != model.vocab {
        return Err(Error::Config("language model and classifier vocabularies differ".into()));
    }
    let pairs: Vec<(usize, usize, EntitySpan)> = data
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.spans().into_iter().enumerate().map(move |(j, e)| (i, j, e)))
        .collect();
    let scored: Vec<(usize, usize, EntitySpan, Vec<ScoredCandidate>)> = pairs
        .into_par_iter()
        .map(|(i, j, e)| {
            let s = &data[i];
            let pair_seed = derive(cfg.seed, &s.id, &[j as u64]);
            let ids = model.vocab.encode(s);
            let cands = candidates_for(s, i, &e, &parses, cfg, pair_seed)?;
            let scored = cands
                .into_iter()
                .map(|c| {
                    let seed = derive(pair_seed, "soc", &[c.start as u64, c.end as u64]);
                    let phi = soc::soc_phi_seeded(model, lm, &ids, &e, &c, cfg, seed)?;
                    Ok(ScoredCandidate { candidate: c, phi })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((i, j, e, scored))
        })
        .collect::<Result<_>>()?;

    let mut triggers: Vec<Vec<Trigger>> = vec![Vec::new(); data.len()];
    let mut scores = Vec::with_capacity(scored.len());
    let mut flagged = Vec::new();
    for (i, j, e, sc) in scored {
        if sc.is_empty() {
            flagged.push((data[i].id.clone(), j));
        }
        triggers[i].extend(select_top_k(&sc, &e, cfg.k)?);
        scores.push(ScoreRecord {
            id: data[i].id.clone(),
            entity_index: j,
            candidates: sc
                .iter()
                .map(|c| CandidateScore { start: c.candidate.start, end: c.candidate.end, phi: c.phi })
                .collect(),
        });
    }
    let examples =
        data.iter().zip(triggers).map(|(s, t)| TriggerLabeledExample::new(s.clone(), t)).collect::<Result<_>>()?;
    Ok(Extraction { examples, scores, flagged })
}

pub fn write_scores(path: &std::path::Path, scores: &[ScoreRecord]) -> Result<()> {
    let mut out = String::new();
    for r in scores {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scores(path: &std::path::Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                record: n + 1,
                field: String::new(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Jaccard overlap of two index sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
