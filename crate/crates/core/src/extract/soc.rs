use std::collections::BTreeMap;

use super::{PhraseCandidate, SocConfig};
use crate::classifier::{entity_score, TokenClassifier};
use crate::corpus::EntitySpan;
use crate::error::{Error, Result};
use crate::lm::{sample_replacements, LangModel};
use crate::vocab::PAD;

/// Anything that scores how confidently a sentence supports an entity.
pub trait EntityScorer {
    fn score(&self, ids: &[usize], entity: &EntitySpan) -> Result<f64>;
}

impl EntityScorer for TokenClassifier {
    fn score(&self, ids: &[usize], entity: &EntitySpan) -> Result<f64> {
        entity_score(self, ids, entity)
    }
}

/// Source of replacement words for the context positions.
pub trait ContextSampler {
    fn sample(&self, ids: &[usize], delta: &[usize], n: usize, seed: u64) -> Result<Vec<BTreeMap<usize, usize>>>;
}

impl ContextSampler for LangModel {
    fn sample(&self, ids: &[usize], delta: &[usize], n: usize, seed: u64) -> Result<Vec<BTreeMap<usize, usize>>> {
        sample_replacements(self, ids, delta, n, seed)
    }
}

fn check_candidate(ids: &[usize], entity: &EntitySpan, c: &PhraseCandidate) -> Result<()> {
    if c.start >= c.end || c.end > ids.len() {
        return Err(Error::Input(format!(
            "candidate ({}, {}) outside sentence of length {}",
            c.start,
            c.end,
            ids.len()
        )));
    }
    if entity.overlaps(c.start, c.end) {
        return Err(Error::Trigger(format!("candidate ({}, {}) overlaps entity {entity}", c.start, c.end)));
    }
    Ok(())
}

fn occlude(ids: &[usize], c: &PhraseCandidate) -> Vec<usize> {
    let mut out = ids.to_vec();
    out[c.start..c.end].iter_mut().for_each(|t| *t = PAD);
    out
}

/// Score drop when the candidate is replaced by PAD tokens. May be negative.
pub fn occlusion_phi<S: EntityScorer + ?Sized>(
    model: &S,
    ids: &[usize],
    entity: &EntitySpan,
    candidate: &PhraseCandidate,
) -> Result<f64> {
    check_candidate(ids, entity, candidate)?;
    Ok(model.score(ids, entity)? - model.score(&occlude(ids, candidate), entity)?)
}

/// Context positions within `radius` of the candidate, outside both the
/// candidate and the entity.
pub fn context_positions(len: usize, entity: &EntitySpan, c: &PhraseCandidate, radius: usize) -> Vec<usize> {
    let lo = c.start.saturating_sub(radius);
    let hi = (c.end + radius).min(len);
    (lo..hi).filter(|&i| !(c.start..c.end).contains(&i) && !entity.contains(i)).collect()
}

/// Per-sample score drops `s(x̂) − s(x̂ with the candidate padded)`.
pub fn soc_differences<S, L>(
    model: &S,
    lm: &L,
    ids: &[usize],
    entity: &EntitySpan,
    candidate: &PhraseCandidate,
    cfg: &SocConfig,
    seed: u64,
) -> Result<Vec<f64>>
where
    S: EntityScorer + ?Sized,
    L: ContextSampler + ?Sized,
{
    check_candidate(ids, entity, candidate)?;
    let delta = context_positions(ids.len(), entity, candidate, cfg.context_radius);
    if delta.is_empty() {
        // Every sample would be the original sentence.
        let d = occlusion_phi(model, ids, entity, candidate)?;
        return Ok(vec![d; cfg.n_samples]);
    }
    let draws = lm.sample(ids, &delta, cfg.n_samples, seed)?;
    draws
        .iter()
        .map(|repl| {
            let mut x = ids.to_vec();
            for (&p, &t) in repl {
                x[p] = t;
            }
            Ok(model.score(&x, entity)? - model.score(&occlude(&x, candidate), entity)?)
        })
        .collect()
}

/// Arithmetic mean. A constant slice returns its value unchanged.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return xs.first().copied().unwrap_or(f64::NAN);
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sampling-and-occlusion importance, seeded by `cfg.seed`.
pub fn soc_phi<S, L>(
    model: &S,
    lm: &L,
    ids: &[usize],
    entity: &EntitySpan,
    candidate: &PhraseCandidate,
    cfg: &SocConfig,
) -> Result<f64>
where
    S: EntityScorer + ?Sized,
    L: ContextSampler + ?Sized,
{
    soc_phi_seeded(model, lm, ids, entity, candidate, cfg, cfg.seed)
}

pub(crate) fn soc_phi_seeded<S, L>(
    model: &S,
    lm: &L,
    ids: &[usize],
    entity: &EntitySpan,
    candidate: &PhraseCandidate,
    cfg: &SocConfig,
    seed: u64,
) -> Result<f64>
where
    S: EntityScorer + ?Sized,
    L: ContextSampler + ?Sized,
{
    cfg.validate()?;
    Ok(mean(&soc_differences(model, lm, ids, entity, candidate, cfg, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::CandidateSource;

    /// Scores by reading the token at position 0 as a percentage, or 0 when
    /// position 1 is PAD.
    struct Lookup;
    impl EntityScorer for Lookup {
        fn score(&self, ids: &[usize], _: &EntitySpan) -> Result<f64> {
            Ok(if ids[1] == PAD { 0.0 } else { ids[0] as f64 / 100.0 })
        }
    }

    /// Replaces position 0 with 40, 50, 60, ... in turn.
    struct Fixed;
    impl ContextSampler for Fixed {
        fn sample(&self, _: &[usize], delta: &[usize], n: usize, _: u64) -> Result<Vec<BTreeMap<usize, usize>>> {
            Ok((0..n).map(|i| delta.iter().map(|&p| (p, 40 + 10 * i)).collect()).collect())
        }
    }

    fn cand(s: usize, e: usize) -> PhraseCandidate {
        PhraseCandidate { start: s, end: e, origin: CandidateSource::Cp }
    }

    #[test]
    fn hand_set_differences_average() {
        let cfg = SocConfig { n_samples: 3, context_radius: 1, ..Default::default() };
        let e = EntitySpan::new(2, 3, "X");
        let d = soc_differences(&Lookup, &Fixed, &[90, 7, 8], &e, &cand(1, 2), &cfg, 0).unwrap();
        assert_eq!(d, vec![0.4, 0.5, 0.6]);
        assert_eq!(soc_phi(&Lookup, &Fixed, &[90, 7, 8], &e, &cand(1, 2), &cfg).unwrap(), 0.5);
    }

    #[test]
    fn mean_of_constant_is_exact() {
        let xs = vec![0.1; 20];
        assert_eq!(mean(&xs), 0.1);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn occlusion_arithmetic() {
        let e = EntitySpan::new(2, 3, "X");
        assert_eq!(occlusion_phi(&Lookup, &[90, 7, 8], &e, &cand(1, 2)).unwrap(), 0.9);
        assert_eq!(occlusion_phi(&Lookup, &[90, PAD, 8], &e, &cand(1, 2)).unwrap(), 0.0);
        assert!(occlusion_phi(&Lookup, &[90, 7, 8], &e, &cand(1, 3)).is_err());
    }

    #[test]
    fn context_excludes_candidate_and_entity() {
        let e = EntitySpan::new(5, 6, "X");
        assert_eq!(context_positions(10, &e, &cand(2, 4), 2), vec![0, 1, 4]);
        assert!(context_positions(10, &e, &cand(2, 4), 0).is_empty());
    }
}
