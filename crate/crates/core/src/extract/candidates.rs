use std::collections::{BTreeSet, VecDeque};

use rand::Rng as _;

use super::{CandidateSource, PhraseCandidate, SocConfig};
use crate::corpus::{EntitySpan, ParseTree};
use crate::error::{Error, Result};
use crate::rng::rng;

fn keep(c: &PhraseCandidate, entity: &EntitySpan, cfg: &SocConfig) -> bool {
    let len = c.end - c.start;
    len >= 1 && len <= cfg.max_phrase_len && !entity.overlaps(c.start, c.end)
}

fn dedup(mut cs: Vec<PhraseCandidate>) -> Vec<PhraseCandidate> {
    let mut seen = BTreeSet::new();
    cs.retain(|c| seen.insert((c.start, c.end)));
    cs
}

/// Spans of internal constituents other than the root, in pre-order.
pub fn candidates_cp(
    tree: &ParseTree,
    sentence_len: usize,
    entity: &EntitySpan,
    cfg: &SocConfig,
) -> Result<Vec<PhraseCandidate>> {
    if tree.leaf_count() != sentence_len || tree.span() != (0, sentence_len) {
        return Err(Error::Alignment {
            index: tree.leaf_count().min(sentence_len),
            msg: format!("tree covers {} tokens, sentence has {sentence_len}", tree.leaf_count()),
        });
    }
    let mut out = Vec::new();
    tree.walk(&mut |node, depth| {
        if depth > 0 && !node.is_leaf() {
            let (start, end) = node.span();
            let c = PhraseCandidate { start, end, origin: CandidateSource::Cp };
            if keep(&c, entity, cfg) {
                out.push(c);
            }
        }
    });
    Ok(dedup(out))
}

/// `rs_num_spans` random windows of `rs_span_len` tokens, clipped at the
/// sentence end.
pub fn candidates_rs(sentence_len: usize, entity: &EntitySpan, cfg: &SocConfig, seed: u64) -> Vec<PhraseCandidate> {
    if sentence_len == 0 || cfg.rs_span_len == 0 {
        return Vec::new();
    }
    let mut r = rng(seed);
    let out = (0..cfg.rs_num_spans)
        .map(|_| {
            let start = r.gen_range(0..sentence_len);
            let end = (start + cfg.rs_span_len).min(sentence_len);
            PhraseCandidate { start, end, origin: CandidateSource::Rs }
        })
        .filter(|c| keep(c, entity, cfg))
        .collect();
    dedup(out)
}

/// Checks that `heads` is a single-rooted tree and returns hop distances
/// from the entity tokens over the undirected dependency graph.
fn hop_distances(heads: &[Option<usize>], entity: &EntitySpan) -> Result<Vec<Option<usize>>> {
    let n = heads.len();
    if heads.iter().filter(|h| h.is_none()).count() != 1 {
        return Err(Error::Tree("dependency heads must have exactly one root".into()));
    }
    for (i, h) in heads.iter().enumerate() {
        if matches!(h, Some(j) if *j >= n || *j == i) {
            return Err(Error::Tree(format!("token {i} has an invalid head")));
        }
    }
    for start in 0..n {
        let mut p = start;
        let mut steps = 0;
        while let Some(q) = heads[p] {
            p = q;
            steps += 1;
            if steps > n {
                return Err(Error::Tree(format!("dependency heads contain a cycle through token {start}")));
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (i, h) in heads.iter().enumerate() {
        if let Some(j) = *h {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for i in entity.start..entity.end.min(n) {
        dist[i] = Some(0);
        queue.push_back(i);
    }
    while let Some(i) = queue.pop_front() {
        let d = dist[i].unwrap();
        for &j in &adj[i] {
            if dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    Ok(dist)
}

/// Contiguous runs of tokens within one and within two dependency hops of
/// the entity.
pub fn candidates_dp(heads: &[Option<usize>], entity: &EntitySpan, cfg: &SocConfig) -> Result<Vec<PhraseCandidate>> {
    if entity.end > heads.len() {
        return Err(Error::Input(format!("entity {entity} outside sentence of length {}", heads.len())));
    }
    let dist = hop_distances(heads, entity)?;
    let mut out = Vec::new();
    for hop in 1..=2 {
        let mut run: Option<usize> = None;
        for i in 0..=heads.len() {
            let inside = i < heads.len() && matches!(dist[i], Some(d) if d >= 1 && d <= hop);
            match (inside, run) {
                (true, None) => run = Some(i),
                (false, Some(s)) => {
                    out.push(PhraseCandidate { start: s, end: i, origin: CandidateSource::Dp });
                    run = None;
                }
                _ => {}
            }
        }
    }
    out.retain(|c| keep(c, entity, cfg));
    Ok(dedup(out))
}
