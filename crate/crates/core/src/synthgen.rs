//! Planted-trigger corpora. Entity surface forms are shared by every type,
//! so only the cue phrase next to an entity tells its type apart.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    bio_from_spans, EntitySpan, ParseTree, TaggedSentence, Token, Trigger, TriggerLabeledExample, TriggerSource,
};
use crate::error::{Error, Result};
use crate::rng::{derive, rng, Rng};

/// Largest gap between the cue phrase and the entity.
pub const MAX_GAP: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub entity_types: Vec<String>,
    pub cues_per_type: usize,
    pub cue_length: usize,
    /// Entity surface forms, space-separated tokens each.
    pub shared_entity_vocab: Vec<String>,
    pub filler_vocab_size: usize,
    pub sentence_length_min: usize,
    pub sentence_length_max: usize,
    pub n_sentences: usize,
    pub seed: u64,
    /// Extra constituents per tree built from runs of filler words.
    pub distractor_phrases: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entity_types: vec!["PER".into(), "ORG".into(), "LOC".into()],
            cues_per_type: 2,
            cue_length: 3,
            shared_entity_vocab: default_entity_forms(50),
            filler_vocab_size: 200,
            sentence_length_min: 8,
            sentence_length_max: 16,
            n_sentences: 200,
            seed: 0,
            distractor_phrases: 0,
        }
    }
}

/// `n` surface forms; every third one has two tokens.
pub fn default_entity_forms(n: usize) -> Vec<String> {
    (0..n).map(|i| if i % 3 == 2 { format!("ent{i:02} ent{i:02}x") } else { format!("ent{i:02}") }).collect()
}

pub fn cue_tokens(etype: &str, cue: usize, len: usize) -> Vec<String> {
    (0..len).map(|j| format!("cue_{}_{cue}_{j}", etype.to_lowercase())).collect()
}

pub fn filler_token(i: usize) -> String {
    format!("w{i:03}")
}

impl SynthConfig {
    fn entity_forms(&self) -> Result<Vec<Vec<Token>>> {
        self.shared_entity_vocab
            .iter()
            .map(|f| {
                let toks = f.split_whitespace().map(Token::new).collect::<Result<Vec<_>>>()?;
                if toks.is_empty() {
                    return Err(Error::Config("empty entity surface form".into()));
                }
                Ok(toks)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.entity_types.is_empty() {
            return cfg("entity_types is empty".into());
        }
        let types: HashSet<&String> = self.entity_types.iter().collect();
        if types.len() != self.entity_types.len() {
            return cfg("entity_types has duplicates".into());
        }
        if let Some(t) = self.entity_types.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return cfg(format!("bad entity type {t:?}"));
        }
        if self.cues_per_type == 0 || self.cue_length == 0 {
            return cfg("cues_per_type and cue_length must be at least 1".into());
        }
        if self.filler_vocab_size == 0 {
            return cfg("filler_vocab_size must be at least 1".into());
        }
        let forms = self.entity_forms()?;
        if forms.is_empty() {
            return cfg("shared_entity_vocab is empty".into());
        }
        let mut cue_set = HashSet::new();
        for t in &self.entity_types {
            for c in 0..self.cues_per_type {
                for w in cue_tokens(t, c, self.cue_length) {
                    if !cue_set.insert(w.clone()) {
                        return cfg(format!("cue token {w} is shared between types"));
                    }
                }
            }
        }
        let fillers: HashSet<String> = (0..self.filler_vocab_size).map(filler_token).collect();
        for tok in forms.iter().flatten() {
            if cue_set.contains(tok.as_str()) || fillers.contains(tok.as_str()) {
                return cfg(format!("entity token {tok} collides with the cue or filler vocabulary"));
            }
        }
        let longest = forms.iter().map(Vec::len).max().unwrap_or(1);
        let need = self.cue_length + longest;
        if self.sentence_length_min > self.sentence_length_max {
            return cfg("sentence_length_min exceeds sentence_length_max".into());
        }
        if self.sentence_length_min < need {
            return cfg(format!(
                "sentence_length_min {} cannot hold a cue of {} and an entity of {longest}",
                self.sentence_length_min, self.cue_length
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Filler,
    Cue,
    Entity,
}

/// A generated corpus with its planted triggers, trees and dependency heads,
/// all aligned by position.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub sentences: Vec<TaggedSentence>,
    pub gold: Vec<TriggerLabeledExample>,
    pub trees: Vec<ParseTree>,
    /// 0-based heads, `None` at the root.
    pub dep_heads: Vec<Vec<Option<usize>>>,
}

impl SynthCorpus {
    /// The first `n` sentences.
    pub fn truncated(&self, n: usize) -> SynthCorpus {
        let n = n.min(self.sentences.len());
        SynthCorpus {
            sentences: self.sentences[..n].to_vec(),
            gold: self.gold[..n].to_vec(),
            trees: self.trees[..n].to_vec(),
            dep_heads: self.dep_heads[..n].to_vec(),
        }
    }

    pub fn tree_lines(&self) -> Vec<String> {
        self.sentences.iter().zip(&self.trees).map(|(s, t)| t.to_bracketed(&s.token_strs())).collect()
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let forms = cfg.entity_forms()?;
    let mut out = SynthCorpus { sentences: Vec::new(), gold: Vec::new(), trees: Vec::new(), dep_heads: Vec::new() };
    for i in 0..cfg.n_sentences {
        let mut r = rng(derive(cfg.seed, "synth", &[i as u64]));
        let etype = &cfg.entity_types[i % cfg.entity_types.len()];
        let cue = cue_tokens(etype, r.gen_range(0..cfg.cues_per_type), cfg.cue_length);
        let form = &forms[r.gen_range(0..forms.len())];
        let gap = r.gen_range(0..=MAX_GAP);
        let core = cue.len() + form.len();
        let len = r.gen_range(cfg.sentence_length_min..=cfg.sentence_length_max).max(core + gap);
        let gap = gap.min(len - core);
        let rest = len - core - gap;
        let left = r.gen_range(0..=rest);
        let cue_first = r.gen_bool(0.5);

        let mut roles = vec![Role::Filler; left];
        let (a, b) = if cue_first { (Role::Cue, Role::Entity) } else { (Role::Entity, Role::Cue) };
        let width = |role| if role == Role::Cue { cue.len() } else { form.len() };
        roles.extend(std::iter::repeat_n(a, width(a)));
        roles.extend(std::iter::repeat_n(Role::Filler, gap));
        roles.extend(std::iter::repeat_n(b, width(b)));
        roles.extend(std::iter::repeat_n(Role::Filler, rest - left));

        let start_of = |role| roles.iter().position(|&x| x == role).unwrap();
        let (cs, es) = (start_of(Role::Cue), start_of(Role::Entity));
        let tokens: Vec<Token> = roles
            .iter()
            .enumerate()
            .map(|(p, role)| match role {
                Role::Filler => Token::new(filler_token(r.gen_range(0..cfg.filler_vocab_size))),
                Role::Cue => Token::new(cue[p - cs].clone()),
                Role::Entity => Ok(form[p - es].clone()),
            })
            .collect::<Result<_>>()?;
        let entity = EntitySpan::new(es, es + form.len(), etype.clone());
        let tags = bio_from_spans(std::slice::from_ref(&entity), len)?;
        let sentence = TaggedSentence::new(i.to_string(), tokens, tags)?;
        let trigger = Trigger::new(entity.clone(), (cs..cs + cue.len()).collect(), None, TriggerSource::Human)?;

        out.trees.push(build_tree(&roles, cfg.distractor_phrases, &mut r));
        out.dep_heads.push(dep_heads(&roles));
        out.gold.push(TriggerLabeledExample::new(sentence.clone(), vec![trigger])?);
        out.sentences.push(sentence);
    }
    Ok(out)
}

/// Flat tree with the cue as one constituent, plus up to `distractors`
/// constituents over runs of two or three fillers.
fn build_tree(roles: &[Role], distractors: usize, r: &mut Rng) -> ParseTree {
    let n = roles.len();
    let mut group: Vec<Option<usize>> = vec![None; n];
    let mut labels = vec!["CUE"];
    for (p, role) in roles.iter().enumerate() {
        if *role == Role::Cue {
            group[p] = Some(0);
        }
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for _ in 0..distractors {
        for _attempt in 0..8 {
            let len = r.gen_range(2..=3);
            if len > n {
                break;
            }
            let s = r.gen_range(0..=n - len);
            if (s..s + len).all(|p| roles[p] == Role::Filler && group[p].is_none()) {
                runs.push((s, s + len));
                labels.push("XP");
                (s..s + len).for_each(|p| group[p] = Some(runs.len()));
                break;
            }
        }
    }
    let leaf_label = |role: Role| match role {
        Role::Filler => "W",
        Role::Cue => "C",
        Role::Entity => "E",
    };
    let mut children = Vec::new();
    let mut p = 0;
    while p < n {
        match group[p] {
            None => {
                children.push(ParseTree::leaf(leaf_label(roles[p]), p));
                p += 1;
            }
            Some(g) => {
                let mut kids = Vec::new();
                while p < n && group[p] == Some(g) {
                    kids.push(ParseTree::leaf(leaf_label(roles[p]), p));
                    p += 1;
                }
                children.push(ParseTree::node(labels[g], kids));
            }
        }
    }
    ParseTree::node("S", children)
}

/// Entity head is the last entity token and the root. The cue hangs off the
/// entity head through its last token; fillers attach to their left
/// neighbour, and a leading filler to the root.
fn dep_heads(roles: &[Role]) -> Vec<Option<usize>> {
    let last = |role| roles.iter().rposition(|&x| x == role).unwrap();
    let (ent_head, cue_head) = (last(Role::Entity), last(Role::Cue));
    roles
        .iter()
        .enumerate()
        .map(|(p, role)| match role {
            Role::Entity if p == ent_head => None,
            Role::Entity => Some(ent_head),
            Role::Cue if p == cue_head => Some(ent_head),
            Role::Cue => Some(cue_head),
            Role::Filler if p == 0 => Some(ent_head),
            Role::Filler => Some(p - 1),
        })
        .collect()
}
