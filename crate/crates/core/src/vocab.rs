//! Token and tag index maps shared by every model.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, Tag, TagSeq, TaggedSentence};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK_ENT: usize = 2;
pub const MASK_TRG: usize = 3;
pub const N_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["<pad>", "<unk>", "<mask-ent>", "<mask-trg>"];

/// Word vocabulary. Ids below [`N_SPECIAL`] are reserved; the rest follow
/// first appearance in the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a TaggedSentence>) -> Self {
        let mut words: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        for s in sentences {
            for t in &s.tokens {
                if !index.contains_key(t.as_str()) {
                    index.insert(t.to_string(), words.len());
                    words.push(t.to_string());
                }
            }
        }
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, sentence: &TaggedSentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_strs(&self, words: &[&str]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn is_special(id: usize) -> bool {
        id < N_SPECIAL
    }
}

/// Tag inventory: `O` first, then `B-T`, `I-T` per type in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    tags: Vec<Tag>,
}

impl TryFrom<Vec<String>> for TagSet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        let tags = v.iter().map(|s| s.parse()).collect::<Result<Vec<Tag>>>()?;
        if tags.first() != Some(&Tag::O) {
            return Err(Error::Input("tag set must start with O".into()));
        }
        Ok(TagSet { tags })
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.tags.iter().map(Tag::to_string).collect()
    }
}

impl TagSet {
    pub fn from_types<S: AsRef<str>>(types: impl IntoIterator<Item = S>) -> Self {
        let types: BTreeSet<String> = types.into_iter().map(|t| t.as_ref().to_string()).collect();
        let mut tags = vec![Tag::O];
        for t in types {
            tags.push(Tag::B(t.clone()));
            tags.push(Tag::I(t));
        }
        TagSet { tags }
    }

    pub fn from_data<'a>(sentences: impl IntoIterator<Item = &'a TaggedSentence>) -> Self {
        let mut types = BTreeSet::new();
        for s in sentences {
            for t in s.tags.tags() {
                if let Some(ty) = t.entity_type() {
                    types.insert(ty.to_string());
                }
            }
        }
        TagSet::from_types(types)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn index(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn encode(&self, tags: &TagSeq) -> Result<Vec<usize>> {
        tags.tags()
            .iter()
            .map(|t| self.index(t).ok_or_else(|| Error::Input(format!("tag {t} not in tag set"))))
            .collect()
    }

    /// Indices are trusted to come from a BIO-masked decoder; an invalid
    /// sequence is repaired rather than rejected.
    pub fn decode(&self, ids: &[usize]) -> TagSeq {
        let tags: Vec<Tag> = ids.iter().map(|&i| self.tags[i].clone()).collect();
        TagSeq::new(tags.clone()).unwrap_or_else(|_| TagSeq::repaired(tags))
    }

    /// Tag indices the span induces: `B-T` at its start, `I-T` after.
    pub fn span_tags(&self, span: &EntitySpan) -> Result<Vec<usize>> {
        let b = self
            .index(&Tag::B(span.etype.clone()))
            .ok_or_else(|| Error::Input(format!("entity type {} not in tag set", span.etype)))?;
        let i = self.index(&Tag::I(span.etype.clone())).unwrap_or(b + 1);
        Ok((span.start..span.end).map(|p| if p == span.start { b } else { i }).collect())
    }
}
