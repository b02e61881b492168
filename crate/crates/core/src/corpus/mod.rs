//! Sentences, BIO tags, entity spans and triggers, plus the file formats
//! they travel in.

mod conll;
mod deps;
mod eval;
mod tree;
mod triggers;

pub use conll::{parse_conll, parse_conll_with, read_conll, write_conll, ConllOptions};
pub use deps::{dep_line, parse_dep_line, read_dep_file};
pub use eval::{entity_f1, EvalReport, TypeScores};
pub use tree::{parse_bracketed_tree, read_tree_file, ParseTree};
pub use triggers::{read_triggers, trigger_from_json_line, triggers_to_json_line, write_triggers};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single pre-tokenized word. Never empty, never contains whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::Input("empty token".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::Input(format!("token {text:?} contains whitespace")));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::ops::Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

/// One BIO label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start).
    pub fn may_follow(&self, prev: Option<&Tag>) -> bool {
        match self {
            Tag::O | Tag::B(_) => true,
            Tag::I(t) => matches!(prev, Some(Tag::B(p)) | Some(Tag::I(p)) if p == t),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let bad = || Error::Input(format!("invalid BIO tag {s:?}"));
        let (prefix, etype) = s.split_once('-').ok_or_else(bad)?;
        if etype.is_empty() || etype.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::B(etype.to_string())),
            "I" => Ok(Tag::I(etype.to_string())),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Tag {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> String {
        t.to_string()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

/// A BIO tag sequence. Construction through [`TagSeq::new`] checks that no
/// `I-T` follows `O`, the sentence start, or a different type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSeq(Vec<Tag>);

impl TagSeq {
    pub fn new(tags: Vec<Tag>) -> Result<Self> {
        if let Some(position) = first_bio_violation(&tags) {
            return Err(Error::Bio {
                sentence: String::new(),
                position,
                msg: format!("{} cannot follow {}", tags[position], prev_name(&tags, position)),
            });
        }
        Ok(TagSeq(tags))
    }

    /// Coerces every illegal `I-T` into `B-T`.
    pub fn repaired(mut tags: Vec<Tag>) -> Self {
        for i in 0..tags.len() {
            let ok = tags[i].may_follow(if i == 0 { None } else { Some(&tags[i - 1]) });
            if !ok {
                if let Tag::I(t) = &tags[i] {
                    tags[i] = Tag::B(t.clone());
                }
            }
        }
        TagSeq(tags)
    }

    pub fn parse(labels: &[&str]) -> Result<Self> {
        let tags = labels.iter().map(|l| l.parse()).collect::<Result<Vec<Tag>>>()?;
        TagSeq::new(tags)
    }

    pub fn all_o(len: usize) -> Self {
        TagSeq(vec![Tag::O; len])
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        spans_from_bio(self)
    }
}

fn first_bio_violation(tags: &[Tag]) -> Option<usize> {
    (0..tags.len()).find(|&i| !tags[i].may_follow(if i == 0 { None } else { Some(&tags[i - 1]) }))
}

fn prev_name(tags: &[Tag], i: usize) -> String {
    if i == 0 {
        "sentence start".into()
    } else {
        tags[i - 1].to_string()
    }
}

/// Half-open token span `[start, end)` carrying an entity type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        EntitySpan { start, end, etype: etype.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.start, self.end, self.etype)
    }
}

/// Decodes maximal left-to-right entity spans. `B-T` opens a span and
/// following `I-T` tags extend it.
pub fn spans_from_bio(tags: &TagSeq) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.tags().iter().enumerate() {
        match tag {
            Tag::I(t) if open.is_some_and(|(_, o)| o == t) => {}
            _ => {
                if let Some((start, t)) = open.take() {
                    spans.push(EntitySpan::new(start, i, t));
                }
                match tag {
                    Tag::B(t) | Tag::I(t) => open = Some((i, t)),
                    Tag::O => {}
                }
            }
        }
    }
    if let Some((start, t)) = open {
        spans.push(EntitySpan::new(start, tags.len(), t));
    }
    spans
}

/// Inverse of [`spans_from_bio`].
pub fn bio_from_spans(spans: &[EntitySpan], length: usize) -> Result<TagSeq> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.is_empty() || s.end > length {
            return Err(Error::Input(format!("span {s} out of bounds for length {length}")));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::Overlap { first: pair[0].to_string(), second: pair[1].to_string() });
        }
    }
    let mut tags = vec![Tag::O; length];
    for s in sorted {
        tags[s.start] = Tag::B(s.etype.clone());
        for tag in &mut tags[s.start + 1..s.end] {
            *tag = Tag::I(s.etype.clone());
        }
    }
    Ok(TagSeq(tags))
}

/// A labeled sentence from the entity-labeled corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub tags: TagSeq,
}

impl TaggedSentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, tags: TagSeq) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Length { sentence: id, msg: "sentence has no tokens".into() });
        }
        if tokens.len() != tags.len() {
            return Err(Error::Length {
                sentence: id,
                msg: format!("{} tokens but {} tags", tokens.len(), tags.len()),
            });
        }
        Ok(TaggedSentence { id, tokens, tags })
    }

    /// Convenience constructor from whitespace-separated tokens and labels.
    pub fn from_strs(id: impl Into<String>, tokens: &str, tags: &str) -> Result<Self> {
        let id = id.into();
        let toks = tokens.split_whitespace().map(Token::new).collect::<Result<Vec<_>>>()?;
        let labels: Vec<&str> = tags.split_whitespace().collect();
        let tags = TagSeq::parse(&labels).map_err(|e| with_sentence(e, &id))?;
        TaggedSentence::new(id, toks, tags)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        spans_from_bio(&self.tags)
    }

    pub fn token_strs(&self) -> Vec<&str> {
        self.tokens.iter().map(Token::as_str).collect()
    }
}

pub(crate) fn with_sentence(err: Error, id: &str) -> Error {
    match err {
        Error::Bio { position, msg, .. } => Error::Bio { sentence: id.to_string(), position, msg },
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerSource {
    Auto,
    Human,
    Refined,
}

/// A set of non-entity token indices explaining one entity's type.
/// Indices need not be contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub entity: EntitySpan,
    pub indices: Vec<usize>,
    pub score: Option<f64>,
    pub source: TriggerSource,
}

impl Trigger {
    pub fn new(entity: EntitySpan, indices: Vec<usize>, score: Option<f64>, source: TriggerSource) -> Result<Self> {
        let t = Trigger { entity, indices, score, source };
        t.check_shape()?;
        Ok(t)
    }

    pub fn contiguous(entity: EntitySpan, start: usize, end: usize, score: f64) -> Result<Self> {
        Trigger::new(entity, (start..end).collect(), Some(score), TriggerSource::Auto)
    }

    fn check_shape(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::Trigger("empty index set".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Trigger(format!("indices {:?} not strictly increasing", self.indices)));
        }
        if let Some(&i) = self.indices.iter().find(|&&i| self.entity.contains(i)) {
            return Err(Error::Trigger(format!("index {i} overlaps its entity {}", self.entity)));
        }
        Ok(())
    }

    /// Full check against the sentence length.
    pub fn validate(&self, len: usize) -> Result<()> {
        self.check_shape()?;
        if self.entity.is_empty() || self.entity.end > len {
            return Err(Error::Trigger(format!("entity {} outside sentence of length {len}", self.entity)));
        }
        if let Some(&i) = self.indices.iter().find(|&&i| i >= len) {
            return Err(Error::Trigger(format!("index {i} outside sentence of length {len}")));
        }
        Ok(())
    }
}

/// A sentence with its per-entity triggers.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerLabeledExample {
    pub sentence: TaggedSentence,
    pub triggers: Vec<Trigger>,
}

impl TriggerLabeledExample {
    pub fn new(sentence: TaggedSentence, triggers: Vec<Trigger>) -> Result<Self> {
        let spans = sentence.spans();
        for t in &triggers {
            t.validate(sentence.len())?;
            if !spans.contains(&t.entity) {
                return Err(Error::Trigger(format!("entity {} is not a span of sentence {}", t.entity, sentence.id)));
            }
        }
        Ok(TriggerLabeledExample { sentence, triggers })
    }

    pub fn without_triggers(sentence: TaggedSentence) -> Self {
        TriggerLabeledExample { sentence, triggers: Vec::new() }
    }
}
