//! Trigger JSONL: one example per line.
//!
//! ```text
//! {"id": str, "tokens": [str], "tags": [str],
//!  "triggers": [{"entity": {"start": int, "end": int, "type": str},
//!                "indices": [int], "score": float|null,
//!                "source": "auto"|"human"|"refined"}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EntitySpan, Tag, TagSeq, TaggedSentence, Token, Trigger, TriggerLabeledExample, TriggerSource};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    tokens: Vec<String>,
    tags: Vec<String>,
    triggers: Vec<TriggerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerRecord {
    entity: EntitySpan,
    indices: Vec<usize>,
    score: Option<f64>,
    source: TriggerSource,
}

fn schema(record: usize, field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Schema { record, field: field.into(), msg: msg.into() }
}

impl Record {
    fn from_example(ex: &TriggerLabeledExample) -> Self {
        let s = &ex.sentence;
        Record {
            id: s.id.clone(),
            tokens: s.tokens.iter().map(|t| t.to_string()).collect(),
            tags: s.tags.tags().iter().map(Tag::to_string).collect(),
            triggers: ex
                .triggers
                .iter()
                .map(|t| TriggerRecord {
                    entity: t.entity.clone(),
                    indices: t.indices.clone(),
                    score: t.score,
                    source: t.source,
                })
                .collect(),
        }
    }

    fn into_example(self, n: usize) -> Result<TriggerLabeledExample> {
        let mut tokens = Vec::with_capacity(self.tokens.len());
        for (i, t) in self.tokens.into_iter().enumerate() {
            tokens.push(Token::new(t).map_err(|e| schema(n, format!("tokens[{i}]"), e.to_string()))?);
        }
        let mut tags = Vec::with_capacity(self.tags.len());
        for (i, t) in self.tags.iter().enumerate() {
            tags.push(t.parse::<Tag>().map_err(|e| schema(n, format!("tags[{i}]"), e.to_string()))?);
        }
        let tags = TagSeq::new(tags).map_err(|e| schema(n, "tags", e.to_string()))?;
        let sentence = TaggedSentence::new(self.id, tokens, tags).map_err(|e| schema(n, "tokens", e.to_string()))?;
        let spans = sentence.spans();
        let mut triggers = Vec::with_capacity(self.triggers.len());
        for (i, t) in self.triggers.into_iter().enumerate() {
            let len = sentence.len();
            if let Some(&bad) = t.indices.iter().find(|&&x| x >= len) {
                return Err(schema(
                    n,
                    format!("triggers[{i}].indices"),
                    format!("index {bad} >= sentence length {len}"),
                ));
            }
            if !spans.contains(&t.entity) {
                return Err(schema(
                    n,
                    format!("triggers[{i}].entity"),
                    format!("{} is not an entity span of the tags", t.entity),
                ));
            }
            let trig = Trigger::new(t.entity, t.indices, t.score, t.source)
                .map_err(|e| schema(n, format!("triggers[{i}]"), e.to_string()))?;
            triggers.push(trig);
        }
        Ok(TriggerLabeledExample { sentence, triggers })
    }
}

pub fn triggers_to_json_line(ex: &TriggerLabeledExample) -> Result<String> {
    Ok(serde_json::to_string(&Record::from_example(ex))?)
}

/// Parses one JSONL record; `record` is the 1-based record number used in
/// error messages.
pub fn trigger_from_json_line(line: &str, record: usize) -> Result<TriggerLabeledExample> {
    let de = &mut serde_json::Deserializer::from_str(line);
    let rec: Record = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(record, path, e.into_inner().to_string())
    })?;
    rec.into_example(record)
}

pub fn write_triggers(path: &Path, data: &[TriggerLabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in data {
        writeln!(w, "{}", triggers_to_json_line(ex)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triggers(path: &Path) -> Result<Vec<TriggerLabeledExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(trigger_from_json_line(&line, i + 1)?);
    }
    Ok(out)
}
