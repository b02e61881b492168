use std::fs;
use std::path::Path;

use super::TaggedSentence;
use crate::error::{Error, Result};

/// Parses one line of 1-based head indices (0 marks the root) into 0-based
/// heads with `None` for the root.
pub fn parse_dep_line(line: &str, len: usize, line_no: usize) -> Result<Vec<Option<usize>>> {
    let heads: Vec<Option<usize>> = line
        .split_whitespace()
        .map(|f| {
            let h: usize =
                f.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("bad head index {f:?}") })?;
            if h > len {
                return Err(Error::Parse { line: line_no, msg: format!("head {h} beyond sentence length {len}") });
            }
            Ok(h.checked_sub(1))
        })
        .collect::<Result<_>>()?;
    if heads.len() != len {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("{} heads for a sentence of {len} tokens", heads.len()),
        });
    }
    Ok(heads)
}

pub fn dep_line(heads: &[Option<usize>]) -> String {
    heads.iter().map(|h| h.map_or(0, |h| h + 1).to_string()).collect::<Vec<_>>().join(" ")
}

/// One head line per sentence, aligned with `sentences`.
pub fn read_dep_file(path: &Path, sentences: &[TaggedSentence]) -> Result<Vec<Vec<Option<usize>>>> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
    if lines.len() != sentences.len() {
        return Err(Error::Length {
            sentence: sentences.get(lines.len()).map_or_else(String::new, |s| s.id.clone()),
            msg: format!("{} dependency lines for {} sentences", lines.len(), sentences.len()),
        });
    }
    lines.iter().zip(sentences).map(|(&(no, l), s)| parse_dep_line(l, s.len(), no)).collect()
}
