use std::fs;
use std::path::Path;

use super::{with_sentence, Tag, TagSeq, TaggedSentence, Token};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct ConllOptions {
    /// Coerce illegal `I-T` tags into `B-T` instead of failing.
    pub repair: bool,
}

/// Parses whitespace-separated column files. The first column is the token
/// and the last column is the tag, so four-column CoNLL-2003 files load
/// unchanged. Sentence ids are sequential integers in file order.
pub fn parse_conll(text: &str) -> Result<Vec<TaggedSentence>> {
    parse_conll_with(text, ConllOptions::default())
}

pub fn parse_conll_with(text: &str, opts: ConllOptions) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut columns: Option<usize> = None;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<Tag>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let toks = std::mem::take(tokens);
        let labels = std::mem::take(tags);
        if toks.len() == 1 && toks[0].as_str() == "-DOCSTART-" {
            return Ok(());
        }
        let id = sentences.len().to_string();
        let seq = if opts.repair {
            TagSeq::repaired(labels)
        } else {
            TagSeq::new(labels).map_err(|e| with_sentence(e, &id))?
        };
        sentences.push(TaggedSentence::new(id, toks, seq)?);
        Ok(())
    };

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 2 columns, found {}", fields.len()),
            });
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {c} columns, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let tag: Tag =
            fields[fields.len() - 1].parse().map_err(|e: Error| Error::Parse { line: line_no, msg: e.to_string() })?;
        tokens.push(Token::new(fields[0])?);
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags)?;
    Ok(sentences)
}

pub fn read_conll(path: &Path, opts: ConllOptions) -> Result<Vec<TaggedSentence>> {
    parse_conll_with(&fs::read_to_string(path)?, opts)
}

/// Two-column output, blank line between sentences.
pub fn write_conll(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    fs::write(path, to_conll_string(sentences))?;
    Ok(())
}

pub(crate) fn to_conll_string(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(s.tags.tags()) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySpan;

    #[test]
    fn two_sentences() {
        let s = parse_conll("EU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].spans(), vec![EntitySpan::new(0, 1, "ORG")]);
        assert_eq!(s[1].id, "1");
    }

    #[test]
    fn empty_input() {
        assert!(parse_conll("").unwrap().is_empty());
        assert!(parse_conll("\n\n").unwrap().is_empty());
    }

    #[test]
    fn leading_i_is_rejected() {
        match parse_conll("x I-PER\n").unwrap_err() {
            Error::Bio { sentence, position, .. } => {
                assert_eq!(sentence, "0");
                assert_eq!(position, 0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn repair_flag() {
        let s = parse_conll_with("x I-PER\n", ConllOptions { repair: true }).unwrap();
        assert_eq!(s[0].tags.tags()[0].to_string(), "B-PER");
    }

    #[test]
    fn four_columns_and_docstart() {
        let text = "-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n";
        let s = parse_conll(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].token_strs(), vec!["EU", "rejects"]);
    }

    #[test]
    fn column_errors_carry_line() {
        match parse_conll("a O\nb\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        match parse_conll("a O\nb x O\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let s = parse_conll("EU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n").unwrap();
        assert_eq!(parse_conll(&to_conll_string(&s)).unwrap(), s);
    }
}
