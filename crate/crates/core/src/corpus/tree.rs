use std::fs;
use std::path::Path;

use super::TaggedSentence;
use crate::error::{Error, Result};

/// Constituency tree over half-open token spans. Leaves are preterminals
/// (or bare words) and always cover exactly one token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub children: Vec<ParseTree>,
}

impl ParseTree {
    pub fn leaf(label: impl Into<String>, index: usize) -> Self {
        ParseTree { label: label.into(), start: index, end: index + 1, children: Vec::new() }
    }

    /// Builds an internal node whose span is taken from its children.
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        let start = children.first().map_or(0, |c| c.start);
        let end = children.last().map_or(0, |c| c.end);
        ParseTree { label: label.into(), start, end, children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(ParseTree::leaf_count).sum()
        }
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ParseTree, usize)) {
        fn go<'a>(t: &'a ParseTree, depth: usize, f: &mut impl FnMut(&'a ParseTree, usize)) {
            f(t, depth);
            for c in &t.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }

    /// Renders as a single-line bracketed tree. Leaves are written as
    /// `(LABEL word)`.
    pub fn to_bracketed(&self, words: &[&str]) -> String {
        let mut out = String::new();
        self.render(words, &mut out);
        out
    }

    fn render(&self, words: &[&str], out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        if self.is_leaf() {
            out.push(' ');
            out.push_str(words[self.start]);
        } else {
            for c in &self.children {
                out.push(' ');
                c.render(words, out);
            }
        }
        out.push(')');
    }

    /// Checks that children partition the parent span contiguously.
    pub fn is_well_formed(&self) -> bool {
        if self.is_leaf() {
            return self.end == self.start + 1;
        }
        let mut cursor = self.start;
        for c in &self.children {
            if c.start != cursor || !c.is_well_formed() {
                return false;
            }
            cursor = c.end;
        }
        cursor == self.end
    }
}

#[derive(Debug, PartialEq)]
enum Lex<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(line: &str) -> Vec<Lex<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        let delim = ch == '(' || ch == ')' || ch.is_whitespace();
        if delim {
            if let Some(s) = start.take() {
                out.push(Lex::Atom(&line[s..i]));
            }
            match ch {
                '(' => out.push(Lex::Open),
                ')' => out.push(Lex::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lex::Atom(&line[s..]));
    }
    out
}

struct TreeParser<'a> {
    toks: Vec<Lex<'a>>,
    pos: usize,
    words: Vec<&'a str>,
}

impl<'a> TreeParser<'a> {
    // At an Open token.
    fn node(&mut self) -> Result<ParseTree> {
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some(Lex::Atom(a)) => {
                self.pos += 1;
                a.to_string()
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        let mut word: Option<&'a str> = None;
        loop {
            match self.toks.get(self.pos) {
                None => return Err(Error::Tree("unbalanced brackets: missing ')'".into())),
                Some(Lex::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Lex::Open) => children.push(self.node()?),
                Some(Lex::Atom(a)) => {
                    let a = *a;
                    self.pos += 1;
                    if children.is_empty() && word.is_none() && matches!(self.toks.get(self.pos), Some(Lex::Close)) {
                        word = Some(a);
                    } else {
                        // bare word mixed with phrases
                        children.push(ParseTree::leaf(a, self.words.len()));
                        self.words.push(a);
                    }
                }
            }
        }
        if let Some(w) = word {
            let idx = self.words.len();
            self.words.push(w);
            return Ok(ParseTree::leaf(label, idx));
        }
        if children.is_empty() {
            return Err(Error::Tree(format!("empty constituent ({label})")));
        }
        Ok(ParseTree::node(label, children))
    }
}

/// Parses a single-line bracketed tree and aligns its leaves with the
/// sentence tokens.
pub fn parse_bracketed_tree(line: &str, sentence: &TaggedSentence) -> Result<ParseTree> {
    let toks = lex(line.trim());
    let depth_ok = toks.iter().try_fold(0i64, |d, t| {
        let d = match t {
            Lex::Open => d + 1,
            Lex::Close => d - 1,
            Lex::Atom(_) => d,
        };
        (d >= 0).then_some(d)
    });
    match depth_ok {
        None => return Err(Error::Tree("unbalanced brackets: unexpected ')'".into())),
        Some(d) if d != 0 => return Err(Error::Tree("unbalanced brackets: missing ')'".into())),
        _ => {}
    }
    if toks.first() != Some(&Lex::Open) {
        return Err(Error::Tree("tree must start with '('".into()));
    }
    let mut p = TreeParser { toks, pos: 0, words: Vec::new() };
    let mut tree = p.node()?;
    if p.pos != p.toks.len() {
        return Err(Error::Tree("trailing content after the root constituent".into()));
    }
    // PTB files often wrap the root in an unlabeled bracket.
    while tree.label.is_empty() && tree.children.len() == 1 && !tree.children[0].is_leaf() {
        tree = tree.children.pop().unwrap();
    }

    let tokens = sentence.token_strs();
    for (i, (w, t)) in p.words.iter().zip(&tokens).enumerate() {
        if w != t {
            return Err(Error::Alignment { index: i, msg: format!("leaf {w:?} vs token {t:?}") });
        }
    }
    if p.words.len() != tokens.len() {
        return Err(Error::Alignment {
            index: p.words.len().min(tokens.len()),
            msg: format!("tree has {} leaves, sentence has {} tokens", p.words.len(), tokens.len()),
        });
    }
    Ok(tree)
}

/// One tree per non-empty line, aligned with `sentences` in order.
pub fn read_tree_file(path: &Path, sentences: &[TaggedSentence]) -> Result<Vec<ParseTree>> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != sentences.len() {
        return Err(Error::Input(format!(
            "{}: {} trees for {} sentences",
            path.display(),
            lines.len(),
            sentences.len()
        )));
    }
    lines
        .iter()
        .zip(sentences)
        .map(|(l, s)| parse_bracketed_tree(l, s).map_err(|e| Error::Input(format!("tree for sentence {}: {e}", s.id))))
        .collect()
}
