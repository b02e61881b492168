//! Human relevance judgments over auto-extracted triggers: an append-only
//! judgment log, paged views of the candidates, progress counts and the
//! export of a refined trigger-labeled dataset.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, Trigger, TriggerLabeledExample, TriggerSource};
use crate::error::{Error, Result};
use crate::extract::{select_top_k, CandidateSource, PhraseCandidate, ScoreRecord, ScoredCandidate};

pub const DEFAULT_K_SHOWN: usize = 5;
pub const DEFAULT_PAGE_LIMIT: usize = 20;
pub const MAX_PAGE_LIMIT: usize = 500;

/// Body of a judgment submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentInput {
    pub sentence_id: String,
    pub entity_index: usize,
    pub trigger_rank: usize,
    pub relevant: bool,
    pub annotator: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub sentence_id: String,
    pub entity_index: usize,
    pub trigger_rank: usize,
    pub relevant: bool,
    pub annotator: String,
    /// UTC seconds.
    pub timestamp: u64,
}

impl Judgment {
    pub fn from_input(input: JudgmentInput, timestamp: u64) -> Self {
        Judgment {
            sentence_id: input.sentence_id,
            entity_index: input.entity_index,
            trigger_rank: input.trigger_rank,
            relevant: input.relevant,
            annotator: input.annotator,
            timestamp,
        }
    }

    fn key(&self) -> (String, usize, usize, String) {
        (self.sentence_id.clone(), self.entity_index, self.trigger_rank, self.annotator.clone())
    }
}

pub fn now_utc_seconds() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Reads a judgment log. A final line without a trailing newline that does
/// not parse is a torn write and is skipped; any other bad line is an error.
pub fn read_log(path: &Path) -> Result<Vec<Judgment>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Judgment>(line) {
            Ok(j) => out.push(j),
            Err(_) if n + 1 == lines.len() && !complete => break,
            Err(e) => return Err(Error::Schema { record: n + 1, field: String::new(), msg: e.to_string() }),
        }
    }
    Ok(out)
}

/// Append-only JSONL writer. Every append reaches the disk before it
/// returns.
pub struct JudgmentLog {
    path: PathBuf,
    file: File,
}

impl JudgmentLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JudgmentLog { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, j: &Judgment) -> Result<()> {
        let mut line = serde_json::to_string(j)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Last-write-wins view of a log: one judgment per
/// (sentence, entity, rank, annotator), in first-seen key order.
pub fn compact(log: &[Judgment]) -> Vec<Judgment> {
    let mut index: HashMap<(String, usize, usize, String), usize> = HashMap::new();
    let mut out: Vec<Judgment> = Vec::new();
    for j in log {
        match index.get(&j.key()) {
            Some(&i) => out[i] = j.clone(),
            None => {
                index.insert(j.key(), out.len());
                out.push(j.clone());
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rank: usize,
    pub start: usize,
    pub end: usize,
    pub indices: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub entity_index: usize,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: String,
    pub candidates: Vec<CandidateView>,
    pub judgments: Vec<Judgment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleView {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntityView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<ExampleView>,
    pub next_cursor: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Entities whose every shown candidate has a judgment.
    pub judged_entities: usize,
    pub total_entities: usize,
    /// Distinct judgment keys per annotator.
    pub per_annotator: BTreeMap<String, usize>,
}

/// Why a judgment was refused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    UnknownSentence(String),
    UnknownEntity(String, usize),
    UnknownRank(String, usize, usize),
    BadAnnotator,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::UnknownSentence(s) => write!(f, "unknown sentence {s}"),
            Rejection::UnknownEntity(s, e) => write!(f, "sentence {s} has no entity {e}"),
            Rejection::UnknownRank(s, e, r) => write!(f, "entity {e} of sentence {s} has no candidate at rank {r}"),
            Rejection::BadAnnotator => write!(f, "annotator must be a non-empty string"),
        }
    }
}

struct Entry {
    example: TriggerLabeledExample,
    entities: Vec<EntitySpan>,
    /// Shown candidates per entity, in rank order.
    shown: Vec<Vec<CandidateView>>,
}

/// In-memory state of a refinement session: the auto dataset, the shown
/// candidates and the compacted judgments.
pub struct RefineSession {
    entries: Vec<Entry>,
    by_id: HashMap<String, usize>,
    k_shown: usize,
    k_export: usize,
    log: Vec<Judgment>,
}

fn id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

impl RefineSession {
    /// Shown candidates come from the score records when given (the
    /// `k_shown` best non-overlapping candidates), otherwise from the
    /// triggers already in the dataset.
    pub fn new(
        data: Vec<TriggerLabeledExample>,
        scores: Option<&[ScoreRecord]>,
        k_shown: usize,
        k_export: usize,
        log: Vec<Judgment>,
    ) -> Result<Self> {
        if k_shown == 0 {
            return Err(Error::Config("k_shown must be at least 1".into()));
        }
        let records: HashMap<(&str, usize), &ScoreRecord> =
            scores.unwrap_or(&[]).iter().map(|r| ((r.id.as_str(), r.entity_index), r)).collect();
        let mut entries = Vec::with_capacity(data.len());
        for example in data {
            let entities = example.sentence.spans();
            let mut shown = Vec::with_capacity(entities.len());
            for (j, e) in entities.iter().enumerate() {
                let triggers: Vec<Trigger> = if scores.is_some() {
                    match records.get(&(example.sentence.id.as_str(), j)) {
                        Some(r) => {
                            let scored: Vec<ScoredCandidate> = r
                                .candidates
                                .iter()
                                .map(|c| ScoredCandidate {
                                    candidate: PhraseCandidate {
                                        start: c.start,
                                        end: c.end,
                                        origin: CandidateSource::Cp,
                                    },
                                    phi: c.phi,
                                })
                                .collect();
                            select_top_k(&scored, e, k_shown)?
                        }
                        None => Vec::new(),
                    }
                } else {
                    example.triggers.iter().filter(|t| &t.entity == e).take(k_shown).cloned().collect()
                };
                shown.push(
                    triggers
                        .into_iter()
                        .enumerate()
                        .map(|(rank, t)| CandidateView {
                            rank,
                            start: t.indices[0],
                            end: t.indices[t.indices.len() - 1] + 1,
                            indices: t.indices,
                            score: t.score.unwrap_or(0.0),
                        })
                        .collect(),
                );
            }
            entries.push(Entry { example, entities, shown });
        }
        entries.sort_by(|a, b| id_order(&a.example.sentence.id, &b.example.sentence.id));
        let mut by_id = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.example.sentence.id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate sentence id {}", e.example.sentence.id)));
            }
        }
        let mut s = RefineSession { entries, by_id, k_shown, k_export, log: Vec::new() };
        for j in log {
            if let Err(r) = s.check(&j) {
                return Err(Error::Input(format!("judgment log does not match the dataset: {r}")));
            }
            s.log.push(j);
        }
        Ok(s)
    }

    pub fn k_shown(&self) -> usize {
        self.k_shown
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn log(&self) -> &[Judgment] {
        &self.log
    }

    pub fn check(&self, j: &Judgment) -> std::result::Result<(), Rejection> {
        if j.annotator.trim().is_empty() {
            return Err(Rejection::BadAnnotator);
        }
        let &i = self.by_id.get(&j.sentence_id).ok_or_else(|| Rejection::UnknownSentence(j.sentence_id.clone()))?;
        let shown = self.entries[i]
            .shown
            .get(j.entity_index)
            .ok_or_else(|| Rejection::UnknownEntity(j.sentence_id.clone(), j.entity_index))?;
        if j.trigger_rank >= shown.len() {
            return Err(Rejection::UnknownRank(j.sentence_id.clone(), j.entity_index, j.trigger_rank));
        }
        Ok(())
    }

    /// Validates and records a judgment already made durable by the caller.
    pub fn record(&mut self, j: Judgment) -> std::result::Result<(), Rejection> {
        self.check(&j)?;
        self.log.push(j);
        Ok(())
    }

    /// `cursor` is the offset into the id-ordered sentences.
    pub fn page(&self, cursor: Option<&str>, limit: usize) -> Result<Page> {
        if limit == 0 || limit > MAX_PAGE_LIMIT {
            return Err(Error::Input(format!("limit must lie in 1..={MAX_PAGE_LIMIT}")));
        }
        let start = match cursor {
            None => 0,
            Some(c) => c
                .parse::<usize>()
                .ok()
                .filter(|&o| o <= self.entries.len())
                .ok_or_else(|| Error::Input(format!("bad cursor {c:?}")))?,
        };
        let end = (start + limit).min(self.entries.len());
        let judged = compact(&self.log);
        let items = self.entries[start..end]
            .iter()
            .map(|e| {
                let id = &e.example.sentence.id;
                ExampleView {
                    sentence_id: id.clone(),
                    tokens: e.example.sentence.token_strs().into_iter().map(String::from).collect(),
                    entities: e
                        .entities
                        .iter()
                        .enumerate()
                        .map(|(j, span)| EntityView {
                            entity_index: j,
                            start: span.start,
                            end: span.end,
                            etype: span.etype.clone(),
                            candidates: e.shown[j].clone(),
                            judgments: judged
                                .iter()
                                .filter(|x| &x.sentence_id == id && x.entity_index == j)
                                .cloned()
                                .collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        let next_cursor = (end < self.entries.len()).then(|| end.to_string());
        Ok(Page { items, next_cursor })
    }

    pub fn progress(&self) -> Progress {
        let judged = compact(&self.log);
        let mut ranks: HashMap<(&str, usize), Vec<bool>> = HashMap::new();
        let mut per_annotator: BTreeMap<String, usize> = BTreeMap::new();
        for j in &judged {
            *per_annotator.entry(j.annotator.clone()).or_default() += 1;
            let i = self.by_id[&j.sentence_id];
            let seen = ranks
                .entry((j.sentence_id.as_str(), j.entity_index))
                .or_insert_with(|| vec![false; self.entries[i].shown[j.entity_index].len()]);
            seen[j.trigger_rank] = true;
        }
        Progress {
            judged_entities: ranks.values().filter(|v| v.iter().all(|&b| b)).count(),
            total_entities: self.entries.iter().map(|e| e.entities.len()).sum(),
            per_annotator,
        }
    }

    /// Refined dataset, in id order. For an entity with judgments the
    /// relevant candidates are kept, best `k_export` by rank; each rank's
    /// relevance is the latest judgment for it from any annotator. Entities
    /// without judgments keep their auto triggers.
    pub fn export_refined(&self) -> Result<Vec<TriggerLabeledExample>> {
        let mut latest: HashMap<(&str, usize, usize), bool> = HashMap::new();
        for j in &self.log {
            latest.insert((j.sentence_id.as_str(), j.entity_index, j.trigger_rank), j.relevant);
        }
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let id = e.example.sentence.id.as_str();
            let mut triggers = Vec::new();
            for (j, span) in e.entities.iter().enumerate() {
                let verdicts: Vec<(usize, bool)> =
                    (0..e.shown[j].len()).filter_map(|r| latest.get(&(id, j, r)).map(|&v| (r, v))).collect();
                if verdicts.is_empty() {
                    triggers.extend(e.example.triggers.iter().filter(|t| &t.entity == span).cloned());
                    continue;
                }
                for (r, _) in verdicts.into_iter().filter(|&(_, v)| v).take(self.k_export) {
                    let c = &e.shown[j][r];
                    triggers.push(Trigger::new(
                        span.clone(),
                        c.indices.clone(),
                        Some(c.score),
                        TriggerSource::Refined,
                    )?);
                }
            }
            out.push(TriggerLabeledExample::new(e.example.sentence.clone(), triggers)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaggedSentence;
    use crate::extract::CandidateScore;

    fn data() -> (Vec<TriggerLabeledExample>, Vec<ScoreRecord>) {
        let mut ex = Vec::new();
        let mut sc = Vec::new();
        for id in ["10", "2", "a"] {
            let s = TaggedSentence::from_strs(id, "x y z w v B", "O O O O O B-PER").unwrap();
            let e = EntitySpan::new(5, 6, "PER");
            let cands = vec![
                CandidateScore { start: 0, end: 1, phi: 0.9 },
                CandidateScore { start: 1, end: 2, phi: 0.8 },
                CandidateScore { start: 2, end: 4, phi: 0.7 },
                CandidateScore { start: 4, end: 5, phi: 0.1 },
            ];
            let auto =
                vec![Trigger::contiguous(e.clone(), 0, 1, 0.9).unwrap(), Trigger::contiguous(e, 1, 2, 0.8).unwrap()];
            ex.push(TriggerLabeledExample::new(s, auto).unwrap());
            sc.push(ScoreRecord { id: id.into(), entity_index: 0, candidates: cands });
        }
        (ex, sc)
    }

    fn session(k_shown: usize) -> RefineSession {
        let (ex, sc) = data();
        RefineSession::new(ex, Some(&sc), k_shown, 2, Vec::new()).unwrap()
    }

    fn judge(id: &str, rank: usize, relevant: bool, who: &str) -> Judgment {
        Judgment {
            sentence_id: id.into(),
            entity_index: 0,
            trigger_rank: rank,
            relevant,
            annotator: who.into(),
            timestamp: 0,
        }
    }

    #[test]
    fn pages_in_id_order() {
        let s = session(5);
        let p = s.page(None, 1).unwrap();
        assert_eq!(p.items.len(), 1);
        assert_eq!(p.items[0].sentence_id, "2");
        assert_eq!(p.next_cursor.as_deref(), Some("1"));
        let p = s.page(Some("1"), 5).unwrap();
        let ids: Vec<_> = p.items.iter().map(|i| i.sentence_id.as_str()).collect();
        assert_eq!(ids, ["10", "a"]);
        assert_eq!(p.next_cursor, None);
        let p = s.page(Some("3"), 5).unwrap();
        assert!(p.items.is_empty() && p.next_cursor.is_none());
        assert!(s.page(Some("4"), 1).is_err());
        assert!(s.page(Some("x"), 1).is_err());
        assert!(s.page(None, 0).is_err());
    }

    #[test]
    fn shown_candidates_capped() {
        let s = session(3);
        let p = s.page(None, 3).unwrap();
        let c = &p.items[0].entities[0].candidates;
        assert_eq!(c.len(), 3);
        assert_eq!(c[2].indices, vec![2, 3]);
        assert_eq!((c[2].start, c[2].end), (2, 4));
        assert!(RefineSession::new(data().0, None, 0, 2, Vec::new()).is_err());
    }

    #[test]
    fn rejections() {
        let mut s = session(3);
        assert_eq!(s.record(judge("zz", 0, true, "a")), Err(Rejection::UnknownSentence("zz".into())));
        assert!(matches!(s.record(judge("2", 3, true, "a")), Err(Rejection::UnknownRank(..))));
        let mut j = judge("2", 0, true, "a");
        j.entity_index = 1;
        assert!(matches!(s.record(j), Err(Rejection::UnknownEntity(..))));
        assert_eq!(s.record(judge("2", 0, true, " ")), Err(Rejection::BadAnnotator));
        assert!(s.log().is_empty());
    }

    #[test]
    fn last_write_wins_and_progress() {
        let mut s = session(3);
        assert_eq!(s.progress().judged_entities, 0);
        assert_eq!(s.progress().total_entities, 3);
        s.record(judge("2", 0, true, "a")).unwrap();
        s.record(judge("2", 0, false, "a")).unwrap();
        let p = s.page(None, 1).unwrap();
        assert_eq!(p.items[0].entities[0].judgments.len(), 1);
        assert!(!p.items[0].entities[0].judgments[0].relevant);
        assert_eq!(s.progress().judged_entities, 0);
        s.record(judge("2", 1, true, "a")).unwrap();
        s.record(judge("2", 2, true, "b")).unwrap();
        let pr = s.progress();
        assert_eq!(pr.judged_entities, 1);
        assert_eq!(pr.per_annotator, BTreeMap::from([("a".into(), 2), ("b".into(), 1)]));
    }

    fn triggers_of(out: &[TriggerLabeledExample], id: &str) -> Vec<Vec<usize>> {
        let ex = out.iter().find(|e| e.sentence.id == id).unwrap();
        ex.triggers.iter().map(|t| t.indices.clone()).collect()
    }

    #[test]
    fn export_filter_then_cap() {
        let mut s = session(5);
        s.record(judge("2", 0, true, "a")).unwrap();
        s.record(judge("2", 1, false, "a")).unwrap();
        s.record(judge("2", 2, true, "a")).unwrap();
        s.record(judge("2", 3, true, "a")).unwrap();
        let out = s.export_refined().unwrap();
        assert_eq!(triggers_of(&out, "2"), vec![vec![0], vec![2, 3]]);
        assert!(out[0].triggers.iter().all(|t| t.source == TriggerSource::Refined));
        // Unjudged entities keep the auto top-k.
        assert_eq!(triggers_of(&out, "10"), vec![vec![0], vec![1]]);
    }

    #[test]
    fn export_reject_all_and_no_judgments() {
        let (ex, _) = data();
        let s = session(5);
        let mut sorted = ex.clone();
        sorted.sort_by(|a, b| id_order(&a.sentence.id, &b.sentence.id));
        assert_eq!(s.export_refined().unwrap(), sorted);
        let mut s = session(2);
        s.record(judge("a", 0, false, "a")).unwrap();
        s.record(judge("a", 1, false, "a")).unwrap();
        assert!(triggers_of(&s.export_refined().unwrap(), "a").is_empty());
    }

    #[test]
    fn reject_first_accept_second() {
        let mut s = session(5);
        s.record(judge("10", 0, false, "a")).unwrap();
        s.record(judge("10", 1, true, "a")).unwrap();
        assert_eq!(triggers_of(&s.export_refined().unwrap(), "10"), vec![vec![1]]);
    }

    #[test]
    fn log_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        assert!(read_log(&path).unwrap().is_empty());
        let mut log = JudgmentLog::open(&path).unwrap();
        let a = judge("2", 0, true, "a");
        let b = judge("2", 0, false, "a");
        log.append(&a).unwrap();
        log.append(&b).unwrap();
        drop(log);
        assert_eq!(read_log(&path).unwrap(), vec![a.clone(), b.clone()]);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"sentence_id\":\"2\",\"ent").unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 2);
        std::fs::write(&path, "garbage\n").unwrap();
        assert!(read_log(&path).is_err());
        assert_eq!(compact(&[a.clone(), b.clone()]), vec![b]);
    }

    #[test]
    fn export_replays_from_log() {
        let (ex, sc) = data();
        let log = vec![judge("2", 0, false, "a"), judge("2", 1, true, "a"), judge("2", 0, true, "b")];
        let mut live = RefineSession::new(ex.clone(), Some(&sc), 5, 2, Vec::new()).unwrap();
        for j in &log {
            live.record(j.clone()).unwrap();
        }
        let replay = RefineSession::new(ex.clone(), Some(&sc), 5, 2, log.clone()).unwrap();
        assert_eq!(live.export_refined().unwrap(), replay.export_refined().unwrap());
        // Rank 0: the later judgment from b wins.
        assert_eq!(triggers_of(&replay.export_refined().unwrap(), "2"), vec![vec![0], vec![1]]);
        let bad = vec![judge("nope", 0, true, "a")];
        assert!(RefineSession::new(ex, Some(&sc), 5, 2, bad).is_err());
    }
}
