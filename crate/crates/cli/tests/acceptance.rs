//! Acceptance suite. One PASS/FAIL line per criterion; exits 1 if any fails.
//!
//! `ACCEPT_ONLY=1,3,8` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use autotrig::classifier::TokenClassifier;
use autotrig::config::RunConfig;
use autotrig::corpus::{
    bio_from_spans, entity_f1, read_triggers, spans_from_bio, EntitySpan, Tag, TagSeq, TaggedSentence,
    TriggerLabeledExample, TriggerSource,
};
use autotrig::crf::Crf;
use autotrig::extract::{mean, occlusion_phi, soc_differences, soc_phi, ContextSampler, EntityScorer};
use autotrig::extract::{CandidateSource, PhraseCandidate, SocConfig};
use autotrig::lm::LangModel;
use autotrig::neural::{grad_check, GradCheckOptions, HiddenSeq, ParamStore, Tensor};
use autotrig::pipeline::{f1_cell, recovery_cell, sweep, Arm, ExperimentConfig, RecoveryResult, SweepAxis};
use autotrig::rng::rng;
use autotrig::tin::{build_masked_pair, interpolate, TaggerKind, TinModel};
use autotrig::vocab::{TagSet, Vocab, PAD};
use rand::Rng;
use serde_json::{json, Value};

const LOGZ_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-3;
const CLF_TRAIN_ACC: f64 = 0.99;
const RECOVERY_MIN: f64 = 0.9;
const TIN_GAP_AT_50: f64 = 0.05;
const CP_OVER_RS: f64 = 0.10;

const CRF_BUDGET: Duration = Duration::from_secs(10);
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const RECOVERY_BUDGET: Duration = Duration::from_secs(600);
const LOW_RESOURCE_BUDGET: Duration = Duration::from_secs(1800);

/// Training regime for the experiment criteria. TIN and the baseline share it.
const REGIME: &str = r#"{
    "clf.epochs": 10, "clf.batch_size": 1, "clf.lr": 0.1, "clf.embed_dim": 32, "clf.hidden_dim": 32,
    "lm.epochs": 5, "lm.batch_size": 1, "lm.lr": 0.1, "lm.embed_dim": 32, "lm.hidden_dim": 32,
    "tin.epochs": 30, "tin.batch_size": 1, "tin.lr": 0.1, "tin.embed_dim": 32, "tin.hidden_dim": 32,
    "baseline.epochs": 30, "baseline.batch_size": 1, "baseline.lr": 0.1,
    "baseline.embed_dim": 32, "baseline.hidden_dim": 32
}"#;

const SIZES: [usize; 4] = [50, 100, 150, 200];
const LAMBDAS: [&str; 5] = ["0", "0.25", "0.5", "0.75", "1"];

type Outcome = Result<String, String>;

fn regime() -> ExperimentConfig {
    RunConfig::from_json_str(REGIME).expect("regime config").experiment()
}

fn avg(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn timed(budget: Duration, start: Instant, detail: String, ok: bool) -> Outcome {
    let t = start.elapsed();
    let detail = format!("{detail}; {:.1}s (limit {}s)", t.as_secs_f64(), budget.as_secs());
    if ok && t <= budget {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1. CRF

/// Path score computed from scratch; `None` for a path the CRF forbids.
fn brute_score(k: usize, trans: &Tensor, em: &[Vec<f64>], path: &[usize], tags: Option<&[Tag]>) -> Option<f64> {
    if let Some(tags) = tags {
        TagSeq::new(path.iter().map(|&y| tags[y].clone()).collect()).ok()?;
    }
    let (start, stop) = (k, k + 1);
    let t = |a: usize, b: usize| trans.row(a)[b];
    let mut s = t(start, path[0]);
    for (i, &y) in path.iter().enumerate() {
        s += em[i][y];
        if i > 0 {
            s += t(path[i - 1], y);
        }
    }
    Some(s + t(*path.last().unwrap(), stop))
}

fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|p| (0..k).map(move |y| [p.clone(), vec![y]].concat())).collect();
    }
    out
}

fn criterion_crf() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst, mut ties, mut bad) = (0.0f64, 0usize, Vec::new());
    for case in 0..500 {
        let bio = case % 3 == 0;
        let tagset = TagSet::from_types(["X"]);
        let (crf, k) = if bio {
            (Crf::bio(&tagset), 3)
        } else {
            let k = r.gen_range(1..=4);
            (Crf::unmasked(k), k)
        };
        let n = r.gen_range(1..=6);
        let integer = case % 2 == 1;
        let draw =
            |r: &mut autotrig::rng::Rng| if integer { r.gen_range(-2i32..=2) as f64 } else { r.gen_range(-3.0..3.0) };
        let data = (0..(k + 2) * (k + 2)).map(|_| draw(&mut r)).collect();
        let trans = Tensor::from_vec(&[k + 2, k + 2], data).unwrap();
        let em: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| draw(&mut r)).collect()).collect();

        let tags = bio.then(|| tagset.tags().to_vec());
        let scored: Vec<(Vec<usize>, f64)> = all_paths(n, k)
            .into_iter()
            .filter_map(|p| brute_score(k, &trans, &em, &p, tags.as_deref()).map(|s| (p, s)))
            .collect();
        let m = scored.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + scored.iter().map(|x| (x.1 - m).exp()).sum::<f64>().ln();
        // Among maximal paths, the one smallest when compared from the last position backwards.
        let best: Vec<&Vec<usize>> = scored.iter().filter(|x| x.1 == m).map(|x| &x.0).collect();
        ties += usize::from(best.len() > 1);
        let want = best.iter().min_by(|a, b| a.iter().rev().cmp(b.iter().rev())).unwrap();

        let got_z = crf.log_partition(&trans, &em).unwrap();
        let (got_path, got_score) = crf.viterbi(&trans, &em).unwrap();
        worst = worst.max((got_z - log_z).abs());
        if (got_z - log_z).abs() > LOGZ_TOL || &got_path != *want || (got_score - m).abs() > LOGZ_TOL {
            bad.push(case);
        }
    }
    timed(
        CRF_BUDGET,
        start,
        format!("500 instances ({ties} with tied maxima), max |dlogZ| {worst:.2e}, mismatches {bad:?}"),
        bad.is_empty(),
    )
}

// ----------------------------------------------------------- 2. gradients

fn cary() -> TaggedSentence {
    TaggedSentence::from_strs(
        "cary",
        "Cary Moon wo n't be the next mayor of Seattle",
        "B-PER I-PER O O O O O O O B-LOC",
    )
    .unwrap()
}

fn row_ranges(name: &str, rows: &[usize], width: usize) -> Vec<(String, std::ops::Range<usize>)> {
    rows.iter().map(|&r| (name.to_string(), r * width..(r + 1) * width)).collect()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let s = cary();
    let vocab = Vocab::build([&s]);
    let tagset = TagSet::from_data([&s]);
    let ids = vocab.encode(&s);
    let gold = tagset.encode(&s.tags).unwrap();
    let mut results: Vec<(&str, f64)> = Vec::new();

    let clf = TokenClassifier::init(vocab.clone(), tagset.clone(), 4, 3, 7).unwrap();
    let f = |p: &ParamStore| {
        let mut g = p.zeros_like();
        Ok((clf.sentence_loss(p, &ids, &gold, &mut g)?, g))
    };
    let opts = GradCheckOptions { frozen: row_ranges("enc.embed", clf.config.frozen_rows(), 4), ..Default::default() };
    results.push(("classifier", grad_check(f, &clf.params, &opts).unwrap().max_relative_error));

    // CRF nll with transitions and emissions both treated as parameters.
    for (name, crf) in [("crf-unmasked", Crf::unmasked(3)), ("crf-bio", Crf::bio(&TagSet::from_types(["A", "B"])))] {
        let k = crf.n_tags();
        let mut r = rng(11);
        let mut p = ParamStore::new(0);
        p.insert(
            "trans",
            Tensor::from_vec(&[k + 2, k + 2], (0..(k + 2) * (k + 2)).map(|_| r.gen_range(-1.0..1.0)).collect())
                .unwrap(),
        );
        p.insert("em", Tensor::from_vec(&[5, k], (0..5 * k).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap());
        let path = if k == 3 { vec![0, 2, 1, 1, 0] } else { vec![1, 2, 0, 3, 4] };
        let f = |p: &ParamStore| {
            let em: Vec<Vec<f64>> = (0..5).map(|i| p.get("em").row(i).to_vec()).collect();
            let mut g = p.zeros_like();
            let (nll, d_em) = crf.nll_backward(p.get("trans"), &em, &path, g.get_mut("trans"))?;
            for (i, d) in d_em.iter().enumerate() {
                g.get_mut("em").row_mut(i).copy_from_slice(d);
            }
            Ok((nll, g))
        };
        results.push((name, grad_check(f, &p, &GradCheckOptions::default()).unwrap().max_relative_error));
    }

    let lm = LangModel::init(vocab.clone(), 4, 3, 5).unwrap();
    let f = |p: &ParamStore| {
        let mut g = p.zeros_like();
        Ok((lm.sentence_loss(p, &ids, &mut g)?, g))
    };
    let opts = GradCheckOptions { frozen: row_ranges("lm.embed", &[PAD], 4), ..Default::default() };
    results.push(("lm", grad_check(f, &lm.params, &opts).unwrap().max_relative_error));

    let ex = TriggerLabeledExample::new(
        s.clone(),
        vec![autotrig::corpus::Trigger::contiguous(EntitySpan::new(0, 2, "PER"), 5, 8, 0.0).unwrap()],
    )
    .unwrap();
    for zero_masks in [true, false] {
        let tin =
            TinModel::init(TaggerKind::Tin, Some(0.5), vocab.clone(), tagset.clone(), 4, 3, zero_masks, 9).unwrap();
        let pair = build_masked_pair(&ex, &tin.vocab);
        let f = |p: &ParamStore| {
            let mut g = p.zeros_like();
            Ok((tin.tin_loss(p, &pair, &gold, 0.5, &mut g)?, g))
        };
        let opts =
            GradCheckOptions { frozen: row_ranges("enc.embed", tin.config.frozen_rows(), 4), ..Default::default() };
        let name = if zero_masks { "tin" } else { "tin-learned-masks" };
        results.push((name, grad_check(f, &tin.params, &opts).unwrap().max_relative_error));
    }

    let ok = results.iter().all(|r| r.1 < GRAD_TOL);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    timed(GRAD_BUDGET, start, format!("max rel err: {detail}"), ok)
}

// ------------------------------------------------------------------ 3. SOC

struct Lookup;
impl EntityScorer for Lookup {
    fn score(&self, ids: &[usize], _: &EntitySpan) -> autotrig::Result<f64> {
        Ok(if ids[1] == PAD { 0.0 } else { ids[0] as f64 / 100.0 })
    }
}

struct Fixed;
impl ContextSampler for Fixed {
    fn sample(&self, _: &[usize], delta: &[usize], n: usize, _: u64) -> autotrig::Result<Vec<BTreeMap<usize, usize>>> {
        Ok((0..n).map(|i| delta.iter().map(|&p| (p, 40 + 10 * i)).collect()).collect())
    }
}

fn criterion_soc() -> Outcome {
    let s = cary();
    let vocab = Vocab::build([&s]);
    let ids = vocab.encode(&s);
    let clf = TokenClassifier::init(vocab.clone(), TagSet::from_data([&s]), 8, 8, 3).unwrap();
    let lm = LangModel::init(vocab, 8, 8, 4).unwrap();
    let entity = EntitySpan::new(0, 2, "PER");
    let cand = |a, b| PhraseCandidate { start: a, end: b, origin: CandidateSource::Cp };
    let mut fails = Vec::new();

    let r0 = SocConfig { context_radius: 0, n_samples: 20, ..Default::default() };
    for c in [cand(2, 10), cand(5, 8), cand(8, 10), cand(2, 3)] {
        if soc_phi(&clf, &lm, &ids, &entity, &c, &r0).unwrap() != occlusion_phi(&clf, &ids, &entity, &c).unwrap() {
            fails.push(format!("R=0 mismatch at {}..{}", c.start, c.end));
        }
    }

    let mut padded = ids.clone();
    padded[5..8].iter_mut().for_each(|t| *t = PAD);
    let occ = occlusion_phi(&clf, &padded, &entity, &cand(5, 8)).unwrap();
    let sampled =
        soc_phi(&clf, &lm, &padded, &entity, &cand(5, 8), &SocConfig { context_radius: 2, ..Default::default() })
            .unwrap();
    if occ != 0.0 || sampled != 0.0 {
        fails.push(format!("all-PAD phrase phi {occ} / {sampled}"));
    }

    let cfg = SocConfig { n_samples: 3, context_radius: 1, ..Default::default() };
    let e = EntitySpan::new(2, 3, "X");
    let d = soc_differences(&Lookup, &Fixed, &[90, 7, 8], &e, &cand(1, 2), &cfg, 0).unwrap();
    let phi = soc_phi(&Lookup, &Fixed, &[90, 7, 8], &e, &cand(1, 2), &cfg).unwrap();
    if d != [0.4, 0.5, 0.6] || phi != 0.5 || mean(&[0.4, 0.5, 0.6]) != 0.5 {
        fails.push(format!("hand-set differences {d:?} -> {phi}"));
    }
    if fails.is_empty() {
        Ok("R=0 equals occlusion on 4 candidates; all-PAD phi = 0; mean{0.4,0.5,0.6} = 0.5".into())
    } else {
        Err(fails.join("; "))
    }
}

// ----------------------------------------------------- 4 and 7. recovery

fn recovery(source: CandidateSource) -> (Vec<RecoveryResult>, Duration) {
    let start = Instant::now();
    let cfg = regime();
    let rows = (0..3).map(|seed| recovery_cell(&cfg, source, seed).unwrap()).collect();
    (rows, start.elapsed())
}

fn criterion_recovery(cp: &[RecoveryResult], took: Duration) -> Outcome {
    let acc: Vec<f64> = cp.iter().map(|r| r.train_accuracy).collect();
    let rec: Vec<f64> = cp.iter().map(|r| r.recovery).collect();
    let ok = acc.iter().all(|&a| a >= CLF_TRAIN_ACC) && avg(&rec) >= RECOVERY_MIN;
    let detail = format!("train acc {acc:.3?}, recovery {rec:.3?} mean {:.3} (need {RECOVERY_MIN})", avg(&rec));
    timed(RECOVERY_BUDGET, Instant::now() - took, detail, ok)
}

fn criterion_variants(cp: &[RecoveryResult]) -> Outcome {
    let rs = recovery(CandidateSource::Rs).0;
    let dp = recovery(CandidateSource::Dp).0;
    let m = |v: &[RecoveryResult]| avg(&v.iter().map(|r| r.recovery).collect::<Vec<_>>());
    let (c, r, d) = (m(cp), m(&rs), m(&dp));
    let detail = format!("recovery CP {c:.3}, RS {r:.3}, DP {d:.3}; CP-RS {:.3} (need {CP_OVER_RS})", c - r);
    if c - r >= CP_OVER_RS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// --------------------------------------------------------- 5. low resource

fn criterion_low_resource() -> Outcome {
    let start = Instant::now();
    let cfg = regime();
    let mut ok = true;
    let mut parts = Vec::new();
    for size in SIZES {
        let f1 = |arm| avg(&(0..5).map(|seed| f1_cell(&cfg, arm, size, seed).unwrap()).collect::<Vec<_>>());
        let (tin, base) = (f1(Arm::Tin), f1(Arm::Baseline));
        let need = if size == 50 { base + TIN_GAP_AT_50 } else { base };
        ok &= tin >= need;
        parts.push(format!("{size}: tin {tin:.3} base {base:.3}"));
    }
    timed(LOW_RESOURCE_BUDGET, start, format!("{} (need tin >= base, +{TIN_GAP_AT_50} at 50)", parts.join(", ")), ok)
}

// ---------------------------------------------------------------- 6. lambda

fn criterion_lambda() -> Outcome {
    let h = HiddenSeq { dim: 2, rows: vec![vec![0.3, -1.7], vec![2.5, 1e-9]] };
    let hp = HiddenSeq { dim: 2, rows: vec![vec![-4.0, 0.1], vec![7.25, -3.0]] };
    let endpoints =
        interpolate(&h, &hp, 1.0).unwrap().rows == h.rows && interpolate(&h, &hp, 0.0).unwrap().rows == hp.rows;

    let mut cfg = regime();
    cfg.synth.n_sentences = 50;
    let values: Vec<String> = LAMBDAS.iter().map(|s| s.to_string()).collect();
    let rows = sweep(&cfg, SweepAxis::Lambda, &values, 5, 0).unwrap();
    let by: BTreeMap<&str, f64> = LAMBDAS
        .iter()
        .map(|l| {
            let v = format!("lambda={l}");
            (*l, avg(&rows.iter().filter(|r| r.variant == v).map(|r| r.f1).collect::<Vec<_>>()))
        })
        .collect();
    let complete = rows.len() == 25 && rows.iter().all(|r| r.f1.is_finite());
    let ok = endpoints && complete && by["0.5"] >= by["0"].max(by["1"]);
    let curve = LAMBDAS.iter().map(|l| format!("{l}:{:.3}", by[l])).collect::<Vec<_>>().join(" ");
    let detail = format!("endpoints exact {endpoints}; {} rows; mean F1 at 50 sentences {curve}", rows.len());
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// -------------------------------------------------------- 8. BIO and F1

fn random_spans(r: &mut autotrig::rng::Rng, n: usize) -> Vec<EntitySpan> {
    let types = ["PER", "ORG", "LOC", "MISC"];
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if r.gen_bool(0.35) {
            let len = r.gen_range(1..=3.min(n - i));
            spans.push(EntitySpan::new(i, i + len, types[r.gen_range(0..4)]));
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

fn fixture(gold: &[(&str, &str)], pred: &[&str]) -> (Vec<TaggedSentence>, Vec<TagSeq>) {
    let g =
        gold.iter().enumerate().map(|(i, (t, y))| TaggedSentence::from_strs(i.to_string(), t, y).unwrap()).collect();
    let p = pred.iter().map(|y| TagSeq::parse(&y.split_whitespace().collect::<Vec<_>>()).unwrap()).collect();
    (g, p)
}

/// (gold (tokens, tags) per sentence, predicted tags, precision, recall, f1)
type F1Case = (Vec<(&'static str, &'static str)>, Vec<&'static str>, f64, f64, f64);

fn criterion_bio_f1() -> Outcome {
    let mut r = rng(8);
    let mut bad = 0;
    for _ in 0..10_000 {
        let n = r.gen_range(1..=20);
        let spans = random_spans(&mut r, n);
        let tags = bio_from_spans(&spans, n).unwrap();
        if spans_from_bio(&tags) != spans || bio_from_spans(&spans_from_bio(&tags), n).unwrap() != tags {
            bad += 1;
        }
    }

    let third = 2.0 / 3.0;
    let cases: Vec<F1Case> = vec![
        (vec![("a b", "B-PER O")], vec!["B-PER O"], 1.0, 1.0, 1.0),
        (vec![("a b", "O O")], vec!["O O"], 0.0, 0.0, 0.0),
        (vec![("a b", "B-PER O")], vec!["O O"], 0.0, 0.0, 0.0),
        (vec![("a b c", "B-PER O O")], vec!["B-PER O B-LOC"], 0.5, 1.0, third),
        (vec![("a", "B-PER")], vec!["B-ORG"], 0.0, 0.0, 0.0),
        (vec![("a b", "B-PER O")], vec!["B-PER I-PER"], 0.0, 0.0, 0.0),
        (vec![("a b c", "B-PER I-PER I-PER")], vec!["B-PER I-PER O"], 0.0, 0.0, 0.0),
        (vec![("a b", "B-PER I-PER")], vec!["B-PER B-PER"], 0.0, 0.0, 0.0),
        (vec![("a b", "B-PER B-PER")], vec!["B-PER B-PER"], 1.0, 1.0, 1.0),
        (vec![("a b c", "B-PER O B-LOC"), ("d e", "O B-ORG")], vec!["B-PER O O", "O B-ORG"], 1.0, third, 0.8),
        (
            vec![("a b c d e f g", "B-PER O B-LOC O B-ORG O B-MISC")],
            vec!["B-PER O B-LOC O B-ORG O B-PER"],
            0.75,
            0.75,
            0.75,
        ),
        (vec![("a b c d e", "B-ORG I-ORG I-ORG O B-PER")], vec!["B-ORG I-ORG I-ORG O O"], 1.0, 0.5, third),
    ];
    let mut wrong = Vec::new();
    for (i, (g, p, pr, re, f1)) in cases.iter().enumerate() {
        let (gold, pred) = fixture(g, p);
        let rep = entity_f1(&gold, &pred).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        if !(close(rep.precision, *pr) && close(rep.recall, *re) && close(rep.f1, *f1)) {
            wrong.push(i);
        }
    }
    let detail = format!("10000 round-trips, {bad} failures; {} F1 fixtures, mismatched {wrong:?}", cases.len());
    if bad == 0 && wrong.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------- 9. determinism (CLI)

const SMALL: &str = r#"{
    "synth.n_sentences": 40, "test_sentences": 20, "synth.distractor_phrases": 2,
    "clf.epochs": 2, "clf.batch_size": 1, "clf.lr": 0.1, "clf.embed_dim": 8, "clf.hidden_dim": 8,
    "lm.epochs": 1, "lm.batch_size": 1, "lm.lr": 0.1, "lm.embed_dim": 8, "lm.hidden_dim": 8,
    "soc.n_samples": 4,
    "tin.epochs": 2, "tin.batch_size": 1, "tin.lr": 0.1, "tin.embed_dim": 8, "tin.hidden_dim": 8,
    "baseline.epochs": 2, "baseline.batch_size": 1, "baseline.lr": 0.1, "baseline.embed_dim": 8, "baseline.hidden_dim": 8
}"#;

fn autotrig(root: &Path, threads: usize, stage: &str, args: &[&str]) -> Result<(), String> {
    let out = root.join(stage);
    let o = Command::new(env!("CARGO_BIN_EXE_autotrig"))
        .current_dir(root)
        .env_remove("AUTOTRIG_OUT")
        .args(["--config", "config.json", "--threads", &threads.to_string(), "--out"])
        .arg(&out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{stage}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

/// Every pipeline stage, each into its own directory under `root`.
fn pipeline(root: &Path, threads: usize) -> Result<(), String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    std::fs::write(root.join("config.json"), SMALL).map_err(|e| e.to_string())?;
    std::fs::write(
        root.join("judgments.jsonl"),
        concat!(
            r#"{"sentence_id":"0","entity_index":0,"trigger_rank":0,"relevant":false,"annotator":"a","timestamp":1}"#,
            "\n",
            r#"{"sentence_id":"1","entity_index":0,"trigger_rank":0,"relevant":true,"annotator":"a","timestamp":2}"#,
            "\n"
        ),
    )
    .map_err(|e| e.to_string())?;
    let run = |stage: &str, args: &[&str]| autotrig(root, threads, stage, args);
    run("synth", &["synth-gen"])?;
    run("clf", &["train-clf", "--data", "synth/train.conll"])?;
    run("lm", &["train-lm", "--data", "synth/train.conll", "--classifier", "clf/classifier.json"])?;
    let common = ["--data", "synth/train.conll", "--classifier", "clf/classifier.json", "--lm", "lm/lm.json"];
    let parses = ["--trees", "synth/train.trees", "--deps", "synth/train.deps"];
    for src in ["CP", "RS", "DP"] {
        let stage = format!("extract_{src}");
        run(&stage, &[&["extract"][..], &common, &parses, &["--candidate-source", src]].concat())?;
    }
    let triggers = "extract_CP/triggers.jsonl";
    let scores = "extract_CP/scores.jsonl";
    run("apply", &["apply-judgments", "--dataset", triggers, "--scores", scores, "--log", "judgments.jsonl"])?;
    run("tin", &["train-tin", "--data", triggers])?;
    run("baseline", &["train-baseline", "--data", "synth/train.conll"])?;
    run("eval_tin", &["eval", "--model", "tin/tin.json", "--data", "synth/test.conll"])?;
    run("eval_baseline", &["eval", "--model", "baseline/baseline.json", "--data", "synth/test.conll"])?;
    run("sweep", &["sweep", "--axis", "lambda", "--values", "0,1", "--seeds", "2"])?;
    Ok(())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism(work: &Path) -> Outcome {
    let runs = [("a", 1), ("b", 1), ("c", 4)];
    for (name, threads) in runs {
        pipeline(&work.join(name), threads).map_err(|e| format!("run {name} failed: {e}"))?;
    }
    let a = files(&work.join("a"));
    let mut diffs = BTreeSet::new();
    for (name, _) in &runs[1..] {
        let other = files(&work.join(name));
        if other.keys().ne(a.keys()) {
            diffs.insert(format!("{name}: file sets differ"));
        }
        for (p, bytes) in &a {
            if other.get(p) != Some(bytes) {
                diffs.insert(p.display().to_string());
            }
        }
    }
    let detail = format!("{} files across 13 stages, runs at 1, 1 and 4 threads", a.len());
    if diffs.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; differing: {diffs:?}"))
    }
}

// ------------------------------------------------ 10. refinement service

struct Server(Child);
impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(dir: &Path, log: &Path) -> Result<(Server, u16), String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_autotrig"))
        .current_dir(dir)
        .env_remove("AUTOTRIG_OUT")
        .args(["--config", "config.json", "--out", "serve", "serve-refine", "--port", "0"])
        .args(["--dataset", "extract_CP/triggers.jsonl", "--scores", "extract_CP/scores.jsonl", "--log"])
        .arg(log)
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let server = Server(child);
    let port = line
        .trim()
        .rsplit(':')
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| format!("no listening line, got {line:?}"))?;
    Ok((server, port))
}

fn http(port: u16, method: &str, path: &str, body: Option<&Value>) -> Result<(u16, Value), String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(30))).map_err(|e| e.to_string())?;
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .map_err(|e| e.to_string())?;
    let mut raw = String::new();
    s.read_to_string(&mut raw).map_err(|e| e.to_string())?;
    let (head, payload) = raw.split_once("\r\n\r\n").ok_or("malformed response")?;
    let status = head.split_whitespace().nth(1).and_then(|c| c.parse().ok()).ok_or("no status")?;
    if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        return Err("unexpected chunked body".into());
    }
    Ok((status, serde_json::from_str(payload).unwrap_or(Value::Null)))
}

fn criterion_refine(dir: &Path) -> Outcome {
    let log = dir.join("refine_judgments.jsonl");
    let (server, port) = start_server(dir, &log)?;
    let (st, page) = http(port, "GET", "/api/examples?limit=500", None)?;
    if st != 200 {
        return Err(format!("GET /api/examples -> {st}"));
    }
    let (sid, ent, rank1) = page["items"]
        .as_array()
        .into_iter()
        .flatten()
        .find_map(|item| {
            item["entities"].as_array()?.iter().find_map(|e| {
                let c = e["candidates"].as_array()?;
                (c.len() >= 2)
                    .then(|| (item["sentence_id"].clone(), e["entity_index"].clone(), c[1]["indices"].clone()))
            })
        })
        .ok_or("no entity with two shown candidates")?;
    let judge = |rank: usize, relevant: bool| json!({"sentence_id": sid, "entity_index": ent, "trigger_rank": rank, "relevant": relevant, "annotator": "acc"});
    let mut posted = Vec::new();
    for (rank, rel) in [(0, false), (1, true)] {
        let (st, stored) = http(port, "POST", "/api/judgments", Some(&judge(rank, rel)))?;
        if st != 201 {
            return Err(format!("POST rank {rank} -> {st} {stored}"));
        }
        posted.push(stored);
    }
    let (_, prog) = http(port, "GET", "/api/progress", None)?;
    drop(server);

    let logged: Vec<Value> = std::fs::read_to_string(&log)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    if logged != posted {
        return Err(format!("log {logged:?} differs from acknowledged {posted:?}"));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_autotrig"))
        .current_dir(dir)
        .env_remove("AUTOTRIG_OUT")
        .args(["--config", "config.json", "--out", "refined", "apply-judgments"])
        .args(["--dataset", "extract_CP/triggers.jsonl", "--scores", "extract_CP/scores.jsonl", "--log"])
        .arg(&log)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("apply-judgments: {}", String::from_utf8_lossy(&o.stderr)));
    }
    let refined = read_triggers(&dir.join("refined/refined.jsonl")).map_err(|e| e.to_string())?;
    let ex = refined.iter().find(|e| Value::String(e.sentence.id.clone()) == sid).ok_or("sentence missing")?;
    let entity = &ex.sentence.spans()[ent.as_u64().unwrap() as usize];
    let trig: Vec<_> = ex.triggers.iter().filter(|t| &t.entity == entity).collect();
    let want: Vec<usize> = serde_json::from_value(rank1).unwrap();
    let ok = trig.len() == 1 && trig[0].indices == want && trig[0].source == TriggerSource::Refined;
    let detail = format!(
        "sentence {sid} entity {ent}: refined triggers {:?}, accepted {want:?}; progress {prog}",
        trig.iter().map(|t| &t.indices).collect::<Vec<_>>()
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------------ main

fn main() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPT_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let work = tempfile::tempdir().expect("tempdir");
    let mut failed = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        match &o {
            Ok(d) => println!("PASS {n:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d}")
            }
        }
        let _ = std::io::stdout().flush();
    };

    if want(1) {
        report(1, "crf oracle", criterion_crf());
    }
    if want(2) {
        report(2, "gradient suite", criterion_gradients());
    }
    if want(3) {
        report(3, "soc reductions", criterion_soc());
    }
    if want(4) || want(7) {
        let (cp, took) = recovery(CandidateSource::Cp);
        if want(4) {
            report(4, "planted-trigger recovery", criterion_recovery(&cp, took));
        }
        if want(7) {
            report(7, "candidate variants", criterion_variants(&cp));
        }
    }
    if want(5) {
        report(5, "low-resource benefit", criterion_low_resource());
    }
    if want(6) {
        report(6, "lambda endpoints and sweep", criterion_lambda());
    }
    if want(8) {
        report(8, "bio round-trip and f1", criterion_bio_f1());
    }
    if want(9) || want(10) {
        let outcome = criterion_determinism(work.path());
        let ran = outcome.is_ok() || !outcome.as_ref().unwrap_err().starts_with("run ");
        if want(9) {
            report(9, "determinism", outcome);
        }
        if want(10) {
            let o = if ran { criterion_refine(&work.path().join("a")) } else { Err("pipeline did not run".into()) };
            report(10, "refinement loop (service)", o);
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
