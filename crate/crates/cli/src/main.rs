use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autotrig::classifier::{train_classifier, TokenClassifier};
use autotrig::config::RunConfig;
use autotrig::corpus::{
    dep_line, read_conll, read_dep_file, read_tree_file, read_triggers, write_conll, write_triggers, ConllOptions,
    TaggedSentence,
};
use autotrig::extract::{extract_dataset, read_scores, write_scores, CandidateSource, ParseInputs};
use autotrig::lm::{train_lm, train_lm_with_vocab, LangModel};
use autotrig::neural::checkpoint_kind;
use autotrig::pipeline::{sweep, SweepAxis};
use autotrig::refine::{read_log, RefineSession};
use autotrig::synthgen::{generate, SynthConfig};
use autotrig::tin::{evaluate, train_baseline, train_tin, TinModel};
use autotrig::Error;
use autotrig_refine::{AppState, ServiceOptions};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const CONFIG_HELP_HEADER: &str = "Config keys (set in a JSON file via --config or with --set key=value; flags win):";

#[derive(Parser, Debug)]
#[command(name = "autotrig", version, about = "Trigger extraction and trigger-aware NER")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config file with flat dotted keys or nested objects.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set tin.lambda=0.25. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory. The AUTOTRIG_OUT environment variable takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-trigger corpus: train.* and test.* (CoNLL, trees, dependency heads, gold triggers).
    SynthGen,
    /// Train the entity token classifier.
    TrainClf {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the context language model.
    TrainLm {
        #[arg(long)]
        data: PathBuf,
        /// Reuse this classifier's vocabulary, as extraction requires.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Score candidate phrases with sampling-and-occlusion and keep the top-k triggers.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        /// Bracketed constituency trees, one per sentence (needed for CP).
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Dependency heads, one line per sentence (needed for DP).
        #[arg(long)]
        deps: Option<PathBuf>,
        /// CP, RS or DP; same as --set soc.candidate_source=...
        #[arg(long)]
        candidate_source: Option<CandidateSource>,
    },
    /// Serve the refinement API (and UI assets) over HTTP.
    ServeRefine {
        /// Auto-extracted triggers (JSONL).
        #[arg(long)]
        dataset: PathBuf,
        /// Score sidecar written by extract.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Judgment log; defaults to <out>/judgments.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Same as --set refine.port=...
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write the refined dataset implied by a judgment log.
    ApplyJudgments {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
    },
    /// Train the trigger interpolation network on trigger-labeled JSONL.
    TrainTin {
        #[arg(long)]
        data: PathBuf,
        /// Same as --set tin.lambda=...
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train the BiLSTM-CRF baseline on CoNLL data.
    TrainBaseline {
        #[arg(long)]
        data: PathBuf,
    },
    /// Entity-level precision, recall and F1 of a tagger checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// F1 over a grid of one setting on synthetic corpora; writes sweep.csv.
    Sweep {
        /// lambda, k, source or size.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// First seed; seed i is base + i. Defaults to synth.seed.
        #[arg(long)]
        base_seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            e if e.is_data_error() => 2,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, msg: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn require(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("input file not found: {}", path.display())))
    }
}

fn read_corpus(path: &Path) -> CliResult<Vec<TaggedSentence>> {
    require(path)?;
    Ok(read_conll(path, ConllOptions::default())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn resolve_config(g: &Global, extra: Vec<String>) -> CliResult<RunConfig> {
    let base = match &g.config {
        Some(p) => {
            require(p)?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    let mut sets = g.sets.clone();
    sets.extend(extra);
    Ok(base.with_sets(&sets)?)
}

fn out_dir(g: &Global) -> PathBuf {
    match std::env::var_os("AUTOTRIG_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => g.out.clone(),
    }
}

/// Overrides implied by subcommand flags.
fn flag_sets(cmd: &Command) -> Vec<String> {
    match cmd {
        Command::Extract { candidate_source: Some(s), .. } => vec![format!("soc.candidate_source={s}")],
        Command::TrainTin { lambda: Some(l), .. } => vec![format!("tin.lambda={l}")],
        Command::ServeRefine { port: Some(p), .. } => vec![format!("refine.port={p}")],
        _ => Vec::new(),
    }
}

fn write_split(out: &Path, name: &str, corpus: &autotrig::synthgen::SynthCorpus) -> CliResult {
    write_conll(&out.join(format!("{name}.conll")), &corpus.sentences)?;
    fs::write(out.join(format!("{name}.trees")), corpus.tree_lines().join("\n") + "\n")?;
    let deps: Vec<String> = corpus.dep_heads.iter().map(|h| dep_line(h)).collect();
    fs::write(out.join(format!("{name}.deps")), deps.join("\n") + "\n")?;
    write_triggers(&out.join(format!("{name}.gold.jsonl")), &corpus.gold)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::usage(e.to_string()))?;
    }
    let cfg = resolve_config(g, flag_sets(&cli.command))?;
    let out = out_dir(g);
    fs::create_dir_all(&out)?;
    fs::write(out.join("resolved_config.json"), cfg.to_flat_json()?)?;

    match &cli.command {
        Command::SynthGen => {
            let train = generate(&cfg.synth)?;
            let test = generate(&SynthConfig {
                n_sentences: cfg.test_sentences,
                seed: autotrig::rng::derive(cfg.synth.seed, "test", &[]),
                ..cfg.synth.clone()
            })?;
            write_split(&out, "train", &train)?;
            write_split(&out, "test", &test)?;
            println!(
                "wrote {} train and {} test sentences to {}",
                train.sentences.len(),
                test.sentences.len(),
                out.display()
            );
        }
        Command::TrainClf { data } => {
            let sentences = read_corpus(data)?;
            let (model, log) = train_classifier(&sentences, &cfg.clf)?;
            let accuracy = model.token_accuracy(&sentences)?;
            model.save(&out.join("classifier.json"))?;
            write_json(
                &out.join("train_clf_log.json"),
                &serde_json::json!({ "epoch_losses": log.epoch_losses, "train_token_accuracy": accuracy }),
            )?;
            println!("train token accuracy {accuracy:.4}");
        }
        Command::TrainLm { data, classifier } => {
            let sentences = read_corpus(data)?;
            let (lm, log) = match classifier {
                Some(p) => {
                    require(p)?;
                    train_lm_with_vocab(&sentences, TokenClassifier::load(p)?.vocab, &cfg.lm)?
                }
                None => train_lm(&sentences, &cfg.lm)?,
            };
            lm.save(&out.join("lm.json"))?;
            write_json(&out.join("train_lm_log.json"), &log)?;
            println!("train perplexity {:.3}", log.perplexity);
        }
        Command::Extract { data, classifier, lm, trees, deps, .. } => {
            let sentences = read_corpus(data)?;
            let source = cfg.soc.candidate_source;
            let trees = match (trees, source) {
                (Some(p), _) => {
                    require(p)?;
                    Some(read_tree_file(p, &sentences)?)
                }
                (None, CandidateSource::Cp) => {
                    return Err(Failure::usage("candidate source CP needs constituency trees: pass --trees"))
                }
                (None, _) => None,
            };
            let deps = match (deps, source) {
                (Some(p), _) => {
                    require(p)?;
                    Some(read_dep_file(p, &sentences)?)
                }
                (None, CandidateSource::Dp) => {
                    return Err(Failure::usage("candidate source DP needs dependency heads: pass --deps"))
                }
                (None, _) => None,
            };
            require(classifier)?;
            require(lm)?;
            let clf = TokenClassifier::load(classifier)?;
            let lm = LangModel::load(lm)?;
            let parses = ParseInputs { trees: trees.as_deref(), dep_heads: deps.as_deref() };
            let ex = extract_dataset(&sentences, parses, &clf, &lm, &cfg.soc)?;
            write_triggers(&out.join("triggers.jsonl"), &ex.examples)?;
            write_scores(&out.join("scores.jsonl"), &ex.scores)?;
            write_json(&out.join("flagged.json"), &ex.flagged)?;
            let n: usize = ex.examples.iter().map(|e| e.triggers.len()).sum();
            println!("{n} triggers for {} entities; {} flagged", ex.scores.len(), ex.flagged.len());
        }
        Command::ServeRefine { dataset, scores, log, static_dir, host, .. } => {
            require(dataset)?;
            if let Some(s) = scores {
                require(s)?;
            }
            let log = log.clone().unwrap_or_else(|| out.join("judgments.jsonl"));
            let state = AppState::open(dataset, scores.as_deref(), &log, cfg.refine.k_shown, cfg.soc.k)?;
            let opts = ServiceOptions { static_dir: static_dir.clone(), cors_origin: cfg.refine.cors_origin.clone() };
            opts.validate().map_err(Failure::usage)?;
            let addr: SocketAddr = format!("{host}:{}", cfg.refine.port)
                .parse()
                .map_err(|e| Failure::usage(format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(autotrig_refine::serve(addr, state, opts))?;
        }
        Command::ApplyJudgments { dataset, scores, log } => {
            require(dataset)?;
            require(log)?;
            let data = read_triggers(dataset)?;
            let scores = match scores {
                Some(p) => {
                    require(p)?;
                    Some(read_scores(p)?)
                }
                None => None,
            };
            let session = RefineSession::new(data, scores.as_deref(), cfg.refine.k_shown, cfg.soc.k, read_log(log)?)?;
            let refined = session.export_refined()?;
            write_triggers(&out.join("refined.jsonl"), &refined)?;
            println!("refined {} sentences from {} judgments", refined.len(), session.log().len());
        }
        Command::TrainTin { data, .. } => {
            require(data)?;
            let examples = read_triggers(data)?;
            let (model, log) = train_tin(&examples, &cfg.tin)?;
            model.save(&out.join("tin.json"))?;
            write_json(&out.join("train_tin_log.json"), &log)?;
            println!("final epoch loss {:.4}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainBaseline { data } => {
            let sentences = read_corpus(data)?;
            let (model, log) = train_baseline(&sentences, &cfg.baseline)?;
            model.save(&out.join("baseline.json"))?;
            write_json(&out.join("train_baseline_log.json"), &log)?;
            println!("final epoch loss {:.4}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval { model, data } => {
            require(model)?;
            let sentences = read_corpus(data)?;
            let kind = checkpoint_kind(model)?;
            let m = TinModel::load(model)?;
            let report = evaluate(&m, &sentences)?;
            write_json(&out.join(format!("eval_{kind}.json")), &report)?;
            println!("{kind}: precision {:.4} recall {:.4} f1 {:.4}", report.precision, report.recall, report.f1);
        }
        Command::Sweep { axis, values, seeds, base_seed } => {
            let base = base_seed.unwrap_or(cfg.synth.seed);
            let rows = sweep(&cfg.experiment(), *axis, values, *seeds, base)?;
            let path = out.join("sweep.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| Failure { code: 3, msg: e.to_string() })?;
            for r in &rows {
                w.serialize(r).map_err(|e| Failure { code: 3, msg: e.to_string() })?;
            }
            w.flush()?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let help = format!("{CONFIG_HELP_HEADER}\n{}", RunConfig::help_text());
    let cmd = <Cli as clap::CommandFactory>::command().after_long_help(help.clone()).after_help(help);
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
