//! Command-line front end. `run` takes the argument list (without the
//! program name) and returns the process exit status.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad arguments or config,
//! 3 data or format error, 4 training divergence.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coexp::{triage, CoexpNetwork, DegTable};
use crate::config::{RunConfig, INPUT_KEYS};
use crate::error::{Error, Result};
use crate::eval::{self, evaluate_probabilities, importance_csv, importance_report, metrics_csv, RunResult};
use crate::featurize::Featurizer;
use crate::hybrid::{self, HybridConfig, HybridModel};
use crate::seqio::{self, Label, LabeledDataset, SequenceRecord};
use crate::synth;

pub const COMMANDS: [&str; 8] = [
    "ingest",
    "featurize",
    "train",
    "evaluate",
    "predict",
    "importance",
    "coexp",
    "synth",
];

const USAGE: &str = "\
usage: seqling <command> [--config FILE] [--KEY VALUE]...

commands:
  synth       generate a synthetic benchmark (dataset, truth, train/test split)
  ingest      validate a labeled CSV or positive/negative FASTA pair and split it
  featurize   write the handcrafted feature matrix for `data` or `input`
  train       train a model on `train` (or `data`)
  evaluate    score `model` on `test`, or train `runs` models on `train` and score each
  predict     score the sequences in `input` (FASTA) or `data` (CSV) with `model`
  importance  rank the features of `model`
  coexp       co-expression triage of `predictions` over `network`/`annotations`/`deg`

Every key of the config file can be given as a flag; flags win.
Outputs and a <command>_manifest.json are written to `out`.
";

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn config(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }

    fn from_run(e: Error) -> Self {
        let code = match e.root() {
            Error::Divergence { .. } => 4,
            Error::InvalidParam(_) | Error::Architecture(_) => 2,
            Error::Format { .. }
            | Error::DuplicateId(_)
            | Error::EmptySequence
            | Error::Schema(_)
            | Error::Value { .. }
            | Error::Stratification { .. }
            | Error::ShortSequence { .. }
            | Error::DegenerateSequence
            | Error::SingleClass
            | Error::Dimension { .. }
            | Error::Model(_)
            | Error::Io { .. }
            | Error::Csv(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Parsed command line: the subcommand and its resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: String,
    pub config: RunConfig,
}

pub fn parse_args(args: &[String]) -> std::result::Result<Invocation, Failure> {
    let Some(command) = args.first() else {
        return Err(Failure::usage(USAGE));
    };
    if !COMMANDS.contains(&command.as_str()) {
        return Err(Failure::usage(format!("unknown command `{command}`\n\n{USAGE}")));
    }
    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut it = args[1..].iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Failure::usage(format!("unexpected argument `{arg}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::usage(format!("flag `--{flag}` needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            overrides.push((key, value));
        }
    }
    let mut config = match &config_path {
        Some(p) => RunConfig::load(p).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    for (k, v) in &overrides {
        config.set(k, v).map_err(Failure::config)?;
    }
    config.validate().map_err(Failure::config)?;
    Ok(Invocation {
        command: command.clone(),
        config,
    })
}

/// Runs the CLI and returns the exit status; errors are printed to stderr.
pub fn run(args: &[String]) -> i32 {
    if matches!(args.first().map(String::as_str), Some("-h" | "--help" | "help")) {
        print!("{USAGE}");
        return 0;
    }
    match run_inner(args) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("seqling: error: {}", f.message);
            f.code
        }
    }
}

fn run_inner(args: &[String]) -> std::result::Result<(), Failure> {
    let inv = parse_args(args)?;
    let threads = inv.config.threads().map_err(Failure::config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure {
            code: 1,
            message: format!("cannot start thread pool: {e}"),
        })?;
    pool.install(|| execute(&inv))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    key: String,
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a BTreeMap<&'static str, String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files so the manifest can list their digests.
struct Outputs {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs {
            dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(FileDigest {
            key: name.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        println!("wrote {}", path.display());
        Ok(path)
    }
}

fn input_digests(c: &RunConfig) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for key in INPUT_KEYS {
        if let Some(p) = c.optional_path(key) {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            out.push(FileDigest {
                key: key.to_string(),
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(out)
}

fn execute(inv: &Invocation) -> std::result::Result<(), Failure> {
    let c = &inv.config;
    let seed = c.seed().map_err(Failure::config)?;
    // Resolve and check every typed view the command needs before any work.
    let plan = Plan::resolve(&inv.command, c).map_err(Failure::config)?;
    let inputs = input_digests(c).map_err(Failure::from_run)?;
    let mut out = Outputs::new(c.out_dir()).map_err(Failure::from_run)?;
    plan.run(c, &mut out).map_err(Failure::from_run)?;

    let manifest = Manifest {
        tool: "seqling",
        version: env!("CARGO_PKG_VERSION"),
        command: &inv.command,
        seed,
        config: c.resolved(),
        inputs,
        outputs: std::mem::take(&mut out.written),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = out.dir.join(format!("{}_manifest.json", inv.command));
    std::fs::write(&path, text).map_err(|e| Failure::from_run(Error::io(&path, e)))?;
    Ok(())
}

enum Plan {
    Synth(synth::SynthSpec, seqio::SplitSpec),
    Ingest(seqio::SplitSpec),
    Featurize(Featurizer),
    Train(HybridConfig),
    Evaluate(HybridConfig, usize),
    Predict(f64),
    Importance(usize),
    Coexp(crate::coexp::TriageParams, bool),
}

impl Plan {
    fn resolve(command: &str, c: &RunConfig) -> Result<Plan> {
        let need = |key: &str| c.path(key).map(|_| ());
        Ok(match command {
            "synth" => Plan::Synth(c.synth_spec()?, c.split_spec()?),
            "ingest" => {
                if c.optional_path("data").is_none() {
                    need("positive")?;
                    need("negative")?;
                }
                Plan::Ingest(c.split_spec()?)
            }
            "featurize" => {
                if c.optional_path("data").is_none() {
                    need("input")?;
                }
                Plan::Featurize(Featurizer::new(c.kmer_specs()?, c.physchem()?)?)
            }
            "train" => {
                if c.optional_path("train").is_none() {
                    need("data")?;
                }
                Plan::Train(c.hybrid_config()?)
            }
            "evaluate" => {
                need("test")?;
                if c.optional_path("model").is_none() {
                    need("train")?;
                }
                Plan::Evaluate(c.hybrid_config()?, c.runs()?)
            }
            "predict" => {
                need("model")?;
                if c.optional_path("data").is_none() {
                    need("input")?;
                }
                Plan::Predict(c.threshold()?)
            }
            "importance" => {
                need("model")?;
                Plan::Importance(c.top_n()?)
            }
            "coexp" => {
                for k in ["network", "annotations", "deg", "predictions"] {
                    need(k)?;
                }
                Plan::Coexp(c.triage_params()?, c.strict()?)
            }
            other => return Err(Error::InvalidParam(format!("unknown command `{other}`"))),
        })
    }

    fn run(self, c: &RunConfig, out: &mut Outputs) -> Result<()> {
        match self {
            Plan::Synth(spec, split) => {
                let s = synth::generate(&spec)?;
                out.write("dataset.csv", &seqio::write_labeled_csv(&s.dataset))?;
                out.write("truth.csv", &synth::truth_csv(&s.truth))?;
                write_split(&s.dataset, &split, out)
            }
            Plan::Ingest(split) => {
                let d = match c.optional_path("data") {
                    Some(p) => seqio::load_labeled_csv(&p)?,
                    None => {
                        let pos = seqio::read_fasta_file(&c.path("positive")?)?;
                        let neg = seqio::read_fasta_file(&c.path("negative")?)?;
                        let labels = std::iter::repeat(Label::Related)
                            .take(pos.len())
                            .chain(std::iter::repeat(Label::NotRelated).take(neg.len()))
                            .collect();
                        LabeledDataset::new(pos.into_iter().chain(neg).collect(), labels)?
                    }
                };
                out.write("dataset.csv", &seqio::write_labeled_csv(&d))?;
                write_split(&d, &split, out)
            }
            Plan::Featurize(mut f) => {
                let records = records_input(c)?;
                let m = f.fit_transform_records(&records)?;
                let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
                out.write("features.csv", &m.to_csv(&ids)?)?;
                Ok(())
            }
            Plan::Train(hc) => {
                let path = c.optional_path("train").map_or_else(|| c.path("data"), Ok)?;
                let d = seqio::load_labeled_csv(&path)?;
                let m = HybridModel::train(&d, &hc)?;
                out.write("model.json", &m.to_json())?;
                if let Some(cnn) = m.convnet() {
                    out.write("training_log.csv", &cnn.training_log_csv())?;
                }
                Ok(())
            }
            Plan::Evaluate(hc, runs) => {
                let test = seqio::load_labeled_csv(&c.path("test")?)?;
                let y = test.labels_u8();
                let score = |m: &HybridModel| -> Result<eval::MetricReport> {
                    let p: Vec<f64> = m
                        .predict(test.records(), hybrid::DEFAULT_THRESHOLD)?
                        .into_iter()
                        .map(|r| r.probability)
                        .collect();
                    evaluate_probabilities(&y, &p)
                };
                if let Some(mp) = c.optional_path("model") {
                    let m = HybridModel::load(&mp)?;
                    let run = RunResult {
                        run: 1,
                        seed: m.config().seed,
                        report: score(&m)?,
                    };
                    out.write("metrics.csv", &metrics_csv(&[run]))?;
                    return Ok(());
                }
                let train = seqio::load_labeled_csv(&c.path("train")?)?;
                let train_and_score = |seed: u64| -> Result<eval::MetricReport> {
                    let m = HybridModel::train(&train, &HybridConfig { seed, ..hc.clone() })?;
                    score(&m)
                };
                if runs == 1 {
                    let run = RunResult {
                        run: 1,
                        seed: hc.seed,
                        report: train_and_score(hc.seed)?,
                    };
                    out.write("metrics.csv", &metrics_csv(&[run]))?;
                    return Ok(());
                }
                let report = eval::stability(train_and_score, runs, hc.seed)?;
                out.write("metrics.csv", &metrics_csv(&report.runs))?;
                out.write("stability_summary.csv", &report.summary_csv())?;
                Ok(())
            }
            Plan::Predict(threshold) => {
                let m = HybridModel::load(&c.path("model")?)?;
                let records = records_input(c)?;
                let rows = m.predict(&records, threshold)?;
                out.write("predictions.csv", &hybrid::predictions_csv(&rows))?;
                Ok(())
            }
            Plan::Importance(top_n) => {
                let m = HybridModel::load(&c.path("model")?)?;
                out.write("importance.csv", &importance_csv(&importance_report(&m, top_n)))?;
                Ok(())
            }
            Plan::Coexp(params, strict) => {
                let net = CoexpNetwork::load(&c.path("network")?, &c.path("annotations")?, strict)?;
                let deg = DegTable::load(&c.path("deg")?)?;
                let pp = c.path("predictions")?;
                let text = std::fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?;
                let preds = hybrid::parse_predictions_csv(&text, params.threshold).map_err(|e| Error::in_file(&pp, e))?;
                let report = triage(&net, &preds, &deg, &params)?;
                out.write("triage_report.txt", &report.to_text(&net))?;
                out.write("triage_report.csv", &report.to_csv(&net)?)?;
                Ok(())
            }
        }
    }
}

/// Records from `data` (labeled CSV, labels ignored) or `input` (FASTA).
fn records_input(c: &RunConfig) -> Result<Vec<SequenceRecord>> {
    match c.optional_path("data") {
        Some(p) => Ok(seqio::load_labeled_csv(&p)?.records().to_vec()),
        None => seqio::read_fasta_file(&c.path("input")?),
    }
}

fn write_split(d: &LabeledDataset, split: &seqio::SplitSpec, out: &mut Outputs) -> Result<()> {
    let (train, test) = seqio::split_dataset(d, split)?;
    out.write("train.csv", &seqio::write_labeled_csv(&train))?;
    out.write("test.csv", &seqio::write_labeled_csv(&test))?;
    Ok(())
}
