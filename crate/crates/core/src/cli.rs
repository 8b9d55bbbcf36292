//! Command implementations behind the `ldcrf` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{prepare, run_loso, ExperimentReport, Recognizer};
use crate::features::{frame_features, stack_history};
use crate::hmm::train_hmm_classifier;
use crate::model::{train, TrainingSequence};
use crate::persist::{self, SavedModel};
use crate::rng::derive_seed;
use crate::segmentation::{extract_pointing_blocks, median_filter_labels, score_sequence, DetectionClass};
use crate::seqio::{parse_sequence, read_dataset, write_dataset};
use crate::synth::synthesize_dataset;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const RECORDS_FILE: &str = "records.txt";

#[derive(Debug, Parser)]
#[command(name = "ldcrf", version, about = "Pointing gesture recognition on skeleton streams")]
pub struct Cli {
    /// Worker threads; 0 or absent uses the config value (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory with a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method on a dataset directory and save the model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ldcrf")]
        method: Method,
        /// Dataset directory; defaults to the config's `dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every frame of a sequence file and list detected gestures.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-subject-out comparison of the configured methods.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Run only this method instead of the configured list.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for the report and records.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Parse { .. } | Error::InvalidData(_) | Error::Dimension(_) | Error::ModelFormat(_) => 3,
        Error::Numerical { .. } => 4,
        Error::Io(_) => 1,
    }
}

/// Config file (or defaults) with the seed override applied.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Writes the dataset plus a manifest that parses back into `cfg` with
/// `dataset` pointing at `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<RunConfig> {
    let ds = synthesize_dataset(&cfg.synth, derive_seed(cfg.seed, "synth", 0))?;
    write_dataset(&ds, out)?;
    let mut manifest = cfg.clone();
    manifest.dataset = out.display().to_string();
    fs::write(out.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

/// Trains `method` on every sequence of the dataset, saves the model and
/// returns the training log.
pub fn cmd_train(cfg: &RunConfig, method: Method, data: &Path, model_out: &Path) -> Result<String> {
    let ds = read_dataset(data)?;
    if ds.is_empty() {
        return Err(Error::InvalidData(format!("no sequences in {}", data.display())));
    }
    let seed = derive_seed(cfg.seed, "train", 0);
    let mut log = String::new();
    let saved = match method {
        Method::Ldcrf | Method::Crf => {
            let prepared = prepare(&ds, &cfg.taps)?;
            let data: Vec<TrainingSequence> = prepared
                .into_iter()
                .zip(&ds.sequences)
                .map(|(p, s)| TrainingSequence {
                    features: p.stacked,
                    labels: s.labels.clone(),
                })
                .collect();
            let out = train(&cfg.train_config(method), &data, seed)?;
            for r in &out.log {
                let _ = writeln!(log, "iteration {} objective {:.6} grad_norm {:.6e}", r.iteration, r.objective, r.grad_norm);
            }
            let _ = writeln!(log, "converged {}", out.converged);
            SavedModel::Chain {
                method,
                model: out.model,
                taps: cfg.taps.clone(),
            }
        }
        Method::Hmm => {
            let prepared = prepare(&ds, &[])?;
            let data: Vec<_> = prepared
                .into_iter()
                .zip(&ds.sequences)
                .map(|(p, s)| (p.base, s.labels.clone()))
                .collect();
            let (clf, fits) = train_hmm_classifier(&data, &cfg.hmm)?;
            for f in &fits {
                for (i, ll) in f.log_likelihoods.iter().enumerate() {
                    let _ = writeln!(log, "{} iteration {} log_likelihood {:.6}", f.model.label, i, ll);
                }
            }
            SavedModel::Hmm(clf)
        }
    };
    persist::save(&saved, model_out)?;
    Ok(log)
}

/// Frame labels and detections for one sequence file.
///
/// Output lines: `frame;<index>;<raw label>;<filtered label>`, then
/// `event;sequence_id;arm;start;end` per detected gesture, then the scored
/// units against the file's annotations in `sequence_id;arm;start;end;class`
/// form prefixed with `score;`.
pub fn cmd_detect(cfg: &RunConfig, check_taps: bool, model: &Path, input: &Path) -> Result<String> {
    let saved = persist::load(model)?;
    let seq = parse_sequence(fs::File::open(input)?)?;
    let base = frame_features(&seq.frames)?;
    let raw = match &saved {
        SavedModel::Chain { model, taps, .. } => {
            if check_taps && *taps != cfg.taps {
                return Err(Error::Dimension(format!(
                    "model was trained with taps {taps:?}, config has {:?}",
                    cfg.taps
                )));
            }
            let stacked = stack_history(&base, taps)?;
            Recognizer::Chain(model.clone()).predict(&base, &stacked)?
        }
        SavedModel::Hmm(clf) => clf.classify(&base)?,
    };
    let filtered = median_filter_labels(&raw, cfg.median_window)?;
    let mut s = String::new();
    for (f, (r, m)) in raw.iter().zip(&filtered).enumerate() {
        let _ = writeln!(s, "frame;{f};{r};{m}");
    }
    for e in extract_pointing_blocks(&filtered) {
        let _ = writeln!(s, "event;{};{};{};{}", seq.sequence_id, e.arm.name(), e.start_frame, e.end_frame);
    }
    let (_, records) = score_sequence(&seq.labels, &filtered)?;
    for r in records {
        let _ = writeln!(s, "score;{}", r.to_line(&seq.sequence_id));
    }
    Ok(s)
}

/// Runs the experiment and writes `report.txt` and `records.txt` into `out`.
pub fn cmd_experiment(cfg: &RunConfig, data: &Path, out: &Path) -> Result<ExperimentReport> {
    let ds = read_dataset(data)?;
    let report = run_loso(&ds, cfg, cfg.seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT_FILE), report.render_text())?;
    fs::write(out.join(RECORDS_FILE), report.render_records())?;
    if report.all_folds_failed() {
        let first = report
            .methods
            .iter()
            .flat_map(|m| &m.folds)
            .find_map(|f| f.outcome.as_ref().err())
            .cloned()
            .unwrap_or_default();
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("every fold failed; first failure: {first}"),
        });
    }
    Ok(report)
}

fn run_command(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth { common, out } => {
            let cfg = resolve_config(common)?;
            let m = cmd_synth(&cfg, out)?;
            Ok(format!("wrote {} to {}\n", MANIFEST_FILE, m.dataset))
        }
        Command::Train {
            common,
            method,
            data,
            out,
        } => {
            let cfg = resolve_config(common)?;
            let data = data.clone().unwrap_or_else(|| PathBuf::from(&cfg.dataset));
            cmd_train(&cfg, *method, &data, out)
        }
        Command::Detect {
            common,
            model,
            input,
            out,
        } => {
            let cfg = resolve_config(common)?;
            let text = cmd_detect(&cfg, common.config.is_some(), model, input)?;
            match out {
                Some(p) => {
                    fs::write(p, &text)?;
                    Ok(String::new())
                }
                None => Ok(text),
            }
        }
        Command::Experiment {
            common,
            method,
            data,
            out,
        } => {
            let mut cfg = resolve_config(common)?;
            if let Some(m) = method {
                cfg.methods = vec![*m];
            }
            let data = data.clone().unwrap_or_else(|| PathBuf::from(&cfg.dataset));
            let report = cmd_experiment(&cfg, &data, out)?;
            let mut s = String::new();
            for m in &report.methods {
                let _ = writeln!(
                    s,
                    "{}: point_accuracy={} phantom={:.2}% missed={} failed_folds={}",
                    m.method,
                    m.point_accuracy().map_or("n/a".into(), |v| format!("{v:.2}")),
                    m.pooled_counts.percentage(DetectionClass::PhantomDetection),
                    m.pooled_counts.get(DetectionClass::MissedDetection),
                    m.failed_folds()
                );
            }
            Ok(s)
        }
    }
}

fn workers_for(cli: &Cli) -> Result<usize> {
    if let Some(w) = cli.workers {
        return Ok(w);
    }
    let common = match &cli.command {
        Command::Synth { common, .. }
        | Command::Train { common, .. }
        | Command::Detect { common, .. }
        | Command::Experiment { common, .. } => common,
    };
    Ok(resolve_config(common)?.workers)
}

/// Runs the parsed command inside a pool of the configured size.
pub fn run(cli: &Cli) -> Result<String> {
    let workers = workers_for(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run_command(cli))
}
