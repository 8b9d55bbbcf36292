//! Frame-wise confusion matrices and the leave-one-subject-out experiment.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::features::{frame_features, stack_history, FeatureMatrix, FrameFeatures};
use crate::hmm::train_hmm_classifier;
use crate::model::{predict_frames, train, TrainingSequence};
use crate::rng::derive_seed;
use crate::segmentation::{median_filter_labels, score_sequence, SequenceEvalCounts};
use crate::skeleton::{Dataset, GestureLabel};

const N: usize = GestureLabel::COUNT;

/// Counts indexed `[true][predicted]` in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: GestureLabel, predicted: GestureLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row_total(&self, truth: GestureLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized percentages; rows without samples are all zero.
    pub fn percentages(&self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let total: u64 = counts.iter().sum();
            if total > 0 {
                for (p, &c) in row.iter_mut().zip(counts) {
                    *p = 100.0 * c as f64 / total as f64;
                }
            }
        }
        out
    }

    /// Diagonal percentage of `label`'s row, `None` if the row is empty.
    pub fn accuracy(&self, label: GestureLabel) -> Option<f64> {
        let total = self.row_total(label);
        (total > 0).then(|| 100.0 * self.get(label, label) as f64 / total as f64)
    }

    /// Pooled accuracy over a set of true labels.
    pub fn accuracy_over(&self, labels: &[GestureLabel]) -> Option<f64> {
        let hit: u64 = labels.iter().map(|&l| self.get(l, l)).sum();
        let total: u64 = labels.iter().map(|&l| self.row_total(l)).sum();
        (total > 0).then(|| 100.0 * hit as f64 / total as f64)
    }

    pub fn render_counts(&self) -> String {
        self.render(|t, p| self.counts[t][p].to_string())
    }

    pub fn render_percentages(&self) -> String {
        let pct = self.percentages();
        self.render(|t, p| format!("{:.2}", pct[t][p]))
    }

    fn render(&self, cell: impl Fn(usize, usize) -> String) -> String {
        let mut s = format!("{:<12}", "true\\pred");
        for l in GestureLabel::ALL {
            let _ = write!(s, " {:>11}", l.as_str());
        }
        s.push('\n');
        for t in GestureLabel::ALL {
            let _ = write!(s, "{:<12}", t.as_str());
            for p in GestureLabel::ALL {
                let _ = write!(s, " {:>11}", cell(t.index(), p.index()));
            }
            s.push('\n');
        }
        s
    }
}

impl std::ops::AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion(truth: &[GestureLabel], predicted: &[GestureLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} true vs {} predicted labels",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// A trained recognizer of any method.
pub enum Recognizer {
    Chain(crate::model::LdcrfModel),
    Hmm(crate::hmm::HmmClassifier),
}

impl Recognizer {
    pub fn predict(&self, base: &[FrameFeatures], stacked: &FeatureMatrix) -> Result<Vec<GestureLabel>> {
        match self {
            Recognizer::Chain(m) => predict_frames(m, stacked),
            Recognizer::Hmm(h) => h.classify(base),
        }
    }
}

/// Per-sequence features, computed once for a whole dataset.
pub struct PreparedSequence {
    pub base: Vec<FrameFeatures>,
    pub stacked: FeatureMatrix,
}

pub fn prepare(ds: &Dataset, taps: &[usize]) -> Result<Vec<PreparedSequence>> {
    ds.sequences
        .par_iter()
        .map(|seq| {
            let base = frame_features(&seq.frames)?;
            let stacked = stack_history(&base, taps)?;
            Ok(PreparedSequence { base, stacked })
        })
        .collect()
}

/// Summary of one training run, kept in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
}

/// Trains `method` on the given sequences (indices into `ds`/`prepared`).
pub fn train_method(
    cfg: &RunConfig,
    method: Method,
    ds: &Dataset,
    prepared: &[PreparedSequence],
    indices: &[usize],
    seed: u64,
) -> Result<(Recognizer, TrainSummary)> {
    match method {
        Method::Ldcrf | Method::Crf => {
            let data: Vec<TrainingSequence> = indices
                .iter()
                .map(|&i| TrainingSequence {
                    features: prepared[i].stacked.clone(),
                    labels: ds.sequences[i].labels.clone(),
                })
                .collect();
            let out = train(&cfg.train_config(method), &data, seed)?;
            let last = out.log.last().map_or(f64::NAN, |r| r.objective);
            Ok((
                Recognizer::Chain(out.model),
                TrainSummary {
                    iterations: out.log.len() - 1,
                    final_objective: last,
                    converged: out.converged,
                },
            ))
        }
        Method::Hmm => {
            let data: Vec<(Vec<FrameFeatures>, Vec<GestureLabel>)> = indices
                .iter()
                .map(|&i| (prepared[i].base.clone(), ds.sequences[i].labels.clone()))
                .collect();
            let (clf, fits) = train_hmm_classifier(&data, &cfg.hmm)?;
            let final_objective = fits.iter().filter_map(|f| f.log_likelihoods.last()).sum();
            let iterations = fits.iter().map(|f| f.log_likelihoods.len() - 1).max().unwrap_or(0);
            Ok((
                Recognizer::Hmm(clf),
                TrainSummary {
                    iterations,
                    final_objective,
                    converged: iterations < cfg.hmm.max_iter,
                },
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub subject: String,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub seed: u64,
    /// `Err` holds the training or prediction failure message.
    pub outcome: std::result::Result<FoldScores, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldScores {
    pub train: TrainSummary,
    pub confusion: ConfusionMatrix,
    pub counts: SequenceEvalCounts,
    /// `sequence_id;arm;start;end;class` lines.
    pub records: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub folds: Vec<FoldResult>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled_counts: SequenceEvalCounts,
}

impl MethodReport {
    pub fn failed_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.outcome.is_err()).count()
    }

    /// Pooled accuracy over both arms' Point frames.
    pub fn point_accuracy(&self) -> Option<f64> {
        self.pooled_confusion
            .accuracy_over(&[GestureLabel::LeftPoint, GestureLabel::RightPoint])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config: RunConfig,
    pub subjects: Vec<String>,
    pub methods: Vec<MethodReport>,
}

fn evaluate_fold(
    cfg: &RunConfig,
    method: Method,
    ds: &Dataset,
    prepared: &[PreparedSequence],
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Result<FoldScores> {
    let (recognizer, summary) = train_method(cfg, method, ds, prepared, train_idx, seed)?;
    let mut conf = ConfusionMatrix::default();
    let mut counts = SequenceEvalCounts::default();
    let mut records = Vec::new();
    for &i in test_idx {
        let seq = &ds.sequences[i];
        let raw = recognizer.predict(&prepared[i].base, &prepared[i].stacked)?;
        conf += confusion(&seq.labels, &raw)?;
        let filtered = median_filter_labels(&raw, cfg.median_window)?;
        let (c, recs) = score_sequence(&seq.labels, &filtered)?;
        counts += c;
        records.extend(recs.iter().map(|r| r.to_line(&seq.sequence_id)));
    }
    Ok(FoldScores {
        train: summary,
        confusion: conf,
        counts,
        records,
    })
}

/// Leave-one-subject-out evaluation of every configured method.
///
/// Folds run in parallel; results are assembled in subject order, so the
/// report depends only on the dataset, the config and `seed`.
pub fn run_loso(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<ExperimentReport> {
    ds.validate()?;
    cfg.validate()?;
    let subjects = ds.subjects();
    if subjects.len() < 2 {
        return Err(Error::InvalidData(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let prepared = prepare(ds, &cfg.taps)?;

    let jobs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..subjects.len()).map(move |f| (m, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(method, fold)| {
            let subject = &subjects[fold];
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| &ds.sequences[i].subject_id == subject);
            let fold_seed = derive_seed(seed, method.as_str(), fold as u64);
            let outcome = evaluate_fold(cfg, method, ds, &prepared, &train_idx, &test_idx, fold_seed)
                .map_err(|e| e.to_string());
            FoldResult {
                subject: subject.clone(),
                train_sequences: train_idx.len(),
                test_sequences: test_idx.len(),
                seed: fold_seed,
                outcome,
            }
        })
        .collect();

    let mut results = results.into_iter();
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let folds: Vec<FoldResult> = results.by_ref().take(subjects.len()).collect();
            let mut pooled_confusion = ConfusionMatrix::default();
            let mut pooled_counts = SequenceEvalCounts::default();
            for s in folds.iter().filter_map(|f| f.outcome.as_ref().ok()) {
                pooled_confusion += s.confusion;
                pooled_counts += s.counts;
            }
            MethodReport {
                method,
                folds,
                pooled_confusion,
                pooled_counts,
            }
        })
        .collect();

    Ok(ExperimentReport {
        seed,
        config: cfg.clone(),
        subjects,
        methods,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"))
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn all_folds_failed(&self) -> bool {
        self.methods.iter().all(|m| m.failed_folds() == m.folds.len())
    }

    /// Human-readable report, one section per method.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# leave-one-subject-out experiment");
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "subjects: {}", self.subjects.join(","));
        let _ = writeln!(s, "\n## config");
        s.push_str(&self.config.to_text());
        for m in &self.methods {
            let _ = writeln!(s, "\n## method {}", m.method);
            let _ = writeln!(s, "folds: {} ({} failed)", m.folds.len(), m.failed_folds());
            for f in &m.folds {
                match &f.outcome {
                    Ok(o) => {
                        let _ = writeln!(
                            s,
                            "fold {}: train_sequences={} test_sequences={} seed={} iterations={} objective={:.6} converged={} point_accuracy={}",
                            f.subject,
                            f.train_sequences,
                            f.test_sequences,
                            f.seed,
                            o.train.iterations,
                            o.train.final_objective,
                            o.train.converged,
                            fmt_opt(o.confusion.accuracy_over(&[GestureLabel::LeftPoint, GestureLabel::RightPoint]))
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(s, "fold {}: FAILED seed={} error={}", f.subject, f.seed, e);
                    }
                }
            }
            let _ = writeln!(s, "\n### pooled frame confusion (counts, rows true, columns predicted)");
            s.push_str(&m.pooled_confusion.render_counts());
            if self.config.percent_tables {
                let _ = writeln!(s, "\n### pooled frame confusion (row percentages)");
                s.push_str(&m.pooled_confusion.render_percentages());
            }
            let _ = writeln!(s, "\n### per-label accuracy");
            for l in GestureLabel::ALL {
                let _ = writeln!(s, "{:<12} {}", l.as_str(), fmt_opt(m.pooled_confusion.accuracy(l)));
            }
            let _ = writeln!(s, "{:<12} {}", "point", fmt_opt(m.point_accuracy()));
            let _ = writeln!(s, "\n### detections");
            s.push_str(&m.pooled_counts.render_table());
        }
        s
    }

    /// Machine-readable records, one per line:
    /// `confusion;method;fold;true;predicted;count`,
    /// `detection;method;fold;sequence_id;arm;start;end;class`,
    /// `fold_error;method;fold;message`.
    pub fn render_records(&self) -> String {
        let mut s = String::new();
        for m in &self.methods {
            for f in &m.folds {
                match &f.outcome {
                    Ok(o) => {
                        for t in GestureLabel::ALL {
                            for p in GestureLabel::ALL {
                                let _ = writeln!(
                                    s,
                                    "confusion;{};{};{};{};{}",
                                    m.method,
                                    f.subject,
                                    t,
                                    p,
                                    o.confusion.get(t, p)
                                );
                            }
                        }
                        for r in &o.records {
                            let _ = writeln!(s, "detection;{};{};{}", m.method, f.subject, r);
                        }
                    }
                    Err(e) => {
                        let _ = writeln!(s, "fold_error;{};{};{}", m.method, f.subject, e.replace('\n', " "));
                    }
                }
            }
        }
        s
    }
}
