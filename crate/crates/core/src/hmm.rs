//! Generative baseline: one left-to-right Gaussian HMM per gesture phase,
//! frame labels decided by a trailing-window likelihood race.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FrameFeatures, BASE_DIM};
use crate::model::log_sum_exp;
use crate::skeleton::GestureLabel;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_WINDOW: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmConfig {
    pub n_states: usize,
    pub max_iter: usize,
    /// EM stops once the log-likelihood gain drops below this.
    pub tol: f64,
    pub window: usize,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            n_states: 3,
            max_iter: 100,
            tol: 1e-4,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Left-to-right HMM with diagonal Gaussian emissions over base frame features.
///
/// The initial state distribution is uniform and not re-estimated, so that a
/// window starting in the middle of a phase can be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHmm {
    pub label: GestureLabel,
    /// `n × n`, row-stochastic, upper-bidiagonal
    pub transitions: Array2<f64>,
    /// `n × d`
    pub means: Array2<f64>,
    /// `n × d`, each ≥ [`VARIANCE_FLOOR`]
    pub variances: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct HmmFit {
    pub model: PhaseHmm,
    /// Total log-likelihood of the training runs before each M-step, and
    /// after the last one.
    pub log_likelihoods: Vec<f64>,
}

impl PhaseHmm {
    pub fn n_states(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.transitions.ncols() != n {
            return Err(Error::Dimension("transition matrix must be square and non-empty".into()));
        }
        if self.means.dim() != self.variances.dim() || self.means.nrows() != n {
            return Err(Error::Dimension("emission parameters do not match state count".into()));
        }
        for i in 0..n {
            let row = self.transitions.row(i);
            if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidData(format!("transition row {i} is not stochastic")));
            }
            for j in 0..n {
                if j != i && j != i + 1 && row[j] != 0.0 {
                    return Err(Error::InvalidData("transitions must be left-to-right".into()));
                }
            }
        }
        if self.variances.iter().any(|&v| !(v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return Err(Error::InvalidData("variance below floor".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidData("non-finite mean".into()));
        }
        Ok(())
    }

    fn log_init(&self) -> f64 {
        -(self.n_states() as f64).ln()
    }

    /// Log density of `x` under each state's Gaussian.
    pub fn emission_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_states())
            .map(|i| {
                let mut s = 0.0;
                for (d, &v) in x.iter().enumerate() {
                    let var = self.variances[[i, d]];
                    let diff = v - self.means[[i, d]];
                    s -= 0.5 * ((2.0 * PI * var).ln() + diff * diff / var);
                }
                s
            })
            .collect()
    }

    fn emissions(&self, x: &[FrameFeatures]) -> Array2<f64> {
        let mut e = Array2::zeros((x.len(), self.n_states()));
        for (t, f) in x.iter().enumerate() {
            for (i, v) in self.emission_log_densities(f.as_slice()).into_iter().enumerate() {
                e[[t, i]] = v;
            }
        }
        e
    }

    /// Log forward messages given per-frame emission log densities.
    fn forward(&self, emissions: ndarray::ArrayView2<f64>) -> Array2<f64> {
        let (t_len, n) = emissions.dim();
        let log_a = self.transitions.mapv(f64::ln);
        let mut alpha = Array2::from_elem((t_len, n), f64::NEG_INFINITY);
        let init = self.log_init();
        for i in 0..n {
            alpha[[0, i]] = init + emissions[[0, i]];
        }
        for t in 1..t_len {
            for j in 0..n {
                let terms = (0..n).map(|i| alpha[[t - 1, i]] + log_a[[i, j]]);
                alpha[[t, j]] = emissions[[t, j]] + log_sum_exp(terms);
            }
        }
        alpha
    }

    /// `log p(x)` by the forward algorithm.
    pub fn forward_log_likelihood(&self, x: &[FrameFeatures]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let alpha = self.forward(self.emissions(x).view());
        log_sum_exp(alpha.row(x.len() - 1).iter().copied())
    }
}

/// Expected sufficient statistics of one run.
struct RunStats {
    log_likelihood: f64,
    gamma: Array2<f64>,
    /// expected self-transitions and forward transitions per state
    stay: Vec<f64>,
    advance: Vec<f64>,
}

fn expectations(model: &PhaseHmm, run: &[FrameFeatures]) -> RunStats {
    let n = model.n_states();
    let t_len = run.len();
    let e = model.emissions(run);
    let alpha = model.forward(e.view());
    let log_a = model.transitions.mapv(f64::ln);
    let mut beta = Array2::<f64>::zeros((t_len, n));
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            let terms = (0..n).map(|j| log_a[[i, j]] + e[[t + 1, j]] + beta[[t + 1, j]]);
            beta[[t, i]] = log_sum_exp(terms);
        }
    }
    let ll = log_sum_exp(alpha.row(t_len - 1).iter().copied());
    let mut gamma = &alpha + &beta;
    gamma.mapv_inplace(|v| (v - ll).exp());
    let mut stay = vec![0.0; n];
    let mut advance = vec![0.0; n];
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..n {
            let a = alpha[[t, i]];
            stay[i] += (a + log_a[[i, i]] + e[[t + 1, i]] + beta[[t + 1, i]] - ll).exp();
            if i + 1 < n {
                advance[i] += (a + log_a[[i, i + 1]] + e[[t + 1, i + 1]] + beta[[t + 1, i + 1]] - ll).exp();
            }
        }
    }
    RunStats {
        log_likelihood: ll,
        gamma,
        stay,
        advance,
    }
}

/// Initial parameters from cutting every run into `n` equal parts.
fn initial_model(label: GestureLabel, runs: &[Vec<FrameFeatures>], n: usize) -> PhaseHmm {
    let d = BASE_DIM;
    let mut count = vec![0.0; n];
    let mut sum = Array2::<f64>::zeros((n, d));
    let mut sq = Array2::<f64>::zeros((n, d));
    let mut stays = vec![0.0f64; n];
    let mut leaves = vec![0.0; n];
    for run in runs {
        let len = run.len();
        let state = |t: usize| t * n / len;
        for (t, f) in run.iter().enumerate() {
            let s = state(t);
            count[s] += 1.0;
            for (k, &v) in f.values.iter().enumerate() {
                sum[[s, k]] += v;
                sq[[s, k]] += v * v;
            }
            if t + 1 < len {
                if state(t + 1) == s {
                    stays[s] += 1.0;
                } else {
                    leaves[s] += 1.0;
                }
            }
        }
    }
    let mut means = Array2::<f64>::zeros((n, d));
    let mut variances = Array2::<f64>::from_elem((n, d), 1.0);
    for s in 0..n {
        if count[s] > 0.0 {
            for k in 0..d {
                let m = sum[[s, k]] / count[s];
                means[[s, k]] = m;
                variances[[s, k]] = (sq[[s, k]] / count[s] - m * m).max(VARIANCE_FLOOR);
            }
        }
    }
    // states left empty by very short runs borrow the nearest filled state
    for s in 0..n {
        if count[s] == 0.0 {
            if let Some(src) = (0..n).filter(|&k| count[k] > 0.0).min_by_key(|&k| k.abs_diff(s)) {
                let m = means.row(src).to_owned();
                let v = variances.row(src).to_owned();
                means.row_mut(s).assign(&m);
                variances.row_mut(s).assign(&v);
            }
        }
    }
    let mut transitions = Array2::<f64>::zeros((n, n));
    for s in 0..n {
        if s + 1 == n {
            transitions[[s, s]] = 1.0;
        } else {
            let p = ((stays[s] + 1.0) / (stays[s] + leaves[s] + 2.0)).clamp(0.05, 0.95);
            transitions[[s, s]] = p;
            transitions[[s, s + 1]] = 1.0 - p;
        }
    }
    PhaseHmm {
        label,
        transitions,
        means,
        variances,
    }
}

/// Baum-Welch training on the runs of one label.
pub fn train_hmm(label: GestureLabel, runs: &[Vec<FrameFeatures>], cfg: &HmmConfig) -> Result<HmmFit> {
    let runs: Vec<Vec<FrameFeatures>> = runs.iter().filter(|r| !r.is_empty()).cloned().collect();
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!("no training runs for label {label}")));
    }
    if cfg.n_states == 0 {
        return Err(Error::InvalidArgument("n_states must be positive".into()));
    }
    let n = cfg.n_states;
    let d = BASE_DIM;
    let mut model = initial_model(label, &runs, n);
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..cfg.max_iter.max(1) {
        let stats: Vec<RunStats> = runs.par_iter().map(|r| expectations(&model, r)).collect();
        let ll: f64 = stats.iter().map(|s| s.log_likelihood).sum();
        if !ll.is_finite() {
            return Err(Error::Numerical {
                iteration: history.len(),
                message: format!("non-finite HMM log-likelihood for {label}"),
            });
        }
        let done = history.last().is_some_and(|&prev| ll - prev < cfg.tol);
        history.push(ll);
        if done {
            break;
        }

        let mut occ = vec![0.0; n];
        let mut stay = vec![0.0; n];
        let mut adv = vec![0.0; n];
        let mut sum = Array2::<f64>::zeros((n, d));
        for (st, run) in stats.iter().zip(&runs) {
            for (t, f) in run.iter().enumerate() {
                for i in 0..n {
                    let g = st.gamma[[t, i]];
                    occ[i] += g;
                    for (k, &v) in f.values.iter().enumerate() {
                        sum[[i, k]] += g * v;
                    }
                }
            }
            for i in 0..n {
                stay[i] += st.stay[i];
                adv[i] += st.advance[i];
            }
        }
        let mut means = model.means.clone();
        for i in 0..n {
            if occ[i] > 1e-12 {
                for k in 0..d {
                    means[[i, k]] = sum[[i, k]] / occ[i];
                }
            }
        }
        let mut sq = Array2::<f64>::zeros((n, d));
        for (st, run) in stats.iter().zip(&runs) {
            for (t, f) in run.iter().enumerate() {
                for i in 0..n {
                    let g = st.gamma[[t, i]];
                    for (k, &v) in f.values.iter().enumerate() {
                        let diff = v - means[[i, k]];
                        sq[[i, k]] += g * diff * diff;
                    }
                }
            }
        }
        let mut variances = model.variances.clone();
        for i in 0..n {
            if occ[i] > 1e-12 {
                for k in 0..d {
                    variances[[i, k]] = (sq[[i, k]] / occ[i]).max(VARIANCE_FLOOR);
                }
            }
        }
        let mut transitions = model.transitions.clone();
        for i in 0..n.saturating_sub(1) {
            let total = stay[i] + adv[i];
            if total > 1e-12 {
                transitions[[i, i]] = stay[i] / total;
                transitions[[i, i + 1]] = adv[i] / total;
            }
        }
        model = PhaseHmm {
            label,
            transitions,
            means,
            variances,
        };
    }
    if history.len() >= cfg.max_iter.max(1) {
        let ll: f64 = runs.iter().map(|r| model.forward_log_likelihood(r)).sum();
        history.push(ll);
    }
    Ok(HmmFit {
        model,
        log_likelihoods: history,
    })
}

/// Frame label per frame by comparing, for every model, the forward
/// log-likelihood of the trailing `window` frames (shorter at the start).
/// Ties go to the earliest label in canonical order.
pub fn classify_frames_hmm(models: &[PhaseHmm], x: &[FrameFeatures], window: usize) -> Result<Vec<GestureLabel>> {
    if window < 1 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("no HMMs to classify with".into()));
    }
    let mut order: Vec<&PhaseHmm> = models.iter().collect();
    order.sort_by_key(|m| m.label);
    let emissions: Vec<Array2<f64>> = order.iter().map(|m| m.emissions(x)).collect();
    let log_as: Vec<Array2<f64>> = order.iter().map(|m| m.transitions.mapv(f64::ln)).collect();

    let mut out = Vec::with_capacity(x.len());
    let mut alpha = Vec::new();
    let mut next = Vec::new();
    for f in 0..x.len() {
        let start = (f + 1).saturating_sub(window);
        let mut best: Option<(f64, GestureLabel)> = None;
        for ((m, e), log_a) in order.iter().zip(&emissions).zip(&log_as) {
            let n = m.n_states();
            let init = m.log_init();
            alpha.clear();
            alpha.extend((0..n).map(|i| init + e[[start, i]]));
            for t in start + 1..=f {
                next.clear();
                next.extend((0..n).map(|j| {
                    e[[t, j]] + log_sum_exp((0..n).map(|i| alpha[i] + log_a[[i, j]]))
                }));
                std::mem::swap(&mut alpha, &mut next);
            }
            let score = log_sum_exp(alpha.iter().copied());
            if best.map_or(true, |(b, _)| score > b) {
                best = Some((score, m.label));
            }
        }
        out.push(best.map(|b| b.1).unwrap_or(GestureLabel::Background));
    }
    Ok(out)
}

/// Maximal same-label runs of each sequence, grouped by label.
pub fn label_runs(data: &[(Vec<FrameFeatures>, Vec<GestureLabel>)]) -> Vec<(GestureLabel, Vec<Vec<FrameFeatures>>)> {
    let mut runs: Vec<Vec<Vec<FrameFeatures>>> = vec![Vec::new(); GestureLabel::COUNT];
    for (x, y) in data {
        let mut start = 0;
        for t in 1..=y.len() {
            if t == y.len() || y[t] != y[start] {
                runs[y[start].index()].push(x[start..t].to_vec());
                start = t;
            }
        }
    }
    GestureLabel::ALL.iter().copied().zip(runs).collect()
}

/// One HMM per gesture label plus the scoring window.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmClassifier {
    pub models: Vec<PhaseHmm>,
    pub window: usize,
}

impl HmmClassifier {
    pub fn classify(&self, x: &[FrameFeatures]) -> Result<Vec<GestureLabel>> {
        classify_frames_hmm(&self.models, x, self.window)
    }
}

/// Trains one HMM for each of the 8 labels; every label needs at least one run.
pub fn train_hmm_classifier(
    data: &[(Vec<FrameFeatures>, Vec<GestureLabel>)],
    cfg: &HmmConfig,
) -> Result<(HmmClassifier, Vec<HmmFit>)> {
    let fits: Vec<HmmFit> = label_runs(data)
        .into_par_iter()
        .map(|(label, runs)| train_hmm(label, &runs, cfg))
        .collect::<Result<_>>()?;
    Ok((
        HmmClassifier {
            models: fits.iter().map(|f| f.model.clone()).collect(),
            window: cfg.window,
        },
        fits,
    ))
}
