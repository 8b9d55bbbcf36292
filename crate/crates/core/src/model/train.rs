//! Maximum conditional likelihood training.

use std::collections::VecDeque;

use super::likelihood::{log_likelihood_and_gradient, TrainingSequence, DEFAULT_SIGMA2};
use super::{HiddenStatePartition, LdcrfModel};
use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::skeleton::GestureLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Lbfgs,
    GradientAscent,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbfgs" => Ok(Optimizer::Lbfgs),
            "gradient" => Ok(Optimizer::GradientAscent),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Lbfgs => "lbfgs",
            Optimizer::GradientAscent => "gradient",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// 1 gives a plain CRF.
    pub states_per_label: usize,
    /// Gaussian prior variance.
    pub sigma2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
    pub optimizer: Optimizer,
    /// L-BFGS memory.
    pub memory: usize,
    /// Initial weights are uniform in `(-init_scale, init_scale)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            states_per_label: 3,
            sigma2: DEFAULT_SIGMA2,
            max_iter: 300,
            tol: 1e-4,
            optimizer: Optimizer::Lbfgs,
            memory: 10,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LdcrfModel,
    /// One record per accepted iterate, starting with the initial point.
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimization view of the objective: returns `(−f, −∇f)`.
struct Objective<'a> {
    model: LdcrfModel,
    data: &'a [TrainingSequence],
    sigma2: f64,
}

impl Objective<'_> {
    fn eval(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.set_params(theta)?;
        let (f, g) = log_likelihood_and_gradient(&self.model, self.data, self.sigma2)?;
        Ok((-f, g.into_iter().map(|v| -v).collect()))
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

struct Step {
    theta: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    step: f64,
}

/// Backtracking Armijo search along `dir` starting at `step`. Trial points
/// with a non-finite objective count as rejected.
fn line_search(
    obj: &mut Objective<'_>,
    theta: &[f64],
    value: f64,
    grad: &[f64],
    dir: &[f64],
    mut step: f64,
    iteration: usize,
) -> Result<Option<Step>> {
    let slope = dot(grad, dir);
    let mut saw_non_finite = false;
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
        let (v, g) = obj.eval(&trial)?;
        if v.is_finite() && g.iter().all(|x| x.is_finite()) {
            if v <= value + ARMIJO_C1 * step * slope {
                return Ok(Some(Step {
                    theta: trial,
                    value: v,
                    grad: g,
                    step,
                }));
            }
        } else {
            saw_non_finite = true;
        }
        step *= 0.5;
    }
    if saw_non_finite {
        return Err(Error::Numerical {
            iteration,
            message: "objective stayed non-finite along the search direction".into(),
        });
    }
    Ok(None)
}

/// L-BFGS two-loop recursion: returns `−H·g`.
fn lbfgs_direction(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Trains a model on `data` from a seeded random start.
///
/// The objective is non-decreasing across logged iterations; the returned
/// model carries the best objective seen.
pub fn train(cfg: &TrainConfig, data: &[TrainingSequence], seed: u64) -> Result<TrainOutcome> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training data".into()))?;
    let feature_dim = first.features.dim();
    let partition = HiddenStatePartition::new(GestureLabel::ALL.to_vec(), cfg.states_per_label)?;
    let mut rng = component_rng(seed, "ldcrf-init", cfg.states_per_label as u64);
    let init = LdcrfModel::random(partition, feature_dim, cfg.init_scale, &mut rng);

    let mut theta = init.params();
    let mut obj = Objective {
        model: init,
        data,
        sigma2: cfg.sigma2,
    };
    let (mut value, mut grad) = obj.eval(&theta)?;
    if !value.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: "non-finite objective at initialization".into(),
        });
    }
    let mut log = vec![IterationRecord {
        iteration: 0,
        objective: -value,
        grad_norm: norm(&grad),
    }];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut ascent_step = 1.0 / norm(&grad).max(1.0);

    for iteration in 1..=cfg.max_iter {
        let gnorm = norm(&grad);
        if gnorm < cfg.tol {
            converged = true;
            break;
        }
        let accepted = match cfg.optimizer {
            Optimizer::Lbfgs => {
                let mut dir = lbfgs_direction(&grad, &history);
                let mut step = if history.is_empty() { 1.0 / gnorm } else { 1.0 };
                if dot(&dir, &grad) >= 0.0 {
                    history.clear();
                    dir = grad.iter().map(|g| -g).collect();
                    step = 1.0 / gnorm;
                }
                match line_search(&mut obj, &theta, value, &grad, &dir, step, iteration)? {
                    Some(s) => Some(s),
                    None if !history.is_empty() => {
                        history.clear();
                        let dir: Vec<f64> = grad.iter().map(|g| -g).collect();
                        line_search(&mut obj, &theta, value, &grad, &dir, 1.0 / gnorm, iteration)?
                    }
                    None => None,
                }
            }
            Optimizer::GradientAscent => {
                let dir: Vec<f64> = grad.iter().map(|g| -g).collect();
                let s = line_search(&mut obj, &theta, value, &grad, &dir, ascent_step, iteration)?;
                if let Some(s) = &s {
                    ascent_step = s.step * 2.0;
                }
                s
            }
        };
        let Some(step) = accepted else {
            // no decrease possible along any tried direction
            break;
        };

        if cfg.optimizer == Optimizer::Lbfgs {
            let s: Vec<f64> = step.theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = step.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-10 {
                if history.len() == cfg.memory.max(1) {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
        }
        theta = step.theta;
        value = step.value;
        grad = step.grad;
        log.push(IterationRecord {
            iteration,
            objective: -value,
            grad_norm: norm(&grad),
        });
    }
    if norm(&grad) < cfg.tol {
        converged = true;
    }

    let mut model = obj.model;
    model.set_params(&theta)?;
    Ok(TrainOutcome {
        model,
        log,
        converged,
    })
}
