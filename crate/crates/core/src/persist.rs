//! Self-describing JSON model files.
//!
//! Every file carries a `format` tag and a `version`; loading validates
//! shapes and values before handing out a model.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{Error, Result};
use crate::features::{stacked_dim, validate_taps};
use crate::hmm::{HmmClassifier, PhaseHmm};
use crate::model::{HiddenStatePartition, LdcrfModel};
use crate::skeleton::GestureLabel;

pub const CHAIN_FORMAT: &str = "ldcrf-model";
pub const HMM_FORMAT: &str = "phase-hmm-set";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ChainFile {
    format: String,
    version: u32,
    method: String,
    labels: Vec<String>,
    states_per_label: usize,
    feature_dim: usize,
    taps: Vec<usize>,
    state_weights: Vec<Vec<f64>>,
    transition_weights: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HmmEntry {
    label: String,
    transitions: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HmmFile {
    format: String,
    version: u32,
    window: usize,
    models: Vec<HmmEntry>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// A trained recognizer together with what is needed to feed it.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Chain {
        method: Method,
        model: LdcrfModel,
        taps: Vec<usize>,
    },
    Hmm(HmmClassifier),
}

impl SavedModel {
    pub fn method(&self) -> Method {
        match self {
            SavedModel::Chain { method, .. } => *method,
            SavedModel::Hmm(_) => Method::Hmm,
        }
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::ModelFormat(format!("{name}: ragged rows")));
    }
    Array2::from_shape_vec((n, m), rows.concat()).map_err(|e| Error::ModelFormat(format!("{name}: {e}")))
}

fn label(s: &str) -> Result<GestureLabel> {
    s.parse().map_err(|e: Error| Error::ModelFormat(e.message()))
}

pub fn to_json(saved: &SavedModel) -> Result<String> {
    let text = match saved {
        SavedModel::Chain { method, model, taps } => {
            model.validate()?;
            serde_json::to_string_pretty(&ChainFile {
                format: CHAIN_FORMAT.into(),
                version: VERSION,
                method: method.to_string(),
                labels: model.partition.labels().iter().map(|l| l.to_string()).collect(),
                states_per_label: model.partition.states_per_label(),
                feature_dim: model.feature_dim,
                taps: taps.clone(),
                state_weights: rows(&model.state_weights),
                transition_weights: rows(&model.transition_weights),
            })
        }
        SavedModel::Hmm(clf) => {
            for m in &clf.models {
                m.validate()?;
            }
            serde_json::to_string_pretty(&HmmFile {
                format: HMM_FORMAT.into(),
                version: VERSION,
                window: clf.window,
                models: clf
                    .models
                    .iter()
                    .map(|m| HmmEntry {
                        label: m.label.to_string(),
                        transitions: rows(&m.transitions),
                        means: rows(&m.means),
                        variances: rows(&m.variances),
                    })
                    .collect(),
            })
        }
    };
    text.map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn from_json(text: &str) -> Result<SavedModel> {
    let bad = |e: serde_json::Error| Error::ModelFormat(e.to_string());
    let header: Header = serde_json::from_str(text).map_err(bad)?;
    if header.version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {}", header.version)));
    }
    match header.format.as_str() {
        CHAIN_FORMAT => {
            let f: ChainFile = serde_json::from_str(text).map_err(bad)?;
            let method: Method = f.method.parse().map_err(|e: Error| Error::ModelFormat(e.message()))?;
            if method == Method::Hmm {
                return Err(Error::ModelFormat("chain model file claims method hmm".into()));
            }
            validate_taps(&f.taps)?;
            if stacked_dim(f.taps.len()) != f.feature_dim {
                return Err(Error::ModelFormat(format!(
                    "feature_dim {} does not match {} taps",
                    f.feature_dim,
                    f.taps.len()
                )));
            }
            let labels = f.labels.iter().map(|s| label(s)).collect::<Result<Vec<_>>>()?;
            let model = LdcrfModel {
                partition: HiddenStatePartition::new(labels, f.states_per_label)?,
                feature_dim: f.feature_dim,
                state_weights: matrix("state_weights", &f.state_weights)?,
                transition_weights: matrix("transition_weights", &f.transition_weights)?,
            };
            model.validate()?;
            Ok(SavedModel::Chain {
                method,
                model,
                taps: f.taps,
            })
        }
        HMM_FORMAT => {
            let f: HmmFile = serde_json::from_str(text).map_err(bad)?;
            if f.window == 0 || f.models.is_empty() {
                return Err(Error::ModelFormat("empty HMM set or zero window".into()));
            }
            let models = f
                .models
                .iter()
                .map(|e| {
                    let m = PhaseHmm {
                        label: label(&e.label)?,
                        transitions: matrix("transitions", &e.transitions)?,
                        means: matrix("means", &e.means)?,
                        variances: matrix("variances", &e.variances)?,
                    };
                    m.validate()?;
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SavedModel::Hmm(HmmClassifier {
                models,
                window: f.window,
            }))
        }
        other => Err(Error::ModelFormat(format!("unknown format {other:?}"))),
    }
}

pub fn save(saved: &SavedModel, path: &Path) -> Result<()> {
    fs::write(path, to_json(saved)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SavedModel> {
    from_json(&fs::read_to_string(path)?)
}
