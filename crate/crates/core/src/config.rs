//! Plain `key = value` run configuration shared by all commands.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown or repeated keys are rejected.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{validate_taps, DEFAULT_TAPS};
use crate::hmm::HmmConfig;
use crate::model::{Optimizer, TrainConfig};
use crate::segmentation::DEFAULT_MEDIAN_WINDOW;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ldcrf,
    Crf,
    Hmm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ldcrf, Method::Crf, Method::Hmm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ldcrf => "ldcrf",
            Method::Crf => "crf",
            Method::Hmm => "hmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected ldcrf, crf or hmm)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory read by `train` and `experiment`.
    pub dataset: String,
    pub synth: SynthConfig,
    pub taps: Vec<usize>,
    /// LDCRF hidden states per label; the CRF always uses one.
    pub states_per_label: usize,
    pub sigma2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub optimizer: Optimizer,
    pub lbfgs_memory: usize,
    pub init_scale: f64,
    pub median_window: usize,
    pub hmm: HmmConfig,
    pub methods: Vec<Method>,
    /// 0 uses all available cores.
    pub workers: usize,
    pub percent_tables: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            seed: 1,
            dataset: "data".into(),
            synth: SynthConfig::default(),
            taps: DEFAULT_TAPS.to_vec(),
            states_per_label: train.states_per_label,
            sigma2: train.sigma2,
            max_iter: train.max_iter,
            tol: train.tol,
            optimizer: train.optimizer,
            lbfgs_memory: train.memory,
            init_scale: train.init_scale,
            median_window: DEFAULT_MEDIAN_WINDOW,
            hmm: HmmConfig::default(),
            methods: Method::ALL.to_vec(),
            workers: 0,
            percent_tables: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "seed",
        "dataset",
        "synth.subjects",
        "synth.pointing_per_subject",
        "synth.targets",
        "synth.others_per_subject",
        "synth.controls_per_subject",
        "synth.gestures_per_sequence",
        "synth.fps",
        "synth.noise",
        "taps",
        "states_per_label",
        "sigma2",
        "max_iter",
        "tol",
        "optimizer",
        "lbfgs_memory",
        "init_scale",
        "median_window",
        "hmm.states",
        "hmm.max_iter",
        "hmm.tol",
        "hmm.window",
        "methods",
        "workers",
        "percent_tables",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "dataset" => self.dataset = v.to_owned(),
            "synth.subjects" => self.synth.subjects = parse_value(key, v)?,
            "synth.pointing_per_subject" => self.synth.pointing_per_subject = parse_value(key, v)?,
            "synth.targets" => self.synth.targets = parse_value(key, v)?,
            "synth.others_per_subject" => self.synth.others_per_subject = parse_value(key, v)?,
            "synth.controls_per_subject" => self.synth.controls_per_subject = parse_value(key, v)?,
            "synth.gestures_per_sequence" => self.synth.gestures_per_sequence = parse_value(key, v)?,
            "synth.fps" => self.synth.fps = parse_value(key, v)?,
            "synth.noise" => self.synth.noise = parse_value(key, v)?,
            "taps" => self.taps = parse_list(key, v)?,
            "states_per_label" => self.states_per_label = parse_value(key, v)?,
            "sigma2" => self.sigma2 = parse_value(key, v)?,
            "max_iter" => self.max_iter = parse_value(key, v)?,
            "tol" => self.tol = parse_value(key, v)?,
            "optimizer" => self.optimizer = v.parse().map_err(|_| Error::Config(format!("{key}: unknown optimizer {v:?}")))?,
            "lbfgs_memory" => self.lbfgs_memory = parse_value(key, v)?,
            "init_scale" => self.init_scale = parse_value(key, v)?,
            "median_window" => self.median_window = parse_value(key, v)?,
            "hmm.states" => self.hmm.n_states = parse_value(key, v)?,
            "hmm.max_iter" => self.hmm.max_iter = parse_value(key, v)?,
            "hmm.tol" => self.hmm.tol = parse_value(key, v)?,
            "hmm.window" => self.hmm.window = parse_value(key, v)?,
            "methods" => self.methods = parse_list(key, v)?,
            "workers" => self.workers = parse_value(key, v)?,
            "percent_tables" => self.percent_tables = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("dataset", self.dataset.clone()),
            ("synth.subjects", self.synth.subjects.to_string()),
            ("synth.pointing_per_subject", self.synth.pointing_per_subject.to_string()),
            ("synth.targets", self.synth.targets.to_string()),
            ("synth.others_per_subject", self.synth.others_per_subject.to_string()),
            ("synth.controls_per_subject", self.synth.controls_per_subject.to_string()),
            ("synth.gestures_per_sequence", self.synth.gestures_per_sequence.to_string()),
            ("synth.fps", self.synth.fps.to_string()),
            ("synth.noise", self.synth.noise.to_string()),
            ("taps", join(&self.taps)),
            ("states_per_label", self.states_per_label.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("tol", self.tol.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("lbfgs_memory", self.lbfgs_memory.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("median_window", self.median_window.to_string()),
            ("hmm.states", self.hmm.n_states.to_string()),
            ("hmm.max_iter", self.hmm.max_iter.to_string()),
            ("hmm.tol", self.hmm.tol.to_string()),
            ("hmm.window", self.hmm.window.to_string()),
            ("methods", join(&self.methods)),
            ("workers", self.workers.to_string()),
            ("percent_tables", self.percent_tables.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        validate_taps(&self.taps).map_err(|e| Error::Config(format!("taps: {}", e.message())))?;
        self.synth
            .validate()
            .map_err(|e| Error::Config(format!("synth: {}", e.message())))?;
        if self.states_per_label == 0 {
            return bad("states_per_label must be positive".into());
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return bad("sigma2 must be positive".into());
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) || !(self.hmm.tol.is_finite() && self.hmm.tol >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be non-negative".into());
        }
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return bad(format!("median_window must be odd, got {}", self.median_window));
        }
        if self.hmm.n_states == 0 || self.hmm.window == 0 {
            return bad("hmm.states and hmm.window must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return bad("methods listed twice".into());
        }
        if self.dataset.contains('\n') {
            return bad("dataset path must be a single line".into());
        }
        Ok(())
    }

    /// Training settings for `method`; the CRF forces one state per label.
    pub fn train_config(&self, method: Method) -> TrainConfig {
        TrainConfig {
            states_per_label: if method == Method::Crf { 1 } else { self.states_per_label },
            sigma2: self.sigma2,
            max_iter: self.max_iter,
            tol: self.tol,
            optimizer: self.optimizer,
            memory: self.lbfgs_memory,
            init_scale: self.init_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
        assert_eq!(cfg.entries().iter().map(|e| e.0).collect::<Vec<_>>(), RunConfig::KEYS.to_vec());
    }

    #[test]
    fn edited_values_round_trip() {
        let text = "# comment\nseed = 42\ntaps = 1,2\nmethods = hmm, ldcrf\nsynth.noise = 0.125\npercent_tables = true\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.taps, vec![1, 2]);
        assert_eq!(cfg.methods, vec![Method::Hmm, Method::Ldcrf]);
        assert_eq!(cfg.synth.noise, 0.125);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "sed = 1",
            "seed = x",
            "seed = 1\nseed = 2",
            "median_window = 4",
            "methods = svm",
            "taps = 0",
            "synth.subjects = 0",
            "no equals sign",
            "format = x",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn crf_gets_one_state() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train_config(Method::Crf).states_per_label, 1);
        assert_eq!(cfg.train_config(Method::Ldcrf).states_per_label, 3);
    }
}
