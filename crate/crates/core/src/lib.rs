//! Frame-wise pointing gesture recognition on skeleton streams with
//! latent-dynamic conditional random fields, plus CRF and HMM baselines,
//! median-filter segmentation, and a leave-one-subject-out evaluation harness.

pub mod error;
pub mod evaluation;
pub mod cli;
pub mod config;
pub mod features;
pub mod hmm;
pub mod model;
pub mod persist;
pub mod rng;
pub mod segmentation;
pub mod seqio;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
