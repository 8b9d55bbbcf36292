//! Linear-chain latent-dynamic CRF.
//!
//! Every label owns a disjoint block of hidden states. A hidden path scores
//! `Σ_f w[h_f]·x_f + Σ_f μ[h_{f-1}][h_f]`; the probability of a label
//! sequence is the mass of all hidden paths that stay inside the labels'
//! blocks. With one state per label this is exactly a linear-chain CRF.

mod inference;
mod likelihood;
mod partition;
mod train;

pub use inference::{
    build_potentials, forward_backward, label_marginals, log_sum_exp, predict_frames,
    predict_from_potentials, ChainPotentials, InferenceResult,
};
pub use likelihood::{
    log_likelihood_and_gradient, sequence_log_likelihood, TrainingSequence, DEFAULT_SIGMA2,
};
pub use partition::{make_crf_partition, HiddenStatePartition};
pub use train::{train, IterationRecord, Optimizer, TrainConfig, TrainOutcome};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Model parameters: per-hidden-state feature weights and dense hidden-state
/// transition weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LdcrfModel {
    pub partition: HiddenStatePartition,
    pub feature_dim: usize,
    /// `total_states × feature_dim`
    pub state_weights: Array2<f64>,
    /// `total_states × total_states`, indexed `[from][to]`
    pub transition_weights: Array2<f64>,
}

impl LdcrfModel {
    pub fn zeros(partition: HiddenStatePartition, feature_dim: usize) -> Self {
        let s = partition.total_states();
        LdcrfModel {
            partition,
            feature_dim,
            state_weights: Array2::zeros((s, feature_dim)),
            transition_weights: Array2::zeros((s, s)),
        }
    }

    /// Weights drawn uniformly from `(-scale, scale)`.
    pub fn random<R: Rng>(
        partition: HiddenStatePartition,
        feature_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(partition, feature_dim);
        for w in m
            .state_weights
            .iter_mut()
            .chain(m.transition_weights.iter_mut())
        {
            *w = rng.gen_range(-scale..scale);
        }
        m
    }

    pub fn total_states(&self) -> usize {
        self.partition.total_states()
    }

    pub fn n_params(&self) -> usize {
        let s = self.total_states();
        s * self.feature_dim + s * s
    }

    /// Flattened θ: state weights row-major, then transition weights row-major.
    pub fn params(&self) -> Vec<f64> {
        self.state_weights
            .iter()
            .chain(self.transition_weights.iter())
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, model needs {}",
                theta.len(),
                self.n_params()
            )));
        }
        let split = self.state_weights.len();
        for (w, &t) in self.state_weights.iter_mut().zip(&theta[..split]) {
            *w = t;
        }
        for (w, &t) in self.transition_weights.iter_mut().zip(&theta[split..]) {
            *w = t;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.total_states();
        if self.feature_dim == 0 {
            return Err(Error::Dimension("feature_dim must be positive".into()));
        }
        if self.state_weights.dim() != (s, self.feature_dim) {
            return Err(Error::Dimension(format!(
                "state weights are {:?}, expected ({s}, {})",
                self.state_weights.dim(),
                self.feature_dim
            )));
        }
        if self.transition_weights.dim() != (s, s) {
            return Err(Error::Dimension(format!(
                "transition weights are {:?}, expected ({s}, {s})",
                self.transition_weights.dim()
            )));
        }
        if self
            .state_weights
            .iter()
            .chain(self.transition_weights.iter())
            .any(|w| !w.is_finite())
        {
            return Err(Error::InvalidData("non-finite model weight".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn params_round_trip() {
        let p = HiddenStatePartition::full(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = LdcrfModel::random(p.clone(), 5, 0.1, &mut rng);
        assert!(m.params().iter().all(|w| w.abs() < 0.1));
        let mut z = LdcrfModel::zeros(p, 5);
        z.set_params(&m.params()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_params(&[0.0; 3]).is_err());
        z.transition_weights[[0, 0]] = f64::INFINITY;
        assert!(z.validate().is_err());
    }
}
