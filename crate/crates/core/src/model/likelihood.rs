use ndarray::Array2;
use rayon::prelude::*;

use super::inference::{build_potentials, lattice, EdgeTable};
use super::LdcrfModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::skeleton::GestureLabel;

pub const DEFAULT_SIGMA2: f64 = 10.0;

/// One training example: observations with their frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub features: FeatureMatrix,
    pub labels: Vec<GestureLabel>,
}

/// Node potentials with every hidden state outside the frame's label block
/// set to −∞.
fn masked_node(model: &LdcrfModel, node: &Array2<f64>, labels: &[GestureLabel]) -> Result<Array2<f64>> {
    let idx = model.partition.label_indices(labels)?;
    let mut masked = Array2::from_elem(node.dim(), f64::NEG_INFINITY);
    for (t, &l) in idx.iter().enumerate() {
        for h in model.partition.states_of(l) {
            masked[[t, h]] = node[[t, h]];
        }
    }
    Ok(masked)
}

fn check_lengths(x: &FeatureMatrix, labels: &[GestureLabel]) -> Result<()> {
    if labels.len() != x.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} feature rows",
            labels.len(),
            x.len()
        )));
    }
    Ok(())
}

/// `log P(labels | x)`: log of the restricted partition sum (hidden paths
/// confined to each frame's label block) minus the unrestricted one.
pub fn sequence_log_likelihood(model: &LdcrfModel, x: &FeatureMatrix, labels: &[GestureLabel]) -> Result<f64> {
    check_lengths(x, labels)?;
    let pot = build_potentials(model, x)?;
    let edges = EdgeTable::new(&pot.edge);
    let full = lattice(pot.node.view(), &edges);
    let masked = masked_node(model, &pot.node, labels)?;
    let restricted = lattice(masked.view(), &edges);
    Ok(restricted.log_z - full.log_z)
}

struct SequenceTerms {
    log_likelihood: f64,
    state_grad: Array2<f64>,
    transition_grad: Array2<f64>,
}

fn sequence_terms(model: &LdcrfModel, seq: &TrainingSequence) -> Result<SequenceTerms> {
    check_lengths(&seq.features, &seq.labels)?;
    let pot = build_potentials(model, &seq.features)?;
    let edges = EdgeTable::new(&pot.edge);
    let full = lattice(pot.node.view(), &edges);
    let masked = masked_node(model, &pot.node, &seq.labels)?;
    let restricted = lattice(masked.view(), &edges);

    // restricted minus unrestricted expectations
    let diff = restricted.node_marginals() - full.node_marginals();
    let state_grad = diff.t().dot(&seq.features.rows);
    let transition_grad = restricted.expected_transitions(masked.view(), &edges)
        - full.expected_transitions(pot.node.view(), &edges);
    Ok(SequenceTerms {
        log_likelihood: restricted.log_z - full.log_z,
        state_grad,
        transition_grad,
    })
}

/// Penalized conditional log-likelihood of `batch` and its gradient with
/// respect to `model.params()`.
///
/// The objective is `Σ log P(y|x) − ‖θ‖²/(2σ²)`. Per-sequence terms may be
/// computed in parallel; they are summed in batch order.
pub fn log_likelihood_and_gradient(
    model: &LdcrfModel,
    batch: &[TrainingSequence],
    sigma2: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("sigma2 must be positive".into()));
    }
    let terms: Vec<SequenceTerms> = batch
        .par_iter()
        .map(|seq| sequence_terms(model, seq))
        .collect::<Result<_>>()?;

    let s = model.total_states();
    let mut objective = 0.0;
    let mut state_grad = Array2::<f64>::zeros((s, model.feature_dim));
    let mut transition_grad = Array2::<f64>::zeros((s, s));
    for t in &terms {
        objective += t.log_likelihood;
        state_grad += &t.state_grad;
        transition_grad += &t.transition_grad;
    }

    let theta = model.params();
    objective -= theta.iter().map(|w| w * w).sum::<f64>() / (2.0 * sigma2);
    let grad = state_grad
        .iter()
        .chain(transition_grad.iter())
        .zip(&theta)
        .map(|(g, w)| g - w / sigma2)
        .collect();
    Ok((objective, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::inference::log_sum_exp;
    use crate::model::{make_crf_partition, HiddenStatePartition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        labels: &[GestureLabel],
        spl: usize,
        t_len: usize,
        dim: usize,
    ) -> (LdcrfModel, TrainingSequence) {
        let part = HiddenStatePartition::new(labels.to_vec(), spl).unwrap();
        let model = LdcrfModel::random(part, dim, 1.0, rng);
        let seq = TrainingSequence {
            features: FeatureMatrix {
                rows: Array2::from_shape_fn((t_len, dim), |_| rng.gen_range(-1.0..1.0)),
                taps: vec![],
            },
            labels: (0..t_len).map(|_| labels[rng.gen_range(0..labels.len())]).collect(),
        };
        (model, seq)
    }

    /// Direct enumeration of hidden paths, split into label-consistent and all.
    fn brute_force(model: &LdcrfModel, seq: &TrainingSequence) -> (f64, f64) {
        let pot = build_potentials(model, &seq.features).unwrap();
        let (t_len, s) = pot.node.dim();
        let mut all = Vec::new();
        let mut ok = Vec::new();
        for code in 0..s.pow(t_len as u32) {
            let path: Vec<usize> = (0..t_len).map(|t| code / s.pow(t as u32) % s).collect();
            let mut score = 0.0;
            for t in 0..t_len {
                score += pot.node[[t, path[t]]];
                if t > 0 {
                    score += pot.edge[[path[t - 1], path[t]]];
                }
            }
            all.push(score);
            if path.iter().zip(&seq.labels).all(|(&h, &y)| model.partition.label_of(h) == y) {
                ok.push(score);
            }
        }
        (log_sum_exp(ok), log_sum_exp(all))
    }

    #[test]
    fn uniform_two_label_case() {
        let part = make_crf_partition(&GestureLabel::ALL[..2]).unwrap();
        let model = LdcrfModel::zeros(part, 3);
        let x = FeatureMatrix {
            rows: Array2::ones((1, 3)),
            taps: vec![],
        };
        let ll = sequence_log_likelihood(&model, &x, &[GestureLabel::LeftRise]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_restricted_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (labels, spl) in [(&GestureLabel::ALL[..2], 3), (&GestureLabel::ALL[..3], 2), (&GestureLabel::ALL[..5], 1)] {
            for t_len in 1..=4 {
                let (model, seq) = random_instance(&mut rng, labels, spl, t_len, 3);
                let (r, z) = brute_force(&model, &seq);
                let ll = sequence_log_likelihood(&model, &seq.features, &seq.labels).unwrap();
                assert!((ll - (r - z)).abs() < 1e-9, "{ll} vs {}", r - z);
                assert!(ll <= 0.0);
            }
        }
    }

    #[test]
    fn single_frame_label_sums_add_to_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (model, seq) = random_instance(&mut rng, &GestureLabel::ALL, 3, 1, 4);
        let total: f64 = GestureLabel::ALL
            .iter()
            .map(|&y| sequence_log_likelihood(&model, &seq.features, &[y]).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut model, seq) = random_instance(&mut rng, &GestureLabel::ALL[..3], 2, 5, 3);
        let (_, seq2) = random_instance(&mut rng, &GestureLabel::ALL[..3], 2, 4, 3);
        let batch = vec![seq, seq2];
        let (_, grad) = log_likelihood_and_gradient(&model, &batch, 2.0).unwrap();
        let theta = model.params();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut tp = theta.clone();
            tp[k] += h;
            model.set_params(&tp).unwrap();
            let fp = log_likelihood_and_gradient(&model, &batch, 2.0).unwrap().0;
            tp[k] -= 2.0 * h;
            model.set_params(&tp).unwrap();
            let fm = log_likelihood_and_gradient(&model, &batch, 2.0).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - grad[k]).abs() < 1e-8, "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn zero_theta_prior_gradient_vanishes_and_order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (model, a) = random_instance(&mut rng, &GestureLabel::ALL[..2], 2, 4, 2);
        let (_, b) = random_instance(&mut rng, &GestureLabel::ALL[..2], 2, 6, 2);
        let zero = LdcrfModel::zeros(model.partition.clone(), 2);
        let batch = vec![a.clone(), b.clone()];
        let (f1, g1) = log_likelihood_and_gradient(&zero, &batch, 1.0).unwrap();
        let (f2, g2) = log_likelihood_and_gradient(&zero, &batch, 1e6).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-12);
        }
        let (fa, _) = log_likelihood_and_gradient(&model, &[a.clone(), b.clone()], 10.0).unwrap();
        let (fb, _) = log_likelihood_and_gradient(&model, &[b, a], 10.0).unwrap();
        assert!((fa - fb).abs() < 1e-12);
        assert!(log_likelihood_and_gradient(&model, &[], 10.0).is_err());
    }

    #[test]
    fn within_block_relabeling_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (model, seq) = random_instance(&mut rng, &GestureLabel::ALL[..3], 3, 6, 4);
        // swap hidden states 3 and 5 (both owned by label 1)
        let perm = |h: usize| match h {
            3 => 5,
            5 => 3,
            h => h,
        };
        let mut swapped = model.clone();
        let s = model.total_states();
        for h in 0..s {
            swapped.state_weights.row_mut(perm(h)).assign(&model.state_weights.row(h));
            for g in 0..s {
                swapped.transition_weights[[perm(h), perm(g)]] = model.transition_weights[[h, g]];
            }
        }
        let a = sequence_log_likelihood(&model, &seq.features, &seq.labels).unwrap();
        let b = sequence_log_likelihood(&swapped, &seq.features, &seq.labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (model, seq) = random_instance(&mut rng, &GestureLabel::ALL[..2], 1, 3, 2);
        assert!(sequence_log_likelihood(&model, &seq.features, &seq.labels[..2]).is_err());
        assert!(sequence_log_likelihood(&model, &seq.features, &[GestureLabel::Other; 3]).is_err());
    }
}
