//! Exact chain inference in log space.
//!
//! Forward and backward messages are stored as log values. Each step shifts
//! the incoming message by its maximum before exponentiating and multiplies
//! with the pre-exponentiated (max-shifted) transition table, so a step costs
//! `S` exponentials and one `S × S` product instead of `S²` exponentials.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::{HiddenStatePartition, LdcrfModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::skeleton::GestureLabel;

/// Log potentials of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPotentials {
    /// `T × S`
    pub node: Array2<f64>,
    /// `S × S`, position independent, indexed `[from][to]`
    pub edge: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub log_partition: f64,
    /// `T × S`
    pub node_marginals: Array2<f64>,
    /// `(T−1) × S × S`; slice `t` is the joint of positions `t` and `t+1`
    pub edge_marginals: Array3<f64>,
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn build_potentials(model: &LdcrfModel, x: &FeatureMatrix) -> Result<ChainPotentials> {
    if x.dim() != model.feature_dim {
        return Err(Error::Dimension(format!(
            "feature rows have {} columns, model expects {}",
            x.dim(),
            model.feature_dim
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("empty feature matrix".into()));
    }
    Ok(ChainPotentials {
        node: x.rows.dot(&model.state_weights.t()),
        edge: model.transition_weights.clone(),
    })
}

/// `exp(edge − shift)` with `shift` the largest finite edge weight.
pub(crate) struct EdgeTable {
    exp: Array2<f64>,
    shift: f64,
}

impl EdgeTable {
    pub(crate) fn new(edge: &Array2<f64>) -> Self {
        let shift = edge
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };
        EdgeTable {
            exp: edge.mapv(|v| (v - shift).exp()),
            shift,
        }
    }
}

/// Forward/backward log messages of one chain.
pub(crate) struct Lattice {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub log_z: f64,
}

pub(crate) fn lattice(node: ArrayView2<f64>, edges: &EdgeTable) -> Lattice {
    let (t_len, s) = node.dim();
    let ee = &edges.exp;
    let mut alpha = Array2::<f64>::zeros((t_len, s));
    let mut beta = Array2::<f64>::zeros((t_len, s));
    alpha.row_mut(0).assign(&node.row(0));

    let mut p = vec![0.0; s];
    let mut acc = vec![0.0; s];
    for t in 1..t_len {
        let prev = alpha.row(t - 1).to_vec();
        let m = max_of(&prev);
        if m == f64::NEG_INFINITY {
            alpha.row_mut(t).fill(f64::NEG_INFINITY);
            continue;
        }
        for (pi, a) in p.iter_mut().zip(&prev) {
            *pi = (a - m).exp();
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (a, &e) in acc.iter_mut().zip(ee.row(i)) {
                *a += pi * e;
            }
        }
        let base = m + edges.shift;
        for j in 0..s {
            alpha[[t, j]] = node[[t, j]] + base + acc[j].ln();
        }
    }

    for t in (0..t_len.saturating_sub(1)).rev() {
        let w: Vec<f64> = (0..s).map(|j| node[[t + 1, j]] + beta[[t + 1, j]]).collect();
        let m = max_of(&w);
        if m == f64::NEG_INFINITY {
            beta.row_mut(t).fill(f64::NEG_INFINITY);
            continue;
        }
        for (pj, wj) in p.iter_mut().zip(&w) {
            *pj = (wj - m).exp();
        }
        let base = m + edges.shift;
        for i in 0..s {
            let sum: f64 = ee.row(i).iter().zip(&p).map(|(e, pj)| e * pj).sum();
            beta[[t, i]] = base + sum.ln();
        }
    }

    let log_z = log_sum_exp(alpha.row(t_len - 1).iter().copied());
    Lattice { alpha, beta, log_z }
}

impl Lattice {
    /// Rows are normalized individually (each row's log-sum is `log_z` in
    /// exact arithmetic).
    pub(crate) fn node_marginals(&self) -> Array2<f64> {
        let mut q = &self.alpha + &self.beta;
        for mut row in q.outer_iter_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        q
    }

    /// Calls `visit(t, slice)` with the normalized edge marginal of positions
    /// `t` and `t + 1`.
    pub(crate) fn for_each_edge_slice(
        &self,
        node: ArrayView2<f64>,
        edges: &EdgeTable,
        mut visit: impl FnMut(usize, &Array2<f64>),
    ) {
        let (t_len, s) = node.dim();
        let mut slice = Array2::<f64>::zeros((s, s));
        let mut a = vec![0.0; s];
        let mut b = vec![0.0; s];
        for t in 0..t_len.saturating_sub(1) {
            let ma = max_of(self.alpha.row(t).as_slice().unwrap());
            let w: Vec<f64> = (0..s).map(|j| node[[t + 1, j]] + self.beta[[t + 1, j]]).collect();
            let mb = max_of(&w);
            for i in 0..s {
                a[i] = (self.alpha[[t, i]] - ma).exp();
                b[i] = (w[i] - mb).exp();
            }
            let mut total = 0.0;
            for i in 0..s {
                let row = edges.exp.row(i);
                let mut out = slice.row_mut(i);
                for j in 0..s {
                    out[j] = a[i] * row[j] * b[j];
                    total += out[j];
                }
            }
            slice.mapv_inplace(|v| v / total);
            visit(t, &slice);
        }
    }

    /// Sum over positions of the edge marginals.
    pub(crate) fn expected_transitions(&self, node: ArrayView2<f64>, edges: &EdgeTable) -> Array2<f64> {
        let s = node.ncols();
        let mut total = Array2::<f64>::zeros((s, s));
        self.for_each_edge_slice(node, edges, |_, slice| total += slice);
        total
    }
}

/// Exact log partition function and node/edge marginals.
pub fn forward_backward(p: &ChainPotentials) -> InferenceResult {
    let (t_len, s) = p.node.dim();
    let edges = EdgeTable::new(&p.edge);
    let lat = lattice(p.node.view(), &edges);
    let mut edge_marginals = Array3::<f64>::zeros((t_len.saturating_sub(1), s, s));
    lat.for_each_edge_slice(p.node.view(), &edges, |t, slice| {
        edge_marginals.index_axis_mut(Axis(0), t).assign(slice);
    });
    InferenceResult {
        log_partition: lat.log_z,
        node_marginals: lat.node_marginals(),
        edge_marginals,
    }
}

fn sum_label_blocks(node_marginals: &Array2<f64>, partition: &HiddenStatePartition) -> Result<Array2<f64>> {
    if node_marginals.ncols() != partition.total_states() {
        return Err(Error::Dimension(format!(
            "marginals over {} states, partition has {}",
            node_marginals.ncols(),
            partition.total_states()
        )));
    }
    let t_len = node_marginals.nrows();
    let mut out = Array2::<f64>::zeros((t_len, partition.n_labels()));
    for t in 0..t_len {
        for l in 0..partition.n_labels() {
            out[[t, l]] = partition.states_of(l).map(|h| node_marginals[[t, h]]).sum();
        }
    }
    Ok(out)
}

/// Per-frame label probabilities: hidden marginals summed over each label's block.
/// Columns follow `partition.labels()`.
pub fn label_marginals(r: &InferenceResult, partition: &HiddenStatePartition) -> Result<Array2<f64>> {
    sum_label_blocks(&r.node_marginals, partition)
}

/// Frame-wise argmax of the label marginals; ties go to the earliest label
/// in the partition's alphabet.
pub fn predict_from_potentials(
    p: &ChainPotentials,
    partition: &HiddenStatePartition,
) -> Result<Vec<GestureLabel>> {
    let edges = EdgeTable::new(&p.edge);
    let lat = lattice(p.node.view(), &edges);
    let probs = sum_label_blocks(&lat.node_marginals(), partition)?;
    Ok(probs
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            partition.labels()[best]
        })
        .collect())
}

pub fn predict_frames(model: &LdcrfModel, x: &FeatureMatrix) -> Result<Vec<GestureLabel>> {
    predict_from_potentials(&build_potentials(model, x)?, &model.partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_crf_partition;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_potentials(t_len: usize, s: usize, rng: &mut ChaCha8Rng) -> ChainPotentials {
        ChainPotentials {
            node: Array2::from_shape_fn((t_len, s), |_| rng.gen_range(-2.0..2.0)),
            edge: Array2::from_shape_fn((s, s), |_| rng.gen_range(-2.0..2.0)),
        }
    }

    /// All hidden paths with their log scores.
    fn enumerate(p: &ChainPotentials) -> Vec<(Vec<usize>, f64)> {
        let (t_len, s) = p.node.dim();
        let mut out = Vec::new();
        let mut path = vec![0usize; t_len];
        loop {
            let mut score = 0.0;
            for t in 0..t_len {
                score += p.node[[t, path[t]]];
                if t > 0 {
                    score += p.edge[[path[t - 1], path[t]]];
                }
            }
            out.push((path.clone(), score));
            let mut k = 0;
            while k < t_len {
                path[k] += 1;
                if path[k] < s {
                    break;
                }
                path[k] = 0;
                k += 1;
            }
            if k == t_len {
                return out;
            }
        }
    }

    #[test]
    fn uniform_single_frame() {
        let p = ChainPotentials {
            node: Array2::zeros((1, 2)),
            edge: Array2::zeros((2, 2)),
        };
        let r = forward_backward(&p);
        assert!((r.log_partition - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.node_marginals.row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(r.edge_marginals.len(), 0);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_potentials(3, 4, &mut rng);
        let paths = enumerate(&p);
        assert_eq!(paths.len(), 64);
        let lz = log_sum_exp(paths.iter().map(|(_, s)| *s));
        let r = forward_backward(&p);
        assert!((r.log_partition - lz).abs() < 1e-9);
        for t in 0..3 {
            for h in 0..4 {
                let m: f64 = paths
                    .iter()
                    .filter(|(path, _)| path[t] == h)
                    .map(|(_, s)| (s - lz).exp())
                    .sum();
                assert!((r.node_marginals[[t, h]] - m).abs() < 1e-9);
            }
        }
        for t in 0..2 {
            let slice = r.edge_marginals.index_axis(Axis(0), t);
            assert!((slice.sum() - 1.0).abs() < 1e-9);
            for i in 0..4 {
                let row: f64 = slice.row(i).sum();
                assert!((row - r.node_marginals[[t, i]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn potentials_are_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let part = make_crf_partition(&GestureLabel::ALL[..3]).unwrap();
        let model = LdcrfModel::random(part, 4, 1.0, &mut rng);
        let x = FeatureMatrix {
            rows: Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0)),
            taps: vec![],
        };
        let x2 = FeatureMatrix {
            rows: &x.rows * 2.0,
            taps: vec![],
        };
        let p1 = build_potentials(&model, &x).unwrap();
        let p2 = build_potentials(&model, &x2).unwrap();
        for (a, b) in p1.node.iter().zip(p2.node.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert_eq!(p1.edge, p2.edge);
        assert_eq!(p1.edge, model.transition_weights);

        let bad = FeatureMatrix {
            rows: Array2::zeros((5, 3)),
            taps: vec![],
        };
        assert!(build_potentials(&model, &bad).is_err());
    }

    #[test]
    fn single_feature_base_case_and_zero_weights() {
        let part = HiddenStatePartition::new(GestureLabel::ALL[..2].to_vec(), 2).unwrap();
        let mut model = LdcrfModel::zeros(part, 1);
        let x = FeatureMatrix {
            rows: Array2::ones((1, 1)),
            taps: vec![],
        };
        let p = build_potentials(&model, &x).unwrap();
        assert!(p.node.iter().chain(p.edge.iter()).all(|&v| v == 0.0));
        let w = [0.5, -1.0, 2.0, 0.25];
        for (h, &wh) in w.iter().enumerate() {
            model.state_weights[[h, 0]] = wh;
        }
        let p = build_potentials(&model, &x).unwrap();
        assert_eq!(p.node.row(0).to_vec(), w.to_vec());
    }

    #[test]
    fn label_marginals_sum_blocks() {
        let part = HiddenStatePartition::full(3).unwrap();
        let r = InferenceResult {
            log_partition: 0.0,
            node_marginals: Array2::from_elem((2, 24), 1.0 / 24.0),
            edge_marginals: Array3::zeros((1, 24, 24)),
        };
        let lm = label_marginals(&r, &part).unwrap();
        assert!(lm.iter().all(|&v| (v - 0.125).abs() < 1e-15));
        let crf = make_crf_partition(&GestureLabel::ALL).unwrap();
        assert!(label_marginals(&r, &crf).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_potentials(6, 8, &mut rng);
        let r = forward_backward(&p);
        let lm = label_marginals(&r, &crf).unwrap();
        assert_eq!(lm, r.node_marginals);
        for row in lm.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_model_predicts_background() {
        let part = HiddenStatePartition::full(3).unwrap();
        let model = LdcrfModel::zeros(part, 2);
        let x = FeatureMatrix {
            rows: Array2::ones((7, 2)),
            taps: vec![],
        };
        let pred = predict_frames(&model, &x).unwrap();
        assert_eq!(pred, vec![GestureLabel::Background; 7]);
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let part = HiddenStatePartition::full(2).unwrap();
        for _ in 0..20 {
            let p = random_potentials(10, 16, &mut rng);
            let c = rng.gen_range(-50.0..50.0);
            let shifted = ChainPotentials {
                node: &p.node + c,
                edge: p.edge.clone(),
            };
            assert_eq!(
                predict_from_potentials(&p, &part).unwrap(),
                predict_from_potentials(&shifted, &part).unwrap()
            );
        }
    }

    #[test]
    fn long_chains_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_potentials(5000, 6, &mut rng);
        p.node *= 40.0;
        let r = forward_backward(&p);
        assert!(r.log_partition.is_finite());
        for row in r.node_marginals.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}
