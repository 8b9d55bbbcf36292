use std::ops::Range;

use crate::error::{Error, Result};
use crate::skeleton::GestureLabel;

/// Assignment of hidden states to labels. Each label owns a contiguous,
/// disjoint block of `states_per_label` hidden states; block order follows
/// `labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenStatePartition {
    labels: Vec<GestureLabel>,
    states_per_label: usize,
}

impl HiddenStatePartition {
    pub fn new(labels: Vec<GestureLabel>, states_per_label: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty label alphabet".into()));
        }
        if states_per_label == 0 {
            return Err(Error::InvalidArgument("states_per_label must be positive".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate label {l}")));
            }
        }
        Ok(HiddenStatePartition {
            labels,
            states_per_label,
        })
    }

    /// Full gesture alphabet with `states_per_label` hidden states each.
    pub fn full(states_per_label: usize) -> Result<Self> {
        Self::new(GestureLabel::ALL.to_vec(), states_per_label)
    }

    pub fn labels(&self) -> &[GestureLabel] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn states_per_label(&self) -> usize {
        self.states_per_label
    }

    pub fn total_states(&self) -> usize {
        self.labels.len() * self.states_per_label
    }

    /// Position in `labels()` of the label owning hidden state `h`.
    pub fn label_index_of(&self, h: usize) -> usize {
        h / self.states_per_label
    }

    pub fn label_of(&self, h: usize) -> GestureLabel {
        self.labels[self.label_index_of(h)]
    }

    /// Hidden states owned by the label at position `label_index`.
    pub fn states_of(&self, label_index: usize) -> Range<usize> {
        let start = label_index * self.states_per_label;
        start..start + self.states_per_label
    }

    pub fn index_of(&self, label: GestureLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Maps labels to alphabet positions, failing on labels outside the alphabet.
    pub fn label_indices(&self, labels: &[GestureLabel]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| {
                self.index_of(l)
                    .ok_or_else(|| Error::InvalidData(format!("label {l} not in model alphabet")))
            })
            .collect()
    }
}

/// One hidden state per label: the plain linear-chain CRF.
pub fn make_crf_partition(labels: &[GestureLabel]) -> Result<HiddenStatePartition> {
    HiddenStatePartition::new(labels.to_vec(), 1)
}
