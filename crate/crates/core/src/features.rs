//! Per-frame skeleton features and causal history stacking.
//!
//! Base layout (27 values):
//!
//! | slots   | content                                                        |
//! |---------|----------------------------------------------------------------|
//! | 0..18   | torso-relative shoulder, elbow, hand (left arm, then right), / shoulder width |
//! | 18, 19  | angle between +y and the shoulder→hand line (left, right)      |
//! | 20      | (left hand y − right hand y) / shoulder width                  |
//! | 21, 22  | hand-to-shoulder distance / shoulder width (left, right)       |
//! | 23..27  | hand azimuth, elevation w.r.t. shoulder (left az, left el, right az, right el) |

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::skeleton::{Arm, SkeletonFrame, Vec3};

pub const BASE_DIM: usize = 27;
pub const DEFAULT_TAPS: [usize; 5] = [1, 3, 5, 7, 13];
pub const MIN_SHOULDER_WIDTH: f64 = 1e-6;

/// Feature vector of one frame in the base layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub values: [f64; BASE_DIM],
}

impl FrameFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Observation matrix: one history-stacked row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub taps: Vec<usize>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Stacked row dimension for a given tap count.
pub fn stacked_dim(n_taps: usize) -> usize {
    BASE_DIM * (1 + n_taps)
}

/// Azimuth in the floor plane (0 toward the sensor, i.e. along −z) and
/// elevation of `v`. A zero vector maps to (0, 0).
pub fn azimuth_elevation(v: Vec3) -> (f64, f64) {
    let n = v.norm();
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mut az = v.x.atan2(-v.z);
    if az <= -PI {
        az = PI;
    }
    let el = (v.y / n).clamp(-1.0, 1.0).asin().clamp(-FRAC_PI_2, FRAC_PI_2);
    (az, el)
}

fn vertical_angle(v: Vec3) -> f64 {
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    (v.y / n).clamp(-1.0, 1.0).acos()
}

pub fn extract_frame_features(frame: &SkeletonFrame) -> Result<FrameFeatures> {
    let ls = frame.joint(Arm::Left.shoulder());
    let rs = frame.joint(Arm::Right.shoulder());
    let width = ls.distance(rs);
    if !(width >= MIN_SHOULDER_WIDTH) {
        return Err(Error::InvalidData(format!(
            "frame {}: degenerate skeleton, shoulder width {width}",
            frame.frame_index
        )));
    }
    let torso = frame.joint(crate::skeleton::Joint::Torso);
    let mut v = [0.0; BASE_DIM];
    let mut k = 0;
    for arm in Arm::BOTH {
        for j in [arm.shoulder(), arm.elbow(), arm.hand()] {
            let p = (frame.joint(j) - torso) * (1.0 / width);
            v[k] = p.x;
            v[k + 1] = p.y;
            v[k + 2] = p.z;
            k += 3;
        }
    }
    let reach = |arm: Arm| frame.joint(arm.hand()) - frame.joint(arm.shoulder());
    let (left, right) = (reach(Arm::Left), reach(Arm::Right));
    v[18] = vertical_angle(left);
    v[19] = vertical_angle(right);
    v[20] = (frame.joint(Arm::Left.hand()).y - frame.joint(Arm::Right.hand()).y) / width;
    v[21] = left.norm() / width;
    v[22] = right.norm() / width;
    let (laz, lel) = azimuth_elevation(left);
    let (raz, rel) = azimuth_elevation(right);
    v[23] = laz;
    v[24] = lel;
    v[25] = raz;
    v[26] = rel;
    Ok(FrameFeatures { values: v })
}

pub fn validate_taps(taps: &[usize]) -> Result<()> {
    if taps.iter().any(|&t| t == 0) {
        return Err(Error::InvalidArgument("history taps must be positive".into()));
    }
    if taps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "history taps must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Concatenates each frame's features with those `t` frames earlier for
/// every tap `t`. Offsets before the sequence start clamp to frame 0.
pub fn stack_history(per_frame: &[FrameFeatures], taps: &[usize]) -> Result<FeatureMatrix> {
    if per_frame.is_empty() {
        return Err(Error::InvalidArgument("no frames to stack".into()));
    }
    validate_taps(taps)?;
    let dim = stacked_dim(taps.len());
    let mut rows = Array2::zeros((per_frame.len(), dim));
    for (f, mut row) in rows.outer_iter_mut().enumerate() {
        let sources = std::iter::once(f).chain(taps.iter().map(|&t| f.saturating_sub(t)));
        for (block, src) in sources.enumerate() {
            for (d, &x) in per_frame[src].values.iter().enumerate() {
                row[block * BASE_DIM + d] = x;
            }
        }
    }
    Ok(FeatureMatrix {
        rows,
        taps: taps.to_vec(),
    })
}

pub fn frame_features(frames: &[SkeletonFrame]) -> Result<Vec<FrameFeatures>> {
    frames.iter().map(extract_frame_features).collect()
}

/// Full observation pipeline for one frame stream.
pub fn sequence_features(frames: &[SkeletonFrame], taps: &[usize]) -> Result<FeatureMatrix> {
    stack_history(&frame_features(frames)?, taps)
}
