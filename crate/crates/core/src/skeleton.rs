//! Skeleton frames, gesture labels and labeled datasets.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use crate::error::{Error, Result};

/// A point or direction in sensor coordinates (meters; x right, y up, z away from the sensor).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Vec3, t: f64) -> Vec3 {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// The 15 tracked joints, in canonical file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Joint {
    Head,
    Neck,
    Torso,
    LeftShoulder,
    LeftElbow,
    LeftHand,
    RightShoulder,
    RightElbow,
    RightHand,
    LeftHip,
    LeftKnee,
    LeftFoot,
    RightHip,
    RightKnee,
    RightFoot,
}

impl Joint {
    pub const COUNT: usize = 15;

    pub const ALL: [Joint; Joint::COUNT] = [
        Joint::Head,
        Joint::Neck,
        Joint::Torso,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftHand,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightHand,
        Joint::LeftHip,
        Joint::LeftKnee,
        Joint::LeftFoot,
        Joint::RightHip,
        Joint::RightKnee,
        Joint::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Head => "head",
            Joint::Neck => "neck",
            Joint::Torso => "torso",
            Joint::LeftShoulder => "left_shoulder",
            Joint::LeftElbow => "left_elbow",
            Joint::LeftHand => "left_hand",
            Joint::RightShoulder => "right_shoulder",
            Joint::RightElbow => "right_elbow",
            Joint::RightHand => "right_hand",
            Joint::LeftHip => "left_hip",
            Joint::LeftKnee => "left_knee",
            Joint::LeftFoot => "left_foot",
            Joint::RightHip => "right_hip",
            Joint::RightKnee => "right_knee",
            Joint::RightFoot => "right_foot",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.name() == name)
    }
}

/// One arm of the subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn shoulder(self) -> Joint {
        match self {
            Arm::Left => Joint::LeftShoulder,
            Arm::Right => Joint::RightShoulder,
        }
    }

    pub fn elbow(self) -> Joint {
        match self {
            Arm::Left => Joint::LeftElbow,
            Arm::Right => Joint::RightElbow,
        }
    }

    pub fn hand(self) -> Joint {
        match self {
            Arm::Left => Joint::LeftHand,
            Arm::Right => Joint::RightHand,
        }
    }

    pub fn rise(self) -> GestureLabel {
        match self {
            Arm::Left => GestureLabel::LeftRise,
            Arm::Right => GestureLabel::RightRise,
        }
    }

    pub fn point(self) -> GestureLabel {
        match self {
            Arm::Left => GestureLabel::LeftPoint,
            Arm::Right => GestureLabel::RightPoint,
        }
    }

    pub fn fall(self) -> GestureLabel {
        match self {
            Arm::Left => GestureLabel::LeftFall,
            Arm::Right => GestureLabel::RightFall,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Left => "left",
            Arm::Right => "right",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-frame gesture phase label. The declaration order is the canonical
/// alphabet order used for tie-breaking and table layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GestureLabel {
    Background,
    LeftRise,
    LeftPoint,
    LeftFall,
    RightRise,
    RightPoint,
    RightFall,
    Other,
}

impl GestureLabel {
    pub const COUNT: usize = 8;

    pub const ALL: [GestureLabel; GestureLabel::COUNT] = [
        GestureLabel::Background,
        GestureLabel::LeftRise,
        GestureLabel::LeftPoint,
        GestureLabel::LeftFall,
        GestureLabel::RightRise,
        GestureLabel::RightPoint,
        GestureLabel::RightFall,
        GestureLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<GestureLabel> {
        GestureLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GestureLabel::Background => "background",
            GestureLabel::LeftRise => "left_rise",
            GestureLabel::LeftPoint => "left_point",
            GestureLabel::LeftFall => "left_fall",
            GestureLabel::RightRise => "right_rise",
            GestureLabel::RightPoint => "right_point",
            GestureLabel::RightFall => "right_fall",
            GestureLabel::Other => "other",
        }
    }

    /// Human-readable column title.
    pub fn title(self) -> &'static str {
        match self {
            GestureLabel::Background => "Background",
            GestureLabel::LeftRise => "Left Rise",
            GestureLabel::LeftPoint => "Left Point",
            GestureLabel::LeftFall => "Left Fall",
            GestureLabel::RightRise => "Right Rise",
            GestureLabel::RightPoint => "Right Point",
            GestureLabel::RightFall => "Right Fall",
            GestureLabel::Other => "Other",
        }
    }

    /// The arm whose pointing phase this label denotes, if any.
    pub fn arm(self) -> Option<Arm> {
        match self {
            GestureLabel::LeftRise | GestureLabel::LeftPoint | GestureLabel::LeftFall => {
                Some(Arm::Left)
            }
            GestureLabel::RightRise | GestureLabel::RightPoint | GestureLabel::RightFall => {
                Some(Arm::Right)
            }
            _ => None,
        }
    }

    pub fn is_point(self) -> bool {
        matches!(self, GestureLabel::LeftPoint | GestureLabel::RightPoint)
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GestureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GestureLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidData(format!("unknown label {s:?}")))
    }
}

/// One time instant of the 15-joint skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub frame_index: usize,
    pub joints: [Vec3; Joint::COUNT],
}

impl SkeletonFrame {
    pub fn new(frame_index: usize, joints: [Vec3; Joint::COUNT]) -> Self {
        SkeletonFrame {
            frame_index,
            joints,
        }
    }

    pub fn joint(&self, j: Joint) -> Vec3 {
        self.joints[j.index()]
    }

    pub fn set_joint(&mut self, j: Joint, p: Vec3) {
        self.joints[j.index()] = p;
    }

    pub fn validate(&self) -> Result<()> {
        for j in Joint::ALL {
            if !self.joint(j).is_finite() {
                return Err(Error::InvalidData(format!(
                    "frame {}: non-finite coordinate in {}",
                    self.frame_index,
                    j.name()
                )));
            }
        }
        Ok(())
    }
}

/// A recorded (or synthesized) frame stream with per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub subject_id: String,
    pub sequence_id: String,
    pub frames: Vec<SkeletonFrame>,
    pub labels: Vec<GestureLabel>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidData(format!(
                "sequence {}: no frames",
                self.sequence_id
            )));
        }
        if self.labels.len() != self.frames.len() {
            return Err(Error::InvalidData(format!(
                "sequence {}: {} labels for {} frames",
                self.sequence_id,
                self.labels.len(),
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(Error::InvalidData(format!(
                    "sequence {}: frame {} has index {}",
                    self.sequence_id, i, f.frame_index
                )));
            }
            f.validate()?;
        }
        for id in [&self.subject_id, &self.sequence_id] {
            if id.is_empty() || id.contains(char::is_whitespace) || id.contains(';') {
                return Err(Error::InvalidData(format!("invalid identifier {id:?}")));
            }
        }
        Ok(())
    }

    /// True when no frame carries a pointing-phase label.
    pub fn is_control(&self) -> bool {
        self.labels.iter().all(|l| l.arm().is_none())
    }
}

/// A collection of labeled sequences from one or more subjects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub sequences: Vec<LabeledSequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<LabeledSequence>) -> Result<Self> {
        let ds = Dataset { sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::InvalidData("dataset has no sequences".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.sequences {
            s.validate()?;
            if !seen.insert((s.subject_id.as_str(), s.sequence_id.as_str())) {
                return Err(Error::InvalidData(format!(
                    "duplicate sequence {}/{}",
                    s.subject_id, s.sequence_id
                )));
            }
        }
        Ok(())
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sequences.iter().map(|s| s.subject_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(LabeledSequence::len).sum()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Leave-one-subject-out split: `(train, test)`, where test holds exactly the
/// sequences of `held_out_subject`. Sequence order is preserved in both parts.
pub fn split_loso(ds: &Dataset, held_out_subject: &str) -> Result<(Dataset, Dataset)> {
    let (test, train): (Vec<_>, Vec<_>) = ds
        .sequences
        .iter()
        .cloned()
        .partition(|s| s.subject_id == held_out_subject);
    if test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unknown subject {held_out_subject:?}"
        )));
    }
    Ok((Dataset { sequences: train }, Dataset { sequences: test }))
}
