//! Synthetic labeled skeleton data.
//!
//! Each subject gets a randomly scaled body standing roughly 4 m in front of
//! the sensor, facing it. Pointing gestures move one arm from a relaxed rest
//! pose to an extended pose aimed at a room target along a minimum-jerk
//! profile, hold it with small tremor, then lower it again. Distractor
//! ("other") gestures use the arms without ever holding a pointing posture.
//! All joints receive independent Gaussian jitter every frame.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::skeleton::{
    Arm, Dataset, GestureLabel, Joint, LabeledSequence, SkeletonFrame, Vec3,
};

/// Generator settings. Durations are in frames at a nominal 30 fps and are
/// rescaled to `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub pointing_per_subject: usize,
    pub targets: usize,
    pub others_per_subject: usize,
    pub controls_per_subject: usize,
    pub gestures_per_sequence: usize,
    pub fps: f64,
    /// Per-joint positional jitter (standard deviation, meters).
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 18,
            pointing_per_subject: 55,
            targets: 22,
            others_per_subject: 10,
            controls_per_subject: 2,
            gestures_per_sequence: 5,
            fps: 30.0,
            noise: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::InvalidArgument("zero subjects requested".into()));
        }
        if self.pointing_per_subject + self.others_per_subject + self.controls_per_subject == 0 {
            return Err(Error::InvalidArgument("zero frames requested".into()));
        }
        if self.pointing_per_subject > 0 && self.targets == 0 {
            return Err(Error::InvalidArgument("pointing gestures need targets".into()));
        }
        if self.gestures_per_sequence == 0 {
            return Err(Error::InvalidArgument("gestures_per_sequence must be positive".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidArgument("noise must be non-negative".into()));
        }
        Ok(())
    }
}

const RISE: (usize, usize) = (15, 30);
const POINT: (usize, usize) = (30, 60);
const FALL: (usize, usize) = (15, 30);
const GAP: (usize, usize) = (20, 60);

/// Minimum-jerk position profile on [0, 1].
pub fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn nlerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    a.lerp(b, t).normalized()
}

fn side(arm: Arm) -> f64 {
    match arm {
        Arm::Left => 1.0,
        Arm::Right => -1.0,
    }
}

/// Arm configuration as unit directions of the upper arm and forearm.
#[derive(Debug, Clone, Copy)]
struct ArmPose {
    upper: Vec3,
    fore: Vec3,
}

impl ArmPose {
    fn rest(arm: Arm) -> Self {
        let s = side(arm);
        ArmPose {
            upper: Vec3::new(0.08 * s, -1.0, 0.05).normalized(),
            fore: Vec3::new(0.05 * s, -0.35, -0.7).normalized(),
        }
    }

    fn pointing(dir: Vec3) -> Self {
        ArmPose {
            upper: (dir + Vec3::new(0.0, -0.06, 0.0)).normalized(),
            fore: dir,
        }
    }

    fn blend(self, other: ArmPose, t: f64) -> Self {
        ArmPose {
            upper: nlerp(self.upper, other.upper, t),
            fore: nlerp(self.fore, other.fore, t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct FrameState {
    left: ArmPose,
    right: ArmPose,
    shrug: f64,
    label: GestureLabel,
}

#[derive(Debug, Clone)]
struct Body {
    torso: Vec3,
    scale: f64,
    half_shoulder: f64,
    upper_len: f64,
    fore_len: f64,
    sway_amp: f64,
    sway_period: f64,
}

impl Body {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let scale = rng.gen_range(0.88..1.12);
        Body {
            torso: Vec3::new(rng.gen_range(-0.3..0.3), 1.05 * scale, 4.0 + rng.gen_range(-0.2..0.2)),
            scale,
            half_shoulder: 0.19 * scale,
            upper_len: 0.30 * scale,
            fore_len: 0.28 * scale,
            sway_amp: rng.gen_range(0.005..0.02),
            sway_period: rng.gen_range(90.0..180.0),
        }
    }

    fn render(&self, state: &FrameState, t: f64) -> [Vec3; Joint::COUNT] {
        let s = self.scale;
        let phase = 2.0 * PI * t / self.sway_period;
        let sway = Vec3::new(self.sway_amp * phase.sin(), 0.0, 0.5 * self.sway_amp * (0.7 * phase).cos());
        let torso = self.torso + sway;
        let rel = |x: f64, y: f64, z: f64| torso + Vec3::new(x, y, z);
        let mut j = [Vec3::ZERO; Joint::COUNT];
        j[Joint::Head.index()] = rel(0.0, 0.50 * s, 0.0);
        j[Joint::Neck.index()] = rel(0.0, 0.30 * s, 0.0);
        j[Joint::Torso.index()] = torso;
        j[Joint::LeftHip.index()] = self.torso + Vec3::new(0.10 * s, -0.22 * s, 0.0);
        j[Joint::RightHip.index()] = self.torso + Vec3::new(-0.10 * s, -0.22 * s, 0.0);
        j[Joint::LeftKnee.index()] = self.torso + Vec3::new(0.10 * s, -0.65 * s, 0.02);
        j[Joint::RightKnee.index()] = self.torso + Vec3::new(-0.10 * s, -0.65 * s, 0.02);
        j[Joint::LeftFoot.index()] = self.torso + Vec3::new(0.10 * s, -1.05 * s, 0.05);
        j[Joint::RightFoot.index()] = self.torso + Vec3::new(-0.10 * s, -1.05 * s, 0.05);
        for (arm, pose) in [(Arm::Left, state.left), (Arm::Right, state.right)] {
            let shoulder = rel(side(arm) * self.half_shoulder, 0.27 * s + state.shrug, 0.0);
            let elbow = shoulder + pose.upper * self.upper_len;
            let hand = elbow + pose.fore * self.fore_len;
            j[arm.shoulder().index()] = shoulder;
            j[arm.elbow().index()] = elbow;
            j[arm.hand().index()] = hand;
        }
        j
    }
}

/// Unit pointing direction for azimuth `az` (positive toward the subject's
/// left, i.e. +x) and elevation `el`, for a subject facing the sensor (-z).
fn direction(az: f64, el: f64) -> Vec3 {
    Vec3::new(az.sin() * el.cos(), el.sin(), -az.cos() * el.cos())
}

fn scaled(range: (usize, usize), fps: f64, rng: &mut ChaCha8Rng) -> usize {
    let n = rng.gen_range(range.0..=range.1) as f64 * fps / 30.0;
    (n.round() as usize).max(1)
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Pointing { target: usize },
    Other,
}

struct Timeline<'a> {
    states: Vec<FrameState>,
    fps: f64,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Timeline<'a> {
    fn new(rng: &'a mut ChaCha8Rng, fps: f64) -> Self {
        Timeline {
            states: Vec::new(),
            fps,
            rng,
        }
    }

    fn idle() -> FrameState {
        FrameState {
            left: ArmPose::rest(Arm::Left),
            right: ArmPose::rest(Arm::Right),
            shrug: 0.0,
            label: GestureLabel::Background,
        }
    }

    fn push_arm(&mut self, arm: Arm, pose: ArmPose, label: GestureLabel) {
        let mut st = Self::idle();
        match arm {
            Arm::Left => st.left = pose,
            Arm::Right => st.right = pose,
        }
        st.label = label;
        self.states.push(st);
    }

    fn frames(&mut self, range: (usize, usize)) -> usize {
        scaled(range, self.fps, self.rng)
    }

    fn background(&mut self) {
        let n = self.frames(GAP);
        for _ in 0..n {
            self.states.push(Self::idle());
        }
    }

    /// Moves `arm` from `from` to `to` over `n` frames along a minimum-jerk
    /// profile; the last frame reaches `to`.
    fn transition(&mut self, arm: Arm, from: ArmPose, to: ArmPose, n: usize, label: GestureLabel) {
        for k in 0..n {
            let s = min_jerk((k + 1) as f64 / n as f64);
            self.push_arm(arm, from.blend(to, s), label);
        }
    }

    fn pointing(&mut self, arm: Arm, dir: Vec3) {
        let rest = ArmPose::rest(arm);
        let target = ArmPose::pointing(dir);
        let n = self.frames(RISE);
        self.transition(arm, rest, target, n, arm.rise());

        // hold with slow fine-tuning drift and tremor
        let n = self.frames(POINT);
        let tremor = Normal::new(0.0, 0.004).unwrap();
        let mut drift = Vec3::ZERO;
        let mut last = target;
        for _ in 0..n {
            drift = drift * 0.95
                + Vec3::new(
                    tremor.sample(self.rng),
                    tremor.sample(self.rng),
                    tremor.sample(self.rng),
                );
            last = ArmPose::pointing((dir + drift).normalized());
            self.push_arm(arm, last, arm.point());
        }

        let n = self.frames(FALL);
        self.transition(arm, last, rest, n, arm.fall());
    }

    fn other(&mut self) {
        let arm = if self.rng.gen_bool(0.5) { Arm::Left } else { Arm::Right };
        let s = side(arm);
        let rest = ArmPose::rest(arm);
        let label = GestureLabel::Other;
        match self.rng.gen_range(0..5) {
            // wave
            0 => {
                let up = ArmPose {
                    upper: Vec3::new(0.8 * s, 0.2, -0.3).normalized(),
                    fore: Vec3::new(0.1 * s, 1.0, -0.1).normalized(),
                };
                let n = self.frames((10, 18));
                self.transition(arm, rest, up, n, label);
                let n = self.frames((30, 60));
                let freq = self.rng.gen_range(1.5..2.5) / self.fps;
                let mut pose = up;
                for k in 0..n {
                    let osc = 0.5 * (2.0 * PI * freq * k as f64).sin();
                    pose = ArmPose {
                        upper: up.upper,
                        fore: Vec3::new(0.1 * s + osc, 1.0, -0.1).normalized(),
                    };
                    self.push_arm(arm, pose, label);
                }
                let n = self.frames((10, 18));
                self.transition(arm, pose, rest, n, label);
            }
            // beckon ("come closer")
            1 => {
                let front = ArmPose {
                    upper: Vec3::new(0.15 * s, -0.8, -0.4).normalized(),
                    fore: Vec3::new(0.0, 0.1, -1.0).normalized(),
                };
                let n = self.frames((8, 14));
                self.transition(arm, rest, front, n, label);
                let n = self.frames((30, 50));
                let freq = self.rng.gen_range(1.0..2.0) / self.fps;
                let mut pose = front;
                for k in 0..n {
                    let osc = 0.5 - 0.5 * (2.0 * PI * freq * k as f64).cos();
                    pose = ArmPose {
                        upper: front.upper,
                        fore: Vec3::new(0.0, 0.1 + 0.8 * osc, -1.0 + 0.7 * osc).normalized(),
                    };
                    self.push_arm(arm, pose, label);
                }
                let n = self.frames((8, 14));
                self.transition(arm, pose, rest, n, label);
            }
            // shrug, both arms
            2 => {
                let n_in = self.frames((8, 12));
                let n_hold = self.frames((10, 20));
                let n_out = self.frames((8, 12));
                let lift = 0.05 * self.rng.gen_range(0.8..1.2);
                let total = n_in + n_hold + n_out;
                for k in 0..total {
                    let a = if k < n_in {
                        min_jerk((k + 1) as f64 / n_in as f64)
                    } else if k < n_in + n_hold {
                        1.0
                    } else {
                        1.0 - min_jerk((k - n_in - n_hold + 1) as f64 / n_out as f64)
                    };
                    let open = |arm: Arm| {
                        let r = ArmPose::rest(arm);
                        let o = ArmPose {
                            upper: r.upper,
                            fore: Vec3::new(0.6 * side(arm), -0.2, -0.7).normalized(),
                        };
                        r.blend(o, a)
                    };
                    self.states.push(FrameState {
                        left: open(Arm::Left),
                        right: open(Arm::Right),
                        shrug: lift * a,
                        label,
                    });
                }
            }
            // reach toward something without holding
            3 => {
                let az = s * self.rng.gen_range(0.0..1.4);
                let el = self.rng.gen_range(-0.3..0.4);
                let dir = direction(az, el);
                let apex = ArmPose {
                    upper: (dir + Vec3::new(0.0, -0.45, 0.0)).normalized(),
                    fore: (dir + Vec3::new(0.0, 0.15, 0.0)).normalized(),
                };
                let n = self.frames((12, 22));
                self.transition(arm, rest, apex, n, label);
                let n = self.frames((0, 3));
                for _ in 0..n {
                    self.push_arm(arm, apex, label);
                }
                let n = self.frames((12, 22));
                self.transition(arm, apex, rest, n, label);
            }
            // scratch head
            _ => {
                let head = ArmPose {
                    upper: Vec3::new(0.9 * s, 0.35, -0.2).normalized(),
                    fore: Vec3::new(-0.9 * s, 0.5, 0.05).normalized(),
                };
                let n = self.frames((12, 20));
                self.transition(arm, rest, head, n, label);
                let n = self.frames((20, 40));
                let mut pose = head;
                for k in 0..n {
                    let osc = 0.1 * (k as f64 * 0.9).sin();
                    pose = ArmPose {
                        upper: head.upper,
                        fore: Vec3::new(-0.9 * s, 0.5 + osc, 0.05).normalized(),
                    };
                    self.push_arm(arm, pose, label);
                }
                let n = self.frames((12, 20));
                self.transition(arm, pose, rest, n, label);
            }
        }
    }
}

fn render_sequence(
    body: &Body,
    states: &[FrameState],
    noise: f64,
    rng: &mut ChaCha8Rng,
    subject_id: &str,
    sequence_id: String,
) -> LabeledSequence {
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let frames = states
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let mut joints = body.render(st, i as f64);
            if noise > 0.0 {
                for p in joints.iter_mut() {
                    *p = *p
                        + Vec3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng));
                }
            }
            SkeletonFrame::new(i, joints)
        })
        .collect();
    LabeledSequence {
        subject_id: subject_id.to_owned(),
        sequence_id,
        frames,
        labels: states.iter().map(|s| s.label).collect(),
    }
}

/// Room targets as (azimuth, elevation) relative to the subject.
fn sample_targets(n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let az = rng.gen_range(-1.75..1.75);
            let el = rng.gen_range(-0.45..0.6);
            (az, el)
        })
        .collect()
}

fn pointing_arm(az: f64, rng: &mut ChaCha8Rng) -> Arm {
    if az > 0.15 {
        Arm::Left
    } else if az < -0.15 {
        Arm::Right
    } else if rng.gen_bool(0.5) {
        Arm::Left
    } else {
        Arm::Right
    }
}

fn synthesize_subject(cfg: &SynthConfig, seed: u64, subject: usize, targets: &[(f64, f64)]) -> Vec<LabeledSequence> {
    let mut rng = component_rng(seed, "synth-subject", subject as u64);
    let subject_id = format!("s{:02}", subject + 1);
    let body = Body::sample(&mut rng);

    let mut order: Vec<usize> = (0..cfg.pointing_per_subject).map(|g| g % targets.len().max(1)).collect();
    order.shuffle(&mut rng);

    let chunks: Vec<Vec<Item>> = order
        .chunks(cfg.gestures_per_sequence)
        .map(|c| c.iter().map(|&t| Item::Pointing { target: t }).collect())
        .collect();
    let mut chunks = if chunks.is_empty() && cfg.others_per_subject > 0 {
        vec![Vec::new()]
    } else {
        chunks
    };
    let n_chunks = chunks.len();
    for k in 0..cfg.others_per_subject {
        if n_chunks > 0 {
            chunks[k % n_chunks].push(Item::Other);
        }
    }

    let mut out = Vec::new();
    for (ci, mut items) in chunks.into_iter().enumerate() {
        items.shuffle(&mut rng);
        let mut tl = Timeline::new(&mut rng, cfg.fps);
        tl.background();
        for item in items {
            match item {
                Item::Pointing { target } => {
                    let (az, el) = targets[target];
                    let arm = pointing_arm(az, tl.rng);
                    tl.pointing(arm, direction(az, el));
                }
                Item::Other => tl.other(),
            }
            tl.background();
        }
        let states = std::mem::take(&mut tl.states);
        out.push(render_sequence(&body, &states, cfg.noise, &mut rng, &subject_id, format!("seq{:02}", ci + 1)));
    }
    for k in 0..cfg.controls_per_subject {
        let mut tl = Timeline::new(&mut rng, cfg.fps);
        tl.background();
        tl.background();
        tl.other();
        tl.background();
        tl.background();
        let states = std::mem::take(&mut tl.states);
        out.push(render_sequence(&body, &states, cfg.noise, &mut rng, &subject_id, format!("ctrl{:02}", k + 1)));
    }
    out
}

/// Synthesizes a labeled dataset. The output is a pure function of
/// `(cfg, seed)`.
pub fn synthesize_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut trng = component_rng(seed, "synth-targets", 0);
    let targets = sample_targets(cfg.targets.max(1), &mut trng);
    let sequences = (0..cfg.subjects)
        .flat_map(|s| synthesize_subject(cfg, seed, s, &targets))
        .collect();
    Dataset::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 3,
            pointing_per_subject: 6,
            others_per_subject: 3,
            controls_per_subject: 1,
            ..SynthConfig::default()
        }
    }

    /// Maximal runs of equal labels as (label, start, len).
    fn runs(labels: &[GestureLabel]) -> Vec<(GestureLabel, usize, usize)> {
        let mut out: Vec<(GestureLabel, usize, usize)> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match out.last_mut() {
                Some((last, _, n)) if *last == l => *n += 1,
                _ => out.push((l, i, 1)),
            }
        }
        out
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synthesize_dataset(&small(), 7).unwrap();
        let b = synthesize_dataset(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize_dataset(&small(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_empty_requests() {
        let cfg = SynthConfig { subjects: 0, ..small() };
        assert!(synthesize_dataset(&cfg, 1).is_err());
        let cfg = SynthConfig {
            pointing_per_subject: 0,
            others_per_subject: 0,
            controls_per_subject: 0,
            ..small()
        };
        assert!(synthesize_dataset(&cfg, 1).is_err());
    }

    #[test]
    fn default_config_has_990_pointing_runs() {
        let ds = synthesize_dataset(&SynthConfig::default(), 3).unwrap();
        assert_eq!(ds.subjects().len(), 18);
        let n: usize = ds
            .sequences
            .iter()
            .map(|s| runs(&s.labels).iter().filter(|r| r.0.is_point()).count())
            .sum();
        assert_eq!(n, 990);
    }

    #[test]
    fn point_runs_are_bracketed_by_same_arm_phases() {
        let ds = synthesize_dataset(&small(), 11).unwrap();
        for s in &ds.sequences {
            let r = runs(&s.labels);
            for (k, run) in r.iter().enumerate() {
                if let Some(arm) = run.0.arm().filter(|_| run.0.is_point()) {
                    assert!(k > 0 && k + 1 < r.len());
                    assert_eq!(r[k - 1].0, arm.rise());
                    assert_eq!(r[k + 1].0, arm.fall());
                }
            }
            let t = &s.labels;
            assert_eq!(t[0], GestureLabel::Background);
            assert_eq!(*t.last().unwrap(), GestureLabel::Background);
        }
        let controls = ds.sequences.iter().filter(|s| s.is_control()).count();
        assert_eq!(controls, 3);
    }

    #[test]
    fn pointing_extends_the_arm_beyond_rest() {
        let ds = synthesize_dataset(&small(), 5).unwrap();
        for subject in ds.subjects() {
            let seqs: Vec<_> = ds.sequences.iter().filter(|s| s.subject_id == subject).collect();
            let reach = |f: &SkeletonFrame, arm: Arm| f.joint(arm.hand()).distance(f.joint(arm.shoulder()));
            for arm in Arm::BOTH {
                let bg: Vec<f64> = seqs
                    .iter()
                    .flat_map(|s| s.frames.iter().zip(&s.labels))
                    .filter(|(_, l)| **l == GestureLabel::Background)
                    .map(|(f, _)| reach(f, arm))
                    .collect();
                let mean = bg.iter().sum::<f64>() / bg.len() as f64;
                for s in &seqs {
                    for (f, l) in s.frames.iter().zip(&s.labels) {
                        if *l == arm.point() {
                            assert!(reach(f, arm) > mean, "{subject} {arm}: {} <= {mean}", reach(f, arm));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn min_jerk_profile() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 1..=100 {
            let v = min_jerk(k as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }
}
