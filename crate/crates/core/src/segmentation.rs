//! From frame labels to pointing gesture intervals, and scoring of predicted
//! intervals against annotated ones.

use std::fmt;

use crate::error::{Error, Result};
use crate::skeleton::{Arm, GestureLabel};

pub const DEFAULT_MEDIAN_WINDOW: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventSource {
    Predicted,
    Annotated,
}

/// A contiguous pointing gesture interval, frames inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectionEvent {
    pub arm: Arm,
    pub start_frame: usize,
    pub end_frame: usize,
    pub source: EventSource,
}

impl DetectionEvent {
    pub fn overlaps(&self, other: &DetectionEvent) -> bool {
        self.arm == other.arm && self.start_frame <= other.end_frame && other.start_frame <= self.end_frame
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Mode filter over a centered window truncated at the sequence ends.
///
/// Ties keep the center label when it is among the most frequent, otherwise
/// the earliest tied label in canonical order wins.
pub fn median_filter_labels(labels: &[GestureLabel], window: usize) -> Result<Vec<GestureLabel>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and positive, got {window}"
        )));
    }
    let half = window / 2;
    let n = labels.len();
    let mut counts = [0usize; GestureLabel::COUNT];
    let mut out = Vec::with_capacity(n);
    // sliding window [lo, hi)
    let (mut lo, mut hi) = (0usize, 0usize);
    for (f, &center) in labels.iter().enumerate() {
        let want_lo = f.saturating_sub(half);
        let want_hi = (f + half + 1).min(n);
        while hi < want_hi {
            counts[labels[hi].index()] += 1;
            hi += 1;
        }
        while lo < want_lo {
            counts[labels[lo].index()] -= 1;
            lo += 1;
        }
        let best = *counts.iter().max().unwrap_or(&0);
        let winner = if counts[center.index()] == best {
            center
        } else {
            GestureLabel::ALL
                .into_iter()
                .find(|l| counts[l.index()] == best)
                .unwrap_or(center)
        };
        out.push(winner);
    }
    Ok(out)
}

fn blocks(labels: &[GestureLabel], source: EventSource) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    let mut f = 0;
    while f < labels.len() {
        let Some(arm) = labels[f].arm() else {
            f += 1;
            continue;
        };
        let start = f;
        let mut has_point = false;
        while f < labels.len() && labels[f].arm() == Some(arm) {
            has_point |= labels[f].is_point();
            f += 1;
        }
        if has_point {
            out.push(DetectionEvent {
                arm,
                start_frame: start,
                end_frame: f - 1,
                source,
            });
        }
    }
    out
}

/// Maximal runs of one arm's rise/point/fall labels that contain at least
/// one point frame. Output is sorted and disjoint.
pub fn extract_pointing_blocks(labels: &[GestureLabel]) -> Vec<DetectionEvent> {
    blocks(labels, EventSource::Predicted)
}

/// Ground-truth gesture intervals from annotated frame labels.
pub fn annotated_events(labels: &[GestureLabel]) -> Vec<DetectionEvent> {
    blocks(labels, EventSource::Annotated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeType {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

impl OutcomeType {
    pub fn code(self) -> &'static str {
        match self {
            OutcomeType::TruePositive => "TP",
            OutcomeType::TrueNegative => "TN",
            OutcomeType::FalsePositive => "FP",
            OutcomeType::FalseNegative => "FN",
        }
    }

    pub fn is_true(self) -> bool {
        matches!(self, OutcomeType::TruePositive | OutcomeType::TrueNegative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectionClass {
    ExactEnd,
    DetectionLonger,
    DetectionShorter,
    NoDetectionControl,
    PhantomDetection,
    OverlappingDetection,
    MissedDetection,
}

impl DetectionClass {
    pub const ALL: [DetectionClass; 7] = [
        DetectionClass::ExactEnd,
        DetectionClass::DetectionLonger,
        DetectionClass::DetectionShorter,
        DetectionClass::NoDetectionControl,
        DetectionClass::PhantomDetection,
        DetectionClass::OverlappingDetection,
        DetectionClass::MissedDetection,
    ];

    pub fn outcome(self) -> OutcomeType {
        match self {
            DetectionClass::ExactEnd | DetectionClass::DetectionLonger | DetectionClass::DetectionShorter => {
                OutcomeType::TruePositive
            }
            DetectionClass::NoDetectionControl => OutcomeType::TrueNegative,
            DetectionClass::PhantomDetection => OutcomeType::FalsePositive,
            DetectionClass::OverlappingDetection | DetectionClass::MissedDetection => OutcomeType::FalseNegative,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionClass::ExactEnd => "exact_end",
            DetectionClass::DetectionLonger => "detection_longer",
            DetectionClass::DetectionShorter => "detection_shorter",
            DetectionClass::NoDetectionControl => "no_detection_control",
            DetectionClass::PhantomDetection => "phantom_detection",
            DetectionClass::OverlappingDetection => "overlapping_detection",
            DetectionClass::MissedDetection => "missed_detection",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DetectionClass::ExactEnd => "Exact (End)",
            DetectionClass::DetectionLonger => "Detection longer",
            DetectionClass::DetectionShorter => "Detection shorter",
            DetectionClass::NoDetectionControl => "No detection (control)",
            DetectionClass::PhantomDetection => "Phantom detection",
            DetectionClass::OverlappingDetection => "Overlapping detection",
            DetectionClass::MissedDetection => "Missed detection",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DetectionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Counts per detection class. Percentages are taken over the sum of all
/// class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SequenceEvalCounts {
    counts: [usize; 7],
}

impl SequenceEvalCounts {
    pub fn get(&self, class: DetectionClass) -> usize {
        self.counts[class.index()]
    }

    pub fn add(&mut self, class: DetectionClass, n: usize) {
        self.counts[class.index()] += n;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn percentage(&self, class: DetectionClass) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            100.0 * self.get(class) as f64 / total as f64
        }
    }

    fn outcome_count(&self, want_true: bool) -> usize {
        DetectionClass::ALL
            .iter()
            .filter(|c| c.outcome().is_true() == want_true)
            .map(|&c| self.get(c))
            .sum()
    }

    pub fn total_true(&self) -> usize {
        self.outcome_count(true)
    }

    pub fn total_false(&self) -> usize {
        self.outcome_count(false)
    }

    pub fn total_true_percentage(&self) -> f64 {
        DetectionClass::ALL
            .iter()
            .filter(|c| c.outcome().is_true())
            .map(|&c| self.percentage(c))
            .sum()
    }

    pub fn total_false_percentage(&self) -> f64 {
        DetectionClass::ALL
            .iter()
            .filter(|c| !c.outcome().is_true())
            .map(|&c| self.percentage(c))
            .sum()
    }

    /// Table with one row per class plus totals, counts and percentages.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<24} {:<4} {:>7} {:>8}\n", "Prediction Class", "Type", "Count", "%"));
        for c in DetectionClass::ALL {
            s.push_str(&format!(
                "{:<24} {:<4} {:>7} {:>8.2}\n",
                c.title(),
                c.outcome().code(),
                self.get(c),
                self.percentage(c)
            ));
        }
        s.push_str(&format!(
            "{:<24} {:<4} {:>7} {:>8.2}\n",
            "Total True",
            "T*",
            self.total_true(),
            self.total_true_percentage()
        ));
        s.push_str(&format!(
            "{:<24} {:<4} {:>7} {:>8.2}\n",
            "Total False",
            "F*",
            self.total_false(),
            self.total_false_percentage()
        ));
        s
    }
}

impl std::ops::AddAssign for SequenceEvalCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts) {
            *a += b;
        }
    }
}

impl std::ops::Add for SequenceEvalCounts {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

/// One classified unit: a gesture, an unmatched prediction, or a control.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRecord {
    pub arm: Option<Arm>,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub class: DetectionClass,
}

impl DetectionRecord {
    /// `sequence_id;arm;start;end;class`, with `-` for absent fields.
    pub fn to_line(&self, sequence_id: &str) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_owned(), |v| v.to_string());
        format!(
            "{};{};{};{};{}",
            sequence_id,
            self.arm.map_or("-", Arm::name),
            opt(self.start),
            opt(self.end),
            self.class
        )
    }
}

fn check_events(events: &[DetectionEvent], source: EventSource, what: &str) -> Result<()> {
    for e in events {
        if e.source != source {
            return Err(Error::InvalidArgument(format!("{what} event has the wrong source")));
        }
        if e.start_frame > e.end_frame {
            return Err(Error::InvalidArgument(format!("{what} event ends before it starts")));
        }
    }
    for w in events.windows(2) {
        if w[1].start_frame < w[0].start_frame {
            return Err(Error::InvalidArgument(format!("{what} events are not sorted by start frame")));
        }
        if w[0].overlaps(&w[1]) {
            return Err(Error::InvalidArgument(format!(
                "{what} events overlap; events from different sequences must be scored separately"
            )));
        }
    }
    Ok(())
}

/// Classifies one sequence's predictions against its annotations, plus
/// `controls` gesture-free sequences without predictions.
///
/// Matching is by shared frames on the same arm:
/// - a prediction overlapping no gesture is a phantom detection;
/// - a prediction overlapping two or more gestures is one overlapping
///   detection, covering all of those gestures;
/// - any other gesture is matched by the predictions overlapping only it and
///   subclassified by comparing its end frame with the latest matched end;
/// - a gesture nobody overlaps is a missed detection.
pub fn classify_with_records(
    gt: &[DetectionEvent],
    pred: &[DetectionEvent],
    controls: usize,
) -> Result<(SequenceEvalCounts, Vec<DetectionRecord>)> {
    check_events(gt, EventSource::Annotated, "annotated")?;
    check_events(pred, EventSource::Predicted, "predicted")?;
    let mut counts = SequenceEvalCounts::default();
    let mut records = Vec::new();
    let mut merged = vec![false; gt.len()];
    let mut matched_end: Vec<Option<usize>> = vec![None; gt.len()];

    for p in pred {
        let hits: Vec<usize> = (0..gt.len()).filter(|&g| gt[g].overlaps(p)).collect();
        match hits.len() {
            0 => {
                counts.add(DetectionClass::PhantomDetection, 1);
                records.push(DetectionRecord {
                    arm: Some(p.arm),
                    start: Some(p.start_frame),
                    end: Some(p.end_frame),
                    class: DetectionClass::PhantomDetection,
                });
            }
            1 => {
                let g = hits[0];
                matched_end[g] = Some(matched_end[g].map_or(p.end_frame, |e| e.max(p.end_frame)));
            }
            _ => {
                for &g in &hits {
                    merged[g] = true;
                }
                counts.add(DetectionClass::OverlappingDetection, 1);
                records.push(DetectionRecord {
                    arm: Some(p.arm),
                    start: Some(p.start_frame),
                    end: Some(p.end_frame),
                    class: DetectionClass::OverlappingDetection,
                });
            }
        }
    }

    for (g, event) in gt.iter().enumerate() {
        if merged[g] {
            continue;
        }
        let class = match matched_end[g] {
            None => DetectionClass::MissedDetection,
            Some(end) if end == event.end_frame => DetectionClass::ExactEnd,
            Some(end) if end > event.end_frame => DetectionClass::DetectionLonger,
            Some(_) => DetectionClass::DetectionShorter,
        };
        counts.add(class, 1);
        records.push(DetectionRecord {
            arm: Some(event.arm),
            start: Some(event.start_frame),
            end: Some(event.end_frame),
            class,
        });
    }

    counts.add(DetectionClass::NoDetectionControl, controls);
    for _ in 0..controls {
        records.push(DetectionRecord {
            arm: None,
            start: None,
            end: None,
            class: DetectionClass::NoDetectionControl,
        });
    }
    Ok((counts, records))
}

pub fn classify_detections(
    gt: &[DetectionEvent],
    pred: &[DetectionEvent],
    controls: usize,
) -> Result<SequenceEvalCounts> {
    Ok(classify_with_records(gt, pred, controls)?.0)
}

/// Scores one sequence from its annotated and filtered predicted labels. A
/// sequence without annotated gestures and without detections counts as a
/// control.
pub fn score_sequence(
    truth: &[GestureLabel],
    filtered_prediction: &[GestureLabel],
) -> Result<(SequenceEvalCounts, Vec<DetectionRecord>)> {
    if truth.len() != filtered_prediction.len() {
        return Err(Error::Dimension(format!(
            "{} annotated vs {} predicted frames",
            truth.len(),
            filtered_prediction.len()
        )));
    }
    let gt = annotated_events(truth);
    let pred = extract_pointing_blocks(filtered_prediction);
    let controls = usize::from(gt.is_empty() && pred.is_empty());
    classify_with_records(&gt, &pred, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use GestureLabel::*;

    fn seq(parts: &[(GestureLabel, usize)]) -> Vec<GestureLabel> {
        parts.iter().flat_map(|&(l, n)| std::iter::repeat(l).take(n)).collect()
    }

    fn ev(arm: Arm, s: usize, e: usize, source: EventSource) -> DetectionEvent {
        DetectionEvent {
            arm,
            start_frame: s,
            end_frame: e,
            source,
        }
    }

    #[test]
    fn median_filter_basics() {
        let bg = vec![Background; 20];
        assert_eq!(median_filter_labels(&bg, 9).unwrap(), bg);
        let blip = seq(&[(Background, 10), (LeftPoint, 1), (Background, 10)]);
        assert_eq!(median_filter_labels(&blip, 9).unwrap(), vec![Background; 21]);
        assert_eq!(median_filter_labels(&blip, 1).unwrap(), blip);
        assert!(median_filter_labels(&blip, 4).is_err());
        assert!(median_filter_labels(&blip, 0).is_err());
        assert!(median_filter_labels(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn median_filter_tie_rules() {
        // window of 3 at frame 1 sees {Other, Background, LeftRise}: center wins
        let x = vec![Other, Background, LeftRise];
        assert_eq!(median_filter_labels(&x, 3).unwrap()[1], Background);
        // boundary window at frame 0 sees {Other, LeftRise}: canonical order wins
        let x = vec![Other, LeftRise, LeftRise, Other];
        let f = median_filter_labels(&x, 3).unwrap();
        assert_eq!(f[0], Other); // center is tied and kept
        let x = vec![RightFall, LeftRise, Other];
        let f = median_filter_labels(&x, 5).unwrap();
        // frame 1 sees all three once: center LeftRise kept
        assert_eq!(f[1], LeftRise);
        // frame 0 sees all three: center RightFall kept
        assert_eq!(f[0], RightFall);
    }

    #[test]
    fn block_extraction() {
        assert!(extract_pointing_blocks(&[Background; 10]).is_empty());
        let x = seq(&[(Background, 3), (LeftRise, 10), (LeftPoint, 20), (LeftFall, 10), (Background, 3)]);
        let b = extract_pointing_blocks(&x);
        assert_eq!(b, vec![ev(Arm::Left, 3, 42, EventSource::Predicted)]);
        assert_eq!(b[0].len(), 40);
        let aborted = seq(&[(LeftRise, 10), (Background, 5)]);
        assert!(extract_pointing_blocks(&aborted).is_empty());
        let two = seq(&[(LeftPoint, 2), (RightPoint, 2), (Other, 1), (RightFall, 1)]);
        assert_eq!(
            extract_pointing_blocks(&two),
            vec![ev(Arm::Left, 0, 1, EventSource::Predicted), ev(Arm::Right, 2, 3, EventSource::Predicted)]
        );
    }

    fn gt(s: usize, e: usize) -> DetectionEvent {
        ev(Arm::Left, s, e, EventSource::Annotated)
    }
    fn pr(s: usize, e: usize) -> DetectionEvent {
        ev(Arm::Left, s, e, EventSource::Predicted)
    }

    #[test]
    fn exact_match_is_all_exact_end() {
        let g = [gt(5, 20), gt(40, 60)];
        let p = [pr(5, 20), pr(40, 60)];
        let c = classify_detections(&g, &p, 0).unwrap();
        assert_eq!(c.get(DetectionClass::ExactEnd), 2);
        assert_eq!(c.percentage(DetectionClass::ExactEnd), 100.0);
    }

    #[test]
    fn taxonomy() {
        let c = classify_detections(&[gt(5, 20)], &[pr(7, 25)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::DetectionLonger), 1);
        let c = classify_detections(&[gt(5, 20)], &[pr(3, 18)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::DetectionShorter), 1);
        let c = classify_detections(&[], &[pr(3, 18)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::PhantomDetection), 1);
        let c = classify_detections(&[gt(5, 20), gt(25, 40)], &[pr(6, 38)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::OverlappingDetection), 1);
        assert_eq!(c.total(), 1);
        let c = classify_detections(&[gt(5, 20)], &[], 0).unwrap();
        assert_eq!(c.get(DetectionClass::MissedDetection), 1);
        let c = classify_detections(&[], &[], 3).unwrap();
        assert_eq!(c.get(DetectionClass::NoDetectionControl), 3);
        // wrong arm does not match
        let c = classify_detections(&[gt(5, 20)], &[ev(Arm::Right, 5, 20, EventSource::Predicted)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::MissedDetection), 1);
        assert_eq!(c.get(DetectionClass::PhantomDetection), 1);
        // a fragmented detection is one gesture, judged by its last end
        let c = classify_detections(&[gt(5, 20)], &[pr(5, 9), pr(12, 20)], 0).unwrap();
        assert_eq!(c.get(DetectionClass::ExactEnd), 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn rejects_mixed_or_unsorted_events() {
        assert!(classify_detections(&[gt(20, 30), gt(5, 10)], &[], 0).is_err());
        assert!(classify_detections(&[gt(5, 20), gt(10, 30)], &[], 0).is_err());
        assert!(classify_detections(&[pr(5, 20)], &[], 0).is_err());
    }

    #[test]
    fn percentages_sum_to_100() {
        let g = [gt(0, 10), gt(20, 30), gt(40, 50), gt(60, 70), gt(80, 90)];
        let p = [pr(0, 10), pr(22, 35), pr(45, 65), pr(100, 110)];
        let c = classify_detections(&g, &p, 2).unwrap();
        let sum: f64 = DetectionClass::ALL.iter().map(|&k| c.percentage(k)).sum();
        assert!((sum - 100.0).abs() < 0.01);
        assert!((c.total_true_percentage() + c.total_false_percentage() - 100.0).abs() < 0.01);
        assert_eq!(c.total(), 1 + 1 + 1 + 1 + 1 + 2);
    }

    #[test]
    fn score_sequence_controls() {
        let (c, r) = score_sequence(&[Background; 5], &[Background; 5]).unwrap();
        assert_eq!(c.get(DetectionClass::NoDetectionControl), 1);
        assert_eq!(r[0].to_line("ctrl01"), "ctrl01;-;-;-;no_detection_control");
        let pred = seq(&[(Background, 1), (RightPoint, 3), (Background, 1)]);
        let (c, r) = score_sequence(&[Background; 5], &pred).unwrap();
        assert_eq!(c.get(DetectionClass::PhantomDetection), 1);
        assert_eq!(c.get(DetectionClass::NoDetectionControl), 0);
        assert_eq!(r[0].to_line("ctrl01"), "ctrl01;right;1;3;phantom_detection");
    }
}
