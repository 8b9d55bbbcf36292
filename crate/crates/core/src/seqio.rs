//! Line-delimited sequence files and dataset directories.
//!
//! A sequence file starts with a header line
//!
//! ```text
//! #subject=<id> sequence=<id>
//! ```
//!
//! followed by one line per frame:
//!
//! ```text
//! frame_index;label;head=x,y,z;neck=x,y,z;...
//! ```
//!
//! with all 15 joints in canonical [`Joint::ALL`] order. Numbers are written
//! with the shortest representation that parses back to the same `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::skeleton::{Dataset, GestureLabel, Joint, LabeledSequence, SkeletonFrame, Vec3};

pub const SEQUENCE_EXTENSION: &str = "seq";

fn parse_header(line: &str, lineno: usize) -> Result<(String, String)> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(lineno, "missing '#subject=... sequence=...' header"))?;
    let mut subject = None;
    let mut sequence = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("subject", v)) if !v.is_empty() => subject = Some(v.to_owned()),
            Some(("sequence", v)) if !v.is_empty() => sequence = Some(v.to_owned()),
            _ => return Err(Error::parse(lineno, format!("bad header field {field:?}"))),
        }
    }
    match (subject, sequence) {
        (Some(s), Some(q)) => Ok((s, q)),
        _ => Err(Error::parse(lineno, "header needs both subject= and sequence=")),
    }
}

fn parse_coord(s: &str, lineno: usize, joint: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(lineno, format!("joint {joint}: bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(lineno, format!("joint {joint}: non-finite coordinate")));
    }
    Ok(v)
}

fn parse_frame_line(line: &str, lineno: usize) -> Result<(SkeletonFrame, GestureLabel)> {
    let mut fields = line.split(';');
    let index_field = fields.next().unwrap_or_default();
    let frame_index: usize = index_field
        .trim()
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad frame index {index_field:?}")))?;
    let label_field = fields
        .next()
        .ok_or_else(|| Error::parse(lineno, "missing label"))?;
    let label = label_field
        .trim()
        .parse()
        .map_err(|e: Error| Error::parse(lineno, e.to_string()))?;

    let mut joints: [Option<Vec3>; Joint::COUNT] = [None; Joint::COUNT];
    for field in fields {
        let (name, coords) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, format!("bad joint field {field:?}")))?;
        let joint = Joint::from_name(name.trim())
            .ok_or_else(|| Error::parse(lineno, format!("unknown joint {name:?}")))?;
        let parts: Vec<&str> = coords.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("joint {}: expected 3 coordinates", joint.name()),
            ));
        }
        let p = Vec3::new(
            parse_coord(parts[0], lineno, joint.name())?,
            parse_coord(parts[1], lineno, joint.name())?,
            parse_coord(parts[2], lineno, joint.name())?,
        );
        if joints[joint.index()].replace(p).is_some() {
            return Err(Error::parse(lineno, format!("duplicate joint {}", joint.name())));
        }
    }
    let mut out = [Vec3::ZERO; Joint::COUNT];
    for j in Joint::ALL {
        out[j.index()] = joints[j.index()]
            .ok_or_else(|| Error::parse(lineno, format!("missing joint {}", j.name())))?;
    }
    Ok((SkeletonFrame::new(frame_index, out), label))
}

/// Parses one sequence file. Blank lines are ignored.
pub fn parse_sequence<R: Read>(reader: R) -> Result<LabeledSequence> {
    let reader = BufReader::new(reader);
    let mut header = None;
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(parse_header(line, lineno)?);
            continue;
        }
        let (frame, label) = parse_frame_line(line, lineno)?;
        if frame.frame_index != frames.len() {
            return Err(Error::parse(
                lineno,
                format!(
                    "non-contiguous frame index {} (expected {})",
                    frame.frame_index,
                    frames.len()
                ),
            ));
        }
        frames.push(frame);
        labels.push(label);
    }
    let (subject_id, sequence_id) =
        header.ok_or_else(|| Error::parse(1, "empty sequence file"))?;
    let seq = LabeledSequence {
        subject_id,
        sequence_id,
        frames,
        labels,
    };
    seq.validate()?;
    Ok(seq)
}

/// Writes `seq` in the sequence file format. Invalid sequences are rejected
/// before anything is written.
pub fn write_sequence<W: Write>(seq: &LabeledSequence, mut sink: W) -> Result<()> {
    seq.validate()?;
    let mut buf = String::with_capacity(seq.len() * 400);
    buf.push_str(&format!(
        "#subject={} sequence={}\n",
        seq.subject_id, seq.sequence_id
    ));
    for (frame, label) in seq.frames.iter().zip(&seq.labels) {
        buf.push_str(&format!("{};{}", frame.frame_index, label));
        for j in Joint::ALL {
            let p = frame.joint(j);
            buf.push_str(&format!(";{}={},{},{}", j.name(), p.x, p.y, p.z));
        }
        buf.push('\n');
    }
    sink.write_all(buf.as_bytes())?;
    sink.flush()?;
    Ok(())
}

pub fn sequence_file_name(seq: &LabeledSequence) -> String {
    format!(
        "{}__{}.{}",
        seq.subject_id, seq.sequence_id, SEQUENCE_EXTENSION
    )
}

/// Writes every sequence of `ds` into `dir` (created if needed).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    for seq in &ds.sequences {
        let file = fs::File::create(dir.join(sequence_file_name(seq)))?;
        write_sequence(seq, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

/// Reads all `*.seq` files in `dir`, in file-name order.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(SEQUENCE_EXTENSION))
        .collect();
    paths.sort();
    let mut sequences = Vec::with_capacity(paths.len());
    for p in paths {
        let file = fs::File::open(&p)?;
        let seq = parse_sequence(file).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })?;
        sequences.push(seq);
    }
    Dataset::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_with(label: &str, skip: Option<Joint>) -> String {
        let mut s = format!("0;{label}");
        for (k, j) in Joint::ALL.iter().enumerate() {
            if Some(*j) == skip {
                continue;
            }
            s.push_str(&format!(";{}={},{},{}", j.name(), k as f64 * 0.1, 1.5, 4.0));
        }
        s
    }

    #[test]
    fn minimal_sequence() {
        let text = format!("#subject=A sequence=s0\n{}\n", line_with("background", None));
        let seq = parse_sequence(text.as_bytes()).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.labels, vec![GestureLabel::Background]);
        assert_eq!(seq.subject_id, "A");
        assert_eq!(seq.frames[0].joint(Joint::Neck), Vec3::new(0.1, 1.5, 4.0));

        let mut out = Vec::new();
        write_sequence(&seq, &mut out).unwrap();
        let written = String::from_utf8(out).unwrap();
        assert_eq!(written.lines().count(), 2);
        assert_eq!(written, text);
    }

    #[test]
    fn missing_joint_names_joint_and_line() {
        let text = format!(
            "#subject=A sequence=s0\n{}\n",
            line_with("left_point", Some(Joint::LeftHand))
        );
        let err = parse_sequence(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("left_hand"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_label_and_gap_rejected() {
        let text = format!("#subject=A sequence=s0\n{}\n", line_with("wave", None));
        assert!(matches!(
            parse_sequence(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));

        let l0 = line_with("background", None);
        let l2 = l0.replacen("0;", "2;", 1);
        let text = format!("#subject=A sequence=s0\n{l0}\n{l2}\n");
        assert!(matches!(
            parse_sequence(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));

        let text = format!("{}\n", line_with("background", None));
        assert!(parse_sequence(text.as_bytes()).is_err());
        let text = "#subject=A sequence=s0\n0;background;head=1,2\n";
        assert!(parse_sequence(text.as_bytes()).is_err());
    }

    #[test]
    fn empty_labels_rejected_before_writing() {
        let text = format!("#subject=A sequence=s0\n{}\n", line_with("background", None));
        let mut seq = parse_sequence(text.as_bytes()).unwrap();
        seq.labels.clear();
        let mut out = Vec::new();
        assert!(write_sequence(&seq, &mut out).is_err());
        assert!(out.is_empty());
    }

    fn arb_sequence(max_len: usize) -> impl Strategy<Value = LabeledSequence> {
        (1..=max_len).prop_flat_map(|len| {
            (
                prop::collection::vec(
                    prop::array::uniform32(-1.0e3f64..1.0e3).prop_map(|a| a),
                    len,
                ),
                prop::collection::vec(0usize..GestureLabel::COUNT, len),
            )
                .prop_map(move |(coords, labels)| LabeledSequence {
                    subject_id: "subj".into(),
                    sequence_id: "seq-1".into(),
                    frames: coords
                        .iter()
                        .enumerate()
                        .map(|(i, c)| {
                            let mut joints = [Vec3::ZERO; Joint::COUNT];
                            for (k, p) in joints.iter_mut().enumerate() {
                                *p = Vec3::new(c[k], c[(k + 15) % 32], c[(k + 7) % 32] * 1e-3);
                            }
                            SkeletonFrame::new(i, joints)
                        })
                        .collect(),
                    labels: labels
                        .into_iter()
                        .map(|l| GestureLabel::from_index(l).unwrap())
                        .collect(),
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn write_then_parse_is_identity(seq in arb_sequence(100)) {
            let mut out = Vec::new();
            write_sequence(&seq, &mut out).unwrap();
            let parsed = parse_sequence(out.as_slice()).unwrap();
            prop_assert_eq!(&parsed, &seq);
            let mut again = Vec::new();
            write_sequence(&parsed, &mut again).unwrap();
            prop_assert_eq!(again, out);
        }
    }
}
