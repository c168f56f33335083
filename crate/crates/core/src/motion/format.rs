//! Line-oriented text format for pose sequences.
//!
//! ```text
//! format_version 1
//! skeleton_id hands32 fps 6.5000000000000000e1 joint_count 32
//! <timestamp> <rx ry rz> × joint_count
//! ...
//! ```
//!
//! Rotations are stored as axis-angle vectors (radians). Blank lines and
//! lines starting with `#` are ignored. Numbers are written with 17
//! significant digits.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::sequence::{MotionSequence, PoseFrame};
use crate::error::{Error, Result};
use crate::rotmath::{quat_from_axis_angle, AxisAngle};

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

struct Header {
    skeleton_id: String,
    fps: f64,
    joint_count: usize,
}

/// Parses a sequence from UTF-8 text bytes.
pub fn parse_sequence(bytes: &[u8]) -> Result<MotionSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::parse(line, "invalid UTF-8")
    })?;
    parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Parses a sequence from a buffered reader.
pub fn read_sequence(reader: impl BufRead) -> Result<MotionSequence> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        lines.push((i + 1, line));
    }
    parse_lines(lines.iter().map(|(n, l)| (*n, l.as_str())))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_sequence(&bytes)
}

fn parse_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<MotionSequence> {
    let mut records = lines.filter(|(_, l)| {
        let l = l.trim();
        !l.is_empty() && !l.starts_with('#')
    });

    let (n, line) = records.next().ok_or_else(|| Error::parse(0, "empty input"))?;
    let mut tok = line.split_whitespace();
    match (tok.next(), tok.next(), tok.next()) {
        (Some("format_version"), Some(v), None) => {
            let v: u32 = v
                .parse()
                .map_err(|_| Error::parse(n, format!("bad format_version {v:?}")))?;
            if v != SEQUENCE_FORMAT_VERSION {
                return Err(Error::parse(n, format!("unsupported format_version {v}")));
            }
        }
        _ => return Err(Error::parse(n, "expected `format_version <int>`")),
    }

    let (n, line) = records
        .next()
        .ok_or_else(|| Error::parse(n + 1, "missing header record"))?;
    let header = parse_header(n, line)?;

    let mut frames = Vec::new();
    for (n, line) in records {
        let mut values = Vec::with_capacity(1 + 3 * header.joint_count);
        for field in line.split_whitespace() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::parse(n, format!("not a number: {field:?}")))?,
            );
        }
        let frame_index = frames.len();
        if values.len() % 3 != 1 {
            return Err(Error::parse(
                n,
                format!("frame {frame_index}: expected a timestamp followed by axis-angle triples"),
            ));
        }
        let found = values.len() / 3;
        if found != header.joint_count {
            return Err(Error::validation(format!(
                "frame {frame_index}: expected {} rotations, found {found}",
                header.joint_count
            )));
        }
        let rotations = values[1..]
            .chunks_exact(3)
            .map(|c| quat_from_axis_angle(AxisAngle::new(c[0], c[1], c[2])))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::validation(format!("frame {frame_index}: {e}")))?;
        frames.push(PoseFrame::new(values[0], rotations)?);
    }
    MotionSequence::new(header.skeleton_id, header.fps, frames)
}

fn parse_header(n: usize, line: &str) -> Result<Header> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() != 6 || tok[0] != "skeleton_id" || tok[2] != "fps" || tok[4] != "joint_count" {
        return Err(Error::parse(
            n,
            "expected `skeleton_id <id> fps <real> joint_count <int>`",
        ));
    }
    let fps: f64 = tok[3]
        .parse()
        .map_err(|_| Error::parse(n, format!("bad fps {:?}", tok[3])))?;
    let joint_count: usize = tok[5]
        .parse()
        .map_err(|_| Error::parse(n, format!("bad joint_count {:?}", tok[5])))?;
    if joint_count == 0 {
        return Err(Error::validation("joint_count must be positive"));
    }
    Ok(Header {
        skeleton_id: tok[1].to_string(),
        fps,
        joint_count,
    })
}

/// Canonical text form. Byte-identical for equal inputs.
pub fn serialize_sequence(seq: &MotionSequence) -> String {
    let mut out = String::new();
    writeln!(out, "format_version {SEQUENCE_FORMAT_VERSION}").unwrap();
    writeln!(
        out,
        "skeleton_id {} fps {:.16e} joint_count {}",
        seq.skeleton_id(),
        seq.fps(),
        seq.joint_count()
    )
    .unwrap();
    for frame in seq.frames() {
        write!(out, "{:.16e}", frame.timestamp()).unwrap();
        for q in frame.rotations() {
            let aa = q.to_axis_angle();
            write!(out, " {:.16e} {:.16e} {:.16e}", aa.rx, aa.ry, aa.rz).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence(seq: &MotionSequence, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(serialize_sequence(seq).as_bytes())
}

pub fn save_sequence(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_sequence(seq)).map_err(|e| Error::io(path, e))
}
