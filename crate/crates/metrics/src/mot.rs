//! MOTChallenge text format: one box per line,
//! `frame,id,bb_left,bb_top,w,h,conf,-1,-1,-1`, frames and ids 1-indexed.

use std::fmt::Write as _;
use std::path::Path;

use crate::rect::Rect;
use crate::sequence::{Detection, Sequence};
use crate::{Error, Result};

/// Renders a sequence, sorted by (frame, id). Box values use the shortest
/// representation that parses back to the same `f64`; confidences are
/// printed with six decimals.
pub fn format_mot(seq: &Sequence) -> String {
    let mut out = String::new();
    for (t, frame) in seq.frames().iter().enumerate() {
        for d in frame {
            let r = &d.rect;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},-1,-1,-1",
                t + 1,
                d.id,
                r.left,
                r.top,
                r.width,
                r.height,
                d.conf
            );
        }
    }
    out
}

/// Parses MOT text. Lines may come in any order; at least the first seven
/// fields must be present and extra fields are ignored.
pub fn parse_mot(text: &str) -> Result<Sequence> {
    let mut seq = Sequence::default();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(parse_err(line_no, format!("expected at least 7 fields, found {}", fields.len())));
        }
        let frame = parse_index(fields[0], line_no, "frame")?;
        let id = parse_index(fields[1], line_no, "id")?;
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("invalid {name} '{}'", fields[i])))
        };
        let rect = Rect::new(num(2, "bb_left")?, num(3, "bb_top")?, num(4, "width")?, num(5, "height")?);
        let conf = num(6, "conf")?;
        seq.push(frame, Detection::with_conf(id as u32, rect, conf))
            .map_err(|e| parse_err(line_no, e.to_string()))?;
    }
    Ok(seq)
}

fn parse_index(s: &str, line: usize, name: &str) -> Result<usize> {
    let v = s
        .parse::<usize>()
        .ok()
        .or_else(|| {
            // Some tools write integral values as floats ("3.0").
            s.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= u32::MAX as f64)
                .map(|v| v as usize)
        })
        .ok_or_else(|| parse_err(line, format!("invalid {name} '{s}'")))?;
    if v == 0 || v > u32::MAX as usize {
        return Err(parse_err(line, format!("{name} must be a positive 32-bit integer")));
    }
    Ok(v)
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

pub fn write_mot(path: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    std::fs::write(path, format_mot(seq))?;
    Ok(())
}

pub fn read_mot(path: impl AsRef<Path>) -> Result<Sequence> {
    parse_mot(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_line() {
        let s = parse_mot("1,1,10,20,30,40,1.000000,-1,-1,-1\n").unwrap();
        assert_eq!(s.num_frames(), 1);
        let d = s.frame(1)[0];
        assert_eq!(d.id, 1);
        assert_eq!(d.rect, Rect::new(10.0, 20.0, 30.0, 40.0));
        assert_eq!(d.conf, 1.0);
    }

    #[test]
    fn writes_reference_line() {
        let mut s = Sequence::default();
        s.push(1, Detection::new(1, Rect::new(10.0, 20.0, 30.0, 40.0))).unwrap();
        assert_eq!(format_mot(&s), "1,1,10,20,30,40,1.000000,-1,-1,-1\n");
    }

    #[test]
    fn unsorted_input_is_normalised() {
        let text = "2,5,0,0,1,1,0.5,-1,-1,-1\n1,3,0,0,1,1,0.5,-1,-1,-1\n2,1,0,0,1,1,0.5,-1,-1,-1\n";
        let s = parse_mot(text).unwrap();
        let out = format_mot(&s);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("1,3,"));
        assert!(lines[1].starts_with("2,1,"));
        assert!(lines[2].starts_with("2,5,"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1,1,0,0,1,1,1,-1,-1,-1\n1,2,zero,0,1,1,1,-1,-1,-1\n";
        match parse_mot(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_mot("1,2,3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_mot("0,1,0,0,1,1,1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_id_in_frame_is_rejected() {
        let text = "1,1,0,0,1,1,1,-1,-1,-1\n1,1,5,5,1,1,1,-1,-1,-1\n";
        assert!(matches!(parse_mot(text), Err(Error::Parse { line: 2, .. })));
    }
}
