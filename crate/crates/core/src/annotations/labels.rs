//! YOLO text label (`class cx cy w h`) and prediction (`class cx cy w h conf`) files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BoxLabel, Detection};
use crate::error::{Error, Result};

fn push_box(out: &mut String, b: &BoxLabel) {
    let _ = write!(out, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h);
}

pub fn format_labels(boxes: &[BoxLabel]) -> String {
    let mut out = String::new();
    for b in boxes {
        push_box(&mut out, b);
        out.push('\n');
    }
    out
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        push_box(&mut out, &d.bbox);
        let _ = writeln!(out, " {:.6}", d.confidence);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_labels(boxes: &[BoxLabel], path: impl AsRef<Path>) -> Result<()> {
    for b in boxes {
        b.validate()?;
    }
    write_text(path.as_ref(), &format_labels(boxes))
}

pub fn write_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    for d in dets {
        d.validate()?;
    }
    write_text(path.as_ref(), &format_detections(dets))
}

fn parse_lines(text: &str, source: &str, fields: usize) -> Result<Vec<(BoxLabel, Option<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != fields {
            return Err(malformed(format!("expected {fields} fields, found {}", parts.len())));
        }
        let class_id: u32 = parts[0]
            .parse()
            .map_err(|_| malformed(format!("class id {:?} is not a non-negative integer", parts[0])))?;
        let nums = parts[1..]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| malformed(format!("{p:?} is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let bbox = BoxLabel::new(class_id, nums[0], nums[1], nums[2], nums[3]);
        bbox.validate()?;
        let conf = nums.get(4).copied();
        if let Some(c) = conf {
            if !(c.is_finite() && (0.0..=1.0).contains(&c)) {
                return Err(Error::OutOfRangeValue(format!("{source}:{}: confidence {c}", i + 1)));
            }
        }
        out.push((bbox, conf));
    }
    Ok(out)
}

pub fn parse_labels(text: &str, source: &str) -> Result<Vec<BoxLabel>> {
    Ok(parse_lines(text, source, 5)?.into_iter().map(|(b, _)| b).collect())
}

pub fn parse_detections(text: &str, source: &str) -> Result<Vec<Detection>> {
    Ok(parse_lines(text, source, 6)?
        .into_iter()
        .map(|(b, c)| Detection::new(b, c.unwrap_or(0.0)))
        .collect())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<BoxLabel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_formatting() {
        let s = format_labels(&[BoxLabel::new(0, 0.5, 0.5, 0.25, 0.25)]);
        assert_eq!(s, "0 0.500000 0.500000 0.250000 0.250000\n");
        let s = format_detections(&[Detection::new(BoxLabel::new(0, 0.5, 0.5, 0.25, 0.25), 0.875)]);
        assert_eq!(s, "0 0.500000 0.500000 0.250000 0.250000 0.875000\n");
    }

    #[test]
    fn malformed_lines() {
        let err = parse_labels("0 0.5 0.5\n", "x").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1, .. }));
        assert!(matches!(parse_labels("0 a 0.5 0.1 0.1", "x"), Err(Error::MalformedLine { .. })));
        assert!(matches!(parse_labels("-1 0.5 0.5 0.1 0.1", "x"), Err(Error::MalformedLine { .. })));
        assert!(matches!(parse_labels("0 0.5 0.5 1.5 0.1", "x"), Err(Error::OutOfRangeValue(_))));
        // prediction line where a label is expected
        assert!(matches!(parse_labels("0 0.5 0.5 0.1 0.1 0.9", "x"), Err(Error::MalformedLine { .. })));
        assert!(matches!(parse_detections("0 0.5 0.5 0.1 0.1 1.9", "x"), Err(Error::OutOfRangeValue(_))));
        assert!(parse_labels("", "x").unwrap().is_empty());
    }

    fn arb_box() -> impl Strategy<Value = BoxLabel> {
        (0.01f64..1.0, 0.01f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(w, h, u, v)| {
            BoxLabel::new(0, w / 2.0 + u * (1.0 - w), h / 2.0 + v * (1.0 - h), w, h)
        })
    }

    proptest! {
        #[test]
        fn round_trip_at_six_decimals(boxes in proptest::collection::vec(arb_box(), 0..6), conf in 0.0f64..=1.0) {
            let back = parse_labels(&format_labels(&boxes), "mem").unwrap();
            prop_assert_eq!(back.len(), boxes.len());
            for (a, b) in boxes.iter().zip(&back) {
                for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
                    prop_assert!((x - y).abs() <= 5e-7 + 1e-12);
                }
            }
            let dets: Vec<_> = boxes.iter().map(|b| Detection::new(*b, conf)).collect();
            let back = parse_detections(&format_detections(&dets), "mem").unwrap();
            for (a, b) in dets.iter().zip(&back) {
                prop_assert!((a.confidence - b.confidence).abs() <= 5e-7 + 1e-12);
            }
            // formatting is a fixpoint after one quantization
            prop_assert_eq!(format_labels(&parse_labels(&format_labels(&boxes), "m").unwrap()), format_labels(&boxes));
        }
    }
}
