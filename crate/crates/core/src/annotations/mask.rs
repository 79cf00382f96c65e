use std::collections::VecDeque;

use super::BoxLabel;
use crate::error::{Error, Result};

/// One box per 4-connected foreground component with at least `min_area_px` pixels.
///
/// `mask` is row-major `width x height` with values 0 or 1. Boxes use pixel-edge
/// extents: columns `c0..=c1` map to `cx = (c0 + c1 + 1) / 2W`, `w = (c1 - c0 + 1) / W`.
/// Components are emitted in raster order of their first pixel.
pub fn mask_to_boxes(mask: &[f64], width: usize, height: usize, min_area_px: usize) -> Result<Vec<BoxLabel>> {
    if mask.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "mask of {} pixels for {width}x{height}",
            mask.len()
        )));
    }
    if let Some(i) = mask.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryMask(mask[i], i));
    }
    let min_area = min_area_px.max(1);
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let mut boxes = Vec::new();
    for start in 0..mask.len() {
        if mask[start] == 0.0 || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut c0, mut c1, mut r0, mut r1) = (usize::MAX, 0, usize::MAX, 0);
        let mut area = 0usize;
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / width, p % width);
            area += 1;
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
            let mut visit = |q: usize| {
                if mask[q] != 0.0 && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < width {
                visit(p + 1);
            }
            if r > 0 {
                visit(p - width);
            }
            if r + 1 < height {
                visit(p + width);
            }
        }
        if area >= min_area {
            let (w, h) = (width as f64, height as f64);
            boxes.push(BoxLabel {
                class_id: 0,
                cx: (c0 + c1 + 1) as f64 / (2.0 * w),
                cy: (r0 + r1 + 1) as f64 / (2.0 * h),
                w: (c1 - c0 + 1) as f64 / w,
                h: (r1 - r0 + 1) as f64 / h,
            });
        }
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paint(mask: &mut [f64], width: usize, rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) {
        for r in rows {
            for c in cols.clone() {
                mask[r * width + c] = 1.0;
            }
        }
    }

    #[test]
    fn empty_mask() {
        assert!(mask_to_boxes(&vec![0.0; 100 * 100], 100, 100, 16).unwrap().is_empty());
    }

    #[test]
    fn single_rectangle() {
        let mut m = vec![0.0; 100 * 100];
        paint(&mut m, 100, 10..=19, 30..=49);
        let b = mask_to_boxes(&m, 100, 100, 16).unwrap();
        assert_eq!(b.len(), 1);
        let b = b[0];
        assert!((b.cx - 0.40).abs() < 1e-12);
        assert!((b.cy - 0.15).abs() < 1e-12);
        assert!((b.w - 0.20).abs() < 1e-12);
        assert!((b.h - 0.10).abs() < 1e-12);
    }

    #[test]
    fn two_blobs_and_speckle() {
        let mut m = vec![0.0; 50 * 40];
        paint(&mut m, 50, 5..=9, 5..=9);
        paint(&mut m, 50, 20..=24, 30..=34);
        paint(&mut m, 50, 35..=36, 45..=46);
        assert_eq!(mask_to_boxes(&m, 50, 40, 16).unwrap().len(), 2);
        assert_eq!(mask_to_boxes(&m, 50, 40, 1).unwrap().len(), 3);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let mut m = vec![0.0; 4 * 4];
        m[0] = 1.0;
        m[5] = 1.0;
        assert_eq!(mask_to_boxes(&m, 4, 4, 1).unwrap().len(), 2);
    }

    #[test]
    fn non_binary_rejected() {
        let mut m = vec![0.0; 16];
        m[3] = 0.5;
        assert!(matches!(mask_to_boxes(&m, 4, 4, 1), Err(Error::NonBinaryMask(v, 3)) if v == 0.5));
    }

    proptest! {
        #[test]
        fn boxes_contain_and_are_minimal(bits in proptest::collection::vec(proptest::bool::weighted(0.35), 12 * 9)) {
            let (w, h) = (12usize, 9usize);
            let mask: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let boxes = mask_to_boxes(&mask, w, h, 1).unwrap();
            // pixel-space extents of each box
            let spans: Vec<(usize, usize, usize, usize)> = boxes.iter().map(|b| {
                let c0 = ((b.cx - b.w / 2.0) * w as f64).round() as usize;
                let c1 = ((b.cx + b.w / 2.0) * w as f64).round() as usize - 1;
                let r0 = ((b.cy - b.h / 2.0) * h as f64).round() as usize;
                let r1 = ((b.cy + b.h / 2.0) * h as f64).round() as usize - 1;
                (c0, c1, r0, r1)
            }).collect();
            for (i, &v) in mask.iter().enumerate() {
                if v == 1.0 {
                    let (r, c) = (i / w, i % w);
                    prop_assert!(spans.iter().any(|&(c0, c1, r0, r1)| c >= c0 && c <= c1 && r >= r0 && r <= r1));
                }
            }
            // every side touches foreground (shrinking by one pixel loses a pixel)
            for &(c0, c1, r0, r1) in &spans {
                let fg = |r: usize, c: usize| mask[r * w + c] == 1.0;
                prop_assert!((r0..=r1).any(|r| fg(r, c0)));
                prop_assert!((r0..=r1).any(|r| fg(r, c1)));
                prop_assert!((c0..=c1).any(|c| fg(r0, c)));
                prop_assert!((c0..=c1).any(|c| fg(r1, c)));
            }
        }
    }
}
