use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EDGE_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in normalized image coordinates (YOLO convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLabel {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxLabel {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoxLabel { class_id, cx, cy, w, h }
    }

    /// Builds a box from corner coordinates.
    pub fn from_corners(class_id: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BoxLabel {
            class_id,
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.cx, self.cy, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRangeValue(format!("non-finite box {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::OutOfRangeValue(format!("box centre outside [0,1]: {self:?}")));
        }
        if !(self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::OutOfRangeValue(format!("box size outside (0,1]: {self:?}")));
        }
        let (x0, y0, x1, y1) = self.corners();
        if x0 < -EDGE_TOLERANCE || y0 < -EDGE_TOLERANCE || x1 > 1.0 + EDGE_TOLERANCE || y1 > 1.0 + EDGE_TOLERANCE {
            return Err(Error::OutOfRangeValue(format!("box extends past the image: {self:?}")));
        }
        Ok(())
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BoxLabel) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// A predicted box with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoxLabel,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoxLabel, confidence: f64) -> Self {
        Detection { bbox, confidence }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(Error::OutOfRangeValue(format!("confidence {}", self.confidence)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = BoxLabel::new(0, 0.25, 0.25, 0.5, 0.5);
        let b = BoxLabel::new(0, 0.5, 0.5, 0.5, 0.5);
        assert_eq!(a.iou(&a), 1.0);
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-12);
        let c = BoxLabel::new(0, 0.9, 0.9, 0.1, 0.1);
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn validation_edges() {
        assert!(BoxLabel::new(0, 0.5, 0.5, 1.0, 1.0).validate().is_ok());
        assert!(BoxLabel::new(0, 0.05, 0.5, 0.1000005, 0.2).validate().is_ok());
        assert!(BoxLabel::new(0, 0.05, 0.5, 0.2, 0.2).validate().is_err());
        assert!(BoxLabel::new(0, 0.5, 0.5, 0.0, 0.2).validate().is_err());
        assert!(Detection::new(BoxLabel::new(0, 0.5, 0.5, 0.2, 0.2), 1.2).validate().is_err());
    }
}
