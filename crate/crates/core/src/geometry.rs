//! Normalized boxes, detections and the class vocabulary.

use alloc::format;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Car = 0,
    Person = 1,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [ClassId::Car, ClassId::Person];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(ClassId::Car),
            1 => Some(ClassId::Person),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Car => "car",
            ClassId::Person => "person",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sensor modality a detection (or detector) belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Ir => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "RGB",
            Modality::Ir => "IR",
        })
    }
}

/// Class-labeled box with center and size normalized to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class: ClassId,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting anything that violates the normalized-box
    /// invariants. Boxes that spill over the image edge are rejected, use
    /// [`BoundingBox::from_corners`] to clip.
    pub fn new(class: ClassId, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { class, cx, cy, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!("{class} cx={cx} cy={cy} w={w} h={h}")))
        }
    }

    /// Box from corner coordinates, clipped to the unit square. Returns
    /// `None` when nothing of positive area remains.
    pub fn from_corners(class: ClassId, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<Self> {
        let (x0, x1) = (x0.min(x1).clamp(0.0, 1.0), x0.max(x1).clamp(0.0, 1.0));
        let (y0, y1) = (y0.min(y1).clamp(0.0, 1.0), y0.max(y1).clamp(0.0, 1.0));
        let (w, h) = (x1 - x0, y1 - y0);
        if !(w > 0.0 && h > 0.0) {
            return None;
        }
        Some(BoundingBox {
            class,
            cx: (x0 + x1) * 0.5,
            cy: (y0 + y1) * 0.5,
            w,
            h,
        })
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w * 0.5,
            self.cy - self.h * 0.5,
            self.cx + self.w * 0.5,
            self.cy + self.h * 0.5,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same box clipped to the unit square.
    pub fn clipped(&self) -> Option<Self> {
        let (x0, y0, x1, y1) = self.corners();
        Self::from_corners(self.class, x0, y0, x1, y1)
    }

    pub fn is_valid(&self) -> bool {
        const EPS: f64 = 1e-9;
        let finite = self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite {
            return false;
        }
        let (x0, y0, x1, y1) = self.corners();
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
            && x0 >= -EPS
            && y0 >= -EPS
            && x1 <= 1.0 + EPS
            && y1 <= 1.0 + EPS
    }

    /// Pixel-space corners `(x0, y0, x1, y1)` for an image of the given size.
    pub fn to_pixels(&self, width: usize, height: usize) -> (f64, f64, f64, f64) {
        let (x0, y0, x1, y1) = self.corners();
        (x0 * width as f64, y0 * height as f64, x1 * width as f64, y1 * height as f64)
    }

    /// Mirror about the vertical image axis.
    pub fn flipped_horizontally(&self) -> Self {
        BoundingBox {
            cx: 1.0 - self.cx,
            ..*self
        }
    }
}

/// A detector output: a box, its confidence and the modality that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub modality: Modality,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, modality: Modality) -> Self {
        Detection {
            bbox,
            confidence,
            modality,
        }
    }

    pub fn class(&self) -> ClassId {
        self.bbox.class
    }
}
