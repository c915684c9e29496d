//! Box arithmetic for visual prompts and bounding-box guided crops.
//!
//! Coordinates stay in `f64` through the whole chain (scale, union, scale
//! again, clamp). Rounding to pixels happens only in [`PixelRect::from_box`],
//! half away from zero.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default coefficient applied to annotation boxes before drawing.
pub const DEFAULT_BOX_SCALE: f64 = 1.2;
/// Default coefficient applied to the union boundary before cropping.
pub const DEFAULT_CROP_SCALE: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("scale coefficient must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("frame dimensions must be positive, got {0}x{1}")]
    InvalidFrame(u32, u32),
    #[error("crop {0:?} lies entirely outside the {1}x{2} frame")]
    OutsideFrame(BBox, u32, u32),
    #[error("pixel rectangle {0:?} does not fit inside a {1}x{2} image")]
    RectOutOfBounds(PixelRect, u32, u32),
}

/// Axis-aligned rectangle, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when `other` lies inside `self` (boundaries inclusive, with `tol` slack).
    pub fn contains(&self, other: &BBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScaleCoefficient(f64);

impl ScaleCoefficient {
    pub fn new(c: f64) -> Result<Self, GeometryError> {
        if c.is_finite() && c > 0.0 {
            Ok(Self(c))
        } else {
            Err(GeometryError::InvalidScale(c))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn box_default() -> Self {
        Self(DEFAULT_BOX_SCALE)
    }

    pub fn crop_default() -> Self {
        Self(DEFAULT_CROP_SCALE)
    }
}

impl TryFrom<f64> for ScaleCoefficient {
    type Error = GeometryError;

    fn try_from(c: f64) -> Result<Self, Self::Error> {
        Self::new(c)
    }
}

impl From<ScaleCoefficient> for f64 {
    fn from(c: ScaleCoefficient) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

impl FrameDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidFrame(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn of(image: &RgbImage) -> Result<Self, GeometryError> {
        Self::new(image.width(), image.height())
    }
}

/// Grows (or shrinks) a box about its center by `c` in both axes.
pub fn scale_box(b: &BBox, c: ScaleCoefficient) -> BBox {
    let c = c.value();
    BBox {
        x: b.x + b.w / 2.0 - c * b.w / 2.0,
        y: b.y + b.h / 2.0 - c * b.h / 2.0,
        w: c * b.w,
        h: c * b.h,
    }
}

/// Smallest rectangle enclosing both boxes.
pub fn union_crop(bp: &BBox, bv: &BBox) -> BBox {
    let x_min = bp.x.min(bv.x);
    let y_min = bp.y.min(bv.y);
    let x_max = bp.right().max(bv.right());
    let y_max = bp.bottom().max(bv.bottom());
    BBox {
        x: x_min,
        y: y_min,
        w: x_max - x_min,
        h: y_max - y_min,
    }
}

/// Intersects a box with `[0, width] x [0, height]`.
pub fn clamp_to_frame(b: &BBox, dims: FrameDims) -> Result<BBox, GeometryError> {
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(f64::from(dims.width));
    let y1 = b.bottom().min(f64::from(dims.height));
    if x1 <= x0 || y1 <= y0 {
        return Err(GeometryError::OutsideFrame(*b, dims.width, dims.height));
    }
    Ok(BBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Union boundary of the two (already scaled) boxes, scaled by `c_star` and
/// clamped to the frame.
pub fn crop_view(
    bp: &BBox,
    bv: &BBox,
    c_star: ScaleCoefficient,
    dims: FrameDims,
) -> Result<BBox, GeometryError> {
    let boundary = scale_box(&union_crop(bp, bv), c_star);
    clamp_to_frame(&boundary, dims)
}

/// Integer pixel rectangle; `x..x+w`, `y..y+h` are the covered columns/rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    /// Rounds both corners half away from zero and clamps them to the frame.
    /// Returns `None` when the result has no area.
    pub fn from_box(b: &BBox, dims: FrameDims) -> Option<Self> {
        let clamp = |v: f64, hi: u32| v.round().clamp(0.0, f64::from(hi)) as u32;
        let x0 = clamp(b.x, dims.width);
        let y0 = clamp(b.y, dims.height);
        let x1 = clamp(b.right(), dims.width);
        let y1 = clamp(b.bottom(), dims.height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn full(dims: FrameDims) -> Self {
        Self {
            x: 0,
            y: 0,
            w: dims.width,
            h: dims.height,
        }
    }

    pub fn to_box(self) -> BBox {
        BBox {
            x: f64::from(self.x),
            y: f64::from(self.y),
            w: f64::from(self.w),
            h: f64::from(self.h),
        }
    }
}

/// Copies the sub-rectangle `v` out of `frame`.
pub fn crop_frame(frame: &RgbImage, v: PixelRect) -> Result<RgbImage, GeometryError> {
    let (fw, fh) = frame.dimensions();
    let fits = v.w > 0
        && v.h > 0
        && u64::from(v.x) + u64::from(v.w) <= u64::from(fw)
        && u64::from(v.y) + u64::from(v.h) <= u64::from(fh);
    if !fits {
        return Err(GeometryError::RectOutOfBounds(v, fw, fh));
    }
    Ok(image::imageops::crop_imm(frame, v.x, v.y, v.w, v.h).to_image())
}
