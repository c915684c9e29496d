//! Rectangle visual prompts and global/local joint views.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FrameRef, Perspective, SegmentTuple, Subject};
use crate::geometry::{
    crop_frame, crop_view, scale_box, BBox, FrameDims, GeometryError, PixelRect, ScaleCoefficient,
};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("segment {0} has no frames")]
    NoFrames(String),
    #[error("no box available for the joint crop")]
    NoBoxes,
    #[error("pedestrian and vehicle colors must differ")]
    SameColors,
    #[error("line thickness must be at least 1")]
    ZeroThickness,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub pedestrian_color: [u8; 3],
    pub vehicle_color: [u8; 3],
    /// Fixed outline width in pixels; `None` derives it from the frame width.
    #[serde(default)]
    pub line_thickness: Option<u32>,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            pedestrian_color: [0, 255, 0],
            vehicle_color: [0, 0, 255],
            line_thickness: None,
        }
    }
}

impl PromptStyle {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.pedestrian_color == self.vehicle_color {
            return Err(PromptError::SameColors);
        }
        if self.line_thickness == Some(0) {
            return Err(PromptError::ZeroThickness);
        }
        Ok(())
    }

    /// `max(2, round(0.004 * width))` unless fixed.
    pub fn thickness_for(&self, frame_width: u32) -> u32 {
        self.line_thickness
            .unwrap_or_else(|| ((0.004 * f64::from(frame_width)).round() as u32).max(2))
    }
}

/// Which image the local crop is cut from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropSource {
    #[default]
    Augmented,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointViewConfig {
    pub c: ScaleCoefficient,
    pub c_star: ScaleCoefficient,
    pub style: PromptStyle,
    #[serde(default)]
    pub crop_source: CropSource,
}

impl Default for JointViewConfig {
    fn default() -> Self {
        Self {
            c: ScaleCoefficient::box_default(),
            c_star: ScaleCoefficient::crop_default(),
            style: PromptStyle::default(),
            crop_source: CropSource::Augmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameChoice<'a> {
    pub frame: &'a FrameRef,
    pub warning: Option<String>,
}

/// First frame of the clip, unless it misses a subject that other frames
/// carry; then the earliest frame carrying both boxes, else either box.
pub fn select_frame(tuple: &SegmentTuple) -> Result<FrameChoice<'_>, PromptError> {
    let first = tuple.frames.first().ok_or_else(|| PromptError::NoFrames(tuple.id()))?;
    let wanted: Vec<Subject> = Subject::ALL.into_iter().filter(|s| tuple.has_subject(*s)).collect();
    let carries_all = |f: &FrameRef| wanted.iter().all(|s| f.subject_box(*s).is_some());
    if wanted.is_empty() {
        return Ok(FrameChoice {
            frame: first,
            warning: Some(format!("{}: no frame carries a box", tuple.id())),
        });
    }
    if carries_all(first) {
        return Ok(FrameChoice { frame: first, warning: None });
    }
    let both = tuple
        .frames
        .iter()
        .find(|f| f.pedestrian.is_some() && f.vehicle.is_some());
    let either = || tuple.frames.iter().find(|f| f.pedestrian.is_some() || f.vehicle.is_some());
    let frame = both.or_else(either).expect("some frame carries a box");
    Ok(FrameChoice {
        frame,
        warning: Some(format!(
            "{}: first frame lacks boxes, using frame {}",
            tuple.id(),
            frame.index
        )),
    })
}

/// In-frame pixels of the outline of `b` with the given thickness.
/// Interior and off-frame pixels are excluded.
pub fn outline_contains(b: &BBox, thickness: u32, x: u32, y: u32) -> bool {
    let (x0, y0) = (b.x.round() as i64, b.y.round() as i64);
    let (x1, y1) = (b.right().round() as i64, b.bottom().round() as i64);
    let (x, y, t) = (i64::from(x), i64::from(y), i64::from(thickness));
    let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
    inside && (x < x0 + t || x >= x1 - t || y < y0 + t || y >= y1 - t)
}

fn draw_outline(image: &mut RgbImage, b: &BBox, thickness: u32, color: Rgb<u8>) {
    let (w, h) = image.dimensions();
    let clip = |v: f64, hi: u32| v.round().clamp(0.0, f64::from(hi)) as u32;
    let (cx0, cy0) = (clip(b.x, w), clip(b.y, h));
    let (cx1, cy1) = (clip(b.right(), w), clip(b.bottom(), h));
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            if outline_contains(b, thickness, x, y) {
                image.put_pixel(x, y, color);
            }
        }
    }
}

/// Copy of `frame` with the (already scaled) boxes outlined. The vehicle is
/// drawn first so the pedestrian outline wins where they overlap.
pub fn draw_prompt(frame: &RgbImage, bp: Option<&BBox>, bv: Option<&BBox>, style: &PromptStyle) -> RgbImage {
    let mut out = frame.clone();
    let t = style.thickness_for(frame.width());
    if let Some(b) = bv {
        draw_outline(&mut out, b, t, Rgb(style.vehicle_color));
    }
    if let Some(b) = bp {
        draw_outline(&mut out, b, t, Rgb(style.pedestrian_color));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointViews {
    pub global: RgbImage,
    pub local: RgbImage,
    pub crop_box: PixelRect,
}

/// Augmented full frame plus the crop around both scaled boxes.
pub fn build_joint_views(
    frame: &RgbImage,
    bp: Option<&BBox>,
    bv: Option<&BBox>,
    cfg: &JointViewConfig,
) -> Result<JointViews, PromptError> {
    cfg.style.validate()?;
    let dims = FrameDims::of(frame)?;
    let sp = bp.map(|b| scale_box(b, cfg.c));
    let sv = bv.map(|b| scale_box(b, cfg.c));
    let (a, b) = match (sp.as_ref(), sv.as_ref()) {
        (Some(p), Some(v)) => (p, v),
        (Some(only), None) | (None, Some(only)) => (only, only),
        (None, None) => return Err(PromptError::NoBoxes),
    };
    let crop = crop_view(a, b, cfg.c_star, dims)?;
    let crop_box = PixelRect::from_box(&crop, dims)
        .ok_or(GeometryError::OutsideFrame(crop, dims.width, dims.height))?;
    let global = draw_prompt(frame, sp.as_ref(), sv.as_ref(), &cfg.style);
    let local = match cfg.crop_source {
        CropSource::Augmented => crop_frame(&global, crop_box)?,
        CropSource::Raw => crop_frame(frame, crop_box)?,
    };
    Ok(JointViews { global, local, crop_box })
}

/// One rendered tuple. Paths are relative to the render output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderEntry {
    pub tuple_id: String,
    pub scenario_id: String,
    pub view_id: String,
    pub phase_index: u8,
    pub perspective: Perspective,
    pub frame_index: u32,
    pub frame_image: String,
    pub global: String,
    pub global_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_box: Option<PixelRect>,
    /// No box on the chosen frame, so no local crop was produced.
    pub global_only: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RenderEntry {
    #[cfg(test)]
    pub(crate) fn for_test(tuple_id: &str, global: &str, local: Option<&str>) -> Self {
        let mut parts = tuple_id.split('/');
        let scenario_id = parts.next().unwrap_or_default().to_string();
        let view_id = parts.next().unwrap_or_default().to_string();
        let phase_index = parts.next().and_then(|p| p.parse().ok()).unwrap_or(0);
        Self {
            tuple_id: tuple_id.into(),
            scenario_id,
            view_id,
            phase_index,
            perspective: Perspective::Overhead,
            frame_index: 0,
            frame_image: "f.png".into(),
            global: global.into(),
            global_sha256: String::new(),
            local: local.map(Into::into),
            local_sha256: None,
            crop_box: None,
            global_only: local.is_none(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub entries: Vec<RenderEntry>,
}

impl RenderManifest {
    pub fn entry(&self, tuple_id: &str) -> Option<&RenderEntry> {
        self.entries.iter().find(|e| e.tuple_id == tuple_id)
    }
}
