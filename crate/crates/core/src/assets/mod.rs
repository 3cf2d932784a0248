//! Project assets: frame sequences, tracked boxes, masks, optical flow and the
//! manifest that ties them together.

mod background;
mod boxes;
pub mod cache;
mod flow;
pub mod manifest;
mod project;

use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, Luma, RgbImage};

use crate::{Error, Result};

pub use background::estimate_background;
pub use boxes::{read_boxes_csv, write_boxes_csv};
pub use flow::{read_flow_file, write_flow_file, FlowField};
pub use manifest::ProjectManifest;
pub use project::{
    load_frame_dir, load_mask_dir, load_project, manifest_hash, numbered, write_png, LoadedActor, LoadedSource,
    Project, SourceId,
};

/// Pixels added around a tracked box wherever per-pixel queries consult it.
pub const BOX_DILATION: f64 = 8.0;

/// Frames of one input video. All frames share the same dimensions.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    width: u32,
    height: u32,
    frame_rate: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>, frame_rate: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidAsset(format!(
                "a frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::param("frame_rate", "must be positive"));
        }
        let (width, height) = frames[0].dimensions();
        for (t, f) in frames.iter().enumerate() {
            if f.dimensions() != (width, height) {
                return Err(Error::DimensionMismatch {
                    path: format!("frame {t}").into(),
                    expected: (width, height),
                    found: f.dimensions(),
                });
            }
        }
        Ok(Self {
            frames,
            width,
            height,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frame(&self, t: usize) -> &RgbImage {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }
}

/// Inclusive-exclusive pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn union(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let (x0, x1) = (self.x0, self.x1);
        (self.y0..self.y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// Oriented bounding box as produced by the tracker. Pixel `(x, y)` sits at
/// image position `(x, y)`; `angle` rotates the box counter-clockwise in
/// image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

impl OrientedBox {
    pub fn axis_aligned(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self {
            cx,
            cy,
            width,
            height,
            angle: 0.0,
        }
    }

    pub fn contains(&self, x: f64, y: f64, dilation: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.width / 2.0 + dilation && v.abs() <= self.height / 2.0 + dilation
    }

    pub fn contains_pixel(&self, x: u32, y: u32, dilation: f64) -> bool {
        self.contains(x as f64, y as f64, dilation)
    }

    /// Half-diagonal of the undilated box.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.width * self.width + self.height * self.height).sqrt()
    }

    /// Tight pixel bounds of the rasterized (dilated) box, clipped to the image.
    pub fn bounds(&self, dilation: f64, width: u32, height: u32) -> PixelRect {
        let hw = self.width / 2.0 + dilation;
        let hh = self.height / 2.0 + dilation;
        let (s, c) = self.angle.sin_cos();
        let ex = hw * c.abs() + hh * s.abs();
        let ey = hw * s.abs() + hh * c.abs();
        let clip = |v: f64, hi: u32| v.max(0.0).min(hi as f64) as u32;
        let x0 = clip((self.cx - ex).ceil(), width);
        let y0 = clip((self.cy - ey).ceil(), height);
        let x1 = clip((self.cx + ex).floor() + 1.0, width);
        let y1 = clip((self.cy + ey).floor() + 1.0, height);
        PixelRect {
            x0,
            y0,
            x1: x1.max(x0),
            y1: y1.max(y0),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Reads 0/255 grayscale; any value ≥ 128 is foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w,
            height: h,
            bits: img.pixels().map(|p| p.0[0] >= 128).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone)]
pub enum ActorKind {
    FullFrame,
    Tracked {
        boxes: Vec<OrientedBox>,
        /// `None` until segmentation has run.
        masks: Option<Vec<Mask>>,
    },
}

/// One controllable element: either the whole frame or a tracked patch.
#[derive(Debug, Clone)]
pub struct ActorSequence {
    id: String,
    source: Arc<FrameSequence>,
    kind: ActorKind,
}

impl ActorSequence {
    pub fn full_frame(id: impl Into<String>, source: Arc<FrameSequence>) -> Self {
        Self {
            id: id.into(),
            source,
            kind: ActorKind::FullFrame,
        }
    }

    pub fn tracked(
        id: impl Into<String>,
        source: Arc<FrameSequence>,
        boxes: Vec<OrientedBox>,
        masks: Option<Vec<Mask>>,
    ) -> Result<Self> {
        let mut actor = Self {
            id: id.into(),
            source,
            kind: ActorKind::Tracked { boxes, masks: None },
        };
        actor.validate_boxes()?;
        if let Some(masks) = masks {
            actor.set_masks(masks)?;
        }
        Ok(actor)
    }

    fn validate_boxes(&self) -> Result<()> {
        if let ActorKind::Tracked { boxes, .. } = &self.kind {
            if boxes.len() != self.source.len() {
                return Err(Error::InvalidAsset(format!(
                    "actor {:?}: {} boxes for {} frames",
                    self.id,
                    boxes.len(),
                    self.source.len()
                )));
            }
            if let Some(b) = boxes
                .iter()
                .find(|b| !(b.width > 0.0 && b.height > 0.0 && b.cx.is_finite() && b.cy.is_finite()))
            {
                return Err(Error::InvalidAsset(format!(
                    "actor {:?}: degenerate box {b:?}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Installs masks after checking dimensions and that every FG pixel lies
    /// inside the dilated box of its frame.
    pub fn set_masks(&mut self, new_masks: Vec<Mask>) -> Result<()> {
        let (w, h) = (self.source.width(), self.source.height());
        let ActorKind::Tracked { boxes, masks } = &mut self.kind else {
            return Err(Error::InvalidAsset(format!(
                "actor {:?} is full-frame and takes no masks",
                self.id
            )));
        };
        if new_masks.len() != boxes.len() {
            return Err(Error::InvalidAsset(format!(
                "actor {:?}: {} masks for {} frames",
                self.id,
                new_masks.len(),
                boxes.len()
            )));
        }
        for (t, (m, b)) in new_masks.iter().zip(boxes.iter()).enumerate() {
            if m.dimensions() != (w, h) {
                return Err(Error::DimensionMismatch {
                    path: format!("{} mask {t}", self.id).into(),
                    expected: (w, h),
                    found: m.dimensions(),
                });
            }
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) && !b.contains_pixel(x, y, BOX_DILATION + 1e-9) {
                        return Err(Error::InvalidAsset(format!(
                            "actor {:?}: mask {t} has foreground at ({x},{y}) outside its box",
                            self.id
                        )));
                    }
                }
            }
        }
        *masks = Some(new_masks);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &Arc<FrameSequence> {
        &self.source
    }

    pub fn kind(&self) -> &ActorKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        matches!(self.kind, ActorKind::Tracked { .. })
    }

    pub fn boxes(&self) -> Option<&[OrientedBox]> {
        match &self.kind {
            ActorKind::Tracked { boxes, .. } => Some(boxes),
            ActorKind::FullFrame => None,
        }
    }

    pub fn masks(&self) -> Option<&[Mask]> {
        match &self.kind {
            ActorKind::Tracked { masks, .. } => masks.as_deref(),
            ActorKind::FullFrame => None,
        }
    }
}
