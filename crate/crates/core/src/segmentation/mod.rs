//! Foreground extraction for tracked actors.
//!
//! Each frame is labelled by an exact s-t min-cut over the 8-connected
//! pixels of the dilated box. Labelling a pixel foreground costs a blend of
//! a box-center prior and agreement with the flow-warped previous mask;
//! background costs a constant. Cutting between neighbours costs their
//! summed difference from the background, so seams settle where the patch
//! already looks like the background.

mod maxflow;

pub use maxflow::FlowGraph;

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use log::debug;
use serde::{Deserialize, Serialize};

use crate::assets::{FlowField, Mask, OrientedBox, BOX_DILATION};
use crate::{Error, Result};

/// Fixed-point scale applied before running max-flow.
const CAPACITY_SCALE: f64 = 1e6;

/// Temporal term used when there is no previous mask.
pub const FIRST_FRAME_TEMPORAL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Weight of the temporal term against the spatial prior.
    pub alpha: f64,
    /// Spatial falloff in pixels; half the box diagonal when unset.
    pub sigma: Option<f64>,
    pub bg_unary: f64,
    pub seam_weight: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            alpha: 0.35,
            sigma: None,
            bg_unary: 0.2,
            seam_weight: 1.0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("segmentation.alpha", "must lie in [0, 1]"));
        }
        if matches!(self.sigma, Some(s) if !(s > 0.0)) {
            return Err(Error::param("segmentation.sigma", "must be positive"));
        }
        if !(self.bg_unary >= 0.0) || !(self.seam_weight >= 0.0) {
            return Err(Error::param("segmentation", "costs must be non-negative"));
        }
        Ok(())
    }
}

/// Horizontal run of pixels `[x, x + len)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run(pub u32, pub u32, pub u32);

impl Run {
    pub fn new(x: u32, y: u32, len: u32) -> Self {
        Run(x, y, len)
    }

    fn pixels(self) -> impl Iterator<Item = (u32, u32)> {
        let Run(x, y, len) = self;
        (x..x + len).map(move |x| (x, y))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameScribbles {
    #[serde(default)]
    pub fg: Vec<Run>,
    #[serde(default)]
    pub bg: Vec<Run>,
}

impl FrameScribbles {
    /// Per-pixel hard labels: `Some(true)` for foreground.
    pub fn labels(&self, width: u32, height: u32) -> Vec<Option<bool>> {
        let mut out = vec![None; (width * height) as usize];
        for (runs, v) in [(&self.fg, true), (&self.bg, false)] {
            for r in runs {
                for (x, y) in r.pixels() {
                    if x < width && y < height {
                        out[(y * width + x) as usize] = Some(v);
                    }
                }
            }
        }
        out
    }
}

/// User scribbles per frame, stored as run-length lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScribbleSet {
    #[serde(default)]
    pub frames: BTreeMap<usize, FrameScribbles>,
}

impl ScribbleSet {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scribbles serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn frame(&self, t: usize) -> Option<&FrameScribbles> {
        self.frames.get(&t)
    }

    pub fn add_fg(&mut self, t: usize, run: Run) {
        self.frames.entry(t).or_default().fg.push(run);
    }

    pub fn add_bg(&mut self, t: usize, run: Run) {
        self.frames.entry(t).or_default().bg.push(run);
    }

    /// Rejects runs outside the frame, frames past the end and pixels marked
    /// with both labels.
    pub fn validate(&self, frames: usize, width: u32, height: u32) -> Result<()> {
        for (&t, s) in &self.frames {
            if t >= frames {
                return Err(Error::FrameOutOfRange {
                    what: "scribbles".into(),
                    frame: t,
                    len: frames,
                });
            }
            let mut fg = vec![false; (width * height) as usize];
            for r in s.fg.iter().chain(&s.bg) {
                if r.1 >= height || r.0 as u64 + r.2 as u64 > width as u64 {
                    return Err(Error::InvalidAsset(format!(
                        "scribble run {r:?} on frame {t} leaves the {width}x{height} frame"
                    )));
                }
            }
            for r in &s.fg {
                for (x, y) in r.pixels() {
                    fg[(y * width + x) as usize] = true;
                }
            }
            for r in &s.bg {
                if let Some((x, y)) = r.pixels().find(|&(x, y)| fg[(y * width + x) as usize]) {
                    return Err(Error::InvalidAsset(format!(
                        "pixel ({x}, {y}) on frame {t} is scribbled both foreground and background"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Previous-frame information for the temporal term.
#[derive(Debug, Clone, Copy)]
pub struct PreviousMask<'a> {
    pub mask: &'a Mask,
    /// Backward flow of the current frame; identity when absent.
    pub flow: Option<&'a FlowField>,
}

impl PreviousMask<'_> {
    /// Bilinear lookup of the previous mask at the flow-warped position.
    pub fn sample(&self, x: u32, y: u32) -> f64 {
        let (dx, dy) = self.flow.map_or((0.0, 0.0), |f| f.get(x, y));
        let (w, h) = self.mask.dimensions();
        let px = (x as f64 + dx as f64).clamp(0.0, (w - 1) as f64);
        let py = (y as f64 + dy as f64).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (px.floor() as u32, py.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let v = |x, y| if self.mask.get(x, y) { 1.0 } else { 0.0 };
        let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
        let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Cost of labelling pixel `(x, y)` foreground.
///
/// The spatial prior is `min(d^2 / (2 sigma^2), 1)` with `d` the distance to
/// the box center, so foreground is cheapest near the center.
pub fn fg_unary(
    x: u32,
    y: u32,
    bbox: &OrientedBox,
    prev: Option<&PreviousMask<'_>>,
    params: &SegmentationParams,
) -> f64 {
    let sigma = params.sigma.unwrap_or_else(|| bbox.half_diagonal()).max(1e-9);
    let (dx, dy) = (x as f64 - bbox.cx, y as f64 - bbox.cy);
    let spatial = ((dx * dx + dy * dy) / (2.0 * sigma * sigma)).min(1.0);
    let temporal = match prev {
        Some(p) => 1.0 - p.sample(x, y),
        None => FIRST_FRAME_TEMPORAL,
    };
    (1.0 - params.alpha) * spatial + params.alpha * temporal
}

/// Pairwise binary energy over `n` variables.
///
/// `fg[i]` / `bg[i]` are the label costs; `hard[i]` pins a variable. Each
/// edge `(i, j, w)` costs `w` when its ends disagree.
#[derive(Debug, Clone, Default)]
pub struct BinaryEnergy {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
    pub hard: Vec<Option<bool>>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl BinaryEnergy {
    pub fn len(&self) -> usize {
        self.fg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty()
    }

    /// Energy of a labelling. Pinned variables cost nothing on their own side
    /// and make the energy infinite otherwise.
    pub fn energy(&self, labels: &[bool]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.len() {
            match self.hard[i] {
                Some(h) if h != labels[i] => return f64::INFINITY,
                Some(_) => {}
                None => e += if labels[i] { self.fg[i] } else { self.bg[i] },
            }
        }
        for &(i, j, w) in &self.edges {
            if labels[i] != labels[j] {
                e += w;
            }
        }
        e
    }

    /// Exact minimiser via s-t min-cut. Among optimal labellings the one
    /// with the fewest foreground variables reachable from the source is
    /// returned.
    pub fn minimize(&self) -> Vec<bool> {
        let n = self.len();
        if n == 0 {
            return Vec::new();
        }
        let q = |c: f64| (c * CAPACITY_SCALE).round() as i64;
        // a pinned variable must outweigh every finite term together
        let finite: i64 =
            (0..n).map(|i| q(self.fg[i].max(self.bg[i]))).sum::<i64>() + self.edges.iter().map(|e| q(e.2)).sum::<i64>();
        let hard = finite + 1;
        let (s, t) = (n, n + 1);
        let mut g = FlowGraph::new(n + 2);
        for i in 0..n {
            let (cf, cb) = match self.hard[i] {
                Some(true) => (0, hard),
                Some(false) => (hard, 0),
                None => (q(self.fg[i]), q(self.bg[i])),
            };
            let m = cf.min(cb);
            // source side is foreground: cutting i -> t pays the foreground cost
            if cf - m > 0 {
                g.add_edge(i, t, cf - m, 0);
            }
            if cb - m > 0 {
                g.add_edge(s, i, cb - m, 0);
            }
        }
        for &(i, j, w) in &self.edges {
            let c = q(w);
            if c > 0 {
                g.add_edge(i, j, c, c);
            }
        }
        let flow = g.max_flow(s, t);
        debug!("min-cut over {n} variables, flow {flow}");
        let side = g.source_side(s);
        side[..n].to_vec()
    }
}

fn color_distance(a: &image::Rgb<u8>, b: &image::Rgb<u8>) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        let d = (a.0[c] as f64 - b.0[c] as f64) / 255.0;
        s += d * d;
    }
    s.sqrt()
}

/// Variables of one frame: pixels inside the dilated box.
#[derive(Debug, Clone)]
pub struct FrameProblem {
    pub energy: BinaryEnergy,
    pub pixels: Vec<(u32, u32)>,
    width: u32,
    height: u32,
}

impl FrameProblem {
    pub fn build(
        frame: &RgbImage,
        background: &RgbImage,
        bbox: &OrientedBox,
        prev: Option<&PreviousMask<'_>>,
        scribbles: Option<&FrameScribbles>,
        params: &SegmentationParams,
    ) -> Result<Self> {
        let (w, h) = frame.dimensions();
        if background.dimensions() != (w, h) {
            return Err(Error::InvalidAsset(format!(
                "background is {:?}, frame is {:?}",
                background.dimensions(),
                (w, h)
            )));
        }
        if let Some(p) = prev {
            if p.mask.dimensions() != (w, h) {
                return Err(Error::InvalidAsset("previous mask size differs from frame".into()));
            }
        }
        let rect = bbox.bounds(BOX_DILATION, w, h);
        let mut index = vec![usize::MAX; (w * h) as usize];
        let mut pixels = Vec::new();
        for (x, y) in rect.pixels() {
            if bbox.contains_pixel(x, y, BOX_DILATION) {
                index[(y * w + x) as usize] = pixels.len();
                pixels.push((x, y));
            }
        }
        let hard_labels = scribbles.map(|s| s.labels(w, h));
        let seam: Vec<f64> = frame
            .pixels()
            .zip(background.pixels())
            .map(|(a, b)| color_distance(a, b))
            .collect();

        let n = pixels.len();
        let mut e = BinaryEnergy {
            fg: Vec::with_capacity(n),
            bg: vec![params.bg_unary; n],
            hard: vec![None; n],
            edges: Vec::new(),
        };
        for (i, &(x, y)) in pixels.iter().enumerate() {
            e.fg.push(fg_unary(x, y, bbox, prev, params));
            if let Some(l) = &hard_labels {
                e.hard[i] = l[(y * w + x) as usize];
            }
        }
        const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];
        for (i, &(x, y)) in pixels.iter().enumerate() {
            let si = seam[(y * w + x) as usize];
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let k = (ny as u32 * w + nx as u32) as usize;
                let cost = params.seam_weight * (si + seam[k]);
                match index[k] {
                    // neighbour is pinned background: disagreement means i is foreground
                    usize::MAX => e.fg[i] += cost,
                    j if j > i => e.edges.push((i, j, cost)),
                    _ => {}
                }
            }
        }
        Ok(Self {
            energy: e,
            pixels,
            width: w,
            height: h,
        })
    }

    pub fn to_mask(&self, labels: &[bool]) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for (&(x, y), &l) in self.pixels.iter().zip(labels) {
            if l {
                m.set(x, y, true);
            }
        }
        m
    }
}

/// Segments one frame with an exact min-cut.
pub fn segment_frame(
    frame: &RgbImage,
    background: &RgbImage,
    bbox: &OrientedBox,
    prev: Option<&PreviousMask<'_>>,
    scribbles: Option<&FrameScribbles>,
    params: &SegmentationParams,
) -> Result<Mask> {
    params.validate()?;
    let p = FrameProblem::build(frame, background, bbox, prev, scribbles, params)?;
    Ok(p.to_mask(&p.energy.minimize()))
}

/// Inputs for segmenting a whole tracked actor.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInputs<'a> {
    pub frames: &'a [RgbImage],
    pub boxes: &'a [OrientedBox],
    /// Backward flow per frame, entry 0 unused.
    pub flow: Option<&'a [Option<FlowField>]>,
    pub scribbles: &'a ScribbleSet,
    pub background: &'a RgbImage,
}

/// Segments frames `start..` sequentially. `existing` supplies masks for the
/// frames before `start` (only the one at `start - 1` is read).
pub fn segment_sequence(
    inputs: SequenceInputs<'_>,
    params: &SegmentationParams,
    start: usize,
    existing: &[Mask],
) -> Result<Vec<Mask>> {
    let n = inputs.frames.len();
    if inputs.boxes.len() != n {
        return Err(Error::LengthMismatch(n, inputs.boxes.len()));
    }
    if start > 0 && existing.len() < start {
        return Err(Error::FrameOutOfRange {
            what: "segmentation restart".into(),
            frame: start,
            len: existing.len(),
        });
    }
    let mut masks: Vec<Mask> = existing[..start].to_vec();
    for t in start..n {
        let flow = inputs.flow.and_then(|f| f.get(t)).and_then(Option::as_ref);
        let prev = (t > 0).then(|| PreviousMask {
            mask: &masks[t - 1],
            flow,
        });
        let m = segment_frame(
            &inputs.frames[t],
            inputs.background,
            &inputs.boxes[t],
            prev.as_ref(),
            inputs.scribbles.frame(t),
            params,
        )?;
        masks.push(m);
    }
    Ok(masks)
}
