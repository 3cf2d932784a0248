//! Turns chosen frames back into images.
//!
//! Each layer contributes its segmented patch (or the whole frame for
//! full-frame actors). Where patches overlap, the one that differs most from
//! the background wins the pixel, so every output pixel has exactly one
//! source. Final renders first Poisson-blend each patch into the background
//! to hide illumination drift.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::{write_png, FrameSequence, Mask};
use crate::linalg::{conjugate_gradient, CsrMatrix};
use crate::synthesis::OutputTimeline;
use crate::{Error, Result};

pub const CLONE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    /// Hard paste; used while performing.
    #[default]
    Live,
    /// Seamless cloning before occlusion resolution.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderOrder {
    #[default]
    CloneThenResolve,
    ResolveThenClone,
}

/// Result of a Poisson blend.
#[derive(Debug, Clone)]
pub struct CloneResult {
    pub image: RgbImage,
    /// Relative residual of the discrete system per channel.
    pub residuals: [f64; 3],
    pub iterations: usize,
}

const NEIGHBOURS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Blends the masked part of `patch` into `background`, keeping the patch's
/// gradients inside the mask and the background's values on its border.
/// Pixels outside the mask come from the background. An empty mask returns
/// the background; a mask with no border at all returns the patch.
pub fn seamless_clone(patch: &RgbImage, mask: &Mask, background: &RgbImage) -> Result<CloneResult> {
    let (w, h) = background.dimensions();
    if patch.dimensions() != (w, h) || mask.dimensions() != (w, h) {
        return Err(Error::InvalidAsset("clone inputs differ in size".into()));
    }
    let mut image = background.clone();
    let interior: Vec<(u32, u32)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    if interior.is_empty() {
        return Ok(CloneResult {
            image,
            residuals: [0.0; 3],
            iterations: 0,
        });
    }
    if interior.len() == (w * h) as usize {
        return Ok(CloneResult {
            image: patch.clone(),
            residuals: [0.0; 3],
            iterations: 0,
        });
    }
    let mut index = vec![usize::MAX; (w * h) as usize];
    for (i, &(x, y)) in interior.iter().enumerate() {
        index[(y * w + x) as usize] = i;
    }
    let n = interior.len();
    let mut triplets = Vec::with_capacity(n * 5);
    // b[c][i]: guidance divergence plus Dirichlet values
    let mut b = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut border_offset = [0.0f64; 3];
    let mut border_count = 0usize;
    for (i, &(x, y)) in interior.iter().enumerate() {
        let gp = patch.get_pixel(x, y);
        let mut degree = 0.0;
        for (dx, dy) in NEIGHBOURS {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as u32, ny as u32);
            degree += 1.0;
            let gq = patch.get_pixel(nx, ny);
            for c in 0..3 {
                b[c][i] += gp.0[c] as f64 - gq.0[c] as f64;
            }
            match index[(ny * w + nx) as usize] {
                usize::MAX => {
                    let bq = background.get_pixel(nx, ny);
                    for c in 0..3 {
                        b[c][i] += bq.0[c] as f64;
                        border_offset[c] += bq.0[c] as f64 - gq.0[c] as f64;
                    }
                    border_count += 1;
                }
                j => triplets.push((i, j, -1.0)),
            }
        }
        triplets.push((i, i, degree));
    }
    let a = CsrMatrix::from_triplets(n, triplets);
    let max_iter = 10 * n;
    let shift: Vec<f64> = border_offset
        .iter()
        .map(|s| if border_count > 0 { s / border_count as f64 } else { 0.0 })
        .collect();
    let solved: Vec<Result<(Vec<f64>, f64, usize)>> = (0..3)
        .into_par_iter()
        .map(|c| {
            // start from the patch moved onto the border's mean level
            let mut x: Vec<f64> = interior
                .iter()
                .map(|&(px, py)| patch.get_pixel(px, py).0[c] as f64 + shift[c])
                .collect();
            let out = conjugate_gradient(&a, &b[c], &mut x, CLONE_TOLERANCE, max_iter, None)?;
            Ok((x, out.relative_residual, out.iterations))
        })
        .collect();
    let mut residuals = [0.0; 3];
    let mut iterations = 0;
    for (c, r) in solved.into_iter().enumerate() {
        let (x, res, it) = r?;
        if res > CLONE_TOLERANCE {
            warn!("seamless clone stopped at residual {res:.2e} on channel {c}");
        }
        residuals[c] = res;
        iterations = iterations.max(it);
        for (&(px, py), v) in interior.iter().zip(x) {
            image.get_pixel_mut(px, py).0[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(CloneResult {
        image,
        residuals,
        iterations,
    })
}

fn sq_diff(a: &Rgb<u8>, b: &Rgb<u8>) -> u32 {
    (0..3)
        .map(|c| {
            let d = a.0[c] as i32 - b.0[c] as i32;
            (d * d) as u32
        })
        .sum()
}

/// Index into `candidates` of the patch that differs most from the
/// background; the first one wins ties.
pub fn resolve_occlusion(candidates: &[Rgb<u8>], background: &Rgb<u8>) -> Option<usize> {
    let mut best: Option<(usize, u32)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = sq_diff(c, background);
        if best.is_none_or(|b| d > b.1) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}

/// Frames of one layer's actor.
#[derive(Debug, Clone)]
pub struct LayerSource {
    pub frames: Arc<FrameSequence>,
    /// Per-frame masks of tracked actors; `None` shows the whole frame.
    pub masks: Option<Arc<Vec<Mask>>>,
    /// Translation applied when the patch is placed.
    pub offset: [i32; 2],
}

/// Everything needed to render a timeline.
#[derive(Debug, Clone)]
pub struct RenderJob {
    pub timeline: OutputTimeline,
    pub background: Arc<RgbImage>,
    pub layers: Vec<LayerSource>,
    pub quality: Quality,
    pub order: RenderOrder,
}

/// Which source produced each pixel: 0 for the background, `d + 1` for
/// layer `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMap {
    pub width: u32,
    pub height: u32,
    pub sources: Vec<u16>,
}

impl SourceMap {
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.sources[(y * self.width + x) as usize]
    }

    pub fn count_nonzero(&self) -> usize {
        self.sources.iter().filter(|s| **s != 0).count()
    }
}

/// A placed patch: colour and coverage on the output canvas.
struct Placed {
    image: RgbImage,
    mask: Mask,
}

fn place(src: &LayerSource, frame: usize, background: &RgbImage) -> Result<Placed> {
    let (w, h) = background.dimensions();
    if frame >= src.frames.len() {
        return Err(Error::FrameOutOfRange {
            what: "render layer".into(),
            frame,
            len: src.frames.len(),
        });
    }
    let img = src.frames.frame(frame);
    let mask = src.masks.as_ref().map(|m| &m[frame]);
    let [ox, oy] = src.offset;
    let mut image = background.clone();
    let mut out = Mask::new(w, h);
    let (sw, sh) = img.dimensions();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as i64 - ox as i64, y as i64 - oy as i64);
            if sx < 0 || sy < 0 || sx >= sw as i64 || sy >= sh as i64 {
                continue;
            }
            let (sx, sy) = (sx as u32, sy as u32);
            if mask.is_none_or(|m| m.get(sx, sy)) {
                image.put_pixel(x, y, *img.get_pixel(sx, sy));
                out.set(x, y, true);
            }
        }
    }
    Ok(Placed { image, mask: out })
}

/// Renders output column `k`.
pub fn render_frame(job: &RenderJob, k: usize) -> Result<(RgbImage, SourceMap)> {
    let bg = &*job.background;
    let (w, h) = bg.dimensions();
    if job.layers.len() != job.timeline.layers() {
        return Err(Error::LengthMismatch(job.layers.len(), job.timeline.layers()));
    }
    if k >= job.timeline.columns() && job.timeline.layers() > 0 {
        return Err(Error::FrameOutOfRange {
            what: "timeline column".into(),
            frame: k,
            len: job.timeline.columns(),
        });
    }
    let mut placed: Vec<Placed> = job
        .layers
        .iter()
        .zip(&job.timeline.rows)
        .map(|(src, row)| place(src, row[k], bg))
        .collect::<Result<_>>()?;
    let cloning = job.quality == Quality::Final;
    if cloning && job.order == RenderOrder::CloneThenResolve {
        for p in &mut placed {
            p.image = seamless_clone(&p.image, &p.mask, bg)?.image;
        }
    }

    let mut sources = vec![0u16; (w * h) as usize];
    let mut candidates = Vec::with_capacity(placed.len());
    let mut owners = Vec::with_capacity(placed.len());
    for y in 0..h {
        for x in 0..w {
            candidates.clear();
            owners.clear();
            for (d, p) in placed.iter().enumerate() {
                if p.mask.get(x, y) {
                    candidates.push(*p.image.get_pixel(x, y));
                    owners.push(d);
                }
            }
            if let Some(i) = resolve_occlusion(&candidates, bg.get_pixel(x, y)) {
                sources[(y * w + x) as usize] = owners[i] as u16 + 1;
            }
        }
    }

    if cloning && job.order == RenderOrder::ResolveThenClone {
        for (d, p) in placed.iter_mut().enumerate() {
            let owned = Mask::from_fn(w, h, |x, y| sources[(y * w + x) as usize] == d as u16 + 1);
            p.image = seamless_clone(&p.image, &owned, bg)?.image;
        }
    }

    let mut out = bg.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let s = sources[i];
        if s > 0 {
            let (x, y) = (i as u32 % w, i as u32 / w);
            *px = *placed[s as usize - 1].image.get_pixel(x, y);
        }
    }
    Ok((
        out,
        SourceMap {
            width: w,
            height: h,
            sources,
        },
    ))
}

/// Renders every column to `dir/000000.png ...` in parallel and writes
/// `frames.txt` listing them in order.
pub fn render_sequence(job: &RenderJob, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = job.timeline.columns();
    (0..k).into_par_iter().try_for_each(|col| {
        let (img, _) = render_frame(job, col)?;
        write_png(&crate::assets::numbered(dir, col, "png"), &img)
    })?;
    let list: String = (0..k).map(|c| format!("{c:06}.png\n")).collect();
    let p = dir.join("frames.txt");
    std::fs::write(&p, list).map_err(|e| Error::io(&p, e))?;
    Ok(k)
}
