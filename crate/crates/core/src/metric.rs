//! Frame-to-frame distances and the sparse jump graph built from them.
//!
//! Distances are mean squared colour differences on raw 8-bit RGB values,
//! summed over channels. Tracked actors are first composited onto the static
//! background so that the patch position counts towards the distance.

use image::RgbImage;
use rayon::prelude::*;

use crate::assets::{ActorKind, ActorSequence, Mask, OrientedBox, PixelRect, BOX_DILATION};
use crate::{Error, Result};

const CACHE_MAGIC: &[u8; 4] = b"LSDM";
const CACHE_VERSION: u32 = 1;

/// Distance between two frames before the matrix-level sentinel is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameDistance {
    Finite(f64),
    /// The two tracked boxes share no pixel.
    Disjoint,
}

impl FrameDistance {
    pub fn finite(self) -> Option<f64> {
        match self {
            FrameDistance::Finite(d) => Some(d),
            FrameDistance::Disjoint => None,
        }
    }
}

/// Symmetric frame distance matrix, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f32>,
}

impl DistanceMatrix {
    /// Builds a matrix from a pairwise function evaluated on `i < j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = vec![0f32; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j) as f32;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self::from_values(n, values)
    }

    pub fn from_values(n: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::LengthMismatch(values.len(), n * n));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidAsset(format!("distance matrix diagonal {i} is not zero")));
            }
            for j in i + 1..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a.is_finite() && a >= 0.0) || a != b {
                    return Err(Error::InvalidAsset(format!(
                        "distance matrix entry ({i},{j}) = {a} / {b} is not finite, non-negative and symmetric"
                    )));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j] as f64
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0f32, |m, &v| m.max(v)) as f64
    }

    /// Matrix over frames `0, stride, 2*stride, ...`.
    pub fn subsample(&self, stride: usize) -> DistanceMatrix {
        let idx: Vec<usize> = (0..self.n).step_by(stride.max(1)).collect();
        let m = idx.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in &idx {
            for &j in &idx {
                values.push(self.values[i * self.n + j]);
            }
        }
        DistanceMatrix { n: m, values }
    }
}

struct Raster {
    rect: PixelRect,
    inside: Vec<bool>,
}

impl Raster {
    fn new(b: &OrientedBox, dilation: f64, w: u32, h: u32) -> Self {
        let rect = b.bounds(dilation, w, h);
        let inside = rect.pixels().map(|(x, y)| b.contains_pixel(x, y, dilation)).collect();
        Self { rect, inside }
    }

    #[inline]
    fn contains(&self, x: u32, y: u32) -> bool {
        if x < self.rect.x0 || x >= self.rect.x1 || y < self.rect.y0 || y >= self.rect.y1 {
            return false;
        }
        self.inside[((y - self.rect.y0) * self.rect.width() + (x - self.rect.x0)) as usize]
    }
}

fn intersect(a: &PixelRect, b: &PixelRect) -> PixelRect {
    PixelRect {
        x0: a.x0.max(b.x0),
        y0: a.y0.max(b.y0),
        x1: a.x1.min(b.x1).max(a.x0.max(b.x0)),
        y1: a.y1.min(b.y1).max(a.y0.max(b.y0)),
    }
}

fn overlap_count(a: &Raster, b: &Raster) -> usize {
    let r = intersect(&a.rect, &b.rect);
    r.pixels()
        .filter(|&(x, y)| a.contains(x, y) && b.contains(x, y))
        .count()
}

/// The segmented patch of frame `t` pasted onto the background.
pub fn composite_on_background(frame: &RgbImage, mask: &Mask, background: &RgbImage) -> RgbImage {
    RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        if mask.get(x, y) {
            *frame.get_pixel(x, y)
        } else {
            *background.get_pixel(x, y)
        }
    })
}

#[inline]
fn sq_diff_rect(a: &RgbImage, b: &RgbImage, rect: &PixelRect) -> f64 {
    let w = a.width() as usize;
    let (ra, rb) = (a.as_raw(), b.as_raw());
    let mut sum = 0u64;
    for y in rect.y0..rect.y1 {
        let start = (y as usize * w + rect.x0 as usize) * 3;
        let end = (y as usize * w + rect.x1 as usize) * 3;
        for (p, q) in ra[start..end].iter().zip(&rb[start..end]) {
            let d = *p as i32 - *q as i32;
            sum += (d * d) as u64;
        }
    }
    sum as f64
}

/// Per-actor data prepared once so that many pairs can be compared cheaply.
struct PreparedActor<'a> {
    images: Vec<std::borrow::Cow<'a, RgbImage>>,
    tracked: Option<Vec<(PixelRect, Raster)>>,
    area: f64,
}

impl<'a> PreparedActor<'a> {
    fn new(actor: &'a ActorSequence, background: &RgbImage) -> Result<Self> {
        let src = actor.source();
        let (w, h) = (src.width(), src.height());
        if background.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch {
                path: "background".into(),
                expected: (w, h),
                found: background.dimensions(),
            });
        }
        match actor.kind() {
            ActorKind::FullFrame => Ok(Self {
                images: src.frames().iter().map(std::borrow::Cow::Borrowed).collect(),
                tracked: None,
                area: (w as f64) * (h as f64),
            }),
            ActorKind::Tracked { boxes, masks } => {
                let masks = masks.as_ref().ok_or_else(|| {
                    Error::InvalidAsset(format!(
                        "actor {:?} must be segmented before distances are computed",
                        actor.id()
                    ))
                })?;
                let images = src
                    .frames()
                    .par_iter()
                    .zip(masks.par_iter())
                    .map(|(f, m)| std::borrow::Cow::Owned(composite_on_background(f, m, background)))
                    .collect();
                let tracked = boxes
                    .iter()
                    .map(|b| (b.bounds(BOX_DILATION, w, h), Raster::new(b, 0.0, w, h)))
                    .collect();
                Ok(Self {
                    images,
                    tracked: Some(tracked),
                    area: (w as f64) * (h as f64),
                })
            }
        }
    }

    fn distance(&self, t: usize, u: usize) -> FrameDistance {
        if t == u {
            return FrameDistance::Finite(0.0);
        }
        let (a, b) = (&self.images[t], &self.images[u]);
        match &self.tracked {
            None => {
                let full = PixelRect {
                    x0: 0,
                    y0: 0,
                    x1: a.width(),
                    y1: a.height(),
                };
                FrameDistance::Finite(sq_diff_rect(a, b, &full) / self.area)
            }
            Some(tr) => {
                let (da, ra) = &tr[t];
                let (db, rb) = &tr[u];
                let overlap = overlap_count(ra, rb);
                if overlap == 0 {
                    return FrameDistance::Disjoint;
                }
                // Outside both dilated boxes the two composites equal the
                // background, so summing over the bounding rectangle of the
                // union equals summing over the union itself.
                let region = da.union(db);
                FrameDistance::Finite(sq_diff_rect(a, b, &region) / overlap as f64)
            }
        }
    }
}

/// Distance between frames `t` and `u` of one actor.
pub fn frame_distance(actor: &ActorSequence, t: usize, u: usize, background: &RgbImage) -> Result<FrameDistance> {
    for f in [t, u] {
        if f >= actor.len() {
            return Err(Error::FrameOutOfRange {
                what: actor.id().to_string(),
                frame: f,
                len: actor.len(),
            });
        }
    }
    Ok(PreparedActor::new(actor, background)?.distance(t, u))
}

/// Distance used for pairs whose boxes never overlap, given the largest
/// finite distance of the actor.
pub fn disjoint_sentinel(max_finite: f64) -> f64 {
    10.0 * max_finite.max(1.0)
}

/// All pairwise distances of an actor. Disjoint pairs receive
/// [`disjoint_sentinel`] of the largest finite entry.
pub fn build_distance_matrix(actor: &ActorSequence, background: &RgbImage) -> Result<DistanceMatrix> {
    let prep = PreparedActor::new(actor, background)?;
    let n = actor.len();
    let rows: Vec<Vec<FrameDistance>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| prep.distance(i, j)).collect())
        .collect();
    let max_finite = rows.iter().flatten().filter_map(|d| d.finite()).fold(0.0f64, f64::max);
    let sentinel = disjoint_sentinel(max_finite);
    let mut values = vec![0f32; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, d) in row.iter().enumerate() {
            let j = i + 1 + k;
            let v = d.finite().unwrap_or(sentinel) as f32;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    DistanceMatrix::from_values(n, values)
}

/// Per frame: the natural successor plus the lowest-distance jump targets.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpGraph {
    candidates: Vec<Vec<(u32, f32)>>,
}

impl JumpGraph {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Jump targets of `t`, sorted by ascending distance, excluding `t` and
    /// its natural successor.
    pub fn candidates(&self, t: usize) -> &[(u32, f32)] {
        &self.candidates[t]
    }

    /// `t + 1`, or for the last frame its best jump target so that playback
    /// can loop.
    pub fn successor(&self, t: usize) -> usize {
        if t + 1 < self.candidates.len() {
            t + 1
        } else {
            self.candidates[t].first().map(|c| c.0 as usize).unwrap_or(t)
        }
    }

    /// Median of the strictly positive candidate distances, if any.
    pub fn median_distance(&self) -> Option<f64> {
        let mut d: Vec<f32> = self
            .candidates
            .iter()
            .flatten()
            .map(|c| c.1)
            .filter(|v| *v > 0.0)
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f32::total_cmp);
        let m = d.len();
        Some(if m % 2 == 1 {
            d[m / 2] as f64
        } else {
            0.5 * (d[m / 2 - 1] as f64 + d[m / 2] as f64)
        })
    }
}

/// Keeps the `n` best jump targets per frame; `n` is clamped to the number
/// of eligible frames.
pub fn build_jump_graph(matrix: &DistanceMatrix, n: usize) -> JumpGraph {
    let len = matrix.len();
    let candidates = (0..len)
        .into_par_iter()
        .map(|t| {
            let mut c: Vec<(u32, f32)> = matrix
                .row(t)
                .iter()
                .enumerate()
                .filter(|&(u, _)| u != t && u != t + 1)
                .map(|(u, &d)| (u as u32, d))
                .collect();
            let keep = n.min(c.len());
            if keep < c.len() {
                c.select_nth_unstable_by(keep, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                c.truncate(keep);
            }
            c.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            c
        })
        .collect();
    JumpGraph { candidates }
}

/// Serializes matrix and jump graph into one cache blob:
/// `"LSDM" | version:u32 | hash:[u8;32] | n:u32 | n*n f32 | per frame (k:u32, k*(u32,f32))`,
/// all little-endian.
pub fn encode_cache(hash: &[u8; 32], matrix: &DistanceMatrix, graph: &JumpGraph) -> Vec<u8> {
    let n = matrix.len();
    let mut out = Vec::with_capacity(44 + n * n * 4 + n * 8);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &graph.candidates {
        out.extend_from_slice(&(c.len() as u32).to_le_bytes());
        for (u, d) in c {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

/// Decodes a cache blob, returning `None` when it was written for a
/// different hash.
pub fn decode_cache(
    bytes: &[u8],
    expected_hash: &[u8; 32],
) -> std::result::Result<Option<(DistanceMatrix, JumpGraph)>, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    if cur.u32()? != CACHE_VERSION {
        return Err("unsupported version".into());
    }
    if cur.take(32)? != expected_hash {
        return Ok(None);
    }
    let n = cur.u32()? as usize;
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        values.push(cur.f32()?);
    }
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let k = cur.u32()? as usize;
        let mut c = Vec::with_capacity(k);
        for _ in 0..k {
            let u = cur.u32()?;
            if u as usize >= n {
                return Err(format!("candidate {u} out of range"));
            }
            c.push((u, cur.f32()?));
        }
        candidates.push(c);
    }
    if cur.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    let m = DistanceMatrix::from_values(n, values).map_err(|e| e.to_string())?;
    Ok(Some((m, JumpGraph { candidates })))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + k > self.bytes.len() {
            return Err("truncated".into());
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
