use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;

use super::cache::{content_key, Cache};
use super::manifest::{ActorKindDesc, ProjectManifest};
use super::{read_boxes_csv, read_flow_file, ActorSequence, FlowField, FrameSequence, Mask};
use crate::segmentation::ScribbleSet;
use crate::{Error, Result};

pub type SourceId = usize;

#[derive(Debug)]
pub struct LoadedSource {
    pub dir: PathBuf,
    pub frames: Arc<FrameSequence>,
    pub hash: String,
}

#[derive(Debug)]
pub struct LoadedActor {
    pub sequence: ActorSequence,
    pub source: SourceId,
    /// Backward flow per frame; entry 0 is always `None`.
    pub flow: Option<Vec<Option<FlowField>>>,
    pub scribbles: ScribbleSet,
    /// Hash of everything the actor's derived artifacts depend on, except
    /// parameters (callers mix those in).
    pub hash: String,
}

/// A validated project: manifest plus all assets it references.
#[derive(Debug)]
pub struct Project {
    pub manifest: ProjectManifest,
    pub manifest_path: PathBuf,
    pub root: PathBuf,
    pub manifest_hash: String,
    pub sources: Vec<LoadedSource>,
    pub actors: Vec<LoadedActor>,
    pub cache: Cache,
}

impl Project {
    pub fn actor_index(&self, id: &str) -> Result<usize> {
        self.manifest
            .actor_index(id)
            .ok_or_else(|| Error::UnknownActor(id.to_string()))
    }

    pub fn source_of(&self, actor: usize) -> &LoadedSource {
        &self.sources[self.actors[actor].source]
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

/// Semantic hash of a manifest: insensitive to formatting, sensitive to any
/// field change.
pub fn manifest_hash(m: &ProjectManifest) -> String {
    let canonical = serde_json::to_vec(m).expect("manifest serializes");
    content_key([canonical.as_slice()])
}

/// Loads and validates every asset referenced by the manifest. Any failure
/// aborts the whole load.
pub fn load_project(manifest_path: &Path) -> Result<Project> {
    let manifest = ProjectManifest::from_path(manifest_path)?;
    manifest.validate_ids()?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut sources: Vec<LoadedSource> = Vec::new();
    let mut actors = Vec::with_capacity(manifest.actors.len());
    for desc in &manifest.actors {
        let dir = root.join(&desc.frames);
        let source = match sources.iter().position(|s| s.dir == dir) {
            Some(i) => i,
            None => {
                let (frames, hash) = load_frame_dir(&dir, manifest.frame_rate)?;
                sources.push(LoadedSource {
                    dir: dir.clone(),
                    frames: Arc::new(frames),
                    hash,
                });
                sources.len() - 1
            }
        };
        let seq = sources[source].frames.clone();
        let n = seq.len();
        for ex in &desc.examples {
            if ex.frame >= n {
                return Err(Error::FrameOutOfRange {
                    what: format!("examples of {}", desc.id),
                    frame: ex.frame,
                    len: n,
                });
            }
        }

        let mut hash_parts: Vec<Vec<u8>> = vec![sources[source].hash.as_bytes().to_vec()];
        let sequence = match desc.kind {
            ActorKindDesc::FullFrame => {
                hash_parts.push(b"full".to_vec());
                ActorSequence::full_frame(desc.id.clone(), seq.clone())
            }
            ActorKindDesc::Tracked => {
                let boxes_path = root.join(desc.boxes.as_ref().expect("validated"));
                let boxes_bytes = std::fs::read(&boxes_path).map_err(|e| Error::io(&boxes_path, e))?;
                hash_parts.push(boxes_bytes);
                let boxes = read_boxes_csv(&boxes_path)?;
                let masks = match &desc.masks {
                    Some(mdir) => {
                        let (m, h) = load_mask_dir(&root.join(mdir), n, (seq.width(), seq.height()))?;
                        hash_parts.push(h.into_bytes());
                        Some(m)
                    }
                    None => None,
                };
                ActorSequence::tracked(desc.id.clone(), seq.clone(), boxes, masks)?
            }
        };

        let flow = match &desc.flow {
            Some(fdir) => Some(load_flow_dir(&root.join(fdir), n, (seq.width(), seq.height()))?),
            None => None,
        };
        let scribbles = match &desc.scribbles {
            Some(p) => {
                let p = root.join(p);
                let s = ScribbleSet::read_json(&p)?;
                s.validate(n, seq.width(), seq.height())?;
                hash_parts.push(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
                s
            }
            None => ScribbleSet::default(),
        };
        let hash = content_key(hash_parts.iter().map(Vec::as_slice));
        actors.push(LoadedActor {
            sequence,
            source,
            flow,
            scribbles,
            hash,
        });
    }

    if let Some(bg) = &manifest.background {
        let p = root.join(bg);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
    }
    for tag in &manifest.compatibility {
        for (id, &frame) in tag.actors.iter().zip(tag.frames.iter()) {
            let i = manifest.actor_index(id).expect("validated");
            let len = actors[i].sequence.len();
            if frame >= len {
                return Err(Error::FrameOutOfRange {
                    what: format!("compatibility tag on {id}"),
                    frame,
                    len,
                });
            }
        }
    }

    let cache_root = manifest
        .cache_dir
        .as_ref()
        .map(|p| root.join(p))
        .unwrap_or_else(|| root.join(".loopstage-cache"));
    Ok(Project {
        manifest_hash: manifest_hash(&manifest),
        manifest,
        manifest_path: manifest_path.to_path_buf(),
        root,
        sources,
        actors,
        cache: Cache::new(cache_root),
    })
}

pub fn numbered(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("{i:06}.{ext}"))
}

fn count_numbered(dir: &Path, ext: &str, start: usize) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut n = 0;
    while numbered(dir, start + n, ext).exists() {
        n += 1;
    }
    if n == 0 {
        return Err(Error::MissingFile(numbered(dir, start, ext)));
    }
    Ok(n)
}

fn read_png_bytes(path: &Path) -> Result<(Vec<u8>, image::DynamicImage)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((bytes, img))
}

/// Loads `%06d.png` frames and returns them with a hash of the file bytes.
pub fn load_frame_dir(dir: &Path, frame_rate: f64) -> Result<(FrameSequence, String)> {
    let n = count_numbered(dir, "png", 0)?;
    let loaded: Vec<(String, RgbImage)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let path = numbered(dir, t, "png");
            let (bytes, img) = read_png_bytes(&path)?;
            Ok((content_key([bytes.as_slice()]), img.to_rgb8()))
        })
        .collect::<Result<_>>()?;
    let (w, h) = loaded[0].1.dimensions();
    for (t, (_, img)) in loaded.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch {
                path: numbered(dir, t, "png"),
                expected: (w, h),
                found: img.dimensions(),
            });
        }
    }
    let hash = content_key(loaded.iter().map(|(h, _)| h.as_bytes()));
    let frames = loaded.into_iter().map(|(_, img)| img).collect();
    Ok((FrameSequence::new(frames, frame_rate)?, hash))
}

pub fn load_mask_dir(dir: &Path, n: usize, dims: (u32, u32)) -> Result<(Vec<Mask>, String)> {
    let loaded: Vec<(String, Mask)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let path = numbered(dir, t, "png");
            let (bytes, img) = read_png_bytes(&path)?;
            let gray = img.to_luma8();
            if gray.dimensions() != dims {
                return Err(Error::DimensionMismatch {
                    path,
                    expected: dims,
                    found: gray.dimensions(),
                });
            }
            Ok((content_key([bytes.as_slice()]), Mask::from_gray(&gray)))
        })
        .collect::<Result<_>>()?;
    let hash = content_key(loaded.iter().map(|(h, _)| h.as_bytes()));
    Ok((loaded.into_iter().map(|(_, m)| m).collect(), hash))
}

fn load_flow_dir(dir: &Path, n: usize, dims: (u32, u32)) -> Result<Vec<Option<FlowField>>> {
    let mut out = vec![None];
    for t in 1..n {
        let path = numbered(dir, t, "flow");
        let f = read_flow_file(&path)?;
        if f.dimensions() != dims {
            return Err(Error::DimensionMismatch {
                path,
                expected: dims,
                found: f.dimensions(),
            });
        }
        out.push(Some(f));
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
