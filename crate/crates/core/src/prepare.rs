//! The preparation pipeline: background, masks, distances, jump graphs,
//! action fields and compatibility models, each cached by content hash.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;

use crate::actions::{ActionExamples, ActionModel, ActionSet, ActionVectorField};
use crate::assets::cache::content_key;
use crate::assets::{estimate_background, load_project, Mask, Project};
use crate::compat::{ClusterSide, CompatibilityIndex, PairClusters};
use crate::compositor::{LayerSource, Quality, RenderJob, RenderOrder};
use crate::metric::{build_distance_matrix, build_jump_graph, decode_cache, encode_cache, DistanceMatrix, JumpGraph};
use crate::performance::SessionConfig;
use crate::segmentation::{segment_sequence, SequenceInputs};
use crate::synthesis::{ActorModel, Engine, LayerSpec, OutputTimeline, SynthesisParams};
use crate::{Error, Result};

/// One actor after preparation.
#[derive(Debug)]
pub struct PreparedActor {
    pub actions: ActionSet,
    pub masks: Option<Arc<Vec<Mask>>>,
    pub action_model: ActionModel,
    pub model: Arc<ActorModel>,
}

/// A project ready for synthesis.
#[derive(Debug)]
pub struct PreparedProject {
    pub project: Project,
    /// Background per source sequence.
    pub backgrounds: Vec<Arc<RgbImage>>,
    /// Background of the output canvas.
    pub background: Arc<RgbImage>,
    pub actors: Vec<PreparedActor>,
    /// Pair models keyed by actor indices in the pair's side order.
    pub pairs: Vec<((usize, usize), PairClusters)>,
    pub compat: Arc<CompatibilityIndex>,
}

fn hash_bytes(key: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    hex::decode_to_slice(key, &mut out).expect("keys are sha256 hex");
    out
}

fn encode_masks(masks: &[Mask]) -> Vec<u8> {
    let (w, h) = masks.first().map_or((0, 0), Mask::dimensions);
    let mut out = Vec::new();
    out.extend_from_slice(b"LSMK");
    for v in [w, h, masks.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in masks {
        for chunk in m.bits().chunks(8) {
            out.push(chunk.iter().enumerate().fold(0u8, |b, (i, &v)| b | (v as u8) << i));
        }
    }
    out
}

fn decode_masks(bytes: &[u8]) -> Option<Vec<Mask>> {
    if bytes.len() < 16 || &bytes[..4] != b"LSMK" {
        return None;
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (w, h, n) = (word(0), word(1), word(2) as usize);
    let per = ((w * h) as usize).div_ceil(8);
    if bytes.len() != 16 + per * n {
        return None;
    }
    Some(
        (0..n)
            .map(|k| {
                let data = &bytes[16 + per * k..16 + per * (k + 1)];
                Mask::from_fn(w, h, |x, y| {
                    let i = (y * w + x) as usize;
                    data[i / 8] >> (i % 8) & 1 == 1
                })
            })
            .collect(),
    )
}

fn encode_field(f: &ActionVectorField) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + f.len() * f.classes() * 8);
    out.extend_from_slice(&(f.len() as u32).to_le_bytes());
    out.extend_from_slice(&(f.classes() as u32).to_le_bytes());
    for t in 0..f.len() {
        for v in f.row(t) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_field(bytes: &[u8]) -> Option<ActionVectorField> {
    let n = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let k = u32::from_le_bytes(bytes.get(4..8)?.try_into().ok()?) as usize;
    if bytes.len() != 8 + n * k * 8 {
        return None;
    }
    let rows: Vec<Vec<f64>> = bytes[8..]
        .chunks_exact(k * 8)
        .map(|r| {
            r.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    ActionVectorField::from_rows(&rows).ok()
}

/// Estimated background of one source sequence, cached as PNG.
pub fn source_background(project: &Project, source: usize) -> Result<RgbImage> {
    let src = &project.sources[source];
    let path = project.cache.entry("background", &src.hash, "png");
    if let Ok(img) = image::open(&path) {
        let img = img.to_rgb8();
        if img.dimensions() == (src.frames.width(), src.frames.height()) {
            return Ok(img);
        }
    }
    let bg = estimate_background(src.frames.frames())?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::assets::write_png(&path, &bg)?;
    Ok(bg)
}

/// Loads the manifest and prepares every actor.
pub fn prepare_path(manifest: &Path) -> Result<PreparedProject> {
    prepare(load_project(manifest)?)
}

pub fn prepare(mut project: Project) -> Result<PreparedProject> {
    let params = project.manifest.parameters.clone();
    params.segmentation.validate()?;
    params.synthesis.validate()?;
    params.schedule.validate()?;

    let backgrounds: Vec<Arc<RgbImage>> = (0..project.sources.len())
        .into_par_iter()
        .map(|s| source_background(&project, s).map(Arc::new))
        .collect::<Result<_>>()?;
    let background = match &project.manifest.background {
        Some(p) => {
            let p = project.resolve(p);
            let img = image::open(&p)
                .map_err(|source| Error::Image {
                    path: p.clone(),
                    source,
                })?
                .to_rgb8();
            Arc::new(img)
        }
        None => backgrounds
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidAsset("project has no actors".into()))?,
    };

    // segmentation of tracked actors that came without masks
    let seg_json = serde_json::to_vec(&params.segmentation).expect("params serialize");
    let cache = project.cache.clone();
    let seg_results: Vec<Result<Option<Vec<Mask>>>> = project
        .actors
        .par_iter()
        .map(|a| {
            let Some(boxes) = a.sequence.boxes() else {
                return Ok(None);
            };
            if a.sequence.masks().is_some() {
                return Ok(None);
            }
            let key = content_key([a.hash.as_bytes(), &seg_json]);
            let path = cache.entry("masks", &key, "bin");
            if let Some(m) = cache.read(&path).and_then(|b| decode_masks(&b)) {
                if m.len() == a.sequence.len() {
                    return Ok(Some(m));
                }
                warn!("discarding corrupt mask cache {}", path.display());
            }
            info!("segmenting {}", a.sequence.id());
            let bg = &backgrounds[a.source];
            let flow = a.flow.as_deref();
            let masks = segment_sequence(
                SequenceInputs {
                    frames: a.sequence.source().frames(),
                    boxes,
                    flow,
                    scribbles: &a.scribbles,
                    background: bg,
                },
                &params.segmentation,
                0,
                &[],
            )?;
            cache.write(&path, &encode_masks(&masks))?;
            Ok(Some(masks))
        })
        .collect();
    for (a, r) in project.actors.iter_mut().zip(seg_results) {
        if let Some(m) = r? {
            a.sequence.set_masks(m)?;
        }
    }

    let jump_n = params.synthesis.jump_candidates;
    let prop_json = serde_json::to_vec(&params.propagation).expect("params serialize");
    let mut actors = Vec::with_capacity(project.actors.len());
    for (i, a) in project.actors.iter().enumerate() {
        let desc = &project.manifest.actors[i];
        let bg = &backgrounds[a.source];
        let masks_hash = a
            .sequence
            .masks()
            .map(|m| content_key([encode_masks(m).as_slice()]))
            .unwrap_or_default();
        let bg_hash = content_key([bg.as_raw().as_slice()]);
        let key = content_key([
            a.hash.as_bytes(),
            masks_hash.as_bytes(),
            bg_hash.as_bytes(),
            &(jump_n as u64).to_le_bytes(),
        ]);
        let path = cache.entry("distances", &key, "bin");
        let cached = cache
            .read(&path)
            .and_then(|b| match decode_cache(&b, &hash_bytes(&key)) {
                Ok(v) => v,
                Err(reason) => {
                    warn!("discarding distance cache {}: {reason}", path.display());
                    None
                }
            });
        let (matrix, graph): (DistanceMatrix, JumpGraph) = match cached {
            Some(v) => v,
            None => {
                info!("computing distances for {}", desc.id);
                let m = build_distance_matrix(&a.sequence, bg)?;
                let g = build_jump_graph(&m, jump_n);
                cache.write(&path, &encode_cache(&hash_bytes(&key), &m, &g))?;
                (m, g)
            }
        };
        let matrix = Arc::new(matrix);
        let set = ActionSet::from_desc(desc)?;
        let examples: ActionExamples = desc
            .examples
            .iter()
            .map(|e| Ok((e.frame, set.index_of(&e.action)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        let examples_json = serde_json::to_vec(&examples).expect("examples serialize");
        let field_key = content_key([key.as_bytes(), &prop_json, &examples_json]);
        let field_path = cache.entry("fields", &field_key, "bin");
        let action_model = ActionModel::new(set.clone(), matrix.clone(), examples, params.propagation.clone())?;
        let field = match cache.read(&field_path).and_then(|b| decode_field(&b)) {
            Some(f) if f.len() == matrix.len() && f.classes() == set.len() => Arc::new(f),
            _ => {
                let f = action_model.field();
                cache.write(&field_path, &encode_field(&f))?;
                f
            }
        };
        let model = Arc::new(ActorModel::new(desc.id.clone(), matrix, Arc::new(graph), field)?);
        actors.push(PreparedActor {
            actions: set,
            masks: a.sequence.masks().map(|m| Arc::new(m.to_vec())),
            action_model,
            model,
        });
    }

    let (pairs, compat) = build_compatibility(&project, &actors)?;
    Ok(PreparedProject {
        project,
        backgrounds,
        background,
        actors,
        pairs,
        compat: Arc::new(compat),
    })
}

/// Replays the manifest's tags into pair models, in order.
fn build_compatibility(
    project: &Project,
    actors: &[PreparedActor],
) -> Result<(Vec<((usize, usize), PairClusters)>, CompatibilityIndex)> {
    let params = &project.manifest.parameters.propagation;
    let mut pairs: Vec<((usize, usize), PairClusters)> = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let side = |i: usize| -> Result<ClusterSide> {
        let a = &actors[i];
        ClusterSide::new(
            a.model.id(),
            a.model.matrix().clone(),
            a.action_model.examples().clone(),
            a.actions.len(),
            params,
        )
    };
    for tag in &project.manifest.compatibility {
        let i = project.actor_index(&tag.actors[0])?;
        let j = project.actor_index(&tag.actors[1])?;
        let key = (i.min(j), i.max(j));
        let slot = match lookup.get(&key) {
            Some(&s) => s,
            None => {
                let second = if key.0 == key.1 { None } else { Some(side(key.1)?) };
                pairs.push((key, PairClusters::new(side(key.0)?, second, params.clone())));
                lookup.insert(key, pairs.len() - 1);
                pairs.len() - 1
            }
        };
        let (mut frames, mut modes) = (tag.frames, tag.modes);
        if i > j {
            frames.swap(0, 1);
            if let Some(m) = modes.as_mut() {
                m.swap(0, 1);
            }
        }
        pairs[slot].1.tag(frames[0], frames[1], tag.verdict, modes)?;
    }
    let mut index = CompatibilityIndex::new();
    for ((a, b), p) in &pairs {
        index.insert(*a, *b, Arc::new(p.snapshot()));
    }
    Ok((pairs, index))
}

impl PreparedProject {
    pub fn manifest_hash(&self) -> &str {
        &self.project.manifest_hash
    }

    pub fn models(&self) -> Vec<Arc<ActorModel>> {
        self.actors.iter().map(|a| a.model.clone()).collect()
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        self.project
            .manifest
            .layers
            .iter()
            .map(|l| {
                let actor = self.project.actor_index(&l.actor)?;
                Ok(LayerSpec {
                    actor,
                    default_action: self.actors[actor].actions.index_of(&l.default_action)?,
                    initial_frame: None,
                })
            })
            .collect()
    }

    /// Action ids per layer.
    pub fn layer_actions(&self) -> Result<Vec<Vec<String>>> {
        Ok(self
            .layer_specs()?
            .iter()
            .map(|l| {
                self.actors[l.actor]
                    .actions
                    .actions
                    .iter()
                    .map(|a| a.id.clone())
                    .collect()
            })
            .collect())
    }

    pub fn engine(&self, params: SynthesisParams) -> Result<Engine> {
        Engine::new(self.models(), self.layer_specs()?, self.compat.clone(), params)
    }

    pub fn default_engine(&self) -> Result<Engine> {
        self.engine(self.project.manifest.parameters.synthesis.clone())
    }

    pub fn session_config(&self, quality: Quality) -> Result<SessionConfig> {
        Ok(SessionConfig {
            frame_rate: self.project.manifest.frame_rate,
            schedule: self.project.manifest.parameters.schedule.clone(),
            manifest_hash: self.project.manifest_hash.clone(),
            actions: self.layer_actions()?,
            quality,
        })
    }

    pub fn render_job(&self, timeline: OutputTimeline, quality: Quality, order: RenderOrder) -> Result<RenderJob> {
        let layers = self
            .project
            .manifest
            .layers
            .iter()
            .map(|l| {
                let actor = self.project.actor_index(&l.actor)?;
                Ok(LayerSource {
                    frames: self.project.actors[actor].sequence.source().clone(),
                    masks: self.actors[actor].masks.clone(),
                    offset: l.offset,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RenderJob {
            timeline,
            background: self.background.clone(),
            layers,
            quality,
            order,
        })
    }
}
