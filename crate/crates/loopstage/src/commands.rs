//! Implementations of the command line subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use log::info;
use loopstage_core::assets::manifest::CompatTagDesc;
use loopstage_core::assets::{load_frame_dir, load_mask_dir, load_project, ProjectManifest};
use loopstage_core::compat::{TagMode, Verdict};
use loopstage_core::compositor::{render_sequence, Quality, RenderOrder};
use loopstage_core::performance::{
    control_sequence_triggers, resynthesize_recording, synthesize_by_numbers, ColorMap, PerformanceRecording,
};
use loopstage_core::prepare::{prepare_path, source_background, PreparedProject};
use loopstage_core::segmentation::{segment_sequence, SequenceInputs};
use loopstage_core::synthesis::{write_timeline_csv, OutputTimeline};

use crate::server::{self, AppState};

/// Runs the cached preparation pipeline and returns a short summary.
pub fn prepare(manifest: &Path) -> anyhow::Result<String> {
    let p = prepare_path(manifest)?;
    let mut out = format!("project {} ({})\n", p.project.manifest.name, p.manifest_hash());
    for a in &p.actors {
        let m = &a.model;
        let counts = (0..a.actions.len())
            .map(|k| (0..m.len()).filter(|&t| m.field().argmax(t) == k).count())
            .collect::<Vec<_>>();
        out += &format!(
            "  actor {}: {} frames, sigma_t {:.3}, segmented {}, frames per action {:?}\n",
            m.id(),
            m.len(),
            m.default_sigma_t(),
            a.masks.is_some(),
            counts
        );
    }
    for ((i, j), pair) in &p.pairs {
        out += &format!(
            "  pair {}/{}: B {:?}, {} incompatible cells\n",
            p.actors[*i].model.id(),
            p.actors[*j].model.id(),
            pair.matrix().shape(),
            pair.matrix().incompatible_count()
        );
    }
    Ok(out)
}

/// Serves a live session until Ctrl-C.
pub async fn perform(manifest: &Path, host: &str, port: u16, quality: Quality) -> anyhow::Result<()> {
    let project = Arc::new(tokio::task::block_in_place(|| prepare_path(manifest))?);
    let session = server::start_session(&project, quality)?;
    let dir = server::recordings_dir(&project);
    let state = Arc::new(AppState::new(project, session, dir));
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    server::serve(state, listener, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// The manifest a recording belongs to when none is given: recordings are
/// saved under `<project>/recordings/`, next to `project.json`.
pub fn default_manifest_for(recording: &Path) -> PathBuf {
    let dir = recording.parent().unwrap_or(Path::new("."));
    dir.parent().unwrap_or(Path::new(".")).join("project.json")
}

fn write_outputs(
    project: &PreparedProject,
    timeline: OutputTimeline,
    out: &Path,
    order: RenderOrder,
    frames: bool,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_timeline_csv(&out.join("timeline.csv"), &timeline, project.manifest_hash())?;
    if frames {
        let job = project.render_job(timeline, Quality::Final, order)?;
        let n = render_sequence(&job, &out.join("frames"))?;
        info!("rendered {n} frames into {}", out.join("frames").display());
    }
    Ok(())
}

pub struct RenderOptions {
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub order: RenderOrder,
    pub min_columns: usize,
    pub frames: bool,
}

/// Re-synthesizes a recording with full knowledge of its events and
/// renders it at final quality. Returns the offline and replayed-live
/// objectives.
pub fn render(recording: &Path, opts: &RenderOptions) -> anyhow::Result<(f64, f64)> {
    let rec = PerformanceRecording::load(recording)?;
    let manifest = opts.manifest.clone().unwrap_or_else(|| default_manifest_for(recording));
    let project = prepare_path(&manifest).with_context(|| format!("preparing {}", manifest.display()))?;
    let config = project.session_config(Quality::Final)?;
    let offline = resynthesize_recording(&rec, project.default_engine()?, &config, opts.min_columns)?;
    let live = rec.replay(project.default_engine()?, project.session_config(Quality::Live)?)?;
    let live_objective = live.objective(offline.timeline.columns(), &offline.params).total;
    write_outputs(&project, offline.timeline, &opts.out, opts.order, opts.frames)?;
    Ok((offline.objective.total, live_objective))
}

/// Drives the layers from a control sequence and renders the result.
/// Returns the number of triggers.
pub fn bynumbers(
    manifest: &Path,
    control: &Path,
    out: &Path,
    order: RenderOrder,
    frames: bool,
) -> anyhow::Result<usize> {
    let project = prepare_path(manifest)?;
    let m = &project.project.manifest;
    let (control, _) = load_frame_dir(control, m.frame_rate)?;
    let anchors = m
        .layers
        .iter()
        .map(|l| {
            l.anchor
                .map(|[x, y]| (x, y))
                .with_context(|| format!("layer {:?} has no anchor pixel", l.actor))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let map = ColorMap::from_desc(&m.control_colors)?;
    let layer_actions = project.layer_actions()?;
    let defaults: Vec<usize> = project.layer_specs()?.iter().map(|l| l.default_action).collect();
    let triggers = control_sequence_triggers(control.frames(), &anchors, &map, &layer_actions, &defaults)?;
    let (timeline, _) = synthesize_by_numbers(project.default_engine()?, &triggers, &layer_actions, control.len())?;
    write_outputs(&project, timeline, out, order, frames)?;
    Ok(triggers.len())
}

/// Segments one tracked actor from frame `from` on and writes grayscale
/// PNG masks into `out`. Frames before `from` are read back from `out`.
pub fn segment(manifest: &Path, actor: &str, from: usize, out: &Path) -> anyhow::Result<usize> {
    let project = load_project(manifest)?;
    let a = project.actor_index(actor)?;
    let loaded = &project.actors[a];
    let Some(boxes) = loaded.sequence.boxes() else {
        bail!("actor {actor:?} is not tracked");
    };
    let seq = loaded.sequence.source();
    let existing = if from > 0 {
        load_mask_dir(out, from, (seq.width(), seq.height()))
            .with_context(|| format!("reading masks before frame {from} from {}", out.display()))?
            .0
    } else {
        Vec::new()
    };
    let bg = source_background(&project, loaded.source)?;
    let params = &project.manifest.parameters.segmentation;
    let masks = segment_sequence(
        SequenceInputs {
            frames: seq.frames(),
            boxes,
            flow: loaded.flow.as_deref(),
            scribbles: &loaded.scribbles,
            background: &bg,
        },
        params,
        from,
        &existing,
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (t, m) in masks.iter().enumerate().skip(from) {
        m.save_png(&loopstage_core::assets::numbered(out, t, "png"))?;
    }
    Ok(masks.len() - from)
}

/// Appends a compatibility tag to the manifest after checking that it
/// replays cleanly. Returns the pair's text export.
pub fn tag(
    manifest: &Path,
    actors: [String; 2],
    frames: [usize; 2],
    verdict: Verdict,
    modes: Option<[TagMode; 2]>,
) -> anyhow::Result<String> {
    let original = ProjectManifest::from_path(manifest)?;
    let mut updated = original.clone();
    updated.compatibility.push(CompatTagDesc {
        actors: actors.clone(),
        frames,
        verdict,
        modes,
    });
    updated.save(manifest)?;
    match prepare_path(manifest) {
        Ok(p) => Ok(pair_text(&p, &actors[0], &actors[1]).unwrap_or_default()),
        Err(e) => {
            original.save(manifest)?;
            Err(anyhow::Error::from(e).context("tag rejected; manifest left unchanged"))
        }
    }
}

fn pair_text(p: &PreparedProject, a: &str, b: &str) -> Option<String> {
    let (i, j) = (p.project.actor_index(a).ok()?, p.project.actor_index(b).ok()?);
    let key = (i.min(j), i.max(j));
    p.pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, pair)| pair.export_text())
}

/// Text export of every compatibility model in the project.
pub fn compat(manifest: &Path) -> anyhow::Result<String> {
    let p = prepare_path(manifest)?;
    Ok(p.pairs
        .iter()
        .map(|(_, pair)| pair.export_text())
        .collect::<Vec<_>>()
        .join("\n"))
}
