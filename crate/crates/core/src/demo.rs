//! A small synthetic project used by the quick-start and by tests: a flame
//! swaying left and right above a ball that rests and then rolls.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::assets::manifest::{
    ActionDesc, ActorDesc, ActorKindDesc, ColorActionDesc, CompatTagDesc, ExampleDesc, LayerDesc, Parameters,
};
use crate::assets::{numbered, write_boxes_csv, write_png, OrientedBox, ProjectManifest};
use crate::compat::Verdict;
use crate::segmentation::{Run, ScribbleSet};
use crate::Result;

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 48;
pub const FRAMES: usize = 60;
/// Swing period of the flame in frames.
pub const SWAY_PERIOD: f64 = 30.0;

fn flame_center(t: usize) -> (f64, f64) {
    (
        32.0 + 10.0 * (std::f64::consts::TAU * t as f64 / SWAY_PERIOD).sin(),
        14.0,
    )
}

fn ball_center(t: usize) -> (f64, f64) {
    (12.0 + t.saturating_sub(20) as f64, 36.0)
}

fn background_pixel(x: u32, y: u32) -> Rgb<u8> {
    Rgb([40 + (x * 2) as u8, 50 + (y * 2) as u8, 90])
}

/// Frame `t` of the demo footage.
pub fn frame(t: usize) -> RgbImage {
    let (fx, fy) = flame_center(t);
    let (bx, by) = ball_center(t);
    RgbImage::from_fn(WIDTH, HEIGHT, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        if (xf - fx).powi(2) + (yf - fy).powi(2) <= 25.0 {
            Rgb([250, 170, 40])
        } else if (xf - bx).abs() <= 4.0 && (yf - by).abs() <= 4.0 {
            Rgb([220, 30, 30])
        } else {
            background_pixel(x, y)
        }
    })
}

fn action(id: &str, key: &str) -> ActionDesc {
    ActionDesc {
        id: id.into(),
        name: None,
        key: Some(key.into()),
    }
}

fn example(frame: usize, action: &str) -> ExampleDesc {
    ExampleDesc {
        frame,
        action: action.into(),
    }
}

/// The demo manifest, with paths relative to its directory.
pub fn manifest() -> ProjectManifest {
    let tracked = |id: &str, actions, examples| ActorDesc {
        id: id.into(),
        frames: "frames".into(),
        kind: ActorKindDesc::Tracked,
        boxes: Some(format!("{id}_boxes.csv").into()),
        masks: None,
        flow: None,
        scribbles: Some(format!("{id}_scribbles.json").into()),
        actions,
        examples,
    };
    ProjectManifest {
        name: "demo".into(),
        frame_rate: 25.0,
        actors: vec![
            tracked(
                "flame",
                vec![action("left", "a"), action("right", "d")],
                vec![
                    example(22, "left"),
                    example(7, "right"),
                    example(52, "left"),
                    example(37, "right"),
                ],
            ),
            tracked(
                "ball",
                vec![action("rest", "r"), action("roll", "f")],
                vec![example(5, "rest"), example(45, "roll")],
            ),
        ],
        layers: vec![
            LayerDesc {
                actor: "flame".into(),
                default_action: "left".into(),
                offset: [0, 0],
                anchor: Some([8, 8]),
            },
            LayerDesc {
                actor: "ball".into(),
                default_action: "rest".into(),
                offset: [0, 0],
                anchor: Some([56, 40]),
            },
        ],
        compatibility: vec![CompatTagDesc {
            actors: ["flame".into(), "ball".into()],
            frames: [7, 45],
            verdict: Verdict::Incompatible,
            modes: None,
        }],
        control_colors: vec![
            ColorActionDesc {
                color: "#000000".into(),
                action: "right".into(),
            },
            ColorActionDesc {
                color: "#ffffff".into(),
                action: "left".into(),
            },
            ColorActionDesc {
                color: "#ff0000".into(),
                action: "roll".into(),
            },
        ],
        parameters: Parameters::default(),
        background: None,
        cache_dir: None,
    }
}

/// Writes the demo project into `dir` and returns the manifest path.
pub fn write_project(dir: &Path) -> Result<PathBuf> {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| crate::Error::io(&frames, e))?;
    for t in 0..FRAMES {
        write_png(&numbered(&frames, t, "png"), &frame(t))?;
    }
    let boxes = |f: fn(usize) -> (f64, f64), size: f64| -> Vec<OrientedBox> {
        (0..FRAMES)
            .map(|t| {
                let (cx, cy) = f(t);
                OrientedBox::axis_aligned(cx, cy, size, size)
            })
            .collect()
    };
    write_boxes_csv(&dir.join("flame_boxes.csv"), &boxes(flame_center, 12.0))?;
    write_boxes_csv(&dir.join("ball_boxes.csv"), &boxes(ball_center, 10.0))?;
    // a short foreground stroke through each patch center
    let strokes = |f: fn(usize) -> (f64, f64)| {
        let mut s = ScribbleSet::default();
        for t in 0..FRAMES {
            let (cx, cy) = f(t);
            s.add_fg(t, Run::new(cx.round() as u32 - 2, cy.round() as u32, 5));
        }
        s
    };
    strokes(flame_center).write_json(&dir.join("flame_scribbles.json"))?;
    strokes(ball_center).write_json(&dir.join("ball_scribbles.json"))?;
    let path = dir.join("project.json");
    manifest().save(&path)?;
    Ok(path)
}
