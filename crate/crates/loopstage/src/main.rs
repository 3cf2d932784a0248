use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use loopstage::commands::{self, RenderOptions};
use loopstage_core::compat::{TagMode, Verdict};
use loopstage_core::compositor::{Quality, RenderOrder};
use serde::de::DeserializeOwned;

/// Turn static-camera footage into video actors that can be played live.
#[derive(Parser)]
#[command(name = "loopstage", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment tracked actors, compute distances, propagate action labels.
    Prepare { manifest: PathBuf },
    /// Serve a live session over HTTP and WebSocket.
    Perform {
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// live or final
        #[arg(long, default_value = "live")]
        quality: String,
    },
    /// Re-synthesize a recorded performance offline and render it.
    Render {
        recording: PathBuf,
        /// Defaults to project.json one level above the recording's folder.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "render")]
        out: PathBuf,
        /// clone_then_resolve or resolve_then_clone
        #[arg(long, default_value = "clone_then_resolve")]
        order: String,
        #[arg(long, default_value_t = 0)]
        min_columns: usize,
        /// Write only the timeline CSV.
        #[arg(long)]
        timeline_only: bool,
    },
    /// Drive the layers from a colour-coded control sequence.
    Bynumbers {
        manifest: PathBuf,
        control_dir: PathBuf,
        #[arg(long, default_value = "bynumbers")]
        out: PathBuf,
        #[arg(long, default_value = "clone_then_resolve")]
        order: String,
        #[arg(long)]
        timeline_only: bool,
    },
    /// Re-run segmentation of one tracked actor from a given frame.
    Segment {
        manifest: PathBuf,
        actor: String,
        #[arg(long, default_value_t = 0)]
        from: usize,
        /// Defaults to masks/<actor> next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tag a frame pair of two actors as compatible or incompatible.
    Tag {
        manifest: PathBuf,
        actor_a: String,
        frame_a: usize,
        actor_b: String,
        frame_b: usize,
        /// compatible or incompatible
        verdict: String,
        /// Resolution per side, e.g. `specialize,refine`.
        #[arg(long)]
        modes: Option<String>,
    },
    /// Print every compatibility model of a project.
    Compat { manifest: PathBuf },
    /// Write a small synthetic project to try the tools on.
    Demo { dir: PathBuf },
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .with_context(|| format!("invalid {what} {s:?}"))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Prepare { manifest } => print!("{}", commands::prepare(&manifest)?),
        Cmd::Perform {
            manifest,
            port,
            host,
            quality,
        } => {
            let quality: Quality = parse_enum("quality", &quality)?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(commands::perform(&manifest, &host, port, quality))?;
        }
        Cmd::Render {
            recording,
            manifest,
            out,
            order,
            min_columns,
            timeline_only,
        } => {
            let opts = RenderOptions {
                manifest,
                out,
                order: parse_enum::<RenderOrder>("order", &order)?,
                min_columns,
                frames: !timeline_only,
            };
            let (offline, live) = commands::render(&recording, &opts)?;
            println!("objective offline {offline:.6} live {live:.6}");
            println!("wrote {}", opts.out.display());
        }
        Cmd::Bynumbers {
            manifest,
            control_dir,
            out,
            order,
            timeline_only,
        } => {
            let order: RenderOrder = parse_enum("order", &order)?;
            let n = commands::bynumbers(&manifest, &control_dir, &out, order, !timeline_only)?;
            println!("{n} triggers; wrote {}", out.display());
        }
        Cmd::Segment {
            manifest,
            actor,
            from,
            out,
        } => {
            let out = out.unwrap_or_else(|| {
                manifest
                    .parent()
                    .unwrap_or(std::path::Path::new("."))
                    .join("masks")
                    .join(&actor)
            });
            let n = commands::segment(&manifest, &actor, from, &out)?;
            println!("wrote {n} masks into {}", out.display());
        }
        Cmd::Tag {
            manifest,
            actor_a,
            frame_a,
            actor_b,
            frame_b,
            verdict,
            modes,
        } => {
            let verdict: Verdict = parse_enum("verdict", &verdict)?;
            let modes = modes
                .map(|m| -> anyhow::Result<[TagMode; 2]> {
                    let parts: Vec<&str> = m.split(',').collect();
                    anyhow::ensure!(parts.len() == 2, "--modes takes two comma-separated values");
                    Ok([parse_enum("mode", parts[0])?, parse_enum("mode", parts[1])?])
                })
                .transpose()?;
            print!(
                "{}",
                commands::tag(&manifest, [actor_a, actor_b], [frame_a, frame_b], verdict, modes)?
            );
        }
        Cmd::Compat { manifest } => print!("{}", commands::compat(&manifest)?),
        Cmd::Demo { dir } => {
            let path = loopstage_core::demo::write_project(&dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
