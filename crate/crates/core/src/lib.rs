//! Core engine for turning static-camera footage into triggerable, loopable
//! video actors.
//!
//! The crate is organised the way a project flows through the system:
//!
//! * [`assets`] loads frames, boxes, masks, flow and the project manifest.
//! * [`metric`] measures frame-to-frame distances and builds jump graphs.
//! * [`actions`] spreads a few tagged example frames over the whole actor.
//! * [`compat`] tracks which frames of two actors may be shown together.
//! * [`segmentation`] cuts tracked actors out of the background.
//! * [`synthesis`] picks output frames by dynamic programming.
//! * [`compositor`] turns chosen frames back into images.
//! * [`performance`] runs live sessions, recordings and control sequences.
//! * [`prepare`] ties the preparation steps into one cached pipeline.
//! * [`demo`] writes a tiny synthetic project.

pub mod actions;
pub mod assets;
pub mod compat;
pub mod compositor;
pub mod demo;
pub mod error;
pub mod linalg;
pub mod metric;
pub mod performance;
pub mod prepare;
pub mod segmentation;
pub mod synthesis;

pub use error::{Error, Result};
