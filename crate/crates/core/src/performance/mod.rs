//! Live sessions on top of the synthesis engine.
//!
//! A session plays output columns at the project frame rate and keeps a
//! buffer of synthesized columns ahead of the playhead. Triggers ramp a
//! layer's request from a commit point a few columns ahead and re-synthesize
//! everything after it; played columns never change. Every trigger and
//! parameter change is recorded with its timestamp so the performance can be
//! replayed or re-synthesized offline with full knowledge of the requests.

mod bynumbers;
mod protocol;
mod recording;

pub use bynumbers::{
    control_sequence_triggers, match_color, synthesize_by_numbers, ColorMap, ScheduledTrigger, COLOR_TOLERANCE,
};
pub use protocol::{decode_stream_column, encode_stream_column, Ack, ClientMessage};
pub use recording::{resynthesize_recording, EventKind, OfflineResult, PerformanceRecording, RecordedEvent};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::compositor::Quality;
use crate::synthesis::{evaluate_objective, Engine, ObjectiveTerms, OutputTimeline, SynthesisParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    /// Columns synthesized per block.
    pub block: usize,
    /// A block is scheduled once fewer unplayed columns remain.
    pub low_water: usize,
    /// Distance between the playhead and the first column a trigger may change.
    pub commit: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            block: 64,
            low_water: 32,
            commit: 2,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::param("schedule.block", "must be at least 1"));
        }
        if self.low_water <= self.commit {
            return Err(Error::param("schedule.low_water", "must exceed the commit distance"));
        }
        Ok(())
    }
}

/// Static description of a session.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub frame_rate: f64,
    pub schedule: ScheduleParams,
    pub manifest_hash: String,
    /// Action ids per layer, in model order.
    pub actions: Vec<Vec<String>>,
    pub quality: Quality,
}

/// Column played at `ms` after the session started.
pub fn column_at(ms: u64, frame_rate: f64) -> usize {
    (ms as f64 * frame_rate / 1000.0 + 1e-9).floor() as usize
}

/// A live performance.
#[derive(Debug, Clone)]
pub struct Session {
    engine: Engine,
    config: SessionConfig,
    playhead: usize,
    now_ms: u64,
    recording: PerformanceRecording,
}

impl Session {
    /// Creates the session and synthesizes the first block.
    pub fn new(engine: Engine, config: SessionConfig) -> Result<Self> {
        config.schedule.validate()?;
        if !(config.frame_rate > 0.0) {
            return Err(Error::param("frame_rate", "must be positive"));
        }
        if config.actions.len() != engine.layers().len() {
            return Err(Error::LengthMismatch(engine.layers().len(), config.actions.len()));
        }
        let recording = PerformanceRecording::new(config.manifest_hash.clone(), config.frame_rate);
        let mut s = Self {
            engine,
            config,
            playhead: 0,
            now_ms: 0,
            recording,
        };
        s.refill()?;
        Ok(s)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Index of the next column to be shown; everything before it was played.
    pub fn playhead(&self) -> usize {
        self.playhead
    }

    pub fn commit_point(&self) -> usize {
        self.playhead + self.config.schedule.commit
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn synthesized(&self) -> usize {
        self.engine.columns()
    }

    pub fn quality(&self) -> Quality {
        self.config.quality
    }

    pub fn recording(&self) -> &PerformanceRecording {
        &self.recording
    }

    /// Frame index per layer at column `k`, if synthesized.
    pub fn column(&self, k: usize) -> Option<Vec<usize>> {
        (k < self.engine.columns()).then(|| self.engine.rows().iter().map(|r| r[k]).collect())
    }

    fn refill(&mut self) -> Result<()> {
        let sched = &self.config.schedule;
        while self.engine.columns() < self.playhead + sched.low_water {
            self.engine.synthesize_block(sched.block)?;
            debug!("block synthesized; buffer now {}", self.engine.columns());
        }
        Ok(())
    }

    /// Moves the clock to `now_ms` and returns the columns that became
    /// played, in order.
    pub fn advance_to(&mut self, now_ms: u64) -> Result<Vec<(usize, Vec<usize>)>> {
        let now_ms = now_ms.max(self.now_ms);
        self.now_ms = now_ms;
        let target = column_at(now_ms, self.config.frame_rate);
        let mut played = Vec::new();
        while self.playhead < target {
            let col = self.playhead;
            played.push((col, self.column(col).expect("buffer ahead of playhead")));
            self.playhead += 1;
            self.refill()?;
        }
        Ok(played)
    }

    fn action_index(&self, layer: usize, action: &str) -> Result<usize> {
        let actions = self.config.actions.get(layer).ok_or(Error::UnknownLayer(layer))?;
        actions
            .iter()
            .position(|a| a == action)
            .ok_or_else(|| Error::DanglingAction {
                actor: self.engine.timeline().actors[layer].clone(),
                action: action.to_string(),
            })
    }

    /// Ramps `layer` towards `action` from the commit point and
    /// re-synthesizes every later column. Returns the first affected column.
    pub fn trigger(&mut self, now_ms: u64, layer: usize, action: &str) -> Result<usize> {
        let index = self.action_index(layer, action)?;
        self.advance_to(now_ms)?;
        let start = self.commit_point();
        self.engine.trigger(layer, start, index)?;
        let end = self.engine.columns().max(start + 1);
        self.engine.resynthesize(start, end)?;
        self.recording.push(RecordedEvent {
            t_ms: self.now_ms,
            kind: EventKind::Trigger {
                layer,
                action: action.to_string(),
            },
        })?;
        Ok(start)
    }

    /// Changes a parameter from the next synthesized block on.
    pub fn set_param(&mut self, now_ms: u64, name: &str, value: &serde_json::Value) -> Result<usize> {
        self.advance_to(now_ms)?;
        let mut params = self.engine.params().clone();
        let mut quality = self.config.quality;
        apply_param(&mut params, &mut quality, name, value)?;
        self.engine.set_params(params)?;
        self.config.quality = quality;
        self.recording.push(RecordedEvent {
            t_ms: self.now_ms,
            kind: EventKind::Param {
                name: name.to_string(),
                value: value.clone(),
            },
        })?;
        Ok(self.engine.columns())
    }

    /// Played part of the timeline.
    pub fn played_timeline(&self) -> OutputTimeline {
        let mut t = self.engine.timeline();
        for r in &mut t.rows {
            r.truncate(self.playhead);
        }
        t
    }

    /// Closes the recording at the current clock.
    pub fn finish_recording(&mut self) -> PerformanceRecording {
        let mut r = self.recording.clone();
        r.end_ms = self.now_ms;
        r
    }

    /// Full objective of the first `columns` columns under `params`.
    pub fn objective(&self, columns: usize, params: &SynthesisParams) -> ObjectiveTerms {
        let rows: Vec<Vec<usize>> = self
            .engine
            .rows()
            .iter()
            .map(|r| r[..columns.min(r.len())].to_vec())
            .collect();
        evaluate_objective(
            self.engine.actors(),
            self.engine.layers(),
            &rows,
            self.engine.all_requests(),
            self.engine.compatibility(),
            params,
        )
    }
}

/// Applies a named parameter change.
pub fn apply_param(
    params: &mut SynthesisParams,
    quality: &mut Quality,
    name: &str,
    value: &serde_json::Value,
) -> Result<()> {
    let number = || {
        value
            .as_f64()
            .ok_or_else(|| Error::param(name, format!("expected a number, got {value}")))
    };
    let count = || {
        value
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::param(name, format!("expected a positive integer, got {value}")))
    };
    let mut next = params.clone();
    match name {
        "alpha" | "synth_alpha" => next.alpha = number()?,
        "beta" => next.beta = number()?,
        "sigma_a" => next.sigma_a = number()?,
        "compression" => next.compression = count()?,
        "ramp_len" => next.ramp_len = count()?,
        "quality" => {
            *quality = serde_json::from_value(value.clone())
                .map_err(|_| Error::param(name, format!("expected \"live\" or \"final\", got {value}")))?;
            return Ok(());
        }
        _ => return Err(Error::param(name, "unknown parameter")),
    }
    next.validate()?;
    *params = next;
    Ok(())
}
