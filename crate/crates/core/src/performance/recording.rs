use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compositor::Quality;
use crate::synthesis::{Engine, ObjectiveTerms, OutputTimeline, SynthesisParams};
use crate::{Error, Result};

use super::{apply_param, column_at, Session, SessionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Trigger { layer: usize, action: String },
    Param { name: String, value: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedEvent {
    /// Milliseconds since the session started.
    pub t_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Timestamped commands of one performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecording {
    pub manifest_hash: String,
    pub frame_rate: f64,
    pub events: Vec<RecordedEvent>,
    /// Clock value when the recording was closed.
    #[serde(default)]
    pub end_ms: u64,
}

impl PerformanceRecording {
    pub fn new(manifest_hash: String, frame_rate: f64) -> Self {
        Self {
            manifest_hash,
            frame_rate,
            events: Vec::new(),
            end_ms: 0,
        }
    }

    pub fn push(&mut self, event: RecordedEvent) -> Result<()> {
        if let Some(last) = self.events.last() {
            if event.t_ms < last.t_ms {
                return Err(Error::Rejected(format!(
                    "event at {} ms precedes the previous one at {} ms",
                    event.t_ms, last.t_ms
                )));
            }
        }
        self.end_ms = self.end_ms.max(event.t_ms);
        self.events.push(event);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| w[1].t_ms < w[0].t_ms) {
            return Err(Error::Rejected("recording timestamps decrease".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::param("frame_rate", "must be positive"));
        }
        Ok(())
    }

    /// Number of columns played while recording.
    pub fn columns(&self) -> usize {
        column_at(self.end_ms, self.frame_rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recording serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r = Self::from_json(&text).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })?;
        r.validate()?;
        Ok(r)
    }

    /// Re-runs the session live, event by event, and stops the clock at the
    /// recorded end.
    pub fn replay(&self, engine: Engine, config: SessionConfig) -> Result<Session> {
        self.check_hash(&config.manifest_hash)?;
        let mut s = Session::new(engine, config)?;
        for e in &self.events {
            match &e.kind {
                EventKind::Trigger { layer, action } => {
                    s.trigger(e.t_ms, *layer, action)?;
                }
                EventKind::Param { name, value } => {
                    s.set_param(e.t_ms, name, value)?;
                }
            }
        }
        s.advance_to(self.end_ms)?;
        Ok(s)
    }

    pub fn check_hash(&self, current: &str) -> Result<()> {
        if self.manifest_hash != current {
            return Err(Error::HashMismatch {
                recorded: self.manifest_hash.clone(),
                current: current.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OfflineResult {
    pub timeline: OutputTimeline,
    pub objective: ObjectiveTerms,
    /// Parameters in force at the end of the recording, used throughout.
    pub params: SynthesisParams,
    pub engine: Engine,
}

/// Rebuilds the request timelines of a recording and synthesizes all of its
/// columns in one pass with final quality. `engine` must be freshly built
/// for the project. At least `min_columns` columns are produced.
pub fn resynthesize_recording(
    recording: &PerformanceRecording,
    mut engine: Engine,
    config: &SessionConfig,
    min_columns: usize,
) -> Result<OfflineResult> {
    recording.validate()?;
    recording.check_hash(&config.manifest_hash)?;
    let mut params = engine.params().clone();
    let mut quality = Quality::Final;
    for e in &recording.events {
        let column = column_at(e.t_ms, recording.frame_rate) + config.schedule.commit;
        match &e.kind {
            EventKind::Trigger { layer, action } => {
                let actions = config.actions.get(*layer).ok_or(Error::UnknownLayer(*layer))?;
                let index = actions
                    .iter()
                    .position(|a| a == action)
                    .ok_or_else(|| Error::DanglingAction {
                        actor: format!("layer {layer}"),
                        action: action.clone(),
                    })?;
                engine.trigger(*layer, column, index)?;
            }
            EventKind::Param { name, value } => {
                apply_param(&mut params, &mut quality, name, value)?;
                engine.set_params(params.clone())?;
            }
        }
    }
    let columns = recording.columns().max(min_columns);
    engine.resynthesize(0, columns)?;
    Ok(OfflineResult {
        timeline: engine.timeline(),
        objective: engine.objective(),
        params,
        engine,
    })
}
