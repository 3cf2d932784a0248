//! JSON project manifest.
//!
//! ```json
//! {
//!   "name": "digger",
//!   "frame_rate": 25,
//!   "actors": [
//!     {
//!       "id": "truck",
//!       "frames": "frames",
//!       "kind": "tracked",
//!       "boxes": "truck_boxes.csv",
//!       "flow": "flow",
//!       "actions": [{"id": "parked", "key": "p"}, {"id": "drive", "key": "d"}],
//!       "examples": [{"frame": 0, "action": "parked"}, {"frame": 120, "action": "drive"}]
//!     }
//!   ],
//!   "layers": [{"actor": "truck", "default_action": "parked"}],
//!   "compatibility": [
//!     {"actors": ["digger", "truck"], "frames": [40, 130], "verdict": "incompatible"}
//!   ],
//!   "control_colors": [{"color": "#000000", "action": "stand"}],
//!   "parameters": {"synthesis": {"alpha": 0.6}}
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Frame and mask
//! directories hold `%06d.png` files starting at `000000.png`; flow
//! directories hold `%06d.flow` files starting at `000001.flow`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actions::PropagationParams;
use crate::compat::{TagMode, Verdict};
use crate::performance::ScheduleParams;
use crate::segmentation::SegmentationParams;
use crate::synthesis::SynthesisParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectManifest {
    pub name: String,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    pub actors: Vec<ActorDesc>,
    #[serde(default)]
    pub layers: Vec<LayerDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compatibility: Vec<CompatTagDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_colors: Vec<ColorActionDesc>,
    #[serde(default)]
    pub parameters: Parameters,
    /// Output background image; defaults to the estimated background of the
    /// first actor's source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_frame_rate() -> f64 {
    25.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKindDesc {
    #[default]
    FullFrame,
    Tracked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorDesc {
    pub id: String,
    pub frames: PathBuf,
    #[serde(default)]
    pub kind: ActorKindDesc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scribbles: Option<PathBuf>,
    pub actions: Vec<ActionDesc>,
    #[serde(default)]
    pub examples: Vec<ExampleDesc>,
}

impl ActorDesc {
    pub fn action_index(&self, id: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDesc {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleDesc {
    pub frame: usize,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDesc {
    pub actor: String,
    pub default_action: String,
    /// Pixel offset applied when the layer's patches are composited.
    #[serde(default, skip_serializing_if = "is_zero_offset")]
    pub offset: [i32; 2],
    /// Pixel sampled from control sequences in synthesis-by-numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[u32; 2]>,
}

fn is_zero_offset(o: &[i32; 2]) -> bool {
    *o == [0, 0]
}

/// One compatibility tag, replayed in order when the model is rebuilt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompatTagDesc {
    pub actors: [String; 2],
    pub frames: [usize; 2],
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<[TagMode; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorActionDesc {
    /// `#rrggbb`
    pub color: String,
    pub action: String,
}

impl ColorActionDesc {
    pub fn rgb(&self) -> Result<[u8; 3]> {
        parse_hex_color(&self.color)
    }
}

pub fn parse_hex_color(s: &str) -> Result<[u8; 3]> {
    let hex = s.strip_prefix('#').unwrap_or(s);
    let bad = || Error::param("color", format!("{s:?} is not #rrggbb"));
    if hex.len() != 6 {
        return Err(bad());
    }
    let bytes = hex::decode(hex).map_err(|_| bad())?;
    Ok([bytes[0], bytes[1], bytes[2]])
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parameters {
    pub segmentation: SegmentationParams,
    pub propagation: PropagationParams,
    pub synthesis: SynthesisParams,
    pub schedule: ScheduleParams,
}

impl ProjectManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn actor(&self, id: &str) -> Option<&ActorDesc> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn actor_index(&self, id: &str) -> Option<usize> {
        self.actors.iter().position(|a| a.id == id)
    }

    /// Checks identifier references that do not need any file access.
    pub fn validate_ids(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.actors {
            if !seen.insert(a.id.as_str()) {
                return Err(Error::InvalidAsset(format!("duplicate actor id {:?}", a.id)));
            }
            if a.actions.is_empty() {
                return Err(Error::InvalidAsset(format!("actor {:?} defines no actions", a.id)));
            }
            let mut ids = std::collections::HashSet::new();
            let mut keys = std::collections::HashSet::new();
            for act in &a.actions {
                if !ids.insert(act.id.as_str()) {
                    return Err(Error::InvalidAsset(format!(
                        "actor {:?}: duplicate action id {:?}",
                        a.id, act.id
                    )));
                }
                if let Some(k) = &act.key {
                    if !keys.insert(k.as_str()) {
                        return Err(Error::InvalidAsset(format!("actor {:?}: key {k:?} bound twice", a.id)));
                    }
                }
            }
            for ex in &a.examples {
                if a.action_index(&ex.action).is_none() {
                    return Err(Error::DanglingAction {
                        actor: a.id.clone(),
                        action: ex.action.clone(),
                    });
                }
            }
            if a.kind == ActorKindDesc::Tracked && a.boxes.is_none() {
                return Err(Error::InvalidAsset(format!(
                    "tracked actor {:?} needs a boxes file",
                    a.id
                )));
            }
        }
        for layer in &self.layers {
            let actor = self
                .actor(&layer.actor)
                .ok_or_else(|| Error::UnknownActor(layer.actor.clone()))?;
            if actor.action_index(&layer.default_action).is_none() {
                return Err(Error::DanglingAction {
                    actor: actor.id.clone(),
                    action: layer.default_action.clone(),
                });
            }
        }
        for tag in &self.compatibility {
            for id in &tag.actors {
                if self.actor(id).is_none() {
                    return Err(Error::UnknownActor(id.clone()));
                }
            }
        }
        for c in &self.control_colors {
            c.rgb()?;
        }
        Ok(())
    }
}
