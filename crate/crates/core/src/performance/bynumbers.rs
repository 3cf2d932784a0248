use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::assets::manifest::ColorActionDesc;
use crate::synthesis::{Engine, OutputTimeline};
use crate::{Error, Result};

/// Largest per-channel difference at which a control colour still matches.
pub const COLOR_TOLERANCE: u8 = 16;

/// Control colours and the action each one requests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColorMap {
    entries: Vec<([u8; 3], String)>,
}

impl ColorMap {
    pub fn new(entries: Vec<([u8; 3], String)>) -> Self {
        Self { entries }
    }

    pub fn from_desc(descs: &[ColorActionDesc]) -> Result<Self> {
        let entries = descs
            .iter()
            .map(|d| Ok((d.rgb()?, d.action.clone())))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

/// Action of the first entry within [`COLOR_TOLERANCE`] of `rgb`.
pub fn match_color(map: &ColorMap, rgb: [u8; 3]) -> Option<&str> {
    map.entries
        .iter()
        .find(|(c, _)| c.iter().zip(&rgb).all(|(a, b)| a.abs_diff(*b) <= COLOR_TOLERANCE))
        .map(|(_, a)| a.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrigger {
    /// Control frame, which is also the output column.
    pub frame: usize,
    pub layer: usize,
    pub action: String,
}

/// Reads each layer's anchor pixel in every control frame and emits a
/// trigger whenever the requested action changes. Colours without a mapping,
/// or mapped to an action the layer lacks, keep the previous request.
pub fn control_sequence_triggers(
    frames: &[RgbImage],
    anchors: &[(u32, u32)],
    map: &ColorMap,
    layer_actions: &[Vec<String>],
    defaults: &[usize],
) -> Result<Vec<ScheduledTrigger>> {
    if anchors.len() != layer_actions.len() || defaults.len() != layer_actions.len() {
        return Err(Error::LengthMismatch(layer_actions.len(), anchors.len()));
    }
    let mut current: Vec<String> = defaults
        .iter()
        .zip(layer_actions)
        .map(|(&d, a)| a.get(d).cloned().ok_or(Error::UnknownLayer(d)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        for (layer, &(x, y)) in anchors.iter().enumerate() {
            if x >= frame.width() || y >= frame.height() {
                return Err(Error::InvalidAsset(format!(
                    "anchor ({x}, {y}) of layer {layer} lies outside control frame {k}"
                )));
            }
            let Some(action) = match_color(map, frame.get_pixel(x, y).0) else {
                continue;
            };
            if action != current[layer] && layer_actions[layer].iter().any(|a| a == action) {
                current[layer] = action.to_string();
                out.push(ScheduledTrigger {
                    frame: k,
                    layer,
                    action: action.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Applies scheduled triggers at their columns and synthesizes `columns`
/// columns in one pass.
pub fn synthesize_by_numbers(
    mut engine: Engine,
    triggers: &[ScheduledTrigger],
    layer_actions: &[Vec<String>],
    columns: usize,
) -> Result<(OutputTimeline, Engine)> {
    for t in triggers {
        let actions = layer_actions.get(t.layer).ok_or(Error::UnknownLayer(t.layer))?;
        let index = actions
            .iter()
            .position(|a| *a == t.action)
            .ok_or_else(|| Error::DanglingAction {
                actor: format!("layer {}", t.layer),
                action: t.action.clone(),
            })?;
        engine.trigger(t.layer, t.frame, index)?;
    }
    engine.resynthesize(0, columns)?;
    Ok((engine.timeline(), engine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn map() -> ColorMap {
        ColorMap::new(vec![([0, 0, 0], "stand".into()), ([255, 255, 255], "sit".into())])
    }

    fn bar_frames(w: u32, n: usize, reversed: bool) -> Vec<RgbImage> {
        (0..n)
            .map(|k| {
                let pos = if reversed {
                    w as i64 - 1 - k as i64 * 2
                } else {
                    k as i64 * 2
                };
                RgbImage::from_fn(w, 4, |x, _| {
                    if (x as i64 - pos).abs() <= 1 {
                        Rgb([0, 0, 0])
                    } else {
                        Rgb([250, 250, 250])
                    }
                })
            })
            .collect()
    }

    fn layers(n: usize) -> Vec<Vec<String>> {
        vec![vec!["sit".to_string(), "stand".to_string()]; n]
    }

    #[test]
    fn tolerance() {
        assert_eq!(match_color(&map(), [10, 16, 0]), Some("stand"));
        assert_eq!(match_color(&map(), [17, 0, 0]), None);
        assert_eq!(match_color(&map(), [240, 250, 255]), Some("sit"));
    }

    #[test]
    fn sweeping_bar_staggers_onsets() {
        let anchors: Vec<(u32, u32)> = (0..6).map(|i| (4 + i * 8, 2)).collect();
        let trig =
            control_sequence_triggers(&bar_frames(52, 30, false), &anchors, &map(), &layers(6), &[0; 6]).unwrap();
        let onsets: Vec<usize> = (0..6)
            .map(|l| trig.iter().find(|t| t.layer == l && t.action == "stand").unwrap().frame)
            .collect();
        assert!(onsets.windows(2).all(|w| w[0] < w[1]), "{onsets:?}");
        let rev = control_sequence_triggers(&bar_frames(52, 30, true), &anchors, &map(), &layers(6), &[0; 6]).unwrap();
        let rev_onsets: Vec<usize> = (0..6)
            .map(|l| rev.iter().find(|t| t.layer == l && t.action == "stand").unwrap().frame)
            .collect();
        assert!(rev_onsets.windows(2).all(|w| w[0] > w[1]), "{rev_onsets:?}");
    }

    #[test]
    fn constant_and_unmapped_frames_hold() {
        let frames = vec![RgbImage::from_pixel(4, 4, Rgb([0, 0, 0])); 5];
        let t = control_sequence_triggers(&frames, &[(1, 1)], &map(), &layers(1), &[0]).unwrap();
        assert_eq!(
            t,
            vec![ScheduledTrigger {
                frame: 0,
                layer: 0,
                action: "stand".into()
            }]
        );
        let frames = vec![RgbImage::from_pixel(4, 4, Rgb([255, 0, 0])); 5];
        let t = control_sequence_triggers(&frames, &[(1, 1)], &map(), &layers(1), &[0]).unwrap();
        assert!(t.is_empty());
        assert!(control_sequence_triggers(&frames, &[(9, 1)], &map(), &layers(1), &[0]).is_err());
    }
}
