use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `3u^2 - 2u^3` on `[0, 1]`, clamped outside.
pub fn smooth_step(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

pub fn one_hot(classes: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[k] = 1.0;
    v
}

/// `count` request vectors blending `from` into `target` over `ramp_len`
/// columns; the vector at column `k` uses weight `smooth_step(k / ramp_len)`.
pub fn ramp_requests(from: &[f64], target: usize, ramp_len: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    if target >= from.len() {
        return Err(Error::param("target", format!("action {target} of {}", from.len())));
    }
    let seg = RampSegment {
        start: 0,
        from: from.to_vec(),
        target,
        ramp_len: ramp_len.max(1),
    };
    Ok((0..count).map(|k| seg.at(k)).collect())
}

/// One request change: from column `start` the request moves from `from`
/// to the one-hot `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSegment {
    pub start: usize,
    pub from: Vec<f64>,
    pub target: usize,
    pub ramp_len: usize,
}

impl RampSegment {
    fn at(&self, column: usize) -> Vec<f64> {
        let u = column.saturating_sub(self.start) as f64 / self.ramp_len as f64;
        let w = smooth_step(u);
        let mut v: Vec<f64> = self.from.iter().map(|x| (1.0 - w) * x).collect();
        v[self.target] += w;
        v
    }
}

/// Requested action vectors of one layer over all output columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTimeline {
    classes: usize,
    segments: Vec<RampSegment>,
}

impl RequestTimeline {
    /// Constant request for `action` from column 0.
    pub fn new(classes: usize, action: usize) -> Result<Self> {
        if action >= classes {
            return Err(Error::param("default_action", format!("action {action} of {classes}")));
        }
        Ok(Self {
            classes,
            segments: vec![RampSegment {
                start: 0,
                from: one_hot(classes, action),
                target: action,
                ramp_len: 1,
            }],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn segments(&self) -> &[RampSegment] {
        &self.segments
    }

    fn segment(&self, column: usize) -> &RampSegment {
        let i = self.segments.partition_point(|s| s.start <= column);
        &self.segments[i.saturating_sub(1)]
    }

    pub fn at(&self, column: usize) -> Vec<f64> {
        self.segment(column).at(column)
    }

    /// The action the layer is heading for at `column`.
    pub fn target_at(&self, column: usize) -> usize {
        self.segment(column).target
    }

    pub fn range(&self, from: usize, to: usize) -> Vec<Vec<f64>> {
        (from..to).map(|k| self.at(k)).collect()
    }

    /// Starts a ramp towards `target` at `start`, beginning from whatever is
    /// requested there. Later segments are discarded.
    pub fn trigger(&mut self, start: usize, target: usize, ramp_len: usize) -> Result<()> {
        if target >= self.classes {
            return Err(Error::param("action", format!("action {target} of {}", self.classes)));
        }
        let from = self.at(start);
        self.segments.retain(|s| s.start < start);
        self.segments.push(RampSegment {
            start,
            from,
            target,
            ramp_len: ramp_len.max(1),
        });
        Ok(())
    }
}
