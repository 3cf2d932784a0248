//! Frame selection by per-row dynamic programming.
//!
//! Every output layer is a row of frame indices. A row minimises
//!
//! ```text
//! sum_k  alpha E_A + (1 - alpha) (beta E_C + (1 - beta) E_T)
//! ```
//!
//! where `E_A` compares the chosen frame's action vector with the request,
//! `E_C` prices its compatibility with frames fixed on other rows and `E_T`
//! prices the jump from the previous column. Rows are solved one at a time,
//! earlier rows acting as fixed partners.

mod dp;
mod engine;
mod model;
mod requests;

pub use dp::{synthesize_row, Partner, RowProblem, RowSolution};
pub use engine::{
    evaluate_objective, read_timeline_csv, write_timeline_csv, Engine, LayerSpec, ObjectiveTerms, OutputTimeline,
};
pub use model::{ActorModel, TransitionMode};
pub use requests::{ramp_requests, smooth_step, RampSegment, RequestTimeline};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest exponent used in the transition cost; keeps disjoint jumps
/// finite but prohibitive.
pub const MAX_TRANSITION_EXPONENT: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    /// Responsiveness: weight of the action term.
    pub alpha: f64,
    /// Compatibility against transitions.
    pub beta: f64,
    pub sigma_a: f64,
    /// Transition scale; `sigma_t^2` defaults to the median jump distance.
    pub sigma_t: Option<f64>,
    /// Output-column stride of the compressed solver.
    pub compression: usize,
    pub ramp_len: usize,
    pub jump_candidates: usize,
    /// Price `exp(D(prev, next))` instead of comparing with the successor.
    pub literal_transitions: bool,
    /// Passes over the rows; later passes see every other row as fixed.
    pub iterations: usize,
    /// Use every frame as a label instead of the jump graph.
    pub dense: bool,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            sigma_a: 0.5,
            sigma_t: None,
            compression: 1,
            ramp_len: 8,
            jump_candidates: 64,
            literal_transitions: false,
            iterations: 1,
            dense: false,
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} is outside [0, 1]")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        if !(self.sigma_a > 0.0) {
            return Err(Error::param("sigma_a", "must be positive"));
        }
        if matches!(self.sigma_t, Some(s) if !(s > 0.0)) {
            return Err(Error::param("sigma_t", "must be positive"));
        }
        if self.compression == 0 {
            return Err(Error::param("compression", "must be at least 1"));
        }
        if self.ramp_len == 0 {
            return Err(Error::param("ramp_len", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        Ok(())
    }

    /// Weights of the unary action, unary compatibility and pairwise
    /// transition terms.
    pub fn weights(&self) -> (f64, f64, f64) {
        let a = self.alpha;
        (a, (1.0 - a) * self.beta, (1.0 - a) * (1.0 - self.beta))
    }
}

/// `||a - r||^2 / (2 sigma_a^2)`.
pub fn action_cost(a: &[f64], r: &[f64], sigma_a: f64) -> Result<f64> {
    if a.len() != r.len() {
        return Err(Error::LengthMismatch(a.len(), r.len()));
    }
    Ok(action_cost_unchecked(a, r, sigma_a))
}

#[inline]
pub(crate) fn action_cost_unchecked(a: &[f64], r: &[f64], sigma_a: f64) -> f64 {
    let s: f64 = a.iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum();
    s / (2.0 * sigma_a * sigma_a)
}

/// `exp(d / sigma_t^2)` with the exponent capped.
#[inline]
pub fn transition_cost_from_distance(d: f64, sigma_t: f64) -> f64 {
    (d / (sigma_t * sigma_t)).min(MAX_TRANSITION_EXPONENT).exp()
}

/// Sum of compatibility costs against the partners' frames; partners with no
/// pair model count as fully compatible.
pub fn compatibility_cost(t: usize, partners: &[Partner<'_>], column: usize) -> f64 {
    partners
        .iter()
        .map(|p| match &p.pair {
            Some(pair) => pair.chi(t, p.frames[column]),
            None => crate::compat::COMPATIBLE_COST,
        })
        .sum()
}
