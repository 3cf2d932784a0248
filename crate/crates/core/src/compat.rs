//! Frame compatibility between pairs of actors.
//!
//! Each actor of a pair softly clusters its frames with respect to the
//! partner. Clusters start out as the actor's actions; tagging a pair of
//! frames either creates new clusters around them (specialize) or adds them
//! as examples of their current best cluster (refine). A cluster-pair matrix
//! holds 1 for compatible and 100 for incompatible combinations, and the
//! cost of showing two frames together is its expectation under the two
//! membership vectors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actions::{argmax, propagate_labels, ActionExamples, ActionVectorField, PropagationParams};
use crate::metric::DistanceMatrix;
use crate::{Error, Result};

pub const COMPATIBLE_COST: f64 = 1.0;
pub const INCOMPATIBLE_COST: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compatible,
    Incompatible,
}

impl Verdict {
    pub fn cost(self) -> f64 {
        match self {
            Verdict::Compatible => COMPATIBLE_COST,
            Verdict::Incompatible => INCOMPATIBLE_COST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagMode {
    Specialize,
    Refine,
}

/// Cluster-pair matrix `B` with entries in `{1, 100}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Verdict>,
}

impl CompatibilityMatrix {
    pub fn all_compatible(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![Verdict::Compatible; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn verdict(&self, m: usize, n: usize) -> Verdict {
        self.cells[m * self.cols + n]
    }

    pub fn cost(&self, m: usize, n: usize) -> f64 {
        self.verdict(m, n).cost()
    }

    pub fn set(&mut self, m: usize, n: usize, v: Verdict) {
        self.cells[m * self.cols + n] = v;
    }

    pub fn push_row(&mut self) {
        self.cells.extend(std::iter::repeat_n(Verdict::Compatible, self.cols));
        self.rows += 1;
    }

    pub fn push_col(&mut self) {
        let mut cells = Vec::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            cells.extend_from_slice(&self.cells[r * self.cols..(r + 1) * self.cols]);
            cells.push(Verdict::Compatible);
        }
        self.cells = cells;
        self.cols += 1;
    }

    pub fn incompatible_count(&self) -> usize {
        self.cells.iter().filter(|v| **v == Verdict::Incompatible).count()
    }

    fn costs(&self) -> Vec<f64> {
        self.cells.iter().map(|v| v.cost()).collect()
    }
}

/// Expected cluster-pair cost `sum_m sum_n ci[m] cj[n] B(m, n)`.
pub fn chi(ci: &[f64], cj: &[f64], b: &CompatibilityMatrix) -> f64 {
    let mut s = 0.0;
    for (m, a) in ci.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (n, c) in cj.iter().enumerate() {
            s += a * c * b.cost(m, n);
        }
    }
    s
}

/// One actor's clustering with respect to a partner.
#[derive(Debug, Clone)]
pub struct ClusterSide {
    actor: String,
    matrix: Arc<DistanceMatrix>,
    examples: ActionExamples,
    clusters: usize,
    memberships: Arc<ActionVectorField>,
}

impl ClusterSide {
    /// Starts from the actor's actions as clusters.
    pub fn new(
        actor: impl Into<String>,
        matrix: Arc<DistanceMatrix>,
        action_examples: ActionExamples,
        actions: usize,
        params: &PropagationParams,
    ) -> Result<Self> {
        let (memberships, _) = propagate_labels(&matrix, &action_examples, actions, params)?;
        Ok(Self {
            actor: actor.into(),
            matrix,
            examples: action_examples,
            clusters: actions,
            memberships: Arc::new(memberships),
        })
    }

    pub fn actor(&self) -> &str {
        &self.actor
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn memberships(&self) -> &Arc<ActionVectorField> {
        &self.memberships
    }

    pub fn examples(&self) -> &ActionExamples {
        &self.examples
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        if t >= self.matrix.len() {
            return Err(Error::FrameOutOfRange {
                what: self.actor.clone(),
                frame: t,
                len: self.matrix.len(),
            });
        }
        Ok(())
    }

    fn best_cluster(&self, t: usize) -> usize {
        argmax(self.memberships.row(t))
    }

    fn repropagate(&mut self, params: &PropagationParams) -> Result<()> {
        let (m, _) = propagate_labels(&self.matrix, &self.examples, self.clusters, params)?;
        self.memberships = Arc::new(m);
        Ok(())
    }
}

/// Serializable state of a pair; memberships are recomputed on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub actors: [String; 2],
    pub examples: Vec<ActionExamples>,
    pub clusters: Vec<usize>,
    pub b: CompatibilityMatrix,
}

/// Compatibility model for an unordered actor pair. When both actors are the
/// same sequence a single shared side is kept and `B` stays symmetric.
#[derive(Debug, Clone)]
pub struct PairClusters {
    first: ClusterSide,
    second: Option<ClusterSide>,
    b: CompatibilityMatrix,
    params: PropagationParams,
}

impl PairClusters {
    pub fn new(first: ClusterSide, second: Option<ClusterSide>, params: PropagationParams) -> Self {
        let rows = first.clusters;
        let cols = second.as_ref().map_or(rows, |s| s.clusters);
        Self {
            first,
            second,
            b: CompatibilityMatrix::all_compatible(rows, cols),
            params,
        }
    }

    pub fn is_self_pair(&self) -> bool {
        self.second.is_none()
    }

    pub fn first(&self) -> &ClusterSide {
        &self.first
    }

    pub fn second(&self) -> &ClusterSide {
        self.second.as_ref().unwrap_or(&self.first)
    }

    pub fn matrix(&self) -> &CompatibilityMatrix {
        &self.b
    }

    pub fn actors(&self) -> (&str, &str) {
        (self.first.actor(), self.second().actor())
    }

    /// Cost of showing frame `ti` of the first actor with frame `tj` of the second.
    pub fn chi(&self, ti: usize, tj: usize) -> f64 {
        chi(
            self.first.memberships.row(ti),
            self.second().memberships.row(tj),
            &self.b,
        )
    }

    /// Tags a frame pair. `modes` gives the update for the first and second
    /// frame; when omitted, specialize is used if the tag changes the current
    /// verdict and the call is rejected otherwise.
    pub fn tag(&mut self, ti: usize, tj: usize, verdict: Verdict, modes: Option<[TagMode; 2]>) -> Result<()> {
        self.first.check_frame(ti)?;
        self.second().check_frame(tj)?;
        let mi = self.first.best_cluster(ti);
        let nj = self.second().best_cluster(tj);
        let modes = match modes {
            Some(m) => m,
            None if self.b.verdict(mi, nj) != verdict => [TagMode::Specialize; 2],
            None => {
                return Err(Error::Rejected(format!(
                    "frames ({ti}, {tj}) are already {verdict:?}; choose specialize or refine"
                )))
            }
        };

        let (row, col) = if self.second.is_none() {
            self.tag_self_pair(ti, tj, mi, nj, modes)?
        } else {
            let row = apply_mode(&mut self.first, ti, mi, modes[0], &self.params)?;
            if row.is_some() {
                self.b.push_row();
            }
            let side = self.second.as_mut().expect("two-sided pair");
            let col = apply_mode(side, tj, nj, modes[1], &self.params)?;
            if col.is_some() {
                self.b.push_col();
            }
            (row, col)
        };

        if row.is_some() || col.is_some() {
            let m = row.unwrap_or(mi);
            let n = col.unwrap_or(nj);
            self.b.set(m, n, verdict);
            if self.second.is_none() {
                self.b.set(n, m, verdict);
            }
        }
        Ok(())
    }

    fn tag_self_pair(
        &mut self,
        ti: usize,
        tj: usize,
        mi: usize,
        nj: usize,
        modes: [TagMode; 2],
    ) -> Result<(Option<usize>, Option<usize>)> {
        let side = &mut self.first;
        let new_for = |t: usize, side: &mut ClusterSide, b: &mut CompatibilityMatrix| {
            let c = side.clusters;
            side.clusters += 1;
            side.examples.insert(t, c);
            b.push_row();
            b.push_col();
            c
        };
        let row = match modes[0] {
            TagMode::Specialize => Some(new_for(ti, side, &mut self.b)),
            TagMode::Refine => {
                side.examples.insert(ti, mi);
                None
            }
        };
        let col = match modes[1] {
            TagMode::Specialize if ti == tj && row.is_some() => row,
            TagMode::Specialize => Some(new_for(tj, side, &mut self.b)),
            TagMode::Refine => {
                side.examples.insert(tj, nj);
                None
            }
        };
        side.repropagate(&self.params)?;
        Ok((row, col))
    }

    pub fn state(&self) -> PairState {
        let sides: Vec<&ClusterSide> = std::iter::once(&self.first).chain(self.second.as_ref()).collect();
        PairState {
            actors: [self.first.actor.clone(), self.second().actor.clone()],
            examples: sides.iter().map(|s| s.examples.clone()).collect(),
            clusters: sides.iter().map(|s| s.clusters).collect(),
            b: self.b.clone(),
        }
    }

    /// Rebuilds a pair from saved state. `matrices` holds one matrix per side
    /// (one for self-pairs).
    pub fn from_state(state: &PairState, matrices: &[Arc<DistanceMatrix>], params: PropagationParams) -> Result<Self> {
        if state.examples.len() != matrices.len() || state.clusters.len() != matrices.len() {
            return Err(Error::InvalidAsset("pair state does not match its sides".into()));
        }
        let mut sides = state
            .examples
            .iter()
            .zip(&state.clusters)
            .zip(matrices)
            .zip(&state.actors)
            .map(|(((ex, &k), m), actor)| ClusterSide::new(actor.clone(), m.clone(), ex.clone(), k, &params))
            .collect::<Result<Vec<_>>>()?;
        let second = if sides.len() == 2 { sides.pop() } else { None };
        let first = sides.pop().expect("one side");
        let expected = (first.clusters, second.as_ref().map_or(first.clusters, |s| s.clusters));
        if state.b.shape() != expected {
            return Err(Error::InvalidAsset(format!(
                "pair state matrix is {:?}, clusters say {expected:?}",
                state.b.shape()
            )));
        }
        Ok(Self {
            first,
            second,
            b: state.b.clone(),
            params,
        })
    }

    /// Human-readable listing of cluster examples and the `B` matrix.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        let (a, b) = self.actors();
        let _ = writeln!(out, "pair {a} {b}");
        let sides: Vec<&ClusterSide> = std::iter::once(&self.first).chain(self.second.as_ref()).collect();
        for s in sides {
            let _ = writeln!(out, "side {} clusters {}", s.actor, s.clusters);
            for c in 0..s.clusters {
                let frames: Vec<String> = s.examples.frames_of(c).iter().map(|f| f.to_string()).collect();
                let _ = writeln!(out, "  cluster {c} examples {}", frames.join(","));
            }
        }
        let (r, c) = self.b.shape();
        let _ = writeln!(out, "B {r}x{c}");
        for m in 0..r {
            let cells: Vec<String> = (0..c).map(|n| format!("{}", self.b.cost(m, n))).collect();
            let _ = writeln!(out, "  {}", cells.join(" "));
        }
        out
    }

    pub fn snapshot(&self) -> PairSnapshot {
        PairSnapshot {
            first: self.first.memberships.clone(),
            second: self.second().memberships.clone(),
            rows: self.b.rows,
            cols: self.b.cols,
            costs: self.b.costs(),
        }
    }
}

/// Adds `t` to a new cluster (returning its index) or to `best`.
fn apply_mode(
    side: &mut ClusterSide,
    t: usize,
    best: usize,
    mode: TagMode,
    params: &PropagationParams,
) -> Result<Option<usize>> {
    let created = match mode {
        TagMode::Specialize => {
            let c = side.clusters;
            side.clusters += 1;
            side.examples.insert(t, c);
            Some(c)
        }
        TagMode::Refine => {
            side.examples.insert(t, best);
            None
        }
    };
    side.repropagate(params)?;
    Ok(created)
}

/// Immutable view of a pair used during synthesis.
#[derive(Debug, Clone)]
pub struct PairSnapshot {
    first: Arc<ActionVectorField>,
    second: Arc<ActionVectorField>,
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl PairSnapshot {
    /// Builds a snapshot directly from memberships and a verdict matrix.
    pub fn from_parts(
        first: Arc<ActionVectorField>,
        second: Arc<ActionVectorField>,
        b: &CompatibilityMatrix,
    ) -> Result<Self> {
        if first.classes() != b.rows || second.classes() != b.cols {
            return Err(Error::LengthMismatch(
                first.classes() * second.classes(),
                b.rows * b.cols,
            ));
        }
        Ok(Self {
            first,
            second,
            rows: b.rows,
            cols: b.cols,
            costs: b.costs(),
        })
    }

    pub fn chi(&self, ti: usize, tj: usize) -> f64 {
        let (ci, cj) = (self.first.row(ti), self.second.row(tj));
        let mut s = 0.0;
        for (m, a) in ci.iter().enumerate() {
            for (n, c) in cj.iter().enumerate() {
                s += a * c * self.costs[m * self.cols + n];
            }
        }
        s
    }

    pub fn first(&self) -> &ActionVectorField {
        &self.first
    }

    pub fn second(&self) -> &ActionVectorField {
        &self.second
    }

    /// `v[m] = sum_n c[n] B(m, n)` for a fixed partner frame on the second
    /// side, or the transposed product when `partner_is_first`.
    pub fn partner_vector(&self, partner_frame: usize, partner_is_first: bool) -> Vec<f64> {
        if partner_is_first {
            let c = self.first.row(partner_frame);
            (0..self.cols)
                .map(|n| (0..self.rows).map(|m| c[m] * self.costs[m * self.cols + n]).sum())
                .collect()
        } else {
            let c = self.second.row(partner_frame);
            (0..self.rows)
                .map(|m| (0..self.cols).map(|n| c[n] * self.costs[m * self.cols + n]).sum())
                .collect()
        }
    }
}

/// Pair snapshots keyed by unordered actor indices.
#[derive(Debug, Clone, Default)]
pub struct CompatibilityIndex {
    pairs: HashMap<(usize, usize), Arc<PairSnapshot>>,
}

/// A pair snapshot seen from one actor of the pair.
#[derive(Debug, Clone, Copy)]
pub struct OrientedPair<'a> {
    snap: &'a PairSnapshot,
    self_is_first: bool,
}

impl<'a> OrientedPair<'a> {
    pub fn chi(&self, t_self: usize, t_other: usize) -> f64 {
        if self.self_is_first {
            self.snap.chi(t_self, t_other)
        } else {
            self.snap.chi(t_other, t_self)
        }
    }

    /// Memberships of the viewing actor.
    pub fn own(&self) -> &'a ActionVectorField {
        if self.self_is_first {
            &self.snap.first
        } else {
            &self.snap.second
        }
    }

    /// Expected-cost vector over the viewing actor's clusters for a fixed
    /// partner frame: `chi(t, other) = own(t) . v`.
    pub fn partner_vector(&self, t_other: usize) -> Vec<f64> {
        self.snap.partner_vector(t_other, !self.self_is_first)
    }
}

impl CompatibilityIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// `first` is the actor whose memberships are the snapshot's first side.
    pub fn insert(&mut self, first: usize, second: usize, snap: Arc<PairSnapshot>) {
        if first <= second {
            self.pairs.insert((first, second), snap);
        } else {
            // store with the lower index first by swapping sides
            let swapped = PairSnapshot {
                first: snap.second.clone(),
                second: snap.first.clone(),
                rows: snap.cols,
                cols: snap.rows,
                costs: (0..snap.cols)
                    .flat_map(|n| (0..snap.rows).map(move |m| (m, n)))
                    .map(|(m, n)| snap.costs[m * snap.cols + n])
                    .collect(),
            };
            self.pairs.insert((second, first), Arc::new(swapped));
        }
    }

    pub fn lookup(&self, own: usize, other: usize) -> Option<OrientedPair<'_>> {
        let key = (own.min(other), own.max(other));
        self.pairs.get(&key).map(|snap| OrientedPair {
            snap,
            self_is_first: own <= other,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
