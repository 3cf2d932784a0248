//! Soft action assignment by semi-supervised label propagation.
//!
//! A handful of example frames per action are clamped to one-hot vectors and
//! every other frame receives the harmonic solution on a k-nearest-neighbour
//! affinity graph built from the frame distance matrix.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::assets::manifest::ActorDesc;
use crate::linalg::{conjugate_gradient, CsrMatrix};
use crate::metric::DistanceMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    /// Neighbours per frame before symmetrization.
    pub knn: usize,
    /// Affinity scale; `None` picks the square root of the median non-zero
    /// neighbour distance.
    pub sigma: Option<f64>,
    /// Relative residual tolerance of the linear solves.
    pub tolerance: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            knn: 30,
            sigma: None,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    pub name: String,
    pub key: Option<String>,
}

/// The actions defined on one actor, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    pub actor: String,
    pub actions: Vec<Action>,
}

impl ActionSet {
    pub fn new(actor: impl Into<String>, actions: Vec<Action>) -> Result<Self> {
        let actor = actor.into();
        if actions.is_empty() {
            return Err(Error::InvalidAsset(format!("actor {actor:?} defines no actions")));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::InvalidAsset(format!(
                    "actor {actor:?}: duplicate action {:?}",
                    a.id
                )));
            }
        }
        Ok(Self { actor, actions })
    }

    pub fn from_desc(desc: &ActorDesc) -> Result<Self> {
        Self::new(
            desc.id.clone(),
            desc.actions
                .iter()
                .map(|a| Action {
                    id: a.id.clone(),
                    name: a.name.clone().unwrap_or_else(|| a.id.clone()),
                    key: a.key.clone(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.actions
            .iter()
            .position(|a| a.id == id)
            .ok_or_else(|| Error::DanglingAction {
                actor: self.actor.clone(),
                action: id.to_string(),
            })
    }
}

/// Labelled frames: frame index to class index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionExamples(BTreeMap<usize, usize>);

impl ActionExamples {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: usize, class: usize) -> Option<usize> {
        self.0.insert(frame, class)
    }

    pub fn remove(&mut self, frame: usize) -> Option<usize> {
        self.0.remove(&frame)
    }

    pub fn get(&self, frame: usize) -> Option<usize> {
        self.0.get(&frame).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(f, c)| (*f, *c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_of(&self, class: usize) -> usize {
        self.0.values().filter(|c| **c == class).count()
    }

    pub fn frames_of(&self, class: usize) -> Vec<usize> {
        self.0.iter().filter(|(_, c)| **c == class).map(|(f, _)| *f).collect()
    }
}

impl FromIterator<(usize, usize)> for ActionExamples {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Per-frame probability vectors over `classes` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVectorField {
    classes: usize,
    values: Vec<f64>,
}

impl ActionVectorField {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.len() != classes {
                return Err(Error::LengthMismatch(r.len(), classes));
            }
            values.extend_from_slice(r);
        }
        Ok(Self { classes, values })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        if self.classes == 0 {
            0
        } else {
            self.values.len() / self.classes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn argmax(&self, t: usize) -> usize {
        argmax(self.row(t))
    }

    /// Field restricted to frames `0, stride, 2*stride, ...`.
    pub fn subsample(&self, stride: usize) -> Self {
        let mut values = Vec::new();
        for t in (0..self.len()).step_by(stride.max(1)) {
            values.extend_from_slice(self.row(t));
        }
        Self {
            classes: self.classes,
            values,
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationReport {
    pub sigma: f64,
    /// Unlabelled frames with no affinity path to any example; they receive
    /// the uniform vector.
    pub isolated: Vec<usize>,
    pub max_relative_residual: f64,
}

/// Symmetrized kNN neighbour lists, each sorted by frame index.
pub fn knn_graph(matrix: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = matrix.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in 0..n {
        let mut others: Vec<(f32, usize)> = matrix
            .row(t)
            .iter()
            .enumerate()
            .filter(|(u, _)| *u != t)
            .map(|(u, d)| (*d, u))
            .collect();
        let keep = k.min(others.len());
        if keep < others.len() {
            others.select_nth_unstable_by(keep, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(keep);
        }
        for (_, u) in others {
            adj[t].push(u);
            adj[u].push(t);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    })
}

/// Harmonic label propagation.
///
/// Affinities are `exp(-D / sigma^2)` on the symmetrized kNN graph. Classes
/// without examples simply receive zero mass; callers that need at least one
/// example per class check that themselves.
pub fn propagate_labels(
    matrix: &DistanceMatrix,
    examples: &ActionExamples,
    classes: usize,
    params: &PropagationParams,
) -> Result<(ActionVectorField, PropagationReport)> {
    propagate_labels_cancellable(matrix, examples, classes, params, None)
}

pub fn propagate_labels_cancellable(
    matrix: &DistanceMatrix,
    examples: &ActionExamples,
    classes: usize,
    params: &PropagationParams,
    cancel: Option<&AtomicBool>,
) -> Result<(ActionVectorField, PropagationReport)> {
    let n = matrix.len();
    if classes == 0 {
        return Err(Error::param("classes", "at least one class is required"));
    }
    for (f, c) in examples.iter() {
        if f >= n {
            return Err(Error::FrameOutOfRange {
                what: "examples".into(),
                frame: f,
                len: n,
            });
        }
        if c >= classes {
            return Err(Error::param("examples", format!("class {c} >= {classes}")));
        }
    }

    let adj = knn_graph(matrix, params.knn.max(1));
    let edge_d: Vec<f64> = adj
        .iter()
        .enumerate()
        .flat_map(|(t, nb)| nb.iter().filter(move |&&u| u > t).map(move |&u| matrix.get(t, u)))
        .collect();
    let sigma = match params.sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::param("sigma", format!("{s} is not positive"))),
        None => median(edge_d.iter().copied().filter(|d| *d > 0.0).collect()).map_or(1.0, f64::sqrt),
    };
    // A global shift only rescales every weight by the same factor, which
    // leaves the harmonic solution unchanged but avoids underflow.
    let shift = edge_d.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let s2 = sigma * sigma;
    let weights: Vec<Vec<f64>> = adj
        .iter()
        .enumerate()
        .map(|(t, nb)| nb.iter().map(|&u| (-(matrix.get(t, u) - shift) / s2).exp()).collect())
        .collect();

    // Unlabelled frames reachable from an example through unlabelled frames.
    let mut reachable = vec![false; n];
    let mut queue: VecDeque<usize> = examples.iter().map(|(f, _)| f).collect();
    for f in queue.iter() {
        reachable[*f] = true;
    }
    while let Some(t) = queue.pop_front() {
        for (k, &u) in adj[t].iter().enumerate() {
            if !reachable[u] && weights[t][k] > 0.0 && examples.get(u).is_none() {
                reachable[u] = true;
                queue.push_back(u);
            }
        }
    }

    let free: Vec<usize> = (0..n).filter(|&t| reachable[t] && examples.get(t).is_none()).collect();
    let isolated: Vec<usize> = (0..n).filter(|&t| !reachable[t]).collect();
    if !isolated.is_empty() {
        log::warn!(
            "{} frame(s) have no affinity path to any example; assigning uniform vectors",
            isolated.len()
        );
    }
    let mut index = vec![usize::MAX; n];
    for (i, &t) in free.iter().enumerate() {
        index[t] = i;
    }

    let m = free.len();
    let mut triplets = Vec::new();
    let mut rhs = vec![vec![0.0; m]; classes];
    for (i, &t) in free.iter().enumerate() {
        let mut degree = 0.0;
        for (k, &u) in adj[t].iter().enumerate() {
            let w = weights[t][k];
            if w == 0.0 {
                continue;
            }
            degree += w;
            if let Some(c) = examples.get(u) {
                rhs[c][i] += w;
            } else if index[u] != usize::MAX {
                triplets.push((i, index[u], -w));
            }
        }
        triplets.push((i, i, degree));
    }
    let laplacian = CsrMatrix::from_triplets(m, triplets);

    let mut solutions = Vec::with_capacity(classes);
    let mut max_res = 0.0f64;
    for b in &rhs {
        let mut x = vec![0.0; m];
        let out = conjugate_gradient(&laplacian, b, &mut x, params.tolerance, 20 * m + 100, cancel)?;
        if !out.converged {
            log::warn!(
                "label propagation stopped at relative residual {:.3e}",
                out.relative_residual
            );
        }
        max_res = max_res.max(out.relative_residual);
        solutions.push(x);
    }

    let uniform = 1.0 / classes as f64;
    let mut values = vec![0.0; n * classes];
    for t in 0..n {
        let row = &mut values[t * classes..(t + 1) * classes];
        if let Some(c) = examples.get(t) {
            row[c] = 1.0;
        } else if index[t] != usize::MAX {
            for (c, sol) in solutions.iter().enumerate() {
                row[c] = sol[index[t]].max(0.0);
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row.fill(uniform);
            }
        } else {
            row.fill(uniform);
        }
    }
    Ok((
        ActionVectorField { classes, values },
        PropagationReport {
            sigma,
            isolated,
            max_relative_residual: max_res,
        },
    ))
}

/// Editable action assignment for one actor. Every edit re-runs propagation
/// and swaps in a new immutable field.
#[derive(Debug, Clone)]
pub struct ActionModel {
    set: ActionSet,
    examples: ActionExamples,
    params: PropagationParams,
    matrix: Arc<DistanceMatrix>,
    field: Arc<ActionVectorField>,
}

impl ActionModel {
    pub fn new(
        set: ActionSet,
        matrix: Arc<DistanceMatrix>,
        examples: ActionExamples,
        params: PropagationParams,
    ) -> Result<Self> {
        for (i, a) in set.actions.iter().enumerate() {
            if examples.count_of(i) == 0 {
                return Err(Error::Rejected(format!(
                    "action {:?} of actor {:?} has no example frame",
                    a.id, set.actor
                )));
            }
        }
        let (field, _) = propagate_labels(&matrix, &examples, set.len(), &params)?;
        Ok(Self {
            set,
            examples,
            params,
            matrix,
            field: Arc::new(field),
        })
    }

    pub fn set(&self) -> &ActionSet {
        &self.set
    }

    pub fn examples(&self) -> &ActionExamples {
        &self.examples
    }

    pub fn field(&self) -> Arc<ActionVectorField> {
        self.field.clone()
    }

    pub fn matrix(&self) -> &Arc<DistanceMatrix> {
        &self.matrix
    }

    pub fn add_example(&mut self, frame: usize, action: &str) -> Result<Arc<ActionVectorField>> {
        let class = self.set.index_of(action)?;
        let mut next = self.examples.clone();
        if let Some(old) = next.insert(frame, class) {
            if old != class && next.count_of(old) == 0 {
                return Err(self.sole_example_error(frame, old));
            }
        }
        self.rerun(next)
    }

    pub fn remove_example(&mut self, frame: usize) -> Result<Arc<ActionVectorField>> {
        let mut next = self.examples.clone();
        let class = next
            .remove(frame)
            .ok_or_else(|| Error::Rejected(format!("frame {frame} is not an example")))?;
        if next.count_of(class) == 0 {
            return Err(self.sole_example_error(frame, class));
        }
        self.rerun(next)
    }

    fn sole_example_error(&self, frame: usize, class: usize) -> Error {
        Error::Rejected(format!(
            "frame {frame} is the only example of action {:?}; add another example first",
            self.set.actions[class].id
        ))
    }

    fn rerun(&mut self, examples: ActionExamples) -> Result<Arc<ActionVectorField>> {
        let (field, _) = propagate_labels(&self.matrix, &examples, self.set.len(), &self.params)?;
        self.examples = examples;
        self.field = Arc::new(field);
        Ok(self.field.clone())
    }
}

/// Last completed field, readable while a new propagation runs.
#[derive(Debug, Clone)]
pub struct SharedField(Arc<RwLock<Arc<ActionVectorField>>>);

impl SharedField {
    pub fn new(field: Arc<ActionVectorField>) -> Self {
        Self(Arc::new(RwLock::new(field)))
    }

    pub fn snapshot(&self) -> Arc<ActionVectorField> {
        self.0.read().expect("field lock").clone()
    }

    fn publish(&self, field: ActionVectorField) {
        *self.0.write().expect("field lock") = Arc::new(field);
    }
}

/// A propagation running on a worker thread.
pub struct PropagationJob {
    cancel: Arc<AtomicBool>,
    handle: std::thread::JoinHandle<Result<()>>,
}

impl PropagationJob {
    pub fn spawn(
        matrix: Arc<DistanceMatrix>,
        examples: ActionExamples,
        classes: usize,
        params: PropagationParams,
        target: SharedField,
    ) -> Self {
        let cancel = Arc::new(AtomicBool::new(false));
        let flag = cancel.clone();
        let handle = std::thread::spawn(move || {
            let (field, _) = propagate_labels_cancellable(&matrix, &examples, classes, &params, Some(&flag))?;
            target.publish(field);
            Ok(())
        });
        Self { cancel, handle }
    }

    pub fn cancel(&self) {
        self.cancel.store(true, std::sync::atomic::Ordering::Relaxed);
    }

    pub fn join(self) -> Result<()> {
        self.handle.join().expect("propagation thread panicked")
    }
}
