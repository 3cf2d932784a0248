use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::actions::ActionVectorField;
use crate::metric::{build_jump_graph, DistanceMatrix, JumpGraph};
use crate::{Error, Result};

use super::transition_cost_from_distance;

/// How the transition distance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionMode {
    /// Distance between the natural successor of the previous frame and the
    /// next frame, so continuous playback is free.
    Successor,
    /// Distance between the previous and the next frame.
    Literal,
}

impl TransitionMode {
    pub fn from_flag(literal: bool) -> Self {
        if literal {
            TransitionMode::Literal
        } else {
            TransitionMode::Successor
        }
    }
}

/// Sparse successor lists with transition costs for one scale and mode.
#[derive(Debug)]
pub(crate) struct SparseTransitions {
    pub next: Vec<Vec<(u32, f64)>>,
}

type TransitionKey = (u64, TransitionMode);

/// Everything the solver needs to know about one actor.
#[derive(Debug)]
pub struct ActorModel {
    id: String,
    matrix: Arc<DistanceMatrix>,
    graph: Arc<JumpGraph>,
    field: Arc<ActionVectorField>,
    default_sigma_t: f64,
    transitions: Mutex<HashMap<TransitionKey, Arc<SparseTransitions>>>,
    compressed: Mutex<HashMap<(usize, usize), Arc<ActorModel>>>,
}

impl ActorModel {
    pub fn new(
        id: impl Into<String>,
        matrix: Arc<DistanceMatrix>,
        graph: Arc<JumpGraph>,
        field: Arc<ActionVectorField>,
    ) -> Result<Self> {
        let sigma = graph.median_distance().map(f64::sqrt).unwrap_or(1.0);
        Self::with_sigma(id.into(), matrix, graph, field, sigma)
    }

    fn with_sigma(
        id: String,
        matrix: Arc<DistanceMatrix>,
        graph: Arc<JumpGraph>,
        field: Arc<ActionVectorField>,
        default_sigma_t: f64,
    ) -> Result<Self> {
        let n = matrix.len();
        if graph.len() != n {
            return Err(Error::LengthMismatch(n, graph.len()));
        }
        if field.len() != n {
            return Err(Error::LengthMismatch(n, field.len()));
        }
        if n == 0 {
            return Err(Error::InvalidAsset(format!("actor {id} has no frames")));
        }
        Ok(Self {
            id,
            matrix,
            graph,
            field,
            default_sigma_t,
            transitions: Mutex::new(HashMap::new()),
            compressed: Mutex::new(HashMap::new()),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.field.classes()
    }

    pub fn matrix(&self) -> &Arc<DistanceMatrix> {
        &self.matrix
    }

    pub fn graph(&self) -> &Arc<JumpGraph> {
        &self.graph
    }

    pub fn field(&self) -> &Arc<ActionVectorField> {
        &self.field
    }

    /// `sqrt` of the median nonzero jump distance, so a median jump costs `e`.
    pub fn default_sigma_t(&self) -> f64 {
        self.default_sigma_t
    }

    pub fn sigma_t(&self, requested: Option<f64>) -> f64 {
        requested.unwrap_or(self.default_sigma_t)
    }

    pub fn successor(&self, t: usize) -> usize {
        self.graph.successor(t)
    }

    pub fn transition_distance(&self, prev: usize, next: usize, mode: TransitionMode) -> f64 {
        match mode {
            TransitionMode::Successor => self.matrix.get(self.successor(prev), next),
            TransitionMode::Literal => self.matrix.get(prev, next),
        }
    }

    pub fn transition_cost(&self, prev: usize, next: usize, sigma_t: f64, mode: TransitionMode) -> f64 {
        transition_cost_from_distance(self.transition_distance(prev, next, mode), sigma_t)
    }

    /// Labels reachable from each frame: its successor and the successor's
    /// jump targets.
    pub(crate) fn sparse(&self, sigma_t: f64, mode: TransitionMode) -> Arc<SparseTransitions> {
        let key = (sigma_t.to_bits(), mode);
        let mut cache = self.transitions.lock().expect("transition cache poisoned");
        cache
            .entry(key)
            .or_insert_with(|| {
                let next = (0..self.len())
                    .map(|t| {
                        let s = self.successor(t);
                        let mut v: Vec<(u32, f64)> = std::iter::once(s as u32)
                            .chain(self.graph.candidates(s).iter().map(|c| c.0))
                            .map(|u| (u, self.transition_cost(t, u as usize, sigma_t, mode)))
                            .collect();
                        v.sort_by_key(|e| e.0);
                        v.dedup_by_key(|e| e.0);
                        v
                    })
                    .collect();
                Arc::new(SparseTransitions { next })
            })
            .clone()
    }

    /// The actor seen through every `c`-th frame, with its own jump graph of
    /// `jump_candidates` targets per frame. Label `i` stands for frame `i c`.
    pub fn compressed(&self, c: usize, jump_candidates: usize) -> Result<Arc<ActorModel>> {
        if c == 0 {
            return Err(Error::param("compression", "must be at least 1"));
        }
        let mut cache = self.compressed.lock().expect("compression cache poisoned");
        if let Some(m) = cache.get(&(c, jump_candidates)) {
            return Ok(m.clone());
        }
        let matrix = Arc::new(self.matrix.subsample(c));
        let graph = Arc::new(build_jump_graph(&matrix, jump_candidates));
        let field = Arc::new(self.field.subsample(c));
        let m = Arc::new(ActorModel::with_sigma(
            format!("{}/{c}", self.id),
            matrix,
            graph,
            field,
            self.default_sigma_t,
        )?);
        cache.insert((c, jump_candidates), m.clone());
        Ok(m)
    }
}
