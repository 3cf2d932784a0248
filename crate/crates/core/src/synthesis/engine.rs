use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::compat::{CompatibilityIndex, COMPATIBLE_COST};
use crate::{Error, Result};

use super::dp::{
    check_problem, solve, synthesize_row, unary_costs, Lattice, Partner, RowProblem, RowSolution, Transitions,
};
use super::model::{ActorModel, TransitionMode};
use super::requests::RequestTimeline;
use super::{action_cost_unchecked, SynthesisParams};

/// An output layer: which actor it shows and what it starts doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub actor: usize,
    pub default_action: usize,
    /// Frame shown before column 0, if any.
    pub initial_frame: Option<usize>,
}

/// Chosen frame per layer and output column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputTimeline {
    /// Actor id of each layer.
    pub actors: Vec<String>,
    pub rows: Vec<Vec<usize>>,
}

impl OutputTimeline {
    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column(&self, k: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

/// Writes `column,layer,frame_index` rows preceded by comment lines carrying
/// the manifest hash and the layer actors.
pub fn write_timeline_csv(path: &Path, timeline: &OutputTimeline, manifest_hash: &str) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(file, "# manifest {manifest_hash}").map_err(io)?;
    writeln!(file, "# layers {}", timeline.actors.join(",")).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["column", "layer", "frame_index"]).map_err(csv_err)?;
    for k in 0..timeline.columns() {
        for (d, row) in timeline.rows.iter().enumerate() {
            w.serialize((k, d, row[k])).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a timeline written by [`write_timeline_csv`]; returns it with the
/// recorded manifest hash.
pub fn read_timeline_csv(path: &Path) -> Result<(OutputTimeline, String)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hash = String::new();
    let mut actors = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(h) = line.strip_prefix("# manifest ") {
            hash = h.trim().to_string();
        } else if let Some(l) = line.strip_prefix("# layers ") {
            actors = l.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        } else if !line.starts_with('#') {
            break;
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); actors.len()];
    for rec in r.deserialize::<(usize, usize, usize)>() {
        let (k, d, f) = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if d >= rows.len() {
            rows.resize(d + 1, Vec::new());
        }
        if rows[d].len() != k {
            return Err(Error::InvalidAsset(format!(
                "{}: column {k} of layer {d} is out of order",
                path.display()
            )));
        }
        rows[d].push(f);
    }
    if actors.len() < rows.len() {
        actors.resize(rows.len(), String::new());
    }
    Ok((OutputTimeline { actors, rows }, hash))
}

/// Per-term sums of the full objective of a timeline.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub action: f64,
    pub compatibility: f64,
    pub transition: f64,
    pub total: f64,
}

/// Sums the weighted energy over every layer and column. Compatibility runs
/// over all other layers; the first transition of a layer is charged from
/// its initial frame when it has one.
pub fn evaluate_objective(
    actors: &[Arc<ActorModel>],
    layers: &[LayerSpec],
    rows: &[Vec<usize>],
    requests: &[RequestTimeline],
    compat: &CompatibilityIndex,
    params: &SynthesisParams,
) -> ObjectiveTerms {
    let (wa, wc, wt) = params.weights();
    let mode = TransitionMode::from_flag(params.literal_transitions);
    let mut terms = ObjectiveTerms::default();
    for (d, layer) in layers.iter().enumerate() {
        let actor = &actors[layer.actor];
        let sigma_t = actor.sigma_t(params.sigma_t);
        let row = &rows[d];
        let mut prev = layer.initial_frame;
        for (k, &t) in row.iter().enumerate() {
            let ea = action_cost_unchecked(actor.field().row(t), &requests[d].at(k), params.sigma_a);
            let mut ec = 0.0;
            for (j, other) in layers.iter().enumerate() {
                if j == d {
                    continue;
                }
                ec += match compat.lookup(layer.actor, other.actor) {
                    Some(pair) => pair.chi(t, rows[j][k]),
                    None => COMPATIBLE_COST,
                };
            }
            let et = prev.map_or(0.0, |p| actor.transition_cost(p, t, sigma_t, mode));
            terms.action += ea;
            terms.compatibility += ec;
            terms.transition += et;
            terms.total += wa * ea + wc * ec + wt * et;
            prev = Some(t);
        }
    }
    terms
}

/// Compressed solve: anchors every `c` columns over every `c`-th frame,
/// the columns in between filled by consecutive successors.
pub(crate) fn compressed_row(p: &RowProblem<'_>, c: usize) -> Result<RowSolution> {
    check_problem(p)?;
    let actor = p.actor;
    let params = p.params;
    let cm = actor.compressed(c, params.jump_candidates)?;
    let k = p.requests.len();
    let sigma_t = actor.sigma_t(params.sigma_t);
    let mode = TransitionMode::from_flag(params.literal_transitions);
    let anchor_cols: Vec<usize> = (0..k).step_by(c).collect();
    let frames: Vec<usize> = (0..cm.len()).map(|i| i * c).collect();
    // Each label is charged for its whole fill run, so the lattice objective
    // is the objective of the expanded row.
    let mut unary = vec![0.0; anchor_cols.len() * frames.len()];
    let (_, _, wt) = params.weights();
    let m = frames.len();
    let mut run = frames.clone();
    for j in 0..c {
        let cols: Vec<usize> = anchor_cols.iter().map(|&a| a + j).take_while(|&col| col < k).collect();
        if j > 0 {
            for (i, f) in run.iter_mut().enumerate() {
                let next = actor.successor(*f);
                let step = wt * actor.transition_cost(*f, next, sigma_t, mode);
                for a in 0..cols.len() {
                    unary[a * m + i] += step;
                }
                *f = next;
            }
        }
        let requests: Vec<&[f64]> = cols.iter().map(|&col| p.requests[col].as_slice()).collect();
        for (u, v) in unary
            .iter_mut()
            .zip(unary_costs(actor, &requests, p.partners, params, &run, &cols))
        {
            *u += v;
        }
    }
    let trans = Transitions::build(&cm, sigma_t, mode, params.dense);
    // Edges are priced from the last fill frame with the full model, which
    // is the transition the expanded row actually plays. The last label's
    // fill run reaches the clip end, so it may jump to any label.
    let last_fill = |i: usize| (1..c).fold(frames[i], |f, _| actor.successor(f));
    let repriced = |i: usize, targets: &mut dyn Iterator<Item = u32>| -> Vec<(u32, f64)> {
        let from = last_fill(i);
        targets
            .map(|j| (j, actor.transition_cost(from, frames[j as usize], sigma_t, mode)))
            .collect()
    };
    let next: Vec<Vec<(u32, f64)>> = trans
        .lists()
        .iter()
        .enumerate()
        .map(|(i, list)| {
            if i + 1 == m {
                repriced(i, &mut (0..m as u32))
            } else if mode == TransitionMode::Literal {
                repriced(i, &mut list.iter().map(|e| e.0))
            } else {
                list.clone()
            }
        })
        .collect();
    let first = p.anchor.map(|a| {
        frames
            .iter()
            .enumerate()
            .map(|(i, &f)| (i as u32, actor.transition_cost(a, f, sigma_t, mode)))
            .collect()
    });
    let (labels, objective) = solve(&Lattice {
        unary,
        labels: m,
        next: &next,
        first,
        pair_weight: wt,
    });
    let mut out = Vec::with_capacity(k);
    for &label in &labels {
        let mut f = frames[label];
        for j in 0..c {
            if out.len() == k {
                break;
            }
            if j > 0 {
                f = actor.successor(f);
            }
            out.push(f);
        }
    }
    Ok(RowSolution { frames: out, objective })
}

/// Owns the synthesized rows and request timelines of every layer.
#[derive(Debug, Clone)]
pub struct Engine {
    actors: Vec<Arc<ActorModel>>,
    layers: Vec<LayerSpec>,
    requests: Vec<RequestTimeline>,
    rows: Vec<Vec<usize>>,
    compat: Arc<CompatibilityIndex>,
    params: SynthesisParams,
}

impl Engine {
    pub fn new(
        actors: Vec<Arc<ActorModel>>,
        layers: Vec<LayerSpec>,
        compat: Arc<CompatibilityIndex>,
        params: SynthesisParams,
    ) -> Result<Self> {
        params.validate()?;
        let mut requests = Vec::with_capacity(layers.len());
        for l in &layers {
            let actor = actors.get(l.actor).ok_or(Error::UnknownLayer(l.actor))?;
            if let Some(f) = l.initial_frame {
                if f >= actor.len() {
                    return Err(Error::FrameOutOfRange {
                        what: actor.id().to_string(),
                        frame: f,
                        len: actor.len(),
                    });
                }
            }
            requests.push(RequestTimeline::new(actor.classes(), l.default_action)?);
        }
        Ok(Self {
            rows: vec![Vec::new(); layers.len()],
            actors,
            layers,
            requests,
            compat,
            params,
        })
    }

    pub fn params(&self) -> &SynthesisParams {
        &self.params
    }

    pub fn set_params(&mut self, params: SynthesisParams) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn set_compatibility(&mut self, compat: Arc<CompatibilityIndex>) {
        self.compat = compat;
    }

    pub fn compatibility(&self) -> &Arc<CompatibilityIndex> {
        &self.compat
    }

    pub fn actors(&self) -> &[Arc<ActorModel>] {
        &self.actors
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn requests(&self, layer: usize) -> &RequestTimeline {
        &self.requests[layer]
    }

    pub fn all_requests(&self) -> &[RequestTimeline] {
        &self.requests
    }

    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn frame(&self, layer: usize, column: usize) -> Option<usize> {
        self.rows.get(layer).and_then(|r| r.get(column)).copied()
    }

    pub fn timeline(&self) -> OutputTimeline {
        OutputTimeline {
            actors: self
                .layers
                .iter()
                .map(|l| self.actors[l.actor].id().to_string())
                .collect(),
            rows: self.rows.clone(),
        }
    }

    /// Ramps `layer` towards `action` from `column` on.
    pub fn trigger(&mut self, layer: usize, column: usize, action: usize) -> Result<()> {
        let ramp = self.params.ramp_len;
        self.requests
            .get_mut(layer)
            .ok_or(Error::UnknownLayer(layer))?
            .trigger(column, action, ramp)
    }

    /// Appends `count` columns to every layer.
    pub fn synthesize_block(&mut self, count: usize) -> Result<f64> {
        let from = self.columns();
        self.resynthesize(from, from + count)
    }

    /// Discards columns from `from` on and synthesizes `from..to` again.
    /// Returns the summed row objectives.
    pub fn resynthesize(&mut self, from: usize, to: usize) -> Result<f64> {
        let from = from.min(self.columns());
        let k = to.saturating_sub(from);
        let d_count = self.layers.len();
        let requests: Vec<Vec<Vec<f64>>> = self.requests.iter().map(|r| r.range(from, to)).collect();
        let anchors: Vec<Option<usize>> = (0..d_count)
            .map(|d| {
                if from == 0 {
                    self.layers[d].initial_frame
                } else {
                    Some(self.rows[d][from - 1])
                }
            })
            .collect();
        let mut fresh: Vec<Vec<usize>> = vec![Vec::new(); d_count];
        let mut total = 0.0;
        for pass in 0..self.params.iterations {
            total = 0.0;
            for d in 0..d_count {
                let own = self.layers[d].actor;
                let partners: Vec<Partner<'_>> = (0..d_count)
                    .filter(|&j| j != d && (pass > 0 || j < d))
                    .map(|j| Partner {
                        pair: self.compat.lookup(own, self.layers[j].actor),
                        frames: &fresh[j],
                    })
                    .collect();
                let problem = RowProblem {
                    actor: &self.actors[own],
                    requests: &requests[d],
                    partners: &partners,
                    anchor: anchors[d],
                    params: &self.params,
                };
                let sol = if self.params.compression > 1 {
                    compressed_row(&problem, self.params.compression)?
                } else {
                    synthesize_row(&problem)?
                };
                total += sol.objective;
                fresh[d] = sol.frames;
            }
        }
        for (row, new) in self.rows.iter_mut().zip(fresh) {
            row.truncate(from);
            row.extend(new);
        }
        debug!("synthesized columns {from}..{to} ({k} columns), objective {total}");
        Ok(total)
    }

    /// Full objective of everything synthesized so far.
    pub fn objective(&self) -> ObjectiveTerms {
        evaluate_objective(
            &self.actors,
            &self.layers,
            &self.rows,
            &self.requests,
            &self.compat,
            &self.params,
        )
    }
}
