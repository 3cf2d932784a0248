use std::sync::Arc;

use log::warn;

use crate::compat::OrientedPair;
use crate::{Error, Result};

use super::model::{ActorModel, SparseTransitions, TransitionMode};
use super::{action_cost_unchecked, SynthesisParams};

/// Another row whose frames are fixed while this row is solved.
#[derive(Debug, Clone, Copy)]
pub struct Partner<'a> {
    /// Compatibility model for the pair, seen from the row being solved.
    pub pair: Option<OrientedPair<'a>>,
    /// The partner's frame per column of the problem.
    pub frames: &'a [usize],
}

/// One row of the output lattice.
#[derive(Debug, Clone, Copy)]
pub struct RowProblem<'a> {
    pub actor: &'a ActorModel,
    /// Requested action vector per column.
    pub requests: &'a [Vec<f64>],
    pub partners: &'a [Partner<'a>],
    /// Frame shown just before the first column; its transition is charged.
    pub anchor: Option<usize>,
    pub params: &'a SynthesisParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub frames: Vec<usize>,
    pub objective: f64,
}

/// Unary costs plus successor lists; the generic part of every row solve.
pub(crate) struct Lattice<'a> {
    /// `columns x labels`, row-major.
    pub unary: Vec<f64>,
    pub labels: usize,
    pub next: &'a [Vec<(u32, f64)>],
    /// Labels allowed in the first column with their transition cost;
    /// `None` leaves the first column free.
    pub first: Option<Vec<(u32, f64)>>,
    pub pair_weight: f64,
}

fn tie_tolerance(best: f64) -> f64 {
    1e-12 * best.abs().max(1.0)
}

/// Lowest label whose value is within rounding of the best.
fn pick(values: impl Iterator<Item = (u32, f64)> + Clone) -> Option<(usize, f64)> {
    let best = values.clone().map(|v| v.1).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = tie_tolerance(best);
    values
        .filter(|v| v.1 <= best + tol)
        .min_by_key(|v| v.0)
        .map(|v| (v.0 as usize, v.1))
}

/// Cost-to-go backwards, then a forward pass choosing the lowest optimal
/// label per column. Returns the labels and the optimal objective.
pub(crate) fn solve(l: &Lattice<'_>) -> (Vec<usize>, f64) {
    let n = l.labels;
    let k = l.unary.len() / n.max(1);
    if k == 0 || n == 0 {
        return (Vec::new(), 0.0);
    }
    let w = l.pair_weight;
    let mut value = l.unary.clone();
    for col in (0..k - 1).rev() {
        let (head, tail) = value.split_at_mut((col + 1) * n);
        let cur = &mut head[col * n..];
        let nxt = &tail[..n];
        for (t, v) in cur.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for &(u, c) in &l.next[t] {
                let x = w * c + nxt[u as usize];
                if x < best {
                    best = x;
                }
            }
            *v += best;
        }
    }

    let mut frames = Vec::with_capacity(k);
    let first = match &l.first {
        Some(list) if !list.is_empty() => pick(list.iter().map(|&(u, c)| (u, w * c + value[u as usize]))),
        Some(_) => {
            warn!("no label reachable from the anchor; using every label");
            pick((0..n as u32).map(|u| (u, value[u as usize])))
        }
        None => pick((0..n as u32).map(|u| (u, value[u as usize]))),
    };
    let (mut t, objective) = first.unwrap_or((0, f64::INFINITY));
    frames.push(t);
    for col in 1..k {
        let row = &value[col * n..(col + 1) * n];
        let choice = pick(l.next[t].iter().map(|&(u, c)| (u, w * c + row[u as usize])));
        t = match choice {
            Some((u, _)) => u,
            None => {
                warn!("column {col} has no finite label; holding frame {t}");
                t
            }
        };
        frames.push(t);
    }
    (frames, objective)
}

/// Dense successor lists over every label.
pub(crate) fn dense_transitions(actor: &ActorModel, sigma_t: f64, mode: TransitionMode) -> Vec<Vec<(u32, f64)>> {
    let n = actor.len();
    (0..n)
        .map(|t| {
            (0..n)
                .map(|u| (u as u32, actor.transition_cost(t, u, sigma_t, mode)))
                .collect()
        })
        .collect()
}

pub(crate) enum Transitions {
    Sparse(Arc<SparseTransitions>),
    Dense(Vec<Vec<(u32, f64)>>),
}

impl Transitions {
    pub fn build(actor: &ActorModel, sigma_t: f64, mode: TransitionMode, dense: bool) -> Self {
        if dense {
            Transitions::Dense(dense_transitions(actor, sigma_t, mode))
        } else {
            Transitions::Sparse(actor.sparse(sigma_t, mode))
        }
    }

    pub fn lists(&self) -> &[Vec<(u32, f64)>] {
        match self {
            Transitions::Sparse(s) => &s.next,
            Transitions::Dense(d) => d,
        }
    }
}

/// Unary term `alpha E_A + (1 - alpha) beta E_C` for the frames `label *
/// stride` at columns `col * col_stride`.
pub(crate) fn unary_costs(
    actor: &ActorModel,
    requests: &[&[f64]],
    partners: &[Partner<'_>],
    params: &SynthesisParams,
    frames: &[usize],
    partner_columns: &[usize],
) -> Vec<f64> {
    let (wa, wc, _) = params.weights();
    let n = frames.len();
    let field = actor.field();
    let mut out = vec![0.0; requests.len() * n];
    for (k, r) in requests.iter().enumerate() {
        let row = &mut out[k * n..(k + 1) * n];
        if wa != 0.0 {
            for (v, &f) in row.iter_mut().zip(frames) {
                *v += wa * action_cost_unchecked(field.row(f), r, params.sigma_a);
            }
        }
        if wc == 0.0 {
            continue;
        }
        for p in partners {
            let col = partner_columns[k];
            match &p.pair {
                Some(pair) => {
                    let vec = pair.partner_vector(p.frames[col]);
                    let own = pair.own();
                    for (v, &f) in row.iter_mut().zip(frames) {
                        let c: f64 = own.row(f).iter().zip(&vec).map(|(a, b)| a * b).sum();
                        *v += wc * c;
                    }
                }
                None => row.iter_mut().for_each(|v| *v += wc * crate::compat::COMPATIBLE_COST),
            }
        }
    }
    out
}

pub(crate) fn check_problem(p: &RowProblem<'_>) -> Result<()> {
    let k = p.requests.len();
    let classes = p.actor.classes();
    if let Some(r) = p.requests.iter().find(|r| r.len() != classes) {
        return Err(Error::LengthMismatch(classes, r.len()));
    }
    for partner in p.partners {
        if partner.frames.len() < k {
            return Err(Error::LengthMismatch(k, partner.frames.len()));
        }
    }
    if let Some(a) = p.anchor {
        if a >= p.actor.len() {
            return Err(Error::FrameOutOfRange {
                what: p.actor.id().to_string(),
                frame: a,
                len: p.actor.len(),
            });
        }
    }
    Ok(())
}

/// Exact minimiser of the row energy over the label set allowed by the jump
/// graph (or every frame when `params.dense`). Ties go to the sequence with
/// the lowest frame index at the earliest differing column.
pub fn synthesize_row(p: &RowProblem<'_>) -> Result<RowSolution> {
    p.params.validate()?;
    check_problem(p)?;
    let actor = p.actor;
    let sigma_t = actor.sigma_t(p.params.sigma_t);
    let mode = TransitionMode::from_flag(p.params.literal_transitions);
    let trans = Transitions::build(actor, sigma_t, mode, p.params.dense);
    let labels: Vec<usize> = (0..actor.len()).collect();
    let columns: Vec<usize> = (0..p.requests.len()).collect();
    let requests: Vec<&[f64]> = p.requests.iter().map(Vec::as_slice).collect();
    let unary = unary_costs(actor, &requests, p.partners, p.params, &labels, &columns);
    let first = p.anchor.map(|a| trans.lists()[a].clone());
    let (_, _, wt) = p.params.weights();
    let (frames, objective) = solve(&Lattice {
        unary,
        labels: actor.len(),
        next: trans.lists(),
        first,
        pair_weight: wt,
    });
    Ok(RowSolution { frames, objective })
}
