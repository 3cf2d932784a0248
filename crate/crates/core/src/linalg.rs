//! Sparse symmetric operators and a preconditioned conjugate-gradient solver
//! shared by label propagation and Poisson blending.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::{Error, Result};

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Diagonal used for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicate `(row, col)` entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|(c, _)| *c == i).map(|(_, v)| v).unwrap_or(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative residual `|b - Ax| / |b|` (zero when `b` is zero and `x` solves it).
pub fn relative_residual(op: &impl LinearOperator, b: &[f64], x: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    op.apply(x, &mut ax);
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    let nb = dot(b, b).sqrt();
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from the
/// contents of `x`. Stops once the relative residual drops to `tol` or after
/// `max_iter` iterations.
pub fn conjugate_gradient(
    op: &impl LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    cancel: Option<&AtomicBool>,
) -> Result<CgOutcome> {
    let n = op.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::LengthMismatch(b.len(), n));
    }
    let nb = dot(b, b).sqrt();
    if nb == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / nb;
    let mut it = 0;
    while res > tol && it < max_iter {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(Error::Cancelled);
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        // recurrence residual; re-checked exactly below
        res = dot(&r, &r).sqrt() / nb;
    }
    let exact = relative_residual(op, b, x);
    Ok(CgOutcome {
        iterations: it,
        relative_residual: exact,
        converged: exact <= tol,
    })
}
