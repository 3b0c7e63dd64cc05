//! Retrofitting base entity embeddings toward network-embedding neighbours.
//!
//! Minimizes `sum_i a_i ||q_i - qhat_i||^2 + sum_{j in N_i} b_ij ||q_i - q_j||^2`
//! with the online update
//! `q_i <- (sum_j b_ij q_j + a_i qhat_i) / (sum_j b_ij + a_i)`
//! applied in ascending index order, reusing rows already updated in the
//! same sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, norm, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Per-entity list of `(neighbour, weight)`.
pub type NeighborSets = Vec<Vec<(usize, f64)>>;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-3;

/// `k` nearest rows of `f` by cosine similarity, each with weight `1/k`.
/// Equal similarities go to the lower index.
pub fn build_neighbor_sets(f: &EmbeddingMatrix, k: usize) -> Result<NeighborSets> {
    let n = f.rows();
    if k < 1 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let beta = 1.0 / k as f64;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (cosine(f.row(i), f.row(j)), j))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            sims.into_iter().take(k).map(|(_, j)| (j, beta)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Ascending index, in place. Deterministic.
    #[default]
    GaussSeidel,
    /// Every row from the previous sweep's values; rows update in parallel.
    Jacobi,
}

#[derive(Debug, Clone)]
pub struct RetrofitProblem {
    pub q_hat: EmbeddingMatrix,
    pub neighbors: NeighborSets,
    pub alpha: Vec<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub order: SweepOrder,
}

impl RetrofitProblem {
    /// Problem with `alpha_i = 1` and default stopping rule.
    pub fn new(q_hat: EmbeddingMatrix, neighbors: NeighborSets) -> Result<Self> {
        let n = q_hat.rows();
        let p = RetrofitProblem {
            q_hat,
            neighbors,
            alpha: vec![1.0; n],
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            order: SweepOrder::GaussSeidel,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q_hat.rows();
        if self.neighbors.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.neighbors.len(),
            });
        }
        if self.alpha.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.alpha.len(),
            });
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and > 0, got {a}")));
        }
        for (i, omega) in self.neighbors.iter().enumerate() {
            for &(j, b) in omega {
                if j >= n || j == i {
                    return Err(Error::InvalidArgument(format!(
                        "entity {i} has invalid neighbour {j}"
                    )));
                }
                if !(b >= 0.0) || !b.is_finite() {
                    return Err(Error::InvalidArgument(format!("negative weight {b} at ({i}, {j})")));
                }
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument("tol must be >= 0".into()));
        }
        Ok(())
    }

    fn check_shape(&self, q: &EmbeddingMatrix) -> Result<()> {
        if q.rows() != self.q_hat.rows() || q.dim() != self.q_hat.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.q_hat.rows() * self.q_hat.dim(),
                found: q.rows() * q.dim(),
            });
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn retrofit_objective(p: &RetrofitProblem, q: &EmbeddingMatrix) -> Result<f64> {
    p.check_shape(q)?;
    let mut theta = 0.0;
    for i in 0..q.rows() {
        theta += p.alpha[i] * sq_dist(q.row(i), p.q_hat.row(i));
        for &(j, b) in &p.neighbors[i] {
            theta += b * sq_dist(q.row(i), q.row(j));
        }
    }
    Ok(theta)
}

fn updated_row(p: &RetrofitProblem, q: &EmbeddingMatrix, i: usize, out: &mut [f64]) -> Result<()> {
    let a = p.alpha[i];
    let mut denom = a;
    for (o, x) in out.iter_mut().zip(p.q_hat.row(i)) {
        *o = a * x;
    }
    for &(j, b) in &p.neighbors[i] {
        denom += b;
        for (o, x) in out.iter_mut().zip(q.row(j)) {
            *o += b * x;
        }
    }
    if !(denom > 0.0) {
        return Err(Error::Internal(format!("zero denominator at entity {i}")));
    }
    out.iter_mut().for_each(|o| *o /= denom);
    Ok(())
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff = sq_dist(old, new).sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / norm(old).max(1e-12)
    }
}

/// One sweep over all entities; returns the largest relative row change.
pub fn retrofit_step(p: &RetrofitProblem, q: &mut EmbeddingMatrix) -> Result<f64> {
    p.check_shape(q)?;
    let d = q.dim();
    match p.order {
        SweepOrder::GaussSeidel => {
            let mut row = vec![0.0; d];
            let mut delta: f64 = 0.0;
            for i in 0..q.rows() {
                updated_row(p, q, i, &mut row)?;
                delta = delta.max(relative_change(q.row(i), &row));
                q.row_mut(i).copy_from_slice(&row);
            }
            Ok(delta)
        }
        SweepOrder::Jacobi => {
            let prev = q.clone();
            let rows: Vec<Vec<f64>> = (0..q.rows())
                .into_par_iter()
                .map(|i| {
                    let mut row = vec![0.0; d];
                    updated_row(p, &prev, i, &mut row).map(|_| row)
                })
                .collect::<Result<_>>()?;
            let mut delta: f64 = 0.0;
            for (i, row) in rows.iter().enumerate() {
                delta = delta.max(relative_change(prev.row(i), row));
                q.row_mut(i).copy_from_slice(row);
            }
            Ok(delta)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub iter: usize,
    pub theta: f64,
    pub max_row_delta: f64,
}

#[derive(Debug, Clone)]
pub struct RetrofitOutcome {
    pub q: EmbeddingMatrix,
    /// Entry 0 is the starting point `Q = Qhat`; entry `t` follows sweep `t`.
    pub log: Vec<SweepRecord>,
    pub converged: bool,
}

impl RetrofitOutcome {
    pub fn sweeps(&self) -> usize {
        self.log.len() - 1
    }
}

pub fn retrofit(p: &RetrofitProblem) -> Result<RetrofitOutcome> {
    p.validate()?;
    let mut q = p.q_hat.clone();
    let mut log = vec![SweepRecord {
        iter: 0,
        theta: retrofit_objective(p, &q)?,
        max_row_delta: 0.0,
    }];
    let mut converged = false;
    for iter in 1..=p.max_iters {
        let delta = retrofit_step(p, &mut q)?;
        let theta = retrofit_objective(p, &q)?;
        log::debug!("retrofit sweep {iter}: theta {theta:.6e}, max row delta {delta:.3e}");
        log.push(SweepRecord {
            iter,
            theta,
            max_row_delta: delta,
        });
        if delta < p.tol {
            converged = true;
            break;
        }
    }
    if !q.is_finite() {
        return Err(Error::Numeric("retrofit produced non-finite values".into()));
    }
    Ok(RetrofitOutcome { q, log, converged })
}
