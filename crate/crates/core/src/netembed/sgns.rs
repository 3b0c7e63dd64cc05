//! Skip-gram with negative sampling on a single embedding matrix.
//!
//! For a pair `(u, v)` and negatives `n_1..n_k` the loss is
//! `-log sigma(F_u . F_v) - sum_i log sigma(-F_u . F_{n_i})`.
//! All gradients are taken at the pre-step values and then applied, so a
//! negative that coincides with `u` or `v` is handled exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::embedding::{dot, EmbeddingMatrix};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row storage the SGNS update can run against.
pub(crate) trait RowStore {
    fn dim(&self) -> usize;
    fn read_row(&self, r: usize, out: &mut [f64]);
    /// `row_r += scale * delta`
    fn add_to_row(&mut self, r: usize, delta: &[f64], scale: f64);
}

impl RowStore for EmbeddingMatrix {
    fn dim(&self) -> usize {
        EmbeddingMatrix::dim(self)
    }

    fn read_row(&self, r: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(r));
    }

    fn add_to_row(&mut self, r: usize, delta: &[f64], scale: f64) {
        for (x, d) in self.row_mut(r).iter_mut().zip(delta) {
            *x += scale * d;
        }
    }
}

/// Lock-free view for the parallel trainer; concurrent writers may race.
pub(crate) struct SharedRows<'a> {
    pub data: &'a [AtomicU64],
    pub dim: usize,
}

impl RowStore for SharedRows<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn read_row(&self, r: usize, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.data[r * self.dim..(r + 1) * self.dim]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn add_to_row(&mut self, r: usize, delta: &[f64], scale: f64) {
        for (a, d) in self.data[r * self.dim..(r + 1) * self.dim].iter().zip(delta) {
            let cur = f64::from_bits(a.load(Ordering::Relaxed));
            a.store((cur + scale * d).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Reusable buffers: row snapshots and per-row gradients.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    rows: Vec<usize>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

/// Fills `scratch` with the gradient of every touched row and returns the loss.
pub(crate) fn sgns_eval<S: RowStore + ?Sized>(
    store: &S,
    u: usize,
    v: usize,
    negatives: &[usize],
    scratch: &mut Scratch,
) -> f64 {
    let d = store.dim();
    let m = 2 + negatives.len();
    scratch.rows.clear();
    scratch.rows.push(u);
    scratch.rows.push(v);
    scratch.rows.extend_from_slice(negatives);
    scratch.values.resize(m * d, 0.0);
    scratch.grads.clear();
    scratch.grads.resize(m * d, 0.0);
    for (k, &r) in scratch.rows.iter().enumerate() {
        store.read_row(r, &mut scratch.values[k * d..(k + 1) * d]);
    }
    let (fu, rest) = scratch.values.split_at(d);
    let fv = &rest[..d];
    let (gu, grest) = scratch.grads.split_at_mut(d);

    let x = dot(fu, fv);
    let mut loss = softplus(-x);
    let coef = sigmoid(x) - 1.0;
    for i in 0..d {
        gu[i] += coef * fv[i];
        grest[i] += coef * fu[i];
    }
    for k in 0..negatives.len() {
        let fn_ = &rest[(k + 1) * d..(k + 2) * d];
        let gn = &mut grest[(k + 1) * d..(k + 2) * d];
        let x = dot(fu, fn_);
        loss += softplus(x);
        let coef = sigmoid(x);
        for i in 0..d {
            gu[i] += coef * fn_[i];
            gn[i] += coef * fu[i];
        }
    }
    loss
}

pub(crate) fn sgns_apply<S: RowStore + ?Sized>(
    store: &mut S,
    u: usize,
    v: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut Scratch,
) -> f64 {
    let loss = sgns_eval(store, u, v, negatives, scratch);
    let d = store.dim();
    for (k, &r) in scratch.rows.iter().enumerate() {
        store.add_to_row(r, &scratch.grads[k * d..(k + 1) * d], -lr);
    }
    loss
}

/// The SGNS loss at the current state.
pub fn sgns_loss(f: &EmbeddingMatrix, u: usize, v: usize, negatives: &[usize]) -> f64 {
    let mut scratch = Scratch::default();
    sgns_eval(f, u, v, negatives, &mut scratch)
}

/// Full gradient of [`sgns_loss`] with respect to `F`.
pub fn sgns_gradient(f: &EmbeddingMatrix, u: usize, v: usize, negatives: &[usize]) -> EmbeddingMatrix {
    let mut scratch = Scratch::default();
    sgns_eval(f, u, v, negatives, &mut scratch);
    let d = f.dim();
    let mut g = EmbeddingMatrix::zeros(f.rows(), d);
    for (k, &r) in scratch.rows.iter().enumerate() {
        for (gi, s) in g.row_mut(r).iter_mut().zip(&scratch.grads[k * d..(k + 1) * d]) {
            *gi += s;
        }
    }
    g
}

/// One gradient step on the SGNS loss; returns the loss before the step.
pub fn sgns_step(f: &mut EmbeddingMatrix, u: usize, v: usize, negatives: &[usize], lr: f64) -> f64 {
    let mut scratch = Scratch::default();
    sgns_apply(f, u, v, negatives, lr, &mut scratch)
}
