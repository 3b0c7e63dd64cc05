//! Base knowledge-graph embedding models and their training loop.
//!
//! Scores are oriented so that higher means more plausible:
//!
//! | model    | score                                   |
//! |----------|-----------------------------------------|
//! | TransE   | `-||h + r - t||_2`                      |
//! | DistMult | `sum_i h_i r_i t_i`                     |
//! | ComplEx  | `Re(sum_i h_i r_i conj(t_i))`           |
//!
//! ComplEx rows hold the real half followed by the imaginary half.
//! TransE trains on the margin ranking loss `max(0, margin - s+ + s-)`, the
//! others on the logistic loss `log(1 + exp(-y s))`. Negatives corrupt the
//! head or the tail with equal probability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{norm, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{Triple, TripleStore};
use crate::netembed::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeModel {
    TransE,
    DistMult,
    ComplEx,
}

impl KgeModel {
    /// Stored row width for embedding dimension `dim`.
    pub fn width(self, dim: usize) -> usize {
        match self {
            KgeModel::ComplEx => 2 * dim,
            _ => dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KgeModel::TransE => "transe",
            KgeModel::DistMult => "distmult",
            KgeModel::ComplEx => "complex",
        }
    }
}

impl std::str::FromStr for KgeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(KgeModel::TransE),
            "distmult" => Ok(KgeModel::DistMult),
            "complex" => Ok(KgeModel::ComplEx),
            other => Err(Error::InvalidArgument(format!("unknown KGE model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeTrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub learning_rate: f64,
    /// SGD rate at epoch `e` is `learning_rate / (1 + lr_decay * e)`.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for KgeTrainConfig {
    fn default() -> Self {
        KgeTrainConfig {
            dim: 100,
            batch_size: 100,
            epochs: 500,
            margin: 1.0,
            learning_rate: 0.01,
            lr_decay: 0.0,
            optimizer: Optimizer::Sgd,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

impl KgeTrainConfig {
    pub fn validate(&self, model: KgeModel) -> Result<()> {
        if self.dim < 1 || self.batch_size < 1 || self.negatives_per_positive < 1 {
            return Err(Error::InvalidArgument(
                "dim, batch_size and negatives_per_positive must be >= 1".into(),
            ));
        }
        if model == KgeModel::TransE && !(self.margin > 0.0) {
            return Err(Error::InvalidArgument("TransE margin must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Entity matrix `Q` and relation matrix `W` of one scoring model.
#[derive(Debug, Clone, PartialEq)]
pub struct KGEmbedding {
    pub model: KgeModel,
    pub dim: usize,
    pub entities: EmbeddingMatrix,
    pub relations: EmbeddingMatrix,
}

impl KGEmbedding {
    pub fn new(
        model: KgeModel,
        dim: usize,
        entities: EmbeddingMatrix,
        relations: EmbeddingMatrix,
    ) -> Result<Self> {
        let w = model.width(dim);
        for m in [&entities, &relations] {
            if m.dim() != w {
                return Err(Error::DimensionMismatch {
                    expected: w,
                    found: m.dim(),
                });
            }
        }
        Ok(KGEmbedding {
            model,
            dim,
            entities,
            relations,
        })
    }

    pub fn score(&self, head: usize, relation: usize, tail: usize) -> f64 {
        score(
            self.model,
            self.entities.row(head),
            self.relations.row(relation),
            self.entities.row(tail),
        )
    }
}

pub fn score(model: KgeModel, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match model {
        KgeModel::TransE => {
            let s: f64 = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((a, b), c)| (a + b - c).powi(2))
                .sum();
            -s.sqrt()
        }
        KgeModel::DistMult => h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum(),
        KgeModel::ComplEx => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (rr, ri) = r.split_at(d);
            let (tr, ti) = t.split_at(d);
            (0..d)
                .map(|k| {
                    hr[k] * rr[k] * tr[k] - hi[k] * ri[k] * tr[k] + hr[k] * ri[k] * ti[k]
                        + hi[k] * rr[k] * ti[k]
                })
                .sum()
        }
    }
}

/// Adds `coef * d score / d (h, r, t)` into the gradient rows.
fn add_score_gradient(
    model: KgeModel,
    (h, r, t): (&[f64], &[f64], &[f64]),
    coef: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    match model {
        KgeModel::TransE => {
            let diff: Vec<f64> = h.iter().zip(r).zip(t).map(|((a, b), c)| a + b - c).collect();
            let n = norm(&diff);
            if n == 0.0 {
                return;
            }
            for i in 0..diff.len() {
                let u = coef * diff[i] / n;
                gh[i] -= u;
                gr[i] -= u;
                gt[i] += u;
            }
        }
        KgeModel::DistMult => {
            for i in 0..h.len() {
                gh[i] += coef * r[i] * t[i];
                gr[i] += coef * h[i] * t[i];
                gt[i] += coef * h[i] * r[i];
            }
        }
        KgeModel::ComplEx => {
            let d = h.len() / 2;
            for k in 0..d {
                let (a, b) = (h[k], h[d + k]);
                let (c, e_) = (r[k], r[d + k]);
                let (e, f) = (t[k], t[d + k]);
                gh[k] += coef * (c * e + e_ * f);
                gh[d + k] += coef * (-e_ * e + c * f);
                gr[k] += coef * (a * e + b * f);
                gr[d + k] += coef * (-b * e + a * f);
                gt[k] += coef * (a * c - b * e_);
                gt[d + k] += coef * (a * e_ + b * c);
            }
        }
    }
}

/// Loss of one positive against one negative.
pub fn pair_loss(emb: &KGEmbedding, pos: Triple, neg: Triple, margin: f64) -> f64 {
    let sp = emb.score(pos.head, pos.relation, pos.tail);
    let sn = emb.score(neg.head, neg.relation, neg.tail);
    match emb.model {
        KgeModel::TransE => (margin - sp + sn).max(0.0),
        _ => softplus(-sp) + softplus(sn),
    }
}

/// Dense gradient buffers that remember which rows were written.
struct GradBuffer {
    grad: EmbeddingMatrix,
    touched: Vec<usize>,
    flag: Vec<bool>,
}

impl GradBuffer {
    fn new(rows: usize, width: usize) -> Self {
        GradBuffer {
            grad: EmbeddingMatrix::zeros(rows, width),
            touched: Vec::new(),
            flag: vec![false; rows],
        }
    }

    fn touch(&mut self, r: usize) {
        if !self.flag[r] {
            self.flag[r] = true;
            self.touched.push(r);
        }
    }

    fn clear(&mut self) {
        for &r in &self.touched {
            self.flag[r] = false;
            self.grad.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
        self.touched.clear();
    }
}

fn accumulate_triple(emb: &KGEmbedding, t: Triple, coef: f64, ge: &mut GradBuffer, gr: &mut GradBuffer) {
    let w = emb.entities.dim();
    let mut gh = vec![0.0; w];
    let mut grr = vec![0.0; w];
    let mut gt = vec![0.0; w];
    add_score_gradient(
        emb.model,
        (
            emb.entities.row(t.head),
            emb.relations.row(t.relation),
            emb.entities.row(t.tail),
        ),
        coef,
        &mut gh,
        &mut grr,
        &mut gt,
    );
    for (row, g) in [(t.head, &gh), (t.tail, &gt)] {
        ge.touch(row);
        for (x, d) in ge.grad.row_mut(row).iter_mut().zip(g.iter()) {
            *x += d;
        }
    }
    gr.touch(t.relation);
    for (x, d) in gr.grad.row_mut(t.relation).iter_mut().zip(&grr) {
        *x += d;
    }
}

fn accumulate_pairs(
    emb: &KGEmbedding,
    pairs: &[(Triple, Triple)],
    margin: f64,
    ge: &mut GradBuffer,
    gr: &mut GradBuffer,
) -> f64 {
    let mut loss = 0.0;
    for &(pos, neg) in pairs {
        let sp = emb.score(pos.head, pos.relation, pos.tail);
        let sn = emb.score(neg.head, neg.relation, neg.tail);
        let (l, dpos, dneg) = match emb.model {
            KgeModel::TransE => {
                let l = margin - sp + sn;
                if l > 0.0 {
                    (l, -1.0, 1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            _ => (softplus(-sp) + softplus(sn), -sigmoid(-sp), sigmoid(sn)),
        };
        loss += l;
        if dpos != 0.0 {
            accumulate_triple(emb, pos, dpos, ge, gr);
        }
        if dneg != 0.0 {
            accumulate_triple(emb, neg, dneg, ge, gr);
        }
    }
    loss
}

/// Summed loss of a mini-batch of (positive, negative) pairs.
pub fn batch_loss(emb: &KGEmbedding, pairs: &[(Triple, Triple)], margin: f64) -> f64 {
    pairs.iter().map(|&(p, n)| pair_loss(emb, p, n, margin)).sum()
}

/// Gradient of [`batch_loss`] with respect to (entities, relations).
pub fn batch_gradient(
    emb: &KGEmbedding,
    pairs: &[(Triple, Triple)],
    margin: f64,
) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let mut ge = GradBuffer::new(emb.entities.rows(), emb.entities.dim());
    let mut gr = GradBuffer::new(emb.relations.rows(), emb.relations.dim());
    accumulate_pairs(emb, pairs, margin, &mut ge, &mut gr);
    (ge.grad, gr.grad)
}

/// Replaces the head or the tail (probability 1/2 each) by a different
/// uniformly drawn entity. With a single entity the triple is returned as is.
pub fn corrupt<R: Rng + ?Sized>(t: Triple, num_entities: usize, rng: &mut R) -> Triple {
    let replace_head = rng.random_bool(0.5);
    if num_entities < 2 {
        return t;
    }
    let old = if replace_head { t.head } else { t.tail };
    let mut e = rng.random_range(0..num_entities - 1);
    if e >= old {
        e += 1;
    }
    if replace_head {
        Triple::new(e, t.relation, t.tail)
    } else {
        Triple::new(t.head, t.relation, e)
    }
}

fn init_matrix(rows: usize, width: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let bound = 6.0 / dim as f64;
    let data = (0..rows * width).map(|_| rng.random_range(-bound..=bound)).collect();
    EmbeddingMatrix::from_vec(rows, width, data).unwrap()
}

fn normalize_row(row: &mut [f64]) {
    let n = norm(row);
    if n > 0.0 {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

fn initial_embedding(model: KgeModel, store: &TripleStore, dim: usize, rng: &mut ChaCha8Rng) -> KGEmbedding {
    let w = model.width(dim);
    let mut entities = init_matrix(store.num_entities(), w, dim, rng);
    let mut relations = init_matrix(store.num_relations(), w, dim, rng);
    if model == KgeModel::TransE {
        for i in 0..relations.rows() {
            normalize_row(relations.row_mut(i));
        }
        for i in 0..entities.rows() {
            normalize_row(entities.row_mut(i));
        }
    }
    KGEmbedding {
        model,
        dim,
        entities,
        relations,
    }
}

struct OptimizerState {
    entity_acc: Option<EmbeddingMatrix>,
    relation_acc: Option<EmbeddingMatrix>,
}

fn apply_update(
    params: &mut EmbeddingMatrix,
    grads: &GradBuffer,
    acc: Option<&mut EmbeddingMatrix>,
    lr: f64,
) {
    match acc {
        None => {
            for &r in &grads.touched {
                for (p, g) in params.row_mut(r).iter_mut().zip(grads.grad.row(r)) {
                    *p -= lr * g;
                }
            }
        }
        Some(acc) => {
            for &r in &grads.touched {
                let g = grads.grad.row(r);
                let a = acc.row_mut(r);
                for (ai, gi) in a.iter_mut().zip(g) {
                    *ai += gi * gi;
                }
                for ((p, gi), ai) in params.row_mut(r).iter_mut().zip(g).zip(acc.row(r)) {
                    *p -= lr * gi / (ai.sqrt() + 1e-10);
                }
            }
        }
    }
}

/// Result of a training run, with the mean loss per positive of each epoch.
#[derive(Debug, Clone)]
pub struct KgeTrainOutcome {
    pub embedding: KGEmbedding,
    pub epoch_losses: Vec<f64>,
}

fn run_training(
    store: &TripleStore,
    mut emb: KGEmbedding,
    cfg: &KgeTrainConfig,
    freeze_entities: bool,
    rng: &mut ChaCha8Rng,
) -> KgeTrainOutcome {
    let n_e = store.num_entities();
    let mut ge = GradBuffer::new(n_e, emb.entities.dim());
    let mut gr = GradBuffer::new(store.num_relations(), emb.relations.dim());
    let mut state = match cfg.optimizer {
        Optimizer::Sgd => OptimizerState {
            entity_acc: None,
            relation_acc: None,
        },
        Optimizer::Adagrad => OptimizerState {
            entity_acc: Some(EmbeddingMatrix::zeros(n_e, emb.entities.dim())),
            relation_acc: Some(EmbeddingMatrix::zeros(store.num_relations(), emb.relations.dim())),
        },
    };
    let mut order: Vec<usize> = (0..store.triples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut pairs = Vec::with_capacity(cfg.batch_size * cfg.negatives_per_positive);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let lr = match cfg.optimizer {
            Optimizer::Sgd => cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64),
            Optimizer::Adagrad => cfg.learning_rate,
        };
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            pairs.clear();
            for &i in batch {
                let pos = store.triples[i];
                for _ in 0..cfg.negatives_per_positive {
                    pairs.push((pos, corrupt(pos, n_e, rng)));
                }
            }
            total += accumulate_pairs(&emb, &pairs, cfg.margin, &mut ge, &mut gr);
            if !freeze_entities {
                apply_update(&mut emb.entities, &ge, state.entity_acc.as_mut(), lr);
                if emb.model == KgeModel::TransE {
                    for &r in &ge.touched {
                        normalize_row(emb.entities.row_mut(r));
                    }
                }
            }
            apply_update(&mut emb.relations, &gr, state.relation_acc.as_mut(), lr);
            ge.clear();
            gr.clear();
        }
        let mean = total / store.triples.len() as f64;
        log::debug!("kge epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    KgeTrainOutcome {
        embedding: emb,
        epoch_losses,
    }
}

pub fn train_kge_logged(store: &TripleStore, model: KgeModel, cfg: &KgeTrainConfig) -> Result<KgeTrainOutcome> {
    cfg.validate(model)?;
    if store.triples.is_empty() {
        return Err(Error::InvalidArgument("no training triples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let emb = initial_embedding(model, store, cfg.dim, &mut rng);
    Ok(run_training(store, emb, cfg, false, &mut rng))
}

pub fn train_kge(store: &TripleStore, model: KgeModel, cfg: &KgeTrainConfig) -> Result<KGEmbedding> {
    Ok(train_kge_logged(store, model, cfg)?.embedding)
}

/// Re-initializes and trains relation embeddings with the entity rows held fixed.
pub fn relearn_relations_logged(
    store: &TripleStore,
    frozen_entities: &EmbeddingMatrix,
    model: KgeModel,
    cfg: &KgeTrainConfig,
) -> Result<KgeTrainOutcome> {
    cfg.validate(model)?;
    if frozen_entities.rows() != store.num_entities() {
        return Err(Error::DimensionMismatch {
            expected: store.num_entities(),
            found: frozen_entities.rows(),
        });
    }
    if frozen_entities.dim() != model.width(cfg.dim) {
        return Err(Error::DimensionMismatch {
            expected: model.width(cfg.dim),
            found: frozen_entities.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = initial_embedding(model, store, cfg.dim, &mut rng);
    emb.entities = frozen_entities.clone();
    Ok(run_training(store, emb, cfg, true, &mut rng))
}

pub fn relearn_relations(
    store: &TripleStore,
    frozen_entities: &EmbeddingMatrix,
    model: KgeModel,
    cfg: &KgeTrainConfig,
) -> Result<KGEmbedding> {
    Ok(relearn_relations_logged(store, frozen_entities, model, cfg)?.embedding)
}
