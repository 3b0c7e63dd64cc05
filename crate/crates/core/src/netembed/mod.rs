//! Network embeddings `F` learned by maximizing `sum_u sum_{v in N(u)} log Pr(v | u)`
//! with `Pr(v | u)` proportional to `exp(F(u) . F(v))`.
//!
//! Training draws pairs `(u, v)` with `v` from a [`PairSampler`] and replaces
//! the full softmax with `k` uniform negatives (skip-gram negative sampling).

mod sampler;
mod sgns;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sampler::{
    build_shnb_sampler, build_structural_sampler, js_divergence, PairSampler, SamplerMode,
    DEFAULT_NEIGHBOR_CAP,
};
pub use sgns::{sgns_gradient, sgns_loss, sgns_step};
pub(crate) use sgns::{sigmoid, softplus};

use crate::embedding::{EmbeddingMatrix, NodeEmbeddingMatrix};
use crate::error::{Error, Result};
use sgns::{Scratch, SharedRows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub pairs_per_node: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    /// The rate decays linearly from `learning_rate` to this floor.
    pub lr_floor: f64,
    pub seed: u64,
    /// Worker threads; 1 selects the deterministic single-threaded trainer.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            epochs: 10,
            pairs_per_node: 20,
            negatives: 5,
            learning_rate: 0.025,
            lr_floor: 1e-4,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dim", self.dim),
            ("epochs", self.epochs),
            ("pairs_per_node", self.pairs_per_node),
            ("negatives", self.negatives),
            ("threads", self.threads),
        ] {
            if v < 1 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.lr_floor >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Uniform initialization in `[-0.5/d, 0.5/d]`.
fn init_embeddings(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let bound = 0.5 / dim as f64;
    let data = (0..n * dim).map(|_| rng.random_range(-bound..=bound)).collect();
    EmbeddingMatrix::from_vec(n, dim, data).unwrap()
}

fn draw_negatives(rng: &mut ChaCha8Rng, n: usize, u: usize, v: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    if n <= 2 {
        return;
    }
    while out.len() < k {
        let w = rng.random_range(0..n);
        if w != u && w != v {
            out.push(w);
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let frac = step as f64 / total as f64;
    (cfg.learning_rate * (1.0 - frac)).max(cfg.lr_floor)
}

pub fn train_embeddings(sampler: &PairSampler, cfg: &TrainConfig) -> Result<NodeEmbeddingMatrix> {
    cfg.validate()?;
    let nodes = sampler.sampleable_nodes();
    if nodes.is_empty() {
        return Err(Error::NoSampleableNodes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = init_embeddings(sampler.n(), cfg.dim, &mut rng);
    if cfg.threads == 1 {
        Ok(train_serial(sampler, cfg, nodes, f, rng))
    } else {
        Ok(train_parallel(sampler, cfg, nodes, f, rng))
    }
}

fn train_serial(
    sampler: &PairSampler,
    cfg: &TrainConfig,
    mut order: Vec<usize>,
    mut f: EmbeddingMatrix,
    mut rng: ChaCha8Rng,
) -> EmbeddingMatrix {
    let n = sampler.n();
    let total = cfg.epochs * cfg.pairs_per_node * order.len();
    let mut step = 0;
    let mut negs = Vec::with_capacity(cfg.negatives);
    let mut scratch = Scratch::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &u in &order {
            for _ in 0..cfg.pairs_per_node {
                let v = sampler.sample(u, &mut rng).expect("sampleable node");
                draw_negatives(&mut rng, n, u, v, cfg.negatives, &mut negs);
                let lr = learning_rate(cfg, step, total);
                loss += sgns::sgns_apply(&mut f, u, v, &negs, lr, &mut scratch);
                step += 1;
            }
        }
        log::debug!(
            "netembed epoch {epoch}: mean loss {:.6}",
            loss / (order.len() * cfg.pairs_per_node) as f64
        );
    }
    f
}

/// Hogwild-style trainer: threads split each epoch's node order and update
/// shared rows without locks. Not bitwise reproducible.
fn train_parallel(
    sampler: &PairSampler,
    cfg: &TrainConfig,
    mut order: Vec<usize>,
    f: EmbeddingMatrix,
    mut rng: ChaCha8Rng,
) -> EmbeddingMatrix {
    let n = sampler.n();
    let dim = cfg.dim;
    let shared: Vec<AtomicU64> = f.as_slice().iter().map(|x| AtomicU64::new(x.to_bits())).collect();
    let total = cfg.epochs * cfg.pairs_per_node * order.len();
    let per_epoch = cfg.pairs_per_node * order.len();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let chunk = order.len().div_ceil(cfg.threads);
        let seeds: Vec<u64> = (0..cfg.threads).map(|_| rng.random()).collect();
        std::thread::scope(|scope| {
            for (t, part) in order.chunks(chunk).enumerate() {
                let shared = &shared;
                let seed = seeds[t];
                let offset = epoch * per_epoch + t * chunk * cfg.pairs_per_node;
                scope.spawn(move || {
                    let mut rows = SharedRows { data: shared, dim };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut negs = Vec::with_capacity(cfg.negatives);
                    let mut scratch = Scratch::default();
                    let mut step = offset;
                    for &u in part {
                        for _ in 0..cfg.pairs_per_node {
                            let v = sampler.sample(u, &mut rng).expect("sampleable node");
                            draw_negatives(&mut rng, n, u, v, cfg.negatives, &mut negs);
                            let lr = learning_rate(cfg, step, total);
                            sgns::sgns_apply(&mut rows, u, v, &negs, lr, &mut scratch);
                            step += 1;
                        }
                    }
                });
            }
        });
    }
    let data = shared.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect();
    EmbeddingMatrix::from_vec(n, dim, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::heat_matrix_exact;
    use crate::graph::{generators, normalized_laplacian, UndirectedGraph};

    fn shnb(g: &UndirectedGraph, s: f64) -> PairSampler {
        build_shnb_sampler(&heat_matrix_exact(&normalized_laplacian(g).unwrap(), s).unwrap())
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            dim: 8,
            epochs: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_node_graph_has_nothing_to_train() {
        let g = UndirectedGraph::from_edges(1, []).unwrap();
        assert!(matches!(
            train_embeddings(&shnb(&g, 1.0), &small_cfg(0)),
            Err(Error::NoSampleableNodes)
        ));
    }

    #[test]
    fn initialization_range_and_determinism() {
        let s = shnb(&generators::complete(4), 1.0);
        let a = train_embeddings(&s, &small_cfg(11)).unwrap();
        let b = train_embeddings(&s, &small_cfg(11)).unwrap();
        assert_eq!(a, b);
        let c = train_embeddings(&s, &small_cfg(12)).unwrap();
        assert_ne!(a, c);
        assert!(a.is_finite());
    }

    #[test]
    fn parallel_mode_trains_finite_embeddings() {
        let s = shnb(&generators::barbell(5, 2), 1.0);
        let cfg = TrainConfig {
            threads: 3,
            ..small_cfg(5)
        };
        let f = train_embeddings(&s, &cfg).unwrap();
        assert_eq!((f.rows(), f.dim()), (12, 8));
        assert!(f.is_finite());
    }

    #[test]
    fn invalid_config_rejected() {
        let s = shnb(&generators::complete(3), 1.0);
        let cfg = TrainConfig {
            negatives: 0,
            ..small_cfg(0)
        };
        assert!(train_embeddings(&s, &cfg).is_err());
    }
}
