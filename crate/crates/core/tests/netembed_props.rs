mod common;

use common::random_graph;
use mohone_core::diffusion::{heat_matrix_exact, heat_signatures, HeatSignature, DEFAULT_BINS};
use mohone_core::embedding::EmbeddingMatrix;
use mohone_core::graph::normalized_laplacian;
use mohone_core::netembed::{
    build_shnb_sampler, build_structural_sampler, sgns_gradient, sgns_loss, train_embeddings, TrainConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signatures(n: usize, p: f64, seed: u64, s: f64) -> Vec<HeatSignature> {
    let g = random_graph(n, p, seed);
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), s).unwrap();
    heat_signatures(&psi, DEFAULT_BINS, false)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampler_tables_are_distributions(n in 2usize..60, p in 0.05f64..0.5, seed: u64, s in 0.5f64..10.0) {
        let g = random_graph(n, p, seed);
        let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), s).unwrap();
        let shnb = build_shnb_sampler(&psi);
        let structural = build_structural_sampler(&heat_signatures(&psi, DEFAULT_BINS, false), 10).unwrap();
        for sampler in [shnb, structural] {
            for u in sampler.sampleable_nodes() {
                let w = sampler.weights_dense(u);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert_eq!(w[u], 0.0);
            }
        }
    }

    #[test]
    fn structural_tables_follow_relabeling(n in 3usize..40, p in 0.05f64..0.5, seed: u64, perm_seed: u64) {
        let sigs = signatures(n, p, seed, 3.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        // node u is renamed perm[u]
        let mut relabeled = sigs.clone();
        for (u, s) in sigs.iter().enumerate() {
            relabeled[perm[u]] = HeatSignature { node: perm[u], histogram: s.histogram.clone() };
        }
        let a = build_structural_sampler(&sigs, 10).unwrap();
        let b = build_structural_sampler(&relabeled, 10).unwrap();
        for u in 0..n {
            for v in 0..n {
                prop_assert!((a.weight(u, v) - b.weight(perm[u], perm[v])).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn alias_frequencies_match_weights() {
    let g = random_graph(30, 0.15, 7);
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), 2.0).unwrap();
    let sampler = build_shnb_sampler(&psi);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for u in [0, 7, 19] {
        let draws = 1_000_000;
        let mut counts = vec![0usize; 30];
        for _ in 0..draws {
            counts[sampler.sample(u, &mut rng).unwrap()] += 1;
        }
        let w = sampler.weights_dense(u);
        let tv: f64 = 0.5 * counts.iter().zip(&w).map(|(&c, &p)| (c as f64 / draws as f64 - p).abs()).sum::<f64>();
        assert!(tv <= 0.005, "node {u}: tv {tv}");
    }
}

#[test]
fn sgns_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let h = 1e-6;
    for case in 0..100 {
        let n = rng.random_range(3..12);
        let d = rng.random_range(1..9);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = EmbeddingMatrix::from_vec(n, d, data).unwrap();
        let u = rng.random_range(0..n);
        let v = loop {
            let v = rng.random_range(0..n);
            if v != u {
                break v;
            }
        };
        let k = rng.random_range(1..6);
        let negs: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
        let g = sgns_gradient(&f, u, v, &negs);
        for i in 0..n {
            for j in 0..d {
                let mut plus = f.clone();
                plus.row_mut(i)[j] += h;
                let mut minus = f.clone();
                minus.row_mut(i)[j] -= h;
                let fd = (sgns_loss(&plus, u, v, &negs) - sgns_loss(&minus, u, v, &negs)) / (2.0 * h);
                assert!(close(fd, g.row(i)[j], 1e-5), "case {case} ({i},{j}): fd {fd} vs {}", g.row(i)[j]);
            }
        }
    }
}

#[test]
fn single_threaded_training_is_deterministic() {
    let sigs = signatures(40, 0.1, 5, 3.0);
    let g = random_graph(40, 0.1, 5);
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), 3.0).unwrap();
    let cfg = TrainConfig { dim: 8, epochs: 10, seed: 9, ..Default::default() };
    for sampler in [build_shnb_sampler(&psi), build_structural_sampler(&sigs, 10).unwrap()] {
        let a = train_embeddings(&sampler, &cfg).unwrap();
        let b = train_embeddings(&sampler, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = train_embeddings(&sampler, &TrainConfig { seed: 10, ..cfg.clone() }).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }
}

#[test]
fn parallel_training_stays_finite() {
    let g = random_graph(60, 0.08, 2);
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), 3.0).unwrap();
    let cfg = TrainConfig { dim: 8, epochs: 10, threads: 4, ..Default::default() };
    assert!(train_embeddings(&build_shnb_sampler(&psi), &cfg).unwrap().is_finite());
}
