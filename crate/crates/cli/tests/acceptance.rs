//! One test per acceptance criterion. Each prints a single `ACn PASS|FAIL` line
//! (visible with `--nocapture`) before asserting.

use std::path::Path;
use std::time::Instant;

use mohone_cli::{run_pipeline, PipelineConfig};
use mohone_core::cluster::{adjusted_rand_index, kmeans};
use mohone_core::diffusion::{
    heat_matrix_chebyshev, heat_matrix_exact, heat_signatures, HeatDiffusionMatrix,
    DEFAULT_BINS,
};
use mohone_core::embedding::{cosine, EmbeddingMatrix};
use mohone_core::eval::{
    evaluate, paired_significance, rank_filtered, summarize, EvalOptions, FilterIndex, Query, TripleScorer,
};
use mohone_core::graph::{generators, normalized_laplacian, Dataset, Triple, UndirectedGraph};
use mohone_core::kge::{batch_gradient, batch_loss, train_kge, KGEmbedding, KgeModel, KgeTrainConfig};
use mohone_core::netembed::{
    build_shnb_sampler, build_structural_sampler, sgns_gradient, sgns_loss, train_embeddings, TrainConfig,
    DEFAULT_NEIGHBOR_CAP,
};
use mohone_core::retrofit::{build_neighbor_sets, retrofit, retrofit_objective, RetrofitProblem};
use mohone_core::synthetic::{community_kg, CommunityKgConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, pass: bool, detail: String) {
    eprintln!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{id}: {detail}");
}

fn random_graph(n: usize, p: f64, seed: u64) -> UndirectedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    UndirectedGraph::from_edges(n, edges).unwrap()
}

/// Twenty graphs with 10..=200 nodes and mixed densities.
fn graph_suite() -> Vec<UndirectedGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20)
        .map(|i| {
            let n = rng.random_range(10..=200);
            let p = rng.random_range(1.5..6.0) / n as f64;
            random_graph(n, p, i)
        })
        .collect()
}

fn max_abs_psi(a: &HeatDiffusionMatrix, b: &HeatDiffusionMatrix) -> f64 {
    (a.matrix() - b.matrix()).abs().max()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn ac1_diffusion_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for g in graph_suite() {
        let lap = normalized_laplacian(&g).unwrap();
        let exact = heat_matrix_exact(&lap, 5.0).unwrap();
        let cheb = heat_matrix_chebyshev(&lap, 5.0, 30).unwrap();
        worst = worst.max(max_abs_psi(&exact, &cheb));
    }
    // K3 closed form: exp(-L) = J/3 + e^{-3/2} (I - J/3).
    let psi = heat_matrix_exact(&normalized_laplacian(&generators::complete(3)).unwrap(), 1.0).unwrap();
    let e = (-1.5f64).exp();
    let (diag, off) = (1.0 / 3.0 + 2.0 * e / 3.0, (1.0 - e) / 3.0);
    let mut k3: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { diag } else { off };
            k3 = k3.max((psi.get(i, j) - want).abs());
            let pinned = if i == j { 0.48209 } else { 0.25896 };
            k3 = k3.max((psi.get(i, j) - pinned).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "AC1",
        worst <= 1e-3 && k3 <= 1e-5 && secs < 10.0,
        format!("chebyshev vs exact max {worst:.2e} (<= 1e-3), K3 max {k3:.2e} (<= 1e-5), {secs:.2} s (< 10)"),
    );
}

#[test]
fn ac2_column_stochasticity_and_limits() {
    let mut col: f64 = 0.0;
    let mut ident: f64 = 0.0;
    for (i, g) in graph_suite().into_iter().enumerate() {
        let lap = normalized_laplacian(&g).unwrap();
        let s = [0.1, 1.0, 5.0, 20.0][i % 4];
        for psi in [heat_matrix_exact(&lap, s).unwrap(), heat_matrix_chebyshev(&lap, s, 30).unwrap()] {
            for j in 0..psi.n() {
                col = col.max((psi.column(j).iter().sum::<f64>() - 1.0).abs());
            }
        }
        let n = g.n();
        for psi in [heat_matrix_exact(&lap, 0.0).unwrap(), heat_matrix_chebyshev(&lap, 0.0, 30).unwrap()] {
            ident = ident.max((psi.matrix() - DMatrix::identity(n, n)).abs().max());
        }
    }
    let psi = heat_matrix_exact(&normalized_laplacian(&generators::complete(3)).unwrap(), 50.0).unwrap();
    let k3 = psi.matrix().iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    verdict(
        "AC2",
        col <= 1e-9 && ident <= 1e-8 && k3 <= 1e-6,
        format!("column sum error {col:.2e} (<= 1e-9), s=0 identity error {ident:.2e} (<= 1e-8), K3 s=50 error {k3:.2e} (<= 1e-6)"),
    );
}

fn random_retrofit_problem(seed: u64) -> RetrofitProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=50);
    let d = rng.random_range(1..=8);
    let mut m = |rows: usize, cols: usize| {
        EmbeddingMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let q_hat = m(n, d);
    let f = m(n, 8);
    let k = 10.min(n - 1);
    RetrofitProblem::new(q_hat, build_neighbor_sets(&f, k).unwrap()).unwrap()
}

fn dense_solution(p: &RetrofitProblem) -> DMatrix<f64> {
    let (n, d) = (p.q_hat.rows(), p.q_hat.dim());
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, d);
    for i in 0..n {
        a[(i, i)] += p.alpha[i];
        for &(j, b) in &p.neighbors[i] {
            a[(i, i)] += b;
            a[(i, j)] -= b;
        }
        for c in 0..d {
            rhs[(i, c)] = p.alpha[i] * p.q_hat.row(i)[c];
        }
    }
    a.lu().solve(&rhs).unwrap()
}

#[test]
fn ac3_retrofit_math() {
    let start = Instant::now();
    let mut increases = 0;
    let mut worst_rise: f64 = 0.0;
    let mut converged_in_10 = 0;
    let mut dense_err: f64 = 0.0;
    for seed in 0..100 {
        let p = random_retrofit_problem(seed);
        let out = retrofit(&p).unwrap();
        if out.converged && out.sweeps() <= 10 {
            converged_in_10 += 1;
        }
        let mut tight = p.clone();
        tight.tol = 1e-14;
        tight.max_iters = 10_000;
        let long = retrofit(&tight).unwrap();
        let mut rose = false;
        for w in long.log.windows(2) {
            let rise = w[1].theta - w[0].theta;
            if rise > 1e-12 * w[0].theta.abs().max(1.0) {
                rose = true;
                worst_rise = worst_rise.max(rise / w[0].theta.abs().max(1e-300));
            }
        }
        increases += rose as usize;
        let want = dense_solution(&p);
        for i in 0..p.q_hat.rows() {
            for c in 0..p.q_hat.dim() {
                dense_err = dense_err.max((long.q.row(i)[c] - want[(i, c)]).abs());
            }
        }
    }

    let q_hat = EmbeddingMatrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    let mut two = RetrofitProblem::new(q_hat, vec![vec![(1, 1.0)], vec![(0, 1.0)]]).unwrap();
    two.tol = 1e-8;
    two.max_iters = 40;
    let out = retrofit(&two).unwrap();
    let fixed = (out.q.row(0)[0] - 2.0 / 3.0).abs().max((out.q.row(1)[0] - 4.0 / 3.0).abs());
    let theta: Vec<f64> = out.log.iter().map(|r| r.theta).collect();
    let secs = start.elapsed().as_secs_f64();

    let a = increases == 0;
    let b = out.converged && fixed <= 1e-6;
    let c = dense_err <= 1e-6;
    let conv = converged_in_10 >= 90;
    verdict(
        "AC3",
        a && b && c && conv && secs < 5.0,
        format!(
            "(a) theta rose on {increases}/100 problems, worst relative rise {worst_rise:.2e}; \
             2-entity theta trace {:?}, retrofit objective at the minimizer (0.8, 1.2) is {}; \
             (b) 2-entity error {fixed:.2e} after {} sweeps; (c) dense solve error {dense_err:.2e}; \
             {converged_in_10}/100 converged in <= 10 sweeps; {secs:.2} s",
            &theta[..theta.len().min(5)],
            retrofit_objective(&two, &EmbeddingMatrix::from_rows(&[vec![0.8], vec![1.2]]).unwrap()).unwrap(),
            out.sweeps(),
        ),
    );
}

#[test]
fn ac4_gradient_checks() {
    let h = 1e-6;
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let n = rng.random_range(3..12);
        let d = rng.random_range(1..9);
        let f = EmbeddingMatrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let u = rng.random_range(0..n);
        let v = (u + rng.random_range(1..n)) % n;
        let negs: Vec<usize> = (0..5).map(|_| rng.random_range(0..n)).collect();
        let g = sgns_gradient(&f, u, v, &negs);
        'outer: for i in 0..n {
            for j in 0..d {
                let mut p = f.clone();
                p.row_mut(i)[j] += h;
                let mut m = f.clone();
                m.row_mut(i)[j] -= h;
                let fd = (sgns_loss(&p, u, v, &negs) - sgns_loss(&m, u, v, &negs)) / (2.0 * h);
                if !close(fd, g.row(i)[j], 1e-5) {
                    failures.push(format!("sgns case {case}"));
                    break 'outer;
                }
            }
        }
    }
    for model in [KgeModel::TransE, KgeModel::DistMult, KgeModel::ComplEx] {
        for case in 0..100 {
            let ne = rng.random_range(2..8);
            let nr = rng.random_range(1..4);
            let d = rng.random_range(1..6);
            let w = model.width(d);
            let mut mat = |rows: usize| {
                EmbeddingMatrix::from_vec(rows, w, (0..rows * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            };
            let (e, r) = (mat(ne), mat(nr));
            let emb = KGEmbedding::new(model, d, e, r).unwrap();
            let pairs: Vec<(Triple, Triple)> = (0..4)
                .map(|_| {
                    let mut t = || Triple::new(rng.random_range(0..ne), rng.random_range(0..nr), rng.random_range(0..ne));
                    (t(), t())
                })
                .collect();
            let (ge, gr) = batch_gradient(&emb, &pairs, 1.0);
            let mut ok = true;
            for (is_entity, rows) in [(true, ne), (false, nr)] {
                for i in 0..rows {
                    for j in 0..w {
                        let bump = |s: f64| {
                            let mut x = emb.clone();
                            let m = if is_entity { &mut x.entities } else { &mut x.relations };
                            m.row_mut(i)[j] += s;
                            batch_loss(&x, &pairs, 1.0)
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        let an = if is_entity { ge.row(i)[j] } else { gr.row(i)[j] };
                        ok &= close(fd, an, 1e-5);
                    }
                }
            }
            if !ok {
                failures.push(format!("{model:?} case {case}"));
            }
        }
    }
    verdict(
        "AC4",
        failures.is_empty(),
        format!("400 configurations (SGNS and 3 KGE losses), mismatches: {failures:?}"),
    );
}

fn cfg(dim: usize, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        dim,
        epochs,
        seed,
        ..Default::default()
    }
}

#[test]
fn ac5_qualitative_figures() {
    let start = Instant::now();
    // (a) two disjoint triangles, shared-neighbourhood embeddings
    let g = generators::two_triangles();
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), 5.0).unwrap();
    let f = train_embeddings(&build_shnb_sampler(&psi), &cfg(16, 50, 0)).unwrap();
    let groups = [[0, 1, 2], [3, 4, 5]];
    let (mut within, mut cross) = (Vec::new(), Vec::new());
    for u in 0..6 {
        for v in u + 1..6 {
            let c = cosine(f.row(u), f.row(v));
            if groups.iter().any(|gr| gr.contains(&u) && gr.contains(&v)) {
                within.push(c);
            } else {
                cross.push(c);
            }
        }
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let margin = mean(&within) - mean(&cross);
    let secs_a = start.elapsed().as_secs_f64();

    // (b) barbell, structural embeddings and k-means with 3 clusters
    let start = Instant::now();
    let (clique, path) = (6, 2);
    let g = generators::barbell(clique, path);
    let psi = heat_matrix_exact(&normalized_laplacian(&g).unwrap(), 5.0).unwrap();
    let sampler = build_structural_sampler(&heat_signatures(&psi, DEFAULT_BINS, false), DEFAULT_NEIGHBOR_CAP).unwrap();
    let f = train_embeddings(&sampler, &cfg(16, 50, 0)).unwrap();
    let labels = kmeans(&f, 3, 10, 0).unwrap().labels;
    let ari = adjusted_rand_index(&labels, &generators::barbell_roles(clique, path)).unwrap();
    let secs_b = start.elapsed().as_secs_f64();

    verdict(
        "AC5",
        margin >= 0.2 && ari == 1.0 && secs_a < 60.0 && secs_b < 60.0,
        format!("(a) within-minus-cross cosine {margin:.3} (>= 0.2), {secs_a:.2} s; (b) ARI {ari} (== 1.0), {secs_b:.2} s"),
    );
}

fn read_reciprocal_ranks(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

fn pipeline_config(data: &Path, out: &Path, seed: u64, extra: &[String]) -> PipelineConfig {
    let mut sets: Vec<String> = ["train", "valid", "test"]
        .iter()
        .map(|s| format!("data.{s}={:?}", data.join(format!("{s}.txt")).display().to_string()))
        .collect();
    sets.push(format!("output.dir={:?}", out.display().to_string()));
    sets.push(format!("kge.seed={seed}"));
    sets.push(format!("netembed.seed={seed}"));
    sets.extend_from_slice(extra);
    PipelineConfig::resolve(None, Vec::new(), &sets).unwrap()
}

#[test]
fn ac6_end_to_end_improvement() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                let root = tmp.path().join(format!("seed{seed}"));
                s.spawn(move || {
                    let kg = community_kg(&CommunityKgConfig { seed, ..Default::default() }).unwrap();
                    let data = root.join("data");
                    kg.write_tsv(&data).unwrap();
                    let out = root.join("out");
                    let report = run_pipeline(pipeline_config(&data, &out, seed, &[])).unwrap();
                    (
                        report.baseline.mrr,
                        report.infused.mrr,
                        read_reciprocal_ranks(&out.join("eval.baseline.ranks.csv")),
                        read_reciprocal_ranks(&out.join("eval.infused.ranks.csv")),
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wins = runs.iter().filter(|r| r.1 >= r.0).count();
    let base: Vec<f64> = runs.iter().flat_map(|r| r.2.clone()).collect();
    let infused: Vec<f64> = runs.iter().flat_map(|r| r.3.clone()).collect();
    let sig = paired_significance(&infused, &base, 10_000, 0.05, 0).unwrap();
    let per_run: Vec<String> = runs.iter().map(|r| format!("{:.4}->{:.4}", r.0, r.1)).collect();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "AC6",
        wins >= 8 && sig.p_value < 0.05 && sig.mean_diff > 0.0 && secs < 600.0,
        format!(
            "infused >= baseline in {wins}/10 runs (>= 8), pooled mean RR gain {:.4}, p = {:.4} (< 0.05), {secs:.0} s; runs {per_run:?}",
            sig.mean_diff, sig.p_value
        ),
    );
}

/// Scores candidates by a fixed table, whichever side of the query varies.
struct Table(Vec<f64>);

impl TripleScorer for Table {
    fn num_entities(&self) -> usize {
        self.0.len()
    }

    fn score(&self, _head: usize, _relation: usize, tail: usize) -> f64 {
        self.0[tail]
    }
}

#[test]
fn ac7_evaluation_protocol() {
    let q = Query::Tail { head: 0, relation: 0 };
    let none = FilterIndex::default();
    let mut checks = Vec::new();
    checks.push(("truth strictly highest", rank_filtered(&Table(vec![0.1, 0.9, 0.3]), q, 1, &none) == 1));
    checks.push(("five-way tie", rank_filtered(&Table(vec![0.5; 5]), q, 2, &none) == 3));
    // Candidates 0..4 score 4, 3, 2, 1; truth is 2 and candidate 0 is another known answer.
    let filter = FilterIndex::new(&[Triple::new(0, 0, 0), Triple::new(0, 0, 2)]);
    checks.push(("filtered example", rank_filtered(&Table(vec![4.0, 3.0, 2.0, 1.0]), q, 2, &filter) == 2));

    let r = summarize(vec![1, 2, 4], &[1, 3, 10], 0).unwrap();
    checks.push(("mrr of [1, 2, 4]", (r.mrr - 7.0 / 12.0).abs() <= 1e-12));
    checks.push(("hits of [1, 2, 4]", r.hits[&1] == 1.0 / 3.0 && r.hits[&3] == 2.0 / 3.0 && r.hits[&10] == 1.0));

    let data = Dataset::from_tokens(
        &[("a", "r", "b"), ("c", "r", "d")].map(|(h, r, t)| (h.into(), r.into(), t.into())),
        &[],
        &[],
    );
    let emb = train_kge(&data.train, KgeModel::TransE, &KgeTrainConfig { dim: 8, epochs: 300, batch_size: 2, ..Default::default() }).unwrap();
    let filter = FilterIndex::new(&data.train.triples);
    let perfect = evaluate(&emb, &data.train.triples, &filter, None, &EvalOptions::default()).unwrap();
    checks.push(("perfect toy model", perfect.mrr == 1.0 && perfect.hits[&1] == 1.0));

    let b: Vec<f64> = (0..1000).map(|i| 0.1 + 0.4 * ((i * 37 % 100) as f64 / 100.0)).collect();
    let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
    checks.push(("constant shift p < 0.001", paired_significance(&a, &b, 10_000, 0.05, 0).unwrap().p_value < 0.001));
    checks.push(("identical p = 1", paired_significance(&b, &b, 10_000, 0.05, 0).unwrap().p_value == 1.0));
    checks.push(("two queries not significant", !paired_significance(&[1.0, 1.0], &[0.0, 0.0], 10_000, 0.05, 0).unwrap().significant));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict("AC7", failed.is_empty(), format!("{} checks, failed: {failed:?}", checks.len()));
}

/// Every file in `dir`; the resolved config names its own directory, which is masked.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let own = format!("{:?}", dir.display().to_string());
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(e.path()).unwrap();
            if name == "config.resolved.toml" {
                bytes = String::from_utf8(bytes).unwrap().replace(&own, "\"<out>\"").into_bytes();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn ac8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let kg = community_kg(&CommunityKgConfig { seed: 3, ..Default::default() }).unwrap();
    let data = tmp.path().join("data");
    kg.write_tsv(&data).unwrap();
    let mut differing = Vec::new();
    let mut compared = 0;
    for (mode, method) in [("shnb", "exact"), ("structural", "chebyshev")] {
        let extra = vec![
            format!("netembed.mode={mode:?}"),
            format!("diffusion.method={method:?}"),
            "kge.epochs=50".to_string(),
            "netembed.threads=1".to_string(),
        ];
        let a = tmp.path().join(format!("{mode}-a"));
        let b = tmp.path().join(format!("{mode}-b"));
        run_pipeline(pipeline_config(&data, &a, 11, &extra)).unwrap();
        run_pipeline(pipeline_config(&data, &b, 11, &extra)).unwrap();
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            compared += 1;
            if x != y {
                differing.push(format!("{mode}/{}", x.0));
            }
        }
    }
    verdict(
        "AC8",
        differing.is_empty() && compared > 20,
        format!("{compared} artifacts compared byte-for-byte, differing: {differing:?}"),
    );
}
