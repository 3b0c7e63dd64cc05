//! Pipeline stages. Each stage reads the artifacts of the stages before it
//! from the output directory, so a standalone run and a full pipeline run
//! produce identical files.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mohone_core::diffusion::{
    heat_matrix, heat_signatures, read_signatures, write_signatures, HeatDiffusionMatrix,
};
use mohone_core::embedding::EmbeddingMatrix;
use mohone_core::eval::{
    evaluate, paired_significance, write_ranks_csv, EvalOptions, FilterIndex, KnownVocab, Significance,
};
use mohone_core::graph::{normalized_laplacian, project_graph, Dataset, UndirectedGraph};
use mohone_core::kge::{relearn_relations_logged, train_kge_logged, KGEmbedding, KgeModel};
use mohone_core::netembed::{build_shnb_sampler, build_structural_sampler, train_embeddings};
use mohone_core::retrofit::{build_neighbor_sets, retrofit, RetrofitProblem, SweepRecord};

use crate::config::{Mode, PipelineConfig};
use crate::error::CliError;

pub const GRAPH_EDGES: &str = "graph.edges";
pub const VOCAB: &str = "vocab.json";
pub const PSI: &str = "psi.bin";
pub const SIGNATURES: &str = "signatures.json";
pub const NETWORK: &str = "network.vec";
pub const RETROFIT_ENTITIES: &str = "retrofit.entities.vec";
pub const RETROFIT_LOG: &str = "retrofit.log.json";
pub const REPORT: &str = "report.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const LOCK: &str = ".mohone.lock";

pub const REL_PREFIX: &str = "rel:";

/// The two embedding sets the pipeline evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Baseline,
    Infused,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Baseline => "baseline",
            Which::Infused => "infused",
        }
    }

    fn producer(self) -> &'static str {
        match self {
            Which::Baseline => "kge-train",
            Which::Infused => "relearn",
        }
    }

    pub fn entities_file(self) -> String {
        format!("{}.entities.vec", self.name())
    }

    pub fn relations_file(self) -> String {
        format!("{}.relations.vec", self.name())
    }

    pub fn eval_file(self) -> String {
        format!("eval.{}.json", self.name())
    }

    pub fn ranks_file(self) -> String {
        format!("eval.{}.ranks.csv", self.name())
    }
}

/// Sidecar written next to every artifact group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub stage: String,
    pub config_hash: String,
    pub vocab_hash: String,
    #[serde(default)]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub skipped: usize,
    pub n_queries: usize,
    pub config_hash: String,
    pub vocab_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrofitSummary {
    pub sweeps: usize,
    pub converged: bool,
    pub theta_initial: f64,
    pub theta_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub config_hash: String,
    pub vocab_hash: String,
    pub baseline: EvalReport,
    pub infused: EvalReport,
    /// Infused minus baseline, paired over queries.
    pub significance: Significance,
    pub retrofit: RetrofitSummary,
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error("setup", dir, e))?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked { path }),
            Err(e) => Err(io_error("setup", &path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn io_error(stage: &'static str, path: &Path, source: std::io::Error) -> CliError {
    CliError::Stage {
        stage,
        source: mohone_core::Error::Io {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes through `<path>.partial` and renames on success; a failed write
/// leaves the `.partial` file behind.
fn write_atomic(
    stage: &'static str,
    path: &Path,
    write: impl FnOnce(&Path) -> mohone_core::Result<()>,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_error(stage, dir, e))?;
    }
    let partial = partial_path(path);
    write(&partial).map_err(CliError::stage(stage))?;
    std::fs::rename(&partial, path).map_err(|e| io_error(stage, path, e))
}

fn write_json<T: Serialize>(stage: &'static str, path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(stage, path, |p| {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| mohone_core::Error::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(p, text).map_err(|e| mohone_core::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    })
}

fn read_json<T: DeserializeOwned>(stage: &'static str, path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(stage, path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Peak resident set size in kB, where the platform reports it.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

fn timed<T>(stage: &'static str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f();
    let rss = peak_rss_kb().map_or_else(|| "n/a".to_string(), |k| format!("{k} kB"));
    log::info!("stage {stage}: {:.3} s wall, peak rss {rss}", start.elapsed().as_secs_f64());
    out
}

/// Everything a stage needs: config, the loaded dataset and the output directory.
pub struct Context {
    pub cfg: PipelineConfig,
    pub dataset: Dataset,
    pub vocab_hash: String,
    pub config_hash: String,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Result<Self, CliError> {
        let train = cfg
            .data
            .train
            .clone()
            .ok_or_else(|| CliError::Config("data.train is not set".into()))?;
        let dataset = Dataset::load(&train, cfg.data.valid.as_deref(), cfg.data.test.as_deref())
            .map_err(CliError::stage("load"))?;
        let vocab_hash = dataset.vocab_hash();
        let config_hash = cfg.hash();
        Ok(Context {
            cfg,
            dataset,
            vocab_hash,
            config_hash,
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn entity_tokens(&self) -> &[String] {
        self.dataset.train.entities.tokens()
    }

    fn relation_tokens(&self) -> &[String] {
        self.dataset.train.relations.tokens()
    }

    fn sidecar(&self, stage: &str, details: serde_json::Value) -> Sidecar {
        Sidecar {
            stage: stage.to_string(),
            config_hash: self.config_hash.clone(),
            vocab_hash: self.vocab_hash.clone(),
            details,
        }
    }

    fn write_sidecar(&self, stage: &'static str, artifact: &Path, details: serde_json::Value) -> Result<(), CliError> {
        write_json(stage, &sidecar_path(artifact), &self.sidecar(stage, details))
    }

    /// Path of an upstream artifact, checked for existence and vocabulary.
    fn require(&self, stage: &'static str, name: &str, producer: &'static str) -> Result<(PathBuf, Sidecar), CliError> {
        let path = self.out(name);
        let meta = sidecar_path(&path);
        if !path.exists() || !meta.exists() {
            return Err(CliError::MissingArtifact { stage, path, producer });
        }
        let sidecar: Sidecar = read_json(stage, &meta)?;
        if sidecar.vocab_hash != self.vocab_hash {
            return Err(CliError::VocabMismatch {
                stage,
                path,
                expected: self.vocab_hash.clone(),
                found: sidecar.vocab_hash,
            });
        }
        Ok((path, sidecar))
    }

    fn read_rows(&self, stage: &'static str, path: &Path, prefix: &str, expected: &[String]) -> Result<EmbeddingMatrix, CliError> {
        let (tokens, m) = EmbeddingMatrix::read_word2vec(path, prefix).map_err(CliError::stage(stage))?;
        if tokens != expected {
            return Err(CliError::Artifact {
                stage,
                message: format!("{}: tokens do not match the dataset vocabulary", path.display()),
            });
        }
        Ok(m)
    }

    fn write_rows(&self, stage: &'static str, path: &Path, m: &EmbeddingMatrix, tokens: &[String], prefix: &str) -> Result<(), CliError> {
        write_atomic(stage, path, |p| m.write_word2vec(p, tokens, prefix))
    }
}

pub fn graph_build(ctx: &Context) -> Result<UndirectedGraph, CliError> {
    const STAGE: &str = "graph-build";
    timed(STAGE, || {
        let g = project_graph(&ctx.dataset.train);
        let path = ctx.out(GRAPH_EDGES);
        write_atomic(STAGE, &path, |p| g.write_edge_list(p))?;
        ctx.write_sidecar(
            STAGE,
            &path,
            serde_json::json!({ "nodes": g.n(), "edges": g.num_edges() }),
        )?;
        let vocab = serde_json::json!({
            "entities": ctx.entity_tokens(),
            "relations": ctx.relation_tokens(),
            "vocab_hash": ctx.vocab_hash,
        });
        write_json(STAGE, &ctx.out(VOCAB), &vocab)?;
        Ok(g)
    })
}

pub fn diffuse(ctx: &Context) -> Result<HeatDiffusionMatrix, CliError> {
    const STAGE: &str = "diffuse";
    timed(STAGE, || {
        let (edges, _) = ctx.require(STAGE, GRAPH_EDGES, "graph-build")?;
        let g = UndirectedGraph::read_edge_list(&edges).map_err(CliError::stage(STAGE))?;
        let d = &ctx.cfg.diffusion;
        let lap = normalized_laplacian(&g).map_err(CliError::stage(STAGE))?;
        let psi = heat_matrix(&lap, &d.kernel()).map_err(CliError::stage(STAGE))?;
        let path = ctx.out(PSI);
        write_atomic(STAGE, &path, |p| psi.write_binary(p))?;
        ctx.write_sidecar(
            STAGE,
            &path,
            serde_json::json!({ "n": psi.n(), "scale": d.scale, "method": d.method, "chebyshev_degree": d.chebyshev_degree }),
        )?;
        let sigs = heat_signatures(&psi, d.bins, d.parallel);
        let spath = ctx.out(SIGNATURES);
        write_atomic(STAGE, &spath, |p| write_signatures(p, &sigs))?;
        ctx.write_sidecar(STAGE, &spath, serde_json::json!({ "bins": d.bins }))?;
        Ok(psi)
    })
}

pub fn embed(ctx: &Context) -> Result<EmbeddingMatrix, CliError> {
    const STAGE: &str = "embed";
    timed(STAGE, || {
        let n = &ctx.cfg.netembed;
        let sampler = match n.mode {
            Mode::Shnb => {
                let (path, _) = ctx.require(STAGE, PSI, "diffuse")?;
                let psi = HeatDiffusionMatrix::read_binary(&path).map_err(CliError::stage(STAGE))?;
                build_shnb_sampler(&psi)
            }
            Mode::Structural => {
                let (path, _) = ctx.require(STAGE, SIGNATURES, "diffuse")?;
                let sigs = read_signatures(&path).map_err(CliError::stage(STAGE))?;
                build_structural_sampler(&sigs, n.neighbor_cap).map_err(CliError::stage(STAGE))?
            }
        };
        if sampler.n() != ctx.dataset.train.num_entities() {
            return Err(CliError::Artifact {
                stage: STAGE,
                message: format!(
                    "diffusion covers {} nodes but the vocabulary has {} entities",
                    sampler.n(),
                    ctx.dataset.train.num_entities()
                ),
            });
        }
        let f = train_embeddings(&sampler, &n.train_config()).map_err(CliError::stage(STAGE))?;
        let path = ctx.out(NETWORK);
        ctx.write_rows(STAGE, &path, &f, ctx.entity_tokens(), "")?;
        ctx.write_sidecar(STAGE, &path, serde_json::to_value(n).unwrap())?;
        Ok(f)
    })
}

fn write_kge(ctx: &Context, stage: &'static str, which: Which, emb: &KGEmbedding, epoch_losses: &[f64]) -> Result<(), CliError> {
    let epath = ctx.out(&which.entities_file());
    let rpath = ctx.out(&which.relations_file());
    ctx.write_rows(stage, &epath, &emb.entities, ctx.entity_tokens(), "")?;
    ctx.write_rows(stage, &rpath, &emb.relations, ctx.relation_tokens(), REL_PREFIX)?;
    let details = serde_json::json!({
        "model": emb.model,
        "dim": emb.dim,
        "config": ctx.cfg.kge,
        "epoch_losses": epoch_losses,
    });
    ctx.write_sidecar(stage, &rpath, details.clone())?;
    ctx.write_sidecar(stage, &epath, details)
}

pub fn kge_train(ctx: &Context) -> Result<KGEmbedding, CliError> {
    const STAGE: &str = "kge-train";
    timed(STAGE, || {
        let k = &ctx.cfg.kge;
        let out = train_kge_logged(&ctx.dataset.train, k.model, &k.train_config()).map_err(CliError::stage(STAGE))?;
        if !out.embedding.entities.is_finite() || !out.embedding.relations.is_finite() {
            return Err(CliError::Stage {
                stage: STAGE,
                source: mohone_core::Error::Numeric("training diverged to non-finite values".into()),
            });
        }
        write_kge(ctx, STAGE, Which::Baseline, &out.embedding, &out.epoch_losses)?;
        Ok(out.embedding)
    })
}

pub fn retrofit_stage(ctx: &Context) -> Result<EmbeddingMatrix, CliError> {
    const STAGE: &str = "retrofit";
    timed(STAGE, || {
        let (fpath, _) = ctx.require(STAGE, NETWORK, "embed")?;
        let (qpath, _) = ctx.require(STAGE, &Which::Baseline.entities_file(), "kge-train")?;
        let f = ctx.read_rows(STAGE, &fpath, "", ctx.entity_tokens())?;
        let q_hat = ctx.read_rows(STAGE, &qpath, "", ctx.entity_tokens())?;
        let r = &ctx.cfg.retrofit;
        let neighbors = build_neighbor_sets(&f, r.k).map_err(CliError::stage(STAGE))?;
        let n = q_hat.rows();
        let mut problem = RetrofitProblem::new(q_hat, neighbors).map_err(CliError::stage(STAGE))?;
        problem.alpha = vec![r.alpha; n];
        problem.max_iters = r.max_iters;
        problem.tol = r.tol;
        let out = retrofit(&problem).map_err(CliError::stage(STAGE))?;
        let path = ctx.out(RETROFIT_ENTITIES);
        ctx.write_rows(STAGE, &path, &out.q, ctx.entity_tokens(), "")?;
        ctx.write_sidecar(
            STAGE,
            &path,
            serde_json::json!({ "sweeps": out.sweeps(), "converged": out.converged, "config": r }),
        )?;
        write_json(STAGE, &ctx.out(RETROFIT_LOG), &out.log)?;
        Ok(out.q)
    })
}

pub fn relearn(ctx: &Context) -> Result<KGEmbedding, CliError> {
    const STAGE: &str = "relearn";
    timed(STAGE, || {
        let (qpath, _) = ctx.require(STAGE, RETROFIT_ENTITIES, "retrofit")?;
        let q = ctx.read_rows(STAGE, &qpath, "", ctx.entity_tokens())?;
        let k = &ctx.cfg.kge;
        let out = relearn_relations_logged(&ctx.dataset.train, &q, k.model, &k.train_config())
            .map_err(CliError::stage(STAGE))?;
        write_kge(ctx, STAGE, Which::Infused, &out.embedding, &out.epoch_losses)?;
        Ok(out.embedding)
    })
}

fn load_kge(ctx: &Context, stage: &'static str, which: Which) -> Result<KGEmbedding, CliError> {
    let (epath, meta) = ctx.require(stage, &which.entities_file(), which.producer())?;
    let (rpath, _) = ctx.require(stage, &which.relations_file(), which.producer())?;
    let model: KgeModel = serde_json::from_value(meta.details["model"].clone()).map_err(|e| CliError::Artifact {
        stage,
        message: format!("{}: bad model field: {e}", epath.display()),
    })?;
    let dim = meta.details["dim"].as_u64().ok_or_else(|| CliError::Artifact {
        stage,
        message: format!("{}: missing dim", epath.display()),
    })? as usize;
    let q = ctx.read_rows(stage, &epath, "", ctx.entity_tokens())?;
    let w = ctx.read_rows(stage, &rpath, REL_PREFIX, ctx.relation_tokens())?;
    KGEmbedding::new(model, dim, q, w).map_err(CliError::stage(stage))
}

pub fn eval(ctx: &Context, which: Which) -> Result<EvalReport, CliError> {
    const STAGE: &str = "eval";
    timed(STAGE, || {
        if ctx.dataset.test.is_empty() {
            return Err(CliError::Config("data.test is not set or has no triples".into()));
        }
        let emb = load_kge(ctx, STAGE, which)?;
        let filter = FilterIndex::new(ctx.dataset.all_triples());
        let entities = ctx.dataset.train_entity_mask();
        let relations = ctx.dataset.train_relation_mask();
        let known = KnownVocab {
            entities: &entities,
            relations: &relations,
        };
        let opts = EvalOptions {
            hits: ctx.cfg.eval.hits.clone(),
            parallel: ctx.cfg.eval.parallel,
        };
        let result = evaluate(&emb, &ctx.dataset.test, &filter, Some(&known), &opts).map_err(CliError::stage(STAGE))?;
        let report = EvalReport {
            model: emb.model.name().to_string(),
            dataset: ctx.cfg.data.name.clone(),
            mrr: result.mrr,
            hits: result.hits.clone(),
            skipped: result.skipped,
            n_queries: result.n_queries,
            config_hash: ctx.config_hash.clone(),
            vocab_hash: ctx.vocab_hash.clone(),
        };
        write_atomic(STAGE, &ctx.out(&which.ranks_file()), |p| write_ranks_csv(p, &result))?;
        write_json(STAGE, &ctx.out(&which.eval_file()), &report)?;
        log::info!("{} MRR {:.4}", which.name(), report.mrr);
        Ok(report)
    })
}

fn read_reciprocal_ranks(stage: &'static str, path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(stage, path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|r| r.parse::<u64>().ok())
                .map(|r| 1.0 / r as f64)
                .ok_or_else(|| CliError::Artifact {
                    stage,
                    message: format!("{}: bad line {l:?}", path.display()),
                })
        })
        .collect()
}

pub fn report(ctx: &Context) -> Result<Report, CliError> {
    const STAGE: &str = "report";
    timed(STAGE, || {
        let mut evals = Vec::new();
        let mut rrs = Vec::new();
        for which in [Which::Baseline, Which::Infused] {
            let path = ctx.out(&which.eval_file());
            let ranks = ctx.out(&which.ranks_file());
            if !path.exists() || !ranks.exists() {
                return Err(CliError::MissingArtifact {
                    stage: STAGE,
                    path,
                    producer: "eval",
                });
            }
            let e: EvalReport = read_json(STAGE, &path)?;
            if e.vocab_hash != ctx.vocab_hash {
                return Err(CliError::VocabMismatch {
                    stage: STAGE,
                    path,
                    expected: ctx.vocab_hash.clone(),
                    found: e.vocab_hash,
                });
            }
            evals.push(e);
            rrs.push(read_reciprocal_ranks(STAGE, &ranks)?);
        }
        let e = &ctx.cfg.eval;
        let significance =
            paired_significance(&rrs[1], &rrs[0], e.resamples, e.alpha, e.seed).map_err(CliError::stage(STAGE))?;
        let log_path = ctx.out(RETROFIT_LOG);
        if !log_path.exists() {
            return Err(CliError::MissingArtifact {
                stage: STAGE,
                path: log_path,
                producer: "retrofit",
            });
        }
        let log: Vec<SweepRecord> = read_json(STAGE, &log_path)?;
        let sweeps = log.len().saturating_sub(1);
        let converged = log.last().is_some_and(|r| r.iter > 0 && r.max_row_delta < ctx.cfg.retrofit.tol);
        let infused = evals.pop().unwrap();
        let baseline = evals.pop().unwrap();
        let report = Report {
            dataset: ctx.cfg.data.name.clone(),
            config_hash: ctx.config_hash.clone(),
            vocab_hash: ctx.vocab_hash.clone(),
            baseline,
            infused,
            significance,
            retrofit: RetrofitSummary {
                sweeps,
                converged,
                theta_initial: log.first().map_or(f64::NAN, |r| r.theta),
                theta_final: log.last().map_or(f64::NAN, |r| r.theta),
            },
        };
        write_json(STAGE, &ctx.out(REPORT), &report)?;
        Ok(report)
    })
}

pub fn write_resolved_config(ctx: &Context) -> Result<(), CliError> {
    let path = ctx.out(RESOLVED_CONFIG);
    std::fs::write(&path, ctx.cfg.to_toml()).map_err(|e| io_error("setup", &path, e))
}

/// Runs every stage in order and returns the combined report.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<Report, CliError> {
    let _lock = DirLock::acquire(&cfg.output.dir)?;
    let ctx = Context::new(cfg)?;
    write_resolved_config(&ctx)?;
    graph_build(&ctx)?;
    diffuse(&ctx)?;
    embed(&ctx)?;
    kge_train(&ctx)?;
    retrofit_stage(&ctx)?;
    relearn(&ctx)?;
    eval(&ctx, Which::Baseline)?;
    eval(&ctx, Which::Infused)?;
    report(&ctx)
}
