//! Pipeline configuration: a TOML file, then `MOHONE_SECTION_KEY` environment
//! variables, then `section.key=value` overrides, later sources winning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mohone_core::diffusion::{DiffusionMethod, HeatKernelConfig, DEFAULT_BINS};
use mohone_core::kge::{KgeModel, KgeTrainConfig, Optimizer};
use mohone_core::netembed::{SamplerMode, TrainConfig, DEFAULT_NEIGHBOR_CAP};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "MOHONE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: "dataset".into(),
            train: None,
            valid: None,
            test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub scale: f64,
    pub method: DiffusionMethod,
    pub chebyshev_degree: usize,
    pub clip_epsilon: f64,
    pub exact_cap: usize,
    pub bins: usize,
    pub parallel: bool,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = HeatKernelConfig::default();
        DiffusionSection {
            scale: d.scale,
            method: d.method,
            chebyshev_degree: d.chebyshev_degree,
            clip_epsilon: d.clip_epsilon,
            exact_cap: d.exact_cap,
            bins: DEFAULT_BINS,
            parallel: d.parallel,
        }
    }
}

impl DiffusionSection {
    pub fn kernel(&self) -> HeatKernelConfig {
        HeatKernelConfig {
            scale: self.scale,
            method: self.method,
            chebyshev_degree: self.chebyshev_degree,
            clip_epsilon: self.clip_epsilon,
            exact_cap: self.exact_cap,
            parallel: self.parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Shnb,
    Structural,
}

impl From<Mode> for SamplerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Shnb => SamplerMode::Shnb,
            Mode::Structural => SamplerMode::Structural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetembedSection {
    pub mode: Mode,
    pub dim: usize,
    pub epochs: usize,
    pub pairs_per_node: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub neighbor_cap: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for NetembedSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        NetembedSection {
            mode: Mode::Shnb,
            dim: t.dim,
            epochs: t.epochs,
            pairs_per_node: t.pairs_per_node,
            negatives: t.negatives,
            learning_rate: t.learning_rate,
            lr_floor: t.lr_floor,
            neighbor_cap: DEFAULT_NEIGHBOR_CAP,
            seed: t.seed,
            threads: t.threads,
        }
    }
}

impl NetembedSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            epochs: self.epochs,
            pairs_per_node: self.pairs_per_node,
            negatives: self.negatives,
            learning_rate: self.learning_rate,
            lr_floor: self.lr_floor,
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgeSection {
    pub model: KgeModel,
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    /// Defaults to 0.01 for SGD and 0.05 for Adagrad.
    pub learning_rate: Option<f64>,
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for KgeSection {
    fn default() -> Self {
        let k = KgeTrainConfig::default();
        KgeSection {
            model: KgeModel::TransE,
            dim: k.dim,
            batch_size: k.batch_size,
            epochs: k.epochs,
            margin: k.margin,
            learning_rate: None,
            lr_decay: k.lr_decay,
            optimizer: k.optimizer,
            negatives_per_positive: k.negatives_per_positive,
            seed: k.seed,
        }
    }
}

impl KgeSection {
    pub fn train_config(&self) -> KgeTrainConfig {
        let learning_rate = self.learning_rate.unwrap_or(match self.optimizer {
            Optimizer::Sgd => 0.01,
            Optimizer::Adagrad => 0.05,
        });
        KgeTrainConfig {
            dim: self.dim,
            batch_size: self.batch_size,
            epochs: self.epochs,
            margin: self.margin,
            learning_rate,
            lr_decay: self.lr_decay,
            optimizer: self.optimizer,
            negatives_per_positive: self.negatives_per_positive,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrofitSection {
    pub k: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RetrofitSection {
    fn default() -> Self {
        RetrofitSection {
            k: mohone_core::retrofit::DEFAULT_K,
            alpha: 1.0,
            max_iters: mohone_core::retrofit::DEFAULT_MAX_ITERS,
            tol: mohone_core::retrofit::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub hits: Vec<usize>,
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            hits: mohone_core::eval::DEFAULT_HITS.to_vec(),
            resamples: mohone_core::eval::DEFAULT_RESAMPLES,
            alpha: 0.05,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "mohone-out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub diffusion: DiffusionSection,
    pub netembed: NetembedSection,
    pub kge: KgeSection,
    pub retrofit: RetrofitSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses an override value as a TOML value, falling back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, section: &str, key: &str, raw: &str) -> Result<(), CliError> {
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sec = entry
        .as_table_mut()
        .ok_or_else(|| bad(format!("[{section}] is not a table")))?;
    sec.insert(key.to_string(), parse_value(raw));
    Ok(())
}

impl PipelineConfig {
    /// Loads `path` (if any), applies environment overrides from `env` and then
    /// the `section.key=value` strings in `sets`.
    pub fn resolve<I>(path: Option<&Path>, env: I, sets: &[String]) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| bad(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| bad(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        env.sort();
        for (k, v) in env {
            let rest = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            let (section, key) = rest
                .split_once('_')
                .ok_or_else(|| bad(format!("environment override {k} needs SECTION_KEY")))?;
            apply_override(&mut table, section, key, &v)?;
        }
        for s in sets {
            let (lhs, value) = s
                .split_once('=')
                .ok_or_else(|| bad(format!("override {s:?} is not section.key=value")))?;
            let (section, key) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| bad(format!("override {s:?} is not section.key=value")))?;
            apply_override(&mut table, section, key, value.trim())?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.diffusion
            .kernel()
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        if self.diffusion.bins < 1 {
            return Err(bad("diffusion.bins must be >= 1"));
        }
        let n = &self.netembed;
        n.train_config().validate().map_err(|e| bad(e.to_string()))?;
        if n.epochs < 10 {
            return Err(bad("netembed.epochs must be >= 10"));
        }
        if n.neighbor_cap < 1 {
            return Err(bad("netembed.neighbor_cap must be >= 1"));
        }
        self.kge
            .train_config()
            .validate(self.kge.model)
            .map_err(|e| bad(e.to_string()))?;
        let r = &self.retrofit;
        if r.k < 1 || !(r.alpha > 0.0) || r.max_iters < 1 || !(r.tol >= 0.0) {
            return Err(bad("retrofit needs k >= 1, alpha > 0, max_iters >= 1, tol >= 0"));
        }
        let e = &self.eval;
        if e.hits.is_empty() || e.hits.contains(&0) || e.resamples < 1 || !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(bad("eval needs hits >= 1, resamples >= 1 and 0 < alpha < 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form. The output directory is left out
    /// so that the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
