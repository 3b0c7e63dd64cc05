use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::diffusion::{HeatDiffusionMatrix, HeatSignature};
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBOR_CAP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Context drawn from the node's own heat column.
    Shnb,
    /// Context drawn from nodes with similar heat-value distributions.
    Structural,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shnb" => Ok(SamplerMode::Shnb),
            "structural" | "struct" => Ok(SamplerMode::Structural),
            other => Err(Error::InvalidArgument(format!("unknown sampler mode {other:?}"))),
        }
    }
}

/// Context distribution of one node over a sorted candidate list.
#[derive(Debug, Clone)]
struct NodeTable {
    candidates: Vec<usize>,
    weights: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl NodeTable {
    fn new(mut pairs: Vec<(usize, f64)>) -> Option<Self> {
        pairs.retain(|&(_, w)| w > 0.0);
        if pairs.is_empty() {
            return None;
        }
        pairs.sort_by_key(|&(v, _)| v);
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        let (candidates, weights): (Vec<usize>, Vec<f64>) =
            pairs.into_iter().map(|(v, w)| (v, w / total)).unzip();
        let alias = WeightedAliasIndex::new(weights.clone()).ok()?;
        Some(NodeTable {
            candidates,
            weights,
            alias,
        })
    }
}

/// Per-node context distributions with O(1) alias sampling. A node whose
/// distribution has no mass off itself is unsampleable.
#[derive(Debug, Clone)]
pub struct PairSampler {
    mode: SamplerMode,
    tables: Vec<Option<NodeTable>>,
    neighbor_cap: Option<usize>,
}

impl PairSampler {
    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.tables.len()
    }

    pub fn neighbor_cap(&self) -> Option<usize> {
        self.neighbor_cap
    }

    pub fn is_sampleable(&self, u: usize) -> bool {
        self.tables[u].is_some()
    }

    pub fn sampleable_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&u| self.is_sampleable(u)).collect()
    }

    /// Candidates of `u` with their probabilities, sorted by node id.
    pub fn distribution(&self, u: usize) -> Vec<(usize, f64)> {
        match &self.tables[u] {
            Some(t) => t.candidates.iter().copied().zip(t.weights.iter().copied()).collect(),
            None => Vec::new(),
        }
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        match &self.tables[u] {
            Some(t) => t.candidates.binary_search(&v).map_or(0.0, |k| t.weights[k]),
            None => 0.0,
        }
    }

    pub fn weights_dense(&self, u: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (v, w) in self.distribution(u) {
            out[v] = w;
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> Option<usize> {
        self.tables[u]
            .as_ref()
            .map(|t| t.candidates[t.alias.sample(rng)])
    }
}

/// `Pr(v | u) = Psi_u(v) / sum_{w != u} Psi_u(w)` for `v != u`.
pub fn build_shnb_sampler(psi: &HeatDiffusionMatrix) -> PairSampler {
    let tables = (0..psi.n())
        .map(|u| {
            let pairs = psi
                .column(u)
                .iter()
                .enumerate()
                .filter(|&(v, _)| v != u)
                .map(|(v, &w)| (v, w))
                .collect();
            NodeTable::new(pairs)
        })
        .collect();
    PairSampler {
        mode: SamplerMode::Shnb,
        tables,
        neighbor_cap: None,
    }
}

/// Jensen-Shannon divergence in nats, with `0 log 0 = 0`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total.max(0.0))
}

/// For each `u`: divergences `D(u, v)` to every other node, standardized to
/// z-scores across `v`, weighted by `softmax(-z)` over the `cap`
/// smallest-divergence nodes. Nodes tied with the `cap`-th smallest
/// divergence are all kept, so the tables do not depend on node numbering.
/// Zero variance falls back to uniform weights.
pub fn build_structural_sampler(signatures: &[HeatSignature], cap: usize) -> Result<PairSampler> {
    if cap == 0 {
        return Err(Error::InvalidArgument("neighbor cap must be >= 1".into()));
    }
    let n = signatures.len();
    for (i, s) in signatures.iter().enumerate() {
        if s.node != i {
            return Err(Error::InvalidArgument(format!(
                "signature {i} belongs to node {}",
                s.node
            )));
        }
    }
    let mut tables = Vec::with_capacity(n);
    for u in 0..n {
        let mut div = Vec::with_capacity(n.saturating_sub(1));
        for v in (0..n).filter(|&v| v != u) {
            div.push((v, js_divergence(&signatures[u].histogram, &signatures[v].histogram)?));
        }
        tables.push(structural_table(&div, cap));
    }
    Ok(PairSampler {
        mode: SamplerMode::Structural,
        tables,
        neighbor_cap: Some(cap),
    })
}

fn structural_table(div: &[(usize, f64)], cap: usize) -> Option<NodeTable> {
    if div.is_empty() {
        return None;
    }
    let k = div.len() as f64;
    let mean = div.iter().map(|&(_, d)| d).sum::<f64>() / k;
    let var = div.iter().map(|&(_, d)| (d - mean).powi(2)).sum::<f64>() / k;
    let std = var.sqrt();

    let mut sorted: Vec<f64> = div.iter().map(|&(_, d)| d).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cutoff = sorted[cap.min(sorted.len()) - 1];
    let kept: Vec<(usize, f64)> = div.iter().copied().filter(|&(_, d)| d <= cutoff).collect();

    let pairs = if std <= 1e-12 {
        kept.iter().map(|&(v, _)| (v, 1.0)).collect()
    } else {
        let z: Vec<f64> = kept.iter().map(|&(_, d)| (d - mean) / std).collect();
        let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
        kept.iter()
            .zip(&z)
            .map(|(&(v, _), &zv)| (v, (-(zv - zmin)).exp()))
            .collect()
    };
    NodeTable::new(pairs)
}
