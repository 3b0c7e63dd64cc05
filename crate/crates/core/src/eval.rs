//! Filtered link-prediction evaluation and paired significance testing.
//!
//! Every test triple yields a head query `(?, r, t)` and a tail query
//! `(h, r, ?)`. Candidates forming another known-true triple are removed
//! before ranking; ties take the average rank, rounded half up.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::kge::KGEmbedding;

pub const DEFAULT_HITS: [usize; 3] = [1, 3, 10];
pub const DEFAULT_RESAMPLES: usize = 10_000;

pub trait TripleScorer: Sync {
    fn num_entities(&self) -> usize;
    fn score(&self, head: usize, relation: usize, tail: usize) -> f64;
}

impl TripleScorer for KGEmbedding {
    fn num_entities(&self) -> usize {
        self.entities.rows()
    }

    fn score(&self, head: usize, relation: usize, tail: usize) -> f64 {
        KGEmbedding::score(self, head, relation, tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Query {
    /// `(?, relation, tail)`
    Head { relation: usize, tail: usize },
    /// `(head, relation, ?)`
    Tail { head: usize, relation: usize },
}

impl Query {
    fn triple(self, candidate: usize) -> Triple {
        match self {
            Query::Head { relation, tail } => Triple::new(candidate, relation, tail),
            Query::Tail { head, relation } => Triple::new(head, relation, candidate),
        }
    }
}

/// Known-true triples, indexed by query.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    heads: HashMap<(usize, usize), HashSet<usize>>,
    tails: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn new<'a, I: IntoIterator<Item = &'a Triple>>(triples: I) -> Self {
        let mut f = FilterIndex::default();
        for t in triples {
            f.heads.entry((t.relation, t.tail)).or_default().insert(t.head);
            f.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
        }
        f
    }

    pub fn known(&self, q: Query) -> Option<&HashSet<usize>> {
        match q {
            Query::Head { relation, tail } => self.heads.get(&(relation, tail)),
            Query::Tail { head, relation } => self.tails.get(&(head, relation)),
        }
    }
}

fn rank_from_counts(greater: u64, ties: u64) -> u64 {
    1 + greater + (ties + 1) / 2
}

fn rank_with<S: TripleScorer + ?Sized>(
    scorer: &S,
    q: Query,
    truth: usize,
    skip: impl Fn(usize) -> bool,
) -> u64 {
    let tt = q.triple(truth);
    let target = scorer.score(tt.head, tt.relation, tt.tail);
    let (mut greater, mut ties) = (0u64, 0u64);
    for c in 0..scorer.num_entities() {
        if c == truth || skip(c) {
            continue;
        }
        let t = q.triple(c);
        let s = scorer.score(t.head, t.relation, t.tail);
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    rank_from_counts(greater, ties)
}

pub fn rank_filtered<S: TripleScorer + ?Sized>(scorer: &S, q: Query, truth: usize, filter: &FilterIndex) -> u64 {
    let known = filter.known(q);
    rank_with(scorer, q, truth, |c| known.is_some_and(|k| k.contains(&c)))
}

pub fn rank_raw<S: TripleScorer + ?Sized>(scorer: &S, q: Query, truth: usize) -> u64 {
    rank_with(scorer, q, truth, |_| false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    /// Two entries per evaluated triple: head query, then tail query.
    pub ranks: Vec<u64>,
    pub reciprocal_ranks: Vec<f64>,
    pub skipped: usize,
    pub n_queries: usize,
}

/// Which entities and relations the scorer was trained on.
#[derive(Debug, Clone)]
pub struct KnownVocab<'a> {
    pub entities: &'a [bool],
    pub relations: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub hits: Vec<usize>,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            hits: DEFAULT_HITS.to_vec(),
            parallel: false,
        }
    }
}

/// MRR and Hits@k over the given ranks, summed in index order.
pub fn summarize(ranks: Vec<u64>, hits: &[usize], skipped: usize) -> Result<EvalResult> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("no evaluable queries".into()));
    }
    let n = ranks.len() as f64;
    let reciprocal_ranks: Vec<f64> = ranks.iter().map(|&r| 1.0 / r as f64).collect();
    let mrr = reciprocal_ranks.iter().sum::<f64>() / n;
    let hits = hits
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as u64).count() as f64 / n))
        .collect();
    Ok(EvalResult {
        mrr,
        hits,
        n_queries: ranks.len(),
        ranks,
        reciprocal_ranks,
        skipped,
    })
}

pub fn evaluate<S: TripleScorer + ?Sized>(
    scorer: &S,
    test: &[Triple],
    filter: &FilterIndex,
    known: Option<&KnownVocab<'_>>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let usable = |t: &Triple| match known {
        None => true,
        Some(k) => {
            k.entities.get(t.head).copied().unwrap_or(false)
                && k.entities.get(t.tail).copied().unwrap_or(false)
                && k.relations.get(t.relation).copied().unwrap_or(false)
        }
    };
    let kept: Vec<Triple> = test.iter().copied().filter(usable).collect();
    let skipped = 2 * (test.len() - kept.len());
    if skipped > 0 {
        log::warn!("skipped {skipped} queries with entities or relations unseen in training");
    }
    let rank_pair = |t: &Triple| {
        [
            rank_filtered(scorer, Query::Head { relation: t.relation, tail: t.tail }, t.head, filter),
            rank_filtered(scorer, Query::Tail { head: t.head, relation: t.relation }, t.tail, filter),
        ]
    };
    let pairs: Vec<[u64; 2]> = if opts.parallel {
        kept.par_iter().map(rank_pair).collect()
    } else {
        kept.iter().map(rank_pair).collect()
    };
    summarize(pairs.into_iter().flatten().collect(), &opts.hits, skipped)
}

/// One line per query: `query,rank,reciprocal_rank`.
pub fn write_ranks_csv(path: &Path, result: &EvalResult) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("query,rank,reciprocal_rank\n");
    for (i, (r, rr)) in result.ranks.iter().zip(&result.reciprocal_ranks).enumerate() {
        body.push_str(&format!("{i},{r},{rr}\n"));
    }
    out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub mean_diff: f64,
    pub p_value: f64,
    pub significant: bool,
    pub resamples: usize,
}

/// Two-sided paired bootstrap on `a - b`.
///
/// Resamples the centred differences and counts resampled means at least as
/// far from zero as the observed mean; `p = (count + 1) / (total + 1)`. When
/// `n^n <= resamples` every resample is enumerated instead of drawn.
pub fn paired_significance(a: &[f64], b: &[f64], resamples: usize, alpha: f64, seed: u64) -> Result<Significance> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() || resamples == 0 {
        return Err(Error::InvalidArgument("need at least one query and one resample".into()));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = diffs.iter().map(|d| d - observed).collect();
    let threshold = observed.abs() * (1.0 - 1e-12);
    let extreme = |sum: f64| (sum / n as f64).abs() >= threshold;

    let exhaustive = (n as f64).powi(n.min(64) as i32) <= resamples as f64;
    let (count, total) = if exhaustive {
        let total = n.pow(n as u32);
        let mut idx = vec![0usize; n];
        let mut count = 0usize;
        for _ in 0..total {
            if extreme(idx.iter().map(|&i| centred[i]).sum()) {
                count += 1;
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < n {
                    break;
                }
                *slot = 0;
            }
        }
        (count, total)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut count = 0usize;
        for _ in 0..resamples {
            let sum: f64 = (0..n).map(|_| centred[rng.random_range(0..n)]).sum();
            if extreme(sum) {
                count += 1;
            }
        }
        (count, resamples)
    };
    let p_value = (count + 1) as f64 / (total + 1) as f64;
    Ok(Significance {
        mean_diff: observed,
        p_value,
        significant: p_value < alpha,
        resamples: total,
    })
}
