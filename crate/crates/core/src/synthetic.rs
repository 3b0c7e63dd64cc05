//! Small synthetic knowledge graphs for tests and desk-scale experiments.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::graph::{generators, Dataset};

pub type TokenTriple = (String, String, String);

/// KG whose entities fall into communities, each with its own relations.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityKgConfig {
    pub entities: usize,
    pub communities: usize,
    pub relations_per_community: usize,
    /// Distinct triples to generate before splitting.
    pub triples: usize,
    /// Probability that a tail is drawn from the head's community.
    pub intra_fraction: f64,
    /// Member `m` of a community is drawn with weight `(m + 1)^-exponent`.
    pub popularity_exponent: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CommunityKgConfig {
    fn default() -> Self {
        CommunityKgConfig {
            entities: 200,
            communities: 10,
            relations_per_community: 2,
            triples: 1200,
            intra_fraction: 0.9,
            popularity_exponent: 0.5,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticKg {
    pub train: Vec<TokenTriple>,
    pub valid: Vec<TokenTriple>,
    pub test: Vec<TokenTriple>,
    /// Community of each entity, indexed by the number in its token.
    pub community: Vec<usize>,
}

pub fn entity_token(i: usize) -> String {
    format!("e{i:04}")
}

impl SyntheticKg {
    pub fn to_dataset(&self) -> Dataset {
        Dataset::from_tokens(&self.train, &self.valid, &self.test)
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, rows) in [("train.txt", &self.train), ("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let path = dir.join(name);
            let body: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn community_kg(cfg: &CommunityKgConfig) -> Result<SyntheticKg> {
    let (n, c) = (cfg.entities, cfg.communities);
    if c < 1 || n < 2 * c || cfg.relations_per_community < 1 {
        return Err(Error::InvalidArgument(
            "need at least one relation and two entities per community".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.intra_fraction)
        || cfg.valid_fraction < 0.0
        || cfg.test_fraction < 0.0
        || cfg.valid_fraction + cfg.test_fraction >= 1.0
    {
        return Err(Error::InvalidArgument("fractions out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let community: Vec<usize> = (0..n).map(|i| i % c).collect();
    let members: Vec<Vec<usize>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();
    let pickers: Vec<WeightedAliasIndex<f64>> = members
        .iter()
        .map(|m| {
            let w = (0..m.len()).map(|r| (r as f64 + 1.0).powf(-cfg.popularity_exponent)).collect();
            WeightedAliasIndex::new(w).map_err(|e| Error::Internal(e.to_string()))
        })
        .collect::<Result<_>>()?;

    let max_distinct = n * (n - 1) * c * cfg.relations_per_community;
    if cfg.triples > max_distinct / 2 {
        return Err(Error::InvalidArgument("too many triples requested".into()));
    }
    let mut seen = HashSet::new();
    let mut triples = Vec::with_capacity(cfg.triples);
    while triples.len() < cfg.triples {
        let k = rng.random_range(0..c);
        let rel = k * cfg.relations_per_community + rng.random_range(0..cfg.relations_per_community);
        let h = members[k][pickers[k].sample(&mut rng)];
        let t = if rng.random_bool(cfg.intra_fraction) {
            members[k][pickers[k].sample(&mut rng)]
        } else {
            rng.random_range(0..n)
        };
        if h != t && seen.insert((h, rel, t)) {
            triples.push((h, rel, t));
        }
    }
    triples.shuffle(&mut rng);

    let n_test = (cfg.test_fraction * triples.len() as f64).round() as usize;
    let n_valid = (cfg.valid_fraction * triples.len() as f64).round() as usize;
    let held = triples.split_off(triples.len() - n_test - n_valid);
    let mut ent_seen = vec![false; n];
    let mut rel_seen = vec![false; c * cfg.relations_per_community];
    for &(h, r, t) in &triples {
        ent_seen[h] = true;
        ent_seen[t] = true;
        rel_seen[r] = true;
    }
    // Held-out triples touching anything unseen in training go back to train.
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (i, tr) in held.into_iter().enumerate() {
        let (h, r, t) = tr;
        if !(ent_seen[h] && ent_seen[t] && rel_seen[r]) {
            triples.push(tr);
        } else if i < n_test {
            test.push(tr);
        } else {
            valid.push(tr);
        }
    }
    let tok = |(h, r, t): (usize, usize, usize)| {
        (
            entity_token(h),
            format!("r{}_{}", r / cfg.relations_per_community, r % cfg.relations_per_community),
            entity_token(t),
        )
    };
    Ok(SyntheticKg {
        train: triples.into_iter().map(tok).collect(),
        valid: valid.into_iter().map(tok).collect(),
        test: test.into_iter().map(tok).collect(),
        community,
    })
}

/// Barbell graph as a single-relation KG; `community` holds the structural role.
pub fn barbell_kg(clique: usize, path_len: usize) -> SyntheticKg {
    let g = generators::barbell(clique, path_len);
    let train = g
        .edges()
        .into_iter()
        .map(|(u, v)| (entity_token(u), "link".to_string(), entity_token(v)))
        .collect();
    SyntheticKg {
        train,
        valid: Vec::new(),
        test: Vec::new(),
        community: generators::barbell_roles(clique, path_len),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn community_kg_shape() {
        let cfg = CommunityKgConfig::default();
        let kg = community_kg(&cfg).unwrap();
        assert_eq!(kg.train.len() + kg.valid.len() + kg.test.len(), cfg.triples);
        assert!(kg.test.len() > 100);
        let ds = kg.to_dataset();
        assert_eq!(ds.train.num_entities(), 200);
        let mask = ds.train_entity_mask();
        assert!(ds.test.iter().all(|t| mask[t.head] && mask[t.tail]));
        let intra = kg
            .train
            .iter()
            .filter(|(h, _, t)| {
                let c = |s: &str| s[1..].parse::<usize>().unwrap() % cfg.communities;
                c(h) == c(t)
            })
            .count();
        assert!(intra as f64 > 0.85 * kg.train.len() as f64);
        assert_eq!(kg, community_kg(&cfg).unwrap());
    }

    #[test]
    fn barbell_kg_has_one_relation() {
        let kg = barbell_kg(4, 2);
        assert_eq!(kg.train.len(), 15);
        assert!(kg.train.iter().all(|(_, r, _)| r == "link"));
        assert_eq!(kg.community.len(), 10);
    }
}
