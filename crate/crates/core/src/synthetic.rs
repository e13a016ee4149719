//! Seeded synthetic temporal knowledge graphs.
//!
//! Each relation maps subjects to objects through a fixed permutation that
//! changes between eras (contiguous timestamp ranges), and each fact recurs
//! at several timestamps of its era. Held-out facts are therefore mostly
//! recoverable from repeats, and the era structure rewards time-aware
//! curvature.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RawQuadruple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub relations: usize,
    pub timestamps: usize,
    pub eras: usize,
    /// Distinct `(s, r, era)` facts before temporal repetition.
    pub base_facts: usize,
    /// Timestamps drawn per base fact (duplicates collapse).
    pub repeats: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 60,
            relations: 4,
            timestamps: 12,
            eras: 2,
            base_facts: 150,
            repeats: 3,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: Vec<RawQuadruple>,
    pub valid: Vec<RawQuadruple>,
    pub test: Vec<RawQuadruple>,
}

impl SyntheticSplits {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_raw(&self.train, &self.valid, &self.test)
    }
}

pub fn entity_name(e: usize) -> String {
    format!("e{e:05}")
}

pub fn relation_name(r: usize) -> String {
    format!("r{r:03}")
}

pub fn timestamp_name(t: usize) -> String {
    format!("t{t:04}")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticSplits> {
    let SyntheticConfig {
        entities,
        relations,
        timestamps,
        eras,
        base_facts,
        repeats,
        valid_fraction,
        test_fraction,
        seed,
    } = *config;
    if entities < 2 || relations == 0 || timestamps == 0 || base_facts == 0 || repeats == 0 {
        return Err(Error::Config(
            "synthetic graph sizes must be positive (at least 2 entities)".into(),
        ));
    }
    if eras == 0 || eras > timestamps {
        return Err(Error::Config(format!("eras must lie in 1..={timestamps}")));
    }
    let held = valid_fraction + test_fraction;
    if !(valid_fraction >= 0.0 && test_fraction >= 0.0 && held < 1.0) {
        return Err(Error::Config(
            "split fractions must be non-negative and sum below 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // maps[r][era] is a permutation of the entities
    let maps: Vec<Vec<Vec<usize>>> = (0..relations)
        .map(|_| {
            (0..eras)
                .map(|_| {
                    let mut perm: Vec<usize> = (0..entities).collect();
                    perm.shuffle(&mut rng);
                    perm
                })
                .collect()
        })
        .collect();
    let era_span = |era: usize| (era * timestamps / eras, (era + 1) * timestamps / eras);

    let mut facts = BTreeSet::new();
    for _ in 0..base_facts {
        let s = rng.gen_range(0..entities);
        let r = rng.gen_range(0..relations);
        let era = rng.gen_range(0..eras);
        let o = maps[r][era][s];
        let (lo, hi) = era_span(era);
        for _ in 0..repeats {
            facts.insert((s, r, o, rng.gen_range(lo..hi)));
        }
    }
    let mut facts: Vec<_> = facts.into_iter().collect();
    facts.shuffle(&mut rng);

    let n = facts.len();
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    let n_test = (n as f64 * test_fraction).round() as usize;
    let to_raw = |f: &[(usize, usize, usize, usize)]| {
        f.iter()
            .map(|&(s, r, o, t)| RawQuadruple {
                subject: entity_name(s),
                relation: relation_name(r),
                object: entity_name(o),
                timestamp: timestamp_name(t),
            })
            .collect::<Vec<_>>()
    };
    let train = to_raw(&facts[n_valid + n_test..]);
    if train.is_empty() {
        return Err(Error::Config("synthetic training split is empty".into()));
    }
    Ok(SyntheticSplits {
        valid: to_raw(&facts[..n_valid]),
        test: to_raw(&facts[n_valid..n_valid + n_test]),
        train,
    })
}
