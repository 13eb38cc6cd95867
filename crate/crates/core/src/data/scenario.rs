//! Sparsity scenario construction: a 21K-token train split with fixed 9K dev
//! and >=5K test, plus nested 12K/6K/1K sub-draws of whole documents.

use super::{DataError, Dataset};
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TRAIN_TOKENS: usize = 21_000;
pub const DEV_TOKENS: usize = 9_000;
pub const TEST_TOKENS: usize = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KLabel {
    K1,
    K6,
    K12,
    K21,
}

impl KLabel {
    pub const ALL: [KLabel; 4] = [KLabel::K1, KLabel::K6, KLabel::K12, KLabel::K21];

    pub fn tokens(self) -> usize {
        match self {
            KLabel::K1 => 1_000,
            KLabel::K6 => 6_000,
            KLabel::K12 => 12_000,
            KLabel::K21 => 21_000,
        }
    }

    pub fn parse(s: &str) -> Option<KLabel> {
        match s.to_ascii_uppercase().as_str() {
            "1K" => Some(KLabel::K1),
            "6K" => Some(KLabel::K6),
            "12K" => Some(KLabel::K12),
            "21K" => Some(KLabel::K21),
            _ => None,
        }
    }
}

impl std::fmt::Display for KLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KLabel::K1 => "1K",
            KLabel::K6 => "6K",
            KLabel::K12 => "12K",
            KLabel::K21 => "21K",
        };
        f.write_str(s)
    }
}

/// One sparsity scenario; documents are indices into the source dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityScenario {
    pub k: KLabel,
    pub seed: u64,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// All four scenarios of one dataset, sharing dev and test.
#[derive(Clone, Debug)]
pub struct ScenarioSet {
    pub dataset_id: String,
    pub seed: u64,
    pub scenarios: Vec<SparsityScenario>,
}

impl ScenarioSet {
    pub fn get(&self, k: KLabel) -> &SparsityScenario {
        self.scenarios
            .iter()
            .find(|s| s.k == k)
            .expect("all four k scenarios present")
    }
}

fn take_until(
    order: &mut impl Iterator<Item = usize>,
    dataset: &Dataset,
    threshold: usize,
) -> (Vec<usize>, usize) {
    let mut picked = Vec::new();
    let mut tokens = 0usize;
    for idx in order.by_ref() {
        tokens += dataset.documents[idx].token_count();
        picked.push(idx);
        if tokens >= threshold {
            break;
        }
    }
    (picked, tokens)
}

/// Shuffles documents by seed, greedily fills train to >=21K tokens and dev
/// to >=9K with whole documents, leaves the rest as test, then draws nested
/// 12K/6K/1K train subsets by re-shuffling the 21K train documents.
pub fn build_scenarios(dataset: &Dataset, seed: u64) -> Result<ScenarioSet, DataError> {
    let total = dataset.token_count();
    let required = TRAIN_TOKENS + DEV_TOKENS + TEST_TOKENS;
    if total < required {
        return Err(DataError::InsufficientData {
            dataset: dataset.id.clone(),
            tokens: total,
            required,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut order: Vec<usize> = (0..dataset.documents.len()).collect();
    order.shuffle(&mut rng);

    let mut it = order.into_iter();
    let (train21, train_tokens) = take_until(&mut it, dataset, TRAIN_TOKENS);
    let (dev, dev_tokens) = take_until(&mut it, dataset, DEV_TOKENS);
    let test: Vec<usize> = it.collect();
    let test_tokens: usize = test
        .iter()
        .map(|&i| dataset.documents[i].token_count())
        .sum();

    if train_tokens < TRAIN_TOKENS || dev_tokens < DEV_TOKENS || test_tokens < TEST_TOKENS {
        return Err(DataError::InsufficientData {
            dataset: dataset.id.clone(),
            tokens: total,
            required,
        });
    }

    // Nested sub-draws: one re-shuffle, all four trains are prefixes of it.
    let mut sub = train21.clone();
    let mut sub_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    sub.shuffle(&mut sub_rng);

    let prefix_for = |threshold: usize| -> Vec<usize> {
        let mut tokens = 0usize;
        let mut out = Vec::new();
        for &idx in &sub {
            tokens += dataset.documents[idx].token_count();
            out.push(idx);
            if tokens >= threshold {
                break;
            }
        }
        out
    };

    let scenarios = KLabel::ALL
        .iter()
        .map(|&k| SparsityScenario {
            k,
            seed,
            train: if k == KLabel::K21 {
                sub.clone()
            } else {
                prefix_for(k.tokens())
            },
            dev: dev.clone(),
            test: test.clone(),
        })
        .collect();

    Ok(ScenarioSet {
        dataset_id: dataset.id.clone(),
        seed,
        scenarios,
    })
}

/// On-disk form of one scenario, listing document ids per split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ScenarioManifest {
    pub version: u32,
    pub dataset: String,
    pub k: String,
    pub seed: u64,
    pub train_tokens: usize,
    pub dev_tokens: usize,
    pub test_tokens: usize,
    pub train_docs: Vec<String>,
    pub dev_docs: Vec<String>,
    pub test_docs: Vec<String>,
}

impl ScenarioManifest {
    pub fn from_scenario(dataset: &Dataset, sc: &SparsityScenario) -> ScenarioManifest {
        let ids = |idxs: &[usize]| -> Vec<String> {
            idxs.iter()
                .map(|&i| dataset.documents[i].doc_id.clone())
                .collect()
        };
        let tokens = |idxs: &[usize]| -> usize {
            idxs.iter()
                .map(|&i| dataset.documents[i].token_count())
                .sum()
        };
        ScenarioManifest {
            version: 1,
            dataset: dataset.id.clone(),
            k: sc.k.to_string(),
            seed: sc.seed,
            train_tokens: tokens(&sc.train),
            dev_tokens: tokens(&sc.dev),
            test_tokens: tokens(&sc.test),
            train_docs: ids(&sc.train),
            dev_docs: ids(&sc.dev),
            test_docs: ids(&sc.test),
        }
    }

    /// Resolves document ids back to indices in `dataset`.
    pub fn to_scenario(&self, dataset: &Dataset) -> Result<SparsityScenario, DataError> {
        let k = KLabel::parse(&self.k)
            .ok_or_else(|| DataError::BadManifest(format!("unknown k label {:?}", self.k)))?;
        let lookup = |ids: &[String]| -> Result<Vec<usize>, DataError> {
            ids.iter()
                .map(|id| {
                    dataset
                        .documents
                        .iter()
                        .position(|d| &d.doc_id == id)
                        .ok_or_else(|| {
                            DataError::BadManifest(format!(
                                "document {id:?} not found in dataset {:?}",
                                dataset.id
                            ))
                        })
                })
                .collect()
        };
        Ok(SparsityScenario {
            k,
            seed: self.seed,
            train: lookup(&self.train_docs)?,
            dev: lookup(&self.dev_docs)?,
            test: lookup(&self.test_docs)?,
        })
    }
}
