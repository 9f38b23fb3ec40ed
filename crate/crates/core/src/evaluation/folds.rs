use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Station → fold map, reused across methods, days and variables so that
/// comparisons are paired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.get(id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for f in self.folds.values() {
            s[*f] += 1;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// Sorts ids, shuffles them with a ChaCha8 stream seeded by `seed`, and deals
/// them round-robin into `k` folds.
pub fn kfold_split<S: AsRef<str>>(ids: &[S], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::Fold(format!("k = {k}, need at least 2")));
    }
    let mut sorted: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(EvalError::Fold("duplicate station ids".into()));
    }
    if sorted.len() < k {
        return Err(EvalError::Fold(format!("{} stations cannot fill {k} folds", sorted.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let folds = sorted.into_iter().enumerate().map(|(i, id)| (id, i % k)).collect();
    Ok(FoldAssignment { seed, k, folds })
}
