use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Dataset, SamplePair};
use crate::error::{FreaError, Result};

/// Subject to fold mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.folds.get(subject_id).copied()
    }

    /// Sorted subject ids of one fold.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Shuffles the subjects with `seed` and deals them round-robin into `k` folds.
pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.len();
    if k < 2 || k > n {
        return Err(FreaError::InvalidArgument(format!(
            "k must lie in 2..={n} for {n} subjects, got {k}"
        )));
    }
    let mut ids: Vec<String> = dataset.subject_ids().iter().map(|s| s.to_string()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = ids.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldAssignment { k, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Every fold except the round's.
    Train,
    /// The round's fold.
    Test,
}

/// Samples of one split of round `round`. The test split comes in subject
/// order; the train split is shuffled with a seed derived from `(seed, epoch)`.
pub fn iterate<'a>(
    dataset: &'a Dataset,
    folds: &FoldAssignment,
    round: usize,
    split: Split,
    seed: u64,
    epoch: usize,
) -> Result<Vec<&'a SamplePair>> {
    if round >= folds.k {
        return Err(FreaError::InvalidArgument(format!(
            "round {round} out of range for k = {}",
            folds.k
        )));
    }
    let mut out = Vec::new();
    for s in dataset.samples() {
        let fold = folds.fold_of(&s.subject_id).ok_or_else(|| {
            FreaError::Dataset(format!("subject {} has no fold", s.subject_id))
        })?;
        if (fold == round) == (split == Split::Test) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(FreaError::Dataset(format!("empty {split:?} split in round {round}")));
    }
    if split == Split::Train {
        out = epoch_order(&out, seed, epoch);
    }
    Ok(out)
}

/// Training order for one epoch, shuffled with a seed derived from `(seed, epoch)`.
pub fn epoch_order<'a>(samples: &[&'a SamplePair], seed: u64, epoch: usize) -> Vec<&'a SamplePair> {
    let mut out = samples.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, epoch as u64)));
    out
}
