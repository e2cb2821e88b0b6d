//! Stratified k-fold splitting and fixed train/validation/test splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AnnotationMatrix;
use crate::{rng, Error, Result};

/// Fold assignment of every instance plus the per-fold annotator coverage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub k: usize,
    pub seed: u64,
    /// Fold id of each instance.
    pub assignment: Vec<usize>,
    /// `coverage[f][j]`: annotations by annotator `j` inside fold `f`.
    pub coverage: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns folds so that the majority-positive rate of every fold is within
/// one instance of the proportional share.
///
/// Instances are shuffled within their majority class and dealt round-robin,
/// positives first, so fold sizes also differ by at most one.
pub fn stratified_kfold(matrix: &AnnotationMatrix, k: usize, seed: u64) -> Result<DatasetSplit> {
    let n = matrix.n_instances();
    if k < 2 || k > n {
        return Err(Error::Argument(format!("k must be in [2, {n}], got {k}")));
    }
    let majority = matrix.majority_labels();
    let mut pos: Vec<usize> = (0..n).filter(|&i| majority[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !majority[i]).collect();
    let mut r = rng::seeded(seed);
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);

    let mut assignment = vec![0; n];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = slot % k;
    }

    let mut coverage = vec![vec![0usize; matrix.n_annotators()]; k];
    for e in matrix.entries() {
        coverage[assignment[e.instance]][e.annotator] += 1;
    }
    Ok(DatasetSplit {
        k,
        seed,
        assignment,
        coverage,
    })
}

impl DatasetSplit {
    pub fn test(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    /// Train/validation/test indices of one fold. The validation set is a
    /// stratified slice of the training folds (empty when the fraction is 0).
    pub fn fold(
        &self,
        matrix: &AnnotationMatrix,
        fold: usize,
        validation_fraction: f64,
        seed: u64,
    ) -> Result<FoldIndices> {
        if fold >= self.k {
            return Err(Error::Argument(format!(
                "fold {fold} out of range for k={}",
                self.k
            )));
        }
        let (train, validation) =
            carve_validation(matrix, self.train(fold), validation_fraction, seed)?;
        Ok(FoldIndices {
            train,
            validation,
            test: self.test(fold),
        })
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

fn carve_validation(
    matrix: &AnnotationMatrix,
    pool: Vec<usize>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Argument(format!(
            "validation fraction must be in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok((pool, Vec::new()));
    }
    let mut r = rng::seeded(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in [true, false] {
        let mut group: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| matrix.majority_label(i).expect("validated") == class)
            .collect();
        group.shuffle(&mut r);
        let take = (group.len() as f64 * fraction).round() as usize;
        validation.extend_from_slice(&group[..take]);
        train.extend_from_slice(&group[take..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}

/// A single stratified holdout: `test_fraction` of instances for testing,
/// `validation_fraction` of the rest for validation.
pub fn fixed_split(
    matrix: &AnnotationMatrix,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<FoldIndices> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::Argument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let all: Vec<usize> = (0..matrix.n_instances()).collect();
    let (rest, test) = carve_validation(matrix, all, test_fraction, rng::derive(seed, &[0]))?;
    let (train, validation) =
        carve_validation(matrix, rest, validation_fraction, rng::derive(seed, &[1]))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Argument(
            "fixed split leaves an empty train or test set".into(),
        ));
    }
    Ok(FoldIndices {
        train,
        validation,
        test,
    })
}
