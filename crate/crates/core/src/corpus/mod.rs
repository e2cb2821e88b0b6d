//! The annotated corpus: instances, annotators and the sparse binary
//! annotation matrix, plus gold-side statistics derived from it.

mod filter;
mod io;
mod split;
mod synth;

pub use filter::{filter_annotators, FilterReport};
pub use io::{load_corpus, read_ground_truth, save_corpus, write_ground_truth, Format};
pub use split::{fixed_split, stratified_kfold, DatasetSplit, FoldIndices};
pub use synth::{
    expected_disagreement, generate_synthetic, AnnotatorGroup, AnnotatorProfile, GroundTruth,
    SyntheticConfig, SyntheticCorpus,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How an exact even split of binary votes is resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    Positive,
    Negative,
}

impl TiePolicy {
    /// Majority vote from label counts.
    pub fn vote(self, positives: usize, negatives: usize) -> bool {
        match positives.cmp(&negatives) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self == TiePolicy::Positive,
        }
    }
}

/// Annotation variance of a binary label multiset: `pos * neg / n^2`.
///
/// Ranges from 0 (unanimous) to 0.25 (exact even split).
pub fn binary_variance(positives: usize, negatives: usize) -> f64 {
    let n = positives + negatives;
    if n == 0 {
        return 0.0;
    }
    (positives as f64 * negatives as f64) / (n as f64 * n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Instance {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Instance {
            id: id.into(),
            text: text.into(),
            embedding: None,
        }
    }
}

/// One observed label: instance `i` was labeled `label` by annotator `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub instance: usize,
    pub annotator: usize,
    pub label: bool,
}

/// Sparse instance x annotator matrix of binary labels.
///
/// Missing cells are absent from the storage; there is no sentinel label.
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationMatrix {
    instances: Vec<Instance>,
    annotators: Vec<String>,
    /// Per instance, `(annotator, label)` sorted by annotator index.
    rows: Vec<Vec<(usize, bool)>>,
    column_counts: Vec<usize>,
    embedding_dim: Option<usize>,
    tie_policy: TiePolicy,
}

impl AnnotationMatrix {
    /// Validates and builds a matrix.
    ///
    /// Fails on out-of-range indices, duplicate cells, instances or
    /// annotators without any entry, duplicate ids and inconsistent
    /// embedding lengths.
    pub fn new(
        instances: Vec<Instance>,
        annotators: Vec<String>,
        entries: impl IntoIterator<Item = Entry>,
        tie_policy: TiePolicy,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate instance id `{}`",
                    inst.id
                )));
            }
        }
        seen.clear();
        for a in &annotators {
            if !seen.insert(a.as_str()) {
                return Err(Error::Argument(format!("duplicate annotator id `{a}`")));
            }
        }

        let embedding_dim = match instances.iter().find_map(|i| i.embedding.as_ref()) {
            None => None,
            Some(first) => {
                let dim = first.len();
                if dim == 0 {
                    return Err(Error::Argument("embedding of length 0".into()));
                }
                for inst in &instances {
                    match &inst.embedding {
                        Some(e) if e.len() == dim => {
                            if e.iter().any(|v| !v.is_finite()) {
                                return Err(Error::Argument(format!(
                                    "instance `{}` has a non-finite embedding value",
                                    inst.id
                                )));
                            }
                        }
                        Some(e) => {
                            return Err(Error::Argument(format!(
                                "instance `{}` has embedding length {}, expected {dim}",
                                inst.id,
                                e.len()
                            )))
                        }
                        None => {
                            return Err(Error::Argument(format!(
                                "instance `{}` has no embedding while others do",
                                inst.id
                            )))
                        }
                    }
                }
                Some(dim)
            }
        };

        let mut rows = vec![Vec::new(); instances.len()];
        let mut column_counts = vec![0usize; annotators.len()];
        for e in entries {
            if e.instance >= instances.len() || e.annotator >= annotators.len() {
                return Err(Error::Argument(format!(
                    "entry ({}, {}) out of range",
                    e.instance, e.annotator
                )));
            }
            rows[e.instance].push((e.annotator, e.label));
            column_counts[e.annotator] += 1;
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Argument(format!(
                    "duplicate annotation of instance `{}` by annotator `{}`",
                    instances[i].id, annotators[w[0].0]
                )));
            }
            if row.is_empty() {
                return Err(Error::MissingData(format!(
                    "instance `{}` has no annotations",
                    instances[i].id
                )));
            }
        }
        if let Some(j) = column_counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingData(format!(
                "annotator `{}` has no annotations",
                annotators[j]
            )));
        }

        Ok(AnnotationMatrix {
            instances,
            annotators,
            rows,
            column_counts,
            embedding_dim,
            tie_policy,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn n_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn n_entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn with_tie_policy(mut self, tie_policy: TiePolicy) -> Self {
        self.tie_policy = tie_policy;
        self
    }

    /// Observed `(annotator, label)` pairs of instance `i`, by annotator index.
    pub fn row(&self, i: usize) -> &[(usize, bool)] {
        &self.rows[i]
    }

    /// Number of labels given by annotator `j`.
    pub fn column_count(&self, j: usize) -> usize {
        self.column_counts[j]
    }

    pub fn label(&self, i: usize, j: usize) -> Option<bool> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(a, _)| a)
            .ok()
            .map(|k| row[k].1)
    }

    /// All entries in instance-major order.
    pub fn entries(&self) -> impl Iterator<Item = Entry> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter().map(move |&(j, label)| Entry {
                instance: i,
                annotator: j,
                label,
            })
        })
    }

    fn counts(&self, i: usize) -> Result<(usize, usize)> {
        let row = self
            .rows
            .get(i)
            .ok_or_else(|| Error::Argument(format!("instance index {i} out of range")))?;
        if row.is_empty() {
            return Err(Error::MissingData(format!(
                "instance {i} has no annotations"
            )));
        }
        let pos = row.iter().filter(|&&(_, l)| l).count();
        Ok((pos, row.len() - pos))
    }

    /// Majority vote over the annotations of instance `i`, ties by the
    /// corpus tie policy.
    pub fn majority_label(&self, i: usize) -> Result<bool> {
        let (pos, neg) = self.counts(i)?;
        Ok(self.tie_policy.vote(pos, neg))
    }

    /// Annotation variance of instance `i`, in `[0, 0.25]`.
    pub fn disagreement(&self, i: usize) -> Result<f64> {
        let (pos, neg) = self.counts(i)?;
        Ok(binary_variance(pos, neg))
    }

    /// Fraction of positive annotations of instance `i`.
    pub fn positive_fraction(&self, i: usize) -> f64 {
        let row = &self.rows[i];
        row.iter().filter(|&&(_, l)| l).count() as f64 / row.len() as f64
    }

    pub fn majority_labels(&self) -> Vec<bool> {
        (0..self.n_instances())
            .map(|i| {
                self.majority_label(i)
                    .expect("validated rows are non-empty")
            })
            .collect()
    }

    pub fn disagreements(&self) -> Vec<f64> {
        (0..self.n_instances())
            .map(|i| self.disagreement(i).expect("validated rows are non-empty"))
            .collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let per_instance: Vec<f64> = self.rows.iter().map(|r| r.len() as f64).collect();
        let per_annotator: Vec<f64> = self.column_counts.iter().map(|&c| c as f64).collect();
        let (api_mean, api_sd) = mean_sd(&per_instance);
        let (apa_mean, apa_sd) = mean_sd(&per_annotator);
        let majority_positive = self.majority_labels().iter().filter(|&&m| m).count();
        CorpusStats {
            instances: self.n_instances(),
            annotators: self.n_annotators(),
            annotations: self.n_entries(),
            annotations_per_instance_mean: api_mean,
            annotations_per_instance_sd: api_sd,
            annotations_per_annotator_mean: apa_mean,
            annotations_per_annotator_sd: apa_sd,
            majority_positive,
            positive_annotations: self.entries().filter(|e| e.label).count(),
        }
    }

    /// Restricts the matrix to a subset of instances, keeping annotator
    /// ordering. Annotators left without entries are dropped.
    pub fn subset(&self, indices: &[usize]) -> Result<AnnotationMatrix> {
        let keep_annot: Vec<bool> = {
            let mut k = vec![false; self.n_annotators()];
            for &i in indices {
                for &(j, _) in &self.rows[i] {
                    k[j] = true;
                }
            }
            k
        };
        let remap: Vec<Option<usize>> = keep_annot
            .iter()
            .scan(0usize, |next, &keep| {
                Some(if keep {
                    *next += 1;
                    Some(*next - 1)
                } else {
                    None
                })
            })
            .collect();
        let annotators = self
            .annotators
            .iter()
            .zip(&keep_annot)
            .filter(|(_, &k)| k)
            .map(|(a, _)| a.clone())
            .collect();
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        let entries: Vec<Entry> = indices
            .iter()
            .enumerate()
            .flat_map(|(new_i, &i)| {
                let remap = &remap;
                self.rows[i].iter().map(move |&(j, label)| Entry {
                    instance: new_i,
                    annotator: remap[j].expect("kept"),
                    label,
                })
            })
            .collect();
        AnnotationMatrix::new(instances, annotators, entries, self.tie_policy)
    }
}

/// The corpus statistics block: sizes plus mean/sd of annotation counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub instances: usize,
    pub annotators: usize,
    pub annotations: usize,
    pub annotations_per_instance_mean: f64,
    pub annotations_per_instance_sd: f64,
    pub annotations_per_annotator_mean: f64,
    pub annotations_per_annotator_sd: f64,
    pub majority_positive: usize,
    pub positive_annotations: usize,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "instances                 {}", self.instances)?;
        writeln!(f, "annotators                {}", self.annotators)?;
        writeln!(f, "annotations               {}", self.annotations)?;
        writeln!(
            f,
            "annotations per instance  M={:.2} SD={:.2}",
            self.annotations_per_instance_mean, self.annotations_per_instance_sd
        )?;
        writeln!(
            f,
            "annotations per annotator M={:.2} SD={:.2}",
            self.annotations_per_annotator_mean, self.annotations_per_annotator_sd
        )?;
        writeln!(
            f,
            "majority positive         {} ({:.1}%)",
            self.majority_positive,
            100.0 * self.majority_positive as f64 / self.instances.max(1) as f64
        )
    }
}

/// Mean and sample standard deviation; the sd of fewer than two values is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
