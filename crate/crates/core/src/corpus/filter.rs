use serde::{Deserialize, Serialize};

use super::{AnnotationMatrix, Entry};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub min_annotations: usize,
    pub annotators_kept: usize,
    pub annotators_dropped: usize,
    pub instances_dropped: usize,
    pub annotations_dropped: usize,
}

/// Keeps annotators with strictly more than `min_annotations` labels and
/// drops instances left without any annotation.
pub fn filter_annotators(
    matrix: &AnnotationMatrix,
    min_annotations: usize,
) -> Result<(AnnotationMatrix, FilterReport)> {
    let keep: Vec<bool> = (0..matrix.n_annotators())
        .map(|j| matrix.column_count(j) > min_annotations)
        .collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(Error::EmptyResult(format!(
            "no annotator has more than {min_annotations} annotations"
        )));
    }
    let mut annot_map = vec![None; matrix.n_annotators()];
    let mut annotators = Vec::with_capacity(kept);
    for (j, id) in matrix.annotators().iter().enumerate() {
        if keep[j] {
            annot_map[j] = Some(annotators.len());
            annotators.push(id.clone());
        }
    }

    let mut instances = Vec::new();
    let mut entries = Vec::new();
    for i in 0..matrix.n_instances() {
        let row: Vec<_> = matrix
            .row(i)
            .iter()
            .filter_map(|&(j, label)| annot_map[j].map(|nj| (nj, label)))
            .collect();
        if row.is_empty() {
            continue;
        }
        let ni = instances.len();
        instances.push(matrix.instances()[i].clone());
        entries.extend(row.into_iter().map(|(nj, label)| Entry {
            instance: ni,
            annotator: nj,
            label,
        }));
    }
    let report = FilterReport {
        min_annotations,
        annotators_kept: kept,
        annotators_dropped: matrix.n_annotators() - kept,
        instances_dropped: matrix.n_instances() - instances.len(),
        annotations_dropped: matrix.n_entries() - entries.len(),
    };
    let filtered = AnnotationMatrix::new(instances, annotators, entries, matrix.tie_policy())?;
    Ok((filtered, report))
}
