//! Uncertainty by outcome bucket and the baseline / multi-task mismatch
//! taxonomy.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distribution summary of the scores in one bucket.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Distribution::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mean, sd) = crate::corpus::mean_sd(values);
        Distribution {
            count: values.len(),
            mean: Some(mean),
            sd: Some(sd),
            min: Some(sorted[0]),
            q1: Some(quantile(&sorted, 0.25)),
            median: Some(quantile(&sorted, 0.5)),
            q3: Some(quantile(&sorted, 0.75)),
            max: Some(sorted[sorted.len() - 1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBuckets {
    pub tp: Distribution,
    pub fp: Distribution,
    #[serde(rename = "fn")]
    pub fn_: Distribution,
    pub tn: Distribution,
    pub correct: Distribution,
    pub incorrect: Distribution,
}

pub fn error_buckets(preds: &[bool], golds: &[bool], scores: &[f64]) -> Result<ErrorBuckets> {
    if preds.len() != golds.len() || preds.len() != scores.len() {
        return Err(Error::Argument("error buckets need aligned vectors".into()));
    }
    let mut groups: [Vec<f64>; 4] = Default::default();
    for ((&p, &g), &s) in preds.iter().zip(golds).zip(scores) {
        let k = match (p, g) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        groups[k].push(s);
    }
    let correct: Vec<f64> = groups[0].iter().chain(&groups[3]).copied().collect();
    let incorrect: Vec<f64> = groups[1].iter().chain(&groups[2]).copied().collect();
    Ok(ErrorBuckets {
        tp: Distribution::of(&groups[0]),
        fp: Distribution::of(&groups[1]),
        fn_: Distribution::of(&groups[2]),
        tn: Distribution::of(&groups[3]),
        correct: Distribution::of(&correct),
        incorrect: Distribution::of(&incorrect),
    })
}

/// One cell of the mismatch partition. Within a disagreement the multi-task
/// label is the negation of the baseline label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchCategory {
    pub gold: bool,
    pub baseline: bool,
    pub multitask: bool,
    pub count: usize,
    pub percent: f64,
    /// Mean share of multi-task heads predicting positive.
    pub mean_head_fraction: Option<f64>,
    /// Mean share of observed annotations that are positive.
    pub mean_annotation_fraction: Option<f64>,
    pub examples: Vec<String>,
}

impl MismatchCategory {
    pub fn multitask_correct(&self) -> bool {
        self.multitask == self.gold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub instances: usize,
    pub disagreements: usize,
    pub categories: Vec<MismatchCategory>,
}

/// Inputs of [`mismatch_analysis`], aligned by instance.
pub struct MismatchInput<'a> {
    pub ids: &'a [String],
    pub golds: &'a [bool],
    pub baseline: &'a [bool],
    pub multitask: &'a [bool],
    pub head_fractions: &'a [f64],
    pub annotation_fractions: &'a [f64],
}

pub const MISMATCH_EXAMPLES: usize = 5;

/// Partitions the instances where the two models disagree by gold label
/// and baseline label. Categories are ordered (gold 0, baseline 1),
/// (gold 1, baseline 1), (gold 1, baseline 0), (gold 0, baseline 0).
pub fn mismatch_analysis(input: &MismatchInput<'_>) -> Result<MismatchReport> {
    let n = input.ids.len();
    let lens = [
        input.golds.len(),
        input.baseline.len(),
        input.multitask.len(),
        input.head_fractions.len(),
        input.annotation_fractions.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Argument(
            "mismatch analysis needs aligned vectors".into(),
        ));
    }
    let keys = [(false, true), (true, true), (true, false), (false, false)];
    let mut members: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        if input.baseline[i] == input.multitask[i] {
            continue;
        }
        let k = keys
            .iter()
            .position(|&key| key == (input.golds[i], input.baseline[i]))
            .expect("keys cover every combination");
        members[k].push(i);
    }
    let disagreements: usize = members.iter().map(Vec::len).sum();
    let mean_of = |idx: &[usize], v: &[f64]| {
        (!idx.is_empty()).then(|| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64)
    };
    let categories = keys
        .iter()
        .zip(&members)
        .map(|(&(gold, baseline), idx)| MismatchCategory {
            gold,
            baseline,
            multitask: !baseline,
            count: idx.len(),
            percent: if disagreements == 0 {
                0.0
            } else {
                100.0 * idx.len() as f64 / disagreements as f64
            },
            mean_head_fraction: mean_of(idx, input.head_fractions),
            mean_annotation_fraction: mean_of(idx, input.annotation_fractions),
            examples: {
                // pooled iterations revisit the same instances
                let mut seen = std::collections::BTreeSet::new();
                idx.iter()
                    .map(|&i| &input.ids[i])
                    .filter(|id| seen.insert(id.as_str()))
                    .take(MISMATCH_EXAMPLES)
                    .cloned()
                    .collect()
            },
        })
        .collect();
    Ok(MismatchReport {
        instances: n,
        disagreements,
        categories,
    })
}
