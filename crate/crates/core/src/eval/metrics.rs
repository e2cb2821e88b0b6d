use serde::{Deserialize, Serialize};

use crate::corpus::AnnotationMatrix;
use crate::models::{AnnotatorModel, SlotPrediction};
use crate::{Error, Result};

/// Precision, recall and F1 of the positive class with the confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Set when precision or recall had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
            zero_division: tp + fp == 0 || tp + fn_ == 0,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

impl Confusion {
    fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_, self.tn)
    }
}

pub fn prf(preds: &[bool], golds: &[bool]) -> Result<Prf> {
    if preds.len() != golds.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (&p, &g) in preds.iter().zip(golds) {
        c.add(p, g);
    }
    Ok(c.prf())
}

/// Micro-averaged scores over raw annotations plus coverage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualEval {
    pub prf: Prf,
    pub evaluated_cells: usize,
    /// Cells whose annotator slot was flagged.
    pub excluded_cells: usize,
}

/// Scores per-slot predictions against every observed cell of the `test`
/// instances. `slots[t]` holds the predictions for instance `test[t]`.
pub fn individual_label_scores(
    matrix: &AnnotationMatrix,
    test: &[usize],
    slots: &[Vec<Option<SlotPrediction>>],
) -> Result<IndividualEval> {
    if slots.len() != test.len() {
        return Err(Error::Argument(
            "prediction rows do not match the test set".into(),
        ));
    }
    let mut c = Confusion::default();
    let mut excluded = 0;
    for (&i, row) in test.iter().zip(slots) {
        if row.len() != matrix.n_annotators() {
            return Err(Error::Argument(format!(
                "{} slots for {} annotators",
                row.len(),
                matrix.n_annotators()
            )));
        }
        for &(j, y) in matrix.row(i) {
            match row[j] {
                Some(s) => c.add(s.label, y),
                None => excluded += 1,
            }
        }
    }
    let prf = c.prf();
    Ok(IndividualEval {
        evaluated_cells: prf.total(),
        excluded_cells: excluded,
        prf,
    })
}

pub fn individual_label_eval(
    model: &AnnotatorModel,
    matrix: &AnnotationMatrix,
    test: &[usize],
) -> Result<IndividualEval> {
    let slots = test
        .iter()
        .map(|&i| {
            let x = model.encode(&matrix.instances()[i])?;
            model.predict_annotations(x.as_input())
        })
        .collect::<Result<Vec<_>>>()?;
    individual_label_scores(matrix, test, &slots)
}

/// Scores one instance-level prediction against every observed annotation
/// of that instance; this is how a majority-label model fares on
/// individual labels.
pub fn majority_vs_annotations(
    matrix: &AnnotationMatrix,
    test: &[usize],
    preds: &[bool],
) -> Result<Prf> {
    if preds.len() != test.len() {
        return Err(Error::Argument(
            "predictions do not match the test set".into(),
        ));
    }
    let mut c = Confusion::default();
    for (&i, &p) in test.iter().zip(preds) {
        for &(_, y) in matrix.row(i) {
            c.add(p, y);
        }
    }
    Ok(c.prf())
}

/// Pearson correlation. Errors when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "correlation of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Argument(
            "correlation needs at least 3 points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs is constant".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Symmetric correlation matrix between named score series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn pairwise_correlation(series: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix> {
    if series.len() < 2 {
        return Err(Error::Argument(
            "pairwise correlation needs at least 2 estimators".into(),
        ));
    }
    let n = series.len();
    let mut values = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let r = pearson(&series[a].1, &series[b].1).map_err(|e| match e {
                Error::UndefinedCorrelation(m) => {
                    Error::UndefinedCorrelation(format!("{} vs {}: {m}", series[a].0, series[b].0))
                }
                other => other,
            })?;
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: series.iter().map(|s| s.0.clone()).collect(),
        values,
    })
}
