//! Uncertainty estimators: variance of predicted annotations, softmax
//! confidence, Monte Carlo dropout and a regressor trained on observed
//! disagreement.

mod regressor;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use regressor::{train_disagreement_regressor, DisagreementRegressor, TrainedRegressor};

use crate::corpus::binary_variance;
use crate::models::{AnnotatorModel, Architecture};
use crate::nnkit::{DropoutMode, ModelInput};
use crate::{rng, Error, Result};

pub const DEFAULT_MC_SAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    AnnotationVariance,
    Softmax,
    McDropout,
    Regressor,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::AnnotationVariance => "annotation-variance",
            Estimator::Softmax => "softmax",
            Estimator::McDropout => "mc-dropout",
            Estimator::Regressor => "regressor",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub value: f64,
    pub estimator: Estimator,
    /// Number of stochastic passes (Monte Carlo dropout only).
    pub samples: Option<usize>,
    /// Population variance of the sampled probabilities (Monte Carlo
    /// dropout only).
    pub probability_variance: Option<f64>,
}

impl UncertaintyScore {
    fn plain(value: f64, estimator: Estimator) -> Self {
        UncertaintyScore {
            value,
            estimator,
            samples: None,
            probability_variance: None,
        }
    }
}

/// Disagreement of the predicted labels over the present slots.
pub fn variance_uncertainty(predictions: &[Option<bool>]) -> Result<UncertaintyScore> {
    let (pos, n) = predictions
        .iter()
        .flatten()
        .fold((0, 0), |(p, n), &l| (p + usize::from(l), n + 1));
    if n == 0 {
        return Err(Error::MissingData("no present prediction slot".into()));
    }
    Ok(UncertaintyScore::plain(
        binary_variance(pos, n - pos),
        Estimator::AnnotationVariance,
    ))
}

/// `1 - max(p, 1 - p)` for a positive-class probability `p`.
pub fn softmax_score(probability: f64) -> UncertaintyScore {
    UncertaintyScore::plain(1.0 - probability.max(1.0 - probability), Estimator::Softmax)
}

fn require_baseline(model: &AnnotatorModel) -> Result<()> {
    if model.architecture != Architecture::Baseline {
        return Err(Error::Unsupported(format!(
            "estimator needs the baseline model, got {}",
            model.architecture
        )));
    }
    Ok(())
}

pub fn softmax_uncertainty(
    model: &AnnotatorModel,
    input: ModelInput<'_>,
) -> Result<UncertaintyScore> {
    require_baseline(model)?;
    let p = model.nets[0].predict(input, &mut DropoutMode::Off)?[0];
    Ok(softmax_score(p))
}

/// Runs `samples` forward passes of the baseline with dropout active and
/// scores the population variance of the predicted labels.
pub fn mc_dropout_uncertainty(
    model: &AnnotatorModel,
    input: ModelInput<'_>,
    samples: usize,
    seed: u64,
) -> Result<UncertaintyScore> {
    require_baseline(model)?;
    if samples < 2 {
        return Err(Error::Argument(format!(
            "Monte Carlo dropout needs at least 2 samples, got {samples}"
        )));
    }
    let mut r = rng::seeded(seed);
    let mut probs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut mode = DropoutMode::On {
            rate: model.dropout,
            rng: &mut r,
        };
        probs.push(model.nets[0].predict(input, &mut mode)?[0]);
    }
    let pos = probs.iter().filter(|&&p| p >= 0.5).count();
    let mean = probs.iter().sum::<f64>() / samples as f64;
    let pvar = probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / samples as f64;
    Ok(UncertaintyScore {
        value: binary_variance(pos, samples - pos),
        estimator: Estimator::McDropout,
        samples: Some(samples),
        probability_variance: Some(pvar),
    })
}

/// One row of the uncertainty dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub instance_id: String,
    pub estimator: String,
    pub value: f64,
    pub sample_count: Option<usize>,
    pub seed: Option<u64>,
}

pub fn write_uncertainty_dump(records: &[UncertaintyRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tests::matrix_from_rows, TiePolicy};
    use crate::models::{Head, Net, SlotRef};
    use crate::nnkit::{EncoderConfig, Featurizer, InputKind};

    #[test]
    fn variance_examples() {
        let v = |xs: &[u8]| {
            let p: Vec<Option<bool>> = xs.iter().map(|&x| Some(x == 1)).collect();
            variance_uncertainty(&p).unwrap().value
        };
        assert_eq!(v(&[1, 1, 0, 0]), 0.25);
        assert_eq!(v(&[1, 1, 1]), 0.0);
        let mut eighteen = vec![1u8; 7];
        eighteen.extend([0; 11]);
        let got = v(&eighteen);
        // population variance of the 0/1 values
        let mean = 7.0 / 18.0;
        let pop = (7.0 * (1.0f64 - mean).powi(2) + 11.0 * mean * mean) / 18.0;
        assert!((got - 77.0 / 324.0).abs() < 1e-15);
        assert!((got - pop).abs() < 1e-15);
        assert!(matches!(
            variance_uncertainty(&[None, None]),
            Err(Error::MissingData(_))
        ));
        assert_eq!(
            variance_uncertainty(&[Some(true), None, Some(false)])
                .unwrap()
                .value,
            0.25
        );
    }

    #[test]
    fn variance_matches_gold_disagreement() {
        let t = Some(true);
        let f = Some(false);
        let m = matrix_from_rows(&[&[t, f, t, None], &[f, f, None, t], &[t, t, t, t]]);
        for i in 0..3 {
            let row: Vec<Option<bool>> = (0..4).map(|j| m.label(i, j)).collect();
            assert_eq!(
                variance_uncertainty(&row).unwrap().value,
                m.disagreement(i).unwrap()
            );
        }
    }

    #[test]
    fn softmax_examples() {
        assert!((softmax_score(0.1).value - 0.1).abs() < 1e-15);
        assert!((softmax_score(0.9).value - 0.1).abs() < 1e-15);
        assert_eq!(softmax_score(0.5).value, 0.5);
        assert!(softmax_score(0.8).value < softmax_score(0.6).value);
    }

    /// Baseline with a one-unit pipeline: the label is positive exactly when
    /// dropout keeps both the input and the hidden unit.
    pub(crate) fn gate_model(rate: f64) -> AnnotatorModel {
        let mut params = crate::nnkit::ParamStore::new();
        let cfg = EncoderConfig {
            input: InputKind::Embedding { dim: 1 },
            hidden_dim: 1,
        };
        let w1 = params.add("encoder.ff1.weight", 1, 1, vec![1.0]);
        let b1 = params.add("encoder.ff1.bias", 1, 1, vec![0.0]);
        let w2 = params.add("encoder.ff2.weight", 1, 1, vec![1.0]);
        let b2 = params.add("encoder.ff2.bias", 1, 1, vec![0.0]);
        // logits (0, 10 h - 0.1): positive iff h > 0.01
        let w = params.add("head.weight", 2, 1, vec![0.0, 10.0]);
        let b = params.add("head.bias", 1, 2, vec![0.0, -0.1]);
        let encoder = crate::nnkit::Encoder {
            config: cfg,
            table: None,
            w1,
            b1,
            w2,
            b2,
        };
        AnnotatorModel {
            architecture: Architecture::Baseline,
            annotators: vec!["a".into()],
            tie_policy: TiePolicy::Positive,
            dropout: rate,
            featurizer: Featurizer::Embedding { dim: 1 },
            nets: vec![Net {
                params,
                encoder,
                head: Head::Softmax { w, b },
            }],
            slots: Vec::<Option<SlotRef>>::new(),
        }
    }

    #[test]
    fn mc_dropout_bernoulli_oracle() {
        let rate = 0.2;
        let model = gate_model(rate);
        let input = ModelInput::Embedding(&[1.0]);
        assert_eq!(
            softmax_uncertainty(&model, input).unwrap().estimator,
            Estimator::Softmax
        );
        let samples = 1000;
        let s = mc_dropout_uncertainty(&model, input, samples, 11).unwrap();
        let keep = (1.0 - rate) * (1.0 - rate);
        let q = 1.0 - keep;
        let expected = q * (1.0 - q);
        // the label variance is p̂(1-p̂); its standard error follows from the
        // delta method: |1 - 2q| sqrt(q(1-q)/T)
        let se = ((1.0 - 2.0 * q).abs() * (q * (1.0 - q) / samples as f64).sqrt()).max(1e-3);
        assert!(
            (s.value - expected).abs() < 3.0 * se,
            "{} vs {expected}",
            s.value
        );
        assert_eq!(s.samples, Some(samples));
        assert_eq!(
            s,
            mc_dropout_uncertainty(&model, input, samples, 11).unwrap()
        );
    }

    #[test]
    fn mc_dropout_degenerate_cases() {
        let model = gate_model(0.0);
        let input = ModelInput::Embedding(&[1.0]);
        assert_eq!(
            mc_dropout_uncertainty(&model, input, 20, 3).unwrap().value,
            0.0
        );
        assert!(matches!(
            mc_dropout_uncertainty(&model, input, 1, 3),
            Err(Error::Argument(_))
        ));
    }
}
