use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationMatrix, FoldIndices, Instance};
use crate::models::{
    fit, Checkpoint, Net, Target, TrainConfig, TrainSummary, Unit, CHECKPOINT_VERSION,
};
use crate::nnkit::{DropoutMode, EncodedInput, Featurizer, ModelInput};
use crate::{Error, Result};

/// Encoder with a scaled sigmoid output trained to predict the observed
/// disagreement of an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRegressor {
    pub featurizer: Featurizer,
    pub net: Net,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedRegressor {
    pub regressor: DisagreementRegressor,
    pub summary: TrainSummary,
    pub config: TrainConfig,
}

impl TrainedRegressor {
    pub fn checkpoint(&self) -> Checkpoint<DisagreementRegressor> {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: "regressor".into(),
            seed: self.config.seed,
            flagged: Vec::new(),
            config: self.config.clone(),
            summary: self.summary.clone(),
            model: self.regressor.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<DisagreementRegressor>) -> Self {
        TrainedRegressor {
            regressor: ck.model,
            summary: ck.summary,
            config: ck.config,
        }
    }
}

impl DisagreementRegressor {
    pub fn encode(&self, instance: &Instance) -> Result<EncodedInput> {
        self.featurizer.encode(instance)
    }

    /// Predicted disagreement in [0, 0.25].
    pub fn predict(&self, input: ModelInput<'_>) -> Result<f64> {
        Ok(self.net.predict(input, &mut DropoutMode::Off)?[0])
    }
}

fn mse(net: &Net, inputs: &[EncodedInput], targets: &[(usize, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(i, y) in targets {
        let p = net.predict(inputs[i].as_input(), &mut DropoutMode::Off)?[0];
        total += (p - y) * (p - y);
    }
    Ok(total / targets.len() as f64)
}

/// Trains on the observed disagreement of the training instances with
/// squared error. Early stopping uses validation squared error.
pub fn train_disagreement_regressor(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedRegressor> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let featurizer = Featurizer::fit(
        split.train.iter().map(|&i| &matrix.instances()[i]),
        matrix.embedding_dim(),
    );
    let inputs = featurizer.encode_all(matrix.instances())?;
    let examples = split
        .train
        .iter()
        .map(|&i| Ok((i, Target::Value(matrix.disagreement(i)?))))
        .collect::<Result<Vec<_>>>()?;
    let validation = split
        .validation
        .iter()
        .map(|&i| Ok((i, matrix.disagreement(i)?)))
        .collect::<Result<Vec<_>>>()?;
    let enc = cfg.encoder(&featurizer);
    let unit = Unit::new(0, cfg.seed, cfg, examples, |r| Net::regression(enc, r))?;
    let metric = |nets: &[&Net]| mse(nets[0], &inputs, &validation).map(|m| -m);
    let validate: Option<&dyn Fn(&[&Net]) -> Result<f64>> =
        (!validation.is_empty()).then_some(&metric as _);
    let (mut nets, summary) = fit(vec![unit], &inputs, cfg, validate)?;
    Ok(TrainedRegressor {
        regressor: DisagreementRegressor {
            featurizer,
            net: nets.remove(0),
        },
        summary,
        config: cfg.clone(),
    })
}
