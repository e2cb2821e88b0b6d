//! Mini-batch training with Adam and early stopping, shared by every
//! architecture and the disagreement regressor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{batch_loss, Net, Target};
use crate::nnkit::{
    AdamConfig, AdamState, DropoutMode, EncodedInput, EncoderConfig, Featurizer, ModelInput,
};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Early-stopping patience in epochs; `None` trains for all epochs.
    pub patience: Option<usize>,
    /// Share of the training folds held out for early stopping.
    pub validation_fraction: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            dropout: 0.1,
            patience: None,
            validation_fraction: 0.1,
            embed_dim: 32,
            hidden_dim: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field}: {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction", "must be in [0, 1)");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("hidden_dim", "layer widths must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn encoder(&self, featurizer: &Featurizer) -> EncoderConfig {
        EncoderConfig {
            input: featurizer.input_kind(self.embed_dim),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// One row of a training trace. Single-network models use member 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub member: usize,
    pub train_loss: f64,
    pub validation_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_validation: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

/// A network with its optimizer, random stream and training examples.
pub(crate) struct Unit {
    pub member: usize,
    pub net: Net,
    adam: AdamState,
    rng: Rng,
    examples: Vec<(usize, Target)>,
}

impl Unit {
    /// Builds the network with `init` from a generator seeded by `seed`;
    /// the same generator then drives shuffling and dropout.
    pub fn new(
        member: usize,
        seed: u64,
        cfg: &TrainConfig,
        examples: Vec<(usize, Target)>,
        init: impl FnOnce(&mut Rng) -> Result<Net>,
    ) -> Result<Unit> {
        let mut rng = rng::seeded(seed);
        let net = init(&mut rng)?;
        let adam = AdamState::new(&net.params, cfg.adam());
        Ok(Unit {
            member,
            net,
            adam,
            rng,
            examples,
        })
    }

    fn epoch(&mut self, inputs: &[EncodedInput], cfg: &TrainConfig) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(ModelInput<'_>, &Target)> = chunk
                .iter()
                .map(|&k| {
                    let (i, ref t) = self.examples[k];
                    (inputs[i].as_input(), t)
                })
                .collect();
            let mut dropout = DropoutMode::On {
                rate: cfg.dropout,
                rng: &mut self.rng,
            };
            let (loss, grads) = batch_loss(&self.net, &batch, &mut dropout)?;
            self.adam.step(&mut self.net.params, &grads)?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / self.examples.len() as f64)
    }
}

/// Trains all units in lockstep, one epoch at a time. With a validation
/// metric (higher is better) and a patience, training stops once the metric
/// has not improved for `patience` epochs and the best epoch's networks are
/// returned; otherwise the final networks are returned.
pub(crate) fn fit(
    mut units: Vec<Unit>,
    inputs: &[EncodedInput],
    cfg: &TrainConfig,
    validate: Option<&dyn Fn(&[&Net]) -> Result<f64>>,
) -> Result<(Vec<Net>, TrainSummary)> {
    let early_stop = cfg.patience.zip(validate);
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Vec<Net>)> = None;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut losses = Vec::with_capacity(units.len());
        for unit in units.iter_mut() {
            losses.push(unit.epoch(inputs, cfg)?);
        }
        let metric = match early_stop {
            Some((_, f)) => {
                let nets: Vec<&Net> = units.iter().map(|u| &u.net).collect();
                Some(f(&nets)?)
            }
            None => None,
        };
        for (unit, loss) in units.iter().zip(losses) {
            trace.push(TraceRecord {
                epoch,
                member: unit.member,
                train_loss: loss,
                validation_metric: metric,
            });
        }
        if let (Some((patience, _)), Some(m)) = (early_stop, metric) {
            if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, epoch, units.iter().map(|u| u.net.clone()).collect()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch > patience {
                break;
            }
        }
    }
    let (nets, best_epoch, best_validation) = match best {
        Some((m, e, nets)) => (nets, e, Some(m)),
        None => (units.into_iter().map(|u| u.net).collect(), epochs_run, None),
    };
    Ok((
        nets,
        TrainSummary {
            epochs_run,
            best_epoch,
            best_validation,
            trace,
        },
    ))
}
