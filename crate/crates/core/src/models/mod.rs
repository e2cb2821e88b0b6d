//! The four architectures: a majority-label baseline, an ensemble of
//! per-annotator classifiers, a multi-label network with one sigmoid output
//! per annotator and a multi-task network with one softmax head per
//! annotator on a shared encoder.
//!
//! Multi-annotator models predict a label for every annotator slot and take
//! the majority over all present slots as the final label, regardless of
//! which annotators labeled the instance. Slots without training labels are
//! flagged and left out.

mod checkpoint;
mod net;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use checkpoint::{write_trace, Checkpoint, CHECKPOINT_VERSION};
pub use net::{batch_loss, Head, Net, Target, REGRESSION_SCALE};
pub(crate) use train::{fit, Unit};
pub use train::{TraceRecord, TrainConfig, TrainSummary};

use crate::corpus::{AnnotationMatrix, FoldIndices, Instance, TiePolicy};
use crate::eval::prf;
use crate::nnkit::{DropoutMode, EncodedInput, Featurizer, ModelInput};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Baseline,
    Ensemble,
    MultiLabel,
    MultiTask,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Baseline,
        Architecture::Ensemble,
        Architecture::MultiLabel,
        Architecture::MultiTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Baseline => "baseline",
            Architecture::Ensemble => "ensemble",
            Architecture::MultiLabel => "multi-label",
            Architecture::MultiTask => "multi-task",
        }
    }

    pub fn models_annotators(self) -> bool {
        self != Architecture::Baseline
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Location of an annotator's prediction: output `output` of network `net`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub net: usize,
    pub output: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub probability: f64,
    pub label: bool,
}

impl SlotPrediction {
    /// Probabilities of exactly 0.5 count as positive.
    pub fn from_probability(probability: f64) -> Self {
        SlotPrediction {
            probability,
            label: probability >= 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorityPrediction {
    pub label: bool,
    /// Positive-class probability of the baseline.
    pub probability: Option<f64>,
    /// Share of present slots predicting positive.
    pub positive_fraction: Option<f64>,
}

/// A trained model of any architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub architecture: Architecture,
    pub annotators: Vec<String>,
    pub tie_policy: TiePolicy,
    /// Training dropout rate, reused by Monte Carlo dropout.
    pub dropout: f64,
    pub featurizer: Featurizer,
    pub nets: Vec<Net>,
    /// One entry per annotator; `None` marks a flagged slot. Empty for the
    /// baseline.
    pub slots: Vec<Option<SlotRef>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: AnnotatorModel,
    pub summary: TrainSummary,
    pub config: TrainConfig,
}

struct Predictor<'a> {
    architecture: Architecture,
    tie_policy: TiePolicy,
    nets: Vec<&'a Net>,
    slots: &'a [Option<SlotRef>],
}

impl Predictor<'_> {
    fn annotations(&self, input: ModelInput<'_>) -> Result<Vec<Option<SlotPrediction>>> {
        if self.architecture == Architecture::Baseline {
            return Err(Error::Unsupported(
                "the baseline does not predict individual annotations".into(),
            ));
        }
        let mut outputs: Vec<Option<Vec<f64>>> = vec![None; self.nets.len()];
        self.slots
            .iter()
            .map(|slot| {
                let Some(SlotRef { net, output }) = *slot else {
                    return Ok(None);
                };
                if outputs[net].is_none() {
                    outputs[net] = Some(self.nets[net].predict(input, &mut DropoutMode::Off)?);
                }
                let p = outputs[net].as_ref().expect("filled above")[output];
                Ok(Some(SlotPrediction::from_probability(p)))
            })
            .collect()
    }

    fn majority(&self, input: ModelInput<'_>) -> Result<MajorityPrediction> {
        if self.architecture == Architecture::Baseline {
            let p = self.nets[0].predict(input, &mut DropoutMode::Off)?[0];
            return Ok(MajorityPrediction {
                label: p >= 0.5,
                probability: Some(p),
                positive_fraction: None,
            });
        }
        let slots = self.annotations(input)?;
        let (pos, present) = slots
            .iter()
            .flatten()
            .fold((0, 0), |(p, n), s| (p + usize::from(s.label), n + 1));
        if present == 0 {
            return Err(Error::MissingData(
                "model has no trained annotator slot".into(),
            ));
        }
        Ok(MajorityPrediction {
            label: self.tie_policy.vote(pos, present - pos),
            probability: None,
            positive_fraction: Some(pos as f64 / present as f64),
        })
    }
}

impl AnnotatorModel {
    fn predictor(&self) -> Predictor<'_> {
        Predictor {
            architecture: self.architecture,
            tie_policy: self.tie_policy,
            nets: self.nets.iter().collect(),
            slots: &self.slots,
        }
    }

    pub fn encode(&self, instance: &Instance) -> Result<EncodedInput> {
        self.featurizer.encode(instance)
    }

    /// Annotator indices without a trained slot.
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&j| self.slots[j].is_none())
            .collect()
    }

    /// Per-annotator predictions; flagged slots are `None`.
    pub fn predict_annotations(
        &self,
        input: ModelInput<'_>,
    ) -> Result<Vec<Option<SlotPrediction>>> {
        self.predictor().annotations(input)
    }

    pub fn predict_majority(&self, input: ModelInput<'_>) -> Result<MajorityPrediction> {
        self.predictor().majority(input)
    }

    pub fn predict_instance(&self, instance: &Instance) -> Result<MajorityPrediction> {
        self.predict_majority(self.encode(instance)?.as_input())
    }
}

fn annotation_target(matrix: &AnnotationMatrix, i: usize) -> net::Target {
    let n = matrix.n_annotators();
    let mut labels = vec![0.0; n];
    let mut observed = vec![false; n];
    for &(j, y) in matrix.row(i) {
        labels[j] = if y { 1.0 } else { 0.0 };
        observed[j] = true;
    }
    Target::Annotations { labels, observed }
}

struct Prepared {
    featurizer: Featurizer,
    inputs: Vec<EncodedInput>,
}

fn prepare(matrix: &AnnotationMatrix, split: &FoldIndices, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let n = matrix.n_instances();
    if let Some(&bad) = split
        .train
        .iter()
        .chain(&split.validation)
        .find(|&&i| i >= n)
    {
        return Err(Error::Argument(format!(
            "split index {bad} out of range for {n} instances"
        )));
    }
    let featurizer = Featurizer::fit(
        split.train.iter().map(|&i| &matrix.instances()[i]),
        matrix.embedding_dim(),
    );
    let inputs = featurizer.encode_all(matrix.instances())?;
    Ok(Prepared { featurizer, inputs })
}

/// Builds the early-stopping metric: majority-vote F1 on the validation
/// instances.
fn majority_f1<'a>(
    matrix: &'a AnnotationMatrix,
    validation: &'a [usize],
    inputs: &'a [EncodedInput],
    architecture: Architecture,
    slots: &'a [Option<SlotRef>],
) -> impl Fn(&[&Net]) -> Result<f64> + 'a {
    move |nets| {
        let p = Predictor {
            architecture,
            tie_policy: matrix.tie_policy(),
            nets: nets.to_vec(),
            slots,
        };
        let mut preds = Vec::with_capacity(validation.len());
        let mut golds = Vec::with_capacity(validation.len());
        for &i in validation {
            preds.push(p.majority(inputs[i].as_input())?.label);
            golds.push(matrix.majority_label(i)?);
        }
        Ok(prf(&preds, &golds)?.f1)
    }
}

fn finish(
    matrix: &AnnotationMatrix,
    cfg: &TrainConfig,
    architecture: Architecture,
    featurizer: Featurizer,
    nets: Vec<net::Net>,
    slots: Vec<Option<SlotRef>>,
    summary: TrainSummary,
) -> TrainedModel {
    TrainedModel {
        model: AnnotatorModel {
            architecture,
            annotators: matrix.annotators().to_vec(),
            tie_policy: matrix.tie_policy(),
            dropout: cfg.dropout,
            featurizer,
            nets,
            slots,
        },
        summary,
        config: cfg.clone(),
    }
}

fn validation_for<'a>(
    matrix: &'a AnnotationMatrix,
    split: &'a FoldIndices,
    prep: &'a Prepared,
    architecture: Architecture,
    slots: &'a [Option<SlotRef>],
) -> Option<Box<dyn Fn(&[&Net]) -> Result<f64> + 'a>> {
    (!split.validation.is_empty()).then(|| {
        Box::new(majority_f1(
            matrix,
            &split.validation,
            &prep.inputs,
            architecture,
            slots,
        )) as Box<_>
    })
}

/// Softmax classifier trained on majority labels only.
pub fn train_baseline(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let prep = prepare(matrix, split, cfg)?;
    let examples = split
        .train
        .iter()
        .map(|&i| Ok((i, Target::Class(matrix.majority_label(i)?))))
        .collect::<Result<Vec<_>>>()?;
    let enc = cfg.encoder(&prep.featurizer);
    let unit = Unit::new(0, cfg.seed, cfg, examples, |r| Net::softmax(enc, r))?;
    let validate = validation_for(matrix, split, &prep, Architecture::Baseline, &[]);
    let (nets, summary) = fit(vec![unit], &prep.inputs, cfg, validate.as_deref())?;
    drop(validate);
    Ok(finish(
        matrix,
        cfg,
        Architecture::Baseline,
        prep.featurizer,
        nets,
        Vec::new(),
        summary,
    ))
}

/// One independent classifier per annotator, trained on that annotator's
/// labels within the training split. Member `j` is seeded with
/// `seed + j`; members without training labels are flagged.
pub fn train_ensemble(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let prep = prepare(matrix, split, cfg)?;
    let enc = cfg.encoder(&prep.featurizer);
    let mut per_annotator: Vec<Vec<(usize, Target)>> = vec![Vec::new(); matrix.n_annotators()];
    for &i in &split.train {
        for &(j, y) in matrix.row(i) {
            per_annotator[j].push((i, Target::Class(y)));
        }
    }
    let mut units = Vec::new();
    let mut slots = Vec::with_capacity(matrix.n_annotators());
    for (j, examples) in per_annotator.into_iter().enumerate() {
        if examples.is_empty() {
            slots.push(None);
            continue;
        }
        slots.push(Some(SlotRef {
            net: units.len(),
            output: 0,
        }));
        let seed = cfg.seed.wrapping_add(j as u64);
        units.push(Unit::new(j, seed, cfg, examples, |r| Net::softmax(enc, r))?);
    }
    if units.is_empty() {
        return Err(Error::Training(
            "no ensemble member has training labels".into(),
        ));
    }
    let validate = validation_for(matrix, split, &prep, Architecture::Ensemble, &slots);
    let (nets, summary) = fit(units, &prep.inputs, cfg, validate.as_deref())?;
    drop(validate);
    Ok(finish(
        matrix,
        cfg,
        Architecture::Ensemble,
        prep.featurizer,
        nets,
        slots,
        summary,
    ))
}

fn shared_slots(matrix: &AnnotationMatrix, split: &FoldIndices) -> Vec<Option<SlotRef>> {
    let mut seen = vec![false; matrix.n_annotators()];
    for &i in &split.train {
        for &(j, _) in matrix.row(i) {
            seen[j] = true;
        }
    }
    seen.iter()
        .enumerate()
        .map(|(j, &s)| s.then_some(SlotRef { net: 0, output: j }))
        .collect()
}

fn train_shared(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
    architecture: Architecture,
) -> Result<TrainedModel> {
    let prep = prepare(matrix, split, cfg)?;
    let enc = cfg.encoder(&prep.featurizer);
    let n = matrix.n_annotators();
    let examples = split
        .train
        .iter()
        .map(|&i| (i, annotation_target(matrix, i)))
        .collect();
    let unit = Unit::new(0, cfg.seed, cfg, examples, |r| match architecture {
        Architecture::MultiLabel => Net::sigmoid(enc, n, r),
        _ => Net::per_annotator(enc, n, r),
    })?;
    let slots = shared_slots(matrix, split);
    let validate = validation_for(matrix, split, &prep, architecture, &slots);
    let (nets, summary) = fit(vec![unit], &prep.inputs, cfg, validate.as_deref())?;
    drop(validate);
    Ok(finish(
        matrix,
        cfg,
        architecture,
        prep.featurizer,
        nets,
        slots,
        summary,
    ))
}

/// Shared encoder with one sigmoid output per annotator; the loss sums
/// binary cross-entropy over observed labels only.
pub fn train_multilabel(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_shared(matrix, split, cfg, Architecture::MultiLabel)
}

/// Shared encoder with one softmax head per annotator; the loss sums
/// cross-entropy over the heads of observed labels only.
pub fn train_multitask(
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_shared(matrix, split, cfg, Architecture::MultiTask)
}

pub fn train(
    architecture: Architecture,
    matrix: &AnnotationMatrix,
    split: &FoldIndices,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    match architecture {
        Architecture::Baseline => train_baseline(matrix, split, cfg),
        Architecture::Ensemble => train_ensemble(matrix, split, cfg),
        Architecture::MultiLabel => train_multilabel(matrix, split, cfg),
        Architecture::MultiTask => train_multitask(matrix, split, cfg),
    }
}

/// Seed of a training run inside a larger experiment.
pub fn run_seed(master: u64, iteration: usize, fold: usize) -> u64 {
    rng::derive(master, &[iteration as u64, fold as u64])
}
