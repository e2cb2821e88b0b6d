//! Repeated stratified cross-validation (or a fixed split) over a set of
//! architectures, with report assembly.
//!
//! A run is keyed by (iteration, fold, model). Runs are independent and
//! may execute concurrently; [`assemble`] is the single merge point and
//! orders everything by key, so the report does not depend on scheduling.
//! Wall-clock timings are kept out of [`EvalReport`] so that reports of
//! repeated runs compare byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::analysis::{
    error_buckets, mismatch_analysis, ErrorBuckets, MismatchInput, MismatchReport,
};
use super::metrics::{
    individual_label_scores, majority_vs_annotations, pairwise_correlation, pearson,
};
use super::metrics::{CorrelationMatrix, IndividualEval, Prf};
use super::text::Table;
use crate::corpus::{fixed_split, mean_sd, stratified_kfold, AnnotationMatrix, FoldIndices};
use crate::models::{
    self, Architecture, MajorityPrediction, SlotPrediction, TrainConfig, TrainedModel,
};
use crate::uncert::{self, Estimator, TrainedRegressor, UncertaintyRecord, UncertaintyScore};
use crate::{rng, Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum EvalMode {
    /// `iterations` rounds of stratified `k`-fold, each with a fresh split.
    Cv { iterations: usize, k: usize },
    /// One stratified holdout.
    Holdout { test_fraction: f64 },
    /// A given train/validation/test split.
    Predefined { split: FoldIndices },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub architectures: Vec<Architecture>,
    /// Shared training settings; the seed is replaced per run.
    pub train: TrainConfig,
    pub mode: EvalMode,
    pub estimators: Vec<Estimator>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.architectures.is_empty() {
            return Err(Error::Config(
                "architectures: at least one is required".into(),
            ));
        }
        let has = |a| self.architectures.contains(&a);
        for e in &self.estimators {
            match e {
                Estimator::Softmax | Estimator::McDropout if !has(Architecture::Baseline) => {
                    return Err(Error::Config(format!(
                        "uncertainty.estimators: {e} needs the baseline architecture"
                    )));
                }
                Estimator::AnnotationVariance
                    if !self.architectures.iter().any(|a| a.models_annotators()) =>
                {
                    return Err(Error::Config(
                        "uncertainty.estimators: annotation-variance needs a multi-annotator architecture".into(),
                    ));
                }
                _ => {}
            }
        }
        if self.estimators.contains(&Estimator::McDropout) && self.mc_samples < 2 {
            return Err(Error::Config(
                "uncertainty.mc_samples: must be at least 2".into(),
            ));
        }
        match self.mode {
            EvalMode::Cv { iterations, k } if iterations == 0 || k < 2 => Err(Error::Config(
                "eval: cv needs iterations >= 1 and k >= 2".into(),
            )),
            EvalMode::Holdout { test_fraction }
                if !(test_fraction > 0.0 && test_fraction < 1.0) =>
            {
                Err(Error::Config(
                    "eval.test_fraction: must be in (0, 1)".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    fn validation_fraction(&self) -> f64 {
        if self.train.patience.is_some() {
            self.train.validation_fraction
        } else {
            0.0
        }
    }
}

/// What a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Model(Architecture),
    Regressor,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Model(a) => a.name(),
            RunKind::Regressor => "regressor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedFold {
    pub iteration: usize,
    pub fold: usize,
    /// Training seed shared by every model of this fold.
    pub seed: u64,
    pub indices: FoldIndices,
}

/// Fold layout of an experiment. Every iteration of cross-validation draws
/// a fresh stratified split from its own seed.
pub fn plan_folds(matrix: &AnnotationMatrix, cfg: &ExperimentConfig) -> Result<Vec<PlannedFold>> {
    let vf = cfg.validation_fraction();
    match &cfg.mode {
        EvalMode::Cv { iterations, k } => {
            let mut folds = Vec::with_capacity(iterations * k);
            for it in 0..*iterations {
                let split = stratified_kfold(matrix, *k, rng::derive(cfg.seed, &[it as u64]))?;
                for f in 0..*k {
                    let seed = models::run_seed(cfg.seed, it, f);
                    folds.push(PlannedFold {
                        iteration: it,
                        fold: f,
                        seed,
                        indices: split.fold(matrix, f, vf, rng::derive(seed, &[1]))?,
                    });
                }
            }
            Ok(folds)
        }
        EvalMode::Holdout { test_fraction } => Ok(vec![PlannedFold {
            iteration: 0,
            fold: 0,
            seed: models::run_seed(cfg.seed, 0, 0),
            indices: fixed_split(matrix, *test_fraction, vf, rng::derive(cfg.seed, &[0]))?,
        }]),
        EvalMode::Predefined { split } => {
            check_predefined(matrix, split)?;
            Ok(vec![PlannedFold {
                iteration: 0,
                fold: 0,
                seed: models::run_seed(cfg.seed, 0, 0),
                indices: split.clone(),
            }])
        }
    }
}

fn check_predefined(matrix: &AnnotationMatrix, split: &FoldIndices) -> Result<()> {
    let mut seen = vec![false; matrix.n_instances()];
    for &i in split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
    {
        match seen.get_mut(i) {
            Some(s) if !*s => *s = true,
            Some(_) => {
                return Err(Error::Argument(format!(
                    "instance {i} appears twice in the split"
                )))
            }
            None => return Err(Error::Argument(format!("split index {i} out of range"))),
        }
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Argument(
            "split needs non-empty train and test sets".into(),
        ));
    }
    Ok(())
}

/// Runs of an experiment in canonical order.
pub fn run_kinds(cfg: &ExperimentConfig) -> Vec<RunKind> {
    let mut archs = cfg.architectures.clone();
    archs.sort();
    archs.dedup();
    let mut kinds: Vec<RunKind> = archs.into_iter().map(RunKind::Model).collect();
    if cfg.estimators.contains(&Estimator::Regressor) {
        kinds.push(RunKind::Regressor);
    }
    kinds
}

#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    Model(TrainedModel),
    Regressor(TrainedRegressor),
}

impl Artifact {
    pub fn kind(&self) -> RunKind {
        match self {
            Artifact::Model(m) => RunKind::Model(m.model.architecture),
            Artifact::Regressor(_) => RunKind::Regressor,
        }
    }

    fn summary(&self) -> &models::TrainSummary {
        match self {
            Artifact::Model(m) => &m.summary,
            Artifact::Regressor(r) => &r.summary,
        }
    }
}

fn with_provenance<T>(fold: &PlannedFold, kind: RunKind, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Fold {
        iteration: fold.iteration,
        fold: fold.fold,
        architecture: kind.name().into(),
        source: Box::new(e),
    })
}

/// Trains one run and returns it with its wall-clock seconds.
pub fn train_run(
    matrix: &AnnotationMatrix,
    fold: &PlannedFold,
    kind: RunKind,
    cfg: &ExperimentConfig,
) -> Result<(Artifact, f64)> {
    let train = TrainConfig {
        seed: fold.seed,
        ..cfg.train.clone()
    };
    let start = Instant::now();
    let artifact = match kind {
        RunKind::Model(a) => models::train(a, matrix, &fold.indices, &train).map(Artifact::Model),
        RunKind::Regressor => uncert::train_disagreement_regressor(matrix, &fold.indices, &train)
            .map(Artifact::Regressor),
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok((with_provenance(fold, kind, artifact)?, seconds))
}

/// Per-run metrics stored in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub fold: usize,
    pub model: RunKind,
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Majority-vote predictions against gold majority labels.
    pub majority: Option<Prf>,
    /// Per-slot predictions against raw annotations.
    pub individual: Option<IndividualEval>,
    /// Instance-level predictions of the baseline against raw annotations.
    pub majority_vs_annotations: Option<Prf>,
    /// Squared error of the regressor against observed disagreement.
    pub regression_mse: Option<f64>,
    pub flagged: Vec<String>,
}

/// One uncertainty series of a run, aligned with the fold's test set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub name: String,
    pub estimator: Estimator,
    pub owner: Option<Architecture>,
    pub scores: Vec<UncertaintyScore>,
    pub seeds: Vec<Option<u64>>,
}

/// Evaluation output of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEval {
    pub record: RunRecord,
    pub test: Vec<usize>,
    pub majority: Vec<MajorityPrediction>,
    pub slots: Vec<Vec<Option<SlotPrediction>>>,
    pub series: Vec<ScoreSeries>,
}

pub fn series_name(estimator: Estimator, owner: Option<Architecture>) -> String {
    match owner {
        Some(a) => format!(
            "{a}/{}",
            if estimator == Estimator::AnnotationVariance {
                "variance"
            } else {
                estimator.name()
            }
        ),
        None => estimator.name().to_string(),
    }
}

fn mc_seed(fold: &PlannedFold, instance: usize) -> u64 {
    rng::derive(fold.seed, &[2, instance as u64])
}

/// Evaluates a trained run on its fold's test set.
pub fn evaluate_run(
    matrix: &AnnotationMatrix,
    fold: &PlannedFold,
    artifact: &Artifact,
    cfg: &ExperimentConfig,
) -> Result<RunEval> {
    let kind = artifact.kind();
    with_provenance(fold, kind, evaluate_inner(matrix, fold, artifact, cfg))
}

fn evaluate_inner(
    matrix: &AnnotationMatrix,
    fold: &PlannedFold,
    artifact: &Artifact,
    cfg: &ExperimentConfig,
) -> Result<RunEval> {
    let test = fold.indices.test.clone();
    let summary = artifact.summary();
    let mut record = RunRecord {
        iteration: fold.iteration,
        fold: fold.fold,
        model: artifact.kind(),
        seed: fold.seed,
        train_size: fold.indices.train.len(),
        validation_size: fold.indices.validation.len(),
        test_size: test.len(),
        epochs_run: summary.epochs_run,
        best_epoch: summary.best_epoch,
        majority: None,
        individual: None,
        majority_vs_annotations: None,
        regression_mse: None,
        flagged: Vec::new(),
    };
    let golds = test
        .iter()
        .map(|&i| matrix.majority_label(i))
        .collect::<Result<Vec<bool>>>()?;
    let wants = |e| cfg.estimators.contains(&e);
    let mut series = Vec::new();
    let mut majority = Vec::with_capacity(test.len());
    let mut slots = Vec::new();

    match artifact {
        Artifact::Model(trained) => {
            let model = &trained.model;
            if model.annotators.as_slice() != matrix.annotators() {
                return Err(Error::Argument(
                    "model annotators do not match the corpus".into(),
                ));
            }
            record.flagged = model
                .flagged()
                .into_iter()
                .map(|j| model.annotators[j].clone())
                .collect();
            let inputs = test
                .iter()
                .map(|&i| model.encode(&matrix.instances()[i]))
                .collect::<Result<Vec<_>>>()?;
            let arch = model.architecture;
            if arch.models_annotators() {
                for x in &inputs {
                    slots.push(model.predict_annotations(x.as_input())?);
                }
                record.individual = Some(individual_label_scores(matrix, &test, &slots)?);
                if wants(Estimator::AnnotationVariance) {
                    let scores = slots
                        .iter()
                        .map(|row| {
                            let labels: Vec<Option<bool>> =
                                row.iter().map(|s| s.map(|s| s.label)).collect();
                            uncert::variance_uncertainty(&labels)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    series.push(ScoreSeries {
                        name: series_name(Estimator::AnnotationVariance, Some(arch)),
                        estimator: Estimator::AnnotationVariance,
                        owner: Some(arch),
                        seeds: vec![None; scores.len()],
                        scores,
                    });
                }
            }
            for x in &inputs {
                majority.push(model.predict_majority(x.as_input())?);
            }
            if arch == Architecture::Baseline {
                let labels: Vec<bool> = majority.iter().map(|m| m.label).collect();
                record.majority_vs_annotations =
                    Some(majority_vs_annotations(matrix, &test, &labels)?);
                if wants(Estimator::Softmax) {
                    let scores: Vec<UncertaintyScore> = majority
                        .iter()
                        .map(|m| {
                            uncert::softmax_score(m.probability.expect("baseline probability"))
                        })
                        .collect();
                    series.push(ScoreSeries {
                        name: series_name(Estimator::Softmax, Some(arch)),
                        estimator: Estimator::Softmax,
                        owner: Some(arch),
                        seeds: vec![None; scores.len()],
                        scores,
                    });
                }
                if wants(Estimator::McDropout) {
                    let seeds: Vec<u64> = test.iter().map(|&i| mc_seed(fold, i)).collect();
                    let scores = inputs
                        .iter()
                        .zip(&seeds)
                        .map(|(x, &s)| {
                            uncert::mc_dropout_uncertainty(model, x.as_input(), cfg.mc_samples, s)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    series.push(ScoreSeries {
                        name: series_name(Estimator::McDropout, Some(arch)),
                        estimator: Estimator::McDropout,
                        owner: Some(arch),
                        seeds: seeds.into_iter().map(Some).collect(),
                        scores,
                    });
                }
            }
            let labels: Vec<bool> = majority.iter().map(|m| m.label).collect();
            record.majority = Some(super::prf(&labels, &golds)?);
        }
        Artifact::Regressor(trained) => {
            let r = &trained.regressor;
            let mut scores = Vec::with_capacity(test.len());
            let mut sq = 0.0;
            for &i in &test {
                let v = r.predict(r.encode(&matrix.instances()[i])?.as_input())?;
                sq += (v - matrix.disagreement(i)?).powi(2);
                scores.push(UncertaintyScore {
                    value: v,
                    estimator: Estimator::Regressor,
                    samples: None,
                    probability_variance: None,
                });
            }
            record.regression_mse = Some(sq / test.len() as f64);
            series.push(ScoreSeries {
                name: series_name(Estimator::Regressor, None),
                estimator: Estimator::Regressor,
                owner: None,
                seeds: vec![None; scores.len()],
                scores,
            });
        }
    }
    Ok(RunEval {
        record,
        test,
        majority,
        slots,
        series,
    })
}

/// Mean and sample standard deviation over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, sd) = mean_sd(values);
        Summary {
            mean,
            sd,
            n: values.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl PrfSummary {
    fn of<'a>(prfs: impl Iterator<Item = &'a Prf> + Clone) -> Option<Self> {
        let pick = |f: fn(&Prf) -> f64| Summary::of(&prfs.clone().map(f).collect::<Vec<_>>());
        prfs.clone().next()?;
        Some(PrfSummary {
            precision: pick(|p| p.precision),
            recall: pick(|p| p.recall),
            f1: pick(|p| p.f1),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: RunKind,
    pub runs: usize,
    pub majority: Option<PrfSummary>,
    pub individual: Option<PrfSummary>,
    pub majority_vs_annotations: Option<PrfSummary>,
    pub regression_mse: Option<Summary>,
    pub flagged_slots: Summary,
}

/// Correlation of one uncertainty series with a disagreement reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub series: String,
    pub estimator: Estimator,
    /// `observed` (disagreement of the gold annotations) or `expected`
    /// (generative ground truth, synthetic corpora only).
    pub reference: String,
    /// Pearson r over the pooled test folds of each iteration; `None` when
    /// undefined.
    pub per_iteration: Vec<Option<f64>>,
    pub per_fold: Vec<Option<f64>>,
    /// Summary over the defined iterations.
    pub summary: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub series: String,
    pub owner: Architecture,
    pub buckets: ErrorBuckets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeCheck {
    pub series: String,
    pub min: f64,
    pub max: f64,
    pub within_bounds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub seed: u64,
    pub mode: EvalMode,
    pub corpus: CorpusSummary,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ModelSummary>,
    pub correlations: Vec<CorrelationRow>,
    /// Pairwise correlation of the uncertainty series, averaged over the
    /// iterations where every pair is defined.
    pub pairwise: Option<CorrelationMatrix>,
    pub pairwise_iterations: usize,
    pub buckets: Vec<BucketRow>,
    pub mismatch: Option<MismatchReport>,
    pub ranges: Vec<RangeCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub instances: usize,
    pub annotators: usize,
    pub annotations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub iteration: usize,
    pub fold: usize,
    pub model: RunKind,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: RunKind,
    pub runs: usize,
    pub seconds: Summary,
    pub median_seconds: f64,
    /// Median run time relative to the baseline median.
    pub ratio_to_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub generated_unix_seconds: u64,
    pub records: Vec<TimingRecord>,
    pub rows: Vec<TimingRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl TimingReport {
    pub fn new(mut records: Vec<TimingRecord>) -> Self {
        records.sort_by_key(|r| (r.model, r.iteration, r.fold));
        let mut by_model: BTreeMap<RunKind, Vec<f64>> = BTreeMap::new();
        for r in &records {
            by_model.entry(r.model).or_default().push(r.seconds);
        }
        let base = by_model
            .get(&RunKind::Model(Architecture::Baseline))
            .map(|v| median(v));
        let rows = by_model
            .iter()
            .map(|(&model, secs)| {
                let med = median(secs);
                TimingRow {
                    model,
                    runs: secs.len(),
                    seconds: Summary::of(secs),
                    median_seconds: med,
                    ratio_to_baseline: base.filter(|b| *b > 0.0).map(|b| med / b),
                }
            })
            .collect();
        let generated_unix_seconds = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        TimingReport {
            generated_unix_seconds,
            records,
            rows,
        }
    }

    pub fn ratio(&self, model: RunKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model)?
            .ratio_to_baseline
    }

    pub fn to_text(&self) -> String {
        let mut t = Table::new(&["model", "runs", "mean s", "sd s", "median s", "x baseline"]);
        for r in &self.rows {
            t.row(vec![
                r.model.name().into(),
                r.runs.to_string(),
                format!("{:.3}", r.seconds.mean),
                format!("{:.3}", r.seconds.sd),
                format!("{:.3}", r.median_seconds),
                r.ratio_to_baseline
                    .map_or("-".into(), |v| format!("{v:.2}")),
            ]);
        }
        format!("Training time\n{}", t.render())
    }
}

/// Per-instance rows of every run, for external plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceDump {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl InstanceDump {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Everything an experiment produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub report: EvalReport,
    pub timing: TimingReport,
    pub dump: InstanceDump,
    pub uncertainty: Vec<UncertaintyRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Merges run evaluations into the report, the per-instance dump and the
/// uncertainty dump. `expected` holds generative disagreement per instance
/// when known.
pub fn assemble(
    matrix: &AnnotationMatrix,
    expected: Option<&[f64]>,
    cfg: &ExperimentConfig,
    mut runs: Vec<RunEval>,
) -> Result<(EvalReport, InstanceDump, Vec<UncertaintyRecord>)> {
    if let Some(e) = expected {
        if e.len() != matrix.n_instances() {
            return Err(Error::Argument(
                "expected disagreement does not cover the corpus".into(),
            ));
        }
    }
    runs.sort_by(|a, b| {
        (a.record.iteration, a.record.fold, a.record.model).cmp(&(
            b.record.iteration,
            b.record.fold,
            b.record.model,
        ))
    });

    let kinds = run_kinds(cfg);
    let summaries = kinds
        .iter()
        .map(|&kind| {
            let recs: Vec<&RunRecord> = runs
                .iter()
                .map(|r| &r.record)
                .filter(|r| r.model == kind)
                .collect();
            let mse: Vec<f64> = recs.iter().filter_map(|r| r.regression_mse).collect();
            let flagged: Vec<f64> = recs.iter().map(|r| r.flagged.len() as f64).collect();
            ModelSummary {
                model: kind,
                runs: recs.len(),
                majority: PrfSummary::of(recs.iter().filter_map(|r| r.majority.as_ref())),
                individual: PrfSummary::of(
                    recs.iter()
                        .filter_map(|r| r.individual.as_ref().map(|e| &e.prf)),
                ),
                majority_vs_annotations: PrfSummary::of(
                    recs.iter()
                        .filter_map(|r| r.majority_vs_annotations.as_ref()),
                ),
                regression_mse: (!mse.is_empty()).then(|| Summary::of(&mse)),
                flagged_slots: Summary::of(&flagged),
            }
        })
        .collect();

    // series name -> iteration -> instance -> value
    let mut pooled: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, f64>>> = BTreeMap::new();
    let mut estimator_of: BTreeMap<String, Estimator> = BTreeMap::new();
    let mut series_order: Vec<String> = Vec::new();
    for run in &runs {
        for s in &run.series {
            if !series_order.contains(&s.name) {
                series_order.push(s.name.clone());
            }
            estimator_of.insert(s.name.clone(), s.estimator);
            let by_inst = pooled
                .entry(s.name.clone())
                .or_default()
                .entry(run.record.iteration)
                .or_default();
            for (&i, sc) in run.test.iter().zip(&s.scores) {
                by_inst.insert(i, sc.value);
            }
        }
    }
    series_order.sort();
    let iterations: Vec<usize> = {
        let mut v: Vec<usize> = runs.iter().map(|r| r.record.iteration).collect();
        v.dedup();
        v
    };
    let folds: Vec<(usize, usize)> = {
        let mut v: Vec<(usize, usize)> = runs
            .iter()
            .map(|r| (r.record.iteration, r.record.fold))
            .collect();
        v.dedup();
        v
    };
    let observed = matrix.disagreements();
    let mut references: Vec<(&str, &[f64])> = vec![("observed", &observed)];
    if let Some(e) = expected {
        references.push(("expected", e));
    }

    let mut correlations = Vec::new();
    for (ref_name, reference) in &references {
        for name in &series_order {
            let per_iteration: Vec<Option<f64>> = iterations
                .iter()
                .map(|it| {
                    let m = &pooled[name][it];
                    let xs: Vec<f64> = m.values().copied().collect();
                    let ys: Vec<f64> = m.keys().map(|&i| reference[i]).collect();
                    pearson(&xs, &ys).ok()
                })
                .collect();
            let per_fold: Vec<Option<f64>> = folds
                .iter()
                .map(|&(it, f)| {
                    let run = runs.iter().find(|r| {
                        r.record.iteration == it
                            && r.record.fold == f
                            && r.series.iter().any(|s| &s.name == name)
                    })?;
                    let s = run.series.iter().find(|s| &s.name == name)?;
                    let xs: Vec<f64> = s.scores.iter().map(|v| v.value).collect();
                    let ys: Vec<f64> = run.test.iter().map(|&i| reference[i]).collect();
                    pearson(&xs, &ys).ok()
                })
                .collect();
            let defined: Vec<f64> = per_iteration.iter().flatten().copied().collect();
            correlations.push(CorrelationRow {
                series: name.clone(),
                estimator: estimator_of[name],
                reference: ref_name.to_string(),
                summary: (!defined.is_empty()).then(|| Summary::of(&defined)),
                per_iteration,
                per_fold,
            });
        }
    }

    let mut pairwise = None;
    let mut pairwise_iterations = 0;
    if series_order.len() >= 2 {
        let mut acc = vec![vec![0.0; series_order.len()]; series_order.len()];
        for it in &iterations {
            let table: Vec<(String, Vec<f64>)> = series_order
                .iter()
                .map(|n| (n.clone(), pooled[n][it].values().copied().collect()))
                .collect();
            if let Ok(m) = pairwise_correlation(&table) {
                pairwise_iterations += 1;
                for (a, row) in m.values.iter().enumerate() {
                    for (b, v) in row.iter().enumerate() {
                        acc[a][b] += v;
                    }
                }
            }
        }
        if pairwise_iterations > 0 {
            let n = pairwise_iterations as f64;
            let k = series_order.len();
            let mut values = vec![vec![1.0; k]; k];
            for a in 0..k {
                for b in a + 1..k {
                    let v = acc[a][b] / n;
                    values[a][b] = v;
                    values[b][a] = v;
                }
            }
            pairwise = Some(CorrelationMatrix {
                names: series_order.clone(),
                values,
            });
        }
    }

    let mut bucket_inputs: BTreeMap<String, (Architecture, Vec<bool>, Vec<bool>, Vec<f64>)> =
        BTreeMap::new();
    for run in &runs {
        for s in &run.series {
            let Some(owner) = s.owner else { continue };
            let e = bucket_inputs
                .entry(s.name.clone())
                .or_insert((owner, vec![], vec![], vec![]));
            for (t, &i) in run.test.iter().enumerate() {
                e.1.push(run.majority[t].label);
                e.2.push(matrix.majority_label(i)?);
                e.3.push(s.scores[t].value);
            }
        }
    }
    let buckets = bucket_inputs
        .into_iter()
        .map(|(series, (owner, p, g, s))| {
            Ok(BucketRow {
                series,
                owner,
                buckets: error_buckets(&p, &g, &s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mismatch = {
        let mut ids = Vec::new();
        let (mut golds, mut bl, mut mt, mut heads, mut ann) =
            (vec![], vec![], vec![], vec![], vec![]);
        let mut any = false;
        for &(it, f) in &folds {
            let find = |a| {
                runs.iter().find(|r| {
                    r.record.iteration == it
                        && r.record.fold == f
                        && r.record.model == RunKind::Model(a)
                })
            };
            let (Some(b), Some(m)) = (find(Architecture::Baseline), find(Architecture::MultiTask))
            else {
                continue;
            };
            any = true;
            for (t, &i) in b.test.iter().enumerate() {
                ids.push(matrix.instances()[i].id.clone());
                golds.push(matrix.majority_label(i)?);
                bl.push(b.majority[t].label);
                mt.push(m.majority[t].label);
                heads.push(m.majority[t].positive_fraction.unwrap_or(0.0));
                ann.push(matrix.positive_fraction(i));
            }
        }
        if any {
            Some(mismatch_analysis(&MismatchInput {
                ids: &ids,
                golds: &golds,
                baseline: &bl,
                multitask: &mt,
                head_fractions: &heads,
                annotation_fractions: &ann,
            })?)
        } else {
            None
        }
    };

    let ranges = series_order
        .iter()
        .map(|name| {
            let vals: Vec<f64> = pooled[name]
                .values()
                .flat_map(|m| m.values().copied())
                .collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let hi = if estimator_of[name] == Estimator::Softmax {
                0.5
            } else {
                0.25
            };
            RangeCheck {
                series: name.clone(),
                min,
                max,
                within_bounds: min >= 0.0 && max <= hi,
            }
        })
        .collect();

    // per-instance dump
    let archs: Vec<Architecture> = kinds
        .iter()
        .filter_map(|k| match k {
            RunKind::Model(a) => Some(*a),
            RunKind::Regressor => None,
        })
        .collect();
    let mut columns: Vec<String> = [
        "iteration",
        "fold",
        "instance_id",
        "gold",
        "disagreement",
        "expected_disagreement",
    ]
    .map(String::from)
    .to_vec();
    columns.extend(archs.iter().map(|a| format!("pred_{a}")));
    columns.extend(series_order.iter().map(|n| format!("unc_{n}")));
    let mut rows = Vec::new();
    let mut uncertainty = Vec::new();
    for &(it, f) in &folds {
        let fold_runs: Vec<&RunEval> = runs
            .iter()
            .filter(|r| r.record.iteration == it && r.record.fold == f)
            .collect();
        let Some(first) = fold_runs.first() else {
            continue;
        };
        for (t, &i) in first.test.iter().enumerate() {
            let mut row = vec![
                it.to_string(),
                f.to_string(),
                matrix.instances()[i].id.clone(),
                u8::from(matrix.majority_label(i)?).to_string(),
                format!("{}", observed[i]),
                fmt_opt(expected.map(|e| e[i])),
            ];
            for a in &archs {
                let v = fold_runs
                    .iter()
                    .find(|r| r.record.model == RunKind::Model(*a))
                    .map(|r| u8::from(r.majority[t].label).to_string());
                row.push(v.unwrap_or_default());
            }
            for name in &series_order {
                let v = fold_runs
                    .iter()
                    .flat_map(|r| r.series.iter())
                    .find(|s| &s.name == name)
                    .map(|s| format!("{}", s.scores[t].value));
                row.push(v.unwrap_or_default());
            }
            rows.push(row);
        }
        for run in &fold_runs {
            for s in &run.series {
                for (t, &i) in run.test.iter().enumerate() {
                    uncertainty.push(UncertaintyRecord {
                        instance_id: matrix.instances()[i].id.clone(),
                        estimator: s.name.clone(),
                        value: s.scores[t].value,
                        sample_count: s.scores[t].samples,
                        seed: s.seeds[t],
                    });
                }
            }
        }
    }

    let report = EvalReport {
        format_version: REPORT_VERSION,
        seed: cfg.seed,
        mode: cfg.mode.clone(),
        corpus: CorpusSummary {
            instances: matrix.n_instances(),
            annotators: matrix.n_annotators(),
            annotations: matrix.n_entries(),
        },
        runs: runs.iter().map(|r| r.record.clone()).collect(),
        summaries,
        correlations,
        pairwise,
        pairwise_iterations,
        buckets,
        mismatch,
        ranges,
    };
    Ok((report, InstanceDump { columns, rows }, uncertainty))
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let results: Vec<Result<R>> = if jobs <= 1 {
        items.iter().map(f).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        pool.install(|| items.par_iter().map(f).collect())
    };
    results.into_iter().collect()
}

fn tasks<'a>(folds: &'a [PlannedFold], cfg: &ExperimentConfig) -> Vec<(&'a PlannedFold, RunKind)> {
    let kinds = run_kinds(cfg);
    folds
        .iter()
        .flat_map(|f| kinds.iter().map(move |&k| (f, k)))
        .collect()
}

/// Trains and evaluates every run, using up to `jobs` threads. Each trained
/// artifact is passed to `keep` before it is evaluated and dropped.
pub fn run_experiment(
    matrix: &AnnotationMatrix,
    expected: Option<&[f64]>,
    cfg: &ExperimentConfig,
    jobs: usize,
    keep: impl Fn(&PlannedFold, &Artifact) -> Result<()> + Sync + Send,
) -> Result<Experiment> {
    cfg.validate()?;
    let folds = plan_folds(matrix, cfg)?;
    let outputs = par_map(&tasks(&folds, cfg), jobs, |&(fold, kind)| {
        let (artifact, seconds) = train_run(matrix, fold, kind, cfg)?;
        keep(fold, &artifact)?;
        let eval = evaluate_run(matrix, fold, &artifact, cfg)?;
        Ok((
            eval,
            TimingRecord {
                iteration: fold.iteration,
                fold: fold.fold,
                model: kind,
                seconds,
            },
        ))
    })?;
    let (evals, timing): (Vec<RunEval>, Vec<TimingRecord>) = outputs.into_iter().unzip();
    let (report, dump, uncertainty) = assemble(matrix, expected, cfg, evals)?;
    Ok(Experiment {
        report,
        timing: TimingReport::new(timing),
        dump,
        uncertainty,
    })
}

/// Trains every run without evaluating, handing each artifact to `keep`.
pub fn train_all(
    matrix: &AnnotationMatrix,
    cfg: &ExperimentConfig,
    jobs: usize,
    keep: impl Fn(&PlannedFold, &Artifact) -> Result<()> + Sync + Send,
) -> Result<(Vec<PlannedFold>, TimingReport)> {
    cfg.validate()?;
    let folds = plan_folds(matrix, cfg)?;
    let timing = par_map(&tasks(&folds, cfg), jobs, |&(fold, kind)| {
        let (artifact, seconds) = train_run(matrix, fold, kind, cfg)?;
        keep(fold, &artifact)?;
        Ok(TimingRecord {
            iteration: fold.iteration,
            fold: fold.fold,
            model: kind,
            seconds,
        })
    })?;
    Ok((folds, TimingReport::new(timing)))
}

/// Evaluates previously trained runs supplied by `load`.
pub fn evaluate_all(
    matrix: &AnnotationMatrix,
    expected: Option<&[f64]>,
    cfg: &ExperimentConfig,
    jobs: usize,
    load: impl Fn(&PlannedFold, RunKind) -> Result<Artifact> + Sync + Send,
) -> Result<(EvalReport, InstanceDump, Vec<UncertaintyRecord>)> {
    cfg.validate()?;
    let folds = plan_folds(matrix, cfg)?;
    let evals = par_map(&tasks(&folds, cfg), jobs, |&(fold, kind)| {
        let artifact = load(fold, kind)?;
        if artifact.kind() != kind {
            return Err(Error::Argument(format!(
                "expected a {} model for iteration {} fold {}, found {}",
                kind.name(),
                fold.iteration,
                fold.fold,
                artifact.kind().name()
            )));
        }
        evaluate_run(matrix, fold, &artifact, cfg)
    })?;
    assemble(matrix, expected, cfg, evals)
}
