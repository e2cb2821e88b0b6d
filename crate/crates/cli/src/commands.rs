use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use annot_core::corpus::{save_corpus, write_ground_truth, Format};
use annot_core::eval::{
    evaluate_all, run_experiment, train_all, Artifact, EvalReport, InstanceDump, PlannedFold,
    RunKind, TimingReport,
};
use annot_core::models::{write_trace, Checkpoint};
use annot_core::uncert::{
    write_uncertainty_dump, DisagreementRegressor, TrainedRegressor, UncertaintyRecord,
};
use annot_core::{Error, Result};

use crate::config::{Dataset, RunConfig};
use crate::Global;

fn load_config(
    path: &Path,
    global: &Global,
    out_dir: &mut Option<PathBuf>,
) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = Some(out.clone());
    }
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("out_dir: not set in the config and no --out given".into()))?;
    *out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_filter(out: &Path, data: &Dataset) -> Result<()> {
    match &data.filter {
        Some(f) => write_json(&out.join("filter.json"), f),
        None => Ok(()),
    }
}

fn run_name(fold: &PlannedFold, kind: RunKind) -> String {
    format!("{}-it{}-f{}", kind.name(), fold.iteration, fold.fold)
}

fn save_artifact(out: &Path, fold: &PlannedFold, artifact: &Artifact) -> Result<()> {
    let name = run_name(fold, artifact.kind());
    let path = out.join("checkpoints").join(format!("{name}.json"));
    match artifact {
        Artifact::Model(m) => Checkpoint::from_trained(m).save(&path),
        Artifact::Regressor(r) => r.checkpoint().save(&path),
    }
}

fn save_trace(out: &Path, fold: &PlannedFold, artifact: &Artifact) -> Result<()> {
    let trace = match artifact {
        Artifact::Model(m) => &m.summary.trace,
        Artifact::Regressor(r) => &r.summary.trace,
    };
    let path = out
        .join("traces")
        .join(format!("{}.csv", run_name(fold, artifact.kind())));
    write_trace(trace, &path)
}

fn load_artifact(dir: &Path, fold: &PlannedFold, kind: RunKind) -> Result<Artifact> {
    let path = dir.join(format!("{}.json", run_name(fold, kind)));
    let mismatch = |what: String| Error::Argument(format!("{}: {what}", path.display()));
    if !path.exists() {
        return Err(mismatch(
            "checkpoint missing for the configured runs".into(),
        ));
    }
    let (kind_name, seed, artifact) = match kind {
        RunKind::Model(_) => {
            let ck: Checkpoint = Checkpoint::load(&path)?;
            (ck.kind.clone(), ck.seed, Artifact::Model(ck.into_trained()))
        }
        RunKind::Regressor => {
            let ck: Checkpoint<DisagreementRegressor> = Checkpoint::load(&path)?;
            (
                ck.kind.clone(),
                ck.seed,
                Artifact::Regressor(TrainedRegressor::from_checkpoint(ck)),
            )
        }
    };
    if kind_name != kind.name() {
        return Err(mismatch(format!(
            "holds a {kind_name} model, expected {}",
            kind.name()
        )));
    }
    if seed != fold.seed {
        return Err(mismatch(format!(
            "trained with seed {seed}, the config implies {}",
            fold.seed
        )));
    }
    Ok(artifact)
}

fn write_evaluation(
    out: &Path,
    report: &EvalReport,
    dump: &InstanceDump,
    uncertainty: &[UncertaintyRecord],
) -> Result<String> {
    write_json(&out.join("report.json"), report)?;
    let text = report.to_text();
    write_text(&out.join("report.txt"), &text)?;
    dump.write_csv(&out.join("instances.csv"))?;
    write_uncertainty_dump(uncertainty, &out.join("uncertainty.csv"))?;
    Ok(text)
}

fn write_timing(out: &Path, timing: &TimingReport) -> Result<String> {
    write_json(&out.join("timing.json"), timing)?;
    let text = timing.to_text();
    write_text(&out.join("timing.txt"), &text)?;
    Ok(text)
}

pub fn synth(path: &Path, global: &Global, out_dir: &mut Option<PathBuf>) -> Result<()> {
    let (cfg, out) = load_config(path, global, out_dir)?;
    cfg.validate_data()?;
    if cfg.synthetic_config().is_none() {
        return Err(Error::Config(
            "data: synth needs a `synthetic` section or a `preset`".into(),
        ));
    }
    let data = cfg.load_data()?;
    let corpus = data.synthetic.expect("synthetic source");
    create_dir(&out)?;
    save_corpus(&data.matrix, &out.join("corpus.jsonl"), Format::Jsonl)?;
    write_ground_truth(&corpus.truth, &out.join("truth.jsonl"))?;
    let stats = data.matrix.stats();
    write_json(&out.join("stats.json"), &stats)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    print!("{stats}");
    Ok(())
}

pub fn train(path: &Path, global: &Global, out_dir: &mut Option<PathBuf>) -> Result<()> {
    let (cfg, out) = load_config(path, global, out_dir)?;
    cfg.validate()?;
    let data = cfg.load_data()?;
    let exp = cfg.experiment(Some(&data.matrix))?;
    for dir in ["checkpoints", "traces"] {
        create_dir(&out.join(dir))?;
    }
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    write_filter(&out, &data)?;
    let (folds, timing) = train_all(&data.matrix, &exp, global.jobs, |fold, artifact| {
        save_artifact(&out, fold, artifact)?;
        save_trace(&out, fold, artifact)
    })?;
    write_json(&out.join("folds.json"), &folds)?;
    print!("{}", write_timing(&out, &timing)?);
    Ok(())
}

pub fn eval(path: &Path, global: &Global, out_dir: &mut Option<PathBuf>) -> Result<()> {
    let (cfg, out) = load_config(path, global, out_dir)?;
    cfg.validate()?;
    let data = cfg.load_data()?;
    let exp = cfg.experiment(Some(&data.matrix))?;
    let checkpoints = global
        .checkpoints
        .clone()
        .unwrap_or_else(|| out.join("checkpoints"));
    let (report, dump, uncertainty) = evaluate_all(
        &data.matrix,
        data.expected.as_deref(),
        &exp,
        global.jobs,
        |fold, kind| load_artifact(&checkpoints, fold, kind),
    )?;
    create_dir(&out)?;
    print!("{}", write_evaluation(&out, &report, &dump, &uncertainty)?);
    Ok(())
}

pub fn compare(path: &Path, global: &Global, out_dir: &mut Option<PathBuf>) -> Result<()> {
    let (cfg, out) = load_config(path, global, out_dir)?;
    if global.checkpoints.is_some() {
        return Err(Error::Argument("--checkpoints applies to eval only".into()));
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    let exp = cfg.experiment(Some(&data.matrix))?;
    create_dir(&out.join("traces"))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    write_filter(&out, &data)?;
    let experiment = run_experiment(
        &data.matrix,
        data.expected.as_deref(),
        &exp,
        global.jobs,
        |fold, artifact| save_trace(&out, fold, artifact),
    )?;
    let report = write_evaluation(
        &out,
        &experiment.report,
        &experiment.dump,
        &experiment.uncertainty,
    )?;
    let timing = write_timing(&out, &experiment.timing)?;
    print!("{report}\n{timing}");
    Ok(())
}
