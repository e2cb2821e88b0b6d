//! Run configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use annot_core::corpus::{
    filter_annotators, generate_synthetic, load_corpus, read_ground_truth, AnnotationMatrix,
    FilterReport, FoldIndices, Format, SyntheticConfig, SyntheticCorpus, TiePolicy,
};
use annot_core::eval::{EvalMode, ExperimentConfig};
use annot_core::models::{Architecture, TrainConfig};
use annot_core::uncert::{Estimator, DEFAULT_MC_SAMPLES};
use annot_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TwoGroupBenchmark,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    /// Ground-truth sidecar with expected disagreement per instance.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Built-in synthetic corpus. Synthetic corpora are seeded by the
    /// top-level seed.
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub tie_policy: Option<TiePolicy>,
    #[serde(default)]
    pub min_annotations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum EvalSection {
    Cv {
        iterations: usize,
        k: usize,
    },
    Holdout {
        test_fraction: f64,
    },
    /// Split file: CSV with columns `instance_id,set`, set being `train`,
    /// `validation` or `test`.
    Fixed {
        split_file: PathBuf,
    },
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection::Cv {
            iterations: 5,
            k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    #[serde(default)]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
}

fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}

impl Default for UncertaintySection {
    fn default() -> Self {
        UncertaintySection {
            estimators: Vec::new(),
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

/// A loaded corpus with its optional generative ground truth.
pub struct Dataset {
    pub matrix: AnnotationMatrix,
    pub expected: Option<Vec<f64>>,
    pub filter: Option<FilterReport>,
    pub synthetic: Option<SyntheticCorpus>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.data.path {
            cfg.data.path = Some(resolve(base, p));
        }
        if let Some(p) = &cfg.data.truth {
            cfg.data.truth = Some(resolve(base, p));
        }
        if let Some(p) = &cfg.out_dir {
            cfg.out_dir = Some(resolve(base, p));
        }
        if let EvalSection::Fixed { split_file } = &cfg.eval {
            cfg.eval = EvalSection::Fixed {
                split_file: resolve(base, split_file),
            };
        }
        Ok(cfg)
    }

    /// Full validation for commands that train or evaluate.
    pub fn validate(&self) -> Result<()> {
        self.validate_data()?;
        self.experiment(None)?.validate()
    }

    pub fn validate_data(&self) -> Result<()> {
        let d = &self.data;
        let sources = usize::from(d.path.is_some())
            + usize::from(d.preset.is_some())
            + usize::from(d.synthetic.is_some());
        if sources != 1 {
            return Err(Error::Config(
                "data: exactly one of `path`, `preset` or `synthetic` is required".into(),
            ));
        }
        if let Some(p) = &d.path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "data.path: {} does not exist",
                    p.display()
                )));
            }
            if d.format.is_none() && Format::from_path(p).is_none() {
                return Err(Error::Config(format!(
                    "data.format: cannot infer the format of {}",
                    p.display()
                )));
            }
        }
        if let Some(p) = &d.truth {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "data.truth: {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(s) = &d.synthetic {
            if s.seed != 0 {
                return Err(Error::Config(
                    "data.synthetic.seed: the generator uses the top-level seed".into(),
                ));
            }
            s.validate()?;
        }
        if let EvalSection::Fixed { split_file } = &self.eval {
            if !split_file.exists() {
                return Err(Error::Config(format!(
                    "eval.split_file: {} does not exist",
                    split_file.display()
                )));
            }
        }
        Ok(())
    }

    pub fn synthetic_config(&self) -> Option<SyntheticConfig> {
        match (&self.data.preset, &self.data.synthetic) {
            (Some(Preset::TwoGroupBenchmark), _) => {
                Some(SyntheticConfig::two_group_benchmark(self.seed))
            }
            (None, Some(s)) => Some(SyntheticConfig {
                seed: self.seed,
                ..s.clone()
            }),
            _ => None,
        }
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let (mut matrix, mut expected, synthetic) = match self.synthetic_config() {
            Some(s) => {
                let corpus = generate_synthetic(&s)?;
                let expected: Vec<f64> = corpus
                    .truth
                    .iter()
                    .map(|t| t.expected_disagreement)
                    .collect();
                (corpus.matrix.clone(), Some(expected), Some(corpus))
            }
            None => {
                let path = self.data.path.as_ref().expect("validated data source");
                let format = self
                    .data
                    .format
                    .or_else(|| Format::from_path(path))
                    .expect("validated format");
                (load_corpus(path, format)?, None, None)
            }
        };
        if let Some(p) = &self.data.truth {
            let rows = read_ground_truth(p)?;
            let by_id: std::collections::HashMap<&str, f64> = rows
                .iter()
                .map(|r| (r.instance_id.as_str(), r.expected_disagreement))
                .collect();
            let values = matrix
                .instances()
                .iter()
                .map(|inst| {
                    by_id.get(inst.id.as_str()).copied().ok_or_else(|| {
                        Error::MissingData(format!(
                            "{}: no ground truth for instance `{}`",
                            p.display(),
                            inst.id
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            expected = Some(values);
        }
        if let Some(t) = self.data.tie_policy {
            matrix = matrix.with_tie_policy(t);
        }
        let mut filter = None;
        if let Some(min) = self.data.min_annotations {
            let (filtered, report) = filter_annotators(&matrix, min)?;
            if let Some(e) = &expected {
                let index: std::collections::HashMap<&str, usize> = matrix
                    .instances()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x.id.as_str(), i))
                    .collect();
                expected = Some(
                    filtered
                        .instances()
                        .iter()
                        .map(|x| e[index[x.id.as_str()]])
                        .collect(),
                );
            }
            matrix = filtered;
            filter = Some(report);
        }
        Ok(Dataset {
            matrix,
            expected,
            filter,
            synthetic,
        })
    }

    /// Experiment settings; a fixed split needs the corpus to map ids.
    pub fn experiment(&self, matrix: Option<&AnnotationMatrix>) -> Result<ExperimentConfig> {
        let mode = match (&self.eval, matrix) {
            (EvalSection::Cv { iterations, k }, _) => EvalMode::Cv {
                iterations: *iterations,
                k: *k,
            },
            (EvalSection::Holdout { test_fraction }, _) => EvalMode::Holdout {
                test_fraction: *test_fraction,
            },
            (EvalSection::Fixed { split_file }, Some(m)) => EvalMode::Predefined {
                split: read_split(split_file, m)?,
            },
            // the split itself is checked once the corpus is loaded
            (EvalSection::Fixed { .. }, None) => EvalMode::Predefined {
                split: FoldIndices::default(),
            },
        };
        Ok(ExperimentConfig {
            architectures: self.architectures.clone(),
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            mode,
            estimators: self.uncertainty.estimators.clone(),
            mc_samples: self.uncertainty.mc_samples,
            seed: self.seed,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Deserialize)]
struct SplitRow {
    instance_id: String,
    set: String,
}

fn read_split(path: &Path, matrix: &AnnotationMatrix) -> Result<FoldIndices> {
    let index: std::collections::HashMap<&str, usize> = matrix
        .instances()
        .iter()
        .enumerate()
        .map(|(i, x)| (x.id.as_str(), i))
        .collect();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut split = FoldIndices::default();
    for (k, row) in rdr.deserialize::<SplitRow>().enumerate() {
        let line = k + 2;
        let parse = |message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let row = row.map_err(|e| parse(e.to_string()))?;
        let Some(&i) = index.get(row.instance_id.as_str()) else {
            // instances removed by the annotator filter are skipped
            continue;
        };
        match row.set.as_str() {
            "train" => split.train.push(i),
            "validation" => split.validation.push(i),
            "test" => split.test.push(i),
            other => return Err(parse(format!("unknown set `{other}`"))),
        }
    }
    Ok(split)
}
