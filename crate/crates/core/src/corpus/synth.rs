//! Synthetic annotated corpora with a known generative model.
//!
//! Each instance is a bag of tokens. Ordinary tokens carry a hidden weight
//! and the latent score of an instance is the mean weight of its ordinary
//! tokens; some instances additionally contain a trigger token. Annotator
//! `j` labels an instance positive iff
//! `latent + bias_j * [trigger] > threshold_j`, then flips the label with
//! probability `noise_j`. Annotator subsets are dealt from reshuffled decks,
//! so every instance sees a uniformly random subset and per-annotator
//! counts stay balanced.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotationMatrix, Entry, Instance, TiePolicy};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorProfile {
    pub id: String,
    pub threshold: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise: f64,
}

/// Shorthand for `count` annotators sharing bias and noise, with thresholds
/// spread evenly over `threshold ± threshold_spread`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorGroup {
    pub name: String,
    pub count: usize,
    pub threshold: f64,
    #[serde(default)]
    pub threshold_spread: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise: f64,
}

impl AnnotatorGroup {
    pub fn expand(&self) -> Vec<AnnotatorProfile> {
        (0..self.count)
            .map(|k| {
                let offset = if self.count > 1 {
                    -self.threshold_spread
                        + 2.0 * self.threshold_spread * k as f64 / (self.count - 1) as f64
                } else {
                    0.0
                };
                AnnotatorProfile {
                    id: format!("{}{:02}", self.name, k),
                    threshold: self.threshold + offset,
                    bias: self.bias,
                    noise: self.noise,
                }
            })
            .collect()
    }
}

fn default_min_tokens() -> usize {
    8
}
fn default_max_tokens() -> usize {
    16
}
fn default_weight_sd() -> f64 {
    1.0
}
fn default_ordinary() -> usize {
    120
}
fn default_triggers() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub instances: usize,
    pub annotations_per_instance: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of ordinary (latent-score carrying) tokens.
    #[serde(default = "default_ordinary")]
    pub ordinary_tokens: usize,
    #[serde(default = "default_triggers")]
    pub trigger_tokens: usize,
    #[serde(default)]
    pub trigger_rate: f64,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Token weights are drawn from `Normal(weight_mean, weight_sd)`.
    #[serde(default)]
    pub weight_mean: f64,
    #[serde(default = "default_weight_sd")]
    pub weight_sd: f64,
    #[serde(default)]
    pub annotators: Vec<AnnotatorProfile>,
    #[serde(default)]
    pub groups: Vec<AnnotatorGroup>,
    #[serde(default)]
    pub tie_policy: TiePolicy,
}

impl SyntheticConfig {
    /// Two opposed annotator groups of nine: on trigger instances one group
    /// leans positive and the other negative. 2,000 instances, five
    /// annotations per instance, flip noise 0.1.
    pub fn two_group_benchmark(seed: u64) -> Self {
        SyntheticConfig {
            instances: 2000,
            annotations_per_instance: 5,
            seed,
            ordinary_tokens: 120,
            trigger_tokens: 4,
            trigger_rate: 0.3,
            min_tokens: 8,
            max_tokens: 16,
            weight_mean: 0.0,
            weight_sd: 1.0,
            annotators: Vec::new(),
            groups: vec![
                AnnotatorGroup {
                    name: "lean-pos-".into(),
                    count: 9,
                    threshold: 0.12,
                    threshold_spread: 0.08,
                    bias: 0.3,
                    noise: 0.1,
                },
                AnnotatorGroup {
                    name: "lean-neg-".into(),
                    count: 9,
                    threshold: 0.12,
                    threshold_spread: 0.08,
                    bias: -0.3,
                    noise: 0.1,
                },
            ],
            tie_policy: TiePolicy::Positive,
        }
    }

    /// Explicit annotators followed by expanded groups.
    pub fn profiles(&self) -> Vec<AnnotatorProfile> {
        let mut out = self.annotators.clone();
        out.extend(self.groups.iter().flat_map(AnnotatorGroup::expand));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad =
            |field: &str, msg: String| Err(Error::Config(format!("synthetic.{field}: {msg}")));
        let profiles = self.profiles();
        if profiles.is_empty() {
            return bad("annotators", "at least one annotator is required".into());
        }
        let mut ids = std::collections::HashSet::new();
        for (k, p) in profiles.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.noise) {
                return bad(
                    &format!("annotators[{k}].noise"),
                    format!("{} not in [0, 1]", p.noise),
                );
            }
            if !p.threshold.is_finite() || !p.bias.is_finite() {
                return bad(
                    &format!("annotators[{k}]"),
                    "threshold and bias must be finite".into(),
                );
            }
            if !ids.insert(p.id.clone()) {
                return bad(
                    &format!("annotators[{k}].id"),
                    format!("duplicate id `{}`", p.id),
                );
            }
        }
        if self.instances == 0 {
            return bad("instances", "must be at least 1".into());
        }
        if self.annotations_per_instance == 0 || self.annotations_per_instance > profiles.len() {
            return bad(
                "annotations_per_instance",
                format!(
                    "{} not in [1, {}] (number of annotators)",
                    self.annotations_per_instance,
                    profiles.len()
                ),
            );
        }
        if self.instances * self.annotations_per_instance < profiles.len() {
            return bad(
                "instances",
                "too few annotation slots for every annotator to label something".into(),
            );
        }
        if self.ordinary_tokens == 0 {
            return bad("ordinary_tokens", "must be at least 1".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("min_tokens", "need 1 <= min_tokens <= max_tokens".into());
        }
        if !(0.0..=1.0).contains(&self.trigger_rate) {
            return bad(
                "trigger_rate",
                format!("{} not in [0, 1]", self.trigger_rate),
            );
        }
        if self.trigger_rate > 0.0 && self.trigger_tokens == 0 {
            return bad(
                "trigger_tokens",
                "must be at least 1 when trigger_rate > 0".into(),
            );
        }
        if !(self.weight_sd >= 0.0 && self.weight_sd.is_finite()) || !self.weight_mean.is_finite() {
            return bad(
                "weight_sd",
                "token weight distribution must be finite with sd >= 0".into(),
            );
        }
        Ok(())
    }
}

/// Per-instance generative ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub instance_id: String,
    pub latent_score: f64,
    pub expected_disagreement: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub matrix: AnnotationMatrix,
    pub truth: Vec<GroundTruth>,
    pub trigger: Vec<bool>,
    pub profiles: Vec<AnnotatorProfile>,
}

/// Expected annotation variance when `m` annotators are drawn uniformly
/// without replacement from a pool whose members label positive with
/// probabilities `q`, independently.
pub fn expected_disagreement(q: &[f64], m: usize) -> f64 {
    let n = q.len();
    assert!(
        m >= 1 && m <= n,
        "subset size {m} out of range for {n} annotators"
    );
    let s1: f64 = q.iter().sum();
    let s2: f64 = q.iter().map(|v| v * v).sum();
    let mf = m as f64;
    let nf = n as f64;
    let e_k = mf * s1 / nf;
    let pair = if n > 1 {
        (s1 * s1 - s2) / (nf * (nf - 1.0))
    } else {
        0.0
    };
    let e_k2 = e_k + mf * (mf - 1.0) * pair;
    ((mf * e_k - e_k2) / (mf * mf)).max(0.0)
}

/// Probability that the annotator labels positive.
fn positive_probability(p: &AnnotatorProfile, latent: f64, trigger: bool) -> f64 {
    let shifted = latent + if trigger { p.bias } else { 0.0 };
    if shifted > p.threshold {
        1.0 - p.noise
    } else {
        p.noise
    }
}

struct Deck {
    cards: Vec<usize>,
    size: usize,
}

impl Deck {
    fn draw(&mut self, m: usize, r: &mut rng::Rng) -> Vec<usize> {
        if self.cards.len() < m {
            let mut fresh: Vec<usize> = (0..self.size).collect();
            fresh.shuffle(r);
            self.cards.extend(fresh);
        }
        let mut chosen = Vec::with_capacity(m);
        let mut k = 0;
        while chosen.len() < m {
            let c = self.cards[k];
            if chosen.contains(&c) {
                k += 1;
            } else {
                chosen.push(c);
                self.cards.remove(k);
            }
        }
        chosen.sort_unstable();
        chosen
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let profiles = config.profiles();
    let mut r = rng::seeded(config.seed);

    let weight_dist = Normal::new(config.weight_mean, config.weight_sd)
        .map_err(|e| Error::Config(format!("synthetic.weight_sd: {e}")))?;
    let weights: Vec<f64> = (0..config.ordinary_tokens)
        .map(|_| weight_dist.sample(&mut r))
        .collect();

    let m = config.annotations_per_instance;
    let mut deck = Deck {
        cards: Vec::new(),
        size: profiles.len(),
    };
    let mut instances = Vec::with_capacity(config.instances);
    let mut entries = Vec::with_capacity(config.instances * m);
    let mut truth = Vec::with_capacity(config.instances);
    let mut triggers = Vec::with_capacity(config.instances);

    for i in 0..config.instances {
        let len = r.random_range(config.min_tokens..=config.max_tokens);
        let mut tokens: Vec<String> = Vec::with_capacity(len + 1);
        let mut latent = 0.0;
        for _ in 0..len {
            let v = r.random_range(0..config.ordinary_tokens);
            latent += weights[v];
            tokens.push(format!("w{v:03}"));
        }
        latent /= len as f64;
        let trigger = config.trigger_rate > 0.0 && r.random_bool(config.trigger_rate);
        if trigger {
            let t = r.random_range(0..config.trigger_tokens);
            let pos = r.random_range(0..=tokens.len());
            tokens.insert(pos, format!("trig{t}"));
        }

        let id = format!("syn{i:05}");
        for j in deck.draw(m, &mut r) {
            let clean =
                latent + if trigger { profiles[j].bias } else { 0.0 } > profiles[j].threshold;
            let flip = profiles[j].noise > 0.0 && r.random_bool(profiles[j].noise);
            entries.push(Entry {
                instance: i,
                annotator: j,
                label: clean != flip,
            });
        }
        let q: Vec<f64> = profiles
            .iter()
            .map(|p| positive_probability(p, latent, trigger))
            .collect();
        truth.push(GroundTruth {
            instance_id: id.clone(),
            latent_score: latent,
            expected_disagreement: expected_disagreement(&q, m),
        });
        instances.push(Instance::text(id, tokens.join(" ")));
        triggers.push(trigger);
    }

    let matrix = AnnotationMatrix::new(
        instances,
        profiles.iter().map(|p| p.id.clone()).collect(),
        entries,
        config.tie_policy,
    )?;
    Ok(SyntheticCorpus {
        matrix,
        truth,
        trigger: triggers,
        profiles,
    })
}
