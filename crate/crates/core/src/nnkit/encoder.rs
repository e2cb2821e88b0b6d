//! The trainable text encoder producing the shared representation `h`.
//!
//! Token mode: mean-pooled embeddings, dropout, `tanh` layer of width `d`,
//! dropout, second `tanh` layer of width `d`. Embedding mode skips the
//! embedding table and feeds a precomputed vector into the same two layers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{DropoutMode, Tape, Var};
use super::vocab::{tokenize, Vocabulary};
use crate::corpus::Instance;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputKind {
    Tokens { vocab_size: usize, embed_dim: usize },
    Embedding { dim: usize },
}

impl InputKind {
    /// Width of the pooled (or supplied) input vector.
    pub fn width(&self) -> usize {
        match *self {
            InputKind::Tokens { embed_dim, .. } => embed_dim,
            InputKind::Embedding { dim } => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input: InputKind,
    /// Representation width `d`; every head is shaped from it.
    pub hidden_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub table: Option<ParamId>,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Borrowed model input.
#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a> {
    Tokens(&'a [usize]),
    Embedding(&'a [f64]),
}

/// Owned, pre-processed model input of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EncodedInput {
    Tokens(Vec<usize>),
    Embedding(Vec<f64>),
}

impl EncodedInput {
    pub fn as_input(&self) -> ModelInput<'_> {
        match self {
            EncodedInput::Tokens(t) => ModelInput::Tokens(t),
            EncodedInput::Embedding(e) => ModelInput::Embedding(e),
        }
    }
}

/// Turns instances into model inputs: tokenization against a vocabulary
/// built from training texts, or pass-through of frozen embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Featurizer {
    Vocabulary { vocab: Vocabulary },
    Embedding { dim: usize },
}

impl Featurizer {
    pub fn fit<'a>(
        instances: impl IntoIterator<Item = &'a Instance>,
        embedding_dim: Option<usize>,
    ) -> Self {
        match embedding_dim {
            Some(dim) => Featurizer::Embedding { dim },
            None => Featurizer::Vocabulary {
                vocab: Vocabulary::build(instances.into_iter().map(|i| i.text.as_str())),
            },
        }
    }

    pub fn encode(&self, instance: &Instance) -> Result<EncodedInput> {
        match self {
            Featurizer::Vocabulary { vocab } => {
                Ok(EncodedInput::Tokens(tokenize(&instance.text, vocab)))
            }
            Featurizer::Embedding { dim } => match &instance.embedding {
                Some(e) if e.len() == *dim => Ok(EncodedInput::Embedding(e.clone())),
                Some(e) => Err(Error::Argument(format!(
                    "instance `{}` has embedding length {}, model expects {dim}",
                    instance.id,
                    e.len()
                ))),
                None => Err(Error::Argument(format!(
                    "instance `{}` has no embedding but the model runs in embedding mode",
                    instance.id
                ))),
            },
        }
    }

    pub fn encode_all(&self, instances: &[Instance]) -> Result<Vec<EncodedInput>> {
        instances.iter().map(|i| self.encode(i)).collect()
    }

    pub fn input_kind(&self, embed_dim: usize) -> InputKind {
        match self {
            Featurizer::Vocabulary { vocab } => InputKind::Tokens {
                vocab_size: vocab.len(),
                embed_dim,
            },
            Featurizer::Embedding { dim } => InputKind::Embedding { dim: *dim },
        }
    }
}

fn uniform(rng: &mut Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

fn xavier(rng: &mut Rng, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_out * fan_in, limit)
}

impl Encoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = config.hidden_dim;
        let e = config.input.width();
        if d == 0 || e == 0 {
            return Err(Error::Argument("encoder widths must be positive".into()));
        }
        let table = match config.input {
            InputKind::Tokens {
                vocab_size,
                embed_dim,
            } => {
                let data = uniform(rng, vocab_size * embed_dim, 1.0);
                Some(store.add(format!("{prefix}embedding"), vocab_size, embed_dim, data))
            }
            InputKind::Embedding { .. } => None,
        };
        let w1 = store.add(format!("{prefix}ff1.weight"), d, e, xavier(rng, d, e));
        let b1 = store.add(format!("{prefix}ff1.bias"), 1, d, vec![0.0; d]);
        let w2 = store.add(format!("{prefix}ff2.weight"), d, d, xavier(rng, d, d));
        let b2 = store.add(format!("{prefix}ff2.bias"), 1, d, vec![0.0; d]);
        Ok(Encoder {
            config,
            table,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn width(&self) -> usize {
        self.config.hidden_dim
    }

    /// Pooled input vector before the feed-forward layers.
    pub fn pool(&self, tape: &mut Tape<'_>, input: ModelInput<'_>) -> Result<Var> {
        match (input, self.config.input, self.table) {
            (ModelInput::Tokens(tokens), InputKind::Tokens { vocab_size, .. }, Some(table)) => {
                if tokens.is_empty() {
                    return Err(Error::Argument("empty token sequence".into()));
                }
                if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
                    return Err(Error::Argument(format!(
                        "token index {bad} out of range for vocabulary of {vocab_size}"
                    )));
                }
                Ok(tape.embed_mean(table, tokens))
            }
            (ModelInput::Embedding(values), InputKind::Embedding { dim }, _) => {
                if values.len() != dim {
                    return Err(Error::Argument(format!(
                        "embedding length {} does not match encoder input {dim}",
                        values.len()
                    )));
                }
                Ok(tape.constant(values.to_vec()))
            }
            _ => Err(Error::Argument(
                "input kind does not match the encoder".into(),
            )),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        input: ModelInput<'_>,
        dropout: &mut DropoutMode<'_>,
    ) -> Result<Var> {
        let pooled = self.pool(tape, input)?;
        let pooled = dropout.apply(tape, pooled);
        let z1 = tape.affine(self.w1, self.b1, pooled);
        let h1 = tape.tanh(z1);
        let h1 = dropout.apply(tape, h1);
        let z2 = tape.affine(self.w2, self.b2, h1);
        let h = tape.tanh(z2);
        if tape.value(h).iter().any(|v| !v.is_finite()) {
            let params = tape.params();
            let blocks = [
                self.table,
                Some(self.w1),
                Some(self.b1),
                Some(self.w2),
                Some(self.b2),
            ];
            let block = blocks
                .into_iter()
                .flatten()
                .map(|id| params.get(id))
                .find(|b| b.data.iter().any(|v| !v.is_finite()))
                .map(|b| b.name.clone())
                .unwrap_or_else(|| "encoder input".into());
            return Err(Error::Numeric { block });
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn setup() -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(4);
        let cfg = EncoderConfig {
            input: InputKind::Tokens {
                vocab_size: 6,
                embed_dim: 4,
            },
            hidden_dim: 5,
        };
        let enc = Encoder::init(&mut store, "enc.", cfg, &mut r).unwrap();
        (store, enc)
    }

    #[test]
    fn zero_rate_dropout_matches_inference() {
        let (store, enc) = setup();
        let mut r = rng::seeded(9);
        let mut t1 = Tape::new(&store);
        let a = enc
            .forward(
                &mut t1,
                ModelInput::Tokens(&[2, 3, 5]),
                &mut DropoutMode::Off,
            )
            .unwrap();
        let mut t2 = Tape::new(&store);
        let mut on = DropoutMode::On {
            rate: 0.0,
            rng: &mut r,
        };
        let b = enc
            .forward(&mut t2, ModelInput::Tokens(&[2, 3, 5]), &mut on)
            .unwrap();
        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn mean_pool_ignores_repetition() {
        let (store, enc) = setup();
        let mut t = Tape::new(&store);
        let once = enc.pool(&mut t, ModelInput::Tokens(&[3])).unwrap();
        let twice = enc.pool(&mut t, ModelInput::Tokens(&[3, 3])).unwrap();
        assert_eq!(t.value(once), t.value(twice));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut store, enc) = setup();
        let mut t = Tape::new(&store);
        assert!(enc
            .forward(&mut t, ModelInput::Tokens(&[6]), &mut DropoutMode::Off)
            .is_err());
        assert!(enc
            .forward(
                &mut t,
                ModelInput::Embedding(&[0.0; 4]),
                &mut DropoutMode::Off
            )
            .is_err());
        store.get_mut(enc.w2).data[0] = f64::NAN;
        let mut t = Tape::new(&store);
        match enc.forward(&mut t, ModelInput::Tokens(&[2]), &mut DropoutMode::Off) {
            Err(Error::Numeric { block }) => assert_eq!(block, "enc.ff2.weight"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_mode_passes_vectors_through() {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(4);
        let cfg = EncoderConfig {
            input: InputKind::Embedding { dim: 3 },
            hidden_dim: 2,
        };
        let enc = Encoder::init(&mut store, "", cfg, &mut r).unwrap();
        assert!(enc.table.is_none());
        let mut t = Tape::new(&store);
        let h = enc
            .forward(
                &mut t,
                ModelInput::Embedding(&[0.1, 0.2, 0.3]),
                &mut DropoutMode::Off,
            )
            .unwrap();
        assert_eq!(t.value(h).len(), 2);
    }
}
