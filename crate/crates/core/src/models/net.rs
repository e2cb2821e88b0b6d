//! A trainable network: the shared encoder plus one of the output heads.

use serde::{Deserialize, Serialize};

use crate::nnkit::ModelInput;
use crate::nnkit::{
    sigmoid_head, softmax_head, DropoutMode, Encoder, EncoderConfig, Grads, ParamId, ParamStore,
    Tape, Var,
};
use crate::rng::Rng;
use crate::{Error, Result};
use rand::Rng as _;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Head {
    /// One 2×d softmax head.
    Softmax { w: ParamId, b: ParamId },
    /// An n×d matrix with one sigmoid output per row.
    Sigmoid { w: ParamId, b: ParamId },
    /// n disjoint 2×d softmax heads.
    PerAnnotator { heads: Vec<(ParamId, ParamId)> },
    /// A 1×d row whose sigmoid output is scaled to [0, 0.25].
    Regression { w: ParamId, b: ParamId },
}

/// Training target of one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(bool),
    /// Dense per-annotator labels; only dimensions with `observed[j]` count.
    Annotations {
        labels: Vec<f64>,
        observed: Vec<bool>,
    },
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub params: ParamStore,
    pub encoder: Encoder,
    pub head: Head,
}

pub const REGRESSION_SCALE: f64 = 0.25;

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect()
}

impl Net {
    fn with_encoder(config: EncoderConfig, rng: &mut Rng) -> Result<(ParamStore, Encoder)> {
        let mut params = ParamStore::new();
        let encoder = Encoder::init(&mut params, "encoder.", config, rng)?;
        Ok((params, encoder))
    }

    pub fn softmax(config: EncoderConfig, rng: &mut Rng) -> Result<Net> {
        let (mut params, encoder) = Self::with_encoder(config, rng)?;
        let d = config.hidden_dim;
        let w = params.add("head.weight", 2, d, xavier(rng, 2, d));
        let b = params.add("head.bias", 1, 2, vec![0.0; 2]);
        Ok(Net {
            params,
            encoder,
            head: Head::Softmax { w, b },
        })
    }

    pub fn sigmoid(config: EncoderConfig, outputs: usize, rng: &mut Rng) -> Result<Net> {
        let (mut params, encoder) = Self::with_encoder(config, rng)?;
        let d = config.hidden_dim;
        let w = params.add("head.weight", outputs, d, xavier(rng, outputs, d));
        let b = params.add("head.bias", 1, outputs, vec![0.0; outputs]);
        Ok(Net {
            params,
            encoder,
            head: Head::Sigmoid { w, b },
        })
    }

    pub fn per_annotator(config: EncoderConfig, outputs: usize, rng: &mut Rng) -> Result<Net> {
        let (mut params, encoder) = Self::with_encoder(config, rng)?;
        let d = config.hidden_dim;
        let heads = (0..outputs)
            .map(|j| {
                let w = params.add(format!("head{j}.weight"), 2, d, xavier(rng, 2, d));
                let b = params.add(format!("head{j}.bias"), 1, 2, vec![0.0; 2]);
                (w, b)
            })
            .collect();
        Ok(Net {
            params,
            encoder,
            head: Head::PerAnnotator { heads },
        })
    }

    pub fn regression(config: EncoderConfig, rng: &mut Rng) -> Result<Net> {
        let (mut params, encoder) = Self::with_encoder(config, rng)?;
        let d = config.hidden_dim;
        let w = params.add("head.weight", 1, d, xavier(rng, 1, d));
        let b = params.add("head.bias", 1, 1, vec![0.0]);
        Ok(Net {
            params,
            encoder,
            head: Head::Regression { w, b },
        })
    }

    /// Number of per-instance outputs of [`Net::predict`].
    pub fn outputs(&self) -> usize {
        match &self.head {
            Head::Softmax { .. } | Head::Regression { .. } => 1,
            Head::Sigmoid { w, .. } => self.params.get(*w).rows,
            Head::PerAnnotator { heads } => heads.len(),
        }
    }

    /// Per-instance loss recorded on `tape`.
    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        input: ModelInput<'_>,
        target: &Target,
        dropout: &mut DropoutMode<'_>,
    ) -> Result<Var> {
        let h = self.encoder.forward(tape, input, dropout)?;
        match (&self.head, target) {
            (Head::Softmax { w, b }, Target::Class(y)) => {
                let z = tape.affine(*w, *b, h);
                Ok(tape.softmax_xent(z, usize::from(*y)))
            }
            (Head::Sigmoid { w, b }, Target::Annotations { labels, observed }) => {
                self.check_width(labels, observed)?;
                let z = tape.affine(*w, *b, h);
                Ok(tape.masked_sigmoid_bce(z, labels, observed))
            }
            (Head::PerAnnotator { heads }, Target::Annotations { labels, observed }) => {
                self.check_width(labels, observed)?;
                let terms: Vec<Var> = heads
                    .iter()
                    .zip(labels.iter().zip(observed))
                    .filter(|(_, (_, &o))| o)
                    .map(|(&(w, b), (&y, _))| {
                        let z = tape.affine(w, b, h);
                        tape.softmax_xent(z, usize::from(y >= 0.5))
                    })
                    .collect();
                if terms.is_empty() {
                    return Err(Error::Argument("instance has no observed label".into()));
                }
                Ok(tape.sum(&terms))
            }
            (Head::Regression { w, b }, Target::Value(v)) => {
                let z = tape.affine(*w, *b, h);
                let s = tape.sigmoid(z);
                let y = tape.scale(s, REGRESSION_SCALE);
                Ok(tape.squared_error(y, *v))
            }
            _ => Err(Error::Argument(
                "target does not match the network head".into(),
            )),
        }
    }

    fn check_width(&self, labels: &[f64], observed: &[bool]) -> Result<()> {
        let n = self.outputs();
        if labels.len() != n || observed.len() != n {
            return Err(Error::Argument(format!(
                "target has {} labels for a head with {n} outputs",
                labels.len()
            )));
        }
        Ok(())
    }

    /// Positive-class probability of every output (the scaled regression
    /// value for a regression head).
    pub fn predict(
        &self,
        input: ModelInput<'_>,
        dropout: &mut DropoutMode<'_>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let hv = self.encoder.forward(&mut tape, input, dropout)?;
        let h = tape.value(hv);
        let p = &self.params;
        let out = match &self.head {
            Head::Softmax { w, b } => vec![softmax_head(h, &p.get(*w).data, &p.get(*b).data)[1]],
            Head::Sigmoid { w, b } => {
                let (wb, bb) = (p.get(*w), p.get(*b));
                (0..wb.rows)
                    .map(|j| sigmoid_head(h, wb.row(j), bb.data[j]))
                    .collect()
            }
            Head::PerAnnotator { heads } => heads
                .iter()
                .map(|&(w, b)| softmax_head(h, &p.get(w).data, &p.get(b).data)[1])
                .collect(),
            Head::Regression { w, b } => {
                vec![REGRESSION_SCALE * sigmoid_head(h, p.get(*w).row(0), p.get(*b).data[0])]
            }
        };
        Ok(out)
    }
}

/// Mean per-instance loss of a batch and its gradient.
pub fn batch_loss(
    net: &Net,
    batch: &[(ModelInput<'_>, &Target)],
    dropout: &mut DropoutMode<'_>,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut tape = Tape::new(&net.params);
    let mut terms = Vec::with_capacity(batch.len());
    for (input, target) in batch {
        terms.push(net.loss(&mut tape, *input, target, dropout)?);
    }
    let total = tape.sum(&terms);
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    let value = tape.scalar(mean);
    if !value.is_finite() {
        return Err(Error::Numeric {
            block: "loss".into(),
        });
    }
    Ok((value, tape.backward(mean)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{functions::sigmoid, InputKind};
    use crate::rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            input: InputKind::Tokens {
                vocab_size: 7,
                embed_dim: 3,
            },
            hidden_dim: 4,
        }
    }

    #[test]
    fn multilabel_matches_direct_row_evaluation() {
        let net = Net::sigmoid(cfg(), 5, &mut rng::seeded(2)).unwrap();
        let input = ModelInput::Tokens(&[2, 4, 6]);
        let probs = net.predict(input, &mut DropoutMode::Off).unwrap();
        let mut tape = Tape::new(&net.params);
        let h = net
            .encoder
            .forward(&mut tape, input, &mut DropoutMode::Off)
            .unwrap();
        let h = tape.value(h).to_vec();
        let Head::Sigmoid { w, b } = net.head else {
            unreachable!()
        };
        for (j, p) in probs.iter().enumerate() {
            let row = net.params.get(w).row(j);
            let z: f64 =
                row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + net.params.get(b).data[j];
            assert_eq!(*p, sigmoid(z));
        }
    }

    #[test]
    fn zero_heads_give_half() {
        let mut net = Net::per_annotator(cfg(), 3, &mut rng::seeded(1)).unwrap();
        let Head::PerAnnotator { heads } = net.head.clone() else {
            unreachable!()
        };
        for (w, b) in heads {
            net.params.get_mut(w).data.fill(0.0);
            net.params.get_mut(b).data.fill(0.0);
        }
        let probs = net
            .predict(ModelInput::Tokens(&[1]), &mut DropoutMode::Off)
            .unwrap();
        assert_eq!(probs, vec![0.5; 3]);
    }

    #[test]
    fn regression_output_is_bounded() {
        let mut net = Net::regression(cfg(), &mut rng::seeded(3)).unwrap();
        let Head::Regression { b, .. } = net.head else {
            unreachable!()
        };
        for bias in [-1e6, 0.0, 1e6] {
            net.params.get_mut(b).data[0] = bias;
            let v = net
                .predict(ModelInput::Tokens(&[3]), &mut DropoutMode::Off)
                .unwrap()[0];
            assert!((0.0..=REGRESSION_SCALE).contains(&v));
        }
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let net = Net::softmax(cfg(), &mut rng::seeded(3)).unwrap();
        let mut tape = Tape::new(&net.params);
        let r = net.loss(
            &mut tape,
            ModelInput::Tokens(&[1]),
            &Target::Value(0.1),
            &mut DropoutMode::Off,
        );
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn every_head_passes_a_gradient_check() {
        let annotations = Target::Annotations {
            labels: vec![1.0, 0.0, 1.0],
            observed: vec![true, false, true],
        };
        let cases = [
            (
                Net::softmax(cfg(), &mut rng::seeded(1)).unwrap(),
                Target::Class(true),
            ),
            (
                Net::sigmoid(cfg(), 3, &mut rng::seeded(2)).unwrap(),
                annotations.clone(),
            ),
            (
                Net::per_annotator(cfg(), 3, &mut rng::seeded(3)).unwrap(),
                annotations,
            ),
            (
                Net::regression(cfg(), &mut rng::seeded(4)).unwrap(),
                Target::Value(0.2),
            ),
        ];
        let tokens = [1usize, 5, 5, 2];
        for (net, target) in &cases {
            let batch = [(ModelInput::Tokens(&tokens), target)];
            let (_, grads) = batch_loss(net, &batch, &mut DropoutMode::Off).unwrap();
            let report = crate::nnkit::check_gradients(&net.params, &grads, 1e-5, |p| {
                let mut tape = Tape::new(p);
                let l = net.loss(
                    &mut tape,
                    ModelInput::Tokens(&tokens),
                    target,
                    &mut DropoutMode::Off,
                )?;
                Ok(tape.scalar(l))
            })
            .unwrap();
            assert!(report.max_relative_error < 1e-6, "{report:?}");
            assert_eq!(report.checked, net.params.n_params());
        }
    }
}
