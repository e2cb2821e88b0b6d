//! Reverse-mode differentiation over vector-valued operations.
//!
//! A [`Tape`] records the forward computation of one loss evaluation as a
//! list of nodes, each holding its output vector and the operation that
//! produced it. [`Tape::backward`] walks the list once in reverse and
//! accumulates parameter gradients into a [`Grads`] buffer. Parameters that
//! never appear on the tape keep an exactly zero gradient.

use rand::Rng as _;

use super::functions::{log_sum_exp, sigmoid, softplus};
use super::params::{Grads, ParamId, ParamStore};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    EmbedMean {
        table: ParamId,
        tokens: Vec<usize>,
    },
    Affine {
        w: ParamId,
        b: ParamId,
        x: Var,
    },
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Mask(Var, Vec<f64>),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    MaskedSigmoidBce {
        logits: Var,
        targets: Vec<f64>,
        mask: Vec<bool>,
    },
    SquaredError {
        x: Var,
        target: f64,
    },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    /// Whether any parameter influences this node.
    live: bool,
}

/// Dropout behaviour of a forward pass.
pub enum DropoutMode<'r> {
    /// Identity (inference).
    Off,
    /// Inverted dropout: units are zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`.
    On { rate: f64, rng: &'r mut Rng },
}

impl DropoutMode<'_> {
    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            DropoutMode::Off => x,
            DropoutMode::On { rate, rng } => tape.dropout(x, *rate, rng),
        }
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op, live: bool) -> Var {
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Mean of the embedding-table rows selected by `tokens`.
    pub fn embed_mean(&mut self, table: ParamId, tokens: &[usize]) -> Var {
        assert!(!tokens.is_empty(), "embed_mean needs at least one token");
        let t = self.params.get(table);
        let mut out = vec![0.0; t.cols];
        for &tok in tokens {
            for (o, v) in out.iter_mut().zip(t.row(tok)) {
                *o += v;
            }
        }
        let n = tokens.len() as f64;
        for o in &mut out {
            *o /= n;
        }
        self.push(
            out,
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
            },
            true,
        )
    }

    /// `w x + b` with `w` of shape `out x in` and `b` of shape `1 x out`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let wb = self.params.get(w);
        let bb = self.params.get(b);
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            wb.cols,
            xv.len(),
            "affine input width mismatch for `{}`",
            wb.name
        );
        assert_eq!(
            bb.data.len(),
            wb.rows,
            "bias shape mismatch for `{}`",
            bb.name
        );
        let out: Vec<f64> = (0..wb.rows)
            .map(|r| bb.data[r] + wb.row(r).iter().zip(xv).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        self.push(out, Op::Affine { w, b, x }, true)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let live = self.live(x);
        self.push(out, Op::Tanh(x), live)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let live = self.live(x);
        self.push(out, Op::Sigmoid(x), live)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let live = self.live(x);
        self.push(out, Op::Scale(x, c), live)
    }

    /// Elementwise multiplication by a fixed vector.
    pub fn mask(&mut self, x: Var, factors: Vec<f64>) -> Var {
        assert_eq!(factors.len(), self.value(x).len());
        let out = self
            .value(x)
            .iter()
            .zip(&factors)
            .map(|(v, f)| v * f)
            .collect();
        let live = self.live(x);
        self.push(out, Op::Mask(x, factors), live)
    }

    /// Inverted dropout with a freshly drawn mask.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Var {
        assert!(
            (0.0..1.0).contains(&rate),
            "dropout rate {rate} not in [0, 1)"
        );
        if rate == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let factors = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        self.mask(x, factors)
    }

    /// Cross-entropy of `softmax(logits)` against class `target`.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert!(target < z.len());
        let lse = log_sum_exp(z);
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - z[target];
        let live = self.live(logits);
        self.push(
            vec![loss],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            live,
        )
    }

    /// Sum of binary cross-entropies of `sigmoid(logits[j])` against
    /// `targets[j]` over the dimensions with `mask[j]` set. Unmasked
    /// dimensions contribute nothing to the value or the gradient.
    pub fn masked_sigmoid_bce(&mut self, logits: Var, targets: &[f64], mask: &[bool]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        assert_eq!(z.len(), mask.len());
        let loss: f64 = z
            .iter()
            .zip(targets)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&zj, &yj), _)| softplus(zj) - zj * yj)
            .sum();
        let live = self.live(logits);
        self.push(
            vec![loss],
            Op::MaskedSigmoidBce {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            live,
        )
    }

    /// `(x - target)^2` for a scalar node.
    pub fn squared_error(&mut self, x: Var, target: f64) -> Var {
        let d = self.scalar(x) - target;
        let live = self.live(x);
        self.push(vec![d * d], Op::SquaredError { x, target }, live)
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let total = xs.iter().map(|&x| self.scalar(x)).sum();
        let live = xs.iter().any(|&x| self.live(x));
        self.push(vec![total], Op::Sum(xs.to_vec()), live)
    }

    /// Gradient of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        self.backward_into(loss, &mut grads);
        grads
    }

    /// Accumulates the gradient of `loss` into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Grads) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.live {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::EmbedMean { table, tokens } => {
                    let cols = self.params.get(*table).cols;
                    let n = tokens.len() as f64;
                    let dt = grads.get_mut(*table);
                    for &tok in tokens {
                        for (d, gv) in dt[tok * cols..(tok + 1) * cols].iter_mut().zip(&g) {
                            *d += gv / n;
                        }
                    }
                }
                Op::Affine { w, b, x } => {
                    let wb = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    {
                        let dw = grads.get_mut(*w);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (d, xc) in dw[r * wb.cols..(r + 1) * wb.cols].iter_mut().zip(xv) {
                                *d += gr * xc;
                            }
                        }
                    }
                    for (d, gr) in grads.get_mut(*b).iter_mut().zip(&g) {
                        *d += gr;
                    }
                    if self.nodes[x.0].live {
                        let mut dx = vec![0.0; wb.cols];
                        for (r, gr) in g.iter().enumerate() {
                            for (d, wv) in dx.iter_mut().zip(wb.row(r)) {
                                *d += gr * wv;
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                }
                Op::Tanh(x) => {
                    let dx = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Scale(x, c) => {
                    let dx = g.iter().map(|gv| gv * c).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Mask(x, factors) => {
                    let dx = g.iter().zip(factors).map(|(gv, f)| gv * f).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    probs,
                } => {
                    let dz = probs
                        .iter()
                        .enumerate()
                        .map(|(k, p)| g[0] * (p - if k == *target { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut adj, *logits, dz);
                }
                Op::MaskedSigmoidBce {
                    logits,
                    targets,
                    mask,
                } => {
                    let z = &self.nodes[logits.0].value;
                    let dz = z
                        .iter()
                        .zip(targets)
                        .zip(mask)
                        .map(|((&zj, &yj), &m)| if m { g[0] * (sigmoid(zj) - yj) } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *logits, dz);
                }
                Op::SquaredError { x, target } => {
                    let d = self.nodes[x.0].value[0] - target;
                    accumulate(&mut adj, *x, vec![g[0] * 2.0 * d]);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut adj, x, vec![g[0]]);
                    }
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], x: Var, d: Vec<f64>) {
    match &mut adj[x.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(d) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}
