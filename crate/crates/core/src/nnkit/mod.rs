//! Minimal differentiable compute core: tokenization, the text encoder,
//! reverse-mode gradients, losses, dropout and Adam.

mod adam;
mod encoder;
pub mod functions;
mod gradcheck;
mod params;
mod tape;
mod vocab;

pub use adam::{AdamConfig, AdamState};
pub use encoder::{EncodedInput, Encoder, EncoderConfig, Featurizer, InputKind, ModelInput};
pub use functions::{sigmoid, sigmoid_head, softmax, softmax_head};
pub use gradcheck::{check_gradients, GradCheck, RELATIVE_FLOOR};
pub use params::{Block, Grads, ParamId, ParamStore};
pub use tape::{DropoutMode, Tape, Var};
pub use vocab::{tokenize, Vocabulary, OOV, PAD};
