//! Semantic textual similarity with a Siamese CNN+LSTM.
//!
//! Every word of a sentence is represented twice: by its pre-trained
//! embedding (general context) and by a tanh filter-bank response over the
//! window of words centred on it (local context). The two are concatenated
//! and read by an LSTM whose final hidden state is the sentence embedding.
//! Both sentences of a pair go through the same filter bank and the same
//! LSTM, and the pair is scored with `exp(-‖h_A - h_B‖₁)`.
//!
//! Module map:
//!
//! - [`embeddings`]: word2vec text/binary tables and out-of-vocabulary policy
//! - [`corpus`]: SICK-style pair files, tokenization, train/validation/test splits
//! - [`kernel`]: dense matrices, activations, initialization, Adadelta, gradient checking
//! - [`cnn`]: windowed convolution producing one local context per word
//! - [`lstm`]: LSTM encoder with backpropagation through time
//! - [`model`]: the Siamese model, its loss, training loop and checkpoint format
//! - [`eval`]: Pearson, Spearman, MSE and local-regression calibration
//! - [`analysis`]: cosine-distance matrices, pair scoring and window ablation

pub mod analysis;
pub mod cnn;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod eval;
pub mod kernel;
pub mod lstm;
pub mod model;

pub use error::{Error, ErrorKind, Result};
