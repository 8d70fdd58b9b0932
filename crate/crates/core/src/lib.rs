//! Top-down tree LSTM language models over dependency trees.
//!
//! The crate is organised bottom-up:
//!
//! - [`deptree`]: dependency trees, breadth-first generation order, edge
//!   types, dependency paths and CoNLL-X I/O.
//! - [`corpus`]: vocabulary, encoded corpora and task bundles.
//! - [`nncore`]: dense matrices, the deep LSTM cell with its hand-written
//!   backward pass, softmax, dropout, optimisers and gradient checking.
//! - [`treelm`]: the TreeLSTM / LdTreeLSTM models, a sequential LSTM
//!   baseline and the checkpoint format.
//! - [`trainer`]: NLL and NCE objectives and the training loop.
//! - [`tasks`]: sentence completion, k-best reranking, attachment scores,
//!   add-edge classifiers and tree generation.

pub mod corpus;
pub mod deptree;
pub mod error;
pub mod nncore;
pub mod tasks;
pub mod trainer;
pub mod treelm;

pub use error::{Error, Result};
