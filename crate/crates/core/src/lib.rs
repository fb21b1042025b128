//! Latent-tree sentence encoders for natural language inference: a
//! beam-search shift-reduce parser and a CKY chart parser over a shared
//! Tree-LSTM composition function, with training, evaluation and parse
//! analysis tooling.

pub mod analysis;
pub mod autodiff;
pub mod bssr;
pub mod checkpoint;
pub mod cky;
pub mod cli;
pub mod data;
pub mod error;
pub mod init;
pub mod io;
pub mod model;
pub mod nli;
pub mod parallel;
pub mod selection;
pub mod tree;
pub mod training;
pub mod treelstm;

pub use error::{Error, Result};
