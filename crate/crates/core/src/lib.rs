//! Speech denoising with a CRNN and a language-model regularizer.
//!
//! The numerics (`tensor`, `graph`, `params`, `optim`, `gradcheck`) carry a
//! small reverse-mode autodiff; `signal` and `corpus` produce features and
//! data; `model`, `train` and `checkpoint` fit the network; `metrics`
//! scores it; `config` and `cli` drive it from files and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, MseReduction, Var};
pub use params::{ParamGroup, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
