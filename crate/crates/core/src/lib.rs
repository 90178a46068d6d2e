//! Zero-shot document ranking with language models as query-likelihood
//! scorers.
//!
//! The pipeline is: BEIR data ([`corpus`]) → first-stage retrieval
//! ([`ranking`]) → prompt rendering ([`prompts`]) → likelihood re-ranking
//! ([`likelihood`]) → score interpolation ([`fusion`]) → evaluation
//! ([`eval`]).
//!
//! Scoring code is generic over [`Score`] (`f32` or `f64`); the aliases
//! below fix the common choice.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod likelihood;
pub mod prompts;
pub mod ranking;
pub mod scalar;

pub use error::{Error, ProviderError, Result};
pub use scalar::Score;

pub type Run64 = corpus::Run<f64>;
pub type Run32 = corpus::Run<f32>;
pub type EvalReport64 = eval::EvalReport<f64>;
pub type EvalReport32 = eval::EvalReport<f32>;
pub type Bm25Params64 = ranking::Bm25Params<f64>;
pub type DirichletParams64 = ranking::DirichletParams<f64>;
pub type Retriever64 = ranking::Retriever<f64>;
