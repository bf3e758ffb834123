//! Differentiable forward reasoning over scene graphs.
//!
//! Deictic prompts become small logic programs, scene graphs become
//! weighted facts, and a soft forward-chaining reasoner scores `target`
//! atoms. Rule weights can be learned through the reasoner.

pub mod datasets;
pub mod eval;
pub mod grounding;
mod http;
pub mod logic;
pub mod pipeline;
pub mod reasoner;
pub mod rulegen;
pub mod scalar;
pub mod training;
pub mod unifier;
pub mod valuation;

pub use http::ServiceError;

pub type Valuation = valuation::ValuationVector<f64>;
pub type Reasoner<'g> = reasoner::DifferentiableReasoner<'g, f64>;
pub type Embeddings = unifier::EmbeddingStore<f64>;
pub type Prediction = reasoner::TargetPrediction<f64>;
