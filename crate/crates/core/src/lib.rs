//! Decision forests as exact neural networks, compiled to packed programs
//! for leveled SIMD homomorphic evaluation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which the encrypted backend uses.

pub mod compiler;
pub mod engine;
pub mod error;
pub mod forest;
pub mod nrf;
pub mod poly;
pub mod scalar;

pub use engine::{BackendKind, CipherHandle, EngineError, EngineParams, OpCounter, Session, SlotEngine, SlotVector};
pub use error::{CompileError, ModelError};
pub use scalar::Scalar;

pub type Dataset = forest::Dataset<f64>;
pub type DecisionTree = forest::DecisionTree<f64>;
pub type Forest = forest::Forest<f64>;
pub type TreeNetwork = nrf::TreeNetwork<f64>;
pub type NrfModel = nrf::NrfModel<f64>;
pub type ChebyshevPoly = poly::ChebyshevPoly<f64>;
pub type HrfModel = compiler::HrfModel<f64>;
pub type ReferenceEngine = engine::ReferenceEngine<f64>;

pub type DatasetF32 = forest::Dataset<f32>;
pub type ForestF32 = forest::Forest<f32>;
pub type NrfModelF32 = nrf::NrfModel<f32>;
pub type ReferenceEngineF32 = engine::ReferenceEngine<f32>;
