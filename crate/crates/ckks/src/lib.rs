//! Leveled RNS-CKKS: negacyclic NTT arithmetic over a chain of word-sized
//! primes, canonical-embedding encoding, public-key encryption, relinearized
//! multiplication with rescaling, and Galois rotations through hybrid key
//! switching with one special prime.
//!
//! [`CkksEngine`] plugs the scheme into the `SlotEngine` contract.

pub mod arith;
pub mod cipher;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod keys;
pub mod ntt;
pub mod params;
pub mod poly;
pub mod serial;

pub use cipher::{Ciphertext, Plaintext};
pub use engine::{CkksEngine, CkksHandle};
pub use error::CkksError;
pub use keys::{EvaluationKeys, KeySet, SecretKey};
pub use params::{CkksContext, CkksParams};

pub type Engine = CkksEngine<f64>;
pub type EngineF32 = CkksEngine<f32>;
