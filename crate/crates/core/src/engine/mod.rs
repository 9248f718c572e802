//! Leveled SIMD evaluation contract.
//!
//! A [`SlotEngine`] evaluates slotwise arithmetic and cyclic rotations over
//! vectors of `n` real slots, tracking a multiplicative level on every
//! handle. Every multiplication consumes exactly one level; additions and
//! rotations are free. [`ReferenceEngine`] executes the contract exactly in
//! the clear and is the oracle for every encrypted backend.
//!
//! Operation accounting is not a property of the engine: a [`Session`] wraps
//! a shared engine reference and owns the [`OpCounter`] for one evaluation.

mod reference;

use std::fmt;
use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use reference::ReferenceEngine;

/// Relative scale difference tolerated when adding two ciphertexts.
pub const SCALE_TOLERANCE: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Reference,
    Ckks,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Reference => f.write_str("reference"),
            BackendKind::Ckks => f.write_str("ckks"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineParams {
    /// Number of real slots `n = N/2`; a power of two.
    pub slot_count: usize,
    /// Maximum number of multiplicative levels of a fresh ciphertext.
    pub depth_budget: usize,
    /// `log2` of the CKKS scale. Ignored by the reference backend.
    pub scale_bits: u32,
    pub backend: BackendKind,
}

impl EngineParams {
    pub fn new(
        slot_count: usize,
        depth_budget: usize,
        scale_bits: u32,
        backend: BackendKind,
    ) -> Result<Self, EngineError> {
        let params = Self {
            slot_count,
            depth_budget,
            scale_bits,
            backend,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn reference(slot_count: usize, depth_budget: usize) -> Result<Self, EngineError> {
        Self::new(slot_count, depth_budget, 40, BackendKind::Reference)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.slot_count < 2 || !self.slot_count.is_power_of_two() {
            return Err(EngineError::InvalidParams(format!(
                "slot_count must be a power of two >= 2, got {}",
                self.slot_count
            )));
        }
        if self.scale_bits == 0 {
            return Err(EngineError::InvalidParams("scale_bits must be positive".into()));
        }
        Ok(())
    }

    /// Ring degree `N = 2n`.
    pub fn ring_degree(&self) -> usize {
        self.slot_count * 2
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("dimension mismatch: expected {expected} slots, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("key mismatch: handle belongs to engine {found:#x}, not {expected:#x}")]
    KeyMismatch { expected: u64, found: u64 },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("depth budget exhausted in {op}: operand is at level {level}")]
    DepthExhausted { op: &'static str, level: usize },
    #[error("no rotation key for step {step}")]
    MissingRotationKey { step: usize },
    #[error("rotation step {step} out of range for {slots} slots")]
    InvalidStep { step: usize, slots: usize },
    #[error("encoding range exceeded: coefficient magnitude {magnitude:e} >= limit {limit:e}")]
    EncodingRange { magnitude: f64, limit: f64 },
    #[error("invalid engine parameters: {0}")]
    InvalidParams(String),
    #[error("backend error: {0}")]
    Backend(String),
}

/// A message-space vector of exactly `slot_count` reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotVector<T>(Vec<T>);

impl<T: Scalar> SlotVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn filled(n: usize, value: T) -> Self {
        Self(vec![value; n])
    }

    /// Copies `prefix` into the leading slots of a zero vector of length `n`.
    pub fn padded(prefix: &[T], n: usize) -> Result<Self, EngineError> {
        if prefix.len() > n {
            return Err(EngineError::Dimension {
                expected: n,
                actual: prefix.len(),
            });
        }
        let mut v = Self::zeros(n);
        v.0[..prefix.len()].copy_from_slice(prefix);
        Ok(v)
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Cyclic left rotation: slot `i` of the result is slot `i + steps` of `self`.
    pub fn rotated(&self, steps: usize) -> Self {
        let mut v = self.0.clone();
        if !v.is_empty() {
            let n = v.len();
            v.rotate_left(steps % n);
        }
        Self(v)
    }
}

impl<T> From<Vec<T>> for SlotVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

impl<T> Deref for SlotVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for SlotVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// An encrypted (or simulated) slot vector with level and scale bookkeeping.
#[derive(Debug, Clone)]
pub struct CipherHandle<P> {
    payload: P,
    level: usize,
    scale: f64,
    engine_id: u64,
}

impl<P> CipherHandle<P> {
    pub fn new(payload: P, level: usize, scale: f64, engine_id: u64) -> Self {
        Self {
            payload,
            level,
            scale,
            engine_id,
        }
    }

    pub fn payload(&self) -> &P {
        &self.payload
    }

    pub fn into_payload(self) -> P {
        self.payload
    }

    /// Remaining multiplicative levels.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn engine_id(&self) -> u64 {
        self.engine_id
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub additions: u64,
    pub plain_multiplications: u64,
    pub cipher_multiplications: u64,
    pub rotations: u64,
    pub depth_consumed: u64,
}

impl OpCounter {
    pub fn new(additions: u64, plain_multiplications: u64, cipher_multiplications: u64, rotations: u64) -> Self {
        Self {
            additions,
            plain_multiplications,
            cipher_multiplications,
            rotations,
            depth_consumed: 0,
        }
    }

    pub fn multiplications(&self) -> u64 {
        self.plain_multiplications + self.cipher_multiplications
    }

    /// Operation counts accrued since `earlier`; `depth_consumed` is taken from `self`.
    pub fn since(&self, earlier: &OpCounter) -> OpCounter {
        OpCounter {
            additions: self.additions - earlier.additions,
            plain_multiplications: self.plain_multiplications - earlier.plain_multiplications,
            cipher_multiplications: self.cipher_multiplications - earlier.cipher_multiplications,
            rotations: self.rotations - earlier.rotations,
            depth_consumed: self.depth_consumed,
        }
    }

    /// Same operation counts, ignoring depth.
    pub fn same_ops(&self, other: &OpCounter) -> bool {
        self.additions == other.additions
            && self.plain_multiplications == other.plain_multiplications
            && self.cipher_multiplications == other.cipher_multiplications
            && self.rotations == other.rotations
    }
}

impl std::ops::Add for OpCounter {
    type Output = OpCounter;
    fn add(self, rhs: OpCounter) -> OpCounter {
        OpCounter {
            additions: self.additions + rhs.additions,
            plain_multiplications: self.plain_multiplications + rhs.plain_multiplications,
            cipher_multiplications: self.cipher_multiplications + rhs.cipher_multiplications,
            rotations: self.rotations + rhs.rotations,
            depth_consumed: self.depth_consumed.max(rhs.depth_consumed),
        }
    }
}

impl fmt::Display for OpCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "add={} pmul={} cmul={} rot={} depth={}",
            self.additions,
            self.plain_multiplications,
            self.cipher_multiplications,
            self.rotations,
            self.depth_consumed
        )
    }
}

pub type Handle<T, E> = CipherHandle<<E as SlotEngine<T>>::Payload>;

/// Leveled SIMD backend. Implementations are immutable after setup and may
/// be shared across threads; all methods are pure functions of their inputs.
///
/// Every method validates ownership, lengths and levels with the helpers in
/// this module before touching payloads.
pub trait SlotEngine<T: Scalar>: Send + Sync {
    type Payload: Clone + Send + Sync;

    fn params(&self) -> &EngineParams;

    /// Identifier embedded into every handle this engine produces.
    fn engine_id(&self) -> u64;

    /// Encodes and encrypts `v` at full level `depth_budget`.
    fn encode_encrypt(&self, v: &[T]) -> Result<CipherHandle<Self::Payload>, EngineError>;

    fn decrypt_decode(&self, c: &CipherHandle<Self::Payload>) -> Result<SlotVector<T>, EngineError>;

    fn add(
        &self,
        a: &CipherHandle<Self::Payload>,
        b: &CipherHandle<Self::Payload>,
    ) -> Result<CipherHandle<Self::Payload>, EngineError>;

    fn add_plain(&self, a: &CipherHandle<Self::Payload>, p: &[T]) -> Result<CipherHandle<Self::Payload>, EngineError>;

    /// Slotwise negation. Free: no level, not an arithmetic operation.
    fn negate(&self, a: &CipherHandle<Self::Payload>) -> Result<CipherHandle<Self::Payload>, EngineError>;

    fn mul_plain(&self, a: &CipherHandle<Self::Payload>, p: &[T]) -> Result<CipherHandle<Self::Payload>, EngineError>;

    fn mul_cipher(
        &self,
        a: &CipherHandle<Self::Payload>,
        b: &CipherHandle<Self::Payload>,
    ) -> Result<CipherHandle<Self::Payload>, EngineError>;

    /// Cyclic left rotation by `steps` slots, `0 <= steps < n`.
    fn rotate(&self, c: &CipherHandle<Self::Payload>, steps: usize) -> Result<CipherHandle<Self::Payload>, EngineError>;

    /// Drops a handle to a lower level without changing its message.
    fn level_down(&self, c: &CipherHandle<Self::Payload>, level: usize)
        -> Result<CipherHandle<Self::Payload>, EngineError>;
}

pub fn check_len(params: &EngineParams, len: usize) -> Result<(), EngineError> {
    if len != params.slot_count {
        return Err(EngineError::Dimension {
            expected: params.slot_count,
            actual: len,
        });
    }
    Ok(())
}

pub fn check_owner<P>(engine_id: u64, c: &CipherHandle<P>) -> Result<(), EngineError> {
    if c.engine_id != engine_id {
        return Err(EngineError::KeyMismatch {
            expected: engine_id,
            found: c.engine_id,
        });
    }
    Ok(())
}

pub fn check_mul_level<P>(op: &'static str, c: &CipherHandle<P>) -> Result<(), EngineError> {
    if c.level == 0 {
        return Err(EngineError::DepthExhausted { op, level: 0 });
    }
    Ok(())
}

pub fn check_same_level<P>(op: &str, a: &CipherHandle<P>, b: &CipherHandle<P>) -> Result<(), EngineError> {
    if a.level != b.level {
        return Err(EngineError::Alignment(format!(
            "{op}: operands at levels {} and {}",
            a.level, b.level
        )));
    }
    Ok(())
}

pub fn check_same_scale<P>(op: &str, a: &CipherHandle<P>, b: &CipherHandle<P>) -> Result<(), EngineError> {
    let rel = (a.scale - b.scale).abs() / a.scale.max(b.scale);
    if rel > SCALE_TOLERANCE {
        return Err(EngineError::Alignment(format!(
            "{op}: operand scales {:e} and {:e} differ",
            a.scale, b.scale
        )));
    }
    Ok(())
}

pub fn check_step(params: &EngineParams, steps: usize) -> Result<(), EngineError> {
    if steps >= params.slot_count {
        return Err(EngineError::InvalidStep {
            step: steps,
            slots: params.slot_count,
        });
    }
    Ok(())
}

/// One evaluation context: a borrowed engine plus the operation counters of
/// everything evaluated through it.
pub struct Session<'e, T: Scalar, E: SlotEngine<T>> {
    engine: &'e E,
    counter: OpCounter,
    _scalar: PhantomData<T>,
}

impl<'e, T: Scalar, E: SlotEngine<T>> Session<'e, T, E> {
    pub fn new(engine: &'e E) -> Self {
        Self {
            engine,
            counter: OpCounter::default(),
            _scalar: PhantomData,
        }
    }

    pub fn engine(&self) -> &'e E {
        self.engine
    }

    pub fn params(&self) -> &EngineParams {
        self.engine.params()
    }

    pub fn counters(&self) -> OpCounter {
        self.counter
    }

    pub fn reset_counters(&mut self) {
        self.counter = OpCounter::default();
    }

    fn track(&mut self, c: &Handle<T, E>) {
        let used = self.engine.params().depth_budget.saturating_sub(c.level()) as u64;
        self.counter.depth_consumed = self.counter.depth_consumed.max(used);
    }

    pub fn encrypt(&mut self, v: &[T]) -> Result<Handle<T, E>, EngineError> {
        self.engine.encode_encrypt(v)
    }

    pub fn decrypt(&self, c: &Handle<T, E>) -> Result<SlotVector<T>, EngineError> {
        self.engine.decrypt_decode(c)
    }

    pub fn add(&mut self, a: &Handle<T, E>, b: &Handle<T, E>) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.add(a, b)?;
        self.counter.additions += 1;
        Ok(r)
    }

    pub fn add_plain(&mut self, a: &Handle<T, E>, p: &[T]) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.add_plain(a, p)?;
        self.counter.additions += 1;
        Ok(r)
    }

    /// `a - b`, counted as one addition.
    pub fn sub(&mut self, a: &Handle<T, E>, b: &Handle<T, E>) -> Result<Handle<T, E>, EngineError> {
        let nb = self.engine.negate(b)?;
        self.add(a, &nb)
    }

    /// `a - p`, counted as one addition.
    pub fn sub_plain(&mut self, a: &Handle<T, E>, p: &[T]) -> Result<Handle<T, E>, EngineError> {
        let neg: Vec<T> = p.iter().map(|&x| -x).collect();
        self.add_plain(a, &neg)
    }

    pub fn mul_plain(&mut self, a: &Handle<T, E>, p: &[T]) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.mul_plain(a, p)?;
        self.counter.plain_multiplications += 1;
        self.track(&r);
        Ok(r)
    }

    pub fn mul_cipher(&mut self, a: &Handle<T, E>, b: &Handle<T, E>) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.mul_cipher(a, b)?;
        self.counter.cipher_multiplications += 1;
        self.track(&r);
        Ok(r)
    }

    pub fn rotate(&mut self, c: &Handle<T, E>, steps: usize) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.rotate(c, steps)?;
        self.counter.rotations += 1;
        Ok(r)
    }

    pub fn level_down(&mut self, c: &Handle<T, E>, level: usize) -> Result<Handle<T, E>, EngineError> {
        let r = self.engine.level_down(c, level)?;
        self.track(&r);
        Ok(r)
    }
}
