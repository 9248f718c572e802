//! The CKKS scheme behind the [`SlotEngine`] contract.

use std::marker::PhantomData;
use std::sync::{Arc, Mutex};

use hrf_core::engine::{
    check_len, check_mul_level, check_owner, check_same_level, check_same_scale, check_step, BackendKind,
};
use hrf_core::{CipherHandle, EngineError, EngineParams, Scalar, SlotEngine, SlotVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::cipher::{Ciphertext, Plaintext};
use crate::error::CkksError;
use crate::keys::{generate, power_of_two_steps, EvaluationKeys, KeySet, SecretKey};
use crate::params::{CkksContext, CkksParams};

pub type CkksHandle = CipherHandle<Ciphertext>;

/// Holds the evaluation keys and, on the client side, the secret key.
/// Encryption randomness comes from a seeded stream behind a mutex so the
/// engine stays `Sync`.
pub struct CkksEngine<T> {
    params: EngineParams,
    ctx: Arc<CkksContext>,
    keys: Arc<EvaluationKeys>,
    secret: Option<Arc<SecretKey>>,
    rng: Mutex<ChaCha20Rng>,
    _scalar: PhantomData<fn() -> T>,
}

impl<T> std::fmt::Debug for CkksEngine<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksEngine")
            .field("params", &self.params)
            .field("keyset", &format_args!("{:#x}", self.keys.id()))
            .field("secret", &self.secret.is_some())
            .finish()
    }
}

impl<T: Scalar> CkksEngine<T> {
    /// Fresh keys from `seed` with rotation keys for `steps`, or for every
    /// power of two below the slot count when `steps` is `None`.
    pub fn generate(params: EngineParams, seed: u64, steps: Option<&[usize]>) -> Result<Self, CkksError> {
        let ctx = Arc::new(CkksContext::new(CkksParams::from_engine(&params)?)?);
        let default_steps = power_of_two_steps(params.slot_count);
        let keys = generate(&ctx, seed, steps.unwrap_or(&default_steps));
        Ok(Self::from_keyset(ctx, keys, seed))
    }

    pub fn from_keyset(ctx: Arc<CkksContext>, keys: KeySet, seed: u64) -> Self {
        Self::from_parts(ctx, Arc::new(keys.eval), Some(Arc::new(keys.secret)), seed)
    }

    /// `encryption_seed` drives the randomness of `encode_encrypt`.
    pub fn from_parts(
        ctx: Arc<CkksContext>,
        keys: Arc<EvaluationKeys>,
        secret: Option<Arc<SecretKey>>,
        encryption_seed: u64,
    ) -> Self {
        let p = ctx.params();
        let params = EngineParams {
            slot_count: p.slots(),
            depth_budget: p.depth_budget,
            scale_bits: p.scale_bits,
            backend: BackendKind::Ckks,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(encryption_seed);
        rng.set_stream(u64::MAX);
        Self {
            params,
            ctx,
            keys,
            secret,
            rng: Mutex::new(rng),
            _scalar: PhantomData,
        }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn keys(&self) -> &Arc<EvaluationKeys> {
        &self.keys
    }

    pub fn secret(&self) -> Option<&Arc<SecretKey>> {
        self.secret.as_ref()
    }

    /// Same keys without the secret: what a server receives.
    pub fn public_view(&self, encryption_seed: u64) -> Self {
        Self::from_parts(self.ctx.clone(), self.keys.clone(), None, encryption_seed)
    }

    fn handle(&self, ct: Ciphertext) -> CkksHandle {
        let (level, scale) = (ct.level(), ct.scale());
        CipherHandle::new(ct, level, scale, self.keys.id())
    }

    fn to_f64(v: &[T]) -> Vec<f64> {
        v.iter().map(|x| x.as_f64()).collect()
    }

    fn encode_at(&self, p: &[T], scale: f64, level: usize) -> Result<Plaintext, EngineError> {
        check_len(&self.params, p.len())?;
        self.ctx.encode(&Self::to_f64(p), scale, level)
    }

    /// Decrypts without the scale sanity check; for noise measurements.
    pub fn decrypt_raw(&self, c: &CkksHandle) -> Result<Plaintext, CkksError> {
        let sk = self.secret.as_ref().ok_or(CkksError::MissingSecret("decryption"))?;
        check_owner(self.keys.id(), c)?;
        Ok(self.ctx.decrypt(c.payload(), sk))
    }
}

impl<T: Scalar> SlotEngine<T> for CkksEngine<T> {
    type Payload = Ciphertext;

    fn params(&self) -> &EngineParams {
        &self.params
    }

    fn engine_id(&self) -> u64 {
        self.keys.id()
    }

    fn encode_encrypt(&self, v: &[T]) -> Result<CkksHandle, EngineError> {
        let level = self.params.depth_budget;
        let pt = self.encode_at(v, self.params.scale(), level)?;
        let mut rng = self.rng.lock().map_err(|_| EngineError::Backend("rng poisoned".into()))?;
        Ok(self.handle(self.ctx.encrypt(&pt, &self.keys.public, &mut *rng)))
    }

    fn decrypt_decode(&self, c: &CkksHandle) -> Result<SlotVector<T>, EngineError> {
        let scale = c.scale();
        // messages up to magnitude 2 need 2 * scale below q_0 / 2
        let headroom = self.ctx.coefficient_limit() / 4.0;
        if !(scale >= 1.0 && scale < headroom) {
            return Err(EngineError::Backend(format!(
                "cannot decode at level {}: scale {scale:e} outside [1, {headroom:e})",
                c.level()
            )));
        }
        let pt = self.decrypt_raw(c)?;
        Ok(SlotVector::from(
            self.ctx.decode(&pt).into_iter().map(T::lit).collect::<Vec<_>>(),
        ))
    }

    fn add(&self, a: &CkksHandle, b: &CkksHandle) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), a)?;
        check_owner(self.keys.id(), b)?;
        check_same_level("add", a, b)?;
        check_same_scale("add", a, b)?;
        Ok(self.handle(self.ctx.add(a.payload(), b.payload())))
    }

    fn add_plain(&self, a: &CkksHandle, p: &[T]) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), a)?;
        let pt = self.encode_at(p, a.scale(), a.level())?;
        Ok(self.handle(self.ctx.add_plain(a.payload(), &pt)))
    }

    fn negate(&self, a: &CkksHandle) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), a)?;
        Ok(self.handle(self.ctx.negate(a.payload())))
    }

    /// The plaintext is encoded at `q_l * scale / s_a`, so the rescaled
    /// product lands exactly on the nominal scale.
    fn mul_plain(&self, a: &CkksHandle, p: &[T]) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), a)?;
        check_mul_level("mul_plain", a)?;
        let level = a.level();
        let pt_scale = self.ctx.prime(level) as f64 * self.params.scale() / a.scale();
        let pt = self.encode_at(p, pt_scale, level)?;
        let prod = self.ctx.mul_plain(a.payload(), &pt);
        Ok(self.handle(self.ctx.rescale(&prod)?))
    }

    fn mul_cipher(&self, a: &CkksHandle, b: &CkksHandle) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), a)?;
        check_owner(self.keys.id(), b)?;
        check_same_level("mul_cipher", a, b)?;
        check_mul_level("mul_cipher", a)?;
        let prod = self.ctx.mul_relin(a.payload(), b.payload(), &self.keys);
        Ok(self.handle(self.ctx.rescale(&prod)?))
    }

    fn rotate(&self, c: &CkksHandle, steps: usize) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), c)?;
        check_step(&self.params, steps)?;
        if steps == 0 {
            return Ok(c.clone());
        }
        Ok(self.handle(self.ctx.rotate(c.payload(), steps, &self.keys)?))
    }

    fn level_down(&self, c: &CkksHandle, level: usize) -> Result<CkksHandle, EngineError> {
        check_owner(self.keys.id(), c)?;
        if level > c.level() {
            return Err(EngineError::Alignment(format!(
                "level_down: cannot raise level {} to {level}",
                c.level()
            )));
        }
        Ok(self.handle(self.ctx.level_down(c.payload(), level)))
    }
}
