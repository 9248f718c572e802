use std::sync::atomic::{AtomicU64, Ordering};

use super::*;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Exact cleartext backend: stores the slots themselves and still enforces
/// the level discipline of a leveled scheme.
#[derive(Debug)]
pub struct ReferenceEngine<T> {
    params: EngineParams,
    id: u64,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> ReferenceEngine<T> {
    pub fn new(params: EngineParams) -> Result<Self, EngineError> {
        params.validate()?;
        Ok(Self {
            params,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            _scalar: PhantomData,
        })
    }

    fn handle(&self, slots: Vec<T>, level: usize) -> CipherHandle<Vec<T>> {
        CipherHandle::new(slots, level, self.params.scale(), self.id)
    }

    fn check_cipher(&self, c: &CipherHandle<Vec<T>>) -> Result<(), EngineError> {
        check_owner(self.id, c)
    }

    fn zip_with(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
}

impl<T: Scalar> SlotEngine<T> for ReferenceEngine<T> {
    type Payload = Vec<T>;

    fn params(&self) -> &EngineParams {
        &self.params
    }

    fn engine_id(&self) -> u64 {
        self.id
    }

    fn encode_encrypt(&self, v: &[T]) -> Result<CipherHandle<Vec<T>>, EngineError> {
        check_len(&self.params, v.len())?;
        Ok(self.handle(v.to_vec(), self.params.depth_budget))
    }

    fn decrypt_decode(&self, c: &CipherHandle<Vec<T>>) -> Result<SlotVector<T>, EngineError> {
        self.check_cipher(c)?;
        Ok(SlotVector::from(c.payload().clone()))
    }

    fn add(&self, a: &CipherHandle<Vec<T>>, b: &CipherHandle<Vec<T>>) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(a)?;
        self.check_cipher(b)?;
        check_same_level("add", a, b)?;
        Ok(self.handle(Self::zip_with(a.payload(), b.payload(), |x, y| x + y), a.level()))
    }

    fn add_plain(&self, a: &CipherHandle<Vec<T>>, p: &[T]) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(a)?;
        check_len(&self.params, p.len())?;
        Ok(self.handle(Self::zip_with(a.payload(), p, |x, y| x + y), a.level()))
    }

    fn negate(&self, a: &CipherHandle<Vec<T>>) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(a)?;
        Ok(self.handle(a.payload().iter().map(|&x| -x).collect(), a.level()))
    }

    fn mul_plain(&self, a: &CipherHandle<Vec<T>>, p: &[T]) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(a)?;
        check_len(&self.params, p.len())?;
        check_mul_level("mul_plain", a)?;
        Ok(self.handle(Self::zip_with(a.payload(), p, |x, y| x * y), a.level() - 1))
    }

    fn mul_cipher(
        &self,
        a: &CipherHandle<Vec<T>>,
        b: &CipherHandle<Vec<T>>,
    ) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(a)?;
        self.check_cipher(b)?;
        check_same_level("mul_cipher", a, b)?;
        check_mul_level("mul_cipher", a)?;
        Ok(self.handle(Self::zip_with(a.payload(), b.payload(), |x, y| x * y), a.level() - 1))
    }

    fn rotate(&self, c: &CipherHandle<Vec<T>>, steps: usize) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(c)?;
        check_step(&self.params, steps)?;
        let mut v = c.payload().clone();
        v.rotate_left(steps);
        Ok(self.handle(v, c.level()))
    }

    fn level_down(&self, c: &CipherHandle<Vec<T>>, level: usize) -> Result<CipherHandle<Vec<T>>, EngineError> {
        self.check_cipher(c)?;
        if level > c.level() {
            return Err(EngineError::Alignment(format!(
                "level_down: cannot raise level {} to {level}",
                c.level()
            )));
        }
        Ok(self.handle(c.payload().clone(), level))
    }
}
