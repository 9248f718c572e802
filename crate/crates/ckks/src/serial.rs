//! Binary key and ciphertext files.
//!
//! Every file starts with a header: magic `HRFC`, format version (u16),
//! kind (u8), ring degree `N` (u32), chain length (u32), `scale_bits` (u32),
//! base and special prime sizes (u8 each). All integers are little endian;
//! residues are written as u64 per coefficient, prime by prime.
//!
//! Evaluation keys store only the `b` halves; the uniform `a` halves are
//! regenerated from the stored seed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::cipher::Ciphertext;
use crate::engine::CkksHandle;
use crate::error::CkksError;
use crate::keys::{EvaluationKeys, PublicKey, SecretKey, SwitchKey, UniformSource};
use crate::params::{CkksContext, CkksParams};
use crate::poly::RnsPoly;
use hrf_core::CipherHandle;

pub const MAGIC: [u8; 4] = *b"HRFC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    SecretKey = 1,
    EvaluationKeys = 2,
    Ciphertexts = 3,
}

impl FileKind {
    fn from_byte(b: u8) -> Result<Self, CkksError> {
        match b {
            1 => Ok(Self::SecretKey),
            2 => Ok(Self::EvaluationKeys),
            3 => Ok(Self::Ciphertexts),
            _ => Err(CkksError::Format(format!("unknown file kind {b}"))),
        }
    }
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<(), CkksError> {
        Ok(self.inner.write_all(&[v])?)
    }
    fn u16(&mut self, v: u16) -> Result<(), CkksError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<(), CkksError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<(), CkksError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<(), CkksError> {
        self.u64(v.to_bits())
    }
    fn poly(&mut self, p: &RnsPoly) -> Result<(), CkksError> {
        let mut buf = Vec::with_capacity(p.degree() * 8);
        for r in p.residues() {
            buf.clear();
            for x in r {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            self.inner.write_all(&buf)?;
        }
        Ok(())
    }
    fn header(&mut self, kind: FileKind, p: &CkksParams) -> Result<(), CkksError> {
        self.inner.write_all(&MAGIC)?;
        self.u16(VERSION)?;
        self.u8(kind as u8)?;
        self.u32(p.degree() as u32)?;
        self.u32(p.depth_budget as u32 + 1)?;
        self.u32(p.scale_bits)?;
        self.u8(p.base_bits as u8)?;
        self.u8(p.special_bits as u8)
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K], CkksError> {
        let mut b = [0u8; K];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, CkksError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, CkksError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32, CkksError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, CkksError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, CkksError> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Residues for the primes at `indices`, validated against each prime.
    fn poly(&mut self, ctx: &CkksContext, indices: impl Iterator<Item = usize>) -> Result<RnsPoly, CkksError> {
        let n = ctx.degree();
        let mut buf = vec![0u8; n * 8];
        let mut residues = Vec::new();
        for i in indices {
            self.inner.read_exact(&mut buf)?;
            let q = ctx.all_moduli()[i].value();
            let r: Vec<u64> = buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
            if r.iter().any(|&x| x >= q) {
                return Err(CkksError::Format(format!("residue not reduced modulo prime {i}")));
            }
            residues.push(r);
        }
        Ok(RnsPoly::from_residues(residues, true))
    }

    fn header(&mut self, expected: FileKind) -> Result<CkksParams, CkksError> {
        if self.bytes::<4>()? != MAGIC {
            return Err(CkksError::Format("bad magic".into()));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(CkksError::Format(format!("unsupported version {version}")));
        }
        let kind = FileKind::from_byte(self.u8()?)?;
        if kind != expected {
            return Err(CkksError::Format(format!("expected {expected:?}, found {kind:?}")));
        }
        let degree = self.u32()?;
        let chain = self.u32()?;
        let scale_bits = self.u32()?;
        let base_bits = self.u8()? as u32;
        let special_bits = self.u8()? as u32;
        if !degree.is_power_of_two() || chain == 0 {
            return Err(CkksError::Format(format!("bad ring degree {degree} or chain length {chain}")));
        }
        let mut p = CkksParams::new(degree.trailing_zeros(), chain as usize - 1, scale_bits)?;
        p.base_bits = base_bits;
        p.special_bits = special_bits;
        p.validate()?;
        Ok(p)
    }
}

fn check_params(ctx: &CkksContext, found: &CkksParams) -> Result<(), CkksError> {
    let have = ctx.params();
    let same = have.log_degree == found.log_degree
        && have.depth_budget == found.depth_budget
        && have.scale_bits == found.scale_bits
        && have.base_bits == found.base_bits
        && have.special_bits == found.special_bits;
    if !same {
        return Err(CkksError::Format(format!(
            "parameters {found:?} do not match the context {have:?}"
        )));
    }
    Ok(())
}

pub fn write_secret_key(w: impl Write, ctx: &CkksContext, keyset_id: u64, sk: &SecretKey) -> Result<(), CkksError> {
    let mut w = Writer { inner: w };
    w.header(FileKind::SecretKey, ctx.params())?;
    w.u64(keyset_id)?;
    let bytes: Vec<u8> = sk.coefficients().iter().map(|&c| c as u8).collect();
    Ok(w.inner.write_all(&bytes)?)
}

/// Returns the parameters, the key-set id and the secret.
pub fn read_secret_key(r: impl Read) -> Result<(Arc<CkksContext>, u64, SecretKey), CkksError> {
    let mut r = Reader { inner: r };
    let params = r.header(FileKind::SecretKey)?;
    let ctx = Arc::new(CkksContext::new(params)?);
    let id = r.u64()?;
    let mut bytes = vec![0u8; ctx.degree()];
    r.inner.read_exact(&mut bytes)?;
    let coeffs: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
    if coeffs.iter().any(|c| !(-1..=1).contains(c)) {
        return Err(CkksError::Format("secret key is not ternary".into()));
    }
    let sk = SecretKey::from_coefficients(&ctx, coeffs);
    Ok((ctx, id, sk))
}

pub fn write_evaluation_keys(w: impl Write, ctx: &CkksContext, keys: &EvaluationKeys) -> Result<(), CkksError> {
    let mut w = Writer { inner: w };
    w.header(FileKind::EvaluationKeys, ctx.params())?;
    w.u64(keys.id)?;
    w.u64(keys.a_seed)?;
    w.poly(&keys.public.b)?;
    for (b, _) in &keys.relin.digits {
        w.poly(b)?;
    }
    w.u32(keys.galois.len() as u32)?;
    for (&step, key) in &keys.galois {
        w.u32(step as u32)?;
        for (b, _) in &key.digits {
            w.poly(b)?;
        }
    }
    Ok(())
}

/// Reads evaluation keys, building the context from the header unless one
/// is supplied (it must then match).
pub fn read_evaluation_keys(
    r: impl Read,
    ctx: Option<Arc<CkksContext>>,
) -> Result<(Arc<CkksContext>, EvaluationKeys), CkksError> {
    let mut r = Reader { inner: r };
    let params = r.header(FileKind::EvaluationKeys)?;
    let ctx = match ctx {
        Some(c) => {
            check_params(&c, &params)?;
            c
        }
        None => Arc::new(CkksContext::new(params)?),
    };
    let id = r.u64()?;
    let a_seed = r.u64()?;
    let uniform = UniformSource::new(&ctx, a_seed);
    let chain = ctx.max_level() + 1;
    let full = ctx.all_moduli().len();
    let b = r.poly(&ctx, 0..chain)?;
    let public = PublicKey { b, a: uniform.public() };
    let read_switch = |r: &mut Reader<_>, a: Vec<RnsPoly>| -> Result<SwitchKey, CkksError> {
        let digits = a
            .into_iter()
            .map(|a| Ok((r.poly(&ctx, 0..full)?, a)))
            .collect::<Result<_, CkksError>>()?;
        Ok(SwitchKey { digits })
    };
    let relin = read_switch(&mut r, uniform.relin())?;
    let count = r.u32()?;
    if count as usize > ctx.params().slots() {
        return Err(CkksError::Format(format!("{count} rotation keys")));
    }
    let mut galois = BTreeMap::new();
    for _ in 0..count {
        let step = r.u32()? as usize;
        if step == 0 || step >= ctx.params().slots() {
            return Err(CkksError::Format(format!("rotation step {step} out of range")));
        }
        galois.insert(step, read_switch(&mut r, uniform.galois(step))?);
    }
    let keys = EvaluationKeys {
        id,
        a_seed,
        public,
        relin,
        galois,
    };
    Ok((ctx, keys))
}

pub fn write_ciphertexts(w: impl Write, ctx: &CkksContext, handles: &[CkksHandle]) -> Result<(), CkksError> {
    let mut w = Writer { inner: w };
    w.header(FileKind::Ciphertexts, ctx.params())?;
    w.u32(handles.len() as u32)?;
    for h in handles {
        let ct = h.payload();
        w.u64(h.engine_id())?;
        w.u32(ct.level() as u32)?;
        w.f64(ct.scale())?;
        w.poly(&ct.c0)?;
        w.poly(&ct.c1)?;
    }
    Ok(())
}

pub fn read_ciphertexts(r: impl Read, ctx: &CkksContext) -> Result<Vec<CkksHandle>, CkksError> {
    let mut r = Reader { inner: r };
    let params = r.header(FileKind::Ciphertexts)?;
    check_params(ctx, &params)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.u64()?;
        let level = r.u32()? as usize;
        if level > ctx.max_level() {
            return Err(CkksError::Format(format!("ciphertext level {level} above the chain top")));
        }
        let scale = r.f64()?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CkksError::Format(format!("bad scale {scale}")));
        }
        let c0 = r.poly(ctx, 0..=level)?;
        let c1 = r.poly(ctx, 0..=level)?;
        out.push(CipherHandle::new(Ciphertext::from_parts(c0, c1, scale), level, scale, id));
    }
    Ok(out)
}
