//! Encryption, decryption and homomorphic operations on RNS ciphertexts.

use hrf_core::EngineError;
use rand::Rng;

use crate::keys::{automorphism, galois_element, sample_error, sample_ternary, EvaluationKeys, PublicKey, SecretKey, SwitchKey};
use crate::params::CkksContext;
use crate::poly::RnsPoly;

/// An encoded message in NTT form over `q_0 .. q_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: RnsPoly,
    pub(crate) scale: f64,
}

impl Plaintext {
    pub fn level(&self) -> usize {
        self.poly.primes() - 1
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// `(c0, c1)` with `c0 + c1 s = scale * m + noise`, NTT form.
#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    pub(crate) c0: RnsPoly,
    pub(crate) c1: RnsPoly,
    pub(crate) scale: f64,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.c0.primes() - 1
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub(crate) fn from_parts(c0: RnsPoly, c1: RnsPoly, scale: f64) -> Self {
        Self { c0, c1, scale }
    }
}

impl CkksContext {
    /// Encodes real slots at `scale` over the primes up to `level`.
    pub fn encode(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext, EngineError> {
        let slots = self.params().slots();
        if values.len() != slots {
            return Err(EngineError::Dimension {
                expected: slots,
                actual: values.len(),
            });
        }
        if level > self.max_level() {
            return Err(EngineError::InvalidParams(format!("level {level} above the chain top")));
        }
        let coeffs = self.encoder().embed(values, scale);
        let magnitude = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let limit = self.coefficient_limit();
        if !(magnitude < limit) {
            return Err(EngineError::EncodingRange { magnitude, limit });
        }
        let rounded: Vec<i64> = coeffs.iter().map(|c| c.round() as i64).collect();
        Ok(Plaintext {
            poly: self.lift_signed(&rounded, level),
            scale,
        })
    }

    /// Centered coefficients of a plaintext, read from the base prime.
    pub fn plaintext_coefficients(&self, pt: &Plaintext) -> Vec<i64> {
        let mut r = pt.poly.residue(0).to_vec();
        self.tables(0)[0].inverse(&mut r);
        let m = &self.moduli(0)[0];
        r.into_iter().map(|x| m.center(x)).collect()
    }

    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        let coeffs: Vec<f64> = self.plaintext_coefficients(pt).into_iter().map(|c| c as f64).collect();
        self.encoder().decode(&coeffs, pt.scale)
    }

    /// Public-key encryption at the plaintext's level.
    pub fn encrypt(&self, pt: &Plaintext, pk: &PublicKey, rng: &mut impl Rng) -> Ciphertext {
        let level = pt.level();
        let moduli = self.moduli(level);
        let u = sample_ternary(rng, self.degree());
        let u: Vec<i64> = u.into_iter().map(i64::from).collect();
        let u = self.lift_signed(&u, level);
        let mut c0 = self.lift_signed(&sample_error(self, rng), level);
        let mut c1 = self.lift_signed(&sample_error(self, rng), level);
        c0.mul_add_assign(&pk.b.truncated(level + 1), &u, moduli);
        c0.add_assign(&pt.poly, moduli);
        c1.mul_add_assign(&pk.a.truncated(level + 1), &u, moduli);
        Ciphertext {
            c0,
            c1,
            scale: pt.scale,
        }
    }

    /// `c0 + c1 s` over the active primes.
    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Plaintext {
        let level = ct.level();
        let mut m = ct.c0.clone();
        m.mul_add_assign(&ct.c1, &sk.ntt.truncated(level + 1), self.moduli(level));
        Plaintext {
            poly: m,
            scale: ct.scale,
        }
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        let moduli = self.moduli(a.level());
        let mut out = a.clone();
        out.c0.add_assign(&b.c0, moduli);
        out.c1.add_assign(&b.c1, moduli);
        out
    }

    pub fn add_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Ciphertext {
        let mut out = a.clone();
        out.c0.add_assign(&pt.poly, self.moduli(a.level()));
        out
    }

    pub fn negate(&self, a: &Ciphertext) -> Ciphertext {
        let moduli = self.moduli(a.level());
        let mut out = a.clone();
        out.c0.negate(moduli);
        out.c1.negate(moduli);
        out
    }

    /// Product with a plaintext, not rescaled.
    pub fn mul_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Ciphertext {
        let moduli = self.moduli(a.level());
        let mut out = a.clone();
        out.c0.mul_assign(&pt.poly, moduli);
        out.c1.mul_assign(&pt.poly, moduli);
        out.scale = a.scale * pt.scale;
        out
    }

    /// Tensor product relinearized back to two components, not rescaled.
    pub fn mul_relin(&self, a: &Ciphertext, b: &Ciphertext, keys: &EvaluationKeys) -> Ciphertext {
        let moduli = self.moduli(a.level());
        let mut d0 = a.c0.clone();
        d0.mul_assign(&b.c0, moduli);
        let mut d1 = a.c0.clone();
        d1.mul_assign(&b.c1, moduli);
        d1.mul_add_assign(&a.c1, &b.c0, moduli);
        let mut d2 = a.c1.clone();
        d2.mul_assign(&b.c1, moduli);
        let (k0, k1) = self.key_switch(&d2, &keys.relin);
        d0.add_assign(&k0, moduli);
        d1.add_assign(&k1, moduli);
        Ciphertext {
            c0: d0,
            c1: d1,
            scale: a.scale * b.scale,
        }
    }

    /// Divides by the top active prime and drops it.
    pub fn rescale(&self, a: &Ciphertext) -> Result<Ciphertext, EngineError> {
        let level = a.level();
        if level == 0 {
            return Err(EngineError::DepthExhausted { op: "rescale", level });
        }
        Ok(Ciphertext {
            c0: self.divide_by_last(&a.c0, level),
            c1: self.divide_by_last(&a.c1, level),
            scale: a.scale / self.prime(level) as f64,
        })
    }

    fn divide_by_last(&self, p: &RnsPoly, level: usize) -> RnsPoly {
        let mut last = p.residue(level).to_vec();
        self.tables(level)[level].inverse(&mut last);
        let top = &self.moduli(level)[level];
        let centered: Vec<i64> = last.iter().map(|&x| top.center(x)).collect();
        let mut out = p.truncated(level);
        let inv = self.rescale_inv(level);
        for j in 0..level {
            let m = &self.moduli(level)[j];
            let mut t: Vec<u64> = centered.iter().map(|&c| m.reduce_i64(c)).collect();
            self.tables(level)[j].forward(&mut t);
            let sh = m.shoup(inv[j]);
            for (x, &y) in out.residue_mut(j).iter_mut().zip(&t) {
                *x = m.mul_shoup(m.sub(*x, y), inv[j], sh);
            }
        }
        out
    }

    /// Drops primes above `level`; the message and scale are unchanged.
    pub fn level_down(&self, a: &Ciphertext, level: usize) -> Ciphertext {
        Ciphertext {
            c0: a.c0.truncated(level + 1),
            c1: a.c1.truncated(level + 1),
            scale: a.scale,
        }
    }

    /// Returns `(k0, k1)` with `k0 + k1 s ~ d t` for the key's target `t`.
    ///
    /// Each residue of `d` is one digit: it is lifted to every active prime
    /// and `P`, multiplied into the key, and the sum is divided by `P`.
    pub fn key_switch(&self, d: &RnsPoly, key: &SwitchKey) -> (RnsPoly, RnsPoly) {
        let level = d.primes() - 1;
        let n = self.degree();
        let sp = self.special_index();
        // active chain primes then P
        let basis: Vec<usize> = (0..=level).chain(std::iter::once(sp)).collect();
        let all = self.all_moduli();
        let tables = self.all_tables();
        // products are below 2^122 and there are at most 62 digits
        let mut acc0 = vec![vec![0u128; n]; basis.len()];
        let mut acc1 = vec![vec![0u128; n]; basis.len()];
        let mut lifted = vec![0u64; n];
        for i in 0..=level {
            let mut digit = d.residue(i).to_vec();
            tables[i].inverse(&mut digit);
            let (kb, ka) = &key.digits[i];
            for (slot, &t) in basis.iter().enumerate() {
                let m = &all[t];
                let src: &[u64] = if t == i {
                    d.residue(i)
                } else {
                    for (y, &x) in lifted.iter_mut().zip(&digit) {
                        *y = m.reduce(x);
                    }
                    tables[t].forward(&mut lifted);
                    &lifted
                };
                let (b, a) = (kb.residue(t), ka.residue(t));
                for (((s0, s1), &x), (&y0, &y1)) in acc0[slot].iter_mut().zip(acc1[slot].iter_mut()).zip(src).zip(b.iter().zip(a)) {
                    *s0 += x as u128 * y0 as u128;
                    *s1 += x as u128 * y1 as u128;
                }
            }
        }
        let reduce = |acc: Vec<Vec<u128>>| -> Vec<Vec<u64>> {
            acc.into_iter()
                .zip(&basis)
                .map(|(r, &t)| r.into_iter().map(|x| all[t].reduce_u128(x)).collect())
                .collect()
        };
        (self.mod_down(reduce(acc0), level), self.mod_down(reduce(acc1), level))
    }

    /// Divides a polynomial over `q_0 .. q_level, P` by `P`, rounding.
    fn mod_down(&self, mut residues: Vec<Vec<u64>>, level: usize) -> RnsPoly {
        let mut last = residues.pop().expect("special residue");
        self.special_table().inverse(&mut last);
        let p = self.special();
        let centered: Vec<i64> = last.iter().map(|&x| p.center(x)).collect();
        let mut t = vec![0u64; self.degree()];
        for (j, r) in residues.iter_mut().enumerate() {
            let m = &self.moduli(level)[j];
            for (y, &c) in t.iter_mut().zip(&centered) {
                *y = m.reduce_i64(c);
            }
            self.tables(level)[j].forward(&mut t);
            let inv = self.special_inv()[j];
            let sh = m.shoup(inv);
            for (x, &y) in r.iter_mut().zip(&t) {
                *x = m.mul_shoup(m.sub(*x, y), inv, sh);
            }
        }
        RnsPoly::from_residues(residues, true)
    }

    /// Applies the rotation with a dedicated key for `step`.
    pub fn rotate_with(&self, a: &Ciphertext, step: usize, key: &SwitchKey) -> Ciphertext {
        let g = galois_element(step, self.degree());
        let c0 = automorphism(self, &a.c0, g);
        let c1 = automorphism(self, &a.c1, g);
        let (mut k0, k1) = self.key_switch(&c1, key);
        k0.add_assign(&c0, self.moduli(a.level()));
        Ciphertext {
            c0: k0,
            c1: k1,
            scale: a.scale,
        }
    }

    /// Left rotation by `step` slots. Uses the key for `step` if present,
    /// otherwise composes the keys of the binary digits of `step`.
    pub fn rotate(&self, a: &Ciphertext, step: usize, keys: &EvaluationKeys) -> Result<Ciphertext, EngineError> {
        let step = step % self.params().slots();
        if step == 0 {
            return Ok(a.clone());
        }
        if let Some(key) = keys.galois.get(&step) {
            return Ok(self.rotate_with(a, step, key));
        }
        let parts: Vec<usize> = (0..usize::BITS).map(|b| 1usize << b).filter(|&p| step & p != 0).collect();
        if parts.iter().any(|p| !keys.galois.contains_key(p)) {
            return Err(EngineError::MissingRotationKey { step });
        }
        let mut out = a.clone();
        for p in parts {
            out = self.rotate_with(&out, p, &keys.galois[&p]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::generate;
    use crate::params::CkksParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(depth: usize) -> (CkksContext, crate::keys::KeySet) {
        let ctx = CkksContext::new(CkksParams::new(11, depth, 40).unwrap()).unwrap();
        let keys = generate(&ctx, 11, &[1, 2, 4, 8]);
        (ctx, keys)
    }

    fn values(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn encode_range_is_enforced() {
        let (ctx, _) = setup(1);
        let mut v = vec![0.0; ctx.params().slots()];
        v[3] = 2f64.powi(30);
        assert!(matches!(
            ctx.encode(&v, ctx.params().scale(), 1),
            Err(EngineError::EncodingRange { .. })
        ));
    }

    #[test]
    fn key_switch_of_relin_key_computes_square_term() {
        let (ctx, keys) = setup(3);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let slots = ctx.params().slots();
        let (x, y) = (values(1, slots), values(2, slots));
        let scale = ctx.params().scale();
        let cx = ctx.encrypt(&ctx.encode(&x, scale, 3).unwrap(), &keys.eval.public, &mut rng);
        let cy = ctx.encrypt(&ctx.encode(&y, scale, 3).unwrap(), &keys.eval.public, &mut rng);
        let prod = ctx.rescale(&ctx.mul_relin(&cx, &cy, &keys.eval)).unwrap();
        let got = ctx.decode(&ctx.decrypt(&prod, &keys.secret));
        let want: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        assert!(max_err(&got, &want) < 1e-5, "{}", max_err(&got, &want));
    }

    #[test]
    fn rotation_direct_and_composed() {
        let (ctx, keys) = setup(1);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let slots = ctx.params().slots();
        let x = values(3, slots);
        let c = ctx.encrypt(&ctx.encode(&x, ctx.params().scale(), 1).unwrap(), &keys.eval.public, &mut rng);
        for step in [1, 4, 7, 15] {
            let r = ctx.rotate(&c, step, &keys.eval).unwrap();
            let got = ctx.decode(&ctx.decrypt(&r, &keys.secret));
            let mut want = x.clone();
            want.rotate_left(step);
            assert!(max_err(&got, &want) < 1e-6, "step {step}");
        }
        assert!(matches!(
            ctx.rotate(&c, 16, &keys.eval),
            Err(EngineError::MissingRotationKey { step: 16 })
        ));
    }

    #[test]
    fn rescale_at_level_zero_fails() {
        let (ctx, keys) = setup(1);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let pt = ctx.encode(&vec![0.5; ctx.params().slots()], ctx.params().scale(), 0).unwrap();
        let c = ctx.encrypt(&pt, &keys.eval.public, &mut rng);
        assert!(matches!(ctx.rescale(&c), Err(EngineError::DepthExhausted { .. })));
        let got = ctx.decode(&ctx.decrypt(&c, &keys.secret));
        assert!(got.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }
}
