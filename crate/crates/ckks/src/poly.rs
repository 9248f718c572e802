//! Ring elements in double-CRT form: one residue vector per active prime.

use crate::arith::Modulus;
use crate::ntt::NttTable;

/// An element of `Z_Q[X]/(X^N + 1)` stored as residues modulo the primes
/// of `Q`. Ciphertexts and keys keep their polynomials in NTT form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPoly {
    residues: Vec<Vec<u64>>,
    ntt: bool,
}

impl RnsPoly {
    pub fn zero(primes: usize, n: usize, ntt: bool) -> Self {
        Self {
            residues: vec![vec![0; n]; primes],
            ntt,
        }
    }

    pub fn from_residues(residues: Vec<Vec<u64>>, ntt: bool) -> Self {
        Self { residues, ntt }
    }

    /// Reduces small signed coefficients modulo every prime in `moduli`.
    pub fn from_signed(coeffs: &[i64], moduli: &[Modulus]) -> Self {
        let residues = moduli
            .iter()
            .map(|m| coeffs.iter().map(|&c| m.reduce_i64(c)).collect())
            .collect();
        Self { residues, ntt: false }
    }

    pub fn primes(&self) -> usize {
        self.residues.len()
    }

    pub fn degree(&self) -> usize {
        self.residues.first().map_or(0, Vec::len)
    }

    pub fn is_ntt(&self) -> bool {
        self.ntt
    }

    pub fn residue(&self, i: usize) -> &[u64] {
        &self.residues[i]
    }

    pub fn residue_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.residues[i]
    }

    pub fn residues(&self) -> &[Vec<u64>] {
        &self.residues
    }

    pub fn push_residue(&mut self, r: Vec<u64>) {
        self.residues.push(r);
    }

    /// Keeps only the first `primes` residues.
    pub fn truncate(&mut self, primes: usize) {
        self.residues.truncate(primes);
    }

    pub fn truncated(&self, primes: usize) -> Self {
        Self {
            residues: self.residues[..primes].to_vec(),
            ntt: self.ntt,
        }
    }

    pub fn pop_residue(&mut self) -> Option<Vec<u64>> {
        self.residues.pop()
    }

    pub fn to_ntt(&mut self, tables: &[NttTable]) {
        if !self.ntt {
            for (r, t) in self.residues.iter_mut().zip(tables) {
                t.forward(r);
            }
            self.ntt = true;
        }
    }

    pub fn to_coeff(&mut self, tables: &[NttTable]) {
        if self.ntt {
            for (r, t) in self.residues.iter_mut().zip(tables) {
                t.inverse(r);
            }
            self.ntt = false;
        }
    }

    fn zip_apply(&mut self, other: &RnsPoly, moduli: &[Modulus], f: impl Fn(&Modulus, u64, u64) -> u64) {
        debug_assert_eq!(self.ntt, other.ntt);
        for ((a, b), m) in self.residues.iter_mut().zip(&other.residues).zip(moduli) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = f(m, *x, y);
            }
        }
    }

    pub fn add_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        self.zip_apply(other, moduli, Modulus::add);
    }

    pub fn sub_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        self.zip_apply(other, moduli, Modulus::sub);
    }

    /// Pointwise product; both operands in NTT form.
    pub fn mul_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        debug_assert!(self.ntt && other.ntt);
        self.zip_apply(other, moduli, Modulus::mul);
    }

    /// `self += a * b` pointwise, all in NTT form.
    pub fn mul_add_assign(&mut self, a: &RnsPoly, b: &RnsPoly, moduli: &[Modulus]) {
        for (((acc, x), y), m) in self.residues.iter_mut().zip(&a.residues).zip(&b.residues).zip(moduli) {
            for ((s, &u), &v) in acc.iter_mut().zip(x).zip(y) {
                *s = m.add(*s, m.mul(u, v));
            }
        }
    }

    pub fn negate(&mut self, moduli: &[Modulus]) {
        for (r, m) in self.residues.iter_mut().zip(moduli) {
            for x in r.iter_mut() {
                *x = m.neg(*x);
            }
        }
    }

    /// Multiplies residue `i` by the scalar `scalars[i]`.
    pub fn mul_scalars(&mut self, scalars: &[u64], moduli: &[Modulus]) {
        for ((r, &s), m) in self.residues.iter_mut().zip(scalars).zip(moduli) {
            let sh = m.shoup(s);
            for x in r.iter_mut() {
                *x = m.mul_shoup(*x, s, sh);
            }
        }
    }

    /// Applies an NTT-domain index permutation to every residue.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        debug_assert!(self.ntt);
        Self {
            residues: self
                .residues
                .iter()
                .map(|r| perm.iter().map(|&j| r[j]).collect())
                .collect(),
            ntt: true,
        }
    }
}
