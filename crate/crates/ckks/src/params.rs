//! Scheme parameters and the precomputed modulus chain.

use hrf_core::{EngineError, EngineParams};

use crate::arith::{primes_below, primes_near, Modulus};
use crate::encoding::Encoder;
use crate::ntt::NttTable;
use crate::poly::RnsPoly;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkksParams {
    /// `log2` of the ring degree `N`.
    pub log_degree: u32,
    /// Number of rescalable primes above the base prime.
    pub depth_budget: usize,
    pub scale_bits: u32,
    /// Size of the base prime `q_0`, which carries the final message.
    pub base_bits: u32,
    /// Size of the key-switching prime `P`.
    pub special_bits: u32,
    pub error_std: f64,
}

impl CkksParams {
    pub fn new(log_degree: u32, depth_budget: usize, scale_bits: u32) -> Result<Self, EngineError> {
        let p = Self {
            log_degree,
            depth_budget,
            scale_bits,
            base_bits: 60,
            special_bits: 60,
            error_std: 3.2,
        };
        p.validate()?;
        Ok(p)
    }

    /// `N = 2^14`, `scale = 2^40`.
    pub fn with_depth(depth_budget: usize) -> Self {
        Self::new(14, depth_budget, 40).expect("default parameters are valid")
    }

    pub fn from_engine(params: &EngineParams) -> Result<Self, EngineError> {
        params.validate()?;
        Self::new(params.ring_degree().trailing_zeros(), params.depth_budget, params.scale_bits)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidParams(msg));
        if !(2..=17).contains(&self.log_degree) {
            return bad(format!("log_degree {} outside 2..=17", self.log_degree));
        }
        if !(20..=55).contains(&self.scale_bits) {
            return bad(format!("scale_bits {} outside 20..=55", self.scale_bits));
        }
        if self.base_bits > 61 || self.special_bits > 61 {
            return bad("base and special primes must stay below 2^61".into());
        }
        if self.base_bits < self.scale_bits + 10 {
            return bad(format!(
                "base prime of {} bits leaves no headroom above scale 2^{}",
                self.base_bits, self.scale_bits
            ));
        }
        if self.special_bits < self.base_bits.max(self.scale_bits) {
            return bad("special prime must be at least as large as every chain prime".into());
        }
        if self.depth_budget > 60 {
            return bad(format!("depth_budget {} too large", self.depth_budget));
        }
        if !(self.error_std > 0.0 && self.error_std < 100.0) {
            return bad(format!("error_std {} out of range", self.error_std));
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        1 << self.log_degree
    }

    pub fn slots(&self) -> usize {
        self.degree() / 2
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }
}

/// Primes, NTT tables and the constants of rescaling and key switching.
///
/// `moduli` holds `q_0 .. q_L` followed by the special prime `P`; a
/// ciphertext at level `l` uses the prefix `q_0 .. q_l`.
#[derive(Debug)]
pub struct CkksContext {
    params: CkksParams,
    moduli: Vec<Modulus>,
    tables: Vec<NttTable>,
    /// `rescale_inv[l][j] = q_l^-1 mod q_j` for `j < l`.
    rescale_inv: Vec<Vec<u64>>,
    /// `P mod q_j` for every chain prime.
    special_mod: Vec<u64>,
    /// `P^-1 mod q_j`.
    special_inv: Vec<u64>,
    encoder: Encoder,
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Self, EngineError> {
        params.validate()?;
        let n = params.degree();
        let two_n = 2 * n as u64;
        let base = primes_below(params.base_bits, 1, two_n, &[]);
        let special = primes_below(params.special_bits, 1, two_n, &base);
        let mut exclude = base.clone();
        exclude.extend(&special);
        let scaling = primes_near(params.scale_bits, params.depth_budget, two_n, &exclude);
        let values: Vec<u64> = base.into_iter().chain(scaling).chain(special).collect();
        let moduli: Vec<Modulus> = values.iter().map(|&q| Modulus::new(q)).collect();
        let tables = moduli.iter().map(|&m| NttTable::new(m, n)).collect();

        let chain = params.depth_budget + 1;
        let rescale_inv = (0..chain)
            .map(|l| (0..l).map(|j| moduli[j].inv(moduli[j].reduce(values[l]))).collect())
            .collect();
        let p = values[chain];
        let special_mod: Vec<u64> = moduli[..chain].iter().map(|m| m.reduce(p)).collect();
        let special_inv = moduli[..chain]
            .iter()
            .zip(&special_mod)
            .map(|(m, &r)| m.inv(r))
            .collect();
        log::debug!("ckks chain for N = {n}: {values:?}");
        Ok(Self {
            params,
            moduli,
            tables,
            rescale_inv,
            special_mod,
            special_inv,
            encoder: Encoder::new(n),
        })
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn degree(&self) -> usize {
        self.params.degree()
    }

    pub fn max_level(&self) -> usize {
        self.params.depth_budget
    }

    /// Chain primes `q_0 .. q_level`.
    pub fn moduli(&self, level: usize) -> &[Modulus] {
        &self.moduli[..=level]
    }

    pub fn tables(&self, level: usize) -> &[NttTable] {
        &self.tables[..=level]
    }

    /// Every prime including `P`.
    pub fn all_moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn all_tables(&self) -> &[NttTable] {
        &self.tables
    }

    pub fn special_index(&self) -> usize {
        self.moduli.len() - 1
    }

    pub fn special(&self) -> &Modulus {
        &self.moduli[self.special_index()]
    }

    pub fn special_table(&self) -> &NttTable {
        &self.tables[self.special_index()]
    }

    pub fn prime(&self, level: usize) -> u64 {
        self.moduli[level].value()
    }

    pub fn rescale_inv(&self, level: usize) -> &[u64] {
        &self.rescale_inv[level]
    }

    pub fn special_mod(&self) -> &[u64] {
        &self.special_mod
    }

    pub fn special_inv(&self) -> &[u64] {
        &self.special_inv
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Largest plaintext coefficient that still decrypts correctly modulo `q_0`.
    pub fn coefficient_limit(&self) -> f64 {
        ((self.moduli[0].bits() - 2) as f64).exp2()
    }

    /// Lifts small signed coefficients to NTT form at `level`.
    pub fn lift_signed(&self, coeffs: &[i64], level: usize) -> RnsPoly {
        let mut p = RnsPoly::from_signed(coeffs, self.moduli(level));
        p.to_ntt(self.tables(level));
        p
    }

    /// Same, over every prime including `P`.
    pub fn lift_signed_full(&self, coeffs: &[i64]) -> RnsPoly {
        let mut p = RnsPoly::from_signed(coeffs, &self.moduli);
        p.to_ntt(&self.tables);
        p
    }
}
