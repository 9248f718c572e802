//! Key generation. Everything is derived from one seed: the secret and
//! error terms from the main stream, the uniform `a` halves of all public
//! material from a second seed so serialized keys can omit them.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::params::CkksContext;
use crate::poly::RnsPoly;

/// Ternary secret; `ntt` spans every prime including `P`.
#[derive(Debug, Clone)]
pub struct SecretKey {
    pub(crate) coeffs: Vec<i8>,
    pub(crate) ntt: RnsPoly,
}

impl SecretKey {
    pub fn coefficients(&self) -> &[i8] {
        &self.coeffs
    }

    pub(crate) fn from_coefficients(ctx: &CkksContext, coeffs: Vec<i8>) -> Self {
        let wide: Vec<i64> = coeffs.iter().map(|&c| c as i64).collect();
        let ntt = ctx.lift_signed_full(&wide);
        Self { coeffs, ntt }
    }
}

/// `(b, a)` with `b = -a s + e` over the chain primes.
#[derive(Debug, Clone)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
}

/// Hybrid key-switching key with one digit per chain prime. Digit `i`
/// encrypts `P * t` in residue `i` only, over every prime including `P`.
#[derive(Debug, Clone)]
pub struct SwitchKey {
    pub(crate) digits: Vec<(RnsPoly, RnsPoly)>,
}

/// Public evaluation material: encryption, relinearization and rotation keys.
#[derive(Debug, Clone)]
pub struct EvaluationKeys {
    pub(crate) id: u64,
    pub(crate) a_seed: u64,
    pub(crate) public: PublicKey,
    pub(crate) relin: SwitchKey,
    pub(crate) galois: BTreeMap<usize, SwitchKey>,
}

impl EvaluationKeys {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn rotation_steps(&self) -> Vec<usize> {
        self.galois.keys().copied().collect()
    }

    pub fn has_step(&self, step: usize) -> bool {
        self.galois.contains_key(&step)
    }
}

#[derive(Debug, Clone)]
pub struct KeySet {
    pub secret: SecretKey,
    pub eval: EvaluationKeys,
}

/// Stream identifiers for the uniform halves.
const STREAM_PUBLIC: u64 = 0;
const STREAM_RELIN: u64 = 1;
const STREAM_GALOIS: u64 = 2;

/// Galois element `5^step mod 2N` rotating slots left by `step`.
pub fn galois_element(step: usize, degree: usize) -> usize {
    let m = 2 * degree as u64;
    let mut g = 1u64;
    let mut base = 5u64;
    let mut e = step as u64;
    while e > 0 {
        if e & 1 == 1 {
            g = g * base % m;
        }
        base = base * base % m;
        e >>= 1;
    }
    g as usize
}

fn uniform_poly(ctx: &CkksContext, rng: &mut ChaCha20Rng, primes: &[usize]) -> RnsPoly {
    let n = ctx.degree();
    let residues = primes
        .iter()
        .map(|&i| {
            let q = ctx.all_moduli()[i].value();
            (0..n).map(|_| rng.random_range(0..q)).collect()
        })
        .collect();
    RnsPoly::from_residues(residues, true)
}

fn a_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Regenerates the uniform halves of every key from `a_seed`, in the order
/// `generate` consumed them.
pub(crate) struct UniformSource<'c> {
    ctx: &'c CkksContext,
    seed: u64,
}

impl<'c> UniformSource<'c> {
    pub(crate) fn new(ctx: &'c CkksContext, seed: u64) -> Self {
        Self { ctx, seed }
    }

    pub(crate) fn public(&self) -> RnsPoly {
        let primes: Vec<usize> = (0..=self.ctx.max_level()).collect();
        uniform_poly(self.ctx, &mut a_stream(self.seed, STREAM_PUBLIC), &primes)
    }

    fn switching(&self, stream: u64) -> Vec<RnsPoly> {
        let mut rng = a_stream(self.seed, stream);
        let primes: Vec<usize> = (0..self.ctx.all_moduli().len()).collect();
        (0..=self.ctx.max_level())
            .map(|_| uniform_poly(self.ctx, &mut rng, &primes))
            .collect()
    }

    pub(crate) fn relin(&self) -> Vec<RnsPoly> {
        self.switching(STREAM_RELIN)
    }

    pub(crate) fn galois(&self, step: usize) -> Vec<RnsPoly> {
        self.switching(STREAM_GALOIS + step as u64)
    }
}

struct ErrorSampler {
    normal: Normal<f64>,
    bound: f64,
}

impl ErrorSampler {
    fn new(std: f64) -> Self {
        Self {
            normal: Normal::new(0.0, std).expect("positive deviation"),
            bound: 6.0 * std,
        }
    }

    fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<i64> {
        (0..n)
            .map(|_| self.normal.sample(rng).clamp(-self.bound, self.bound).round() as i64)
            .collect()
    }
}

pub(crate) fn sample_ternary(rng: &mut impl Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.random_range(-1i8..=1)).collect()
}

pub(crate) fn sample_error(ctx: &CkksContext, rng: &mut impl Rng) -> Vec<i64> {
    ErrorSampler::new(ctx.params().error_std).sample(rng, ctx.degree())
}

/// Builds `b_i = -a_i s + e_i + [residue i] P t` for every digit, given
/// the uniform halves.
fn switch_key(ctx: &CkksContext, secret: &SecretKey, target: &RnsPoly, uniform: Vec<RnsPoly>, rng: &mut ChaCha20Rng) -> SwitchKey {
    let moduli = ctx.all_moduli();
    let digits = uniform
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut b = ctx.lift_signed_full(&sample_error(ctx, rng));
            let mut as_ = a.clone();
            as_.mul_assign(&secret.ntt, moduli);
            b.sub_assign(&as_, moduli);
            let m = &moduli[i];
            let factor = ctx.special_mod()[i];
            let sh = m.shoup(factor);
            for (x, &t) in b.residue_mut(i).iter_mut().zip(target.residue(i)) {
                *x = m.add(*x, m.mul_shoup(t, factor, sh));
            }
            (b, a)
        })
        .collect();
    SwitchKey { digits }
}

/// `X -> X^g` applied to an NTT-form polynomial.
pub(crate) fn automorphism(ctx: &CkksContext, p: &RnsPoly, g: usize) -> RnsPoly {
    p.permuted(&crate::ntt::automorphism_permutation(ctx.degree(), g))
}

/// Generates a key set with rotation keys for exactly `steps` (step 0 and
/// duplicates are ignored).
pub fn generate(ctx: &CkksContext, seed: u64, steps: &[usize]) -> KeySet {
    let n = ctx.degree();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let id = rng.next_u64();
    let a_seed = rng.next_u64();
    let secret = SecretKey::from_coefficients(ctx, sample_ternary(&mut rng, n));
    let uniform = UniformSource::new(ctx, a_seed);

    let level = ctx.max_level();
    let moduli = ctx.moduli(level);
    let a = uniform.public();
    let mut b = ctx.lift_signed(&sample_error(ctx, &mut rng), level);
    let mut as_ = a.clone();
    as_.mul_assign(&secret.ntt.truncated(level + 1), moduli);
    b.sub_assign(&as_, moduli);
    let public = PublicKey { b, a };

    let mut square = secret.ntt.clone();
    square.mul_assign(&secret.ntt, ctx.all_moduli());
    let relin = switch_key(ctx, &secret, &square, uniform.relin(), &mut rng);

    let mut galois = BTreeMap::new();
    let slots = ctx.params().slots();
    let mut wanted: Vec<usize> = steps.iter().map(|&s| s % slots).filter(|&s| s != 0).collect();
    wanted.sort_unstable();
    wanted.dedup();
    for step in wanted {
        let rotated = automorphism(ctx, &secret.ntt, galois_element(step, n));
        galois.insert(step, switch_key(ctx, &secret, &rotated, uniform.galois(step), &mut rng));
    }
    KeySet {
        secret,
        eval: EvaluationKeys {
            id,
            a_seed,
            public,
            relin,
            galois,
        },
    }
}

/// Powers of two below the slot count.
pub fn power_of_two_steps(slots: usize) -> Vec<usize> {
    (0..slots.trailing_zeros()).map(|i| 1 << i).collect()
}
