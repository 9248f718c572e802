//! Word-sized modular arithmetic for NTT-friendly primes below 2^62.

/// An odd prime `q < 2^62` with its Barrett constant `floor(2^128 / q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    ratio: u128,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2 && value < (1 << 62), "modulus {value} out of range");
        // 2^128 / q computed as (2^128 - 1) / q, which only differs when q | 2^128
        let ratio = u128::MAX / value as u128;
        Self { value, ratio }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Barrett reduction of any `u128`: the quotient estimate is the high
    /// 128 bits of `x * ratio`, off by at most a few units.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let (x_hi, x_lo) = ((x >> 64) as u64, x as u64);
        let (r_hi, r_lo) = ((self.ratio >> 64) as u64, self.ratio as u64);
        // floor(x * ratio / 2^128), dropping only the lowest partial product's carry
        let lo_lo = (x_lo as u128 * r_lo as u128) >> 64;
        let lo_hi = x_lo as u128 * r_hi as u128;
        let hi_lo = x_hi as u128 * r_lo as u128;
        let hi_hi = x_hi as u128 * r_hi as u128;
        let mid = lo_lo + (lo_hi as u64 as u128) + (hi_lo as u64 as u128);
        let quotient = hi_hi + (lo_hi >> 64) + (hi_lo >> 64) + (mid >> 64);
        let mut r = x.wrapping_sub(quotient.wrapping_mul(self.value as u128)) as u64;
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x >= self.value {
            x % self.value
        } else {
            x
        }
    }

    /// `x mod q` for a signed value.
    #[inline]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        let r = (x as i128).rem_euclid(self.value as i128);
        r as u64
    }

    #[inline]
    pub fn reduce_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.value as i128) as u64
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Shoup companion `floor(w * 2^64 / q)` of a constant `w < q`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` in `[0, 2q)` for any `a < 2^64`.
    #[inline]
    pub fn mul_shoup_lazy(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let q_est = ((a as u128 * w_shoup as u128) >> 64) as u64;
        a.wrapping_mul(w).wrapping_sub(q_est.wrapping_mul(self.value))
    }

    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let r = self.mul_shoup_lazy(a, w, w_shoup);
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat; `q` is prime.
    pub fn inv(&self, a: u64) -> u64 {
        let a = self.reduce(a);
        assert!(a != 0, "zero has no inverse");
        self.pow(a, self.value - 2)
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }
}

const WITNESSES: [u64; 7] = [2, 325, 9375, 28178, 450775, 9780504, 1795265022];

/// Deterministic Miller-Rabin for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for &a in &WITNESSES {
        let a = a % n;
        if a == 0 {
            continue;
        }
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `count` distinct primes `q = 1 (mod 2N)` closest to `2^bits`, taken
/// alternately above and below it so their product stays near `2^(bits*count)`.
/// Primes in `exclude` are skipped.
pub fn primes_near(bits: u32, count: usize, two_n: u64, exclude: &[u64]) -> Vec<u64> {
    let center = (1u64 << bits) / two_n;
    let mut out = Vec::with_capacity(count);
    let (mut up, mut down) = (center + 1, center);
    let mut take_up = true;
    while out.len() < count {
        let c = if take_up {
            let c = up;
            up += 1;
            c
        } else {
            assert!(down > 1, "ran out of primes below 2^{bits}");
            down -= 1;
            down
        };
        let q = c * two_n + 1;
        if is_prime(q) && !exclude.contains(&q) {
            out.push(q);
            take_up = !take_up;
        }
    }
    out
}

/// Largest primes `q = 1 (mod 2N)` below `2^bits`, descending.
pub fn primes_below(bits: u32, count: usize, two_n: u64, exclude: &[u64]) -> Vec<u64> {
    let mut c = ((1u64 << bits) - 1) / two_n;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let q = c * two_n + 1;
        if is_prime(q) && !exclude.contains(&q) {
            out.push(q);
        }
        c -= 1;
    }
    out
}

/// Smallest primitive `2N`-th root of unity mod `q`, found as `g^((q-1)/2N)`
/// with `psi^N = -1`.
pub fn primitive_root(m: &Modulus, two_n: u64) -> u64 {
    let q = m.value();
    assert_eq!((q - 1) % two_n, 0, "{q} is not 1 mod {two_n}");
    let exp = (q - 1) / two_n;
    let mut best = None;
    for g in 2..q {
        let psi = m.pow(g, exp);
        if m.pow(psi, two_n / 2) == q - 1 {
            best = Some(psi);
            break;
        }
    }
    let psi = best.expect("a primitive root exists");
    // smallest power psi^k (k odd) for a canonical choice
    let psi2 = m.mul(psi, psi);
    let mut cur = psi;
    let mut min = psi;
    for _ in 0..two_n / 2 {
        cur = m.mul(cur, psi2);
        min = min.min(cur);
    }
    min
}
