//! Canonical-embedding encoder for real slot vectors.
//!
//! Slot `j` is the evaluation of the plaintext polynomial at `zeta^(5^j)`
//! with `zeta = exp(i pi / N)`. With this ordering the automorphism
//! `X -> X^(5^r)` rotates slots left by `r`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::ntt::bit_reverse;

#[derive(Debug, Clone)]
pub struct Encoder {
    degree: usize,
    slots: usize,
    /// `5^j mod 2N` for `j < N/2`.
    rot_group: Vec<usize>,
    /// `exp(2 pi i k / 2N)` for `k <= 2N`.
    roots: Vec<Complex64>,
}

impl Encoder {
    pub fn new(degree: usize) -> Self {
        assert!(degree.is_power_of_two() && degree >= 4);
        let m = 2 * degree;
        let slots = degree / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let roots = (0..=m)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64))
            .collect();
        Self {
            degree,
            slots,
            rot_group,
            roots,
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn bit_reverse_in_place(vals: &mut [Complex64]) {
        let bits = vals.len().trailing_zeros();
        for i in 0..vals.len() {
            let j = bit_reverse(i, bits);
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// Evaluates the packed coefficient vector at the slot roots.
    fn special_fft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.degree;
        Self::bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let (half, quarter) = (len / 2, len * 4);
            for i in (0..size).step_by(len) {
                for j in 0..half {
                    let idx = (self.rot_group[j] % quarter) * m / quarter;
                    let u = vals[i + j];
                    let v = vals[i + j + half] * self.roots[idx];
                    vals[i + j] = u + v;
                    vals[i + j + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    fn special_fft_inv(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.degree;
        let mut len = size;
        while len >= 2 {
            let (half, quarter) = (len / 2, len * 4);
            for i in (0..size).step_by(len) {
                for j in 0..half {
                    let idx = (quarter - self.rot_group[j] % quarter) * m / quarter;
                    let u = vals[i + j] + vals[i + j + half];
                    let v = (vals[i + j] - vals[i + j + half]) * self.roots[idx];
                    vals[i + j] = u;
                    vals[i + j + half] = v;
                }
            }
            len >>= 1;
        }
        Self::bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    /// Real coefficients (before rounding) of the polynomial whose slots are
    /// `values * scale`. A constant vector maps to a constant polynomial.
    pub fn embed(&self, values: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(values.len(), self.slots);
        let mut coeffs = vec![0.0; self.degree];
        if values.iter().all(|&v| v == values[0]) {
            coeffs[0] = values[0] * scale;
            return coeffs;
        }
        let mut vals: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.special_fft_inv(&mut vals);
        for (j, v) in vals.iter().enumerate() {
            coeffs[j] = v.re * scale;
            coeffs[j + self.slots] = v.im * scale;
        }
        coeffs
    }

    /// Real parts of the slots of a polynomial with (centered, real-valued)
    /// coefficients, divided by `scale`.
    pub fn decode(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.degree);
        let mut vals: Vec<Complex64> = (0..self.slots)
            .map(|j| Complex64::new(coeffs[j] / scale, coeffs[j + self.slots] / scale))
            .collect();
        self.special_fft(&mut vals);
        vals.into_iter().map(|v| v.re).collect()
    }
}
