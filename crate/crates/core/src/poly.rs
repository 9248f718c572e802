//! Chebyshev interpolation of the dilated activation `tanh(a x)` on `[-1,1]`
//! and its depth-minimal homomorphic evaluation.
//!
//! Homomorphic evaluation uses the monomial basis: powers `x^(2^j)` by
//! repeated squaring, every other power as `x^(2^k) * x^(i - 2^k)`, so `x^i`
//! sits at depth `ceil(log2 i)`. All terms are dropped to a common level
//! before the coefficient multiplications, giving a total depth of exactly
//! `ceil(log2 m) + 1` for a degree-`m` polynomial.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, Handle, OpCounter, Session, SlotEngine};
use crate::error::ModelError;
use crate::scalar::Scalar;

/// Points of the dense grid used to measure the approximation error.
pub const ERROR_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevPoly<T> {
    degree: usize,
    /// Monomial coefficients, `coeffs[i]` multiplies `x^i`.
    coeffs: Vec<T>,
    /// Dilatation factor of the fitted `tanh(a x)`.
    dilatation: f64,
    /// Max `|P(x) - tanh(a x)|` over the dense grid on `[-1,1]`.
    max_error: f64,
}

/// Chebyshev nodes `cos(pi (j + 1/2) / (m + 1))`, `j = 0..=m`, built so that
/// node `m - j` is exactly `-node j`.
pub fn chebyshev_nodes(m: usize) -> Vec<f64> {
    let n = m + 1;
    let mut nodes = vec![0.0; n];
    for j in 0..n / 2 {
        let x = (PI * (j as f64 + 0.5) / n as f64).cos();
        nodes[j] = x;
        nodes[m - j] = -x;
    }
    nodes
}

/// Interpolates `f` at the `m + 1` Chebyshev nodes; returns monomial coefficients.
///
/// Mirrored nodes are summed in pairs using `T_k(-x) = (-1)^k T_k(x)`, so an
/// odd `f` (exactly odd in floating point) yields exactly zero even terms.
pub fn interpolate(f: impl Fn(f64) -> f64, m: usize) -> Vec<f64> {
    let n = m + 1;
    let nodes = chebyshev_nodes(m);
    let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    let mut cheb = vec![0.0; n];
    for (k, c) in cheb.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut s = 0.0;
        for j in 0..n / 2 {
            let t = (k as f64 * PI * (j as f64 + 0.5) / n as f64).cos();
            s += t * (values[j] + sign * values[m - j]);
        }
        if n % 2 == 1 {
            // middle node x = 0: T_k(0) is 0, 1 or -1
            s += values[n / 2] * [1.0, 0.0, -1.0, 0.0][k % 4];
        }
        *c = 2.0 * s / n as f64;
    }
    cheb[0] *= 0.5;
    chebyshev_to_monomial(&cheb)
}

/// Converts a Chebyshev-basis expansion to monomial coefficients.
pub fn chebyshev_to_monomial(cheb: &[f64]) -> Vec<f64> {
    let m = cheb.len();
    let mut out = vec![0.0; m];
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (k, &c) in cheb.iter().enumerate() {
        let next = match k {
            0 => {
                let mut t = vec![0.0; m];
                t[0] = 1.0;
                t
            }
            1 => {
                let mut t = vec![0.0; m];
                t[1] = 1.0;
                t
            }
            _ => {
                let mut t = vec![0.0; m];
                for i in 0..m - 1 {
                    t[i + 1] += 2.0 * cur[i];
                }
                for i in 0..m {
                    t[i] -= prev[i];
                }
                t
            }
        };
        for (o, t) in out.iter_mut().zip(&next) {
            *o += c * t;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    out
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Fits `tanh(a x)` on `[-1,1]` with a degree-`m` Chebyshev interpolant.
pub fn fit_tanh<T: Scalar>(a: f64, m: usize) -> Result<ChebyshevPoly<T>, ModelError> {
    if m < 1 {
        return Err(ModelError::InvalidParam("polynomial degree must be >= 1".into()));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(ModelError::InvalidParam(format!("dilatation must be positive, got {a}")));
    }
    // tanh is odd, so the even terms come out exactly zero
    let coeffs = interpolate(|x| (a * x).tanh(), m);
    let max_error = grid_error(&coeffs, |x| (a * x).tanh());
    Ok(ChebyshevPoly {
        degree: m,
        coeffs: coeffs.into_iter().map(T::lit).collect(),
        dilatation: a,
        max_error,
    })
}

/// Max `|P - f|` on the dense grid, with every local grid maximum refined on
/// a finer sub-grid so the figure is a sound bound between grid points too.
fn grid_error(coeffs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let h = 2.0 / (ERROR_GRID_POINTS - 1) as f64;
    let err = |x: f64| (horner(coeffs, x) - f(x)).abs();
    let e: Vec<f64> = (0..ERROR_GRID_POINTS).map(|i| err(-1.0 + h * i as f64)).collect();
    let mut best = e.iter().copied().fold(0.0, f64::max);
    for i in 1..ERROR_GRID_POINTS - 1 {
        if e[i] >= e[i - 1] && e[i] >= e[i + 1] {
            let x0 = -1.0 + h * (i - 1) as f64;
            for j in 0..=400 {
                best = best.max(err(x0 + 2.0 * h * j as f64 / 400.0));
            }
        }
    }
    best
}

impl<T: Scalar> ChebyshevPoly<T> {
    /// Polynomial with the given monomial coefficients (no fitted target).
    pub fn from_coefficients(coeffs: Vec<T>) -> Result<Self, ModelError> {
        if coeffs.len() < 2 {
            return Err(ModelError::InvalidParam("polynomial degree must be >= 1".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidParam("non-finite coefficient".into()));
        }
        Ok(Self {
            degree: coeffs.len() - 1,
            coeffs,
            dilatation: 0.0,
            max_error: 0.0,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    pub fn dilatation(&self) -> f64 {
        self.dilatation
    }

    pub fn max_error(&self) -> f64 {
        self.max_error
    }

    pub fn eval_clear(&self, x: T) -> T {
        self.coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
    }

    pub fn plan(&self) -> EvalPlan {
        EvalPlan::new(&self.coeffs.iter().map(|c| *c != T::zero()).collect::<Vec<_>>())
    }

    /// Applies the polynomial slotwise to `c`, consuming exactly
    /// [`EvalPlan::depth`] levels.
    pub fn eval_homomorphic<E: SlotEngine<T>>(
        &self,
        session: &mut Session<'_, T, E>,
        c: &Handle<T, E>,
    ) -> Result<Handle<T, E>, EngineError> {
        let plan = self.plan();
        if c.level() < plan.depth {
            return Err(EngineError::DepthExhausted {
                op: "poly_eval",
                level: c.level(),
            });
        }
        let n = session.params().slot_count;
        let start = c.level();
        let mut powers: Vec<Option<Handle<T, E>>> = vec![None; plan.degree + 1];
        powers[1] = Some(c.clone());
        for step in &plan.steps {
            let hi = powers[step.high].clone().expect("plan orders powers");
            let lo = powers[step.low].clone().expect("plan orders powers");
            let lo = if lo.level() > hi.level() {
                session.level_down(&lo, hi.level())?
            } else {
                lo
            };
            powers[step.power] = Some(session.mul_cipher(&hi, &lo)?);
        }
        let term_level = start - (plan.depth - 1);
        let mut acc: Option<Handle<T, E>> = None;
        for &i in &plan.terms {
            let p = powers[i].as_ref().expect("term power computed");
            let p = session.level_down(p, term_level)?;
            let term = session.mul_plain(&p, &vec![self.coeffs[i]; n])?;
            acc = Some(match acc {
                None => term,
                Some(a) => session.add(&a, &term)?,
            });
        }
        let mut out = match acc {
            Some(a) => a,
            None => {
                let p = session.level_down(c, term_level)?;
                session.mul_plain(&p, &vec![T::zero(); n])?
            }
        };
        if self.coeffs[0] != T::zero() {
            out = session.add_plain(&out, &vec![self.coeffs[0]; n])?;
        }
        Ok(out)
    }
}

/// One power computed as `x^high * x^low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerStep {
    pub power: usize,
    pub high: usize,
    pub low: usize,
}

/// Evaluation schedule of a polynomial of declared degree `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPlan {
    pub degree: usize,
    /// `ceil(log2 m) + 1`.
    pub depth: usize,
    /// Power products in dependency order.
    pub steps: Vec<PowerStep>,
    /// Degrees `>= 1` with a nonzero coefficient.
    pub terms: Vec<usize>,
    pub has_constant: bool,
}

pub fn ceil_log2(x: usize) -> usize {
    if x <= 1 {
        0
    } else {
        (usize::BITS - (x - 1).leading_zeros()) as usize
    }
}

impl EvalPlan {
    fn new(nonzero: &[bool]) -> Self {
        let degree = nonzero.len() - 1;
        let terms: Vec<usize> = (1..=degree).filter(|&i| nonzero[i]).collect();
        let mut needed = vec![false; degree + 1];
        let mut stack = terms.clone();
        while let Some(i) = stack.pop() {
            if needed[i] {
                continue;
            }
            needed[i] = true;
            if i > 1 {
                let (h, l) = split_power(i);
                stack.push(h);
                stack.push(l);
            }
        }
        let steps = (2..=degree)
            .filter(|&i| needed[i])
            .map(|i| {
                let (high, low) = split_power(i);
                PowerStep { power: i, high, low }
            })
            .collect();
        Self {
            degree,
            depth: ceil_log2(degree) + 1,
            steps,
            terms,
            has_constant: nonzero[0],
        }
    }

    /// Operations performed by one homomorphic evaluation.
    pub fn op_count(&self) -> OpCounter {
        let terms = self.terms.len().max(1) as u64;
        OpCounter::new(
            terms - 1 + u64::from(self.has_constant),
            terms,
            self.steps.len() as u64,
            0,
        )
    }
}

/// `x^i = x^(2^k) * x^(i - 2^k)` with `2^k` the largest power of two below
/// `i`; a power of two squares its half.
fn split_power(i: usize) -> (usize, usize) {
    if i.is_power_of_two() {
        (i / 2, i / 2)
    } else {
        let high = 1 << (usize::BITS - 1 - i.leading_zeros());
        (high, i - high)
    }
}
