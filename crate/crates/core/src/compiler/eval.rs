use std::fmt;

use serde::{Deserialize, Serialize};

use super::HrfModel;
use crate::engine::{EngineError, Handle, OpCounter, Session, SlotEngine, SlotVector};
use crate::error::CompileError;
use crate::poly::ceil_log2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Comparison,
    FirstActivation,
    Matching,
    SecondActivation,
    Output,
    OutputBias,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Comparison,
        Stage::FirstActivation,
        Stage::Matching,
        Stage::SecondActivation,
        Stage::Output,
        Stage::OutputBias,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Stage::Comparison => "first linear layer",
            Stage::FirstActivation => "activation 1",
            Stage::Matching => "second linear layer",
            Stage::SecondActivation => "activation 2",
            Stage::Output => "third linear layer",
            Stage::OutputBias => "output bias",
        }
    }
}

/// Operation counts broken down by stage; `depth_consumed` of each entry is
/// the number of levels that stage consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub comparison: OpCounter,
    pub first_activation: OpCounter,
    pub matching: OpCounter,
    pub second_activation: OpCounter,
    pub output: OpCounter,
    pub output_bias: OpCounter,
}

impl StageCounts {
    pub fn get(&self, stage: Stage) -> &OpCounter {
        match stage {
            Stage::Comparison => &self.comparison,
            Stage::FirstActivation => &self.first_activation,
            Stage::Matching => &self.matching,
            Stage::SecondActivation => &self.second_activation,
            Stage::Output => &self.output,
            Stage::OutputBias => &self.output_bias,
        }
    }

    fn get_mut(&mut self, stage: Stage) -> &mut OpCounter {
        match stage {
            Stage::Comparison => &mut self.comparison,
            Stage::FirstActivation => &mut self.first_activation,
            Stage::Matching => &mut self.matching,
            Stage::SecondActivation => &mut self.second_activation,
            Stage::Output => &mut self.output,
            Stage::OutputBias => &mut self.output_bias,
        }
    }

    pub fn total(&self) -> OpCounter {
        let mut t = OpCounter::default();
        for s in Stage::ALL {
            let c = self.get(s);
            t = t + *c;
            t.depth_consumed = 0;
        }
        t.depth_consumed = Stage::ALL.iter().map(|&s| self.get(s).depth_consumed).sum();
        t
    }

    /// Equal operation counts and per-stage depth.
    pub fn matches(&self, other: &StageCounts) -> bool {
        Stage::ALL.iter().all(|&s| {
            let (a, b) = (self.get(s), other.get(s));
            a.same_ops(b) && a.depth_consumed == b.depth_consumed
        })
    }
}

impl fmt::Display for StageCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>6} {:>6} {:>6} {:>6} {:>6}", "stage", "add", "pmul", "cmul", "rot", "depth")?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, c: &OpCounter| {
            writeln!(
                f,
                "{:<20} {:>6} {:>6} {:>6} {:>6} {:>6}",
                name, c.additions, c.plain_multiplications, c.cipher_multiplications, c.rotations, c.depth_consumed
            )
        };
        for s in Stage::ALL {
            row(f, s.label(), self.get(s))?;
        }
        row(f, "total", &self.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrace {
    pub counts: StageCounts,
    pub input_level: usize,
    pub output_level: usize,
    /// Min/max of the decrypted inputs of both activations; only filled by
    /// [`evaluate_probed`].
    pub activation_ranges: Option<[(f64, f64); 2]>,
}

impl EvalTrace {
    pub fn depth_consumed(&self) -> usize {
        self.input_level - self.output_level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub counts: StageCounts,
    pub depth: usize,
    pub note: String,
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}depth {}\n{}", self.counts, self.depth, self.note)
    }
}

/// Predicted operation counts of [`evaluate`].
pub fn complexity_report<T: Scalar>(hrf: &HrfModel<T>) -> ComplexityReport {
    let k = hrf.layout.leaves as u64;
    let c = hrf.outputs() as u64;
    let rounds = ceil_log2(hrf.layout.active_width()) as u64;
    let plan = hrf.activation.plan();
    let mut act = plan.op_count();
    act.depth_consumed = plan.depth as u64;
    let with_depth = |mut o: OpCounter, d: u64| {
        o.depth_consumed = d;
        o
    };
    let counts = StageCounts {
        comparison: OpCounter::new(1, 0, 0, 0),
        first_activation: act,
        matching: with_depth(OpCounter::new(k, k, 0, k), 1),
        second_activation: act,
        output: with_depth(OpCounter::new(c * rounds, c, 0, c * rounds), 1),
        output_bias: OpCounter::new(c, 0, 0, 0),
    };
    ComplexityReport {
        counts,
        depth: hrf.depth_requirement,
        note: format!(
            "slots n = {}, ring degree N = {}: additions cost O(N) word operations, plaintext/ciphertext \
             multiplications and rotations O(N log N) each (NTT-dominated)",
            hrf.layout.slots,
            2 * hrf.layout.slots
        ),
    }
}

/// `sum_i D_i * rotate(c, i) + bias` for `i < K`, starting the accumulator
/// from the biased first product: `K` additions, `K` plaintext products and
/// `K` rotations (the first one by zero), one level.
pub fn packed_matmul<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    diagonals: &[SlotVector<T>],
    bias: &[T],
    c: &Handle<T, E>,
) -> Result<Handle<T, E>, EngineError> {
    let mut acc: Option<Handle<T, E>> = None;
    let mut shifted = c.clone();
    for (i, d) in diagonals.iter().enumerate() {
        shifted = session.rotate(&shifted, usize::from(i > 0))?;
        let term = session.mul_plain(&shifted, d)?;
        acc = Some(match acc {
            None => session.add_plain(&term, bias)?,
            Some(a) => session.add(&a, &term)?,
        });
    }
    acc.ok_or_else(|| EngineError::Alignment("packed_matmul needs at least one diagonal".into()))
}

/// `<w, c>` over the first `active_width` slots, left in slot 0:
/// one plaintext product then `ceil(log2 width)` rotate-and-add rounds.
pub fn dot_product<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    w: &[T],
    c: &Handle<T, E>,
    active_width: usize,
) -> Result<Handle<T, E>, EngineError> {
    debug_assert!(w.iter().skip(active_width).all(|v| *v == T::zero()), "weights beyond the active width");
    let mut z = session.mul_plain(c, w)?;
    for i in 0..ceil_log2(active_width) {
        let r = session.rotate(&z, 1 << i)?;
        z = session.add(&z, &r)?;
    }
    Ok(z)
}

fn measure<T: Scalar, E: SlotEngine<T>, R>(
    session: &mut Session<'_, T, E>,
    counts: &mut StageCounts,
    stage: Stage,
    level_in: usize,
    f: impl FnOnce(&mut Session<'_, T, E>) -> Result<(R, usize), EngineError>,
    context: &'static str,
) -> Result<R, CompileError> {
    let before = session.counters();
    let (r, level_out) = f(session).map_err(CompileError::at(context))?;
    let mut spent = session.counters().since(&before);
    spent.depth_consumed = (level_in - level_out) as u64;
    *counts.get_mut(stage) = spent;
    Ok(r)
}

fn slot_range<T: Scalar>(v: &[T], hrf: &HrfModel<T>, width: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in 0..hrf.layout.trees {
        let off = hrf.layout.offset(l);
        for x in &v[off..off + width] {
            lo = lo.min(x.as_f64());
            hi = hi.max(x.as_f64());
        }
    }
    (lo, hi)
}

fn run<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    hrf: &HrfModel<T>,
    input: &Handle<T, E>,
    probe: bool,
) -> Result<(Vec<Handle<T, E>>, EvalTrace), CompileError> {
    if input.level() < hrf.depth_requirement {
        return Err(CompileError::at("input")(EngineError::DepthExhausted {
            op: "evaluate",
            level: input.level(),
        }));
    }
    let mut counts = StageCounts::default();
    let mut ranges = [(0.0, 0.0); 2];
    let k = hrf.layout.leaves;
    let width = hrf.layout.block_width();
    let poly = &hrf.activation;

    let lvl = input.level();
    let z1 = measure(session, &mut counts, Stage::Comparison, lvl, |s| {
        let r = s.sub_plain(input, &hrf.thresholds)?;
        let l = r.level();
        Ok((r, l))
    }, "first linear layer")?;
    if probe {
        ranges[0] = slot_range(&session.decrypt(&z1).map_err(CompileError::at("probe"))?, hrf, width);
    }
    let lvl = z1.level();
    let u = measure(session, &mut counts, Stage::FirstActivation, lvl, |s| {
        let r = poly.eval_homomorphic(s, &z1)?;
        let l = r.level();
        Ok((r, l))
    }, "activation 1")?;
    let lvl = u.level();
    let z2 = measure(session, &mut counts, Stage::Matching, lvl, |s| {
        let r = packed_matmul(s, &hrf.diagonals, &hrf.bias, &u)?;
        let l = r.level();
        Ok((r, l))
    }, "second linear layer")?;
    if probe {
        ranges[1] = slot_range(&session.decrypt(&z2).map_err(CompileError::at("probe"))?, hrf, k);
    }
    let lvl = z2.level();
    let v = measure(session, &mut counts, Stage::SecondActivation, lvl, |s| {
        let r = poly.eval_homomorphic(s, &z2)?;
        let l = r.level();
        Ok((r, l))
    }, "activation 2")?;
    let lvl = v.level();
    let active = hrf.layout.active_width();
    let scores = measure(session, &mut counts, Stage::Output, lvl, |s| {
        let out = hrf
            .class_weights
            .iter()
            .map(|w| dot_product(s, w, &v, active))
            .collect::<Result<Vec<_>, _>>()?;
        let l = out[0].level();
        Ok((out, l))
    }, "third linear layer")?;
    let lvl = scores[0].level();
    let n = hrf.layout.slots;
    let outputs = measure(session, &mut counts, Stage::OutputBias, lvl, |s| {
        let out = scores
            .iter()
            .zip(&hrf.class_bias)
            .map(|(y, &b)| {
                let mut p = vec![T::zero(); n];
                p[0] = b;
                s.add_plain(y, &p)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((out, lvl))
    }, "output bias")?;
    let trace = EvalTrace {
        counts,
        input_level: input.level(),
        output_level: outputs[0].level(),
        activation_ranges: probe.then_some(ranges),
    };
    Ok((outputs, trace))
}

/// Full homomorphic inference: one ciphertext per class whose slot 0 holds
/// the score.
pub fn evaluate<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    hrf: &HrfModel<T>,
    input: &Handle<T, E>,
) -> Result<(Vec<Handle<T, E>>, EvalTrace), CompileError> {
    run(session, hrf, input, false)
}

/// Like [`evaluate`] but decrypts both activation inputs to record their
/// range. Needs the secret key; for testing only.
pub fn evaluate_probed<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    hrf: &HrfModel<T>,
    input: &Handle<T, E>,
) -> Result<(Vec<Handle<T, E>>, EvalTrace), CompileError> {
    run(session, hrf, input, true)
}

/// Evaluates and decrypts the class scores. Testing only.
pub fn evaluate_trusted<T: Scalar, E: SlotEngine<T>>(
    session: &mut Session<'_, T, E>,
    hrf: &HrfModel<T>,
    input: &Handle<T, E>,
) -> Result<(Vec<T>, EvalTrace), CompileError> {
    let (outs, trace) = evaluate(session, hrf, input)?;
    let scores = outs
        .iter()
        .map(|c| session.decrypt(c).map(|v| v[0]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CompileError::at("decrypt"))?;
    Ok((scores, trace))
}

#[cfg(test)]
mod tests;
