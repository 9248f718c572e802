//! Packing of a normalized converted forest into slot vectors and its
//! homomorphic evaluation.
//!
//! Every tree owns a block of `2K - 1` slots. The client fills it with
//! `(x_tau | 0 | x_tau)`, so that rotating by `i < K` exposes the cyclic
//! window `z[(j + i) mod K]` at block position `j`. The matching matrix is
//! padded with a zero column to `K x K` and stored by generalized diagonals,
//! one slot vector per diagonal covering all trees at once.

mod eval;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineParams, SlotVector};
use crate::error::{CompileError, ModelError};
use crate::forest::Task;
use crate::nrf::{Activation, NrfModel};
use crate::poly::{ceil_log2, ChebyshevPoly};
use crate::scalar::Scalar;

pub use eval::{
    complexity_report, dot_product, evaluate, evaluate_probed, evaluate_trusted, packed_matmul, ComplexityReport,
    EvalTrace, Stage, StageCounts,
};

pub const COMPILED_FORMAT: &str = "hrf-compiled";
pub const COMPILED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingLayout {
    pub trees: usize,
    pub leaves: usize,
    pub slots: usize,
}

impl PackingLayout {
    pub fn new(trees: usize, leaves: usize, slots: usize) -> Result<Self, CompileError> {
        let layout = Self { trees, leaves, slots };
        layout.check()?;
        Ok(layout)
    }

    pub fn block_width(&self) -> usize {
        2 * self.leaves - 1
    }

    pub fn offset(&self, tree: usize) -> usize {
        tree * self.block_width()
    }

    /// `L (2K - 1)`.
    pub fn active_width(&self) -> usize {
        self.trees * self.block_width()
    }

    pub fn check(&self) -> Result<(), CompileError> {
        if self.trees == 0 || self.leaves == 0 {
            return Err(CompileError::LayoutMismatch("layout needs at least one tree and one leaf".into()));
        }
        let needed = self.active_width();
        if needed > self.slots {
            let max_trees = self.slots / self.block_width();
            let mut k = self.leaves;
            while k > 1 && self.trees * (2 * k - 1) > self.slots {
                k /= 2;
            }
            let mut slots = self.slots;
            while slots < needed {
                slots *= 2;
            }
            return Err(CompileError::LayoutOverflow {
                trees: self.trees,
                width: self.block_width(),
                needed,
                slots: self.slots,
                suggestion: format!(
                    "use at most {max_trees} trees, or at most {k} leaves per tree, or {slots} slots (ring degree {})",
                    2 * slots
                ),
            });
        }
        Ok(())
    }
}

/// What the client needs to pack an input: the comparison features of each
/// tree, nothing about thresholds or weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDescriptor {
    #[serde(rename = "L")]
    pub trees: usize,
    #[serde(rename = "K")]
    pub leaves: usize,
    #[serde(rename = "d")]
    pub n_features: usize,
    pub tau: Vec<Vec<usize>>,
    pub block_width: usize,
    pub n: usize,
}

impl LayoutDescriptor {
    pub fn layout(&self) -> Result<PackingLayout, CompileError> {
        let layout = PackingLayout::new(self.trees, self.leaves, self.n)?;
        if self.block_width != layout.block_width() || self.tau.len() != self.trees {
            return Err(CompileError::LayoutMismatch("descriptor fields disagree".into()));
        }
        for (l, t) in self.tau.iter().enumerate() {
            if t.len() + 1 != self.leaves || t.iter().any(|&f| f >= self.n_features) {
                return Err(CompileError::LayoutMismatch(format!("tau[{l}] does not match K or d")));
            }
        }
        Ok(layout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let d: Self = serde_json::from_str(text).map_err(ModelError::from)?;
        d.layout()?;
        Ok(d)
    }
}

/// Client-side packing: per tree `(x_tau | 0 | x_tau)`, blocks concatenated
/// and zero-padded to `n`.
pub fn pack_input<T: Scalar>(desc: &LayoutDescriptor, x: &[T]) -> Result<SlotVector<T>, CompileError> {
    let layout = desc.layout()?;
    if x.len() != desc.n_features {
        return Err(ModelError::Dimension {
            expected: desc.n_features,
            actual: x.len(),
        }
        .into());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Range("input has non-finite entries".into()).into());
    }
    let mut out = vec![T::zero(); layout.slots];
    for (l, tau) in desc.tau.iter().enumerate() {
        write_replicated(&mut out, &layout, l, tau.iter().map(|&f| x[f]));
    }
    Ok(out.into())
}

fn write_replicated<T: Scalar>(out: &mut [T], layout: &PackingLayout, tree: usize, values: impl Iterator<Item = T>) {
    let off = layout.offset(tree);
    let k = layout.leaves;
    for (j, v) in values.enumerate() {
        out[off + j] = v;
        out[off + k + j] = v;
    }
}

/// Server-side artifacts of a compiled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrfModel<T> {
    pub(crate) layout: PackingLayout,
    pub(crate) n_features: usize,
    pub(crate) task: Task,
    pub(crate) tau: Vec<Vec<usize>>,
    /// `(t | 0 | t)` per tree.
    pub(crate) thresholds: SlotVector<T>,
    /// `(b | 0...0)` per tree.
    pub(crate) bias: SlotVector<T>,
    /// `diagonals[i][off + j] = V_sq[j, (j + i) mod K]` for `j < K`.
    pub(crate) diagonals: Vec<SlotVector<T>>,
    /// `(alpha_l W_c | 0...0)` per tree, one vector per class.
    pub(crate) class_weights: Vec<SlotVector<T>>,
    /// `sum_l alpha_l beta_c`.
    pub(crate) class_bias: Vec<T>,
    pub(crate) activation: ChebyshevPoly<T>,
    pub(crate) depth_requirement: usize,
}

/// `2 (ceil(log2 m) + 1) + 2`: two activations plus the two plaintext products.
pub fn depth_requirement(degree: usize) -> usize {
    2 * (ceil_log2(degree) + 1) + 2
}

/// Builds the packed plaintexts of `model` for an engine with `params`.
pub fn compile<T: Scalar>(model: &NrfModel<T>, params: &EngineParams) -> Result<HrfModel<T>, CompileError> {
    if !model.is_normalized() {
        return Err(ModelError::Range("compile requires a normalized model".into()).into());
    }
    let Activation::Polynomial { poly } = model.activation() else {
        return Err(ModelError::Range("compile requires a polynomial activation".into()).into());
    };
    let k = model.leaf_count();
    if model.networks().iter().any(|n| n.leaf_count() != k) {
        return Err(CompileError::LayoutMismatch("trees are not padded to a shared K".into()));
    }
    let layout = PackingLayout::new(model.tree_count(), k, params.slot_count)?;
    let required = depth_requirement(poly.degree());
    if required > params.depth_budget {
        let mut m = poly.degree();
        while m > 1 && depth_requirement(m) > params.depth_budget {
            m = (1usize << ceil_log2(m).saturating_sub(1)).max(1);
        }
        return Err(CompileError::DepthOverflow {
            required,
            budget: params.depth_budget,
            suggestion: format!(
                "raise depth_budget to {required}, or use degree m <= {m} (requirement {})",
                depth_requirement(m)
            ),
        });
    }

    let n = layout.slots;
    let c = model.outputs();
    let mut thresholds = vec![T::zero(); n];
    let mut bias = vec![T::zero(); n];
    let mut diagonals = vec![vec![T::zero(); n]; k];
    let mut class_weights = vec![vec![T::zero(); n]; c];
    let mut class_bias = vec![T::zero(); c];
    for (l, (net, &alpha)) in model.networks().iter().zip(model.weights()).enumerate() {
        let off = layout.offset(l);
        write_replicated(&mut thresholds, &layout, l, net.thresholds().iter().copied());
        for j in 0..k {
            bias[off + j] = net.bias()[j];
        }
        // square padding: column K-1 of V is zero
        let v = net.matching();
        for (i, diag) in diagonals.iter_mut().enumerate() {
            for j in 0..k {
                let col = (j + i) % k;
                if col < k - 1 {
                    diag[off + j] = v[[j, col]];
                }
            }
        }
        for (cls, w) in class_weights.iter_mut().enumerate() {
            for j in 0..k {
                w[off + j] = alpha * net.output_weights()[[cls, j]];
            }
            class_bias[cls] += alpha * net.output_bias()[cls];
        }
    }
    Ok(HrfModel {
        layout,
        n_features: model.n_features(),
        task: model.task(),
        tau: model.networks().iter().map(|n| n.tau().to_vec()).collect(),
        thresholds: thresholds.into(),
        bias: bias.into(),
        diagonals: diagonals.into_iter().map(SlotVector::from).collect(),
        class_weights: class_weights.into_iter().map(SlotVector::from).collect(),
        class_bias,
        activation: poly.clone(),
        depth_requirement: required,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompiledDoc<T> {
    format: String,
    version: u32,
    model: HrfModel<T>,
}

impl<T: Scalar> HrfModel<T> {
    pub fn layout(&self) -> &PackingLayout {
        &self.layout
    }

    pub fn descriptor(&self) -> LayoutDescriptor {
        LayoutDescriptor {
            trees: self.layout.trees,
            leaves: self.layout.leaves,
            n_features: self.n_features,
            tau: self.tau.clone(),
            block_width: self.layout.block_width(),
            n: self.layout.slots,
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn outputs(&self) -> usize {
        self.class_bias.len()
    }

    pub fn activation(&self) -> &ChebyshevPoly<T> {
        &self.activation
    }

    pub fn depth_requirement(&self) -> usize {
        self.depth_requirement
    }

    /// Every rotation step `evaluate` issues: 1 for the matching layer and
    /// the powers of two of the rotate-and-add reductions.
    pub fn rotation_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..ceil_log2(self.layout.active_width())).map(|i| 1 << i).collect();
        if steps.is_empty() {
            steps.push(1);
        }
        steps
    }

    pub fn thresholds(&self) -> &SlotVector<T> {
        &self.thresholds
    }

    pub fn bias(&self) -> &SlotVector<T> {
        &self.bias
    }

    pub fn diagonals(&self) -> &[SlotVector<T>] {
        &self.diagonals
    }

    pub fn class_weights(&self) -> &[SlotVector<T>] {
        &self.class_weights
    }

    pub fn class_weights_mut(&mut self) -> &mut [SlotVector<T>] {
        &mut self.class_weights
    }

    pub fn class_bias(&self) -> &[T] {
        &self.class_bias
    }

    pub fn to_json(&self) -> String {
        let doc = CompiledDoc {
            format: COMPILED_FORMAT.into(),
            version: COMPILED_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&doc).expect("compiled model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let doc: CompiledDoc<T> = serde_json::from_str(text).map_err(ModelError::from)?;
        if doc.format != COMPILED_FORMAT || doc.version != COMPILED_VERSION {
            return Err(ModelError::field("format", format!("expected `{COMPILED_FORMAT}` version {COMPILED_VERSION}")).into());
        }
        let m = doc.model;
        m.layout.check()?;
        let n = m.layout.slots;
        let lens_ok = m.thresholds.len() == n
            && m.bias.len() == n
            && m.diagonals.len() == m.layout.leaves
            && m.diagonals.iter().chain(&m.class_weights).all(|d| d.len() == n)
            && m.class_weights.len() == m.class_bias.len()
            && m.class_bias.len() == m.task.outputs()
            && m.depth_requirement == depth_requirement(m.activation.degree());
        if !lens_ok {
            return Err(CompileError::LayoutMismatch("compiled model vectors disagree with its layout".into()));
        }
        m.descriptor().layout()?;
        Ok(m)
    }
}
