//! Experiment configuration. A config plus its seeds fully determines a run.

use std::path::{Path, PathBuf};

use hrf_core::forest::{CartParams, ForestParams};
use hrf_core::nrf::FinetuneParams;
use hrf_core::{BackendKind, EngineParams};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::logistic::LogisticParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    /// Whether the file starts with a header row. Without one, columns are
    /// taken positionally from `columns`.
    #[serde(default = "yes")]
    pub header: bool,
    /// Label mapped to class 1, the positive class of precision and recall.
    #[serde(default)]
    pub positive_label: Option<String>,
}

fn yes() -> bool {
    true
}

impl Schema {
    pub fn label(&self) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.kind == ColumnKind::Label)
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Continuous | ColumnKind::Categorical))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(BenchError::Config(format!("schema needs exactly one label column, found {labels}")));
        }
        if self.features().next().is_none() {
            return Err(BenchError::Config("schema has no feature columns".into()));
        }
        let mut names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(BenchError::Config(format!("duplicate column `{}`", w[0])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Bundled XOR-grid generator; no download needed.
    Synthetic { rows: usize, seed: u64 },
    Csv { path: PathBuf, schema: Schema },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic { rows: 5000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub validation_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            validation_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` uses `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 6,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn params(&self, n_features: usize) -> ForestParams {
        let default_split = (n_features as f64).sqrt().ceil() as usize;
        ForestParams {
            n_trees: self.n_trees,
            cart: CartParams {
                max_depth: self.max_depth,
                min_samples_leaf: self.min_samples_leaf,
                features_per_split: Some(self.features_per_split.unwrap_or(default_split).clamp(1, n_features)),
            },
            bootstrap: self.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    /// Sharpness `a` of `tanh(a x)`.
    pub dilatation: f64,
    /// Degree `m` of the Chebyshev approximation.
    pub degree: usize,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            dilatation: 4.0,
            degree: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub slot_count: usize,
    pub scale_bits: u32,
    /// Defaults to the compiled model's depth requirement.
    pub depth_budget: Option<usize>,
    pub key_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            slot_count: 8192,
            scale_bits: 40,
            depth_budget: None,
            key_seed: 1,
        }
    }
}

impl EngineConfig {
    pub fn params(&self, backend: BackendKind, required_depth: usize) -> Result<EngineParams, BenchError> {
        EngineParams::new(
            self.slot_count,
            self.depth_budget.unwrap_or(required_depth),
            self.scale_bits,
            backend,
        )
        .map_err(|e| BenchError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Validation rows evaluated under encryption (each takes seconds);
    /// `None` evaluates all of them, `Some(0)` skips the encrypted backend.
    pub ckks_rows: Option<usize>,
    pub logistic: LogisticParams,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ckks_rows: Some(40),
            logistic: LogisticParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub forest: ForestConfig,
    pub activation: ActivationConfig,
    pub finetune: FinetuneParams,
    pub engine: EngineConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        match &self.dataset {
            DatasetConfig::Synthetic { rows, .. } if *rows < 20 => {
                return bad(format!("synthetic dataset needs at least 20 rows, got {rows}"))
            }
            DatasetConfig::Csv { schema, .. } => schema.validate()?,
            _ => {}
        }
        let r = self.split.validation_ratio;
        if !(r > 0.0 && r < 1.0) {
            return bad(format!("validation_ratio {r} outside (0, 1)"));
        }
        if self.forest.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if !(1..=12).contains(&self.forest.max_depth) {
            return bad(format!("max_depth {} outside 1..=12", self.forest.max_depth));
        }
        if self.forest.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be positive".into());
        }
        if !(self.activation.dilatation > 0.0 && self.activation.dilatation.is_finite()) {
            return bad(format!("dilatation {} must be positive", self.activation.dilatation));
        }
        if !(1..=63).contains(&self.activation.degree) {
            return bad(format!("degree {} outside 1..=63", self.activation.degree));
        }
        let f = &self.finetune;
        if f.batch_size == 0 || !(f.learning_rate >= 0.0) || !(0.0..1.0).contains(&f.label_smoothing) {
            return bad("fine-tuning needs batch_size > 0, learning_rate >= 0 and label_smoothing in [0, 1)".into());
        }
        self.engine.params(BackendKind::Reference, 1)?;
        self.evaluation.logistic.validate()?;
        Ok(())
    }
}
