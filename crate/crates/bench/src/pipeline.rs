//! train -> convert -> fine-tune -> compile -> evaluate (reference, ckks),
//! persisting every intermediate model and a metrics report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hrf_ckks::{CkksEngine, CkksHandle};
use hrf_core::compiler::{self, complexity_report, depth_requirement, evaluate, pack_input, StageCounts};
use hrf_core::forest::{argmax, forest_to_json, train_forest};
use hrf_core::nrf::{finetune_last_layer, nrf_to_json, Activation};
use hrf_core::poly::fit_tanh;
use hrf_core::{BackendKind, Dataset, EngineParams, Forest, HrfModel, NrfModel, ReferenceEngine, Session};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::data::{load_csv, prepare, Prepared};
use crate::error::BenchError;
use crate::logistic;
use crate::metrics::{agreement, classification_metrics, ClassMetrics};
use crate::synthetic;

/// File names inside the output directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }
    pub fn preprocessor(&self) -> PathBuf {
        self.path("preprocessor.json")
    }
    pub fn forest(&self) -> PathBuf {
        self.path("forest.json")
    }
    pub fn nrf(&self) -> PathBuf {
        self.path("nrf.json")
    }
    pub fn nrf_finetuned(&self) -> PathBuf {
        self.path("nrf_finetuned.json")
    }
    pub fn compiled(&self) -> PathBuf {
        self.path("hrf.json")
    }
    pub fn layout(&self) -> PathBuf {
        self.path("layout.json")
    }
    pub fn secret_key(&self) -> PathBuf {
        self.path("secret.key")
    }
    pub fn eval_keys(&self) -> PathBuf {
        self.path("eval.key")
    }
    pub fn inputs(&self) -> PathBuf {
        self.path("inputs.ct")
    }
    pub fn outputs(&self) -> PathBuf {
        self.path("outputs.ct")
    }
    pub fn predictions(&self) -> PathBuf {
        self.path("predictions.json")
    }
    pub fn report_json(&self) -> PathBuf {
        self.path("report.json")
    }
    pub fn report_text(&self) -> PathBuf {
        self.path("report.txt")
    }
}

/// `map_err` adapter tagging an error with the stage it came from.
pub fn fail<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> BenchError {
    move |e| BenchError::stage(stage, e)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>, stage: &'static str) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| BenchError::stage(stage, format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| BenchError::stage(stage, format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path, stage: &'static str) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|e| BenchError::stage(stage, format!("{}: {e}", path.display())))
}

pub fn dataset_name(cfg: &ExperimentConfig) -> String {
    match &cfg.dataset {
        DatasetConfig::Synthetic { rows, seed } => format!("synthetic xor-grid ({rows} rows, seed {seed})"),
        DatasetConfig::Csv { path, .. } => path.display().to_string(),
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Prepared, BenchError> {
    let table = match &cfg.dataset {
        DatasetConfig::Synthetic { rows, seed } => synthetic::generate(*rows, *seed),
        DatasetConfig::Csv { path, schema } => load_csv(path, schema)?,
    };
    prepare(&table, cfg.split.validation_ratio, cfg.split.seed)
}

pub fn train(cfg: &ExperimentConfig, data: &Dataset) -> Result<Forest, BenchError> {
    train_forest(data, &cfg.forest.params(data.n_features()), cfg.forest.seed).map_err(|e| BenchError::stage("train", e))
}

/// The deployed activation: `tanh(a x)` approximated with degree `m`.
pub fn polynomial_activation(cfg: &ExperimentConfig) -> Result<Activation<f64>, BenchError> {
    let poly = fit_tanh(cfg.activation.dilatation, cfg.activation.degree).map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(Activation::Polynomial { poly })
}

/// Exact conversion, normalized and switched to the polynomial activation.
pub fn convert(cfg: &ExperimentConfig, forest: &Forest) -> Result<NrfModel, BenchError> {
    NrfModel::from_forest(forest)
        .and_then(|m| m.normalize())
        .map_err(fail("convert"))?
        .with_activation(polynomial_activation(cfg)?)
        .map_err(fail("convert"))
}

pub fn finetune(cfg: &ExperimentConfig, model: &NrfModel, train: &Dataset) -> Result<(NrfModel, Vec<f64>), BenchError> {
    finetune_last_layer(model, train, &cfg.finetune).map_err(|e| BenchError::stage("finetune", e))
}

pub fn engine_params(cfg: &ExperimentConfig, backend: BackendKind) -> Result<EngineParams, BenchError> {
    cfg.engine.params(backend, depth_requirement(cfg.activation.degree))
}

pub fn compile(cfg: &ExperimentConfig, model: &NrfModel) -> Result<HrfModel, BenchError> {
    compiler::compile(model, &engine_params(cfg, BackendKind::Reference)?).map_err(|e| BenchError::stage("compile", e))
}

pub fn keygen(cfg: &ExperimentConfig, hrf: &HrfModel) -> Result<CkksEngine<f64>, BenchError> {
    let params = engine_params(cfg, BackendKind::Ckks)?;
    CkksEngine::generate(params, cfg.engine.key_seed, Some(&hrf.rotation_steps())).map_err(|e| BenchError::stage("keygen", e))
}

pub fn rows_of(data: &Dataset, count: usize) -> Vec<Vec<f64>> {
    data.features().rows().into_iter().take(count).map(|r| r.to_vec()).collect()
}

/// Class scores of every row on the cleartext reference backend.
pub fn evaluate_reference(hrf: &HrfModel, rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Option<StageCounts>), BenchError> {
    let stage = "evaluate-reference";
    let params = EngineParams::reference(hrf.layout().slots, hrf.depth_requirement()).map_err(fail(stage))?;
    let engine = ReferenceEngine::new(params).map_err(fail(stage))?;
    let desc = hrf.descriptor();
    let mut counts = None;
    let mut scores = Vec::with_capacity(rows.len());
    for x in rows {
        let mut session = Session::new(&engine);
        let input = session.encrypt(&pack_input(&desc, x).map_err(fail(stage))?).map_err(fail(stage))?;
        let (outs, trace) = evaluate(&mut session, hrf, &input).map_err(fail(stage))?;
        counts.get_or_insert(trace.counts);
        scores.push(
            outs.iter()
                .map(|c| session.decrypt(c).map(|v| v[0]))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail(stage))?,
        );
    }
    Ok((scores, counts))
}

pub fn encrypt_rows(engine: &CkksEngine<f64>, hrf: &HrfModel, rows: &[Vec<f64>]) -> Result<Vec<CkksHandle>, BenchError> {
    let desc = hrf.descriptor();
    rows.iter()
        .map(|x| {
            let packed = pack_input(&desc, x).map_err(fail("pack"))?;
            Session::new(engine).encrypt(&packed).map_err(fail("pack"))
        })
        .collect()
}

/// Server side: one output ciphertext per class for every input, flattened.
pub fn evaluate_encrypted(
    engine: &CkksEngine<f64>,
    hrf: &HrfModel,
    inputs: &[CkksHandle],
) -> Result<(Vec<CkksHandle>, Option<StageCounts>), BenchError> {
    let mut outputs = Vec::with_capacity(inputs.len() * hrf.outputs());
    let mut counts = None;
    for (i, input) in inputs.iter().enumerate() {
        let start = Instant::now();
        let mut session = Session::new(engine);
        let (outs, trace) = evaluate(&mut session, hrf, input).map_err(|e| BenchError::stage("eval", e))?;
        log::info!("encrypted inference {}/{} in {:.2?}", i + 1, inputs.len(), start.elapsed());
        counts.get_or_insert(trace.counts);
        outputs.extend(outs);
    }
    Ok((outputs, counts))
}

/// Client side: slot 0 of every output, grouped per input.
pub fn decrypt_scores(
    ctx: &hrf_ckks::CkksContext,
    secret: &hrf_ckks::SecretKey,
    keyset_id: u64,
    outputs: &[CkksHandle],
    classes: usize,
) -> Result<Vec<Vec<f64>>, BenchError> {
    if classes == 0 || outputs.len() % classes != 0 {
        return Err(BenchError::stage("decrypt", format!("{} outputs for {classes} classes", outputs.len())));
    }
    outputs
        .chunks(classes)
        .map(|chunk| {
            chunk
                .iter()
                .map(|h| {
                    if h.engine_id() != keyset_id {
                        return Err(BenchError::stage("decrypt", "ciphertext belongs to another key set"));
                    }
                    Ok(ctx.decode(&ctx.decrypt(h.payload(), secret))[0])
                })
                .collect()
        })
        .collect()
}

pub fn predictions(scores: &[Vec<f64>]) -> Vec<usize> {
    scores.iter().map(|s| argmax(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    pub rows: usize,
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub csv_dataset: bool,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub features: usize,
    pub classes: Vec<String>,
    pub trees: usize,
    pub leaves_per_tree: usize,
    pub slot_count: usize,
    pub depth_requirement: usize,
    pub dilatation: f64,
    pub degree: usize,
    pub activation_max_error: f64,
    pub variants: Vec<VariantRow>,
    pub agreement: BTreeMap<String, f64>,
    pub predicted_op_counts: StageCounts,
    pub measured_op_counts: Option<StageCounts>,
    pub finetune_losses: Vec<f64>,
    pub ckks_rows: usize,
    pub ckks_max_score_error: Option<f64>,
    pub ckks_seconds_per_inference: Option<f64>,
    pub stages: Vec<StageTime>,
    pub artifacts: Vec<PathBuf>,
}

impl MetricsReport {
    pub fn variant(&self, name: &str) -> Option<&VariantRow> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn accuracy(&self, name: &str) -> Option<f64> {
        self.variant(name).map(|v| v.metrics.accuracy)
    }

    /// The report with wall-clock fields cleared, for determinism checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.stages.iter_mut().for_each(|s| s.seconds = 0.0);
        r.ckks_seconds_per_inference = None;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s += &format!("dataset: {}\n", self.dataset);
        s += &format!(
            "rows: {} train / {} validation, {} features, classes {:?}\n",
            self.train_rows, self.validation_rows, self.features, self.classes
        );
        s += &format!(
            "forest: {} trees x {} leaves; activation tanh({} x) ~ degree {} (max error {:.2e}); depth {}; n = {}\n\n",
            self.trees, self.leaves_per_tree, self.dilatation, self.degree, self.activation_max_error,
            self.depth_requirement, self.slot_count
        );
        s += &format!("{:<16} {:>6} {:>9} {:>9} {:>9} {:>9}\n", "model", "rows", "accuracy", "precision", "recall", "f1");
        for v in &self.variants {
            let m = &v.metrics;
            s += &format!(
                "{:<16} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                v.name, v.rows, m.accuracy, m.precision, m.recall, m.f1
            );
        }
        s += "\nagreement\n";
        for (k, v) in &self.agreement {
            s += &format!("  {k:<32} {v:.4}\n");
        }
        s += "\nhomomorphic operations per inference (predicted)\n";
        s += &self.predicted_op_counts.to_string();
        if let Some(m) = &self.measured_op_counts {
            s += &format!("measured counts match: {}\n", m.matches(&self.predicted_op_counts));
        }
        if let Some(e) = self.ckks_max_score_error {
            s += &format!("ckks vs reference max score error: {e:.3e} over {} rows\n", self.ckks_rows);
        }
        if let Some(t) = self.ckks_seconds_per_inference {
            s += &format!("ckks seconds per inference: {t:.2}\n");
        }
        s += "\nstage timings\n";
        for st in &self.stages {
            s += &format!("  {:<20} {:>9.3} s\n", st.stage, st.seconds);
        }
        s
    }
}

struct Timer {
    stages: Vec<StageTime>,
}

impl Timer {
    fn run<R>(&mut self, stage: &str, f: impl FnOnce() -> Result<R, BenchError>) -> Result<R, BenchError> {
        let start = Instant::now();
        let r = f()?;
        self.stages.push(StageTime {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(r)
    }
}

fn row(name: &str, pred: &[usize], truth: &[usize], classes: usize) -> Result<VariantRow, BenchError> {
    Ok(VariantRow {
        name: name.into(),
        rows: pred.len(),
        metrics: classification_metrics(pred, truth, classes)?,
    })
}

fn classify(model: &NrfModel, data: &Dataset, act: &Activation<f64>) -> Result<Vec<usize>, BenchError> {
    data.features()
        .rows()
        .into_iter()
        .map(|r| {
            model
                .forward_row(r, act)
                .map(|s| argmax(&s))
                .map_err(|e| BenchError::stage("evaluate-nrf", e))
        })
        .collect()
}

/// Runs every stage, writing artifacts and the report into the output
/// directory. A failing stage reports the artifacts already written.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    let out = Artifacts::new(&cfg.output.dir);
    let mut written: Vec<PathBuf> = Vec::new();
    let mut result = run_stages(cfg, &out, &mut written);
    if let Err(BenchError::Stage { completed, .. }) = &mut result {
        *completed = written.clone();
    }
    result
}

fn run_stages(cfg: &ExperimentConfig, out: &Artifacts, written: &mut Vec<PathBuf>) -> Result<MetricsReport, BenchError> {
    let mut timer = Timer { stages: Vec::new() };
    let mut save = |path: PathBuf, text: &str, stage: &'static str| -> Result<(), BenchError> {
        write_file(&path, text, stage)?;
        written.push(path);
        Ok(())
    };
    save(out.config(), &cfg.to_json(), "setup")?;

    let data = timer.run("load", || load_data(cfg))?;
    save(
        out.preprocessor(),
        &serde_json::to_string_pretty(&data.preprocessor).expect("serializes"),
        "load",
    )?;
    let classes = data.preprocessor.classes.len();
    let val = &data.validation;
    let truth = val.labels().expect("classification").to_vec();

    let forest = timer.run("train", || train(cfg, &data.train))?;
    save(out.forest(), &forest_to_json(&forest), "train")?;
    let converted = timer.run("convert", || convert(cfg, &forest))?;
    save(out.nrf(), &nrf_to_json(&converted), "convert")?;
    let (tuned, losses) = timer.run("finetune", || finetune(cfg, &converted, &data.train))?;
    save(out.nrf_finetuned(), &nrf_to_json(&tuned), "finetune")?;
    let hrf = timer.run("compile", || compile(cfg, &tuned))?;
    save(out.compiled(), &hrf.to_json(), "compile")?;
    save(out.layout(), &hrf.descriptor().to_json(), "compile")?;

    let mut variants = Vec::new();
    let mut agree = BTreeMap::new();

    let logistic_pred = timer.run("logistic", || {
        let model = logistic::fit(&data.train, &cfg.evaluation.logistic)?;
        Ok(model.predict_all(val))
    })?;
    variants.push(row("linear", &logistic_pred, &truth, classes)?);

    let rf_pred: Vec<usize> = val
        .features()
        .rows()
        .into_iter()
        .map(|r| forest.predict_class(&r.to_vec()).map_err(|e| BenchError::stage("evaluate-rf", e)))
        .collect::<Result<_, _>>()?;
    variants.push(row("rf", &rf_pred, &truth, classes)?);

    let (hard, conv_pred, tanh_pred, tuned_pred) = timer.run("evaluate-nrf", || {
        Ok((
            classify(&converted, val, &Activation::Hard)?,
            classify(&converted, val, converted.activation())?,
            classify(&tuned, val, &Activation::Tanh { dilatation: cfg.activation.dilatation })?,
            classify(&tuned, val, tuned.activation())?,
        ))
    })?;
    variants.push(row("nrf-hard", &hard, &truth, classes)?);
    variants.push(row("nrf-converted", &conv_pred, &truth, classes)?);
    variants.push(row("nrf-tanh", &tanh_pred, &truth, classes)?);
    variants.push(row("nrf-finetuned", &tuned_pred, &truth, classes)?);
    agree.insert("rf/nrf-hard".to_string(), agreement(&rf_pred, &hard)?);

    let rows = rows_of(val, val.rows());
    let (ref_scores, measured) = timer.run("evaluate-reference", || evaluate_reference(&hrf, &rows))?;
    let ref_pred = predictions(&ref_scores);
    variants.push(row("hrf-reference", &ref_pred, &truth, classes)?);
    agree.insert("nrf-finetuned/hrf-reference".to_string(), agreement(&tuned_pred, &ref_pred)?);

    let ckks_rows = cfg.evaluation.ckks_rows.unwrap_or(rows.len()).min(rows.len());
    let mut ckks_error = None;
    let mut ckks_seconds = None;
    if ckks_rows > 0 {
        let engine = timer.run("keygen", || keygen(cfg, &hrf))?;
        let inputs = timer.run("pack", || encrypt_rows(&engine, &hrf, &rows[..ckks_rows]))?;
        let start = Instant::now();
        let (outputs, _) = timer.run("evaluate-ckks", || evaluate_encrypted(&engine, &hrf, &inputs))?;
        ckks_seconds = Some(start.elapsed().as_secs_f64() / ckks_rows as f64);
        let secret = engine.secret().expect("pipeline engine holds the secret");
        let scores = decrypt_scores(engine.context(), secret, engine.keys().id(), &outputs, hrf.outputs())?;
        let ckks_pred = predictions(&scores);
        let err = scores
            .iter()
            .zip(&ref_scores)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        ckks_error = Some(err);
        variants.push(row("hrf-ckks", &ckks_pred, &truth[..ckks_rows], classes)?);
        agree.insert("nrf-tanh/hrf-ckks".to_string(), agreement(&tanh_pred[..ckks_rows], &ckks_pred)?);
        agree.insert("nrf-finetuned/hrf-ckks".to_string(), agreement(&tuned_pred[..ckks_rows], &ckks_pred)?);
        agree.insert("hrf-reference/hrf-ckks".to_string(), agreement(&ref_pred[..ckks_rows], &ckks_pred)?);
    }

    let Activation::Polynomial { poly } = tuned.activation() else {
        unreachable!("convert installs the polynomial activation")
    };
    let mut report = MetricsReport {
        dataset: dataset_name(cfg),
        csv_dataset: matches!(cfg.dataset, DatasetConfig::Csv { .. }),
        train_rows: data.train.rows(),
        validation_rows: val.rows(),
        features: data.train.n_features(),
        classes: data.preprocessor.classes.clone(),
        trees: tuned.tree_count(),
        leaves_per_tree: tuned.leaf_count(),
        slot_count: hrf.layout().slots,
        depth_requirement: hrf.depth_requirement(),
        dilatation: cfg.activation.dilatation,
        degree: cfg.activation.degree,
        activation_max_error: poly.max_error(),
        variants,
        agreement: agree,
        predicted_op_counts: complexity_report(&hrf).counts,
        measured_op_counts: measured,
        finetune_losses: losses,
        ckks_rows,
        ckks_max_score_error: ckks_error,
        ckks_seconds_per_inference: ckks_seconds,
        stages: timer.stages,
        artifacts: Vec::new(),
    };
    written.push(out.report_json());
    written.push(out.report_text());
    report.artifacts = written.clone();
    write_file(&out.report_json(), report.to_json(), "report")?;
    write_file(&out.report_text(), report.to_text(), "report")?;
    Ok(report)
}

/// Threshold checks of `bench --assert`. Returns the failed checks.
pub fn check_thresholds(report: &MetricsReport) -> Vec<String> {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    let acc = |name: &str| report.accuracy(name).unwrap_or(f64::NAN);
    let agree = |k: &str| report.agreement.get(k).copied();
    check(agree("rf/nrf-hard") == Some(1.0), format!("rf/nrf-hard agreement {:?} != 1", agree("rf/nrf-hard")));
    check(
        agree("nrf-finetuned/hrf-reference") == Some(1.0),
        format!("nrf-finetuned/hrf-reference agreement {:?} != 1", agree("nrf-finetuned/hrf-reference")),
    );
    check(
        report.measured_op_counts.as_ref().is_some_and(|m| m.matches(&report.predicted_op_counts)),
        "measured op counts differ from the complexity formulas".into(),
    );
    check(
        acc("nrf-finetuned") >= acc("nrf-converted"),
        format!("fine-tuned accuracy {:.4} < converted {:.4}", acc("nrf-finetuned"), acc("nrf-converted")),
    );
    // the deployed network is the polynomial one; the tanh row is informational
    if let Some(a) = agree("nrf-finetuned/hrf-ckks") {
        check(a >= 0.95, format!("nrf-finetuned/hrf-ckks agreement {a:.4} < 0.95"));
    }
    if report.csv_dataset {
        let (rf, nrf) = (acc("rf"), acc("nrf-finetuned"));
        let linear = acc("linear");
        check((0.78..=0.84).contains(&linear), format!("linear accuracy {linear:.4} outside [0.78, 0.84]"));
        check(rf >= 0.82, format!("rf accuracy {rf:.4} < 0.82"));
        check(nrf >= 0.83, format!("fine-tuned nrf accuracy {nrf:.4} < 0.83"));
        check(nrf >= rf - 0.005, format!("fine-tuned nrf accuracy {nrf:.4} < rf {rf:.4} - 0.005"));
    }
    failures
}
