use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hrf_bench::config::DatasetConfig;
use hrf_bench::error::BenchError;
use hrf_bench::metrics::classification_metrics;
use hrf_bench::pipeline::{self as pl, fail, read_file, write_file, Artifacts, MetricsReport};
use hrf_bench::ExperimentConfig;
use hrf_ckks::serial;
use hrf_ckks::CkksEngine;
use hrf_core::compiler::{complexity_report, LayoutDescriptor};
use hrf_core::forest::{forest_from_json, forest_to_json};
use hrf_core::nrf::{nrf_from_json, nrf_to_json};
use hrf_core::HrfModel;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hrf", about = "Random forests evaluated under homomorphic encryption")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Row count of the synthetic dataset.
    #[arg(long)]
    synthetic_rows: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Degree of the activation polynomial.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    key_seed: Option<u64>,
    /// Validation rows evaluated under encryption.
    #[arg(long)]
    ckks_rows: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, BenchError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        if let Some(n) = self.synthetic_rows {
            match &mut cfg.dataset {
                DatasetConfig::Synthetic { rows, .. } => *rows = n,
                DatasetConfig::Csv { .. } => {
                    return Err(BenchError::Config("--synthetic-rows needs a synthetic dataset".into()))
                }
            }
        }
        if let Some(v) = self.trees {
            cfg.forest.n_trees = v;
        }
        if let Some(v) = self.max_depth {
            cfg.forest.max_depth = v;
        }
        if let Some(v) = self.degree {
            cfg.activation.degree = v;
        }
        if let Some(v) = self.epochs {
            cfg.finetune.epochs = v;
        }
        if let Some(v) = self.slots {
            cfg.engine.slot_count = v;
        }
        if let Some(v) = self.key_seed {
            cfg.engine.key_seed = v;
        }
        if self.ckks_rows.is_some() {
            cfg.evaluation.ckks_rows = self.ckks_rows;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the forest: writes forest.json and preprocessor.json.
    Train(Common),
    /// Exact network conversion with the polynomial activation: nrf.json.
    Convert(Common),
    /// Fine-tune the output layer: nrf_finetuned.json.
    Finetune(Common),
    /// Compile for the packed evaluator: hrf.json and layout.json.
    Compile(Common),
    /// Client keys: secret.key (keep) and eval.key (send to the server).
    Keygen(Common),
    /// Client: encrypt validation rows into inputs.ct.
    Pack {
        #[command(flatten)]
        common: Common,
        /// Number of validation rows (default: the config's ckks_rows).
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Server: evaluate inputs.ct into outputs.ct.
    Eval(Common),
    /// Client: decrypt outputs.ct into predictions.json.
    Decrypt(Common),
    /// Run the whole pipeline and write report.json and report.txt.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Exit with code 3 when a threshold check fails.
        #[arg(long)]
        assert: bool,
    },
    /// Print a saved report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
}

fn open(path: &Path, stage: &'static str) -> Result<BufReader<File>, BenchError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| BenchError::stage(stage, format!("{}: {e}", path.display())))
}

fn create(path: &Path, stage: &'static str) -> Result<BufWriter<File>, BenchError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(fail(stage))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| BenchError::stage(stage, format!("{}: {e}", path.display())))
}

fn load_compiled(out: &Artifacts, stage: &'static str) -> Result<HrfModel, BenchError> {
    HrfModel::from_json(&read_file(&out.compiled(), stage)?).map_err(fail(stage))
}

fn server_engine(out: &Artifacts, seed: u64, stage: &'static str) -> Result<CkksEngine<f64>, BenchError> {
    let (ctx, keys) = serial::read_evaluation_keys(open(&out.eval_keys(), stage)?, None).map_err(fail(stage))?;
    Ok(CkksEngine::from_parts(ctx, Arc::new(keys), None, seed))
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let data = pl::load_data(&cfg)?;
            let forest = pl::train(&cfg, &data.train)?;
            write_file(&out.config(), cfg.to_json(), "train")?;
            write_file(
                &out.preprocessor(),
                serde_json::to_string_pretty(&data.preprocessor).expect("serializes"),
                "train",
            )?;
            write_file(&out.forest(), forest_to_json(&forest), "train")?;
            println!("{} trees, {} leaves max -> {}", forest.trees().len(), forest.max_leaves(), out.forest().display());
        }
        Command::Convert(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let forest = forest_from_json(&read_file(&out.forest(), "convert")?).map_err(fail("convert"))?;
            let nrf = pl::convert(&cfg, &forest)?;
            write_file(&out.nrf(), nrf_to_json(&nrf), "convert")?;
            println!("{} trees x {} leaves -> {}", nrf.tree_count(), nrf.leaf_count(), out.nrf().display());
        }
        Command::Finetune(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let nrf = nrf_from_json(&read_file(&out.nrf(), "finetune")?).map_err(fail("finetune"))?;
            let data = pl::load_data(&cfg)?;
            let (tuned, losses) = pl::finetune(&cfg, &nrf, &data.train)?;
            write_file(&out.nrf_finetuned(), nrf_to_json(&tuned), "finetune")?;
            println!("epoch losses {losses:.4?} -> {}", out.nrf_finetuned().display());
        }
        Command::Compile(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let nrf = nrf_from_json(&read_file(&out.nrf_finetuned(), "compile")?).map_err(fail("compile"))?;
            let hrf = pl::compile(&cfg, &nrf)?;
            write_file(&out.compiled(), hrf.to_json(), "compile")?;
            write_file(&out.layout(), hrf.descriptor().to_json(), "compile")?;
            println!("{}", complexity_report(&hrf));
        }
        Command::Keygen(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let hrf = load_compiled(&out, "keygen")?;
            let engine = pl::keygen(&cfg, &hrf)?;
            let secret = engine.secret().expect("fresh keys hold the secret");
            serial::write_secret_key(create(&out.secret_key(), "keygen")?, engine.context(), engine.keys().id(), secret)
                .map_err(fail("keygen"))?;
            serial::write_evaluation_keys(create(&out.eval_keys(), "keygen")?, engine.context(), engine.keys())
                .map_err(fail("keygen"))?;
            println!(
                "rotation steps {:?} -> {}, {}",
                engine.keys().rotation_steps(),
                out.secret_key().display(),
                out.eval_keys().display()
            );
        }
        Command::Pack { common, rows } => {
            let cfg = common.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let desc = LayoutDescriptor::from_json(&read_file(&out.layout(), "pack")?).map_err(fail("pack"))?;
            let data = pl::load_data(&cfg)?;
            let count = rows.or(cfg.evaluation.ckks_rows).unwrap_or(data.validation.rows());
            let engine = server_engine(&out, cfg.engine.key_seed.wrapping_add(1), "pack")?;
            let handles = pl::rows_of(&data.validation, count)
                .iter()
                .map(|x| {
                    let packed = hrf_core::compiler::pack_input(&desc, x).map_err(fail("pack"))?;
                    hrf_core::Session::new(&engine).encrypt(&packed).map_err(fail("pack"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            serial::write_ciphertexts(create(&out.inputs(), "pack")?, engine.context(), &handles).map_err(fail("pack"))?;
            println!("{} encrypted rows -> {}", handles.len(), out.inputs().display());
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let hrf = load_compiled(&out, "eval")?;
            let engine = server_engine(&out, 0, "eval")?;
            let inputs = serial::read_ciphertexts(open(&out.inputs(), "eval")?, engine.context()).map_err(fail("eval"))?;
            let (outputs, counts) = pl::evaluate_encrypted(&engine, &hrf, &inputs)?;
            serial::write_ciphertexts(create(&out.outputs(), "eval")?, engine.context(), &outputs).map_err(fail("eval"))?;
            if let Some(c) = counts {
                print!("{c}");
            }
            println!("{} encrypted scores -> {}", outputs.len(), out.outputs().display());
        }
        Command::Decrypt(c) => {
            let cfg = c.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let (ctx, id, secret) = serial::read_secret_key(open(&out.secret_key(), "decrypt")?).map_err(fail("decrypt"))?;
            let outputs = serial::read_ciphertexts(open(&out.outputs(), "decrypt")?, &ctx).map_err(fail("decrypt"))?;
            let data = pl::load_data(&cfg)?;
            let classes = &data.preprocessor.classes;
            let scores = pl::decrypt_scores(&ctx, &secret, id, &outputs, classes.len())?;
            let predicted = pl::predictions(&scores);
            let truth = &data.validation.labels().expect("classification")[..predicted.len().min(data.validation.rows())];
            let metrics = if truth.len() == predicted.len() {
                Some(classification_metrics(&predicted, truth, classes.len())?)
            } else {
                None
            };
            let doc = json!({
                "classes": classes,
                "scores": scores,
                "predicted": predicted.iter().map(|&p| &classes[p]).collect::<Vec<_>>(),
                "metrics": metrics,
            });
            write_file(&out.predictions(), serde_json::to_string_pretty(&doc).expect("serializes"), "decrypt")?;
            if let Some(m) = metrics {
                println!("accuracy {:.4} over {} rows", m.accuracy, predicted.len());
            }
            println!("predictions -> {}", out.predictions().display());
        }
        Command::Bench { common, assert } => {
            let cfg = common.load()?;
            let report = pl::run_pipeline(&cfg)?;
            print!("{}", report.to_text());
            if assert {
                let failures = pl::check_thresholds(&report);
                if !failures.is_empty() {
                    return Err(BenchError::Assert(failures));
                }
                println!("all threshold checks passed");
            }
        }
        Command::Report { common, json } => {
            let cfg = common.load()?;
            let out = Artifacts::new(&cfg.output.dir);
            let text = read_file(&out.report_json(), "report")?;
            if json {
                println!("{text}");
            } else {
                let report: MetricsReport = serde_json::from_str(&text).map_err(fail("report"))?;
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
