use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use monoiqa::data::synth::{synth_generate, write_synth_tree, SynthConfig};
use monoiqa::data::{split_all, LoadedDataset, Subset};
use monoiqa::par::Execution;
use monoiqa::train::checkpoint::checkpoint_load_for;
use monoiqa::train::{
    ablate_depth, checkpoint_save, evaluate, load_dataset_dirs, load_training_data, run_splits,
    train as train_model, EvalMode, QualityModel, RawCheckpoint, RunConfigFile, TrainConfig,
};
use monoiqa::verify::{
    check_model_gradients, check_model_transformers, gradient_suite, monotonicity_suite,
    GradientSuiteReport, MonotonicityReport, SAMPLE_RANGE,
};
use monoiqa::{Error, Result};

use crate::{AblateArgs, CheckArgs, EvalArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.mqac";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const SPLIT_FILE: &str = "split.json";

pub enum Outcome {
    Ok,
    /// The command ran to completion and found a property violation.
    Violation,
}

fn emit(doc: &impl Serialize, table: &str) {
    println!(
        "{}",
        serde_json::to_string_pretty(doc).expect("serializable report")
    );
    eprint!("{table}");
}

fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
}

fn run_config(path: Option<&Path>) -> Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::from_json(&read_config_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(RunConfigFile::default()),
    }
}

fn load_data(
    root: &Path,
    dirs: Option<&[PathBuf]>,
    channels: Option<usize>,
) -> Result<Vec<LoadedDataset>> {
    match dirs {
        Some(d) => load_dataset_dirs(root, d, channels, Execution::default()),
        None => load_training_data(root, channels, Execution::default()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn synth(args: SynthArgs) -> Result<Outcome> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => serde_json::from_str(&read_config_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let datasets = synth_generate(&config)?;
    let manifests = write_synth_tree(&args.out, &config, &datasets)?;

    let mut rows = Vec::new();
    let mut table = format!(
        "{:<20}  {:>7}  {:>8}  {:>15}  {:>6}\n",
        "dataset", "samples", "contents", "native range", "higher"
    );
    for m in &manifests {
        let d = &m.descriptor;
        let range = format!("[{}, {}]", d.native_min, d.native_max);
        let _ = writeln!(
            table,
            "{:<20}  {:>7}  {:>8}  {range:>15}  {:>6}",
            d.dataset_id,
            m.len(),
            m.content_ids().len(),
            d.higher_is_better
        );
        rows.push(json!({
            "dataset_id": d.dataset_id,
            "samples": m.len(),
            "contents": m.content_ids().len(),
            "native_min": d.native_min,
            "native_max": d.native_max,
            "higher_is_better": d.higher_is_better,
        }));
    }
    emit(
        &json!({
            "out": args.out,
            "seed": config.seed,
            "channels": config.channels,
            "length": config.length,
            "datasets": rows,
        }),
        &table,
    );
    Ok(Outcome::Ok)
}

pub fn train(args: TrainArgs) -> Result<Outcome> {
    let mut run = run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| run.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let config = &run.train;
    let data = load_data(&args.data, run.datasets.as_deref(), None)?;
    let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
    let split = split_all(&manifests, config.seed, config.proportions)?;
    let channels = data
        .iter()
        .find_map(|d| d.features.first())
        .map(|f| f.rows())
        .ok_or_else(|| Error::Validation("the data tree holds no samples".into()))?;
    let ids: Vec<&str> = data.iter().map(LoadedDataset::dataset_id).collect();
    let model = QualityModel::init(channels, &ids, config)?;
    let outcome = train_model(model, &data, &split, config)?;

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    checkpoint_save(&ckpt, &outcome.model, Some(config))?;
    let log_path = out_dir.join(LOG_FILE);
    write_file(&log_path, outcome.log_json_lines())?;
    write_file(&out_dir.join(RUN_CONFIG_FILE), run.to_json() + "\n")?;
    write_file(
        &out_dir.join(SPLIT_FILE),
        serde_json::to_string_pretty(&split).expect("plain struct") + "\n",
    )?;

    let val = evaluate(
        &outcome.model,
        &data,
        Some(&split),
        Subset::Val,
        EvalMode::Raw,
    )?;
    let table = format!(
        "trained {} epochs, best epoch {}\nvalidation (raw):\n{}",
        outcome.epochs_run,
        outcome
            .best_epoch
            .map_or_else(|| "-".to_string(), |e| e.to_string()),
        val.to_table()
    );
    emit(
        &json!({
            "checkpoint": ckpt,
            "log": log_path,
            "seed": config.seed,
            "epochs_run": outcome.epochs_run,
            "best_epoch": outcome.best_epoch,
            "best_val_weighted_srcc": outcome.best_val_srcc,
            "validation": val,
        }),
        &table,
    );
    Ok(Outcome::Ok)
}

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Raw => "raw",
        EvalMode::Calibrated => "calibrated",
    }
}

pub fn eval(args: EvalArgs) -> Result<Outcome> {
    if args.splits == 0 {
        return Err(Error::Config("--splits must be at least 1".into()));
    }
    let mode: EvalMode = args.mode.into();
    let raw = RawCheckpoint::read(&args.checkpoint)?;
    let stored = raw.header.train_config.clone();
    let run = match &args.config {
        Some(p) => Some(run_config(Some(p))?),
        None => None,
    };
    let mut config: Option<TrainConfig> = run.as_ref().map(|r| r.train.clone()).or(stored);
    if let (Some(seed), Some(c)) = (args.seed, config.as_mut()) {
        c.seed = seed;
    }
    let dirs = run.as_ref().and_then(|r| r.datasets.clone());

    if args.splits == 1 {
        let model = match &args.config {
            Some(_) => {
                checkpoint_load_for(&args.checkpoint, config.as_ref().expect("config given"))?
            }
            None => raw.into_model()?,
        };
        let data = load_data(&args.data, dirs.as_deref(), Some(model.channels()))?;
        let (report, subset) = match &config {
            Some(c) => {
                let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
                let split = split_all(&manifests, c.seed, c.proportions)?;
                (
                    evaluate(&model, &data, Some(&split), Subset::Test, mode)?,
                    "test",
                )
            }
            None => (evaluate(&model, &data, None, Subset::Test, mode)?, "all"),
        };
        let table = format!(
            "{} scores, {subset} samples:\n{}",
            mode_name(mode),
            report.to_table()
        );
        emit(
            &json!({
                "checkpoint": args.checkpoint,
                "mode": mode_name(mode),
                "splits": 1,
                "subset": subset,
                "seed": config.as_ref().map(|c| c.seed),
                "report": report,
            }),
            &table,
        );
        return Ok(Outcome::Ok);
    }

    let config = config.unwrap_or_default();
    let data = load_data(
        &args.data,
        dirs.as_deref(),
        Some(raw.header.regressor.channels),
    )?;
    let runs = run_splits(&data, &config, args.splits, mode)?;
    let mut table = String::new();
    for (seed, r) in runs.seeds.iter().zip(&runs.reports) {
        let _ = writeln!(
            table,
            "split seed {seed}: weighted SRCC {:.4}  PLCC {:.4}",
            r.weighted_srcc, r.weighted_plcc
        );
    }
    let _ = write!(
        table,
        "median over {} splits ({} scores, test samples):\n{}",
        args.splits,
        mode_name(mode),
        runs.median.to_table()
    );
    emit(
        &json!({
            "mode": mode_name(mode),
            "splits": args.splits,
            "subset": "test",
            "seeds": runs.seeds,
            "reports": runs.reports,
            "median": runs.median,
        }),
        &table,
    );
    Ok(Outcome::Ok)
}

fn check_table(mono: &MonotonicityReport, grads: &GradientSuiteReport) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "monotonicity: {} transformers x {} inputs, {} violations, min gap {:.3e}, min dT/dx {:.3e}, min weight {:.3e}",
        mono.transformers,
        mono.inputs_per_transformer,
        mono.violations.len(),
        mono.min_gap,
        mono.min_input_grad,
        mono.min_effective_weight
    );
    for v in &mono.violations {
        let _ = writeln!(
            t,
            "  violation in {}: T({}) = {}, T({}) = {}",
            v.transformer, v.x[0], v.y[0], v.x[1], v.y[1]
        );
    }
    let _ = writeln!(
        t,
        "gradients: {} cases, {} failing, max rel. error {:.3e}",
        grads.cases.len(),
        grads.failures().count(),
        grads.max_rel_error()
    );
    for c in grads.failures() {
        let _ = writeln!(
            t,
            "  failing {}: rel. error {:.3e} (analytic {}, numeric {})",
            c.name, c.report.max_rel_error, c.report.worst_analytic, c.report.worst_numeric
        );
    }
    t
}

#[derive(Serialize)]
struct CheckDoc<'a> {
    target: serde_json::Value,
    passed: bool,
    monotonicity: &'a MonotonicityReport,
    gradients: GradientSummary<'a>,
}

#[derive(Serialize)]
struct GradientSummary<'a> {
    cases: usize,
    max_rel_error: f64,
    failures: Vec<&'a monoiqa::verify::GradientCase>,
}

pub fn check(args: CheckArgs) -> Result<Outcome> {
    let exec = Execution::default();
    let (target, mono, grads) = match (&args.target.checkpoint, args.target.random) {
        (Some(path), _) => {
            let raw = RawCheckpoint::read(path)?;
            let bad = raw.constrained_weight_violations();
            if !bad.is_empty() {
                let mut table = format!(
                    "{}: {} constrained weights below the positivity floor\n",
                    path.display(),
                    bad.len()
                );
                for v in &bad {
                    let _ = writeln!(table, "  {} = {}", v.location, v.value);
                }
                emit(
                    &json!({
                        "target": {"checkpoint": path},
                        "passed": false,
                        "weight_violations": bad,
                    }),
                    &table,
                );
                return Ok(Outcome::Violation);
            }
            let model = raw.into_model()?;
            let mono = check_model_transformers(&model, args.inputs, SAMPLE_RANGE, args.seed)?;
            let grads = check_model_gradients(&model, args.trials, args.seed)?;
            (json!({"checkpoint": path}), mono, grads)
        }
        (None, Some(k)) => {
            if k == 0 {
                return Err(Error::Config(
                    "--random needs at least one transformer".into(),
                ));
            }
            let mono = monotonicity_suite(exec, &args.depths, k, args.inputs, args.seed)?;
            let grads = gradient_suite(exec, args.trials, args.seed)?;
            (
                json!({"random": k, "depths": args.depths, "seed": args.seed}),
                mono,
                grads,
            )
        }
        (None, None) => unreachable!("clap requires one target"),
    };
    let passed = mono.passed() && grads.passed();
    let doc = CheckDoc {
        target,
        passed,
        monotonicity: &mono,
        gradients: GradientSummary {
            cases: grads.cases.len(),
            max_rel_error: grads.max_rel_error(),
            failures: grads.failures().collect(),
        },
    };
    emit(&doc, &check_table(&mono, &grads));
    Ok(if passed {
        Outcome::Ok
    } else {
        Outcome::Violation
    })
}

pub fn ablate(args: AblateArgs) -> Result<Outcome> {
    let mut run = run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    run.train.allow_any_depth |= args.allow_any_depth;
    let config = &run.train;
    // Reject bad depths before touching the data.
    for &d in &args.depths {
        TrainConfig {
            cfcl_depth: d,
            transformer_widths: None,
            ..config.clone()
        }
        .validate()?;
    }
    let data = load_data(&args.data, run.datasets.as_deref(), None)?;
    let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
    let split = split_all(&manifests, config.seed, config.proportions)?;
    let table = ablate_depth(&data, &split, config, &args.depths)?;
    emit(
        &json!({
            "seed": config.seed,
            "subset": "test",
            "rows": table.to_json(),
        }),
        &table.to_table(),
    );
    Ok(Outcome::Ok)
}
