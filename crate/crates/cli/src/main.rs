use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use calibkit::binning::{reliability_diagram, BinRecord};
use calibkit::harness::{evaluate_with_truth, fit_on_test_ece, FittedMap, GroundTruthMethod};
use calibkit::synth::Derivate;
use calibkit::{
    estimate_ground_truth, generate_dataset, run_benchmark, solve_mixing, BenchConfig, BinaryDataset, CalibError,
    CalibrationMap, EvaluatorSpec, LossKind, Reduction, Shape,
};

mod input;

use input::{read_predictions, PredictionFile};

/// Grid size for continuous-map diagrams.
const DIAGRAM_GRID: usize = 512;

#[derive(Parser)]
#[command(name = "calibkit", version, about = "Calibration evaluation and post-hoc calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known calibration map.
    Synth(SynthArgs),
    /// Estimate calibration error with a fit-on-the-test evaluator.
    Eval(EvalArgs),
    /// Export plot-ready reliability diagram data.
    Diagram(DiagramArgs),
    /// Fit a calibration map and save it as JSON.
    Fit(FitArgs),
    /// Apply a saved calibration map to a prediction file.
    Apply(ApplyArgs),
    /// Run a synthetic benchmark described by a JSON config.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    shape: Shape,
    #[arg(long)]
    target_ce: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MethodArgs {
    /// Evaluator tag, e.g. es, es:15, ew_cv, pl, pl3, platt, beta, isotonic, temperature.
    #[arg(long)]
    method: String,
    /// Bin count for `es` / `ew`.
    #[arg(long)]
    bins: Option<usize>,
    /// Fitting loss for `pl`, `pl3`, `es_cv` and `ew_cv`.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Required for multi-class files: `confidence` or `ovr:<k>`.
    #[arg(long)]
    reduce: Option<Reduction>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Holdout file for ground-truth estimation, or `none`. Defaults to the `c_star` column when present.
    #[arg(long)]
    ground_truth: Option<String>,
    /// Estimator applied to a holdout file.
    #[arg(long, default_value = "isotonic")]
    gt_method: GroundTruthMethod,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagramArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also calibrate this file with the fitted map.
    #[arg(long)]
    apply: Option<PathBuf>,
    /// Destination for `--apply` output (defaults to standard output).
    #[arg(long)]
    apply_out: Option<PathBuf>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// Data or domain error; exit code 1.
    Data(String),
}

impl From<CalibError> for Failure {
    fn from(e: CalibError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::Data(e.to_string()))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

impl MethodArgs {
    fn spec(&self) -> Result<EvaluatorSpec, Failure> {
        let base = self.method.trim().to_ascii_lowercase();
        let tag = if base.contains(':') {
            base
        } else {
            match base.as_str() {
                "es" | "ew" => format!("{base}:{}", self.bins.unwrap_or(15)),
                "pl" | "pl3" | "es_cv" | "ew_cv" => match self.loss {
                    Some(loss) => format!("{base}:{}", loss.tag()),
                    None => base,
                },
                _ => base,
            }
        };
        tag.parse().map_err(|e: CalibError| Failure::Usage(e.to_string()))
    }
}

fn labelled(file: PredictionFile, path: &Path) -> Result<(BinaryDataset, Option<Vec<f64>>), Failure> {
    let dataset = file
        .dataset
        .ok_or_else(|| Failure::Data(format!("{}: labels are required", path.display())))?;
    Ok((dataset, file.c_star))
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let lambda = solve_mixing(args.shape, args.target_ce)?;
    let synth = generate_dataset(args.shape, lambda, args.n, args.seed)?;
    let mut buf = Vec::new();
    synth.write_csv(&mut buf).map_err(|e| io_error(&args.out, e))?;
    fs::write(&args.out, buf).map_err(|e| io_error(&args.out, e))?;
    let summary = serde_json::json!({
        "shape": args.shape,
        "target_ce": args.target_ce,
        "lambda": lambda,
        "analytic_ce": Derivate::new(args.shape, lambda)?.calibration_error(),
        "n": args.n,
        "seed": args.seed,
    });
    write_output(None, &to_json(&summary))
}

#[derive(Serialize)]
struct EvalOutput {
    method: String,
    n: usize,
    alpha: f64,
    ece_fit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ece_debiased: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chosen_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ece_true: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cmee_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cmee_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    abs_ece_err: Option<f64>,
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let spec = args.method.spec()?;
    let file = read_predictions(&args.input.input, args.input.reduce, true)?;
    let (test, c_star) = labelled(file, &args.input.input)?;
    let truth = match args.ground_truth.as_deref() {
        Some("none") => None,
        Some(path) => {
            let path = Path::new(path);
            let (holdout, _) = labelled(read_predictions(path, args.input.reduce, true)?, path)?;
            let gt = estimate_ground_truth(&holdout, args.gt_method)?;
            Some(gt.apply_all(test.predictions()))
        }
        None => c_star,
    };
    let seed = args.method.seed;
    let output = match truth {
        Some(truth) => {
            let row = evaluate_with_truth(&spec, &test, test.predictions(), &truth, args.alpha, seed)?;
            EvalOutput {
                method: row.evaluator,
                n: test.len(),
                alpha: args.alpha,
                ece_fit: row.ece_fit,
                ece_debiased: row.ece_debiased,
                chosen_b: row.chosen_b,
                ece_true: Some(row.ece_true),
                cmee_abs: Some(row.cmee_abs),
                cmee_sq: Some(row.cmee_sq),
                abs_ece_err: Some(row.abs_ece_err),
            }
        }
        None => {
            let fit = fit_on_test_ece(&spec, &test, args.alpha, seed)?;
            EvalOutput {
                method: spec.to_string(),
                n: test.len(),
                alpha: args.alpha,
                ece_fit: fit.ece_fit,
                ece_debiased: fit.ece_debiased,
                chosen_b: fit.chosen_b,
                ece_true: None,
                cmee_abs: None,
                cmee_sq: None,
                abs_ece_err: None,
            }
        }
    };
    write_output(args.out.as_deref(), &to_json(&output))
}

#[derive(Serialize)]
struct GridPoint {
    x: f64,
    c_hat: f64,
}

fn cmd_diagram(args: &DiagramArgs) -> Result<(), Failure> {
    let spec = args.method.spec()?;
    let (test, _) = labelled(read_predictions(&args.input.input, args.input.reduce, true)?, &args.input.input)?;
    let fit = fit_on_test_ece(&spec, &test, 1.0, args.method.seed)?;
    let text = match &fit.map {
        FittedMap::Binned(map) => {
            let records: Vec<BinRecord> = reliability_diagram(&test, map.binning()).records();
            to_json(&records)
        }
        map => {
            let grid: Vec<GridPoint> = (0..DIAGRAM_GRID)
                .map(|i| {
                    let x = i as f64 / (DIAGRAM_GRID - 1) as f64;
                    GridPoint { x, c_hat: map.apply(x) }
                })
                .collect();
            to_json(&grid)
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn apply_map(map: &FittedMap, input: &InputArgs, out: Option<&Path>) -> Result<(), Failure> {
    let file = read_predictions(&input.input, input.reduce, false)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let labels = file.dataset.as_ref().map(|d| d.labels().to_vec());
    let csv_err = |e: csv::Error| Failure::Data(e.to_string());
    match &labels {
        Some(_) => w.write_record(["p_hat", "label", "c_hat"]),
        None => w.write_record(["p_hat", "c_hat"]),
    }
    .map_err(csv_err)?;
    for (i, &p) in file.predictions.iter().enumerate() {
        let c = format!("{:?}", map.apply(p));
        let p = format!("{p:?}");
        match &labels {
            Some(y) => w.write_record([p, y[i].to_string(), c]),
            None => w.write_record([p, c]),
        }
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    write_output(out, &String::from_utf8(bytes).expect("ascii output"))
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let spec = args.method.spec()?;
    let (test, _) = labelled(read_predictions(&args.input.input, args.input.reduce, true)?, &args.input.input)?;
    let fit = fit_on_test_ece(&spec, &test, 1.0, args.method.seed)?;
    fs::write(&args.out, to_json(&fit.map)).map_err(|e| io_error(&args.out, e))?;
    if let Some(path) = &args.apply {
        let target = InputArgs { input: path.clone(), reduce: args.input.reduce };
        apply_map(&fit.map, &target, args.apply_out.as_deref())?;
    }
    Ok(())
}

fn cmd_apply(args: &ApplyArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.model).map_err(|e| io_error(&args.model, e))?;
    let map: FittedMap = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: not a saved calibration map: {e}", args.model.display())))?;
    apply_map(&map, &args.input, args.out.as_deref())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config).map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    let config = BenchConfig::from_json(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let report = run_benchmark(&config)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let csv_path = args.out_dir.join("report.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(&csv_path, buf).map_err(|e| io_error(&csv_path, e))?;
    let json_path = args.out_dir.join("report.json");
    fs::write(&json_path, to_json(&report)).map_err(|e| io_error(&json_path, e))?;
    let failed = report.rows.iter().filter(|r| r.result.is_none()).count();
    eprintln!("{} cells, {failed} failed; wrote {} and {}", report.rows.len(), csv_path.display(), json_path.display());
    Ok(())
}

/// Sizes the worker pool. Only `bench` runs in parallel; `CALIBKIT_THREADS` caps it.
fn configure_threads(parallel: bool) -> Result<(), Failure> {
    let threads = match std::env::var("CALIBKIT_THREADS") {
        Ok(value) => value
            .trim()
            .parse()
            .ok()
            .filter(|&t: &usize| t > 0)
            .ok_or_else(|| Failure::Usage(format!("CALIBKIT_THREADS must be a positive integer, got `{value}`")))?,
        Err(_) if parallel => return Ok(()),
        Err(_) => 1,
    };
    let threads = if parallel { threads } else { 1 };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(matches!(cli.command, Command::Bench(_))).and_then(|()| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagram(a) => cmd_diagram(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Apply(a) => cmd_apply(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
