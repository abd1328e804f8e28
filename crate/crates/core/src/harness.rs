//! Evaluator scoring: fit a map on a test set, then compare it and its
//! implied calibration error against a known or estimated ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binning::{
    build_binning, cv_select_bins, debias_ece, default_cv_candidates, reliability_diagram, sweep_select,
    tilted_roof_map, BinningScheme, TiltedMap,
};
use crate::cv::DEFAULT_FOLDS;
use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::ground_truth::GroundTruthMap;
use crate::loss::LossKind;
use crate::map::CalibrationMap;
use crate::metrics::mean_abs_power;
use crate::numeric::derive_seed;
use crate::piecewise::{pl_cv_fit, PlEnsemble, Space};
use crate::scalers::{fit_beta, fit_isotonic, fit_platt, fit_temperature, ScalerModel};
use crate::synth::{generate_dataset, solve_mixing, Shape};

/// Bin count of the binned ground-truth estimators.
pub const GT_BINS: usize = 100;

/// Size of the evaluation sample drawn per benchmark cell when unspecified.
pub const DEFAULT_EVAL_SIZE: usize = 100_000;

/// An evaluation method: a calibration-map family plus how it is fitted.
///
/// Written as short tags such as `es:15`, `ew_cv:mse`, `pl:ce`, `pl3:mse` or
/// `isotonic`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvaluatorSpec {
    /// Binning with a fixed bin count.
    Binned { scheme: BinningScheme, bins: usize },
    /// Largest bin count with a monotone diagram.
    Sweep { scheme: BinningScheme },
    /// Cross-validated bin count.
    BinnedCv { scheme: BinningScheme, loss: LossKind },
    /// Cross-validated piecewise-linear map.
    Piecewise { space: Space, loss: LossKind },
    Platt,
    Beta,
    Isotonic,
    Temperature,
}

impl EvaluatorSpec {
    pub const VALID_TAGS: &'static str =
        "es:<b>, ew:<b>, es_sweep, ew_sweep, es_cv[:mse|ce], ew_cv[:mse|ce], pl[:mse|ce], pl3[:mse|ce], platt, beta, isotonic, temperature";
}

fn scheme_prefix(scheme: BinningScheme) -> &'static str {
    match scheme {
        BinningScheme::EqualSize => "es",
        BinningScheme::EqualWidth | BinningScheme::Explicit => "ew",
    }
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Binned { scheme, bins } => write!(f, "{}:{bins}", scheme_prefix(*scheme)),
            EvaluatorSpec::Sweep { scheme } => write!(f, "{}_sweep", scheme_prefix(*scheme)),
            EvaluatorSpec::BinnedCv { scheme, loss } => write!(f, "{}_cv:{}", scheme_prefix(*scheme), loss.tag()),
            EvaluatorSpec::Piecewise { space: Space::Probability, loss } => write!(f, "pl:{}", loss.tag()),
            EvaluatorSpec::Piecewise { space: Space::Logit, loss } => write!(f, "pl3:{}", loss.tag()),
            EvaluatorSpec::Platt => f.write_str("platt"),
            EvaluatorSpec::Beta => f.write_str("beta"),
            EvaluatorSpec::Isotonic => f.write_str("isotonic"),
            EvaluatorSpec::Temperature => f.write_str("temperature"),
        }
    }
}

impl FromStr for EvaluatorSpec {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (lower.as_str(), None),
        };
        let invalid = || CalibError::domain(format!("unknown evaluator `{s}`; valid tags: {}", Self::VALID_TAGS));
        let loss_or = |default: LossKind| arg.map_or(Ok(default), |a| a.parse::<LossKind>().map_err(|_| invalid()));
        let no_arg = |spec: EvaluatorSpec| if arg.is_none() { Ok(spec) } else { Err(invalid()) };
        let scheme = |prefix: &str| if prefix == "es" { BinningScheme::EqualSize } else { BinningScheme::EqualWidth };
        match head {
            "es" | "ew" => {
                let bins: usize = arg.and_then(|a| a.parse().ok()).filter(|&b| b > 0).ok_or_else(invalid)?;
                Ok(EvaluatorSpec::Binned { scheme: scheme(head), bins })
            }
            "es_sweep" | "ew_sweep" => no_arg(EvaluatorSpec::Sweep { scheme: scheme(&head[..2]) }),
            "es_cv" | "ew_cv" => {
                Ok(EvaluatorSpec::BinnedCv { scheme: scheme(&head[..2]), loss: loss_or(LossKind::Mse)? })
            }
            "pl" => Ok(EvaluatorSpec::Piecewise { space: Space::Probability, loss: loss_or(LossKind::CrossEntropy)? }),
            "pl3" => Ok(EvaluatorSpec::Piecewise { space: Space::Logit, loss: loss_or(LossKind::CrossEntropy)? }),
            "platt" => no_arg(EvaluatorSpec::Platt),
            "beta" => no_arg(EvaluatorSpec::Beta),
            "isotonic" => no_arg(EvaluatorSpec::Isotonic),
            "temperature" => no_arg(EvaluatorSpec::Temperature),
            _ => Err(invalid()),
        }
    }
}

impl Serialize for EvaluatorSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvaluatorSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        tag.parse().map_err(serde::de::Error::custom)
    }
}

/// A map fitted by an evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedMap {
    Binned(TiltedMap),
    Piecewise(PlEnsemble),
    Scaler(ScalerModel),
}

impl CalibrationMap for FittedMap {
    fn apply(&self, p: f64) -> f64 {
        match self {
            FittedMap::Binned(m) => m.apply(p),
            FittedMap::Piecewise(m) => m.apply(p),
            FittedMap::Scaler(m) => m.apply(p),
        }
    }
}

/// A fitted map and the calibration error it implies on its own test set.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub map: FittedMap,
    /// `(1/n) Σ |ĉ(p̂_i) − p̂_i|^α`.
    pub ece_fit: f64,
    /// Debiased binned ECE, for binned evaluators at α = 1.
    pub ece_debiased: Option<f64>,
    /// Selected bin or segment count, when the evaluator chooses one.
    pub chosen_b: Option<usize>,
}

fn binned_fit(dataset: &BinaryDataset, scheme: BinningScheme, bins: usize, alpha: f64) -> Result<(TiltedMap, Option<f64>)> {
    let bins = match scheme {
        BinningScheme::EqualSize => bins.min(dataset.len()),
        _ => bins,
    };
    let diagram = reliability_diagram(dataset, &build_binning(dataset, scheme, bins)?);
    let debiased = (alpha == 1.0).then(|| debias_ece(&diagram));
    Ok((tilted_roof_map(&diagram), debiased))
}

/// Fit `spec` on `dataset` and report the fit-on-the-test calibration error.
pub fn fit_on_test_ece(spec: &EvaluatorSpec, dataset: &BinaryDataset, alpha: f64, seed: u64) -> Result<FitOutcome> {
    if dataset.is_empty() {
        return Err(CalibError::domain("cannot evaluate an empty dataset"));
    }
    let (map, ece_debiased, chosen_b) = match *spec {
        EvaluatorSpec::Binned { scheme, bins } => {
            let (m, d) = binned_fit(dataset, scheme, bins, alpha)?;
            let b = m.binning().n_bins();
            (FittedMap::Binned(m), d, Some(b))
        }
        EvaluatorSpec::Sweep { scheme } => {
            let b = sweep_select(dataset, scheme)?;
            let (m, d) = binned_fit(dataset, scheme, b, alpha)?;
            (FittedMap::Binned(m), d, Some(b))
        }
        EvaluatorSpec::BinnedCv { scheme, loss } => {
            let sel = cv_select_bins(dataset, scheme, &default_cv_candidates(), DEFAULT_FOLDS, loss, seed)?;
            let (m, d) = binned_fit(dataset, scheme, sel.chosen, alpha)?;
            (FittedMap::Binned(m), d, Some(sel.chosen))
        }
        EvaluatorSpec::Piecewise { space, loss } => {
            let e = pl_cv_fit(dataset, space, loss, seed)?;
            let b = e.chosen_b;
            (FittedMap::Piecewise(e), None, Some(b))
        }
        EvaluatorSpec::Platt => (FittedMap::Scaler(fit_platt(dataset)?), None, None),
        EvaluatorSpec::Beta => (FittedMap::Scaler(fit_beta(dataset)?), None, None),
        EvaluatorSpec::Isotonic => (FittedMap::Scaler(fit_isotonic(dataset)?), None, None),
        EvaluatorSpec::Temperature => (FittedMap::Scaler(fit_temperature(dataset)?), None, None),
    };
    let fitted = map.apply_all(dataset.predictions());
    let ece_fit = mean_abs_power(&fitted, dataset.predictions(), alpha)?;
    Ok(FitOutcome { map, ece_fit, ece_debiased, chosen_b })
}

/// Ground-truth estimators for data without a known calibration map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthMethod {
    Isotonic,
    /// Equal-size binning, flat bin tops.
    Eq100Flat,
    /// Equal-size binning, slope-one bin tops.
    Eq100Slope1,
}

impl FromStr for GroundTruthMethod {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotonic" => Ok(GroundTruthMethod::Isotonic),
            "eq100-flat" => Ok(GroundTruthMethod::Eq100Flat),
            "eq100-slope1" => Ok(GroundTruthMethod::Eq100Slope1),
            other => Err(CalibError::domain(format!(
                "unknown ground-truth method `{other}` (expected isotonic|eq100-flat|eq100-slope1)"
            ))),
        }
    }
}

/// Estimate `c*` from a large labelled holdout set.
pub fn estimate_ground_truth(holdout: &BinaryDataset, method: GroundTruthMethod) -> Result<GroundTruthMap> {
    if holdout.is_empty() {
        return Err(CalibError::domain("cannot estimate ground truth from an empty holdout"));
    }
    match method {
        GroundTruthMethod::Isotonic => match fit_isotonic(holdout)? {
            ScalerModel::Isotonic { thresholds, levels } => GroundTruthMap::from_steps(&thresholds, &levels),
            _ => unreachable!("isotonic fit returns an isotonic model"),
        },
        GroundTruthMethod::Eq100Flat | GroundTruthMethod::Eq100Slope1 => {
            let binning = build_binning(holdout, BinningScheme::EqualSize, GT_BINS.min(holdout.len()))?;
            let diagram = reliability_diagram(holdout, &binning);
            if method == GroundTruthMethod::Eq100Slope1 {
                return Ok(GroundTruthMap::Tilted(tilted_roof_map(&diagram)));
            }
            let fallback = holdout.label_mean();
            let values = diagram.bins().iter().map(|s| s.mean_label.unwrap_or(fallback)).collect();
            GroundTruthMap::stepwise(binning.boundaries().to_vec(), values)
        }
    }
}

/// Scores of one evaluator on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub evaluator: String,
    pub ece_fit: f64,
    pub ece_debiased: Option<f64>,
    pub chosen_b: Option<usize>,
    pub ece_true: f64,
    pub abs_ece_err: f64,
    /// `mean |ĉ − c*|`.
    pub cmee_abs: f64,
    /// `mean (ĉ − c*)²`.
    pub cmee_sq: f64,
}

/// Fit on `test`, then score against `c*` at `points` given as `truth`.
pub fn evaluate_with_truth(
    spec: &EvaluatorSpec,
    test: &BinaryDataset,
    points: &[f64],
    truth: &[f64],
    alpha: f64,
    seed: u64,
) -> Result<EvalRow> {
    let fit = fit_on_test_ece(spec, test, alpha, seed)?;
    let fitted = fit.map.apply_all(points);
    let ece_true = mean_abs_power(truth, points, alpha)?;
    Ok(EvalRow {
        evaluator: spec.to_string(),
        ece_fit: fit.ece_fit,
        ece_debiased: fit.ece_debiased,
        chosen_b: fit.chosen_b,
        ece_true,
        abs_ece_err: (fit.ece_fit - ece_true).abs(),
        cmee_abs: mean_abs_power(&fitted, truth, 1.0)?,
        cmee_sq: mean_abs_power(&fitted, truth, 2.0)?,
    })
}

/// Fit on `test`; distances to `gt` are averaged over the `big_eval` predictions.
pub fn evaluate_evaluator(
    spec: &EvaluatorSpec,
    test: &BinaryDataset,
    gt: &GroundTruthMap,
    big_eval: &BinaryDataset,
    alpha: f64,
    seed: u64,
) -> Result<EvalRow> {
    let truth = gt.apply_all(big_eval.predictions());
    evaluate_with_truth(spec, test, big_eval.predictions(), &truth, alpha, seed)
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CalibError::domain("rank correlation needs two vectors of equal length ≥ 2"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CalibError::domain("rank correlation needs finite scores"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(CalibError::domain("rank correlation is undefined for a constant vector"));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

fn default_alpha() -> f64 {
    1.0
}

fn default_eval_size() -> usize {
    DEFAULT_EVAL_SIZE
}

/// A synthetic benchmark: every combination of the listed axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub shapes: Vec<Shape>,
    pub target_ces: Vec<f64>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub evaluators: Vec<EvaluatorSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Size of the evaluation sample on which `c*` distances are averaged.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CalibError::format(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("shapes", self.shapes.is_empty()),
            ("target_ces", self.target_ces.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("evaluators", self.evaluators.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CalibError::format(format!("invalid config: `{name}` must not be empty")));
        }
        if self.target_ces.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CalibError::format("invalid config: target_ces must be finite and nonnegative"));
        }
        if self.sizes.contains(&0) || self.eval_size == 0 {
            return Err(CalibError::format("invalid config: sizes and eval_size must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CalibError::format("invalid config: alpha must be positive"));
        }
        Ok(())
    }
}

/// One (dataset, evaluator) cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub shape: Shape,
    pub target_ce: f64,
    pub n: usize,
    pub seed: u64,
    pub evaluator: String,
    pub result: Option<EvalRow>,
    pub error: Option<String>,
    /// Rank by `cmee_abs` among the evaluators on the same dataset.
    pub rank_cmee: Option<f64>,
    /// Mean of `rank_cmee` over seeds with the same shape, target and size.
    pub avg_rank_cmee: Option<f64>,
}

/// Means over seeds for one evaluator at one (shape, target, size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean_cmee_abs: Option<f64>,
    pub mean_cmee_sq: Option<f64>,
    pub mean_abs_ece_err: Option<f64>,
    pub mean_ece_fit: Option<f64>,
    pub mean_ece_true: Option<f64>,
    pub avg_rank_cmee: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

/// Aggregates for one evaluator over the whole benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorSummary {
    pub evaluator: String,
    pub mean_cmee_abs: Option<f64>,
    pub mean_abs_ece_err: Option<f64>,
    pub avg_rank_cmee: Option<f64>,
    pub avg_rank_abs_ece_err: Option<f64>,
    /// Mean over (shape, size, seed) of the rank correlation between
    /// `ece_fit` and `ece_true` across target errors.
    pub mean_spearman: Option<f64>,
    pub failures: usize,
}

/// shape → target → size → evaluator → summary.
pub type AxisTable = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, CellSummary>>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub by_axes: AxisTable,
    pub summary: Vec<EvaluatorSummary>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// Run every cell of `config`. Cell failures are recorded, not propagated.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let mut shapes = config.shapes.clone();
    shapes.sort();
    shapes.dedup();
    let mut targets = config.target_ces.clone();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut evaluators = config.evaluators.clone();
    evaluators.sort_by_key(|e| e.to_string());
    evaluators.dedup();

    let mut datasets = Vec::new();
    for &shape in &shapes {
        for &target in &targets {
            for &n in &sizes {
                for &seed in &seeds {
                    datasets.push((shape, target, n, seed));
                }
            }
        }
    }

    let mut cells: Vec<Vec<BenchRow>> = datasets
        .par_iter()
        .map(|&(shape, target_ce, n, seed)| {
            let row = |evaluator: &EvaluatorSpec, outcome: Result<EvalRow>| BenchRow {
                shape,
                target_ce,
                n,
                seed,
                evaluator: evaluator.to_string(),
                error: outcome.as_ref().err().map(ToString::to_string),
                result: outcome.ok(),
                rank_cmee: None,
                avg_rank_cmee: None,
            };
            let prepared = solve_mixing(shape, target_ce).and_then(|lambda| {
                let test = generate_dataset(shape, lambda, n, seed)?;
                let eval = generate_dataset(shape, lambda, config.eval_size, derive_seed(seed, 0xE7A1))?;
                let truth = test.ground_truth.apply_all(eval.dataset.predictions());
                Ok((test.dataset, eval.dataset, truth))
            });
            match prepared {
                Ok((test, eval, truth)) => evaluators
                    .par_iter()
                    .map(|spec| {
                        let outcome = evaluate_with_truth(spec, &test, eval.predictions(), &truth, config.alpha, seed);
                        row(spec, outcome)
                    })
                    .collect(),
                Err(e) => evaluators.iter().map(|spec| row(spec, Err(e.clone()))).collect(),
            }
        })
        .collect();

    for cell in &mut cells {
        let ok: Vec<usize> = (0..cell.len()).filter(|&i| cell[i].result.is_some()).collect();
        let scores: Vec<f64> = ok.iter().map(|&i| cell[i].result.as_ref().unwrap().cmee_abs).collect();
        for (&i, r) in ok.iter().zip(average_ranks(&scores)) {
            cell[i].rank_cmee = Some(r);
        }
    }
    let mut rows: Vec<BenchRow> = cells.into_iter().flatten().collect();

    let same_group = |a: &BenchRow, b: &BenchRow| {
        a.shape == b.shape && a.target_ce == b.target_ce && a.n == b.n && a.evaluator == b.evaluator
    };
    let avg_ranks: Vec<Option<f64>> = rows
        .iter()
        .map(|r| mean_of(rows.iter().filter(|o| same_group(r, o)).filter_map(|o| o.rank_cmee)))
        .collect();
    for (r, a) in rows.iter_mut().zip(avg_ranks) {
        r.avg_rank_cmee = a;
    }

    let mut by_axes = AxisTable::new();
    for r in &rows {
        let entry = by_axes
            .entry(r.shape.tag().to_string())
            .or_default()
            .entry(fmt_float(r.target_ce))
            .or_default()
            .entry(r.n.to_string())
            .or_default();
        if entry.contains_key(&r.evaluator) {
            continue;
        }
        let group: Vec<&BenchRow> = rows.iter().filter(|o| same_group(r, o)).collect();
        let done = || group.iter().filter_map(|o| o.result.as_ref());
        entry.insert(
            r.evaluator.clone(),
            CellSummary {
                mean_cmee_abs: mean_of(done().map(|e| e.cmee_abs)),
                mean_cmee_sq: mean_of(done().map(|e| e.cmee_sq)),
                mean_abs_ece_err: mean_of(done().map(|e| e.abs_ece_err)),
                mean_ece_fit: mean_of(done().map(|e| e.ece_fit)),
                mean_ece_true: mean_of(done().map(|e| e.ece_true)),
                avg_rank_cmee: r.avg_rank_cmee,
                completed: done().count(),
                failed: group.len() - done().count(),
            },
        );
    }

    let summary = summarise(&rows, &evaluators, &shapes, &sizes, &seeds);
    Ok(BenchReport { config: config.clone(), rows, by_axes, summary })
}

fn summarise(rows: &[BenchRow], evaluators: &[EvaluatorSpec], shapes: &[Shape], sizes: &[usize], seeds: &[u64]) -> Vec<EvaluatorSummary> {
    // Ranks by |ECE − CE| per dataset.
    let mut err_ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut start = 0;
    while start < rows.len() {
        let end = start + evaluators.len();
        let block = &rows[start..end];
        let ok: Vec<&BenchRow> = block.iter().filter(|r| r.result.is_some()).collect();
        let scores: Vec<f64> = ok.iter().map(|r| r.result.as_ref().unwrap().abs_ece_err).collect();
        for (r, rank) in ok.iter().zip(average_ranks(&scores)) {
            err_ranks.entry(r.evaluator.clone()).or_default().push(rank);
        }
        start = end;
    }

    evaluators
        .iter()
        .map(|spec| {
            let tag = spec.to_string();
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.evaluator == tag).collect();
            let done = || mine.iter().filter_map(|r| r.result.as_ref());
            let mut correlations = Vec::new();
            for &shape in shapes {
                for &n in sizes {
                    for &seed in seeds {
                        let series: Vec<&EvalRow> = mine
                            .iter()
                            .filter(|r| r.shape == shape && r.n == n && r.seed == seed)
                            .filter_map(|r| r.result.as_ref())
                            .collect();
                        let fit: Vec<f64> = series.iter().map(|e| e.ece_fit).collect();
                        let truth: Vec<f64> = series.iter().map(|e| e.ece_true).collect();
                        if let Ok(rho) = spearman_rank(&fit, &truth) {
                            correlations.push(rho);
                        }
                    }
                }
            }
            EvaluatorSummary {
                mean_cmee_abs: mean_of(done().map(|e| e.cmee_abs)),
                mean_abs_ece_err: mean_of(done().map(|e| e.abs_ece_err)),
                avg_rank_cmee: mean_of(mine.iter().filter_map(|r| r.rank_cmee)),
                avg_rank_abs_ece_err: err_ranks.get(&tag).and_then(|v| mean_of(v.iter().copied())),
                mean_spearman: mean_of(correlations.into_iter()),
                failures: mine.iter().filter(|r| r.result.is_none()).count(),
                evaluator: tag,
            }
        })
        .collect()
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 17] = [
        "shape",
        "target_ce",
        "n",
        "seed",
        "evaluator",
        "ece_fit",
        "ece_debiased",
        "chosen_b",
        "ece_true",
        "abs_ece_err",
        "cmee_abs",
        "cmee_sq",
        "rank_cmee",
        "avg_rank_cmee",
        "lambda",
        "status",
        "error",
    ];

    /// One CSV row per cell, floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| CalibError::domain(format!("writing report: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        for r in &self.rows {
            let e = r.result.as_ref();
            let lambda = solve_mixing(r.shape, r.target_ce).ok();
            w.write_record([
                r.shape.tag().to_string(),
                fmt_float(r.target_ce),
                r.n.to_string(),
                r.seed.to_string(),
                r.evaluator.clone(),
                opt(e.map(|e| e.ece_fit)),
                opt(e.and_then(|e| e.ece_debiased)),
                e.and_then(|e| e.chosen_b).map(|b| b.to_string()).unwrap_or_default(),
                opt(e.map(|e| e.ece_true)),
                opt(e.map(|e| e.abs_ece_err)),
                opt(e.map(|e| e.cmee_abs)),
                opt(e.map(|e| e.cmee_sq)),
                opt(r.rank_cmee),
                opt(r.avg_rank_cmee),
                opt(lambda),
                if e.is_some() { "ok" } else { "failed" }.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| CalibError::domain(format!("writing report: {e}")))?;
        Ok(())
    }
}
