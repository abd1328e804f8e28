//! Calibration evaluation and post-hoc calibration.
//!
//! Evaluation is treated as fitting a calibration map on the test set: binned
//! ECE is the error of the tilted-roof map, and the same estimator interface
//! covers piecewise-linear families, parametric scalers and isotonic regression.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adam;
pub mod binning;
pub mod cv;
pub mod dataset;
pub mod error;
pub mod ground_truth;
pub mod harness;
pub mod loss;
pub mod map;
pub mod metrics;
pub mod numeric;
pub mod piecewise;
pub mod scalers;
pub mod synth;

pub use binning::{
    build_binning, cv_select_bins, debias_ece, ece_binned, reliability_diagram, sweep_select, tilted_roof_map, Binning,
    BinningScheme, ReliabilityDiagram, TiltedMap,
};
pub use dataset::{reduce_multiclass, BinaryDataset, Reduction};
pub use error::{CalibError, Result};
pub use ground_truth::GroundTruthMap;
pub use harness::{
    estimate_ground_truth, evaluate_evaluator, fit_on_test_ece, run_benchmark, spearman_rank, BenchConfig, BenchReport,
    EvalRow, EvaluatorSpec, FittedMap, GroundTruthMethod,
};
pub use loss::{BregmanKind, LossKind};
pub use map::{CalibrationMap, Identity};
pub use metrics::{cmee, true_ce};
pub use piecewise::{pl_cv_fit, train_pl, PlEnsemble, PlModel, Space, TrainConfig};
pub use scalers::{fit_beta, fit_isotonic, fit_platt, fit_temperature, ScalerModel};
pub use synth::{generate_dataset, solve_mixing, Derivate, Shape, SyntheticDataset};
