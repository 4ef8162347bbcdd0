//! Small-scale training experiments on a synthetic glyph task.

pub mod compare;
pub mod evaluate;
pub mod optim;
pub mod task;
pub mod train;

pub use evaluate::{evaluate_target_accuracy, AccuracyReport, DenoiserGenerator, Generator, OracleGenerator};
pub use optim::{Adam, AdamConfig};
pub use task::{gen_synthetic_pair, PairKind, SyntheticTask, TaskConfig};
pub use train::{build_pairs, pair_specs, pretrain_base, train, PairSpec, PretrainConfig, TrainConfig, TrainError, TrainOutput, TraceRow, Variant};
pub use compare::{compare_bg_fraction, compare_variants, matched_runs, run_comparison, sign_test_p, BgFractionComparison, ComparisonReport, ComparisonRun, ExperimentConfig, ModelResult, VariantRun};
