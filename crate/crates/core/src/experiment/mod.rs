//! Splits, grid search, Procrustes runs, synthetic data and full experiment
//! matrices.

mod compare;
mod grid;
mod matrix;
mod procrustes;
mod splits;
mod synth;

pub use compare::{compare_bundles, correlation_csv, AudioCorrelation};
pub use grid::{
    grid_search, select_config, ControlSummary, GridSpec, RunOptions, RunResult, SeedLineage,
    Selection, TrainingSummary, Variant,
};
pub use matrix::{
    run_matrix, write_bundle, write_per_class, write_summary, Aggregate, BundleMetadata,
    MatrixConfig, MatrixInputs, MatrixPlan, NamedPath, PairRun, ResultBundle, SplitRecord,
    PER_CLASS_FILE, RESULTS_FILE, SUMMARY_FILE,
};
pub use procrustes::{
    alignment_coordinates, fit_procrustes_model, fit_split_procrustes, run_procrustes_probe,
    ProcrustesIndex, ProcrustesMetric, ProcrustesModel, ProcrustesSummary, VizMetadata, VizOutput,
    VizPoint,
};
pub use splits::{make_splits, train_count, SplitFile, SplitSpec};
pub use synth::{class_name, synth_generate, MapKind, SynthData, SynthSpec};
