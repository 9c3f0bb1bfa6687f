use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::procrustes::{ProcrustesMetric, ProcrustesSummary};
use super::splits::SplitSpec;
use crate::embedstore::{subset, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{accuracy_at_k, control_permutation, EvalReport, RetrievalSet, DEFAULT_KS};
use crate::probe::{train_probe, TrainConfig, TrainReport};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Linear,
    Nonlinear,
    Procrustes,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Linear => "linear",
            Variant::Nonlinear => "nonlinear",
            Variant::Procrustes => "procrustes",
        })
    }
}

/// Hyperparameter axes plus the settings shared by every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub taus: Vec<f64>,
    pub num_negatives: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub proj_dim: usize,
    pub nonlinear: bool,
    pub val_fraction: f64,
    pub patience: usize,
    #[serde(default)]
    pub include_positive: bool,
}

impl Default for GridSpec {
    /// The 2 × 2 × 2 grid: α ∈ {1e-3, 1e-4}, τ ∈ {0.07, 0.2}, 64 or 128
    /// negatives, batch 32, 20 epochs.
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            learning_rates: vec![1e-3, 1e-4],
            taus: vec![0.07, 0.2],
            num_negatives: vec![64, 128],
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            proj_dim: base.proj_dim,
            nonlinear: false,
            val_fraction: base.val_fraction,
            patience: base.patience,
            include_positive: false,
        }
    }
}

impl GridSpec {
    pub fn variant(&self) -> Variant {
        if self.nonlinear {
            Variant::Nonlinear
        } else {
            Variant::Linear
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.taus.len() * self.num_negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in lexicographic (learning rate, tau, negatives) order,
    /// all sharing `seed`.
    pub fn points(&self, seed: u64) -> Result<Vec<TrainConfig>> {
        if self.is_empty() {
            return Err(Error::invalid("every grid axis needs at least one value"));
        }
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rates {
            for &tau in &self.taus {
                for &num_negatives in &self.num_negatives {
                    let cfg = TrainConfig {
                        learning_rate,
                        tau,
                        num_negatives,
                        batch_size: self.batch_size,
                        max_epochs: self.max_epochs,
                        proj_dim: self.proj_dim,
                        nonlinear: self.nonlinear,
                        seed,
                        val_fraction: self.val_fraction,
                        patience: self.patience,
                        include_positive: self.include_positive,
                    };
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }

    pub fn with_nonlinear(&self, nonlinear: bool) -> Self {
        Self {
            nonlinear,
            ..self.clone()
        }
    }
}

/// Settings for a single (pair, split) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub ks: Vec<usize>,
    /// Also run the permuted-text control.
    pub control: bool,
    pub procrustes_metric: ProcrustesMetric,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            control: true,
            procrustes_metric: ProcrustesMetric::Cosine,
        }
    }
}

/// Every seed a run consumed, derivable from the split seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub split: u64,
    /// Shared by all grid points.
    pub train: u64,
    pub control_permutation: u64,
}

impl SeedLineage {
    pub fn for_split(split_seed: u64) -> Self {
        Self {
            split: split_seed,
            train: derive_seed(split_seed, "train"),
            control_permutation: derive_seed(split_seed, "control-permutation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub val_metric_by_epoch: Vec<f64>,
    pub train_loss_by_epoch: Vec<f64>,
    pub final_train_loss: f64,
    pub zero_norm_events: u64,
}

impl From<&TrainReport> for TrainingSummary {
    fn from(r: &TrainReport) -> Self {
        Self {
            best_epoch: r.best_epoch,
            val_metric_by_epoch: r.val_metric_by_epoch.clone(),
            train_loss_by_epoch: r.train_loss_by_epoch.clone(),
            final_train_loss: r.final_train_loss,
            zero_norm_events: r.diagnostics.zero_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub permutation_seed: u64,
    pub chosen_config: Option<TrainConfig>,
    pub grid_index: Option<usize>,
    pub procrustes: Option<ProcrustesSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub split_index: usize,
    pub seeds: SeedLineage,
    pub chosen_config: Option<TrainConfig>,
    pub grid_index: Option<usize>,
    /// Best validation accuracy@1 of each grid point, in grid order.
    pub grid_val_metrics: Vec<f64>,
    pub training: Option<TrainingSummary>,
    pub procrustes: Option<ProcrustesSummary>,
    /// Held-out evaluation; `eval.control` holds the permuted-text run.
    pub eval: EvalReport,
    pub control: Option<ControlSummary>,
    /// Full report including parameters; not serialised.
    #[serde(skip)]
    pub train_report: Option<TrainReport>,
}

impl RunResult {
    pub fn control_eval(&self) -> Option<&EvalReport> {
        self.eval.control.as_deref()
    }
}

/// Outcome of model selection over a grid.
#[derive(Debug, Clone)]
pub struct Selection {
    pub grid_index: usize,
    pub config: TrainConfig,
    pub report: TrainReport,
    pub grid_val_metrics: Vec<f64>,
}

/// Trains every grid point on the given (training-only) sets and keeps the
/// one with the best held-in validation accuracy; ties go to the earlier
/// grid point.
pub fn select_config(
    grid: &GridSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    seed: u64,
) -> Result<Selection> {
    let points = grid.points(seed)?;
    let classes: Vec<usize> = (0..text.n_classes()).collect();
    let reports: Vec<TrainReport> = points
        .par_iter()
        .map(|cfg| train_probe(cfg, text, audio, &classes))
        .collect::<Result<_>>()?;
    let grid_val_metrics: Vec<f64> = reports.iter().map(TrainReport::best_val_metric).collect();
    let mut best = 0;
    for (i, &m) in grid_val_metrics.iter().enumerate() {
        if m > grid_val_metrics[best] {
            best = i;
        }
    }
    let report = reports.into_iter().nth(best).expect("non-empty grid");
    Ok(Selection {
        grid_index: best,
        config: points[best].clone(),
        report,
        grid_val_metrics,
    })
}

/// Restricts both sets to the training classes of a split, re-indexed in
/// split order. Nothing from held-out classes survives.
pub(crate) fn training_view(
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    Ok((subset(text, &split.train)?, subset(audio, &split.train)?))
}

pub(crate) fn aligned_inputs(
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    Ok((
        text.align_to(&split.retrieval_registry)?,
        audio.align_to(&split.retrieval_registry)?,
    ))
}

fn select_and_evaluate(
    grid: &GridSpec,
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    seed: u64,
    ks: &[usize],
) -> Result<(Selection, EvalReport)> {
    let (train_text, train_audio) = training_view(split, text, audio)?;
    let selection = select_config(grid, &train_text, &train_audio, seed)?;
    let retrieval = RetrievalSet::from_text_set(text)?;
    let eval = accuracy_at_k(&selection.report.params, &retrieval, audio, &split.test, ks)?;
    Ok((selection, eval))
}

/// Model selection on held-in data, then a single evaluation of the chosen
/// probe on the split's held-out classes over the full retrieval registry.
/// With `opts.control`, the whole procedure is repeated on text vectors
/// permuted across the registry.
pub fn grid_search(
    grid: &GridSpec,
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    opts: &RunOptions,
) -> Result<RunResult> {
    let (text, audio) = aligned_inputs(split, text, audio)?;
    let seeds = SeedLineage::for_split(split.seed);
    let (selection, mut eval) =
        select_and_evaluate(grid, split, &text, &audio, seeds.train, &opts.ks)?;

    let control = if opts.control {
        let perm = control_permutation(seeds.control_permutation, text.n_classes());
        let permuted = text.permute_vectors(&perm)?;
        let (c_sel, c_eval) =
            select_and_evaluate(grid, split, &permuted, &audio, seeds.train, &opts.ks)?;
        eval.control = Some(Box::new(c_eval));
        Some(ControlSummary {
            permutation_seed: seeds.control_permutation,
            chosen_config: Some(c_sel.config),
            grid_index: Some(c_sel.grid_index),
            procrustes: None,
        })
    } else {
        None
    };

    Ok(RunResult {
        variant: grid.variant(),
        split_index: split.index,
        seeds,
        chosen_config: Some(selection.config.clone()),
        grid_index: Some(selection.grid_index),
        grid_val_metrics: selection.grid_val_metrics.clone(),
        training: Some(TrainingSummary::from(&selection.report)),
        procrustes: None,
        eval,
        control,
        train_report: Some(selection.report),
    })
}
