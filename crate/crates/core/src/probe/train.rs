use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{evaluate, IndexedBatch, IndexedExample, LossOptions};
use super::params::{init_params, Diagnostics, ProbeParams};
use super::sampling::sample_negative_rounds;
use crate::embedstore::{ClassId, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub tau: f64,
    pub num_negatives: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub proj_dim: usize,
    pub nonlinear: bool,
    pub seed: u64,
    pub val_fraction: f64,
    pub patience: usize,
    #[serde(default)]
    pub include_positive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            tau: 0.07,
            num_negatives: 64,
            batch_size: 32,
            max_epochs: 20,
            proj_dim: 128,
            nonlinear: false,
            seed: 0,
            val_fraction: 0.1,
            patience: 20,
            include_positive: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let problems: Vec<&str> = [
            (!positive(self.learning_rate), "learning_rate must be > 0"),
            (!positive(self.tau), "tau must be > 0"),
            (self.num_negatives == 0, "num_negatives must be >= 1"),
            (self.batch_size == 0, "batch_size must be >= 1"),
            (self.max_epochs == 0, "max_epochs must be >= 1"),
            (self.proj_dim == 0, "proj_dim must be >= 1"),
            (
                !(self.val_fraction > 0.0 && self.val_fraction < 1.0),
                "val_fraction must be in (0, 1)",
            ),
            (self.patience == 0, "patience must be >= 1"),
        ]
        .into_iter()
        .filter_map(|(bad, msg)| bad.then_some(msg))
        .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            include_positive: self.include_positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Snapshot taken after the best validation epoch.
    pub params: ProbeParams,
    /// Zero-based index into `val_metric_by_epoch`.
    pub best_epoch: usize,
    pub val_metric_by_epoch: Vec<f64>,
    /// Mean per-example loss of each completed epoch.
    pub train_loss_by_epoch: Vec<f64>,
    pub final_train_loss: f64,
    pub diagnostics: Diagnostics,
}

impl TrainReport {
    pub fn best_val_metric(&self) -> f64 {
        self.val_metric_by_epoch[self.best_epoch]
    }
}

/// Adam with bias correction.
struct Adam {
    lr: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            step: 0,
            moments: shapes
                .iter()
                .map(|&n| (vec![0.0; n], vec![0.0; n]))
                .collect(),
        }
    }

    fn update(&mut self, params: &mut [&mut DMatrix<f64>], grads: &[&DMatrix<f64>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for ((w, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            for (((wi, &gi), mi), vi) in w
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi;
                *wi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Training data for one run, widened to `f64` and laid out by column.
struct TrainingData {
    /// `d1 × n_classes`, in ascending class-id order.
    texts: DMatrix<f64>,
    /// `d2 × n_train_clips`.
    train_clips: DMatrix<f64>,
    /// Start of each class's block in `train_clips`; length n_classes + 1.
    train_offsets: Vec<usize>,
    /// `d2 × n_val_clips`.
    val_clips: DMatrix<f64>,
    val_labels: Vec<usize>,
}

impl TrainingData {
    fn train_counts(&self) -> Vec<usize> {
        self.train_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn build_data(
    cfg: &TrainConfig,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    classes: &[ClassId],
) -> Result<TrainingData> {
    let audio_index = audio.registry().index();
    let mut val_rng = derived_rng(cfg.seed, "validation-split");
    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    let mut val_labels = Vec::new();
    let mut train_offsets = vec![0];
    for (pos, &class) in classes.iter().enumerate() {
        let name = text.registry().name(class);
        let audio_class = *audio_index.get(name).ok_or_else(|| {
            Error::invalid(format!("training class {name:?} missing from audio set"))
        })?;
        let n = audio.n_clips(audio_class);
        if n < 2 {
            return Err(Error::invalid(format!(
                "class {name:?} has {n} clip(s); at least 2 are needed to hold out validation"
            )));
        }
        let held = ((cfg.val_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut val_rng);
        let (val, train) = order.split_at_mut(held);
        val.sort_unstable();
        train.sort_unstable();
        val_rows.extend(val.iter().map(|&i| (audio_class, i)));
        val_labels.extend(std::iter::repeat_n(pos, held));
        train_rows.extend(train.iter().map(|&i| (audio_class, i)));
        train_offsets.push(train_rows.len());
    }
    let text_rows: Vec<_> = classes.iter().map(|&c| (c, 0)).collect();
    Ok(TrainingData {
        texts: text.rows_matrix(&text_rows).transpose(),
        train_clips: audio.rows_matrix(&train_rows).transpose(),
        train_offsets,
        val_clips: audio.rows_matrix(&val_rows).transpose(),
        val_labels,
    })
}

/// Unit-normalised `φ(W·x)` columns; zero columns stay zero.
pub(crate) fn unit_projections(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    nonlinear: bool,
) -> DMatrix<f64> {
    let mut z = w * x;
    if nonlinear {
        z.apply(|v| *v = v.max(0.0));
    }
    for mut col in z.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    z
}

/// Accuracy@1 of retrieving each validation clip's class among the training
/// classes; ties go to the lower class id.
fn validation_accuracy(params: &ProbeParams, data: &TrainingData) -> f64 {
    if data.val_labels.is_empty() {
        return 0.0;
    }
    let zt = unit_projections(&params.w_text, &data.texts, params.nonlinear);
    let zu = unit_projections(&params.w_audio, &data.val_clips, params.nonlinear);
    let mut hits = 0usize;
    for (clip, &label) in data.val_labels.iter().enumerate() {
        let u = zu.column(clip);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for class in 0..zt.ncols() {
            let s = dot(zt.column(class).as_slice(), u.as_slice());
            if s > best_score {
                best = class;
                best_score = s;
            }
        }
        hits += usize::from(best == label);
    }
    hits as f64 / data.val_labels.len() as f64
}

/// Trains a probe on the given classes with held-in validation and early
/// stopping. Only vectors of `train_classes` are read.
pub fn train_probe(
    cfg: &TrainConfig,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    train_classes: &[ClassId],
) -> Result<TrainReport> {
    cfg.validate()?;
    if text.modality() != Modality::Text || audio.modality() != Modality::Audio {
        return Err(Error::invalid(
            "train_probe expects a text set and an audio set",
        ));
    }
    let mut classes = train_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != train_classes.len() {
        return Err(Error::invalid("duplicate training class ids"));
    }
    if classes.len() < 2 {
        return Err(Error::invalid("training needs at least 2 classes"));
    }
    for &c in &classes {
        text.registry().check_id(c)?;
    }
    let data = build_data(cfg, text, audio, &classes)?;
    let n_classes = classes.len();
    let positions: Vec<usize> = (0..n_classes).collect();
    let counts = data.train_counts();

    let mut params = init_params(cfg, text.dim(), audio.dim())?;
    let mut adam = Adam::new(
        cfg.learning_rate,
        &[params.w_text.len(), params.w_audio.len()],
    );
    let mut shuffle_rng = derived_rng(cfg.seed, "epoch-shuffle");
    let mut negative_rng = derived_rng(cfg.seed, "negatives");
    let opts = cfg.loss_options();

    let mut examples: Vec<(usize, usize)> = (0..n_classes)
        .flat_map(|pos| {
            (data.train_offsets[pos]..data.train_offsets[pos + 1]).map(move |row| (pos, row))
        })
        .collect();
    let n_rows = data.train_clips.ncols();
    let mut slot = vec![usize::MAX; n_rows];
    let mut used_rows: Vec<usize> = Vec::new();

    let mut best: Option<(usize, f64, ProbeParams)> = None;
    let mut val_metric_by_epoch = Vec::new();
    let mut train_loss_by_epoch = Vec::new();
    let mut diagnostics = Diagnostics::default();

    for epoch in 0..cfg.max_epochs {
        examples.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in examples.chunks(cfg.batch_size) {
            let batch = assemble_batch(
                chunk,
                &data,
                &positions,
                &counts,
                cfg.num_negatives,
                &mut negative_rng,
                &mut slot,
                &mut used_rows,
            )?;
            let (loss, grads) = evaluate(&params, &batch, opts, true)?;
            let grads = grads.expect("gradients requested");
            diagnostics.zero_norm += grads.diagnostics.zero_norm;
            epoch_loss += loss;
            adam.update(
                &mut [&mut params.w_text, &mut params.w_audio],
                &[&grads.w_text, &grads.w_audio],
            );
        }
        train_loss_by_epoch.push(epoch_loss / examples.len() as f64);
        let metric = validation_accuracy(&params, &data);
        val_metric_by_epoch.push(metric);
        if best.as_ref().is_none_or(|(_, m, _)| metric > *m) {
            best = Some((epoch, metric, params.clone()));
        }
        let best_epoch = best.as_ref().map(|b| b.0).unwrap_or(0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch runs");
    Ok(TrainReport {
        params: best_params,
        best_epoch,
        final_train_loss: *train_loss_by_epoch.last().expect("at least one epoch"),
        val_metric_by_epoch,
        train_loss_by_epoch,
        diagnostics,
    })
}

/// Builds an indexed batch whose clip matrix holds each referenced training
/// clip once, in order of first reference.
#[allow(clippy::too_many_arguments)]
fn assemble_batch<R: Rng>(
    chunk: &[(usize, usize)],
    data: &TrainingData,
    positions: &[usize],
    counts: &[usize],
    num_negatives: usize,
    rng: &mut R,
    slot: &mut [usize],
    used_rows: &mut Vec<usize>,
) -> Result<IndexedBatch> {
    for &row in used_rows.iter() {
        slot[row] = usize::MAX;
    }
    used_rows.clear();
    let mut intern = |row: usize| -> usize {
        if slot[row] == usize::MAX {
            slot[row] = used_rows.len();
            used_rows.push(row);
        }
        slot[row]
    };
    let mut examples = Vec::with_capacity(chunk.len());
    for (i, &(pos, row)) in chunk.iter().enumerate() {
        let positive = intern(row);
        let negatives = sample_negative_rounds(rng, positions, pos, counts, num_negatives)?
            .into_iter()
            .map(|(class, clip)| intern(data.train_offsets[class] + clip))
            .collect();
        examples.push(IndexedExample {
            text: i,
            positive,
            negatives,
        });
    }
    let d1 = data.texts.nrows();
    let d2 = data.train_clips.nrows();
    let mut texts = DMatrix::zeros(d1, chunk.len());
    for (i, &(pos, _)) in chunk.iter().enumerate() {
        texts.column_mut(i).copy_from(&data.texts.column(pos));
    }
    let mut clips = DMatrix::zeros(d2, used_rows.len());
    for (j, &row) in used_rows.iter().enumerate() {
        clips.column_mut(j).copy_from(&data.train_clips.column(row));
    }
    Ok(IndexedBatch {
        texts,
        clips,
        examples,
    })
}
