//! PCA + orthogonal alignment between the text space and the class-mean
//! sound space, used both as a held-out retrieval probe and for the 2-D
//! all-class visualisation export.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{
    aligned_inputs, training_view, ControlSummary, RunOptions, RunResult, SeedLineage, Variant,
};
use super::splits::SplitSpec;
use crate::embedstore::{class_means, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::eval::{control_permutation, evaluate_scorer, ClassScorer, EvalReport};
use crate::linalg::{achievable_rank, dot, norm, pca_fit, pca_transform, procrustes_fit, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcrustesMetric {
    #[default]
    Cosine,
    /// Negative squared Euclidean distance.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesModel {
    pub pca_lang: PcaModel,
    pub pca_sound: PcaModel,
    /// `k × k`, maps language PCA coordinates onto sound PCA coordinates.
    pub q: DMatrix<f64>,
    pub residual: f64,
    pub requested_k: usize,
}

impl ProcrustesModel {
    pub fn k(&self) -> usize {
        self.q.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesSummary {
    pub requested_k: usize,
    pub k: usize,
    pub residual: f64,
    pub metric: ProcrustesMetric,
}

/// Fits PCA to `requested_k` dims on both row-aligned matrices (reduced to
/// the lower achievable rank if needed) and aligns them.
pub fn fit_procrustes_model(
    lang: &DMatrix<f64>,
    sound: &DMatrix<f64>,
    requested_k: usize,
) -> Result<ProcrustesModel> {
    if lang.nrows() != sound.nrows() {
        return Err(Error::DimensionMismatch {
            context: "procrustes rows",
            expected: lang.nrows(),
            actual: sound.nrows(),
        });
    }
    let k = requested_k
        .min(achievable_rank(lang))
        .min(achievable_rank(sound));
    if k == 0 {
        return Err(Error::RankDeficient {
            requested: requested_k,
            achievable: 0,
        });
    }
    let pca_lang = pca_fit(lang, k)?;
    let pca_sound = pca_fit(sound, k)?;
    let a = pca_transform(&pca_lang, lang)?;
    let b = pca_transform(&pca_sound, sound)?;
    let fit = procrustes_fit(&a, &b)?;
    Ok(ProcrustesModel {
        pca_lang,
        pca_sound,
        q: fit.q,
        residual: fit.residual,
        requested_k,
    })
}

/// Candidate texts mapped into the aligned sound PCA space.
pub struct ProcrustesIndex<'a> {
    model: &'a ProcrustesModel,
    /// `k × n_classes`; unit-normalised for the cosine metric.
    texts: DMatrix<f64>,
    metric: ProcrustesMetric,
}

impl<'a> ProcrustesIndex<'a> {
    pub fn new(
        model: &'a ProcrustesModel,
        texts: &DMatrix<f64>,
        metric: ProcrustesMetric,
    ) -> Result<Self> {
        let mut aligned = (pca_transform(&model.pca_lang, texts)? * &model.q).transpose();
        if metric == ProcrustesMetric::Cosine {
            for mut col in aligned.column_iter_mut() {
                let n = col.norm();
                if n > 0.0 {
                    col /= n;
                }
            }
        }
        Ok(Self {
            model,
            texts: aligned,
            metric,
        })
    }
}

impl ClassScorer for ProcrustesIndex<'_> {
    fn n_classes(&self) -> usize {
        self.texts.ncols()
    }

    fn query_dim(&self) -> usize {
        self.model.pca_sound.dim()
    }

    fn score(&self, clip: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let row = DMatrix::from_row_slice(1, clip.len(), clip);
        let z = pca_transform(&self.model.pca_sound, &row)?;
        let z = z.as_slice();
        out.clear();
        match self.metric {
            ProcrustesMetric::Cosine => {
                let n = norm(z);
                out.extend(self.texts.column_iter().map(|t| {
                    if n == 0.0 {
                        0.0
                    } else {
                        (dot(t.as_slice(), z) / n).clamp(-1.0, 1.0)
                    }
                }));
            }
            ProcrustesMetric::Euclidean => {
                out.extend(
                    self.texts
                        .column_iter()
                        .map(|t| -t.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
                );
            }
        }
        Ok(())
    }
}

/// Fits on the training classes only and evaluates over the full registry.
fn fit_and_evaluate(
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    opts: &RunOptions,
) -> Result<(ProcrustesModel, EvalReport)> {
    let (train_text, train_audio) = training_view(split, text, audio)?;
    let lang = train_text.first_vectors_matrix();
    let sound = class_means(&train_audio)?.matrix().clone();
    let requested_k = (split.train.len().saturating_sub(1))
        .min(text.dim())
        .min(audio.dim());
    let model = fit_procrustes_model(&lang, &sound, requested_k)?;
    let index = ProcrustesIndex::new(&model, &text.first_vectors_matrix(), opts.procrustes_metric)?;
    let eval = evaluate_scorer(&index, text.registry(), audio, &split.test, &opts.ks)?;
    Ok((model, eval))
}

fn summary(model: &ProcrustesModel, metric: ProcrustesMetric) -> ProcrustesSummary {
    ProcrustesSummary {
        requested_k: model.requested_k,
        k: model.k(),
        residual: model.residual,
        metric,
    }
}

/// Procrustes probe: `k = min(|train| − 1, d1, d2)`, reduced if the training
/// data has lower rank; the reduction is visible in the summary.
pub fn run_procrustes_probe(
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
    opts: &RunOptions,
) -> Result<RunResult> {
    let (text, audio) = aligned_inputs(split, text, audio)?;
    let seeds = SeedLineage::for_split(split.seed);
    let (model, mut eval) = fit_and_evaluate(split, &text, &audio, opts)?;
    let control = if opts.control {
        let perm = control_permutation(seeds.control_permutation, text.n_classes());
        let permuted = text.permute_vectors(&perm)?;
        let (c_model, c_eval) = fit_and_evaluate(split, &permuted, &audio, opts)?;
        eval.control = Some(Box::new(c_eval));
        Some(ControlSummary {
            permutation_seed: seeds.control_permutation,
            chosen_config: None,
            grid_index: None,
            procrustes: Some(summary(&c_model, opts.procrustes_metric)),
        })
    } else {
        None
    };
    Ok(RunResult {
        variant: Variant::Procrustes,
        split_index: split.index,
        seeds,
        chosen_config: None,
        grid_index: None,
        grid_val_metrics: Vec::new(),
        training: None,
        procrustes: Some(summary(&model, opts.procrustes_metric)),
        eval,
        control,
        train_report: None,
    })
}

/// Train-only Procrustes fit exposed for inspection.
pub fn fit_split_procrustes(
    split: &SplitSpec,
    text: &EmbeddingSet,
    audio: &EmbeddingSet,
) -> Result<ProcrustesModel> {
    let (text, audio) = aligned_inputs(split, text, audio)?;
    let opts = RunOptions {
        control: false,
        ..RunOptions::default()
    };
    fit_and_evaluate(split, &text, &audio, &opts).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizPoint {
    pub class: String,
    pub modality: Modality,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizMetadata {
    pub n_classes: usize,
    pub requested_k: usize,
    pub k: usize,
    pub residual: f64,
    /// Which points the final 2-D PCA was fit on.
    pub second_pca_fit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizOutput {
    pub points: Vec<VizPoint>,
    pub metadata: VizMetadata,
}

/// All-class alignment for plotting: class means, PCA of both spaces to
/// `min(n − 1, d1, d2)` dims, orthogonal alignment of the language points
/// onto the sound points, then a 2-D PCA fit on the union of aligned
/// language and sound points. Points are emitted class by class, text first.
pub fn alignment_coordinates(text: &EmbeddingSet, audio: &EmbeddingSet) -> Result<VizOutput> {
    let audio = audio.align_to(text.registry())?;
    let n = text.n_classes();
    let lang = text.first_vectors_matrix();
    let sound = class_means(&audio)?.matrix().clone();
    let requested_k = n.saturating_sub(1).min(text.dim()).min(audio.dim());
    let model = fit_procrustes_model(&lang, &sound, requested_k)?;
    let k = model.k();
    if k < 2 {
        return Err(Error::invalid(format!(
            "2-D export needs aligned rank >= 2, got {k}"
        )));
    }
    let aligned_lang = pca_transform(&model.pca_lang, &lang)? * &model.q;
    let sound_k = pca_transform(&model.pca_sound, &sound)?;
    let union = DMatrix::from_fn(2 * n, k, |r, c| {
        if r < n {
            aligned_lang[(r, c)]
        } else {
            sound_k[(r - n, c)]
        }
    });
    let pca2 = pca_fit(&union, 2)?;
    let coords = pca_transform(&pca2, &union)?;
    let mut points = Vec::with_capacity(2 * n);
    for c in 0..n {
        for (row, modality) in [(c, Modality::Text), (n + c, Modality::Audio)] {
            points.push(VizPoint {
                class: text.registry().name(c).to_owned(),
                modality,
                x: coords[(row, 0)],
                y: coords[(row, 1)],
            });
        }
    }
    Ok(VizOutput {
        points,
        metadata: VizMetadata {
            n_classes: n,
            requested_k,
            k,
            residual: model.residual,
            second_pca_fit: "union of aligned language points and sound points".to_owned(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::splits::make_splits;
    use crate::experiment::synth::{synth_generate, MapKind, SynthSpec};

    fn synth(n: usize, d1: usize, d2: usize, sigma: f64) -> (EmbeddingSet, EmbeddingSet) {
        let data = synth_generate(&SynthSpec {
            seed: 21,
            n_classes: n,
            clips_per_class: 3,
            d1,
            d2,
            noise_sigma: sigma,
            map_kind: MapKind::Orthogonal,
        })
        .unwrap();
        (data.text, data.audio)
    }

    #[test]
    fn isomorphic_data_is_retrieved_exactly() {
        let (text, audio) = synth(30, 6, 6, 0.0);
        let probe: Vec<usize> = (0..20).collect();
        let split = &make_splits(4, text.registry(), &probe, 1, 0.7).unwrap()[0];
        let run = run_procrustes_probe(split, &text, &audio, &RunOptions::default()).unwrap();
        assert_eq!(run.eval.acc(1), 1.0);
        let p = run.procrustes.unwrap();
        assert_eq!((p.requested_k, p.k), (6, 6));
        assert!(p.residual < 1e-10, "{}", p.residual);
        assert!(run.control_eval().is_some());
    }

    #[test]
    fn fit_ignores_test_class_text() {
        let (text, audio) = synth(30, 6, 5, 0.1);
        let probe: Vec<usize> = (0..20).collect();
        let split = &make_splits(4, text.registry(), &probe, 1, 0.7).unwrap()[0];
        let before = fit_split_procrustes(split, &text, &audio).unwrap();
        let groups: Vec<Vec<Vec<f32>>> = (0..text.n_classes())
            .map(|c| {
                let mut v = text.clip(c, 0).to_vec();
                if split.test.contains(&c) {
                    v.iter_mut().for_each(|x| *x = -3.0 * *x + 1.0);
                }
                vec![v]
            })
            .collect();
        let perturbed =
            EmbeddingSet::new(Modality::Text, 6, text.registry().clone(), groups, "p").unwrap();
        let after = fit_split_procrustes(split, &perturbed, &audio).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn euclidean_metric_also_recovers_isomorphism() {
        let (text, audio) = synth(30, 5, 7, 0.0);
        let probe: Vec<usize> = (0..20).collect();
        let split = &make_splits(8, text.registry(), &probe, 1, 0.7).unwrap()[0];
        let opts = RunOptions {
            procrustes_metric: ProcrustesMetric::Euclidean,
            control: false,
            ..RunOptions::default()
        };
        let run = run_procrustes_probe(split, &text, &audio, &opts).unwrap();
        assert_eq!(run.eval.acc(1), 1.0);
    }

    #[test]
    fn k_is_reduced_to_rank() {
        // Five classes in a 2-D subspace of a 4-D space.
        let pts = [[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [-1.0, 3.0], [0.5, -2.0]];
        let lang = DMatrix::from_fn(5, 4, |r, c| if c < 2 { pts[r][c] } else { 0.0 });
        let sound = lang.clone();
        let m = fit_procrustes_model(&lang, &sound, 4).unwrap();
        assert_eq!((m.requested_k, m.k()), (4, 2));
        assert!(m.residual < 1e-20);
    }

    #[test]
    fn viz_coincides_on_isomorphic_input() {
        let (text, audio) = synth(12, 5, 6, 0.0);
        let out = alignment_coordinates(&text, &audio).unwrap();
        assert_eq!(out.points.len(), 24);
        for pair in out.points.chunks(2) {
            assert_eq!(pair[0].class, pair[1].class);
            assert_eq!(
                (pair[0].modality, pair[1].modality),
                (Modality::Text, Modality::Audio)
            );
            assert!((pair[0].x - pair[1].x).abs() < 1e-6 && (pair[0].y - pair[1].y).abs() < 1e-6);
        }
        assert_eq!(out.metadata.k, 5);
        assert_eq!(out, alignment_coordinates(&text, &audio).unwrap());
    }
}
