//! Cross-model rank correlation of per-class accuracies from result bundles.

use serde::{Deserialize, Serialize};

use super::grid::Variant;
use super::matrix::{ResultBundle, SplitRecord};
use crate::error::{Error, Result};
use crate::eval::{correlation_matrix, CorrelationMatrix, RunAccuracies};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioCorrelation {
    pub audio_model: String,
    pub matrix: CorrelationMatrix,
}

/// For each audio model, the text-model × text-model Spearman correlation of
/// held-out per-class accuracy@`k`, averaged over splits. With more than one
/// bundle, text model labels are prefixed with `b{i}:`.
pub fn compare_bundles(
    bundles: &[ResultBundle],
    variant: Variant,
    k: usize,
) -> Result<Vec<AudioCorrelation>> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("compare needs at least one bundle"))?;
    let splits: &[SplitRecord] = &first.splits;
    for (i, b) in bundles.iter().enumerate().skip(1) {
        if b.splits != splits {
            return Err(Error::invalid(format!(
                "bundle {i} was run on different splits than bundle 0"
            )));
        }
    }
    let label = |i: usize, name: &str| {
        if bundles.len() > 1 {
            format!("b{i}:{name}")
        } else {
            name.to_owned()
        }
    };

    let mut audio_models: Vec<&String> = Vec::new();
    for b in bundles {
        for a in &b.audio_models {
            if !audio_models.contains(&a) {
                audio_models.push(a);
            }
        }
    }

    audio_models
        .into_iter()
        .map(|audio| {
            let mut models = Vec::new();
            let mut runs: Vec<RunAccuracies> = vec![RunAccuracies::new(); splits.len()];
            for (i, b) in bundles.iter().enumerate() {
                for r in &b.runs {
                    if &r.audio_model != audio || r.result.variant != variant {
                        continue;
                    }
                    let name = label(i, &r.text_model);
                    if !models.contains(&name) {
                        models.push(name.clone());
                    }
                    let run = runs.get_mut(r.result.split_index).ok_or_else(|| {
                        Error::invalid(format!(
                            "run refers to unknown split {}",
                            r.result.split_index
                        ))
                    })?;
                    run.insert(name, r.result.eval.per_class_acc(k));
                }
            }
            if models.is_empty() {
                return Err(Error::invalid(format!(
                    "no {variant} runs for audio model {audio:?}"
                )));
            }
            for (s, run) in runs.iter().enumerate() {
                if let Some(missing) = models.iter().find(|m| !run.contains_key(*m)) {
                    return Err(Error::invalid(format!(
                        "{missing} has no {variant} run on split {s} for {audio}"
                    )));
                }
            }
            Ok(AudioCorrelation {
                audio_model: audio.clone(),
                matrix: correlation_matrix(&models, &runs)?,
            })
        })
        .collect()
}

/// Columns: `audio_model,text_model,<text model>…`, one block of rows per
/// audio model.
pub fn correlation_csv(results: &[AudioCorrelation]) -> String {
    let mut out = String::new();
    for res in results {
        let m = &res.matrix;
        out.push_str(&csv_row(
            ["audio_model", "text_model"]
                .into_iter()
                .map(str::to_owned)
                .chain(m.models.iter().cloned()),
        ));
        for (i, model) in m.models.iter().enumerate() {
            out.push_str(&csv_row(
                [res.audio_model.clone(), model.clone()]
                    .into_iter()
                    .chain(m.values[i].iter().map(|v| format!("{v:.6}"))),
            ));
        }
    }
    out
}

fn csv_row(cells: impl Iterator<Item = String>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(cells.collect::<Vec<_>>())
        .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
