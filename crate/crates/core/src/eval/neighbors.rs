use serde::{Deserialize, Serialize};

use crate::embedstore::{ClassId, ClassMeanSet, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::linalg::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub class_id: ClassId,
    pub name: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRow {
    pub class_id: ClassId,
    pub name: String,
    pub language: Vec<Neighbor>,
    pub sound: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub rows: Vec<NeighborRow>,
}

/// Top-`k` candidates for each query by cosine similarity, computed
/// separately in the raw text space and the class-mean sound space. Class ids
/// refer to the text registry; sound means are matched by name.
pub fn neighbor_table(
    text: &EmbeddingSet,
    sound_means: &ClassMeanSet,
    query_classes: &[ClassId],
    candidate_classes: &[ClassId],
    k: usize,
) -> Result<NeighborTable> {
    if text.modality() != Modality::Text {
        return Err(Error::invalid("neighbor_table expects a text set"));
    }
    if k == 0 || k > candidate_classes.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={} candidates",
            candidate_classes.len()
        )));
    }
    let registry = text.registry();
    let sound_index = sound_means.registry().index();
    let sound_row = |class: ClassId| -> Result<Vec<f64>> {
        registry.check_id(class)?;
        let name = registry.name(class);
        sound_index
            .get(name)
            .map(|&i| sound_means.mean(i))
            .ok_or_else(|| Error::invalid(format!("class {name:?} has no sound mean")))
    };
    for &q in query_classes {
        if candidate_classes.contains(&q) {
            return Err(Error::invalid(format!(
                "query class {:?} is also a candidate",
                registry.name(q)
            )));
        }
    }
    let candidates_text: Vec<Vec<f64>> = candidate_classes
        .iter()
        .map(|&c| {
            registry.check_id(c)?;
            Ok(text.clip_f64(c, 0))
        })
        .collect::<Result<_>>()?;
    let candidates_sound: Vec<Vec<f64>> = candidate_classes
        .iter()
        .map(|&c| sound_row(c))
        .collect::<Result<_>>()?;

    let top = |query: &[f64], pool: &[Vec<f64>]| -> Result<Vec<Neighbor>> {
        let mut scored: Vec<(ClassId, f64)> = candidate_classes
            .iter()
            .zip(pool)
            .map(|(&c, v)| cosine(query, v).map(|s| (c, s)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(class_id, similarity)| Neighbor {
                class_id,
                name: registry.name(class_id).to_owned(),
                similarity,
            })
            .collect())
    };

    let rows = query_classes
        .iter()
        .map(|&q| {
            registry.check_id(q)?;
            Ok(NeighborRow {
                class_id: q,
                name: registry.name(q).to_owned(),
                language: top(&text.clip_f64(q, 0), &candidates_text)?,
                sound: top(&sound_row(q)?, &candidates_sound)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NeighborTable { rows })
}
