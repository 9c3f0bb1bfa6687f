use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedstore::{ClassRegistry, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, random_semi_orthogonal};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Orthonormal rows (`d2 ≤ d1`) or columns (`d2 > d1`).
    Orthogonal,
    /// Gaussian entries scaled by `1/√d1`.
    RandomLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub d1: usize,
    pub d2: usize,
    pub noise_sigma: f64,
    pub map_kind: MapKind,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub text: EmbeddingSet,
    pub audio: EmbeddingSet,
    /// Hidden `d2 × d1` map with `audio clip = map · text + noise`.
    pub map: DMatrix<f64>,
}

pub fn class_name(i: usize) -> String {
    format!("class_{i:03}")
}

/// Text vectors are i.i.d. standard normal; each audio clip is the hidden map
/// applied to its class's text vector plus isotropic Gaussian noise. Values
/// are computed in `f64` from the stored `f32` text and then stored as `f32`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.d1 < 2 || spec.d2 < 2 {
        return Err(Error::invalid("synthetic dims must be >= 2"));
    }
    if spec.n_classes == 0 || spec.clips_per_class == 0 {
        return Err(Error::invalid(
            "need at least one class and one clip per class",
        ));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma must be >= 0"));
    }
    let mut map_rng = derived_rng(spec.seed, "synth/map");
    let map = match spec.map_kind {
        MapKind::Orthogonal => random_semi_orthogonal(&mut map_rng, spec.d2, spec.d1),
        MapKind::RandomLinear => {
            gaussian_matrix(&mut map_rng, spec.d2, spec.d1) / (spec.d1 as f64).sqrt()
        }
    };
    let mut text_rng = derived_rng(spec.seed, "synth/text");
    let mut noise_rng = derived_rng(spec.seed, "synth/noise");
    let mut text_groups = Vec::with_capacity(spec.n_classes);
    let mut audio_groups = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let t: Vec<f32> = (0..spec.d1)
            .map(|_| text_rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let clean = &map * DVector::from_iterator(spec.d1, t.iter().map(|&x| f64::from(x)));
        let clips = (0..spec.clips_per_class)
            .map(|_| {
                clean
                    .iter()
                    .map(|&x| {
                        (x + spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)) as f32
                    })
                    .collect()
            })
            .collect();
        text_groups.push(vec![t]);
        audio_groups.push(clips);
    }
    let registry = ClassRegistry::new((0..spec.n_classes).map(class_name).collect())?;
    let source = format!(
        "synthetic seed={} map={:?} noise_sigma={}",
        spec.seed, spec.map_kind, spec.noise_sigma
    );
    Ok(SynthData {
        text: EmbeddingSet::new(
            Modality::Text,
            spec.d1,
            registry.clone(),
            text_groups,
            source.clone(),
        )?,
        audio: EmbeddingSet::new(Modality::Audio, spec.d2, registry, audio_groups, source)?,
        map,
    })
}
