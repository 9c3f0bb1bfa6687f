use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedstore::{check_permutation, ClassId, ClassRegistry, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::probe::{unit_projections, ProbeParams};
use crate::seed::rng_from_seed;

/// Candidate classes for retrieval with one text vector each.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    registry: ClassRegistry,
    /// Row `c` is the text vector of class `c`.
    texts: DMatrix<f64>,
}

impl RetrievalSet {
    pub fn new(registry: ClassRegistry, texts: DMatrix<f64>) -> Result<Self> {
        if texts.nrows() != registry.len() {
            return Err(Error::DimensionMismatch {
                context: "retrieval text rows",
                expected: registry.len(),
                actual: texts.nrows(),
            });
        }
        Ok(Self { registry, texts })
    }

    pub fn from_text_set(text: &EmbeddingSet) -> Result<Self> {
        if text.modality() != Modality::Text {
            return Err(Error::invalid("retrieval set needs a text embedding set"));
        }
        Self::new(text.registry().clone(), text.first_vectors_matrix())
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn texts(&self) -> &DMatrix<f64> {
        &self.texts
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    /// Class `i` of the result gets the text vector of class `permutation[i]`.
    pub fn permuted(&self, permutation: &[ClassId]) -> Result<Self> {
        check_permutation(permutation, self.len())?;
        let texts = DMatrix::from_fn(self.texts.nrows(), self.texts.ncols(), |r, c| {
            self.texts[(permutation[r], c)]
        });
        Self::new(self.registry.clone(), texts)
    }
}

/// Scores a query clip against every class of a fixed candidate set.
pub trait ClassScorer {
    fn n_classes(&self) -> usize;
    fn query_dim(&self) -> usize;
    /// Writes one score per class into `out`; larger is more similar.
    fn score(&self, clip: &[f64], out: &mut Vec<f64>) -> Result<()>;
}

/// A trained probe with all candidate texts projected once.
pub struct ProbeIndex<'a> {
    params: &'a ProbeParams,
    /// `d × n_classes` unit projections.
    texts: DMatrix<f64>,
}

impl<'a> ProbeIndex<'a> {
    pub fn new(params: &'a ProbeParams, retrieval: &RetrievalSet) -> Result<Self> {
        if retrieval.texts.ncols() != params.text_dim() {
            return Err(Error::DimensionMismatch {
                context: "retrieval text dim",
                expected: params.text_dim(),
                actual: retrieval.texts.ncols(),
            });
        }
        let texts = unit_projections(
            &params.w_text,
            &retrieval.texts.transpose(),
            params.nonlinear,
        );
        Ok(Self { params, texts })
    }
}

impl ClassScorer for ProbeIndex<'_> {
    fn n_classes(&self) -> usize {
        self.texts.ncols()
    }

    fn query_dim(&self) -> usize {
        self.params.audio_dim()
    }

    fn score(&self, clip: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let z = self.params.project_audio(clip)?;
        let n = crate::linalg::norm(&z);
        out.clear();
        if n == 0.0 {
            out.resize(self.n_classes(), 0.0);
            return Ok(());
        }
        let z: Vec<f64> = z.iter().map(|v| v / n).collect();
        out.extend(
            self.texts
                .column_iter()
                .map(|t| dot(t.as_slice(), &z).clamp(-1.0, 1.0)),
        );
        Ok(())
    }
}

/// Zero-based rank of `target` under descending score, ascending id on ties.
pub fn rank_of(scores: &[f64], target: ClassId) -> usize {
    let s = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < target))
        .count()
}

/// Class ids of the `k` highest scores, descending, ascending id on ties.
pub fn top_k(scores: &[f64], k: usize) -> Vec<ClassId> {
    let mut ids: Vec<ClassId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::invalid(format!("K = {k} outside 1..={n}")))
    } else {
        Ok(())
    }
}

pub fn retrieve_topk(
    params: &ProbeParams,
    retrieval: &RetrievalSet,
    clip: &[f64],
    k: usize,
) -> Result<Vec<ClassId>> {
    check_k(k, retrieval.len())?;
    let index = ProbeIndex::new(params, retrieval)?;
    let mut scores = Vec::new();
    index.score(clip, &mut scores)?;
    Ok(top_k(&scores, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: ClassId,
    pub name: String,
    pub n_clips: usize,
    pub hits: BTreeMap<usize, usize>,
    pub acc_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Overall accuracy@K: total hits / total clips.
    pub acc_at: BTreeMap<usize, f64>,
    pub per_class: Vec<ClassAccuracy>,
    pub n_retrieval_classes: usize,
    pub total_clips: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Box<EvalReport>>,
}

impl EvalReport {
    pub fn acc(&self, k: usize) -> f64 {
        self.acc_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// Per-class accuracy@K keyed by class name.
    pub fn per_class_acc(&self, k: usize) -> BTreeMap<String, f64> {
        self.per_class
            .iter()
            .filter_map(|c| c.acc_at.get(&k).map(|&a| (c.name.clone(), a)))
            .collect()
    }
}

/// Scores every clip of every test class and reports hits at each K. Test
/// classes are ids in the scorer's candidate registry; audio classes are
/// matched by name.
pub fn evaluate_scorer<S: ClassScorer + ?Sized>(
    scorer: &S,
    registry: &ClassRegistry,
    audio: &EmbeddingSet,
    test_classes: &[ClassId],
    ks: &[usize],
) -> Result<EvalReport> {
    if scorer.n_classes() != registry.len() {
        return Err(Error::DimensionMismatch {
            context: "scorer classes vs registry",
            expected: registry.len(),
            actual: scorer.n_classes(),
        });
    }
    if audio.dim() != scorer.query_dim() {
        return Err(Error::DimensionMismatch {
            context: "audio dim",
            expected: scorer.query_dim(),
            actual: audio.dim(),
        });
    }
    if ks.is_empty() {
        return Err(Error::invalid("at least one K is required"));
    }
    for &k in ks {
        check_k(k, registry.len())?;
    }
    let audio_index = audio.registry().index();
    let mut scores = Vec::with_capacity(registry.len());
    let mut per_class = Vec::with_capacity(test_classes.len());
    let mut total_hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut total_clips = 0;
    for &class in test_classes {
        registry.check_id(class)?;
        let name = registry.name(class);
        let audio_class = *audio_index
            .get(name)
            .ok_or_else(|| Error::invalid(format!("test class {name:?} has no audio clips")))?;
        let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
        let n_clips = audio.n_clips(audio_class);
        for clip in 0..n_clips {
            scorer.score(&audio.clip_f64(audio_class, clip), &mut scores)?;
            let rank = rank_of(&scores, class);
            for (&k, h) in hits.iter_mut() {
                *h += usize::from(rank < k);
            }
        }
        for (k, h) in &hits {
            *total_hits.get_mut(k).expect("same keys") += h;
        }
        total_clips += n_clips;
        per_class.push(ClassAccuracy {
            class_id: class,
            name: name.to_owned(),
            n_clips,
            acc_at: hits
                .iter()
                .map(|(&k, &h)| (k, h as f64 / n_clips as f64))
                .collect(),
            hits,
        });
    }
    if total_clips == 0 {
        return Err(Error::invalid("no test clips to evaluate"));
    }
    Ok(EvalReport {
        acc_at: total_hits
            .iter()
            .map(|(&k, &h)| (k, h as f64 / total_clips as f64))
            .collect(),
        per_class,
        n_retrieval_classes: registry.len(),
        total_clips,
        control: None,
    })
}

/// Accuracy@K of a contrastive probe over the full retrieval set.
pub fn accuracy_at_k(
    params: &ProbeParams,
    retrieval: &RetrievalSet,
    audio: &EmbeddingSet,
    test_classes: &[ClassId],
    ks: &[usize],
) -> Result<EvalReport> {
    let index = ProbeIndex::new(params, retrieval)?;
    evaluate_scorer(&index, retrieval.registry(), audio, test_classes, ks)
}

/// Uniformly random permutation of `0..n` seeded by `seed`.
pub fn control_permutation(seed: u64, n: usize) -> Vec<ClassId> {
    let mut perm: Vec<ClassId> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    perm
}

/// The retrieval set with its class → text assignment shuffled.
pub fn permuted_control(seed: u64, retrieval: &RetrievalSet) -> RetrievalSet {
    retrieval
        .permuted(&control_permutation(seed, retrieval.len()))
        .expect("generated permutation is valid")
}

pub fn invert_permutation(perm: &[ClassId]) -> Vec<ClassId> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
