use rand::Rng;

use crate::embedstore::{ClassId, EmbeddingSet};
use crate::error::{Error, Result};

/// Anything that can report how many clips a class offers for sampling.
pub trait ClipCounts {
    fn clip_count(&self, class: ClassId) -> usize;
}

impl ClipCounts for EmbeddingSet {
    fn clip_count(&self, class: ClassId) -> usize {
        self.n_clips(class)
    }
}

impl ClipCounts for [usize] {
    fn clip_count(&self, class: ClassId) -> usize {
        self[class]
    }
}

/// Draws `n` distinct classes uniformly from `train_classes \ {anchor}` and
/// one uniformly chosen clip of each.
pub fn sample_negatives<R, C>(
    rng: &mut R,
    train_classes: &[ClassId],
    anchor: ClassId,
    clips: &C,
    n: usize,
) -> Result<Vec<(ClassId, usize)>>
where
    R: Rng + ?Sized,
    C: ClipCounts + ?Sized,
{
    let mut others: Vec<ClassId> = train_classes
        .iter()
        .copied()
        .filter(|&c| c != anchor)
        .collect();
    if n > others.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n} distinct negative classes; at most {} are available",
            others.len()
        )));
    }
    // Partial Fisher-Yates.
    for i in 0..n {
        let j = rng.random_range(i..others.len());
        others.swap(i, j);
    }
    others
        .into_iter()
        .take(n)
        .map(|class| {
            let count = clips.clip_count(class);
            if count == 0 {
                return Err(Error::invalid(format!(
                    "class {class} has no clips to sample"
                )));
            }
            Ok((class, rng.random_range(0..count)))
        })
        .collect()
}

/// Like [`sample_negatives`] but allows `n` above the number of other
/// classes: draws proceed in rounds, each round a without-replacement pass
/// over the other classes, so classes repeat only once all have been used.
pub fn sample_negative_rounds<R, C>(
    rng: &mut R,
    train_classes: &[ClassId],
    anchor: ClassId,
    clips: &C,
    n: usize,
) -> Result<Vec<(ClassId, usize)>>
where
    R: Rng + ?Sized,
    C: ClipCounts + ?Sized,
{
    let available = train_classes.iter().filter(|&&c| c != anchor).count();
    if available == 0 && n > 0 {
        return Err(Error::invalid("no negative classes available"));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let take = (n - out.len()).min(available);
        out.extend(sample_negatives(rng, train_classes, anchor, clips, take)?);
    }
    Ok(out)
}
