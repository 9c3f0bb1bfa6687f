use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedstore::{ClassId, ClassRegistry};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// One train/test partition of the probe classes. Class ids index
/// `retrieval_registry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub index: usize,
    pub seed: u64,
    pub probe_classes: Vec<ClassId>,
    pub train: Vec<ClassId>,
    pub test: Vec<ClassId>,
    pub retrieval_registry: ClassRegistry,
}

impl SplitSpec {
    pub fn train_names(&self) -> Vec<&str> {
        self.train
            .iter()
            .map(|&c| self.retrieval_registry.name(c))
            .collect()
    }

    pub fn test_names(&self) -> Vec<&str> {
        self.test
            .iter()
            .map(|&c| self.retrieval_registry.name(c))
            .collect()
    }
}

/// A set of splits as written by the `split` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train_fraction: f64,
    pub splits: Vec<SplitSpec>,
}

/// Number of training classes for a fraction, rounding down. A tolerance
/// absorbs representation error such as `0.7 × 100 = 69.999…`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    (train_fraction * n as f64 + 1e-9).floor() as usize
}

/// `n_splits` independent seeded partitions. Split `i` shuffles the probe
/// classes with seed `derive_seed(seed, "split/i")`; train and test lists
/// are stored in ascending id order.
pub fn make_splits(
    seed: u64,
    registry: &ClassRegistry,
    probe_classes: &[ClassId],
    n_splits: usize,
    train_fraction: f64,
) -> Result<Vec<SplitSpec>> {
    if n_splits == 0 {
        return Err(Error::invalid("n_splits must be >= 1"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut seen = vec![false; registry.len()];
    for &c in probe_classes {
        registry.check_id(c)?;
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid(format!("probe class {c} listed twice")));
        }
    }
    let n_train = train_count(probe_classes.len(), train_fraction);
    if n_train == 0 || n_train == probe_classes.len() {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} of {} classes leaves an empty train or test set",
            probe_classes.len()
        )));
    }
    Ok((0..n_splits)
        .map(|index| {
            let split_seed = derive_seed(seed, &format!("split/{index}"));
            let mut order = probe_classes.to_vec();
            order.shuffle(&mut rng_from_seed(split_seed));
            let (train, test) = order.split_at(n_train);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            SplitSpec {
                index,
                seed: split_seed,
                probe_classes: probe_classes.to_vec(),
                train,
                test,
                retrieval_registry: registry.clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry(n: usize) -> ClassRegistry {
        ClassRegistry::new((0..n).map(|i| format!("s{i}")).collect()).unwrap()
    }

    #[test]
    fn seventy_thirty_partitions() {
        let reg = registry(144);
        let probe: Vec<usize> = (0..100).collect();
        let splits = make_splits(9, &reg, &probe, 5, 0.7).unwrap();
        assert_eq!(splits.len(), 5);
        let mut appearances = vec![0usize; 100];
        for s in &splits {
            assert_eq!((s.train.len(), s.test.len()), (70, 30));
            let mut all: Vec<_> = s.train.iter().chain(&s.test).copied().collect();
            all.sort();
            assert_eq!(all, probe);
            for &t in &s.test {
                appearances[t] += 1;
            }
        }
        let mean = appearances.iter().sum::<usize>() as f64 / 100.0;
        assert_eq!(mean, 1.5);
        assert_ne!(splits[0].test, splits[1].test);
    }

    #[test]
    fn deterministic_in_seed() {
        let reg = registry(20);
        let probe: Vec<usize> = (0..20).collect();
        assert_eq!(
            make_splits(3, &reg, &probe, 2, 0.5).unwrap(),
            make_splits(3, &reg, &probe, 2, 0.5).unwrap()
        );
        assert_ne!(
            make_splits(3, &reg, &probe, 1, 0.5).unwrap(),
            make_splits(4, &reg, &probe, 1, 0.5).unwrap()
        );
    }

    #[test]
    fn degenerate_fractions_are_rejected() {
        let reg = registry(3);
        assert!(make_splits(1, &reg, &[0, 1, 2], 1, 0.2).is_err());
        assert!(make_splits(1, &reg, &[0, 1, 2], 1, 1.0).is_err());
        assert!(make_splits(1, &reg, &[0, 1, 2], 0, 0.5).is_err());
        assert!(make_splits(1, &reg, &[0, 7], 1, 0.5).is_err());
    }
}
