use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

/// Ranks starting at 1; tied values share the average of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least 2 observations"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid("spearman inputs contain NaN"));
    }
    pearson(&fractional_ranks(a), &fractional_ranks(b))
        .ok_or_else(|| Error::invalid("spearman undefined: an input has zero rank variance"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub models: Vec<String>,
    /// `values[i][j]` is the run-averaged Spearman rho of models i and j.
    pub values: Vec<Vec<f64>>,
    pub n_runs: usize,
}

/// Per-class accuracies of each model in one run, keyed by class name.
pub type RunAccuracies = BTreeMap<String, BTreeMap<String, f64>>;

/// Pairwise Spearman correlation of per-class accuracies computed per run on
/// the shared classes, then averaged over runs. The diagonal is 1.
pub fn correlation_matrix(models: &[String], runs: &[RunAccuracies]) -> Result<CorrelationMatrix> {
    if runs.is_empty() {
        return Err(Error::invalid("correlation needs at least one run"));
    }
    let m = models.len();
    let mut sums = vec![vec![0.0; m]; m];
    for (r, run) in runs.iter().enumerate() {
        let tables: Vec<&BTreeMap<String, f64>> = models
            .iter()
            .map(|name| {
                run.get(name).ok_or_else(|| {
                    Error::invalid(format!("run {r} has no accuracies for model {name:?}"))
                })
            })
            .collect::<Result<_>>()?;
        let classes: Vec<&String> = match tables.first() {
            Some(t) => t.keys().collect(),
            None => Vec::new(),
        };
        for (name, t) in models.iter().zip(&tables) {
            if t.keys().ne(classes.iter().copied()) {
                return Err(Error::invalid(format!(
                    "run {r}: model {name:?} was evaluated on a different class set"
                )));
            }
        }
        let vectors: Vec<Vec<f64>> = tables
            .iter()
            .map(|t| t.values().copied().collect())
            .collect();
        for i in 0..m {
            for j in (i + 1)..m {
                let rho = spearman_rho(&vectors[i], &vectors[j]).map_err(|e| {
                    Error::invalid(format!(
                        "run {r}, models {:?} vs {:?}: {e}",
                        models[i], models[j]
                    ))
                })?;
                sums[i][j] += rho;
            }
        }
    }
    let n = runs.len() as f64;
    let mut values = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            values[i][j] = sums[i][j] / n;
            values[j][i] = values[i][j];
        }
    }
    Ok(CorrelationMatrix {
        models: models.to_vec(),
        values,
        n_runs: runs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    /// Sample standard deviation over √n.
    pub sem: f64,
    pub n: usize,
}

pub fn mean_sem(values: &[f64]) -> Result<MeanSem> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "standard error needs at least 2 runs, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanSem {
        mean,
        sem: (var / n as f64).sqrt(),
        n,
    })
}

/// Mean and standard error of accuracy@K across runs, for every K that all
/// reports share.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<BTreeMap<usize, MeanSem>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no reports to aggregate"))?;
    first
        .acc_at
        .keys()
        .filter(|k| reports.iter().all(|r| r.acc_at.contains_key(k)))
        .map(|&k| {
            let values: Vec<f64> = reports.iter().map(|r| r.acc_at[&k]).collect();
            mean_sem(&values).map(|m| (k, m))
        })
        .collect()
}
