//! Full (text set × audio set × split × variant) experiment and its report
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{grid_search, GridSpec, RunOptions, RunResult, Variant};
use super::procrustes::{run_procrustes_probe, ProcrustesMetric};
use super::splits::{make_splits, SplitSpec};
use crate::embedstore::{load_set, ClassRegistry, EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::eval::{aggregate_runs, EvalReport, MeanSem, DEFAULT_KS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

/// Everything about a matrix run except where the inputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixPlan {
    pub seed: u64,
    pub n_splits: usize,
    pub train_fraction: f64,
    /// Probe class names; when absent the first `n_probe_classes` registry
    /// entries are used.
    pub probe_classes: Option<Vec<String>>,
    pub n_probe_classes: usize,
    pub grid: GridSpec,
    pub variants: Vec<Variant>,
    pub procrustes_metric: ProcrustesMetric,
    pub ks: Vec<usize>,
    pub control: bool,
}

impl Default for MatrixPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            n_splits: 5,
            train_fraction: 0.7,
            probe_classes: None,
            n_probe_classes: 100,
            grid: GridSpec::default(),
            variants: vec![Variant::Linear],
            procrustes_metric: ProcrustesMetric::Cosine,
            ks: DEFAULT_KS.to_vec(),
            control: true,
        }
    }
}

/// JSON configuration file of the `matrix` command. Relative paths resolve
/// against the directory containing the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub text: Vec<NamedPath>,
    pub audio: Vec<NamedPath>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub plan: MatrixPlan,
}

impl MatrixConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: MatrixConfig = serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.text.iter_mut().for_each(|n| resolve(&mut n.path));
        cfg.audio.iter_mut().for_each(|n| resolve(&mut n.path));
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn load_inputs(&self) -> Result<MatrixInputs> {
        let load =
            |list: &[NamedPath], modality: Modality| -> Result<Vec<(String, EmbeddingSet)>> {
                list.iter()
                    .map(|n| {
                        let set = load_set(&n.path)?;
                        if set.modality() != modality {
                            return Err(Error::invalid(format!(
                                "{} is a {} set, expected {modality}",
                                n.path.display(),
                                set.modality()
                            )));
                        }
                        Ok((n.name.clone(), set))
                    })
                    .collect()
            };
        Ok(MatrixInputs {
            text: load(&self.text, Modality::Text)?,
            audio: load(&self.audio, Modality::Audio)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MatrixInputs {
    pub text: Vec<(String, EmbeddingSet)>,
    pub audio: Vec<(String, EmbeddingSet)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl From<&SplitSpec> for SplitRecord {
    fn from(s: &SplitSpec) -> Self {
        Self {
            index: s.index,
            seed: s.seed,
            train: s.train_names().into_iter().map(str::to_owned).collect(),
            test: s.test_names().into_iter().map(str::to_owned).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRun {
    pub text_model: String,
    pub audio_model: String,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub text_model: String,
    pub audio_model: String,
    pub variant: Variant,
    pub acc_at: BTreeMap<usize, MeanSem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_acc_at: Option<BTreeMap<usize, MeanSem>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub plan: MatrixPlan,
    pub retrieval_classes: Vec<String>,
    pub probe_classes: Vec<String>,
    /// Candidate set used for every evaluation.
    pub retrieval: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub metadata: BundleMetadata,
    pub text_models: Vec<String>,
    pub audio_models: Vec<String>,
    pub splits: Vec<SplitRecord>,
    /// Ordered by (text model, audio model, split, variant).
    pub runs: Vec<PairRun>,
    /// Mean and standard error across splits; empty with a single split.
    pub aggregates: Vec<Aggregate>,
}

impl ResultBundle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn probe_ids(registry: &ClassRegistry, plan: &MatrixPlan) -> Result<Vec<usize>> {
    match &plan.probe_classes {
        Some(names) => names
            .iter()
            .map(|n| {
                registry.id_of(n).ok_or_else(|| Error::RegistryMismatch {
                    unmatched: vec![n.clone()],
                })
            })
            .collect(),
        None => {
            if plan.n_probe_classes == 0 || plan.n_probe_classes > registry.len() {
                return Err(Error::invalid(format!(
                    "n_probe_classes {} outside 1..={}",
                    plan.n_probe_classes,
                    registry.len()
                )));
            }
            Ok((0..plan.n_probe_classes).collect())
        }
    }
}

fn align_all(
    sets: &[(String, EmbeddingSet)],
    registry: &ClassRegistry,
) -> Result<Vec<(String, EmbeddingSet)>> {
    sets.iter()
        .map(|(name, set)| Ok((name.clone(), set.align_to(registry)?)))
        .collect()
}

fn check_names(kind: &str, sets: &[(String, EmbeddingSet)]) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::invalid(format!("no {kind} sets given")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (name, _) in sets {
        if !seen.insert(name) {
            return Err(Error::invalid(format!(
                "duplicate {kind} model name {name:?}"
            )));
        }
    }
    Ok(())
}

/// Runs every (text, audio, split, variant) combination on a pool of `jobs`
/// threads. The class registry comes from the first text set; every other set
/// must contain the same class names. Output order and content do not depend
/// on `jobs`.
pub fn run_matrix(inputs: &MatrixInputs, plan: &MatrixPlan, jobs: usize) -> Result<ResultBundle> {
    check_names("text", &inputs.text)?;
    check_names("audio", &inputs.audio)?;
    if plan.variants.is_empty() {
        return Err(Error::invalid("no variants requested"));
    }
    if plan.ks.is_empty() || plan.ks.contains(&0) {
        return Err(Error::invalid("ks must be non-empty positive integers"));
    }
    let registry = inputs.text[0].1.registry().clone();
    let text = align_all(&inputs.text, &registry)?;
    let audio = align_all(&inputs.audio, &registry)?;
    let probe = probe_ids(&registry, plan)?;
    let splits = make_splits(
        plan.seed,
        &registry,
        &probe,
        plan.n_splits,
        plan.train_fraction,
    )?;
    plan.grid.points(0)?;

    let opts = RunOptions {
        ks: plan.ks.clone(),
        control: plan.control,
        procrustes_metric: plan.procrustes_metric,
    };
    let mut tasks = Vec::new();
    for ti in 0..text.len() {
        for ai in 0..audio.len() {
            for split in &splits {
                for &variant in &plan.variants {
                    tasks.push((ti, ai, split, variant));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let runs: Vec<PairRun> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(ti, ai, split, variant)| {
                let (t, a) = (&text[ti].1, &audio[ai].1);
                let result = match variant {
                    Variant::Procrustes => run_procrustes_probe(split, t, a, &opts)?,
                    Variant::Linear | Variant::Nonlinear => {
                        let grid = plan.grid.with_nonlinear(variant == Variant::Nonlinear);
                        grid_search(&grid, split, t, a, &opts)?
                    }
                };
                Ok(PairRun {
                    text_model: text[ti].0.clone(),
                    audio_model: audio[ai].0.clone(),
                    result,
                })
            })
            .collect::<Result<_>>()
    })?;

    let mut aggregates = Vec::new();
    if splits.len() >= 2 {
        for (tname, _) in &text {
            for (aname, _) in &audio {
                for &variant in &plan.variants {
                    let group: Vec<&RunResult> = runs
                        .iter()
                        .filter(|r| {
                            &r.text_model == tname
                                && &r.audio_model == aname
                                && r.result.variant == variant
                        })
                        .map(|r| &r.result)
                        .collect();
                    let primary: Vec<EvalReport> =
                        group.iter().map(|r| strip_control(&r.eval)).collect();
                    let controls: Option<Vec<EvalReport>> =
                        group.iter().map(|r| r.control_eval().cloned()).collect();
                    aggregates.push(Aggregate {
                        text_model: tname.clone(),
                        audio_model: aname.clone(),
                        variant,
                        acc_at: aggregate_runs(&primary)?,
                        control_acc_at: controls.map(|c| aggregate_runs(&c)).transpose()?,
                    });
                }
            }
        }
    }

    Ok(ResultBundle {
        metadata: BundleMetadata {
            plan: plan.clone(),
            retrieval_classes: registry.names().to_vec(),
            probe_classes: probe.iter().map(|&c| registry.name(c).to_owned()).collect(),
            retrieval: format!("all {} registry classes", registry.len()),
        },
        text_models: text.iter().map(|(n, _)| n.clone()).collect(),
        audio_models: audio.iter().map(|(n, _)| n.clone()).collect(),
        splits: splits.iter().map(SplitRecord::from).collect(),
        runs,
        aggregates,
    })
}

fn strip_control(r: &EvalReport) -> EvalReport {
    EvalReport {
        control: None,
        ..r.clone()
    }
}

pub const RESULTS_FILE: &str = "results.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes `results.json`, `summary.csv` and `per_class.csv` into `dir`.
pub fn write_bundle(bundle: &ResultBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join(RESULTS_FILE);
    let mut json = serde_json::to_string_pretty(bundle).map_err(|source| Error::Json {
        path: results.clone(),
        source,
    })?;
    json.push('\n');
    fs::write(&results, json).map_err(|e| Error::io(&results, e))?;
    write_summary(bundle, &dir.join(SUMMARY_FILE))?;
    write_per_class(bundle, &dir.join(PER_CLASS_FILE))
}

/// Columns: `text_model,audio_model,split,variant,acc@K…,control_acc@K…`
/// with one accuracy column per configured K. Control cells are empty when
/// the control was not run.
pub fn write_summary(bundle: &ResultBundle, path: &Path) -> Result<()> {
    let ks = &bundle.metadata.plan.ks;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = ["text_model", "audio_model", "split", "variant"]
        .map(String::from)
        .to_vec();
    header.extend(ks.iter().map(|k| format!("acc@{k}")));
    header.extend(ks.iter().map(|k| format!("control_acc@{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for run in &bundle.runs {
        let r = &run.result;
        let mut row = vec![
            run.text_model.clone(),
            run.audio_model.clone(),
            r.split_index.to_string(),
            r.variant.to_string(),
        ];
        row.extend(ks.iter().map(|&k| fmt_acc(r.eval.acc(k))));
        row.extend(ks.iter().map(|&k| {
            r.control_eval()
                .map(|c| fmt_acc(c.acc(k)))
                .unwrap_or_default()
        }));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: `text_model,audio_model,split,variant,run,class,n_clips,acc@K…`
/// where `run` is `primary` or `control`; one row per held-out class.
pub fn write_per_class(bundle: &ResultBundle, path: &Path) -> Result<()> {
    let ks = &bundle.metadata.plan.ks;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = [
        "text_model",
        "audio_model",
        "split",
        "variant",
        "run",
        "class",
        "n_clips",
    ]
    .map(String::from)
    .to_vec();
    header.extend(ks.iter().map(|k| format!("acc@{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for run in &bundle.runs {
        let r = &run.result;
        let reports =
            std::iter::once(("primary", &r.eval)).chain(r.control_eval().map(|c| ("control", c)));
        for (label, report) in reports {
            for c in &report.per_class {
                let mut row = vec![
                    run.text_model.clone(),
                    run.audio_model.clone(),
                    r.split_index.to_string(),
                    r.variant.to_string(),
                    label.to_owned(),
                    c.name.clone(),
                    c.n_clips.to_string(),
                ];
                row.extend(
                    ks.iter()
                        .map(|k| c.acc_at.get(k).map(|&a| fmt_acc(a)).unwrap_or_default()),
                );
                w.write_record(&row).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
