use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use soundprobe::embedstore::{inspect, load_set, save_set, subset, EmbeddingSet, Modality};
use soundprobe::eval::{accuracy_at_k, EvalReport, RetrievalSet};
use soundprobe::experiment::{
    alignment_coordinates, compare_bundles, correlation_csv, grid_search, make_splits,
    run_procrustes_probe, synth_generate, write_bundle, GridSpec, MapKind, MatrixConfig,
    ProcrustesMetric, ResultBundle, RunOptions, SplitFile, SplitSpec, SynthSpec, TrainingSummary,
    Variant, RESULTS_FILE,
};
use soundprobe::probe::{train_probe, ProbeParams, TrainConfig};

use crate::{
    Command, CompareArgs, EvalArgs, GridArgs, MapArg, MatrixArgs, MetricArg, PairArgs,
    ProcrustesArgs, SplitArgs, SynthArgs, TrainArgs, VariantArg, VizArgs,
};

type CmdResult = Result<ExitCode, Box<dyn StdError>>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Validate { dir } => validate(&dir),
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Procrustes(a) => procrustes(a),
        Command::Matrix(a) => matrix(a),
        Command::Compare(a) => compare(a),
        Command::Viz(a) => viz(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Box<dyn StdError>> {
    ensure_parent(path)?;
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Box<dyn StdError>> {
    let raw = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&raw).map_err(|e| format!("parsing {}: {e}", path.display()))?)
}

fn ensure_parent(path: &Path) -> Result<(), Box<dyn StdError>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
    }
    Ok(())
}

fn validate(dir: &Path) -> CmdResult {
    let report = inspect(dir)?;
    if report.is_valid() {
        let modality = report.modality.map(|m| m.to_string()).unwrap_or_default();
        println!(
            "ok: {} {modality} set, {} classes, {} vectors, dim {}",
            dir.display(),
            report.n_classes,
            report.total_vectors,
            report.dim
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "invalid: {} ({} violations)",
            dir.display(),
            report.violations.len()
        );
        for v in &report.violations {
            println!("  {v}");
        }
        Ok(ExitCode::from(1))
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        seed: a.seed,
        n_classes: a.classes,
        clips_per_class: a.clips,
        d1: a.d1,
        d2: a.d2,
        noise_sigma: a.noise,
        map_kind: match a.map {
            MapArg::Orthogonal => MapKind::Orthogonal,
            MapArg::RandomLinear => MapKind::RandomLinear,
        },
    };
    let data = synth_generate(&spec)?;
    save_set(&data.text, a.out.join("text"))?;
    save_set(&data.audio, a.out.join("audio"))?;
    let rows: Vec<Vec<f64>> = data
        .map
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    write_json(
        &a.out.join("map.json"),
        &serde_json::json!({ "spec": spec, "map": rows }),
    )?;
    println!(
        "wrote {} classes x {} clips to {}",
        spec.n_classes,
        spec.clips_per_class,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn split(a: SplitArgs) -> CmdResult {
    let set = load_set(&a.registry)?;
    let registry = set.registry();
    let probe: Vec<usize> = match (&a.probe_file, a.probe_classes) {
        (Some(path), _) => {
            let raw =
                fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            raw.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|name| {
                    registry
                        .id_of(name)
                        .ok_or_else(|| format!("probe class {name:?} is not in the registry"))
                })
                .collect::<Result<_, _>>()?
        }
        (None, n) => {
            let n = n.unwrap_or(registry.len().min(100));
            if n == 0 || n > registry.len() {
                return Err(format!("--probe-classes {n} outside 1..={}", registry.len()).into());
            }
            (0..n).collect()
        }
    };
    let splits = make_splits(a.seed, registry, &probe, a.n, a.train_frac)?;
    write_json(
        &a.out,
        &SplitFile {
            seed: a.seed,
            train_fraction: a.train_frac,
            splits,
        },
    )?;
    println!(
        "wrote {} splits of {} probe classes to {}",
        a.n,
        probe.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

struct Pair {
    text: EmbeddingSet,
    audio: EmbeddingSet,
    split: SplitSpec,
}

fn load_pair(p: &PairArgs) -> Result<Pair, Box<dyn StdError>> {
    let file: SplitFile = read_json(&p.split)?;
    let split = file
        .splits
        .into_iter()
        .find(|s| s.index == p.index)
        .ok_or_else(|| format!("{} has no split {}", p.split.display(), p.index))?;
    let text = load_set(&p.text)?;
    let audio = load_set(&p.audio)?;
    if text.modality() != Modality::Text || audio.modality() != Modality::Audio {
        return Err("--text must be a text set and --audio an audio set".into());
    }
    Ok(Pair {
        text: text.align_to(&split.retrieval_registry)?,
        audio: audio.align_to(&split.retrieval_registry)?,
        split,
    })
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    split_index: usize,
    config: TrainConfig,
    training: TrainingSummary,
    params: ProbeParams,
}

fn train(a: TrainArgs) -> CmdResult {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        tau: a.tau,
        num_negatives: a.negatives,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        proj_dim: a.proj_dim,
        nonlinear: a.variant == VariantArg::Nonlinear,
        seed: a.seed,
        val_fraction: a.val_frac,
        patience: a.patience,
        include_positive: a.include_positive,
    };
    cfg.validate()?;
    let pair = load_pair(&a.pair)?;
    let text = subset(&pair.text, &pair.split.train)?;
    let audio = subset(&pair.audio, &pair.split.train)?;
    let classes: Vec<usize> = (0..text.n_classes()).collect();
    let report = train_probe(&cfg, &text, &audio, &classes)?;
    println!(
        "best epoch {} validation acc@1 {:.4}",
        report.best_epoch,
        report.best_val_metric()
    );
    write_json(
        &a.out,
        &ProbeFile {
            split_index: pair.split.index,
            config: cfg,
            training: TrainingSummary::from(&report),
            params: report.params,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn print_report(label: &str, r: &EvalReport) {
    let accs: Vec<String> = r
        .acc_at
        .iter()
        .map(|(k, v)| format!("acc@{k} {v:.4}"))
        .collect();
    println!("{label}: {} ({} clips)", accs.join(", "), r.total_clips);
}

fn write_per_class_csv(path: &Path, r: &EvalReport, ks: &[usize]) -> Result<(), Box<dyn StdError>> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["class".to_owned(), "n_clips".to_owned()];
    header.extend(ks.iter().map(|k| format!("acc@{k}")));
    w.write_record(&header)?;
    for c in &r.per_class {
        let mut row = vec![c.name.clone(), c.n_clips.to_string()];
        row.extend(ks.iter().map(|k| {
            c.acc_at
                .get(k)
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default()
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let probe: ProbeFile = read_json(&a.probe)?;
    let pair = load_pair(&a.pair)?;
    let retrieval = RetrievalSet::from_text_set(&pair.text)?;
    let report = accuracy_at_k(
        &probe.params,
        &retrieval,
        &pair.audio,
        &pair.split.test,
        &a.k,
    )?;
    print_report("held-out", &report);
    write_json(&a.out, &report)?;
    if let Some(path) = &a.per_class {
        write_per_class_csv(path, &report, &a.k)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn grid(a: GridArgs) -> CmdResult {
    let base = TrainConfig::default();
    let spec = GridSpec {
        learning_rates: a.lrs,
        taus: a.taus,
        num_negatives: a.negatives,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        proj_dim: a.proj_dim,
        nonlinear: a.variant == VariantArg::Nonlinear,
        val_fraction: a.val_frac,
        patience: a.patience,
        include_positive: base.include_positive,
    };
    spec.points(0)?;
    let pair = load_pair(&a.pair)?;
    let opts = RunOptions {
        ks: a.k,
        control: !a.no_control,
        ..RunOptions::default()
    };
    let result = grid_search(&spec, &pair.split, &pair.text, &pair.audio, &opts)?;
    println!(
        "chosen grid point {}",
        result.grid_index.unwrap_or_default()
    );
    print_report("held-out", &result.eval);
    if let Some(c) = result.control_eval() {
        print_report("control", c);
    }
    write_json(&a.out, &result)?;
    Ok(ExitCode::SUCCESS)
}

fn procrustes(a: ProcrustesArgs) -> CmdResult {
    let pair = load_pair(&a.pair)?;
    let opts = RunOptions {
        ks: a.k,
        control: !a.no_control,
        procrustes_metric: match a.metric {
            MetricArg::Cosine => ProcrustesMetric::Cosine,
            MetricArg::Euclidean => ProcrustesMetric::Euclidean,
        },
    };
    let result = run_procrustes_probe(&pair.split, &pair.text, &pair.audio, &opts)?;
    if let Some(p) = &result.procrustes {
        println!(
            "k {} (requested {}), residual {:.6e}",
            p.k, p.requested_k, p.residual
        );
    }
    print_report("held-out", &result.eval);
    if let Some(c) = result.control_eval() {
        print_report("control", c);
    }
    write_json(&a.out, &result)?;
    Ok(ExitCode::SUCCESS)
}

fn matrix(a: MatrixArgs) -> CmdResult {
    let cfg = MatrixConfig::load(&a.config)?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    let inputs = cfg.load_inputs()?;
    let bundle = soundprobe::experiment::run_matrix(&inputs, &cfg.plan, a.jobs)?;
    write_bundle(&bundle, &out)?;
    println!("{} runs written to {}", bundle.runs.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn results_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(RESULTS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn compare(a: CompareArgs) -> CmdResult {
    let bundles = a
        .results
        .iter()
        .map(|p| ResultBundle::load(results_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let variant = match a.variant {
        VariantArg::Linear => Variant::Linear,
        VariantArg::Nonlinear => Variant::Nonlinear,
    };
    let csv = correlation_csv(&compare_bundles(&bundles, variant, a.k)?);
    match &a.out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, csv).map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn viz(a: VizArgs) -> CmdResult {
    let text = load_set(&a.text)?;
    let audio = load_set(&a.audio)?;
    if text.modality() != Modality::Text || audio.modality() != Modality::Audio {
        return Err("--text must be a text set and --audio an audio set".into());
    }
    let out = alignment_coordinates(&text, &audio)?;
    ensure_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["class", "modality", "x", "y"])?;
    for p in &out.points {
        w.write_record([
            p.class.clone(),
            p.modality.to_string(),
            p.x.to_string(),
            p.y.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(path) = &a.metadata {
        write_json(path, &out.metadata)?;
    }
    println!(
        "{} points, aligned in {} dims (requested {})",
        out.points.len(),
        out.metadata.k,
        out.metadata.requested_k
    );
    Ok(ExitCode::SUCCESS)
}
