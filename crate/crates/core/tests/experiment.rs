use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use soundprobe::embedstore::{EmbeddingSet, Modality};
use soundprobe::eval::{aggregate_runs, correlation_matrix, EvalReport, RunAccuracies};
use soundprobe::experiment::{
    compare_bundles, fit_split_procrustes, grid_search, make_splits, run_matrix, synth_generate,
    GridSpec, MapKind, MatrixInputs, MatrixPlan, RunOptions, SynthData, SynthSpec, Variant,
};
use soundprobe::seed::rng_from_seed;
use soundprobe::Error;

fn synth(seed: u64, n: usize, clips: usize, d1: usize, d2: usize, noise: f64) -> SynthData {
    synth_generate(&SynthSpec {
        seed,
        n_classes: n,
        clips_per_class: clips,
        d1,
        d2,
        noise_sigma: noise,
        map_kind: MapKind::RandomLinear,
    })
    .unwrap()
}

fn tiny_grid() -> GridSpec {
    GridSpec {
        learning_rates: vec![1e-2],
        taus: vec![0.1],
        num_negatives: vec![4],
        batch_size: 16,
        max_epochs: 2,
        proj_dim: 8,
        ..GridSpec::default()
    }
}

fn tiny_plan(n_splits: usize) -> MatrixPlan {
    MatrixPlan {
        seed: 3,
        n_splits,
        n_probe_classes: 10,
        grid: tiny_grid(),
        ..MatrixPlan::default()
    }
}

fn inputs(n_text: usize, n_audio: usize) -> MatrixInputs {
    MatrixInputs {
        text: (0..n_text)
            .map(|i| {
                (
                    format!("t{i}"),
                    synth(100 + i as u64, 12, 4, 6, 5, 0.3).text,
                )
            })
            .collect(),
        audio: (0..n_audio)
            .map(|i| {
                (
                    format!("a{i}"),
                    synth(200 + i as u64, 12, 4, 6, 5, 0.3).audio,
                )
            })
            .collect(),
    }
}

#[test]
fn single_pair_matrix_equals_grid_search() {
    let inp = inputs(1, 1);
    let plan = tiny_plan(1);
    let bundle = run_matrix(&inp, &plan, 1).unwrap();
    assert_eq!(bundle.runs.len(), 1);
    assert!(bundle.aggregates.is_empty());
    let reg = inp.text[0].1.registry();
    let splits = make_splits(
        plan.seed,
        reg,
        &(0..10).collect::<Vec<_>>(),
        1,
        plan.train_fraction,
    )
    .unwrap();
    let direct = grid_search(
        &plan.grid,
        &splits[0],
        &inp.text[0].1,
        &inp.audio[0].1,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(bundle.runs[0].result, direct);
    assert_eq!(bundle.splits[0].train, splits[0].train_names());
}

#[test]
fn bundle_aggregates_match_per_pair_runs() {
    let inp = inputs(2, 2);
    let mut plan = tiny_plan(3);
    plan.variants = vec![Variant::Linear, Variant::Procrustes];
    let bundle = run_matrix(&inp, &plan, 2).unwrap();
    assert_eq!(bundle.runs.len(), 2 * 2 * 3 * 2);
    assert_eq!(bundle.aggregates.len(), 2 * 2 * 2);
    for agg in &bundle.aggregates {
        let group: Vec<_> = bundle
            .runs
            .iter()
            .filter(|r| {
                r.text_model == agg.text_model
                    && r.audio_model == agg.audio_model
                    && r.result.variant == agg.variant
            })
            .collect();
        assert_eq!(group.len(), 3);
        let primary: Vec<EvalReport> = group
            .iter()
            .map(|r| EvalReport {
                control: None,
                ..r.result.eval.clone()
            })
            .collect();
        let controls: Vec<EvalReport> = group
            .iter()
            .map(|r| r.result.control_eval().unwrap().clone())
            .collect();
        assert_eq!(agg.acc_at, aggregate_runs(&primary).unwrap());
        assert_eq!(
            agg.control_acc_at.as_ref().unwrap(),
            &aggregate_runs(&controls).unwrap()
        );
    }
}

#[test]
fn registry_mismatch_names_the_classes() {
    let mut inp = inputs(1, 1);
    let other = synth(9, 13, 2, 6, 5, 0.1).audio;
    inp.audio[0].1 = other;
    match run_matrix(&inp, &tiny_plan(1), 1) {
        Err(Error::RegistryMismatch { unmatched }) => {
            assert_eq!(unmatched, vec!["class_012".to_string()])
        }
        other => panic!(
            "expected a registry mismatch, got {:?}",
            other.map(|b| b.runs.len())
        ),
    }
}

#[test]
fn ten_by_four_by_five_runs_all_have_controls() {
    let inp = inputs(10, 4);
    let bundle = run_matrix(&inp, &tiny_plan(5), 1).unwrap();
    assert_eq!(bundle.runs.len(), 200);
    assert!(bundle
        .runs
        .iter()
        .all(|r| r.result.control_eval().is_some() && r.result.control.is_some()));
    assert_eq!(bundle.aggregates.len(), 40);
    let mut seen = BTreeMap::new();
    for r in &bundle.runs {
        *seen
            .entry((r.text_model.clone(), r.audio_model.clone()))
            .or_insert(0) += 1;
    }
    assert_eq!(seen.len(), 40);
    assert!(seen.values().all(|&n| n == 5));
}

/// Replaces every vector of the listed classes with fresh Gaussian noise.
fn scramble(set: &EmbeddingSet, classes: &[usize], seed: u64) -> EmbeddingSet {
    let mut rng = rng_from_seed(seed);
    let groups = (0..set.n_classes())
        .map(|c| {
            set.clips(c)
                .map(|v| {
                    if classes.contains(&c) {
                        v.iter()
                            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                            .collect()
                    } else {
                        v.to_vec()
                    }
                })
                .collect()
        })
        .collect();
    EmbeddingSet::new(
        set.modality(),
        set.dim(),
        set.registry().clone(),
        groups,
        "scrambled",
    )
    .unwrap()
}

#[test]
fn held_out_classes_do_not_influence_training() {
    let data = synth(11, 20, 6, 8, 6, 0.2);
    let splits = make_splits(
        5,
        data.text.registry(),
        &(0..16).collect::<Vec<_>>(),
        1,
        0.7,
    )
    .unwrap();
    let s = &splits[0];
    let outside: Vec<usize> = (0..20).filter(|c| !s.train.contains(c)).collect();
    let text2 = scramble(&data.text, &outside, 1);
    let audio2 = scramble(&data.audio, &outside, 2);
    assert_eq!(text2.modality(), Modality::Text);
    let grid = GridSpec {
        learning_rates: vec![1e-2, 1e-3],
        ..tiny_grid()
    };
    let opts = RunOptions {
        control: false,
        ..RunOptions::default()
    };
    let a = grid_search(&grid, s, &data.text, &data.audio, &opts).unwrap();
    let b = grid_search(&grid, s, &text2, &audio2, &opts).unwrap();
    assert_eq!(a.chosen_config, b.chosen_config);
    assert_eq!(a.grid_val_metrics, b.grid_val_metrics);
    assert_eq!(
        a.train_report.unwrap().params,
        b.train_report.unwrap().params
    );
    assert_ne!(a.eval, b.eval);

    let pa = fit_split_procrustes(s, &data.text, &data.audio).unwrap();
    let pb = fit_split_procrustes(s, &text2, &audio2).unwrap();
    assert_eq!(pa.q, pb.q);
    assert_eq!(pa.residual, pb.residual);
}

/// Enough held-out classes and noise that per-class accuracies vary.
fn compare_plan() -> MatrixPlan {
    MatrixPlan {
        n_probe_classes: 40,
        ..tiny_plan(2)
    }
}

#[test]
fn compare_matches_correlation_oracle() {
    let plan = compare_plan();
    let bundles: Vec<_> = (0..3)
        .map(|b| {
            let inp = MatrixInputs {
                text: vec![(format!("t{b}"), synth(300 + b, 40, 8, 6, 5, 1.0).text)],
                audio: vec![("a".to_string(), synth(400, 40, 8, 6, 5, 1.0).audio)],
            };
            run_matrix(&inp, &plan, 1).unwrap()
        })
        .collect();
    let got = compare_bundles(&bundles, Variant::Linear, 3).unwrap();
    assert_eq!(got.len(), 1);
    let models: Vec<String> = (0..3).map(|b| format!("b{b}:t{b}")).collect();
    assert_eq!(got[0].matrix.models, models);
    let runs: Vec<RunAccuracies> = (0..2)
        .map(|s| {
            (0..3)
                .map(|b| {
                    let run = bundles[b]
                        .runs
                        .iter()
                        .find(|r| r.result.split_index == s)
                        .unwrap();
                    (models[b].clone(), run.result.eval.per_class_acc(3))
                })
                .collect()
        })
        .collect();
    match correlation_matrix(&models, &runs) {
        Ok(want) => assert_eq!(got[0].matrix, want),
        Err(e) => panic!("oracle failed: {e}"),
    }
}

#[test]
fn compare_of_identical_models_is_all_ones() {
    let data = synth(20, 40, 8, 6, 5, 1.0);
    let inp = MatrixInputs {
        text: vec![
            ("x".to_string(), data.text.clone()),
            ("y".to_string(), data.text),
        ],
        audio: vec![("a".to_string(), data.audio)],
    };
    let bundle = run_matrix(&inp, &compare_plan(), 1).unwrap();
    // Identical text sets train identically, so per-class accuracies match.
    let got = compare_bundles(std::slice::from_ref(&bundle), Variant::Linear, 3).unwrap();
    assert_eq!(got[0].matrix.models, vec!["x", "y"]);
    assert_eq!(got[0].matrix.values, vec![vec![1.0; 2]; 2]);
    let pair = compare_bundles(&[bundle.clone(), bundle], Variant::Linear, 3).unwrap();
    assert_eq!(pair[0].matrix.models, vec!["b0:x", "b0:y", "b1:x", "b1:y"]);
    assert!(pair[0]
        .matrix
        .values
        .iter()
        .flatten()
        .all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn compare_rejects_bundles_from_different_splits() {
    let a = run_matrix(&inputs(1, 1), &tiny_plan(2), 1).unwrap();
    let b = run_matrix(
        &inputs(1, 1),
        &MatrixPlan {
            seed: 4,
            ..tiny_plan(2)
        },
        1,
    )
    .unwrap();
    assert!(compare_bundles(&[a, b], Variant::Linear, 3).is_err());
}
