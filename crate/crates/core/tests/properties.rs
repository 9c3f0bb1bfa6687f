use nalgebra::DMatrix;
use proptest::prelude::*;
use soundprobe::embedstore::{
    class_means, load_set, save_set, subset, ClassRegistry, EmbeddingSet, Modality,
};
use soundprobe::eval::{
    accuracy_at_k, fractional_ranks, invert_permutation, permuted_control, retrieve_topk,
    spearman_rho, RetrievalSet,
};
use soundprobe::linalg::{cosine, pca_fit, pca_transform, procrustes_fit, random_orthogonal};
use soundprobe::probe::ProbeParams;
use soundprobe::seed::rng_from_seed;

fn finite() -> impl Strategy<Value = f32> {
    -1e3f32..1e3f32
}

/// Audio set with `n` classes of 1..=4 clips in `dim` dims.
fn audio_set(n: usize, dim: usize) -> impl Strategy<Value = EmbeddingSet> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(finite(), dim), 1..=4),
        n,
    )
    .prop_map(move |groups| {
        let reg = ClassRegistry::new((0..n).map(|i| format!("c{i}")).collect()).unwrap();
        EmbeddingSet::new(Modality::Audio, dim, reg, groups, "prop").unwrap()
    })
}

fn text_set(n: usize, dim: usize) -> impl Strategy<Value = EmbeddingSet> {
    prop::collection::vec(prop::collection::vec(finite(), dim), n).prop_map(move |vs| {
        let reg = ClassRegistry::new((0..n).map(|i| format!("c{i}")).collect()).unwrap();
        EmbeddingSet::new(
            Modality::Text,
            dim,
            reg,
            vs.into_iter().map(|v| vec![v]).collect(),
            "prop",
        )
        .unwrap()
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_load_round_trip_is_exact(set in (1usize..6, 1usize..5).prop_flat_map(|(n, d)| audio_set(n, d))) {
        let dir = tempfile::tempdir().unwrap();
        save_set(&set, dir.path().join("a")).unwrap();
        let back = load_set(dir.path().join("a")).unwrap();
        prop_assert_eq!(&back, &set);
        save_set(&back, dir.path().join("b")).unwrap();
        for f in ["manifest.json", "data.bin"] {
            let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn class_means_follow_class_reordering(
        (set, perm) in (2usize..7).prop_flat_map(|n| (audio_set(n, 3), permutation(n)))
    ) {
        let names: Vec<String> = perm.iter().map(|&i| set.registry().name(i).to_owned()).collect();
        let reordered = set.align_to(&ClassRegistry::new(names).unwrap()).unwrap();
        let a = class_means(&set).unwrap();
        let b = class_means(&reordered).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(a.mean(old), b.mean(new));
        }
    }

    #[test]
    fn nested_subsets_compose(
        (set, outer, inner) in (3usize..8).prop_flat_map(|n| {
            (audio_set(n, 2), prop::sample::subsequence((0..n).collect::<Vec<_>>(), 2..=n))
                .prop_flat_map(|(s, outer)| {
                    let m = outer.len();
                    (Just(s), Just(outer), prop::sample::subsequence((0..m).collect::<Vec<_>>(), 1..=m))
                })
        })
    ) {
        let direct: Vec<usize> = inner.iter().map(|&i| outer[i]).collect();
        let nested = subset(&subset(&set, &outer).unwrap(), &inner).unwrap();
        prop_assert_eq!(nested, subset(&set, &direct).unwrap());
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        (u, v) in (1usize..10).prop_flat_map(|d| (
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-5.0f64..5.0, d),
        ))
    ) {
        if let (Ok(a), Ok(b)) = (cosine(&u, &v), cosine(&v, &u)) {
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn procrustes_residual_invariant_to_shared_rotation(
        a in matrix(12, 4), b in matrix(12, 4), seed in any::<u64>()
    ) {
        let r = random_orthogonal(&mut rng_from_seed(seed), 4);
        let base = procrustes_fit(&a, &b).unwrap().residual;
        let rotated = procrustes_fit(&(&a * &r), &(&b * &r)).unwrap().residual;
        prop_assert!((base - rotated).abs() <= 1e-8 * base.max(1.0), "{} vs {}", base, rotated);
    }

    #[test]
    fn full_rank_pca_preserves_distances(x in matrix(9, 4)) {
        let k = 4;
        let Ok(model) = pca_fit(&x, k) else { return Ok(()) };
        let z = pca_transform(&model, &x).unwrap();
        for i in 0..9 {
            for j in 0..i {
                let dx = (x.row(i) - x.row(j)).norm();
                let dz = (z.row(i) - z.row(j)).norm();
                prop_assert!((dx - dz).abs() <= 1e-8 * dx.max(1.0));
            }
        }
    }

    #[test]
    fn spearman_is_symmetric_and_bounded(
        (a, b) in (2usize..12).prop_flat_map(|n| (
            prop::collection::vec(0u8..5, n),
            prop::collection::vec(0u8..5, n),
        ))
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        match (spearman_rho(&a, &b), spearman_rho(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric error"),
        }
        let r = fractional_ranks(&a);
        let n = a.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }
}

fn probe(seed: u64, d: usize, d1: usize, d2: usize) -> ProbeParams {
    let mut rng = rng_from_seed(seed);
    ProbeParams::new(
        soundprobe::linalg::gaussian_matrix(&mut rng, d, d1),
        soundprobe::linalg::gaussian_matrix(&mut rng, d, d2),
        false,
        0.1,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accuracy_is_invariant_to_relabeling(
        (text, audio, perm, seed) in (4usize..9).prop_flat_map(|n| (text_set(n, 3), audio_set(n, 3), permutation(n), any::<u64>()))
    ) {
        let params = probe(seed, 4, 3, 3);
        let n = text.n_classes();
        let test: Vec<usize> = (0..n).collect();
        let ks = [1, 3];
        let before = accuracy_at_k(&params, &RetrievalSet::from_text_set(&text).unwrap(), &audio, &test, &ks).unwrap();
        // Relabel: new id i is old class perm[i], names kept with their vectors.
        let names: Vec<String> = perm.iter().map(|&i| text.registry().name(i).to_owned()).collect();
        let reg = ClassRegistry::new(names).unwrap();
        let text2 = text.align_to(&reg).unwrap();
        let audio2 = audio.align_to(&reg).unwrap();
        let after = accuracy_at_k(&params, &RetrievalSet::from_text_set(&text2).unwrap(), &audio2, &test, &ks).unwrap();
        // Ties break by id, so only compare when there are none.
        let mut scores_tied = false;
        let idx = soundprobe::eval::ProbeIndex::new(&params, &RetrievalSet::from_text_set(&text).unwrap()).unwrap();
        let mut s = Vec::new();
        for c in 0..n {
            for u in audio.clips(c) {
                let u: Vec<f64> = u.iter().map(|&x| f64::from(x)).collect();
                soundprobe::eval::ClassScorer::score(&idx, &u, &mut s).unwrap();
                let mut sorted = s.clone();
                sorted.sort_by(f64::total_cmp);
                scores_tied |= sorted.windows(2).any(|w| w[0] == w[1]);
            }
        }
        if !scores_tied {
            prop_assert_eq!(&before.acc_at, &after.acc_at);
            prop_assert_eq!(before.per_class_acc(3), after.per_class_acc(3));
        }
        prop_assert!(before.acc(1) <= before.acc(3));
    }

    #[test]
    fn topk_ignores_positive_rescaling(
        (text, scale, which, seed) in (4usize..8).prop_flat_map(|n| (text_set(n, 3), 0.01f64..100.0, 0..n, any::<u64>()))
    ) {
        let params = probe(seed, 5, 3, 2);
        let r = RetrievalSet::from_text_set(&text).unwrap();
        let mut scaled = r.texts().clone();
        scaled.row_mut(which).scale_mut(scale);
        let r2 = RetrievalSet::new(r.registry().clone(), scaled).unwrap();
        let u = [0.3, -1.2];
        let k = text.n_classes();
        // Cosine of a rescaled vector can differ in the last bit; allow only
        // swaps between near-equal scores.
        let a = retrieve_topk(&params, &r, &u, k).unwrap();
        let b = retrieve_topk(&params, &r2, &u, k).unwrap();
        if a != b {
            let idx = soundprobe::eval::ProbeIndex::new(&params, &r).unwrap();
            let mut s = Vec::new();
            soundprobe::eval::ClassScorer::score(&idx, &u, &mut s).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((s[*x] - s[*y]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuted_control_inverts_exactly(
        (text, seed) in (2usize..10).prop_flat_map(|n| (text_set(n, 3), any::<u64>()))
    ) {
        let r = RetrievalSet::from_text_set(&text).unwrap();
        let permuted = permuted_control(seed, &r);
        let perm = soundprobe::eval::control_permutation(seed, r.len());
        let restored = permuted.permuted(&invert_permutation(&perm)).unwrap();
        prop_assert_eq!(restored, r);
    }
}
