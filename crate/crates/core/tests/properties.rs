use active_core::dataio::{generate_mask, generate_synthetic, load_dataset, normalize, percent_count, save_dataset};
use active_core::eval::{accuracy, ari, kmeans, mean_imputation, nmi, nrmse};
use active_core::graph::{build_initial_graphs, build_learned_graphs, graph_error, knn_available, EdgeOrigin};
use active_core::{MaskRegime, MaskSpec, SyntheticSpec};
use active_testkit::{from_rows, mask_rows, oracles, random_dataset, rng};
use ndarray::Array2;
use proptest::prelude::*;

fn regime() -> impl Strategy<Value = MaskRegime> {
    prop_oneof![Just(MaskRegime::PerViewRemoval), Just(MaskRegime::TwoViewPaired)]
}

fn column_sums(mask: &Array2<bool>) -> Vec<usize> {
    mask.columns().into_iter().map(|c| c.iter().filter(|&&b| b).count()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_keep_every_sample_somewhere(
        n in 2usize..120,
        views in 1usize..5,
        p in 0.0f64..=100.0,
        regime in regime(),
        seed in any::<u64>(),
    ) {
        let views = if regime == MaskRegime::TwoViewPaired { 2 } else { views };
        let spec = MaskSpec { regime, p, seed };
        let Ok(mask) = generate_mask(n, views, &spec) else {
            // Only per-view removal can be infeasible.
            prop_assert_eq!(regime, MaskRegime::PerViewRemoval);
            prop_assert!(percent_count(n, p) * views > n * (views - 1));
            return Ok(());
        };
        prop_assert_eq!(mask.dim(), (n, views));
        for row in mask.rows() {
            prop_assert!(row.iter().any(|&b| b));
        }
        let count = percent_count(n, p);
        match regime {
            MaskRegime::PerViewRemoval => {
                for s in column_sums(&mask) {
                    prop_assert_eq!(s, n - count);
                }
            }
            MaskRegime::TwoViewPaired => {
                let both = mask.rows().into_iter().filter(|r| r[0] && r[1]).count();
                prop_assert_eq!(both, count);
            }
        }
        prop_assert_eq!(generate_mask(n, views, &spec).unwrap(), mask);
    }

    #[test]
    fn initial_graphs_respect_availability(
        seed in any::<u64>(),
        n in 6usize..30,
        views in 2usize..4,
        k in 1usize..6,
        missing in 0.0f64..0.5,
        grid in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let dims: Vec<usize> = (0..views).map(|v| 1 + v).collect();
        let ds = random_dataset(&mut r, n, &dims, missing, grid);
        let mask = mask_rows(&ds.mask);
        let rows: Vec<_> = ds
            .views
            .iter()
            .map(|x| x.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .collect();
        let unreachable = (0..views).any(|v| {
            (0..n).any(|i| !mask[i][v] && oracles::transfer(&rows, &mask, v, i, k).is_empty())
        });
        let g = match build_initial_graphs(&ds, k) {
            Ok(g) => g,
            Err(e) => {
                prop_assert!(unreachable, "unexpected error {e}");
                return Ok(());
            }
        };
        prop_assert!(!unreachable);
        prop_assert!(g.check_invariants(Some(&ds.mask)).is_ok());
        for v in 0..views {
            let avail = ds.availability(v);
            for i in 0..n {
                let list = g.neighbors(v, i);
                if avail[i] {
                    prop_assert_eq!(g.origin(v, i), EdgeOrigin::Native);
                    prop_assert_eq!(list.len(), k.min(ds.available_count(v) - 1));
                } else {
                    prop_assert_eq!(g.origin(v, i), EdgeOrigin::Transferred);
                    prop_assert_eq!(list.to_vec(), oracles::transfer(&rows, &mask, v, i, k));
                }
            }
        }
        prop_assert_eq!(build_initial_graphs(&ds, k).unwrap(), g);
    }

    #[test]
    fn transferred_lists_come_from_source_lists(
        seed in any::<u64>(),
        n in 8usize..30,
        k in 1usize..5,
    ) {
        let mut r = rng(seed);
        let ds = random_dataset(&mut r, n, &[2, 3, 2], 0.4, false);
        let g = build_initial_graphs(&ds, k);
        prop_assume!(g.is_ok());
        let g = g.unwrap();
        for v in 0..3 {
            for i in (0..n).filter(|&i| !ds.is_available(i, v)) {
                let sources: Vec<usize> = (0..3).filter(|&w| w != v && ds.is_available(i, w)).collect();
                let pool: Vec<usize> = sources.iter().flat_map(|&w| g.neighbors(w, i).to_vec()).collect();
                let list = g.neighbors(v, i);
                // Without the fallback, every entry appears in some source list.
                if pool.iter().any(|&j| ds.is_available(j, v)) {
                    prop_assert!(list.iter().all(|j| pool.contains(j)));
                } else {
                    prop_assert_eq!(list.len(), 1);
                }
            }
        }
    }

    #[test]
    fn shorter_lists_are_prefixes(seed in any::<u64>(), n in 4usize..25, k in 1usize..6) {
        let mut r = rng(seed);
        let x = from_rows(&active_testkit::grid_rows(&mut r, n, 2, 3));
        let avail = vec![true; n];
        for i in 0..n {
            let short = knn_available(x.view(), &avail, i, k).unwrap();
            let long = knn_available(x.view(), &avail, i, k + 1).unwrap();
            prop_assert_eq!(&long[..short.len()], &short[..]);
        }
    }

    #[test]
    fn learned_graphs_cover_all_rows(seed in any::<u64>(), n in 3usize..30, k in 1usize..6) {
        let mut r = rng(seed);
        let z = from_rows(&active_testkit::uniform_rows(&mut r, n, 3));
        let g = build_learned_graphs(&[z.clone(), z], k).unwrap();
        prop_assert!(g.all_native());
        prop_assert!(g.check_invariants(None).is_ok());
        for i in 0..n {
            prop_assert_eq!(g.neighbors(0, i).len(), k.min(n - 1));
            prop_assert_eq!(g.neighbors(0, i), g.neighbors(1, i));
        }
    }

    #[test]
    fn metrics_are_bounded_and_symmetric(
        labels in prop::collection::vec((0usize..4, 0usize..4), 2..60),
        relabel in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
        let acc = accuracy(&a, &b).unwrap();
        let distinct = |l: &[usize]| l.iter().copied().collect::<std::collections::BTreeSet<_>>().len();
        let used = distinct(&a).max(distinct(&b));
        prop_assert!(acc <= 1.0 && acc >= 1.0 / used as f64 - 1e-12);
        let m = nmi(&a, &b).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m));
        prop_assert!((m - nmi(&b, &a).unwrap()).abs() < 1e-12);
        let x = ari(&a, &b).unwrap();
        prop_assert!(x <= 1.0 + 1e-12);
        prop_assert!((x - ari(&b, &a).unwrap()).abs() < 1e-12);
        let renamed: Vec<usize> = a.iter().map(|&l| relabel[l]).collect();
        prop_assert!((accuracy(&renamed, &b).unwrap() - acc).abs() < 1e-12);
        prop_assert!((nmi(&renamed, &b).unwrap() - m).abs() < 1e-12);
        prop_assert!((ari(&renamed, &b).unwrap() - x).abs() < 1e-12);
        prop_assert!((accuracy(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }
}

fn blob_spec(p: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_samples: 300,
        num_clusters: 3,
        dims: vec![10, 10],
        separation: 6.0,
        mask: MaskSpec { regime: MaskRegime::TwoViewPaired, p, seed },
    }
}

#[test]
fn per_view_removal_column_sums_for_three_views() {
    for seed in 0..5 {
        let spec = MaskSpec { regime: MaskRegime::PerViewRemoval, p: 30.0, seed };
        let mask = generate_mask(100, 3, &spec).unwrap();
        assert_eq!(column_sums(&mask), vec![70, 70, 70]);
    }
}

#[test]
fn small_masks() {
    let spec = MaskSpec { regime: MaskRegime::TwoViewPaired, p: 50.0, seed: 3 };
    let mask = generate_mask(4, 2, &spec).unwrap();
    let both = mask.rows().into_iter().filter(|r| r[0] && r[1]).count();
    assert_eq!(both, 2);
    let spec = MaskSpec { regime: MaskRegime::PerViewRemoval, p: 50.0, seed: 3 };
    let mask = generate_mask(4, 2, &spec).unwrap();
    assert_eq!(column_sums(&mask), vec![2, 2]);
    assert!(mask.rows().into_iter().all(|r| r[0] != r[1]));
    let spec = MaskSpec { regime: MaskRegime::PerViewRemoval, p: 75.0, seed: 3 };
    assert!(generate_mask(4, 2, &spec).is_err());
}

#[test]
fn per_view_kmeans_recovers_separated_blobs() {
    for seed in 0..3 {
        let ds = generate_synthetic(&blob_spec(100.0, seed)).unwrap();
        let truth = ds.labels.as_ref().unwrap();
        for v in 0..2 {
            let km = kmeans(ds.views[v].view(), 3, seed, 10).unwrap();
            let acc = accuracy(&km.labels, truth).unwrap();
            assert!(acc >= 0.95, "seed {seed} view {v}: acc {acc}");
        }
    }
}

#[test]
fn synthetic_mask_and_truth_agree() {
    let ds = generate_synthetic(&blob_spec(30.0, 8)).unwrap();
    let truth = ds.ground_truth_views.as_ref().unwrap();
    let both = ds.mask.rows().into_iter().filter(|r| r[0] && r[1]).count();
    assert_eq!(both, 90);
    assert_eq!(column_sums(&ds.mask).iter().sum::<usize>(), 300 + 90);
    for v in 0..2 {
        for i in 0..300 {
            if ds.is_available(i, v) {
                assert_eq!(ds.row(v, i), truth[v].row(i));
            } else {
                assert!(ds.row(v, i).iter().all(|x| x.is_nan()));
            }
        }
    }
}

#[test]
fn separated_complete_blobs_have_clean_graphs() {
    let mut spec = blob_spec(100.0, 2);
    spec.separation = 20.0;
    let ds = generate_synthetic(&spec).unwrap();
    let g = build_initial_graphs(&ds, 10).unwrap();
    assert!(g.all_native());
    assert_eq!(graph_error(&g, ds.labels.as_deref()).unwrap(), 0.0);
}

#[test]
fn normalized_views_span_unit_range() {
    let ds = normalize(&generate_synthetic(&blob_spec(30.0, 4)).unwrap());
    for v in 0..2 {
        let avail = ds.availability(v);
        for col in 0..ds.views[v].ncols() {
            let vals: Vec<f64> = (0..300).filter(|&i| avail[i]).map(|i| ds.views[v][[i, col]]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = generate_synthetic(&blob_spec(30.0, 6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.mask, ds.mask);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.num_clusters, ds.num_clusters);
    for v in 0..2 {
        for (a, b) in back.views[v].iter().zip(ds.views[v].iter()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(back.ground_truth_views.as_ref().unwrap()[v], ds.ground_truth_views.as_ref().unwrap()[v]);
    }
}

#[test]
fn loading_bad_directories_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(dir.path()).is_err());
    let ds = generate_synthetic(&blob_spec(30.0, 6)).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    std::fs::write(dir.path().join("mask.csv"), "1,0\n").unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn kmeans_inertia_is_near_the_best_of_many_restarts() {
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let z = from_rows(&active_testkit::uniform_rows(&mut r, 120, 2));
        let best = (0..50)
            .map(|s| kmeans(z.view(), 4, 1000 + s, 1).unwrap().inertia)
            .fold(f64::INFINITY, f64::min);
        let got = kmeans(z.view(), 4, seed, 10).unwrap().inertia;
        assert!(got <= best * 1.01, "seed {seed}: {got} vs {best}");
    }
}

#[test]
fn random_relabellings_score_near_zero_ari() {
    use rand::seq::SliceRandom;
    for seed in 0..20 {
        let mut r = rng(seed);
        let truth: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let mut pred = truth.clone();
        pred.shuffle(&mut r);
        let x = ari(&pred, &truth).unwrap();
        assert!(x.abs() < 0.1, "seed {seed}: {x}");
    }
}

#[test]
fn nrmse_matches_a_cell_loop() {
    let ds = generate_synthetic(&blob_spec(30.0, 5)).unwrap();
    let imputed = mean_imputation(&ds);
    let got = nrmse(&ds, &imputed).unwrap();
    let truth = ds.ground_truth_views.as_ref().unwrap();
    for v in 0..2 {
        let t = &truth[v];
        let (mut sse, mut cells) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..300 {
            for c in 0..10 {
                lo = lo.min(t[[i, c]]);
                hi = hi.max(t[[i, c]]);
                if !ds.mask[[i, v]] {
                    sse += (imputed[v][[i, c]] - t[[i, c]]).powi(2);
                    cells += 1.0;
                }
            }
        }
        let want = (sse / cells).sqrt() / (hi - lo);
        assert!((got[v].unwrap() - want).abs() < 1e-12);
    }
}
