//! Checks against independent re-implementations and closed-form answers.

mod common;

use std::collections::BTreeSet;

use common::*;
use crossalign::adversarial::{
    discriminator_loss, mapping_loss, train_adversarial, train_adversarial_observed, AdversarialConfig, Discriminator,
};
use crossalign::benchmark::{make_synthetic_benchmark, BenchmarkConfig};
use crossalign::cluster::{average_clusters, cluster_purity, kmeans_cluster, KMeansConfig};
use crossalign::evaluation::{classify, major_word_baseline, retrieve_synonyms, SynonymSets, Task};
use crossalign::instances::{generate_instances, InstanceSet};
use crossalign::mapping::LinearMap;
use crossalign::nalgebra::{DMatrix, DVector};
use crossalign::refine::{refine, solve_mapping, RefineConfig};
use crossalign::retrieval::{hub_occupancy, CslsConfig, CslsIndex, Metric, Retriever};
use crossalign::sgns::{pair_loss_and_grads, train_sgns, SgnsConfig};
use crossalign::store::{unit_normalize, EmbeddingSpace};
use rand::RngExt;

#[test]
fn adversarial_gradients_match_central_differences() {
    for seed in 0..6 {
        let smoothing = if seed % 2 == 0 { 0.0 } else { 0.2 };
        let err = max_gradient_error(seed, 5, 7, 6, smoothing);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn scalar_bce(z: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn scalar_logit(disc: &Discriminator, x: &[f64]) -> f64 {
    let mut out = disc.b2;
    for h in 0..disc.w1.nrows() {
        let mut a = disc.b1[h];
        for (j, xj) in x.iter().enumerate() {
            a += disc.w1[(h, j)] * xj;
        }
        out += disc.w2[h] * a.max(0.0);
    }
    out
}

#[test]
fn losses_match_scalar_reimplementation() {
    let mut r = rng(3);
    let disc = random_discriminator(4, 9, &mut r);
    let src = gaussian(5, 4, &mut r);
    let tgt = gaussian(7, 4, &mut r);
    for s in [0.0, 0.1, 0.3] {
        let side = |m: &DMatrix<f64>, y: f64| {
            (0..m.nrows())
                .map(|i| scalar_bce(scalar_logit(&disc, &m.row(i).iter().copied().collect::<Vec<_>>()), y))
                .sum::<f64>()
                / m.nrows() as f64
        };
        let ld = side(&src, 1.0 - s) + side(&tgt, s);
        let lw = side(&src, s) + side(&tgt, 1.0 - s);
        assert!((discriminator_loss(&disc, &src, &tgt, s).unwrap() - ld).abs() < 1e-10);
        assert!((mapping_loss(&disc, &src, &tgt, s).unwrap() - lw).abs() < 1e-10);
    }
}

#[test]
fn constant_discriminator_losses_are_symmetric() {
    let p: f64 = 0.3;
    let disc = Discriminator {
        w1: DMatrix::zeros(3, 2),
        b1: DVector::zeros(3),
        w2: DVector::zeros(3),
        b2: (p / (1.0 - p)).ln(),
    };
    let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
    let ld = discriminator_loss(&disc, &x, &x, 0.0).unwrap();
    let lw = mapping_loss(&disc, &x, &x, 0.0).unwrap();
    let expected = -2.0 * (p.ln() + (1.0 - p).ln());
    assert!((ld + lw - expected).abs() < 1e-12);
}

fn small_pair(seed: u64, n: usize, d: usize) -> (EmbeddingSpace, EmbeddingSpace) {
    let bench = make_synthetic_benchmark(&BenchmarkConfig { vocab_size: n, dim: d, seed, ..Default::default() }).unwrap();
    (unit_normalize(&bench.source).unwrap(), unit_normalize(&bench.target).unwrap())
}

fn quick_config(seed: u64) -> AdversarialConfig {
    AdversarialConfig { epochs: 3, steps_per_epoch: 150, hidden: 32, seed, ..AdversarialConfig::desk_scale() }
}

#[test]
fn identical_spaces_never_select_worse_than_identity() {
    let (s, _) = small_pair(1, 300, 10);
    let result = train_adversarial(&s, &s, &quick_config(1)).unwrap();
    let initial = result.trace[0].criterion;
    let chosen = result.trace[result.best_epoch].criterion;
    assert!(chosen >= initial);
}

#[test]
fn adversarial_training_is_reproducible() {
    let (s, t) = small_pair(2, 300, 10);
    let a = train_adversarial(&s, &t, &quick_config(5)).unwrap();
    let b = train_adversarial(&s, &t, &quick_config(5)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.map, b.map);
}

#[test]
fn strong_orthogonality_pull_keeps_singular_values_near_one() {
    let (s, t) = small_pair(3, 300, 10);
    let mut worst: f64 = 0.0;
    train_adversarial_observed(&s, &t, LinearMap::identity(10), &quick_config(2), |_, w| {
        for sv in w.singular_values() {
            worst = worst.max((sv - 1.0).abs());
        }
    })
    .unwrap();
    assert!(worst <= 0.01, "singular values drifted by {worst}");
}

#[test]
fn procrustes_recovers_planted_rotation() {
    let mut r = rng(11);
    let q = orthogonal(20, &mut r);
    let x = gaussian(20, 60, &mut r);
    let w = solve_mapping(&x, &(&q * &x), true).unwrap().map;
    assert!((w.matrix() - &q).amax() < 1e-10);
}

#[test]
fn procrustes_beats_random_orthogonal_maps() {
    let mut r = rng(12);
    let d = 6;
    let x = gaussian(d, 15, &mut r);
    let y = gaussian(d, 15, &mut r);
    let w = solve_mapping(&x, &y, true).unwrap().map;
    let best = (w.matrix() * &x - &y).norm_squared();
    for _ in 0..1000 {
        let o = orthogonal(d, &mut r);
        assert!((&o * &x - &y).norm_squared() >= best - 1e-9);
    }
}

#[test]
fn least_squares_is_a_local_minimum() {
    let mut r = rng(13);
    let x = gaussian(5, 30, &mut r);
    let y = gaussian(4, 30, &mut r);
    let sol = solve_mapping(&x, &y, false).unwrap();
    assert!(!sol.underdetermined);
    let base = (sol.map.matrix() * &x - &y).norm_squared();
    for _ in 0..1000 {
        let e = gaussian(4, 5, &mut r) * 1e-3;
        let perturbed = ((sol.map.matrix() + e) * &x - &y).norm_squared();
        assert!(perturbed >= base - 1e-9);
    }
    // Normal equations solved independently through the pseudo-inverse.
    let pinv = (&x * x.transpose()).try_inverse().unwrap();
    let direct = &y * x.transpose() * pinv;
    assert!((sol.map.matrix() - direct).amax() < 1e-6);
}

#[test]
fn few_pairs_are_flagged_underdetermined() {
    let mut r = rng(14);
    let sol = solve_mapping(&gaussian(8, 3, &mut r), &gaussian(8, 3, &mut r), false).unwrap();
    assert!(sol.underdetermined);
}

#[test]
fn csls_scores_match_brute_force() {
    let mut r = rng(20);
    let src = space_from(gaussian(30, 6, &mut r), "s");
    let tgt = space_from(gaussian(25, 6, &mut r), "t");
    let w = LinearMap::new(orthogonal(6, &mut r)).unwrap();
    for k in [1, 3, 10] {
        let mapped = w.map_space(&src).unwrap();
        let oracle = csls_brute(&mapped, tgt.vectors(), k);
        let idx = CslsIndex::build(&src, &tgt, &w, CslsConfig { k_neighbors: k }).unwrap();
        for i in 0..mapped.nrows() {
            let row: Vec<f64> = mapped.row(i).iter().copied().collect();
            let got = idx.scores_mapped(&row).unwrap();
            for (j, g) in got.iter().enumerate() {
                assert!((g - oracle[(i, j)]).abs() < 1e-10);
            }
        }
        let retriever = Retriever::new(&src, &tgt, &w, Metric::Csls { k_neighbors: k }).unwrap();
        let ranked = retriever.retrieve(src.vectors(), 1).unwrap();
        for (i, top) in ranked.iter().enumerate() {
            let best = (0..tgt.len()).max_by(|&a, &b| oracle[(i, a)].total_cmp(&oracle[(i, b)]).then(b.cmp(&a))).unwrap();
            assert_eq!(top[0].0, best);
        }
    }
}

#[test]
fn full_neighbourhood_on_symmetric_set_ranks_like_cosine() {
    let mut r = rng(21);
    let half = gaussian(10, 5, &mut r);
    let both = DMatrix::from_fn(20, 5, |i, j| if i < 10 { half[(i, j)] } else { -half[(i - 10, j)] });
    let s = space_from(both, "w");
    let w = LinearMap::identity(5);
    let queries = gaussian(15, 5, &mut r);
    let cos = Retriever::new(&s, &s, &w, Metric::Cosine).unwrap().retrieve(&queries, 20).unwrap();
    let csls = Retriever::new(&s, &s, &w, Metric::Csls { k_neighbors: 20 }).unwrap().retrieve(&queries, 20).unwrap();
    for (a, b) in cos.iter().zip(&csls) {
        let ia: Vec<usize> = a.iter().map(|h| h.0).collect();
        let ib: Vec<usize> = b.iter().map(|h| h.0).collect();
        assert_eq!(ia, ib);
    }
}

#[test]
fn planted_hub_is_demoted_by_csls() {
    let mut r = rng(22);
    let d = 30;
    let direction = gaussian(1, d, &mut r).normalize();
    let queries = gaussian(400, d, &mut r) + DMatrix::from_fn(400, d, |_, j| 4.0 * direction[(0, j)]);
    let mut targets = gaussian(401, d, &mut r);
    targets.row_mut(400).copy_from(&direction.row(0));
    let space = space_from(targets, "t");
    let cos = hub_occupancy(&queries, &space, 10, Metric::Cosine).unwrap();
    let csls = hub_occupancy(&queries, &space, 10, Metric::Csls { k_neighbors: 10 }).unwrap();
    assert!(cos.counts[400] as f64 / 400.0 > 0.9);
    assert!(csls.max_fraction < cos.max_fraction);
}

#[test]
fn refined_map_invalidates_old_index() {
    let (s, t) = small_pair(4, 200, 8);
    let w = LinearMap::identity(8);
    let idx = CslsIndex::build(&s, &t, &w, CslsConfig::default()).unwrap();
    let refined = refine(&s, &t, &w, &RefineConfig { iterations: 1, ..Default::default() }).unwrap().map;
    assert!(idx.check_fresh(&refined).is_err());
}

fn blobs(seed: u64, per: usize) -> (InstanceSet, Vec<String>) {
    let mut r = rng(seed);
    let centres = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [5.0, 8.66, 0.0]];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        let noise = gaussian(per, 3, &mut r);
        for i in 0..per {
            rows.extend((0..3).map(|j| centre[j] + noise[(i, j)]));
            labels.push(format!("blob{c}"));
        }
    }
    let m = DMatrix::from_row_slice(3 * per, 3, &rows);
    (InstanceSet::new(m, Some(labels.clone())).unwrap(), labels)
}

#[test]
fn kmeans_separates_blobs_with_monotone_wcss() {
    let (set, labels) = blobs(30, 50);
    let res = kmeans_cluster(&set, &KMeansConfig { seed: 4, ..KMeansConfig::new(3) }).unwrap();
    assert_eq!(cluster_purity(&res.assignment, &labels).unwrap(), 1.0);
    assert!(res.wcss_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert_eq!(res.restart_wcss.len(), 10);
    let min = res.restart_wcss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(res.wcss, min);
}

#[test]
fn converged_centroids_are_cluster_means() {
    let (set, _) = blobs(31, 40);
    let res = kmeans_cluster(&set, &KMeansConfig { k: 4, seed: 2, ..KMeansConfig::new(4) }).unwrap();
    assert!(res.converged);
    let avg = average_clusters(&set, &res.assignment).unwrap();
    for c in 0..4 {
        let members: Vec<usize> = (0..set.len()).filter(|&i| res.assignment[i] == c).collect();
        let row = avg.index_of(&format!("cluster_{c}")).unwrap();
        for j in 0..3 {
            let mean = members.iter().map(|&i| set.vectors()[(i, j)]).sum::<f64>() / members.len() as f64;
            assert!((avg.vectors()[(row, j)] - mean).abs() < 1e-9);
            assert!((res.centroids[(c, j)] - mean).abs() < 1e-9);
        }
    }
}

#[test]
fn one_cluster_per_distinct_point_leaves_none_empty() {
    let mut r = rng(32);
    let set = InstanceSet::new(gaussian(12, 2, &mut r), None).unwrap();
    let res = kmeans_cluster(&set, &KMeansConfig::new(12)).unwrap();
    let used: BTreeSet<usize> = res.assignment.iter().copied().collect();
    assert_eq!(used.len(), 12);
    assert!(res.wcss < 1e-20);
}

#[test]
fn random_assignment_purity_is_near_chance() {
    let mut r = rng(33);
    let n = 20_000;
    let labels: Vec<String> = (0..n).map(|_| format!("l{}", r.random_range(0..4))).collect();
    let assignment: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
    let p = cluster_purity(&assignment, &labels).unwrap();
    assert!((0.25..0.27).contains(&p), "purity {p}");
}

#[test]
fn instance_noise_obeys_law_of_large_numbers() {
    let base = EmbeddingSpace::from_rows(
        vec!["a".into(), "b".into()],
        &[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]],
        3,
    )
    .unwrap();
    let sigma = 0.3;
    let per = 4000;
    let set = generate_instances(&base, per, sigma, 0.0, 8).unwrap();
    for w in 0..2 {
        for j in 0..3 {
            let xs: Vec<f64> = (0..per).map(|i| set.vectors()[(w * per + i, j)] - base.vectors()[(w, j)]).collect();
            let mean = xs.iter().sum::<f64>() / per as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per - 1) as f64).sqrt();
            assert!(mean.abs() < 4.0 * sigma / (per as f64).sqrt());
            assert!((sd - sigma).abs() < 0.02);
        }
    }
}

#[test]
fn contaminated_instances_mix_two_distinct_words() {
    let d = 6;
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let base = EmbeddingSpace::from_rows((0..d).map(|i| format!("w{i}")).collect(), &rows, d).unwrap();
    let set = generate_instances(&base, 10, 0.0, 0.3, 9).unwrap();
    let mut mixed = 0;
    for i in 0..set.len() {
        let nz: Vec<f64> = set.vectors().row(i).iter().copied().filter(|v| *v != 0.0).collect();
        match nz.len() {
            1 => assert_eq!(nz[0], 1.0),
            2 => {
                mixed += 1;
                assert!((nz[0] + nz[1] - 1.0).abs() < 1e-12);
                assert!(nz.iter().all(|a| (0.2..=0.8).contains(a)));
            }
            n => panic!("instance {i} has {n} non-zero coordinates"),
        }
    }
    assert_eq!(mixed, 18);
}

#[test]
fn sgns_gradients_match_central_differences() {
    let mut r = rng(40);
    let v: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let negs: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let loss = |v: &[f64], u: &[f64], n: &[Vec<f64>]| {
        let refs: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
        pair_loss_and_grads(v, u, &refs).loss
    };
    let g = {
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        pair_loss_and_grads(&v, &u, &refs)
    };
    let h = 1e-5;
    for j in 0..6 {
        let (mut vp, mut vm) = (v.clone(), v.clone());
        vp[j] += h;
        vm[j] -= h;
        assert!(rel_err(g.center[j], (loss(&vp, &u, &negs) - loss(&vm, &u, &negs)) / (2.0 * h)) < 1e-5);
        let (mut up, mut um) = (u.clone(), u.clone());
        up[j] += h;
        um[j] -= h;
        assert!(rel_err(g.context[j], (loss(&v, &up, &negs) - loss(&v, &um, &negs)) / (2.0 * h)) < 1e-5);
        for n in 0..3 {
            let (mut np, mut nm) = (negs.clone(), negs.clone());
            np[n][j] += h;
            nm[n][j] -= h;
            assert!(rel_err(g.negatives[n][j], (loss(&v, &u, &np) - loss(&v, &u, &nm)) / (2.0 * h)) < 1e-5);
        }
    }
}

#[test]
fn sgns_loss_falls_and_training_repeats() {
    let mut r = rng(41);
    let corpus: Vec<Vec<String>> = (0..400)
        .map(|_| {
            let t = r.random_range(0..4);
            (0..6).map(|_| format!("t{t}w{}", r.random_range(0..5))).collect()
        })
        .collect();
    let cfg = SgnsConfig { dim: 10, epochs: 4, seed: 3, ..Default::default() };
    let a = train_sgns(&corpus, &cfg).unwrap();
    assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0]);
    let b = train_sgns(&corpus, &cfg).unwrap();
    assert_eq!(a.space, b.space);
}

fn identity_setup() -> (EmbeddingSpace, InstanceSet) {
    let mut r = rng(50);
    let space = space_from(gaussian(40, 8, &mut r), "t");
    let queries = InstanceSet::from_space(&space);
    (space, queries)
}

#[test]
fn exact_queries_classify_perfectly() {
    let (space, queries) = identity_setup();
    let w = LinearMap::identity(8);
    let retriever = Retriever::new(&space, &space, &w, Metric::Cosine).unwrap();
    assert_eq!(classify(&queries, &retriever).unwrap().accuracy, Some(100.0));
}

#[test]
fn singleton_synonyms_equal_classification_and_supersets_never_hurt() {
    let mut r = rng(51);
    let (space, _) = identity_setup();
    let noisy = InstanceSet::new(
        space.vectors() + gaussian(40, 8, &mut r) * 0.8,
        Some(space.vocab().to_vec()),
    )
    .unwrap();
    let w = LinearMap::identity(8);
    let retriever = Retriever::new(&space, &space, &w, Metric::Csls { k_neighbors: 5 }).unwrap();
    let acc = classify(&noisy, &retriever).unwrap().accuracy.unwrap();
    let singletons = SynonymSets {
        sets: space.vocab().iter().map(|t| (t.clone(), BTreeSet::from([t.clone()]))).collect(),
        n_excluded: 0,
    };
    let p1 = retrieve_synonyms(&noisy, &retriever, &singletons, &[1, 5]).unwrap();
    assert_eq!(p1.precision_at(1), Some(acc));
    let mut larger = singletons.clone();
    for (i, set) in larger.sets.values_mut().enumerate() {
        set.insert(format!("t{}", (i + 1) % 40));
    }
    let p2 = retrieve_synonyms(&noisy, &retriever, &larger, &[1, 5]).unwrap();
    for k in [1, 5] {
        assert!(p2.precision_at(k).unwrap() >= p1.precision_at(k).unwrap());
    }
}

#[test]
fn major_word_on_uniform_labels_is_chance() {
    let mut r = rng(52);
    let dist = (0..100).map(|i| (format!("w{i:03}"), 10u64)).collect();
    let gold: Vec<Vec<String>> = (0..50_000).map(|_| vec![format!("w{:03}", r.random_range(0..100))]).collect();
    let report = major_word_baseline(Task::Classification, &gold, &dist, &[1]).unwrap();
    let acc = report.accuracy.unwrap();
    assert!((0.8..=1.2).contains(&acc), "accuracy {acc}");
}

#[test]
fn benchmark_rotation_is_orthogonal_and_exact_without_noise() {
    let b = make_synthetic_benchmark(&BenchmarkConfig { vocab_size: 300, dim: 12, seed: 6, ..Default::default() }).unwrap();
    assert!(b.rotation.singular_values().iter().all(|s| (s - 1.0).abs() < 1e-10));
    for (s, t) in b.full_dictionary().pairs() {
        let x = b.source.row(b.source.index_of(s).unwrap());
        let y = b.target.row(b.target.index_of(t).unwrap());
        let wx = b.rotation.apply(&x).unwrap();
        assert!(wx.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}
