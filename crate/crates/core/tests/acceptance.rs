//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict and timing-sensitive checks run one at a time.
//!
//! Set `CROSSALIGN_ACCEPTANCE=1,3` to run a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use crossalign::adversarial::{train_adversarial, AdversarialConfig};
use crossalign::benchmark::{make_synthetic_benchmark, BenchmarkConfig};
use crossalign::cluster::{cluster_purity, kmeans_cluster, KMeansConfig};
use crossalign::evaluation::{derive_synonyms, translate};
use crossalign::instances::InstanceSet;
use crossalign::mapping::LinearMap;
use crossalign::nalgebra::DMatrix;
use crossalign::pipeline::{run_pipeline, Configuration, PipelineConfig};
use crossalign::refine::{refine, solve_mapping, solve_supervised, RefineConfig};
use crossalign::retrieval::{hub_occupancy, Metric, Retriever};
use crossalign::sgns::{train_sgns, SgnsConfig};
use crossalign::store::{unit_normalize, BilingualDictionary, EmbeddingSpace};
use rand::seq::SliceRandom;
use rand::RngExt;

/// Outcome of one criterion: pass flag and a one-line summary.
type Verdict = (bool, String);

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn procrustes() -> Verdict {
    let start = Instant::now();
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = orthogonal(50, &mut r);
        let x = gaussian(50, 200, &mut r);
        let w = solve_mapping(&x, &(&q * &x), true).unwrap().map;
        worst = worst.max((w.matrix() - &q).amax());
    }
    let t = secs(start.elapsed());
    (worst < 1e-8 && t < 1.0, format!("max |W - Q| = {worst:.2e} over 100 instances, {t:.2} s"))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut r = rng(200);
    let mut worst: f64 = 0.0;
    for draw in 0..50 {
        let d = r.random_range(3..9);
        let hidden = r.random_range(4..17);
        let batch = r.random_range(2..12);
        let smoothing = [0.0, 0.1, 0.2][draw % 3];
        worst = worst.max(max_gradient_error(1000 + draw as u64, d, hidden, batch, smoothing));
    }
    let t = secs(start.elapsed());
    (worst < 1e-4 && t < 10.0, format!("max relative error {worst:.2e} over 50 draws, {t:.2} s"))
}

struct Recovery {
    seed: u64,
    csls_p1: f64,
    cosine_p1: f64,
    supervised_p1: f64,
    seconds: f64,
}

fn held_out_p1(bench_source: &EmbeddingSpace, target: &EmbeddingSpace, map: &LinearMap, test: &BilingualDictionary, metric: Metric) -> f64 {
    let words: Vec<String> = test.translations().keys().map(|s| s.to_string()).collect();
    let rows: Vec<usize> = words.iter().map(|w| bench_source.index_of(w).unwrap()).collect();
    let queries = InstanceSet::new(bench_source.vectors().select_rows(&rows), Some(words)).unwrap();
    let retriever = Retriever::new(bench_source, target, map, metric).unwrap();
    translate(&queries, &retriever, test, &[1]).unwrap().precision_at(1).unwrap()
}

fn recovery_runs() -> Vec<Recovery> {
    SEEDS
        .iter()
        .map(|&seed| {
            let start = Instant::now();
            let bench = make_synthetic_benchmark(&BenchmarkConfig { seed, ..Default::default() }).unwrap();
            let src = unit_normalize(&bench.source).unwrap();
            let tgt = unit_normalize(&bench.target).unwrap();
            let adv = train_adversarial(&src, &tgt, &AdversarialConfig { seed, ..AdversarialConfig::desk_scale() }).unwrap();
            let refined = refine(&src, &tgt, &adv.map, &RefineConfig::default()).unwrap().map;
            let csls = Metric::Csls { k_neighbors: 10 };
            let csls_p1 = held_out_p1(&src, &tgt, &refined, &bench.test, csls);
            let seconds = secs(start.elapsed());
            let cosine_p1 = held_out_p1(&src, &tgt, &refined, &bench.test, Metric::Cosine);
            let sup = solve_supervised(&src, &tgt, &bench.train, true).unwrap().map;
            let supervised_p1 = held_out_p1(&src, &tgt, &sup, &bench.test, csls);
            Recovery { seed, csls_p1, cosine_p1, supervised_p1, seconds }
        })
        .collect()
}

fn unsupervised_recovery(runs: &[Recovery]) -> Verdict {
    let good = runs.iter().filter(|r| r.csls_p1 >= 95.0).count();
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let detail: Vec<String> = runs.iter().map(|r| format!("seed {} {:.1} ({:.0} s)", r.seed, r.csls_p1, r.seconds)).collect();
    (good >= 4 && slowest < 300.0, format!("{good}/5 seeds at P@1 >= 95: {}", detail.join(", ")))
}

fn supervision_gap(runs: &[Recovery]) -> Verdict {
    let gaps: Vec<f64> = runs.iter().map(|r| r.supervised_p1 - r.csls_p1).collect();
    let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail: Vec<String> = runs.iter().map(|r| format!("{:.1}/{:.1}", r.supervised_p1, r.csls_p1)).collect();
    (worst <= 5.0, format!("largest supervised minus unsupervised gap {worst:.1} points (per seed {})", detail.join(", ")))
}

fn hubness(runs: &[Recovery]) -> Verdict {
    let mut r = rng(600);
    let d = 50;
    let direction = gaussian(1, d, &mut r).normalize();
    let queries = gaussian(1000, d, &mut r) + DMatrix::from_fn(1000, d, |_, j| 4.0 * direction[(0, j)]);
    let mut targets = gaussian(1000, d, &mut r);
    targets.row_mut(999).copy_from(&direction.row(0));
    let space = space_from(targets, "t");
    let cos = hub_occupancy(&queries, &space, 10, Metric::Cosine).unwrap().max_fraction;
    let csls = hub_occupancy(&queries, &space, 10, Metric::Csls { k_neighbors: 10 }).unwrap().max_fraction;
    let ranking_ok = runs.iter().all(|r| r.csls_p1 >= r.cosine_p1 - 0.5);
    let detail: Vec<String> = runs.iter().map(|r| format!("{:.1}/{:.1}", r.csls_p1, r.cosine_p1)).collect();
    (
        csls < cos && ranking_ok,
        format!("hub max-fraction csls {csls:.3} vs cosine {cos:.3}; P@1 csls/cosine {}", detail.join(", ")),
    )
}

fn ladder() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let confs = [Configuration::AStar, Configuration::A, Configuration::B, Configuration::F];
    let mut medians = Vec::new();
    for conf in confs {
        let scores: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = PipelineConfig::new(conf, dir.path().join(format!("{}_{seed}", conf.name())));
                cfg.seed = seed;
                run_pipeline(&cfg).unwrap().headline().unwrap()
            })
            .collect();
        medians.push((conf.name(), median(scores)));
    }
    let t = secs(start.elapsed());
    let ordered = medians.windows(2).all(|w| w[0].1 >= w[1].1);
    let detail: Vec<String> = medians.iter().map(|(n, m)| format!("{n} {m:.1}")).collect();
    (ordered && t < 1800.0, format!("median accuracy {}, {t:.0} s", detail.join(" >= ")))
}

fn kmeans_blobs() -> Verdict {
    let mut worst_purity: f64 = 1.0;
    let mut monotone = true;
    for run in 0..20u64 {
        let mut r = rng(700 + run);
        let centres = [[0.0, 0.0], [10.0, 0.0], [5.0, 8.66]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            let noise = gaussian(100, 2, &mut r);
            for i in 0..100 {
                rows.extend([centre[0] + noise[(i, 0)], centre[1] + noise[(i, 1)]]);
                labels.push(format!("blob{c}"));
            }
        }
        let set = InstanceSet::new(DMatrix::from_row_slice(300, 2, &rows), Some(labels.clone())).unwrap();
        let res = kmeans_cluster(&set, &KMeansConfig { seed: run, ..KMeansConfig::new(3) }).unwrap();
        worst_purity = worst_purity.min(cluster_purity(&res.assignment, &labels).unwrap());
        monotone &= res.wcss_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    }
    (
        worst_purity == 1.0 && monotone,
        format!("lowest purity {worst_purity} over 20 runs, WCSS non-increasing: {monotone}"),
    )
}

fn sgns_planted() -> Verdict {
    let start = Instant::now();
    let mut r = rng(800);
    let mut corpus = Vec::new();
    for _ in 0..5000 {
        let t = r.random_range(0..20);
        let mut sentence: Vec<String> = (0..9).map(|_| format!("t{t}c{}", r.random_range(0..8))).collect();
        let slot = if r.random_bool(0.5) { "a" } else { "b" };
        sentence.insert(r.random_range(0..10), format!("t{t}{slot}"));
        corpus.push(sentence);
    }
    let model = train_sgns(&corpus, &SgnsConfig { seed: 8, ..Default::default() }).unwrap();
    let s = &model.space;
    assert_eq!(s.len(), 200);
    let family = |tok: &str| tok[1..].split(|c: char| !c.is_ascii_digit()).next().unwrap().to_string();
    let mut passed = 0;
    for t in 0..20 {
        let a = s.row(s.index_of(&format!("t{t}a")).unwrap());
        let b = s.row(s.index_of(&format!("t{t}b")).unwrap());
        let others: Vec<f64> = (0..s.len()).filter(|&i| family(s.token(i)) != t.to_string()).map(|i| cosine(&a, &s.row(i))).collect();
        assert_eq!(others.len(), 190);
        if cosine(&a, &b) > median(others) {
            passed += 1;
        }
    }
    let t = secs(start.elapsed());
    (passed >= 19 && t < 120.0, format!("{passed}/20 synonym pairs above the non-family median, {t:.1} s"))
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    cli_workflow(dir.path());
    let first = snapshot(dir.path());
    cli_workflow(dir.path());
    let second = snapshot(dir.path());
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let same_set = first.keys().eq(second.keys());
    (
        differing.is_empty() && same_set,
        format!("{} output files compared, {} differ", first.len(), differing.len()),
    )
}

fn random_dictionary(r: &mut rand_chacha::ChaCha8Rng, from: (&str, usize), to: (&str, usize)) -> BilingualDictionary {
    let n_pairs = r.random_range(1..30);
    let mut pairs: Vec<(String, String)> = (0..n_pairs)
        .map(|_| (format!("{}{}", from.0, r.random_range(0..from.1)), format!("{}{}", to.0, r.random_range(0..to.1))))
        .collect();
    pairs.shuffle(r);
    BilingualDictionary::from_pairs(pairs)
}

fn synonym_oracle() -> Verdict {
    let mut r = rng(1000);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (ns, nt) = (r.random_range(1..12), r.random_range(1..12));
        let fwd = random_dictionary(&mut r, ("s", ns), ("t", nt));
        let bwd = random_dictionary(&mut r, ("t", nt), ("s", ns));
        for include_self in [false, true] {
            let got = derive_synonyms(&fwd, &bwd, include_self).unwrap();
            let mut expected = BTreeMap::new();
            let mut excluded = 0;
            let words: BTreeSet<&String> = fwd.pairs().iter().map(|p| &p.0).collect();
            for w in words {
                let mut set: BTreeSet<String> = BTreeSet::new();
                for (_, t) in fwd.pairs().iter().filter(|p| &p.0 == w) {
                    for (t2, v) in bwd.pairs() {
                        if t == t2 {
                            set.insert(v.clone());
                        }
                    }
                }
                if include_self {
                    set.insert(w.clone());
                }
                if set.is_empty() {
                    excluded += 1;
                } else {
                    expected.insert(w.clone(), set);
                }
            }
            if got.sets != expected || got.n_excluded != excluded {
                mismatches += 1;
            }
        }
    }
    (mismatches == 0, format!("{mismatches} mismatches over 1000 dictionary pairs, with and without self"))
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("CROSSALIGN_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));

    let mut runs: Option<Vec<Recovery>> = None;
    let mut failed = 0;
    let names = [
        "procrustes recovery",
        "gradient check",
        "unsupervised recovery",
        "supervision gap",
        "configuration ladder",
        "hubness reduction",
        "k-means blobs",
        "sgns planted synonyms",
        "cli determinism",
        "synonym derivation",
    ];
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            if matches!(n, 3 | 4 | 6) && runs.is_none() {
                runs = Some(recovery_runs());
            }
            match n {
                1 => procrustes(),
                2 => gradients(),
                3 => unsupervised_recovery(runs.as_ref().unwrap()),
                4 => supervision_gap(runs.as_ref().unwrap()),
                5 => ladder(),
                6 => hubness(runs.as_ref().unwrap()),
                7 => kmeans_blobs(),
                8 => sgns_planted(),
                9 => cli_determinism(),
                _ => synonym_oracle(),
            }
        }));
        let (ok, detail) = outcome.unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !ok {
            failed += 1;
        }
        println!("criterion {n} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
