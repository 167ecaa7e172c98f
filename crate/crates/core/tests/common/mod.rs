#![allow(dead_code)]

use crossalign::adversarial::Discriminator;
use crossalign::nalgebra::{DMatrix, DVector};
use crossalign::store::EmbeddingSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix.
pub fn orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian(d, d, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn space_from(m: DMatrix<f64>, prefix: &str) -> EmbeddingSpace {
    let vocab = (0..m.nrows()).map(|i| format!("{prefix}{i}")).collect();
    EmbeddingSpace::new(vocab, m).unwrap()
}

pub fn random_discriminator(d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Discriminator {
    let w1 = gaussian(hidden, d, rng) * 0.5;
    let b1 = DVector::from_column_slice(gaussian(hidden, 1, rng).as_slice()) * 0.3;
    let w2 = DVector::from_column_slice(gaussian(hidden, 1, rng).as_slice());
    let b2 = 0.1 * gaussian(1, 1, rng)[(0, 0)];
    Discriminator { w1, b1, w2, b2 }
}

/// Relative error with a floor on the denominator, so gradients near zero are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Brute-force CSLS score matrix for already-mapped source rows against target rows.
pub fn csls_brute(mapped: &DMatrix<f64>, target: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<f64>>();
    let cos = DMatrix::from_fn(mapped.nrows(), target.nrows(), |i, j| cosine(&row(mapped, i), &row(target, j)));
    let mean_top = |mut v: Vec<f64>| {
        v.sort_by(|a, b| b.total_cmp(a));
        v[..k].iter().sum::<f64>() / k as f64
    };
    let r_t: Vec<f64> = (0..cos.nrows()).map(|i| mean_top(cos.row(i).iter().copied().collect())).collect();
    let r_s: Vec<f64> = (0..cos.ncols()).map(|j| mean_top(cos.column(j).iter().copied().collect())).collect();
    DMatrix::from_fn(cos.nrows(), cos.ncols(), |i, j| 2.0 * cos[(i, j)] - r_t[i] - r_s[j])
}

/// Gradient check over every discriminator parameter and every map entry.
/// Returns the largest relative error seen.
pub fn max_gradient_error(seed: u64, d: usize, hidden: usize, batch: usize, smoothing: f64) -> f64 {
    use crossalign::adversarial::{discriminator_loss, gradients, mapping_loss};
    use crossalign::mapping::LinearMap;

    let mut r = rng(seed);
    let disc = random_discriminator(d, hidden, &mut r);
    let w = LinearMap::new(gaussian(d, d, &mut r) * 0.4).unwrap();
    let src = gaussian(batch, d, &mut r);
    let tgt = gaussian(batch, d, &mut r);
    let g = gradients(&disc, &w, &src, &tgt, smoothing).unwrap();
    let h = 1e-5;
    let mapped = |w: &LinearMap| w.apply_rows(&src).unwrap();
    let ld = |p: &Discriminator| discriminator_loss(p, &mapped(&w), &tgt, smoothing).unwrap();
    let central = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
    let mut worst: f64 = 0.0;

    for i in 0..hidden {
        for j in 0..d {
            let num = central(&|e| {
                let mut p = disc.clone();
                p.w1[(i, j)] += e;
                ld(&p)
            });
            worst = worst.max(rel_err(g.discriminator.w1[(i, j)], num));
        }
        let num = central(&|e| {
            let mut p = disc.clone();
            p.b1[i] += e;
            ld(&p)
        });
        worst = worst.max(rel_err(g.discriminator.b1[i], num));
        let num = central(&|e| {
            let mut p = disc.clone();
            p.w2[i] += e;
            ld(&p)
        });
        worst = worst.max(rel_err(g.discriminator.w2[i], num));
    }
    let num = central(&|e| {
        let mut p = disc.clone();
        p.b2 += e;
        ld(&p)
    });
    worst = worst.max(rel_err(g.discriminator.b2, num));

    for i in 0..d {
        for j in 0..d {
            let num = central(&|e| {
                let mut m = w.matrix().clone();
                m[(i, j)] += e;
                let wp = LinearMap::new(m).unwrap();
                mapping_loss(&disc, &mapped(&wp), &tgt, smoothing).unwrap()
            });
            worst = worst.max(rel_err(g.mapping[(i, j)], num));
        }
    }
    worst
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_crossalign"))
}

/// Runs the binary in `dir`, panicking with its stderr on failure.
pub fn run_ok(dir: &std::path::Path, args: &[&str]) {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "crossalign {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Small end-to-end run of every subcommand, all outputs written inside `dir`.
pub fn cli_workflow(dir: &std::path::Path) {
    use std::fmt::Write as _;
    let mut corpus = String::new();
    for i in 0..300 {
        let t = i % 5;
        writeln!(corpus, "c{t}a c{t}b w{} c{t}c c{t}d", i % 3 + 3 * t).unwrap();
    }
    std::fs::write(dir.join("corpus.txt"), corpus).unwrap();
    let mut identity = String::from("10 10\n");
    for i in 0..10 {
        let row: Vec<&str> = (0..10).map(|j| if i == j { "1.0" } else { "0.0" }).collect();
        identity.push_str(&row.join(" "));
        identity.push('\n');
    }
    std::fs::write(dir.join("identity.txt"), identity).unwrap();

    run_ok(dir, &["make-benchmark", "--vocab", "300", "--dim", "10", "--seed", "1", "--out-dir", "bench"]);
    let train = std::fs::read_to_string(dir.join("bench/dict.train.txt")).unwrap();
    let back: String = train
        .lines()
        .map(|l| {
            let (s, t) = l.split_once(' ').unwrap();
            format!("{t} {s}\n")
        })
        .collect();
    std::fs::write(dir.join("dict.back.txt"), back).unwrap();
    let queries: String = train.lines().take(20).map(|l| format!("{}\n", l.split_once(' ').unwrap().0)).collect();
    std::fs::write(dir.join("queries.txt"), queries).unwrap();

    let pair = ["--src", "bench/source.vec", "--tgt", "bench/target.vec", "--src-freq", "bench/source.freq", "--tgt-freq", "bench/target.freq"];
    let with = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(pair.iter()).chain(tail.iter()).copied().collect()
    };

    run_ok(dir, &["train-sgns", "--corpus", "corpus.txt", "--dim", "8", "--epochs", "2", "--seed", "4", "--out", "sgns.vec"]);
    run_ok(dir, &["gen-instances", "--base", "bench/target.vec", "--per-word", "3", "--contamination", "0.1", "--seed", "2", "--out", "inst.vec"]);
    run_ok(
        dir,
        &["cluster", "--instances", "inst.vec", "--labels", "inst.vec.labels", "--k", "50", "--restarts", "2", "--seed", "5",
          "--out", "clusters.vec", "--report", "kmeans.json", "--assignment-out", "assign.txt"],
    );
    run_ok(
        dir,
        &with(&["align"], &["--preset", "desk-scale", "--epochs", "2", "--steps", "100", "--hidden", "32", "--seed", "3",
                            "--out", "w.adv", "--trace", "trace.json"]),
    );
    run_ok(dir, &with(&["refine"], &["--w", "w.adv", "--iterations", "2", "--out", "w.ref", "--dict-out", "induced.txt"]));
    run_ok(dir, &with(&["supervised-align"], &["--dict", "bench/dict.train.txt", "--out", "w.sup"]));
    run_ok(dir, &with(&["retrieve"], &["--w", "w.sup", "--queries", "queries.txt", "--out", "retrieved.tsv"]));
    run_ok(dir, &with(&["evaluate", "--task", "translate"], &["--w", "w.sup", "--dict", "bench/dict.test.txt", "--report", "translate.json"]));
    run_ok(
        dir,
        &with(&["evaluate", "--task", "synonyms"], &["--w", "w.sup", "--dict", "bench/dict.train.txt", "--dict-back", "dict.back.txt",
                                                    "--exclude-self", "--report", "synonyms.json"]),
    );
    run_ok(
        dir,
        &["evaluate", "--task", "classify", "--queries", "inst.vec", "--labels", "inst.vec.labels", "--src", "bench/target.vec",
          "--tgt", "bench/target.vec", "--w", "identity.txt", "--metric", "cosine", "--report", "classify.json"],
    );
    for conf in ["A", "B"] {
        let cfg = format!(
            "configuration = {conf}\nseed = 7\nvocab_size = 200\ndim = 8\nper_word = 2\nkmeans_restarts = 1\n\
             adv_epochs = 2\nadv_steps = 100\nadv_hidden = 32\nrefine_iterations = 2\n"
        );
        std::fs::write(dir.join(format!("{conf}.conf")), cfg).unwrap();
        run_ok(dir, &["pipeline", "--config", &format!("{conf}.conf"), "--output-dir", &format!("run_{conf}")]);
    }
}
