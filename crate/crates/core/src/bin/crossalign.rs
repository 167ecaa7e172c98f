use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossalign::adversarial::{train_adversarial, AdversarialConfig, Sampling};
use crossalign::benchmark::{make_synthetic_benchmark, BenchmarkConfig};
use crossalign::cluster::{average_clusters, cluster_purity, kmeans_cluster, KMeansConfig};
use crossalign::evaluation::{classify, derive_synonyms, retrieve_synonyms, translate};
use crossalign::instances::{generate_instances, load_instances, save_instances, InstanceSet};
use crossalign::mapping::{load_map, save_map};
use crossalign::pipeline::{run_pipeline, PipelineConfig};
use crossalign::refine::{refine, solve_supervised, RefineConfig};
use crossalign::retrieval::{Metric, Retriever};
use crossalign::sgns::{read_corpus, train_sgns, SgnsConfig};
use crossalign::store::{
    attach_frequencies, load_dictionary, load_embeddings, load_frequencies, save_dictionary, save_embeddings,
    save_frequencies, unit_normalize, EmbeddingSpace,
};
use crossalign::{Error, Result};

#[derive(Parser)]
#[command(name = "crossalign", version, about = "Align two embedding spaces without supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train skip-gram embeddings with negative sampling on a tokenized corpus.
    TrainSgns(TrainSgns),
    /// Draw noisy instance embeddings around a base space.
    GenInstances(GenInstances),
    /// k-means over instances, averaged into one vector per cluster.
    Cluster(ClusterCmd),
    /// Adversarial training of the linear map.
    Align(Align),
    /// Refine a map on mutual nearest-neighbour dictionaries.
    Refine(RefineCmd),
    /// Solve the map from a known dictionary.
    SupervisedAlign(SupervisedAlign),
    /// Nearest target words for source queries.
    Retrieve(Retrieve),
    /// Classification, translation or synonym retrieval scores.
    Evaluate(Evaluate),
    /// Run a whole configuration from a key=value file.
    Pipeline(PipelineCmd),
    /// Write a synthetic rotated benchmark.
    MakeBenchmark(MakeBenchmark),
}

#[derive(Args)]
struct TrainSgns {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Word counts; defaults to `<out>.freq`.
    #[arg(long)]
    freq_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenInstances {
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_word: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    contamination: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.labels`.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterCmd {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// One cluster id per instance.
    #[arg(long)]
    assignment_out: Option<PathBuf>,
}

#[derive(Args)]
struct SpacePair {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    src_freq: Option<PathBuf>,
    #[arg(long)]
    tgt_freq: Option<PathBuf>,
    /// Use the vectors as stored instead of unit-normalizing them.
    #[arg(long)]
    no_normalize: bool,
}

impl SpacePair {
    fn load(&self) -> Result<(EmbeddingSpace, EmbeddingSpace)> {
        let one = |path: &Path, freq: &Option<PathBuf>| -> Result<EmbeddingSpace> {
            let mut space = load_embeddings(path, None)?;
            if let Some(f) = freq {
                space = attach_frequencies(space, &load_frequencies(f)?)?;
            }
            if self.no_normalize {
                Ok(space)
            } else {
                unit_normalize(&space)
            }
        };
        Ok((one(&self.src, &self.src_freq)?, one(&self.tgt, &self.tgt_freq)?))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Learning rates 1e-3 and orthogonality beta 1e-3.
    Default,
    /// Learning rates 0.1 / 0.5, beta 0.5, 15 epochs of 2000 steps.
    DeskScale,
}

#[derive(Args)]
struct Align {
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate of both players.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_discriminator: Option<f64>,
    #[arg(long)]
    lr_mapping: Option<f64>,
    #[arg(long)]
    ortho_beta: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    dis_steps: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = ["uniform", "frequency"])]
    sampling: Option<String>,
    #[arg(long)]
    selection_top: Option<usize>,
    #[arg(long)]
    csls_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RefineCmd {
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long)]
    w: PathBuf,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    dict_max_rank: usize,
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    /// Least squares instead of the orthogonal solve.
    #[arg(long)]
    unconstrained: bool,
    #[arg(long)]
    out: PathBuf,
    /// The dictionary induced in the last iteration.
    #[arg(long)]
    dict_out: Option<PathBuf>,
}

#[derive(Args)]
struct SupervisedAlign {
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    unconstrained: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Csls,
}

fn metric(m: MetricArg, k: usize) -> Metric {
    match m {
        MetricArg::Cosine => Metric::Cosine,
        MetricArg::Csls => Metric::Csls { k_neighbors: k },
    }
}

#[derive(Args)]
struct Retrieve {
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long)]
    w: PathBuf,
    #[arg(long, value_enum, default_value = "csls")]
    metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Source tokens, one per line.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classify,
    Translate,
    Synonyms,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Instance vectors; without them every source word is a query labelled with itself.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    dict_back: Option<PathBuf>,
    /// Leave the query word out of its own synonym set.
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, value_enum, default_value = "csls")]
    metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    ks: Vec<usize>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PipelineCmd {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config file.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MakeBenchmark {
    #[arg(long, default_value_t = 2000)]
    vocab: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 5)]
    family_size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_train_sgns(a: TrainSgns) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let cfg = SgnsConfig {
        window_size: a.window,
        dim: a.dim,
        negatives_per_positive: a.negatives,
        epochs: a.epochs,
        learning_rate: a.lr,
        min_count: a.min_count,
        seed: a.seed,
    };
    let model = train_sgns(&corpus, &cfg)?;
    save_embeddings(&model.space, &a.out)?;
    save_frequencies(&model.space, a.freq_out.unwrap_or_else(|| with_suffix(&a.out, ".freq")))?;
    for (e, loss) in model.epoch_losses.iter().enumerate() {
        eprintln!("epoch {} loss {loss:.6}", e + 1);
    }
    Ok(())
}

fn run_gen_instances(a: GenInstances) -> Result<()> {
    let base = load_embeddings(&a.base, None)?;
    let set = generate_instances(&base, a.per_word, a.sigma, a.contamination, a.seed)?;
    let labels = a.labels_out.unwrap_or_else(|| with_suffix(&a.out, ".labels"));
    save_instances(&set, &a.out, Some(&labels))
}

#[derive(Serialize)]
struct ClusterReport {
    k: usize,
    wcss: f64,
    iterations: usize,
    converged: bool,
    best_restart: usize,
    restart_wcss: Vec<f64>,
    wcss_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    purity: Option<f64>,
}

fn run_cluster(a: ClusterCmd) -> Result<()> {
    let set = load_instances(&a.instances, a.labels.as_deref())?;
    let vectors_only = InstanceSet::new(set.vectors().clone(), None)?;
    let cfg = KMeansConfig { k: a.k, max_iters: a.max_iters, restarts: a.restarts, tol: a.tol, seed: a.seed };
    let km = kmeans_cluster(&vectors_only, &cfg)?;
    save_embeddings(&average_clusters(&vectors_only, &km.assignment)?, &a.out)?;
    if let Some(path) = &a.assignment_out {
        let text: String = km.assignment.iter().map(|c| format!("{c}\n")).collect();
        fs::write(path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    }
    if let Some(path) = &a.report {
        let purity = set.labels().map(|l| cluster_purity(&km.assignment, l)).transpose()?;
        let report = ClusterReport {
            k: a.k,
            wcss: km.wcss,
            iterations: km.iterations,
            converged: km.converged,
            best_restart: km.best_restart,
            restart_wcss: km.restart_wcss,
            wcss_trace: km.wcss_trace,
            purity,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_align(a: Align) -> Result<()> {
    let (src, tgt) = a.spaces.load()?;
    let mut cfg = match a.preset {
        Preset::Default => AdversarialConfig::default(),
        Preset::DeskScale => AdversarialConfig::desk_scale(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.steps {
        cfg.steps_per_epoch = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_discriminator = v;
        cfg.lr_mapping = v;
    }
    if let Some(v) = a.lr_discriminator {
        cfg.lr_discriminator = v;
    }
    if let Some(v) = a.lr_mapping {
        cfg.lr_mapping = v;
    }
    if let Some(v) = a.ortho_beta {
        cfg.ortho_beta = v;
    }
    if let Some(v) = a.smoothing {
        cfg.label_smoothing = v;
    }
    if let Some(v) = a.dropout {
        cfg.input_dropout = v;
    }
    if let Some(v) = a.dis_steps {
        cfg.dis_steps = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.sampling.as_deref() {
        cfg.sampling = if v == "frequency" { Sampling::Frequency } else { Sampling::Uniform };
    }
    if let Some(v) = a.selection_top {
        cfg.selection_top = v;
    }
    if let Some(v) = a.csls_k {
        cfg.csls_k = v;
    }
    let result = match train_adversarial(&src, &tgt, &cfg) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, checkpoint }) => {
            save_map(&checkpoint, &a.out)?;
            return Err(Error::Diverged { epoch, checkpoint });
        }
        Err(e) => return Err(e),
    };
    save_map(&result.map, &a.out)?;
    if let Some(path) = &a.trace {
        #[derive(Serialize)]
        struct Trace<'a> {
            config: &'a AdversarialConfig,
            best_epoch: usize,
            epochs: &'a [crossalign::adversarial::EpochTrace],
        }
        write_json(path, &Trace { config: &cfg, best_epoch: result.best_epoch, epochs: &result.trace })?;
    }
    Ok(())
}

fn run_refine(a: RefineCmd) -> Result<()> {
    let (src, tgt) = a.spaces.load()?;
    let w0 = load_map(&a.w)?;
    let cfg = RefineConfig {
        dict_max_rank: a.dict_max_rank,
        csls_k: a.csls_k,
        iterations: a.iterations,
        orthogonal: !a.unconstrained,
    };
    let result = refine(&src, &tgt, &w0, &cfg)?;
    save_map(&result.map, &a.out)?;
    if let Some(path) = &a.dict_out {
        save_dictionary(&result.dictionary, path)?;
    }
    Ok(())
}

fn run_supervised(a: SupervisedAlign) -> Result<()> {
    let (src, tgt) = a.spaces.load()?;
    let dict = load_dictionary(&a.dict)?;
    let sol = solve_supervised(&src, &tgt, &dict, !a.unconstrained)?;
    if sol.underdetermined {
        eprintln!("warning: fewer dictionary pairs than source dimensions");
    }
    save_map(&sol.map, &a.out)
}

fn run_retrieve(a: Retrieve) -> Result<()> {
    let (src, tgt) = a.spaces.load()?;
    let map = load_map(&a.w)?;
    let text = fs::read_to_string(&a.queries).map_err(|e| Error::Io { path: a.queries.clone(), source: e })?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let rows = tokens
        .iter()
        .map(|t| src.index_of(t).ok_or_else(|| Error::UnknownToken(t.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let queries = src.vectors().select_rows(&rows);
    let retriever = Retriever::new(&src, &tgt, &map, metric(a.metric, a.csls_k))?;
    let results = retriever.retrieve_tokens(&queries, a.topk)?;
    let file = fs::File::create(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::Io { path: a.out.clone(), source: e };
    writeln!(w, "query\trank\ttoken\tscore").map_err(io)?;
    for (q, hits) in tokens.iter().zip(results) {
        for (rank, h) in hits.iter().enumerate() {
            writeln!(w, "{q}\t{}\t{}\t{:?}", rank + 1, h.token, h.score).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn run_evaluate(a: Evaluate) -> Result<()> {
    let (src, tgt) = a.spaces.load()?;
    let map = load_map(&a.w)?;
    let queries = match &a.queries {
        Some(path) => {
            let labels = a.labels.as_deref().ok_or_else(|| Error::InvalidConfig("--queries needs --labels".into()))?;
            load_instances(path, Some(labels))?
        }
        None => InstanceSet::from_space(&src),
    };
    let m = metric(a.metric, a.csls_k);
    let retriever = Retriever::new(&src, &tgt, &map, m)?;
    let need_dict = || -> Result<_> {
        let path = a.dict.as_ref().ok_or_else(|| Error::InvalidConfig("this task needs --dict".into()))?;
        load_dictionary(path)
    };
    let (report, task) = match a.task {
        TaskArg::Classify => (classify(&queries, &retriever)?, "classify"),
        TaskArg::Translate => (translate(&queries, &retriever, &need_dict()?, &a.ks)?, "translate"),
        TaskArg::Synonyms => {
            let back = a.dict_back.as_ref().ok_or_else(|| Error::InvalidConfig("synonyms need --dict-back".into()))?;
            let syn = derive_synonyms(&need_dict()?, &load_dictionary(back)?, !a.exclude_self)?;
            let report = retrieve_synonyms(&queries, &retriever, &syn, &a.ks)?
                .with_config("synonyms_excluded", syn.n_excluded)
                .with_config("mean_synonyms_excluding_self", format!("{:?}", syn.mean_synonyms_excluding_self()));
            (report, "synonyms")
        }
    };
    let show = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
    let report = report
        .with_config("task", task)
        .with_config("queries", show(&a.queries))
        .with_config("labels", show(&a.labels))
        .with_config("src", a.spaces.src.display())
        .with_config("tgt", a.spaces.tgt.display())
        .with_config("normalize", !a.spaces.no_normalize)
        .with_config("w", a.w.display())
        .with_config("dict", show(&a.dict))
        .with_config("dict_back", show(&a.dict_back))
        .with_config("exclude_self", a.exclude_self)
        .with_config("metric", m.name())
        .with_config("ks", a.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
    write_json(&a.report, &report)
}

fn run_pipeline_cmd(a: PipelineCmd) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let outcome = run_pipeline(&cfg)?;
    for r in &outcome.reports {
        println!("{} {:?}: {}", cfg.configuration.name(), r.task, serde_json::to_string(&r.precision)?);
        if let Some(acc) = r.accuracy {
            println!("{} accuracy: {acc:.1}", cfg.configuration.name());
        }
    }
    Ok(())
}

fn run_make_benchmark(a: MakeBenchmark) -> Result<()> {
    let bench = make_synthetic_benchmark(&BenchmarkConfig {
        vocab_size: a.vocab,
        dim: a.dim,
        noise_sigma: a.sigma,
        seed: a.seed,
        holdout_fraction: a.holdout,
        family_size: a.family_size,
    })?;
    if bench.undersized {
        eprintln!("warning: vocabulary smaller than twice the dimension");
    }
    bench.write(&a.out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match cli.command {
        Command::TrainSgns(a) => ("train-sgns", run_train_sgns(a)),
        Command::GenInstances(a) => ("gen-instances", run_gen_instances(a)),
        Command::Cluster(a) => ("cluster", run_cluster(a)),
        Command::Align(a) => ("align", run_align(a)),
        Command::Refine(a) => ("refine", run_refine(a)),
        Command::SupervisedAlign(a) => ("supervised-align", run_supervised(a)),
        Command::Retrieve(a) => ("retrieve", run_retrieve(a)),
        Command::Evaluate(a) => ("evaluate", run_evaluate(a)),
        Command::Pipeline(a) => ("pipeline", run_pipeline_cmd(a)),
        Command::MakeBenchmark(a) => ("make-benchmark", run_make_benchmark(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {name}: stage {e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {name}: {e}");
            ExitCode::FAILURE
        }
    }
}
