//! End-to-end runs of the configuration ladder.
//!
//! | configuration | source grouping        | alignment            |
//! |---------------|------------------------|----------------------|
//! | `Astar`       | by true label          | supervised solve     |
//! | `A`           | by true label          | adversarial + refine |
//! | `B`           | k-means                | adversarial + refine |
//! | `F`           | k-means, noisy preset  | adversarial + refine |
//! | `synthetic`   | none (type-level pair) | adversarial + refine |
//!
//! `F` simulates naive equal-length chunking by generating instances with
//! contamination 0.5 and twice the instance noise.
//!
//! Instance labels are tokens of the target space, so classification checks the
//! retrieved target token against the label. Queries are restricted to words of
//! the held-out dictionary.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::adversarial::{train_adversarial, AdversarialConfig, EpochTrace, Sampling};
use crate::benchmark::{make_synthetic_benchmark, BenchmarkConfig};
use crate::cluster::{average_clusters, cluster_purity, group_by_label, kmeans_cluster, KMeansConfig};
use crate::error::{Error, Result};
use crate::evaluation::{classify, translate, EvalReport};
use crate::instances::{generate_instances, load_instances, save_instances, InstanceSet};
use crate::mapping::{save_map, LinearMap};
use crate::refine::{refine, solve_supervised, RefineConfig};
use crate::retrieval::{Metric, Retriever};
use crate::store::{
    attach_frequencies, load_dictionary, load_embeddings, load_frequencies, save_dictionary, save_embeddings,
    unit_normalize, BilingualDictionary, EmbeddingSpace,
};

const BENCHMARK_SEED: u64 = 0;
const INSTANCE_SEED: u64 = 1;
const KMEANS_SEED: u64 = 2;
const ADVERSARIAL_SEED: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Configuration {
    #[serde(rename = "Astar")]
    AStar,
    A,
    B,
    F,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Configuration {
    pub fn name(&self) -> &'static str {
        match self {
            Configuration::AStar => "Astar",
            Configuration::A => "A",
            Configuration::B => "B",
            Configuration::F => "F",
            Configuration::Synthetic => "synthetic",
        }
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Astar" | "A*" | "astar" => Ok(Configuration::AStar),
            "A" | "a" => Ok(Configuration::A),
            "B" | "b" => Ok(Configuration::B),
            "F" | "f" => Ok(Configuration::F),
            "synthetic" => Ok(Configuration::Synthetic),
            _ => Err(Error::InvalidConfig(format!("unknown configuration {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Supervised,
    Unsupervised,
}

/// Segment-level evaluation queries every instance; type-level queries one
/// label-averaged vector per word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalLevel {
    Segment,
    Type,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub configuration: Configuration,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Type-level source space; instances are generated from it.
    pub source: Option<PathBuf>,
    pub source_freq: Option<PathBuf>,
    /// When absent, a synthetic benchmark is generated.
    pub target: Option<PathBuf>,
    pub target_freq: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub dict_train: Option<PathBuf>,
    pub dict_test: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub per_word: usize,
    pub instance_sigma: f64,
    /// Defaults to 0, or 0.5 for `F`.
    pub contamination: Option<f64>,
    /// Defaults to the number of distinct labels.
    pub kmeans_k: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub adversarial: AdversarialConfig,
    pub refine: RefineConfig,
    pub normalize: bool,
    pub metric: Metric,
    pub level: EvalLevel,
    pub ks: Vec<usize>,
    /// Defaults to supervised for `Astar`, unsupervised otherwise.
    pub alignment: Option<Alignment>,
}

impl PipelineConfig {
    pub fn new(configuration: Configuration, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            configuration,
            seed: 0,
            output_dir: output_dir.into(),
            source: None,
            source_freq: None,
            target: None,
            target_freq: None,
            instances: None,
            labels: None,
            dict_train: None,
            dict_test: None,
            benchmark: BenchmarkConfig { noise_sigma: 0.1, ..BenchmarkConfig::default() },
            per_word: 5,
            instance_sigma: 0.1,
            contamination: None,
            kmeans_k: None,
            kmeans_restarts: 1,
            kmeans_max_iters: 50,
            kmeans_tol: 1e-8,
            adversarial: AdversarialConfig::desk_scale(),
            refine: RefineConfig::default(),
            normalize: true,
            metric: Metric::Csls { k_neighbors: 10 },
            level: EvalLevel::Segment,
            ks: vec![1, 5],
            alignment: None,
        }
    }

    pub fn effective_alignment(&self) -> Alignment {
        self.alignment.unwrap_or(match self.configuration {
            Configuration::AStar => Alignment::Supervised,
            _ => Alignment::Unsupervised,
        })
    }

    pub fn effective_contamination(&self) -> f64 {
        self.contamination.unwrap_or(if self.configuration == Configuration::F { 0.5 } else { 0.0 })
    }

    pub fn effective_instance_sigma(&self) -> f64 {
        if self.configuration == Configuration::F {
            2.0 * self.instance_sigma
        } else {
            self.instance_sigma
        }
    }

    /// Parses a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {k:?}", i + 1)));
            }
        }
        let configuration = entries
            .remove("configuration")
            .ok_or_else(|| Error::InvalidConfig("missing key \"configuration\"".into()))?
            .parse()?;
        let output_dir = entries.remove("output_dir").unwrap_or_else(|| "pipeline_out".into());
        let mut cfg = Self::new(configuration, output_dir);
        for (k, v) in entries {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got {v:?}"))),
            }
        }
        let path = || Some(PathBuf::from(value));
        match key {
            "seed" => self.seed = num(key, value)?,
            "source" => self.source = path(),
            "source_freq" => self.source_freq = path(),
            "target" => self.target = path(),
            "target_freq" => self.target_freq = path(),
            "instances" => self.instances = path(),
            "labels" => self.labels = path(),
            "dict_train" => self.dict_train = path(),
            "dict_test" => self.dict_test = path(),
            "vocab_size" => self.benchmark.vocab_size = num(key, value)?,
            "dim" => self.benchmark.dim = num(key, value)?,
            "benchmark_sigma" => self.benchmark.noise_sigma = num(key, value)?,
            "holdout_fraction" => self.benchmark.holdout_fraction = num(key, value)?,
            "family_size" => self.benchmark.family_size = num(key, value)?,
            "per_word" => self.per_word = num(key, value)?,
            "instance_sigma" => self.instance_sigma = num(key, value)?,
            "contamination" => self.contamination = Some(num(key, value)?),
            "kmeans_k" => self.kmeans_k = Some(num(key, value)?),
            "kmeans_restarts" => self.kmeans_restarts = num(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = num(key, value)?,
            "kmeans_tol" => self.kmeans_tol = num(key, value)?,
            "adv_epochs" => self.adversarial.epochs = num(key, value)?,
            "adv_steps" => self.adversarial.steps_per_epoch = num(key, value)?,
            "adv_batch" => self.adversarial.batch_size = num(key, value)?,
            "adv_dis_steps" => self.adversarial.dis_steps = num(key, value)?,
            "adv_lr_discriminator" => self.adversarial.lr_discriminator = num(key, value)?,
            "adv_lr_mapping" => self.adversarial.lr_mapping = num(key, value)?,
            "adv_smoothing" => self.adversarial.label_smoothing = num(key, value)?,
            "adv_dropout" => self.adversarial.input_dropout = num(key, value)?,
            "adv_beta" => self.adversarial.ortho_beta = num(key, value)?,
            "adv_hidden" => self.adversarial.hidden = num(key, value)?,
            "adv_selection_top" => self.adversarial.selection_top = num(key, value)?,
            "adv_sampling" => {
                self.adversarial.sampling = match value {
                    "uniform" => Sampling::Uniform,
                    "frequency" => Sampling::Frequency,
                    _ => return Err(Error::InvalidConfig(format!("adv_sampling: unknown mode {value:?}"))),
                }
            }
            "refine_iterations" => self.refine.iterations = num(key, value)?,
            "refine_dict_max_rank" => self.refine.dict_max_rank = num(key, value)?,
            "refine_orthogonal" => self.refine.orthogonal = flag(key, value)?,
            "csls_k" => {
                let k: usize = num(key, value)?;
                self.refine.csls_k = k;
                self.adversarial.csls_k = k;
                if let Metric::Csls { .. } = self.metric {
                    self.metric = Metric::Csls { k_neighbors: k };
                }
            }
            "metric" => {
                self.metric = match value {
                    "cosine" => Metric::Cosine,
                    "csls" => Metric::Csls { k_neighbors: self.refine.csls_k },
                    _ => return Err(Error::InvalidConfig(format!("metric: unknown metric {value:?}"))),
                }
            }
            "normalize" => self.normalize = flag(key, value)?,
            "eval_level" => {
                self.level = match value {
                    "segment" => EvalLevel::Segment,
                    "type" => EvalLevel::Type,
                    _ => return Err(Error::InvalidConfig(format!("eval_level: unknown level {value:?}"))),
                }
            }
            "ks" => {
                self.ks = value.split(',').map(|k| num(key, k.trim())).collect::<Result<_>>()?;
            }
            "alignment" => {
                self.alignment = Some(match value {
                    "supervised" => Alignment::Supervised,
                    "unsupervised" => Alignment::Unsupervised,
                    _ => return Err(Error::InvalidConfig(format!("alignment: unknown mode {value:?}"))),
                })
            }
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.adversarial.validate()?;
        if self.per_word == 0 || self.kmeans_restarts == 0 || self.kmeans_max_iters == 0 {
            return Err(Error::InvalidConfig("per_word and k-means counts must be positive".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig("ks must be positive".into()));
        }
        if self.target.is_some() {
            if self.dict_test.is_none() {
                return Err(Error::InvalidConfig("dict_test is required with an external target".into()));
            }
            let has_source = match self.configuration {
                Configuration::Synthetic => self.source.is_some(),
                _ => self.source.is_some() || self.instances.is_some(),
            };
            if !has_source {
                return Err(Error::InvalidConfig("an external target needs a source space or instances".into()));
            }
            if self.instances.is_some() && self.labels.is_none() {
                return Err(Error::InvalidConfig("instances need a labels file".into()));
            }
        }
        if self.effective_alignment() == Alignment::Supervised && self.target.is_some() && self.dict_train.is_none() {
            return Err(Error::InvalidConfig("supervised alignment needs dict_train".into()));
        }
        Ok(())
    }

    /// Every setting with its effective value.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        put("configuration", self.configuration.name().into());
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("source", opt(&self.source));
        put("source_freq", opt(&self.source_freq));
        put("target", opt(&self.target));
        put("target_freq", opt(&self.target_freq));
        put("instances", opt(&self.instances));
        put("labels", opt(&self.labels));
        put("dict_train", opt(&self.dict_train));
        put("dict_test", opt(&self.dict_test));
        put("vocab_size", self.benchmark.vocab_size.to_string());
        put("dim", self.benchmark.dim.to_string());
        put("benchmark_sigma", self.benchmark.noise_sigma.to_string());
        put("holdout_fraction", self.benchmark.holdout_fraction.to_string());
        put("family_size", self.benchmark.family_size.to_string());
        put("per_word", self.per_word.to_string());
        put("instance_sigma", self.effective_instance_sigma().to_string());
        put("contamination", self.effective_contamination().to_string());
        put("kmeans_k", self.kmeans_k.map_or("labels".into(), |k| k.to_string()));
        put("kmeans_restarts", self.kmeans_restarts.to_string());
        put("kmeans_max_iters", self.kmeans_max_iters.to_string());
        put("kmeans_tol", self.kmeans_tol.to_string());
        let a = &self.adversarial;
        put("adv_epochs", a.epochs.to_string());
        put("adv_steps", a.steps_per_epoch.to_string());
        put("adv_batch", a.batch_size.to_string());
        put("adv_dis_steps", a.dis_steps.to_string());
        put("adv_lr_discriminator", a.lr_discriminator.to_string());
        put("adv_lr_mapping", a.lr_mapping.to_string());
        put("adv_smoothing", a.label_smoothing.to_string());
        put("adv_dropout", a.input_dropout.to_string());
        put("adv_beta", a.ortho_beta.to_string());
        put("adv_hidden", a.hidden.to_string());
        put("adv_selection_top", a.selection_top.to_string());
        put("adv_sampling", format!("{:?}", a.sampling).to_lowercase());
        put("refine_iterations", self.refine.iterations.to_string());
        put("refine_dict_max_rank", self.refine.dict_max_rank.to_string());
        put("refine_orthogonal", self.refine.orthogonal.to_string());
        put("csls_k", self.refine.csls_k.to_string());
        put("metric", self.metric.name());
        put("normalize", self.normalize.to_string());
        put("eval_level", format!("{:?}", self.level).to_lowercase());
        put("ks", self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        put("alignment", format!("{:?}", self.effective_alignment()).to_lowercase());
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KMeansSummary {
    pub k: usize,
    pub wcss: f64,
    pub iterations: usize,
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub configuration: Configuration,
    pub reports: Vec<EvalReport>,
    pub kmeans: Option<KMeansSummary>,
    pub adversarial_trace: Vec<EpochTrace>,
    pub refine_dictionary_sizes: Vec<usize>,
    /// Every file written, relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutcome {
    /// The first report's headline number.
    pub fn headline(&self) -> Option<f64> {
        self.reports.first().and_then(EvalReport::headline)
    }
}

struct Data {
    source: Option<EmbeddingSpace>,
    target: EmbeddingSpace,
    train: BilingualDictionary,
    test: BilingualDictionary,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

fn load_space(path: &Path, freq: Option<&PathBuf>) -> Result<EmbeddingSpace> {
    let space = load_embeddings(path, None)?;
    match freq {
        Some(f) => attach_frequencies(space, &load_frequencies(f)?),
        None => Ok(space),
    }
}

fn load_data(cfg: &PipelineConfig, art: &mut Artifacts) -> Result<Data> {
    match &cfg.target {
        None => {
            let bench = make_synthetic_benchmark(&BenchmarkConfig {
                seed: cfg.seed.wrapping_add(BENCHMARK_SEED),
                ..cfg.benchmark.clone()
            })?;
            for name in ["source.vec", "target.vec", "source.freq", "target.freq", "dict.train.txt", "dict.test.txt", "rotation.txt"] {
                art.path(&format!("benchmark/{name}"));
            }
            bench.write(art.dir.join("benchmark"))?;
            Ok(Data { source: Some(bench.source), target: bench.target, train: bench.train, test: bench.test })
        }
        Some(target) => {
            let target = load_space(target, cfg.target_freq.as_ref())?;
            let source = cfg.source.as_ref().map(|s| load_space(s, cfg.source_freq.as_ref())).transpose()?;
            let train = cfg.dict_train.as_ref().map(load_dictionary).transpose()?.unwrap_or_default();
            let test = load_dictionary(cfg.dict_test.as_ref().expect("validated"))?;
            Ok(Data { source, target, train, test })
        }
    }
}

/// Instances labelled with target tokens: each source word takes its first translation.
fn source_instances(cfg: &PipelineConfig, data: &Data, art: &mut Artifacts) -> Result<InstanceSet> {
    let set = match &cfg.instances {
        Some(path) => load_instances(path, cfg.labels.as_deref())?,
        None => {
            let base = data.source.as_ref().ok_or_else(|| Error::InvalidConfig("no source space".into()))?;
            let mut translation: BTreeMap<&str, &str> = BTreeMap::new();
            for (s, t) in data.train.pairs().iter().chain(data.test.pairs()) {
                translation.entry(s.as_str()).or_insert(t.as_str());
            }
            generate_instances(
                base,
                cfg.per_word,
                cfg.effective_instance_sigma(),
                cfg.effective_contamination(),
                cfg.seed.wrapping_add(INSTANCE_SEED),
            )?
            .relabel(|w| translation.get(w).map_or(w, |t| *t).to_string())?
        }
    };
    let (v, l) = (art.path("instances.vec"), art.path("instances.labels"));
    save_instances(&set, v, Some(&l))?;
    Ok(set)
}

fn align(
    cfg: &PipelineConfig,
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    supervision: &BilingualDictionary,
    outcome: &mut PipelineOutcome,
    art: &mut Artifacts,
) -> Result<LinearMap> {
    let map = match cfg.effective_alignment() {
        Alignment::Supervised => {
            let pairs = supervision.pairs().iter().filter(|(s, t)| source.index_of(s).is_some() && target.index_of(t).is_some());
            let dict = BilingualDictionary::from_pairs(pairs.cloned());
            save_dictionary(&dict, art.path("dict.supervision.txt"))?;
            solve_supervised(source, target, &dict, cfg.refine.orthogonal)?.map
        }
        Alignment::Unsupervised => {
            let adv_cfg = AdversarialConfig { seed: cfg.seed.wrapping_add(ADVERSARIAL_SEED), ..cfg.adversarial.clone() };
            let adv = train_adversarial(source, target, &adv_cfg)?;
            save_map(&adv.map, art.path("map.adversarial.txt"))?;
            art.json("trace.adversarial.json", &adv.trace)?;
            outcome.adversarial_trace = adv.trace;
            let refined = refine(source, target, &adv.map, &cfg.refine)?;
            save_dictionary(&refined.dictionary, art.path("dict.induced.txt"))?;
            outcome.refine_dictionary_sizes = refined.dictionary_sizes;
            refined.map
        }
    };
    save_map(&map, art.path("map.txt"))?;
    Ok(map)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    stage("config", || cfg.validate())?;
    let dir = cfg.output_dir.clone();
    stage("setup", || fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)))?;
    let mut art = Artifacts { dir, written: Vec::new() };
    let echo = cfg.echo();
    stage("setup", || {
        let path = art.path("config.effective.txt");
        let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    })?;
    let mut outcome = PipelineOutcome {
        configuration: cfg.configuration,
        reports: Vec::new(),
        kmeans: None,
        adversarial_trace: Vec::new(),
        refine_dictionary_sizes: Vec::new(),
        artifacts: Vec::new(),
    };

    let data = stage("data", || load_data(cfg, &mut art))?;
    let normalized = |s: &EmbeddingSpace| if cfg.normalize { unit_normalize(s) } else { Ok(s.clone()) };
    let target = stage("normalize", || normalized(&data.target))?;

    if cfg.configuration == Configuration::Synthetic {
        let source = stage("normalize", || normalized(data.source.as_ref().expect("validated")))?;
        let map = stage("align", || align(cfg, &source, &target, &data.train, &mut outcome, &mut art))?;
        let report = stage("evaluate", || {
            let retriever = Retriever::new(&source, &target, &map, cfg.metric)?;
            translate(&InstanceSet::from_space(&source), &retriever, &data.test, &cfg.ks)
        })?;
        outcome.reports.push(with_echo(report, &echo));
    } else {
        let instances = stage("instances", || source_instances(cfg, &data, &mut art))?;
        let grouped = stage("grouping", || match cfg.configuration {
            Configuration::AStar | Configuration::A => {
                let space = group_by_label(&instances)?;
                save_embeddings(&space, art.path("grouped.vec"))?;
                Ok(space)
            }
            _ => {
                let labels = instances.require_labels()?;
                let distinct = labels.iter().collect::<HashSet<_>>().len();
                let km_cfg = KMeansConfig {
                    k: cfg.kmeans_k.unwrap_or(distinct),
                    max_iters: cfg.kmeans_max_iters,
                    restarts: cfg.kmeans_restarts,
                    tol: cfg.kmeans_tol,
                    seed: cfg.seed.wrapping_add(KMEANS_SEED),
                };
                // Clustering sees vectors only; labels are used for the purity diagnostic.
                let unlabelled = InstanceSet::new(instances.vectors().clone(), None)?;
                let km = kmeans_cluster(&unlabelled, &km_cfg)?;
                let summary = KMeansSummary {
                    k: km_cfg.k,
                    wcss: km.wcss,
                    iterations: km.iterations,
                    purity: Some(cluster_purity(&km.assignment, labels)?),
                };
                art.json("kmeans.json", &summary)?;
                outcome.kmeans = Some(summary);
                let space = average_clusters(&unlabelled, &km.assignment)?;
                save_embeddings(&space, art.path("grouped.vec"))?;
                Ok(space)
            }
        })?;
        let source = stage("normalize", || normalized(&grouped))?;
        // Labels are target tokens, so supervision pairs each training target word with itself.
        let supervision = BilingualDictionary::from_pairs(data.train.pairs().iter().map(|(_, t)| (t.clone(), t.clone())));
        let map = stage("align", || align(cfg, &source, &target, &supervision, &mut outcome, &mut art))?;
        let report = stage("evaluate", || {
            let held_out: HashSet<&str> = data.test.pairs().iter().map(|(_, t)| t.as_str()).collect();
            let queries = instances.filter_labels(|l| held_out.contains(l))?;
            let queries = match cfg.level {
                EvalLevel::Segment => queries,
                EvalLevel::Type => InstanceSet::from_space(&group_by_label(&queries)?),
            };
            if queries.is_empty() {
                return Err(Error::Empty("no held-out queries".into()));
            }
            let retriever = Retriever::new(&source, &target, &map, cfg.metric)?;
            classify(&queries, &retriever)
        })?;
        outcome.reports.push(with_echo(report, &echo));
    }

    stage("report", || art.json("report.json", &outcome.reports))?;
    outcome.artifacts = art.written;
    Ok(outcome)
}

fn with_echo(mut report: EvalReport, echo: &BTreeMap<String, String>) -> EvalReport {
    report.config = echo.clone();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_overrides() {
        let cfg = PipelineConfig::parse("configuration = F\n# comment\nseed=7\ninstance_sigma = 0.2 # trailing\nks=1,10\n").unwrap();
        assert_eq!(cfg.configuration, Configuration::F);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.effective_instance_sigma(), 0.4);
        assert_eq!(cfg.effective_contamination(), 0.5);
        assert_eq!(cfg.ks, vec![1, 10]);
        assert_eq!(cfg.effective_alignment(), Alignment::Unsupervised);
    }

    #[test]
    fn parse_errors() {
        assert!(PipelineConfig::parse("seed = 1").is_err());
        assert!(PipelineConfig::parse("configuration = Z").is_err());
        assert!(PipelineConfig::parse("configuration = A\nbogus = 1").is_err());
        assert!(PipelineConfig::parse("configuration = A\nseed = x").is_err());
        assert!(PipelineConfig::parse("configuration = A\nseed = 1\nseed = 2").is_err());
        assert!(PipelineConfig::parse("configuration = A\ntarget = t.vec").is_err());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new(Configuration::A, dir.path());
        cfg.benchmark.vocab_size = 0;
        match run_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "data"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn supervised_noise_free_synthetic_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new(Configuration::Synthetic, dir.path());
        cfg.benchmark = BenchmarkConfig { vocab_size: 200, dim: 10, ..BenchmarkConfig::default() };
        cfg.alignment = Some(Alignment::Supervised);
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.headline(), Some(100.0));
        for a in &out.artifacts {
            assert!(dir.path().join(a).exists(), "{a:?}");
        }
    }
}
