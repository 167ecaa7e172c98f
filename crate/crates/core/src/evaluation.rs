//! Classification accuracy, translation precision@k, synonym retrieval and the
//! constant most-frequent-word baseline.
//!
//! All percentages are rounded to one decimal place. Queries whose label has no
//! acceptable answer set are excluded from the denominators and counted.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::InstanceSet;
use crate::retrieval::Retriever;
use crate::store::BilingualDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Translation,
    Synonyms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric: String,
    /// Classification accuracy in percent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Precision@k in percent, keyed `p@<k>`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub precision: BTreeMap<String, f64>,
    pub n_queries: usize,
    pub n_scored: usize,
    pub n_excluded: usize,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn with_config(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.config.insert(key.into(), value.to_string());
        self
    }

    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.precision.get(&format!("p@{k}")).copied()
    }

    /// Accuracy for classification, otherwise precision@1.
    pub fn headline(&self) -> Option<f64> {
        self.accuracy.or_else(|| self.precision_at(1))
    }
}

pub fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (1000.0 * hits as f64 / total as f64).round() / 10.0
}

/// `gold[i]` is the acceptable set of query `i`, or `None` when it is excluded.
fn score_ranked(ranked: &[Vec<&str>], gold: &[Option<HashSet<&str>>], ks: &[usize]) -> (BTreeMap<String, f64>, usize) {
    let scored: Vec<(usize, &HashSet<&str>)> = gold.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g))).collect();
    let mut precision = BTreeMap::new();
    for &k in ks {
        let hits = scored.iter().filter(|(i, g)| ranked[*i].iter().take(k).any(|t| g.contains(t))).count();
        precision.insert(format!("p@{k}"), percent(hits, scored.len()));
    }
    (precision, scored.len())
}

fn normalized_ks(ks: &[usize]) -> Result<Vec<usize>> {
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::InvalidConfig("k values must be positive".into()));
    }
    Ok(ks)
}

fn ranked_tokens<'a>(retriever: &'a Retriever, queries: &InstanceSet, k: usize) -> Result<Vec<Vec<&'a str>>> {
    let target = retriever.target();
    Ok(retriever
        .retrieve(queries.vectors(), k)?
        .into_iter()
        .map(|row| row.into_iter().map(|(i, _)| target.token(i)).collect())
        .collect())
}

/// A query is correct when its top retrieved target token equals its label.
pub fn classify(queries: &InstanceSet, retriever: &Retriever) -> Result<EvalReport> {
    let labels = queries.require_labels()?;
    if labels.is_empty() {
        return Err(Error::Empty("no queries".into()));
    }
    let ranked = ranked_tokens(retriever, queries, 1)?;
    let correct = ranked.iter().zip(labels).filter(|(r, l)| r.first() == Some(&l.as_str())).count();
    Ok(EvalReport {
        task: Task::Classification,
        metric: retriever.metric().name(),
        accuracy: Some(percent(correct, labels.len())),
        precision: BTreeMap::new(),
        n_queries: labels.len(),
        n_scored: labels.len(),
        n_excluded: 0,
        config: BTreeMap::new(),
    })
}

fn precision_report(
    task: Task,
    metric: String,
    queries: &InstanceSet,
    retriever: &Retriever,
    gold: Vec<Option<HashSet<&str>>>,
    ks: &[usize],
) -> Result<EvalReport> {
    let labels = queries.require_labels()?;
    let ks = normalized_ks(ks)?;
    let n_scored = gold.iter().filter(|g| g.is_some()).count();
    if n_scored == 0 {
        return Err(Error::Empty("no query has an acceptable answer set".into()));
    }
    let ranked = ranked_tokens(retriever, queries, *ks.last().unwrap())?;
    let (precision, n_scored) = score_ranked(&ranked, &gold, &ks);
    Ok(EvalReport {
        task,
        metric,
        accuracy: None,
        precision,
        n_queries: labels.len(),
        n_scored,
        n_excluded: labels.len() - n_scored,
        config: BTreeMap::new(),
    })
}

/// Precision@k against the dictionary translations of each query's label.
pub fn translate(queries: &InstanceSet, retriever: &Retriever, dictionary: &BilingualDictionary, ks: &[usize]) -> Result<EvalReport> {
    let table = dictionary.translations();
    let gold = queries.require_labels()?.iter().map(|l| table.get(l.as_str()).map(|ts| ts.iter().copied().collect())).collect();
    precision_report(Task::Translation, retriever.metric().name(), queries, retriever, gold, ks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymSets {
    pub sets: BTreeMap<String, BTreeSet<String>>,
    /// Forward-dictionary words whose round trip produced nothing.
    pub n_excluded: usize,
}

impl SynonymSets {
    pub fn get(&self, word: &str) -> Option<&BTreeSet<String>> {
        self.sets.get(word)
    }

    /// Mean set size not counting the word itself.
    pub fn mean_synonyms_excluding_self(&self) -> f64 {
        if self.sets.is_empty() {
            return 0.0;
        }
        let total: usize = self.sets.iter().map(|(w, s)| s.len() - usize::from(s.contains(w))).sum();
        total as f64 / self.sets.len() as f64
    }
}

/// `syn(w)` is the union of the back-translations of every forward translation of `w`.
pub fn derive_synonyms(forward: &BilingualDictionary, backward: &BilingualDictionary, include_self: bool) -> Result<SynonymSets> {
    if forward.is_empty() || backward.is_empty() {
        return Err(Error::Empty("synonym derivation needs two non-empty dictionaries".into()));
    }
    let back = backward.translations();
    let mut sets = BTreeMap::new();
    let mut n_excluded = 0;
    for (w, ts) in forward.translations() {
        let mut set: BTreeSet<String> =
            ts.iter().filter_map(|t| back.get(t)).flatten().map(|s| s.to_string()).collect();
        if include_self {
            set.insert(w.to_string());
        }
        if set.is_empty() {
            n_excluded += 1;
        } else {
            sets.insert(w.to_string(), set);
        }
    }
    Ok(SynonymSets { sets, n_excluded })
}

/// Precision@k where any synonym of the query's label counts as a hit.
pub fn retrieve_synonyms(queries: &InstanceSet, retriever: &Retriever, synonyms: &SynonymSets, ks: &[usize]) -> Result<EvalReport> {
    let gold = queries
        .require_labels()?
        .iter()
        .map(|l| synonyms.get(l).map(|s| s.iter().map(String::as_str).collect()))
        .collect();
    precision_report(Task::Synonyms, retriever.metric().name(), queries, retriever, gold, ks)
}

/// Count of each target token across dictionary pairs.
pub fn paired_distribution(dictionary: &BilingualDictionary) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for (_, t) in dictionary.pairs() {
        *out.entry(t.clone()).or_insert(0) += 1;
    }
    out
}

/// Count of each label.
pub fn label_distribution(labels: &[String]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.clone()).or_insert(0) += 1;
    }
    out
}

/// Always predicts the most frequent tokens of `distribution`; `gold` holds each
/// query's acceptable set, empty sets being excluded.
pub fn major_word_baseline(
    task: Task,
    gold: &[Vec<String>],
    distribution: &BTreeMap<String, u64>,
    ks: &[usize],
) -> Result<EvalReport> {
    if distribution.is_empty() {
        return Err(Error::Empty("training distribution".into()));
    }
    let ks = normalized_ks(ks)?;
    let mut ranked: Vec<(&str, u64)> = distribution.iter().map(|(w, &c)| (w.as_str(), c)).collect();
    // Most frequent first, ties alphabetical.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let prediction: Vec<&str> = ranked.iter().map(|r| r.0).collect();
    let gold_sets: Vec<Option<HashSet<&str>>> = gold
        .iter()
        .map(|g| (!g.is_empty()).then(|| g.iter().map(String::as_str).collect()))
        .collect();
    let rankings = vec![prediction; gold.len()];
    let (precision, n_scored) = score_ranked(&rankings, &gold_sets, &ks);
    let mut report = EvalReport {
        task,
        metric: "major-word".into(),
        accuracy: None,
        precision,
        n_queries: gold.len(),
        n_scored,
        n_excluded: gold.len() - n_scored,
        config: BTreeMap::new(),
    };
    if task == Task::Classification {
        report.accuracy = report.precision_at(1);
        report.precision.clear();
    }
    Ok(report)
}
