//! Evaluation harness shared by the `sweep` command and the acceptance suite:
//! train on one domain collection, score unseen domains, report ranking metrics.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{evaluate, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::scoring::ScoreVector;
use crate::trainer::{train, TrainConfig};
use crate::zero_shot::{score_zero_shot, ZeroShotConfig};

/// Seeded draw of `n_k` labeled-normal nodes to act as the few-shot context.
pub fn sample_normals(g: &Graph, n_k: usize, seed: u64) -> Result<Vec<usize>> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    let normals: Vec<usize> = (0..g.node_count()).filter(|&i| !labels[i]).collect();
    if normals.len() <= n_k {
        return Err(Error::InsufficientNormals {
            needed: n_k + 1,
            found: normals.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = index::sample(&mut rng, normals.len(), n_k)
        .into_iter()
        .map(|p| normals[p])
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Metrics over the nodes present in `scores`.
pub fn evaluate_scores(g: &Graph, scores: &ScoreVector) -> Result<MetricReport> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    let mut s = Vec::with_capacity(scores.len());
    let mut y = Vec::with_capacity(scores.len());
    for (&id, &v) in &scores.scores {
        if id >= g.node_count() {
            return Err(Error::IndexOutOfRange {
                index: id,
                n: g.node_count(),
            });
        }
        s.push(v);
        y.push(labels[id]);
    }
    evaluate(&s, &y)
}

pub fn evaluate_few_shot(model: &Model, g: &Graph, n_k: usize, seed: u64) -> Result<MetricReport> {
    let normals = sample_normals(g, n_k, seed)?;
    evaluate_scores(g, &model.score_few_shot(g, &normals)?)
}

pub fn evaluate_zero_shot(model: &Model, g: &Graph, cfg: &ZeroShotConfig) -> Result<MetricReport> {
    let (scores, _) = score_zero_shot(g, model, cfg)?;
    evaluate_scores(g, &scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub seed: u64,
    pub domain: String,
    pub few_shot: Option<MetricReport>,
    pub zero_shot: Option<MetricReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralistReport {
    pub results: Vec<DomainResult>,
    pub few_shot_auroc: Option<Summary>,
    pub zero_shot_auroc: Option<Summary>,
}

/// What to run per seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Protocol {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Few-shot context size; `None` skips few-shot evaluation.
    pub few_shot_n_k: Option<usize>,
    pub zero_shot: Option<ZeroShotConfig>,
}

/// Trains once per seed (seed replaces the train, context and k-means seeds)
/// and evaluates every test domain.
pub fn run_generalist(train_set: &[Graph], test_set: &[Graph], protocol: &Protocol, seeds: &[u64]) -> Result<GeneralistReport> {
    let mut results = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..protocol.train };
        let model = train(train_set, &protocol.model, &cfg)?.model;
        results.extend(evaluate_model(&model, test_set, protocol, seed)?);
    }
    Ok(summarize(results))
}

/// Evaluates an already trained model on every test domain.
pub fn evaluate_model(model: &Model, test_set: &[Graph], protocol: &Protocol, seed: u64) -> Result<Vec<DomainResult>> {
    let mut out = Vec::with_capacity(test_set.len());
    for g in test_set {
        let few_shot = match protocol.few_shot_n_k {
            Some(n_k) => Some(evaluate_few_shot(model, g, n_k, seed)?),
            None => None,
        };
        let zero_shot = match protocol.zero_shot {
            Some(z) => {
                let mut z = z;
                z.kmeans.seed = seed;
                Some(evaluate_zero_shot(model, g, &z)?)
            }
            None => None,
        };
        out.push(DomainResult {
            seed,
            domain: g.name().to_string(),
            few_shot,
            zero_shot,
        });
    }
    Ok(out)
}

pub fn summarize(results: Vec<DomainResult>) -> GeneralistReport {
    let few: Vec<f64> = results.iter().filter_map(|r| r.few_shot.map(|m| m.auroc)).collect();
    let zero: Vec<f64> = results.iter().filter_map(|r| r.zero_shot.map(|m| m.auroc)).collect();
    GeneralistReport {
        few_shot_auroc: Summary::of(&few),
        zero_shot_auroc: Summary::of(&zero),
        results,
    }
}
