//! Label-free scoring: pick a pseudo-normal context by clustering, then
//! repeatedly score, re-select the lowest-scoring queries as the next context,
//! impute context scores and average over rounds.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Embeddings;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kmeans::{kmeans, KMeansConfig};
use crate::model::Model;
use crate::numeric::Matrix;
use crate::scoring::{ContextSplit, ScoreVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    FeatureKmeans,
    Random,
    MeanDegree,
    EmbeddingKmeans,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroShotConfig {
    pub n_k: usize,
    pub rounds: usize,
    pub init_strategy: InitStrategy,
    /// Also seeds the `random` strategy.
    pub kmeans: KMeansConfig,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            n_k: 10,
            rounds: 3,
            init_strategy: InitStrategy::FeatureKmeans,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl ZeroShotConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_k == 0 || self.rounds == 0 {
            return Err(Error::Config("zero-shot needs n_k >= 1 and rounds >= 1".into()));
        }
        if self.n_k.saturating_mul(self.rounds) >= n {
            return Err(Error::Config(format!(
                "n_k * rounds = {} must be below the node count {n}",
                self.n_k * self.rounds
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub context: Vec<usize>,
    pub query_scores: BTreeMap<usize, f64>,
    /// Every node; context nodes carry the round's minimum query score.
    pub imputed: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotTrace {
    pub init_strategy: InitStrategy,
    pub kmeans_repairs: usize,
    pub rounds: Vec<RoundTrace>,
    pub final_scores: BTreeMap<usize, f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One representative per cluster: the member closest to its centroid.
fn cluster_representatives(x: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<(Vec<usize>, usize)> {
    let km = kmeans(x, k, cfg)?;
    let mut taken = vec![false; x.rows()];
    let mut picks = Vec::with_capacity(k);
    for c in 0..k {
        let centroid = km.centroids.row(c);
        let members = (0..x.rows()).filter(|&i| km.assignment[i] == c);
        let mut best = members
            .map(|i| (sq_dist(x.row(i), centroid), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if best.is_none() {
            // Cluster lost all members (coincident points): nearest free node instead.
            best = (0..x.rows())
                .filter(|&i| !taken[i])
                .map(|i| (sq_dist(x.row(i), centroid), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let (_, i) = best.expect("k <= n leaves a free node");
        taken[i] = true;
        picks.push(i);
    }
    Ok((picks, km.repairs))
}

/// Initial pseudo-normal context (sorted ascending) and the k-means repair count.
pub fn init_pseudo_context(
    g: &Graph,
    aligned: &Matrix,
    embeddings: &Matrix,
    cfg: &ZeroShotConfig,
) -> Result<(ContextSplit, usize)> {
    let n = g.node_count();
    if cfg.n_k == 0 || cfg.n_k > n {
        return Err(Error::Config(format!("pseudo-context of {} nodes from {n}", cfg.n_k)));
    }
    let (mut context, repairs) = match cfg.init_strategy {
        InitStrategy::FeatureKmeans => cluster_representatives(aligned, cfg.n_k, &cfg.kmeans)?,
        InitStrategy::EmbeddingKmeans => cluster_representatives(embeddings, cfg.n_k, &cfg.kmeans)?,
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.kmeans.seed);
            (index::sample(&mut rng, n, cfg.n_k).into_vec(), 0)
        }
        InitStrategy::MeanDegree => {
            let mean = 2.0 * g.edge_count() as f64 / n as f64;
            let mut ids: Vec<usize> = (0..n).collect();
            let gap = |i: usize| (g.degree(i) as f64 - mean).abs();
            ids.sort_by(|&a, &b| gap(a).total_cmp(&gap(b)).then(a.cmp(&b)));
            ids.truncate(cfg.n_k);
            (ids, 0)
        }
    };
    context.sort_unstable();
    Ok((ContextSplit::complement(context, n)?, repairs))
}

/// Scores the current queries and selects the `n_k` lowest as the next context.
pub fn refine_round(
    model: &Model,
    emb: &Embeddings,
    split: &ContextSplit,
    n_k: usize,
) -> Result<(Vec<f64>, ContextSplit)> {
    if n_k > split.query.len() {
        return Err(Error::Config(format!(
            "cannot select {n_k} context nodes from {} queries",
            split.query.len()
        )));
    }
    let (scores, _) = model.score_split(emb, split)?;
    let next = lowest_scoring(&split.query, &scores, n_k);
    let n = split.context.len() + split.query.len();
    Ok((scores, ContextSplit::complement(next, n)?))
}

/// The `k` ids with the smallest scores (ties by id), returned ascending.
pub fn lowest_scoring(ids: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(ids[a].cmp(&ids[b])));
    let mut picked: Vec<usize> = order.iter().take(k).map(|&p| ids[p]).collect();
    picked.sort_unstable();
    picked
}

/// Full score map for one round: queries keep their score, context nodes get
/// the smallest query score.
pub fn impute(split: &ContextSplit, query_scores: &[f64]) -> Result<BTreeMap<usize, f64>> {
    if query_scores.len() != split.query.len() || query_scores.is_empty() {
        return Err(Error::DimensionMismatch {
            op: "impute",
            detail: format!("{} scores for {} queries", query_scores.len(), split.query.len()),
        });
    }
    let floor = query_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: BTreeMap<usize, f64> = split.query.iter().copied().zip(query_scores.iter().copied()).collect();
    out.extend(split.context.iter().map(|&v| (v, floor)));
    Ok(out)
}

/// Arithmetic mean of the per-round imputed maps, summed in round order.
pub fn impute_and_average(rounds: &[RoundTrace]) -> Result<ScoreVector> {
    let first = rounds
        .first()
        .ok_or_else(|| Error::Contract("no rounds to average".into()))?;
    let t = rounds.len() as f64;
    let mut scores = BTreeMap::new();
    for &v in first.imputed.keys() {
        let mut sum = 0.0;
        for r in rounds {
            sum += *r.imputed.get(&v).ok_or_else(|| {
                Error::Contract(format!("node {v} missing from a round's imputed scores"))
            })?;
        }
        scores.insert(v, sum / t);
    }
    Ok(ScoreVector {
        scores,
        round_history: Some(rounds.iter().map(|r| r.imputed.clone()).collect()),
    })
}

fn run_rounds(
    model: &Model,
    emb: &Embeddings,
    mut split: ContextSplit,
    cfg: &ZeroShotConfig,
) -> Result<Vec<RoundTrace>> {
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (scores, next) = refine_round(model, emb, &split, cfg.n_k)?;
        rounds.push(RoundTrace {
            imputed: impute(&split, &scores)?,
            query_scores: split.query.iter().copied().zip(scores).collect(),
            context: split.context,
        });
        split = next;
    }
    Ok(rounds)
}

fn finish(init_strategy: InitStrategy, repairs: usize, rounds: Vec<RoundTrace>) -> Result<(ScoreVector, ZeroShotTrace)> {
    let scores = impute_and_average(&rounds)?;
    let trace = ZeroShotTrace {
        init_strategy,
        kmeans_repairs: repairs,
        rounds,
        final_scores: scores.scores.clone(),
    };
    Ok((scores, trace))
}

/// Zero-shot scores for every node. Labels on `g` are stripped before use.
pub fn score_zero_shot(g: &Graph, model: &Model, cfg: &ZeroShotConfig) -> Result<(ScoreVector, ZeroShotTrace)> {
    let g = g.without_labels();
    cfg.validate(g.node_count())?;
    let prepared = model.prepare(&g)?;
    let emb = model.embed(&prepared)?;
    let (split, repairs) = init_pseudo_context(&g, &prepared.aligned.matrix, &emb.h, cfg)?;
    let rounds = run_rounds(model, &emb, split, cfg)?;
    finish(cfg.init_strategy, repairs, rounds)
}

/// Like [`score_zero_shot`] but starting from a caller-chosen context.
pub fn score_zero_shot_from(
    g: &Graph,
    model: &Model,
    cfg: &ZeroShotConfig,
    initial_context: Vec<usize>,
) -> Result<(ScoreVector, ZeroShotTrace)> {
    let g = g.without_labels();
    cfg.validate(g.node_count())?;
    if initial_context.len() != cfg.n_k {
        return Err(Error::Config(format!(
            "initial context has {} nodes, n_k is {}",
            initial_context.len(),
            cfg.n_k
        )));
    }
    let prepared = model.prepare(&g)?;
    let emb = model.embed(&prepared)?;
    let split = ContextSplit::complement(initial_context, g.node_count())?;
    let rounds = run_rounds(model, &emb, split, cfg)?;
    finish(cfg.init_strategy, 0, rounds)
}
