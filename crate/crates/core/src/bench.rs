//! Wall-clock timing of the inference phases on random graphs of growing size.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::align;
use crate::encoder::{encode_propagated, PropagatedFeatures};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph};
use crate::model::Model;
use crate::numeric::Matrix;
use crate::scoring::ContextSplit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub phase: String,
    /// Fastest of the repeats.
    pub seconds: f64,
}

/// Uniform random graph with exactly `m` undirected edges and uniform features.
pub fn random_graph(n: usize, m: usize, d: usize, seed: u64) -> Result<Graph> {
    if n < 2 || m > n * (n - 1) / 2 {
        return Err(Error::Config(format!("cannot place {m} edges on {n} nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    while set.len() < m {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<_> = set.into_iter().collect();
    let x = Matrix::from_fn(n, d, |_, _| rng.random::<f64>());
    Graph::from_edges(format!("bench-{n}-{m}"), n, &edges, x, None)
}

fn fastest<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(v);
    }
    Ok((best, out.unwrap()))
}

/// Times alignment, encoding (propagation plus MLP) and few-shot scoring
/// with the first `n_k` nodes as context.
pub fn time_phases(model: &Model, g: &Graph, n_k: usize, repeats: usize) -> Result<Vec<BenchRow>> {
    let cfg = &model.config;
    let (t_align, aligned) = fastest(repeats, || align(g, cfg.unified_dim, cfg.alignment))?;
    let (t_encode, emb) = fastest(repeats, || {
        let adj = normalize_adjacency(g);
        let prop = PropagatedFeatures::compute(&adj, &aligned.matrix, cfg.encoder.hops)?;
        encode_propagated(&prop, &model.params, &cfg.encoder)
    })?;
    let split = ContextSplit::complement((0..n_k).collect(), g.node_count())?;
    let (t_score, _) = fastest(repeats, || model.score_split(&emb, &split))?;
    let row = |phase: &str, seconds| BenchRow {
        n: g.node_count(),
        m: g.edge_count(),
        phase: phase.into(),
        seconds,
    };
    Ok(vec![row("align", t_align), row("encode", t_encode), row("score", t_score)])
}

pub fn run_bench(
    model: &Model,
    n: usize,
    edge_counts: &[usize],
    raw_dim: usize,
    n_k: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &m in edge_counts {
        let g = random_graph(n, m, raw_dim, seed)?;
        rows.extend(time_phases(model, &g, n_k, repeats)?);
    }
    Ok(rows)
}
