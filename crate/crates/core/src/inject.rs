//! Structural (clique) and attribute (farthest-candidate swap) anomaly injection.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(spec.seed)`, so an
//! injection is reproducible across platforms.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_CLIQUE_SIZE: usize = 15;
pub const DEFAULT_CANDIDATE_POOL: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub clique_size: usize,
    pub clique_count: usize,
    pub attribute_count: usize,
    pub candidate_pool: usize,
    pub seed: u64,
}

impl InjectionSpec {
    /// Cliques of 15, about 5% of nodes injected, half structural and half attribute.
    pub fn default_for(n: usize, seed: u64) -> Self {
        let q = DEFAULT_CLIQUE_SIZE;
        let p = ((0.05 * n as f64) / (2 * q) as f64).round().max(1.0) as usize;
        Self {
            clique_size: q,
            clique_count: p,
            attribute_count: p * q,
            candidate_pool: DEFAULT_CANDIDATE_POOL,
            seed,
        }
    }

    pub fn injected_count(&self) -> usize {
        self.clique_size * self.clique_count + self.attribute_count
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.clique_count > 0 && self.clique_size < 2 {
            return Err(Error::InfeasibleInjection(format!(
                "clique size {} < 2",
                self.clique_size
            )));
        }
        if self.attribute_count > 0 && self.candidate_pool < 2 {
            return Err(Error::InfeasibleInjection(format!(
                "candidate pool {} < 2",
                self.candidate_pool
            )));
        }
        let total = self.injected_count();
        if total > n {
            return Err(Error::InfeasibleInjection(format!(
                "{total} disjoint anomalies requested on {n} nodes"
            )));
        }
        if self.attribute_count > 0 && total == n {
            return Err(Error::InfeasibleInjection(
                "no non-injected nodes left to draw attribute candidates from".into(),
            ));
        }
        Ok(())
    }
}

/// Returns a relabeled copy of `g` with `p·q + a` injected anomalies.
pub fn inject(g: &Graph, spec: &InjectionSpec) -> Result<Graph> {
    let n = g.node_count();
    spec.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.injected_count();
    let chosen: Vec<usize> = index::sample(&mut rng, n, total).into_vec();
    let structural = &chosen[..spec.clique_size * spec.clique_count];
    let attribute = &chosen[structural.len()..];

    let mut labels = vec![false; n];
    for &v in &chosen {
        labels[v] = true;
    }

    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    for clique in structural.chunks(spec.clique_size) {
        for (a, &u) in clique.iter().enumerate() {
            for &v in &clique[a + 1..] {
                edges.push((u, v));
            }
        }
    }

    let original = g.features();
    let mut features = original.clone();
    let pool: Vec<usize> = (0..n).filter(|&v| !labels[v]).collect();
    let k = spec.candidate_pool.min(pool.len());
    for &target in attribute {
        let picks = index::sample(&mut rng, pool.len(), k);
        let own = original.row(target);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for idx in picks.iter() {
            let c = pool[idx];
            let dist: f64 = own
                .iter()
                .zip(original.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist > best.0 {
                best = (dist, c);
            }
        }
        features.row_mut(target).copy_from_slice(original.row(best.1));
    }

    Graph::from_edges(g.name(), n, &edges, features, Some(labels))
}
