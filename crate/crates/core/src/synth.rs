//! Synthetic labeled domains: stochastic block model structure, Gaussian
//! mixture features (one component per block) and injected anomalies.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inject::{inject, InjectionSpec};
use crate::numeric::Matrix;

/// Seed namespace offsets keeping training and test domains disjoint.
pub const TRAIN_SEED_BASE: u64 = 1_000;
pub const TEST_SEED_BASE: u64 = 2_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub n: usize,
    pub raw_dim: usize,
    pub cluster_count: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Standard deviation of block centres relative to unit within-block noise.
    pub separation: f64,
    /// `None` uses [`InjectionSpec::default_for`] with the domain seed.
    pub injection: Option<InjectionSpec>,
    pub seed: u64,
}

impl DomainSpec {
    /// A domain with average intra-block degree about 10 and inter-block degree about 1.
    pub fn preset(seed: u64, n: usize) -> Self {
        let c = 4usize;
        let block = (n / c).max(2) as f64;
        Self {
            name: format!("synth-{seed}"),
            n,
            raw_dim: 32,
            cluster_count: c,
            p_intra: (10.0 / block).min(1.0),
            p_inter: (1.0 / (n as f64 - block).max(1.0)).min(1.0),
            separation: 4.0,
            injection: None,
            seed,
        }
    }

    fn with_shape(mut self, name: &str, raw_dim: usize, clusters: usize) -> Self {
        let block = (self.n / clusters).max(2) as f64;
        self.name = name.to_string();
        self.raw_dim = raw_dim;
        self.cluster_count = clusters;
        self.p_intra = (10.0 / block).min(1.0);
        self.p_inter = (1.0 / (self.n as f64 - block).max(1.0)).min(1.0);
        self
    }

    fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.p_intra) || !prob_ok(self.p_inter) {
            return Err(Error::Config(format!(
                "edge probabilities ({}, {}) outside [0, 1]",
                self.p_intra, self.p_inter
            )));
        }
        if self.n < 2 || self.cluster_count == 0 || self.cluster_count > self.n || self.raw_dim == 0 {
            return Err(Error::Config(format!(
                "infeasible domain: n={}, clusters={}, d={}",
                self.n, self.cluster_count, self.raw_dim
            )));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates the labeled graph for `spec`.
pub fn generate(spec: &DomainSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let block: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.cluster_count)).collect();

    let mut edges = Vec::new();
    let mut degree = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let p = if block[i] == block[j] { spec.p_intra } else { spec.p_inter };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((i, j));
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    // Attach isolated nodes to a random member of their own block.
    for i in 0..n {
        if degree[i] > 0 {
            continue;
        }
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && block[j] == block[i]).collect();
        let pool: Vec<usize> = if mates.is_empty() {
            (0..n).filter(|&j| j != i).collect()
        } else {
            mates
        };
        let j = pool[rng.random_range(0..pool.len())];
        edges.push((i, j));
        degree[i] += 1;
        degree[j] += 1;
    }

    let d = spec.raw_dim;
    let centers: Vec<Vec<f64>> = (0..spec.cluster_count)
        .map(|_| {
            (0..d)
                .map(|_| spec.separation * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        })
        .collect();
    let features = Matrix::from_fn(n, d, |i, j| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        centers[block[i]][j] + noise
    });
    let clean = Graph::from_edges(spec.name.clone(), n, &edges, features, None)?;
    let injection = spec
        .injection
        .clone()
        .unwrap_or_else(|| InjectionSpec::default_for(n, spec.seed));
    inject(&clean, &injection)
}

/// Fixed train/test domain collections of the acceptance benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPreset {
    pub train: Vec<DomainSpec>,
    pub test: Vec<DomainSpec>,
}

impl BenchmarkPreset {
    /// Three training domains and two unseen test domains, all with distinct raw widths.
    pub fn acceptance(n: usize) -> Self {
        let train = [("train-a", 32, 3), ("train-b", 64, 4), ("train-c", 96, 5)]
            .iter()
            .enumerate()
            .map(|(i, &(name, d, c))| {
                DomainSpec::preset(TRAIN_SEED_BASE + i as u64, n).with_shape(name, d, c)
            })
            .collect();
        let test = [("test-a", 48, 4), ("test-b", 80, 6)]
            .iter()
            .enumerate()
            .map(|(i, &(name, d, c))| {
                DomainSpec::preset(TEST_SEED_BASE + i as u64, n).with_shape(name, d, c)
            })
            .collect();
        Self { train, test }
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<&DomainSpec> = self.train.iter().chain(&self.test).collect();
        let mut shapes = BTreeSet::new();
        let mut seeds = BTreeSet::new();
        for d in &all {
            if !shapes.insert((d.raw_dim, d.cluster_count)) {
                return Err(Error::Config(format!(
                    "domain {} repeats raw_dim {} and cluster_count {}",
                    d.name, d.raw_dim, d.cluster_count
                )));
            }
            if !seeds.insert(d.seed) {
                return Err(Error::Config(format!("domain {} reuses seed {}", d.name, d.seed)));
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<(Vec<Graph>, Vec<Graph>)> {
        self.validate()?;
        let train = self.train.iter().map(generate).collect::<Result<Vec<_>>>()?;
        let test = self.test.iter().map(generate).collect::<Result<Vec<_>>>()?;
        Ok((train, test))
    }
}
