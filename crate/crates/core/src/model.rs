//! The learnable model and the few-shot inference path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{align, AlignMode, AlignedFeatures, DEFAULT_UNIFIED_DIM};
use crate::encoder::{encode_propagated, EncoderConfig, Embeddings, PropagatedFeatures};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph};
use crate::numeric::{ParamLayout, ParamVector};
use crate::scoring::{cross_attend, push_attention_layout, score, AttentionResult, ContextSplit, ScoreVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub unified_dim: usize,
    pub alignment: AlignMode,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            unified_dim: DEFAULT_UNIFIED_DIM,
            alignment: AlignMode::Smoothness,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unified_dim == 0 {
            return Err(Error::Config("unified_dim must be >= 1".into()));
        }
        self.encoder.validate()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        self.encoder.push_layout(self.unified_dim, &mut l);
        push_attention_layout(self.encoder.embedding_dim(), &mut l);
        l
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, drawn from `ChaCha8Rng(seed)`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamVector {
    let layout = cfg.layout();
    let mut params = ParamVector::zeros(layout.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in layout.blocks() {
        if block.name.ends_with(".b") {
            continue;
        }
        let bound = 1.0 / (block.rows as f64).sqrt();
        for v in &mut params.as_mut_slice()[block.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    params
}

/// Per-graph state that never depends on parameters.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub aligned: AlignedFeatures,
    pub propagated: PropagatedFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamVector,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        if params.layout() != &config.layout() {
            return Err(Error::DimensionMismatch {
                op: "Model::new",
                detail: "parameter layout does not match the model configuration".into(),
            });
        }
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: init_params(&config, seed),
            config,
        })
    }

    pub fn prepare(&self, g: &Graph) -> Result<PreparedGraph> {
        prepare(g, &self.config)
    }

    pub fn embed(&self, prepared: &PreparedGraph) -> Result<Embeddings> {
        encode_propagated(&prepared.propagated, &self.params, &self.config.encoder)
    }

    /// Scores `split.query` against `split.context`; scores follow query order.
    pub fn score_split(&self, emb: &Embeddings, split: &ContextSplit) -> Result<(Vec<f64>, AttentionResult)> {
        let h_q = emb.h.select_rows(&split.query)?;
        let h_k = emb.h.select_rows(&split.context)?;
        let att = cross_attend(&h_q, &h_k, &self.params)?;
        let s = score(&h_q, &att.reconstructed)?;
        Ok((s, att))
    }

    /// Few-shot scoring: every node outside `normal_ids` gets a score.
    pub fn score_few_shot(&self, g: &Graph, normal_ids: &[usize]) -> Result<ScoreVector> {
        let prepared = self.prepare(g)?;
        let emb = self.embed(&prepared)?;
        let split = ContextSplit::complement(normal_ids.to_vec(), g.node_count())?;
        let (s, _) = self.score_split(&emb, &split)?;
        Ok(ScoreVector::from_pairs(&split.query, &s))
    }
}

pub fn prepare(g: &Graph, cfg: &ModelConfig) -> Result<PreparedGraph> {
    let aligned = align(g, cfg.unified_dim, cfg.alignment)?;
    let adj = normalize_adjacency(g);
    let propagated = PropagatedFeatures::compute(&adj, &aligned.matrix, cfg.encoder.hops)?;
    Ok(PreparedGraph { aligned, propagated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[test]
    fn default_layout_sizes() {
        let cfg = ModelConfig::default();
        let l = cfg.layout();
        let names: Vec<_> = l.blocks().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(
            names,
            ["mlp.layer0.w", "mlp.layer0.b", "mlp.layer1.w", "mlp.layer1.b", "attn.wq", "attn.wk"]
        );
        assert_eq!(l.total_len(), 64 * 64 + 64 + 64 * 64 + 64 + 2 * 128 * 128);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig {
            unified_dim: 8,
            encoder: EncoderConfig { hops: 2, hidden: 4, mlp_depth: 2 },
            ..Default::default()
        };
        let a = init_params(&cfg, 1);
        assert_eq!(a, init_params(&cfg, 1));
        assert_ne!(a, init_params(&cfg, 2));
        assert!(a.block("mlp.layer0.b").unwrap().data().iter().all(|&v| v == 0.0));
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.block("mlp.layer0.w").unwrap().data().iter().all(|&v| v.abs() < bound));
    }

    #[test]
    fn few_shot_scores_every_non_context_node() {
        let n = 12;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).chain([(0, 6), (3, 9)]).collect();
        let x = Matrix::from_fn(n, 5, |i, j| ((i * 3 + j * 7) % 11) as f64);
        let g = Graph::from_edges("g", n, &edges, x, None).unwrap();
        let cfg = ModelConfig {
            unified_dim: 4,
            encoder: EncoderConfig { hops: 2, hidden: 3, mlp_depth: 2 },
            ..Default::default()
        };
        let m = Model::init(cfg, 3).unwrap();
        let s = m.score_few_shot(&g, &[1, 5]).unwrap();
        assert_eq!(s.len(), n - 2);
        assert!(!s.scores.contains_key(&1) && !s.scores.contains_key(&5));
        assert!(s.scores.values().all(|&v| v >= 0.0 && v.is_finite()));
        assert_eq!(s, m.score_few_shot(&g, &[1, 5]).unwrap());
    }
}
