//! Episodic multi-dataset training.
//!
//! Each epoch visits the training graphs round-robin and takes one optimizer
//! step per graph on a freshly sampled episode: `n_k` normal context nodes plus
//! an equal number of normal and anomalous query nodes.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::encode_rows_on_tape;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{prepare, Model, ModelConfig, PreparedGraph};
use crate::numeric::{optimizer_step, read_params, write_params, AdamConfig, AdamState, Tape};
use crate::scoring::{cross_attend_on_tape, loss_on_tape, ContextSplit};

pub const DEFAULT_SHOTS: usize = 10;
pub const DEFAULT_QUERIES_PER_CLASS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_k: usize,
    pub queries_per_class: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Evaluate a fixed episode per dataset every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            n_k: DEFAULT_SHOTS,
            queries_per_class: DEFAULT_QUERIES_PER_CLASS,
            epsilon: 0.0,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_k == 0 || self.queries_per_class == 0 {
            return Err(Error::Config("n_k and queries_per_class must be >= 1".into()));
        }
        if !(-1.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [-1, 1)", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub split: ContextSplit,
    /// Aligned with `split.query`; `true` = anomaly.
    pub query_labels: Vec<bool>,
}

/// Samples context normals and a class-balanced query batch.
///
/// The per-class query count is `queries_per_class`, clamped to what the
/// graph can supply after the context is taken.
pub fn sample_episode(g: &Graph, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    let normals: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let anomalies: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    if normals.len() <= cfg.n_k {
        return Err(Error::InsufficientNormals {
            needed: cfg.n_k,
            found: normals.len(),
        });
    }
    if anomalies.is_empty() {
        return Err(Error::InsufficientAnomalies { needed: 1, found: 0 });
    }
    let per_class = cfg
        .queries_per_class
        .min(anomalies.len())
        .min(normals.len() - cfg.n_k);
    let picked_normals = index::sample(rng, normals.len(), cfg.n_k + per_class).into_vec();
    let picked_anomalies = index::sample(rng, anomalies.len(), per_class).into_vec();
    let context: Vec<usize> = picked_normals[..cfg.n_k].iter().map(|&i| normals[i]).collect();
    let mut query: Vec<usize> = picked_normals[cfg.n_k..].iter().map(|&i| normals[i]).collect();
    query.extend(picked_anomalies.iter().map(|&i| anomalies[i]));
    let query_labels = query.iter().map(|&v| labels[v]).collect();
    Ok(Episode {
        split: ContextSplit::new(context, query, g.node_count())?,
        query_labels,
    })
}

/// Forward pass of one episode recorded on `tape`; returns the loss value.
pub fn episode_loss(
    tape: &mut Tape,
    model: &Model,
    prepared: &PreparedGraph,
    episode: &Episode,
    epsilon: f64,
) -> Result<f64> {
    let split = &episode.split;
    let rows: Vec<usize> = split.context.iter().chain(&split.query).copied().collect();
    let h = encode_rows_on_tape(tape, &prepared.propagated, &rows, &model.params, &model.config.encoder)?;
    let n_k = split.context.len();
    let ctx_idx: Vec<usize> = (0..n_k).collect();
    let qry_idx: Vec<usize> = (n_k..rows.len()).collect();
    let h_k = tape.select_rows(h, &ctx_idx)?;
    let h_q = tape.select_rows(h, &qry_idx)?;
    let (_, rec) = cross_attend_on_tape(tape, h_q, h_k, &model.params)?;
    let loss = loss_on_tape(tape, h_q, rec, &episode.query_labels, epsilon)?;
    Ok(tape.value(loss).get(0, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub dataset: String,
    pub loss: f64,
    /// `"train"` for optimizer steps, `"eval"` for fixed-episode evaluations.
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub epoch: usize,
    pub loss_trace: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    loss_trace: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&CheckpointMeta {
            model: self.model.config,
            train: self.train,
            epoch: self.epoch,
            loss_trace: self.loss_trace.clone(),
        })?;
        let mut buf = Vec::new();
        write_params(&self.model.params, &meta, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = read_params(bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta)
            .map_err(|e| Error::MalformedCheckpoint(format!("metadata: {e}")))?;
        Ok(Self {
            model: Model::new(meta.model, params)
                .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?,
            train: meta.train,
            epoch: meta.epoch,
            loss_trace: meta.loss_trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Mean of the training losses recorded for `epoch`.
    pub fn epoch_loss(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .loss_trace
            .iter()
            .filter(|r| r.epoch == epoch && r.kind == "train")
            .map(|r| r.loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn train(datasets: &[Graph], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with(datasets, model_cfg, cfg, |_| {})
}

/// Trains and reports every loss record to `on_record` as it is produced.
pub fn train_with(
    datasets: &[Graph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    model_cfg.validate()?;
    if datasets.is_empty() && cfg.epochs > 0 {
        return Err(Error::Config("training needs at least one dataset".into()));
    }
    let mut model = Model::init(*model_cfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut prepared = Vec::with_capacity(datasets.len());
    let mut eval_episodes = Vec::with_capacity(datasets.len());
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(2);
    for g in datasets {
        // Fail fast on graphs that can never yield an episode.
        let probe = sample_episode(g, cfg, &mut eval_rng)?;
        eval_episodes.push(probe);
        prepared.push(prepare(g, model_cfg)?);
    }

    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    };
    let mut state = AdamState::new(model.params.len());
    let mut trace = Vec::new();
    let mut record = |trace: &mut Vec<LossRecord>, r: LossRecord| {
        on_record(&r);
        trace.push(r);
    };

    for epoch in 0..cfg.epochs {
        for (g, prep) in datasets.iter().zip(&prepared) {
            let episode = sample_episode(g, cfg, &mut rng)?;
            let mut tape = Tape::new();
            let non_finite = |model: &Model| Error::NonFiniteLoss {
                epoch,
                dataset: g.name().to_string(),
                param_norm: model.params.norm(),
            };
            let loss = match episode_loss(&mut tape, &model, prep, &episode, cfg.epsilon) {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(Error::NonFinite { .. }) => return Err(non_finite(&model)),
                Err(e) => return Err(e),
            };
            let grads = tape.backward()?;
            if grads.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(non_finite(&model));
            }
            optimizer_step(&mut model.params, &grads, &mut state, &adam)?;
            record(
                &mut trace,
                LossRecord {
                    epoch,
                    dataset: g.name().to_string(),
                    loss,
                    kind: "train".into(),
                },
            );
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            for ((g, prep), ep) in datasets.iter().zip(&prepared).zip(&eval_episodes) {
                let loss = episode_loss(&mut Tape::new(), &model, prep, ep, cfg.epsilon)?;
                record(
                    &mut trace,
                    LossRecord {
                        epoch,
                        dataset: g.name().to_string(),
                        loss,
                        kind: "eval".into(),
                    },
                );
            }
        }
    }

    Ok(Checkpoint {
        model,
        train: *cfg,
        epoch: cfg.epochs,
        loss_trace: trace,
    })
}
