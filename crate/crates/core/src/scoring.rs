//! Value-free cross-attention scoring.
//!
//! Query embeddings are reconstructed as attention-weighted mixtures of the
//! raw context embeddings; the anomaly score is the Euclidean reconstruction
//! error. Training uses a cosine loss with a margin on anomalous queries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamLayout, ParamVector, Tape, Var};

pub const WQ: &str = "attn.wq";
pub const WK: &str = "attn.wk";

pub fn push_attention_layout(embedding_dim: usize, layout: &mut ParamLayout) {
    layout
        .push(WQ, embedding_dim, embedding_dim)
        .push(WK, embedding_dim, embedding_dim);
}

/// Disjoint context (known or pseudo normal) and query node sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSplit {
    pub context: Vec<usize>,
    pub query: Vec<usize>,
}

impl ContextSplit {
    pub fn new(context: Vec<usize>, query: Vec<usize>, n: usize) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::Contract("context must hold at least one node".into()));
        }
        let mut seen = vec![false; n];
        for &v in context.iter().chain(&query) {
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, n });
            }
            if seen[v] {
                return Err(Error::Contract(format!(
                    "node {v} appears twice across context and query"
                )));
            }
            seen[v] = true;
        }
        Ok(Self { context, query })
    }

    /// Context as given, query = every other node in ascending order.
    pub fn complement(context: Vec<usize>, n: usize) -> Result<Self> {
        let mut in_ctx = vec![false; n];
        for &v in &context {
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, n });
            }
            in_ctx[v] = true;
        }
        let query = (0..n).filter(|&v| !in_ctx[v]).collect();
        Self::new(context, query, n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    /// `n_q × n_k`, rows on the simplex.
    pub weights: Matrix,
    /// `n_q × d_e`
    pub reconstructed: Matrix,
}

fn check_widths(h_q: &Matrix, h_k: &Matrix, wq: &Matrix, wk: &Matrix) -> Result<()> {
    let d = h_q.cols();
    if h_k.cols() != d || wq.shape() != (d, d) || wk.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            op: "cross_attend",
            detail: format!(
                "H_q {:?}, H_k {:?}, W_q {:?}, W_k {:?}",
                h_q.shape(),
                h_k.shape(),
                wq.shape(),
                wk.shape()
            ),
        });
    }
    if h_k.rows() == 0 {
        return Err(Error::Contract("cross-attention needs at least one context row".into()));
    }
    Ok(())
}

/// `softmax((H_q W_q)(H_k W_k)ᵀ / √d_e) · H_k`
pub fn cross_attend(h_q: &Matrix, h_k: &Matrix, params: &ParamVector) -> Result<AttentionResult> {
    let mut tape = Tape::new();
    let q = tape.constant(h_q.clone())?;
    let k = tape.constant(h_k.clone())?;
    let (weights, rec) = cross_attend_on_tape(&mut tape, q, k, params)?;
    Ok(AttentionResult {
        weights: tape.value(weights).clone(),
        reconstructed: tape.value(rec).clone(),
    })
}

/// Taped version of [`cross_attend`]; returns `(weights, reconstructed)` handles.
pub fn cross_attend_on_tape(
    tape: &mut Tape,
    h_q: Var,
    h_k: Var,
    params: &ParamVector,
) -> Result<(Var, Var)> {
    check_widths(
        tape.value(h_q),
        tape.value(h_k),
        &params.block(WQ)?,
        &params.block(WK)?,
    )?;
    let d = tape.value(h_q).cols();
    let wq = tape.param(params, WQ)?;
    let wk = tape.param(params, WK)?;
    let q = tape.matmul(h_q, wq)?;
    let k = tape.matmul(h_k, wk)?;
    let logits = tape.matmul_nt(q, k)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(logits)?;
    let rec = tape.matmul(weights, h_k)?;
    Ok((weights, rec))
}

/// Row-wise `‖h − h̃‖₂`.
pub fn score(h_q: &Matrix, reconstructed: &Matrix) -> Result<Vec<f64>> {
    if h_q.shape() != reconstructed.shape() {
        return Err(Error::DimensionMismatch {
            op: "score",
            detail: format!("{:?} vs {:?}", h_q.shape(), reconstructed.shape()),
        });
    }
    Ok((0..h_q.rows())
        .map(|i| {
            h_q.row(i)
                .iter()
                .zip(reconstructed.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Records the mean cosine-margin loss over the query batch.
pub fn loss_on_tape(tape: &mut Tape, h_q: Var, rec: Var, labels: &[bool], epsilon: f64) -> Result<Var> {
    if !(-1.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("margin {epsilon} outside [-1, 1)")));
    }
    let cos = tape.row_cosine(h_q, rec)?;
    let per_sample = tape.margin_hinge(cos, labels, epsilon)?;
    tape.mean(per_sample)
}

/// Mean over queries of `1 − cos` (normal) or `max(0, cos − ε)` (anomaly).
pub fn loss(h_q: &Matrix, reconstructed: &Matrix, labels: &[bool], epsilon: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(h_q.clone())?;
    let r = tape.constant(reconstructed.clone())?;
    let l = loss_on_tape(&mut tape, q, r, labels, epsilon)?;
    Ok(tape.value(l).get(0, 0))
}

/// Per-node anomaly scores keyed by node id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_history: Option<Vec<BTreeMap<usize, f64>>>,
}

impl ScoreVector {
    pub fn from_pairs(ids: &[usize], values: &[f64]) -> Self {
        Self {
            scores: ids.iter().copied().zip(values.iter().copied()).collect(),
            round_history: None,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `node_id,score` lines sorted by node id, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_id,score\n");
        for (id, s) in &self.scores {
            out.push_str(&format!("{id},{s:?}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut scores = BTreeMap::new();
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "node_id,score" => {}
            _ => return Err(Error::MalformedHeader("scores CSV must start with node_id,score".into())),
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::MalformedHeader(format!("scores CSV line {}: {line}", lineno + 2));
            let (id, s) = line.split_once(',').ok_or_else(bad)?;
            let id: usize = id.trim().parse().map_err(|_| bad())?;
            let s: f64 = s.trim().parse().map_err(|_| bad())?;
            if !s.is_finite() {
                return Err(bad());
            }
            if scores.insert(id, s).is_some() {
                return Err(Error::Contract(format!("duplicate node id {id} in scores")));
            }
        }
        Ok(Self {
            scores,
            round_history: None,
        })
    }
}
