//! Ranking metrics for anomaly scores. Label `true` marks the positive (anomalous) class.
//!
//! AUROC is the Mann–Whitney statistic with ties counted as one half.
//!
//! AUPRC is step-wise average precision. Nodes are ranked by descending score
//! and equal scores form one block; every positive in a block is credited with
//! the precision measured at the end of that block. Equivalently, with
//! distinct thresholds `t₁ > t₂ > …`, `AP = Σ_i (R(t_i) − R(t_{i−1})) · P(t_i)`
//! where `P` and `R` count every node scoring at least `t_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "metric",
            detail: format!("{} scores for {} labels", scores.len(), labels.len()),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    Ok((pos, labels.len() - pos))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Tied blocks in descending-score order, as `(positives, negatives)` per block.
fn blocks(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            out.push((0, 0));
            prev = Some(scores[i]);
        }
        let last = out.last_mut().unwrap();
        if labels[i] {
            last.0 += 1;
        } else {
            last.1 += 1;
        }
    }
    out
}

pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    // Twice the Mann–Whitney U: each positive beats every negative in later
    // (lower-score) blocks and ties half of its own block's negatives.
    let mut twice_u: u128 = 0;
    let mut neg_below = neg;
    for (p, n) in blocks(scores, labels) {
        neg_below -= n;
        twice_u += p as u128 * (2 * neg_below as u128 + n as u128);
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Metric("AUPRC needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (p, n) in blocks(scores, labels) {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += p as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap / pos as f64)
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<MetricReport> {
    let (positives, negatives) = check(scores, labels)?;
    Ok(MetricReport {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        positives,
        negatives,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Pairwise count over every (positive, negative) pair.
    pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if !yi {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    /// Threshold sweep: recall increments times precision at every distinct threshold.
    pub fn auprc_sweep(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let total_pos = labels.iter().filter(|&&y| y).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&s, &y) in scores.iter().zip(labels) {
                if s >= t {
                    if y {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / total_pos;
            ap += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
        ap
    }
}
