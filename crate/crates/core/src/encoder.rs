//! Ego-neighbor residual encoder.
//!
//! Features are propagated `L` times with the normalized adjacency (no
//! parameters involved, so the stack is computed once per graph). A single
//! shared MLP maps every hop, and the representation is the concatenation of
//! `MLP(X^[l]) − MLP(X^[0])` for `l = 1..=L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{propagate, NormalizedAdjacency};
use crate::numeric::{Matrix, ParamLayout, ParamVector, Tape, Var};

pub const DEFAULT_HOPS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_MLP_DEPTH: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hops: usize,
    pub hidden: usize,
    pub mlp_depth: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hops: DEFAULT_HOPS,
            hidden: DEFAULT_HIDDEN,
            mlp_depth: DEFAULT_MLP_DEPTH,
        }
    }
}

impl EncoderConfig {
    /// Width of `H`.
    pub fn embedding_dim(&self) -> usize {
        self.hops * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 || self.hidden == 0 || self.mlp_depth == 0 {
            return Err(Error::Config(format!(
                "encoder needs hops, hidden and mlp_depth >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_name(i: usize) -> (String, String) {
        (format!("mlp.layer{i}.w"), format!("mlp.layer{i}.b"))
    }

    /// Registers the shared MLP blocks.
    pub fn push_layout(&self, input_dim: usize, layout: &mut ParamLayout) {
        let mut fan_in = input_dim;
        for i in 0..self.mlp_depth {
            let (w, b) = Self::layer_name(i);
            layout.push(w, fan_in, self.hidden).push(b, 1, self.hidden);
            fan_in = self.hidden;
        }
    }
}

/// `X^[0], …, X^[L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatedFeatures {
    pub hops: Vec<Matrix>,
}

impl PropagatedFeatures {
    pub fn compute(adj: &NormalizedAdjacency, x0: &Matrix, hops: usize) -> Result<Self> {
        let mut stack = Vec::with_capacity(hops + 1);
        stack.push(x0.clone());
        for l in 1..=hops {
            let next = propagate(adj, &stack[l - 1])?;
            stack.push(next);
        }
        Ok(Self { hops: stack })
    }

    pub fn node_count(&self) -> usize {
        self.hops[0].rows()
    }

    pub fn input_dim(&self) -> usize {
        self.hops[0].cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// `n × (L·h)`; column block `l` holds `R^[l+1]`.
    pub h: Matrix,
    pub config: EncoderConfig,
}

fn check(prop: &PropagatedFeatures, params: &ParamVector, cfg: &EncoderConfig) -> Result<()> {
    cfg.validate()?;
    if prop.hops.len() != cfg.hops + 1 {
        return Err(Error::DimensionMismatch {
            op: "encode",
            detail: format!("{} propagated matrices for L = {}", prop.hops.len(), cfg.hops),
        });
    }
    let (w0, _) = EncoderConfig::layer_name(0);
    let first = params.layout().find(&w0).ok_or_else(|| Error::DimensionMismatch {
        op: "encode",
        detail: "parameters carry no MLP".into(),
    })?;
    if first.rows != prop.input_dim() || first.cols != cfg.hidden {
        return Err(Error::DimensionMismatch {
            op: "encode",
            detail: format!(
                "MLP input layer is {}x{}, features are {} wide with hidden {}",
                first.rows,
                first.cols,
                prop.input_dim(),
                cfg.hidden
            ),
        });
    }
    Ok(())
}

fn mlp_eager(x: &Matrix, layers: &[(Matrix, Matrix)]) -> Result<Matrix> {
    let mut z = x.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        z = z.matmul(w)?.add_row_vector(b)?;
        if i + 1 < layers.len() {
            z = z.map(|v| v.max(0.0));
        }
    }
    Ok(z)
}

fn mlp_layers(params: &ParamVector, cfg: &EncoderConfig) -> Result<Vec<(Matrix, Matrix)>> {
    (0..cfg.mlp_depth)
        .map(|i| {
            let (w, b) = EncoderConfig::layer_name(i);
            Ok((params.block(&w)?, params.block(&b)?))
        })
        .collect()
}

/// Residual stack with an arbitrary row-wise transform standing in for the MLP.
/// Used to probe the filter behaviour of the residual (e.g. with the identity).
pub fn residual_stack(
    prop: &PropagatedFeatures,
    transform: impl Fn(&Matrix) -> Result<Matrix>,
) -> Result<Matrix> {
    let z0 = transform(&prop.hops[0])?;
    let residuals = prop.hops[1..]
        .iter()
        .map(|x| transform(x)?.sub(&z0))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix> = residuals.iter().collect();
    Matrix::hcat(&refs)
}

/// Inference-time encoding of every node.
pub fn encode_propagated(
    prop: &PropagatedFeatures,
    params: &ParamVector,
    cfg: &EncoderConfig,
) -> Result<Embeddings> {
    check(prop, params, cfg)?;
    let layers = mlp_layers(params, cfg)?;
    let h = residual_stack(prop, |x| mlp_eager(x, &layers))?.ensure_finite("encode")?;
    Ok(Embeddings { h, config: *cfg })
}

/// Records the encoding of `rows` on `tape` and returns the `|rows| × d_e` handle.
///
/// Only the requested rows pass through the MLP; propagation already happened
/// and every later op is row-wise.
pub fn encode_rows_on_tape(
    tape: &mut Tape,
    prop: &PropagatedFeatures,
    rows: &[usize],
    params: &ParamVector,
    cfg: &EncoderConfig,
) -> Result<Var> {
    check(prop, params, cfg)?;
    let mut layers = Vec::with_capacity(cfg.mlp_depth);
    for i in 0..cfg.mlp_depth {
        let (w, b) = EncoderConfig::layer_name(i);
        layers.push((tape.param(params, &w)?, tape.param(params, &b)?));
    }
    let mlp = |tape: &mut Tape, x: Matrix| -> Result<Var> {
        let mut z = tape.constant(x)?;
        for (i, &(w, b)) in layers.iter().enumerate() {
            z = tape.matmul(z, w)?;
            z = tape.add_bias(z, b)?;
            if i + 1 < layers.len() {
                z = tape.relu(z)?;
            }
        }
        Ok(z)
    };
    let z0 = mlp(tape, prop.hops[0].select_rows(rows)?)?;
    let mut residuals = Vec::with_capacity(cfg.hops);
    for x in &prop.hops[1..] {
        let zl = mlp(tape, x.select_rows(rows)?)?;
        residuals.push(tape.sub(zl, z0)?);
    }
    tape.concat_cols(&residuals)
}

/// Full encode from an adjacency and aligned features, optionally recorded on a tape.
pub fn encode(
    adj: &NormalizedAdjacency,
    x0: &Matrix,
    params: &ParamVector,
    cfg: &EncoderConfig,
    tape: Option<&mut Tape>,
) -> Result<Embeddings> {
    let prop = PropagatedFeatures::compute(adj, x0, cfg.hops)?;
    match tape {
        None => encode_propagated(&prop, params, cfg),
        Some(tape) => {
            let rows: Vec<usize> = (0..prop.node_count()).collect();
            let v = encode_rows_on_tape(tape, &prop, &rows, params, cfg)?;
            Ok(Embeddings {
                h: tape.value(v).clone(),
                config: *cfg,
            })
        }
    }
}
