use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const MAGIC: &[u8; 4] = b"GADP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered table of named parameter blocks over one flat buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &mut Self {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter block {name}");
        self.blocks.push(ParamBlock {
            name,
            rows,
            cols,
            offset: self.total,
        });
        self.total += rows * cols;
        self
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat parameter buffer with a named block registry. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { layout, values }
    }

    pub fn from_flat(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                op: "ParamVector::from_flat",
                detail: format!("layout needs {}, got {}", layout.total_len(), values.len()),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn block_or_err(&self, name: &str) -> Result<&ParamBlock> {
        self.layout.find(name).ok_or_else(|| Error::DimensionMismatch {
            op: "ParamVector::block",
            detail: format!("no parameter block named {name}"),
        })
    }

    pub fn block(&self, name: &str) -> Result<Matrix> {
        let b = self.block_or_err(name)?;
        Matrix::from_vec(b.rows, b.cols, self.values[b.range()].to_vec())
    }

    pub fn block_slice(&self, name: &str) -> Result<&[f64]> {
        let b = self.block_or_err(name)?;
        Ok(&self.values[b.range()])
    }

    pub fn set_block(&mut self, name: &str, m: &Matrix) -> Result<()> {
        let b = self.block_or_err(name)?.clone();
        if (b.rows, b.cols) != m.shape() {
            return Err(Error::DimensionMismatch {
                op: "ParamVector::set_block",
                detail: format!("{name} is {}x{}, got {:?}", b.rows, b.cols, m.shape()),
            });
        }
        self.values[b.range()].copy_from_slice(m.data());
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Writes the `GADP` checkpoint: magic, version, metadata blob, block table, payload.
pub fn write_params<W: Write>(params: &ParamVector, metadata: &[u8], w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(metadata.len() as u64).to_le_bytes())?;
    w.write_all(metadata)?;
    let blocks = params.layout.blocks();
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for b in blocks {
        w.write_all(&(b.name.len() as u64).to_le_bytes())?;
        w.write_all(b.name.as_bytes())?;
        for v in [b.rows, b.cols, b.offset] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
    }
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn size(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().unwrap()))
            .map_err(|_| Error::MalformedCheckpoint("size overflow".into()))
    }
}

/// Inverse of [`write_params`]; returns the parameters and the metadata blob.
pub fn read_params(bytes: &[u8]) -> Result<(ParamVector, Vec<u8>)> {
    let bad = |s: &str| Error::MalformedCheckpoint(s.to_string());
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic, expected GADP"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let meta_len = r.size()?;
    let metadata = r.take(meta_len)?.to_vec();
    let nblocks = r.size()?;
    let mut layout = ParamLayout::new();
    for _ in 0..nblocks {
        let name_len = r.size()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("block name is not UTF-8"))?
            .to_string();
        let rows = r.size()?;
        let cols = r.size()?;
        let offset = r.size()?;
        if offset != layout.total_len() || layout.find(&name).is_some() {
            return Err(bad("block table is not contiguous"));
        }
        layout.push(name, rows, cols);
    }
    let len = r.size()?;
    if len != layout.total_len() {
        return Err(bad("payload length disagrees with block table"));
    }
    let payload = r.take(len.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ParamVector::from_flat(layout, values)?, metadata))
}
