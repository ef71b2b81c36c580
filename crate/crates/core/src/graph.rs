//! Attributed graph storage, the `GADG` file format and normalized propagation.
//!
//! Graphs are undirected: every edge list handed to [`Graph::from_edges`] is
//! symmetrized, deduplicated and stripped of self-loops. The CSR arrays hold
//! both directions of every edge while [`Graph::edge_count`] counts each
//! undirected edge once.
//!
//! `GADG` layout (little-endian):
//!
//! ```text
//! magic "GADG" | version u32 = 1 | n u64 | m u64 | d u64 | has_labels u8
//! row offsets (n + 1) x u64 | column indices offsets[n] x u64
//! features n*d x f64 (row-major) | labels n x u8 (if has_labels)
//! name length u64 | name UTF-8 bytes
//! ```

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const MAGIC: &[u8; 4] = b"GADG";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    features: Matrix,
    labels: Option<Vec<bool>>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list.
    pub fn from_edges(
        name: impl Into<String>,
        n: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::DimensionMismatch {
                op: "graph",
                detail: format!("{} feature rows for {n} nodes", features.rows()),
            });
        }
        for r in 0..n {
            if features.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row: r });
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    op: "graph",
                    detail: format!("{} labels for {n} nodes", l.len()),
                });
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::IndexOutOfRange { index: x, n });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for mut nb in adj {
            nb.sort_unstable();
            nb.dedup();
            indices.extend(nb);
            offsets.push(indices.len());
        }
        Ok(Self {
            name: name.into(),
            offsets,
            indices,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&y| y).count())
    }

    pub fn with_labels(mut self, labels: Option<Vec<bool>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.node_count() {
                return Err(Error::DimensionMismatch {
                    op: "with_labels",
                    detail: format!("{} labels for {} nodes", l.len(), self.node_count()),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Copy with labels removed; the only graph the zero-shot path sees.
    pub fn without_labels(&self) -> Graph {
        Graph {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        let edges: Vec<_> = self.edges().collect();
        Graph::from_edges(
            self.name.clone(),
            self.node_count(),
            &edges,
            features,
            self.labels.clone(),
        )
    }

    pub fn meta(&self) -> GraphMeta {
        GraphMeta {
            name: self.name.clone(),
            n: self.node_count(),
            m: self.edge_count(),
            d: self.feature_dim(),
            anomaly_count: self.anomaly_count(),
        }
    }
}

/// Contents of the `.meta.json` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub anomaly_count: usize,
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_graph<W: Write>(g: &Graph, w: &mut W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [g.node_count(), g.edge_count(), g.feature_dim()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&[g.labels.is_some() as u8])?;
    for &o in &g.offsets {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &c in &g.indices {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for &x in g.features.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    if let Some(l) = &g.labels {
        let bytes: Vec<u8> = l.iter().map(|&y| y as u8).collect();
        w.write_all(&bytes)?;
    }
    w.write_all(&(g.name.len() as u64).to_le_bytes())?;
    w.write_all(g.name.as_bytes())
}

/// Writes the graph file and its `.meta.json` sidecar.
pub fn save_graph(g: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_graph(g, &mut w)?;
    w.flush()?;
    let meta = serde_json::to_string_pretty(&g.meta())?;
    fs::write(meta_path(path), meta + "\n")?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let bytes = fs::read(path)?;
    read_graph(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::MalformedHeader(format!("truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::MalformedHeader(format!("{what} does not fit in usize")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_graph(bytes: &[u8]) -> Result<Graph> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected GADG".into()));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let n = cur.usize("n")?;
    let _m = cur.usize("m")?;
    let d = cur.usize("d")?;
    let has_labels = match cur.take(1, "has_labels")?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::MalformedHeader(format!("has_labels byte {b}"))),
    };
    // Guard allocations against absurd headers before reading arrays.
    let remaining = bytes.len() as u128;
    if (n as u128 + 1) * 8 > remaining || (n as u128) * (d as u128) * 8 > remaining {
        return Err(Error::MalformedHeader("header sizes exceed file length".into()));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(cur.usize("row offsets")?);
    }
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::MalformedHeader("row offsets not monotone from 0".into()));
    }
    // The column array length comes from the offsets; a non-canonical writer
    // may have stored only one direction per edge.
    let nnz = offsets[n];
    if nnz as u128 * 8 > remaining {
        return Err(Error::MalformedHeader("column count exceeds file length".into()));
    }
    let mut edges = Vec::with_capacity(nnz);
    for i in 0..n {
        for _ in offsets[i]..offsets[i + 1] {
            let j = cur.usize("column indices")?;
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, n });
            }
            edges.push((i, j));
        }
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(cur.f64("features")?);
    }
    let features = Matrix::from_vec(n, d, data)?;
    let labels = if has_labels {
        let raw = cur.take(n, "labels")?;
        let mut l = Vec::with_capacity(n);
        for &b in raw {
            match b {
                0 => l.push(false),
                1 => l.push(true),
                _ => return Err(Error::MalformedHeader(format!("label byte {b}"))),
            }
        }
        Some(l)
    } else {
        None
    };
    let name_len = cur.usize("name length")?;
    let name = std::str::from_utf8(cur.take(name_len, "name")?)
        .map_err(|_| Error::MalformedHeader("name is not UTF-8".into()))?
        .to_string();
    if cur.pos != bytes.len() {
        return Err(Error::MalformedHeader("trailing bytes after name".into()));
    }
    Graph::from_edges(name, n, &edges, features, labels)
}

pub fn read_graph_from<R: Read>(r: &mut R) -> Result<Graph> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    read_graph(&buf)
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` stored as CSR with the diagonal included.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.node_count();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m.set(i, j, v);
            }
        }
        m
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(g.col_indices().len() + n);
    let mut values = Vec::with_capacity(g.col_indices().len() + n);
    offsets.push(0);
    for i in 0..n {
        let nb = g.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        let row = nb[..split]
            .iter()
            .copied()
            .chain(std::iter::once(i))
            .chain(nb[split..].iter().copied());
        for j in row {
            indices.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        offsets.push(indices.len());
    }
    NormalizedAdjacency {
        offsets,
        indices,
        values,
    }
}

/// Sparse-dense product `Ã · x`, parallel over rows.
pub fn propagate(adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
    let n = adj.node_count();
    if x.rows() != n {
        return Err(Error::DimensionMismatch {
            op: "propagate",
            detail: format!("{n}x{n} adjacency · {:?}", x.shape()),
        });
    }
    let d = x.cols();
    let mut out = Matrix::zeros(n, d);
    if d == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, o)| {
            let (cols, vals) = adj.row(i);
            for (&j, &w) in cols.iter().zip(vals) {
                for (acc, &v) in o.iter_mut().zip(x.row(j)) {
                    *acc += w * v;
                }
            }
        });
    Ok(out)
}
