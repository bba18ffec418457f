//! Versioned binary dataset container.
//!
//! Byte layout (all integers and floats little-endian; see also
//! `docs/formats.md`):
//!
//! ```text
//! magic   4 bytes  "LLDS"
//! version u32      currently 1
//! flags   u32      bit0 labels, bit1 z_true, bit2 graph (A and W), bit3 unit_range
//! x_ndim  u32
//! x_dims  u64 * x_ndim
//! z_cols  u64              (present iff z_true flag)
//! g_rows  u64, g_cols u64  (present iff graph flag)
//! ids     u64 * N
//! x       f64 * prod(x_dims)
//! labels  u8 * N           (iff labels flag)
//! z_true  f64 * N * z_cols (iff z_true flag)
//! A       u8  * g_rows * g_cols (iff graph flag)
//! W       f64 * g_rows * g_cols (iff graph flag)
//! ```
//!
//! `load(save(ds))` is bit-identical; trailing or missing bytes fail the
//! parse with no partial dataset escaping.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"LLDS";
const VERSION: u32 = 1;

const FLAG_LABELS: u32 = 1;
const FLAG_Z_TRUE: u32 = 2;
const FLAG_GRAPH: u32 = 4;
const FLAG_UNIT_RANGE: u32 = 8;

pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, bs: &[u8]) {
        self.buf.extend_from_slice(bs);
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, off: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(Error::format(format!(
                "file truncated: needed {n} bytes at offset {}, have {}",
                self.off,
                self.buf.len() - self.off
            )));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        if self.off != self.buf.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.off
            )));
        }
        Ok(())
    }
}

/// Serialize a dataset, optionally with its generating graph `(A, W)`.
pub fn save_dataset(path: &Path, ds: &Dataset, graph: Option<(&Tensor, &Tensor)>) -> Result<()> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let mut flags = 0u32;
    if ds.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if ds.z_true.is_some() {
        flags |= FLAG_Z_TRUE;
    }
    if graph.is_some() {
        flags |= FLAG_GRAPH;
    }
    if ds.unit_range {
        flags |= FLAG_UNIT_RANGE;
    }
    w.u32(flags);
    w.u32(ds.x.ndim() as u32);
    for &d in ds.x.shape() {
        w.u64(d as u64);
    }
    if let Some(z) = &ds.z_true {
        w.u64(z.shape()[1] as u64);
    }
    if let Some((a, _)) = graph {
        w.u64(a.shape()[0] as u64);
        w.u64(a.shape()[1] as u64);
    }
    for &id in &ds.sample_ids {
        w.u64(id);
    }
    w.f64_slice(ds.x.data());
    if let Some(l) = &ds.labels {
        w.bytes(l);
    }
    if let Some(z) = &ds.z_true {
        w.f64_slice(z.data());
    }
    if let Some((a, wt)) = graph {
        if a.shape() != wt.shape() {
            return Err(Error::shape("adjacency and weight shapes differ".to_string()));
        }
        for &v in a.data() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::invalid("adjacency entries must be 0 or 1".to_string()));
            }
            w.buf.push(v as u8);
        }
        w.f64_slice(wt.data());
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

/// Inverse of [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<(Tensor, Tensor)>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    if r.bytes(4)? != MAGIC {
        return Err(Error::format("bad dataset magic".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "dataset container version {version}, this build reads {VERSION}"
        )));
    }
    let flags = r.u32()?;
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::format(format!("implausible tensor rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u64()? as usize);
    }
    let n = dims[0];
    let z_cols = if flags & FLAG_Z_TRUE != 0 { Some(r.u64()? as usize) } else { None };
    let graph_dims = if flags & FLAG_GRAPH != 0 {
        Some((r.u64()? as usize, r.u64()? as usize))
    } else {
        None
    };
    let mut sample_ids = Vec::with_capacity(n);
    for _ in 0..n {
        sample_ids.push(r.u64()?);
    }
    let x = Tensor::from_vec(&dims, r.f64_vec(dims.iter().product())?)?;
    let labels = if flags & FLAG_LABELS != 0 { Some(r.bytes(n)?.to_vec()) } else { None };
    let z_true = match z_cols {
        Some(c) => Some(Tensor::from_vec(&[n, c], r.f64_vec(n * c)?)?),
        None => None,
    };
    let graph = match graph_dims {
        Some((gr, gc)) => {
            let raw = r.bytes(gr * gc)?;
            if let Some(bad) = raw.iter().find(|&&b| b > 1) {
                return Err(Error::format(format!("adjacency byte {bad} is not 0/1")));
            }
            let a = Tensor::from_vec(&[gr, gc], raw.iter().map(|&b| b as f64).collect())?;
            let w = Tensor::from_vec(&[gr, gc], r.f64_vec(gr * gc)?)?;
            Some((a, w))
        }
        None => None,
    };
    r.finish()?;
    Ok((
        Dataset { x, labels, z_true, sample_ids, unit_range: flags & FLAG_UNIT_RANGE != 0 },
        graph,
    ))
}
