//! Binary checkpoint layout (little endian):
//!
//! ```text
//! magic "CSCKPT\0\0" | u32 version | u64 manifest_len | manifest (UTF-8)
//! normalizer: 5 mean + 5 std f64
//! per table:  ids u64 × rows | weights f64 × (rows+1)·dim | accum f64 × same
//! per dense block: weights f64
//! per dense block: accum f64
//! ```
//!
//! The manifest is plain text (`key value...` lines) and fully determines the
//! payload size, so a loader can validate shapes before reading any numbers.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::features::StatNormalizer;
use super::params::{DenseParams, EmbeddingTable, Model, Table};
use super::ModelConfig;
use crate::graph::StatVector;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CSCKPT\0\0";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", msg: msg.into() }
}

fn manifest(model: &Model) -> String {
    let c = &model.config;
    let hidden: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
    let mut out = format!(
        "config video_dim={} item_dim={} author_dim={} category_dim={} token_dim={} user_dim={} \
         user_numeric={} attn_dim={} hidden={} max_behaviors={} seed={}\n",
        c.video_dim,
        c.item_dim,
        c.author_dim,
        c.category_dim,
        c.token_dim,
        c.user_dim,
        c.user_numeric,
        c.attn_dim,
        hidden.join(","),
        c.max_behaviors,
        c.seed
    );
    out.push_str(&format!("normalizer {}\n", StatVector::LEN));
    for t in &model.tables {
        out.push_str(&format!("table {} {} {}\n", t.table.name(), t.ids().len(), t.dim()));
    }
    for (name, r, k) in DenseParams::layout(c) {
        out.push_str(&format!("block {name} {r} {k}\n"));
    }
    out
}

fn put_f64s<'a>(buf: &mut Vec<u8>, xs: impl IntoIterator<Item = &'a f64>) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let text = manifest(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    put_f64s(&mut buf, &model.normalizer.mean);
    put_f64s(&mut buf, &model.normalizer.std);
    for t in &model.tables {
        for id in t.ids() {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        put_f64s(&mut buf, t.weights.iter());
        put_f64s(&mut buf, t.accum.iter());
    }
    for b in model.dense.blocks() {
        put_f64s(&mut buf, b.iter());
    }
    for b in model.dense_accum.blocks() {
        put_f64s(&mut buf, b.iter());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn matrix(&mut self, r: usize, c: usize) -> Result<Array2<f64>> {
        Array2::from_shape_vec((r, c), self.f64s(r * c)?).map_err(|e| bad(e.to_string()))
    }
}

fn header(bytes: &[u8]) -> Result<(Reader<'_>, &str)> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(8).map_err(|_| bad("not a checkpoint"))? != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion { what: "checkpoint", found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("manifest is not UTF-8"))?;
    Ok((r, text))
}

/// The shape manifest of an encoded checkpoint.
pub fn checkpoint_manifest(bytes: &[u8]) -> Result<String> {
    let (_, text) = header(bytes)?;
    Ok(format!("version {CHECKPOINT_VERSION}\n{text}"))
}

fn parse_config(line: &str) -> Result<ModelConfig> {
    let mut c = ModelConfig::default();
    for kv in line.split_whitespace().skip(1) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad config entry `{kv}`")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad value for {k}")));
        match k {
            "video_dim" => c.video_dim = num(v)?,
            "item_dim" => c.item_dim = num(v)?,
            "author_dim" => c.author_dim = num(v)?,
            "category_dim" => c.category_dim = num(v)?,
            "token_dim" => c.token_dim = num(v)?,
            "user_dim" => c.user_dim = num(v)?,
            "user_numeric" => c.user_numeric = num(v)?,
            "attn_dim" => c.attn_dim = num(v)?,
            "max_behaviors" => c.max_behaviors = num(v)?,
            "seed" => c.seed = v.parse().map_err(|_| bad("bad seed"))?,
            "hidden" => c.hidden = v.split(',').map(num).collect::<Result<_>>()?,
            _ => return Err(bad(format!("unknown config key {k}"))),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let (mut r, text) = header(bytes)?;
    let mut lines = text.lines();
    let config = parse_config(lines.next().filter(|l| l.starts_with("config ")).ok_or_else(|| bad("missing config"))?)?;
    if lines.next() != Some(&format!("normalizer {}", StatVector::LEN)[..]) {
        return Err(bad("missing normalizer"));
    }
    let mut table_rows = Vec::new();
    for t in Table::ALL {
        let line = lines.next().ok_or_else(|| bad("missing table"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let rows: usize = f.get(2).and_then(|x| x.parse().ok()).ok_or_else(|| bad(format!("bad line `{line}`")))?;
        let dim: usize = f.get(3).and_then(|x| x.parse().ok()).ok_or_else(|| bad(format!("bad line `{line}`")))?;
        if f[0] != "table" || f[1] != t.name() || dim != t.dim(&config) {
            return Err(Error::Shape { block: t.name().into(), detail: format!("manifest line `{line}`") });
        }
        table_rows.push(rows);
    }
    let layout = DenseParams::layout(&config);
    for (name, rows, cols) in &layout {
        let want = format!("block {name} {rows} {cols}");
        let got = lines.next().ok_or_else(|| bad("missing block"))?;
        if got != want {
            return Err(Error::Shape { block: name.clone(), detail: format!("manifest has `{got}`, expected `{want}`") });
        }
    }
    if lines.next().is_some() {
        return Err(bad("trailing manifest lines"));
    }

    let mut normalizer = StatNormalizer::default();
    normalizer.mean.copy_from_slice(&r.f64s(StatVector::LEN)?);
    normalizer.std.copy_from_slice(&r.f64s(StatVector::LEN)?);
    let mut tables = Vec::with_capacity(Table::ALL.len());
    for (t, rows) in Table::ALL.into_iter().zip(table_rows) {
        let ids = (0..rows).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let w = r.matrix(rows + 1, t.dim(&config))?;
        let a = r.matrix(rows + 1, t.dim(&config))?;
        tables.push(EmbeddingTable::new(t, ids, w, a)?);
    }
    let mut read_dense = || -> Result<DenseParams> {
        let blocks = layout.iter().map(|(_, rows, cols)| r.matrix(*rows, *cols)).collect::<Result<Vec<_>>>()?;
        DenseParams::from_blocks(&config, blocks)
    };
    let dense = read_dense()?;
    let dense_accum = read_dense()?;
    if r.at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(Model { config, normalizer, tables, dense, dense_accum })
}

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
