//! Text persistence for the graph: `nodes.tsv`, `edges.tsv`, `vocab.tsv`.
//!
//! Column layouts are documented in `docs/FORMATS.md`. Floats are written in
//! shortest round-trip form so a write/read cycle is lossless.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AttrId, AttrKind, AttrValue, AttributeNode, GraphBuilder, HeteroGraph, StatVector, VideoId, VideoNode};
use crate::error::{Error, Result};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

const NODES_MAGIC: &str = "#coldstart-graph-nodes";
const EDGES_MAGIC: &str = "#coldstart-graph-edges";
const VOCAB_MAGIC: &str = "#coldstart-vocab";

/// Maps external string ids to internal 64-bit ids, one namespace per id space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    spaces: BTreeMap<String, Space>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Space {
    ids: HashMap<String, u64>,
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the internal id of `external`, assigning the next free id on first sight.
    pub fn intern(&mut self, space: &str, external: &str) -> u64 {
        let s = self.spaces.entry(space.to_string()).or_default();
        if let Some(&id) = s.ids.get(external) {
            return id;
        }
        let id = s.names.len() as u64;
        s.ids.insert(external.to_string(), id);
        s.names.push(external.to_string());
        id
    }

    pub fn get(&self, space: &str, external: &str) -> Option<u64> {
        self.spaces.get(space)?.ids.get(external).copied()
    }

    pub fn external(&self, space: &str, id: u64) -> Option<&str> {
        self.spaces.get(space)?.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self, space: &str) -> usize {
        self.spaces.get(space).map_or(0, |s| s.names.len())
    }

    pub fn is_empty(&self) -> bool {
        self.spaces.values().all(|s| s.names.is_empty())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut body = format!("{VOCAB_MAGIC}\tv{GRAPH_SCHEMA_VERSION}\n");
        for (name, s) in &self.spaces {
            for (id, ext) in s.names.iter().enumerate() {
                body.push_str(&format!("{name}\t{ext}\t{id}\n"));
            }
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut lines = open_lines(path)?;
        check_header(path, lines.next(), VOCAB_MAGIC)?;
        let mut v = Vocabulary::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(path, n + 2, "expected 3 columns"));
            }
            let want: u64 = cols[2].parse().map_err(|_| Error::parse(path, n + 2, "bad internal id"))?;
            let got = v.intern(cols[0], cols[1]);
            if got != want {
                return Err(Error::parse(path, n + 2, "internal ids must be dense and in order"));
            }
        }
        Ok(v)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open_lines(path: &Path) -> Result<std::io::Lines<BufReader<File>>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?).lines())
}

/// Validates `<magic>\tv<version>[\t...]` and returns the remaining header fields.
fn check_header(
    path: &Path,
    line: Option<std::io::Result<String>>,
    magic: &str,
) -> Result<Vec<String>> {
    let line = line
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let mut cols = line.split('\t');
    if cols.next() != Some(magic) {
        return Err(Error::parse(path, 1, format!("expected header {magic}")));
    }
    let ver = cols
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing schema version"))?;
    if ver != GRAPH_SCHEMA_VERSION {
        return Err(Error::SchemaVersion { what: "graph file", found: ver, expected: GRAPH_SCHEMA_VERSION });
    }
    Ok(cols.map(str::to_string).collect())
}

fn opt_u64(x: Option<u64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
    }
}

/// Writes `nodes.tsv`, `edges.tsv` and `vocab.tsv` into `dir`.
pub fn write_graph(graph: &HeteroGraph, vocab: &Vocabulary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes_path = dir.join("nodes.tsv");
    let mut out = String::new();
    out.push_str(&format!("{NODES_MAGIC}\tv{GRAPH_SCHEMA_VERSION}\tbuild_ts={}\n", graph.build_ts()));
    for v in graph.videos() {
        let s = v.stats;
        out.push_str(&format!(
            "V\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            v.video_id.0,
            v.release_ts,
            opt_u64(v.author_id),
            opt_u64(v.product_id),
            opt_u64(v.category_id),
            join(&v.title_tokens, " "),
            s.ctr_15d,
            s.pv_cnt_15d,
            s.ipv_cnt_15d,
            s.clk_cnt_15d,
            s.avg_stay_time,
            v.content_vector.as_deref().map_or_else(|| "-".to_string(), |c| join(c, ",")),
        ));
    }
    for (i, a) in graph.attributes().iter().enumerate() {
        let (value, owner) = match a.value {
            AttrValue::Id(x) => (x.to_string(), "-".to_string()),
            AttrValue::Stat { owner, value } => (value.to_string(), owner.0.to_string()),
        };
        out.push_str(&format!("A\t{i}\t{}\t{value}\t{owner}\n", a.kind.name()));
    }
    let mut w = create(&nodes_path)?;
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(&nodes_path, e))?;

    let edges_path = dir.join("edges.tsv");
    let mut out = format!("{EDGES_MAGIC}\tv{GRAPH_SCHEMA_VERSION}\n");
    for v in graph.videos() {
        for a in graph.attrs_of(v.video_id)? {
            out.push_str(&format!("P\t{}\t{}\n", v.video_id.0, a.0));
        }
    }
    for e in graph.semantic_edges() {
        out.push_str(&format!("S\t{}\t{}\t{}\n", e.src.0, e.dst.0, e.cosine));
    }
    let mut w = create(&edges_path)?;
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(&edges_path, e))?;

    vocab.write(&dir.join("vocab.tsv"))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(path, line, format!("bad {what}: {s:?}")))
}

fn opt_field(path: &Path, line: usize, s: &str, what: &str) -> Result<Option<u64>> {
    if s == "-" {
        Ok(None)
    } else {
        field(path, line, s, what).map(Some)
    }
}

/// Reads a graph written by [`write_graph`].
pub fn read_graph(dir: &Path) -> Result<(HeteroGraph, Vocabulary)> {
    let nodes_path = dir.join("nodes.tsv");
    let mut lines = open_lines(&nodes_path)?;
    let extra = check_header(&nodes_path, lines.next(), NODES_MAGIC)?;
    let build_ts = extra
        .iter()
        .find_map(|kv| kv.strip_prefix("build_ts="))
        .and_then(|v| v.parse::<i64>().ok())
        .ok_or_else(|| Error::parse(&nodes_path, 1, "missing build_ts"))?;
    let mut b = GraphBuilder::new(build_ts);
    for (n, line) in lines.enumerate() {
        let ln = n + 2;
        let line = line.map_err(|e| Error::io(&nodes_path, e))?;
        let c: Vec<&str> = line.split('\t').collect();
        match c.first().copied() {
            Some("V") if c.len() == 13 => {
                let tokens = if c[6] == "-" {
                    Vec::new()
                } else {
                    c[6].split(' ').map(|t| field(&nodes_path, ln, t, "token")).collect::<Result<_>>()?
                };
                let mut stats = [0.0; StatVector::LEN];
                for (i, s) in stats.iter_mut().enumerate() {
                    *s = field(&nodes_path, ln, c[7 + i], "statistic")?;
                }
                let content = if c[12] == "-" {
                    None
                } else {
                    Some(c[12].split(',').map(|x| field(&nodes_path, ln, x, "content")).collect::<Result<_>>()?)
                };
                b.add_video(VideoNode {
                    video_id: VideoId(field(&nodes_path, ln, c[1], "video id")?),
                    release_ts: field(&nodes_path, ln, c[2], "release_ts")?,
                    author_id: opt_field(&nodes_path, ln, c[3], "author")?,
                    product_id: opt_field(&nodes_path, ln, c[4], "product")?,
                    category_id: opt_field(&nodes_path, ln, c[5], "category")?,
                    title_tokens: tokens,
                    stats: StatVector::from_values(stats),
                    content_vector: content,
                })?;
            }
            Some("A") if c.len() == 5 => {
                let id: u32 = field(&nodes_path, ln, c[1], "attr id")?;
                let kind = AttrKind::parse(c[2]).ok_or_else(|| Error::parse(&nodes_path, ln, "bad kind"))?;
                let value = match kind {
                    AttrKind::Stat(_) => AttrValue::Stat {
                        owner: VideoId(field(&nodes_path, ln, c[4], "owner")?),
                        value: field(&nodes_path, ln, c[3], "value")?,
                    },
                    _ => AttrValue::Id(field(&nodes_path, ln, c[3], "value")?),
                };
                let got = b.intern_attr(AttributeNode { kind, value })?;
                if got.0 != id {
                    return Err(Error::parse(&nodes_path, ln, "attribute ids must be dense and unique"));
                }
            }
            Some("") | None => {}
            _ => return Err(Error::parse(&nodes_path, ln, "unrecognised record")),
        }
    }

    let edges_path = dir.join("edges.tsv");
    let mut lines = open_lines(&edges_path)?;
    check_header(&edges_path, lines.next(), EDGES_MAGIC)?;
    let mut semantic: BTreeMap<VideoId, Vec<(VideoId, f64)>> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let ln = n + 2;
        let line = line.map_err(|e| Error::io(&edges_path, e))?;
        let c: Vec<&str> = line.split('\t').collect();
        match c.first().copied() {
            Some("P") if c.len() == 3 => {
                let v = VideoId(field(&edges_path, ln, c[1], "video")?);
                let a = AttrId(field(&edges_path, ln, c[2], "attr")?);
                b.link(v, a)?;
            }
            Some("S") if c.len() == 4 => {
                let src = VideoId(field(&edges_path, ln, c[1], "src")?);
                let dst = VideoId(field(&edges_path, ln, c[2], "dst")?);
                let w: f64 = field(&edges_path, ln, c[3], "cosine")?;
                semantic.entry(src).or_default().push((dst, w));
            }
            Some("") | None => {}
            _ => return Err(Error::parse(&edges_path, ln, "unrecognised record")),
        }
    }
    for (src, es) in semantic {
        b.set_semantic(src, es)?;
    }
    let vocab_path = dir.join("vocab.tsv");
    let vocab = if vocab_path.exists() { Vocabulary::read(&vocab_path)? } else { Vocabulary::new() };
    Ok((b.freeze(), vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_dense_and_stable() {
        let mut v = Vocabulary::new();
        assert_eq!(v.intern("video", "x"), 0);
        assert_eq!(v.intern("video", "y"), 1);
        assert_eq!(v.intern("video", "x"), 0);
        assert_eq!(v.intern("author", "x"), 0);
        assert_eq!(v.external("video", 1), Some("y"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.write(&p).unwrap();
        assert_eq!(Vocabulary::read(&p).unwrap(), v);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        std::fs::write(&p, "#coldstart-vocab\tv99\n").unwrap();
        assert!(matches!(Vocabulary::read(&p), Err(Error::SchemaVersion { found: 99, .. })));
    }
}
