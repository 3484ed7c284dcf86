//! Offline neighbor sampling and the pre-sampled neighbor store.
//!
//! Every cold video gets a [`ComputationGraph`]: its own attribute nodes plus up
//! to `K` warm neighbors along each metapath, each carrying its attribute list.
//! Physical neighbors are ordered by ascending release-time distance to the
//! target, semantic neighbors by descending cosine. Ties go to the smaller id.
//!
//! Store layout (all integers little-endian):
//!
//! ```text
//! header   magic "CSNBRS\0\0" | version u32 | k u32 | count u64
//! index    count x (target u64, offset u64), ascending target
//! record   target u64 | n u32 | n x attr u32
//!          3 x (n u32 | n x (video u64 | score f64 | m u32 | m x attr u32))   order: author, product, semantic
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{AttrId, AttrKind, HeteroGraph, Metapath, VideoId};
use crate::linkage::rank_order;

pub const DEFAULT_K: usize = 20;
pub const STORE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CSNBRS\0\0";
const HEADER_LEN: usize = 8 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub video: VideoId,
    /// Release-time distance in seconds for physical paths, cosine for semantic.
    pub score: f64,
    pub attrs: Vec<AttrId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    pub target: VideoId,
    pub own_attrs: Vec<AttrId>,
    pub nbrs_a: Vec<Neighbor>,
    pub nbrs_p: Vec<Neighbor>,
    pub nbrs_s: Vec<Neighbor>,
}

impl ComputationGraph {
    /// A graph with no neighbors, used when a candidate was never sampled.
    pub fn empty(target: VideoId) -> Self {
        ComputationGraph { target, own_attrs: Vec::new(), nbrs_a: Vec::new(), nbrs_p: Vec::new(), nbrs_s: Vec::new() }
    }

    pub fn neighbors(&self, path: Metapath) -> &[Neighbor] {
        match path {
            Metapath::Author => &self.nbrs_a,
            Metapath::Product => &self.nbrs_p,
            Metapath::Semantic => &self.nbrs_s,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nbrs_a.is_empty() && self.nbrs_p.is_empty() && self.nbrs_s.is_empty()
    }
}

fn physical(g: &HeteroGraph, target: VideoId, kind: AttrKind, k: usize) -> Result<Vec<Neighbor>> {
    let t_release = g.video(target).ok_or(Error::UnknownVideo(target))?.release_ts;
    let pivots = g.pivot_attrs(target, kind)?;
    let mut ranked: Vec<(u64, VideoId)> = g
        .warm_through(target, &pivots)?
        .into_iter()
        .map(|v| {
            let r = g.video(v).map_or(0, |x| x.release_ts);
            ((r - t_release).unsigned_abs(), v)
        })
        .collect();
    ranked.sort_unstable();
    ranked
        .into_iter()
        .take(k)
        .map(|(dt, v)| Ok(Neighbor { video: v, score: dt as f64, attrs: g.attrs_of(v)?.to_vec() }))
        .collect()
}

/// Samples the computation graph of a cold video.
pub fn sample_computation_graph(g: &HeteroGraph, target: VideoId, k: usize) -> Result<ComputationGraph> {
    if g.is_cold(target)? {
        let mut sem: Vec<(VideoId, f64)> = g
            .semantic_of(target)?
            .iter()
            .copied()
            .filter(|(v, _)| matches!(g.is_cold(*v), Ok(false)))
            .collect();
        sem.sort_by(rank_order);
        let nbrs_s = sem
            .into_iter()
            .take(k)
            .map(|(v, c)| Ok(Neighbor { video: v, score: c, attrs: g.attrs_of(v)?.to_vec() }))
            .collect::<Result<_>>()?;
        Ok(ComputationGraph {
            target,
            own_attrs: g.attrs_of(target)?.to_vec(),
            nbrs_a: physical(g, target, AttrKind::Author, k)?,
            nbrs_p: physical(g, target, AttrKind::Product, k)?,
            nbrs_s,
        })
    } else {
        Err(Error::WarmTarget(target))
    }
}

/// Samples every cold video of the graph, ordered by target id.
pub fn sample_all(g: &HeteroGraph, k: usize, exec: Execution) -> Result<Vec<ComputationGraph>> {
    let mut targets: Vec<VideoId> = g.cold_videos().collect();
    targets.sort_unstable();
    exec.map(&targets, |&t| sample_computation_graph(g, t, k)).into_iter().collect()
}

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn encode_record(buf: &mut Vec<u8>, cg: &ComputationGraph) {
    put_u64(buf, cg.target.0);
    put_u32(buf, cg.own_attrs.len() as u32);
    cg.own_attrs.iter().for_each(|a| put_u32(buf, a.0));
    for path in Metapath::ALL {
        let list = cg.neighbors(path);
        put_u32(buf, list.len() as u32);
        for n in list {
            put_u64(buf, n.video.0);
            put_u64(buf, n.score.to_bits());
            put_u32(buf, n.attrs.len() as u32);
            n.attrs.iter().for_each(|a| put_u32(buf, a.0));
        }
    }
}

/// Serialises a store. Records are sorted by target so output is byte-stable.
pub fn encode_store(graphs: &[ComputationGraph], k: usize) -> Result<Vec<u8>> {
    let mut sorted: Vec<&ComputationGraph> = graphs.iter().collect();
    sorted.sort_by_key(|c| c.target);
    if sorted.windows(2).any(|w| w[0].target == w[1].target) {
        return Err(Error::Invalid("duplicate target in neighbor store".into()));
    }
    let mut body = Vec::new();
    let mut offsets = Vec::with_capacity(sorted.len());
    let base = HEADER_LEN + 16 * sorted.len();
    for cg in &sorted {
        offsets.push((cg.target.0, (base + body.len()) as u64));
        encode_record(&mut body, cg);
    }
    let mut out = Vec::with_capacity(base + body.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, STORE_VERSION);
    put_u32(&mut out, k as u32);
    put_u64(&mut out, sorted.len() as u64);
    for (t, off) in offsets {
        put_u64(&mut out, t);
        put_u64(&mut out, off);
    }
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn write_store(path: &Path, graphs: &[ComputationGraph], k: usize) -> Result<()> {
    let bytes = encode_store(graphs, k)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Format {
            what: "neighbor store",
            msg: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn attrs(&mut self) -> Result<Vec<AttrId>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.u32().map(AttrId)).collect()
    }
}

/// Read-only, point-lookup view of a neighbor store held in memory.
#[derive(Debug, Clone)]
pub struct NeighborStore {
    bytes: Vec<u8>,
    k: usize,
    index: Vec<(u64, u64)>,
}

impl NeighborStore {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let mut c = Cursor { buf: &bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(Error::Format { what: "neighbor store", msg: "bad magic".into() });
        }
        let version = c.u32()?;
        if version != STORE_VERSION {
            return Err(Error::SchemaVersion { what: "neighbor store", found: version, expected: STORE_VERSION });
        }
        let k = c.u32()? as usize;
        let count = c.u64()? as usize;
        let index = (0..count).map(|_| Ok((c.u64()?, c.u64()?))).collect::<Result<Vec<_>>>()?;
        if index.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Format { what: "neighbor store", msg: "index not sorted".into() });
        }
        Ok(NeighborStore { bytes, k, index })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_bytes(std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn decode_at(&self, offset: usize) -> Result<ComputationGraph> {
        let mut c = Cursor { buf: &self.bytes, pos: offset };
        let target = VideoId(c.u64()?);
        let own_attrs = c.attrs()?;
        let mut lists: [Vec<Neighbor>; 3] = Default::default();
        for list in &mut lists {
            let n = c.u32()? as usize;
            for _ in 0..n {
                let video = VideoId(c.u64()?);
                let score = f64::from_bits(c.u64()?);
                let attrs = c.attrs()?;
                list.push(Neighbor { video, score, attrs });
            }
        }
        let [nbrs_a, nbrs_p, nbrs_s] = lists;
        Ok(ComputationGraph { target, own_attrs, nbrs_a, nbrs_p, nbrs_s })
    }

    /// Point lookup. `Ok(None)` means the video was never sampled.
    pub fn get(&self, video: VideoId) -> Result<Option<ComputationGraph>> {
        match self.index.binary_search_by_key(&video.0, |e| e.0) {
            Ok(i) => self.decode_at(self.index[i].1 as usize).map(Some),
            Err(_) => Ok(None),
        }
    }

    pub fn targets(&self) -> impl Iterator<Item = VideoId> + '_ {
        self.index.iter().map(|e| VideoId(e.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<ComputationGraph>> + '_ {
        self.index.iter().map(|e| self.decode_at(e.1 as usize))
    }

    /// Human-readable rendering of every record.
    pub fn dump(&self) -> Result<String> {
        let mut out = format!("# neighbor store v{STORE_VERSION} k={} records={}\n", self.k, self.len());
        for cg in self.iter() {
            let cg = cg?;
            let attrs = |xs: &[AttrId]| xs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(out, "target {} own=[{}]", cg.target, attrs(&cg.own_attrs));
            for path in Metapath::ALL {
                for (rank, n) in cg.neighbors(path).iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "  {} #{rank} {} score={} attrs=[{}]",
                        path.tag(),
                        n.video,
                        n.score,
                        attrs(&n.attrs)
                    );
                }
            }
        }
        Ok(out)
    }
}
