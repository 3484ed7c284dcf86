//! Heterogeneous video/attribute graph.
//!
//! Videos and attribute values are both nodes. Physical edges connect a video
//! to the attribute values it carries (author, product, category and one
//! statistic node per statistic). Semantic edges are weighted, directed
//! video-to-video links from cold videos to their nearest warm videos in
//! content space.
//!
//! The graph is assembled with a [`GraphBuilder`] and then frozen into an
//! immutable [`HeteroGraph`]. Cold/warm status is fixed at the build
//! timestamp so that neighbor sampling and serving agree.

mod io;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

pub use io::{read_graph, write_graph, Vocabulary, GRAPH_SCHEMA_VERSION};

use crate::error::{Error, Result};

/// A video is cold while its age is at most three days (inclusive).
pub const COLD_WINDOW_SECS: i64 = 3 * 86_400;

/// Content vectors must be unit norm within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VideoId(pub u64);

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrId(pub u32);

impl fmt::Display for AttrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Any node of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Video(VideoId),
    Attr(AttrId),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Video(v) => v.fmt(f),
            Node::Attr(a) => a.fmt(f),
        }
    }
}

/// Fifteen-day exposure statistics of a video.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatVector {
    pub ctr_15d: f64,
    pub pv_cnt_15d: f64,
    pub ipv_cnt_15d: f64,
    pub clk_cnt_15d: f64,
    pub avg_stay_time: f64,
}

impl StatVector {
    pub const LEN: usize = 5;

    pub fn values(&self) -> [f64; Self::LEN] {
        [self.ctr_15d, self.pv_cnt_15d, self.ipv_cnt_15d, self.clk_cnt_15d, self.avg_stay_time]
    }

    pub fn from_values(v: [f64; Self::LEN]) -> Self {
        StatVector {
            ctr_15d: v[0],
            pv_cnt_15d: v[1],
            ipv_cnt_15d: v[2],
            clk_cnt_15d: v[3],
            avg_stay_time: v[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = self.values();
        if let Some(i) = vals.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Invalid(format!(
                "statistic {} must be finite and non-negative, got {}",
                StatKind::ALL[i].name(),
                vals[i]
            )));
        }
        if self.ctr_15d > 1.0 {
            return Err(Error::Invalid(format!("ctr_15d {} exceeds 1", self.ctr_15d)));
        }
        if self.clk_cnt_15d > self.pv_cnt_15d {
            return Err(Error::Invalid(format!(
                "clk_cnt_15d {} exceeds pv_cnt_15d {}",
                self.clk_cnt_15d, self.pv_cnt_15d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatKind {
    Ctr15d,
    PvCnt15d,
    IpvCnt15d,
    ClkCnt15d,
    AvgStayTime,
}

impl StatKind {
    pub const ALL: [StatKind; StatVector::LEN] = [
        StatKind::Ctr15d,
        StatKind::PvCnt15d,
        StatKind::IpvCnt15d,
        StatKind::ClkCnt15d,
        StatKind::AvgStayTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::Ctr15d => "ctr_15d",
            StatKind::PvCnt15d => "pv_cnt_15d",
            StatKind::IpvCnt15d => "ipv_cnt_15d",
            StatKind::ClkCnt15d => "clk_cnt_15d",
            StatKind::AvgStayTime => "avg_stay_time",
        }
    }

    pub fn from_name(s: &str) -> Option<StatKind> {
        StatKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct VideoNode {
    pub video_id: VideoId,
    /// Seconds since the epoch.
    pub release_ts: i64,
    pub author_id: Option<u64>,
    pub product_id: Option<u64>,
    pub category_id: Option<u64>,
    pub title_tokens: Vec<u32>,
    pub stats: StatVector,
    pub content_vector: Option<Vec<f64>>,
}

impl VideoNode {
    pub fn validate(&self) -> Result<()> {
        if self.release_ts <= 0 {
            return Err(Error::Invalid(format!(
                "video {} has non-positive release_ts {}",
                self.video_id, self.release_ts
            )));
        }
        self.stats.validate()?;
        if let Some(cv) = &self.content_vector {
            let norm = cv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Invalid(format!(
                    "content vector of video {} has norm {norm}",
                    self.video_id
                )));
            }
        }
        Ok(())
    }
}

/// Cold-start test: age at most three days, boundary inclusive.
pub fn is_cold(video: &VideoNode, now: i64) -> Result<bool> {
    if now < video.release_ts {
        return Err(Error::ClockSkew { video: video.video_id, now, release_ts: video.release_ts });
    }
    Ok(now - video.release_ts <= COLD_WINDOW_SECS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrKind {
    Author,
    Product,
    Category,
    Stat(StatKind),
}

impl AttrKind {
    pub fn name(self) -> String {
        match self {
            AttrKind::Author => "author".into(),
            AttrKind::Product => "product".into(),
            AttrKind::Category => "category".into(),
            AttrKind::Stat(s) => format!("stat:{}", s.name()),
        }
    }

    pub fn parse(s: &str) -> Option<AttrKind> {
        match s {
            "author" => Some(AttrKind::Author),
            "product" => Some(AttrKind::Product),
            "category" => Some(AttrKind::Category),
            _ => s.strip_prefix("stat:").and_then(StatKind::from_name).map(AttrKind::Stat),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrValue {
    Id(u64),
    /// Statistic nodes are per video: the owner is part of the node identity.
    Stat { owner: VideoId, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeNode {
    pub kind: AttrKind,
    pub value: AttrValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum AttrKey {
    Id(AttrKind, u64),
    Stat(StatKind, VideoId),
}

impl AttributeNode {
    fn key(&self) -> AttrKey {
        match (self.kind, self.value) {
            (AttrKind::Stat(s), AttrValue::Stat { owner, .. }) => AttrKey::Stat(s, owner),
            (k, AttrValue::Id(v)) => AttrKey::Id(k, v),
            (k, AttrValue::Stat { owner, .. }) => AttrKey::Id(k, owner.0),
        }
    }
}

/// The three metapaths of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metapath {
    /// target -> author -> video -> attribute
    Author,
    /// target -> product -> video -> attribute
    Product,
    /// target -> video (semantic) -> attribute
    Semantic,
}

impl Metapath {
    pub const ALL: [Metapath; 3] = [Metapath::Author, Metapath::Product, Metapath::Semantic];

    pub fn tag(self) -> &'static str {
        match self {
            Metapath::Author => "rho_a",
            Metapath::Product => "rho_p",
            Metapath::Semantic => "rho_s",
        }
    }

    pub fn max_step(self) -> usize {
        match self {
            Metapath::Author | Metapath::Product => 3,
            Metapath::Semantic => 2,
        }
    }

    fn pivot_kind(self) -> Option<AttrKind> {
        match self {
            Metapath::Author => Some(AttrKind::Author),
            Metapath::Product => Some(AttrKind::Product),
            Metapath::Semantic => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticEdge {
    pub src: VideoId,
    pub dst: VideoId,
    pub cosine: f64,
}

/// Mutable graph under construction.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    build_ts: i64,
    videos: Vec<VideoNode>,
    index: HashMap<VideoId, usize>,
    attrs: Vec<AttributeNode>,
    attr_index: HashMap<AttrKey, AttrId>,
    video_attrs: Vec<BTreeSet<AttrId>>,
    semantic: Vec<Vec<(VideoId, f64)>>,
}

impl GraphBuilder {
    pub fn new(build_ts: i64) -> Self {
        GraphBuilder {
            build_ts,
            videos: Vec::new(),
            index: HashMap::new(),
            attrs: Vec::new(),
            attr_index: HashMap::new(),
            video_attrs: Vec::new(),
            semantic: Vec::new(),
        }
    }

    pub fn build_ts(&self) -> i64 {
        self.build_ts
    }

    pub fn add_video(&mut self, video: VideoNode) -> Result<()> {
        video.validate()?;
        if video.release_ts > self.build_ts {
            return Err(Error::ClockSkew {
                video: video.video_id,
                now: self.build_ts,
                release_ts: video.release_ts,
            });
        }
        if self.index.contains_key(&video.video_id) {
            return Err(Error::Invalid(format!("duplicate video {}", video.video_id)));
        }
        self.index.insert(video.video_id, self.videos.len());
        self.videos.push(video);
        self.video_attrs.push(BTreeSet::new());
        self.semantic.push(Vec::new());
        Ok(())
    }

    pub fn videos(&self) -> &[VideoNode] {
        &self.videos
    }

    pub fn video(&self, id: VideoId) -> Option<&VideoNode> {
        self.index.get(&id).map(|&i| &self.videos[i])
    }

    pub fn is_cold(&self, id: VideoId) -> Result<bool> {
        let v = self.video(id).ok_or(Error::UnknownVideo(id))?;
        is_cold(v, self.build_ts)
    }

    /// Returns the id of the attribute node, creating it if needed.
    pub fn intern_attr(&mut self, node: AttributeNode) -> Result<AttrId> {
        if let AttrValue::Stat { value, .. } = node.value {
            if !value.is_finite() {
                return Err(Error::Invalid(format!("non-finite statistic node value {value}")));
            }
        }
        let key = node.key();
        if let Some(&id) = self.attr_index.get(&key) {
            return Ok(id);
        }
        let id = AttrId(self.attrs.len() as u32);
        self.attrs.push(node);
        self.attr_index.insert(key, id);
        Ok(id)
    }

    /// Adds a physical video-attribute edge. Re-adding is a no-op.
    pub fn link(&mut self, video: VideoId, attr: AttrId) -> Result<()> {
        let &vi = self.index.get(&video).ok_or(Error::UnknownVideo(video))?;
        if attr.0 as usize >= self.attrs.len() {
            return Err(Error::UnknownNode(Node::Attr(attr)));
        }
        self.video_attrs[vi].insert(attr);
        Ok(())
    }

    /// Replaces the semantic out-edges of `src`.
    pub fn set_semantic(&mut self, src: VideoId, edges: Vec<(VideoId, f64)>) -> Result<()> {
        let &si = self.index.get(&src).ok_or(Error::UnknownVideo(src))?;
        for &(dst, _) in &edges {
            if dst == src {
                return Err(Error::Invalid(format!("semantic self-loop on {src}")));
            }
            if !self.index.contains_key(&dst) {
                return Err(Error::UnknownVideo(dst));
            }
        }
        self.semantic[si] = edges;
        Ok(())
    }

    pub fn physical_edge_count(&self) -> usize {
        self.video_attrs.iter().map(BTreeSet::len).sum()
    }

    pub fn freeze(self) -> HeteroGraph {
        let mut attr_videos = vec![Vec::new(); self.attrs.len()];
        let mut order: Vec<usize> = (0..self.videos.len()).collect();
        order.sort_by_key(|&i| self.videos[i].video_id);
        for &vi in &order {
            for a in &self.video_attrs[vi] {
                attr_videos[a.0 as usize].push(self.videos[vi].video_id);
            }
        }
        let cold = self
            .videos
            .iter()
            .map(|v| self.build_ts - v.release_ts <= COLD_WINDOW_SECS)
            .collect();
        HeteroGraph {
            build_ts: self.build_ts,
            videos: self.videos,
            index: self.index,
            cold,
            attrs: self.attrs,
            video_attrs: self.video_attrs.into_iter().map(|s| s.into_iter().collect()).collect(),
            attr_videos,
            semantic: self.semantic,
        }
    }
}

/// Immutable, shareable heterogeneous graph.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    build_ts: i64,
    videos: Vec<VideoNode>,
    index: HashMap<VideoId, usize>,
    cold: Vec<bool>,
    attrs: Vec<AttributeNode>,
    video_attrs: Vec<Vec<AttrId>>,
    attr_videos: Vec<Vec<VideoId>>,
    semantic: Vec<Vec<(VideoId, f64)>>,
}

/// Share of cold videos that reach at least one warm video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub cold_videos: usize,
    pub physical_covered: usize,
    pub semantic_covered: usize,
    pub physical: f64,
    pub semantic: f64,
}

impl HeteroGraph {
    pub fn build_ts(&self) -> i64 {
        self.build_ts
    }

    pub fn videos(&self) -> &[VideoNode] {
        &self.videos
    }

    pub fn video(&self, id: VideoId) -> Option<&VideoNode> {
        self.index.get(&id).map(|&i| &self.videos[i])
    }

    pub fn attr(&self, id: AttrId) -> Option<&AttributeNode> {
        self.attrs.get(id.0 as usize)
    }

    pub fn attributes(&self) -> &[AttributeNode] {
        &self.attrs
    }

    pub fn contains(&self, node: Node) -> bool {
        match node {
            Node::Video(v) => self.index.contains_key(&v),
            Node::Attr(a) => (a.0 as usize) < self.attrs.len(),
        }
    }

    /// Cold status frozen at the build timestamp.
    pub fn is_cold(&self, id: VideoId) -> Result<bool> {
        self.index.get(&id).map(|&i| self.cold[i]).ok_or(Error::UnknownVideo(id))
    }

    pub fn cold_videos(&self) -> impl Iterator<Item = VideoId> + '_ {
        self.videos.iter().zip(&self.cold).filter(|(_, c)| **c).map(|(v, _)| v.video_id)
    }

    pub fn warm_videos(&self) -> impl Iterator<Item = VideoId> + '_ {
        self.videos.iter().zip(&self.cold).filter(|(_, c)| !**c).map(|(v, _)| v.video_id)
    }

    pub fn attrs_of(&self, id: VideoId) -> Result<&[AttrId]> {
        self.index.get(&id).map(|&i| self.video_attrs[i].as_slice()).ok_or(Error::UnknownVideo(id))
    }

    pub fn videos_of(&self, attr: AttrId) -> Result<&[VideoId]> {
        self.attr_videos
            .get(attr.0 as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(Node::Attr(attr)))
    }

    /// Semantic out-edges, ordered by descending cosine.
    pub fn semantic_of(&self, id: VideoId) -> Result<&[(VideoId, f64)]> {
        self.index.get(&id).map(|&i| self.semantic[i].as_slice()).ok_or(Error::UnknownVideo(id))
    }

    pub fn semantic_edges(&self) -> impl Iterator<Item = SemanticEdge> + '_ {
        self.videos.iter().zip(&self.semantic).flat_map(|(v, es)| {
            es.iter().map(move |&(dst, cosine)| SemanticEdge { src: v.video_id, dst, cosine })
        })
    }

    pub fn physical_edge_count(&self) -> usize {
        self.video_attrs.iter().map(Vec::len).sum()
    }

    /// Nodes visited at step `step` when walking `path` from `origin`.
    pub fn metapath_neighbors(&self, origin: Node, path: Metapath, step: usize) -> Result<BTreeSet<Node>> {
        if !self.contains(origin) {
            return Err(Error::UnknownNode(origin));
        }
        if step > path.max_step() {
            return Err(Error::StepOutOfRange { path: path.tag(), step, max: path.max_step() });
        }
        if step == 0 {
            return Ok(BTreeSet::from([origin]));
        }
        let Node::Video(target) = origin else {
            return Err(Error::NotAVideo(origin));
        };
        let videos = match path.pivot_kind() {
            Some(kind) => {
                let pivots = self.pivot_attrs(target, kind)?;
                if step == 1 {
                    return Ok(pivots.into_iter().map(Node::Attr).collect());
                }
                self.warm_through(target, &pivots)?
            }
            None => {
                let sem: BTreeSet<VideoId> = self.semantic_of(target)?.iter().map(|e| e.0).collect();
                if step == 1 {
                    return Ok(sem.into_iter().map(Node::Video).collect());
                }
                sem
            }
        };
        let video_step = if path.pivot_kind().is_some() { 2 } else { 1 };
        if step == video_step {
            return Ok(videos.into_iter().map(Node::Video).collect());
        }
        let mut out = BTreeSet::new();
        for v in videos {
            out.extend(self.attrs_of(v)?.iter().copied().map(Node::Attr));
        }
        Ok(out)
    }

    /// Attribute nodes of `video` of the given kind.
    pub fn pivot_attrs(&self, video: VideoId, kind: AttrKind) -> Result<BTreeSet<AttrId>> {
        Ok(self
            .attrs_of(video)?
            .iter()
            .copied()
            .filter(|a| self.attrs[a.0 as usize].kind == kind)
            .collect())
    }

    /// Warm videos sharing any of `pivots` with `target`, target excluded.
    pub fn warm_through(&self, target: VideoId, pivots: &BTreeSet<AttrId>) -> Result<BTreeSet<VideoId>> {
        let mut out = BTreeSet::new();
        for &a in pivots {
            for &v in self.videos_of(a)? {
                if v != target && !self.is_cold(v)? {
                    out.insert(v);
                }
            }
        }
        Ok(out)
    }

    pub fn coverage(&self) -> CoverageReport {
        let mut cold = 0;
        let mut phys = 0;
        let mut sem = 0;
        for v in self.cold_videos() {
            cold += 1;
            let linked = [AttrKind::Author, AttrKind::Product].into_iter().any(|k| {
                self.pivot_attrs(v, k)
                    .and_then(|p| self.warm_through(v, &p))
                    .map(|s| !s.is_empty())
                    .unwrap_or(false)
            });
            if linked {
                phys += 1;
            }
            let has_sem = self
                .semantic_of(v)
                .map(|es| es.iter().any(|(d, _)| !self.is_cold(*d).unwrap_or(true)))
                .unwrap_or(false);
            if has_sem {
                sem += 1;
            }
        }
        let frac = |n: usize| if cold == 0 { 1.0 } else { n as f64 / cold as f64 };
        CoverageReport {
            cold_videos: cold,
            physical_covered: phys,
            semantic_covered: sem,
            physical: frac(phys),
            semantic: frac(sem),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn video(id: u64, release_ts: i64) -> VideoNode {
        VideoNode {
            video_id: VideoId(id),
            release_ts,
            author_id: None,
            product_id: None,
            category_id: None,
            title_tokens: vec![1],
            stats: StatVector::default(),
            content_vector: None,
        }
    }

    const NOW: i64 = 1_700_000_000;

    #[test]
    fn cold_boundary_is_inclusive() {
        assert!(is_cold(&video(1, NOW - 3 * 86_400), NOW).unwrap());
        assert!(is_cold(&video(1, NOW), NOW).unwrap());
        assert!(!is_cold(&video(1, NOW - 4 * 86_400), NOW).unwrap());
        assert!(!is_cold(&video(1, NOW - 3 * 86_400 - 1), NOW).unwrap());
        assert!(matches!(is_cold(&video(1, NOW + 1), NOW), Err(Error::ClockSkew { .. })));
    }

    /// v_t linked to author nodes a1, a2; a1 and a2 shared with warm v1..v3.
    fn definition_fixture() -> (HeteroGraph, AttrId, AttrId) {
        let mut b = GraphBuilder::new(NOW);
        b.add_video(video(100, NOW - 86_400)).unwrap();
        for id in 1..=3 {
            b.add_video(video(id, NOW - 10 * 86_400)).unwrap();
        }
        let a1 = b.intern_attr(AttributeNode { kind: AttrKind::Author, value: AttrValue::Id(1) }).unwrap();
        let a2 = b.intern_attr(AttributeNode { kind: AttrKind::Author, value: AttrValue::Id(2) }).unwrap();
        b.link(VideoId(100), a1).unwrap();
        b.link(VideoId(100), a2).unwrap();
        b.link(VideoId(1), a1).unwrap();
        b.link(VideoId(2), a1).unwrap();
        b.link(VideoId(3), a2).unwrap();
        (b.freeze(), a1, a2)
    }

    #[test]
    fn definition_example() {
        let (g, a1, a2) = definition_fixture();
        let t = Node::Video(VideoId(100));
        let n1 = g.metapath_neighbors(t, Metapath::Author, 1).unwrap();
        assert_eq!(n1, BTreeSet::from([Node::Attr(a1), Node::Attr(a2)]));
        let n2 = g.metapath_neighbors(t, Metapath::Author, 2).unwrap();
        let expect: BTreeSet<Node> = (1..=3).map(|i| Node::Video(VideoId(i))).collect();
        assert_eq!(n2, expect);
        assert_eq!(g.metapath_neighbors(t, Metapath::Author, 0).unwrap(), BTreeSet::from([t]));
        // step 3 returns the attributes of v1..v3
        let n3 = g.metapath_neighbors(t, Metapath::Author, 3).unwrap();
        assert_eq!(n3, BTreeSet::from([Node::Attr(a1), Node::Attr(a2)]));
        assert!(g.metapath_neighbors(t, Metapath::Product, 2).unwrap().is_empty());
    }

    #[test]
    fn metapath_errors() {
        let (g, a1, _) = definition_fixture();
        let t = Node::Video(VideoId(100));
        assert!(matches!(g.metapath_neighbors(t, Metapath::Semantic, 3), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(g.metapath_neighbors(t, Metapath::Author, 4), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(
            g.metapath_neighbors(Node::Video(VideoId(999)), Metapath::Author, 1),
            Err(Error::UnknownNode(_))
        ));
        assert!(matches!(
            g.metapath_neighbors(Node::Attr(a1), Metapath::Author, 1),
            Err(Error::NotAVideo(_))
        ));
    }

    #[test]
    fn cold_neighbors_and_target_are_excluded() {
        let mut b = GraphBuilder::new(NOW);
        b.add_video(video(1, NOW)).unwrap();
        b.add_video(video(2, NOW - 86_400)).unwrap(); // cold sibling
        b.add_video(video(3, NOW - 30 * 86_400)).unwrap();
        let a = b.intern_attr(AttributeNode { kind: AttrKind::Author, value: AttrValue::Id(7) }).unwrap();
        for v in 1..=3 {
            b.link(VideoId(v), a).unwrap();
        }
        let g = b.freeze();
        let n2 = g.metapath_neighbors(Node::Video(VideoId(1)), Metapath::Author, 2).unwrap();
        assert_eq!(n2, BTreeSet::from([Node::Video(VideoId(3))]));
    }

    #[test]
    fn author_without_warm_videos_is_empty() {
        let mut b = GraphBuilder::new(NOW);
        b.add_video(video(1, NOW)).unwrap();
        let a = b.intern_attr(AttributeNode { kind: AttrKind::Author, value: AttrValue::Id(7) }).unwrap();
        b.link(VideoId(1), a).unwrap();
        let g = b.freeze();
        assert!(g.metapath_neighbors(Node::Video(VideoId(1)), Metapath::Author, 2).unwrap().is_empty());
    }

    #[test]
    fn coverage_reports() {
        let g = GraphBuilder::new(NOW).freeze();
        let c = g.coverage();
        assert_eq!((c.cold_videos, c.physical, c.semantic), (0, 1.0, 1.0));

        let mut b = GraphBuilder::new(NOW);
        b.add_video(video(1, NOW)).unwrap();
        b.add_video(video(2, NOW - 30 * 86_400)).unwrap();
        let a = b.intern_attr(AttributeNode { kind: AttrKind::Author, value: AttrValue::Id(1) }).unwrap();
        let p = b.intern_attr(AttributeNode { kind: AttrKind::Product, value: AttrValue::Id(2) }).unwrap();
        b.link(VideoId(1), a).unwrap();
        b.link(VideoId(2), p).unwrap();
        b.set_semantic(VideoId(1), vec![(VideoId(2), 0.3)]).unwrap();
        let c = b.freeze().coverage();
        assert_eq!((c.cold_videos, c.physical, c.semantic), (1, 0.0, 1.0));
    }

    #[test]
    fn rejects_bad_nodes() {
        let mut b = GraphBuilder::new(NOW);
        let mut v = video(1, NOW);
        v.stats.clk_cnt_15d = 5.0;
        v.stats.pv_cnt_15d = 1.0;
        assert!(b.add_video(v).is_err());
        let mut v = video(1, NOW);
        v.content_vector = Some(vec![0.5, 0.5]);
        assert!(b.add_video(v).is_err());
        assert!(b.add_video(video(1, NOW + 10)).is_err());
        b.add_video(video(1, NOW)).unwrap();
        assert!(b.add_video(video(1, NOW)).is_err());
        assert!(b.set_semantic(VideoId(1), vec![(VideoId(1), 1.0)]).is_err());
    }
}
