//! Physical and semantic linkage construction.
//!
//! Physical linkage attaches each video to its author, product, category and
//! statistic attribute nodes. Two- and three-hop structure falls out of shared
//! attribute nodes. Semantic linkage connects every cold video to its top-k
//! warm videos by cosine similarity of content vectors, using an exact scan.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::exec::Execution;
use crate::graph::{AttrKind, AttrValue, AttributeNode, GraphBuilder, StatKind, VideoId, UNIT_NORM_TOL};
use crate::error::{Error, Result};

/// Default content vector dimension.
pub const DEFAULT_CONTENT_DIM: usize = 64;
/// Default number of semantic neighbors per cold video.
pub const DEFAULT_SEMANTIC_K: usize = 20;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkageReport {
    pub videos: usize,
    pub edges: usize,
    pub missing_author: Vec<VideoId>,
    pub missing_product: Vec<VideoId>,
}

impl LinkageReport {
    pub fn warnings(&self) -> usize {
        self.missing_author.len() + self.missing_product.len()
    }
}

/// Links every video of the builder to its attribute nodes. Idempotent.
pub fn build_physical_linkages(b: &mut GraphBuilder) -> Result<LinkageReport> {
    let mut report = LinkageReport::default();
    let videos: Vec<_> = b
        .videos()
        .iter()
        .map(|v| (v.video_id, v.author_id, v.product_id, v.category_id, v.stats))
        .collect();
    for (vid, author, product, category, stats) in videos {
        report.videos += 1;
        if author.is_none() {
            report.missing_author.push(vid);
        }
        if product.is_none() {
            report.missing_product.push(vid);
        }
        let ids = [(AttrKind::Author, author), (AttrKind::Product, product), (AttrKind::Category, category)];
        for (kind, id) in ids {
            if let Some(id) = id {
                let a = b.intern_attr(AttributeNode { kind, value: AttrValue::Id(id) })?;
                b.link(vid, a)?;
                report.edges += 1;
            }
        }
        for (kind, value) in StatKind::ALL.into_iter().zip(stats.values()) {
            let a = b.intern_attr(AttributeNode {
                kind: AttrKind::Stat(kind),
                value: AttrValue::Stat { owner: vid, value },
            })?;
            b.link(vid, a)?;
            report.edges += 1;
        }
    }
    Ok(report)
}

const TOKEN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const COVER_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn add_gaussian(acc: &mut [f64], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in acc.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *a += z;
    }
}

/// Deterministic stand-in for a multimodal content encoder.
///
/// Each token and the cover seed hash to a fixed Gaussian direction; the
/// output is the normalised sum, so videos with overlapping titles point in
/// similar directions.
pub fn embed_content(tokens: &[u32], cover_seed: Option<u64>, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::Invalid("content dimension must be positive".into()));
    }
    if tokens.is_empty() && cover_seed.is_none() {
        return Err(Error::Invalid("content embedding needs tokens or a cover seed".into()));
    }
    let mut v = vec![0.0; dim];
    for &t in tokens {
        add_gaussian(&mut v, splitmix(TOKEN_SALT ^ u64::from(t)));
    }
    if let Some(seed) = cover_seed {
        add_gaussian(&mut v, splitmix(COVER_SALT ^ seed));
    }
    normalize(&mut v)?;
    Ok(v)
}

/// Scales `v` to unit length.
pub fn normalize(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Invalid(format!("cannot normalise vector with norm {norm}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Cosine of two unit vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Descending similarity, ascending id on ties.
pub fn rank_order(a: &(VideoId, f64), b: &(VideoId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Exact cosine kNN over unit-norm content vectors.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    dim: usize,
    ids: Vec<VideoId>,
    data: Vec<f64>,
    eligible: Vec<bool>,
}

impl KnnIndex {
    pub fn new(dim: usize) -> Self {
        KnnIndex { dim, ids: Vec::new(), data: Vec::new(), eligible: Vec::new() }
    }

    pub fn insert(&mut self, id: VideoId, vector: &[f64], eligible: bool) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension { what: "index vector", expected: self.dim, got: vector.len() });
        }
        let norm = dot(vector, vector).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Invalid(format!("index vector for {id} has norm {norm}")));
        }
        if self.ids.contains(&id) {
            return Err(Error::Invalid(format!("duplicate index entry {id}")));
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        self.eligible.push(eligible);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|e| **e).count()
    }

    /// Top-`k` eligible entries by cosine, ties broken by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(VideoId, f64)>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::Invalid("kNN index is empty".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Dimension { what: "kNN query", expected: self.dim, got: query.len() });
        }
        let mut scored: Vec<(VideoId, f64)> = self
            .data
            .chunks_exact(self.dim)
            .zip(&self.ids)
            .zip(&self.eligible)
            .filter(|(_, e)| **e)
            .map(|((row, &id), _)| (id, dot(query, row)))
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }
}

/// Links every cold video to its top-`k` warm videos by content cosine.
/// Returns the number of semantic edges written.
pub fn build_semantic_linkages(b: &mut GraphBuilder, k: usize, exec: Execution) -> Result<usize> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let dim = b
        .videos()
        .iter()
        .find_map(|v| v.content_vector.as_ref().map(Vec::len))
        .unwrap_or(DEFAULT_CONTENT_DIM);
    let mut index = KnnIndex::new(dim);
    let mut cold = Vec::new();
    for v in b.videos() {
        let cv = v
            .content_vector
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("video {} has no content vector", v.video_id)))?;
        let is_cold = b.is_cold(v.video_id)?;
        if is_cold {
            cold.push((v.video_id, cv.to_vec()));
        } else {
            index.insert(v.video_id, cv, true)?;
        }
    }
    if index.is_empty() {
        return Ok(0);
    }
    let results = exec.map(&cold, |(id, q)| index.search(q, k).map(|r| (*id, r)));
    let mut edges = 0;
    for r in results {
        let (id, nbrs) = r?;
        edges += nbrs.len();
        b.set_semantic(id, nbrs)?;
    }
    Ok(edges)
}

/// Reads externally produced content vectors: `external_id<TAB>f1<TAB>...<TAB>fD`.
/// Vectors are normalised on load; zero or non-finite rows are rejected.
pub fn read_content_vectors(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default().to_string();
        let mut v = cols
            .map(|x| x.parse::<f64>().map_err(|_| Error::parse(path, n + 1, format!("bad float {x:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if *dim.get_or_insert(v.len()) != v.len() || v.is_empty() {
            return Err(Error::parse(path, n + 1, "inconsistent vector dimension"));
        }
        normalize(&mut v).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        out.insert(id, v);
    }
    Ok(out)
}
