use std::collections::HashMap;

use crate::graph::{HeteroGraph, StatVector, VideoId};

/// Maps raw statistics to model inputs: counts go through `log1p`, then every
/// statistic is z-scored with moments fitted once on the training videos.
#[derive(Debug, Clone, PartialEq)]
pub struct StatNormalizer {
    pub mean: [f64; StatVector::LEN],
    pub std: [f64; StatVector::LEN],
}

impl Default for StatNormalizer {
    fn default() -> Self {
        StatNormalizer { mean: [0.0; StatVector::LEN], std: [1.0; StatVector::LEN] }
    }
}

impl StatNormalizer {
    fn pre(s: &StatVector) -> [f64; StatVector::LEN] {
        [s.ctr_15d, s.pv_cnt_15d.ln_1p(), s.ipv_cnt_15d.ln_1p(), s.clk_cnt_15d.ln_1p(), s.avg_stay_time]
    }

    pub fn fit<'a>(stats: impl IntoIterator<Item = &'a StatVector>) -> Self {
        let rows: Vec<_> = stats.into_iter().map(Self::pre).collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut out = Self::default();
        for j in 0..StatVector::LEN {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            out.mean[j] = mean;
            out.std[j] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn apply(&self, s: &StatVector) -> [f64; StatVector::LEN] {
        let mut x = Self::pre(s);
        for j in 0..StatVector::LEN {
            x[j] = (x[j] - self.mean[j]) / self.std[j];
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub author: Option<u64>,
    pub product: Option<u64>,
    pub category: Option<u64>,
    pub tokens: Vec<u32>,
    pub stats: StatVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub numeric: Vec<f64>,
}

/// Per-video and per-user features used at training and serving time.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    pub videos: HashMap<VideoId, VideoRecord>,
    pub users: HashMap<u64, UserRecord>,
}

impl FeatureStore {
    pub fn from_graph(graph: &HeteroGraph, users: impl IntoIterator<Item = (u64, UserRecord)>) -> Self {
        let videos = graph
            .videos()
            .iter()
            .map(|v| {
                (
                    v.video_id,
                    VideoRecord {
                        author: v.author_id,
                        product: v.product_id,
                        category: v.category_id,
                        tokens: v.title_tokens.clone(),
                        stats: v.stats,
                    },
                )
            })
            .collect();
        FeatureStore { videos, users: users.into_iter().collect() }
    }
}

/// Embedding-row view of one video, ready for featurisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKey {
    pub video: u32,
    pub item: u32,
    pub author: u32,
    pub category: u32,
    pub tokens: Vec<u32>,
    pub stats: [f64; StatVector::LEN],
}
