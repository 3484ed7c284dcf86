//! Seeded synthetic world with a planted click oracle.
//!
//! Every video belongs to a latent content cluster. A video's latent vector
//! mixes its author's, its product's and its cluster's vectors; its
//! popularity adds the three popularity terms. Clusters are visible only
//! through the content vector (which drives semantic linkage) and, weakly,
//! through one title token. Click probability for user `u` on video `v` is
//! `sigmoid(bias + user_bias + pop_v + u . z_v)`.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};

use crate::data::{self, Impression, AUTHOR, CATEGORY, PRODUCT, USER, VIDEO};
use crate::exec::Execution;
use crate::graph::{GraphBuilder, HeteroGraph, StatVector, VideoId, VideoNode, Vocabulary};
use crate::linkage::{self, normalize};
use crate::model::UserRecord;
use crate::{Error, Result};

const DAY: i64 = 86_400;
/// Build timestamp of every synthetic world.
pub const WORLD_BUILD_TS: i64 = 1_700_000_000;
const GLOBAL_BIAS: f64 = -1.4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub users: usize,
    pub authors: usize,
    pub products: usize,
    pub categories: usize,
    pub clusters: usize,
    pub warm_videos: usize,
    pub cold_videos: usize,
    pub latent_dim: usize,
    pub content_dim: usize,
    pub title_vocab: usize,
    pub history_len: usize,
    pub full_impressions: usize,
    /// Share of `full_impressions` that target cold videos.
    pub cold_fraction: f64,
    pub test_impressions: usize,
    /// Spread of content vectors around their cluster centre.
    pub cluster_noise: f64,
    /// Probability that a title token is the cluster's token.
    pub cluster_token_rate: f64,
    /// Share of videos without a product.
    pub missing_product_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            users: 2000,
            authors: 300,
            products: 600,
            categories: 20,
            clusters: 50,
            warm_videos: 2000,
            cold_videos: 500,
            latent_dim: 8,
            content_dim: linkage::DEFAULT_CONTENT_DIM,
            title_vocab: 400,
            history_len: 30,
            full_impressions: 50_000,
            cold_fraction: 0.24,
            test_impressions: 10_000,
            cluster_noise: 0.8,
            cluster_token_rate: 0.1,
            missing_product_rate: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    /// A few hundred videos; for fast tests.
    pub fn small(seed: u64) -> Self {
        SyntheticWorldConfig {
            users: 200,
            authors: 40,
            products: 80,
            categories: 6,
            clusters: 10,
            warm_videos: 240,
            cold_videos: 60,
            history_len: 12,
            full_impressions: 4000,
            test_impressions: 1000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("users", self.users),
            ("authors", self.authors),
            ("products", self.products),
            ("categories", self.categories),
            ("clusters", self.clusters),
            ("latent_dim", self.latent_dim),
            ("content_dim", self.content_dim),
            ("full_impressions", self.full_impressions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if self.warm_videos == 0 {
            return Err(Error::Invalid("a world needs warm videos".into()));
        }
        if self.title_vocab <= self.clusters {
            return Err(Error::Invalid("title_vocab must exceed the number of clusters".into()));
        }
        for (name, p) in [
            ("cold_fraction", self.cold_fraction),
            ("cluster_token_rate", self.cluster_token_rate),
            ("missing_product_rate", self.missing_product_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.cold_videos == 0 && (self.cold_fraction > 0.0 || self.test_impressions > 0) {
            return Err(Error::Invalid("cold traffic requested but cold_videos is 0".into()));
        }
        if !(self.cluster_noise >= 0.0) {
            return Err(Error::Invalid("cluster_noise must be nonnegative".into()));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "users={}\nauthors={}\nproducts={}\ncategories={}\nclusters={}\nwarm_videos={}\ncold_videos={}\n\
             latent_dim={}\ncontent_dim={}\ntitle_vocab={}\nhistory_len={}\nfull_impressions={}\n\
             cold_fraction={}\ntest_impressions={}\ncluster_noise={}\ncluster_token_rate={}\n\
             missing_product_rate={}\nseed={}\n",
            self.users,
            self.authors,
            self.products,
            self.categories,
            self.clusters,
            self.warm_videos,
            self.cold_videos,
            self.latent_dim,
            self.content_dim,
            self.title_vocab,
            self.history_len,
            self.full_impressions,
            self.cold_fraction,
            self.test_impressions,
            self.cluster_noise,
            self.cluster_token_rate,
            self.missing_product_rate,
            self.seed
        )
    }

    /// Sets one field from its `to_text` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Invalid(format!("bad value {value:?} for world key {key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "users" => self.users = int()?,
            "authors" => self.authors = int()?,
            "products" => self.products = int()?,
            "categories" => self.categories = int()?,
            "clusters" => self.clusters = int()?,
            "warm_videos" => self.warm_videos = int()?,
            "cold_videos" => self.cold_videos = int()?,
            "latent_dim" => self.latent_dim = int()?,
            "content_dim" => self.content_dim = int()?,
            "title_vocab" => self.title_vocab = int()?,
            "history_len" => self.history_len = int()?,
            "full_impressions" => self.full_impressions = int()?,
            "cold_fraction" => self.cold_fraction = float()?,
            "test_impressions" => self.test_impressions = int()?,
            "cluster_noise" => self.cluster_noise = float()?,
            "cluster_token_rate" => self.cluster_token_rate = float()?,
            "missing_product_rate" => self.missing_product_rate = float()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Invalid(format!("unknown world key {key}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Latents {
    user: Vec<Vec<f64>>,
    user_bias: Vec<f64>,
    video: Vec<Vec<f64>>,
    video_pop: Vec<f64>,
}

/// A generated world: graph inputs, users and the three impression sets.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SyntheticWorldConfig,
    pub build_ts: i64,
    pub vocab: Vocabulary,
    /// Warm videos first, then cold; `videos[i].video_id == VideoId(i)`.
    pub videos: Vec<VideoNode>,
    pub users: Vec<(u64, UserRecord)>,
    /// Fixed behavior history per user, most recent first.
    pub histories: Vec<Vec<VideoId>>,
    pub d_full: Vec<Impression>,
    pub d_cold: Vec<Impression>,
    pub d_test: Vec<Impression>,
    latents: Latents,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a world from `config`.
pub fn generate_world(config: &SyntheticWorldConfig) -> Result<World> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let l = c.latent_dim;
    let unit = 1.0 / (l as f64).sqrt();
    let normal = |mean: f64, sd: f64| Normal::new(mean, sd).expect("valid normal");

    let authors: Vec<(Vec<f64>, f64)> =
        (0..c.authors).map(|_| (gaussian_vec(&mut rng, l, unit), normal(0.0, 0.3).sample(&mut rng))).collect();
    let products: Vec<(Vec<f64>, f64)> =
        (0..c.products).map(|_| (gaussian_vec(&mut rng, l, unit), normal(0.0, 0.3).sample(&mut rng))).collect();
    let clusters: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..c.clusters)
        .map(|_| {
            let z = gaussian_vec(&mut rng, l, 1.2 * unit);
            let pop = normal(0.0, 0.6).sample(&mut rng);
            let mut centre = gaussian_vec(&mut rng, c.content_dim, 1.0);
            normalize(&mut centre).expect("nonzero gaussian");
            (z, pop, centre)
        })
        .collect();

    let n_videos = c.warm_videos + c.cold_videos;
    let mut vocab = Vocabulary::new();
    let mut videos = Vec::with_capacity(n_videos);
    let mut latents =
        Latents { user: Vec::new(), user_bias: Vec::new(), video: Vec::new(), video_pop: Vec::new() };
    let content_sd = c.cluster_noise / (c.content_dim as f64).sqrt();
    for i in 0..n_videos {
        let cold = i >= c.warm_videos;
        let cluster = rng.random_range(0..c.clusters);
        let author = rng.random_range(0..c.authors);
        let product = (!rng.random_bool(c.missing_product_rate)).then(|| rng.random_range(0..c.products));
        let category = rng.random_range(0..c.categories);

        let (za, pa) = &authors[author];
        let (zc, pc, centre) = &clusters[cluster];
        let mut z: Vec<f64> = (0..l).map(|k| 0.5 * za[k] + zc[k]).collect();
        let mut pop = pa + pc + normal(0.0, 0.2).sample(&mut rng);
        if let Some(p) = product {
            let (zp, pp) = &products[p];
            for k in 0..l {
                z[k] += 0.5 * zp[k];
            }
            pop += pp;
        }
        for (zk, n) in z.iter_mut().zip(gaussian_vec(&mut rng, l, 0.3 * unit)) {
            *zk += n;
        }

        let n_tokens = rng.random_range(3..=8);
        let title_tokens = (0..n_tokens)
            .map(|_| {
                if rng.random_bool(c.cluster_token_rate) {
                    cluster as u32
                } else {
                    rng.random_range(c.clusters..c.title_vocab) as u32
                }
            })
            .collect();
        let mut content: Vec<f64> = centre.iter().map(|x| x + normal(0.0, content_sd).sample(&mut rng)).collect();
        normalize(&mut content)?;
        let release_ts = if cold {
            WORLD_BUILD_TS - rng.random_range(0..=3 * DAY)
        } else {
            WORLD_BUILD_TS - rng.random_range(4 * DAY..=60 * DAY)
        };

        // Same interning order as `data::read_videos`, so re-reading the
        // written files reproduces these ids.
        let author_id = vocab.intern(AUTHOR, &format!("a{author}"));
        let product_id = product.map(|p| vocab.intern(PRODUCT, &format!("p{p}")));
        let category_id = vocab.intern(CATEGORY, &format!("c{category}"));
        let video_id = VideoId(vocab.intern(VIDEO, &format!("v{i}")));
        debug_assert_eq!(video_id.0, i as u64);
        videos.push(VideoNode {
            video_id,
            release_ts,
            author_id: Some(author_id),
            product_id,
            category_id: Some(category_id),
            title_tokens,
            stats: StatVector::default(),
            content_vector: Some(content),
        });
        latents.video.push(z);
        latents.video_pop.push(pop);
    }

    let mut users = Vec::with_capacity(c.users);
    for u in 0..c.users {
        let latent = gaussian_vec(&mut rng, l, 1.5 * unit);
        let bias = normal(0.0, 0.3).sample(&mut rng);
        let numeric = vec![bias + normal(0.0, 0.1).sample(&mut rng), normal(0.0, 1.0).sample(&mut rng)];
        let id = vocab.intern(USER, &format!("u{u}"));
        users.push((id, UserRecord { numeric }));
        latents.user.push(latent);
        latents.user_bias.push(bias);
    }

    let mut world = World {
        config: c.clone(),
        build_ts: WORLD_BUILD_TS,
        vocab,
        videos,
        users,
        histories: Vec::new(),
        d_full: Vec::new(),
        d_cold: Vec::new(),
        d_test: Vec::new(),
        latents,
    };
    world.fill_stats(&mut rng);
    world.fill_histories(&mut rng);
    world.fill_impressions(&mut rng);
    Ok(world)
}

impl World {
    fn warm_ids(&self) -> std::ops::Range<usize> {
        0..self.config.warm_videos
    }

    fn cold_ids(&self) -> std::ops::Range<usize> {
        self.config.warm_videos..self.videos.len()
    }

    /// Planted click probability of `user` on `video`.
    pub fn oracle_ctr(&self, user: u64, video: VideoId) -> f64 {
        let (u, v) = (user as usize, video.0 as usize);
        sigmoid(
            GLOBAL_BIAS
                + self.latents.user_bias[u]
                + self.latents.video_pop[v]
                + dot(&self.latents.user[u], &self.latents.video[v]),
        )
    }

    /// Click probability of `video` averaged over all users.
    pub fn video_ctr(&self, video: VideoId) -> f64 {
        let n = self.users.len();
        (0..n as u64).map(|u| self.oracle_ctr(u, video)).sum::<f64>() / n as f64
    }

    /// Shows `video` to `n` uniformly drawn users and returns the click rate.
    pub fn empirical_ctr(&self, video: VideoId, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clicks = (0..n)
            .filter(|_| {
                let u = rng.random_range(0..self.users.len()) as u64;
                rng.random_bool(self.oracle_ctr(u, video))
            })
            .count();
        clicks as f64 / n as f64
    }

    pub fn is_cold(&self, video: VideoId) -> bool {
        video.0 as usize >= self.config.warm_videos
    }

    fn fill_stats(&mut self, rng: &mut ChaCha8Rng) {
        for i in 0..self.videos.len() {
            let cold = self.is_cold(VideoId(i as u64));
            let ctr = self.video_ctr(VideoId(i as u64));
            let pv: u64 = if cold {
                rng.random_range(5..=30)
            } else {
                Normal::new(6.5f64, 0.5).expect("valid").sample(rng).exp().round() as u64
            };
            let clk = Binomial::new(pv, ctr).expect("valid binomial").sample(rng);
            let ipv = Binomial::new(clk, 0.6).expect("valid binomial").sample(rng);
            let stay_noise = if cold { 8.0 } else { 1.0 };
            let stay = (20.0 + 40.0 * ctr + Normal::new(0.0, stay_noise).expect("valid").sample(rng)).max(0.0);
            self.videos[i].stats = StatVector {
                ctr_15d: if pv == 0 { 0.0 } else { clk as f64 / pv as f64 },
                pv_cnt_15d: pv as f64,
                ipv_cnt_15d: ipv as f64,
                clk_cnt_15d: clk as f64,
                avg_stay_time: stay,
            };
        }
    }

    fn fill_histories(&mut self, rng: &mut ChaCha8Rng) {
        let warm = self.warm_ids();
        let len = self.config.history_len.min(warm.len());
        self.histories = (0..self.users.len())
            .map(|u| {
                // Gumbel top-k: a preference-weighted sample without replacement.
                let mut keyed: Vec<(f64, usize)> = warm
                    .clone()
                    .map(|v| {
                        let g = -(-rng.random::<f64>().max(1e-300).ln()).ln();
                        (2.0 * dot(&self.latents.user[u], &self.latents.video[v]) + g, v)
                    })
                    .collect();
                keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
                keyed.into_iter().take(len).map(|(_, v)| VideoId(v as u64)).collect()
            })
            .collect();
    }

    fn impression(&self, rng: &mut ChaCha8Rng, id: u64, target: usize, ts_range: (i64, i64)) -> Impression {
        let user = rng.random_range(0..self.users.len());
        let target = VideoId(target as u64);
        let label = rng.random_bool(self.oracle_ctr(user as u64, target));
        let ts = rng.random_range(ts_range.0..=ts_range.1);
        Impression { id, user: user as u64, behaviors: self.histories[user].clone(), target, label, ts }
    }

    fn fill_impressions(&mut self, rng: &mut ChaCha8Rng) {
        let c = &self.config;
        let warm: Vec<usize> = self.warm_ids().collect();
        let cold: Vec<usize> = self.cold_ids().collect();
        let mut full = Vec::with_capacity(c.full_impressions);
        for _ in 0..c.full_impressions {
            let pick_cold = !cold.is_empty() && rng.random_bool(c.cold_fraction);
            let target = *if pick_cold { cold.choose(rng) } else { warm.choose(rng) }.expect("nonempty");
            let start = self.videos[target].release_ts.max(WORLD_BUILD_TS - 15 * DAY);
            full.push(self.impression(rng, 0, target, (start, WORLD_BUILD_TS)));
        }
        full.sort_by_key(|i| i.ts);
        for (k, imp) in full.iter_mut().enumerate() {
            imp.id = k as u64;
        }
        let mut test = Vec::with_capacity(c.test_impressions);
        for k in 0..c.test_impressions {
            let target = *cold.choose(rng).expect("validated: cold videos exist");
            let id = (c.full_impressions + k) as u64;
            test.push(self.impression(rng, id, target, (WORLD_BUILD_TS + 1, WORLD_BUILD_TS + DAY)));
        }
        test.sort_by_key(|i| (i.ts, i.id));
        self.d_cold = full.iter().filter(|i| self.is_cold(i.target)).cloned().collect();
        self.d_full = full;
        self.d_test = test;
    }

    /// Builds the heterogeneous graph with physical and semantic linkages.
    pub fn graph(&self, semantic_k: usize, exec: Execution) -> Result<HeteroGraph> {
        build_graph(self.build_ts, self.videos.clone(), semantic_k, exec)
    }

    /// Writes `world.txt`, `videos.tsv`, `users.tsv`, `d_full.tsv`,
    /// `d_cold.tsv` and `d_test.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("world.txt");
        std::fs::write(&cfg, self.config.to_text()).map_err(|e| Error::io(&cfg, e))?;
        data::write_videos(&dir.join("videos.tsv"), self.build_ts, &self.videos, &self.vocab)?;
        data::write_users(&dir.join("users.tsv"), &self.users, &self.vocab)?;
        data::write_impressions(&dir.join("d_full.tsv"), &self.d_full, &self.vocab)?;
        data::write_impressions(&dir.join("d_cold.tsv"), &self.d_cold, &self.vocab)?;
        data::write_impressions(&dir.join("d_test.tsv"), &self.d_test, &self.vocab)
    }
}

/// Physical plus semantic linkage over `videos`.
pub fn build_graph(build_ts: i64, videos: Vec<VideoNode>, semantic_k: usize, exec: Execution) -> Result<HeteroGraph> {
    let mut b = GraphBuilder::new(build_ts);
    for v in videos {
        b.add_video(v)?;
    }
    let report = linkage::build_physical_linkages(&mut b)?;
    if report.warnings() > 0 {
        log::warn!(
            "{} videos without author, {} without product",
            report.missing_author.len(),
            report.missing_product.len()
        );
    }
    linkage::build_semantic_linkages(&mut b, semantic_k, exec)?;
    Ok(b.freeze())
}
