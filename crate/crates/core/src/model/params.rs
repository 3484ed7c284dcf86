use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureStore, StatNormalizer};
use super::ModelConfig;
use crate::{Error, Result};

/// Embedding id spaces, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    Video,
    Item,
    Author,
    Category,
    Token,
    User,
}

impl Table {
    pub const ALL: [Table; 6] = [Table::Video, Table::Item, Table::Author, Table::Category, Table::Token, Table::User];

    pub fn name(self) -> &'static str {
        match self {
            Table::Video => "video_id",
            Table::Item => "item_id",
            Table::Author => "author_id",
            Table::Category => "category_id",
            Table::Token => "title_token",
            Table::User => "user_id",
        }
    }

    pub fn dim(self, c: &ModelConfig) -> usize {
        match self {
            Table::Video => c.video_dim,
            Table::Item => c.item_dim,
            Table::Author => c.author_dim,
            Table::Category => c.category_dim,
            Table::Token => c.token_dim,
            Table::User => c.user_dim,
        }
    }
}

/// Dense embedding rows for one id space. The last row is the
/// out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Table,
    ids: Vec<u64>,
    index: HashMap<u64, u32>,
    pub weights: Array2<f64>,
    pub accum: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(table: Table, ids: Vec<u64>, weights: Array2<f64>, accum: Array2<f64>) -> Result<Self> {
        if weights.nrows() != ids.len() + 1 || accum.raw_dim() != weights.raw_dim() {
            return Err(Error::Shape {
                block: table.name().to_string(),
                detail: format!("{} ids but {}x{} weights", ids.len(), weights.nrows(), weights.ncols()),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate id {id} in table {}", table.name())));
            }
        }
        Ok(EmbeddingTable { table, ids, index, weights, accum })
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn oov_row(&self) -> u32 {
        self.ids.len() as u32
    }

    /// Row of `id`; unknown or absent ids map to the OOV row.
    pub fn row_of(&self, id: Option<u64>) -> u32 {
        id.and_then(|i| self.index.get(&i).copied()).unwrap_or_else(|| self.oov_row())
    }

    pub fn lookup(&self, id: Option<u64>) -> &[f64] {
        self.row(self.row_of(id))
    }

    pub fn row(&self, row: u32) -> &[f64] {
        let d = self.dim();
        let s = row as usize * d;
        &self.weights.as_slice().expect("row-major")[s..s + d]
    }
}

/// All dense parameter blocks. Biases are `1 × n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub item_w: Array2<f64>,
    pub item_b: Array2<f64>,
    pub h2_q: Array2<f64>,
    pub h2_k: Array2<f64>,
    pub h2_v: Array2<f64>,
    pub h3_q: [Array2<f64>; 3],
    pub h3_k: [Array2<f64>; 3],
    pub h3_v: [Array2<f64>; 3],
    pub fuse_w: Array2<f64>,
    pub fuse_b: Array2<f64>,
    pub beh_proj: Array2<f64>,
    pub user_q: Array2<f64>,
    pub user_k: Array2<f64>,
    pub user_v: Array2<f64>,
    pub mlp_w: Vec<Array2<f64>>,
    pub mlp_b: Vec<Array2<f64>>,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
}

const PATH_TAGS: [&str; 3] = ["a", "p", "s"];

impl DenseParams {
    /// Expected `(name, rows, cols)` of every block, in checkpoint order.
    pub fn layout(c: &ModelConfig) -> Vec<(String, usize, usize)> {
        let (r, d, vd) = (c.raw_dim(), c.attn_dim, c.video_dim);
        let mut out = vec![
            ("item_w".to_string(), r, d),
            ("item_b".into(), 1, d),
            ("h2_q".into(), d, d),
            ("h2_k".into(), vd, d),
            ("h2_v".into(), vd, d),
        ];
        for kind in ["q", "k", "v"] {
            for tag in PATH_TAGS {
                let rows = if kind == "q" { d } else { r };
                out.push((format!("h3{tag}_{kind}"), rows, d));
            }
        }
        out.push(("fuse_w".into(), 5 * d, d));
        out.push(("fuse_b".into(), 1, d));
        out.push(("beh_proj".into(), r, d));
        out.push(("user_q".into(), d, d));
        out.push(("user_k".into(), d, d));
        out.push(("user_v".into(), d, d));
        let mut fan_in = c.mlp_input_dim();
        for (i, &h) in c.hidden.iter().enumerate() {
            out.push((format!("mlp{i}_w"), fan_in, h));
            out.push((format!("mlp{i}_b"), 1, h));
            fan_in = h;
        }
        out.push(("out_w".into(), fan_in, 1));
        out.push(("out_b".into(), 1, 1));
        out
    }

    /// Build from blocks given in [`DenseParams::layout`] order.
    pub fn from_blocks(c: &ModelConfig, blocks: Vec<Array2<f64>>) -> Result<Self> {
        let layout = Self::layout(c);
        if blocks.len() != layout.len() {
            return Err(Error::Shape {
                block: "dense".into(),
                detail: format!("expected {} blocks, got {}", layout.len(), blocks.len()),
            });
        }
        for ((name, r, cols), b) in layout.iter().zip(&blocks) {
            if b.dim() != (*r, *cols) {
                return Err(Error::Shape {
                    block: name.clone(),
                    detail: format!("expected {r}x{cols}, got {}x{}", b.nrows(), b.ncols()),
                });
            }
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("length checked");
        let item_w = next();
        let item_b = next();
        let h2_q = next();
        let h2_k = next();
        let h2_v = next();
        let h3_q = [next(), next(), next()];
        let h3_k = [next(), next(), next()];
        let h3_v = [next(), next(), next()];
        let fuse_w = next();
        let fuse_b = next();
        let beh_proj = next();
        let user_q = next();
        let user_k = next();
        let user_v = next();
        let mut mlp_w = Vec::new();
        let mut mlp_b = Vec::new();
        for _ in &c.hidden {
            mlp_w.push(next());
            mlp_b.push(next());
        }
        let out_w = next();
        let out_b = next();
        Ok(DenseParams {
            item_w,
            item_b,
            h2_q,
            h2_k,
            h2_v,
            h3_q,
            h3_k,
            h3_v,
            fuse_w,
            fuse_b,
            beh_proj,
            user_q,
            user_k,
            user_v,
            mlp_w,
            mlp_b,
            out_w,
            out_b,
        })
    }

    /// Blocks in layout order.
    pub fn blocks(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.item_w, &self.item_b, &self.h2_q, &self.h2_k, &self.h2_v];
        v.extend(self.h3_q.iter());
        v.extend(self.h3_k.iter());
        v.extend(self.h3_v.iter());
        v.extend([&self.fuse_w, &self.fuse_b, &self.beh_proj, &self.user_q, &self.user_k, &self.user_v]);
        for (w, b) in self.mlp_w.iter().zip(&self.mlp_b) {
            v.push(w);
            v.push(b);
        }
        v.push(&self.out_w);
        v.push(&self.out_b);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.item_w, &mut self.item_b, &mut self.h2_q, &mut self.h2_k, &mut self.h2_v];
        v.extend(self.h3_q.iter_mut());
        v.extend(self.h3_k.iter_mut());
        v.extend(self.h3_v.iter_mut());
        v.extend([
            &mut self.fuse_w,
            &mut self.fuse_b,
            &mut self.beh_proj,
            &mut self.user_q,
            &mut self.user_k,
            &mut self.user_v,
        ]);
        for (w, b) in self.mlp_w.iter_mut().zip(self.mlp_b.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.out_w);
        v.push(&mut self.out_b);
        v
    }

    pub fn zeros(c: &ModelConfig) -> Self {
        let blocks = Self::layout(c).into_iter().map(|(_, r, k)| Array2::zeros((r, k))).collect();
        Self::from_blocks(c, blocks).expect("layout is consistent")
    }

    /// Uniform in `±sqrt(3 / fan_in)` for weights, zero biases.
    fn init(c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let blocks = Self::layout(c)
            .into_iter()
            .map(|(name, r, k)| {
                if name.ends_with("_b") {
                    Array2::zeros((r, k))
                } else {
                    let a = (3.0 / r as f64).sqrt();
                    Array2::from_shape_simple_fn((r, k), || rng.random_range(-a..a))
                }
            })
            .collect();
        Self::from_blocks(c, blocks).expect("layout is consistent")
    }
}

/// Parameters, optimizer state and the frozen feature normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub normalizer: StatNormalizer,
    pub tables: Vec<EmbeddingTable>,
    pub dense: DenseParams,
    pub dense_accum: DenseParams,
}

impl Model {
    /// Seeded initialisation with vocabularies taken from `store`.
    pub fn init(config: ModelConfig, store: &FeatureStore) -> Result<Self> {
        config.validate()?;
        let mut vocab: [BTreeSet<u64>; 6] = Default::default();
        for (v, rec) in &store.videos {
            vocab[0].insert(v.0);
            vocab[1].extend(rec.product);
            vocab[2].extend(rec.author);
            vocab[3].extend(rec.category);
            vocab[4].extend(rec.tokens.iter().map(|&t| t as u64));
        }
        vocab[5].extend(store.users.keys().copied());
        let mut by_id: Vec<_> = store.videos.iter().collect();
        by_id.sort_by_key(|(id, _)| **id);
        let normalizer = StatNormalizer::fit(by_id.iter().map(|(_, r)| &r.stats));
        for u in store.users.values() {
            if u.numeric.len() != config.user_numeric {
                return Err(Error::Dimension {
                    what: "user numeric features",
                    expected: config.user_numeric,
                    got: u.numeric.len(),
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tables = Vec::with_capacity(6);
        for (t, ids) in Table::ALL.into_iter().zip(vocab) {
            let dim = t.dim(&config);
            let a = 1.0 / (dim as f64).sqrt();
            let ids: Vec<u64> = ids.into_iter().collect();
            let w = Array2::from_shape_simple_fn((ids.len() + 1, dim), || rng.random_range(-a..a));
            let acc = Array2::zeros(w.raw_dim());
            tables.push(EmbeddingTable::new(t, ids, w, acc)?);
        }
        let dense = DenseParams::init(&config, &mut rng);
        let dense_accum = DenseParams::zeros(&config);
        Ok(Model { config, normalizer, tables, dense, dense_accum })
    }

    pub fn table(&self, t: Table) -> &EmbeddingTable {
        &self.tables[t as usize]
    }

    pub fn table_mut(&mut self, t: Table) -> &mut EmbeddingTable {
        &mut self.tables[t as usize]
    }

    /// Errors when `other` describes different parameter shapes.
    pub fn check_config(&self, other: &ModelConfig) -> Result<()> {
        let mine = DenseParams::layout(&self.config);
        let theirs = DenseParams::layout(other);
        if mine != theirs {
            let detail = mine
                .iter()
                .zip(&theirs)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} is {}x{} in checkpoint, {}x{} in config", a.0, a.1, a.2, b.1, b.2))
                .unwrap_or_else(|| "block count differs".into());
            return Err(Error::Shape { block: "dense".into(), detail });
        }
        for t in Table::ALL {
            if t.dim(&self.config) != t.dim(other) {
                return Err(Error::Shape {
                    block: t.name().into(),
                    detail: format!("dim {} in checkpoint, {} in config", t.dim(&self.config), t.dim(other)),
                });
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.dense.blocks().iter().map(|b| b.len()).sum::<usize>()
            + self.tables.iter().map(|t| t.weights.len()).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{StatVector, VideoId};
    use crate::model::features::{UserRecord, VideoRecord};

    pub(crate) fn tiny_store() -> FeatureStore {
        let mut s = FeatureStore::default();
        for i in 0..4u64 {
            s.videos.insert(
                VideoId(i),
                VideoRecord {
                    author: Some(i % 2),
                    product: Some(10 + i),
                    category: None,
                    tokens: vec![i as u32, 7],
                    stats: StatVector { ctr_15d: 0.1 * i as f64, ..Default::default() },
                },
            );
        }
        s.users.insert(3, UserRecord { numeric: vec![0.5, -0.5] });
        s
    }

    #[test]
    fn init_shapes_and_determinism() {
        let c = ModelConfig::toy(9);
        let m = Model::init(c.clone(), &tiny_store()).unwrap();
        assert_eq!(m, Model::init(c.clone(), &tiny_store()).unwrap());
        assert_ne!(m.dense, Model::init(ModelConfig::toy(10), &tiny_store()).unwrap().dense);
        for ((name, r, k), b) in DenseParams::layout(&c).iter().zip(m.dense.blocks()) {
            assert_eq!(b.dim(), (*r, *k), "{name}");
        }
        let v = m.table(Table::Video);
        assert_eq!(v.weights.nrows(), 5);
        assert_eq!(v.row_of(Some(99)), v.oov_row());
        assert_eq!(v.lookup(None).len(), c.video_dim);
        let a = 1.0 / (c.video_dim as f64).sqrt();
        assert!(v.weights.iter().all(|x| x.abs() <= a));
        assert_eq!(m.table(Table::Category).ids().len(), 0);
        assert_eq!(m.table(Table::Token).ids(), &[0, 1, 2, 3, 7]);
    }

    #[test]
    fn config_check_reports_block() {
        let m = Model::init(ModelConfig::toy(1), &tiny_store()).unwrap();
        let mut other = ModelConfig::toy(1);
        assert!(m.check_config(&other).is_ok());
        other.attn_dim = 6;
        let err = m.check_config(&other).unwrap_err().to_string();
        assert!(err.contains("item_w"), "{err}");
    }
}
