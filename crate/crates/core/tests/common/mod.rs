#![allow(dead_code)]

use coldstart::data::Impression;
use coldstart::graph::{StatVector, VideoId};
use coldstart::model::{AblationMask, DenseParams, FeatureStore, Featurizer, Model, ModelConfig, Sample, Table, UserRecord, VideoRecord};
use coldstart::sampler::{ComputationGraph, Neighbor};
use coldstart::Execution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
/// Below this magnitude gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

/// Random feature store with 12 videos and 3 users; some fields missing.
pub fn toy_store(rng: &mut ChaCha8Rng) -> FeatureStore {
    let mut s = FeatureStore::default();
    for i in 0..12u64 {
        let tokens = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..6)).collect();
        s.videos.insert(
            VideoId(i),
            VideoRecord {
                author: (i % 5 != 0).then_some(i % 3),
                product: Some(100 + i % 4),
                category: (i % 2 == 0).then_some(7),
                tokens,
                stats: StatVector {
                    ctr_15d: rng.random_range(0.0..0.3),
                    pv_cnt_15d: rng.random_range(0.0..500.0),
                    ipv_cnt_15d: rng.random_range(0.0..50.0),
                    clk_cnt_15d: rng.random_range(0.0..20.0),
                    avg_stay_time: rng.random_range(0.0..30.0),
                },
            },
        );
    }
    for u in 0..3u64 {
        s.users.insert(u, UserRecord { numeric: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)] });
    }
    s
}

fn nbr(v: u64) -> Neighbor {
    Neighbor { video: VideoId(v), score: 0.0, attrs: Vec::new() }
}

/// Up to `k` random neighbors per metapath, with overlaps across paths.
pub fn random_cg(rng: &mut ChaCha8Rng, target: u64, k: usize) -> ComputationGraph {
    let pick = |rng: &mut ChaCha8Rng| {
        let mut ids: Vec<u64> = (0..12).filter(|&v| v != target).collect();
        ids.shuffle(rng);
        ids.truncate(rng.random_range(0..=k));
        ids.into_iter().map(nbr).collect()
    };
    ComputationGraph {
        target: VideoId(target),
        own_attrs: Vec::new(),
        nbrs_a: pick(rng),
        nbrs_p: pick(rng),
        nbrs_s: pick(rng),
    }
}

/// A small batch covering empty and full blocks, unknown ids and the
/// feature-level masks.
pub fn toy_batch(rng: &mut ChaCha8Rng, f: &Featurizer, k: usize, h: usize) -> Vec<Sample> {
    let masks = [
        AblationMask::NONE,
        AblationMask::NONE,
        AblationMask { drop_repr: true, ..AblationMask::NONE },
        AblationMask { drop_stats: true, ..AblationMask::NONE },
        AblationMask { drop_semantic: true, drop_author: true, ..AblationMask::NONE },
        AblationMask::base(),
    ];
    masks
        .iter()
        .enumerate()
        .map(|(i, mask)| {
            let target = rng.random_range(0..13);
            let behaviors = (0..rng.random_range(0..=h)).map(|_| VideoId(rng.random_range(0..13))).collect();
            let imp = Impression {
                id: i as u64,
                user: rng.random_range(0..4),
                behaviors,
                target: VideoId(target),
                label: rng.random_bool(0.5),
                ts: 0,
            };
            let cg = (i != 1).then(|| random_cg(rng, target, k));
            f.sample(&imp, cg.as_ref(), mask)
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    pub blocks_checked: Vec<String>,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn central(model: &mut Model, samples: &[Sample], get: &mut dyn FnMut(&mut Model) -> &mut f64) -> f64 {
    let orig = *get(model);
    *get(model) = orig + FD_EPS;
    let up = model.batch_loss(samples, Execution::Sequential);
    *get(model) = orig - FD_EPS;
    let down = model.batch_loss(samples, Execution::Sequential);
    *get(model) = orig;
    (up - down) / (2.0 * FD_EPS)
}

/// Compares analytic gradients with central differences for every dense
/// coordinate and every coordinate of every embedding row in the tables.
pub fn gradient_check(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = toy_store(&mut rng);
    let mut model = Model::init(ModelConfig::toy(seed), &store).unwrap();
    // Non-zero biases so every bias gradient is exercised away from init.
    for b in model.dense.blocks_mut() {
        if b.nrows() == 1 {
            b.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        }
    }
    let f = Featurizer::new(&model, &store);
    let samples = toy_batch(&mut rng, &f, 3, 4);
    let grads = model.gradients(&samples, Execution::Sequential);
    let mut rep = GradReport::default();
    let note = |rep: &mut GradReport, name: String, a: f64, n: f64| {
        rep.checked += 1;
        let e = rel_err(a, n);
        if e > rep.worst || e.is_nan() {
            rep.worst = if e.is_nan() { f64::INFINITY } else { e };
            rep.worst_at = format!("{name}: analytic {a:e} numeric {n:e}");
        }
    };

    let layout = DenseParams::layout(&model.config);
    let analytic: Vec<_> = grads.dense.blocks().into_iter().cloned().collect();
    for (bi, (name, rows, cols)) in layout.iter().enumerate() {
        for r in 0..*rows {
            for c in 0..*cols {
                let n = central(&mut model, &samples, &mut |m| &mut m.dense.blocks_mut().swap_remove(bi)[[r, c]]);
                note(&mut rep, format!("{name}[{r},{c}]"), analytic[bi][[r, c]], n);
            }
        }
        rep.blocks_checked.push(name.clone());
    }
    for t in Table::ALL {
        let table = model.table(t);
        let (rows, dim) = table.weights.dim();
        for r in 0..rows {
            let a_row = grads.sparse.tables[t as usize].get(&(r as u32));
            for c in 0..dim {
                let n = central(&mut model, &samples, &mut |m| &mut m.table_mut(t).weights[[r, c]]);
                let a = a_row.map_or(0.0, |g| g[c]);
                note(&mut rep, format!("{}[{r},{c}]", t.name()), a, n);
            }
        }
        rep.blocks_checked.push(t.name().to_string());
    }
    rep
}
