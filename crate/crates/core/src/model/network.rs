use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, Axis};

use super::attention::{self, axpy, col_sum, AttentionCache, Projections, Rows};
use super::features::ItemKey;
use super::input::Sample;
use super::params::{DenseParams, Model, Table};
use crate::exec::Execution;
use crate::graph::{Metapath, StatVector};
use crate::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probabilities are kept strictly inside (0, 1) even for saturated logits.
const P_FLOOR: f64 = 1e-12;

fn prob(logit: f64) -> f64 {
    sigmoid(logit).clamp(P_FLOOR, 1.0 - P_FLOOR)
}

fn silu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|x| x * sigmoid(x))
}

/// `dz = da · silu'(z)`.
fn silu_back(z: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut out = da.clone();
    out.zip_mut_with(z, |g, &x| {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    });
    out
}

/// Binary cross-entropy of one logit, computed without forming `p`.
pub fn bce_from_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Mean negative log-likelihood of `(p, y)` pairs.
pub fn loss(batch: &[(f64, f64)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = 0.0;
    for &(p, y) in batch {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityRange(p));
        }
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Embedding gradients, keyed by row, for rows touched by a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrads {
    pub tables: [BTreeMap<u32, Vec<f64>>; 6],
}

impl SparseGrads {
    fn add(&mut self, t: Table, row: u32, g: &[f64]) {
        let e = self.tables[t as usize].entry(row).or_insert_with(|| vec![0.0; g.len()]);
        axpy(1.0, g, e);
    }

    fn add_scaled(&mut self, t: Table, row: u32, scale: f64, g: &[f64]) {
        let e = self.tables[t as usize].entry(row).or_insert_with(|| vec![0.0; g.len()]);
        axpy(scale, g, e);
    }
}

#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub dense: DenseParams,
    pub sparse: SparseGrads,
    /// Mean loss of the batch.
    pub loss: f64,
}

/// Forward outputs for a batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Target representation `h_t`, one row per sample.
    pub h_t: Array2<f64>,
    pub h2: Array2<f64>,
    /// `h3_a ⊕ h3_p ⊕ h3_s`.
    pub h3: Array2<f64>,
    /// Fused representation `h_t'`.
    pub fused: Array2<f64>,
    pub h_u: Array2<f64>,
}

/// Everything the backward pass needs.
struct Tape<'a> {
    raw_t: Array2<f64>,
    z_t: Array2<f64>,
    h_t: Array2<f64>,
    e2_rows: Vec<Rows>,
    e2_ids: Vec<Vec<u32>>,
    e3_rows: [Vec<Rows>; 3],
    e3_keys: [Vec<Vec<&'a ItemKey>>; 3],
    e3_ids_live: Vec<bool>,
    beh_rows: Vec<Rows>,
    h2_cache: AttentionCache,
    h3_cache: Vec<AttentionCache>,
    fuse_in: Array2<f64>,
    z_f: Array2<f64>,
    fused: Array2<f64>,
    wk_eff: Array2<f64>,
    wv_eff: Array2<f64>,
    user_cache: AttentionCache,
    h_u: Array2<f64>,
    zs: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    logits: Vec<f64>,
    h2: Array2<f64>,
    h3: Array2<f64>,
}

impl Model {
    /// Writes the raw feature vector of `key` into `out`.
    fn raw_row(&self, key: &ItemKey, zero_ids: bool, zero_stats: bool, out: &mut Vec<f64>) {
        let c = &self.config;
        if zero_ids {
            out.resize(out.len() + c.id_dim(), 0.0);
        } else {
            out.extend_from_slice(self.table(Table::Video).row(key.video));
            out.extend_from_slice(self.table(Table::Item).row(key.item));
            out.extend_from_slice(self.table(Table::Author).row(key.author));
            out.extend_from_slice(self.table(Table::Category).row(key.category));
            let start = out.len();
            out.resize(start + c.token_dim, 0.0);
            if !key.tokens.is_empty() {
                let tok = self.table(Table::Token);
                let acc = &mut out[start..];
                for &t in &key.tokens {
                    axpy(1.0, tok.row(t), acc);
                }
                let n = key.tokens.len() as f64;
                acc.iter_mut().for_each(|x| *x /= n);
            }
        }
        if zero_stats {
            out.resize(out.len() + StatVector::LEN, 0.0);
        } else {
            out.extend_from_slice(&key.stats);
        }
    }

    fn scatter_raw(&self, grads: &mut SparseGrads, key: &ItemKey, d: &[f64]) {
        let c = &self.config;
        let mut at = 0;
        for (t, row) in [
            (Table::Video, key.video),
            (Table::Item, key.item),
            (Table::Author, key.author),
            (Table::Category, key.category),
        ] {
            let w = t.dim(c);
            grads.add(t, row, &d[at..at + w]);
            at += w;
        }
        if !key.tokens.is_empty() {
            let g = &d[at..at + c.token_dim];
            let scale = 1.0 / key.tokens.len() as f64;
            for &t in &key.tokens {
                grads.add_scaled(Table::Token, t, scale, g);
            }
        }
    }

    fn run<'a>(&self, samples: &'a [Sample], exec: Execution) -> Tape<'a> {
        let c = &self.config;
        let p = &self.dense;
        let b = samples.len();
        let r = c.raw_dim();
        let d = c.attn_dim;

        struct Assembled<'s> {
            target: Vec<f64>,
            e2: Rows,
            e2_ids: Vec<u32>,
            e3: [Rows; 3],
            e3_keys: [Vec<&'s ItemKey>; 3],
            beh: Rows,
            user: Vec<f64>,
        }
        let assembled: Vec<Assembled> = exec.map_range(b, |i| {
            let s = &samples[i];
            let t = &s.transfer;
            let mut target = Vec::with_capacity(r);
            self.raw_row(&s.target, false, false, &mut target);
            let e2_ids: Vec<u32> = t.e2_rows().collect();
            let mut e2 = Vec::with_capacity(e2_ids.len() * c.video_dim);
            let video = self.table(Table::Video);
            for &row in &e2_ids {
                e2.extend_from_slice(video.row(row));
            }
            let mut e3: [Rows; 3] = Default::default();
            let mut e3_keys: [Vec<&ItemKey>; 3] = Default::default();
            for path in Metapath::ALL {
                let i = path as usize;
                for key in t.e3_items(path) {
                    self.raw_row(key, t.zero_repr, t.zero_stats, &mut e3[i]);
                    e3_keys[i].push(key);
                }
            }
            let mut beh = Vec::with_capacity(s.behaviors.len() * r);
            for key in &s.behaviors {
                self.raw_row(key, false, false, &mut beh);
            }
            let mut user = self.table(Table::User).row(s.user).to_vec();
            user.extend_from_slice(&s.user_numeric);
            Assembled { target, e2, e2_ids, e3, e3_keys, beh, user }
        });

        let mut raw_t = Vec::with_capacity(b * r);
        let mut user = Vec::with_capacity(b * (c.user_dim + c.user_numeric));
        let mut e2_rows = Vec::with_capacity(b);
        let mut e2_ids = Vec::with_capacity(b);
        let mut e3_rows: [Vec<Rows>; 3] = Default::default();
        let mut e3_keys: [Vec<Vec<&ItemKey>>; 3] = Default::default();
        let mut beh_rows = Vec::with_capacity(b);
        for a in assembled {
            raw_t.extend_from_slice(&a.target);
            user.extend_from_slice(&a.user);
            e2_rows.push(a.e2);
            e2_ids.push(a.e2_ids);
            for (i, (rows, keys)) in a.e3.into_iter().zip(a.e3_keys).enumerate() {
                e3_rows[i].push(rows);
                e3_keys[i].push(keys);
            }
            beh_rows.push(a.beh);
        }
        let raw_t = Array2::from_shape_vec((b, r), raw_t).expect("row width");
        let user = Array2::from_shape_vec((b, c.user_dim + c.user_numeric), user).expect("row width");
        let e3_ids_live = samples.iter().map(|s| !s.transfer.zero_repr).collect();

        let z_t = raw_t.dot(&p.item_w) + &p.item_b;
        let h_t = silu(&z_t);

        let (h2, h2_cache) =
            attention::forward(&h_t, &e2_rows, &Projections { wq: &p.h2_q, wk: &p.h2_k, wv: &p.h2_v }, exec);
        let mut h3_out = Vec::with_capacity(3);
        let mut h3_cache = Vec::with_capacity(3);
        for i in 0..3 {
            let proj = Projections { wq: &p.h3_q[i], wk: &p.h3_k[i], wv: &p.h3_v[i] };
            let (o, cache) = attention::forward(&h_t, &e3_rows[i], &proj, exec);
            h3_out.push(o);
            h3_cache.push(cache);
        }
        let h3 = concatenate(Axis(1), &[h3_out[0].view(), h3_out[1].view(), h3_out[2].view()]).expect("same rows");
        let fuse_in = concatenate(Axis(1), &[h_t.view(), h2.view(), h3.view()]).expect("same rows");
        let z_f = fuse_in.dot(&p.fuse_w) + &p.fuse_b;
        let fused = silu(&z_f);

        let wk_eff = p.beh_proj.dot(&p.user_k);
        let wv_eff = p.beh_proj.dot(&p.user_v);
        let (h_u, user_cache) =
            attention::forward(&fused, &beh_rows, &Projections { wq: &p.user_q, wk: &wk_eff, wv: &wv_eff }, exec);

        let x = concatenate(Axis(1), &[h_u.view(), fused.view(), user.view()]).expect("same rows");
        let mut zs = Vec::with_capacity(c.hidden.len());
        let mut acts = vec![x];
        for (w, bias) in p.mlp_w.iter().zip(&p.mlp_b) {
            let z = acts.last().expect("nonempty").dot(w) + bias;
            acts.push(silu(&z));
            zs.push(z);
        }
        let out = acts.last().expect("nonempty").dot(&p.out_w) + &p.out_b;
        let logits = out.column(0).to_vec();
        debug_assert_eq!(h2.ncols(), d);

        Tape {
            raw_t,
            z_t,
            h_t,
            e2_rows,
            e2_ids,
            e3_rows,
            e3_keys,
            e3_ids_live,
            beh_rows,
            h2_cache,
            h3_cache,
            fuse_in,
            z_f,
            fused,
            wk_eff,
            wv_eff,
            user_cache,
            h_u,
            zs,
            acts,
            logits,
            h2,
            h3,
        }
    }

    /// Full forward pass with intermediate representations.
    pub fn forward(&self, samples: &[Sample], exec: Execution) -> BatchOutput {
        let t = self.run(samples, exec);
        BatchOutput {
            probs: t.logits.iter().map(|&l| prob(l)).collect(),
            logits: t.logits,
            h_t: t.h_t,
            h2: t.h2,
            h3: t.h3,
            fused: t.fused,
            h_u: t.h_u,
        }
    }

    /// Click probabilities, order-aligned with `samples`.
    pub fn predict(&self, samples: &[Sample], exec: Execution) -> Vec<f64> {
        if samples.is_empty() {
            return Vec::new();
        }
        self.run(samples, exec).logits.into_iter().map(prob).collect()
    }

    /// Mean cross-entropy of a batch, from logits.
    pub fn batch_loss(&self, samples: &[Sample], exec: Execution) -> f64 {
        let t = self.run(samples, exec);
        t.logits.iter().zip(samples).map(|(&l, s)| bce_from_logit(l, s.label)).sum::<f64>() / samples.len() as f64
    }

    /// Exact gradients of [`Model::batch_loss`].
    pub fn gradients(&self, samples: &[Sample], exec: Execution) -> BatchGrads {
        let c = &self.config;
        let p = &self.dense;
        let d = c.attn_dim;
        let b = samples.len();
        let t = self.run(samples, exec);
        let n = b as f64;
        let loss = t.logits.iter().zip(samples).map(|(&l, s)| bce_from_logit(l, s.label)).sum::<f64>() / n;

        let dlogit = Array2::from_shape_fn((b, 1), |(i, _)| (sigmoid(t.logits[i]) - samples[i].label) / n);
        let last = t.acts.last().expect("nonempty");
        let out_w = last.t().dot(&dlogit);
        let out_b = col_sum(&dlogit);
        let mut da = dlogit.dot(&p.out_w.t());
        let layers = c.hidden.len();
        let mut mlp_w = vec![Array2::zeros((0, 0)); layers];
        let mut mlp_b = vec![Array2::zeros((0, 0)); layers];
        for l in (0..layers).rev() {
            let dz = silu_back(&t.zs[l], &da);
            mlp_w[l] = t.acts[l].t().dot(&dz);
            mlp_b[l] = col_sum(&dz);
            da = dz.dot(&p.mlp_w[l].t());
        }
        let dx = da;
        let dh_u = dx.slice(s![.., 0..d]).to_owned();
        let mut dfused = dx.slice(s![.., d..2 * d]).to_owned();
        let duser = dx.slice(s![.., 2 * d..2 * d + c.user_dim]);

        let ug = attention::backward(
            &t.user_cache,
            &t.fused,
            &t.beh_rows,
            &Projections { wq: &p.user_q, wk: &t.wk_eff, wv: &t.wv_eff },
            &dh_u,
            exec,
        );
        dfused += &ug.dqin;
        let beh_proj = ug.dwk.dot(&p.user_k.t()) + ug.dwv.dot(&p.user_v.t());
        let user_k = p.beh_proj.t().dot(&ug.dwk);
        let user_v = p.beh_proj.t().dot(&ug.dwv);

        let dz_f = silu_back(&t.z_f, &dfused);
        let fuse_w = t.fuse_in.t().dot(&dz_f);
        let fuse_b = col_sum(&dz_f);
        let dfuse_in = dz_f.dot(&p.fuse_w.t());
        let mut dh_t = dfuse_in.slice(s![.., 0..d]).to_owned();
        let dh2 = dfuse_in.slice(s![.., d..2 * d]).to_owned();

        let g2 = attention::backward(
            &t.h2_cache,
            &t.h_t,
            &t.e2_rows,
            &Projections { wq: &p.h2_q, wk: &p.h2_k, wv: &p.h2_v },
            &dh2,
            exec,
        );
        dh_t += &g2.dqin;
        let mut g3 = Vec::with_capacity(3);
        for i in 0..3 {
            let dh3 = dfuse_in.slice(s![.., (2 + i) * d..(3 + i) * d]).to_owned();
            let proj = Projections { wq: &p.h3_q[i], wk: &p.h3_k[i], wv: &p.h3_v[i] };
            let g = attention::backward(&t.h3_cache[i], &t.h_t, &t.e3_rows[i], &proj, &dh3, exec);
            dh_t += &g.dqin;
            g3.push(g);
        }

        let dz_t = silu_back(&t.z_t, &dh_t);
        let item_w = t.raw_t.t().dot(&dz_t);
        let item_b = col_sum(&dz_t);
        let draw_t = dz_t.dot(&p.item_w.t());

        // Embedding gradients are scattered in sample order for determinism.
        let r = c.raw_dim();
        let mut sparse = SparseGrads::default();
        for (i, s) in samples.iter().enumerate() {
            self.scatter_raw(&mut sparse, &s.target, &draw_t.row(i).to_vec());
            for (j, row) in t.e2_ids[i].iter().enumerate() {
                sparse.add(Table::Video, *row, &g2.drows[i][j * c.video_dim..(j + 1) * c.video_dim]);
            }
            if t.e3_ids_live[i] {
                for (k, g) in g3.iter().enumerate() {
                    for (j, key) in t.e3_keys[k][i].iter().enumerate() {
                        self.scatter_raw(&mut sparse, key, &g.drows[i][j * r..(j + 1) * r]);
                    }
                }
            }
            for (j, key) in s.behaviors.iter().enumerate() {
                self.scatter_raw(&mut sparse, key, &ug.drows[i][j * r..(j + 1) * r]);
            }
            sparse.add(Table::User, s.user, &duser.row(i).to_vec());
        }

        let mut g3 = g3.into_iter();
        let (a, pp, sem) = (g3.next().expect("3"), g3.next().expect("3"), g3.next().expect("3"));
        let dense = DenseParams {
            item_w,
            item_b,
            h2_q: g2.dwq,
            h2_k: g2.dwk,
            h2_v: g2.dwv,
            h3_q: [a.dwq, pp.dwq, sem.dwq],
            h3_k: [a.dwk, pp.dwk, sem.dwk],
            h3_v: [a.dwv, pp.dwv, sem.dwv],
            fuse_w,
            fuse_b,
            beh_proj,
            user_q: ug.dwq,
            user_k,
            user_v,
            mlp_w,
            mlp_b,
            out_w,
            out_b,
        };
        BatchGrads { dense, sparse, loss }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_reference_values() {
        assert!((loss(&[(0.5, 1.0)]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss(&[(1.0 - 1e-12, 1.0)]).unwrap() < 1e-11);
        assert!(loss(&[(1.0, 1.0)]).is_err());
        assert!(loss(&[(0.0, 0.0)]).is_err());
        assert!(loss(&[(f64::NAN, 0.0)]).is_err());
        for l in [-40.0, -3.0, 0.0, 0.7, 40.0] {
            for y in [0.0, 1.0] {
                let p = sigmoid(l);
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                if direct.is_finite() {
                    assert!((bce_from_logit(l, y) - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }
}
