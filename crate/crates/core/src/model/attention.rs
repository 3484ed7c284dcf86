use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::exec::Execution;
use crate::{Error, Result};

/// In-place numerically stable softmax.
pub(crate) fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Scaled dot-product attention of one query over already projected keys and
/// values. Masked rows (`mask[i] == false`) get zero weight; with no valid row
/// the result is the zero vector.
pub fn target_attention(
    q: ArrayView1<f64>,
    keys: &Array2<f64>,
    values: &Array2<f64>,
    mask: &[bool],
) -> Result<Array1<f64>> {
    let d = q.len();
    let n = keys.nrows();
    if keys.ncols() != d {
        return Err(Error::Dimension { what: "attention keys", expected: d, got: keys.ncols() });
    }
    if values.nrows() != n {
        return Err(Error::Dimension { what: "attention values", expected: n, got: values.nrows() });
    }
    if mask.len() != n {
        return Err(Error::Dimension { what: "attention mask", expected: n, got: mask.len() });
    }
    let valid: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let mut out = Array1::zeros(values.ncols());
    if valid.is_empty() {
        return Ok(out);
    }
    let scale = (d as f64).sqrt();
    let mut w: Vec<f64> = valid.iter().map(|&i| keys.row(i).dot(&q) / scale).collect();
    softmax(&mut w);
    for (&i, &wi) in valid.iter().zip(&w) {
        out.scaled_add(wi, &values.row(i));
    }
    Ok(out)
}

/// Projection weights of one attention block. Rows of width `m` are keyed by
/// `row · wk` and valued by `row · wv`; the query is `q_in · wq`.
pub(crate) struct Projections<'a> {
    pub wq: &'a Array2<f64>,
    pub wk: &'a Array2<f64>,
    pub wv: &'a Array2<f64>,
}

/// Per-sample row matrices of one block, flattened row-major (`n × m`).
pub(crate) type Rows = Vec<f64>;

/// Saved forward state of a batched attention block.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    active: bool,
    /// `q_in · wq`, `B × d`.
    qq: Array2<f64>,
    /// `qq · wkᵀ`, `B × m`: the query pulled back into row space.
    kq: Array2<f64>,
    weights: Vec<Vec<f64>>,
    /// Attention-weighted mean of the raw rows, `B × m`.
    ebar: Array2<f64>,
}

pub(crate) struct BlockGrads {
    pub dwq: Array2<f64>,
    pub dwk: Array2<f64>,
    pub dwv: Array2<f64>,
    pub dqin: Array2<f64>,
    pub drows: Vec<Rows>,
}

/// Batched attention forward. Scores are computed as `row · (wk · qq)` so the
/// rows never have to be projected individually.
pub(crate) fn forward(
    q_in: &Array2<f64>,
    rows: &[Rows],
    p: &Projections,
    exec: Execution,
) -> (Array2<f64>, AttentionCache) {
    let b = q_in.nrows();
    let m = p.wk.nrows();
    let d = p.wv.ncols();
    let active = rows.iter().any(|r| !r.is_empty());
    if !active {
        let cache = AttentionCache {
            active,
            qq: Array2::zeros((0, 0)),
            kq: Array2::zeros((0, 0)),
            weights: vec![Vec::new(); b],
            ebar: Array2::zeros((0, 0)),
        };
        return (Array2::zeros((b, d)), cache);
    }
    let qq = q_in.dot(p.wq);
    let kq = qq.dot(&p.wk.t());
    let scale = (p.wq.ncols() as f64).sqrt();
    let per: Vec<(Vec<f64>, Vec<f64>)> = exec.map_range(b, |i| {
        let r = &rows[i];
        if r.is_empty() {
            return (Vec::new(), vec![0.0; m]);
        }
        let k = kq.row(i).to_vec();
        let mut w: Vec<f64> = r.chunks_exact(m).map(|row| dot(row, &k) / scale).collect();
        softmax(&mut w);
        let mut e = vec![0.0; m];
        for (row, &wi) in r.chunks_exact(m).zip(&w) {
            axpy(wi, row, &mut e);
        }
        (w, e)
    });
    let mut ebar = Array2::zeros((b, m));
    let mut weights = Vec::with_capacity(b);
    for (i, (w, e)) in per.into_iter().enumerate() {
        ebar.row_mut(i).assign(&ArrayView1::from(&e));
        weights.push(w);
    }
    let mut out = ebar.dot(p.wv);
    for (i, r) in rows.iter().enumerate() {
        if r.is_empty() {
            out.row_mut(i).fill(0.0);
        }
    }
    (out, AttentionCache { active, qq, kq, weights, ebar })
}

/// Gradient of a batched block given `dout = ∂L/∂out`.
pub(crate) fn backward(
    cache: &AttentionCache,
    q_in: &Array2<f64>,
    rows: &[Rows],
    p: &Projections,
    dout: &Array2<f64>,
    exec: Execution,
) -> BlockGrads {
    let b = q_in.nrows();
    let m = p.wk.nrows();
    if !cache.active {
        return BlockGrads {
            dwq: Array2::zeros(p.wq.raw_dim()),
            dwk: Array2::zeros(p.wk.raw_dim()),
            dwv: Array2::zeros(p.wv.raw_dim()),
            dqin: Array2::zeros(q_in.raw_dim()),
            drows: vec![Vec::new(); b],
        };
    }
    let scale = (p.wq.ncols() as f64).sqrt();
    // Inactive samples have zero ebar rows, so their dout adds nothing here.
    let dwv = cache.ebar.t().dot(dout);
    let debar = dout.dot(&p.wv.t());
    let per: Vec<(Vec<f64>, Vec<f64>)> = exec.map_range(b, |i| {
        let r = &rows[i];
        if r.is_empty() {
            return (vec![0.0; m], Vec::new());
        }
        let w = &cache.weights[i];
        let de = debar.row(i).to_vec();
        let kq = cache.kq.row(i).to_vec();
        let dw: Vec<f64> = r.chunks_exact(m).map(|row| dot(row, &de)).collect();
        let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        let ds: Vec<f64> = w.iter().zip(&dw).map(|(wi, dwi)| wi * (dwi - mean) / scale).collect();
        let mut dkq = vec![0.0; m];
        let mut drows = vec![0.0; r.len()];
        for (j, row) in r.chunks_exact(m).enumerate() {
            axpy(ds[j], row, &mut dkq);
            let dr = &mut drows[j * m..(j + 1) * m];
            axpy(w[j], &de, dr);
            axpy(ds[j], &kq, dr);
        }
        (dkq, drows)
    });
    let mut dkq = Array2::zeros((b, m));
    let mut drows = Vec::with_capacity(b);
    for (i, (k, r)) in per.into_iter().enumerate() {
        dkq.row_mut(i).assign(&ArrayView1::from(&k));
        drows.push(r);
    }
    let dwk = dkq.t().dot(&cache.qq);
    let dqq = dkq.dot(p.wk);
    let dwq = q_in.t().dot(&dqq);
    let dqin = dqq.dot(&p.wq.t());
    BlockGrads { dwq, dwk, dwv, dqin, drows }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Sum over the batch axis, kept as a `1 × n` row.
pub(crate) fn col_sum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_and_symmetric_keys() {
        let q = arr1(&[0.3, -1.2]);
        let k = arr2(&[[2.0, 5.0]]);
        let v = arr2(&[[0.25, -7.0]]);
        let out = target_attention(q.view(), &k, &v, &[true]).unwrap();
        assert_eq!(out, arr1(&[0.25, -7.0]));

        let k = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let v = arr2(&[[1.0, 2.0], [3.0, 6.0]]);
        let out = target_attention(q.view(), &k, &v, &[true, true]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_slot_reference_value() {
        // e^{1/sqrt 2} / (e^{1/sqrt 2} + 1), evaluated independently
        let w0 = 1.0 / (1.0 + (-std::f64::consts::FRAC_1_SQRT_2).exp());
        let q = arr1(&[1.0, 0.0]);
        let eye = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let out = target_attention(q.view(), &eye, &eye, &[true, true]).unwrap();
        assert!((out[0] - w0).abs() < 1e-12);
        assert!((out[1] - (1.0 - w0)).abs() < 1e-12);
        assert!((out[0] - 0.6698).abs() < 5e-5 && (out[1] - 0.3302).abs() < 5e-5);
    }

    #[test]
    fn masks_and_errors() {
        let q = arr1(&[1.0, 0.0]);
        let k = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let v = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let none = target_attention(q.view(), &k, &v, &[false, false]).unwrap();
        assert_eq!(none, arr1(&[0.0, 0.0]));
        let one = target_attention(q.view(), &k, &v, &[false, true]).unwrap();
        assert_eq!(one, arr1(&[0.0, 1.0]));
        let empty = Array2::zeros((0, 2));
        assert_eq!(target_attention(q.view(), &empty, &empty, &[]).unwrap(), arr1(&[0.0, 0.0]));
        let bad = arr2(&[[1.0, 0.0, 0.0]]);
        assert!(target_attention(q.view(), &bad, &v, &[true]).is_err());
        assert!(target_attention(q.view(), &k, &v, &[true]).is_err());
    }

    #[test]
    fn batched_block_matches_single_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, m, d) = (5, 3, 4);
        let mut rand = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        let q_in = rand(b, d);
        let wq = rand(d, d);
        let wk = rand(m, d);
        let wv = rand(m, d);
        let rows: Vec<Rows> = (0..b).map(|i| rand(i, m).into_raw_vec_and_offset().0).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let (out, _) = forward(&q_in, &rows, &Projections { wq: &wq, wk: &wk, wv: &wv }, exec);
            for i in 0..b {
                let e = Array2::from_shape_vec((i, m), rows[i].clone()).unwrap();
                let q = q_in.row(i).dot(&wq);
                let want = target_attention(q.view(), &e.dot(&wk), &e.dot(&wv), &vec![true; i]).unwrap();
                for j in 0..d {
                    assert!((out[[i, j]] - want[j]).abs() < 1e-12);
                }
            }
        }
    }
}
