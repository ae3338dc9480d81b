//! Straight-line f64 references used as oracles by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use ran_core::numerics::Tensor;

pub type M = Vec<Vec<f64>>;

pub fn rows(t: &Tensor<f64>) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn tensor(m: &M) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

pub fn random(rng: &mut impl Rng, r: usize, c: usize) -> M {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn affine(x: &M, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> M {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|c| {
                    let mut s = b.map_or(0.0, |b| b.data()[c]);
                    for (i, xi) in row.iter().enumerate() {
                        s += xi * w.get(i, c);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    (mu, v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n)
}

pub fn layer_norm(x: &M, gamma: &[f64], beta: &[f64], eps: f64) -> M {
    x.iter()
        .map(|r| {
            let (mu, var) = mean_var(r);
            r.iter()
                .enumerate()
                .map(|(j, v)| gamma[j] * (v - mu) / (var + eps).sqrt() + beta[j])
                .collect()
        })
        .collect()
}

pub fn standard_norm(x: &M, eps: f64) -> M {
    let d = x[0].len();
    layer_norm(x, &vec![1.0; d], &vec![0.0; d], eps)
}

/// `softmax(q k^T / sqrt(dk) + mask) v` for one head.
pub fn attention(q: &M, k: &M, v: &M, mask: &M) -> M {
    let dk = q[0].len() as f64;
    q.iter()
        .zip(mask)
        .map(|(qi, mi)| {
            let s: Vec<f64> = k
                .iter()
                .zip(mi)
                .map(|(kj, m)| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt() + m)
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (w, vj) in e.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w / z * x;
                }
            }
            out
        })
        .collect()
}

pub fn columns(m: &M, start: usize, len: usize) -> M {
    m.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// Heads side by side, no rotary.
pub fn multi_head(q: &M, k: &M, v: &M, mask: &M, heads: usize) -> M {
    let dk = q[0].len() / heads;
    let mut out = vec![Vec::new(); q.len()];
    for j in 0..heads {
        let h = attention(&columns(q, j * dk, dk), &columns(k, j * dk, dk), &columns(v, j * dk, dk), mask);
        for (o, r) in out.iter_mut().zip(h) {
            o.extend(r);
        }
    }
    out
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
