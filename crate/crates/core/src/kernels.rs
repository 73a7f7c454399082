//! Dense reference implementations for the shipped kernel corpus.
//!
//! These never touch the IR or the simulator. Accumulation is done in
//! `f64` in a fixed order and rounded once at the end.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// `max |got - want| / max |want|`, with the denominator clamped away from
/// zero. Shape mismatch is infinite error.
pub fn relative_error(got: &Tensor, want: &Tensor) -> f64 {
    if got.shape() != want.shape() {
        return f64::INFINITY;
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&g, &w) in got.data().iter().zip(want.data()) {
        let d = (f64::from(g) - f64::from(w)).abs();
        if d.is_nan() {
            return f64::INFINITY;
        }
        num = num.max(d);
        den = den.max(f64::from(w).abs());
    }
    num / den.max(1e-30)
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        &[r, c] => (r, c),
        s => panic!("expected a 2-D tensor, got shape {s:?}"),
    }
}

fn at(t: &Tensor, i: usize, j: usize) -> f64 {
    let (_, c) = dims2(t);
    f64::from(t.data()[i * c + j])
}

fn from_f64(shape: &[usize], v: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), v.into_iter().map(|x| x as f32).collect()).expect("shape")
}

pub struct LayerNorm {
    pub y: Tensor,
    pub mean: Tensor,
    pub rstd: Tensor,
}

/// Row-wise layer normalization of `x: B×N` with weight and bias `N`.
pub fn layernorm(x: &Tensor, w: &Tensor, b: &Tensor, eps: f32) -> LayerNorm {
    let (rows, n) = dims2(x);
    assert_eq!(w.shape(), [n]);
    assert_eq!(b.shape(), [n]);
    let (mut y, mut mean, mut rstd) = (vec![0.0; rows * n], vec![0.0; rows], vec![0.0; rows]);
    for r in 0..rows {
        let mu = (0..n).map(|j| at(x, r, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|j| (at(x, r, j) - mu).powi(2)).sum::<f64>() / n as f64;
        let rs = 1.0 / libm::sqrt(var + f64::from(eps));
        for j in 0..n {
            y[r * n + j] = (at(x, r, j) - mu) * rs * f64::from(w.data()[j]) + f64::from(b.data()[j]);
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
    LayerNorm {
        y: from_f64(&[rows, n], y),
        mean: from_f64(&[rows], mean),
        rstd: from_f64(&[rows], rstd),
    }
}

/// `A · B`, reducing over `k` in ascending order.
pub fn gemm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = dims2(a);
    let (k2, n) = dims2(b);
    assert_eq!(k, k2, "gemm inner dimensions");
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|kk| at(a, i, kk) * at(b, kk, j)).sum();
        }
    }
    from_f64(&[m, n], c)
}

/// GEMM over operands sharded along K across devices: device `d` holds
/// `A[:, d·K/D ..]` and `B[d·K/D .., :]`. Equals the GEMM of the gathered
/// operands.
pub fn multi_device_gemm(a_shards: &[Tensor], b_shards: &[Tensor]) -> Tensor {
    assert_eq!(a_shards.len(), b_shards.len());
    let a: Vec<&Tensor> = a_shards.iter().collect();
    let b: Vec<&Tensor> = b_shards.iter().collect();
    let a = Tensor::concat2d(&a, 1).expect("A shards concatenate along K");
    let b = Tensor::concat2d(&b, 0).expect("B shards concatenate along K");
    gemm(&a, &b)
}

/// Inclusive causal window `[max(0, i-w+1), i]`.
fn window(i: usize, w: usize) -> core::ops::RangeInclusive<usize> {
    (i + 1).saturating_sub(w)..=i
}

pub struct Attention {
    pub o: Tensor,
    /// Log-sum-exp of the scaled scores per query row.
    pub m: Tensor,
}

/// Sliding-window softmax attention: query `i` attends keys in
/// `[max(0, i-w+1), i]`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, w: usize, scale: f32) -> Attention {
    let (s, d) = dims2(q);
    let mut o = vec![0.0; s * d];
    let mut lse = vec![0.0; s];
    for i in 0..s {
        let scores: Vec<(usize, f64)> = window(i, w)
            .map(|j| (j, f64::from(scale) * (0..d).map(|c| at(q, i, c) * at(k, j, c)).sum::<f64>()))
            .collect();
        let mx = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let l: f64 = scores.iter().map(|x| libm::exp(x.1 - mx)).sum();
        for &(j, sc) in &scores {
            let p = libm::exp(sc - mx) / l;
            for c in 0..d {
                o[i * d + c] += p * at(v, j, c);
            }
        }
        lse[i] = mx + libm::log(l);
    }
    Attention {
        o: from_f64(&[s, d], o),
        m: from_f64(&[s], lse),
    }
}

/// 2-simplicial attention. Query `i` scores every pair `(j, k)` with `j` in
/// its `w1` window and `k` in its `w2` window as
/// `scale · Σ_c q[i,c]·k1[j,c]·k2[k,c]`; one softmax runs over all pairs and
/// the output is `Σ p · (v1[j] ⊙ v2[k])`.
pub fn simplicial_attention(
    q: &Tensor,
    k1: &Tensor,
    k2: &Tensor,
    v1: &Tensor,
    v2: &Tensor,
    w1: usize,
    w2: usize,
    scale: f32,
) -> Attention {
    let (s, d) = dims2(q);
    let mut o = vec![0.0; s * d];
    let mut lse = vec![0.0; s];
    for i in 0..s {
        let mut scores = Vec::new();
        for j in window(i, w1) {
            for k in window(i, w2) {
                let sc: f64 = (0..d).map(|c| at(q, i, c) * at(k1, j, c) * at(k2, k, c)).sum();
                scores.push((j, k, f64::from(scale) * sc));
            }
        }
        let mx = scores.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
        let l: f64 = scores.iter().map(|x| libm::exp(x.2 - mx)).sum();
        for &(j, k, sc) in &scores {
            let p = libm::exp(sc - mx) / l;
            for c in 0..d {
                o[i * d + c] += p * at(v1, j, c) * at(v2, k, c);
            }
        }
        lse[i] = mx + libm::log(l);
    }
    Attention {
        o: from_f64(&[s, d], o),
        m: from_f64(&[s], lse),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::random_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn constant_row_normalizes_to_bias() {
        let x = Tensor::full(&[2, 8], 3.0);
        let w = rand(&[8], 1);
        let b = rand(&[8], 2);
        let r = layernorm(&x, &w, &b, 1e-5);
        assert_eq!(r.mean.data(), &[3.0, 3.0]);
        assert!((r.rstd.data()[0] - 1.0 / 1e-5f32.sqrt()).abs() < 1.0);
        for row in 0..2 {
            assert_eq!(&r.y.data()[row * 8..row * 8 + 8], b.data());
        }
    }

    #[test]
    fn unit_affine_gives_zero_mean_unit_variance() {
        let x = rand(&[4, 256], 3);
        let r = layernorm(&x, &Tensor::full(&[256], 1.0), &Tensor::zeros(&[256]), 1e-6);
        for row in r.y.data().chunks(256) {
            let mu: f64 = row.iter().map(|&v| f64::from(v)).sum::<f64>() / 256.0;
            let var: f64 = row.iter().map(|&v| (f64::from(v) - mu).powi(2)).sum::<f64>() / 256.0;
            assert!(mu.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn identity_gemm() {
        let mut eye = Tensor::zeros(&[6, 6]);
        for i in 0..6 {
            eye.data_mut()[i * 7] = 1.0;
        }
        let b = rand(&[6, 5], 4);
        assert_eq!(gemm(&eye, &b), b);
    }

    #[test]
    fn sharded_gemm_matches_gathered() {
        let a = rand(&[4, 8], 5);
        let b = rand(&[8, 3], 6);
        let a0 = Tensor::new(vec![4, 4], (0..16).map(|i| a.data()[(i / 4) * 8 + i % 4]).collect()).unwrap();
        let a1 = Tensor::new(vec![4, 4], (0..16).map(|i| a.data()[(i / 4) * 8 + 4 + i % 4]).collect()).unwrap();
        let b0 = Tensor::new(vec![4, 3], b.data()[..12].to_vec()).unwrap();
        let b1 = Tensor::new(vec![4, 3], b.data()[12..].to_vec()).unwrap();
        let c = multi_device_gemm(&[a0, a1], &[b0, b1]);
        assert!(relative_error(&c, &gemm(&a, &b)) < 1e-6);
    }

    #[test]
    fn single_key_attention_copies_value() {
        let q = rand(&[1, 4], 7);
        let k = rand(&[1, 4], 8);
        let v = rand(&[1, 4], 9);
        let r = attention(&q, &k, &v, 4, 0.5);
        assert_eq!(r.o, v);
        let s = simplicial_attention(&q, &k, &k, &v, &v, 1, 1, 0.5);
        let vv = v.zip_map(&v, |a, b| a * b).unwrap();
        assert!(relative_error(&s.o, &vv) < 1e-6);
    }

    #[test]
    fn unit_first_window_degenerates_to_attention() {
        let (q, k2, v2) = (rand(&[12, 8], 10), rand(&[12, 8], 11), rand(&[12, 8], 12));
        let ones = Tensor::full(&[12, 8], 1.0);
        let s = simplicial_attention(&q, &ones, &k2, &ones, &v2, 1, 5, 0.3);
        let a = attention(&q, &k2, &v2, 5, 0.3);
        assert!(relative_error(&s.o, &a.o) < 1e-6);
        assert!(relative_error(&s.m, &a.m) < 1e-6);
    }

    #[test]
    fn relative_error_edges() {
        let a = Tensor::full(&[2], 2.0);
        assert_eq!(relative_error(&a, &a), 0.0);
        assert_eq!(relative_error(&Tensor::full(&[2], 2.5), &a), 0.25);
        assert!(relative_error(&Tensor::full(&[3], 2.0), &a).is_infinite());
    }
}
