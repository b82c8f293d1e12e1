//! Dense matrix kernels backing the tape operations.
//!
//! Every kernel has a sequential implementation; with the `parallel` feature
//! large products are split across rayon over rows of the output. Both paths
//! perform the per-element arithmetic in the same order, so results are
//! bit-identical regardless of the feature flag or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
#[cfg(feature = "parallel")]
const PAR_FLOP_THRESHOLD: usize = 32_768;

fn nn_row(c_row: &mut [f64], i: usize, a: &[f64], b: &[f64], k: usize, n: usize) {
    for p in 0..k {
        let av = a[i * k + p];
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (cv, bv) in c_row.iter_mut().zip(b_row) {
            *cv += av * bv;
        }
    }
}

fn nt_row(c_row: &mut [f64], i: usize, a: &[f64], b: &[f64], k: usize) {
    let a_row = &a[i * k..(i + 1) * k];
    for (j, cv) in c_row.iter_mut().enumerate() {
        let b_row = &b[j * k..(j + 1) * k];
        let mut acc = 0.0;
        for (av, bv) in a_row.iter().zip(b_row) {
            acc += av * bv;
        }
        *cv = acc;
    }
}

fn tn_row(c_row: &mut [f64], i: usize, a: &[f64], b: &[f64], p_rows: usize, m: usize, n: usize) {
    for p in 0..p_rows {
        let av = a[p * m + i];
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (cv, bv) in c_row.iter_mut().zip(b_row) {
            *cv += av * bv;
        }
    }
}

/// `a [m×k] · b [k×n] -> [m×n]`, sequential.
pub fn gemm_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        nn_row(c_row, i, a, b, k, n);
    }
    c
}

/// `a [m×k] · b [k×n] -> [m×n]`, rayon over output rows.
#[cfg(feature = "parallel")]
pub fn gemm_nn_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, c_row)| nn_row(c_row, i, a, b, k, n));
    c
}

/// `a [m×k] · b [n×k]ᵀ -> [m×n]`, sequential.
pub fn gemm_nt_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        nt_row(c_row, i, a, b, k);
    }
    c
}

/// `a [m×k] · b [n×k]ᵀ -> [m×n]`, rayon over output rows.
#[cfg(feature = "parallel")]
pub fn gemm_nt_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, c_row)| nt_row(c_row, i, a, b, k));
    c
}

/// `a [p×m]ᵀ · b [p×n] -> [m×n]`, sequential.
pub fn gemm_tn_seq(a: &[f64], b: &[f64], p: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        tn_row(c_row, i, a, b, p, m, n);
    }
    c
}

/// `a [p×m]ᵀ · b [p×n] -> [m×n]`, rayon over output rows.
#[cfg(feature = "parallel")]
pub fn gemm_tn_par(a: &[f64], b: &[f64], p: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, c_row)| tn_row(c_row, i, a, b, p, m, n));
    c
}

pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOP_THRESHOLD {
        return gemm_nn_par(a, b, m, k, n);
    }
    gemm_nn_seq(a, b, m, k, n)
}

pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOP_THRESHOLD {
        return gemm_nt_par(a, b, m, k, n);
    }
    gemm_nt_seq(a, b, m, k, n)
}

pub fn gemm_tn(a: &[f64], b: &[f64], p: usize, m: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if p * m * n >= PAR_FLOP_THRESHOLD {
        return gemm_tn_par(a, b, p, m, n);
    }
    gemm_tn_seq(a, b, p, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Element-wise triple-loop oracle, independent of the blocked kernels.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn nn_matches_triple_loop_oracle() {
        let (m, k, n) = (4, 3, 5);
        let a = pseudo_random(m * k, 1);
        let b = pseudo_random(k * n, 2);
        let c = gemm_nn_seq(&a, &b, m, k, n);
        let expect = matmul_oracle(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn nt_matches_explicit_transpose() {
        let (m, k, n) = (3, 4, 2);
        let a = pseudo_random(m * k, 3);
        let b = pseudo_random(n * k, 4);
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        let c = gemm_nt_seq(&a, &b, m, k, n);
        let expect = matmul_oracle(&a, &bt, m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tn_matches_explicit_transpose() {
        let (p, m, n) = (5, 3, 4);
        let a = pseudo_random(p * m, 5);
        let b = pseudo_random(p * n, 6);
        let mut at = vec![0.0; m * p];
        for i in 0..m {
            for q in 0..p {
                at[i * p + q] = a[q * m + i];
            }
        }
        let c = gemm_tn_seq(&a, &b, p, m, n);
        let expect = matmul_oracle(&at, &b, m, p, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_kernels_bit_identical_to_sequential() {
        let (m, k, n) = (37, 41, 29);
        let a = pseudo_random(m * k, 7);
        let b = pseudo_random(k * n, 8);
        assert_eq!(gemm_nn_seq(&a, &b, m, k, n), gemm_nn_par(&a, &b, m, k, n));
        let bt = pseudo_random(n * k, 9);
        assert_eq!(gemm_nt_seq(&a, &bt, m, k, n), gemm_nt_par(&a, &bt, m, k, n));
        let ap = pseudo_random(k * m, 10);
        assert_eq!(gemm_tn_seq(&ap, &b, k, m, n), gemm_tn_par(&ap, &b, k, m, n));
    }
}
