//! Row-parallel dense kernels.
//!
//! Every kernel computes each output row with the same sequential inner loop,
//! so the parallel and sequential paths produce bit-identical results. The
//! `parallel` feature switches the row loop onto rayon; without it everything
//! runs on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work (multiply-adds) below which the row loop stays sequential even when
/// the `parallel` feature is enabled.
pub const PAR_THRESHOLD: usize = 1 << 15;

fn matmul_row(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (kk, &aik) in a_row.iter().enumerate() {
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += aik * bv;
        }
    }
}

fn a_bt_row(g_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    for (kk, o) in out_row.iter_mut().enumerate() {
        let b_row = &b[kk * n..(kk + 1) * n];
        let mut acc = 0.0;
        for (&gv, &bv) in g_row.iter().zip(b_row) {
            acc += gv * bv;
        }
        *o = acc;
    }
}

fn at_b_row(kk: usize, a: &[f64], k: usize, g: &[f64], n: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (i, g_row) in g.chunks_exact(n).enumerate() {
        let aik = a[i * k + kk];
        for (o, &gv) in out_row.iter_mut().zip(g_row) {
            *o += aik * gv;
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, single-threaded.
pub fn matmul_seq(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        matmul_row(a_row, b, n, out_row);
    }
}

/// `out[m×n] = a[m×k] · b[k×n]` with rows distributed over the rayon pool.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    out.par_chunks_exact_mut(n)
        .zip(a.par_chunks_exact(k))
        .for_each(|(out_row, a_row)| matmul_row(a_row, b, n, out_row));
}

pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if out.len() * k >= PAR_THRESHOLD {
        return matmul_par(a, b, out, k, n);
    }
    matmul_seq(a, b, out, k, n)
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ`.
pub fn matmul_a_bt(g: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if out.len() * n >= PAR_THRESHOLD {
        out.par_chunks_exact_mut(k)
            .zip(g.par_chunks_exact(n))
            .for_each(|(out_row, g_row)| a_bt_row(g_row, b, n, out_row));
        return;
    }
    for (out_row, g_row) in out.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
        a_bt_row(g_row, b, n, out_row);
    }
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]`.
pub fn matmul_at_b(a: &[f64], g: &[f64], out: &mut [f64], k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if out.len() * (a.len() / k.max(1)) >= PAR_THRESHOLD {
        out.par_chunks_exact_mut(n).enumerate().for_each(|(kk, out_row)| at_b_row(kk, a, k, g, n, out_row));
        return;
    }
    for (kk, out_row) in out.chunks_exact_mut(n).enumerate() {
        at_b_row(kk, a, k, g, n, out_row);
    }
}

/// Maps `f` over `items`, in parallel when the feature is enabled. Output
/// order always matches input order.
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
