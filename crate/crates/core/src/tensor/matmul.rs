//! Row-major matrix kernels behind conv/linear and their backward passes.
//!
//! Parallelism is only ever over independent output rows, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use super::Elem;

// Below this many output elements the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 14;

/// out = a (m×k) · b (k×n)
pub(crate) fn mm_nn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [E]| {
        out_row.fill(E::zero());
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == E::zero() {
                continue;
            }
            let brow = &b[kk * n..kk * n + n];
            for (o, bv) in out_row.iter_mut().zip(brow) {
                *o = *o + aik * *bv;
            }
        }
    };
    if m * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}

/// out = a (m×k) · bᵀ where b is (n×k): out[i,j] = dot(a[i,:], b[j,:])
pub(crate) fn mm_nt<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [E]| {
        let arow = &a[i * k..i * k + k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let brow = &b[j * k..j * k + k];
            let mut acc = E::zero();
            for (av, bv) in arow.iter().zip(brow) {
                acc = acc + *av * *bv;
            }
            *o = acc;
        }
    };
    if m * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}

/// out = aᵀ (m×k from a stored k×m) · b (k×n)
pub(crate) fn mm_tn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [E]| {
        out_row.fill(E::zero());
        for kk in 0..k {
            let aik = a[kk * m + i];
            if aik == E::zero() {
                continue;
            }
            let brow = &b[kk * n..kk * n + n];
            for (o, bv) in out_row.iter_mut().zip(brow) {
                *o = *o + aik * *bv;
            }
        }
    };
    if m * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}
