//! Dense products with a real-arithmetic fast path.
//!
//! Most models in this crate (Ising chains, real GOE) have purely real matrix
//! elements. Products of two real operands are dispatched to `f64` kernels,
//! which are roughly four times cheaper than the complex ones.

use faer::linalg::matmul::matmul as faer_matmul;
use faer::{Accum, Mat, MatRef, Par};
use num_complex::Complex64 as C64;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub(crate) fn is_real(m: MatRef<'_, C64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].im == 0.0))
}

pub(crate) fn real_part(m: MatRef<'_, C64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

pub(crate) fn complexify(m: MatRef<'_, f64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| C64::new(m[(i, j)], 0.0))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Plain,
    Adjoint,
}

fn product(a: MatRef<'_, C64>, op_a: Op, b: MatRef<'_, C64>, op_b: Op) -> Mat<C64> {
    let rows = if op_a == Op::Plain { a.nrows() } else { a.ncols() };
    let cols = if op_b == Op::Plain { b.ncols() } else { b.nrows() };
    if is_real(a) && is_real(b) {
        let (ra, rb) = (real_part(a), real_part(b));
        let mut out = Mat::<f64>::zeros(rows, cols);
        match (op_a, op_b) {
            (Op::Plain, Op::Plain) => faer_matmul(&mut out, Accum::Replace, &ra, &rb, 1.0, Par::Seq),
            (Op::Adjoint, Op::Plain) => {
                faer_matmul(&mut out, Accum::Replace, ra.transpose(), &rb, 1.0, Par::Seq)
            }
            (Op::Plain, Op::Adjoint) => {
                faer_matmul(&mut out, Accum::Replace, &ra, rb.transpose(), 1.0, Par::Seq)
            }
            (Op::Adjoint, Op::Adjoint) => faer_matmul(
                &mut out,
                Accum::Replace,
                ra.transpose(),
                rb.transpose(),
                1.0,
                Par::Seq,
            ),
        }
        return complexify(out.as_ref());
    }
    let mut out = Mat::<C64>::zeros(rows, cols);
    match (op_a, op_b) {
        (Op::Plain, Op::Plain) => faer_matmul(&mut out, Accum::Replace, a, b, ONE, Par::Seq),
        (Op::Adjoint, Op::Plain) => {
            faer_matmul(&mut out, Accum::Replace, a.adjoint(), b, ONE, Par::Seq)
        }
        (Op::Plain, Op::Adjoint) => {
            faer_matmul(&mut out, Accum::Replace, a, b.adjoint(), ONE, Par::Seq)
        }
        (Op::Adjoint, Op::Adjoint) => {
            faer_matmul(&mut out, Accum::Replace, a.adjoint(), b.adjoint(), ONE, Par::Seq)
        }
    }
    out
}

/// `w * u` (or `w^T * u` when `transpose`) for real `w` and complex `u`, as two
/// real products.
pub fn real_times_complex(w: MatRef<'_, f64>, transpose: bool, u: MatRef<'_, C64>) -> Mat<C64> {
    let re = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)].re);
    let im = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)].im);
    let rows = if transpose { w.ncols() } else { w.nrows() };
    let mut out_re = Mat::<f64>::zeros(rows, u.ncols());
    let mut out_im = Mat::<f64>::zeros(rows, u.ncols());
    if transpose {
        faer_matmul(&mut out_re, Accum::Replace, w.transpose(), &re, 1.0, Par::Seq);
        faer_matmul(&mut out_im, Accum::Replace, w.transpose(), &im, 1.0, Par::Seq);
    } else {
        faer_matmul(&mut out_re, Accum::Replace, w, &re, 1.0, Par::Seq);
        faer_matmul(&mut out_im, Accum::Replace, w, &im, 1.0, Par::Seq);
    }
    Mat::from_fn(rows, u.ncols(), |i, j| C64::new(out_re[(i, j)], out_im[(i, j)]))
}

/// `a * b`. A sparse left factor (Pauli-string operators) skips the dense kernel.
pub fn matmul(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    if let Some(cols) = sparse_columns(a) {
        let mut out = Mat::<C64>::zeros(a.nrows(), b.ncols());
        for j in 0..b.ncols() {
            for (k, col) in cols.iter().enumerate() {
                let bkj = b[(k, j)];
                if bkj == ZERO {
                    continue;
                }
                for &(i, aik) in col {
                    out[(i, j)] += aik * bkj;
                }
            }
        }
        return out;
    }
    product(a, Op::Plain, b, Op::Plain)
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

type SparseColumns = Vec<Vec<(usize, C64)>>;

/// Nonzeros per column, or `None` when more than 1/8 of the entries are nonzero.
pub(crate) fn sparse_columns(m: MatRef<'_, C64>) -> Option<SparseColumns> {
    let limit = m.nrows() * m.ncols() / 8;
    let mut nnz = 0usize;
    let mut cols = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut col = Vec::new();
        for i in 0..m.nrows() {
            if m[(i, j)] != ZERO {
                col.push((i, m[(i, j)]));
            }
        }
        nnz += col.len();
        if nnz > limit {
            return None;
        }
        cols.push(col);
    }
    Some(cols)
}

fn dense_columns(m: MatRef<'_, C64>) -> SparseColumns {
    (0..m.ncols()).map(|j| (0..m.nrows()).map(|i| (i, m[(i, j)])).collect()).collect()
}

/// `max |ab - ba|` computed one column at a time, so sparse operands cost
/// `O(D * nnz)` and no product matrix is ever stored.
pub(crate) fn commutator_max_abs(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    let n = a.nrows();
    let ac = sparse_columns(a).unwrap_or_else(|| dense_columns(a));
    let bc = sparse_columns(b).unwrap_or_else(|| dense_columns(b));
    let mut col = vec![ZERO; n];
    let mut worst = 0.0_f64;
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = ZERO);
        for &(k, bkj) in &bc[j] {
            for &(i, aik) in &ac[k] {
                col[i] += aik * bkj;
            }
        }
        for &(k, akj) in &ac[j] {
            for &(i, bik) in &bc[k] {
                col[i] -= bik * akj;
            }
        }
        worst = col.iter().fold(worst, |w, c| w.max(c.norm()));
    }
    worst
}

#[cfg(test)]
pub(crate) fn product_for_tests(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    product(a, Op::Plain, b, Op::Plain)
}

/// `a^H * b`
pub fn matmul_adj_lhs(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    assert_eq!(a.nrows(), b.nrows(), "matmul: inner dimensions differ");
    product(a, Op::Adjoint, b, Op::Plain)
}

/// `a * b^H`
pub fn matmul_adj_rhs(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    assert_eq!(a.ncols(), b.ncols(), "matmul: inner dimensions differ");
    product(a, Op::Plain, b, Op::Adjoint)
}

/// `v^H * m` for a column `v`, returned as a plain vector (a row of the product).
pub(crate) fn row_times(v: &[C64], m: MatRef<'_, C64>) -> Vec<C64> {
    debug_assert_eq!(v.len(), m.nrows());
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            let mut acc = C64::new(0.0, 0.0);
            for (i, vi) in v.iter().enumerate() {
                acc += vi.conj() * col[i];
            }
            acc
        })
        .collect()
}

/// `m * v`
pub(crate) fn mat_vec(m: MatRef<'_, C64>, v: &[C64]) -> Vec<C64> {
    debug_assert_eq!(v.len(), m.ncols());
    let mut out = vec![C64::new(0.0, 0.0); m.nrows()];
    for (j, vj) in v.iter().enumerate() {
        if *vj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = m.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * vj;
        }
    }
    out
}

/// `m^H * v`
pub(crate) fn adj_mat_vec(m: MatRef<'_, C64>, v: &[C64]) -> Vec<C64> {
    debug_assert_eq!(v.len(), m.nrows());
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            let mut acc = C64::new(0.0, 0.0);
            for (i, vi) in v.iter().enumerate() {
                acc += col[i].conj() * vi;
            }
            acc
        })
        .collect()
}

pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn max_abs(m: MatRef<'_, C64>) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

pub(crate) fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut best = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            best = best.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    best
}

/// Largest deviation of `m^H m` from the identity.
pub fn unitarity_defect(m: MatRef<'_, C64>) -> f64 {
    let g = matmul_adj_lhs(m, m);
    let id = Mat::<C64>::identity(m.ncols(), m.ncols());
    max_abs_diff(g.as_ref(), id.as_ref())
}
