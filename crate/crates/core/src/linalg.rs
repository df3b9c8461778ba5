//! Dense linear algebra helpers on top of `faer`.
//!
//! Products are split into fixed-width column blocks, each computed
//! sequentially, so the bits of the result do not depend on how many threads
//! run the blocks. Eigensolvers are pinned to sequential execution for the
//! same reason.

use std::sync::Once;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};

const BLOCK: usize = 128;

fn pin_sequential() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// `alpha * op(a) * b` with `op(a) = a` or `a^T`.
fn blocked_product(a: MatRef<'_, f64>, transpose_a: bool, b: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    let lhs = if transpose_a { a.transpose() } else { a };
    let (rows, cols) = (lhs.nrows(), b.ncols());
    assert_eq!(lhs.ncols(), b.nrows(), "inner dimensions differ");
    let starts: Vec<usize> = (0..cols).step_by(BLOCK).collect();
    let blocks: Vec<Mat<f64>> = starts
        .par_iter()
        .map(|&c0| {
            let w = BLOCK.min(cols - c0);
            let mut out = Mat::<f64>::zeros(rows, w);
            matmul(out.as_mut(), Accum::Replace, lhs, b.subcols(c0, w), alpha, Par::Seq);
            out
        })
        .collect();
    let mut out = Mat::<f64>::zeros(rows, cols);
    for (&c0, blk) in starts.iter().zip(&blocks) {
        out.as_mut().subcols_mut(c0, blk.ncols()).copy_from(blk);
    }
    out
}

/// `alpha * a * b`.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    blocked_product(a, false, b, alpha)
}

/// `alpha * a^T * b`.
pub fn mul_tn(a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    blocked_product(a, true, b, alpha)
}

/// Eigenvalues of a symmetric matrix (lower triangle used), ascending.
pub fn sym_eigenvalues(k: MatRef<'_, f64>) -> Result<Vec<f64>> {
    pin_sequential();
    k.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
pub fn sym_eigen(k: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    pin_sequential();
    let evd = k.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// All `x.ncols()` eigenvalues of `scale * x^T x`, ascending, computed from
/// the smaller of the two Gram matrices and padded with zeros. Round-off
/// negatives are clipped to zero.
pub fn gram_eigenvalues(x: MatRef<'_, f64>, scale: f64) -> Result<Vec<f64>> {
    let (r, c) = (x.nrows(), x.ncols());
    let mut vals = if r >= c {
        sym_eigenvalues(mul_tn(x, x, scale).as_ref())?
    } else {
        let xt = x.transpose().to_owned();
        let mut v = sym_eigenvalues(mul_tn(xt.as_ref(), xt.as_ref(), scale).as_ref())?;
        v.extend(std::iter::repeat_n(0.0, c - r));
        v
    };
    for v in &mut vals {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_product_matches_naive() {
        let a = Mat::<f64>::from_fn(7, 300, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let b = Mat::<f64>::from_fn(300, 260, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let p = mul(a.as_ref(), b.as_ref(), 0.5);
        for i in 0..7 {
            for j in [0, 127, 128, 259] {
                let want: f64 = (0..300).map(|k| a[(i, k)] * b[(k, j)]).sum::<f64>() * 0.5;
                assert!((p[(i, j)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gram_eigenvalues_pad_with_zeros() {
        let x = Mat::<f64>::from_fn(2, 5, |i, j| if i == j { 2.0 } else { 0.0 });
        let v = gram_eigenvalues(x.as_ref(), 0.5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(&v[..3], &[0.0, 0.0, 0.0]);
        assert!((v[3] - 2.0).abs() < 1e-14 && (v[4] - 2.0).abs() < 1e-14);
    }
}
