//! Dense linear solves and the fast Walsh–Hadamard transform.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest pivot ratio accepted before a system is reported as ill-conditioned.
pub const MAX_CONDITION: f64 = 1e14;

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn lu_checked(a: &DMatrix<f64>) -> Result<faer::linalg::solvers::PartialPivLu<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let lu = to_faer(a).partial_piv_lu();
    let u = lu.U();
    let mut max_pivot = 0.0_f64;
    let mut min_pivot = f64::INFINITY;
    for i in 0..u.nrows() {
        let p = u[(i, i)].abs();
        max_pivot = max_pivot.max(p);
        min_pivot = min_pivot.min(p);
    }
    let estimate = if min_pivot > 0.0 {
        max_pivot / min_pivot
    } else {
        f64::INFINITY
    };
    if !estimate.is_finite() || estimate > MAX_CONDITION {
        return Err(Error::IllConditioned { estimate });
    }
    Ok(lu)
}

/// Solves `a x = b` by LU factorisation with partial pivoting.
///
/// Fails with [`Error::IllConditioned`] when the pivot ratio exceeds
/// [`MAX_CONDITION`] or the solution is not finite.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows but right-hand side has length {}",
            a.nrows(),
            b.len()
        )));
    }
    if b.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let lu = lu_checked(a)?;
    let rhs = faer::Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out = DVector::from_fn(b.len(), |i, _| x[(i, 0)]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned {
            estimate: f64::INFINITY,
        });
    }
    Ok(out)
}

/// Inverts a square matrix by LU factorisation with partial pivoting.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = lu_checked(a)?;
    let inv = lu.inverse();
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| inv[(i, j)]))
}

/// In-place unnormalised Walsh–Hadamard transform in natural (Sylvester) order.
///
/// After the call `v[k] = Σ_i (-1)^{popcount(i & k)} v_old[i]`. The length
/// must be a power of two.
pub fn fwht(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two() || n == 0);
    let mut h = 1;
    while h < n {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Reverses the lowest `bits` bits of `c`.
pub fn bit_reverse(c: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        c.reverse_bits() >> (usize::BITS - bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_matches_known_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let x = solve(&a, &b).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve(&a, &b), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn fwht_matches_direct_sum() {
        let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut t = v.clone();
        fwht(&mut t);
        for (k, tk) in t.iter().enumerate() {
            let direct: f64 = v
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    if (i & k).count_ones() % 2 == 0 {
                        *x
                    } else {
                        -*x
                    }
                })
                .sum();
            assert!((tk - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn bit_reverse_small_cases() {
        assert_eq!(bit_reverse(0b001, 3), 0b100);
        assert_eq!(bit_reverse(0b110, 3), 0b011);
        assert_eq!(bit_reverse(5, 0), 0);
    }
}
