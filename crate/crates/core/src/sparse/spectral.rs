use crate::rng::XorShift64;
use crate::scalar::{norm_sq, Scalar};

use super::SparseColumnMatrix;

const MAX_POWER_ITERS: usize = 2000;

/// Upper bound on `‖A‖₂²`.
///
/// Power iteration on `AᵀA` gives a Rayleigh-quotient estimate (a lower
/// bound). Once the eigen-residual drops below `tolerance · estimate` the
/// estimate is inflated by `1 + tolerance`. The result is capped by two
/// certified ceilings, `‖A‖_F²` and `‖A‖₁·‖A‖_∞`, and never falls below the
/// estimate.
pub fn spectral_bound<T: Scalar>(a: &SparseColumnMatrix<T>, tolerance: T) -> T {
    let fro = a.frobenius_sq();
    if fro == T::zero() {
        return T::zero();
    }
    let max_col = (0..a.n_cols())
        .map(|j| a.column(j).1.iter().fold(T::zero(), |s, v| s + v.abs()))
        .fold(T::zero(), T::max);
    let mut row_sums = vec![T::zero(); a.n_rows()];
    for (&r, &v) in a.row_indices().iter().zip(a.values()) {
        row_sums[r as usize] += v.abs();
    }
    let max_row = row_sums.into_iter().fold(T::zero(), T::max);
    let ceiling = fro.min(max_col * max_row);

    let mut gen = XorShift64::new(0x5EED_5EED);
    let mut x: Vec<T> = (0..a.n_cols())
        .map(|_| T::lit(gen.next_key() as f64 / u32::MAX as f64 + 0.5))
        .collect();
    let mut estimate = T::zero();
    let mut converged = false;
    for _ in 0..MAX_POWER_ITERS {
        let xn = norm_sq(&x).sqrt();
        if xn == T::zero() {
            break;
        }
        x.iter_mut().for_each(|v| *v /= xn);
        let y = a.matvec(&x).expect("dimensions match");
        let z = a.tmatvec(&y).expect("dimensions match");
        estimate = estimate.max(norm_sq(&y));
        let rq = norm_sq(&y);
        let residual = z
            .iter()
            .zip(&x)
            .fold(T::zero(), |s, (&zi, &xi)| s + (zi - rq * xi) * (zi - rq * xi))
            .sqrt();
        x = z;
        if residual <= tolerance * rq {
            converged = true;
            break;
        }
    }
    if converged {
        (estimate * (T::one() + tolerance)).min(ceiling).max(estimate)
    } else {
        ceiling.max(estimate)
    }
}
