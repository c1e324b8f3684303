use super::{CMatrix, KernelError, Result, MAX_KRON_DIM};
use num_complex::Complex64;

/// Which factor survives a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    First,
    Second,
}

/// Kronecker product with row index `i1 * dim_b + i2`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    kron_with_limit(a, b, MAX_KRON_DIM)
}

pub fn kron_with_limit(a: &CMatrix, b: &CMatrix, limit: usize) -> Result<CMatrix> {
    super::validate(a)?;
    super::validate(b)?;
    let (da, db) = (a.nrows(), b.nrows());
    let dim = da
        .checked_mul(db)
        .ok_or(KernelError::DimensionOverflow { dim: usize::MAX, limit })?;
    if dim > limit {
        return Err(KernelError::DimensionOverflow { dim, limit });
    }
    let mut out = CMatrix::zeros(dim, dim);
    for i1 in 0..da {
        for j1 in 0..da {
            let aij = a[(i1, j1)];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for i2 in 0..db {
                for j2 in 0..db {
                    out[(i1 * db + i2, j1 * db + j2)] = aij * b[(i2, j2)];
                }
            }
        }
    }
    Ok(out)
}

/// Partial trace of an operator on a `d1 * d2` product space.
pub fn partial_trace(m: &CMatrix, dims: (usize, usize), keep: Keep) -> Result<CMatrix> {
    super::validate(m)?;
    let (d1, d2) = dims;
    if m.nrows() != d1 * d2 {
        return Err(KernelError::DimensionMismatch(format!(
            "operator of dim {} cannot be split as {d1} x {d2}",
            m.nrows()
        )));
    }
    Ok(match keep {
        Keep::First => CMatrix::from_fn(d1, d1, |i, j| (0..d2).map(|k| m[(i * d2 + k, j * d2 + k)]).sum()),
        Keep::Second => CMatrix::from_fn(d2, d2, |i, j| (0..d1).map(|k| m[(k * d2 + i, k * d2 + j)]).sum()),
    })
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::kernel::{c, max_abs, trace};
    use crate::random::{random_complex, rng};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn partial_trace_linear_and_trace_preserving(seed in 0u64..10_000, alpha in -2.0f64..2.0) {
            let mut r = rng(seed);
            let x = random_complex(&mut r, 6);
            let y = random_complex(&mut r, 6);
            for keep in [Keep::First, Keep::Second] {
                let px = partial_trace(&x, (2, 3), keep).unwrap();
                let py = partial_trace(&y, (2, 3), keep).unwrap();
                let pxy = partial_trace(&(&x + &y * c(alpha)), (2, 3), keep).unwrap();
                prop_assert!(max_abs(&(pxy - (px.clone() + py * c(alpha)))) < 1e-12);
                prop_assert!((trace(&px) - trace(&x)).norm() < 1e-12);
            }
        }
    }
}
