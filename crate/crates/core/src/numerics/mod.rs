//! Complex linear algebra, seeded sampling and scalar information helpers.

mod matrix;
mod rng;

pub use matrix::{CMatrix, CVector, Cholesky, Cplx, Lu, DEFAULT_MAX_CONDITION};
pub use rng::{sample_cscg, Prng};

use crate::error::{Error, Result};

/// Binary entropy in bits, with `0·log 0 = 0`.
pub fn binary_entropy(theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("probability {theta} outside [0, 1]")));
    }
    Ok(binary_entropy_unchecked(theta))
}

pub(crate) fn binary_entropy_unchecked(theta: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    term(theta) + term(1.0 - theta)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
