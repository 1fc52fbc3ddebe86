//! Maximum-likelihood detection of the tag state with perfect CSI.
//!
//! Under state `e` every received vector is CN(0, R_e) with
//! `R_0 = k1 k1^H + I` and `R_1 = (k1 + k2)(k1 + k2)^H + I`. All likelihood
//! work stays in the log domain.

use std::f64::consts::PI;

use crate::channel::{ChannelParams, ChannelRealization, ReceivedBlock};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Cplx};

#[derive(Clone, Debug, PartialEq)]
pub struct PerfectCsi {
    /// `f_d √α_dt`
    pub k1: CVector,
    /// `g_r f_b √α_bt`
    pub k2: CVector,
}

impl PerfectCsi {
    pub fn new(k1: CVector, k2: CVector) -> Result<Self> {
        if k1.len() != k2.len() {
            return Err(Error::invalid("k1 and k2 must have the same length"));
        }
        Ok(Self { k1, k2 })
    }

    pub fn from_channel(chan: &ChannelRealization, params: &ChannelParams) -> Self {
        let k1 = chan.f_d.scaled(Cplx::new(params.alpha_dt.sqrt(), 0.0));
        let k2 = chan.f_b.scaled(chan.g_r * params.alpha_bt.sqrt());
        Self { k1, k2 }
    }

    pub fn antennas(&self) -> usize {
        self.k1.len()
    }
}

/// A Hermitian positive-definite covariance with its inverse and
/// log-determinant precomputed.
#[derive(Clone, Debug)]
pub struct Covariance {
    matrix: CMatrix,
    inverse: CMatrix,
    log_det: f64,
}

impl Covariance {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let chol = matrix.cholesky()?;
        Ok(Self {
            inverse: chol.inverse(),
            log_det: chol.log_determinant(),
            matrix,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &CMatrix {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

#[derive(Clone, Debug)]
pub struct CovPair {
    r0: Covariance,
    r1: Covariance,
    /// `R_0⁻¹ − R_1⁻¹`
    discriminant: CMatrix,
}

impl CovPair {
    pub fn from_matrices(r0: CMatrix, r1: CMatrix) -> Result<Self> {
        if r0.rows() != r1.rows() {
            return Err(Error::invalid("covariances must have the same dimension"));
        }
        let r0 = Covariance::new(r0)?;
        let r1 = Covariance::new(r1)?;
        let discriminant = r0.inverse() - r1.inverse();
        Ok(Self { r0, r1, discriminant })
    }

    pub fn r0(&self) -> &Covariance {
        &self.r0
    }

    pub fn r1(&self) -> &Covariance {
        &self.r1
    }

    pub fn get(&self, e: u8) -> &Covariance {
        if e == 0 {
            &self.r0
        } else {
            &self.r1
        }
    }

    pub fn discriminant(&self) -> &CMatrix {
        &self.discriminant
    }

    pub fn dim(&self) -> usize {
        self.r0.dim()
    }

    /// `N · ln(|R_1| / |R_0|)`.
    pub fn threshold(&self, spreading: usize) -> f64 {
        spreading as f64 * (self.r1.log_det - self.r0.log_det)
    }

    /// Swap the roles of the two hypotheses.
    pub fn swapped(&self) -> CovPair {
        CovPair {
            r0: self.r1.clone(),
            r1: self.r0.clone(),
            discriminant: self.discriminant.scaled(Cplx::new(-1.0, 0.0)),
        }
    }
}

pub fn build_covariances(csi: &PerfectCsi) -> CovPair {
    let m = csi.antennas();
    let k1 = csi.k1.as_slice();
    let u = &csi.k1 + &csi.k2;
    let r0 = &CMatrix::outer(k1, k1) + &CMatrix::identity(m);
    let r1 = &CMatrix::outer(u.as_slice(), u.as_slice()) + &CMatrix::identity(m);
    CovPair::from_matrices(r0, r1).expect("identity plus a rank-one PSD term is positive definite")
}

/// `ln p(y | R) = −M ln π − ln|R| − y^H R⁻¹ y`.
pub fn log_conditional_pdf(y: &[Cplx], cov: &Covariance) -> f64 {
    assert_eq!(y.len(), cov.dim(), "vector length must match covariance");
    -(cov.dim() as f64) * PI.ln() - cov.log_det - cov.inverse.quad_form(y).re
}

fn columns(block: &ReceivedBlock) -> impl Iterator<Item = Vec<Cplx>> + '_ {
    let s = block.samples();
    (0..s.cols()).map(move |n| (0..s.rows()).map(|m| s[(m, n)]).collect())
}

/// Sum of per-column log densities under one hypothesis.
pub fn log_likelihood(block: &ReceivedBlock, cov: &Covariance) -> f64 {
    columns(block).map(|y| log_conditional_pdf(&y, cov)).sum()
}

/// `T = Σ_n y_n^H (R_0⁻¹ − R_1⁻¹) y_n`.
pub fn mlk_statistic(block: &ReceivedBlock, cov: &CovPair) -> f64 {
    assert_eq!(block.antennas(), cov.dim(), "block and covariance dimensions differ");
    columns(block)
        .map(|y| cov.discriminant.quad_form(&y).re)
        .sum()
}

/// 1 when `T` exceeds `N ln(|R_1|/|R_0|)`, otherwise 0 (ties go to 0).
pub fn mlk_decide(block: &ReceivedBlock, cov: &CovPair) -> u8 {
    u8::from(mlk_statistic(block, cov) > cov.threshold(block.spreading()))
}

/// Energy baseline: compare `Σ‖y_n‖²` with the midpoint of its two
/// conditional means `N·tr(R_e)`.
pub fn energy_decide(block: &ReceivedBlock, cov: &CovPair) -> u8 {
    let n = block.spreading() as f64;
    let energy: f64 = block.samples().as_slice().iter().map(|z| z.norm_sqr()).sum();
    let mean0 = n * cov.r0.matrix.trace().re;
    let mean1 = n * cov.r1.matrix.trace().re;
    let mid = 0.5 * (mean0 + mean1);
    let above = energy > mid;
    u8::from(if mean1 >= mean0 { above } else { !above })
}
