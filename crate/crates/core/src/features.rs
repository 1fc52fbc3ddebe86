//! Input features for the neural detector.
//!
//! A block's sample covariance `S` is multiplied by the inverses of two
//! reference covariances (pilot averages or the true `R_0`, `R_1`), giving
//! `D_0 = S R̄_0⁻¹` and `D_1 = S R̄_1⁻¹`. Both are flattened row-major,
//! concatenated as `d = d_0 ∥ d_1`, and emitted as `Re(d) ∥ Im(d) ∥ |d|`,
//! so the vector has `6M²` entries.

use std::io::{Read, Write};

use crate::channel::ReceivedBlock;
use crate::error::{Error, Result};
use crate::mlk::{build_covariances, PerfectCsi};
use crate::nn::Dataset;
use crate::numerics::{CMatrix, Cplx};

/// Diagonal loading applied when a reference covariance fails Cholesky.
pub const TIKHONOV_DELTA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Rebuild `(D_0, D_1)` from the real and imaginary slices.
    pub fn to_matrices(&self, antennas: usize) -> Result<(CMatrix, CMatrix)> {
        let m2 = antennas * antennas;
        if self.0.len() != 6 * m2 {
            return Err(Error::invalid("feature length does not match antenna count"));
        }
        let d: Vec<Cplx> = (0..2 * m2)
            .map(|i| Cplx::new(self.0[i], self.0[2 * m2 + i]))
            .collect();
        Ok((
            CMatrix::new(antennas, antennas, d[..m2].to_vec())?,
            CMatrix::new(antennas, antennas, d[m2..].to_vec())?,
        ))
    }
}

pub fn feature_len(antennas: usize) -> usize {
    6 * antennas * antennas
}

/// `S = (1/N) Σ_n y_n y_n^H`.
pub fn sample_covariance(block: &ReceivedBlock) -> CMatrix {
    let y = block.samples();
    let (m, n) = (y.rows(), y.cols());
    let mut s = CMatrix::zeros(m, m);
    for i in 0..m {
        let ri = y.row(i);
        for j in i..m {
            let rj = y.row(j);
            let acc: Cplx = ri.iter().zip(rj).map(|(a, b)| a * b.conj()).sum::<Cplx>() / n as f64;
            s[(i, j)] = acc;
            s[(j, i)] = acc.conj();
        }
        s[(i, i)] = Cplx::new(s[(i, i)].re, 0.0);
    }
    s
}

/// Reference covariances averaged over a frame's pilot blocks.
#[derive(Clone, Debug)]
pub struct PilotEstimates {
    pub rbar0: CMatrix,
    pub rbar1: CMatrix,
    pub pilots: usize,
    pub spreading: usize,
}

/// Averages `S` over the first `pilots/2` blocks (tag absorbing) and the
/// next `pilots/2` blocks (tag reflecting).
pub fn estimate_pilot_covariances(blocks: &[ReceivedBlock], pilots: usize) -> Result<PilotEstimates> {
    if pilots < 2 || !pilots.is_multiple_of(2) {
        return Err(Error::invalid(format!("pilot count must be even and ≥ 2, got {pilots}")));
    }
    if blocks.len() < pilots {
        return Err(Error::invalid(format!(
            "frame has {} blocks but {pilots} pilots were requested",
            blocks.len()
        )));
    }
    let half = pilots / 2;
    let average = |range: &[ReceivedBlock]| {
        let m = range[0].antennas();
        let mut acc = CMatrix::zeros(m, m);
        for b in range {
            acc = &acc + &sample_covariance(b);
        }
        acc.scaled(Cplx::new(1.0 / range.len() as f64, 0.0))
    };
    Ok(PilotEstimates {
        rbar0: average(&blocks[..half]),
        rbar1: average(&blocks[half..pilots]),
        pilots,
        spreading: blocks[0].spreading(),
    })
}

fn regularized_inverse(r: &CMatrix) -> Result<CMatrix> {
    if let Ok(chol) = r.cholesky() {
        return Ok(chol.inverse());
    }
    let loaded = r + &CMatrix::identity(r.rows()).scaled(Cplx::new(TIKHONOV_DELTA, 0.0));
    loaded.cholesky().map(|c| c.inverse())
}

/// Inverted reference covariances, shared by every block in a frame.
#[derive(Clone, Debug)]
pub struct FeatureReference {
    r0_inv: CMatrix,
    r1_inv: CMatrix,
}

impl FeatureReference {
    pub fn new(r0: &CMatrix, r1: &CMatrix) -> Result<Self> {
        if r0.rows() != r1.rows() || !r0.is_square() || !r1.is_square() {
            return Err(Error::invalid("reference covariances must be square and equal-sized"));
        }
        Ok(Self {
            r0_inv: regularized_inverse(r0)?,
            r1_inv: regularized_inverse(r1)?,
        })
    }

    pub fn from_pilots(est: &PilotEstimates) -> Result<Self> {
        Self::new(&est.rbar0, &est.rbar1)
    }

    pub fn from_csi(csi: &PerfectCsi) -> Self {
        let cov = build_covariances(csi);
        Self {
            r0_inv: cov.r0().inverse().clone(),
            r1_inv: cov.r1().inverse().clone(),
        }
    }

    pub fn antennas(&self) -> usize {
        self.r0_inv.rows()
    }

    pub fn features(&self, s: &CMatrix) -> FeatureVector {
        assert_eq!(s.rows(), self.antennas(), "sample covariance size mismatch");
        let d0 = s.matmul(&self.r0_inv);
        let d1 = s.matmul(&self.r1_inv);
        let d: Vec<Cplx> = d0.as_slice().iter().chain(d1.as_slice()).copied().collect();
        let mut out = Vec::with_capacity(3 * d.len());
        out.extend(d.iter().map(|z| z.re));
        out.extend(d.iter().map(|z| z.im));
        out.extend(d.iter().map(|z| z.norm()));
        FeatureVector(out)
    }
}

pub fn features_from_block(s: &CMatrix, r0_ref: &CMatrix, r1_ref: &CMatrix) -> Result<FeatureVector> {
    Ok(FeatureReference::new(r0_ref, r1_ref)?.features(s))
}

/// Where the reference covariances come from.
#[derive(Clone, Copy, Debug)]
pub enum CsiSource<'a> {
    /// Pilot averages from the frame itself.
    Estimated,
    /// True covariances from the channel realization.
    Perfect(&'a PerfectCsi),
}

/// Features for the payload blocks of one frame; the first `pilots` blocks
/// are consumed as pilots and never featurized.
pub fn featurize_frame(
    blocks: &[ReceivedBlock],
    pilots: usize,
    source: CsiSource<'_>,
) -> Result<Vec<FeatureVector>> {
    if blocks.len() < pilots {
        return Err(Error::invalid("frame shorter than its pilot block"));
    }
    let reference = match source {
        CsiSource::Estimated => FeatureReference::from_pilots(&estimate_pilot_covariances(blocks, pilots)?)?,
        CsiSource::Perfect(csi) => FeatureReference::from_csi(csi),
    };
    Ok(blocks[pilots..]
        .iter()
        .map(|b| reference.features(&sample_covariance(b)))
        .collect())
}

/// Writes one binary record per example: `u32` byte count of the rest of
/// the record, `u8` label, `u16` antenna count, then `6M²` `f64` features,
/// all little-endian.
pub fn write_dataset<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    let antennas = antennas_for_dim(data.dim())?;
    let m = u16::try_from(antennas).map_err(|_| Error::invalid("antenna count exceeds u16"))?;
    let body_len = (3 + 8 * data.dim()) as u32;
    for i in 0..data.len() {
        let (x, label) = data.get(i);
        w.write_all(&body_len.to_le_bytes())?;
        w.write_all(&[label])?;
        w.write_all(&m.to_le_bytes())?;
        for v in x {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut data: Option<Dataset> = None;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::Format(format!("dataset truncated at byte {}", *pos)))?;
        *pos += n;
        Ok(s)
    };
    while pos < bytes.len() {
        let body_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let label = take(&mut pos, 1)?[0];
        let m = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let dim = feature_len(m);
        if body_len != 3 + 8 * dim {
            return Err(Error::Format(format!(
                "record length {body_len} inconsistent with M={m}"
            )));
        }
        let features: Vec<f64> = take(&mut pos, 8 * dim)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ds = data.get_or_insert_with(|| Dataset::new(dim));
        if ds.dim() != dim {
            return Err(Error::Format("records with mixed antenna counts".into()));
        }
        ds.push(&features, label)?;
    }
    data.ok_or_else(|| Error::Format("dataset file holds no records".into()))
}

/// Antenna count `M` with `6M² = dim`.
pub fn antennas_for_dim(dim: usize) -> Result<usize> {
    let m = ((dim / 6) as f64).sqrt().round() as usize;
    if m == 0 || feature_len(m) != dim {
        return Err(Error::invalid(format!("{dim} is not a valid feature length")));
    }
    Ok(m)
}
