//! Link budgets, fading draws and received-signal synthesis for the
//! direct (transmitter → receiver) and backscatter (transmitter → tag →
//! receiver) paths.
//!
//! Noise power is fixed at 1, so `alpha_dt` and `alpha_bt` are both average
//! received SNRs and average received powers. Within one block the same
//! transmitter symbol `s_n` reaches every antenna:
//!
//! ```text
//! y_n = f_d √α_dt s_n + e · f_b g_r √α_bt s_n + σ_n
//! ```

use std::f64::consts::PI;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Cplx, Prng};

/// Geometry and hardware parameters of both links.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Watts.
    pub transmit_power: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub tag_gain: f64,
    /// Metres.
    pub wavelength: f64,
    pub path_loss_exponent: f64,
    /// Transmitter → receiver distance, metres.
    pub dist_tx_rx: f64,
    /// Transmitter → tag distance, metres.
    pub dist_tx_tag: f64,
    /// Tag → receiver distance, metres.
    pub dist_tag_rx: f64,
    /// Tag reflection coefficient, `|γ| ≤ 1`.
    pub reflection: Cplx,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("transmit_power", self.transmit_power),
            ("tx_gain", self.tx_gain),
            ("rx_gain", self.rx_gain),
            ("tag_gain", self.tag_gain),
            ("wavelength", self.wavelength),
            ("dist_tx_rx", self.dist_tx_rx),
            ("dist_tx_tag", self.dist_tx_tag),
            ("dist_tag_rx", self.dist_tag_rx),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.path_loss_exponent >= 1.0) {
            return Err(Error::invalid("path-loss exponent must be at least 1"));
        }
        if self.reflection.norm() > 1.0 {
            return Err(Error::invalid("|reflection coefficient| must not exceed 1"));
        }
        Ok(())
    }

    /// `(λ / 4π)²`.
    pub fn kappa(&self) -> f64 {
        (self.wavelength / (4.0 * PI)).powi(2)
    }

    /// Average direct-link received power over unit noise.
    pub fn direct_snr(&self) -> f64 {
        self.kappa() * self.transmit_power * self.tx_gain * self.rx_gain
            / self.dist_tx_rx.powf(self.path_loss_exponent)
    }

    /// Backscatter-to-direct power ratio `κ|γ|²G_b² L_r^υ / (L_b^υ L_e^υ)`.
    pub fn reflection_gain(&self) -> f64 {
        let u = self.path_loss_exponent;
        self.kappa() * self.reflection.norm_sqr() * self.tag_gain.powi(2) * self.dist_tx_rx.powf(u)
            / (self.dist_tx_tag.powf(u) * self.dist_tag_rx.powf(u))
    }

    pub fn backscatter_snr(&self) -> f64 {
        self.reflection_gain() * self.direct_snr()
    }
}

/// Small-scale fading law, normalized to `E[|f|²] = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FadingModel {
    Rayleigh,
    Rician { k_factor: f64 },
    Nakagami { m_shape: f64 },
}

impl FadingModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FadingModel::Rayleigh => Ok(()),
            FadingModel::Rician { k_factor } if k_factor >= 0.0 && k_factor.is_finite() => Ok(()),
            FadingModel::Rician { k_factor } => {
                Err(Error::invalid(format!("Rician K-factor must be ≥ 0, got {k_factor}")))
            }
            FadingModel::Nakagami { m_shape } if m_shape >= 0.5 && m_shape.is_finite() => Ok(()),
            FadingModel::Nakagami { m_shape } => {
                Err(Error::invalid(format!("Nakagami m must be ≥ 0.5, got {m_shape}")))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            FadingModel::Rayleigh => "rayleigh".into(),
            FadingModel::Rician { k_factor } => format!("rician(k={k_factor})"),
            FadingModel::Nakagami { m_shape } => format!("nakagami(m={m_shape})"),
        }
    }

    /// One coefficient. Rician uses a uniform-phase line-of-sight term plus a
    /// scattered CN(0, 1/(K+1)) term; Nakagami draws the power from
    /// Gamma(m, 1/m) with uniform phase.
    pub fn sample(&self, rng: &mut Prng) -> Cplx {
        match *self {
            FadingModel::Rayleigh => rng.cscg(),
            FadingModel::Rician { k_factor } => {
                let los = (k_factor / (k_factor + 1.0)).sqrt();
                let nlos = (1.0 / (k_factor + 1.0)).sqrt();
                let phase = 2.0 * PI * rng.uniform();
                Cplx::from_polar(los, phase) + rng.cscg() * nlos
            }
            FadingModel::Nakagami { m_shape } => {
                let power = Gamma::new(m_shape, 1.0 / m_shape)
                    .expect("validated shape")
                    .sample(rng);
                let phase = 2.0 * PI * rng.uniform();
                Cplx::from_polar(power.sqrt(), phase)
            }
        }
    }
}

/// Per-block link parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Direct-link average SNR (linear).
    pub alpha_dt: f64,
    /// Backscatter-link average SNR (linear).
    pub alpha_bt: f64,
    pub antennas: usize,
    /// Transmitter symbols per backscattered bit.
    pub spreading: usize,
    pub fading: FadingModel,
}

impl ChannelParams {
    pub fn new(
        alpha_dt: f64,
        alpha_bt: f64,
        antennas: usize,
        spreading: usize,
        fading: FadingModel,
    ) -> Result<Self> {
        let p = Self {
            alpha_dt,
            alpha_bt,
            antennas,
            spreading,
            fading,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        // alpha_dt = 0 is allowed for noise-only calibration runs.
        if !(self.alpha_dt >= 0.0 && self.alpha_dt.is_finite()) {
            return Err(Error::invalid("alpha_dt must be finite and non-negative"));
        }
        if !(self.alpha_bt >= 0.0 && self.alpha_bt.is_finite()) {
            return Err(Error::invalid("alpha_bt must be finite and non-negative"));
        }
        if self.antennas == 0 {
            return Err(Error::invalid("antenna count must be at least 1"));
        }
        if self.spreading == 0 {
            return Err(Error::invalid("spreading factor must be at least 1"));
        }
        self.fading.validate()
    }
}

/// How the backscatter SNR is chosen when the direct SNR varies.
///
/// `Fixed` holds `α_bt` constant. `Coupled` ties it to the direct link through
/// the reflection gain, `α_bt = α̃_r · α_dt`, so a stronger transmitter also
/// strengthens the backscatter. `Silent` removes the backscatter path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BackscatterLevel {
    Fixed { alpha_bt_db: f64 },
    Coupled { reflection_db: f64 },
    Silent,
}

impl BackscatterLevel {
    pub fn alpha_bt_db(&self, alpha_dt_db: f64) -> f64 {
        match *self {
            BackscatterLevel::Fixed { alpha_bt_db } => alpha_bt_db,
            BackscatterLevel::Coupled { reflection_db } => alpha_dt_db + reflection_db,
            BackscatterLevel::Silent => f64::NEG_INFINITY,
        }
    }
}

/// Fading coefficients held fixed for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub f_d: CVector,
    pub f_b: CVector,
    pub g_r: Cplx,
}

impl ChannelRealization {
    pub fn antennas(&self) -> usize {
        self.f_d.len()
    }

    /// Per-antenna gain on the transmitted symbol when the tag is in state `e`.
    pub fn effective_gain(&self, params: &ChannelParams, e: u8) -> CVector {
        let direct = params.alpha_dt.sqrt();
        let back = if e == 1 {
            self.g_r * params.alpha_bt.sqrt()
        } else {
            Cplx::new(0.0, 0.0)
        };
        CVector::from_fn(self.antennas(), |m| self.f_d[m] * direct + self.f_b[m] * back)
    }
}

pub fn draw_channel(rng: &mut Prng, params: &ChannelParams) -> ChannelRealization {
    let m = params.antennas;
    let f_d = CVector::from_fn(m, |_| params.fading.sample(rng));
    let f_b = CVector::from_fn(m, |_| params.fading.sample(rng));
    let g_r = params.fading.sample(rng);
    ChannelRealization { f_d, f_b, g_r }
}

/// `M × N` samples for one backscattered bit; column `n` is `y_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedBlock {
    samples: CMatrix,
}

impl ReceivedBlock {
    pub fn new(samples: CMatrix) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &CMatrix {
        &self.samples
    }

    pub fn antennas(&self) -> usize {
        self.samples.rows()
    }

    pub fn spreading(&self) -> usize {
        self.samples.cols()
    }

    pub fn column(&self, n: usize) -> CVector {
        self.samples.column(n)
    }
}

fn check_bit(e: u8) -> Result<()> {
    if e > 1 {
        Err(Error::invalid(format!("tag state must be 0 or 1, got {e}")))
    } else {
        Ok(())
    }
}

pub fn synthesize_block(
    rng: &mut Prng,
    chan: &ChannelRealization,
    params: &ChannelParams,
    e: u8,
) -> Result<ReceivedBlock> {
    check_bit(e)?;
    if chan.antennas() != params.antennas {
        return Err(Error::invalid("realization does not match antenna count"));
    }
    let gain = chan.effective_gain(params, e);
    let (m, n) = (params.antennas, params.spreading);
    let mut samples = CMatrix::zeros(m, n);
    for col in 0..n {
        let s = rng.cscg();
        for row in 0..m {
            samples[(row, col)] = gain[row] * s + rng.cscg();
        }
    }
    Ok(ReceivedBlock { samples })
}

pub fn synthesize_frame(
    rng: &mut Prng,
    chan: &ChannelRealization,
    params: &ChannelParams,
    bits: &[u8],
) -> Result<Vec<ReceivedBlock>> {
    if bits.is_empty() {
        return Err(Error::invalid("frame must carry at least one bit"));
    }
    bits.iter()
        .map(|&e| synthesize_block(rng, chan, params, e))
        .collect()
}
