//! Monte-Carlo estimate of the largest rate the tag can convey at `N = 1`.
//!
//! The rate is the mutual information between the tag state and one received
//! vector, `R* = Z(θ0) − E[Z(μ0)]`, where `Z` is binary entropy and `μ0` is
//! the posterior probability of state 0 given the vector. The expectation
//! runs over channel draws (outer loop) and signal draws (inner loop).

use rayon::prelude::*;

use crate::channel::{draw_channel, synthesize_block, BackscatterLevel, ChannelParams};
use crate::error::{Error, Result};
use crate::mlk::{build_covariances, log_conditional_pdf, CovPair, PerfectCsi};
use crate::numerics::{binary_entropy, binary_entropy_unchecked, db_to_linear, Cplx, Prng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateConfig {
    /// Prior probability that the tag sends 0.
    pub theta0: f64,
    /// Link parameters; the spreading factor is forced to 1.
    pub params: ChannelParams,
    pub trials_signal: usize,
    pub trials_channel: usize,
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta0) {
            return Err(Error::invalid(format!("theta0 {} outside [0, 1]", self.theta0)));
        }
        if self.trials_signal == 0 || self.trials_channel == 0 {
            return Err(Error::invalid("trial counts must be at least 1"));
        }
        self.params.validate()
    }

    pub fn samples(&self) -> usize {
        self.trials_signal * self.trials_channel
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    /// Bits per backscattered symbol.
    pub rate: f64,
    /// Standard error across channel draws.
    pub stderr: f64,
    pub samples: usize,
}

/// `p(e = 0 | v)` under prior `θ0`, evaluated in the log domain.
pub fn posterior_mu0(v: &[Cplx], cov: &CovPair, theta0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta0) {
        return Err(Error::invalid(format!("theta0 {theta0} outside [0, 1]")));
    }
    if v.len() != cov.dim() {
        return Err(Error::invalid("vector length does not match covariance size"));
    }
    if theta0 == 0.0 || theta0 == 1.0 {
        return Ok(theta0);
    }
    let l0 = theta0.ln() + log_conditional_pdf(v, cov.r0());
    let l1 = (1.0 - theta0).ln() + log_conditional_pdf(v, cov.r1());
    // μ0 = 1 / (1 + exp(l1 − l0)), written to avoid overflow either way.
    let d = l1 - l0;
    Ok(if d > 0.0 {
        let t = (-d).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + d.exp())
    })
}

/// Mean of `Z(θ0) − Z(μ0)` for one channel draw.
fn channel_term(cfg: &RateConfig, params: &ChannelParams, rng: &mut Prng) -> Result<f64> {
    let chan = draw_channel(rng, params);
    let cov = build_covariances(&PerfectCsi::from_channel(&chan, params));
    let z_prior = binary_entropy_unchecked(cfg.theta0);
    let mut acc = 0.0;
    for _ in 0..cfg.trials_signal {
        let e = u8::from(rng.bernoulli(1.0 - cfg.theta0));
        let block = synthesize_block(rng, &chan, params, e)?;
        let mu0 = posterior_mu0(block.samples().as_slice(), &cov, cfg.theta0)?;
        acc += z_prior - binary_entropy_unchecked(mu0);
    }
    Ok(acc / cfg.trials_signal as f64)
}

pub fn estimate_max_rate(cfg: &RateConfig, rng: &Prng) -> Result<RateEstimate> {
    cfg.validate()?;
    if cfg.theta0 == 0.0 || cfg.theta0 == 1.0 {
        return Ok(RateEstimate { rate: 0.0, stderr: 0.0, samples: 0 });
    }
    let params = ChannelParams { spreading: 1, ..cfg.params };
    let means: Vec<f64> = (0..cfg.trials_channel)
        .into_par_iter()
        .map(|c| channel_term(cfg, &params, &mut rng.derive(c as u64)))
        .collect::<Result<_>>()?;
    let n = means.len() as f64;
    let rate = means.iter().sum::<f64>() / n;
    let stderr = if means.len() > 1 {
        let var = means.iter().map(|m| (m - rate).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    if !rate.is_finite() {
        return Err(Error::Numerical("rate estimate is not finite".into()));
    }
    Ok(RateEstimate { rate, stderr, samples: cfg.samples() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateAxis {
    Theta0,
    /// Grid in dB.
    AlphaDt,
    Antennas,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub axis_value: f64,
    pub rate_bits: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Sweep settings shared by every grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSweep {
    pub theta0: f64,
    pub alpha_dt_db: f64,
    pub backscatter: BackscatterLevel,
    pub antennas: usize,
    pub fading: crate::channel::FadingModel,
    pub trials_signal: usize,
    pub trials_channel: usize,
    pub seed: u64,
}

impl RateSweep {
    fn point(&self, axis: RateAxis, x: f64) -> Result<RateConfig> {
        let (mut theta0, mut dt_db, mut m) = (self.theta0, self.alpha_dt_db, self.antennas);
        match axis {
            RateAxis::Theta0 => theta0 = x,
            RateAxis::AlphaDt => dt_db = x,
            RateAxis::Antennas => {
                if x < 1.0 || x.fract() != 0.0 {
                    return Err(Error::invalid(format!("antenna count {x} is not a positive integer")));
                }
                m = x as usize;
            }
        }
        let bt_db = self.backscatter.alpha_bt_db(dt_db);
        let alpha_bt = if bt_db == f64::NEG_INFINITY { 0.0 } else { db_to_linear(bt_db) };
        Ok(RateConfig {
            theta0,
            params: ChannelParams::new(db_to_linear(dt_db), alpha_bt, m, 1, self.fading)?,
            trials_signal: self.trials_signal,
            trials_channel: self.trials_channel,
        })
    }
}

/// One estimate per grid point, each on its own substream of the base seed.
pub fn rate_sweep(axis: RateAxis, grid: &[f64], sweep: &RateSweep) -> Result<Vec<RateRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("rate grid is empty"));
    }
    let base = Prng::new(sweep.seed, 0x7261_7465);
    grid.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cfg = sweep.point(axis, x)?;
            let est = estimate_max_rate(&cfg, &base.derive(i as u64))?;
            Ok(RateRow {
                axis_value: x,
                rate_bits: est.rate,
                stderr: est.stderr,
                samples: est.samples,
                seed: sweep.seed,
            })
        })
        .collect()
}

/// Upper end of the valid range for an estimate.
pub fn rate_ceiling(theta0: f64) -> Result<f64> {
    binary_entropy(theta0)
}
