//! Eavesdropper effort: how hard it is to find which positions of the
//! original message were carried on the backscatter link.
//!
//! An eavesdropper holding only the active part must pick the `I` hidden
//! positions among `P`, i.e. one key out of `C(P, I)`. Binomials are exact
//! big integers; sizes are reported in log2.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for j in 0..k {
        // acc · (n − j) is divisible by j + 1 at every step.
        acc = acc * (n - j) / (j + 1);
    }
    acc
}

/// `log2` of an arbitrary-size positive integer.
pub fn log2_big(x: &BigUint) -> f64 {
    assert!(!x.is_zero(), "log2 of zero");
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap().log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap();
    top.log2() + shift as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySpace {
    pub p: u64,
    pub i: u64,
    pub size: BigUint,
}

impl KeySpace {
    pub fn new(p: u64, i: u64) -> Result<Self> {
        if i == 0 || i > p {
            return Err(Error::invalid(format!("need 0 < I ≤ P, got P={p}, I={i}")));
        }
        Ok(Self { p, i, size: binomial(p, i) })
    }

    pub fn log2_size(&self) -> f64 {
        log2_big(&self.size)
    }
}

/// Chance that one uniform guess of the hidden positions is right.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessProb {
    /// Exact value is `1 / denominator`.
    pub denominator: BigUint,
    /// Float value; 0 when it underflows.
    pub value: f64,
    pub underflow: bool,
    pub log2: f64,
}

pub fn guess_success_prob(p: u64, i: u64) -> Result<SuccessProb> {
    let ks = KeySpace::new(p, i)?;
    let log2 = -ks.log2_size();
    let value = ks.size.to_f64().map(|d| 1.0 / d).unwrap_or(0.0);
    let underflow = value == 0.0 || !value.is_normal();
    Ok(SuccessProb { denominator: ks.size, value, underflow, log2 })
}

/// Probabilities over candidate keys.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyDistribution(Vec<f64>);

impl KeyDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution has no keys"));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("distribution has no keys"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    fn sorted_desc(&self) -> Vec<f64> {
        let mut p = self.0.clone();
        p.sort_by(|a, b| b.total_cmp(a));
        p
    }
}

/// Expected number of guesses when trying keys from most to least likely.
pub fn guessing_entropy(dist: &KeyDistribution) -> f64 {
    dist.sorted_desc()
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum()
}

/// `½(Σ√p)² + ½`.
pub fn guessing_entropy_upper_bound(dist: &KeyDistribution) -> f64 {
    let s: f64 = dist.sorted_desc().iter().map(|p| p.sqrt()).sum();
    0.5 * s * s + 0.5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundRow {
    pub beta: f64,
    pub p: u64,
    pub i: u64,
    pub log2_keyspace: f64,
    /// `log2((C(P, I) + 1) / 2)`, the uniform-key guessing entropy.
    pub log2_bound: f64,
}

/// Uniform-key guessing entropy for each splitting ratio `β = I / P`.
pub fn uniform_bound_sweep(p: u64, betas: &[f64]) -> Result<Vec<BoundRow>> {
    if betas.is_empty() {
        return Err(Error::invalid("beta grid is empty"));
    }
    betas
        .iter()
        .map(|&beta| {
            if !(beta > 0.0 && beta <= 0.5) {
                return Err(Error::invalid(format!("beta {beta} outside (0, 0.5]")));
            }
            let i = (beta * p as f64).round() as u64;
            let ks = KeySpace::new(p, i)?;
            let bound = &ks.size + BigUint::one();
            Ok(BoundRow {
                beta,
                p,
                i,
                log2_keyspace: ks.log2_size(),
                log2_bound: log2_big(&bound) - 1.0,
            })
        })
        .collect()
}
