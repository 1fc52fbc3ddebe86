//! Simulator for covert tag-to-receiver signalling over ambient backscatter.
//!
//! A message is split between an active radio link and a passive tag that
//! modulates the same carrier. This crate synthesizes both links, detects the
//! tag's bits with a likelihood test or a small neural network, estimates the
//! tag's achievable rate and measures how hard the hidden part is to guess.

pub mod channel;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod features;
pub mod meta;
pub mod mlk;
pub mod nn;
pub mod numerics;
pub mod rate;
pub mod security;

pub use channel::{BackscatterLevel, ChannelParams, ChannelRealization, FadingModel, ReceivedBlock};
pub use error::{Error, Result};
pub use features::FeatureVector;
pub use nn::{Dataset, MlpModel, TrainConfig};
pub use numerics::{CMatrix, CVector, Cplx, Prng};
