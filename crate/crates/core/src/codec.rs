//! Message splitting between the active and backscatter links, pilot-bearing
//! backscatter frames, and the packed bitstream encoding.
//!
//! Bits are `u8` values restricted to 0 and 1. The backscatter share of a
//! message is every `stride`-th bit starting at index 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Every `stride`-th original bit goes to the backscatter link.
    pub stride: usize,
    /// Pilot bits at the head of each frame; even.
    pub pilots: usize,
    /// Total bits per backscatter frame, pilots included.
    pub frame_len: usize,
}

impl SplitConfig {
    pub fn new(stride: usize, pilots: usize, frame_len: usize) -> Result<Self> {
        let c = Self {
            stride,
            pilots,
            frame_len,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 2 {
            return Err(Error::invalid("split stride must be at least 2"));
        }
        if !self.pilots.is_multiple_of(2) {
            return Err(Error::invalid("pilot count must be even"));
        }
        if self.pilots >= self.frame_len {
            return Err(Error::invalid("pilot count must be smaller than the frame length"));
        }
        Ok(())
    }

    pub fn payload_per_frame(&self) -> usize {
        self.frame_len - self.pilots
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMessage {
    pub active_bits: Vec<u8>,
    pub amb_bits: Vec<u8>,
    pub original_len: usize,
}

impl SplitMessage {
    /// Fraction of the original message carried by the tag.
    pub fn split_ratio(&self) -> f64 {
        self.amb_bits.len() as f64 / self.original_len as f64
    }
}

fn check_bits(bits: &[u8]) -> Result<()> {
    match bits.iter().position(|&b| b > 1) {
        Some(i) => Err(Error::invalid(format!("bit {i} has value {}", bits[i]))),
        None => Ok(()),
    }
}

pub fn split_message(original: &[u8], cfg: &SplitConfig) -> Result<SplitMessage> {
    cfg.validate()?;
    if original.is_empty() {
        return Err(Error::invalid("cannot split an empty message"));
    }
    check_bits(original)?;
    let mut active_bits = Vec::with_capacity(original.len());
    let mut amb_bits = Vec::with_capacity(original.len().div_ceil(cfg.stride));
    for (i, &b) in original.iter().enumerate() {
        if i % cfg.stride == 0 {
            amb_bits.push(b);
        } else {
            active_bits.push(b);
        }
    }
    Ok(SplitMessage {
        active_bits,
        amb_bits,
        original_len: original.len(),
    })
}

pub fn merge_message(split: &SplitMessage, cfg: &SplitConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let p = split.original_len;
    let expected_amb = p.div_ceil(cfg.stride);
    if split.amb_bits.len() != expected_amb || split.active_bits.len() != p - expected_amb {
        return Err(Error::FrameIntegrity(format!(
            "{} active + {} backscatter bits cannot rebuild a {p}-bit message with stride {}",
            split.active_bits.len(),
            split.amb_bits.len(),
            cfg.stride
        )));
    }
    let mut amb = split.amb_bits.iter();
    let mut active = split.active_bits.iter();
    Ok((0..p)
        .map(|i| {
            let src = if i % cfg.stride == 0 { &mut amb } else { &mut active };
            *src.next().expect("lengths checked above")
        })
        .collect())
}

/// One backscatter frame: `pilots/2` zeros, `pilots/2` ones, then payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmbFrame {
    pub pilots: Vec<u8>,
    pub payload: Vec<u8>,
    /// Trailing zero bits appended to fill the last frame.
    pub padding: usize,
}

impl AmbFrame {
    /// Bits in transmission order.
    pub fn bits(&self) -> Vec<u8> {
        let mut v = self.pilots.clone();
        v.extend_from_slice(&self.payload);
        v
    }
}

pub fn pilot_pattern(pilots: usize) -> Vec<u8> {
    let half = pilots / 2;
    let mut v = vec![0u8; half];
    v.extend(std::iter::repeat_n(1u8, pilots - half));
    v
}

pub fn build_frames(amb_bits: &[u8], cfg: &SplitConfig) -> Result<Vec<AmbFrame>> {
    cfg.validate()?;
    check_bits(amb_bits)?;
    let chunk = cfg.payload_per_frame();
    let pilots = pilot_pattern(cfg.pilots);
    Ok(amb_bits
        .chunks(chunk)
        .map(|c| {
            let mut payload = c.to_vec();
            let padding = chunk - c.len();
            payload.resize(chunk, 0);
            AmbFrame {
                pilots: pilots.clone(),
                payload,
                padding,
            }
        })
        .collect())
}

pub fn strip_frames(frames: &[AmbFrame], payload_len: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(payload_len);
    for (i, f) in frames.iter().enumerate() {
        if f.pilots != pilot_pattern(f.pilots.len()) {
            return Err(Error::FrameIntegrity(format!("frame {i} has a malformed pilot block")));
        }
        out.extend_from_slice(&f.payload);
    }
    if out.len() < payload_len {
        return Err(Error::FrameIntegrity(format!(
            "frames carry {} payload bits, {payload_len} requested",
            out.len()
        )));
    }
    out.truncate(payload_len);
    Ok(out)
}

/// Packs bits most-significant-first behind a 4-byte little-endian bit count.
pub fn encode_bitstream(bits: &[u8]) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let len = u32::try_from(bits.len()).map_err(|_| Error::invalid("bitstream longer than 2^32 bits"))?;
    let mut out = Vec::with_capacity(4 + bits.len().div_ceil(8));
    out.extend_from_slice(&len.to_le_bytes());
    for chunk in bits.chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)));
        out.push(byte);
    }
    Ok(out)
}

pub fn decode_bitstream(bytes: &[u8]) -> Result<Vec<u8>> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::Format("bitstream shorter than its length prefix".into()))?;
    let n = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if body.len() != n.div_ceil(8) {
        return Err(Error::Format(format!(
            "{n} bits need {} bytes, found {}",
            n.div_ceil(8),
            body.len()
        )));
    }
    Ok((0..n).map(|i| (body[i / 8] >> (7 - i % 8)) & 1).collect())
}
