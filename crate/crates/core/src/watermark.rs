//! Detection watermark: hide a byte payload in the least significant bits
//! of an 8-bit RGB(A) raster and later test whether a *given* payload is
//! present.
//!
//! Frame layout, written MSB-first into the LSB of each R, G, B sample in
//! row-major pixel order (alpha is never touched):
//!
//! ```text
//! "WMK1" | len: u16 BE | payload[len] | CRC-32(payload): u32 BE
//! ```
//!
//! The frame starts at the first sample of pixel (0, 0). Samples past the
//! end of the frame are left as they were.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WMK1";
/// Magic, length header and CRC.
pub const FRAME_OVERHEAD: usize = 10;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Channels {
    Rgb,
    Rgba,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Rgb => 3,
            Channels::Rgba => 4,
        }
    }
}

/// An 8-bit-per-channel raster, either a cover image or a stamped one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: Channels,
    samples: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: Channels, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be non-zero, got {width}x{height}"
            )));
        }
        let expected = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(channels.count()))
            .ok_or_else(|| Error::InvalidImage(format!("{width}x{height} is too large")))?;
        if samples.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples for {width}x{height} {channels:?}, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Number of bits the frame can occupy: one per colour sample.
    fn carrier_bits(&self) -> usize {
        self.pixel_count() * 3
    }

    /// Index into `samples` of the `bit`-th carrier sample.
    fn carrier_index(&self, bit: usize) -> usize {
        let stride = self.channels.count();
        (bit / 3) * stride + bit % 3
    }
}

/// Largest payload `embed` accepts for this image.
pub fn capacity(image: &RasterImage) -> usize {
    (image.carrier_bits() / 8)
        .saturating_sub(FRAME_OVERHEAD)
        .min(MAX_PAYLOAD_LEN)
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_be_bytes());
    out
}

/// Returns a copy of `cover` with `payload` framed into its LSBs.
pub fn embed(payload: &[u8], cover: &RasterImage) -> Result<RasterImage> {
    if payload.is_empty() {
        return Err(Error::EmptyPayload);
    }
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(Error::PayloadTooLarge(payload.len()));
    }
    let available = capacity(cover);
    if payload.len() > available {
        return Err(Error::Capacity {
            required: payload.len(),
            available,
        });
    }

    let mut stamped = cover.clone();
    for (byte_idx, byte) in frame(payload).into_iter().enumerate() {
        for bit_in_byte in 0..8 {
            let bit = (byte >> (7 - bit_in_byte)) & 1;
            let idx = stamped.carrier_index(byte_idx * 8 + bit_in_byte);
            stamped.samples[idx] = (stamped.samples[idx] & !1) | bit;
        }
    }
    Ok(stamped)
}

struct FrameReader<'a> {
    image: &'a RasterImage,
    bit: usize,
}

impl<'a> FrameReader<'a> {
    fn new(image: &'a RasterImage) -> Self {
        Self { image, bit: 0 }
    }

    fn read_into(&mut self, buf: &mut [u8]) -> Option<()> {
        if self.bit + buf.len() * 8 > self.image.carrier_bits() {
            return None;
        }
        for out in buf.iter_mut() {
            let mut byte = 0u8;
            for _ in 0..8 {
                let sample = self.image.samples[self.image.carrier_index(self.bit)];
                byte = (byte << 1) | (sample & 1);
                self.bit += 1;
            }
            *out = byte;
        }
        Some(())
    }

    fn read_header(&mut self) -> Option<usize> {
        let mut magic = [0u8; 4];
        self.read_into(&mut magic)?;
        if magic != MAGIC {
            return None;
        }
        let mut len = [0u8; 2];
        self.read_into(&mut len)?;
        Some(u16::from_be_bytes(len) as usize)
    }

    fn read_crc(&mut self) -> Option<u32> {
        let mut crc = [0u8; 4];
        self.read_into(&mut crc)?;
        Some(u32::from_be_bytes(crc))
    }
}

/// True iff `image` carries a CRC-valid frame whose payload equals
/// `payload` byte for byte. Absence, corruption and mismatch are all
/// `false`.
pub fn detect(image: &RasterImage, payload: &[u8]) -> bool {
    if payload.is_empty() || payload.len() > capacity(image) {
        return false;
    }
    let mut reader = FrameReader::new(image);
    if reader.read_header() != Some(payload.len()) {
        return false;
    }
    let mut found = vec![0u8; payload.len()];
    if reader.read_into(&mut found).is_none() || found != payload {
        return false;
    }
    reader.read_crc() == Some(crc32fast::hash(payload))
}

/// Blind recovery of whatever CRC-valid frame the image carries.
///
/// Diagnostic only; no verification path relies on it.
pub fn extract(image: &RasterImage) -> Option<Vec<u8>> {
    let mut reader = FrameReader::new(image);
    let len = reader.read_header()?;
    if len == 0 {
        return None;
    }
    let mut payload = vec![0u8; len];
    reader.read_into(&mut payload)?;
    (reader.read_crc()? == crc32fast::hash(&payload)).then_some(payload)
}
