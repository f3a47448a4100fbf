//! Compose and verify posts under the three schemes.
//!
//! * **text**: the key-code is one segment over the digest of the message
//!   (or over the raw message in [`HashingMode::Direct`]).
//! * **pictured, simple**: as text, and every attached image is stamped
//!   with that segment.
//! * **pictured, provable**: segment 1 signs the digest of the message and a
//!   timestamp; every image is stamped with segment 1, then the digest of
//!   each stamped image's *encoded file bytes* is signed as segment `i + 2`.
//!
//! Verifiers need only public data. Every verify function reports each
//! check separately in a [`VerificationResult`] and never errors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::crypto::{decode64, Digest, PrivateKey, PublicKey, SignatureSegment};
use crate::watermark::{self, RasterImage};
use crate::{Error, Result};

pub const SEGMENT_SEPARATOR: char = '.';
/// ASCII unit separator between message and timestamp.
pub const TIMESTAMP_SEPARATOR: u8 = 0x1F;

/// Unix seconds, UTC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn seconds(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HashingMode {
    #[default]
    Hashed,
    /// Sign the message bytes themselves. Limited to
    /// [`PublicKey::max_direct_len`] bytes.
    Direct,
}

impl fmt::Display for HashingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HashingMode::Hashed => "hashed",
            HashingMode::Direct => "direct",
        })
    }
}

impl FromStr for HashingMode {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s {
            "hashed" => Ok(HashingMode::Hashed),
            "direct" => Ok(HashingMode::Direct),
            other => Err(format!(
                "unknown hashing mode {other:?} (expected hashed or direct)"
            )),
        }
    }
}

/// The bytes that get hashed for segment 1: the UTF-8 message, followed by
/// `0x1F` and the decimal timestamp when one is present.
pub fn canonicalize(message: &str, timestamp: Option<Timestamp>) -> Vec<u8> {
    let mut out = Vec::with_capacity(message.len() + 21);
    out.extend_from_slice(message.as_bytes());
    if let Some(t) = timestamp {
        out.push(TIMESTAMP_SEPARATOR);
        out.extend_from_slice(t.0.to_string().as_bytes());
    }
    out
}

pub fn text_digest(message: &str, timestamp: Option<Timestamp>) -> Digest {
    Digest::of(&canonicalize(message, timestamp))
}

/// The public identifier of a post.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct KeyCode {
    segments: Vec<SignatureSegment>,
}

impl KeyCode {
    pub fn new(segments: Vec<SignatureSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::KeyCode(
                "a key-code needs at least one segment".into(),
            ));
        }
        if segments.iter().any(SignatureSegment::is_empty) {
            return Err(Error::KeyCode("empty segment".into()));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[SignatureSegment] {
        &self.segments
    }

    /// Segment 1, the signature over the (timestamped) text.
    pub fn text_segment(&self) -> &SignatureSegment {
        &self.segments[0]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(SEGMENT_SEPARATOR);
            }
            out.push_str(&s.to_encoded());
        }
        out
    }

    pub fn parse(rendered: &str) -> Result<Self> {
        let rendered = rendered.trim();
        if rendered.is_empty() {
            return Err(Error::KeyCode("empty key-code".into()));
        }
        let mut segments = Vec::new();
        for (i, part) in rendered.split(SEGMENT_SEPARATOR).enumerate() {
            let bytes =
                decode64(part).map_err(|e| Error::KeyCode(format!("segment {}: {e}", i + 1)))?;
            segments.push(SignatureSegment::from_bytes(bytes));
        }
        Self::new(segments)
    }
}

impl fmt::Display for KeyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for KeyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyCode({} segments)", self.segments.len())
    }
}

impl FromStr for KeyCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationResult {
    pub verdict: bool,
    pub checks: Vec<Check>,
}

impl Default for VerificationResult {
    fn default() -> Self {
        Self::new()
    }
}

impl VerificationResult {
    pub fn new() -> Self {
        Self {
            verdict: false,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
        self.verdict = self.checks.iter().all(|c| c.passed);
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Appends all checks of `other`.
    pub fn merge(&mut self, other: VerificationResult) {
        for c in other.checks {
            self.push(c.name, c.passed, c.detail);
        }
    }
}

fn parse_keycode(rendered: &str, result: &mut VerificationResult) -> Option<KeyCode> {
    match KeyCode::parse(rendered) {
        Ok(kc) => {
            result.push(
                "keycode-parse",
                true,
                format!("{} segment(s)", kc.segments().len()),
            );
            Some(kc)
        }
        Err(e) => {
            result.push("keycode-parse", false, e.to_string());
            None
        }
    }
}

fn check_segment_count(kc: &KeyCode, expected: usize, result: &mut VerificationResult) -> bool {
    let found = kc.segments().len();
    let ok = found == expected;
    result.push(
        "keycode-structure",
        ok,
        format!("expected {expected} segment(s), found {found}"),
    );
    ok
}

fn verdict_detail(ok: bool, what: &str) -> String {
    if ok {
        format!("signature over {what} verifies")
    } else {
        format!("signature over {what} does not verify")
    }
}

#[derive(Clone, Debug)]
pub struct TextPost {
    pub message: String,
    pub hashing_mode: HashingMode,
    pub keycode: KeyCode,
}

pub fn compose_text_post(key: &PrivateKey, message: &str, mode: HashingMode) -> Result<TextPost> {
    let segment = match mode {
        HashingMode::Hashed => key.sign_digest(&text_digest(message, None))?,
        HashingMode::Direct => key.sign_direct(message.as_bytes())?,
    };
    Ok(TextPost {
        message: message.into(),
        hashing_mode: mode,
        keycode: KeyCode::new(alloc::vec![segment])?,
    })
}

pub fn verify_text_post(
    message: &str,
    keycode: &str,
    public_key: &PublicKey,
    mode: HashingMode,
) -> VerificationResult {
    let mut result = VerificationResult::new();
    let Some(kc) = parse_keycode(keycode, &mut result) else {
        return result;
    };
    if !check_segment_count(&kc, 1, &mut result) {
        return result;
    }
    let ok = match mode {
        HashingMode::Hashed => {
            public_key.verify_segment(&text_digest(message, None), kc.text_segment())
        }
        HashingMode::Direct => public_key.verify_direct(message.as_bytes(), kc.text_segment()),
    };
    let what = match mode {
        HashingMode::Hashed => "message digest",
        HashingMode::Direct => "message bytes",
    };
    result.push("keycode-segment-1", ok, verdict_detail(ok, what));
    result
}

/// Fails with [`Error::ImageCapacity`] naming the first image that cannot
/// hold a payload of `payload_len` bytes.
pub fn check_capacity(images: &[RasterImage], payload_len: usize) -> Result<()> {
    for (index, image) in images.iter().enumerate() {
        let available = watermark::capacity(image);
        if payload_len > available {
            return Err(Error::ImageCapacity {
                index,
                required: payload_len,
                available,
            });
        }
    }
    Ok(())
}

/// Stamps every image with the text segment.
pub fn stamp_images(
    segment: &SignatureSegment,
    covers: &[RasterImage],
) -> Result<Vec<RasterImage>> {
    check_capacity(covers, segment.len())?;
    covers
        .iter()
        .enumerate()
        .map(|(index, cover)| {
            watermark::embed(segment.as_bytes(), cover).map_err(|e| match e {
                Error::Capacity {
                    required,
                    available,
                } => Error::ImageCapacity {
                    index,
                    required,
                    available,
                },
                other => other,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SimplePicturedPost {
    pub message: String,
    pub keycode: KeyCode,
    pub images: Vec<RasterImage>,
}

pub fn compose_pictured_post_simple(
    key: &PrivateKey,
    message: &str,
    covers: &[RasterImage],
) -> Result<SimplePicturedPost> {
    check_capacity(covers, key.modulus_len())?;
    let segment = key.sign_digest(&text_digest(message, None))?;
    let images = stamp_images(&segment, covers)?;
    Ok(SimplePicturedPost {
        message: message.into(),
        keycode: KeyCode::new(alloc::vec![segment])?,
        images,
    })
}

pub fn verify_pictured_post_simple(
    message: &str,
    keycode: &str,
    images: &[RasterImage],
    public_key: &PublicKey,
) -> VerificationResult {
    let mut result = VerificationResult::new();
    let Some(kc) = parse_keycode(keycode, &mut result) else {
        return result;
    };
    if !check_segment_count(&kc, 1, &mut result) {
        return result;
    }
    let segment = kc.text_segment();
    let ok = public_key.verify_segment(&text_digest(message, None), segment);
    result.push(
        "keycode-segment-1",
        ok,
        verdict_detail(ok, "message digest"),
    );
    push_watermark_checks(segment, images.iter(), &mut result);
    result
}

fn push_watermark_checks<'a>(
    segment: &SignatureSegment,
    images: impl Iterator<Item = &'a RasterImage>,
    result: &mut VerificationResult,
) {
    for (i, image) in images.enumerate() {
        let found = watermark::detect(image, segment.as_bytes());
        let detail = if found {
            "watermark carries segment 1"
        } else {
            "segment 1 not found in watermark"
        };
        result.push(format!("watermark-image-{i}"), found, detail);
    }
}

/// Deterministic image file encoding. The digest of its output is what the
/// provable scheme signs, so two calls on the same raster must return the
/// same bytes.
pub trait ImageEncoder {
    fn encode(&self, image: &RasterImage) -> core::result::Result<Vec<u8>, String>;
}

impl<F> ImageEncoder for F
where
    F: Fn(&RasterImage) -> core::result::Result<Vec<u8>, String>,
{
    fn encode(&self, image: &RasterImage) -> core::result::Result<Vec<u8>, String> {
        self(image)
    }
}

/// A stamped image as published: its pixels and its encoded file bytes.
/// Callers must keep the two consistent, i.e. `raster` is the decoding of
/// `encoded`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedImage {
    pub raster: RasterImage,
    pub encoded: Vec<u8>,
}

impl PublishedImage {
    pub fn digest(&self) -> Digest {
        Digest::of(&self.encoded)
    }
}

#[derive(Clone, Debug)]
pub struct ProvablePicturedPost {
    pub message: String,
    pub timestamp: Timestamp,
    pub keycode: KeyCode,
    pub images: Vec<PublishedImage>,
}

/// Stamps and encodes the covers, returning the published images whose
/// digests the caller still has to sign.
pub fn publish_images<E: ImageEncoder + ?Sized>(
    text_segment: &SignatureSegment,
    covers: &[RasterImage],
    encoder: &E,
) -> Result<Vec<PublishedImage>> {
    stamp_images(text_segment, covers)?
        .into_iter()
        .enumerate()
        .map(|(index, raster)| {
            let encoded = encoder
                .encode(&raster)
                .map_err(|reason| Error::ImageEncoding { index, reason })?;
            Ok(PublishedImage { raster, encoded })
        })
        .collect()
}

pub fn compose_pictured_post_provable<E: ImageEncoder + ?Sized>(
    key: &PrivateKey,
    message: &str,
    timestamp: Timestamp,
    covers: &[RasterImage],
    encoder: &E,
) -> Result<ProvablePicturedPost> {
    check_capacity(covers, key.modulus_len())?;
    let text_segment = key.sign_digest(&text_digest(message, Some(timestamp)))?;
    let images = publish_images(&text_segment, covers, encoder)?;

    let mut segments = Vec::with_capacity(1 + images.len());
    segments.push(text_segment);
    for image in &images {
        segments.push(key.sign_digest(&image.digest())?);
    }
    Ok(ProvablePicturedPost {
        message: message.into(),
        timestamp,
        keycode: KeyCode::new(segments)?,
        images,
    })
}

pub fn verify_pictured_post_provable(
    message: &str,
    timestamp: Timestamp,
    keycode: &str,
    images: &[PublishedImage],
    public_key: &PublicKey,
) -> VerificationResult {
    let mut result = VerificationResult::new();
    let Some(kc) = parse_keycode(keycode, &mut result) else {
        return result;
    };
    if !check_segment_count(&kc, 1 + images.len(), &mut result) {
        return result;
    }
    let segment = kc.text_segment();
    let ok = public_key.verify_segment(&text_digest(message, Some(timestamp)), segment);
    result.push(
        "keycode-segment-1",
        ok,
        verdict_detail(ok, "timestamped message digest"),
    );
    push_watermark_checks(segment, images.iter().map(|i| &i.raster), &mut result);
    for (i, (image, seg)) in images.iter().zip(&kc.segments()[1..]).enumerate() {
        let ok = public_key.verify_segment(&image.digest(), seg);
        result.push(
            format!("keycode-segment-{}", i + 2),
            ok,
            verdict_detail(ok, &format!("image {i} file digest")),
        );
    }
    result
}
