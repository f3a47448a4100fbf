//! Signed key-codes and detection watermarks for micro-blog posts.
//!
//! A post is signed into a *key-code*: one or more RSA signature segments
//! over content digests, rendered as base64url strings joined by `.`.
//! Images attached to a post carry a watermark frame holding the first
//! segment, which binds them to the text they were posted with. The
//! provable scheme additionally timestamps the text and signs the digest
//! of every stamped image file, so text and pictures from different
//! posts cannot be recombined into a post that verifies.
//!
//! This crate is `no_std` + `alloc`. It holds the pure parts: hashing,
//! signing, the watermark codec, and compose/verify for the three
//! posting schemes. File formats, persistence, the HTTP service and the
//! CLI live in the `postseal` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod crypto;
mod error;
pub mod protocol;
pub mod watermark;

pub use crate::crypto::{
    decode64, digest, encode64, generate_keypair, sign_digest, verify_segment, Digest, KeyPair,
    PrivateKey, PublicKey, SignatureSegment,
};
pub use crate::error::Error;
pub use crate::protocol::{
    canonicalize, Check, HashingMode, ImageEncoder, KeyCode, PublishedImage, Timestamp,
    VerificationResult,
};
pub use crate::watermark::{Channels, RasterImage};

pub type Result<T, E = Error> = core::result::Result<T, E>;
