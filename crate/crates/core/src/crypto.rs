//! Hashing, RSA signing and base64url transport encoding.
//!
//! Signatures use RSASSA-PKCS1-v1_5 over SHA-256. The padding is
//! deterministic, so a key-code is a stable string: the same digest signed
//! with the same key always renders identically and can be compared
//! textually.
//!
//! Public keys travel as base64url (padded) of the DER `SubjectPublicKeyInfo`
//! encoding; private keys as base64url of PKCS#8 DER.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use base64::engine::general_purpose::URL_SAFE;
use base64::{DecodeError, Engine as _};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use rsa::rand_core::CryptoRngCore;
use rsa::traits::PublicKeyParts;
use rsa::{Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use sha2::{Digest as _, Sha256};

use crate::{Error, Result};

pub const SUPPORTED_MODULUS_BITS: [usize; 3] = [2048, 3072, 4096];
pub const DEFAULT_MODULUS_BITS: usize = 2048;
pub const DIGEST_LEN: usize = 32;

/// Bytes of PKCS#1 v1.5 framing around an unprefixed message:
/// `00 01 PS(>= 8 x FF) 00`.
const PKCS1_V15_OVERHEAD: usize = 11;

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Self(Sha256::digest(data).into())
    }

    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(DIGEST_LEN * 2);
        for b in self.0 {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn digest(data: &[u8]) -> Digest {
    Digest::of(data)
}

/// One signature of a key-code. Its length equals the signer's modulus
/// size in bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignatureSegment(Vec<u8>);

impl SignatureSegment {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_encoded(&self) -> String {
        encode64(&self.0)
    }
}

impl fmt::Debug for SignatureSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignatureSegment({})", self.to_encoded())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(RsaPublicKey);

impl PublicKey {
    /// Modulus size in bytes; also the length of every segment this key
    /// verifies.
    pub fn modulus_len(&self) -> usize {
        self.0.size()
    }

    pub fn modulus_bits(&self) -> usize {
        self.modulus_len() * 8
    }

    /// Longest message that can be signed without hashing.
    pub fn max_direct_len(&self) -> usize {
        self.modulus_len() - PKCS1_V15_OVERHEAD
    }

    /// DER `SubjectPublicKeyInfo`.
    pub fn to_der(&self) -> Vec<u8> {
        // Encoding an in-memory RSA key to SPKI cannot fail.
        self.0
            .to_public_key_der()
            .expect("RSA public key encodes to SPKI")
            .into_vec()
    }

    pub fn from_der(der: &[u8]) -> Result<Self> {
        RsaPublicKey::from_public_key_der(der)
            .map(Self)
            .map_err(|e| Error::KeyMaterial(e.to_string()))
    }

    /// base64url of [`PublicKey::to_der`].
    pub fn to_encoded(&self) -> String {
        encode64(&self.to_der())
    }

    pub fn from_encoded(text: &str) -> Result<Self> {
        Self::from_der(&decode64(text.trim())?)
    }

    /// Never errors: a malformed or foreign segment is a `false` verdict.
    pub fn verify_segment(&self, digest: &Digest, segment: &SignatureSegment) -> bool {
        self.0
            .verify(
                Pkcs1v15Sign::new::<Sha256>(),
                digest.as_bytes(),
                segment.as_bytes(),
            )
            .is_ok()
    }

    /// Verifies a signature made over raw message bytes with no hashing.
    pub fn verify_direct(&self, message: &[u8], segment: &SignatureSegment) -> bool {
        self.0
            .verify(Pkcs1v15Sign::new_unprefixed(), message, segment.as_bytes())
            .is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits)", self.modulus_bits())
    }
}

#[derive(Clone)]
pub struct PrivateKey(RsaPrivateKey);

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.to_public_key())
    }

    pub fn modulus_len(&self) -> usize {
        self.0.size()
    }

    pub fn sign_digest(&self, digest: &Digest) -> Result<SignatureSegment> {
        self.0
            .sign(Pkcs1v15Sign::new::<Sha256>(), digest.as_bytes())
            .map(SignatureSegment)
            .map_err(|e| Error::Signing(e.to_string()))
    }

    /// Signs raw message bytes with no hashing step.
    pub fn sign_direct(&self, message: &[u8]) -> Result<SignatureSegment> {
        let max = self.modulus_len() - PKCS1_V15_OVERHEAD;
        if message.len() > max {
            return Err(Error::DirectModeTooLong {
                len: message.len(),
                max,
            });
        }
        self.0
            .sign(Pkcs1v15Sign::new_unprefixed(), message)
            .map(SignatureSegment)
            .map_err(|e| Error::Signing(e.to_string()))
    }

    pub fn to_pkcs8_der(&self) -> Vec<u8> {
        self.0
            .to_pkcs8_der()
            .expect("RSA private key encodes to PKCS#8")
            .as_bytes()
            .to_vec()
    }

    pub fn from_pkcs8_der(der: &[u8]) -> Result<Self> {
        let key =
            RsaPrivateKey::from_pkcs8_der(der).map_err(|e| Error::KeyMaterial(e.to_string()))?;
        key.validate()
            .map_err(|e| Error::KeyMaterial(e.to_string()))?;
        Ok(Self(key))
    }

    pub fn to_encoded(&self) -> String {
        encode64(&self.to_pkcs8_der())
    }

    pub fn from_encoded(text: &str) -> Result<Self> {
        Self::from_pkcs8_der(&decode64(text.trim())?)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey({} bits, ..)", self.modulus_len() * 8)
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    private: PrivateKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: CryptoRngCore + ?Sized>(rng: &mut R, modulus_bits: usize) -> Result<Self> {
        if !SUPPORTED_MODULUS_BITS.contains(&modulus_bits) {
            return Err(Error::UnsupportedKeySize(modulus_bits));
        }
        let key = RsaPrivateKey::new(rng, modulus_bits)
            .map_err(|e| Error::KeyGeneration(e.to_string()))?;
        Ok(Self::from_private(PrivateKey(key)))
    }

    pub fn from_private(private: PrivateKey) -> Self {
        let public = private.public_key();
        Self { private, public }
    }

    pub fn private_key(&self) -> &PrivateKey {
        &self.private
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn into_private(self) -> PrivateKey {
        self.private
    }
}

pub fn generate_keypair<R: CryptoRngCore + ?Sized>(
    rng: &mut R,
    modulus_bits: usize,
) -> Result<KeyPair> {
    KeyPair::generate(rng, modulus_bits)
}

pub fn sign_digest(digest: &Digest, key: &PrivateKey) -> Result<SignatureSegment> {
    key.sign_digest(digest)
}

pub fn verify_segment(digest: &Digest, segment: &SignatureSegment, key: &PublicKey) -> bool {
    key.verify_segment(digest, segment)
}

/// URL-safe base64 with padding.
pub fn encode64(bytes: &[u8]) -> String {
    URL_SAFE.encode(bytes)
}

pub fn decode64(text: &str) -> Result<Vec<u8>> {
    URL_SAFE.decode(text).map_err(|e| {
        let (offset, reason) = match e {
            DecodeError::InvalidByte(offset, byte) => {
                (offset, format!("illegal character {:?}", byte as char))
            }
            DecodeError::InvalidLastSymbol(offset, byte) => (
                offset,
                format!("non-canonical final symbol {:?}", byte as char),
            ),
            DecodeError::InvalidLength(len) => (len, "truncated input".to_string()),
            DecodeError::InvalidPadding => (text.len(), "bad padding".to_string()),
        };
        Error::Decode { offset, reason }
    })
}
