use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("unsupported modulus size {0} bits (expected 2048, 3072 or 4096)")]
    UnsupportedKeySize(usize),

    #[error("key generation failed: {0}")]
    KeyGeneration(String),

    #[error("signing failed: {0}")]
    Signing(String),

    #[error("malformed key material: {0}")]
    KeyMaterial(String),

    #[error("invalid base64url at offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("malformed key-code: {0}")]
    KeyCode(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("watermark payload must not be empty")]
    EmptyPayload,

    #[error("watermark payload of {0} bytes exceeds the 65535-byte frame limit")]
    PayloadTooLarge(usize),

    #[error("watermark needs {required} bytes of capacity, image offers {available}")]
    Capacity { required: usize, available: usize },

    #[error(
        "image {index}: watermark needs {required} bytes of capacity, image offers {available}"
    )]
    ImageCapacity {
        index: usize,
        required: usize,
        available: usize,
    },

    #[error("message is {len} bytes but direct signing allows at most {max}; use hashed mode")]
    DirectModeTooLong { len: usize, max: usize },

    #[error("image {index}: encoding failed: {reason}")]
    ImageEncoding { index: usize, reason: String },
}
