//! Canonical weight serialization and the shared-key cipher envelope.
//!
//! Weights travel as a `WeightBlob` — a bit-exact little-endian layout with
//! a spec digest so the receiver can reject weights for a different
//! architecture — and, on the server-aided path, inside a `CipherEnvelope`:
//! AES-128-CBC with PKCS#7 padding under a key the server never holds.

mod blob;
mod cipher;

pub use blob::{deserialize, serialize, spec_digest, WeightBlob, BLOB_HEADER_LEN, BLOB_MAGIC};
pub use cipher::{decrypt, encrypt, encrypt_iv, keygen, keygen_from, CipherEnvelope, SymmetricKey};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("blob truncated: {0} bytes")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unknown format version {0}")]
    UnknownVersion(u8),
    #[error("spec digest mismatch: weights were serialized for a different architecture")]
    DigestMismatch,
    #[error("declared {declared} values but payload holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("parameter count {got} does not match spec ({want})")]
    ParamCount { got: usize, want: usize },
    #[error("ciphertext length {0} is not a positive multiple of the block size")]
    BadCiphertextLength(usize),
    #[error("decryption failed: bad padding (wrong key or corrupted ciphertext)")]
    BadPadding,
    #[error("randomness source failed: {0}")]
    Rng(String),
}
