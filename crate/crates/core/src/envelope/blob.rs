//! Bit-exact weight serialization.
//!
//! Layout: magic `WRLY` (4) | version u8 = 1 | spec digest (32, SHA-256 of
//! the canonical spec encoding) | param count u64 LE | values f64 LE × count.
//! Two parameter sets are equal iff their blobs are byte-equal.

use sha2::{Digest, Sha256};

use super::EnvelopeError;
use crate::nn::{NetworkSpec, ParamSet};

pub const BLOB_MAGIC: &[u8; 4] = b"WRLY";
pub const BLOB_VERSION: u8 = 1;
/// magic + version + digest + count
pub const BLOB_HEADER_LEN: usize = 4 + 1 + 32 + 8;

/// A serialized parameter set ready for encryption or the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightBlob {
    bytes: Vec<u8>,
}

impl WeightBlob {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Wraps raw bytes without validating; `deserialize` performs the checks.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        WeightBlob { bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// SHA-256 of the canonical spec encoding.
pub fn spec_digest(spec: &NetworkSpec) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(spec.canonical_bytes());
    hasher.finalize().into()
}

/// Serializes `params` for `spec`; the roundtrip through `deserialize` is
/// bit-identical.
pub fn serialize(spec: &NetworkSpec, params: &ParamSet) -> Result<WeightBlob, EnvelopeError> {
    let want = spec.param_count();
    if params.len() != want {
        return Err(EnvelopeError::ParamCount { got: params.len(), want });
    }
    let mut bytes = Vec::with_capacity(BLOB_HEADER_LEN + 8 * params.len());
    bytes.extend_from_slice(BLOB_MAGIC);
    bytes.push(BLOB_VERSION);
    bytes.extend_from_slice(&spec_digest(spec));
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(WeightBlob { bytes })
}

/// Parses and validates a blob against the receiver's spec.
pub fn deserialize(blob: &WeightBlob, spec: &NetworkSpec) -> Result<ParamSet, EnvelopeError> {
    let bytes = &blob.bytes;
    if bytes.len() < BLOB_HEADER_LEN {
        return Err(EnvelopeError::Truncated(bytes.len()));
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(EnvelopeError::BadMagic);
    }
    if bytes[4] != BLOB_VERSION {
        return Err(EnvelopeError::UnknownVersion(bytes[4]));
    }
    if bytes[5..37] != spec_digest(spec) {
        return Err(EnvelopeError::DigestMismatch);
    }
    let declared = u64::from_le_bytes(bytes[37..45].try_into().unwrap());
    let payload = &bytes[BLOB_HEADER_LEN..];
    if payload.len() % 8 != 0 || (payload.len() / 8) as u64 != declared {
        return Err(EnvelopeError::CountMismatch {
            declared,
            actual: (payload.len() / 8) as u64,
        });
    }
    if declared as usize != spec.param_count() {
        return Err(EnvelopeError::ParamCount {
            got: declared as usize,
            want: spec.param_count(),
        });
    }
    let mut values = Vec::with_capacity(declared as usize);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(EnvelopeError::NonFinite(i));
        }
        values.push(v);
    }
    Ok(ParamSet::new(values))
}
