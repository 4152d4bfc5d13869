//! AES-128-CBC with PKCS#7 padding and a fresh random IV per encryption.
//!
//! CBC under a shared key gives chosen-plaintext security, which is what the
//! honest-but-curious relay server threat model needs; the blob's spec
//! digest doubles as a post-decryption corruption check. This is not
//! authenticated encryption and does not resist active tampering.

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::rngs::OsRng;
use rand::TryRngCore;

use super::{EnvelopeError, WeightBlob};

pub const KEY_LEN: usize = 16;
pub const BLOCK_LEN: usize = 16;

/// 128-bit shared secret; generated from OS randomness, distributed
/// out-of-band among trainers, never sent to the server.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
}

impl SymmetricKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        SymmetricKey { bytes }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print key material
        write!(f, "SymmetricKey(..)")
    }
}

/// IV plus CBC ciphertext; the only weight-derived thing the server sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherEnvelope {
    pub iv: [u8; BLOCK_LEN],
    pub ciphertext: Vec<u8>,
}

impl CipherEnvelope {
    /// Wire form: IV (16 bytes) followed by the ciphertext.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOCK_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.len() < 2 * BLOCK_LEN || (bytes.len() - BLOCK_LEN) % BLOCK_LEN != 0 {
            return Err(EnvelopeError::BadCiphertextLength(bytes.len()));
        }
        let mut iv = [0u8; BLOCK_LEN];
        iv.copy_from_slice(&bytes[..BLOCK_LEN]);
        Ok(CipherEnvelope { iv, ciphertext: bytes[BLOCK_LEN..].to_vec() })
    }
}

/// 16 uniformly random key bytes from the OS entropy source.
pub fn keygen() -> Result<SymmetricKey, EnvelopeError> {
    let mut bytes = [0u8; KEY_LEN];
    OsRng.try_fill_bytes(&mut bytes).map_err(|e| EnvelopeError::Rng(e.to_string()))?;
    Ok(SymmetricKey { bytes })
}

/// Key from a caller-supplied randomness source; lets tests reproduce keys.
pub fn keygen_from(mut fill: impl FnMut(&mut [u8])) -> SymmetricKey {
    let mut bytes = [0u8; KEY_LEN];
    fill(&mut bytes);
    SymmetricKey { bytes }
}

fn pkcs7_pad(data: &[u8]) -> Vec<u8> {
    let pad = BLOCK_LEN - (data.len() % BLOCK_LEN);
    let mut out = Vec::with_capacity(data.len() + pad);
    out.extend_from_slice(data);
    out.resize(data.len() + pad, pad as u8);
    out
}

fn pkcs7_unpad(data: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    if data.is_empty() || data.len() % BLOCK_LEN != 0 {
        return Err(EnvelopeError::BadPadding);
    }
    let pad = data[data.len() - 1] as usize;
    if pad == 0 || pad > BLOCK_LEN || pad > data.len() {
        return Err(EnvelopeError::BadPadding);
    }
    if data[data.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(EnvelopeError::BadPadding);
    }
    Ok(data[..data.len() - pad].to_vec())
}

fn encrypt_with_iv(key: &SymmetricKey, iv: [u8; BLOCK_LEN], plaintext: &[u8]) -> CipherEnvelope {
    let cipher = Aes128::new(GenericArray::from_slice(&key.bytes));
    let padded = pkcs7_pad(plaintext);
    let mut ciphertext = Vec::with_capacity(padded.len());
    let mut prev = iv;
    for chunk in padded.chunks_exact(BLOCK_LEN) {
        let mut block = [0u8; BLOCK_LEN];
        for i in 0..BLOCK_LEN {
            block[i] = chunk[i] ^ prev[i];
        }
        let mut ga = GenericArray::from(block);
        cipher.encrypt_block(&mut ga);
        prev.copy_from_slice(&ga);
        ciphertext.extend_from_slice(&ga);
    }
    CipherEnvelope { iv, ciphertext }
}

/// Encrypts a blob under `key` with a fresh random IV.
pub fn encrypt(key: &SymmetricKey, blob: &WeightBlob) -> Result<CipherEnvelope, EnvelopeError> {
    let mut iv = [0u8; BLOCK_LEN];
    OsRng.try_fill_bytes(&mut iv).map_err(|e| EnvelopeError::Rng(e.to_string()))?;
    Ok(encrypt_with_iv(key, iv, blob.as_bytes()))
}

/// Encrypts with a caller-chosen IV. The caller owns IV freshness; the
/// deterministic simulator draws IVs from a seeded stream so repeated runs
/// produce identical ciphertexts.
pub fn encrypt_iv(key: &SymmetricKey, iv: [u8; BLOCK_LEN], blob: &WeightBlob) -> CipherEnvelope {
    encrypt_with_iv(key, iv, blob.as_bytes())
}

/// Decrypts an envelope; a padding failure means a wrong key or corruption.
pub fn decrypt(key: &SymmetricKey, envelope: &CipherEnvelope) -> Result<WeightBlob, EnvelopeError> {
    let ct = &envelope.ciphertext;
    if ct.is_empty() || ct.len() % BLOCK_LEN != 0 {
        return Err(EnvelopeError::BadCiphertextLength(ct.len()));
    }
    let cipher = Aes128::new(GenericArray::from_slice(&key.bytes));
    let mut plaintext = Vec::with_capacity(ct.len());
    let mut prev = envelope.iv;
    for chunk in ct.chunks_exact(BLOCK_LEN) {
        let saved: [u8; BLOCK_LEN] = chunk.try_into().unwrap();
        let mut block = GenericArray::clone_from_slice(chunk);
        cipher.decrypt_block(&mut block);
        for i in 0..BLOCK_LEN {
            plaintext.push(block[i] ^ prev[i]);
        }
        prev = saved;
    }
    Ok(WeightBlob::from_bytes(pkcs7_unpad(&plaintext)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_key(fill: u8) -> SymmetricKey {
        SymmetricKey::from_bytes([fill; KEY_LEN])
    }

    #[test]
    fn keygen_produces_distinct_16_byte_keys() {
        let a = keygen().unwrap();
        let b = keygen().unwrap();
        assert_eq!(a.as_bytes().len(), 16);
        assert_ne!(a, b);
    }

    #[test]
    fn deterministic_source_reproduces_key() {
        let counting_fill = |buf: &mut [u8]| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = i as u8;
            }
        };
        let a = keygen_from(counting_fill);
        let b = keygen_from(counting_fill);
        assert_eq!(a, b);
    }

    #[test]
    fn roundtrip_identity() {
        let key = test_key(3);
        let blob = WeightBlob::from_bytes(vec![9u8; 100]);
        let env = encrypt(&key, &blob).unwrap();
        assert_eq!(decrypt(&key, &env).unwrap(), blob);
    }

    #[test]
    fn fresh_iv_makes_ciphertexts_differ() {
        let key = test_key(1);
        let blob = WeightBlob::from_bytes(vec![7u8; 64]);
        let a = encrypt(&key, &blob).unwrap();
        let b = encrypt(&key, &blob).unwrap();
        assert_ne!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn ciphertext_length_is_padded_multiple_of_block() {
        let key = test_key(2);
        for n in [0usize, 1, 15, 16, 17, 100] {
            let env = encrypt(&key, &WeightBlob::from_bytes(vec![0u8; n])).unwrap();
            assert_eq!(env.ciphertext.len() % BLOCK_LEN, 0);
            assert!(env.ciphertext.len() > n - (n % BLOCK_LEN));
        }
    }

    #[test]
    fn wrong_key_fails() {
        let blob = WeightBlob::from_bytes(vec![5u8; 48]);
        let env = encrypt(&test_key(1), &blob).unwrap();
        match decrypt(&test_key(2), &env) {
            Err(EnvelopeError::BadPadding) => {}
            Ok(plain) => assert_ne!(plain, blob, "wrong key must not reproduce the plaintext"),
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn envelope_wire_roundtrip() {
        let key = test_key(4);
        let env = encrypt(&key, &WeightBlob::from_bytes(vec![1u8; 40])).unwrap();
        let back = CipherEnvelope::from_bytes(&env.to_bytes()).unwrap();
        assert_eq!(back, env);
    }
}
