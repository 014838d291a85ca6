//! Additively homomorphic transport of client updates.
//!
//! Client parameters are quantized with a [`FixedPointCodec`] and encrypted
//! coordinate-wise under a Paillier public key. The server can add
//! ciphertexts (and scale them by integer weights) without decrypting, which
//! is enough for a plain or sample-weighted mean. Trimming needs the values
//! in the clear, so SWA decrypts before aggregating.

pub mod codec;
pub mod paillier;

use std::io::{Read, Write};
use std::path::Path;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use codec::FixedPointCodec;
pub use paillier::{keygen, HeKeyPair, PrivateKey, PublicKey};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::params::ParameterVector;

pub const PAYLOAD_MAGIC: &[u8; 7] = b"EPFLHE1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedVector {
    pub ciphertexts: Vec<BigUint>,
    pub key_fingerprint: [u8; 32],
    pub scale_bits: u32,
    /// Number of plaintext addends folded into each ciphertext (weighted).
    pub weight: u64,
}

impl EncryptedVector {
    pub fn len(&self) -> usize {
        self.ciphertexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ciphertexts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encrypted {
    pub vector: EncryptedVector,
    /// Coordinates that were outside the clip range.
    pub clipped: usize,
}

/// Encrypts every coordinate. The nonce for coordinate `j` comes from a
/// ChaCha stream keyed by `nonce_seed` with stream id `j`, so the result
/// does not depend on the execution strategy.
pub fn encrypt_vector(
    params: &ParameterVector,
    key: &PublicKey,
    codec: &FixedPointCodec,
    nonce_seed: u64,
    exec: Execution,
) -> Result<Encrypted> {
    codec.validate()?;
    let out = exec::map_range(exec, params.len(), |j| {
        let (k, clipped) = codec.encode(params.values[j]);
        let m = codec::to_residue(k, &key.n);
        let mut rng = ChaCha8Rng::seed_from_u64(nonce_seed);
        rng.set_stream(j as u64);
        (key.encrypt(&m, &mut rng), clipped)
    });
    let clipped = out.iter().filter(|(_, c)| *c).count();
    if clipped > 0 {
        log::warn!("{clipped} coordinate(s) clipped to ±{} before encryption", codec.clip);
    }
    Ok(Encrypted {
        vector: EncryptedVector {
            ciphertexts: out.into_iter().map(|(c, _)| c).collect(),
            key_fingerprint: key.fingerprint(),
            scale_bits: codec.scale_bits,
            weight: 1,
        },
        clipped,
    })
}

fn check_compatible(a: &EncryptedVector, b: &EncryptedVector) -> Result<()> {
    if a.key_fingerprint != b.key_fingerprint {
        return Err(Error::invalid("ciphertexts were produced under different keys"));
    }
    if a.scale_bits != b.scale_bits {
        return Err(Error::invalid(format!(
            "codec mismatch: 2^{} vs 2^{}",
            a.scale_bits, b.scale_bits
        )));
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "add_encrypted",
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    Ok(())
}

fn check_key(v: &EncryptedVector, key: &PublicKey) -> Result<()> {
    if v.key_fingerprint != key.fingerprint() {
        return Err(Error::invalid("ciphertexts were produced under a different key"));
    }
    Ok(())
}

/// Coordinate-wise ciphertext product: decrypts to the plaintext sum.
pub fn add_encrypted(a: &EncryptedVector, b: &EncryptedVector, key: &PublicKey, exec: Execution) -> Result<EncryptedVector> {
    check_compatible(a, b)?;
    check_key(a, key)?;
    let ciphertexts = exec::map_range(exec, a.len(), |j| key.add(&a.ciphertexts[j], &b.ciphertexts[j]));
    Ok(EncryptedVector {
        ciphertexts,
        key_fingerprint: a.key_fingerprint,
        scale_bits: a.scale_bits,
        weight: a.weight + b.weight,
    })
}

/// Scales the encrypted plaintexts by a non-negative integer.
pub fn scale_encrypted(a: &EncryptedVector, k: u64, key: &PublicKey, exec: Execution) -> Result<EncryptedVector> {
    check_key(a, key)?;
    let kb = BigUint::from(k);
    let ciphertexts = exec::map_range(exec, a.len(), |j| key.mul_plain(&a.ciphertexts[j], &kb));
    Ok(EncryptedVector {
        ciphertexts,
        key_fingerprint: a.key_fingerprint,
        scale_bits: a.scale_bits,
        weight: a.weight * k,
    })
}

/// Decrypts and decodes to reals (without dividing by `weight`).
pub fn decrypt_vector(v: &EncryptedVector, keys: &HeKeyPair, codec: &FixedPointCodec, exec: Execution) -> Result<ParameterVector> {
    check_key(v, &keys.public)?;
    if v.scale_bits != codec.scale_bits {
        return Err(Error::invalid(format!(
            "codec mismatch: payload 2^{}, decoder 2^{}",
            v.scale_bits, codec.scale_bits
        )));
    }
    let n = &keys.public.n;
    let values = exec::map_range(exec, v.len(), |j| {
        let m = keys.decrypt(&v.ciphertexts[j]);
        codec.decode_big(&codec::from_residue(&m, n))
    });
    Ok(ParameterVector::new(values))
}

/// Sum of encrypted vectors, each optionally scaled by an integer weight.
pub fn encrypted_weighted_sum(
    parts: &[EncryptedVector],
    weights: Option<&[u64]>,
    key: &PublicKey,
    exec: Execution,
) -> Result<EncryptedVector> {
    if parts.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    if let Some(w) = weights {
        if w.len() != parts.len() {
            return Err(Error::invalid("one weight per encrypted vector required"));
        }
    }
    let scaled = |i: usize| -> Result<EncryptedVector> {
        match weights {
            Some(w) => scale_encrypted(&parts[i], w[i], key, exec),
            None => Ok(parts[i].clone()),
        }
    };
    let mut acc = scaled(0)?;
    for i in 1..parts.len() {
        acc = add_encrypted(&acc, &scaled(i)?, key, exec)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecureMeanReport {
    pub mean: ParameterVector,
    pub clipped: usize,
}

/// Each client encrypts its update, the server multiplies the ciphertexts,
/// decrypts the sum once and divides by the number of clients.
pub fn secure_mean_demo(
    updates: &[ParameterVector],
    keys: &HeKeyPair,
    codec: &FixedPointCodec,
    seed_value: u64,
    exec: Execution,
) -> Result<SecureMeanReport> {
    if updates.is_empty() {
        return Err(Error::invalid("no client updates"));
    }
    let mut parts = Vec::with_capacity(updates.len());
    let mut clipped = 0;
    for (i, u) in updates.iter().enumerate() {
        let nonce = crate::seed::derive_indexed(seed_value, "he-client-nonce", i as u64);
        let e = encrypt_vector(u, &keys.public, codec, nonce, exec)?;
        clipped += e.clipped;
        parts.push(e.vector);
    }
    let sum = encrypted_weighted_sum(&parts, None, &keys.public, exec)?;
    let total = decrypt_vector(&sum, keys, codec, exec)?;
    Ok(SecureMeanReport {
        mean: total.scaled(1.0 / updates.len() as f64),
        clipped,
    })
}

/// Payload layout: magic `EPFLHE1`, 32-byte key fingerprint, u32 scale bits,
/// u64 weight, u64 length (all big-endian), then per coordinate a u32
/// big-endian byte length and the big-endian ciphertext.
pub fn write_payload(w: &mut impl Write, v: &EncryptedVector) -> std::io::Result<()> {
    w.write_all(PAYLOAD_MAGIC)?;
    w.write_all(&v.key_fingerprint)?;
    w.write_all(&v.scale_bits.to_be_bytes())?;
    w.write_all(&v.weight.to_be_bytes())?;
    w.write_all(&(v.len() as u64).to_be_bytes())?;
    for c in &v.ciphertexts {
        let b = c.to_bytes_be();
        w.write_all(&(b.len() as u32).to_be_bytes())?;
        w.write_all(&b)?;
    }
    Ok(())
}

pub fn read_payload(r: &mut impl Read) -> Result<EncryptedVector> {
    let fmt = |e: std::io::Error| Error::format("encrypted payload", e.to_string());
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != PAYLOAD_MAGIC {
        return Err(Error::format("encrypted payload", "bad magic"));
    }
    let mut key_fingerprint = [0u8; 32];
    r.read_exact(&mut key_fingerprint).map_err(fmt)?;
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(fmt)?;
    let scale_bits = u32::from_be_bytes(b4);
    r.read_exact(&mut b8).map_err(fmt)?;
    let weight = u64::from_be_bytes(b8);
    r.read_exact(&mut b8).map_err(fmt)?;
    let d = u64::from_be_bytes(b8) as usize;
    let mut ciphertexts = Vec::with_capacity(d.min(1 << 20));
    for _ in 0..d {
        r.read_exact(&mut b4).map_err(fmt)?;
        let len = u32::from_be_bytes(b4) as usize;
        if len > 1 << 16 {
            return Err(Error::format("encrypted payload", "ciphertext length out of range"));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(fmt)?;
        ciphertexts.push(BigUint::from_bytes_be(&buf));
    }
    Ok(EncryptedVector {
        ciphertexts,
        key_fingerprint,
        scale_bits,
        weight,
    })
}

pub fn save_payload(path: &Path, v: &EncryptedVector) -> Result<()> {
    let mut bytes = Vec::new();
    write_payload(&mut bytes, v).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_payload(path: &Path) -> Result<EncryptedVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_payload(&mut bytes.as_slice())
}
