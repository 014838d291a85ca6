use num_bigint::{BigInt, BigUint, Sign};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps reals to signed integers `round(v·2^s)` after clipping to
/// `[−clip, clip]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
    pub clip: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self {
            scale_bits: 20,
            clip: 1.0e6,
        }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32, clip: f64) -> Result<Self> {
        let c = Self { scale_bits, clip };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_bits > 52 {
            return Err(Error::invalid(format!("scale bits {} exceed 52", self.scale_bits)));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::invalid(format!("clip range {} must be positive", self.clip)));
        }
        if self.clip * self.scale() >= 2f64.powi(100) {
            return Err(Error::invalid("clip range too wide for the fixed-point scale"));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.scale_bits as i32)
    }

    /// Worst-case round-trip error inside the clip range.
    pub fn max_error(&self) -> f64 {
        0.5 / self.scale()
    }

    /// Encoded integer and whether the value had to be clipped.
    pub fn encode(&self, v: f64) -> (i128, bool) {
        let clipped = if v.is_nan() { 0.0 } else { v.clamp(-self.clip, self.clip) };
        let was_clipped = clipped != v;
        ((clipped * self.scale()).round() as i128, was_clipped)
    }

    pub fn decode(&self, k: i128) -> f64 {
        k as f64 / self.scale()
    }

    pub fn decode_big(&self, k: &BigInt) -> f64 {
        // exact for |k| < 2^127, which the clip range guarantees per addend
        let (sign, mag) = k.to_u64_digits();
        let mut v = 0.0;
        for d in mag.iter().rev() {
            v = v * 2f64.powi(64) + *d as f64;
        }
        if sign == Sign::Minus {
            v = -v;
        }
        v / self.scale()
    }
}

/// Plaintext residue in `[0, n)` for a signed value (negative values wrap).
pub fn to_residue(k: i128, n: &BigUint) -> BigUint {
    let big = BigInt::from(k);
    let n_int = BigInt::from(n.clone());
    let r = ((big % &n_int) + &n_int) % &n_int;
    r.to_biguint().expect("non-negative after reduction")
}

/// Signed value of a residue: values above `n/2` are negative.
pub fn from_residue(m: &BigUint, n: &BigUint) -> BigInt {
    if m > &(n >> 1) {
        BigInt::from(m.clone()) - BigInt::from(n.clone())
    } else {
        BigInt::from(m.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bound() {
        let c = FixedPointCodec::default();
        for i in 0..1000 {
            let v = (i as f64 * 0.7371).sin() * 10.0;
            let (k, clipped) = c.encode(v);
            assert!(!clipped);
            assert!((c.decode(k) - v).abs() <= c.max_error());
        }
        assert_eq!(c.encode(2e6), ((1e6 * c.scale()) as i128, true));
    }

    #[test]
    fn residues_wrap() {
        let n = BigUint::from(1000u32);
        assert_eq!(to_residue(-3, &n), BigUint::from(997u32));
        assert_eq!(from_residue(&BigUint::from(997u32), &n), BigInt::from(-3));
        assert_eq!(from_residue(&BigUint::from(4u32), &n), BigInt::from(4));
    }
}
