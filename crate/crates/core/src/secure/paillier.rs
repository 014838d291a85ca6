//! Paillier cryptosystem with generator `g = n + 1`.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

/// Miller–Rabin rounds; error probability at most `4^−32 = 2^−64`.
pub const MR_ROUNDS: usize = 32;

const SMALL_PRIMES: [u32; 24] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub n: BigUint,
    pub n_squared: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateKey {
    pub lambda: BigUint,
    pub mu: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeKeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
    pub key_bits: u64,
}

impl PublicKey {
    pub fn new(n: BigUint) -> Self {
        let n_squared = &n * &n;
        Self { n, n_squared }
    }

    /// SHA-256 of the big-endian modulus.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.n.to_bytes_be()).into()
    }

    /// `(1 + m·n) · r^n mod n²` with `r` drawn from `rng`.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let r = loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        (gm * r.modpow(&self.n, &self.n_squared)) % &self.n_squared
    }

    /// Ciphertext of the plaintext sum.
    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.n_squared
    }

    /// Ciphertext of `k · m`.
    pub fn mul_plain(&self, c: &BigUint, k: &BigUint) -> BigUint {
        c.modpow(k, &self.n_squared)
    }
}

impl HeKeyPair {
    pub fn decrypt(&self, c: &BigUint) -> BigUint {
        let n = &self.public.n;
        let x = c.modpow(&self.private.lambda, &self.public.n_squared);
        let l = (x - BigUint::one()) / n;
        (l * &self.private.mu) % n
    }
}

fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for p in SMALL_PRIMES.iter().map(|p| BigUint::from(*p)).chain([two.clone()]) {
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n1 = n - BigUint::one();
    let s = n1.trailing_zeros().expect("n > 2 so n-1 > 0");
    let d = &n1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut c = rng.gen_biguint(bits);
        // top two bits set so the product has the full width; odd
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, MR_ROUNDS, rng) {
            return c;
        }
    }
}

/// Deterministic key generation from `seed`.
pub fn keygen(bits: u64, seed_value: u64) -> Result<HeKeyPair> {
    if bits < 128 || bits % 2 != 0 {
        return Err(Error::invalid(format!("key size {bits} must be even and at least 128")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed::derive(seed_value, "paillier-keygen"));
    loop {
        let p = random_prime(bits / 2, &mut rng);
        let q = random_prime(bits / 2, &mut rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let p1 = &p - BigUint::one();
        let q1 = &q - BigUint::one();
        if !n.gcd(&(&p1 * &q1)).is_one() {
            continue;
        }
        let lambda = p1.lcm(&q1);
        // with g = n + 1, L(g^λ mod n²) = λ mod n
        let Some(mu) = (&lambda % &n).modinv(&n) else {
            continue;
        };
        return Ok(HeKeyPair {
            public: PublicKey::new(n),
            private: PrivateKey { lambda, mu },
            key_bits: bits,
        });
    }
}
