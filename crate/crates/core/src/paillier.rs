//! Additively homomorphic Paillier encryption.
//!
//! Used for privacy-preserving aggregate counts: each station encrypts its
//! local count under the submitting user's Paillier public key and folds it
//! into a running ciphertext with `add`, so intermediate totals stay opaque
//! to every station and only the key holder can decrypt the final sum.
//!
//! The scheme fixes the generator at `g = n + 1`, which makes encryption a
//! single multiplication `(1 + m·n) · rⁿ mod n²` instead of a full
//! exponentiation. Decryption uses `λ = lcm(p−1, q−1)` and
//! `μ = λ⁻¹ mod n`.

use crate::crypto::{hash, Digest};
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::One;
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Minimum modulus size for real use.
pub const MIN_PAILLIER_BITS: usize = 1024;
/// Floor for the explicitly-insecure test path.
pub const MIN_INSECURE_PAILLIER_BITS: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum PaillierError {
    #[error("modulus size {bits} bits is below the {min}-bit minimum")]
    KeyTooShort { bits: usize, min: usize },
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("plaintext is not smaller than the modulus")]
    PlaintextOutOfRange,
    #[error("ciphertext was produced under a different modulus")]
    FingerprintMismatch,
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),
    #[error("malformed public key: {0}")]
    MalformedKey(String),
}

/// Paillier public key. The fingerprint (SHA-256 of the big-endian modulus
/// bytes) travels with every ciphertext so operands under different moduli
/// can never be combined silently.
#[derive(Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    fingerprint: Digest,
}

impl fmt::Debug for PaillierPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PaillierPublicKey({} bits, {})",
            self.n.bits(),
            self.fingerprint
        )
    }
}

impl PaillierPublicKey {
    fn from_modulus(n: BigUint) -> Self {
        let fingerprint = hash(&n.to_bytes_be());
        let n_squared = &n * &n;
        PaillierPublicKey {
            n,
            n_squared,
            fingerprint,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn fingerprint(&self) -> &Digest {
        &self.fingerprint
    }
}

/// Serialized form: the modulus as lowercase hex. The generator is always
/// `n + 1` and the fingerprint is recomputed, so neither is stored.
#[derive(Serialize, Deserialize)]
struct PublicKeyWire {
    n_hex: String,
}

impl Serialize for PaillierPublicKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PublicKeyWire {
            n_hex: self.n.to_str_radix(16),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PaillierPublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PublicKeyWire::deserialize(deserializer)?;
        let n = BigUint::parse_bytes(wire.n_hex.as_bytes(), 16)
            .ok_or_else(|| serde::de::Error::custom("modulus is not valid hex"))?;
        if n.bits() < MIN_INSECURE_PAILLIER_BITS as u64 {
            return Err(serde::de::Error::custom("modulus below minimum size"));
        }
        Ok(PaillierPublicKey::from_modulus(n))
    }
}

/// Paillier keypair; `lambda`/`mu` form the private decryption exponents.
#[derive(Clone)]
pub struct PaillierKeyPair {
    public: PaillierPublicKey,
    lambda: BigUint,
    mu: BigUint,
}

impl fmt::Debug for PaillierKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PaillierKeyPair({:?}, private redacted)", self.public)
    }
}

/// A Paillier ciphertext bound to its key's modulus fingerprint.
#[derive(Clone, PartialEq, Eq)]
pub struct PaillierCiphertext {
    value: BigUint,
    fingerprint: Digest,
}

impl fmt::Debug for PaillierCiphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PaillierCiphertext({} bits)", self.value.bits())
    }
}

#[derive(Serialize, Deserialize)]
struct CiphertextWire {
    value_hex: String,
    fingerprint_hex: String,
}

impl Serialize for PaillierCiphertext {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CiphertextWire {
            value_hex: self.value.to_str_radix(16),
            fingerprint_hex: self.fingerprint.to_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PaillierCiphertext {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = CiphertextWire::deserialize(deserializer)?;
        let value = BigUint::parse_bytes(wire.value_hex.as_bytes(), 16)
            .ok_or_else(|| serde::de::Error::custom("ciphertext is not valid hex"))?;
        let fingerprint = Digest::from_hex(&wire.fingerprint_hex).map_err(serde::de::Error::custom)?;
        Ok(PaillierCiphertext { value, fingerprint })
    }
}

impl PaillierKeyPair {
    /// Generate a keypair with a modulus of at least `MIN_PAILLIER_BITS`.
    pub fn generate(bits: usize) -> Result<Self, PaillierError> {
        if bits < MIN_PAILLIER_BITS {
            return Err(PaillierError::KeyTooShort {
                bits,
                min: MIN_PAILLIER_BITS,
            });
        }
        Self::generate_unchecked(bits)
    }

    /// Test-only escape hatch: permits small moduli (≥ 256 bits) that are
    /// cryptographically worthless but fast. Never use outside tests.
    pub fn generate_insecure(bits: usize) -> Result<Self, PaillierError> {
        if bits < MIN_INSECURE_PAILLIER_BITS {
            return Err(PaillierError::KeyTooShort {
                bits,
                min: MIN_INSECURE_PAILLIER_BITS,
            });
        }
        Self::generate_unchecked(bits)
    }

    fn generate_unchecked(bits: usize) -> Result<Self, PaillierError> {
        let one = BigUint::one();
        loop {
            let p = glass_pumpkin::prime::from_rng(bits / 2, &mut OsRng)
                .map_err(|e| PaillierError::KeyGeneration(e.to_string()))?;
            let q = glass_pumpkin::prime::from_rng(bits - bits / 2, &mut OsRng)
                .map_err(|e| PaillierError::KeyGeneration(e.to_string()))?;
            if p == q {
                continue;
            }
            let n = &p * &q;
            // Two k/2-bit primes can multiply to k−1 bits; retry so the
            // modulus is never narrower than requested.
            if n.bits() < bits as u64 {
                continue;
            }
            let p1 = &p - &one;
            let q1 = &q - &one;
            // gcd(n, (p−1)(q−1)) = 1 guarantees λ is invertible mod n.
            if (&p1 * &q1).gcd(&n) != one {
                continue;
            }
            let lambda = p1.lcm(&q1);
            let mu = match modinv(&lambda, &n) {
                Some(mu) => mu,
                None => continue,
            };
            return Ok(PaillierKeyPair {
                public: PaillierPublicKey::from_modulus(n),
                lambda,
                mu,
            });
        }
    }

    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    /// Decrypt: `L(c^λ mod n²) · μ mod n` with `L(x) = (x−1)/n`.
    pub fn decrypt(&self, ciphertext: &PaillierCiphertext) -> Result<BigUint, PaillierError> {
        if ciphertext.fingerprint != self.public.fingerprint {
            return Err(PaillierError::FingerprintMismatch);
        }
        let n = &self.public.n;
        let n2 = &self.public.n_squared;
        if ciphertext.value >= *n2 || ciphertext.value.gcd(n2) != BigUint::one() {
            return Err(PaillierError::MalformedCiphertext(
                "value outside the ciphertext group".into(),
            ));
        }
        let x = ciphertext.value.modpow(&self.lambda, n2);
        let l = (&x - BigUint::one()) / n;
        Ok((l * &self.mu) % n)
    }
}

/// Encrypt `m < n`: `(1 + m·n) · rⁿ mod n²` with `r` drawn uniformly from
/// the units mod n. Randomized: equal plaintexts yield distinct ciphertexts.
pub fn encrypt(
    plaintext: &BigUint,
    key: &PaillierPublicKey,
) -> Result<PaillierCiphertext, PaillierError> {
    let n = &key.n;
    let n2 = &key.n_squared;
    if plaintext >= n {
        return Err(PaillierError::PlaintextOutOfRange);
    }
    let r = loop {
        let candidate = OsRng.gen_biguint_below(n);
        if !num_traits::Zero::is_zero(&candidate) && candidate.gcd(n) == BigUint::one() {
            break candidate;
        }
    };
    // g = n + 1 makes g^m mod n² collapse to 1 + m·n.
    let g_m = (BigUint::one() + plaintext * n) % n2;
    let value = (g_m * r.modpow(n, n2)) % n2;
    Ok(PaillierCiphertext {
        value,
        fingerprint: key.fingerprint,
    })
}

/// Homomorphic addition: the product of ciphertexts mod n² encrypts the sum
/// of the plaintexts. Both operands must carry the key's fingerprint.
pub fn add(
    a: &PaillierCiphertext,
    b: &PaillierCiphertext,
    key: &PaillierPublicKey,
) -> Result<PaillierCiphertext, PaillierError> {
    if a.fingerprint != key.fingerprint || b.fingerprint != key.fingerprint {
        return Err(PaillierError::FingerprintMismatch);
    }
    Ok(PaillierCiphertext {
        value: (&a.value * &b.value) % &key.n_squared,
        fingerprint: key.fingerprint,
    })
}

fn modinv(a: &BigUint, n: &BigUint) -> Option<BigUint> {
    let e = num_bigint::BigInt::from(a.clone()).extended_gcd(&num_bigint::BigInt::from(n.clone()));
    if e.gcd != num_bigint::BigInt::one() {
        return None;
    }
    let n_int = num_bigint::BigInt::from(n.clone());
    let inv = ((e.x % &n_int) + &n_int) % &n_int;
    inv.to_biguint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use std::sync::OnceLock;

    /// Small insecure key shared across tests; generation dominates runtime.
    fn small_key() -> &'static PaillierKeyPair {
        static KEY: OnceLock<PaillierKeyPair> = OnceLock::new();
        KEY.get_or_init(|| PaillierKeyPair::generate_insecure(256).unwrap())
    }

    fn enc_u64(v: u64, key: &PaillierPublicKey) -> PaillierCiphertext {
        encrypt(&BigUint::from(v), key).unwrap()
    }

    #[test]
    fn rejects_small_moduli_without_explicit_insecure_path() {
        assert!(matches!(
            PaillierKeyPair::generate(512),
            Err(PaillierError::KeyTooShort { bits: 512, min: 1024 })
        ));
        assert!(matches!(
            PaillierKeyPair::generate_insecure(128),
            Err(PaillierError::KeyTooShort { bits: 128, min: 256 })
        ));
    }

    #[test]
    fn zero_round_trips_under_a_full_size_key() {
        let kp = PaillierKeyPair::generate(1024).unwrap();
        assert!(kp.public().modulus().bits() >= 1024);
        let ct = encrypt(&BigUint::zero(), kp.public()).unwrap();
        assert_eq!(kp.decrypt(&ct).unwrap(), BigUint::zero());
    }

    #[test]
    fn round_trips_random_plaintexts() {
        use rand::{Rng, SeedableRng};
        let kp = small_key();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = BigUint::from(rng.gen::<u64>());
            let ct = encrypt(&m, kp.public()).unwrap();
            assert_eq!(kp.decrypt(&ct).unwrap(), m);
        }
    }

    #[test]
    fn encryption_is_randomized() {
        let kp = small_key();
        let m = BigUint::from(42u32);
        let a = encrypt(&m, kp.public()).unwrap();
        let b = encrypt(&m, kp.public()).unwrap();
        assert_ne!(a, b);
        assert_eq!(kp.decrypt(&a).unwrap(), kp.decrypt(&b).unwrap());
    }

    #[test]
    fn addition_matches_plaintext_sum() {
        let kp = small_key();
        let sum = add(&enc_u64(2, kp.public()), &enc_u64(3, kp.public()), kp.public()).unwrap();
        assert_eq!(kp.decrypt(&sum).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn folding_station_counts_yields_the_total() {
        let kp = small_key();
        let mut running = enc_u64(9, kp.public());
        for count in [8u64, 7] {
            running = add(&running, &enc_u64(count, kp.public()), kp.public()).unwrap();
        }
        assert_eq!(kp.decrypt(&running).unwrap(), BigUint::from(24u32));
    }

    #[test]
    fn addition_is_commutative_and_associative_in_plaintext() {
        let kp = small_key();
        let (a, b, c) = (
            enc_u64(10, kp.public()),
            enc_u64(20, kp.public()),
            enc_u64(30, kp.public()),
        );
        let ab_c = add(&add(&a, &b, kp.public()).unwrap(), &c, kp.public()).unwrap();
        let a_bc = add(&a, &add(&b, &c, kp.public()).unwrap(), kp.public()).unwrap();
        assert_eq!(kp.decrypt(&ab_c).unwrap(), BigUint::from(60u32));
        assert_eq!(kp.decrypt(&a_bc).unwrap(), BigUint::from(60u32));
    }

    #[test]
    fn adding_the_identity_leaves_plaintext_unchanged() {
        let kp = small_key();
        let m = enc_u64(77, kp.public());
        let zero = enc_u64(0, kp.public());
        let sum = add(&m, &zero, kp.public()).unwrap();
        assert_eq!(kp.decrypt(&sum).unwrap(), BigUint::from(77u32));
    }

    #[test]
    fn rejects_plaintext_at_or_above_modulus() {
        let kp = small_key();
        assert!(matches!(
            encrypt(kp.public().modulus(), kp.public()),
            Err(PaillierError::PlaintextOutOfRange)
        ));
    }

    #[test]
    fn rejects_cross_key_operands() {
        let kp_a = small_key();
        let kp_b = PaillierKeyPair::generate_insecure(256).unwrap();
        let a = enc_u64(1, kp_a.public());
        let b = enc_u64(2, kp_b.public());
        assert!(matches!(
            add(&a, &b, kp_a.public()),
            Err(PaillierError::FingerprintMismatch)
        ));
        assert!(matches!(
            kp_a.decrypt(&b),
            Err(PaillierError::FingerprintMismatch)
        ));
    }

    #[test]
    fn ciphertext_serde_round_trips_with_hex_fields() {
        let kp = small_key();
        let ct = enc_u64(123, kp.public());
        let json = serde_json::to_value(&ct).unwrap();
        assert!(json["value_hex"].is_string());
        assert_eq!(json["fingerprint_hex"], kp.public().fingerprint().to_hex());
        let back: PaillierCiphertext = serde_json::from_value(json).unwrap();
        assert_eq!(kp.decrypt(&back).unwrap(), BigUint::from(123u32));
    }

    #[test]
    fn public_key_serde_round_trips() {
        let kp = small_key();
        let json = serde_json::to_string(kp.public()).unwrap();
        let back: PaillierPublicKey = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, kp.public());
        // Fingerprint is recomputed, so ciphertexts stay compatible.
        let ct = encrypt(&BigUint::from(6u32), &back).unwrap();
        assert_eq!(kp.decrypt(&ct).unwrap(), BigUint::from(6u32));
    }
}
