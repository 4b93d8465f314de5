//! Identity creation: key pairs, addresses and simulated signatures.
//!
//! Signatures are a keyed digest `H(sk || message)`. Verification looks the
//! secret up in a process-wide, append-only registry populated by
//! [`generate_keypair`]. The [`SignatureScheme`] trait is the seam for a real
//! scheme.

use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digest::{hash_parts, Digest};
use crate::encoding::{decode_base16, decode_base58, encode_base16, encode_base58, DecodeError};

/// Security parameter in bits. Seeds of any non-zero length are stretched to it.
pub const KAPPA_BITS: usize = 256;
pub const ADDRESS_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("seed must not be empty")]
    EmptySeed,
    #[error("public key must be 32 bytes, got {0}")]
    MalformedKey(usize),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("address payload must be 20 bytes, got {0}")]
    BadAddressLength(usize),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey(pub [u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<PublicKey, IdentityError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| IdentityError::MalformedKey(bytes.len()))?;
        Ok(PublicKey(arr))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct KeyPair {
    pub secret_key: SecretKey,
    pub public_key: PublicKey,
}

impl KeyPair {
    pub fn address(&self, scheme: AddressScheme) -> Address {
        Address::from_public_key(&self.public_key, scheme)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Signature(pub [u8; 32]);

/// Text encoding used for an address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum AddressScheme {
    Base16Eth,
    Base58Btc,
}

/// A 20-byte account identifier plus the scheme it is displayed in.
///
/// Equality and ordering consider the scheme too; the simulator itself only
/// ever uses [`AddressScheme::Base16Eth`] for accounts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub scheme: AddressScheme,
    pub payload: [u8; ADDRESS_LEN],
}

impl Address {
    pub const ZERO: Address = Address {
        scheme: AddressScheme::Base16Eth,
        payload: [0u8; ADDRESS_LEN],
    };

    pub fn from_payload(payload: [u8; ADDRESS_LEN], scheme: AddressScheme) -> Address {
        Address { scheme, payload }
    }

    fn from_public_key(pk: &PublicKey, scheme: AddressScheme) -> Address {
        let d = hash_parts(&[b"addr", &pk.0]);
        let mut payload = [0u8; ADDRESS_LEN];
        payload.copy_from_slice(&d.0[..ADDRESS_LEN]);
        Address { scheme, payload }
    }

    pub fn text(&self) -> String {
        match self.scheme {
            AddressScheme::Base16Eth => encode_base16(&self.payload),
            AddressScheme::Base58Btc => encode_base58(&self.payload),
        }
    }

    pub fn parse(text: &str, scheme: AddressScheme) -> Result<Address, IdentityError> {
        let raw = match scheme {
            AddressScheme::Base16Eth => decode_base16(text)?,
            AddressScheme::Base58Btc => decode_base58(text)?,
        };
        let payload: [u8; ADDRESS_LEN] = raw
            .as_slice()
            .try_into()
            .map_err(|_| IdentityError::BadAddressLength(raw.len()))?;
        Ok(Address { scheme, payload })
    }

    /// Short form for logs.
    pub fn short(&self) -> String {
        let t = self.text();
        if t.len() > 12 {
            format!("{}..{}", &t[..8], &t[t.len() - 4..])
        } else {
            t
        }
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.short())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let scheme = if s.starts_with("0x") {
            AddressScheme::Base16Eth
        } else {
            AddressScheme::Base58Btc
        };
        Address::parse(&s, scheme).map_err(serde::de::Error::custom)
    }
}

/// Deterministically derive a key pair from a seed.
pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, IdentityError> {
    if seed.is_empty() {
        return Err(IdentityError::EmptySeed);
    }
    let sk = SecretKey(hash_parts(&[b"sk", seed]).0);
    let kp = KeyPair {
        secret_key: sk,
        public_key: public_from_secret(&sk),
    };
    registry().register(&kp);
    Ok(kp)
}

pub fn public_from_secret(sk: &SecretKey) -> PublicKey {
    PublicKey(hash_parts(&[b"pk", &sk.0]).0)
}

/// Address for a raw public key. The payload is the first 20 bytes of its digest.
pub fn derive_address(pk: &[u8], scheme: AddressScheme) -> Result<Address, IdentityError> {
    let pk = PublicKey::from_slice(pk)?;
    Ok(Address::from_public_key(&pk, scheme))
}

pub trait SignatureScheme: Send + Sync {
    fn sign(&self, sk: &SecretKey, message: &[u8]) -> Signature;
    fn verify(&self, pk: &PublicKey, message: &[u8], sig: &Signature) -> bool;
}

/// Keyed-digest signatures backed by the key registry.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimulatedScheme;

impl SignatureScheme for SimulatedScheme {
    fn sign(&self, sk: &SecretKey, message: &[u8]) -> Signature {
        Signature(hash_parts(&[b"sig", &sk.0, message]).0)
    }

    fn verify(&self, pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        match registry().secret_for(pk) {
            Some(sk) => self.sign(&sk, message) == *sig,
            None => false,
        }
    }
}

pub fn sign(sk: &SecretKey, message: &[u8]) -> Signature {
    SimulatedScheme.sign(sk, message)
}

pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    SimulatedScheme.verify(pk, message, sig)
}

/// Public key registered for an address payload, if any.
pub fn lookup_public_key(addr: &Address) -> Option<PublicKey> {
    registry().public_for(&addr.payload)
}

#[derive(Default)]
struct KeyRegistry {
    inner: RwLock<RegistryMaps>,
}

#[derive(Default)]
struct RegistryMaps {
    secrets: HashMap<PublicKey, SecretKey>,
    by_address: HashMap<[u8; ADDRESS_LEN], PublicKey>,
}

impl KeyRegistry {
    fn register(&self, kp: &KeyPair) {
        let addr = Address::from_public_key(&kp.public_key, AddressScheme::Base16Eth);
        let mut g = self.inner.write().expect("key registry poisoned");
        g.secrets.insert(kp.public_key, kp.secret_key);
        g.by_address.insert(addr.payload, kp.public_key);
    }

    fn secret_for(&self, pk: &PublicKey) -> Option<SecretKey> {
        self.inner
            .read()
            .expect("key registry poisoned")
            .secrets
            .get(pk)
            .copied()
    }

    fn public_for(&self, payload: &[u8; ADDRESS_LEN]) -> Option<PublicKey> {
        self.inner
            .read()
            .expect("key registry poisoned")
            .by_address
            .get(payload)
            .copied()
    }
}

fn registry() -> &'static KeyRegistry {
    static REGISTRY: OnceLock<KeyRegistry> = OnceLock::new();
    REGISTRY.get_or_init(KeyRegistry::default)
}

/// Convenience for tests and scenarios: a key pair and its hex address.
pub fn identity_from_label(label: &str) -> (KeyPair, Address) {
    let kp = generate_keypair(label.as_bytes()).expect("label is non-empty");
    let addr = kp.address(AddressScheme::Base16Eth);
    (kp, addr)
}

impl From<Digest> for Signature {
    fn from(d: Digest) -> Self {
        Signature(d.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn keygen_is_deterministic() {
        let a = generate_keypair(b"seed-s").unwrap();
        let b = generate_keypair(b"seed-s").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_seed_rejected() {
        assert_eq!(generate_keypair(&[]), Err(IdentityError::EmptySeed));
    }

    #[test]
    fn distinct_seeds_distinct_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let seed: [u8; 32] = rng.gen();
            let kp = generate_keypair(&seed).unwrap();
            assert!(seen.insert(kp.public_key), "public key collision");
        }
    }

    #[test]
    fn address_schemes_share_payload() {
        let kp = generate_keypair(b"addr-test").unwrap();
        let hex = derive_address(&kp.public_key.0, AddressScheme::Base16Eth).unwrap();
        let b58 = derive_address(&kp.public_key.0, AddressScheme::Base58Btc).unwrap();
        assert_eq!(hex.payload, b58.payload);
        assert_ne!(hex.text(), b58.text());
        assert_eq!(hex.text().len(), 42);
        assert!(hex.text().starts_with("0x"));
        assert_eq!(hex.text(), hex.text().to_lowercase());
        assert!(!b58.text().contains(['0', 'O', 'I', 'l']));
        assert_eq!(derive_address(&kp.public_key.0, AddressScheme::Base16Eth).unwrap(), hex);
        assert_eq!(Address::parse(&hex.text(), AddressScheme::Base16Eth).unwrap(), hex);
        assert_eq!(Address::parse(&b58.text(), AddressScheme::Base58Btc).unwrap(), b58);
    }

    #[test]
    fn truncated_key_is_malformed() {
        assert_eq!(
            derive_address(&[7u8; 16], AddressScheme::Base16Eth),
            Err(IdentityError::MalformedKey(16))
        );
    }

    #[test]
    fn sign_verify_roundtrip_and_mismatch() {
        let a = generate_keypair(b"signer-a").unwrap();
        let b = generate_keypair(b"signer-b").unwrap();
        let sig = sign(&a.secret_key, b"msg");
        assert!(verify(&a.public_key, b"msg", &sig));
        assert!(!verify(&b.public_key, b"msg", &sig));
    }

    #[test]
    fn every_single_byte_flip_fails() {
        let kp = generate_keypair(b"flipper").unwrap();
        let msg: Vec<u8> = (0u8..16).collect();
        let sig = sign(&kp.secret_key, &msg);
        for i in 0..msg.len() {
            for v in 0..=255u8 {
                if v == msg[i] {
                    continue;
                }
                let mut m = msg.clone();
                m[i] = v;
                assert!(!verify(&kp.public_key, &m, &sig));
            }
        }
        for i in 0..32 {
            for bit in 0..8 {
                let mut s = sig;
                s.0[i] ^= 1 << bit;
                assert!(!verify(&kp.public_key, &msg, &s));
            }
        }
    }

    #[test]
    fn random_forgeries_fail() {
        let kp = generate_keypair(b"victim").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let forged = Signature(rng.gen());
            assert!(!verify(&kp.public_key, b"pay 100", &forged));
        }
    }

    #[test]
    fn unknown_key_never_verifies() {
        let pk = PublicKey([9u8; 32]);
        assert!(!verify(&pk, b"x", &Signature([0u8; 32])));
    }
}
