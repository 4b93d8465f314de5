//! Transaction generation: the signed envelope and its canonical byte format.
//!
//! Canonical layout: every field is written as a big-endian `u32` length
//! followed by its bytes, in declaration order. Integers inside fields are
//! big-endian. `tx_id = H(metadata || payload || signature)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{hash_parts, Digest};
use crate::identity::{
    lookup_public_key, public_from_secret, sign, verify, Address, AddressScheme, SecretKey,
    Signature, ADDRESS_LEN,
};

pub type TxId = Digest;

/// 20-byte contract handle.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContractId(pub [u8; ADDRESS_LEN]);

impl ContractId {
    /// Reserved handle for chain-level methods such as agent grants.
    pub const SYSTEM: ContractId = ContractId([0u8; ADDRESS_LEN]);

    pub fn derive(label: &str) -> ContractId {
        let d = hash_parts(&[b"contract", label.as_bytes()]);
        let mut b = [0u8; ADDRESS_LEN];
        b.copy_from_slice(&d.0[..ADDRESS_LEN]);
        ContractId(b)
    }

    pub fn as_address(&self) -> Address {
        Address::from_payload(self.0, AddressScheme::Base16Eth)
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContractId({}..)", &hex::encode(self.0)[..8])
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

/// A method argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    Uint(u128),
    Addr(Address),
    Bytes(Vec<u8>),
    Text(String),
    Cid(Digest),
    List(Vec<Value>),
}

impl Value {
    pub fn as_uint(&self) -> Option<u128> {
        match self {
            Value::Uint(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_addr(&self) -> Option<Address> {
        match self {
            Value::Addr(a) => Some(*a),
            _ => None,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Value::Uint(v) => {
                out.push(0);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Value::Addr(a) => {
                out.push(1);
                out.push(scheme_tag(a.scheme));
                out.extend_from_slice(&a.payload);
            }
            Value::Bytes(b) => {
                out.push(2);
                put_field(out, b);
            }
            Value::Text(s) => {
                out.push(3);
                put_field(out, s.as_bytes());
            }
            Value::Cid(d) => {
                out.push(4);
                out.extend_from_slice(&d.0);
            }
            Value::List(items) => {
                out.push(5);
                out.extend_from_slice(&(items.len() as u32).to_be_bytes());
                for v in items {
                    v.encode_into(out);
                }
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Value, CodecError> {
        Ok(match r.u8()? {
            0 => Value::Uint(u128::from_be_bytes(r.array::<16>()?)),
            1 => {
                let scheme = scheme_from_tag(r.u8()?)?;
                Value::Addr(Address::from_payload(r.array::<ADDRESS_LEN>()?, scheme))
            }
            2 => Value::Bytes(r.field()?.to_vec()),
            3 => Value::Text(
                String::from_utf8(r.field()?.to_vec()).map_err(|_| CodecError::BadUtf8)?,
            ),
            4 => Value::Cid(Digest(r.array::<32>()?)),
            5 => {
                let n = u32::from_be_bytes(r.array::<4>()?) as usize;
                let mut items = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    items.push(Value::decode(r)?);
                }
                Value::List(items)
            }
            t => return Err(CodecError::BadTag(t)),
        })
    }

    /// Depth-first search for a content id anywhere inside this value.
    pub fn contains_cid(&self, cid: &Digest) -> bool {
        match self {
            Value::Cid(c) => c == cid,
            Value::List(items) => items.iter().any(|v| v.contains_cid(cid)),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxMetadata {
    pub sender: Address,
    pub receiver: Address,
    pub nonce: u64,
    pub gas_limit: u64,
    pub sim_time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TxPayload {
    pub contract_id: Option<ContractId>,
    pub method: String,
    pub args: Vec<Value>,
    pub inline_data: Vec<u8>,
}

impl TxPayload {
    pub fn call(contract: ContractId, method: &str, args: Vec<Value>) -> TxPayload {
        TxPayload {
            contract_id: Some(contract),
            method: method.to_string(),
            args,
            inline_data: Vec::new(),
        }
    }

    pub fn with_inline(mut self, data: Vec<u8>) -> TxPayload {
        self.inline_data = data;
        self
    }

    /// Whether the payload references `cid`, either directly or inside an
    /// agent bundle.
    pub fn references_cid(&self, cid: &Digest) -> bool {
        self.args.iter().any(|v| v.contains_cid(cid))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub metadata: TxMetadata,
    pub payload: TxPayload,
    pub signature: Signature,
    pub tx_id: TxId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("secret key does not belong to the sender address")]
    SenderKeyMismatch,
    #[error("signature does not verify under the sender's key")]
    InvalidSignature,
    #[error("stale nonce {got} (expected {expected}); replay rejected")]
    StaleNonce { expected: u64, got: u64 },
    #[error("future nonce {got} (expected {expected})")]
    FutureNonce { expected: u64, got: u64 },
    #[error("payload names a method without a contract")]
    MethodWithoutContract,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("invalid utf-8")]
    BadUtf8,
    #[error("trailing bytes after transaction")]
    Trailing,
}

fn scheme_tag(s: AddressScheme) -> u8 {
    match s {
        AddressScheme::Base16Eth => 0,
        AddressScheme::Base58Btc => 1,
    }
}

fn scheme_from_tag(t: u8) -> Result<AddressScheme, CodecError> {
    match t {
        0 => Ok(AddressScheme::Base16Eth),
        1 => Ok(AddressScheme::Base58Btc),
        t => Err(CodecError::BadTag(t)),
    }
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn address_bytes(a: &Address) -> [u8; ADDRESS_LEN + 1] {
    let mut b = [0u8; ADDRESS_LEN + 1];
    b[0] = scheme_tag(a.scheme);
    b[1..].copy_from_slice(&a.payload);
    b
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn field(&mut self) -> Result<&'a [u8], CodecError> {
        let n = u32::from_be_bytes(self.array::<4>()?) as usize;
        self.take(n)
    }
}

impl TxMetadata {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        put_field(&mut out, &address_bytes(&self.sender));
        put_field(&mut out, &address_bytes(&self.receiver));
        put_field(&mut out, &self.nonce.to_be_bytes());
        put_field(&mut out, &self.gas_limit.to_be_bytes());
        put_field(&mut out, &self.sim_time.to_be_bytes());
        out
    }

    fn decode(r: &mut Reader<'_>) -> Result<TxMetadata, CodecError> {
        let addr = |bytes: &[u8]| -> Result<Address, CodecError> {
            if bytes.len() != ADDRESS_LEN + 1 {
                return Err(CodecError::Truncated);
            }
            let mut p = [0u8; ADDRESS_LEN];
            p.copy_from_slice(&bytes[1..]);
            Ok(Address::from_payload(p, scheme_from_tag(bytes[0])?))
        };
        let int = |bytes: &[u8]| -> Result<u64, CodecError> {
            Ok(u64::from_be_bytes(
                bytes.try_into().map_err(|_| CodecError::Truncated)?,
            ))
        };
        Ok(TxMetadata {
            sender: addr(r.field()?)?,
            receiver: addr(r.field()?)?,
            nonce: int(r.field()?)?,
            gas_limit: int(r.field()?)?,
            sim_time: int(r.field()?)?,
        })
    }
}

impl TxPayload {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.inline_data.len());
        match &self.contract_id {
            Some(c) => put_field(&mut out, &c.0),
            None => put_field(&mut out, &[]),
        }
        put_field(&mut out, self.method.as_bytes());
        let mut args = Vec::new();
        Value::List(self.args.clone()).encode_into(&mut args);
        put_field(&mut out, &args);
        put_field(&mut out, &self.inline_data);
        out
    }

    /// Size charged by the per-byte gas component.
    pub fn encoded_len(&self) -> usize {
        self.canonical_bytes().len()
    }

    fn decode(r: &mut Reader<'_>) -> Result<TxPayload, CodecError> {
        let cid = r.field()?;
        let contract_id = match cid.len() {
            0 => None,
            ADDRESS_LEN => Some(ContractId(cid.try_into().expect("len checked"))),
            _ => return Err(CodecError::Truncated),
        };
        let method = String::from_utf8(r.field()?.to_vec()).map_err(|_| CodecError::BadUtf8)?;
        let mut ar = Reader { buf: r.field()? };
        let args = match Value::decode(&mut ar)? {
            Value::List(items) => items,
            _ => return Err(CodecError::BadTag(0xff)),
        };
        let inline_data = r.field()?.to_vec();
        Ok(TxPayload {
            contract_id,
            method,
            args,
            inline_data,
        })
    }
}

/// Bytes covered by the signature.
pub fn signing_bytes(metadata: &TxMetadata, payload: &TxPayload) -> Vec<u8> {
    let mut m = metadata.canonical_bytes();
    m.extend_from_slice(&payload.canonical_bytes());
    m
}

fn compute_tx_id(metadata: &TxMetadata, payload: &TxPayload, sig: &Signature) -> TxId {
    hash_parts(&[
        &metadata.canonical_bytes(),
        &payload.canonical_bytes(),
        &sig.0,
    ])
}

/// Sign and envelope a transaction. Fails if `sk` does not own `metadata.sender`.
pub fn build_transaction(
    sk: &SecretKey,
    metadata: TxMetadata,
    payload: TxPayload,
) -> Result<Transaction, TxError> {
    let pk = public_from_secret(sk);
    let derived = crate::identity::derive_address(&pk.0, metadata.sender.scheme)
        .expect("derived public keys are 32 bytes");
    if derived != metadata.sender {
        return Err(TxError::SenderKeyMismatch);
    }
    if payload.contract_id.is_none() && !payload.method.is_empty() {
        return Err(TxError::MethodWithoutContract);
    }
    Ok(seal(sk, metadata, payload))
}

/// Sign without checking key ownership. Wallets use this with a cached
/// session address; a stale key then surfaces as `InvalidSignature` at
/// validation time.
pub fn seal(sk: &SecretKey, metadata: TxMetadata, payload: TxPayload) -> Transaction {
    let signature = sign(sk, &signing_bytes(&metadata, &payload));
    let tx_id = compute_tx_id(&metadata, &payload, &signature);
    Transaction {
        metadata,
        payload,
        signature,
        tx_id,
    }
}

impl Transaction {
    pub fn verify_signature(&self) -> bool {
        let Some(pk) = lookup_public_key(&self.metadata.sender) else {
            return false;
        };
        if compute_tx_id(&self.metadata, &self.payload, &self.signature) != self.tx_id {
            return false;
        }
        verify(&pk, &signing_bytes(&self.metadata, &self.payload), &self.signature)
    }

    pub fn sender(&self) -> Address {
        self.metadata.sender
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_field(&mut out, &self.metadata.canonical_bytes());
        put_field(&mut out, &self.payload.canonical_bytes());
        put_field(&mut out, &self.signature.0);
        out
    }

    /// Decode the canonical form. The id is recomputed, never trusted.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Transaction, CodecError> {
        let mut r = Reader { buf: bytes };
        let metadata = TxMetadata::decode(&mut Reader { buf: r.field()? })?;
        let payload = TxPayload::decode(&mut Reader { buf: r.field()? })?;
        let sig: [u8; 32] = r.field()?.try_into().map_err(|_| CodecError::Truncated)?;
        if !r.buf.is_empty() {
            return Err(CodecError::Trailing);
        }
        let signature = Signature(sig);
        let tx_id = compute_tx_id(&metadata, &payload, &signature);
        Ok(Transaction {
            metadata,
            payload,
            signature,
            tx_id,
        })
    }

    pub fn size_bytes(&self) -> usize {
        self.to_canonical_bytes().len()
    }
}

/// Check signature and replay/gap protection against the chain's expected nonce.
pub fn validate_transaction(tx: &Transaction, expected_nonce: u64) -> Result<(), TxError> {
    if !tx.verify_signature() {
        return Err(TxError::InvalidSignature);
    }
    let got = tx.metadata.nonce;
    if got < expected_nonce {
        return Err(TxError::StaleNonce {
            expected: expected_nonce,
            got,
        });
    }
    if got > expected_nonce {
        return Err(TxError::FutureNonce {
            expected: expected_nonce,
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::identity_from_label;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn meta(sender: Address, nonce: u64) -> TxMetadata {
        TxMetadata {
            sender,
            receiver: ContractId::derive("token").as_address(),
            nonce,
            gas_limit: 100_000,
            sim_time: 3,
        }
    }

    fn payload() -> TxPayload {
        TxPayload::call(
            ContractId::derive("token"),
            "transfer",
            vec![Value::Addr(Address::ZERO), Value::Uint(5)],
        )
    }

    #[test]
    fn build_is_deterministic() {
        let (kp, addr) = identity_from_label("tx-alice");
        let a = build_transaction(&kp.secret_key, meta(addr, 0), payload()).unwrap();
        let b = build_transaction(&kp.secret_key, meta(addr, 0), payload()).unwrap();
        assert_eq!(a.tx_id, b.tx_id);
        assert!(validate_transaction(&a, 0).is_ok());
    }

    #[test]
    fn wrong_key_is_rejected() {
        let (_, alice) = identity_from_label("tx-alice");
        let (mallory, _) = identity_from_label("tx-mallory");
        assert_eq!(
            build_transaction(&mallory.secret_key, meta(alice, 0), payload()),
            Err(TxError::SenderKeyMismatch)
        );
    }

    #[test]
    fn nonce_changes_id() {
        let (kp, addr) = identity_from_label("tx-alice");
        let a = build_transaction(&kp.secret_key, meta(addr, 0), payload()).unwrap();
        let b = build_transaction(&kp.secret_key, meta(addr, 1), payload()).unwrap();
        assert_ne!(a.tx_id, b.tx_id);
    }

    #[test]
    fn nonce_checks() {
        let (kp, addr) = identity_from_label("tx-alice");
        let tx = build_transaction(&kp.secret_key, meta(addr, 4), payload()).unwrap();
        assert_eq!(
            validate_transaction(&tx, 5),
            Err(TxError::StaleNonce { expected: 5, got: 4 })
        );
        assert_eq!(
            validate_transaction(&tx, 2),
            Err(TxError::FutureNonce { expected: 2, got: 4 })
        );
        assert!(validate_transaction(&tx, 4).is_ok());
    }

    #[test]
    fn tampered_payload_fails_signature() {
        let (kp, addr) = identity_from_label("tx-alice");
        let mut tx = build_transaction(&kp.secret_key, meta(addr, 0), payload()).unwrap();
        tx.payload.args[1] = Value::Uint(6);
        assert_eq!(validate_transaction(&tx, 0), Err(TxError::InvalidSignature));
    }

    #[test]
    fn canonical_roundtrip() {
        let (kp, addr) = identity_from_label("tx-alice");
        let mut p = payload();
        p.args.push(Value::List(vec![Value::Text("x".into()), Value::Cid(Digest([3; 32]))]));
        p.inline_data = vec![1, 2, 3];
        let tx = build_transaction(&kp.secret_key, meta(addr, 9), p).unwrap();
        let back = Transaction::from_canonical_bytes(&tx.to_canonical_bytes()).unwrap();
        assert_eq!(back, tx);
        assert!(Transaction::from_canonical_bytes(&tx.to_canonical_bytes()[..10]).is_err());
    }

    fn arb_value() -> impl Strategy<Value = super::Value> {
        let leaf = prop_oneof![
            any::<u128>().prop_map(super::Value::Uint),
            proptest::collection::vec(any::<u8>(), 0..8).prop_map(super::Value::Bytes),
            "[a-z]{0,6}".prop_map(super::Value::Text),
        ];
        leaf.prop_recursive(2, 8, 3, |inner| {
            proptest::collection::vec(inner, 0..3).prop_map(super::Value::List)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn built_txs_validate(
            nonce in any::<u64>(),
            gas in any::<u64>(),
            t in any::<u64>(),
            method in "[a-zA-Z]{1,10}",
            args in proptest::collection::vec(arb_value(), 0..4),
            data in proptest::collection::vec(any::<u8>(), 0..40),
        ) {
            let (kp, addr) = identity_from_label("prop-sender");
            let m = TxMetadata { sender: addr, receiver: Address::ZERO, nonce, gas_limit: gas, sim_time: t };
            let p = TxPayload { contract_id: Some(ContractId::derive("c")), method, args, inline_data: data };
            let tx = build_transaction(&kp.secret_key, m, p).unwrap();
            prop_assert!(validate_transaction(&tx, nonce).is_ok());
            let back = Transaction::from_canonical_bytes(&tx.to_canonical_bytes()).unwrap();
            prop_assert_eq!(back, tx);
        }
    }

    #[test]
    fn serialization_injective_on_corpus() {
        let (_, addr) = identity_from_label("inj");
        let mut seen = HashSet::new();
        let methods = ["", "a", "ab", "b"];
        for nonce in 0..5u64 {
            for m in methods {
                for data in [vec![], vec![0u8], vec![0u8, 0u8], vec![1u8]] {
                    for args in [vec![], vec![Value::Uint(0)], vec![Value::Bytes(vec![])]] {
                        let md = meta(addr, nonce);
                        let p = TxPayload {
                            contract_id: if m.is_empty() { None } else { Some(ContractId::derive(m)) },
                            method: m.to_string(),
                            args,
                            inline_data: data.clone(),
                        };
                        assert!(seen.insert(signing_bytes(&md, &p)));
                    }
                }
            }
        }
    }
}
