//! Contract state, storage keys and the incremental state root.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::{hash_parts, Digest};
use crate::identity::Address;
use crate::tx::ContractId;

use super::contracts::ContractDef;

/// Category of a storage slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    Supply,
    Balance,
    Allowance,
    Owner,
    Holding,
    Content,
    Listing,
    AgentGrant,
    AgentSeq,
    NativeBalance,
    Config,
}

/// Structured storage key. `addrs` lists every account the slot belongs to;
/// state retrieval for an address returns the slots that name it.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StorageKey {
    pub kind: KeyKind,
    pub addrs: Vec<Address>,
    pub id: Option<u128>,
}

impl StorageKey {
    pub fn new(kind: KeyKind, addrs: &[Address], id: Option<u128>) -> StorageKey {
        StorageKey {
            kind,
            addrs: addrs.to_vec(),
            id,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.kind as u8, self.addrs.len() as u8];
        for a in &self.addrs {
            out.extend_from_slice(&a.payload);
        }
        match self.id {
            Some(id) => {
                out.push(1);
                out.extend_from_slice(&id.to_be_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn mentions(&self, addr: &Address) -> bool {
        self.addrs.contains(addr)
    }
}

impl fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[", self.kind)?;
        for (i, a) in self.addrs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(&a.short())?;
        }
        if let Some(id) = self.id {
            write!(f, "#{id}")?;
        }
        f.write_str("]")
    }
}

/// 256-bit additive multiset accumulator. Insertion adds the entry hash,
/// removal subtracts it, so the root is independent of write order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct RootAccumulator([u64; 4]);

impl RootAccumulator {
    fn limbs(d: &Digest) -> [u64; 4] {
        let mut l = [0u64; 4];
        for (i, chunk) in d.0.chunks(8).enumerate() {
            l[3 - i] = u64::from_be_bytes(chunk.try_into().expect("8 bytes"));
        }
        l
    }

    pub fn add(&mut self, d: &Digest) {
        let x = Self::limbs(d);
        let mut carry = 0u64;
        for (limb, xi) in self.0.iter_mut().zip(x) {
            let (s1, c1) = limb.overflowing_add(xi);
            let (s2, c2) = s1.overflowing_add(carry);
            *limb = s2;
            carry = (c1 as u64) + (c2 as u64);
        }
    }

    pub fn sub(&mut self, d: &Digest) {
        let x = Self::limbs(d);
        let mut borrow = 0u64;
        for (limb, xi) in self.0.iter_mut().zip(x) {
            let (s1, b1) = limb.overflowing_sub(xi);
            let (s2, b2) = s1.overflowing_sub(borrow);
            *limb = s2;
            borrow = (b1 as u64) + (b2 as u64);
        }
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for i in 0..4 {
            out[i * 8..(i + 1) * 8].copy_from_slice(&self.0[3 - i].to_be_bytes());
        }
        out
    }
}

pub(crate) fn entry_hash(contract: &ContractId, key: &StorageKey, value: &[u8]) -> Digest {
    hash_parts(&[b"entry", &contract.0, &key.to_bytes(), value])
}

fn native_hash(addr: &Address, amount: u128) -> Digest {
    hash_parts(&[b"native", &addr.payload, &amount.to_be_bytes()])
}

fn contract_hash(def: &ContractDef) -> Digest {
    let encoded = serde_json::to_vec(def).expect("contract defs serialize");
    hash_parts(&[b"contract", &def.contract_id.0, &encoded])
}

/// An emitted contract event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub contract: ContractId,
    pub name: String,
    pub fields: BTreeMap<String, String>,
}

impl Event {
    pub fn new(contract: ContractId, name: &str, fields: &[(&str, String)]) -> Event {
        Event {
            contract,
            name: name.to_string(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    fn digest(&self) -> Digest {
        let encoded = serde_json::to_vec(self).expect("events serialize");
        hash_parts(&[b"event", &encoded])
    }
}

/// One slot assignment. `value = None` deletes the slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateWrite {
    pub contract: ContractId,
    pub key: StorageKey,
    pub value: Option<Vec<u8>>,
    pub leg: Leg,
}

/// Which part of a method a write belongs to. Payment-leg writes (token
/// movements, ownership) always execute on-chain under hybrid computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    Payment,
    Auxiliary,
}

impl StateWrite {
    pub fn words(&self) -> u64 {
        match &self.value {
            Some(v) => (v.len().max(1) as u64).div_ceil(32),
            None => 1,
        }
    }
}

/// Storage of every contract plus native balances.
///
/// The event log is kept as a running hash chain; full events live in the
/// receipts that produced them.
#[derive(Clone, Debug, Default)]
pub struct ContractState {
    contracts: BTreeMap<ContractId, ContractDef>,
    storage: BTreeMap<(ContractId, StorageKey), Vec<u8>>,
    native_balances: BTreeMap<Address, u128>,
    event_count: u64,
    event_chain: Digest,
    acc: RootAccumulator,
}

impl ContractState {
    pub fn new() -> ContractState {
        ContractState::default()
    }

    pub fn state_root(&self) -> Digest {
        hash_parts(&[
            b"state-root",
            &self.acc.to_bytes(),
            &self.event_count.to_be_bytes(),
            &self.event_chain.0,
        ])
    }

    /// Root recomputed from scratch over all entries in key order.
    pub fn recompute_root(&self) -> Digest {
        let mut acc = RootAccumulator::default();
        for def in self.contracts.values() {
            acc.add(&contract_hash(def));
        }
        for ((c, k), v) in &self.storage {
            acc.add(&entry_hash(c, k, v));
        }
        for (a, amt) in &self.native_balances {
            acc.add(&native_hash(a, *amt));
        }
        hash_parts(&[
            b"state-root",
            &acc.to_bytes(),
            &self.event_count.to_be_bytes(),
            &self.event_chain.0,
        ])
    }

    pub fn contract(&self, id: &ContractId) -> Option<&ContractDef> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ContractDef> {
        self.contracts.values()
    }

    pub(crate) fn insert_contract(&mut self, def: ContractDef) {
        self.acc.add(&contract_hash(&def));
        self.contracts.insert(def.contract_id, def);
    }

    pub fn get(&self, contract: &ContractId, key: &StorageKey) -> Option<Vec<u8>> {
        if key.kind == KeyKind::NativeBalance {
            return self
                .native_balances
                .get(&key.addrs[0])
                .map(|v| v.to_be_bytes().to_vec());
        }
        self.storage.get(&(*contract, key.clone())).cloned()
    }

    pub fn native_balance(&self, addr: &Address) -> u128 {
        self.native_balances.get(addr).copied().unwrap_or(0)
    }

    pub fn native_balances(&self) -> &BTreeMap<Address, u128> {
        &self.native_balances
    }

    pub fn storage_len(&self) -> usize {
        self.storage.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(ContractId, StorageKey), &Vec<u8>)> {
        self.storage.iter()
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub(crate) fn set(&mut self, contract: ContractId, key: StorageKey, value: Option<Vec<u8>>) {
        if key.kind == KeyKind::NativeBalance {
            let addr = key.addrs[0];
            if let Some(old) = self.native_balances.remove(&addr) {
                self.acc.sub(&native_hash(&addr, old));
            }
            if let Some(v) = value {
                let amt = decode_u128(&v);
                self.acc.add(&native_hash(&addr, amt));
                self.native_balances.insert(addr, amt);
            }
            return;
        }
        let slot = (contract, key);
        if let Some(old) = self.storage.remove(&slot) {
            self.acc.sub(&entry_hash(&slot.0, &slot.1, &old));
        }
        if let Some(v) = value {
            self.acc.add(&entry_hash(&slot.0, &slot.1, &v));
            self.storage.insert(slot, v);
        }
    }

    pub(crate) fn append_events(&mut self, events: &[Event]) {
        for e in events {
            self.event_chain = hash_parts(&[&self.event_chain.0, &e.digest().0]);
            self.event_count += 1;
        }
    }

    /// Genesis native allocation.
    pub fn credit_native(&mut self, addr: Address, amount: u128) {
        let cur = self.native_balance(&addr);
        let key = StorageKey::new(KeyKind::NativeBalance, &[addr], None);
        self.set(ContractId::SYSTEM, key, Some((cur + amount).to_be_bytes().to_vec()));
    }
}

pub(crate) fn decode_u128(bytes: &[u8]) -> u128 {
    let mut b = [0u8; 16];
    let n = bytes.len().min(16);
    b[16 - n..].copy_from_slice(&bytes[bytes.len() - n..]);
    u128::from_be_bytes(b)
}

impl ContractState {
    /// Root the state would have after applying `net` writes and `events`,
    /// without mutating it.
    pub(crate) fn preview_root(
        &self,
        net: &BTreeMap<(ContractId, StorageKey), Option<Vec<u8>>>,
        events: &[Event],
    ) -> Digest {
        let mut acc = self.acc;
        for ((c, k), v) in net {
            if k.kind == KeyKind::NativeBalance {
                let addr = k.addrs[0];
                if let Some(old) = self.native_balances.get(&addr) {
                    acc.sub(&native_hash(&addr, *old));
                }
                if let Some(v) = v {
                    acc.add(&native_hash(&addr, decode_u128(v)));
                }
                continue;
            }
            if let Some(old) = self.storage.get(&(*c, k.clone())) {
                acc.sub(&entry_hash(c, k, old));
            }
            if let Some(v) = v {
                acc.add(&entry_hash(c, k, v));
            }
        }
        let mut chain = self.event_chain;
        for e in events {
            chain = hash_parts(&[&chain.0, &e.digest().0]);
        }
        let count = self.event_count + events.len() as u64;
        hash_parts(&[b"state-root", &acc.to_bytes(), &count.to_be_bytes(), &chain.0])
    }

    pub(crate) fn apply_net(&mut self, net: BTreeMap<(ContractId, StorageKey), Option<Vec<u8>>>) {
        for ((c, k), v) in net {
            self.set(c, k, v);
        }
    }
}
