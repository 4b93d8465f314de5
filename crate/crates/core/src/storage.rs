//! Content storage: inline in transactions, off-chain with an on-chain
//! content-id hook, or a size-thresholded mix of both.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{hash_parts, keyed_coin, sha256, Digest};
use crate::tx::{TxId, TxPayload, Value};

pub const DEFAULT_INLINE_CAP: usize = 1024;
pub const DEFAULT_INLINE_THRESHOLD: usize = 256;
pub const DEFAULT_REPLICAS: usize = 3;

/// Digest of content bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContentId(pub Digest);

impl ContentId {
    pub fn of(data: &[u8]) -> ContentId {
        ContentId(sha256(data))
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cid:{}", &self.0.to_hex()[..12])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoragePlan {
    OnChain,
    OffChain { replicas: usize },
    Hybrid { inline_threshold: usize, replicas: usize },
}

impl StoragePlan {
    pub fn off_chain() -> StoragePlan {
        StoragePlan::OffChain {
            replicas: DEFAULT_REPLICAS,
        }
    }

    pub fn hybrid() -> StoragePlan {
        StoragePlan::Hybrid {
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
            replicas: DEFAULT_REPLICAS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageRef {
    /// Content travels in the payload of `carrier_tx`.
    Inline { data: Vec<u8>, carrier_tx: Option<TxId> },
    /// Content lives off-chain; `hook_tx` records the cid on-chain.
    Linked { cid: ContentId, hook_tx: Option<TxId> },
}

impl StorageRef {
    /// Record the transaction that carries the data or its cid.
    pub fn bind(&mut self, tx_id: TxId) {
        match self {
            StorageRef::Inline { carrier_tx, .. } => *carrier_tx = Some(tx_id),
            StorageRef::Linked { hook_tx, .. } => *hook_tx = Some(tx_id),
        }
    }

    pub fn tx(&self) -> Option<TxId> {
        match self {
            StorageRef::Inline { carrier_tx, .. } => *carrier_tx,
            StorageRef::Linked { hook_tx, .. } => *hook_tx,
        }
    }

    pub fn is_linked(&self) -> bool {
        matches!(self, StorageRef::Linked { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StorageError {
    #[error("inline data of {len} bytes exceeds cap {cap}")]
    InlineTooLarge { len: usize, cap: usize },
    #[error("need {needed} live storage nodes, {live} available")]
    InsufficientStorageNodes { needed: usize, live: usize },
    #[error("off-chain content must be non-empty")]
    EmptyData,
    #[error("replica count must be at least 1")]
    ZeroReplicas,
    #[error("every replica of the content is down")]
    AllReplicasDown,
    #[error("content not found")]
    NotFound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrityStatus {
    Verified,
    Mismatch,
    /// The carrying transaction is not confirmed yet.
    Unconfirmed,
}

/// Confirmed-transaction lookup used by integrity checks.
pub trait HookLookup {
    fn confirmed_payload(&self, tx_id: &TxId) -> Option<TxPayload>;
}

impl<F: Fn(&TxId) -> Option<TxPayload>> HookLookup for F {
    fn confirmed_payload(&self, tx_id: &TxId) -> Option<TxPayload> {
        self(tx_id)
    }
}

#[derive(Clone, Debug, Default)]
pub struct StorageNode {
    pub id: u32,
    pub up: bool,
    blobs: BTreeMap<ContentId, Vec<u8>>,
}

#[derive(Clone, Debug)]
pub struct OffChainStore {
    nodes: Vec<StorageNode>,
    placement: BTreeMap<ContentId, Vec<u32>>,
    pub inline_cap: usize,
    crash_prob: f64,
    seed: u64,
    /// Bytes written across all replicas; the provider's storage bill.
    pub bytes_stored: u64,
}

impl OffChainStore {
    pub fn new(n_nodes: usize, seed: u64) -> OffChainStore {
        OffChainStore {
            nodes: (0..n_nodes as u32)
                .map(|id| StorageNode {
                    id,
                    up: true,
                    blobs: BTreeMap::new(),
                })
                .collect(),
            placement: BTreeMap::new(),
            inline_cap: DEFAULT_INLINE_CAP,
            crash_prob: 0.0,
            seed,
            bytes_stored: 0,
        }
    }

    /// Per-tick probability that a node is down.
    pub fn with_crash_prob(mut self, p: f64) -> OffChainStore {
        self.crash_prob = p;
        self
    }

    pub fn nodes(&self) -> &[StorageNode] {
        &self.nodes
    }

    pub fn live_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.up).count()
    }

    pub fn set_up(&mut self, node: u32, up: bool) {
        self.nodes[node as usize].up = up;
    }

    /// Redraw every node's up/down state for tick `t`.
    pub fn tick(&mut self, t: u64) {
        for n in &mut self.nodes {
            n.up = !keyed_coin(
                self.seed,
                "storage-down",
                &[&n.id.to_be_bytes(), &t.to_be_bytes()],
                self.crash_prob,
            );
        }
    }

    pub fn placement(&self, cid: &ContentId) -> Option<&[u32]> {
        self.placement.get(cid).map(Vec::as_slice)
    }

    pub fn put(&mut self, data: &[u8], plan: StoragePlan) -> Result<StorageRef, StorageError> {
        let (inline, replicas) = match plan {
            StoragePlan::OnChain => (true, 0),
            StoragePlan::OffChain { replicas } => (false, replicas),
            StoragePlan::Hybrid {
                inline_threshold,
                replicas,
            } => (data.len() <= inline_threshold, replicas),
        };
        if inline {
            if data.len() > self.inline_cap {
                return Err(StorageError::InlineTooLarge {
                    len: data.len(),
                    cap: self.inline_cap,
                });
            }
            return Ok(StorageRef::Inline {
                data: data.to_vec(),
                carrier_tx: None,
            });
        }
        if data.is_empty() {
            return Err(StorageError::EmptyData);
        }
        if replicas == 0 {
            return Err(StorageError::ZeroReplicas);
        }
        let cid = ContentId::of(data);
        if !self.placement.contains_key(&cid) {
            let live = self.live_count();
            if live < replicas {
                return Err(StorageError::InsufficientStorageNodes {
                    needed: replicas,
                    live,
                });
            }
            // Rendezvous hashing over the live nodes.
            let mut ranked: Vec<(Digest, u32)> = self
                .nodes
                .iter()
                .filter(|n| n.up)
                .map(|n| (hash_parts(&[&cid.0 .0, &n.id.to_be_bytes()]), n.id))
                .collect();
            ranked.sort();
            let chosen: Vec<u32> = ranked.iter().take(replicas).map(|(_, id)| *id).collect();
            for id in &chosen {
                self.nodes[*id as usize].blobs.insert(cid, data.to_vec());
                self.bytes_stored += data.len() as u64;
            }
            self.placement.insert(cid, chosen);
        }
        Ok(StorageRef::Linked { cid, hook_tx: None })
    }

    pub fn get(&self, r: &StorageRef) -> Result<Vec<u8>, StorageError> {
        match r {
            StorageRef::Inline { data, .. } => Ok(data.clone()),
            StorageRef::Linked { cid, .. } => {
                let placed = self.placement.get(cid).ok_or(StorageError::NotFound)?;
                placed
                    .iter()
                    .map(|id| &self.nodes[*id as usize])
                    .find(|n| n.up)
                    .map(|n| n.blobs.get(cid).cloned().unwrap_or_default())
                    .ok_or(StorageError::AllReplicasDown)
            }
        }
    }

    /// Overwrite the copy held by `node`. Test and fault-injection hook.
    pub fn tamper(&mut self, node: u32, cid: &ContentId, data: Vec<u8>) {
        if let Some(b) = self.nodes[node as usize].blobs.get_mut(cid) {
            *b = data;
        }
    }

    /// Write one file per stored cid, named by its hex digest.
    pub fn export_dir(&self, dir: &Path) -> io::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let mut n = 0;
        for (cid, nodes) in &self.placement {
            if let Some(data) = nodes
                .iter()
                .find_map(|id| self.nodes[*id as usize].blobs.get(cid))
            {
                std::fs::write(dir.join(cid.0.to_hex()), data)?;
                n += 1;
            }
        }
        Ok(n)
    }
}

fn value_carries(v: &Value, data: &[u8]) -> bool {
    match v {
        Value::Bytes(b) => b == data,
        Value::List(items) => items.iter().any(|i| value_carries(i, data)),
        _ => false,
    }
}

/// Whether a payload carries `data` inline, directly or inside a bundle.
pub fn payload_carries(p: &TxPayload, data: &[u8]) -> bool {
    p.inline_data == data || p.args.iter().any(|v| value_carries(v, data))
}

/// Check `data` against what the chain confirmed for `r`.
pub fn verify_integrity(r: &StorageRef, data: &[u8], chain: &impl HookLookup) -> IntegrityStatus {
    let Some(payload) = r.tx().and_then(|t| chain.confirmed_payload(&t)) else {
        return IntegrityStatus::Unconfirmed;
    };
    let ok = match r {
        StorageRef::Inline { data: stored, .. } => {
            stored.as_slice() == data && payload_carries(&payload, data)
        }
        StorageRef::Linked { cid, .. } => {
            payload.references_cid(&cid.0) && ContentId::of(data) == *cid
        }
    };
    if ok {
        IntegrityStatus::Verified
    } else {
        IntegrityStatus::Mismatch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tx::ContractId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hook_payload(cid: ContentId) -> TxPayload {
        TxPayload::call(
            ContractId::derive("nft"),
            "mint",
            vec![Value::Uint(1), Value::Cid(cid.0)],
        )
    }

    fn confirmed(map: BTreeMap<TxId, TxPayload>) -> impl HookLookup {
        move |t: &TxId| map.get(t).cloned()
    }

    #[test]
    fn hybrid_threshold_routes() {
        let mut s = OffChainStore::new(5, 1);
        let r = s.put(&[7; 200], StoragePlan::hybrid()).unwrap();
        assert!(!r.is_linked());
        let r = s.put(&[7; 256], StoragePlan::hybrid()).unwrap();
        assert!(!r.is_linked());
        let r = s.put(&[7; 257], StoragePlan::hybrid()).unwrap();
        assert!(r.is_linked());
    }

    #[test]
    fn inline_cap_enforced() {
        let mut s = OffChainStore::new(5, 1);
        assert!(s.put(&[1; 1024], StoragePlan::OnChain).is_ok());
        assert_eq!(
            s.put(&[1; 1025], StoragePlan::OnChain),
            Err(StorageError::InlineTooLarge { len: 1025, cap: 1024 })
        );
    }

    #[test]
    fn default_replicas_is_three() {
        assert_eq!(StoragePlan::off_chain(), StoragePlan::OffChain { replicas: 3 });
        let mut s = OffChainStore::new(5, 1);
        let r = s.put(b"abc", StoragePlan::off_chain()).unwrap();
        let StorageRef::Linked { cid, .. } = r else { panic!() };
        let placed = s.placement(&cid).unwrap();
        assert_eq!(placed.len(), 3);
        let mut uniq = placed.to_vec();
        uniq.dedup();
        assert_eq!(uniq.len(), 3);
        assert_eq!(s.bytes_stored, 9);
    }

    #[test]
    fn insufficient_live_nodes() {
        let mut s = OffChainStore::new(5, 1);
        for id in 0..3 {
            s.set_up(id, false);
        }
        assert_eq!(
            s.put(b"x", StoragePlan::off_chain()),
            Err(StorageError::InsufficientStorageNodes { needed: 3, live: 2 })
        );
        assert_eq!(s.put(b"", StoragePlan::off_chain()), Err(StorageError::EmptyData));
        assert_eq!(
            s.put(b"x", StoragePlan::OffChain { replicas: 0 }),
            Err(StorageError::ZeroReplicas)
        );
    }

    #[test]
    fn replica_failure_subsets() {
        let mut s = OffChainStore::new(5, 9);
        let data = b"replicated payload".to_vec();
        let r = s.put(&data, StoragePlan::off_chain()).unwrap();
        let StorageRef::Linked { cid, .. } = &r else { panic!() };
        let placed = s.placement(cid).unwrap().to_vec();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let mut t = s.clone();
                t.set_up(placed[i], false);
                t.set_up(placed[j], false);
                assert_eq!(t.get(&r).unwrap(), data);
            }
        }
        let mut t = s.clone();
        for id in &placed {
            t.set_up(*id, false);
        }
        assert_eq!(t.get(&r), Err(StorageError::AllReplicasDown));
        let missing = StorageRef::Linked {
            cid: ContentId::of(b"other"),
            hook_tx: None,
        };
        assert_eq!(s.get(&missing), Err(StorageError::NotFound));
    }

    #[test]
    fn inline_get_is_identity() {
        let mut s = OffChainStore::new(1, 1);
        let r = s.put(b"hello", StoragePlan::OnChain).unwrap();
        assert_eq!(s.get(&r).unwrap(), b"hello");
    }

    #[test]
    fn verify_before_and_after_confirmation() {
        let mut s = OffChainStore::new(5, 2);
        let data = vec![3u8; 600];
        let mut r = s.put(&data, StoragePlan::hybrid()).unwrap();
        let StorageRef::Linked { cid, .. } = r.clone() else { panic!() };
        let tx = sha256(b"hook-tx");
        assert_eq!(
            verify_integrity(&r, &data, &confirmed(BTreeMap::new())),
            IntegrityStatus::Unconfirmed
        );
        r.bind(tx);
        assert_eq!(
            verify_integrity(&r, &data, &confirmed(BTreeMap::new())),
            IntegrityStatus::Unconfirmed
        );
        let chain = confirmed(BTreeMap::from([(tx, hook_payload(cid))]));
        assert_eq!(verify_integrity(&r, &data, &chain), IntegrityStatus::Verified);
        let mut bad = data.clone();
        bad[10] ^= 1;
        assert_eq!(verify_integrity(&r, &bad, &chain), IntegrityStatus::Mismatch);
        // A hook transaction that does not carry the cid proves nothing.
        let other = confirmed(BTreeMap::from([(tx, hook_payload(ContentId::of(b"z")))]));
        assert_eq!(verify_integrity(&r, &data, &other), IntegrityStatus::Mismatch);
    }

    #[test]
    fn verify_inline_against_payload() {
        let mut s = OffChainStore::new(1, 1);
        let mut r = s.put(b"small", StoragePlan::OnChain).unwrap();
        let tx = sha256(b"carrier");
        r.bind(tx);
        let p = TxPayload::call(ContractId::derive("nft"), "mint", vec![Value::Uint(1)])
            .with_inline(b"small".to_vec());
        let chain = confirmed(BTreeMap::from([(tx, p)]));
        assert_eq!(verify_integrity(&r, b"small", &chain), IntegrityStatus::Verified);
        assert_eq!(verify_integrity(&r, b"smalL", &chain), IntegrityStatus::Mismatch);
    }

    #[test]
    fn tamper_detection_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut s = OffChainStore::new(5, 3);
        let data: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        let mut r = s.put(&data, StoragePlan::off_chain()).unwrap();
        let StorageRef::Linked { cid, .. } = r.clone() else { panic!() };
        let tx = sha256(b"hook");
        r.bind(tx);
        let chain = confirmed(BTreeMap::from([(tx, hook_payload(cid))]));
        let node = s.placement(&cid).unwrap()[0];
        for _ in 0..1000 {
            let mut m = data.clone();
            let flips = rng.gen_range(1..=4);
            for _ in 0..flips {
                let i = rng.gen_range(0..m.len());
                m[i] ^= rng.gen_range(1..=255u8);
            }
            if rng.gen_bool(0.1) {
                m.push(rng.gen());
            }
            let mut t = s.clone();
            t.tamper(node, &cid, m);
            let served = t.get(&r).unwrap();
            assert_eq!(verify_integrity(&r, &served, &chain), IntegrityStatus::Mismatch);
        }
    }

    #[test]
    fn availability_monotone_in_replicas() {
        let trials = 1000;
        let mut rates = Vec::new();
        for replicas in 1..=5 {
            let mut ok = 0;
            for trial in 0..trials {
                let mut s = OffChainStore::new(7, trial).with_crash_prob(0.4);
                let r = s.put(b"mc", StoragePlan::OffChain { replicas }).unwrap();
                s.tick(1);
                if s.get(&r).is_ok() {
                    ok += 1;
                }
            }
            rates.push(ok as f64 / trials as f64);
        }
        for w in rates.windows(2) {
            assert!(w[1] >= w[0], "{rates:?}");
        }
        assert!(rates[4] > rates[0]);
    }

    #[test]
    fn tick_is_seeded() {
        let mut a = OffChainStore::new(10, 5).with_crash_prob(0.5);
        let mut b = OffChainStore::new(10, 5).with_crash_prob(0.5);
        a.tick(3);
        b.tick(3);
        let ups = |s: &OffChainStore| s.nodes().iter().map(|n| n.up).collect::<Vec<_>>();
        assert_eq!(ups(&a), ups(&b));
    }

    #[test]
    fn export_writes_hex_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = OffChainStore::new(5, 1);
        s.put(b"one", StoragePlan::off_chain()).unwrap();
        s.put(b"two", StoragePlan::off_chain()).unwrap();
        assert_eq!(s.export_dir(dir.path()).unwrap(), 2);
        let f = dir.path().join(ContentId::of(b"one").0.to_hex());
        assert_eq!(std::fs::read(f).unwrap(), b"one");
    }
}
