//! Independent model of state retrieval, rebuilt from confirmed blocks only.

use std::collections::{BTreeMap, BTreeSet};

use w3sim_core::access::retrieve_state;
use w3sim_core::archetypes::{compose, ArchitectureType, SimConfig};
use w3sim_core::atam::workload::RandomWorkload;
use w3sim_core::consensus::Network;
use w3sim_core::identity::Address;
use w3sim_core::tx::{ContractId, Transaction, TxId};
use w3sim_core::vm::StorageKey;

#[derive(Default)]
pub struct RetrievalOracle {
    live: BTreeMap<(ContractId, StorageKey), Vec<u8>>,
    latest: BTreeMap<(ContractId, Address), (TxId, u64, BTreeSet<StorageKey>)>,
    txs: BTreeMap<TxId, Transaction>,
    next_height: u64,
    pub confirmed_txs: u64,
}

impl RetrievalOracle {
    pub fn new() -> Self {
        RetrievalOracle {
            next_height: 1,
            ..Default::default()
        }
    }

    /// Fold in every block confirmed since the last call.
    pub fn absorb(&mut self, net: &Network) {
        while self.next_height <= net.confirmed_height() {
            let h = self.next_height;
            let block = net.confirmed_block_at(h).expect("confirmed height");
            for (tx, r) in block.txs.iter().zip(&block.receipts) {
                self.confirmed_txs += 1;
                self.txs.insert(tx.tx_id, tx.clone());
                for w in &r.writes {
                    let slot = (w.contract, w.key.clone());
                    match &w.value {
                        Some(v) => {
                            self.live.insert(slot, v.clone());
                        }
                        None => {
                            self.live.remove(&slot);
                        }
                    }
                    for a in &w.key.addrs {
                        let e = self
                            .latest
                            .entry((w.contract, *a))
                            .or_insert_with(|| (tx.tx_id, h, BTreeSet::new()));
                        e.0 = tx.tx_id;
                        e.1 = h;
                        e.2.insert(w.key.clone());
                    }
                }
            }
            self.next_height += 1;
        }
    }

    /// Compare retrieval at every node against the model. Returns
    /// (checks, mismatches).
    pub fn check(&self, net: &Network, accounts: &[Address], contracts: &[ContractId]) -> (u64, u64) {
        let (mut checks, mut bad) = (0, 0);
        for a in accounts {
            for c in contracts {
                let expected = self.latest.get(&(*c, *a)).map(|(tx, h, keys)| {
                    let entries: Vec<(StorageKey, Vec<u8>)> = keys
                        .iter()
                        .filter_map(|k| self.live.get(&(*c, k.clone())).map(|v| (k.clone(), v.clone())))
                        .collect();
                    (&self.txs[tx], *h, entries)
                });
                for node in 0..net.nodes().len() {
                    checks += 1;
                    let ok = match (&expected, retrieve_state(net, node, a, c)) {
                        (None, Err(_)) => true,
                        (Some((tx, h, entries)), Ok(r)) => {
                            r.tx == **tx
                                && r.view.tx_id == tx.tx_id
                                && r.view.height == *h
                                && r.view.entries == *entries
                        }
                        _ => false,
                    };
                    if !ok {
                        bad += 1;
                    }
                }
            }
        }
        (checks, bad)
    }
}

pub struct SecurityOutcome {
    pub confirmed_txs: u64,
    pub checks: u64,
    pub mismatches: u64,
}

/// Drive a random workload on `arch` until `min_txs` transactions are
/// confirmed, checking retrieval after every round.
pub fn security_run(arch: ArchitectureType, seed: u64, min_txs: u64) -> SecurityOutcome {
    let topo = compose(arch, &SimConfig::default());
    let ops = if topo.has_agent() { 120 } else { 40 };
    let mut wl = RandomWorkload::new(&topo, seed, 24);
    let c = wl.contracts();
    let contracts = [c.ft, c.nft, c.market, ContractId::SYSTEM];
    let accounts = wl.accounts();
    let mut oracle = RetrievalOracle::new();
    let (mut checks, mut mismatches) = (0, 0);
    let mut rounds = 0;
    while oracle.confirmed_txs < min_txs {
        wl.step(ops);
        oracle.absorb(wl.net());
        let (n, bad) = oracle.check(wl.net(), &accounts, &contracts);
        checks += n;
        mismatches += bad;
        rounds += 1;
        assert!(rounds < 5_000, "workload stalled on {arch}");
    }
    SecurityOutcome {
        confirmed_txs: oracle.confirmed_txs,
        checks,
        mismatches,
    }
}
