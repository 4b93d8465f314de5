//! Chain-level state wrapped around [`ContractState`]: nonces, proposer fee
//! credits and the per-account index used by state retrieval.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::identity::Address;
use crate::tx::{ContractId, TxId};

use super::state::{ContractState, StateWrite, StorageKey};

/// Latest confirmed transaction that wrote a slot naming an account.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Touch {
    pub tx_id: TxId,
    pub height: u64,
    pub keys: BTreeSet<StorageKey>,
}

/// What state retrieval returns for one account in one contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountView {
    pub contract: ContractId,
    pub addr: Address,
    /// Live slots naming the account, in key order.
    pub entries: Vec<(StorageKey, Vec<u8>)>,
    /// Transaction that last changed any of them.
    pub tx_id: TxId,
    pub height: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    pub state: ContractState,
    nonces: BTreeMap<Address, u64>,
    fee_credits: BTreeMap<u32, u128>,
    touches: BTreeMap<(ContractId, Address), Touch>,
    executed: u64,
}

impl Ledger {
    pub fn new(state: ContractState) -> Ledger {
        Ledger {
            state,
            ..Ledger::default()
        }
    }

    pub fn expected_nonce(&self, addr: &Address) -> u64 {
        self.nonces.get(addr).copied().unwrap_or(0)
    }

    pub(crate) fn bump_nonce(&mut self, addr: Address) {
        *self.nonces.entry(addr).or_insert(0) += 1;
    }

    pub(crate) fn credit_fee(&mut self, proposer: u32, gas: u64) {
        *self.fee_credits.entry(proposer).or_insert(0) += gas as u128;
    }

    pub fn fee_credit(&self, proposer: u32) -> u128 {
        self.fee_credits.get(&proposer).copied().unwrap_or(0)
    }

    pub fn total_fees(&self) -> u128 {
        self.fee_credits.values().sum()
    }

    pub fn executed_txs(&self) -> u64 {
        self.executed
    }

    pub(crate) fn record_touches(&mut self, tx_id: TxId, height: u64, writes: &[StateWrite]) {
        self.executed += 1;
        for w in writes {
            for addr in &w.key.addrs {
                let t = self
                    .touches
                    .entry((w.contract, *addr))
                    .or_insert_with(|| Touch {
                        tx_id,
                        height,
                        keys: BTreeSet::new(),
                    });
                t.tx_id = tx_id;
                t.height = height;
                t.keys.insert(w.key.clone());
            }
        }
    }

    pub fn account_view(&self, addr: &Address, contract: &ContractId) -> Option<AccountView> {
        let t = self.touches.get(&(*contract, *addr))?;
        let entries = t
            .keys
            .iter()
            .filter_map(|k| self.state.get(contract, k).map(|v| (k.clone(), v)))
            .collect();
        Some(AccountView {
            contract: *contract,
            addr: *addr,
            entries,
            tx_id: t.tx_id,
            height: t.height,
        })
    }
}
