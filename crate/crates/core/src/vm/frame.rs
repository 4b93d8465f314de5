//! Layered read/write views used while executing a transaction.

use std::collections::BTreeMap;

use crate::identity::Address;
use crate::tx::ContractId;

use super::gas::GasUsage;
use super::state::{decode_u128, ContractState, Event, StateWrite, StorageKey};

type Slot = (ContractId, StorageKey);

/// Net writes accepted so far in the current transaction, over a base state.
pub(crate) struct Journal<'s> {
    pub(crate) base: &'s ContractState,
    overlay: BTreeMap<Slot, Option<Vec<u8>>>,
}

impl<'s> Journal<'s> {
    pub(crate) fn new(base: &'s ContractState) -> Journal<'s> {
        Journal {
            base,
            overlay: BTreeMap::new(),
        }
    }

    pub(crate) fn get(&self, contract: &ContractId, key: &StorageKey) -> Option<Vec<u8>> {
        match self.overlay.get(&(*contract, key.clone())) {
            Some(v) => v.clone(),
            None => self.base.get(contract, key),
        }
    }

    pub(crate) fn apply(&mut self, writes: &[StateWrite]) {
        for w in writes {
            self.overlay
                .insert((w.contract, w.key.clone()), w.value.clone());
        }
    }

    pub(crate) fn into_net_writes(self) -> BTreeMap<Slot, Option<Vec<u8>>> {
        self.overlay
    }
}

/// One call's view: private writes on top of the journal.
pub(crate) struct CallFrame<'j, 's> {
    journal: &'j Journal<'s>,
    local: BTreeMap<Slot, Option<Vec<u8>>>,
    pub(crate) caller: Address,
    pub(crate) writes: Vec<StateWrite>,
    pub(crate) events: Vec<Event>,
    pub(crate) reads: u64,
}

impl<'j, 's> CallFrame<'j, 's> {
    pub(crate) fn new(journal: &'j Journal<'s>, caller: Address) -> CallFrame<'j, 's> {
        CallFrame {
            journal,
            local: BTreeMap::new(),
            caller,
            writes: Vec::new(),
            events: Vec::new(),
            reads: 0,
        }
    }

    pub(crate) fn read(&mut self, contract: ContractId, key: &StorageKey) -> Option<Vec<u8>> {
        self.reads += 1;
        match self.local.get(&(contract, key.clone())) {
            Some(v) => v.clone(),
            None => self.journal.get(&contract, key),
        }
    }

    pub(crate) fn read_u128(&mut self, contract: ContractId, key: &StorageKey) -> u128 {
        self.read(contract, key).map(|b| decode_u128(&b)).unwrap_or(0)
    }

    pub(crate) fn write(
        &mut self,
        contract: ContractId,
        key: StorageKey,
        value: Option<Vec<u8>>,
        leg: super::state::Leg,
    ) {
        self.local.insert((contract, key.clone()), value.clone());
        self.writes.push(StateWrite {
            contract,
            key,
            value,
            leg,
        });
    }

    pub(crate) fn emit(&mut self, e: Event) {
        self.events.push(e);
    }

    pub(crate) fn usage(&self) -> GasUsage {
        GasUsage {
            reads: self.reads,
            write_words: self.writes.iter().map(StateWrite::words).sum(),
            events: self.events.len() as u64,
        }
    }
}
