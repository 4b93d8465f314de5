//! How users reach the chain: a browser wallet signing each request, or an
//! agent that bundles many users' operations into one transaction. Also the
//! state-retrieval path.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{Network, SubmitError};
use crate::identity::{generate_keypair, Address, AddressScheme, KeyPair};
use crate::tx::{build_transaction, seal, ContractId, Transaction, TxId, TxMetadata, TxPayload, Value};
use crate::vm::{AccountView, BundledCall, ExecStatus, METHOD_GRANT_AGENT, METHOD_MULTICALL};

pub const DEFAULT_GAS_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("wallet is not connected")]
    NotConnected,
    #[error("user {0} has not registered with the agent")]
    UnregisteredUser(Address),
    #[error("no confirmed state for the account")]
    NoConfirmedState,
    #[error(transparent)]
    Submit(#[from] SubmitError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub service_id: String,
    pub address: Address,
}

/// Browser-wallet client. Every request becomes one signed transaction.
#[derive(Clone, Debug)]
pub struct WalletClient {
    keypair: KeyPair,
    scheme: AddressScheme,
    session: Option<Session>,
    pub gas_limit: u64,
}

impl WalletClient {
    pub fn new(keypair: KeyPair, scheme: AddressScheme) -> WalletClient {
        WalletClient {
            keypair,
            scheme,
            session: None,
            gas_limit: DEFAULT_GAS_LIMIT,
        }
    }

    /// Address of the current key.
    pub fn address(&self) -> Address {
        self.keypair.address(self.scheme)
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// Connect to a service. Reconnecting to the same service with the same
    /// key returns the existing session.
    pub fn connect_wallet(&mut self, service_id: &str) -> Session {
        let address = self.address();
        match &self.session {
            Some(s) if s.service_id == service_id && s.address == address => s.clone(),
            _ => {
                let s = Session {
                    service_id: service_id.to_string(),
                    address,
                };
                self.session = Some(s.clone());
                s
            }
        }
    }

    /// Replace the signing key. The session keeps its cached address until
    /// the wallet reconnects.
    pub fn rotate_key(&mut self, seed: &[u8]) {
        self.keypair = generate_keypair(seed).expect("rotation seed is non-empty");
    }

    /// Sign `payload` for the session address and submit it.
    pub fn submit_direct(&self, net: &mut Network, payload: TxPayload) -> Result<TxId, AccessError> {
        let tx = self.sign(net, payload)?;
        let id = tx.tx_id;
        net.submit(tx)?;
        Ok(id)
    }

    pub fn sign(&self, net: &Network, payload: TxPayload) -> Result<Transaction, AccessError> {
        let session = self.session.as_ref().ok_or(AccessError::NotConnected)?;
        let meta = TxMetadata {
            sender: session.address,
            receiver: payload
                .contract_id
                .map(|c| c.as_address())
                .unwrap_or(Address::ZERO),
            nonce: net.pending_nonce(&session.address),
            gas_limit: self.gas_limit,
            sim_time: net.now(),
        };
        Ok(seal(&self.keypair.secret_key, meta, payload))
    }
}

/// Payload a user signs to let `agent` act on their behalf.
pub fn grant_payload(agent: Address) -> TxPayload {
    TxPayload::call(ContractId::SYSTEM, METHOD_GRANT_AGENT, vec![Value::Addr(agent)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AgentBehavior {
    #[default]
    Honest,
    /// Accepts operations but never submits them.
    Withholding,
}

/// One user operation handed to an agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserOp {
    pub user: Address,
    pub contract: ContractId,
    pub method: String,
    pub args: Vec<Value>,
    pub inline_data: Vec<u8>,
}

impl UserOp {
    pub fn new(user: Address, contract: ContractId, method: &str, args: Vec<Value>) -> UserOp {
        UserOp {
            user,
            contract,
            method: method.to_string(),
            args,
            inline_data: Vec::new(),
        }
    }

    pub fn with_inline(mut self, data: Vec<u8>) -> UserOp {
        self.inline_data = data;
        self
    }
}

/// Receipt for an operation accepted into an agent's buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ticket(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TicketState {
    pub user: Address,
    pub tx_id: Option<TxId>,
    /// Position inside the bundle.
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct Agent {
    keypair: KeyPair,
    pub address: Address,
    registered: BTreeSet<Address>,
    buffer: VecDeque<(Ticket, BundledCall)>,
    pub batch_size: usize,
    pub flush_interval: u64,
    pub behavior: AgentBehavior,
    pub gas_limit: u64,
    seqs: BTreeMap<Address, u64>,
    tickets: BTreeMap<Ticket, TicketState>,
    next_ticket: u64,
    last_flush: u64,
    flushed_txs: u64,
}

impl Agent {
    pub fn new(label: &str, batch_size: usize) -> Agent {
        let keypair = generate_keypair(label.as_bytes()).expect("agent label is non-empty");
        let address = keypair.address(AddressScheme::Base16Eth);
        Agent {
            keypair,
            address,
            registered: BTreeSet::new(),
            buffer: VecDeque::new(),
            batch_size: batch_size.max(1),
            flush_interval: 5,
            behavior: AgentBehavior::Honest,
            gas_limit: DEFAULT_GAS_LIMIT,
            seqs: BTreeMap::new(),
            tickets: BTreeMap::new(),
            next_ticket: 0,
            last_flush: 0,
            flushed_txs: 0,
        }
    }

    /// Accept `user`. The user must also confirm [`grant_payload`] on-chain.
    pub fn register(&mut self, user: Address) {
        self.registered.insert(user);
    }

    pub fn is_registered(&self, user: &Address) -> bool {
        self.registered.contains(user)
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Bundles sent on-chain so far.
    pub fn flushed_txs(&self) -> u64 {
        self.flushed_txs
    }

    pub fn submit_via_agent(&mut self, op: UserOp) -> Result<Ticket, AccessError> {
        if !self.registered.contains(&op.user) {
            return Err(AccessError::UnregisteredUser(op.user));
        }
        let seq = self.seqs.entry(op.user).or_insert(0);
        let call = BundledCall {
            origin: op.user,
            seq: *seq,
            contract: op.contract,
            method: op.method,
            args: op.args,
            inline_data: op.inline_data,
        };
        *seq += 1;
        let ticket = Ticket(self.next_ticket);
        self.next_ticket += 1;
        self.tickets.insert(
            ticket,
            TicketState {
                user: call.origin,
                tx_id: None,
                index: 0,
            },
        );
        self.buffer.push_back((ticket, call));
        Ok(ticket)
    }

    /// Send up to `batch_size` buffered operations as one transaction.
    /// A withholding agent drops them and reports nothing.
    pub fn flush(&mut self, net: &mut Network) -> Result<Option<TxId>, AccessError> {
        self.last_flush = net.now();
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let take = self.batch_size.min(self.buffer.len());
        let batch: Vec<(Ticket, BundledCall)> = self.buffer.drain(..take).collect();
        if self.behavior == AgentBehavior::Withholding {
            return Ok(None);
        }
        let payload = TxPayload::call(
            ContractId::SYSTEM,
            METHOD_MULTICALL,
            batch.iter().map(|(_, c)| c.to_value()).collect(),
        );
        let meta = TxMetadata {
            sender: self.address,
            receiver: Address::ZERO,
            nonce: net.pending_nonce(&self.address),
            gas_limit: self.gas_limit,
            sim_time: net.now(),
        };
        let tx = build_transaction(&self.keypair.secret_key, meta, payload)
            .expect("agent signs for its own address");
        let id = tx.tx_id;
        net.submit(tx)?;
        self.flushed_txs += 1;
        for (index, (ticket, _)) in batch.iter().enumerate() {
            if let Some(t) = self.tickets.get_mut(ticket) {
                t.tx_id = Some(id);
                t.index = index;
            }
        }
        Ok(Some(id))
    }

    /// Flush full batches, and a partial one once `flush_interval` ticks
    /// have passed since the last flush.
    pub fn tick(&mut self, net: &mut Network) -> Result<Vec<TxId>, AccessError> {
        let mut out = Vec::new();
        while self.buffer.len() >= self.batch_size {
            out.extend(self.flush(net)?);
        }
        if !self.buffer.is_empty() && net.now() >= self.last_flush + self.flush_interval {
            out.extend(self.flush(net)?);
        }
        Ok(out)
    }

    pub fn ticket(&self, t: Ticket) -> Option<TicketState> {
        self.tickets.get(&t).copied()
    }

    /// Outcome of the operation behind `t`, once its bundle is confirmed.
    pub fn op_status(&self, net: &Network, t: Ticket) -> Option<ExecStatus> {
        let st = self.tickets.get(&t)?;
        let (_, receipt) = net.confirmed_tx(&st.tx_id?)?;
        receipt.calls.get(st.index).map(|c| c.status.clone())
    }

    /// Liveness probe for one operation: was its bundle confirmed by `deadline`?
    pub fn check_liveness(&self, net: &Network, t: Ticket, deadline: u64) -> bool {
        self.tickets
            .get(&t)
            .and_then(|s| s.tx_id)
            .is_some_and(|id| net.check_liveness(&id, deadline))
    }
}

/// State retrieved for one account: the live slots naming it and the
/// confirmed transaction that last changed them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievedState {
    pub view: AccountView,
    pub tx: Transaction,
}

/// Latest confirmed state for `addr` in `contract`, as node `node` sees it.
pub fn retrieve_state(
    net: &Network,
    node: usize,
    addr: &Address,
    contract: &ContractId,
) -> Result<RetrievedState, AccessError> {
    let ledger = net.node_ledger(node);
    let view = ledger
        .account_view(addr, contract)
        .ok_or(AccessError::NoConfirmedState)?;
    let (tx, _) = net
        .confirmed_tx(&view.tx_id)
        .ok_or(AccessError::NoConfirmedState)?;
    Ok(RetrievedState {
        tx: tx.clone(),
        view,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{ConsensusConfig, NodeBehavior};
    use crate::identity::identity_from_label;
    use crate::tx::TxError;
    use crate::vm::{ContractDef, ContractKind, ContractState, ExecEnv, Ledger, Vm};

    struct World {
        net: Network,
        ft: ContractId,
        alice: WalletClient,
        bob: WalletClient,
    }

    fn world(seed: u64) -> World {
        let (akp, a) = identity_from_label("access-alice");
        let (bkp, _) = identity_from_label("access-bob");
        let vm = Vm::default();
        let mut state = ContractState::new();
        let ft = ContractId::derive("access-ft");
        vm.deploy_contract(
            &mut state,
            ContractDef {
                contract_id: ft,
                kind: ContractKind::FungibleToken {
                    initial_supply: 10_000,
                    owner: a,
                },
            },
        )
        .unwrap();
        let net = Network::new(
            ConsensusConfig {
                n_nodes: 4,
                ..ConsensusConfig::default()
            },
            Ledger::new(state),
            vm,
            ExecEnv::default(),
            seed,
        );
        World {
            net,
            ft,
            alice: WalletClient::new(akp, AddressScheme::Base16Eth),
            bob: WalletClient::new(bkp, AddressScheme::Base16Eth),
        }
    }

    fn transfer(w: &World, to: Address, amt: u128) -> TxPayload {
        TxPayload::call(w.ft, "transfer", vec![Value::Addr(to), Value::Uint(amt)])
    }

    fn settle(net: &mut Network, rounds: usize) {
        for _ in 0..rounds {
            net.run_round();
        }
    }

    #[test]
    fn connect_is_required_and_idempotent() {
        let mut w = world(1);
        let bob = w.bob.address();
        let p = transfer(&w, bob, 1);
        assert_eq!(
            w.alice.submit_direct(&mut w.net, p.clone()),
            Err(AccessError::NotConnected)
        );
        let s1 = w.alice.connect_wallet("nft-market");
        let s2 = w.alice.connect_wallet("nft-market");
        assert_eq!(s1, s2);
        assert!(w.alice.submit_direct(&mut w.net, p).is_ok());
    }

    #[test]
    fn n_requests_make_n_transactions() {
        let mut w = world(2);
        w.alice.connect_wallet("svc");
        let bob = w.bob.address();
        let ids: Vec<TxId> = (0..7)
            .map(|i| {
                let p = transfer(&w, bob, i + 1);
                w.alice.submit_direct(&mut w.net, p).unwrap()
            })
            .collect();
        settle(&mut w.net, 4);
        assert!(ids.iter().all(|id| w.net.confirmation(id).is_some()));
        assert_eq!(w.net.confirmed_ledger().executed_txs(), 7);
    }

    #[test]
    fn rotated_key_without_reconnect_is_rejected() {
        let mut w = world(3);
        w.alice.connect_wallet("svc");
        w.alice.rotate_key(b"alice-new-key");
        let bob = w.bob.address();
        let p = transfer(&w, bob, 1);
        assert_eq!(
            w.alice.submit_direct(&mut w.net, p.clone()),
            Err(AccessError::Submit(SubmitError::Invalid(TxError::InvalidSignature)))
        );
        w.alice.connect_wallet("svc");
        assert!(w.alice.submit_direct(&mut w.net, p).is_ok());
    }

    #[test]
    fn oversized_inline_surfaces() {
        let mut w = world(4);
        w.alice.connect_wallet("svc");
        let p = TxPayload::call(w.ft, "noop", vec![]).with_inline(vec![1; 2000]);
        assert_eq!(
            w.alice.submit_direct(&mut w.net, p),
            Err(AccessError::Submit(SubmitError::InlineTooLarge {
                len: 2000,
                cap: 1024
            }))
        );
    }

    #[test]
    fn retrieve_before_and_after_confirmation() {
        let mut w = world(5);
        let alice = w.alice.address();
        let bob = w.bob.address();
        assert_eq!(
            retrieve_state(&w.net, 0, &bob, &w.ft),
            Err(AccessError::NoConfirmedState)
        );
        w.alice.connect_wallet("svc");
        let p = transfer(&w, bob, 25);
        let id = w.alice.submit_direct(&mut w.net, p).unwrap();
        settle(&mut w.net, 2);
        let r0 = retrieve_state(&w.net, 0, &bob, &w.ft).unwrap();
        assert_eq!(r0.tx.tx_id, id);
        assert_eq!(r0.view.entries.len(), 1);
        assert_eq!(crate::vm::state::decode_u128(&r0.view.entries[0].1), 25);
        for node in 1..4 {
            assert_eq!(retrieve_state(&w.net, node, &bob, &w.ft).unwrap(), r0);
        }
        let ra = retrieve_state(&w.net, 2, &alice, &w.ft).unwrap();
        assert_eq!(ra.tx.tx_id, id);
    }

    fn agent_world(seed: u64, users: usize) -> (World, Agent, Vec<Address>) {
        let mut w = world(seed);
        let mut agent = Agent::new("agent-1", 10);
        w.alice.connect_wallet("svc");
        let mut addrs = Vec::new();
        for i in 0..users {
            let (kp, a) = identity_from_label(&format!("agent-user-{i}"));
            let mut c = WalletClient::new(kp, AddressScheme::Base16Eth);
            c.connect_wallet("svc");
            c.submit_direct(&mut w.net, grant_payload(agent.address)).unwrap();
            let p = transfer(&w, a, 100);
            w.alice.submit_direct(&mut w.net, p).unwrap();
            agent.register(a);
            addrs.push(a);
        }
        settle(&mut w.net, 3);
        (w, agent, addrs)
    }

    #[test]
    fn unregistered_user_is_refused() {
        let mut agent = Agent::new("agent-x", 10);
        let (_, stranger) = identity_from_label("stranger");
        let op = UserOp::new(stranger, ContractId::derive("c"), "m", vec![]);
        assert_eq!(
            agent.submit_via_agent(op),
            Err(AccessError::UnregisteredUser(stranger))
        );
    }

    #[test]
    fn batching_ceiling_and_attribution() {
        let (mut w, mut agent, users) = agent_world(6, 5);
        let bob = w.bob.address();
        let before = w.net.confirmed_ledger().executed_txs();
        let tickets: Vec<Ticket> = (0..25)
            .map(|i| {
                let u = users[i % users.len()];
                let op = UserOp::new(u, w.ft, "transfer", vec![Value::Addr(bob), Value::Uint(1)]);
                agent.submit_via_agent(op).unwrap()
            })
            .collect();
        let sent = agent.tick(&mut w.net).unwrap();
        assert_eq!(sent.len(), 2);
        assert_eq!(agent.buffered(), 5);
        settle(&mut w.net, 3);
        let sent2 = agent.tick(&mut w.net).unwrap();
        assert_eq!(sent2.len(), 1);
        settle(&mut w.net, 3);
        assert_eq!(agent.flushed_txs(), 3);
        assert_eq!(w.net.confirmed_ledger().executed_txs() - before, 3);
        for t in &tickets {
            assert_eq!(agent.op_status(&w.net, *t), Some(ExecStatus::Success));
        }
        // On-chain sender is the agent; balances moved from users.
        for id in sent.iter().chain(&sent2) {
            let (tx, _) = w.net.confirmed_tx(id).unwrap();
            assert_eq!(tx.metadata.sender, agent.address);
        }
        let bal = |a: Address| {
            crate::vm::Vm::query_state(&w.net.confirmed_ledger().state, &w.ft, "balanceOf", &[Value::Addr(a)])
                .unwrap()
                .as_uint()
                .unwrap()
        };
        assert_eq!(bal(bob), 25);
        assert!(users.iter().all(|u| bal(*u) == 95));
    }

    #[test]
    fn withholding_agent_only_visible_through_liveness() {
        let (mut w, mut agent, users) = agent_world(7, 2);
        agent.behavior = AgentBehavior::Withholding;
        let bob = w.bob.address();
        let t = agent
            .submit_via_agent(UserOp::new(users[0], w.ft, "transfer", vec![Value::Addr(bob), Value::Uint(1)]))
            .unwrap();
        assert_eq!(agent.flush(&mut w.net), Ok(None));
        settle(&mut w.net, 5);
        assert!(!agent.check_liveness(&w.net, t, u64::MAX));
        assert_eq!(w.net.safety_violations(), 0);
        assert!(w.net.check_persistence(0));
    }

    #[test]
    fn flush_interval_sends_partial_batch() {
        let (mut w, mut agent, users) = agent_world(8, 1);
        agent.flush(&mut w.net).unwrap();
        let flushed_at = w.net.now();
        let bob = w.bob.address();
        agent
            .submit_via_agent(UserOp::new(users[0], w.ft, "transfer", vec![Value::Addr(bob), Value::Uint(1)]))
            .unwrap();
        assert!(agent.tick(&mut w.net).unwrap().is_empty());
        while w.net.now() < flushed_at + agent.flush_interval {
            w.net.run_round();
        }
        assert_eq!(agent.tick(&mut w.net).unwrap().len(), 1);
    }

    #[test]
    fn crashed_node_does_not_change_retrieval() {
        let mut w = world(9);
        w.net.set_behavior(3, NodeBehavior::Crashed);
        w.alice.connect_wallet("svc");
        let bob = w.bob.address();
        let p = transfer(&w, bob, 5);
        w.alice.submit_direct(&mut w.net, p).unwrap();
        settle(&mut w.net, 3);
        let a = retrieve_state(&w.net, 0, &bob, &w.ft).unwrap();
        assert_eq!(retrieve_state(&w.net, 1, &bob, &w.ft).unwrap(), a);
        assert_eq!(
            retrieve_state(&w.net, 3, &bob, &w.ft),
            Err(AccessError::NoConfirmedState)
        );
    }
}
