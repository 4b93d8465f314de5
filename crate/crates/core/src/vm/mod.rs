//! Contract execution: a deterministic, gas-metered state machine over the
//! built-in contract kinds.
//!
//! Execution is split into [`Vm::prepare`] (pure: computes the receipt and
//! the net state diff) and [`Vm::commit`]. Block producers prepare first so a
//! transaction that would overflow the block gas limit can be left out
//! without touching state.

pub mod contracts;
mod frame;
pub mod gas;
pub mod ledger;
pub mod state;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archetypes::hybrid::{self, HybridComputeConfig};
use crate::digest::Digest;
use crate::identity::Address;
use crate::tx::{ContractId, Transaction, TxId, Value};

pub use contracts::{ContractDef, ContractKind, NftContent};
use frame::{CallFrame, Journal};
pub use gas::{GasSchedule, GasUsage};
pub use ledger::{AccountView, Ledger, Touch};
pub use state::{ContractState, Event, KeyKind, Leg, StateWrite, StorageKey};

/// Why a call reverted. Reverts keep the nonce bump and the gas charge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
pub enum RevertReason {
    #[error("insufficient balance")]
    InsufficientBalance,
    #[error("insufficient allowance")]
    InsufficientAllowance,
    #[error("caller is not the owner")]
    NotOwner,
    #[error("token id already minted")]
    DuplicateTokenId,
    #[error("token is not listed")]
    NotListed,
    #[error("offered price does not match listing")]
    PriceMismatch,
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("unknown contract")]
    UnknownContract,
    #[error("out of gas")]
    OutOfGas,
    #[error("malformed arguments")]
    BadArgs,
    #[error("balance overflow")]
    Overflow,
    #[error("off-chain result does not match the on-chain check")]
    CommitmentMismatch,
    #[error("off-chain executor unavailable")]
    ExecutorUnavailable,
    #[error("agent not authorized by user")]
    NotAuthorized,
    #[error("stale agent sequence number")]
    StaleSequence,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Success,
    Reverted(RevertReason),
}

impl ExecStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, ExecStatus::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("contract {0} already deployed")]
    DuplicateContract(ContractId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("unknown contract")]
    UnknownContract,
    #[error("token {0} not minted")]
    NotMinted(u128),
    #[error("token {0} not listed")]
    NotListed(u128),
    #[error("malformed arguments")]
    BadArgs,
}

/// Result of one user-level call inside a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallOutcome {
    pub origin: Address,
    pub status: ExecStatus,
    pub gas_used: u64,
    /// Digest of the writes this call applied.
    pub writes_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: TxId,
    pub status: ExecStatus,
    pub gas_used: u64,
    pub events: Vec<Event>,
    pub new_state_root: Digest,
    /// Every write in execution order. Empty when the transaction reverted.
    pub writes: Vec<StateWrite>,
    /// One entry per user call; agent bundles have several.
    pub calls: Vec<CallOutcome>,
}

/// How user contract calls are computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum ExecMode {
    #[default]
    OnChain,
    Hybrid(HybridComputeConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ExecEnv {
    pub mode: ExecMode,
    /// Keys the executor's availability and behavior draws.
    pub seed: u64,
}

/// One user operation carried inside an agent bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundledCall {
    pub origin: Address,
    pub seq: u64,
    pub contract: ContractId,
    pub method: String,
    pub args: Vec<Value>,
    pub inline_data: Vec<u8>,
}

impl BundledCall {
    pub fn to_value(&self) -> Value {
        Value::List(vec![
            Value::Addr(self.origin),
            Value::Uint(self.seq as u128),
            Value::Bytes(self.contract.0.to_vec()),
            Value::Text(self.method.clone()),
            Value::List(self.args.clone()),
            Value::Bytes(self.inline_data.clone()),
        ])
    }

    pub fn from_value(v: &Value) -> Option<BundledCall> {
        let Value::List(items) = v else { return None };
        match items.as_slice() {
            [Value::Addr(origin), Value::Uint(seq), Value::Bytes(c), Value::Text(m), Value::List(args), Value::Bytes(inline)] => {
                Some(BundledCall {
                    origin: *origin,
                    seq: u64::try_from(*seq).ok()?,
                    contract: ContractId(c.as_slice().try_into().ok()?),
                    method: m.clone(),
                    args: args.clone(),
                    inline_data: inline.clone(),
                })
            }
            _ => None,
        }
    }
}

pub const METHOD_MULTICALL: &str = "multicall";
pub const METHOD_GRANT_AGENT: &str = "grantAgent";
pub const METHOD_ANCHOR: &str = "anchor";

pub(crate) fn agent_grant_key(user: Address, agent: Address) -> StorageKey {
    StorageKey::new(KeyKind::AgentGrant, &[user, agent], None)
}

pub(crate) fn agent_seq_key(user: Address, agent: Address) -> StorageKey {
    StorageKey::new(KeyKind::AgentSeq, &[user, agent], None)
}

/// Output of [`Vm::prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub receipt: Receipt,
    sender: Address,
    net: BTreeMap<(ContractId, StorageKey), Option<Vec<u8>>>,
}

pub(crate) struct CallResult {
    pub status: ExecStatus,
    pub writes: Vec<StateWrite>,
    pub events: Vec<Event>,
    pub usage: GasUsage,
}

impl CallResult {
    fn reverted(reason: RevertReason, usage: GasUsage) -> CallResult {
        CallResult {
            status: ExecStatus::Reverted(reason),
            writes: Vec::new(),
            events: Vec::new(),
            usage,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Vm {
    pub schedule: GasSchedule,
}

impl Vm {
    pub fn new(schedule: GasSchedule) -> Vm {
        Vm { schedule }
    }

    /// Register a contract and run its constructor.
    pub fn deploy_contract(
        &self,
        state: &mut ContractState,
        def: ContractDef,
    ) -> Result<ContractId, VmError> {
        let id = def.contract_id;
        if id == ContractId::SYSTEM || state.contract(&id).is_some() {
            return Err(VmError::DuplicateContract(id));
        }
        for (k, v) in contracts::constructor_writes(&def) {
            state.set(id, k, Some(v));
        }
        state.insert_contract(def);
        Ok(id)
    }

    /// Prepare and commit in one step.
    pub fn execute(
        &self,
        ledger: &mut Ledger,
        tx: &Transaction,
        env: &ExecEnv,
        proposer: u32,
        height: u64,
    ) -> Receipt {
        let p = self.prepare(ledger, tx, env);
        let receipt = p.receipt.clone();
        Vm::commit(ledger, p, proposer, height);
        receipt
    }

    pub fn prepare(&self, ledger: &Ledger, tx: &Transaction, env: &ExecEnv) -> Prepared {
        let state = &ledger.state;
        let gas_limit = tx.metadata.gas_limit;
        let sender = tx.metadata.sender;
        let intrinsic = self.schedule.intrinsic(tx.payload.encoded_len());
        let out_of_gas = |calls: Vec<CallOutcome>| Prepared {
            receipt: Receipt {
                tx_id: tx.tx_id,
                status: ExecStatus::Reverted(RevertReason::OutOfGas),
                gas_used: gas_limit,
                events: Vec::new(),
                new_state_root: state.state_root(),
                writes: Vec::new(),
                calls,
            },
            sender,
            net: BTreeMap::new(),
        };
        if intrinsic > gas_limit {
            return out_of_gas(vec![CallOutcome {
                origin: sender,
                status: ExecStatus::Reverted(RevertReason::OutOfGas),
                gas_used: gas_limit,
                writes_digest: writes_digest(&[]),
            }]);
        }

        let mut journal = Journal::new(state);
        let mut gas = intrinsic;
        let mut all_writes = Vec::new();
        let mut all_events = Vec::new();
        let mut calls = Vec::new();
        let p = &tx.payload;
        let is_bundle = p.contract_id == Some(ContractId::SYSTEM) && p.method == METHOD_MULTICALL;

        let status = if is_bundle {
            for (idx, v) in p.args.iter().enumerate() {
                let (res, origin) = match BundledCall::from_value(v) {
                    Some(call) => {
                        let r = self.run_bundled(&mut journal, sender, &call, env, &tx.tx_id, idx);
                        (r, call.origin)
                    }
                    None => (
                        CallResult::reverted(RevertReason::BadArgs, GasUsage::default()),
                        sender,
                    ),
                };
                let cost = res.usage.cost(&self.schedule);
                gas += cost;
                if gas > gas_limit {
                    return out_of_gas(calls);
                }
                if res.status.is_success() {
                    journal.apply(&res.writes);
                    all_events.extend(res.events);
                }
                calls.push(CallOutcome {
                    origin,
                    status: res.status,
                    gas_used: cost,
                    writes_digest: writes_digest(&res.writes),
                });
                all_writes.extend(res.writes);
            }
            ExecStatus::Success
        } else {
            let res = self.run_call(
                &journal,
                sender,
                p.contract_id,
                &p.method,
                &p.args,
                &p.inline_data,
                env,
                &tx.tx_id,
                0,
            );
            let cost = res.usage.cost(&self.schedule);
            gas += cost;
            if gas > gas_limit {
                return out_of_gas(Vec::new());
            }
            let applied = if res.status.is_success() { res.writes } else { Vec::new() };
            calls.push(CallOutcome {
                origin: sender,
                status: res.status.clone(),
                gas_used: cost,
                writes_digest: writes_digest(&applied),
            });
            if res.status.is_success() {
                journal.apply(&applied);
                all_events.extend(res.events);
                all_writes.extend(applied);
            }
            res.status
        };

        let net = journal.into_net_writes();
        let new_state_root = state.preview_root(&net, &all_events);
        Prepared {
            receipt: Receipt {
                tx_id: tx.tx_id,
                status,
                gas_used: gas,
                events: all_events,
                new_state_root,
                writes: all_writes,
                calls,
            },
            sender,
            net,
        }
    }

    /// Apply a prepared transaction: state diff, nonce bump, proposer fee.
    pub fn commit(ledger: &mut Ledger, p: Prepared, proposer: u32, height: u64) {
        ledger.state.apply_net(p.net);
        ledger.state.append_events(&p.receipt.events);
        debug_assert_eq!(ledger.state.state_root(), p.receipt.new_state_root);
        ledger.bump_nonce(p.sender);
        ledger.credit_fee(proposer, p.receipt.gas_used);
        ledger.record_touches(p.receipt.tx_id, height, &p.receipt.writes);
    }

    fn run_bundled(
        &self,
        journal: &mut Journal<'_>,
        agent: Address,
        call: &BundledCall,
        env: &ExecEnv,
        tx_id: &TxId,
        idx: usize,
    ) -> CallResult {
        // Registration and sequence checks run on-chain regardless of mode.
        let mut usage = GasUsage {
            reads: 2,
            write_words: 0,
            events: 0,
        };
        if journal
            .get(&ContractId::SYSTEM, &agent_grant_key(call.origin, agent))
            .is_none()
        {
            return CallResult::reverted(RevertReason::NotAuthorized, usage);
        }
        let seq_key = agent_seq_key(call.origin, agent);
        let expected = journal
            .get(&ContractId::SYSTEM, &seq_key)
            .map(|b| state::decode_u128(&b) as u64)
            .unwrap_or(0);
        if call.seq != expected {
            return CallResult::reverted(RevertReason::StaleSequence, usage);
        }
        let seq_write = StateWrite {
            contract: ContractId::SYSTEM,
            key: seq_key,
            value: Some(((expected + 1) as u128).to_be_bytes().to_vec()),
            leg: Leg::Auxiliary,
        };
        usage.write_words += seq_write.words();
        journal.apply(std::slice::from_ref(&seq_write));
        if call.contract == ContractId::SYSTEM {
            return CallResult {
                status: ExecStatus::Reverted(RevertReason::UnknownMethod(call.method.clone())),
                writes: vec![seq_write],
                events: Vec::new(),
                usage,
            };
        }
        let mut res = self.run_call(
            journal,
            call.origin,
            Some(call.contract),
            &call.method,
            &call.args,
            &call.inline_data,
            env,
            tx_id,
            idx,
        );
        res.usage.reads += usage.reads;
        res.usage.write_words += usage.write_words;
        // The sequence bump survives a reverted call.
        if res.status.is_success() {
            res.writes.insert(0, seq_write);
        } else {
            res.writes = vec![seq_write];
        }
        res
    }

    #[allow(clippy::too_many_arguments)]
    fn run_call(
        &self,
        journal: &Journal<'_>,
        caller: Address,
        contract: Option<ContractId>,
        method: &str,
        args: &[Value],
        inline_data: &[u8],
        env: &ExecEnv,
        tx_id: &TxId,
        idx: usize,
    ) -> CallResult {
        let mut frame = CallFrame::new(journal, caller);
        let Some(cid) = contract else {
            let r = native_call(&mut frame, method, args);
            return finish(frame, r);
        };
        if cid == ContractId::SYSTEM {
            let r = system_call(&mut frame, method, args);
            return finish(frame, r);
        }
        let Some(def) = journal.base.contract(&cid) else {
            return CallResult::reverted(RevertReason::UnknownContract, GasUsage::default());
        };
        match &env.mode {
            ExecMode::OnChain => {
                let r = contracts::call(&mut frame, def, method, args, inline_data);
                finish(frame, r)
            }
            ExecMode::Hybrid(cfg) => {
                if hybrid::executor_unavailable(cfg, env.seed, tx_id, idx) {
                    return CallResult::reverted(
                        RevertReason::ExecutorUnavailable,
                        GasUsage::default(),
                    );
                }
                let r = contracts::call(&mut frame, def, method, args, inline_data);
                hybrid::settle(cfg, r, frame.writes, frame.events, frame.reads)
            }
        }
    }

    /// Read-only query against a state snapshot.
    pub fn query_state(
        state: &ContractState,
        contract: &ContractId,
        method: &str,
        args: &[Value],
    ) -> Result<Value, QueryError> {
        let def = state.contract(contract).ok_or(QueryError::UnknownContract)?;
        let journal = Journal::new(state);
        let mut frame = CallFrame::new(&journal, Address::ZERO);
        contracts::query(&mut frame, def, method, args)
    }
}

/// Order-sensitive digest of a write list.
pub fn writes_digest(writes: &[StateWrite]) -> Digest {
    let mut buf = Vec::new();
    for w in writes {
        buf.extend_from_slice(&w.contract.0);
        let k = w.key.to_bytes();
        buf.extend_from_slice(&(k.len() as u32).to_be_bytes());
        buf.extend_from_slice(&k);
        match &w.value {
            Some(v) => {
                buf.push(1);
                buf.extend_from_slice(&(v.len() as u32).to_be_bytes());
                buf.extend_from_slice(v);
            }
            None => buf.push(0),
        }
    }
    crate::digest::hash_parts(&[b"writes", &buf])
}

/// One line of the exported event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tx_id: TxId,
    pub contract: ContractId,
    pub event_name: String,
    pub fields: BTreeMap<String, String>,
}

/// Newline-delimited JSON event log, one record per event in receipt order.
pub fn events_ndjson<'a>(receipts: impl IntoIterator<Item = &'a Receipt>) -> String {
    let mut out = String::new();
    for r in receipts {
        for e in &r.events {
            let rec = EventRecord {
                tx_id: r.tx_id,
                contract: e.contract,
                event_name: e.name.clone(),
                fields: e.fields.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("events serialize"));
            out.push('\n');
        }
    }
    out
}

fn finish(frame: CallFrame<'_, '_>, r: Result<(), RevertReason>) -> CallResult {
    let usage = frame.usage();
    match r {
        Ok(()) => CallResult {
            status: ExecStatus::Success,
            writes: frame.writes,
            events: frame.events,
            usage,
        },
        Err(reason) => CallResult::reverted(reason, usage),
    }
}

fn native_call(
    f: &mut CallFrame<'_, '_>,
    method: &str,
    args: &[Value],
) -> Result<(), RevertReason> {
    if !method.is_empty() {
        return Err(RevertReason::UnknownMethod(method.to_string()));
    }
    if args.is_empty() {
        return Ok(());
    }
    let to = args.first().and_then(Value::as_addr).ok_or(RevertReason::BadArgs)?;
    let amount = args.get(1).and_then(Value::as_uint).ok_or(RevertReason::BadArgs)?;
    let from = f.caller;
    let key = |a: Address| StorageKey::new(KeyKind::NativeBalance, &[a], None);
    let from_bal = f.read_u128(ContractId::SYSTEM, &key(from));
    if from_bal < amount {
        return Err(RevertReason::InsufficientBalance);
    }
    f.write(
        ContractId::SYSTEM,
        key(from),
        Some((from_bal - amount).to_be_bytes().to_vec()),
        Leg::Payment,
    );
    let to_bal = f.read_u128(ContractId::SYSTEM, &key(to));
    let credited = to_bal.checked_add(amount).ok_or(RevertReason::Overflow)?;
    f.write(
        ContractId::SYSTEM,
        key(to),
        Some(credited.to_be_bytes().to_vec()),
        Leg::Payment,
    );
    Ok(())
}

fn system_call(
    f: &mut CallFrame<'_, '_>,
    method: &str,
    args: &[Value],
) -> Result<(), RevertReason> {
    match method {
        METHOD_GRANT_AGENT => {
            let agent = args.first().and_then(Value::as_addr).ok_or(RevertReason::BadArgs)?;
            let user = f.caller;
            f.write(
                ContractId::SYSTEM,
                agent_grant_key(user, agent),
                Some(vec![1]),
                Leg::Auxiliary,
            );
            f.emit(Event::new(
                ContractId::SYSTEM,
                "AgentGranted",
                &[("user", user.text()), ("agent", agent.text())],
            ));
            Ok(())
        }
        // Anchors only record their arguments in the confirmed transaction.
        METHOD_ANCHOR => Ok(()),
        _ => Err(RevertReason::UnknownMethod(method.to_string())),
    }
}
