//! Runs a scenario script against one architecture and measures it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{grant_payload, retrieve_state, Agent, Ticket, UserOp, WalletClient};
use crate::archetypes::{Access, Compute, SimulationTopology, Storage};
use crate::consensus::{ConsensusConfig, Network, NodeBehavior};
use crate::digest::hash_parts;
use crate::identity::{identity_from_label, Address, AddressScheme, KeyPair};
use crate::storage::{verify_integrity, IntegrityStatus, OffChainStore, StoragePlan, StorageRef};
use crate::tx::{build_transaction, ContractId, TxId, TxMetadata, TxPayload, Value};
use crate::vm::{
    ContractDef, ContractKind, ContractState, ExecEnv, ExecMode, ExecStatus, Ledger, Vm,
};

use super::faults::FaultPlan;
use super::matrix::{rule_scores_for, stakeholder_benefits_for, RuleScores, Stakeholders};
use super::script::{ScenarioScript, Step};

/// Ticks an operation may stay unconfirmed before it counts as lost.
pub const LIVENESS_DEADLINE: u64 = 400;

/// Attempts a client makes at one operation before giving up.
pub const MAX_ATTEMPTS: u32 = 3;

const TREASURY_SUPPLY: u128 = 1 << 80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),
}

/// Contract ids used by every scenario run.
#[derive(Clone, Copy, Debug)]
pub struct Contracts {
    pub ft: ContractId,
    pub nft: ContractId,
    pub market: ContractId,
    pub verifier: ContractId,
}

impl Contracts {
    pub fn standard() -> Contracts {
        Contracts {
            ft: ContractId::derive("scenario-ft"),
            nft: ContractId::derive("scenario-nft"),
            market: ContractId::derive("scenario-market"),
            verifier: ContractId::derive("scenario-verifier"),
        }
    }
}

/// Observed component choices of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub access: Access,
    pub compute: Compute,
    pub storage: Storage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub topology: SimulationTopology,
    pub faults: FaultPlan,
    pub script: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub type_id: u8,
    pub tuple: String,
    pub seed: u64,
    pub nodes: usize,
    /// Successful transaction-carried user operations per tick.
    pub tps: f64,
    /// Same workload on twice as many maintainers.
    pub tps_scaled: f64,
    /// Throughput change per added maintainer.
    pub scalability_slope: f64,
    pub gas_total: u64,
    pub gas_per_op: f64,
    /// Successful operations over attempted ones; scripted operations never
    /// reached count as failed attempts.
    pub availability: f64,
    /// Confirmed calls whose effects differ from pure on-chain execution.
    pub security_violations: u64,
    pub ops_planned: u64,
    pub ops_succeeded: u64,
    pub txs_confirmed: u64,
    pub ops_per_tx: f64,
    pub mean_latency: f64,
    pub interaction_steps: u64,
    /// Inverse of (interaction steps + mean latency).
    pub usability_proxy: f64,
    pub liveness_failures: u64,
    pub elapsed_ticks: u64,
    /// Off-chain storage paid by the service provider, in gas-equivalent units.
    pub provider_cost: u64,
    pub anonymity_score: i8,
    pub confidentiality_score: i8,
    pub usability_score: i8,
    pub rules: RuleScores,
    pub stakeholders: Stakeholders,
    pub observed: Components,
    pub config: ConfigSnapshot,
}

/// Raw counters from one run at one network size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub ops_planned: u64,
    pub ops_ok: u64,
    pub tx_ops_ok: u64,
    pub tx_ops_resolved: u64,
    pub txs_confirmed: u64,
    pub gas_total: u64,
    pub elapsed: u64,
    pub latency_sum: u64,
    pub latency_count: u64,
    pub liveness_failures: u64,
    /// Failed attempts that were retried.
    pub retries: u64,
    pub security_violations: u64,
    pub provider_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Handle {
    Tx(TxId),
    Ticket(Ticket),
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    handle: Handle,
    step_idx: usize,
    submitted_at: u64,
}

struct Session {
    alice: WalletClient,
    bob: WalletClient,
    token_id: u128,
    data: Vec<u8>,
    sref: Option<StorageRef>,
    next: usize,
    pending: Vec<Pending>,
    mint: Option<Handle>,
    last_touch: [Option<Handle>; 2],
    attempts: Vec<u32>,
    done: bool,
}

impl Session {
    /// Record a failed attempt at `step_idx` and rewind to it. Returns false
    /// once the operation has used up its attempts.
    fn retry(&mut self, step_idx: usize, st: &mut RunStats) -> bool {
        self.attempts[step_idx] += 1;
        if self.attempts[step_idx] >= MAX_ATTEMPTS {
            self.done = true;
            return false;
        }
        st.retries += 1;
        self.next = step_idx;
        true
    }

    fn actor(&self, step: Step) -> &WalletClient {
        if step == Step::BuyNft {
            &self.bob
        } else {
            &self.alice
        }
    }
}

/// Storage reachability is drawn per tick and per client.
fn client_epoch(now: u64, client: usize) -> u64 {
    (now << 24) | client as u64
}

/// Deterministic NFT content for one session.
pub fn nft_data(seed: u64, session: usize, size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(size + 32);
    let mut block = 0u64;
    while out.len() < size {
        let d = hash_parts(&[
            b"nft-data",
            &seed.to_be_bytes(),
            &(session as u64).to_be_bytes(),
            &block.to_be_bytes(),
        ]);
        out.extend_from_slice(&d.0);
        block += 1;
    }
    out.truncate(size);
    out
}

fn data_is_inline(plan: StoragePlan, len: usize) -> bool {
    match plan {
        StoragePlan::OnChain => true,
        StoragePlan::OffChain { .. } => false,
        StoragePlan::Hybrid {
            inline_threshold, ..
        } => len <= inline_threshold,
    }
}

fn check_feasible(topo: &SimulationTopology, script: &ScenarioScript) -> Result<(), ScenarioError> {
    let Some(size) = script.data_size() else {
        return Ok(());
    };
    let cap = topo
        .storage_settings
        .inline_cap
        .min(topo.consensus.max_inline_bytes);
    if data_is_inline(topo.storage_plan, size) && size > cap {
        return Err(ScenarioError::ScenarioInfeasible(format!(
            "{size}-byte NFT data exceeds the {cap}-byte inline cap of {}",
            topo.arch.tuple_label()
        )));
    }
    if size == 0 && !data_is_inline(topo.storage_plan, size) {
        return Err(ScenarioError::ScenarioInfeasible(
            "empty NFT data cannot be stored off-chain".into(),
        ));
    }
    Ok(())
}

pub(crate) fn exec_env(topo: &SimulationTopology, faults: &FaultPlan, seed: u64) -> ExecEnv {
    let mode = match topo.hybrid {
        Some(mut h) => {
            h.executor_behavior = faults.executor_behavior;
            h.unavailable_prob = faults.executor_fail_prob;
            ExecMode::Hybrid(h)
        }
        None => ExecMode::OnChain,
    };
    ExecEnv { mode, seed }
}

/// Deploy the scenario contracts into a fresh state.
pub(crate) fn deploy(vm: &Vm, c: &Contracts, treasury: Address, hybrid: bool) -> Ledger {
    let mut state = ContractState::new();
    let mut defs = vec![
        ContractDef {
            contract_id: c.ft,
            kind: ContractKind::FungibleToken {
                initial_supply: TREASURY_SUPPLY,
                owner: treasury,
            },
        },
        ContractDef {
            contract_id: c.nft,
            kind: ContractKind::NonFungibleToken,
        },
        ContractDef {
            contract_id: c.market,
            kind: ContractKind::NftMarket {
                nft: c.nft,
                token: c.ft,
            },
        },
    ];
    if hybrid {
        let (_, executor) = identity_from_label("hybrid-executor");
        defs.push(ContractDef {
            contract_id: c.verifier,
            kind: ContractKind::HybridVerifier { executor },
        });
    }
    for d in defs {
        vm.deploy_contract(&mut state, d)
            .expect("scenario contract ids are distinct");
    }
    Ledger::new(state)
}

/// Execute a setup transaction directly against the genesis ledger.
pub(crate) fn genesis_exec(vm: &Vm, ledger: &mut Ledger, kp: &KeyPair, payload: TxPayload) {
    let sender = kp.address(AddressScheme::Base16Eth);
    let meta = TxMetadata {
        sender,
        receiver: payload
            .contract_id
            .map(|c| c.as_address())
            .unwrap_or(Address::ZERO),
        nonce: ledger.expected_nonce(&sender),
        gas_limit: crate::access::DEFAULT_GAS_LIMIT,
        sim_time: 0,
    };
    let tx = build_transaction(&kp.secret_key, meta, payload).expect("setup key owns sender");
    let r = vm.execute(ledger, &tx, &ExecEnv::default(), 0, 0);
    assert!(r.status.is_success(), "setup transaction failed: {:?}", r.status);
}

fn op_payload(c: &Contracts, s: &Session, step: Step, price: u128) -> (ContractId, &'static str, Vec<Value>, Vec<u8>) {
    match step {
        Step::MintNft { .. } => match s.sref.as_ref().expect("stored before mint") {
            StorageRef::Inline { data, .. } => (c.nft, "mint", vec![Value::Uint(s.token_id)], data.clone()),
            StorageRef::Linked { cid, .. } => (
                c.nft,
                "mint",
                vec![Value::Uint(s.token_id), Value::Cid(cid.0)],
                Vec::new(),
            ),
        },
        Step::ListNft { price } => (
            c.market,
            "list",
            vec![Value::Uint(s.token_id), Value::Uint(price)],
            Vec::new(),
        ),
        Step::BuyNft => (
            c.market,
            "buy",
            vec![Value::Uint(s.token_id), Value::Uint(price)],
            Vec::new(),
        ),
        _ => unreachable!("not a transaction step"),
    }
}

/// One run of `script` on a network of `n_nodes` maintainers.
pub fn run_once(
    topo: &SimulationTopology,
    script: &ScenarioScript,
    faults: &FaultPlan,
    seed: u64,
    n_nodes: usize,
) -> Result<RunStats, ScenarioError> {
    check_feasible(topo, script)?;
    let contracts = Contracts::standard();
    let vm = Vm::new(topo.gas);
    let (treasury_kp, treasury) = identity_from_label("scenario-treasury");
    let mut ledger = deploy(&vm, &contracts, treasury, topo.hybrid.is_some());

    let price = script.price();
    let data_size = script.data_size().unwrap_or(0);
    let reps = script.repetitions;
    let consensus = ConsensusConfig {
        n_nodes,
        ..topo.consensus
    };

    let mut agent = topo.agent.map(|a| {
        let mut ag = Agent::new("scenario-agent", a.batch_size);
        ag.flush_interval = a.flush_interval;
        ag.behavior = faults.agent_behavior;
        ag.gas_limit = consensus.block_gas_limit;
        ag
    });

    let mut sessions = Vec::with_capacity(reps);
    for s in 0..reps {
        let (akp, _) = identity_from_label(&format!("alice-{s}"));
        let (bkp, bob) = identity_from_label(&format!("bob-{s}"));
        if price > 0 {
            genesis_exec(
                &vm,
                &mut ledger,
                &treasury_kp,
                TxPayload::call(contracts.ft, "transfer", vec![Value::Addr(bob), Value::Uint(price)]),
            );
        }
        if let Some(ag) = &agent {
            genesis_exec(&vm, &mut ledger, &akp, grant_payload(ag.address));
            genesis_exec(&vm, &mut ledger, &bkp, grant_payload(ag.address));
        }
        let mut alice_w = WalletClient::new(akp, AddressScheme::Base16Eth);
        let mut bob_w = WalletClient::new(bkp, AddressScheme::Base16Eth);
        alice_w.gas_limit = alice_w.gas_limit.min(consensus.block_gas_limit);
        bob_w.gas_limit = bob_w.gas_limit.min(consensus.block_gas_limit);
        sessions.push(Session {
            alice: alice_w,
            bob: bob_w,
            token_id: s as u128 + 1,
            data: nft_data(seed, s, data_size),
            sref: None,
            next: 0,
            pending: Vec::new(),
            mint: None,
            last_touch: [None, None],
            attempts: vec![0; script.steps.len()],
            done: false,
        });
    }

    let env = exec_env(topo, faults, seed);
    let mut net = Network::new(consensus, ledger, vm.clone(), env.clone(), seed);
    net.set_crash_prob(faults.maintainer_crash_prob);
    if faults.byzantine_maintainers > 0 {
        net.set_last_nodes(
            faults.byzantine_maintainers,
            NodeBehavior::Byzantine(faults.byzantine_kind),
        );
    }
    let mut store = OffChainStore::new(topo.storage_settings.nodes, seed)
        .with_crash_prob(faults.storage_crash_prob);
    store.inline_cap = topo
        .storage_settings
        .inline_cap
        .min(consensus.max_inline_bytes);

    let mut st = RunStats {
        ops_planned: (script.steps.iter().filter(|s| s.is_operation()).count() * reps) as u64,
        ..RunStats::default()
    };
    let start = net.now();
    let mut last_progress = start;
    let mut scenario_txs = std::collections::BTreeSet::new();

    while sessions.iter().any(|s| !s.done) {
        let now = net.now();

        for (idx, s) in sessions.iter_mut().enumerate() {
            if s.done {
                continue;
            }
            // Resolve outstanding operations, oldest first.
            let mut failed_at = None;
            let mut keep = Vec::with_capacity(s.pending.len());
            for p in std::mem::take(&mut s.pending) {
                if failed_at.is_some() {
                    continue;
                }
                let tx_id = match p.handle {
                    Handle::Tx(id) => Some(id),
                    Handle::Ticket(t) => agent.as_ref().and_then(|a| a.ticket(t)).and_then(|t| t.tx_id),
                };
                let status = match p.handle {
                    Handle::Tx(id) => net.confirmed_tx(&id).map(|(_, r)| r.status.clone()),
                    Handle::Ticket(t) => agent.as_ref().and_then(|a| a.op_status(&net, t)),
                };
                match (status, tx_id.and_then(|id| net.confirmation(&id))) {
                    (Some(status), Some(c)) => {
                        st.latency_sum += c.confirmed_at.saturating_sub(p.submitted_at);
                        st.latency_count += 1;
                        st.tx_ops_resolved += 1;
                        last_progress = last_progress.max(c.confirmed_at);
                        if status.is_success() {
                            st.ops_ok += 1;
                            st.tx_ops_ok += 1;
                        } else {
                            failed_at = Some(p.step_idx);
                        }
                    }
                    _ if now > p.submitted_at + LIVENESS_DEADLINE => {
                        st.liveness_failures += 1;
                        s.done = true;
                    }
                    _ => keep.push(p),
                }
            }
            s.pending = keep;
            if s.done {
                continue;
            }
            if let Some(step_idx) = failed_at {
                // Later operations depend on the failed one; they are
                // abandoned and the script resumes from the failure.
                s.pending.retain(|p| p.step_idx < step_idx);
                if !s.retry(step_idx, &mut st) {
                    continue;
                }
            }

            // Advance through the script.
            while !s.done && s.next < script.steps.len() {
                let step = script.steps[s.next];
                let blocked = !s.pending.is_empty()
                    && (step == Step::RetrieveState || (step.is_transaction() && agent.is_none()));
                if blocked {
                    break;
                }
                match step {
                    Step::CreateIdentity => {}
                    Step::ConnectWallet => {
                        s.alice.connect_wallet("nft-market");
                        s.bob.connect_wallet("nft-market");
                        if let Some(a) = agent.as_mut() {
                            a.register(s.alice.address());
                            a.register(s.bob.address());
                        }
                    }
                    Step::MintNft { .. } | Step::ListNft { .. } | Step::BuyNft => {
                        if matches!(step, Step::MintNft { .. }) {
                            store.tick(client_epoch(now, idx));
                            match store.put(&s.data, topo.storage_plan) {
                                Ok(r) => s.sref = Some(r),
                                Err(_) => {
                                    s.retry(s.next, &mut st);
                                    break;
                                }
                            }
                        }
                        let (contract, method, args, inline) = op_payload(&contracts, s, step, price);
                        let actor = s.actor(step);
                        let handle = match agent.as_mut() {
                            Some(a) => a
                                .submit_via_agent(
                                    UserOp::new(actor.address(), contract, method, args).with_inline(inline),
                                )
                                .map(Handle::Ticket),
                            None => actor
                                .submit_direct(
                                    &mut net,
                                    TxPayload::call(contract, method, args).with_inline(inline),
                                )
                                .map(Handle::Tx),
                        };
                        let Ok(handle) = handle else {
                            s.retry(s.next, &mut st);
                            break;
                        };
                        if matches!(step, Step::MintNft { .. }) {
                            s.mint = Some(handle);
                            s.last_touch[0] = Some(handle);
                        }
                        if step == Step::BuyNft {
                            s.last_touch[1] = Some(handle);
                        }
                        s.pending.push(Pending {
                            handle,
                            step_idx: s.next,
                            submitted_at: now,
                        });
                    }
                    Step::RetrieveState => {
                        store.tick(client_epoch(now, idx));
                        if retrieve_ok(&net, agent.as_ref(), &store, &contracts, s, idx) {
                            st.ops_ok += 1;
                        } else {
                            s.retry(s.next, &mut st);
                            break;
                        }
                    }
                }
                s.next += 1;
            }
            if s.next >= script.steps.len() && s.pending.is_empty() {
                s.done = true;
            }
        }

        if let Some(a) = agent.as_mut() {
            let _ = a.tick(&mut net);
        }
        if sessions.iter().all(|s| s.done) {
            break;
        }
        for c in net.run_round() {
            if c.tx.metadata.sender != treasury {
                scenario_txs.insert(c.tx.tx_id);
                st.gas_total += c.receipt.gas_used;
            }
        }
    }

    st.txs_confirmed = scenario_txs.len() as u64;
    st.elapsed = last_progress.saturating_sub(start).max(1);
    st.provider_bytes = store.bytes_stored;
    if topo.hybrid.is_some() {
        st.security_violations = replay_violations(&net, &vm, &env);
    }
    Ok(st)
}

fn retrieve_ok(
    net: &Network,
    agent: Option<&Agent>,
    store: &OffChainStore,
    c: &Contracts,
    s: &Session,
    idx: usize,
) -> bool {
    let resolve = |h: Handle| match h {
        Handle::Tx(id) => Some(id),
        Handle::Ticket(t) => agent.and_then(|a| a.ticket(t)).and_then(|t| t.tx_id),
    };
    let (who, expect) = match s.last_touch {
        [_, Some(buy)] => (s.bob.address(), buy),
        [Some(mint), None] => (s.alice.address(), mint),
        [None, None] => return false,
    };
    let node = idx % net.nodes().len();
    let Ok(got) = retrieve_state(net, node, &who, &c.nft) else {
        return false;
    };
    if Some(got.tx.tx_id) != resolve(expect) {
        return false;
    }
    let Some(mut sref) = s.sref.clone() else {
        return true;
    };
    let Some(mint_tx) = s.mint.and_then(resolve) else {
        return false;
    };
    sref.bind(mint_tx);
    let ledger = net.node_ledger(node);
    let on_chain = Vm::query_state(&ledger.state, &c.nft, "contentOf", &[Value::Uint(s.token_id)]);
    let data = match (on_chain, &sref) {
        (Ok(Value::Bytes(d)), StorageRef::Inline { .. }) => d,
        (Ok(Value::Cid(cid)), StorageRef::Linked { cid: want, .. }) if cid == want.0 => {
            match store.get(&sref) {
                Ok(d) => d,
                Err(_) => return false,
            }
        }
        _ => return false,
    };
    data == s.data && verify_integrity(&sref, &data, net) == IntegrityStatus::Verified
}

/// Re-execute every confirmed block and count successful calls whose write
/// set differs from pure on-chain execution of the same call.
pub fn replay_violations(net: &Network, vm: &Vm, env: &ExecEnv) -> u64 {
    let pure = ExecEnv {
        mode: ExecMode::OnChain,
        seed: env.seed,
    };
    let mut violations = 0;
    for h in 1..=net.confirmed_height() {
        let Some(block) = net.confirmed_block_at(h) else {
            continue;
        };
        let Some(parent) = net.block_ledger(&block.parent_hash) else {
            continue;
        };
        let mut ledger = (*parent).clone();
        for tx in &block.txs {
            let actual = vm.prepare(&ledger, tx, env);
            let reference = vm.prepare(&ledger, tx, &pure);
            for (a, r) in actual.receipt.calls.iter().zip(&reference.receipt.calls) {
                if a.status.is_success()
                    && r.status == ExecStatus::Success
                    && a.writes_digest != r.writes_digest
                {
                    violations += 1;
                }
            }
            Vm::commit(&mut ledger, actual, block.proposer, h);
        }
    }
    violations
}

/// Run `script` on `topo` at its configured size and at twice that size.
pub fn run_scenario(
    topo: &SimulationTopology,
    script: &ScenarioScript,
    faults: &FaultPlan,
    seed: u64,
) -> Result<MetricReport, ScenarioError> {
    let n = topo.consensus.n_nodes;
    let base = run_once(topo, script, faults, seed, n)?;
    let scaled = run_once(topo, script, faults, seed, 2 * n)?;
    let tps = base.tx_ops_ok as f64 / base.elapsed as f64;
    let tps_scaled = scaled.tx_ops_ok as f64 / scaled.elapsed as f64;
    let observed = Components {
        access: topo.access,
        compute: topo.compute,
        storage: topo.storage,
    };
    let rules = rule_scores_for(observed);
    let tx_steps = script.steps.iter().filter(|s| s.is_transaction()).count() as u64;
    let interaction_steps = script.steps.len() as u64
        + if topo.access == Access::Wallet { tx_steps } else { 0 };
    let mean_latency = if base.latency_count == 0 {
        0.0
    } else {
        base.latency_sum as f64 / base.latency_count as f64
    };
    Ok(MetricReport {
        type_id: topo.arch.type_id(),
        tuple: topo.arch.tuple_label(),
        seed,
        nodes: n,
        tps,
        tps_scaled,
        scalability_slope: (tps_scaled - tps) / n.max(1) as f64,
        gas_total: base.gas_total,
        gas_per_op: if base.tx_ops_resolved == 0 {
            0.0
        } else {
            base.gas_total as f64 / base.tx_ops_resolved as f64
        },
        availability: if base.ops_planned == 0 {
            1.0
        } else {
            base.ops_ok as f64 / (base.ops_planned + base.retries) as f64
        },
        security_violations: base.security_violations,
        ops_planned: base.ops_planned,
        ops_succeeded: base.ops_ok,
        txs_confirmed: base.txs_confirmed,
        ops_per_tx: if base.txs_confirmed == 0 {
            0.0
        } else {
            base.tx_ops_resolved as f64 / base.txs_confirmed as f64
        },
        mean_latency,
        interaction_steps,
        usability_proxy: 1.0 / (interaction_steps as f64 + mean_latency).max(1.0),
        liveness_failures: base.liveness_failures,
        elapsed_ticks: base.elapsed,
        provider_cost: base.provider_bytes * topo.storage_settings.offchain_cost_per_byte,
        anonymity_score: rules.anonymity,
        confidentiality_score: rules.confidentiality,
        usability_score: rules.usability,
        rules,
        stakeholders: stakeholder_benefits_for(observed),
        observed,
        config: ConfigSnapshot {
            topology: topo.clone(),
            faults: *faults,
            script: script.to_string(),
        },
    })
}
