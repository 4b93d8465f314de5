//! Simulated maintainer network. Blocks confirm either by a BFT vote quorum
//! or, under the majority-chain rule, once buried deep enough on the
//! heaviest branch held by a majority of nodes.
//!
//! Time is counted in integer ticks. All randomness (message delays, miner
//! election) comes from one seeded generator, so runs are reproducible.

mod bft;
mod majority;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{hash_parts, keyed_coin, Digest};
use crate::identity::{identity_from_label, Address, KeyPair};
use crate::storage::HookLookup;
use crate::tx::{validate_transaction, Transaction, TxError, TxId, TxPayload};
use crate::vm::{BundledCall, ExecEnv, ExecStatus, Ledger, Receipt, Vm, METHOD_MULTICALL};

/// Exact rational threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const TWO_THIRDS: Fraction = Fraction { num: 2, den: 3 };
    pub const MAJORITY: Fraction = Fraction { num: 51, den: 100 };

    /// Smallest count c with c/n >= num/den.
    pub fn at_least(self, n: usize) -> usize {
        ((self.num * n as u64).div_ceil(self.den)) as usize
    }

    /// Whether c/n > num/den.
    pub fn exceeded_by(self, c: usize, n: usize) -> bool {
        c as u64 * self.den > self.num * n as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusRule {
    Bft { quorum: Fraction },
    MajorityChain { fraction: Fraction, confirm_depth: u64 },
}

impl ConsensusRule {
    pub fn bft() -> ConsensusRule {
        ConsensusRule::Bft {
            quorum: Fraction::TWO_THIRDS,
        }
    }

    pub fn majority(confirm_depth: u64) -> ConsensusRule {
        ConsensusRule::MajorityChain {
            fraction: Fraction::MAJORITY,
            confirm_depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub rule: ConsensusRule,
    pub n_nodes: usize,
    /// Minimum ticks per round.
    pub block_interval: u64,
    pub delay_min: u64,
    pub delay_max: u64,
    /// Block bytes a link moves per tick; adds size-dependent delay to proposals.
    pub bytes_per_tick: u64,
    /// Ticks after which a round without a quorum is abandoned.
    pub view_timeout: u64,
    pub block_gas_limit: u64,
    pub pool_capacity: usize,
    pub max_inline_bytes: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            rule: ConsensusRule::bft(),
            n_nodes: 7,
            block_interval: 2,
            delay_min: 1,
            delay_max: 3,
            bytes_per_tick: 4096,
            view_timeout: 20,
            block_gas_limit: 2_000_000,
            pool_capacity: 10_000,
            max_inline_bytes: crate::storage::DEFAULT_INLINE_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ByzantineKind {
    /// Never proposes or votes.
    Silent,
    /// Sends different blocks to two halves of the network and votes for both.
    Equivocate,
    /// Proposes empty blocks but votes normally.
    Withhold,
    /// Majority-chain adversary mining a private branch from genesis.
    PrivateFork,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeBehavior {
    Honest,
    Crashed,
    Byzantine(ByzantineKind),
}

#[derive(Clone, Debug)]
pub struct MaintainerNode {
    pub id: u32,
    pub keypair: KeyPair,
    pub address: Address,
    pub behavior: NodeBehavior,
    tip: Digest,
}

impl MaintainerNode {
    pub fn tip(&self) -> Digest {
        self.tip
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Digest,
    pub proposer: u32,
    /// Distinguishes conflicting blocks from the same proposer.
    pub salt: u64,
    pub state_root: Digest,
    pub txs: Vec<Transaction>,
    pub receipts: Vec<Receipt>,
    pub hash: Digest,
}

impl Block {
    fn seal(
        height: u64,
        parent_hash: Digest,
        proposer: u32,
        salt: u64,
        state_root: Digest,
        txs: Vec<Transaction>,
        receipts: Vec<Receipt>,
    ) -> Block {
        let ids: Vec<u8> = txs.iter().flat_map(|t| t.tx_id.0).collect();
        let hash = hash_parts(&[
            b"block",
            &height.to_be_bytes(),
            &parent_hash.0,
            &proposer.to_be_bytes(),
            &salt.to_be_bytes(),
            &state_root.0,
            &ids,
        ]);
        Block {
            height,
            parent_hash,
            proposer,
            salt,
            state_root,
            txs,
            receipts,
            hash,
        }
    }

    pub fn size_bytes(&self) -> usize {
        96 + self.txs.iter().map(Transaction::size_bytes).sum::<usize>()
    }

    pub fn gas_used(&self) -> u64 {
        self.receipts.iter().map(|r| r.gas_used).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("transaction already known")]
    DuplicateTx,
    #[error("transaction pool is full")]
    PoolFull,
    #[error(transparent)]
    Invalid(#[from] TxError),
    #[error("inline data of {len} bytes exceeds cap {cap}")]
    InlineTooLarge { len: usize, cap: usize },
    #[error("gas limit {0} exceeds the block gas limit")]
    GasLimitTooHigh(u64),
}

/// A transaction in a newly confirmed block.
#[derive(Clone, Debug)]
pub struct ConfirmedTx {
    pub tx: Transaction,
    pub receipt: Receipt,
    pub height: u64,
    pub block_hash: Digest,
    pub confirmed_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxConfirmation {
    pub height: u64,
    pub block_hash: Digest,
    pub index: usize,
    pub confirmed_at: u64,
}

#[derive(Serialize)]
struct BlockRecord<'a> {
    height: u64,
    hash: Digest,
    parent_hash: Digest,
    proposer: u32,
    state_root: Digest,
    gas_used: u64,
    txs: Vec<TxRecord<'a>>,
}

#[derive(Serialize)]
struct TxRecord<'a> {
    tx_id: TxId,
    sender: Address,
    nonce: u64,
    method: &'a str,
    status: &'a ExecStatus,
    gas_used: u64,
}

struct Entry {
    block: Arc<Block>,
    ledger: Arc<Ledger>,
}

pub struct Network {
    config: ConsensusConfig,
    vm: Vm,
    env: ExecEnv,
    seed: u64,
    rng: ChaCha8Rng,
    nodes: Vec<MaintainerNode>,
    blocks: HashMap<Digest, Entry>,
    genesis: Digest,
    pool: VecDeque<Transaction>,
    pool_ids: HashSet<TxId>,
    now: u64,
    round: u64,
    crash_prob: f64,
    adversary_share: f64,
    confirmed: BTreeMap<u64, Digest>,
    confirmed_tip: Digest,
    confirmed_txs: HashMap<TxId, TxConfirmation>,
    safety_violations: u64,
}

impl Network {
    pub fn new(config: ConsensusConfig, genesis: Ledger, vm: Vm, env: ExecEnv, seed: u64) -> Network {
        assert!(config.n_nodes >= 1, "network needs at least one node");
        let root = genesis.state.state_root();
        let g = Arc::new(Block::seal(0, Digest::ZERO, 0, 0, root, Vec::new(), Vec::new()));
        let gh = g.hash;
        let nodes = (0..config.n_nodes as u32)
            .map(|id| {
                let (keypair, address) = identity_from_label(&format!("maintainer-{id}"));
                MaintainerNode {
                    id,
                    keypair,
                    address,
                    behavior: NodeBehavior::Honest,
                    tip: gh,
                }
            })
            .collect();
        let mut blocks = HashMap::new();
        blocks.insert(
            gh,
            Entry {
                block: g,
                ledger: Arc::new(genesis),
            },
        );
        Network {
            config,
            vm,
            env,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes,
            blocks,
            genesis: gh,
            pool: VecDeque::new(),
            pool_ids: HashSet::new(),
            now: 0,
            round: 0,
            crash_prob: 0.0,
            adversary_share: 0.0,
            confirmed: BTreeMap::from([(0, gh)]),
            confirmed_tip: gh,
            confirmed_txs: HashMap::new(),
            safety_violations: 0,
        }
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.config
    }

    pub fn vm(&self) -> &Vm {
        &self.vm
    }

    pub fn env(&self) -> &ExecEnv {
        &self.env
    }

    pub fn nodes(&self) -> &[MaintainerNode] {
        &self.nodes
    }

    pub fn set_behavior(&mut self, node: usize, behavior: NodeBehavior) {
        self.nodes[node].behavior = behavior;
    }

    /// Mark the last `count` nodes with `behavior`.
    pub fn set_last_nodes(&mut self, count: usize, behavior: NodeBehavior) {
        let n = self.nodes.len();
        for i in n.saturating_sub(count)..n {
            self.nodes[i].behavior = behavior;
        }
    }

    /// Per-round probability that an honest node is down for that round.
    pub fn set_crash_prob(&mut self, p: f64) {
        self.crash_prob = p;
    }

    /// Majority-chain adversary: `round(share * n)` nodes mine a private
    /// branch, winning each mining race with probability `share`.
    pub fn set_adversary_share(&mut self, share: f64) {
        self.adversary_share = share;
        let count = (share * self.nodes.len() as f64).round() as usize;
        self.set_last_nodes(count, NodeBehavior::Byzantine(ByzantineKind::PrivateFork));
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn safety_violations(&self) -> u64 {
        self.safety_violations
    }

    pub fn confirmed_height(&self) -> u64 {
        self.entry(&self.confirmed_tip).block.height
    }

    pub fn confirmed_tip(&self) -> Digest {
        self.confirmed_tip
    }

    /// Post-state of a stored block.
    pub fn block_ledger(&self, hash: &Digest) -> Option<Arc<Ledger>> {
        self.blocks.get(hash).map(|e| Arc::clone(&e.ledger))
    }

    pub fn confirmed_block_at(&self, height: u64) -> Option<Arc<Block>> {
        self.confirmed.get(&height).and_then(|h| self.block(h))
    }

    /// Latest confirmed ledger.
    pub fn confirmed_ledger(&self) -> &Ledger {
        &self.entry(&self.confirmed_tip).ledger
    }

    pub fn block(&self, hash: &Digest) -> Option<Arc<Block>> {
        self.blocks.get(hash).map(|e| Arc::clone(&e.block))
    }

    fn entry(&self, h: &Digest) -> &Entry {
        &self.blocks[h]
    }

    /// Next nonce a client should use, counting its pending transactions.
    pub fn pending_nonce(&self, addr: &Address) -> u64 {
        let pending = self.pool.iter().filter(|t| t.metadata.sender == *addr).count() as u64;
        self.confirmed_ledger().expected_nonce(addr) + pending
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<(), SubmitError> {
        if self.pool_ids.contains(&tx.tx_id) || self.confirmed_txs.contains_key(&tx.tx_id) {
            return Err(SubmitError::DuplicateTx);
        }
        if self.pool.len() >= self.config.pool_capacity {
            return Err(SubmitError::PoolFull);
        }
        let cap = self.config.max_inline_bytes;
        let len = inline_len(&tx.payload);
        if len > cap {
            return Err(SubmitError::InlineTooLarge { len, cap });
        }
        if tx.metadata.gas_limit > self.config.block_gas_limit {
            return Err(SubmitError::GasLimitTooHigh(tx.metadata.gas_limit));
        }
        validate_transaction(&tx, self.pending_nonce(&tx.metadata.sender))?;
        self.pool_ids.insert(tx.tx_id);
        self.pool.push_back(tx);
        Ok(())
    }

    pub fn run_round(&mut self) -> Vec<ConfirmedTx> {
        match self.config.rule {
            ConsensusRule::Bft { quorum } => self.run_bft_round(quorum.at_least(self.nodes.len())),
            ConsensusRule::MajorityChain {
                fraction,
                confirm_depth,
            } => self.run_majority_round(fraction, confirm_depth),
        }
    }

    fn delay(&mut self) -> u64 {
        self.rng
            .gen_range(self.config.delay_min..=self.config.delay_max.max(self.config.delay_min))
    }

    fn transient_down(&self, node: usize, round: u64) -> bool {
        keyed_coin(
            self.seed,
            "maintainer-down",
            &[&(node as u64).to_be_bytes(), &round.to_be_bytes()],
            self.crash_prob,
        )
    }

    fn is_live(&self, node: usize, round: u64) -> bool {
        match self.nodes[node].behavior {
            NodeBehavior::Crashed => false,
            NodeBehavior::Honest => !self.transient_down(node, round),
            NodeBehavior::Byzantine(_) => true,
        }
    }

    /// Build a block on `parent`, packing the pool in FIFO order until the
    /// gas limit. The block and its post-state are stored in the tree.
    fn build_block(&mut self, proposer: usize, parent: Digest, salt: u64, with_txs: bool) -> Arc<Block> {
        let parent_entry = self.entry(&parent);
        let height = parent_entry.block.height + 1;
        let mut ledger = (*parent_entry.ledger).clone();
        let mut txs = Vec::new();
        let mut receipts = Vec::new();
        let mut gas = 0u64;
        if with_txs {
            for tx in &self.pool {
                let expected = ledger.expected_nonce(&tx.metadata.sender);
                if tx.metadata.nonce != expected {
                    continue;
                }
                let p = self.vm.prepare(&ledger, tx, &self.env);
                if gas + p.receipt.gas_used > self.config.block_gas_limit {
                    break;
                }
                gas += p.receipt.gas_used;
                receipts.push(p.receipt.clone());
                Vm::commit(&mut ledger, p, proposer as u32, height);
                txs.push(tx.clone());
            }
        }
        let block = Arc::new(Block::seal(
            height,
            parent,
            proposer as u32,
            salt,
            ledger.state.state_root(),
            txs,
            receipts,
        ));
        self.blocks.insert(
            block.hash,
            Entry {
                block: Arc::clone(&block),
                ledger: Arc::new(ledger),
            },
        );
        block
    }

    /// Record `hash` as confirmed at its height. A different block already
    /// confirmed there counts as a safety violation and is kept.
    fn confirm_block(&mut self, hash: Digest, at: u64) -> Vec<ConfirmedTx> {
        let block = Arc::clone(&self.entry(&hash).block);
        if let Some(prev) = self.confirmed.get(&block.height) {
            if *prev != hash {
                self.safety_violations += 1;
            }
            return Vec::new();
        }
        self.confirmed.insert(block.height, hash);
        self.confirmed_tip = hash;
        let mut out = Vec::with_capacity(block.txs.len());
        for (index, (tx, receipt)) in block.txs.iter().zip(&block.receipts).enumerate() {
            self.confirmed_txs.insert(
                tx.tx_id,
                TxConfirmation {
                    height: block.height,
                    block_hash: hash,
                    index,
                    confirmed_at: at,
                },
            );
            out.push(ConfirmedTx {
                tx: tx.clone(),
                receipt: receipt.clone(),
                height: block.height,
                block_hash: hash,
                confirmed_at: at,
            });
        }
        // Drop included and superseded transactions from the pool.
        let ledger = Arc::clone(&self.entry(&hash).ledger);
        let ids = &mut self.pool_ids;
        self.pool.retain(|t| {
            let keep = t.metadata.nonce >= ledger.expected_nonce(&t.metadata.sender);
            if !keep {
                ids.remove(&t.tx_id);
            }
            keep
        });
        out
    }

    fn chain_contains(&self, tip: &Digest, target: &Digest) -> bool {
        let th = self.entry(target).block.height;
        let mut cur = *tip;
        loop {
            let b = &self.entry(&cur).block;
            if b.height < th {
                return false;
            }
            if cur == *target {
                return true;
            }
            if b.height == 0 {
                return false;
            }
            cur = b.parent_hash;
        }
    }

    fn ancestor_at(&self, tip: &Digest, height: u64) -> Digest {
        let mut cur = *tip;
        while self.entry(&cur).block.height > height {
            cur = self.entry(&cur).block.parent_hash;
        }
        cur
    }

    /// Blocks on node `i`'s local chain, genesis first.
    pub fn node_chain(&self, i: usize) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let mut cur = self.nodes[i].tip;
        loop {
            let b = Arc::clone(&self.entry(&cur).block);
            let done = b.height == 0;
            cur = b.parent_hash;
            out.push(b);
            if done {
                break;
            }
        }
        out.reverse();
        out
    }

    /// Confirmed ledger as seen by node `i`.
    pub fn node_ledger(&self, i: usize) -> Arc<Ledger> {
        let tip = self.nodes[i].tip;
        let h = self.entry(&tip).block.height.min(self.confirmed_height());
        let at = self.ancestor_at(&tip, h);
        Arc::clone(&self.entry(&at).ledger)
    }

    /// Whether every honest node holds the same block at each height up to
    /// its tip minus `k`.
    pub fn check_persistence(&self, k: u64) -> bool {
        let honest: Vec<Digest> = self
            .nodes
            .iter()
            .filter(|n| n.behavior == NodeBehavior::Honest)
            .map(|n| n.tip)
            .collect();
        let Some(min_tip) = honest.iter().map(|t| self.entry(t).block.height).min() else {
            return true;
        };
        let upto = min_tip.saturating_sub(k);
        let reference = self.ancestor_at(&honest[0], upto);
        honest.iter().all(|t| self.ancestor_at(t, upto) == reference)
    }

    /// Whether `tx_id` was confirmed at or before tick `deadline`.
    pub fn check_liveness(&self, tx_id: &TxId, deadline: u64) -> bool {
        self.confirmed_txs
            .get(tx_id)
            .is_some_and(|c| c.confirmed_at <= deadline)
    }

    pub fn confirmation(&self, tx_id: &TxId) -> Option<TxConfirmation> {
        self.confirmed_txs.get(tx_id).copied()
    }

    pub fn confirmed_tx(&self, tx_id: &TxId) -> Option<(&Transaction, &Receipt)> {
        let c = self.confirmed_txs.get(tx_id)?;
        let b = &self.entry(&c.block_hash).block;
        Some((&b.txs[c.index], &b.receipts[c.index]))
    }

    /// Confirmed chain, genesis excluded, one JSON block per line.
    pub fn dump_chain_ndjson(&self) -> String {
        let mut out = String::new();
        for (h, hash) in &self.confirmed {
            if *h == 0 {
                continue;
            }
            let b = &self.entry(hash).block;
            let rec = BlockRecord {
                height: b.height,
                hash: b.hash,
                parent_hash: b.parent_hash,
                proposer: b.proposer,
                state_root: b.state_root,
                gas_used: b.gas_used(),
                txs: b
                    .txs
                    .iter()
                    .zip(&b.receipts)
                    .map(|(t, r)| TxRecord {
                        tx_id: t.tx_id,
                        sender: t.metadata.sender,
                        nonce: t.metadata.nonce,
                        method: &t.payload.method,
                        status: &r.status,
                        gas_used: r.gas_used,
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("blocks serialize"));
            out.push('\n');
        }
        out
    }

    pub fn genesis_hash(&self) -> Digest {
        self.genesis
    }
}

impl HookLookup for Network {
    fn confirmed_payload(&self, tx_id: &TxId) -> Option<TxPayload> {
        self.confirmed_tx(tx_id).map(|(t, _)| t.payload.clone())
    }
}

/// Inline bytes a payload carries, including those inside a bundle.
pub fn inline_len(p: &TxPayload) -> usize {
    let bundled = if p.method == METHOD_MULTICALL {
        p.args
            .iter()
            .filter_map(BundledCall::from_value)
            .map(|c| c.inline_data.len())
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    p.inline_data.len().max(bundled)
}

#[cfg(test)]
mod tests;
