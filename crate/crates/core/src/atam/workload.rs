//! Randomized multi-user workload over the scenario contracts. Setup
//! (funding, agent grants) runs as ordinary confirmed transactions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::access::{grant_payload, Agent, UserOp, WalletClient};
use crate::archetypes::SimulationTopology;
use crate::consensus::{ConfirmedTx, Network};
use crate::identity::{identity_from_label, Address, AddressScheme};
use crate::storage::{OffChainStore, StorageRef};
use crate::tx::{TxPayload, Value};
use crate::vm::Vm;

use super::faults::FaultPlan;
use super::runner::{deploy, exec_env, nft_data, Contracts};

const DATA_SIZES: [usize; 3] = [48, 200, 700];
const FUNDING: u128 = 10_000;

pub struct RandomWorkload {
    net: Network,
    store: OffChainStore,
    agent: Option<Agent>,
    treasury: WalletClient,
    users: Vec<WalletClient>,
    contracts: Contracts,
    topo: SimulationTopology,
    rng: ChaCha8Rng,
    next_token: u128,
    owned: Vec<(usize, u128)>,
    listed: Vec<(usize, u128, u128)>,
    seed: u64,
}

impl RandomWorkload {
    /// Honest network and actors; setup transactions are queued.
    pub fn new(topo: &SimulationTopology, seed: u64, n_users: usize) -> RandomWorkload {
        let contracts = Contracts::standard();
        let vm = Vm::new(topo.gas);
        let (tkp, treasury_addr) = identity_from_label("workload-treasury");
        let ledger = deploy(&vm, &contracts, treasury_addr, topo.hybrid.is_some());
        let consensus = topo.consensus;
        let env = exec_env(topo, &FaultPlan::default(), seed);
        let mut net = Network::new(consensus, ledger, vm, env, seed);
        let mut treasury = WalletClient::new(tkp, AddressScheme::Base16Eth);
        treasury.connect_wallet("workload");

        let mut agent = topo.agent.map(|a| {
            let mut ag = Agent::new("workload-agent", a.batch_size);
            ag.flush_interval = a.flush_interval;
            ag.gas_limit = consensus.block_gas_limit;
            ag
        });
        let users: Vec<WalletClient> = (0..n_users)
            .map(|i| {
                let (kp, _) = identity_from_label(&format!("workload-user-{i}"));
                let mut w = WalletClient::new(kp, AddressScheme::Base16Eth);
                w.connect_wallet("workload");
                w
            })
            .collect();
        for u in &users {
            treasury
                .submit_direct(
                    &mut net,
                    TxPayload::call(
                        contracts.ft,
                        "transfer",
                        vec![Value::Addr(u.address()), Value::Uint(FUNDING)],
                    ),
                )
                .expect("funding transaction is valid");
            if let Some(a) = agent.as_mut() {
                u.submit_direct(&mut net, grant_payload(a.address))
                    .expect("grant transaction is valid");
                a.register(u.address());
            }
        }
        RandomWorkload {
            net,
            store: OffChainStore::new(topo.storage_settings.nodes, seed),
            agent,
            treasury,
            users,
            contracts,
            topo: topo.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            next_token: 1,
            owned: Vec::new(),
            listed: Vec::new(),
            seed,
        }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn contracts(&self) -> Contracts {
        self.contracts
    }

    /// Every account the workload can touch.
    pub fn accounts(&self) -> Vec<Address> {
        let mut out: Vec<Address> = self.users.iter().map(WalletClient::address).collect();
        out.push(self.treasury.address());
        if let Some(a) = &self.agent {
            out.push(a.address);
        }
        out
    }

    fn submit(&mut self, user: usize, payload: TxPayload) {
        match self.agent.as_mut() {
            Some(a) => {
                let op = UserOp::new(
                    self.users[user].address(),
                    payload.contract_id.expect("workload calls a contract"),
                    &payload.method,
                    payload.args,
                )
                .with_inline(payload.inline_data);
                let _ = a.submit_via_agent(op);
            }
            None => {
                let _ = self.users[user].submit_direct(&mut self.net, payload);
            }
        }
    }

    fn random_op(&mut self) {
        let n = self.users.len();
        let user = self.rng.gen_range(0..n);
        let c = self.contracts;
        match self.rng.gen_range(0..100) {
            0..=39 => {
                let to = self.users[self.rng.gen_range(0..n)].address();
                let amount = self.rng.gen_range(1..=500u128);
                self.submit(
                    user,
                    TxPayload::call(c.ft, "transfer", vec![Value::Addr(to), Value::Uint(amount)]),
                );
            }
            40..=64 => {
                let token = self.next_token;
                self.next_token += 1;
                let size = *DATA_SIZES.choose(&mut self.rng).expect("non-empty");
                let data = nft_data(self.seed, token as usize, size);
                let Ok(r) = self.store.put(&data, self.topo.storage_plan) else {
                    return;
                };
                let payload = match r {
                    StorageRef::Inline { data, .. } => {
                        TxPayload::call(c.nft, "mint", vec![Value::Uint(token)]).with_inline(data)
                    }
                    StorageRef::Linked { cid, .. } => TxPayload::call(
                        c.nft,
                        "mint",
                        vec![Value::Uint(token), Value::Cid(cid.0)],
                    ),
                };
                self.owned.push((user, token));
                self.submit(user, payload);
            }
            65..=84 => {
                if self.owned.is_empty() {
                    return;
                }
                let i = self.rng.gen_range(0..self.owned.len());
                let (owner, token) = self.owned.swap_remove(i);
                let price = self.rng.gen_range(1..=50u128);
                self.listed.push((owner, token, price));
                self.submit(
                    owner,
                    TxPayload::call(c.market, "list", vec![Value::Uint(token), Value::Uint(price)]),
                );
            }
            _ => {
                if self.listed.is_empty() {
                    return;
                }
                let i = self.rng.gen_range(0..self.listed.len());
                let (seller, token, price) = self.listed.swap_remove(i);
                let buyer = if user == seller { (user + 1) % n } else { user };
                self.owned.push((buyer, token));
                self.submit(
                    buyer,
                    TxPayload::call(c.market, "buy", vec![Value::Uint(token), Value::Uint(price)]),
                );
            }
        }
    }

    /// Issue `ops` random operations and run one consensus round.
    pub fn step(&mut self, ops: usize) -> Vec<ConfirmedTx> {
        for _ in 0..ops {
            self.random_op();
        }
        if let Some(a) = self.agent.as_mut() {
            let _ = a.tick(&mut self.net);
        }
        self.net.run_round()
    }
}
