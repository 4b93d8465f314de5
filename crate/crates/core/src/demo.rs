//! Narrated NFT sale on the hybrid-storage architecture: Alice mints an NFT
//! whose raw data lives off-chain, lists it, and Bob buys it.

use crate::access::{retrieve_state, WalletClient};
use crate::consensus::{ConsensusConfig, Network};
use crate::identity::{generate_keypair, AddressScheme};
use crate::storage::{verify_integrity, IntegrityStatus, OffChainStore, StoragePlan};
use crate::tx::{TxPayload, Value};
use crate::vm::{ExecEnv, Vm};

use crate::atam::runner::{deploy, genesis_exec, nft_data, Contracts};

pub const PHASES: [&str; 5] = [
    "Π1 Identity Creation",
    "Π2 Transaction Generation",
    "Π3 Contract Execution",
    "Π4 State Consensus",
    "Π5 State Retrieval",
];

#[derive(Clone, Debug)]
pub struct DemoReport {
    pub lines: Vec<String>,
    pub all_succeeded: bool,
    pub supply_conserved: bool,
    pub owner_is_buyer: bool,
    pub seller_paid: bool,
    pub integrity: IntegrityStatus,
}

impl DemoReport {
    pub fn ok(&self) -> bool {
        self.all_succeeded
            && self.supply_conserved
            && self.owner_is_buyer
            && self.seller_paid
            && self.integrity == IntegrityStatus::Verified
    }
}

fn uint(v: Result<Value, crate::vm::QueryError>) -> u128 {
    v.ok().and_then(|v| v.as_uint()).unwrap_or(0)
}

pub fn run_demo(seed: u64) -> DemoReport {
    const PRICE: u128 = 100;
    const TOKEN: u128 = 1;
    let mut out = Vec::new();
    let mut say = |s: String| out.push(s);
    let banner = |i: usize| format!("== {} ==", PHASES[i]);

    let c = Contracts::standard();
    let vm = Vm::default();
    let treasury = generate_keypair(b"demo-treasury").expect("seed");
    let mut genesis = deploy(&vm, &c, treasury.address(AddressScheme::Base16Eth), false);

    say(banner(0));
    let alice_kp = generate_keypair(b"demo-alice").expect("seed");
    let bob_kp = generate_keypair(b"demo-bob").expect("seed");
    let mut alice = WalletClient::new(alice_kp, AddressScheme::Base16Eth);
    let mut bob = WalletClient::new(bob_kp, AddressScheme::Base16Eth);
    say(format!("Alice  {}", alice.address()));
    say(format!("Bob    {}", bob.address()));
    say(format!(
        "Bob    {} (base58 form)",
        bob_kp.address(AddressScheme::Base58Btc)
    ));
    genesis_exec(
        &vm,
        &mut genesis,
        &treasury,
        TxPayload::call(c.ft, "transfer", vec![Value::Addr(bob.address()), Value::Uint(PRICE)]),
    );
    say(format!("Bob is funded with {PRICE} tokens"));

    let mut net = Network::new(ConsensusConfig::default(), genesis, vm.clone(), ExecEnv::default(), seed);
    let mut store = OffChainStore::new(5, seed);
    let supply_before = uint(Vm::query_state(&net.confirmed_ledger().state, &c.ft, "totalSupply", &[]));

    say(banner(1));
    alice.connect_wallet("nft-market");
    bob.connect_wallet("nft-market");
    say("Alice and Bob connect their wallets to the NFT market".into());
    let data = nft_data(seed, 0, 4096);
    let mut sref = store
        .put(&data, StoragePlan::off_chain())
        .expect("all storage nodes are up");
    let cid = match &sref {
        crate::storage::StorageRef::Linked { cid, .. } => *cid,
        _ => unreachable!("off-chain plan links data"),
    };
    say(format!(
        "Raw NFT data ({} bytes) stored off-chain as {}",
        data.len(),
        cid.0.to_hex()
    ));
    let mint = alice
        .sign(&net, TxPayload::call(c.nft, "mint", vec![Value::Uint(TOKEN), Value::Cid(cid.0)]))
        .expect("connected");
    net.submit(mint.clone()).expect("valid mint");
    let list = alice
        .sign(&net, TxPayload::call(c.market, "list", vec![Value::Uint(TOKEN), Value::Uint(PRICE)]))
        .expect("connected");
    net.submit(list.clone()).expect("valid listing");
    let buy = bob
        .sign(&net, TxPayload::call(c.market, "buy", vec![Value::Uint(TOKEN), Value::Uint(PRICE)]))
        .expect("connected");
    net.submit(buy.clone()).expect("valid purchase");
    for (name, tx) in [("mint (CID hook)", &mint), ("list", &list), ("buy", &buy)] {
        say(format!(
            "{name}: tx {} from {} nonce {}",
            tx.tx_id.to_hex(),
            tx.metadata.sender.short(),
            tx.metadata.nonce
        ));
    }
    sref.bind(mint.tx_id);

    say(banner(2));
    let mut preview = net.confirmed_ledger().clone();
    let mut all_succeeded = true;
    for (name, tx) in [("mint", &mint), ("list", &list), ("buy", &buy)] {
        let r = vm.execute(&mut preview, tx, net.env(), 0, 1);
        all_succeeded &= r.status.is_success();
        let events: Vec<&str> = r.events.iter().map(|e| e.name.as_str()).collect();
        say(format!(
            "{name}: {:?}, gas {}, events {}",
            r.status,
            r.gas_used,
            events.join(",")
        ));
    }

    say(banner(3));
    let mut rounds = 0;
    while net.confirmation(&buy.tx_id).is_none() && rounds < 50 {
        net.run_round();
        rounds += 1;
    }
    for (name, tx) in [("mint", &mint), ("list", &list), ("buy", &buy)] {
        match net.confirmed_tx(&tx.tx_id) {
            Some((_, r)) => {
                all_succeeded &= r.status.is_success();
                let conf = net.confirmation(&tx.tx_id).expect("confirmed");
                say(format!(
                    "{name} confirmed at height {} (tick {}) by {} maintainers",
                    conf.height,
                    conf.confirmed_at,
                    net.nodes().len()
                ));
            }
            None => {
                all_succeeded = false;
                say(format!("{name} not confirmed"));
            }
        }
    }

    say(banner(4));
    let state = &net.confirmed_ledger().state;
    let owner = Vm::query_state(state, &c.nft, "ownerOf", &[Value::Uint(TOKEN)])
        .ok()
        .and_then(|v| v.as_addr());
    let owner_is_buyer = owner == Some(bob.address());
    let bal = |a| uint(Vm::query_state(state, &c.ft, "balanceOf", &[Value::Addr(a)]));
    let holders = [treasury.address(AddressScheme::Base16Eth), alice.address(), bob.address()];
    let supply_after = uint(Vm::query_state(state, &c.ft, "totalSupply", &[]));
    let held: u128 = holders.iter().map(|a| bal(*a)).sum();
    let supply_conserved = supply_after == supply_before && held == supply_after;
    let seller_paid = bal(alice.address()) == PRICE && bal(bob.address()) == 0;
    say(format!(
        "ownerOf({TOKEN}) = {}",
        owner.map(|a| a.to_string()).unwrap_or_else(|| "none".into())
    ));
    say(format!(
        "Alice balance {}, Bob balance {}, supply {supply_after} (before {supply_before})",
        bal(alice.address()),
        bal(bob.address())
    ));
    if let Ok(r) = retrieve_state(&net, 0, &bob.address(), &c.nft) {
        say(format!(
            "Bob's NFT state was last changed by tx {} at height {}",
            r.tx.tx_id.to_hex(),
            r.view.height
        ));
    }
    let fetched = store.get(&sref).unwrap_or_default();
    let integrity = verify_integrity(&sref, &fetched, &net);
    say(format!("Off-chain data integrity: {integrity:?}"));

    DemoReport {
        lines: out,
        all_succeeded,
        supply_conserved,
        owner_is_buyer,
        seller_paid,
        integrity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_completes_sale() {
        let r = run_demo(42);
        assert!(r.ok(), "{:#?}", r);
        let positions: Vec<usize> = PHASES
            .iter()
            .map(|p| r.lines.iter().position(|l| l.contains(p)).expect("banner"))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }
}
