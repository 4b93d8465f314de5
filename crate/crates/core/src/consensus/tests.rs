use super::*;
use crate::tx::{build_transaction, ContractId, TxMetadata, Value};
use crate::vm::{ContractDef, ContractKind, ContractState};

struct Fixture {
    net: Network,
    users: Vec<(KeyPair, Address)>,
    ft: ContractId,
}

fn fixture(config: ConsensusConfig, seed: u64) -> Fixture {
    let users: Vec<_> = (0..4)
        .map(|i| identity_from_label(&format!("cons-user-{i}")))
        .collect();
    let vm = Vm::default();
    let mut state = ContractState::new();
    let ft = ContractId::derive("cons-ft");
    vm.deploy_contract(
        &mut state,
        ContractDef {
            contract_id: ft,
            kind: ContractKind::FungibleToken {
                initial_supply: 1_000_000,
                owner: users[0].1,
            },
        },
    )
    .unwrap();
    let net = Network::new(config, Ledger::new(state), vm, ExecEnv::default(), seed);
    Fixture { net, users, ft }
}

fn bft(n: usize) -> ConsensusConfig {
    ConsensusConfig {
        n_nodes: n,
        ..ConsensusConfig::default()
    }
}

impl Fixture {
    fn transfer(&self, from: usize, amount: u128) -> Transaction {
        let (kp, addr) = &self.users[from];
        let meta = TxMetadata {
            sender: *addr,
            receiver: self.ft.as_address(),
            nonce: self.net.pending_nonce(addr),
            gas_limit: 100_000,
            sim_time: self.net.now(),
        };
        let payload = TxPayload::call(
            self.ft,
            "transfer",
            vec![Value::Addr(self.users[1].1), Value::Uint(amount)],
        );
        build_transaction(&kp.secret_key, meta, payload).unwrap()
    }

    fn submit_n(&mut self, count: usize) -> Vec<TxId> {
        (0..count)
            .map(|i| {
                let tx = self.transfer(0, i as u128 + 1);
                let id = tx.tx_id;
                self.net.submit(tx).unwrap();
                id
            })
            .collect()
    }

    fn rounds(&mut self, r: usize) -> Vec<ConfirmedTx> {
        (0..r).flat_map(|_| self.net.run_round()).collect()
    }
}

#[test]
fn quorum_arithmetic() {
    assert_eq!(Fraction::TWO_THIRDS.at_least(4), 3);
    assert_eq!(Fraction::TWO_THIRDS.at_least(7), 5);
    assert_eq!(Fraction::TWO_THIRDS.at_least(10), 7);
    assert_eq!(Fraction::TWO_THIRDS.at_least(3), 2);
    assert!(Fraction::MAJORITY.exceeded_by(5, 9));
    assert!(!Fraction::MAJORITY.exceeded_by(4, 9));
    assert!(!Fraction::MAJORITY.exceeded_by(51, 100));
    assert!(Fraction::MAJORITY.exceeded_by(52, 100));
}

#[test]
fn submit_accepts_and_rejects() {
    let mut f = fixture(bft(4), 1);
    let tx = f.transfer(0, 1);
    f.net.submit(tx.clone()).unwrap();
    assert_eq!(f.net.submit(tx), Err(SubmitError::DuplicateTx));

    let mut tampered = f.transfer(0, 2);
    tampered.payload.args[1] = Value::Uint(999);
    assert_eq!(
        f.net.submit(tampered),
        Err(SubmitError::Invalid(TxError::InvalidSignature))
    );

    let mut stale = f.transfer(0, 3);
    stale.metadata.nonce = 0;
    let (kp, _) = &f.users[0];
    let stale = build_transaction(&kp.secret_key, stale.metadata, stale.payload).unwrap();
    assert!(matches!(
        f.net.submit(stale),
        Err(SubmitError::Invalid(TxError::StaleNonce { expected: 1, got: 0 }))
    ));

    let mut big = f.transfer(2, 0);
    big.payload.inline_data = vec![0; 1025];
    let (kp, _) = &f.users[2];
    let big = build_transaction(&kp.secret_key, big.metadata, big.payload).unwrap();
    assert_eq!(
        f.net.submit(big),
        Err(SubmitError::InlineTooLarge { len: 1025, cap: 1024 })
    );

    let mut greedy = f.transfer(3, 0);
    greedy.metadata.gas_limit = 3_000_000;
    let (kp, _) = &f.users[3];
    let greedy = build_transaction(&kp.secret_key, greedy.metadata, greedy.payload).unwrap();
    assert_eq!(f.net.submit(greedy), Err(SubmitError::GasLimitTooHigh(3_000_000)));
}

#[test]
fn pool_capacity_boundary() {
    let mut f = fixture(
        ConsensusConfig {
            pool_capacity: 5,
            ..bft(4)
        },
        1,
    );
    f.submit_n(5);
    let tx = f.transfer(0, 77);
    assert_eq!(f.net.submit(tx), Err(SubmitError::PoolFull));
}

#[test]
fn all_honest_confirms_and_persists() {
    let mut f = fixture(bft(4), 3);
    let ids = f.submit_n(20);
    let confirmed = f.rounds(10);
    assert_eq!(confirmed.len(), 20);
    assert!(f.net.check_persistence(0));
    assert_eq!(f.net.safety_violations(), 0);
    assert!(ids.iter().all(|id| f.net.check_liveness(id, f.net.now())));
    assert!(!f.net.check_liveness(&ids[0], 0));
    assert_eq!(f.net.pool_len(), 0);
    // Confirmed order is block order, nonces ascending.
    let nonces: Vec<u64> = confirmed.iter().map(|c| c.tx.metadata.nonce).collect();
    assert_eq!(nonces, (0..20).collect::<Vec<_>>());
}

#[test]
fn one_silent_of_four_still_confirms() {
    let mut f = fixture(bft(4), 4);
    f.net.set_last_nodes(1, NodeBehavior::Byzantine(ByzantineKind::Silent));
    let ids = f.submit_n(3);
    f.rounds(8);
    assert!(ids.iter().all(|id| f.net.confirmation(id).is_some()));
    assert!(f.net.check_persistence(0));
}

#[test]
fn two_silent_of_four_never_confirms() {
    let mut f = fixture(bft(4), 4);
    f.net.set_last_nodes(2, NodeBehavior::Byzantine(ByzantineKind::Silent));
    let ids = f.submit_n(3);
    assert!(f.rounds(30).is_empty());
    assert!(!f.net.check_liveness(&ids[0], u64::MAX));
    assert_eq!(f.net.confirmed_height(), 0);
}

#[test]
fn threshold_oracle_for_silent_faults() {
    for n in [4usize, 7, 10] {
        let q = Fraction::TWO_THIRDS.at_least(n);
        for faulty in 0..n {
            let mut f = fixture(bft(n), 7 + faulty as u64);
            f.net.set_last_nodes(faulty, NodeBehavior::Byzantine(ByzantineKind::Silent));
            let ids = f.submit_n(1);
            f.rounds(2 * n);
            let expect = faulty <= n - q;
            assert_eq!(f.net.confirmation(&ids[0]).is_some(), expect, "n={n} f={faulty}");
        }
    }
}

#[test]
fn crashed_node_excluded_others_agree() {
    let mut f = fixture(bft(7), 5);
    f.net.set_behavior(3, NodeBehavior::Crashed);
    let ids = f.submit_n(10);
    f.rounds(10);
    assert!(ids.iter().all(|id| f.net.confirmation(id).is_some()));
    assert!(f.net.check_persistence(0));
    assert_eq!(f.net.node_chain(3).len(), 1);
}

#[test]
fn equivocation_below_quorum_is_safe() {
    for seed in 0..100 {
        let mut f = fixture(bft(4), seed);
        f.net.set_behavior(0, NodeBehavior::Byzantine(ByzantineKind::Equivocate));
        f.submit_n(6);
        f.rounds(8);
        assert_eq!(f.net.safety_violations(), 0, "seed {seed}");
        assert!(f.net.check_persistence(0));
    }
}

#[test]
fn withholding_proposer_delays_but_does_not_block() {
    let mut f = fixture(bft(4), 8);
    f.net.set_behavior(0, NodeBehavior::Byzantine(ByzantineKind::Withhold));
    let ids = f.submit_n(4);
    let first = f.net.run_round();
    assert!(first.is_empty());
    assert_eq!(f.net.confirmed_height(), 1);
    f.rounds(3);
    assert!(ids.iter().all(|id| f.net.confirmation(id).is_some()));
}

#[test]
fn transient_crashes_keep_views_consistent() {
    let mut f = fixture(bft(7), 9);
    f.net.set_crash_prob(0.15);
    let ids = f.submit_n(30);
    f.rounds(30);
    assert!(ids.iter().all(|id| f.net.confirmation(id).is_some()));
    assert!(f.net.check_persistence(0));
    let l0 = f.net.node_ledger(0);
    for i in 1..7 {
        assert_eq!(f.net.node_ledger(i).state.state_root(), l0.state.state_root());
    }
}

#[test]
fn block_gas_limit_respected() {
    let mut f = fixture(
        ConsensusConfig {
            block_gas_limit: 200_000,
            ..bft(4)
        },
        2,
    );
    f.submit_n(30);
    f.rounds(20);
    for b in f.net.node_chain(0) {
        assert!(b.gas_used() <= 200_000);
    }
    assert!(f.net.confirmed_height() >= 5);
}

#[test]
fn same_seed_same_chain() {
    let run = |seed| {
        let mut f = fixture(bft(7), seed);
        f.net.set_crash_prob(0.1);
        f.submit_n(15);
        f.rounds(12);
        (f.net.dump_chain_ndjson(), f.net.now())
    };
    assert_eq!(run(21), run(21));
    let (dump, _) = run(21);
    for line in dump.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["height"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn execution_order_identical_across_honest_nodes() {
    let mut f = fixture(bft(7), 13);
    f.net.set_crash_prob(0.2);
    f.submit_n(25);
    f.rounds(25);
    let order = |i: usize| -> Vec<TxId> {
        f.net
            .node_chain(i)
            .iter()
            .flat_map(|b| b.txs.iter().map(|t| t.tx_id))
            .collect()
    };
    let o0 = order(0);
    assert_eq!(o0.len(), 25);
    for i in 1..7 {
        assert_eq!(order(i), o0);
    }
}

fn majority(n: usize, k: u64) -> ConsensusConfig {
    ConsensusConfig {
        rule: ConsensusRule::majority(k),
        n_nodes: n,
        ..ConsensusConfig::default()
    }
}

#[test]
fn majority_honest_branch_confirms_after_k_extensions() {
    let mut f = fixture(majority(9, 3), 1);
    // Four nodes sit on a private branch that never grows.
    f.net.set_last_nodes(4, NodeBehavior::Byzantine(ByzantineKind::PrivateFork));
    let ids = f.submit_n(2);
    f.net.run_round();
    assert!(f.net.confirmation(&ids[0]).is_none());
    f.rounds(2);
    assert_eq!(f.net.confirmed_height(), 0);
    f.rounds(1);
    assert_eq!(f.net.confirmed_height(), 1);
    assert!(f.net.confirmation(&ids[0]).is_some());
}

fn branch_winner(share: f64, seed: u64) -> (bool, u64) {
    let mut f = fixture(majority(9, 6), seed);
    f.net.set_adversary_share(share);
    f.submit_n(5);
    f.rounds(120);
    assert!(f.net.confirmed_height() > 0, "nothing confirmed for share {share} seed {seed}");
    // The branch is decided at height 1; adversary blocks carry salt 1.
    let b = f.net.confirmed_block_at(1).unwrap();
    (b.salt == 0, f.net.safety_violations())
}

#[test]
fn majority_share_decides_branch() {
    for seed in 0..20 {
        assert_eq!(branch_winner(0.45, seed), (true, 0));
        assert_eq!(branch_winner(0.55, seed), (false, 0));
    }
}
