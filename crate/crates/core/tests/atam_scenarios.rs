use w3sim_core::access::AgentBehavior;
use w3sim_core::archetypes::{
    compose, ArchitectureType, ExecutorBehavior, SimConfig, TamperRegion,
};
use w3sim_core::atam::{
    check_against_expected, compare, run_scenario, sweep, sweep_matrix, Column, FaultPlan,
    ScenarioError, ScenarioScript,
};
use w3sim_core::vm::GasSchedule;

fn arch(id: u8) -> ArchitectureType {
    ArchitectureType::new(id).unwrap()
}

fn short() -> ScenarioScript {
    ScenarioScript::default().with_repetitions(12)
}

#[test]
fn honest_baseline_is_fully_available() {
    let topo = compose(arch(1), &SimConfig::default());
    let r = run_scenario(&topo, &short(), &FaultPlan::default(), 3).unwrap();
    assert_eq!(r.availability, 1.0);
    assert_eq!(r.security_violations, 0);
    assert_eq!(r.ops_succeeded, r.ops_planned);
    assert!(r.tps > 0.0 && r.gas_per_op > 0.0);
}

#[test]
fn runs_are_deterministic() {
    let topo = compose(arch(11), &SimConfig::default());
    let f = FaultPlan::sweep();
    let a = run_scenario(&topo, &short(), &f, 99).unwrap();
    let b = run_scenario(&topo, &short(), &f, 99).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn large_payload_needs_offchain_storage() {
    let cfg = SimConfig::default();
    let script = ScenarioScript::default()
        .with_repetitions(2)
        .with_data_size(1 << 20);
    let on_chain = run_scenario(&compose(arch(1), &cfg), &script, &FaultPlan::default(), 5);
    assert!(matches!(on_chain, Err(ScenarioError::ScenarioInfeasible(_))));
    let r = run_scenario(&compose(arch(2), &cfg), &script, &FaultPlan::default(), 5).unwrap();
    assert_eq!(r.availability, 1.0);
}

#[test]
fn honest_executors_never_diverge() {
    let cfg = SimConfig::default();
    for a in ArchitectureType::all() {
        let r = run_scenario(&compose(a, &cfg), &short(), &FaultPlan::default(), 8).unwrap();
        assert_eq!(r.security_violations, 0, "type {}", a.type_id());
    }
}

#[test]
fn tampering_unchecked_writes_is_detected_by_replay() {
    let topo = compose(arch(4), &SimConfig::default());
    let faults = FaultPlan {
        executor_behavior: ExecutorBehavior::Malicious {
            region: TamperRegion::Unchecked,
        },
        ..FaultPlan::default()
    };
    let r = run_scenario(&topo, &short(), &faults, 8).unwrap();
    assert!(r.security_violations > 0);
}

#[test]
fn tampering_checked_writes_is_rejected() {
    let topo = compose(arch(4), &SimConfig::default());
    let faults = FaultPlan {
        executor_behavior: ExecutorBehavior::Malicious {
            region: TamperRegion::Checked,
        },
        ..FaultPlan::default()
    };
    let r = run_scenario(&topo, &short(), &faults, 8).unwrap();
    assert_eq!(r.security_violations, 0);
    assert!(r.availability < 1.0);
}

#[test]
fn self_comparison_is_neutral() {
    let topo = compose(arch(1), &SimConfig::default());
    let r = run_scenario(&topo, &short(), &FaultPlan::default(), 1).unwrap();
    let m = compare(std::slice::from_ref(&r), &r);
    let row = &m.rows[0];
    assert!(row.cells.iter().all(|c| *c == 0));
    assert_eq!(row.gas_trend, 0);
    assert_eq!(row.availability_trend, 0);
}

#[test]
fn agent_removal_shows_as_anonymity_mismatch() {
    let cfg = SimConfig::default();
    let f = FaultPlan::default();
    let base = run_scenario(&compose(arch(1), &cfg), &short(), &f, 2).unwrap();
    let t7 = run_scenario(&compose(arch(7), &cfg).without_agent(), &short(), &f, 2).unwrap();
    let m = compare(&[base.clone(), t7], &base);
    let mismatches = check_against_expected(&m);
    assert!(mismatches
        .iter()
        .any(|x| x.type_id == 7 && x.column == Column::Anonymity));
}

#[test]
fn free_gas_flattens_gas_trend() {
    let cfg = SimConfig {
        gas: GasSchedule {
            base_tx: 0,
            per_storage_write: 0,
            per_storage_read: 0,
            per_event: 0,
            per_inline_byte: 0,
        },
        ..SimConfig::default()
    };
    let reports = sweep(&cfg, &short(), &FaultPlan::default(), 4, 1).unwrap();
    let m = sweep_matrix(&reports).unwrap();
    let mismatches = check_against_expected(&m);
    assert!(mismatches.iter().any(|x| x.column == Column::GasTrend));
    assert!(m.rows.iter().all(|r| r.gas_trend == 0));
}

#[test]
fn withholding_agent_causes_liveness_failures() {
    let topo = compose(arch(7), &SimConfig::default());
    let faults = FaultPlan {
        agent_behavior: AgentBehavior::Withholding,
        ..FaultPlan::default()
    };
    let r = run_scenario(&topo, &ScenarioScript::default().with_repetitions(2), &faults, 6).unwrap();
    assert!(r.liveness_failures > 0);
    assert!(r.availability < 1.0);
}
