mod common;

use common::retrieval_oracle::security_run;
use w3sim_core::archetypes::ArchitectureType;

#[test]
fn retrieval_returns_latest_confirmed_state_for_every_type() {
    for arch in ArchitectureType::all() {
        let out = security_run(arch, 11, 300);
        assert!(out.confirmed_txs >= 300, "{arch}");
        assert!(out.checks > 0);
        assert_eq!(out.mismatches, 0, "{arch}: {} of {} checks failed", out.mismatches, out.checks);
    }
}
