//! Scenario-driven architecture evaluation.

pub mod faults;
pub mod matrix;
pub mod runner;
pub mod script;
pub mod workload;

use std::thread;

pub use faults::{FaultPlan, FaultPlanError};
pub use matrix::{
    check_against_expected, compare, expected_table, rule_scores, stakeholder_benefits, Column,
    Mismatch, OrdinalMatrix, RuleScores, Stakeholders,
};
pub use runner::{run_scenario, MetricReport, ScenarioError};
pub use script::{ScenarioScript, ScriptError, Step};

use crate::archetypes::{compose, ArchitectureType, SimConfig, SimulationTopology};

/// Run every type. `jobs > 1` spreads types over worker threads; the result
/// is ordered by type either way.
pub fn sweep(
    cfg: &SimConfig,
    script: &ScenarioScript,
    faults: &FaultPlan,
    seed: u64,
    jobs: usize,
) -> Result<Vec<MetricReport>, ScenarioError> {
    let topos: Vec<SimulationTopology> = ArchitectureType::all().map(|a| compose(a, cfg)).collect();
    sweep_topologies(&topos, script, faults, seed, jobs)
}

pub fn sweep_topologies(
    topos: &[SimulationTopology],
    script: &ScenarioScript,
    faults: &FaultPlan,
    seed: u64,
    jobs: usize,
) -> Result<Vec<MetricReport>, ScenarioError> {
    let jobs = jobs.clamp(1, topos.len().max(1));
    if jobs == 1 {
        return topos
            .iter()
            .map(|t| run_scenario(t, script, faults, seed))
            .collect();
    }
    let chunk = topos.len().div_ceil(jobs);
    let parts: Vec<Vec<Result<MetricReport, ScenarioError>>> = thread::scope(|s| {
        let handles: Vec<_> = topos
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|t| run_scenario(t, script, faults, seed))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    parts.into_iter().flatten().collect()
}

/// Measured matrix for a full sweep, with Type1 as baseline.
pub fn sweep_matrix(reports: &[MetricReport]) -> Option<OrdinalMatrix> {
    let baseline = reports.iter().find(|r| r.type_id == 1)?;
    Some(compare(reports, baseline))
}
