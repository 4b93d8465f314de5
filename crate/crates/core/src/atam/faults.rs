//! Fault plans, read from TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::AgentBehavior;
use crate::archetypes::ExecutorBehavior;
use crate::consensus::ByzantineKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlan {
    /// Per-round probability that an honest maintainer is down.
    pub maintainer_crash_prob: f64,
    pub byzantine_maintainers: usize,
    pub byzantine_kind: ByzantineKind,
    pub agent_behavior: AgentBehavior,
    /// Probability that a storage node is unreachable, drawn per tick and client.
    pub storage_crash_prob: f64,
    pub executor_behavior: ExecutorBehavior,
    /// Per-call probability that the off-chain executor does not answer.
    pub executor_fail_prob: f64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            maintainer_crash_prob: 0.0,
            byzantine_maintainers: 0,
            byzantine_kind: ByzantineKind::Silent,
            agent_behavior: AgentBehavior::Honest,
            storage_crash_prob: 0.0,
            executor_behavior: ExecutorBehavior::Honest,
            executor_fail_prob: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum FaultPlanError {
    #[error("invalid fault plan: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{name} = {value} is not a probability")]
    BadProbability { name: &'static str, value: f64 },
}

impl FaultPlan {
    /// Plan used by the architecture sweep: off-chain storage and executors
    /// are unreliable, maintainers and agents are honest.
    pub fn sweep() -> FaultPlan {
        FaultPlan {
            storage_crash_prob: 0.4,
            executor_fail_prob: 0.1,
            ..FaultPlan::default()
        }
    }

    pub fn validate(&self) -> Result<(), FaultPlanError> {
        for (name, value) in [
            ("maintainer_crash_prob", self.maintainer_crash_prob),
            ("storage_crash_prob", self.storage_crash_prob),
            ("executor_fail_prob", self.executor_fail_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FaultPlanError::BadProbability { name, value });
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<FaultPlan, FaultPlanError> {
        let plan: FaultPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn all_honest(&self) -> bool {
        self.executor_behavior == ExecutorBehavior::Honest
            && self.agent_behavior == AgentBehavior::Honest
            && self.byzantine_maintainers == 0
    }
}
