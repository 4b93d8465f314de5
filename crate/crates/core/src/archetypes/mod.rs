//! The architecture design space: access, compute and storage choices, the
//! twelve named types, and composition into a runnable topology.

pub mod hybrid;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hybrid::{ExecutorBehavior, HybridComputeConfig, TamperRegion};

use crate::consensus::ConsensusConfig;
use crate::storage::{StoragePlan, DEFAULT_INLINE_CAP, DEFAULT_INLINE_THRESHOLD, DEFAULT_REPLICAS};
use crate::vm::GasSchedule;

/// How users reach the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    /// A1: browser wallet, one signed transaction per operation.
    Wallet,
    /// A2: an agent batches operations on behalf of registered users.
    Agent,
}

/// Where contract logic runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compute {
    /// B1: fully on-chain.
    OnChain,
    /// B2: off-chain execution with on-chain verification.
    Hybrid,
}

/// Where NFT content lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Storage {
    /// C1: inline in the transaction.
    OnChain,
    /// C2: small payloads inline, larger ones off-chain.
    Hybrid,
    /// C3: always off-chain, linked by content id.
    OffChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchError {
    #[error("type id {0} outside 1..=12")]
    BadTypeId(u8),
    #[error("cannot parse tuple {0:?}; expected e.g. A1,B2,C3")]
    BadTuple(String),
}

/// One of the twelve architecture types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchitectureType(u8);

impl ArchitectureType {
    pub fn new(type_id: u8) -> Result<ArchitectureType, ArchError> {
        if (1..=12).contains(&type_id) {
            Ok(ArchitectureType(type_id))
        } else {
            Err(ArchError::BadTypeId(type_id))
        }
    }

    pub fn all() -> impl Iterator<Item = ArchitectureType> {
        (1..=12).map(ArchitectureType)
    }

    pub fn type_id(self) -> u8 {
        self.0
    }

    pub fn tuple(self) -> (Access, Compute, Storage) {
        let i = self.0 - 1;
        let access = if i < 6 { Access::Wallet } else { Access::Agent };
        let compute = if i % 6 < 3 { Compute::OnChain } else { Compute::Hybrid };
        let storage = match i % 3 {
            0 => Storage::OnChain,
            1 => Storage::Hybrid,
            _ => Storage::OffChain,
        };
        (access, compute, storage)
    }

    pub fn access(self) -> Access {
        self.tuple().0
    }

    pub fn compute(self) -> Compute {
        self.tuple().1
    }

    pub fn storage(self) -> Storage {
        self.tuple().2
    }

    /// Tuple notation, e.g. `(A1,B2,C3)`.
    pub fn tuple_label(self) -> String {
        let (a, b, c) = self.tuple();
        let a = match a {
            Access::Wallet => 1,
            Access::Agent => 2,
        };
        let b = match b {
            Compute::OnChain => 1,
            Compute::Hybrid => 2,
        };
        let c = match c {
            Storage::OnChain => 1,
            Storage::Hybrid => 2,
            Storage::OffChain => 3,
        };
        format!("(A{a},B{b},C{c})")
    }
}

impl fmt::Display for ArchitectureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Type{}", self.0)
    }
}

pub fn type_from_tuple(access: Access, compute: Compute, storage: Storage) -> ArchitectureType {
    let a = match access {
        Access::Wallet => 0,
        Access::Agent => 6,
    };
    let b = match compute {
        Compute::OnChain => 0,
        Compute::Hybrid => 3,
    };
    let c = match storage {
        Storage::OnChain => 1,
        Storage::Hybrid => 2,
        Storage::OffChain => 3,
    };
    ArchitectureType(a + b + c)
}

impl FromStr for ArchitectureType {
    type Err = ArchError;

    /// Accepts `A1,B2,C3`, with optional parentheses and spaces.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ArchError::BadTuple(s.to_string());
        let cleaned: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')')
            .collect::<String>()
            .to_ascii_uppercase();
        let parts: Vec<&str> = cleaned.split(',').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(bad());
        };
        let access = match *a {
            "A1" => Access::Wallet,
            "A2" => Access::Agent,
            _ => return Err(bad()),
        };
        let compute = match *b {
            "B1" => Compute::OnChain,
            "B2" => Compute::Hybrid,
            _ => return Err(bad()),
        };
        let storage = match *c {
            "C1" => Storage::OnChain,
            "C2" => Storage::Hybrid,
            "C3" => Storage::OffChain,
            _ => return Err(bad()),
        };
        Ok(type_from_tuple(access, compute, storage))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StorageSettings {
    pub nodes: usize,
    pub replicas: usize,
    pub inline_threshold: usize,
    pub inline_cap: usize,
    /// Provider-side cost per stored off-chain byte, in gas-equivalent units.
    pub offchain_cost_per_byte: u64,
}

impl Default for StorageSettings {
    fn default() -> Self {
        StorageSettings {
            nodes: 5,
            replicas: DEFAULT_REPLICAS,
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
            inline_cap: DEFAULT_INLINE_CAP,
            offchain_cost_per_byte: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub batch_size: usize,
    pub flush_interval: u64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            batch_size: 10,
            flush_interval: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridSettings {
    pub offchain_fraction: f64,
}

impl Default for HybridSettings {
    fn default() -> Self {
        HybridSettings {
            offchain_fraction: HybridComputeConfig::default().offchain_fraction,
        }
    }
}

/// Tunable knobs shared by every architecture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimConfig {
    pub consensus: ConsensusConfig,
    pub storage: StorageSettings,
    pub agent: AgentSettings,
    pub hybrid: HybridSettings,
    pub gas: GasSchedule,
}

impl SimConfig {
    /// Parse a TOML config; omitted sections and keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<SimConfig, toml::de::Error> {
        toml::from_str(text)
    }
}

/// A runnable wiring of one architecture onto one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTopology {
    pub arch: ArchitectureType,
    pub access: Access,
    pub compute: Compute,
    pub storage: Storage,
    pub storage_plan: StoragePlan,
    /// Present iff compute is hybrid.
    pub hybrid: Option<HybridComputeConfig>,
    /// Present iff access goes through an agent.
    pub agent: Option<AgentSettings>,
    pub consensus: ConsensusConfig,
    pub storage_settings: StorageSettings,
    pub gas: GasSchedule,
}

impl SimulationTopology {
    pub fn has_agent(&self) -> bool {
        self.agent.is_some()
    }

    pub fn has_offchain_store(&self) -> bool {
        self.storage_plan != StoragePlan::OnChain
    }

    /// Components differing from the all-on-chain, wallet-based baseline.
    pub fn modified_components(&self) -> u8 {
        u8::from(self.access == Access::Agent)
            + u8::from(self.compute == Compute::Hybrid)
            + u8::from(self.storage != Storage::OnChain)
    }

    /// Route users through their own wallets instead of an agent.
    pub fn without_agent(mut self) -> SimulationTopology {
        self.access = Access::Wallet;
        self.agent = None;
        self
    }
}

pub fn compose(arch: ArchitectureType, cfg: &SimConfig) -> SimulationTopology {
    let (access, compute, storage) = arch.tuple();
    let storage_plan = match storage {
        Storage::OnChain => StoragePlan::OnChain,
        Storage::Hybrid => StoragePlan::Hybrid {
            inline_threshold: cfg.storage.inline_threshold,
            replicas: cfg.storage.replicas,
        },
        Storage::OffChain => StoragePlan::OffChain {
            replicas: cfg.storage.replicas,
        },
    };
    SimulationTopology {
        arch,
        access,
        compute,
        storage,
        storage_plan,
        hybrid: (compute == Compute::Hybrid).then(|| HybridComputeConfig {
            offchain_fraction: cfg.hybrid.offchain_fraction,
            ..HybridComputeConfig::default()
        }),
        agent: (access == Access::Agent).then_some(cfg.agent),
        consensus: cfg.consensus,
        storage_settings: cfg.storage,
        gas: cfg.gas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_types() {
        use Access::*;
        assert_eq!(type_from_tuple(Wallet, Compute::OnChain, Storage::OnChain).type_id(), 1);
        assert_eq!(type_from_tuple(Agent, Compute::OnChain, Storage::OnChain).type_id(), 7);
        assert_eq!(type_from_tuple(Agent, Compute::Hybrid, Storage::OffChain).type_id(), 12);
        assert_eq!(type_from_tuple(Wallet, Compute::Hybrid, Storage::OnChain).type_id(), 4);
        assert_eq!(type_from_tuple(Wallet, Compute::OnChain, Storage::Hybrid).type_id(), 2);
    }

    #[test]
    fn bijection() {
        let mut seen = std::collections::BTreeSet::new();
        for t in ArchitectureType::all() {
            let (a, b, c) = t.tuple();
            assert_eq!(type_from_tuple(a, b, c), t);
            assert!(seen.insert(t.tuple_label()));
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn parse_tuple() {
        assert_eq!("A2,B2,C3".parse::<ArchitectureType>().unwrap().type_id(), 12);
        assert_eq!("(a1, b1, c1)".parse::<ArchitectureType>().unwrap().type_id(), 1);
        assert!("A3,B1,C1".parse::<ArchitectureType>().is_err());
    }

    #[test]
    fn config_from_partial_toml() {
        let cfg = SimConfig::from_toml("[consensus]\nn_nodes = 10\n[gas]\nbase_tx = 1\n").unwrap();
        assert_eq!(cfg.consensus.n_nodes, 10);
        assert_eq!(cfg.gas.base_tx, 1);
        assert_eq!(cfg.storage, StorageSettings::default());
        assert_eq!(SimConfig::from_toml("").unwrap(), SimConfig::default());
        assert!("A1,B1".parse::<ArchitectureType>().is_err());
        for t in ArchitectureType::all() {
            assert_eq!(t.tuple_label().parse::<ArchitectureType>().unwrap(), t);
        }
    }

    #[test]
    fn bad_type_id() {
        assert!(ArchitectureType::new(0).is_err());
        assert!(ArchitectureType::new(13).is_err());
    }

    #[test]
    fn compose_wires_components() {
        let cfg = SimConfig::default();
        let t1 = compose(ArchitectureType::new(1).unwrap(), &cfg);
        assert!(!t1.has_agent() && !t1.has_offchain_store() && t1.hybrid.is_none());
        assert_eq!(t1.modified_components(), 0);
        let t2 = compose(ArchitectureType::new(2).unwrap(), &cfg);
        assert_eq!(
            t2.storage_plan,
            StoragePlan::Hybrid {
                inline_threshold: 256,
                replicas: 3
            }
        );
        assert!(!t2.has_agent());
        let t3 = compose(ArchitectureType::new(3).unwrap(), &cfg);
        assert_eq!(t3.storage_plan, StoragePlan::OffChain { replicas: 3 });
        let t10 = compose(ArchitectureType::new(10).unwrap(), &cfg);
        assert!(t10.has_agent() && t10.hybrid.is_some() && !t10.has_offchain_store());
        assert_eq!(t10.modified_components(), 2);
        let t12 = compose(ArchitectureType::new(12).unwrap(), &cfg);
        assert_eq!(t12.modified_components(), 3);
        assert!(!t12.clone().without_agent().has_agent());
    }

    #[test]
    fn unchecked_count_clamps() {
        let cfg = HybridComputeConfig::default();
        assert_eq!(cfg.unchecked_count(0), 0);
        assert_eq!(cfg.unchecked_count(1), 1);
        assert_eq!(cfg.unchecked_count(2), 1);
        assert_eq!(cfg.unchecked_count(3), 2);
        let none = HybridComputeConfig {
            offchain_fraction: 0.0,
            ..cfg
        };
        assert_eq!(none.unchecked_count(5), 0);
    }
}
