//! Hybrid computation: a call is executed by an off-chain executor, which
//! returns its write set. The on-chain verifier re-checks every write except
//! a prefix of the auxiliary ones, which are accepted against a single
//! commitment write. The payment leg is always checked.

use serde::{Deserialize, Serialize};

use crate::digest::keyed_coin;
use crate::tx::TxId;
use crate::vm::{CallResult, Event, ExecStatus, GasUsage, Leg, RevertReason, StateWrite};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TamperRegion {
    /// Tamper a write the on-chain check covers.
    Checked,
    /// Tamper a write accepted on the executor's word.
    Unchecked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ExecutorBehavior {
    #[default]
    Honest,
    Malicious { region: TamperRegion },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridComputeConfig {
    /// Share of the auxiliary writes accepted without re-execution.
    pub offchain_fraction: f64,
    pub executor_behavior: ExecutorBehavior,
    /// Per-call probability that the executor does not answer.
    pub unavailable_prob: f64,
}

impl Default for HybridComputeConfig {
    fn default() -> Self {
        HybridComputeConfig {
            offchain_fraction: 0.5,
            executor_behavior: ExecutorBehavior::Honest,
            unavailable_prob: 0.0,
        }
    }
}

impl HybridComputeConfig {
    /// Number of auxiliary writes left unchecked out of `aux_count`.
    pub fn unchecked_count(&self, aux_count: usize) -> usize {
        if aux_count == 0 || self.offchain_fraction <= 0.0 {
            return 0;
        }
        let m = (self.offchain_fraction * aux_count as f64).round() as usize;
        m.clamp(1, aux_count)
    }
}

pub(crate) fn executor_unavailable(
    cfg: &HybridComputeConfig,
    seed: u64,
    tx_id: &TxId,
    call_index: usize,
) -> bool {
    keyed_coin(
        seed,
        "executor-down",
        &[&tx_id.0, &(call_index as u64).to_be_bytes()],
        cfg.unavailable_prob,
    )
}

fn tamper(w: &mut StateWrite) {
    w.value = match w.value.take() {
        Some(mut v) if !v.is_empty() => {
            let last = v.len() - 1;
            v[last] ^= 0x01;
            Some(v)
        }
        Some(_) => Some(vec![1]),
        None => Some(vec![0xff]),
    };
}

/// Settle one call given the on-chain trace of the method.
pub(crate) fn settle(
    cfg: &HybridComputeConfig,
    trace: Result<(), RevertReason>,
    writes: Vec<StateWrite>,
    events: Vec<Event>,
    reads: u64,
) -> CallResult {
    if let Err(reason) = trace {
        return CallResult {
            status: ExecStatus::Reverted(reason),
            writes: Vec::new(),
            events: Vec::new(),
            usage: GasUsage {
                reads,
                write_words: 0,
                events: 0,
            },
        };
    }
    let aux: Vec<usize> = writes
        .iter()
        .enumerate()
        .filter(|(_, w)| w.leg == Leg::Auxiliary)
        .map(|(i, _)| i)
        .collect();
    let m = cfg.unchecked_count(aux.len());
    let unchecked = &aux[..m];

    let mut reported = writes.clone();
    if let ExecutorBehavior::Malicious { region } = cfg.executor_behavior {
        let target = match region {
            TamperRegion::Checked => (0..reported.len()).find(|i| !unchecked.contains(i)),
            TamperRegion::Unchecked => unchecked.first().copied(),
        };
        if let Some(i) = target {
            tamper(&mut reported[i]);
        }
    }

    let full_words: u64 = writes.iter().map(StateWrite::words).sum();
    let offchain_words: u64 = unchecked.iter().map(|&i| writes[i].words()).sum();
    let commitment = u64::from(m > 0);
    let usage = GasUsage {
        reads: reads + commitment,
        write_words: full_words - offchain_words + commitment,
        events: events.len() as u64,
    };

    let checked_ok = (0..writes.len())
        .filter(|i| !unchecked.contains(i))
        .all(|i| reported[i] == writes[i]);
    if !checked_ok {
        return CallResult {
            status: ExecStatus::Reverted(RevertReason::CommitmentMismatch),
            writes: Vec::new(),
            events: Vec::new(),
            usage,
        };
    }
    CallResult {
        status: ExecStatus::Success,
        writes: reported,
        events,
        usage,
    }
}
