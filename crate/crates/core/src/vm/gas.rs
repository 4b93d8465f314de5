//! Gas schedule and metering.

use serde::{Deserialize, Serialize};

/// Per-component gas prices. Totals are `base_tx + Σ components`, so a
/// receipt's gas can be recomputed exactly from its trace counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasSchedule {
    pub base_tx: u64,
    /// Charged per 32-byte word written (deletions count as one word).
    pub per_storage_write: u64,
    pub per_storage_read: u64,
    pub per_event: u64,
    /// Charged per byte of the canonical payload encoding.
    pub per_inline_byte: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            base_tx: 21_000,
            per_storage_write: 5_000,
            per_storage_read: 200,
            per_event: 375,
            per_inline_byte: 16,
        }
    }
}

impl GasSchedule {
    pub fn zero() -> GasSchedule {
        GasSchedule {
            base_tx: 0,
            per_storage_write: 0,
            per_storage_read: 0,
            per_event: 0,
            per_inline_byte: 0,
        }
    }

    pub fn intrinsic(&self, payload_bytes: usize) -> u64 {
        self.base_tx + self.per_inline_byte * payload_bytes as u64
    }
}

/// Counters accumulated by one call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasUsage {
    pub reads: u64,
    pub write_words: u64,
    pub events: u64,
}

impl GasUsage {
    pub fn cost(&self, s: &GasSchedule) -> u64 {
        self.reads * s.per_storage_read
            + self.write_words * s.per_storage_write
            + self.events * s.per_event
    }
}
