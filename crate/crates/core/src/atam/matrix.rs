//! Ordinal property and stakeholder matrix relative to the Type1 baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::archetypes::{Access, ArchitectureType, Compute, Storage};

use super::runner::{Components, MetricReport};

/// Relative change below which a measured metric counts as unchanged.
pub const DEAD_BAND: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleScores {
    pub security: i8,
    pub anonymity: i8,
    pub confidentiality: i8,
    pub availability: i8,
    pub usability: i8,
    pub gas: i8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stakeholders {
    pub user: i8,
    pub provider: i8,
    pub maintainer: i8,
}

fn components_of(arch: ArchitectureType) -> Components {
    let (access, compute, storage) = arch.tuple();
    Components {
        access,
        compute,
        storage,
    }
}

fn modified(c: Components) -> i8 {
    i8::from(c.access == Access::Agent)
        + i8::from(c.compute == Compute::Hybrid)
        + i8::from(c.storage != Storage::OnChain)
}

pub fn rule_scores_for(c: Components) -> RuleScores {
    let offchain_data = c.storage != Storage::OnChain;
    let hybrid = c.compute == Compute::Hybrid;
    let m = modified(c);
    RuleScores {
        security: -i8::from(offchain_data) - 2 * i8::from(hybrid),
        anonymity: if c.access == Access::Agent { -3 } else { 0 },
        confidentiality: if hybrid || offchain_data { 2 } else { 0 },
        availability: if hybrid || offchain_data { -2 } else { 0 },
        usability: m,
        gas: m,
    }
}

pub fn rule_scores(arch: ArchitectureType) -> RuleScores {
    rule_scores_for(components_of(arch))
}

pub fn stakeholder_benefits_for(c: Components) -> Stakeholders {
    let m = modified(c);
    Stakeholders {
        user: m,
        provider: -m,
        maintainer: -m,
    }
}

pub fn stakeholder_benefits(arch: ArchitectureType) -> Stakeholders {
    stakeholder_benefits_for(components_of(arch))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    Performance,
    Scalability,
    GasCost,
    Security,
    Anonymity,
    Confidentiality,
    Availability,
    Usability,
    User,
    Provider,
    Maintainer,
    /// Sign of the measured gas saving.
    GasTrend,
    /// Sign of the measured availability change.
    AvailabilityTrend,
}

impl Column {
    pub const TABLE: [Column; 11] = [
        Column::Performance,
        Column::Scalability,
        Column::GasCost,
        Column::Security,
        Column::Anonymity,
        Column::Confidentiality,
        Column::Availability,
        Column::Usability,
        Column::User,
        Column::Provider,
        Column::Maintainer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Column::Performance => "Performance",
            Column::Scalability => "Scalability",
            Column::GasCost => "Gas Cost",
            Column::Security => "Security",
            Column::Anonymity => "Anonymity",
            Column::Confidentiality => "Confidentiality",
            Column::Availability => "Availability",
            Column::Usability => "Usability",
            Column::User => "Web3 User",
            Column::Provider => "Service Provider",
            Column::Maintainer => "BC Maintainer",
            Column::GasTrend => "Gas trend",
            Column::AvailabilityTrend => "Availability trend",
        }
    }

    /// Columns compared on sign only.
    pub fn is_measured(self) -> bool {
        matches!(
            self,
            Column::Performance | Column::Scalability | Column::GasTrend | Column::AvailabilityTrend
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub type_id: u8,
    /// In [`Column::TABLE`] order.
    pub cells: [i8; 11],
    pub gas_trend: i8,
    pub availability_trend: i8,
}

impl MatrixRow {
    pub fn get(&self, c: Column) -> i8 {
        match c {
            Column::GasTrend => self.gas_trend,
            Column::AvailabilityTrend => self.availability_trend,
            _ => self.cells[Column::TABLE.iter().position(|x| *x == c).expect("table column")],
        }
    }

    fn from_rules(type_id: u8, perf: i8, scal: i8, r: RuleScores, s: Stakeholders) -> MatrixRow {
        MatrixRow {
            type_id,
            cells: [
                perf,
                scal,
                r.gas,
                r.security,
                r.anonymity,
                r.confidentiality,
                r.availability,
                r.usability,
                s.user,
                s.provider,
                s.maintainer,
            ],
            gas_trend: r.gas.signum(),
            availability_trend: r.availability.signum(),
        }
    }
}

/// Twelve rows, one per type, in type order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalMatrix {
    pub rows: Vec<MatrixRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub type_id: u8,
    pub column: Column,
    pub expected: i8,
    pub measured: i8,
}

/// Sign of `(value - baseline) / |baseline|` with [`DEAD_BAND`] around zero.
pub fn relative_sign(value: f64, baseline: f64) -> i8 {
    if baseline == 0.0 {
        return if value.abs() < f64::EPSILON {
            0
        } else {
            value.signum() as i8
        };
    }
    let rel = (value - baseline) / baseline.abs();
    if rel.abs() <= DEAD_BAND {
        0
    } else {
        rel.signum() as i8
    }
}

/// Published evaluation: dot counts per type and property.
pub fn expected_table() -> OrdinalMatrix {
    // Performance, Scalability, Gas, Security, Anonymity, Confidentiality,
    // Availability, Usability, User, Provider, Maintainer.
    const T1: [i8; 11] = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
    const T2_3: [i8; 11] = [2, 2, 1, -1, 0, 2, -2, 1, 1, -1, -1];
    const T4: [i8; 11] = [1, 1, 1, -2, 0, 2, -2, 1, 1, -1, -1];
    const T5_6: [i8; 11] = [2, 2, 2, -3, 0, 2, -2, 2, 2, -2, -2];
    const T7: [i8; 11] = [1, 1, 1, 0, -3, 0, 0, 1, 1, -1, -1];
    const T8_9: [i8; 11] = [2, 2, 2, -1, -3, 2, -2, 2, 2, -2, -2];
    const T10: [i8; 11] = [2, 2, 2, -2, -3, 2, -2, 2, 2, -2, -2];
    const T11_12: [i8; 11] = [3, 3, 3, -3, -3, 2, -2, 3, 3, -3, -3];
    let table = [
        T1, T2_3, T2_3, T4, T5_6, T5_6, T7, T8_9, T8_9, T10, T11_12, T11_12,
    ];
    OrdinalMatrix {
        rows: table
            .iter()
            .enumerate()
            .map(|(i, cells)| MatrixRow {
                type_id: i as u8 + 1,
                cells: *cells,
                gas_trend: cells[2].signum(),
                availability_trend: cells[6].signum(),
            })
            .collect(),
    }
}

/// Measured matrix: sign columns from metrics against `baseline`, the rest
/// from the rule scores of each report's observed components.
pub fn compare(reports: &[MetricReport], baseline: &MetricReport) -> OrdinalMatrix {
    let mut rows: Vec<MatrixRow> = reports
        .iter()
        .map(|r| {
            let mut row = MatrixRow::from_rules(
                r.type_id,
                relative_sign(r.tps, baseline.tps),
                relative_sign(r.tps_scaled, baseline.tps_scaled),
                r.rules,
                r.stakeholders,
            );
            row.gas_trend = -relative_sign(r.gas_per_op, baseline.gas_per_op);
            row.availability_trend = relative_sign(r.availability, baseline.availability);
            row
        })
        .collect();
    rows.sort_by_key(|r| r.type_id);
    OrdinalMatrix { rows }
}

/// Exact equality on rule-scored columns, sign agreement on measured ones.
pub fn check_against_expected(measured: &OrdinalMatrix) -> Vec<Mismatch> {
    let expected = expected_table();
    let mut out = Vec::new();
    let columns = Column::TABLE
        .iter()
        .copied()
        .chain([Column::GasTrend, Column::AvailabilityTrend]);
    let columns: Vec<Column> = columns.collect();
    for want in &expected.rows {
        let Some(got) = measured.rows.iter().find(|r| r.type_id == want.type_id) else {
            for &c in &columns {
                out.push(Mismatch {
                    type_id: want.type_id,
                    column: c,
                    expected: want.get(c),
                    measured: 0,
                });
            }
            continue;
        };
        for &c in &columns {
            let (e, m) = (want.get(c), got.get(c));
            let ok = if c.is_measured() {
                e.signum() == m.signum()
            } else {
                e == m
            };
            if !ok {
                out.push(Mismatch {
                    type_id: want.type_id,
                    column: c,
                    expected: e,
                    measured: m,
                });
            }
        }
    }
    out
}

const GROUPS: [&[u8]; 8] = [&[1], &[2, 3], &[4], &[5, 6], &[7], &[8, 9], &[10], &[11, 12]];

fn cell(v: i8) -> String {
    match v {
        0 => "0".to_string(),
        v if v > 0 => format!("+{v}"),
        v => v.to_string(),
    }
}

impl OrdinalMatrix {
    pub fn row(&self, type_id: u8) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.type_id == type_id)
    }

    /// Markdown table with paired types merged when their rows agree.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Architecture |");
        for c in Column::TABLE {
            let _ = write!(out, " {} |", c.label());
        }
        out.push_str(" Gas trend | Availability trend |\n|---|");
        for _ in 0..Column::TABLE.len() + 2 {
            out.push_str("---|");
        }
        out.push('\n');
        for group in GROUPS {
            let rows: Vec<&MatrixRow> = group.iter().filter_map(|t| self.row(*t)).collect();
            let Some(first) = rows.first() else { continue };
            let merged = rows.iter().all(|r| {
                r.cells == first.cells
                    && r.gas_trend == first.gas_trend
                    && r.availability_trend == first.availability_trend
            });
            let emit: Vec<(String, &MatrixRow)> = if merged {
                let ids: Vec<String> = rows.iter().map(|r| r.type_id.to_string()).collect();
                vec![(format!("Type{}", ids.join("/")), *first)]
            } else {
                rows.iter().map(|r| (format!("Type{}", r.type_id), *r)).collect()
            };
            for (name, r) in emit {
                let arch = ArchitectureType::new(r.type_id).expect("valid row");
                let _ = write!(out, "| {} {} |", arch.tuple_label(), name);
                for v in r.cells {
                    let _ = write!(out, " {} |", cell(v));
                }
                let _ = writeln!(out, " {} | {} |", cell(r.gas_trend), cell(r.availability_trend));
            }
        }
        out
    }
}
