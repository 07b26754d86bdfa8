//! Closed-form cost calculators: publication witness, garbled-circuit and
//! DAG storage, key material and bracket makespan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{party_phase1_bytes, party_phase2_bytes, rounds_for, DagError, Phase2Params};
use crate::tournament::Phase2Schedule;

pub const DEFAULT_LAMPORT_OVERHEAD: u64 = 400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("concurrency {q} exceeds N/2 for N = {n}")]
    QTooLarge { n: u32, q: u32 },
    #[error("concurrency {0} is not a power of two")]
    QNotPowerOfTwo(u32),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Bytes per garbled circuit.
    pub s_gc: u64,
    #[serde(default = "default_overhead")]
    pub lamport_overhead: u64,
    pub input_bytes: u64,
    pub n: u32,
    pub pegins: u64,
    #[serde(default = "one")]
    pub q: u32,
    /// Wall-clock length of one period, for reporting only.
    #[serde(default)]
    pub period_seconds: Option<f64>,
    /// User-supplied signing throughput, for reporting only.
    #[serde(default)]
    pub signatures_per_second: Option<f64>,
}

fn default_overhead() -> u64 {
    DEFAULT_LAMPORT_OVERHEAD
}

fn one() -> u32 {
    1
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (v, name) in
            [(self.s_gc, "s_gc"), (self.lamport_overhead, "lamport_overhead"), (self.input_bytes, "input_bytes")]
        {
            if v == 0 {
                return Err(CostError::NonPositive(name));
            }
        }
        if self.n == 0 {
            return Err(CostError::NonPositive("n"));
        }
        if self.q == 0 || !self.q.is_power_of_two() {
            return Err(CostError::QNotPowerOfTwo(self.q));
        }
        Ok(())
    }
}

pub fn publication_bytes(b: u64) -> u64 {
    publication_bytes_with(b, DEFAULT_LAMPORT_OVERHEAD).expect("default overhead cannot overflow below 2^55")
}

pub fn publication_bytes_with(b: u64, overhead: u64) -> Result<u64, CostError> {
    b.checked_mul(overhead).ok_or(CostError::Overflow("publication_bytes"))
}

/// Garbled circuits one operator stores: one per direction per counterparty.
pub fn gc_storage_per_operator(n: u32, s_gc: u64) -> Result<u64, CostError> {
    if n == 0 {
        return Err(CostError::NonPositive("n"));
    }
    2u64.checked_mul(n as u64 - 1)
        .and_then(|v| v.checked_mul(s_gc))
        .ok_or(CostError::Overflow("gc_storage_per_operator"))
}

pub fn dag_storage(pegins: u64, per_pegin_bytes: u64) -> Result<u64, CostError> {
    pegins.checked_mul(per_pegin_bytes).ok_or(CostError::Overflow("dag_storage"))
}

/// Phase 1 periods with `q` parallel brackets.
pub fn phase1_makespan(n: u32, q: u32) -> Result<u64, CostError> {
    if n < 2 {
        return Err(CostError::Dag(DagError::InvalidN(n)));
    }
    if q == 0 || !q.is_power_of_two() {
        return Err(CostError::QNotPowerOfTwo(q));
    }
    if q > 1 && q > n / 2 {
        return Err(CostError::QTooLarge { n, q });
    }
    Ok(6 * (rounds_for(n) - q.trailing_zeros()) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub lamport_public_keys: u64,
    pub conversion_key_hashes: u64,
}

/// Conversion-key variant: `2B` Lamport keys per peg-in, plus one
/// conversion-key hash per peg-in and counterparty.
pub fn key_material(pegins: u64, input_bytes: u64, n: u32) -> Result<KeyMaterial, CostError> {
    let lamport =
        pegins.checked_mul(2).and_then(|v| v.checked_mul(input_bytes)).ok_or(CostError::Overflow("key_material"))?;
    let hashes = pegins.checked_mul((n as u64).saturating_sub(1)).ok_or(CostError::Overflow("key_material"))?;
    Ok(KeyMaterial { lamport_public_keys: lamport, conversion_key_hashes: hashes })
}

/// Bytes operator 0 stores for one peg-in: its Phase 1 templates plus the
/// Phase 2 templates with every other operator as a challenger under the
/// doubling schedule.
pub fn per_pegin_dag_bytes(n: u32) -> Result<u64, CostError> {
    let p1 = party_phase1_bytes(n, 0)?;
    let c = n as u64 - 1;
    let slot_rounds = Phase2Schedule::MaintainOrDouble.slot_rounds(c, 1);
    let params = Phase2Params {
        n,
        max_challengers: c as u32,
        slot_rounds,
        challenger_pool: (0..n).collect(),
        asserter_bond: 1,
        challenger_bond: 1,
        cosig: false,
    };
    let p2 = party_phase2_bytes(&params, 0)?;
    Ok(p1.bytes + p2.bytes)
}

/// Decimal units, three significant decimals.
pub fn decimal_units(bytes: u64) -> String {
    const UNITS: [(&str, f64); 5] = [("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("KB", 1e3), ("B", 1.0)];
    let v = bytes as f64;
    let (u, d) = UNITS.iter().copied().find(|&(_, d)| v >= d).unwrap_or(("B", 1.0));
    if u == "B" {
        format!("{bytes} B")
    } else {
        format!("{:.3} {u}", v / d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub quantity: String,
    pub value: u64,
    pub unit: String,
    pub display: String,
}

fn row(quantity: &str, value: u64, unit: &str) -> CostRow {
    let display = if unit == "bytes" { decimal_units(value) } else { value.to_string() };
    CostRow { quantity: quantity.into(), value, unit: unit.into(), display }
}

/// Every quantity for `p`. `dag_bytes` overrides the measured per-peg-in
/// DAG storage, which is slow to compute for large N.
pub fn cost_table(p: &CostParams, dag_bytes: Option<u64>) -> Result<Vec<CostRow>, CostError> {
    p.validate()?;
    let per_pegin = match dag_bytes {
        Some(b) => b,
        None => per_pegin_dag_bytes(p.n.max(2))?,
    };
    let keys = key_material(p.pegins, p.input_bytes, p.n)?;
    let mut rows = vec![
        row("publication_bytes", publication_bytes_with(p.input_bytes, p.lamport_overhead)?, "bytes"),
        row("gc_storage_per_operator", gc_storage_per_operator(p.n, p.s_gc)?, "bytes"),
        row("dag_bytes_per_pegin", per_pegin, "bytes"),
        row("dag_storage", dag_storage(p.pegins, per_pegin)?, "bytes"),
        row("lamport_public_keys", keys.lamport_public_keys, "keys"),
        row("conversion_key_hashes", keys.conversion_key_hashes, "hashes"),
    ];
    if p.n >= 2 {
        let m = phase1_makespan(p.n, p.q)?;
        rows.push(row("phase1_makespan", m, "periods"));
        if let Some(s) = p.period_seconds {
            rows.push(row("phase1_makespan_seconds", (m as f64 * s).round() as u64, "seconds"));
        }
    }
    if let Some(tp) = p.signatures_per_second.filter(|t| *t > 0.0) {
        let sigs = party_phase1_bytes(p.n.max(2), 0)?.signatures;
        rows.push(row("phase1_signing_seconds", (sigs as f64 / tp).ceil() as u64, "seconds"));
    }
    Ok(rows)
}
