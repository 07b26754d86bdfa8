//! Running several first-round disputes of one party at the same time.
//!
//! With `Q = 2^k` disputes funded concurrently, the first `k + 1` levels of
//! the bracket settle inside one round window, so the bracket needs
//! `R - k` windows. The ledger simulation decides who wins; the window count
//! and makespan come from this compressed schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{run_phase1, Phase1Options, Phase1Outcome, Strategy};
use crate::dag::{Phase1Dag, ROUND_PERIODS};
use crate::economics::BondParams;
use crate::ledger::{Ledger, LedgerError, OperatorId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParallelError {
    #[error("parallelism {0} must be a power of two")]
    NotPowerOfTwo(u32),
    #[error("parallelism {q} exceeds half the operator count {n}")]
    QTooLarge { q: u32, n: u32 },
    #[error("capital {have} cannot fund {q} concurrent disputes (needs {need})")]
    InsufficientCapital { q: u32, have: u64, need: u64 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParallelOutcome {
    pub q: u32,
    pub winner: Option<OperatorId>,
    pub rounds: u32,
    pub makespan: Option<u64>,
    pub phase1: Phase1Outcome,
}

pub fn run_parallel_brackets(
    q: u32,
    dag: &Phase1Dag,
    strategies: &[Strategy],
    ledger: &mut Ledger,
    opts: &Phase1Options,
    capital: u64,
    bonds: &BondParams,
) -> Result<ParallelOutcome, ParallelError> {
    if q == 0 || !q.is_power_of_two() {
        return Err(ParallelError::NotPowerOfTwo(q));
    }
    if q > 1 && q > dag.n / 2 {
        return Err(ParallelError::QTooLarge { q, n: dag.n });
    }
    let need = q as u64 * bonds.per_dispute_requirement();
    if capital < need {
        return Err(ParallelError::InsufficientCapital { q, have: capital, need });
    }
    let phase1 = run_phase1(dag, strategies, ledger, opts)?;
    if q == 1 {
        return Ok(ParallelOutcome { q, winner: phase1.winner, rounds: dag.rounds, makespan: phase1.makespan, phase1 });
    }
    let rounds = dag.rounds - q.trailing_zeros();
    let makespan = phase1.winner.map(|_| ROUND_PERIODS * rounds as u64);
    Ok(ParallelOutcome { q, winner: phase1.winner, rounds, makespan, phase1 })
}
