//! Bracket and challenger-round execution against the ledger.

mod lottery;
mod parallel;
mod phase1;
mod phase2;

pub use lottery::{
    commit, lottery_template_count, parity_selector, run_lottery, verify_reveal, LotteryError, LotteryMatch,
    LotteryOutcome, LotteryPlayer, LotteryReason,
};
pub use parallel::{run_parallel_brackets, ParallelError, ParallelOutcome};
pub use phase1::{run_phase1, CaseKind, CaseOutcome, CaseRecord, Phase1Options, Phase1Outcome, Violation};
pub use phase2::{run_phase2, AsserterPolicy, Phase2Error, Phase2Outcome, Phase2Run, RefundKind, RefundPolicy};

use serde::{Deserialize, Serialize};

use crate::ledger::Avp;

/// Per-operator decision policy.
///
/// Adversarial policies assert a false value. `StallAfterRound(r)` plays
/// fully through round `r`; in round `r + 1` it still opens (challenges as
/// Bob) and then abandons, and from round `r + 2` on it only extends its own
/// enabler chain when nobody contests the selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Honest,
    Abstain,
    StallAfterRound(u32),
    /// Active adversary that also delays every other party's broadcasts by
    /// this fraction of a period.
    CensorBudget(f64),
    /// Opens a slot and never registers.
    OpenAndAbandon,
    /// Active adversary binding a different false value in every dispute.
    EquivocateAssertion,
    /// Honest, but registers two periods late.
    LateRegister,
}

impl Strategy {
    pub fn registers(&self) -> bool {
        !matches!(self, Strategy::Abstain | Strategy::OpenAndAbandon)
    }

    pub fn asserts_truth(&self) -> bool {
        matches!(self, Strategy::Honest | Strategy::LateRegister)
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Strategy::Honest | Strategy::LateRegister)
    }

    /// Value bound by this party in its `dispute`-th assertion.
    pub fn assertion(&self, avp: &Avp, dispute: u64) -> u64 {
        match self {
            Strategy::Honest | Strategy::LateRegister => avp.correct,
            Strategy::EquivocateAssertion => avp.correct.wrapping_add(1 + dispute),
            _ => avp.correct.wrapping_add(1),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::StallAfterRound(r) => format!("StallAfterRound({r})"),
            Strategy::CensorBudget(f) => format!("CensorBudget({f})"),
            other => format!("{other:?}"),
        }
    }
}

/// Phase 2 challenger behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChallengerPolicy {
    /// Registers and challenges iff the assertion is false.
    Honest,
    /// Registers and disputes regardless of the assertion.
    Malicious,
    /// Registers and never challenges.
    RegisterOnly,
    Abstain,
    /// Attempts to register after the window closed.
    LateRegister,
}

impl From<Strategy> for ChallengerPolicy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Honest => ChallengerPolicy::Honest,
            Strategy::Abstain | Strategy::OpenAndAbandon => ChallengerPolicy::Abstain,
            Strategy::StallAfterRound(_) => ChallengerPolicy::RegisterOnly,
            Strategy::CensorBudget(_) | Strategy::EquivocateAssertion => ChallengerPolicy::Malicious,
            Strategy::LateRegister => ChallengerPolicy::LateRegister,
        }
    }
}

/// How many disputes the asserter opens per round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase2Schedule {
    /// `k_{r+1} = 2 k_r`.
    MaintainOrDouble,
    /// `k_{r+1} = k_r + 1`.
    Gradual,
    /// Explicit list; the last entry repeats.
    Custom(Vec<u64>),
}

impl Phase2Schedule {
    /// Disputes wanted in round index `round` (zero based) after `prev`;
    /// `k1` is the first-round capacity.
    pub fn next(&self, round: usize, prev: u64, k1: u64) -> u64 {
        match self {
            _ if round == 0 && !matches!(self, Phase2Schedule::Custom(_)) => k1,
            Phase2Schedule::MaintainOrDouble => prev.saturating_mul(2),
            Phase2Schedule::Gradual => prev + 1,
            Phase2Schedule::Custom(list) => {
                let v = list.get(round).or(list.last()).copied().unwrap_or(1);
                v.max(prev)
            }
        }
    }

    /// Per-round dispute counts covering `c` challengers.
    pub fn plan(&self, c: u64, k1: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut left = c;
        let mut prev = 0;
        while left > 0 {
            let k = self.next(out.len(), prev, k1.max(1)).max(1).min(left);
            out.push(k);
            left -= k;
            prev = k;
        }
        out
    }

    /// Round (one based) of each dispute position.
    pub fn slot_rounds(&self, c: u64, k1: u64) -> Vec<u32> {
        self.plan(c, k1)
            .iter()
            .enumerate()
            .flat_map(|(r, &k)| std::iter::repeat_n((r + 1) as u32, k as usize))
            .collect()
    }

    pub fn name(&self) -> String {
        match self {
            Phase2Schedule::MaintainOrDouble => "doubling".into(),
            Phase2Schedule::Gradual => "gradual".into(),
            Phase2Schedule::Custom(v) => format!("custom{v:?}"),
        }
    }
}
