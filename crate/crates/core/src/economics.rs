//! Bonds, rewards, fees and capital accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{OperatorId, Time};
use crate::tournament::Phase2Schedule;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EconError {
    #[error("trace is not finished")]
    IncompleteTrace,
    #[error("bond not posted by {party} for dispute {dispute}")]
    BondNotPosted { dispute: u64, party: OperatorId },
    #[error("starting capital {have} below the per-dispute requirement {need}")]
    InsufficientCapital { have: u64, need: u64 },
    #[error("party {0} has insufficient free balance")]
    Overdrawn(OperatorId),
    #[error("invalid bond parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BondParams {
    /// Asserter bond per dispute.
    pub aosb: u64,
    /// Challenger bond per dispute.
    pub challenger_aosb: u64,
    /// Cost of publishing one dispute input.
    pub publication_cost: u64,
    pub fee: u64,
    /// Part of a forfeited bond that goes to the fee sink.
    pub residue: u64,
}

impl Default for BondParams {
    fn default() -> Self {
        BondParams { aosb: 10, challenger_aosb: 32, publication_cost: 2, fee: 1, residue: 1 }
    }
}

impl BondParams {
    pub fn validate(&self) -> Result<(), EconError> {
        if self.aosb < self.publication_cost + self.fee {
            return Err(EconError::InvalidParams("asserter bond must cover publication and fee".into()));
        }
        if self.challenger_aosb < self.publication_cost + self.fee {
            return Err(EconError::InvalidParams("challenger bond must cover publication and fee".into()));
        }
        if self.residue > self.aosb.min(self.challenger_aosb) {
            return Err(EconError::InvalidParams("residue exceeds a bond".into()));
        }
        Ok(())
    }

    /// Reward paid from a forfeited bond of size `loser_bond`.
    pub fn adr(&self, loser_bond: u64) -> u64 {
        loser_bond - self.residue.min(loser_bond)
    }

    /// Capital the asserter commits to one dispute before it is resolved:
    /// bond plus the fees of bonding, input and resolution plus publication.
    pub fn per_dispute_requirement(&self) -> u64 {
        self.aosb + 3 * self.fee + self.publication_cost
    }

    /// Net gain of the asserter from one won dispute.
    pub fn net_win(&self) -> i64 {
        self.adr(self.challenger_aosb) as i64 - (3 * self.fee + self.publication_cost) as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapitalPoint {
    pub t: Time,
    pub balance: u64,
    pub locked: u64,
    pub apsb: u64,
    pub adr_cum: u64,
    pub fees_cum: u64,
    pub publication_cum: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyAccount {
    pub initial: u64,
    pub balance: u64,
    pub locked: u64,
    pub apsb: u64,
    pub adr_cum: u64,
    pub fees_cum: u64,
    pub publication_cum: u64,
    pub history: Vec<CapitalPoint>,
}

impl PartyAccount {
    /// External capital in use: initial free balance minus current free balance.
    pub fn drawn(&self) -> i64 {
        self.initial as i64 - self.balance as i64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct DisputeLock {
    bonds: BTreeMap<OperatorId, u64>,
}

/// Per-party capital trace with an escrow and a fee sink.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapitalTrace {
    pub params: BondParams,
    pub parties: BTreeMap<OperatorId, PartyAccount>,
    pub escrow: u64,
    pub sink: u64,
    pub now: Time,
    pub finished: bool,
    disputes: BTreeMap<u64, DisputeLock>,
    initial_total: u128,
}

impl CapitalTrace {
    pub fn new(params: BondParams) -> Self {
        CapitalTrace { params, ..Default::default() }
    }

    pub fn open_account(&mut self, party: OperatorId, balance: u64, apsb: u64) {
        let acct = PartyAccount { initial: balance, balance, apsb, ..Default::default() };
        self.initial_total += balance as u128 + apsb as u128;
        self.parties.insert(party, acct);
        self.record(party);
    }

    pub fn fund_escrow(&mut self, amount: u64) {
        self.escrow += amount;
        self.initial_total += amount as u128;
    }

    pub fn set_time(&mut self, t: Time) {
        self.now = t;
    }

    fn acct(&mut self, party: OperatorId) -> &mut PartyAccount {
        self.parties.entry(party).or_default()
    }

    fn record(&mut self, party: OperatorId) {
        let t = self.now;
        let a = self.acct(party);
        let p = CapitalPoint {
            t,
            balance: a.balance,
            locked: a.locked,
            apsb: a.apsb,
            adr_cum: a.adr_cum,
            fees_cum: a.fees_cum,
            publication_cum: a.publication_cum,
        };
        a.history.push(p);
    }

    fn debit(&mut self, party: OperatorId, amount: u64) -> Result<(), EconError> {
        let a = self.acct(party);
        a.balance = a.balance.checked_sub(amount).ok_or(EconError::Overdrawn(party))?;
        Ok(())
    }

    pub fn fee(&mut self, party: OperatorId) -> Result<(), EconError> {
        let f = self.params.fee;
        self.debit(party, f)?;
        self.acct(party).fees_cum += f;
        self.sink += f;
        self.record(party);
        Ok(())
    }

    pub fn publication(&mut self, party: OperatorId) -> Result<(), EconError> {
        let c = self.params.publication_cost;
        self.debit(party, c)?;
        self.acct(party).publication_cum += c;
        self.sink += c;
        self.record(party);
        Ok(())
    }

    pub fn lock(&mut self, dispute: u64, party: OperatorId, amount: u64) -> Result<(), EconError> {
        self.debit(party, amount)?;
        self.acct(party).locked += amount;
        *self.disputes.entry(dispute).or_default().bonds.entry(party).or_default() += amount;
        self.record(party);
        Ok(())
    }

    fn take_bond(&mut self, dispute: u64, party: OperatorId) -> u64 {
        let amount = self.disputes.get_mut(&dispute).and_then(|d| d.bonds.remove(&party)).unwrap_or(0);
        self.acct(party).locked -= amount;
        amount
    }

    pub fn bond_of(&self, dispute: u64, party: OperatorId) -> u64 {
        self.disputes.get(&dispute).and_then(|d| d.bonds.get(&party)).copied().unwrap_or(0)
    }

    /// Loser's bond pays the reward to the winner and the residue to the
    /// sink; the winner's own bond is unlocked.
    pub fn settle_dispute(&mut self, dispute: u64, winner: OperatorId, loser: OperatorId) -> Result<u64, EconError> {
        for p in [winner, loser] {
            if self.bond_of(dispute, p) == 0 {
                return Err(EconError::BondNotPosted { dispute, party: p });
            }
        }
        Ok(self.forfeit(dispute, winner, loser))
    }

    /// Like [`settle_dispute`](Self::settle_dispute) but tolerates missing
    /// bonds, as in timeouts where the late party never bonded.
    pub fn forfeit(&mut self, dispute: u64, winner: OperatorId, loser: OperatorId) -> u64 {
        let lost = self.take_bond(dispute, loser);
        let own = self.take_bond(dispute, winner);
        let reward = self.params.adr(lost);
        self.sink += lost - reward;
        let w = self.acct(winner);
        w.balance += own + reward;
        w.adr_cum += reward;
        self.record(winner);
        self.record(loser);
        reward
    }

    /// Both bonds returned to their owners.
    pub fn refund_dispute(&mut self, dispute: u64) {
        let owners: Vec<OperatorId> =
            self.disputes.get(&dispute).map(|d| d.bonds.keys().copied().collect()).unwrap_or_default();
        for p in owners {
            let b = self.take_bond(dispute, p);
            self.acct(p).balance += b;
            self.record(p);
        }
    }

    /// Pays `amount` from escrow, capped at the escrow balance.
    pub fn credit_from_escrow(&mut self, party: OperatorId, amount: u64) {
        let paid = amount.min(self.escrow);
        self.escrow -= paid;
        self.acct(party).balance += paid;
        self.record(party);
    }

    pub fn slash_apsb(&mut self, party: OperatorId) -> u64 {
        let a = self.acct(party);
        let s = std::mem::take(&mut a.apsb);
        self.sink += s;
        self.record(party);
        s
    }

    pub fn total(&self) -> u128 {
        self.parties.values().map(|a| a.balance as u128 + a.locked as u128 + a.apsb as u128).sum::<u128>()
            + self.escrow as u128
            + self.sink as u128
    }

    pub fn conserved(&self) -> bool {
        self.total() == self.initial_total
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    /// Maximum external capital simultaneously in use by `party`: locked
    /// bonds plus unrecouped fees and publication costs.
    pub fn peak_capital(&self, party: OperatorId) -> Result<u64, EconError> {
        if !self.finished {
            return Err(EconError::IncompleteTrace);
        }
        let Some(a) = self.parties.get(&party) else {
            return Ok(0);
        };
        let peak = a.history.iter().map(|p| a.initial as i64 - p.balance as i64).max().unwrap_or(0);
        Ok(peak.max(0) as u64)
    }

    pub fn locked_never_negative(&self) -> bool {
        // Locked amounts are unsigned; check the per-dispute books agree.
        self.parties.iter().all(|(p, a)| {
            let booked: u64 = self.disputes.values().filter_map(|d| d.bonds.get(p)).sum();
            booked == a.locked
        })
    }
}

/// Number of Phase 2 rounds until `c` challengers are resolved, recycling
/// each round's rewards into the next round's bonds.
pub fn rounds_needed(
    c: u64,
    schedule: &Phase2Schedule,
    starting_capital: u64,
    params: &BondParams,
) -> Result<u32, EconError> {
    let need = params.per_dispute_requirement();
    if starting_capital < need {
        return Err(EconError::InsufficientCapital { have: starting_capital, need });
    }
    let mut capital = starting_capital as i64;
    let mut remaining = c;
    let mut rounds = 0u32;
    let mut prev = 0u64;
    while remaining > 0 {
        let affordable = (capital / need as i64).max(0) as u64;
        let wanted = schedule.next(rounds as usize, prev, starting_capital / need);
        let k = wanted.min(affordable).min(remaining);
        if k == 0 {
            return Err(EconError::InsufficientCapital { have: capital.max(0) as u64, need });
        }
        capital += k as i64 * params.net_win();
        remaining -= k;
        prev = k;
        rounds += 1;
    }
    Ok(rounds)
}

/// One row of the capital report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapitalRecord {
    pub party: OperatorId,
    pub c: u32,
    pub schedule: String,
    pub peak: u64,
    pub rounds: u32,
    pub total_fees: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settle_example() {
        let mut t =
            CapitalTrace::new(BondParams { aosb: 10, challenger_aosb: 10, publication_cost: 2, fee: 1, residue: 2 });
        t.open_account(1, 100, 0);
        t.open_account(2, 100, 0);
        t.lock(7, 1, 10).unwrap();
        t.lock(7, 2, 10).unwrap();
        assert_eq!(t.settle_dispute(7, 1, 2).unwrap(), 8);
        assert_eq!(t.parties[&1].balance, 108);
        assert_eq!(t.parties[&2].balance, 90);
        assert!(t.conserved());
    }

    #[test]
    fn bond_not_posted() {
        let mut t = CapitalTrace::new(BondParams::default());
        t.open_account(1, 100, 0);
        t.lock(1, 1, 10).unwrap();
        assert_eq!(t.settle_dispute(1, 1, 2), Err(EconError::BondNotPosted { dispute: 1, party: 2 }));
    }

    #[test]
    fn refund_on_cancel() {
        let mut t = CapitalTrace::new(BondParams::default());
        t.open_account(1, 50, 0);
        t.open_account(2, 50, 0);
        t.lock(3, 1, 10).unwrap();
        t.lock(3, 2, 32).unwrap();
        t.refund_dispute(3);
        assert_eq!((t.parties[&1].balance, t.parties[&2].balance), (50, 50));
        assert!(t.locked_never_negative());
    }

    #[test]
    fn peak_requires_finish() {
        let mut t = CapitalTrace::new(BondParams::default());
        t.open_account(1, 50, 0);
        t.fee(1).unwrap();
        assert_eq!(t.peak_capital(1), Err(EconError::IncompleteTrace));
        t.finish();
        assert_eq!(t.peak_capital(1), Ok(1));
    }

    #[test]
    fn simultaneous_tournaments_scale_linearly() {
        for tourn in 1..=6u64 {
            let mut t = CapitalTrace::new(BondParams::default());
            t.open_account(9, 10_000, 0);
            for d in 0..tourn {
                t.lock(d, 9, 32).unwrap();
            }
            t.finish();
            assert_eq!(t.peak_capital(9).unwrap(), 32 * tourn);
        }
    }

    #[test]
    fn rounds_examples() {
        let p = BondParams::default();
        let need = p.per_dispute_requirement();
        let d = Phase2Schedule::MaintainOrDouble;
        assert_eq!(rounds_needed(1, &d, need, &p), Ok(1));
        assert_eq!(rounds_needed(100, &d, need, &p), Ok(7));
        assert_eq!(rounds_needed(100, &d, 16 * need, &p), Ok(3));
        assert!(matches!(rounds_needed(5, &d, need - 1, &p), Err(EconError::InsufficientCapital { .. })));
    }

    #[test]
    fn default_params_valid() {
        BondParams::default().validate().unwrap();
        assert!(BondParams { aosb: 2, ..Default::default() }.validate().is_err());
    }
}
