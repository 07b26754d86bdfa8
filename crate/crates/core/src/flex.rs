//! Two-party dispute component with bond deadlines, input publication and
//! predicate-driven resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Avp, OperatorId, Outpoint, Time, PERIODS_PER_EPOCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlexState {
    Dormant,
    Challenged,
    BondsPosted,
    InputsPublished,
    Resolved(Party),
    /// Timed out against the named party.
    TimedOutCut(Party),
    Cancelled,
}

impl FlexState {
    pub fn is_terminal(self) -> bool {
        matches!(self, FlexState::Resolved(_) | FlexState::TimedOutCut(_) | FlexState::Cancelled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlexEvent {
    BobChallenge,
    NoBobChallenge,
    PostBond(Party),
    AliceInput(u64),
    BobInput,
    ResolveByAvp,
    StillOpen,
    Timeout,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlexError {
    #[error("{event:?} is not legal in state {state:?}")]
    IllegalTransition { state: FlexState, event: FlexEvent },
    #[error("deadline exceeded by {late:?}")]
    DeadlineExceeded { late: Party },
    #[error("instance not resolved against {0:?}")]
    NotResolved(Party),
}

/// Bindings of the five named inputs; `None` marks an unwired input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlexWiring {
    /// Also known as the next Alice enabler.
    pub alice_can_win: Option<Outpoint>,
    pub bob_enabler: Option<Outpoint>,
    pub alice_tries_to_win_early: Option<Outpoint>,
    pub alice_enabler: Option<Outpoint>,
    pub next_bob_enabler: Option<Outpoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlexParams {
    /// Alice's bond window in epochs, counted from Bob's bond.
    pub delay_a: u64,
    /// Bob's bond window in epochs, counted from the challenge.
    pub delay_b: u64,
    pub alice_bond: u64,
    pub bob_bond: u64,
    /// Portion of the loser's bond that goes to the fee sink instead of the winner.
    pub residue: u64,
}

impl Default for FlexParams {
    fn default() -> Self {
        FlexParams { delay_a: 0, delay_b: 0, alice_bond: 10, bob_bond: 10, residue: 2 }
    }
}

/// Bond balances inside one instance. The sum of all fields never changes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondBook {
    pub alice_free: u64,
    pub bob_free: u64,
    pub alice_locked: u64,
    pub bob_locked: u64,
    pub sink: u64,
}

impl BondBook {
    pub fn total(&self) -> u64 {
        self.alice_free + self.bob_free + self.alice_locked + self.bob_locked + self.sink
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub instance: u64,
    pub period: u64,
    pub event: FlexEvent,
    pub before: FlexState,
    pub after: FlexState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlexInstance {
    pub id: u64,
    pub alice: OperatorId,
    pub bob: OperatorId,
    pub wiring: FlexWiring,
    pub params: FlexParams,
    pub state: FlexState,
    pub enabled_at: Time,
    pub challenged_at: Option<Time>,
    pub bob_bond_at: Option<Time>,
    pub alice_bond_at: Option<Time>,
    pub alice_input_at: Option<Time>,
    pub bob_input_at: Option<Time>,
    pub assertion: Option<u64>,
    /// Party cut by the terminal transition, if any.
    pub loser: Option<Party>,
    pub book: BondBook,
    pub log: Vec<TransitionRecord>,
}

impl FlexInstance {
    pub fn new(
        id: u64,
        alice: OperatorId,
        bob: OperatorId,
        wiring: FlexWiring,
        params: FlexParams,
        enabled_at: Time,
    ) -> Self {
        FlexInstance {
            id,
            alice,
            bob,
            wiring,
            params,
            state: FlexState::Dormant,
            enabled_at,
            challenged_at: None,
            bob_bond_at: None,
            alice_bond_at: None,
            alice_input_at: None,
            bob_input_at: None,
            assertion: None,
            loser: None,
            book: BondBook { alice_free: params.alice_bond, bob_free: params.bob_bond, ..Default::default() },
            log: Vec::new(),
        }
    }

    /// Last period at which `party` may still make its pending move.
    pub fn deadline(&self, party: Party) -> Option<Time> {
        let epochs = |e: u64| e * PERIODS_PER_EPOCH;
        match (self.state, party) {
            (FlexState::Challenged, Party::Bob) if self.bob_bond_at.is_none() => {
                self.challenged_at.map(|c| c.plus(epochs(self.params.delay_b)))
            }
            (FlexState::Challenged, Party::Alice) => self.bob_bond_at.map(|b| b.plus(epochs(self.params.delay_a))),
            (FlexState::BondsPosted, Party::Alice) => self.alice_bond_at.map(|t| t.plus(1)),
            (FlexState::InputsPublished, Party::Bob) if self.bob_input_at.is_none() => {
                self.alice_input_at.map(|t| t.plus(1))
            }
            _ => None,
        }
    }

    fn late_party(&self, now: Time) -> Option<Party> {
        [Party::Bob, Party::Alice].into_iter().find(|&p| self.deadline(p).is_some_and(|d| now > d))
    }

    fn check(&self, party: Party, now: Time) -> Result<(), FlexError> {
        match self.deadline(party) {
            Some(d) if now > d => Err(FlexError::DeadlineExceeded { late: party }),
            _ => Ok(()),
        }
    }

    fn illegal(&self, event: FlexEvent) -> FlexError {
        FlexError::IllegalTransition { state: self.state, event }
    }

    fn lock(&mut self, party: Party) {
        match party {
            Party::Alice => {
                self.book.alice_locked += self.book.alice_free;
                self.book.alice_free = 0;
            }
            Party::Bob => {
                self.book.bob_locked += self.book.bob_free;
                self.book.bob_free = 0;
            }
        }
    }

    fn refund_all(&mut self) {
        self.book.alice_free += std::mem::take(&mut self.book.alice_locked);
        self.book.bob_free += std::mem::take(&mut self.book.bob_locked);
    }

    /// Loser's locked bond pays the reward to the winner, residue to the sink.
    fn settle(&mut self, winner: Party) {
        let (lost, own) = match winner {
            Party::Alice => (std::mem::take(&mut self.book.bob_locked), std::mem::take(&mut self.book.alice_locked)),
            Party::Bob => (std::mem::take(&mut self.book.alice_locked), std::mem::take(&mut self.book.bob_locked)),
        };
        let residue = self.params.residue.min(lost);
        self.book.sink += residue;
        let reward = lost - residue;
        match winner {
            Party::Alice => self.book.alice_free += own + reward,
            Party::Bob => self.book.bob_free += own + reward,
        }
    }

    /// Applies `event` at period `now`. A late move returns
    /// [`FlexError::DeadlineExceeded`]; the counterparty then steps `Timeout`.
    pub fn step(&mut self, event: FlexEvent, now: Time, avp: &Avp) -> Result<FlexState, FlexError> {
        use FlexState::*;
        let before = self.state;
        if before.is_terminal() {
            return Err(self.illegal(event));
        }
        match (before, event) {
            (Dormant, FlexEvent::BobChallenge) if now >= self.enabled_at => {
                self.challenged_at = Some(now);
                self.state = Challenged;
                if self.params.delay_b == 0 {
                    self.bob_bond_at = Some(now);
                    self.lock(Party::Bob);
                }
            }
            (Dormant, FlexEvent::NoBobChallenge) if now > self.enabled_at => {
                self.state = Cancelled;
                self.loser = Some(Party::Bob);
            }
            (Dormant, FlexEvent::StillOpen) if self.wiring.alice_tries_to_win_early.is_some() => {
                self.state = Cancelled;
            }
            (Challenged, FlexEvent::PostBond(Party::Bob)) if self.bob_bond_at.is_none() => {
                self.check(Party::Bob, now)?;
                self.bob_bond_at = Some(now);
                self.lock(Party::Bob);
            }
            (Challenged, FlexEvent::PostBond(Party::Alice)) if self.bob_bond_at.is_some() => {
                self.check(Party::Alice, now)?;
                self.alice_bond_at = Some(now);
                self.lock(Party::Alice);
                self.state = BondsPosted;
            }
            (BondsPosted, FlexEvent::AliceInput(a)) => {
                self.check(Party::Alice, now)?;
                self.alice_input_at = Some(now);
                self.assertion = Some(a);
                self.state = InputsPublished;
            }
            (InputsPublished, FlexEvent::BobInput) if self.bob_input_at.is_none() => {
                self.check(Party::Bob, now)?;
                self.bob_input_at = Some(now);
            }
            (InputsPublished, FlexEvent::ResolveByAvp) if self.bob_input_at.is_some() => {
                let ok = avp.verdict(self.assertion.expect("input published"));
                let winner = if ok { Party::Alice } else { Party::Bob };
                self.settle(winner);
                self.loser = Some(winner.other());
                self.state = Resolved(winner);
            }
            (Challenged | BondsPosted, FlexEvent::StillOpen) if self.wiring.alice_tries_to_win_early.is_some() => {
                self.refund_all();
                self.state = Cancelled;
            }
            (InputsPublished, FlexEvent::StillOpen) if self.wiring.alice_tries_to_win_early.is_some() => {
                self.settle(Party::Bob);
                self.loser = Some(Party::Alice);
                self.state = Resolved(Party::Bob);
            }
            (_, FlexEvent::Timeout) => {
                let late = self.late_party(now).ok_or_else(|| self.illegal(event))?;
                self.settle(late.other());
                self.loser = Some(late);
                self.state = TimedOutCut(late);
            }
            _ => return Err(self.illegal(event)),
        }
        self.log.push(TransitionRecord { instance: self.id, period: now.0, event, before, after: self.state });
        Ok(self.state)
    }

    /// Maximum span in periods, inclusive, from the challenge to the last
    /// possible terminal transition when every actor moves at its deadline.
    pub fn worst_case_timeline(&self) -> u64 {
        PERIODS_PER_EPOCH * (self.params.delay_a + self.params.delay_b) + 4
    }

    /// Outpoints the winner consumes to cut `loser`'s next enabler.
    pub fn cut_next(&self, loser: Party) -> Result<Vec<Outpoint>, FlexError> {
        if self.loser != Some(loser) {
            return Err(FlexError::NotResolved(loser));
        }
        let cut = match loser {
            Party::Bob if self.state == FlexState::Cancelled => {
                self.wiring.bob_enabler.into_iter().chain(self.wiring.next_bob_enabler).collect()
            }
            Party::Bob => self.wiring.next_bob_enabler.into_iter().collect(),
            Party::Alice => self.wiring.alice_can_win.into_iter().collect(),
        };
        Ok(cut)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TxId;

    fn wired(early: bool) -> FlexWiring {
        let o = |i| Some(Outpoint { tx_id: TxId([3; 32]), index: i });
        FlexWiring {
            alice_can_win: o(0),
            bob_enabler: o(1),
            alice_tries_to_win_early: if early { o(2) } else { None },
            alice_enabler: o(3),
            next_bob_enabler: o(4),
        }
    }

    fn inst(a: u64, b: u64) -> FlexInstance {
        FlexInstance::new(1, 0, 1, wired(false), FlexParams { delay_a: a, delay_b: b, ..Default::default() }, Time(0))
    }

    #[test]
    fn no_challenge_after_one_period() {
        let avp = Avp::new(1);
        let mut f = inst(0, 0);
        assert!(f.step(FlexEvent::NoBobChallenge, Time(0), &avp).is_err());
        assert_eq!(f.step(FlexEvent::NoBobChallenge, Time(1), &avp), Ok(FlexState::Cancelled));
        assert_eq!(f.cut_next(Party::Bob).unwrap().len(), 2);
    }

    #[test]
    fn happy_path_alice_wins() {
        let avp = Avp::new(1);
        let mut f = inst(0, 0);
        f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
        f.step(FlexEvent::PostBond(Party::Alice), Time(0), &avp).unwrap();
        f.step(FlexEvent::AliceInput(1), Time(1), &avp).unwrap();
        f.step(FlexEvent::BobInput, Time(2), &avp).unwrap();
        assert_eq!(f.step(FlexEvent::ResolveByAvp, Time(2), &avp), Ok(FlexState::Resolved(Party::Alice)));
        assert_eq!(f.cut_next(Party::Bob).unwrap(), vec![f.wiring.next_bob_enabler.unwrap()]);
        assert!(f.cut_next(Party::Alice).is_err());
        assert_eq!(f.book.alice_free, 10 + 8);
        assert_eq!(f.book.total(), 20);
        assert_eq!(f.log.len(), 5);
    }

    #[test]
    fn late_bond_is_deadline_exceeded_then_timeout() {
        let avp = Avp::new(1);
        let mut f = inst(1, 0);
        f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
        assert_eq!(
            f.step(FlexEvent::PostBond(Party::Alice), Time(6), &avp),
            Err(FlexError::DeadlineExceeded { late: Party::Alice })
        );
        assert_eq!(f.step(FlexEvent::Timeout, Time(6), &avp), Ok(FlexState::TimedOutCut(Party::Alice)));
        assert_eq!(f.cut_next(Party::Alice).unwrap(), vec![f.wiring.alice_can_win.unwrap()]);
    }

    #[test]
    fn still_open_before_and_after_input() {
        let avp = Avp::new(1);
        let mut f = FlexInstance::new(1, 0, 1, wired(true), FlexParams::default(), Time(0));
        f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
        f.step(FlexEvent::PostBond(Party::Alice), Time(0), &avp).unwrap();
        let mut g = f.clone();
        assert_eq!(f.step(FlexEvent::StillOpen, Time(1), &avp), Ok(FlexState::Cancelled));
        assert_eq!((f.book.alice_free, f.book.bob_free), (10, 10));
        g.step(FlexEvent::AliceInput(1), Time(1), &avp).unwrap();
        assert_eq!(g.step(FlexEvent::StillOpen, Time(1), &avp), Ok(FlexState::Resolved(Party::Bob)));
        assert_eq!(g.book.bob_free, 18);
    }

    #[test]
    fn unwired_next_bob_enabler_gives_empty_cut() {
        let avp = Avp::new(1);
        let mut w = wired(false);
        w.next_bob_enabler = None;
        let mut f = FlexInstance::new(1, 0, 1, w, FlexParams::default(), Time(0));
        f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
        f.step(FlexEvent::PostBond(Party::Alice), Time(0), &avp).unwrap();
        f.step(FlexEvent::AliceInput(1), Time(0), &avp).unwrap();
        f.step(FlexEvent::Timeout, Time(2), &avp).unwrap();
        assert!(f.cut_next(Party::Bob).unwrap().is_empty());
    }

    #[test]
    fn timelines() {
        assert!(inst(0, 0).worst_case_timeline() <= 5);
        assert_eq!(inst(1, 0).worst_case_timeline() - inst(0, 0).worst_case_timeline(), 5);
        let avp = Avp::new(1);
        let mut f = inst(0, 1);
        f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
        assert_eq!(f.deadline(Party::Bob), Some(Time(5)));
        f.step(FlexEvent::PostBond(Party::Bob), Time(5), &avp).unwrap();
        assert_eq!(f.deadline(Party::Alice), Some(Time(5)));
    }

    #[test]
    fn terminal_is_absorbing() {
        let avp = Avp::new(1);
        let mut f = inst(0, 0);
        f.step(FlexEvent::NoBobChallenge, Time(1), &avp).unwrap();
        for e in [FlexEvent::BobChallenge, FlexEvent::Timeout, FlexEvent::ResolveByAvp, FlexEvent::StillOpen] {
            assert!(matches!(f.step(e, Time(9), &avp), Err(FlexError::IllegalTransition { .. })));
        }
    }
}
