//! Exhaustive adversary search over the two-party dispute component.
//!
//! One side follows the honest policy (every move at the earliest legal
//! period); the other picks any event, or waits, in every period, and may
//! land before or after the honest side within a period.

use std::collections::HashSet;

use battle_core::flex::{FlexEvent, FlexInstance, FlexParams, FlexState, FlexWiring, Party};
use battle_core::ledger::{Avp, Outpoint, Time, TxId};

const CORRECT: u64 = 5;

fn wiring(early: bool) -> FlexWiring {
    let o = |i| Some(Outpoint { tx_id: TxId([9; 32]), index: i });
    FlexWiring {
        alice_can_win: o(0),
        bob_enabler: o(1),
        alice_tries_to_win_early: if early { o(2) } else { None },
        alice_enabler: o(3),
        next_bob_enabler: o(4),
    }
}

fn honest_alice(f: &FlexInstance, now: Time) -> Option<FlexEvent> {
    let late_bob = f.deadline(Party::Bob).is_some_and(|d| now > d);
    match f.state {
        FlexState::Dormant if now > f.enabled_at => Some(FlexEvent::NoBobChallenge),
        _ if late_bob => Some(FlexEvent::Timeout),
        FlexState::Challenged if f.bob_bond_at.is_some() => Some(FlexEvent::PostBond(Party::Alice)),
        FlexState::BondsPosted => Some(FlexEvent::AliceInput(CORRECT)),
        FlexState::InputsPublished if f.bob_input_at.is_some() => Some(FlexEvent::ResolveByAvp),
        _ => None,
    }
}

fn honest_bob(f: &FlexInstance, now: Time) -> Option<FlexEvent> {
    let late_alice = f.deadline(Party::Alice).is_some_and(|d| now > d);
    match f.state {
        FlexState::Dormant if now >= f.enabled_at => Some(FlexEvent::BobChallenge),
        _ if late_alice => Some(FlexEvent::Timeout),
        FlexState::Challenged if f.bob_bond_at.is_none() => Some(FlexEvent::PostBond(Party::Bob)),
        FlexState::InputsPublished if f.bob_input_at.is_none() => Some(FlexEvent::BobInput),
        FlexState::InputsPublished => Some(FlexEvent::ResolveByAvp),
        _ => None,
    }
}

/// Events the adversary may attempt. `None` waits.
fn adversary_moves(adversary: Party) -> Vec<Option<FlexEvent>> {
    let mut v = vec![None, Some(FlexEvent::Timeout), Some(FlexEvent::ResolveByAvp)];
    match adversary {
        Party::Bob => {
            v.extend([Some(FlexEvent::BobChallenge), Some(FlexEvent::PostBond(Party::Bob)), Some(FlexEvent::BobInput)])
        }
        Party::Alice => v.extend([
            Some(FlexEvent::NoBobChallenge),
            Some(FlexEvent::PostBond(Party::Alice)),
            Some(FlexEvent::AliceInput(CORRECT + 1)),
            Some(FlexEvent::StillOpen),
        ]),
    }
    v
}

/// Applies every honest move available this period.
fn honest_moves(f: &mut FlexInstance, honest: Party, now: Time, avp: &Avp) {
    for _ in 0..8 {
        let e = match honest {
            Party::Alice => honest_alice(f, now),
            Party::Bob => honest_bob(f, now),
        };
        match e {
            Some(e) if f.step(e, now, avp).is_ok() => {}
            _ => return,
        }
    }
}

fn key(f: &FlexInstance, now: u64) -> String {
    let mut g = f.clone();
    g.log.clear();
    format!("{now}:{}", serde_json::to_string(&g).expect("serializes"))
}

struct Search {
    honest: Party,
    horizon: u64,
    avp: Avp,
    total: u64,
    seen: HashSet<String>,
    terminals: u64,
    failures: Vec<String>,
}

impl Search {
    fn check_terminal(&mut self, f: &FlexInstance) {
        self.terminals += 1;
        let adversary = self.honest.other();
        let (free, bond) = match self.honest {
            Party::Alice => (f.book.alice_free, f.params.alice_bond),
            Party::Bob => (f.book.bob_free, f.params.bob_bond),
        };
        let ok = match f.state {
            FlexState::Resolved(_) | FlexState::TimedOutCut(_) => f.loser == Some(adversary),
            FlexState::Cancelled => f.loser == Some(adversary) || f.loser.is_none(),
            _ => false,
        };
        if !ok || free < bond {
            self.failures.push(format!("{:?} loser {:?} book {:?} log {:?}", f.state, f.loser, f.book, f.log));
        }
    }

    fn explore(&mut self, f: FlexInstance, now: u64) {
        if f.book.total() != self.total {
            self.failures.push(format!("bond total changed: {:?}", f.book));
            return;
        }
        if f.state.is_terminal() {
            self.check_terminal(&f);
            return;
        }
        if now > self.horizon {
            self.failures.push(format!("no terminal state by {now}: {:?} {:?}", f.state, f.log));
            return;
        }
        if !self.seen.insert(key(&f, now)) {
            return;
        }
        let t = Time(now);
        for mv in adversary_moves(self.honest.other()) {
            for adversary_first in [true, false] {
                let mut g = f.clone();
                if !adversary_first {
                    honest_moves(&mut g, self.honest, t, &self.avp);
                }
                if let Some(e) = mv {
                    let _ = g.step(e, t, &self.avp);
                }
                honest_moves(&mut g, self.honest, t, &self.avp);
                self.explore(g, now + 1);
            }
        }
    }
}

fn search(honest: Party, delay_a: u64, delay_b: u64, early: bool) -> Search {
    let params = FlexParams { delay_a, delay_b, alice_bond: 10, bob_bond: 12, residue: 2 };
    let f = FlexInstance::new(1, 0, 1, wiring(early), params, Time(0));
    // Alice asserts CORRECT; an adversarial Alice asserts something else.
    let avp = Avp::new(CORRECT);
    let mut s = Search {
        honest,
        horizon: f.worst_case_timeline() + 4,
        avp,
        total: f.book.total(),
        seen: HashSet::new(),
        terminals: 0,
        failures: Vec::new(),
    };
    s.explore(f, 0);
    s
}

#[test]
fn honest_alice_with_true_assertion_never_loses() {
    for (a, b, early) in [(0, 0, false), (0, 0, true), (1, 0, false), (0, 1, true), (1, 1, false)] {
        let s = search(Party::Alice, a, b, early);
        assert!(s.terminals > 0);
        assert!(s.failures.is_empty(), "delays ({a}, {b}) early {early}: {}", s.failures[0]);
    }
}

#[test]
fn honest_bob_against_false_assertion_never_loses() {
    for (a, b, early) in [(0, 0, false), (0, 0, true), (1, 0, false), (0, 1, true), (1, 1, false)] {
        let s = search(Party::Bob, a, b, early);
        assert!(s.terminals > 0);
        assert!(s.failures.is_empty(), "delays ({a}, {b}) early {early}: {}", s.failures[0]);
    }
}

#[test]
fn terminal_states_absorb_every_event() {
    let avp = Avp::new(CORRECT);
    let mut f = FlexInstance::new(1, 0, 1, wiring(true), FlexParams::default(), Time(0));
    f.step(FlexEvent::BobChallenge, Time(0), &avp).unwrap();
    f.step(FlexEvent::PostBond(Party::Alice), Time(0), &avp).unwrap();
    f.step(FlexEvent::AliceInput(CORRECT), Time(1), &avp).unwrap();
    f.step(FlexEvent::BobInput, Time(1), &avp).unwrap();
    f.step(FlexEvent::ResolveByAvp, Time(1), &avp).unwrap();
    let before = f.clone();
    for e in adversary_moves(Party::Alice).into_iter().chain(adversary_moves(Party::Bob)).flatten() {
        assert!(f.step(e, Time(3), &avp).is_err());
    }
    assert_eq!(f, before);
}
