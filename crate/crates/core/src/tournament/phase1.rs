use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::dag::{Phase1Dag, Phase1Pair, ROUND_PERIODS};
use crate::ledger::{
    Avp, CensorDirective, Ledger, LedgerError, OperatorId, TemplateInstance, TemplateKind, Time, TxId, Witness,
};

#[derive(Clone, Debug)]
pub struct Phase1Options {
    /// Shuffles each batch of same-period broadcasts before settling.
    pub reorder_seed: Option<u64>,
    /// Who broadcasts the anchor if it is not yet on the ledger.
    pub opener: OperatorId,
    /// Periods simulated past the earliest possible completion.
    pub slack: u64,
}

impl Default for Phase1Options {
    fn default() -> Self {
        Phase1Options { reorder_seed: None, opener: 0, slack: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseKind {
    /// Both enabled and Bob challenged.
    BothEnabledChallenged,
    /// Both enabled, no challenge, Alice cut Bob.
    BothEnabledAliceCut,
    /// Both enabled, no challenge and no cut.
    BothEnabledIdle,
    AliceOnly,
    BobOnly,
    NeitherEnabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseOutcome {
    Won(OperatorId),
    DualCut,
    Walkover(OperatorId),
    /// The only enabled party never took the selector.
    NoProgress,
    NoAction,
    /// Both still hold their enablers at the end of the run.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub round: u32,
    pub match_index: u32,
    pub alice: Option<OperatorId>,
    pub bob: Option<OperatorId>,
    pub kind: CaseKind,
    pub outcome: CaseOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MultipleWinners(Vec<OperatorId>),
    ActedAfterElimination { party: OperatorId, round: u32, label: String },
    HonestBurden { party: OperatorId, round: u32, count: u32 },
    Audit(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phase1Outcome {
    pub anchor_at: Time,
    pub winner: Option<OperatorId>,
    /// Periods from the anchor to the winning confirmation.
    pub makespan: Option<u64>,
    pub registered: Vec<OperatorId>,
    /// Round in which each party lost its enabler chain, and when.
    pub eliminated: BTreeMap<OperatorId, (u32, Time)>,
    pub cases: Vec<CaseRecord>,
    /// DisputeTimeout broadcasts by party and round.
    pub dispute_timeouts: BTreeMap<(OperatorId, u32), u32>,
    pub violations: Vec<Violation>,
    pub fees: BTreeMap<OperatorId, u64>,
    pub trace_digest: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    OpenOnly,
    KeepChain,
    Off,
}

fn mode(s: &Strategy, round: u32) -> Mode {
    match *s {
        Strategy::Abstain | Strategy::OpenAndAbandon => Mode::Off,
        Strategy::StallAfterRound(k) if round == k + 1 => Mode::OpenOnly,
        Strategy::StallAfterRound(k) if round > k + 1 => Mode::KeepChain,
        _ => Mode::Full,
    }
}

struct View<'a> {
    dag: &'a Phase1Dag,
    strategies: &'a [Strategy],
    ledger: &'a Ledger,
    avp: Avp,
    t0: u64,
}

type Move = (Arc<TemplateInstance>, Witness);

impl View<'_> {
    fn now(&self) -> u64 {
        self.ledger.now().0
    }

    fn enabled(&self, x: OperatorId, r: u32) -> bool {
        self.ledger.is_confirmed(&self.dag.enable[x as usize][(r - 1) as usize].tx_id)
    }

    fn alive(&self, x: OperatorId, r: u32) -> bool {
        self.enabled(x, r) && self.ledger.is_unspent(&self.dag.next_enabler(x, r))
    }

    fn current_round(&self, x: OperatorId) -> Option<u32> {
        (1..=self.dag.rounds).rev().find(|&r| self.enabled(x, r))
    }

    /// Parties of match `(r, j)` still holding their round-`r` enablers.
    fn alive_in_match(&self, r: u32, j: u32) -> Vec<OperatorId> {
        let (l, rt) = self.dag.halves(r, j);
        l.into_iter().chain(rt).filter(|&y| self.alive(y, r)).collect()
    }

    fn registered_assertion(&self, x: OperatorId) -> Option<u64> {
        match self.ledger.confirmation(&self.dag.enable[x as usize][0].tx_id)?.witness {
            Witness::Assertion(v) => Some(v),
            _ => None,
        }
    }

    fn ready(&self, t: &Arc<TemplateInstance>) -> bool {
        !self.ledger.is_pending(&t.tx_id) && self.ledger.can_confirm(t)
    }

    fn advance_move(&self, x: OperatorId, r: u32) -> Option<Move> {
        let t = if r < self.dag.rounds { &self.dag.enable[x as usize][r as usize] } else { &self.dag.win[x as usize] };
        self.ready(t).then(|| (t.clone(), Witness::None))
    }

    fn decide(&self, x: OperatorId) -> Vec<Move> {
        let s = &self.strategies[x as usize];
        let mut out = Vec::new();
        if !s.registers() {
            return out;
        }
        let reg = &self.dag.enable[x as usize][0];
        let reg_at = self.t0 + if matches!(s, Strategy::LateRegister) { 2 } else { 0 };
        if !self.ledger.is_confirmed(&reg.tx_id) {
            if self.now() >= reg_at && self.ready(reg) {
                out.push((reg.clone(), Witness::Assertion(s.assertion(&self.avp, 0))));
            }
            return out;
        }
        let Some(r) = self.current_round(x) else { return out };
        if !self.alive(x, r) {
            return out;
        }
        let m = mode(s, r);
        let j = self.dag.match_of(x, r);
        let (left, right) = self.dag.halves(r, j);
        let is_alice = self.dag.is_alice(x, r);
        let others = if is_alice { &right } else { &left };

        if r == 1 && m == Mode::Full {
            for &y in others {
                let p = self.dag.pair_of(1, x, y).expect("round-one pair");
                let cut = if is_alice { &p.no_assertion_bob } else { &p.asserter_timeout };
                if let Some(t) = cut {
                    if !self.enabled(y, 1) && self.ready(t) {
                        out.push((t.clone(), Witness::None));
                    }
                }
            }
        }

        if let Some(&y) = others.iter().find(|&&y| self.alive(y, r)) {
            let p = self.dag.pair_of(r, x, y).expect("scheduled pair");
            self.dispute_moves(x, r, is_alice, m, p, &mut out);
        }

        if m != Mode::Off {
            let contested = self.alive_in_match(r, j).iter().any(|&y| y != x);
            if !contested {
                out.extend(self.advance_move(x, r));
            }
        }

        if s.is_honest() && m == Mode::Full {
            self.honest_duties(x, r, &mut out);
        }
        out
    }

    fn dispute_moves(&self, x: OperatorId, r: u32, is_alice: bool, m: Mode, p: &Phase1Pair, out: &mut Vec<Move>) {
        let s = &self.strategies[x as usize];
        let l = self.ledger;
        let unchallenged =
            l.is_unspent(&p.bob_challenge.inputs[0].outpoint) && l.is_unspent(&p.bob_challenge.inputs[1].outpoint);
        let ds = |t: &Arc<TemplateInstance>| l.is_confirmed(&t.tx_id) && l.is_unspent(&t.outpoint(0));
        let mut push = |t: &Arc<TemplateInstance>, w: Witness| {
            if self.ready(t) {
                out.push((t.clone(), w));
            }
        };
        match (is_alice, m) {
            (true, Mode::Full) => {
                if unchallenged {
                    push(&p.no_bob_challenge, Witness::None);
                }
                if ds(&p.bob_challenge) {
                    push(&p.bond_alice, Witness::None);
                }
                if ds(&p.bond_alice) {
                    push(&p.alice_input, Witness::Assertion(s.assertion(&self.avp, r as u64)));
                }
                if ds(&p.alice_input) {
                    push(&p.timeout_bob_input, Witness::None);
                }
                if ds(&p.bob_input) {
                    push(&p.resolve_alice, Witness::None);
                }
            }
            (false, Mode::Full) | (false, Mode::OpenOnly) => {
                if unchallenged {
                    let wants = if s.is_honest() {
                        self.registered_assertion(p.alice).map(|a| !self.avp.verdict(a)).unwrap_or(false)
                    } else {
                        true
                    };
                    if wants {
                        push(&p.bob_challenge, Witness::None);
                    }
                }
                if m == Mode::Full {
                    if ds(&p.bob_challenge) {
                        push(&p.timeout_alice_bond, Witness::None);
                    }
                    if ds(&p.bond_alice) {
                        push(&p.timeout_alice_input, Witness::None);
                    }
                    if ds(&p.alice_input) {
                        push(&p.bob_input, Witness::None);
                    }
                    if ds(&p.bob_input) {
                        push(&p.resolve_bob, Witness::None);
                    }
                }
            }
            _ => {}
        }
    }

    /// Helping the next opponent onto the bracket, and clearing a stalled
    /// sibling match.
    fn honest_duties(&self, x: OperatorId, r: u32, out: &mut Vec<Move>) {
        let rounds = self.dag.rounds;
        if r >= 2 {
            let prev = r - 1;
            let sib = (x >> prev) ^ 1;
            if (sib << prev) < self.dag.n && self.now() > self.t0 + ROUND_PERIODS * prev as u64 {
                let alive = self.alive_in_match(prev, sib);
                if let [y] = alive[..] {
                    out.extend(self.advance_move(y, prev));
                }
            }
        }
        if r < rounds {
            let sib = (x >> r) ^ 1;
            if (sib << r) < self.dag.n {
                for p in self.dag.pairs_in_match(r, sib) {
                    if self.alive(p.alice, r) && self.alive(p.bob, r) && self.ready(&p.dispute_timeout) {
                        out.push((p.dispute_timeout.clone(), Witness::None));
                    }
                }
            }
        }
    }
}

/// Plays the bracket to completion on `ledger`, whose clock must be at or
/// after the slot funding.
pub fn run_phase1(
    dag: &Phase1Dag,
    strategies: &[Strategy],
    ledger: &mut Ledger,
    opts: &Phase1Options,
) -> Result<Phase1Outcome, LedgerError> {
    assert_eq!(strategies.len(), dag.n as usize, "one strategy per operator");
    let avp = ledger.avp().unwrap_or(Avp::new(0));
    for (c, s) in strategies.iter().enumerate() {
        if let Strategy::CensorBudget(f) = s {
            for target in 0..dag.n {
                if target != c as u32 {
                    ledger.add_censorship(CensorDirective { target, delay: *f })?;
                }
            }
        }
    }
    if !ledger.is_confirmed(&dag.anchor.tx_id) {
        ledger.broadcast(dag.anchor.clone(), opts.opener)?;
        ledger.settle();
    }
    let anchor_at = ledger.confirmation(&dag.anchor.tx_id).map(|c| c.at).ok_or(LedgerError::MissingInput(dag.slot))?;
    let t0 = anchor_at.0;
    let horizon = t0 + ROUND_PERIODS * dag.rounds as u64 + opts.slack;
    let mut rng = opts.reorder_seed.map(ChaCha8Rng::seed_from_u64);
    let mut dispute_timeouts: BTreeMap<(OperatorId, u32), u32> = BTreeMap::new();

    while ledger.now().0 <= horizon {
        for _ in 0..64 {
            let view = View { dag, strategies, ledger, avp, t0 };
            let mut seen = HashSet::new();
            let mut batch = Vec::new();
            for x in 0..dag.n {
                for (t, w) in view.decide(x) {
                    if seen.insert(t.tx_id) {
                        batch.push((x, t, w));
                    }
                }
            }
            if batch.is_empty() {
                break;
            }
            for (x, t, w) in batch {
                if t.kind == TemplateKind::DisputeTimeout {
                    *dispute_timeouts.entry((x, t.bindings[0] as u32)).or_default() += 1;
                }
                ledger.broadcast_with(t, x, w)?;
            }
            if let Some(rng) = rng.as_mut() {
                let mut perm: Vec<usize> = (0..ledger.queued_this_period()).collect();
                perm.shuffle(rng);
                ledger.reorder_within_period(&perm)?;
            }
            ledger.settle();
        }
        if dag.win.iter().any(|w| ledger.is_confirmed(&w.tx_id)) {
            break;
        }
        ledger.tick();
    }
    Ok(summarize(dag, strategies, ledger, t0, dispute_timeouts))
}

fn summarize(
    dag: &Phase1Dag,
    strategies: &[Strategy],
    ledger: &Ledger,
    t0: u64,
    dispute_timeouts: BTreeMap<(OperatorId, u32), u32>,
) -> Phase1Outcome {
    let view = View { dag, strategies, ledger, avp: Avp::new(0), t0 };
    let mut violations = Vec::new();
    let winners: Vec<OperatorId> = (0..dag.n).filter(|&x| ledger.is_confirmed(&dag.win[x as usize].tx_id)).collect();
    if winners.len() > 1 {
        violations.push(Violation::MultipleWinners(winners.clone()));
    }
    let winner = winners.first().copied();
    let makespan = winner.map(|w| ledger.confirmation(&dag.win[w as usize].tx_id).expect("confirmed").at.0 - t0);
    let registered: Vec<OperatorId> = (0..dag.n).filter(|&x| view.enabled(x, 1)).collect();

    let advancing = |t: &TxId| {
        ledger
            .confirmation(t)
            .map(|c| matches!(c.tx.kind, TemplateKind::EnableRound | TemplateKind::WinPhase1))
            .unwrap_or(false)
    };
    let mut eliminated = BTreeMap::new();
    for x in 0..dag.n {
        for r in 1..=dag.rounds {
            if !view.enabled(x, r) {
                break;
            }
            if let Some(sp) = ledger.spender_of(&dag.next_enabler(x, r)) {
                if !advancing(&sp) {
                    eliminated.insert(x, (r, ledger.confirmation(&sp).expect("spender").at));
                }
            }
        }
    }

    for c in ledger.confirmed() {
        let b = &c.tx.bindings;
        let acting: Vec<(OperatorId, u32)> = match c.tx.kind {
            TemplateKind::EnableRound => vec![(b[0] as u32, b[1] as u32)],
            TemplateKind::WinPhase1 => vec![(b[0] as u32, dag.rounds + 1)],
            TemplateKind::StartPhase1 | TemplateKind::RegistrationPhase1 => vec![],
            _ if c.tx.label.starts_with("p1/r") => vec![(b[1] as u32, b[0] as u32), (b[2] as u32, b[0] as u32)],
            _ => vec![],
        };
        for (party, round) in acting {
            if let Some(&(er, at)) = eliminated.get(&party) {
                if round > er && c.at >= at {
                    violations.push(Violation::ActedAfterElimination { party, round, label: c.tx.label.clone() });
                }
            }
        }
    }

    for (&(party, round), &count) in &dispute_timeouts {
        if strategies[party as usize].is_honest() && count > 1 {
            violations.push(Violation::HonestBurden { party, round, count });
        }
    }
    if let Err(e) = ledger.audit() {
        violations.push(Violation::Audit(e));
    }

    let cases = classify(&view, &advancing);
    Phase1Outcome {
        anchor_at: Time(t0),
        winner,
        makespan,
        registered,
        eliminated,
        cases,
        dispute_timeouts,
        violations,
        fees: ledger.fees_paid().clone(),
        trace_digest: ledger.trace_digest(),
    }
}

fn classify(view: &View<'_>, advancing: &dyn Fn(&TxId) -> bool) -> Vec<CaseRecord> {
    let dag = view.dag;
    let ledger = view.ledger;
    let mut out = Vec::new();
    for r in 1..=dag.rounds {
        let mut j = 0u32;
        while (j << r) < dag.n {
            let (left, right) = dag.halves(r, j);
            let a = left.iter().copied().find(|&x| view.enabled(x, r));
            let b = right.iter().copied().find(|&x| view.enabled(x, r));
            let advanced =
                |x: OperatorId| ledger.spender_of(&dag.next_enabler(x, r)).map(|t| advancing(&t)).unwrap_or(false);
            let cut =
                |x: OperatorId| ledger.spender_of(&dag.next_enabler(x, r)).map(|t| !advancing(&t)).unwrap_or(false);
            let (kind, outcome) = match (a, b) {
                (Some(a), Some(b)) => {
                    let p = dag.pair_of(r, a, b).expect("pair");
                    let dual = ledger.is_confirmed(&p.dispute_timeout.tx_id);
                    let settled = if dual {
                        CaseOutcome::DualCut
                    } else if cut(b) && !cut(a) {
                        CaseOutcome::Won(a)
                    } else if cut(a) && !cut(b) {
                        CaseOutcome::Won(b)
                    } else {
                        CaseOutcome::Unresolved
                    };
                    let kind = if ledger.is_confirmed(&p.bob_challenge.tx_id) {
                        CaseKind::BothEnabledChallenged
                    } else if ledger.is_confirmed(&p.no_bob_challenge.tx_id) {
                        CaseKind::BothEnabledAliceCut
                    } else {
                        CaseKind::BothEnabledIdle
                    };
                    (kind, settled)
                }
                (Some(a), None) => {
                    (CaseKind::AliceOnly, if advanced(a) { CaseOutcome::Walkover(a) } else { CaseOutcome::NoProgress })
                }
                (None, Some(b)) => {
                    (CaseKind::BobOnly, if advanced(b) { CaseOutcome::Walkover(b) } else { CaseOutcome::NoProgress })
                }
                (None, None) => (CaseKind::NeitherEnabled, CaseOutcome::NoAction),
            };
            out.push(CaseRecord { round: r, match_index: j, alice: a, bob: b, kind, outcome });
            j += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{build_phase1, rounds_for};
    use crate::ledger::{Authorized, LedgerConfig, Outpoint, Output, OutputRole};

    pub(crate) fn setup(n: u32) -> (Phase1Dag, Ledger) {
        let fund = Arc::new(TemplateInstance::new(
            TemplateKind::TCStart,
            vec![],
            vec![Output::new(OutputRole::StartPhase1)],
            Authorized::Anyone,
            vec![],
            None,
            vec![n as u64],
            "fund".into(),
        ));
        let mut l = Ledger::new(LedgerConfig { fee: 1, extra_confirmation_periods: 0 }).with_avp(Avp::new(42));
        l.fund(fund.clone());
        let dag = build_phase1(n, Outpoint { tx_id: fund.tx_id, index: 0 }).unwrap();
        (dag, l)
    }

    fn run(n: u32, s: &[Strategy]) -> Phase1Outcome {
        let (dag, mut l) = setup(n);
        run_phase1(&dag, s, &mut l, &Phase1Options::default()).unwrap()
    }

    #[test]
    fn all_honest_left_most_wins_at_earliest() {
        for n in [2, 3, 5, 8, 13] {
            let o = run(n, &vec![Strategy::Honest; n as usize]);
            assert_eq!(o.winner, Some(0));
            assert_eq!(o.makespan, Some(6 * rounds_for(n) as u64));
            assert!(o.violations.is_empty(), "{:?}", o.violations);
        }
    }

    #[test]
    fn single_honest_beats_active_adversaries() {
        let mut s = vec![Strategy::EquivocateAssertion; 8];
        s[5] = Strategy::Honest;
        let o = run(8, &s);
        assert_eq!(o.winner, Some(5));
        assert!(o.violations.is_empty());
    }

    #[test]
    fn idle_pair_is_dual_cut_by_sibling() {
        use Strategy::*;
        let s = [Honest, Abstain, StallAfterRound(0), StallAfterRound(0)];
        let o = run(4, &s);
        assert_eq!(o.winner, Some(0));
        let c = o.cases.iter().find(|c| c.round == 1 && c.match_index == 1).unwrap();
        assert_eq!(c.kind, CaseKind::BothEnabledChallenged);
        assert_eq!(c.outcome, CaseOutcome::DualCut);
        assert_eq!(o.dispute_timeouts.get(&(0, 1)), Some(&1));
    }

    #[test]
    fn late_registration_is_cut() {
        use Strategy::*;
        let o = run(2, &[Honest, LateRegister]);
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.registered, vec![0]);
        let o = run(2, &[Abstain, LateRegister]);
        assert_eq!(o.winner, Some(1));
    }

    #[test]
    fn nobody_registers() {
        let o = run(4, &[Strategy::Abstain; 4]);
        assert_eq!(o.winner, None);
        assert!(o.cases.iter().all(|c| c.kind == CaseKind::NeitherEnabled));
    }
}
