use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ChallengerPolicy;
use crate::dag::{AsserterDag, Phase2Dag, SlotDag};
use crate::economics::{BondParams, CapitalTrace, EconError};
use crate::ledger::{
    Avp, FlexStep, Ledger, LedgerError, OperatorId, TemplateInstance, TemplateKind, Time, Witness, PERIODS_PER_EPOCH,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefundPolicy {
    /// Cancel unopened disputes, then take the early refund once nothing is open.
    CancelThenEarly,
    /// Ignore the early path and wait for the timelocked refund.
    WaitForRefund,
    /// Try the early refund right after the first input is published.
    Premature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsserterPolicy {
    pub truthful: bool,
    pub refund: RefundPolicy,
}

impl Default for AsserterPolicy {
    fn default() -> Self {
        AsserterPolicy { truthful: true, refund: RefundPolicy::CancelThenEarly }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefundKind {
    Early,
    Timelocked,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phase2Outcome {
    pub asserter: OperatorId,
    pub start: Time,
    pub end: Time,
    pub refund: Option<RefundKind>,
    pub rounds_used: u32,
    pub disputes_opened: u32,
    pub asserter_won: u32,
    pub asserter_lost: u32,
    pub cancelled: u32,
    /// A StillOpen confirmed after inputs were published.
    pub penalized: bool,
    /// Slot positions whose dispute never reached a terminal state.
    pub stuck: Vec<u32>,
    pub capital: CapitalTrace,
    pub trace_digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum Phase2Error {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Econ(#[from] EconError),
}

#[derive(Clone, Debug)]
pub struct Phase2Run<'a> {
    pub dag: &'a Phase2Dag,
    pub asserter: OperatorId,
    pub policy: AsserterPolicy,
    /// Behaviour of each slot's challenger, by slot position.
    pub challengers: &'a [ChallengerPolicy],
    pub bonds: BondParams,
    pub starting_balance: u64,
    pub reorder_seed: Option<u64>,
}

type Move = (OperatorId, Arc<TemplateInstance>, Witness);

struct View<'a> {
    ad: &'a AsserterDag,
    run: &'a Phase2Run<'a>,
    ledger: &'a Ledger,
    avp: Avp,
}

impl View<'_> {
    fn ready(&self, t: &Arc<TemplateInstance>) -> bool {
        !self.ledger.is_pending(&t.tx_id) && self.ledger.can_confirm(t)
    }

    fn live(&self, t: &Arc<TemplateInstance>) -> bool {
        self.ledger.is_confirmed(&t.tx_id) && self.ledger.is_unspent(&t.outpoint(0))
    }

    fn start_at(&self) -> Option<u64> {
        self.ledger.confirmation(&self.ad.start.tx_id).map(|c| c.at.0)
    }

    fn assertion(&self) -> u64 {
        if self.run.policy.truthful {
            self.avp.correct
        } else {
            self.avp.correct.wrapping_add(1)
        }
    }

    fn decided(&self, s: &SlotDag) -> Arc<TemplateInstance> {
        s.cosig.clone().unwrap_or_else(|| s.bob_input.clone())
    }

    /// Unspent dispute-stage token of a slot, as a StillOpen index.
    fn open_stage(&self, s: &SlotDag) -> Option<usize> {
        let mut tokens = vec![&s.reg_in, &s.bob_challenge, &s.bond_alice, &s.alice_input, &s.bob_input];
        if let Some(c) = &s.cosig {
            tokens.push(c);
        }
        tokens.iter().position(|t| self.live(t))
    }

    fn terminal(&self, s: &SlotDag) -> bool {
        !self.ledger.is_unspent(&self.ad.start.outpoint(1 + s.position)) && self.open_stage(s).is_none()
    }

    fn policy(&self, s: &SlotDag) -> ChallengerPolicy {
        self.run.challengers.get(s.position as usize).copied().unwrap_or(ChallengerPolicy::Abstain)
    }

    /// Round in which the asserter answers the dispute in slot `s`, by its
    /// rank among challenged slots.
    fn answer_round(&self, s: &SlotDag) -> u32 {
        let rank = self.ad.slots[..s.position as usize]
            .iter()
            .filter(|o| self.ledger.is_confirmed(&o.bob_challenge.tx_id))
            .count();
        self.run.dag.params.slot_rounds[rank]
    }

    fn asserter_moves(&self, out: &mut Vec<Move>) {
        let x = self.ad.asserter;
        let l = self.ledger;
        let mut push = |t: &Arc<TemplateInstance>, w: Witness| {
            if self.ready(t) {
                out.push((x, t.clone(), w));
            }
        };
        let Some(t0) = self.start_at() else {
            push(&self.ad.start, Witness::None);
            return;
        };
        let now = l.now().0;
        let walked_away =
            self.run.policy.refund == RefundPolicy::Premature && l.is_confirmed(&self.ad.try_early_refund.tx_id);
        for s in self.ad.slots.iter().filter(|_| !walked_away) {
            push(&s.reg_timeout, Witness::None);
            if l.is_confirmed(&s.reg_in.tx_id) && l.is_disabled(s.challenger) {
                push(&s.bob_was_disabled, Witness::None);
            }
            push(&s.no_bob_challenge, Witness::None);
            if self.live(&s.bob_challenge) && now >= t0 + PERIODS_PER_EPOCH * (self.answer_round(s) as u64 - 1) {
                push(&s.bond_alice, Witness::None);
            }
            if self.live(&s.bond_alice) {
                push(&s.alice_input, Witness::Assertion(self.assertion()));
            }
            if self.live(&s.alice_input) {
                push(&s.timeout_bob_input, Witness::None);
            }
            if let Some(c) = &s.cosig {
                if self.live(&s.bob_input) {
                    push(c, Witness::None);
                }
            }
            let d = self.decided(s);
            if self.live(&d) {
                push(&s.resolve_alice, Witness::None);
            }
        }
        match self.run.policy.refund {
            RefundPolicy::CancelThenEarly => {
                if self.ad.slots.iter().all(|s| self.terminal(s)) {
                    push(&self.ad.try_early_refund, Witness::None);
                }
                push(&self.ad.early_refund, Witness::None);
            }
            RefundPolicy::WaitForRefund => push(&self.ad.refund, Witness::None),
            RefundPolicy::Premature => {
                if self.ad.slots.iter().any(|s| l.is_confirmed(&s.alice_input.tx_id)) {
                    push(&self.ad.try_early_refund, Witness::None);
                }
                push(&self.ad.early_refund, Witness::None);
                push(&self.ad.refund, Witness::None);
            }
        }
    }

    fn challenger_moves(&self, s: &SlotDag, out: &mut Vec<Move>) {
        let c = s.challenger;
        let l = self.ledger;
        let Some(t0) = self.start_at() else { return };
        let policy = self.policy(s);
        let mut push = |t: &Arc<TemplateInstance>, w: Witness| {
            if self.ready(t) {
                out.push((c, t.clone(), w));
            }
        };
        let disputes = match policy {
            ChallengerPolicy::Honest => !self.avp.verdict(self.assertion()),
            ChallengerPolicy::Malicious => true,
            _ => false,
        };
        let registers = match policy {
            ChallengerPolicy::Honest => disputes,
            ChallengerPolicy::Malicious | ChallengerPolicy::RegisterOnly => true,
            ChallengerPolicy::LateRegister => l.now().0 >= t0 + 2,
            ChallengerPolicy::Abstain => false,
        };
        if !l.is_confirmed(&s.reg_in.tx_id) {
            if registers {
                push(&s.reg_in, Witness::None);
            }
            return;
        }
        if l.is_disabled(self.ad.asserter) {
            push(&self.ad.alice_was_disabled, Witness::None);
        }
        if self.live(&self.ad.try_early_refund) {
            if let Some(k) = self.open_stage(s) {
                push(&s.still_open[k], Witness::None);
                return;
            }
        }
        if disputes {
            push(&s.bob_challenge, Witness::None);
        }
        if self.live(&s.bob_challenge) {
            push(&s.timeout_alice_bond, Witness::None);
        }
        if self.live(&s.bond_alice) {
            push(&s.timeout_alice_input, Witness::None);
        }
        if self.live(&s.alice_input) {
            push(&s.bob_input, Witness::None);
        }
        if self.live(&self.decided(s)) {
            push(&s.resolve_bob, Witness::None);
        }
    }
}

/// Plays asserter `run.asserter`'s challenger rounds. The asserter's
/// activation output must already be on the ledger.
pub fn run_phase2(run: &Phase2Run<'_>, ledger: &mut Ledger) -> Result<Phase2Outcome, Phase2Error> {
    run.bonds.validate()?;
    let ad = &run.dag.asserters[run.asserter as usize];
    let avp = ledger.avp().unwrap_or(Avp::new(0));
    let mut capital = CapitalTrace::new(run.bonds);
    capital.set_time(ledger.now());
    capital.open_account(ad.asserter, run.starting_balance, 0);
    for s in &ad.slots {
        capital.open_account(s.challenger, run.starting_balance, 0);
    }
    let mut rng = run.reorder_seed.map(ChaCha8Rng::seed_from_u64);
    let first_seen = ledger.confirmed().len();
    let mut cursor = first_seen;
    let began = ledger.now().0;
    let horizon = began + 1 + run.dag.params.refund_timelock() + 4;
    let mut outcome_refund = None;

    while ledger.now().0 <= horizon {
        for _ in 0..64 {
            let view = View { ad, run, ledger, avp };
            let mut moves = Vec::new();
            view.asserter_moves(&mut moves);
            for s in &ad.slots {
                view.challenger_moves(s, &mut moves);
            }
            let mut seen = HashSet::new();
            moves.retain(|(_, t, _)| seen.insert(t.tx_id));
            if moves.is_empty() {
                break;
            }
            for (by, t, w) in moves {
                ledger.broadcast_with(t, by, w)?;
            }
            if let Some(rng) = rng.as_mut() {
                let mut perm: Vec<usize> = (0..ledger.queued_this_period()).collect();
                perm.shuffle(rng);
                ledger.reorder_within_period(&perm)?;
            }
            ledger.settle();
            cursor = book(ad, ledger, &mut capital, cursor)?;
        }
        let view = View { ad, run, ledger, avp };
        if ledger.is_confirmed(&ad.early_refund.tx_id) {
            outcome_refund = Some(RefundKind::Early);
        } else if ledger.is_confirmed(&ad.refund.tx_id) {
            outcome_refund = Some(RefundKind::Timelocked);
        }
        let reimbursement_closed = outcome_refund.is_some()
            || (view.start_at().is_some()
                && !ledger.is_unspent(&ad.reimburse_enabler())
                && !view.live(&ad.try_early_refund));
        if reimbursement_closed && ad.slots.iter().all(|s| view.terminal(s)) {
            break;
        }
        ledger.tick();
    }
    capital.finish();

    let view = View { ad, run, ledger, avp };
    let start = ledger.confirmation(&ad.start.tx_id).map(|c| c.at).unwrap_or(Time(began));
    let conf = |t: &Arc<TemplateInstance>| ledger.is_confirmed(&t.tx_id);
    let mut o = Phase2Outcome {
        asserter: ad.asserter,
        start,
        end: ledger.confirmed()[first_seen..].iter().map(|c| c.at).max().unwrap_or(start),
        refund: outcome_refund,
        rounds_used: 0,
        disputes_opened: 0,
        asserter_won: 0,
        asserter_lost: 0,
        cancelled: 0,
        penalized: false,
        stuck: Vec::new(),
        capital,
        trace_digest: ledger.trace_digest(),
    };
    for s in &ad.slots {
        if conf(&s.bond_alice) {
            o.disputes_opened += 1;
            let at = ledger.confirmation(&s.bond_alice.tx_id).expect("bonded").at.0;
            o.rounds_used = o.rounds_used.max(((at - start.0) / PERIODS_PER_EPOCH) as u32 + 1);
        }
        if conf(&s.resolve_alice) || conf(&s.timeout_bob_input) {
            o.asserter_won += 1;
        }
        if conf(&s.resolve_bob) || conf(&s.timeout_alice_bond) || conf(&s.timeout_alice_input) {
            o.asserter_lost += 1;
        }
        if conf(&s.reg_timeout) || conf(&s.no_bob_challenge) {
            o.cancelled += 1;
        }
        for (k, so) in s.still_open.iter().enumerate() {
            if conf(so) && SlotDag::still_open_penalizes(k) {
                o.penalized = true;
            }
        }
        if !view.terminal(s) {
            o.stuck.push(s.position);
        }
    }
    Ok(o)
}

/// Applies newly confirmed transactions to the capital trace.
fn book(ad: &AsserterDag, ledger: &Ledger, capital: &mut CapitalTrace, from: usize) -> Result<usize, EconError> {
    let x = ad.asserter;
    let confirmed = ledger.confirmed();
    let prefix = format!("p2/x{x}/");
    for c in &confirmed[from..] {
        if !c.tx.label.starts_with(&prefix) {
            continue;
        }
        capital.set_time(c.at);
        capital.fee(c.by)?;
        let b = &c.tx.bindings;
        if b.len() < 3 {
            continue;
        }
        let (j, ch) = (b[1], b[2] as OperatorId);
        let p = capital.params;
        match c.tx.kind {
            TemplateKind::BobChallenge => capital.lock(j, ch, p.challenger_aosb)?,
            TemplateKind::FlexInternal(FlexStep::BondAlice) => capital.lock(j, x, p.aosb)?,
            TemplateKind::AliceInput => capital.publication(x)?,
            TemplateKind::BobInput => capital.publication(ch)?,
            TemplateKind::FlexInternal(FlexStep::ResolveAlice | FlexStep::TimeoutBobInput) => {
                capital.forfeit(j, x, ch);
            }
            TemplateKind::FlexInternal(
                FlexStep::ResolveBob | FlexStep::TimeoutAliceBond | FlexStep::TimeoutAliceInput,
            ) => {
                capital.forfeit(j, ch, x);
            }
            TemplateKind::StillOpen => {
                let k: usize = c.tx.label.rsplit("StillOpen").next().and_then(|s| s.parse().ok()).unwrap_or(0);
                if SlotDag::still_open_penalizes(k) {
                    capital.forfeit(j, ch, x);
                } else {
                    capital.refund_dispute(j);
                }
            }
            _ => {}
        }
    }
    Ok(confirmed.len())
}
