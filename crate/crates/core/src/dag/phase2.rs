use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Dag, DagError, Emitter, PartyStatsSink, TemplateSink};
use crate::ledger::{
    Authorized, FlexStep, Guard, InputRef, OperatorId, Outpoint, Output, OutputRole, TemplateInstance, TemplateKind,
    TxId,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2Params {
    pub n: u32,
    /// Challenger slots per asserter.
    pub max_challengers: u32,
    /// Round of each slot position; its length is `max_challengers`.
    pub slot_rounds: Vec<u32>,
    /// Potential challengers in setup permutation order.
    pub challenger_pool: Vec<OperatorId>,
    pub asserter_bond: u64,
    pub challenger_bond: u64,
    /// Adds the co-signature step used when Bob appends a counter-proof.
    pub cosig: bool,
}

impl Phase2Params {
    pub fn rounds(&self) -> u32 {
        self.slot_rounds.iter().copied().max().unwrap_or(0)
    }

    /// Relative timelock of the Refund path.
    pub fn refund_timelock(&self) -> u64 {
        5 * self.rounds() as u64 + 2
    }

    pub fn challengers_for(&self, asserter: OperatorId) -> Vec<OperatorId> {
        self.challenger_pool.iter().copied().filter(|&c| c != asserter).take(self.max_challengers as usize).collect()
    }

    fn validate(&self) -> Result<(), DagError> {
        if self.n == 0 {
            return Err(DagError::InvalidParams("n must be positive".into()));
        }
        if self.slot_rounds.len() != self.max_challengers as usize {
            return Err(DagError::InvalidParams("one round per slot required".into()));
        }
        if self.slot_rounds.contains(&0) || self.slot_rounds.windows(2).any(|w| w[1] < w[0]) {
            return Err(DagError::InvalidParams("slot rounds must be positive and non-decreasing".into()));
        }
        for x in 0..self.n {
            if self.challengers_for(x).len() < self.max_challengers as usize {
                return Err(DagError::InvalidParams(format!("challenger pool too small for asserter {x}")));
            }
        }
        Ok(())
    }
}

/// Dispute stage tokens that a StillOpen transaction can consume.
pub const STILL_OPEN_STAGES: [&str; 5] = ["Registered", "Challenged", "BondsPosted", "AliceInput", "BobInput"];

#[derive(Clone, Debug)]
pub struct SlotDag {
    pub position: u32,
    pub challenger: OperatorId,
    pub round: u32,
    pub reg_in: Arc<TemplateInstance>,
    pub reg_timeout: Arc<TemplateInstance>,
    pub bob_challenge: Arc<TemplateInstance>,
    pub no_bob_challenge: Arc<TemplateInstance>,
    pub bond_alice: Arc<TemplateInstance>,
    pub timeout_alice_bond: Arc<TemplateInstance>,
    pub alice_input: Arc<TemplateInstance>,
    pub timeout_alice_input: Arc<TemplateInstance>,
    pub bob_input: Arc<TemplateInstance>,
    pub cosig: Option<Arc<TemplateInstance>>,
    pub timeout_bob_input: Arc<TemplateInstance>,
    pub resolve_alice: Arc<TemplateInstance>,
    pub resolve_bob: Arc<TemplateInstance>,
    /// Indexed like [`STILL_OPEN_STAGES`], plus the co-signed stage when present.
    pub still_open: Vec<Arc<TemplateInstance>>,
    pub bob_was_disabled: Arc<TemplateInstance>,
}

impl SlotDag {
    /// Whether a StillOpen variant consuming stage `k` penalizes the asserter.
    pub fn still_open_penalizes(stage: usize) -> bool {
        stage >= 3
    }
}

#[derive(Clone, Debug)]
pub struct AsserterDag {
    pub asserter: OperatorId,
    pub start: Arc<TemplateInstance>,
    pub try_early_refund: Arc<TemplateInstance>,
    pub early_refund: Arc<TemplateInstance>,
    pub refund: Arc<TemplateInstance>,
    pub alice_was_disabled: Arc<TemplateInstance>,
    pub slots: Vec<SlotDag>,
}

impl AsserterDag {
    pub fn reimburse_enabler(&self) -> Outpoint {
        self.start.outpoint(0)
    }
}

#[derive(Clone, Debug)]
pub struct Phase2Dag {
    pub params: Phase2Params,
    pub dag: Dag,
    pub asserters: Vec<AsserterDag>,
}

fn op(tx_id: TxId, index: u32) -> Outpoint {
    Outpoint { tx_id, index }
}

pub(crate) fn emit_phase2<S: TemplateSink>(p: &Phase2Params, activations: &[Outpoint], sink: &mut S) {
    let mut e = Emitter { sink };
    let refund_tl = p.refund_timelock();
    for x in 0..p.n {
        let challengers = p.challengers_for(x);
        let me = [x];
        let label = |s: &str| format!("p2/x{x}/{s}");
        let start = e.emit(&me, || {
            let mut outputs = vec![Output::new(OutputRole::ReimburseEnabler)];
            outputs.extend((0..p.max_challengers).map(|j| Output::new(OutputRole::RegSlot(j))));
            TemplateInstance::new(
                TemplateKind::StartTournament,
                vec![InputRef::new(activations[x as usize])],
                outputs,
                Authorized::Anyone,
                me.to_vec(),
                None,
                vec![x as u64, p.max_challengers as u64],
                label("StartTournament"),
            )
        });
        let reimburse = op(start, 0);
        let tried = e.emit(&me, || {
            TemplateInstance::new(
                TemplateKind::TryEarlyRefund,
                vec![InputRef::new(reimburse)],
                vec![Output::new(OutputRole::ReimbursementTried)],
                Authorized::one(x),
                me.to_vec(),
                None,
                vec![x as u64],
                label("TryEarlyRefund"),
            )
        });
        let simple = |kind, inputs, guard, auth, name: &str| {
            TemplateInstance::new(
                kind,
                inputs,
                vec![Output::new(OutputRole::Payout(x))],
                auth,
                me.to_vec(),
                guard,
                vec![x as u64],
                label(name),
            )
        };
        e.emit(&me, || {
            simple(
                TemplateKind::EarlyRefund,
                vec![InputRef::after(op(tried, 0), 1)],
                None,
                Authorized::one(x),
                "EarlyRefund",
            )
        });
        e.emit(&me, || {
            simple(
                TemplateKind::Refund,
                vec![InputRef::after(reimburse, refund_tl)],
                None,
                Authorized::one(x),
                "Refund",
            )
        });
        e.emit(&me, || {
            simple(
                TemplateKind::AliceWasDisabled,
                vec![InputRef::new(reimburse)],
                Some(Guard::Disabled(x)),
                Authorized::Anyone,
                "AliceWasDisabled",
            )
        });

        for (j, &c) in challengers.iter().enumerate() {
            let j = j as u32;
            let round = p.slot_rounds[j as usize];
            emit_slot(&mut e, p, x, c, j, round, start, tried);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn emit_slot<S: TemplateSink>(
    e: &mut Emitter<'_, S>,
    p: &Phase2Params,
    x: OperatorId,
    c: OperatorId,
    j: u32,
    round: u32,
    start: TxId,
    tried: TxId,
) {
    let pair = [x, c];
    let reimburse = op(start, 0);
    let bind = vec![x as u64, j as u64, c as u64];
    let state = |s: u8, v: u64| Output::new(OutputRole::DisputeState(s)).with_value(v);
    let payout = |q: OperatorId| vec![Output::new(OutputRole::Payout(q))];
    let t = |kind, inputs, outputs, auth, guard: Option<Guard>, name: &str| {
        TemplateInstance::new(
            kind,
            inputs,
            outputs,
            auth,
            pair.to_vec(),
            guard,
            bind.clone(),
            format!("p2/x{x}/s{j}/{name}"),
        )
    };
    let only = Authorized::one;

    let reg = e.emit(&pair, || {
        t(
            TemplateKind::RegInPhase2,
            vec![InputRef::new(op(start, 1 + j))],
            vec![Output::new(OutputRole::BobEnabler(j))],
            only(c),
            None,
            "RegInPhase2",
        )
    });
    e.emit(&pair, || {
        t(TemplateKind::RegTimeout, vec![InputRef::after(op(start, 1 + j), 1)], vec![], only(x), None, "RegTimeout")
    });
    let enabler = op(reg, 0);
    let challenged = e.emit(&pair, || {
        t(
            TemplateKind::BobChallenge,
            vec![InputRef::new(enabler)],
            vec![state(1, p.challenger_bond)],
            only(c),
            None,
            "BobChallenge",
        )
    });
    e.emit(&pair, || {
        t(TemplateKind::NoBobChallenge, vec![InputRef::after(enabler, 1)], vec![], only(x), None, "NoBobChallenge")
    });
    let bonded = e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::BondAlice),
            vec![InputRef::new(op(challenged, 0))],
            vec![state(2, p.asserter_bond + p.challenger_bond)],
            only(x),
            None,
            "BondAlice",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutAliceBond),
            vec![InputRef::after(op(challenged, 0), 5 * (round as u64 - 1) + 1), InputRef::new(reimburse)],
            payout(c),
            only(c),
            None,
            "TimeoutAliceBond",
        )
    });
    let alice_input = e.emit(&pair, || {
        t(TemplateKind::AliceInput, vec![InputRef::new(op(bonded, 0))], vec![state(3, 0)], only(x), None, "AliceInput")
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutAliceInput),
            vec![InputRef::after(op(bonded, 0), 2), InputRef::new(reimburse)],
            payout(c),
            only(c),
            None,
            "TimeoutAliceInput",
        )
    });
    let bob_input = e.emit(&pair, || {
        t(TemplateKind::BobInput, vec![InputRef::new(op(alice_input, 0))], vec![state(4, 0)], only(c), None, "BobInput")
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutBobInput),
            vec![InputRef::after(op(alice_input, 0), 2)],
            payout(x),
            only(x),
            None,
            "TimeoutBobInput",
        )
    });
    let decided = if p.cosig {
        let id = e.emit(&pair, || {
            t(
                TemplateKind::AliceInputCoSig,
                vec![InputRef::new(op(bob_input, 0))],
                vec![state(5, 0)],
                Authorized::Anyone,
                None,
                "AliceInputCoSig",
            )
        });
        op(id, 0)
    } else {
        op(bob_input, 0)
    };
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::ResolveAlice),
            vec![InputRef::new(decided)],
            payout(x),
            only(x),
            Some(Guard::AvpVerdict { source: alice_input, expect: true }),
            "ResolveAlice",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::ResolveBob),
            vec![InputRef::new(decided), InputRef::new(reimburse)],
            payout(c),
            only(c),
            Some(Guard::AvpVerdict { source: alice_input, expect: false }),
            "ResolveBob",
        )
    });
    let mut tokens = vec![enabler, op(challenged, 0), op(bonded, 0), op(alice_input, 0), op(bob_input, 0)];
    if p.cosig {
        tokens.push(decided);
    }
    for (k, token) in tokens.into_iter().enumerate() {
        e.emit(&pair, || {
            t(
                TemplateKind::StillOpen,
                vec![InputRef::new(op(tried, 0)), InputRef::new(token)],
                payout(c),
                only(c),
                None,
                &format!("StillOpen{k}"),
            )
        });
    }
    e.emit(&pair, || {
        t(
            TemplateKind::BobWasDisabled,
            vec![InputRef::new(enabler)],
            vec![],
            Authorized::Anyone,
            Some(Guard::Disabled(c)),
            "BobWasDisabled",
        )
    });
}

/// Phase 2 statistics for templates `party` signs, without materializing
/// the rest of the DAG.
pub fn party_phase2_bytes(params: &Phase2Params, party: OperatorId) -> Result<PartyStatsSink, DagError> {
    params.validate()?;
    let activations: Vec<Outpoint> = (0..params.n).map(|x| op(TxId([0; 32]), x)).collect();
    let mut sink = PartyStatsSink::new(party);
    emit_phase2(params, &activations, &mut sink);
    Ok(sink)
}

/// Builds the `n` mutually exclusive Phase 2 templates; `activations[x]` is
/// the activation output of asserter `x`'s WinPhase1.
pub fn build_phase2(params: Phase2Params, activations: &[Outpoint]) -> Result<Phase2Dag, DagError> {
    params.validate()?;
    if activations.len() != params.n as usize {
        return Err(DagError::InvalidParams("one activation outpoint per asserter".into()));
    }
    let mut dag = Dag::default();
    emit_phase2(&params, activations, &mut dag);
    let by_label: HashMap<&str, &Arc<TemplateInstance>> =
        dag.templates().iter().map(|t| (t.label.as_str(), t)).collect();
    let get = |l: String| -> Arc<TemplateInstance> {
        (*by_label.get(l.as_str()).unwrap_or_else(|| panic!("missing {l}"))).clone()
    };
    let mut asserters = Vec::with_capacity(params.n as usize);
    for x in 0..params.n {
        let slots = params
            .challengers_for(x)
            .into_iter()
            .enumerate()
            .map(|(j, c)| {
                let l = |s: &str| format!("p2/x{x}/s{j}/{s}");
                let stages = STILL_OPEN_STAGES.len() + usize::from(params.cosig);
                SlotDag {
                    position: j as u32,
                    challenger: c,
                    round: params.slot_rounds[j],
                    reg_in: get(l("RegInPhase2")),
                    reg_timeout: get(l("RegTimeout")),
                    bob_challenge: get(l("BobChallenge")),
                    no_bob_challenge: get(l("NoBobChallenge")),
                    bond_alice: get(l("BondAlice")),
                    timeout_alice_bond: get(l("TimeoutAliceBond")),
                    alice_input: get(l("AliceInput")),
                    timeout_alice_input: get(l("TimeoutAliceInput")),
                    bob_input: get(l("BobInput")),
                    cosig: params.cosig.then(|| get(l("AliceInputCoSig"))),
                    timeout_bob_input: get(l("TimeoutBobInput")),
                    resolve_alice: get(l("ResolveAlice")),
                    resolve_bob: get(l("ResolveBob")),
                    still_open: (0..stages).map(|k| get(l(&format!("StillOpen{k}")))).collect(),
                    bob_was_disabled: get(l("BobWasDisabled")),
                }
            })
            .collect();
        let a = |s: &str| get(format!("p2/x{x}/{s}"));
        asserters.push(AsserterDag {
            asserter: x,
            start: a("StartTournament"),
            try_early_refund: a("TryEarlyRefund"),
            early_refund: a("EarlyRefund"),
            refund: a("Refund"),
            alice_was_disabled: a("AliceWasDisabled"),
            slots,
        });
    }
    drop(by_label);
    Ok(Phase2Dag { params, dag, asserters })
}
