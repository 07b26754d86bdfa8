use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{rounds_for, Dag, DagError, Emitter, PartyStatsSink, TemplateSink, ROUND_PERIODS};
use crate::ledger::{
    Authorized, FlexStep, Guard, InputRef, OperatorId, Outpoint, Output, OutputRole, TemplateInstance, TemplateKind,
    TxId,
};

/// Templates of one scheduled pairing.
#[derive(Clone, Debug)]
pub struct Phase1Pair {
    pub round: u32,
    pub match_index: u32,
    pub alice: OperatorId,
    pub bob: OperatorId,
    pub bob_challenge: Arc<TemplateInstance>,
    pub bond_alice: Arc<TemplateInstance>,
    pub timeout_alice_bond: Arc<TemplateInstance>,
    pub alice_input: Arc<TemplateInstance>,
    pub timeout_alice_input: Arc<TemplateInstance>,
    pub bob_input: Arc<TemplateInstance>,
    pub timeout_bob_input: Arc<TemplateInstance>,
    pub resolve_alice: Arc<TemplateInstance>,
    pub resolve_bob: Arc<TemplateInstance>,
    pub no_bob_challenge: Arc<TemplateInstance>,
    pub dispute_timeout: Arc<TemplateInstance>,
    /// Round one only: Alice excludes a Bob that never registered.
    pub no_assertion_bob: Option<Arc<TemplateInstance>>,
    /// Round one only: Bob excludes an Alice that never registered.
    pub asserter_timeout: Option<Arc<TemplateInstance>>,
}

#[derive(Clone, Debug)]
pub struct Phase1Dag {
    pub n: u32,
    pub rounds: u32,
    pub slot: Outpoint,
    pub dag: Dag,
    pub anchor: Arc<TemplateInstance>,
    /// `enable[x][r - 1]`; round one is the registration template.
    pub enable: Vec<Vec<Arc<TemplateInstance>>>,
    pub win: Vec<Arc<TemplateInstance>>,
    pub pairs: BTreeMap<(u32, OperatorId, OperatorId), Phase1Pair>,
    selectors: HashMap<(u32, u32), u32>,
}

type SelectorLayout = (Vec<(u32, u32)>, HashMap<(u32, u32), u32>);

/// Output index of every match selector in the anchor.
fn selector_layout(n: u32) -> SelectorLayout {
    let rounds = rounds_for(n);
    let mut order = Vec::new();
    let mut map = HashMap::new();
    for r in 1..=rounds {
        let mut j = 0u32;
        while (j << r) < n {
            map.insert((r, j), n + order.len() as u32);
            order.push((r, j));
            j += 1;
        }
    }
    (order, map)
}

/// Left (asserter) and right (challenger) halves of match `(r, j)`.
pub(crate) fn match_halves(n: u32, r: u32, j: u32) -> (Vec<OperatorId>, Vec<OperatorId>) {
    let start = j << r;
    let half = 1u32 << (r - 1);
    let left = (start..start + half).filter(|&x| x < n).collect();
    let right = (start + half..start + 2 * half).filter(|&x| x < n).collect();
    (left, right)
}

fn only(id: OperatorId) -> Authorized {
    Authorized::one(id)
}

fn op(tx_id: TxId, index: u32) -> Outpoint {
    Outpoint { tx_id, index }
}

const ENABLER: u32 = 0;
const NEXT: u32 = 1;

struct Ids {
    anchor: TxId,
    enable: Vec<Vec<TxId>>,
}

fn emit_phase1<S: TemplateSink>(n: u32, slot: Outpoint, sink: &mut S) -> Ids {
    let rounds = rounds_for(n);
    let mut e = Emitter { sink };
    let (order, sel) = selector_layout(n);
    let all: Vec<OperatorId> = (0..n).collect();

    let anchor = e.emit(&all, || {
        let mut outputs: Vec<Output> = (0..n).map(|x| Output::new(OutputRole::RegSeed(x))).collect();
        outputs.extend(order.iter().map(|&(round, index)| Output::new(OutputRole::Selector { round, index })));
        TemplateInstance::new(
            TemplateKind::StartPhase1,
            vec![InputRef::new(slot)],
            outputs,
            Authorized::Anyone,
            all.clone(),
            None,
            vec![n as u64],
            "p1/start".into(),
        )
    });

    let enabler_outputs = |x: OperatorId, round: u32| {
        vec![
            Output::new(OutputRole::Enabler { party: x, round }),
            Output::new(OutputRole::NextEnabler { party: x, round }),
        ]
    };

    let mut enable: Vec<Vec<TxId>> = Vec::with_capacity(n as usize);
    for x in 0..n {
        let mut chain = Vec::with_capacity(rounds as usize);
        chain.push(e.emit(&[x], || {
            TemplateInstance::new(
                TemplateKind::RegistrationPhase1,
                vec![InputRef::new(op(anchor, x))],
                enabler_outputs(x, 1),
                only(x),
                vec![x],
                None,
                vec![x as u64, 1],
                format!("p1/reg/x{x}"),
            )
        }));
        for r in 2..=rounds {
            let prev = chain[(r - 2) as usize];
            let s = sel[&(r - 1, x >> (r - 1))];
            chain.push(e.emit(&[x], || {
                TemplateInstance::new(
                    TemplateKind::EnableRound,
                    vec![InputRef::after(op(anchor, s), ROUND_PERIODS * (r as u64 - 1)), InputRef::new(op(prev, NEXT))],
                    enabler_outputs(x, r),
                    Authorized::Anyone,
                    vec![x],
                    None,
                    vec![x as u64, r as u64],
                    format!("p1/enable/x{x}/r{r}"),
                )
            }));
        }
        let last = *chain.last().expect("at least one round");
        let final_sel = sel[&(rounds, 0)];
        e.emit(&[x], || {
            TemplateInstance::new(
                TemplateKind::WinPhase1,
                vec![
                    InputRef::after(op(anchor, final_sel), ROUND_PERIODS * rounds as u64),
                    InputRef::new(op(last, NEXT)),
                ],
                vec![Output::new(OutputRole::Activation(x))],
                Authorized::Anyone,
                vec![x],
                None,
                vec![x as u64],
                format!("p1/win/x{x}"),
            )
        });
        enable.push(chain);
    }

    for &(r, j) in &order {
        let (left, right) = match_halves(n, r, j);
        let s = sel[&(r, j)];
        for &a in &left {
            for &b in &right {
                emit_pair(&mut e, r, s, a, b, anchor, &enable);
            }
        }
    }
    Ids { anchor, enable }
}

#[allow(clippy::too_many_arguments)]
fn emit_pair<S: TemplateSink>(
    e: &mut Emitter<'_, S>,
    r: u32,
    selector: u32,
    a: OperatorId,
    b: OperatorId,
    anchor: TxId,
    enable: &[Vec<TxId>],
) {
    let pair = [a, b];
    let ea = op(enable[a as usize][(r - 1) as usize], ENABLER);
    let eb = op(enable[b as usize][(r - 1) as usize], ENABLER);
    let na = op(enable[a as usize][(r - 1) as usize], NEXT);
    let nb = op(enable[b as usize][(r - 1) as usize], NEXT);
    let bind = vec![r as u64, a as u64, b as u64];
    let label = |step: &str| format!("p1/r{r}/a{a}/b{b}/{step}");
    let state = |s: u8| Output::new(OutputRole::DisputeState(s));
    let payout = |p: OperatorId| Output::new(OutputRole::Payout(p));
    let t = |kind, inputs, outputs, auth, guard: Option<Guard>, step: &str| {
        TemplateInstance::new(kind, inputs, outputs, auth, pair.to_vec(), guard, bind.clone(), label(step))
    };

    let challenged = e.emit(&pair, || {
        t(
            TemplateKind::BobChallenge,
            vec![InputRef::new(ea), InputRef::new(eb)],
            vec![state(1)],
            only(b),
            None,
            "BobChallenge",
        )
    });
    let bonded = e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::BondAlice),
            vec![InputRef::new(op(challenged, 0))],
            vec![state(2)],
            only(a),
            None,
            "BondAlice",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutAliceBond),
            vec![InputRef::after(op(challenged, 0), 1), InputRef::new(na)],
            vec![payout(b)],
            only(b),
            None,
            "TimeoutAliceBond",
        )
    });
    let alice_input = e.emit(&pair, || {
        t(TemplateKind::AliceInput, vec![InputRef::new(op(bonded, 0))], vec![state(3)], only(a), None, "AliceInput")
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutAliceInput),
            vec![InputRef::after(op(bonded, 0), 2), InputRef::new(na)],
            vec![payout(b)],
            only(b),
            None,
            "TimeoutAliceInput",
        )
    });
    let bob_input = e.emit(&pair, || {
        t(TemplateKind::BobInput, vec![InputRef::new(op(alice_input, 0))], vec![state(4)], only(b), None, "BobInput")
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::TimeoutBobInput),
            vec![InputRef::after(op(alice_input, 0), 2), InputRef::new(nb)],
            vec![payout(a)],
            only(a),
            None,
            "TimeoutBobInput",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::ResolveAlice),
            vec![InputRef::new(op(bob_input, 0)), InputRef::new(nb)],
            vec![payout(a)],
            only(a),
            Some(Guard::AvpVerdict { source: alice_input, expect: true }),
            "ResolveAlice",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::FlexInternal(FlexStep::ResolveBob),
            vec![InputRef::new(op(bob_input, 0)), InputRef::new(na)],
            vec![payout(b)],
            only(b),
            Some(Guard::AvpVerdict { source: alice_input, expect: false }),
            "ResolveBob",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::NoBobChallenge,
            vec![InputRef::after(eb, 1), InputRef::new(nb)],
            vec![],
            only(a),
            None,
            "NoBobChallenge",
        )
    });
    e.emit(&pair, || {
        t(
            TemplateKind::DisputeTimeout,
            vec![
                InputRef::after(op(anchor, selector), ROUND_PERIODS * (r as u64 - 1) + 5),
                InputRef::new(na),
                InputRef::new(nb),
            ],
            vec![],
            Authorized::Anyone,
            None,
            "DisputeTimeout",
        )
    });
    if r == 1 {
        e.emit(&pair, || {
            t(
                TemplateKind::NoBobChallenge,
                vec![InputRef::after(op(anchor, b), 1)],
                vec![],
                only(a),
                None,
                "NoAssertionBob",
            )
        });
        e.emit(&pair, || {
            t(
                TemplateKind::AsserterTimeout,
                vec![InputRef::after(op(anchor, a), 1)],
                vec![],
                only(b),
                None,
                "AsserterTimeout",
            )
        });
    }
}

/// Builds the Phase 1 bracket anchored at `slot`.
pub fn build_phase1(n: u32, slot: Outpoint) -> Result<Phase1Dag, DagError> {
    if n < 2 {
        return Err(DagError::InvalidN(n));
    }
    let mut dag = Dag::default();
    let ids = emit_phase1(n, slot, &mut dag);
    let rounds = rounds_for(n);
    let by_label: HashMap<&str, &Arc<TemplateInstance>> =
        dag.templates().iter().map(|t| (t.label.as_str(), t)).collect();
    let get =
        |l: &str| -> Arc<TemplateInstance> { (*by_label.get(l).unwrap_or_else(|| panic!("missing {l}"))).clone() };

    let anchor = dag.get(&ids.anchor).expect("anchor").clone();
    let enable =
        ids.enable.iter().map(|chain| chain.iter().map(|id| dag.get(id).expect("enabler").clone()).collect()).collect();
    let win = (0..n).map(|x| get(&format!("p1/win/x{x}"))).collect();
    let (order, selectors) = selector_layout(n);
    let mut pairs = BTreeMap::new();
    for &(r, j) in &order {
        let (left, right) = match_halves(n, r, j);
        for &a in &left {
            for &b in &right {
                let l = |s: &str| format!("p1/r{r}/a{a}/b{b}/{s}");
                let opt = |s: &str| by_label.get(l(s).as_str()).map(|t| (*t).clone());
                pairs.insert(
                    (r, a, b),
                    Phase1Pair {
                        round: r,
                        match_index: j,
                        alice: a,
                        bob: b,
                        bob_challenge: get(&l("BobChallenge")),
                        bond_alice: get(&l("BondAlice")),
                        timeout_alice_bond: get(&l("TimeoutAliceBond")),
                        alice_input: get(&l("AliceInput")),
                        timeout_alice_input: get(&l("TimeoutAliceInput")),
                        bob_input: get(&l("BobInput")),
                        timeout_bob_input: get(&l("TimeoutBobInput")),
                        resolve_alice: get(&l("ResolveAlice")),
                        resolve_bob: get(&l("ResolveBob")),
                        no_bob_challenge: get(&l("NoBobChallenge")),
                        dispute_timeout: get(&l("DisputeTimeout")),
                        no_assertion_bob: opt("NoAssertionBob"),
                        asserter_timeout: opt("AsserterTimeout"),
                    },
                );
            }
        }
    }
    drop(by_label);
    Ok(Phase1Dag { n, rounds, slot, dag, anchor, enable, win, pairs, selectors })
}

/// Phase 1 template count, signatures and bytes relevant to `party`, without
/// materializing the rest of the DAG.
pub fn party_phase1_bytes(n: u32, party: OperatorId) -> Result<PartyStatsSink, DagError> {
    if n < 2 {
        return Err(DagError::InvalidN(n));
    }
    let mut sink = PartyStatsSink::new(party);
    let slot = Outpoint { tx_id: TxId([0; 32]), index: 0 };
    emit_phase1(n, slot, &mut sink);
    Ok(sink)
}

impl Phase1Dag {
    pub fn selector_outpoint(&self, round: u32, index: u32) -> Option<Outpoint> {
        self.selectors.get(&(round, index)).map(|&i| self.anchor.outpoint(i))
    }

    pub fn reg_seed(&self, x: OperatorId) -> Outpoint {
        self.anchor.outpoint(x)
    }

    /// Match index of `x` in round `r`.
    pub fn match_of(&self, x: OperatorId, r: u32) -> u32 {
        x >> r
    }

    /// Whether `x` plays the asserter side in round `r`.
    pub fn is_alice(&self, x: OperatorId, r: u32) -> bool {
        (x >> (r - 1)) & 1 == 0
    }

    pub fn halves(&self, r: u32, j: u32) -> (Vec<OperatorId>, Vec<OperatorId>) {
        match_halves(self.n, r, j)
    }

    pub fn enabler(&self, x: OperatorId, r: u32) -> Outpoint {
        self.enable[x as usize][(r - 1) as usize].outpoint(ENABLER)
    }

    pub fn next_enabler(&self, x: OperatorId, r: u32) -> Outpoint {
        self.enable[x as usize][(r - 1) as usize].outpoint(NEXT)
    }

    /// The pairing between `x` and `y` in round `r`, if scheduled.
    pub fn pair_of(&self, r: u32, x: OperatorId, y: OperatorId) -> Option<&Phase1Pair> {
        self.pairs.get(&(r, x, y)).or_else(|| self.pairs.get(&(r, y, x)))
    }

    /// Every pairing for match `(r, j)`.
    pub fn pairs_in_match(&self, r: u32, j: u32) -> impl Iterator<Item = &Phase1Pair> {
        self.pairs.values().filter(move |p| p.round == r && p.match_index == j)
    }

    /// Earliest period, relative to the anchor, at which any WinPhase1 can
    /// confirm: longest timelock path from the anchor.
    pub fn earliest_win_period(&self) -> u64 {
        let mut earliest: HashMap<TxId, u64> = HashMap::new();
        earliest.insert(self.anchor.tx_id, 0);
        let mut best = u64::MAX;
        for t in self.dag.templates() {
            if t.tx_id == self.anchor.tx_id {
                continue;
            }
            let mut at = 0u64;
            let mut ok = true;
            for i in &t.inputs {
                match earliest.get(&i.outpoint.tx_id) {
                    Some(&p) => at = at.max(p + i.relative_timelock),
                    None => ok = false,
                }
            }
            if ok {
                earliest.insert(t.tx_id, at);
                if t.kind == TemplateKind::WinPhase1 {
                    best = best.min(at);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot() -> Outpoint {
        Outpoint { tx_id: TxId([7; 32]), index: 0 }
    }

    #[test]
    fn n2_minimal() {
        let d = build_phase1(2, slot()).unwrap();
        assert_eq!(d.win.len(), 2);
        assert_eq!(d.selectors.len(), 1);
        assert_eq!(d.pairs.len(), 1);
        d.dag.check_acyclic(&[slot().tx_id]).unwrap();
    }

    #[test]
    fn round_two_box_has_sixteen_pairings_at_n8() {
        let d = build_phase1(8, slot()).unwrap();
        // Round 3 at N=8 pairs {0..3} against {4..7}.
        assert_eq!(d.pairs_in_match(3, 0).count(), 16);
        assert_eq!(d.pairs_in_match(2, 0).count(), 4);
    }

    #[test]
    fn round_one_roles() {
        let d = build_phase1(8, slot()).unwrap();
        for x in 0..8u32 {
            assert_eq!(d.is_alice(x, 1), x % 2 == 0);
        }
    }

    #[test]
    fn selectors_shared_by_all_winners_and_timeouts() {
        let d = build_phase1(4, slot()).unwrap();
        let final_sel = d.selector_outpoint(2, 0).unwrap();
        for w in &d.win {
            assert!(w.inputs.iter().any(|i| i.outpoint == final_sel));
        }
        let spenders = d.dag.spenders_of(final_sel.tx_id, final_sel.index);
        // 4 WinPhase1 + 4 DisputeTimeout in the final match.
        assert_eq!(spenders.len(), 8);
    }

    #[test]
    fn streaming_matches_full_build() {
        let d = build_phase1(6, slot()).unwrap();
        let stats = d.dag.stats(6);
        for x in 0..6 {
            let s = party_phase1_bytes(6, x).unwrap();
            assert_eq!(s.bytes, stats.per_party_storage_bytes[x as usize]);
        }
    }

    #[test]
    fn earliest_win() {
        for n in 2..=16 {
            let d = build_phase1(n, slot()).unwrap();
            assert_eq!(d.earliest_win_period(), 6 * rounds_for(n) as u64);
        }
    }
}
