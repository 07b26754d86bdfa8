//! Scenario execution and exhaustive enumeration.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::run_batch;
use crate::contest::verifiers_per_circuit;
use crate::costmodel::{cost_table, CostError, CostRow};
use crate::dag::{build_phase1, build_phase2, DagError, DagExport, ExportMeta, Phase1Dag, Phase2Params};
use crate::disable::{commit, verify_setup, DisableMethod, DisableTracker};
use crate::economics::BondParams;
use crate::ledger::{
    Authorized, Avp, Ledger, LedgerConfig, LedgerError, OperatorId, Outpoint, Output, OutputRole, TemplateInstance,
    TemplateKind,
};
use crate::scenario::{ConfigError, ContestMethod, Scenario, Space};
use crate::tc::{OaaVerdict, SideSystem, SignatureDelay, TcChain, TcError, TcEvent};
use crate::tournament::{
    lottery_template_count, run_lottery, run_parallel_brackets, run_phase1, run_phase2, AsserterPolicy, CaseKind,
    CaseOutcome, CaseRecord, ChallengerPolicy, LotteryOutcome, LotteryPlayer, ParallelError, Phase1Options,
    Phase1Outcome, Phase2Error, Phase2Run, Phase2Schedule, RefundKind, Strategy, Violation,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("space of {size} points exceeds the cap of {cap}")]
    SpaceTooLarge { size: u64, cap: u64 },
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Tc(#[from] TcError),
    #[error(transparent)]
    Parallel(#[from] ParallelError),
    #[error(transparent)]
    Phase2(#[from] Phase2Error),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcReport {
    pub link_timelock: u64,
    pub link: usize,
    pub opened_at: u64,
    pub events: Vec<TcEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub anchor_at: u64,
    pub winner: Option<OperatorId>,
    pub makespan: Option<u64>,
    pub rounds: u32,
    pub registered: Vec<OperatorId>,
    /// (party, round, period).
    pub eliminated: Vec<(OperatorId, u32, u64)>,
    pub cases: Vec<CaseRecord>,
    /// (party, round, count).
    pub dispute_timeouts: Vec<(OperatorId, u32, u32)>,
    pub fees: Vec<(OperatorId, u64)>,
}

impl Phase1Report {
    fn new(o: &Phase1Outcome, rounds: u32, makespan: Option<u64>) -> Self {
        Phase1Report {
            anchor_at: o.anchor_at.0,
            winner: o.winner,
            makespan,
            rounds,
            registered: o.registered.clone(),
            eliminated: o.eliminated.iter().map(|(&p, &(r, t))| (p, r, t.0)).collect(),
            cases: o.cases.clone(),
            dispute_timeouts: o.dispute_timeouts.iter().map(|(&(p, r), &c)| (p, r, c)).collect(),
            fees: o.fees.iter().map(|(&p, &f)| (p, f)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub asserter: OperatorId,
    pub truthful: bool,
    pub start: u64,
    pub end: u64,
    pub refund: Option<RefundKind>,
    pub rounds_used: u32,
    pub disputes_opened: u32,
    pub asserter_won: u32,
    pub asserter_lost: u32,
    pub cancelled: u32,
    pub penalized: bool,
    pub stuck: Vec<u32>,
    pub asserter_peak_capital: u64,
    /// (party, final balance, peak capital).
    pub capital: Vec<(OperatorId, u64, u64)>,
    pub conserved: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryReport {
    pub outcome: LotteryOutcome,
    pub lottery_templates: u64,
    pub bracket_templates: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisableReport {
    pub method: DisableMethod,
    pub setup_verified: bool,
    /// Parties whose disable secret became derivable.
    pub disabled: Vec<OperatorId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestReport {
    pub method: ContestMethod,
    pub verifiers_per_circuit: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_digest: String,
    pub seed: u64,
    pub n: u32,
    pub c: u32,
    pub q: u32,
    pub strategies: Vec<String>,
    pub tc: TcReport,
    pub phase1: Phase1Report,
    pub oaa: OaaVerdict,
    pub phase2: Option<Phase2Report>,
    pub lottery: Option<LotteryReport>,
    pub disable: Option<DisableReport>,
    pub contest: ContestReport,
    pub costs: Option<Vec<CostRow>>,
    pub violations: Vec<String>,
    pub trace_digest: String,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub trace_jsonl: String,
}

/// Seed for the intra-period reorder stream of a scenario.
fn reorder_seed(s: &Scenario) -> Option<u64> {
    s.reorder.then_some(s.seed ^ 0x5eed_0f0f)
}

pub fn run_scenario(s: &Scenario) -> Result<RunArtifacts, RunError> {
    s.validate()?;
    let strategies = s.strategy_list();
    let mut ledger =
        Ledger::new(LedgerConfig { fee: s.bonds.fee, extra_confirmation_periods: 0 }).with_avp(Avp::new(s.avp_correct));
    let mut violations = Vec::new();

    // Tournament chain: one link opens the slot for this tournament.
    let link_timelock = if s.tc.t_z.is_some() { 1 } else { s.link_timelock() };
    let mut chain = TcChain::new("ns0", s.tc.w, link_timelock, s.tc.m)?;
    chain.registration_window = s.tc.registration_window;
    if let Some(t_z) = s.tc.t_z {
        chain = chain.with_signature_delay(SignatureDelay { t_z, n: s.n });
    }
    chain.fund(&mut ledger);
    let signatures = s.tc.signatures.unwrap_or(s.n);
    ledger.advance(chain.required_delay(signatures)?)?;
    let link = chain.advance_link(&mut ledger, &[s.opener], signatures)?.remove(0)?;
    let dag = build_phase1(s.n, link.start_outputs[0])?;
    chain.open_tournament(&mut ledger, link.index, 1, &dag.anchor, &[s.opener])?.remove(0)?;
    let mut side = SideSystem::new(s.tc.decision_latency, s.tc.active_utxos);
    for p in 0..s.n {
        side.deposit(p, s.tc.apsb);
    }

    let opts = Phase1Options { reorder_seed: reorder_seed(s), opener: s.opener, slack: s.slack };
    let par = run_parallel_brackets(s.q, &dag, &strategies, &mut ledger, &opts, s.starting_balance, &s.bonds)?;
    let p1 = &par.phase1;
    violations.extend(p1.violations.iter().map(|v| format!("{v:?}")));
    let oaa = chain.detect_and_slash_oaa(&ledger, &dag, &mut side)?;

    let mut phase2 = None;
    if let (Some(w), false) = (p1.winner, s.phase1_only) {
        let c = s.challengers();
        let params = Phase2Params {
            n: s.n,
            max_challengers: c,
            slot_rounds: s.schedule.slot_rounds(c as u64, s.k1),
            challenger_pool: (0..s.n).collect(),
            asserter_bond: s.bonds.aosb,
            challenger_bond: s.bonds.challenger_aosb,
            cosig: s.contest == ContestMethod::DualProof,
        };
        let activations: Vec<Outpoint> = dag.win.iter().map(|t| t.outpoint(0)).collect();
        let p2dag = build_phase2(params.clone(), &activations)?;
        let policies: Vec<ChallengerPolicy> =
            params.challengers_for(w).iter().map(|&c| ChallengerPolicy::from(strategies[c as usize])).collect();
        let policy = AsserterPolicy { truthful: strategies[w as usize].asserts_truth(), refund: s.refund };
        let run = Phase2Run {
            dag: &p2dag,
            asserter: w,
            policy,
            challengers: &policies,
            bonds: s.bonds,
            starting_balance: s.starting_balance,
            reorder_seed: reorder_seed(s),
        };
        let o = run_phase2(&run, &mut ledger)?;
        let peak = |p| o.capital.peak_capital(p).unwrap_or(0);
        let conserved = o.capital.conserved();
        if !conserved {
            violations.push("CapitalNotConserved".into());
        }
        phase2 = Some(Phase2Report {
            asserter: w,
            truthful: policy.truthful,
            start: o.start.0,
            end: o.end.0,
            refund: o.refund,
            rounds_used: o.rounds_used,
            disputes_opened: o.disputes_opened,
            asserter_won: o.asserter_won,
            asserter_lost: o.asserter_lost,
            cancelled: o.cancelled,
            penalized: o.penalized,
            stuck: o.stuck.clone(),
            asserter_peak_capital: peak(w),
            capital: o.capital.parties.iter().map(|(&p, a)| (p, a.balance, peak(p))).collect(),
            conserved,
        });
    }
    if let Err(e) = ledger.audit() {
        violations.push(format!("Audit({e})"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let lottery = if s.lottery { Some(lottery_report(s, &strategies, &dag, &mut rng)) } else { None };
    let disable = s.disable.map(|m| disable_report(s, m, &p1.cases, &mut rng));
    let costs = match &s.cost {
        Some(c) => Some(cost_table(c, None)?),
        None => None,
    };

    let report = RunReport {
        scenario_digest: s.digest(),
        seed: s.seed,
        n: s.n,
        c: s.challengers(),
        q: s.q,
        strategies: strategies.iter().map(Strategy::label).collect(),
        tc: TcReport { link_timelock, link: link.index, opened_at: link.confirmed_at.0, events: chain.events.clone() },
        phase1: Phase1Report::new(p1, par.rounds, par.makespan),
        oaa,
        phase2,
        lottery,
        disable,
        contest: ContestReport {
            method: s.contest,
            verifiers_per_circuit: verifiers_per_circuit(s.contest == ContestMethod::DualProof),
        },
        costs,
        violations,
        trace_digest: ledger.trace_digest(),
    };
    Ok(RunArtifacts { report, trace_jsonl: ledger.trace_jsonl() })
}

fn lottery_report(s: &Scenario, strategies: &[Strategy], dag: &Phase1Dag, rng: &mut ChaCha8Rng) -> LotteryReport {
    let players: Vec<LotteryPlayer> = (0..s.n)
        .map(|i| {
            let seed = rng.next_u64();
            let reveal = strategies[i as usize].registers().then_some(seed);
            LotteryPlayer { id: i, seed, reveal }
        })
        .collect();
    LotteryReport {
        outcome: run_lottery(&players).expect("n >= 2"),
        lottery_templates: lottery_template_count(s.n).expect("n >= 2"),
        bracket_templates: dag.dag.len() as u64,
    }
}

fn disable_report(s: &Scenario, method: DisableMethod, cases: &[CaseRecord], rng: &mut ChaCha8Rng) -> DisableReport {
    let ids: Vec<OperatorId> = (0..s.n).collect();
    let mut verified = true;
    let mut trackers: Vec<DisableTracker> = ids
        .iter()
        .map(|&p| {
            let (c, sec) = commit(p, &ids, method, rng).expect("validated threshold");
            verified &= verify_setup(&c, &sec);
            DisableTracker::new(c, sec)
        })
        .collect();
    for case in cases {
        if let (CaseOutcome::Won(w), Some(a), Some(b)) = (case.outcome, case.alice, case.bob) {
            let loser = if w == a { b } else { a };
            let _ = trackers[loser as usize].record_loss(loser, w);
        }
    }
    let disabled = trackers.iter().filter(|t| t.derivable_secret().is_some()).map(|t| t.commitment.party).collect();
    DisableReport { method, setup_verified: verified, disabled }
}

/// A funding transaction whose single output anchors a standalone bracket.
pub fn standalone_phase1(n: u32) -> Result<(Phase1Dag, Arc<TemplateInstance>), DagError> {
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
    let dag = build_phase1(n, fund.outpoint(0))?;
    Ok((dag, fund))
}

/// Runs one bracket on a fresh ledger.
pub fn run_bracket(
    dag: &Phase1Dag,
    fund: &Arc<TemplateInstance>,
    strategies: &[Strategy],
    avp_correct: u64,
    reorder_seed: Option<u64>,
) -> Result<Phase1Outcome, LedgerError> {
    let mut l = Ledger::new(LedgerConfig { fee: 1, extra_confirmation_periods: 0 }).with_avp(Avp::new(avp_correct));
    l.fund(fund.clone());
    let opts = Phase1Options { reorder_seed, ..Default::default() };
    run_phase1(dag, strategies, &mut l, &opts)
}

/// Structural export of a standalone bracket, optionally with the Phase 2
/// templates for `n - 1` challengers under the doubling schedule.
pub fn export_bracket_dag(n: u32, with_phase2: bool) -> Result<DagExport, RunError> {
    let (p1, _) = standalone_phase1(n)?;
    let mut dag = p1.dag.clone();
    let mut notes = vec!["round timelocks apply uniformly, including round one".to_string()];
    if with_phase2 {
        let c = n - 1;
        let params = Phase2Params {
            n,
            max_challengers: c,
            slot_rounds: Phase2Schedule::MaintainOrDouble.slot_rounds(c as u64, 1),
            challenger_pool: (0..n).collect(),
            asserter_bond: BondParams::default().aosb,
            challenger_bond: BondParams::default().challenger_aosb,
            cosig: false,
        };
        let activations: Vec<Outpoint> = p1.win.iter().map(|t| t.outpoint(0)).collect();
        dag.extend(&build_phase2(params, &activations)?.dag);
        notes.push(format!("phase 2 with {c} challengers per asserter"));
    }
    let meta = ExportMeta { n, rounds: p1.rounds, link_timelock_applies_to_round_one: true, notes };
    Ok(DagExport::from_dag(&dag, meta))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumViolation {
    pub n: u32,
    pub strategies: Vec<String>,
    pub violation: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumSummary {
    pub points: u64,
    pub violations: Vec<EnumViolation>,
    /// (case kind, outcome kind, occurrences).
    pub coverage: Vec<(CaseKind, String, u64)>,
    /// Runs that produced a winner, per N.
    pub winners: Vec<(u32, u64)>,
}

impl EnumSummary {
    pub fn covered(&self, kind: CaseKind, outcome: &str) -> bool {
        self.coverage.iter().any(|(k, o, c)| *k == kind && o == outcome && *c > 0)
    }
}

pub fn outcome_tag(o: CaseOutcome) -> &'static str {
    match o {
        CaseOutcome::Won(_) => "Won",
        CaseOutcome::DualCut => "DualCut",
        CaseOutcome::Walkover(_) => "Walkover",
        CaseOutcome::NoProgress => "NoProgress",
        CaseOutcome::NoAction => "NoAction",
        CaseOutcome::Unresolved => "Unresolved",
    }
}

/// The `index`-th assignment over `alphabet` in base-|alphabet| order.
pub fn assignment(alphabet: &[Strategy], n: u32, mut index: u64) -> Vec<Strategy> {
    let k = alphabet.len() as u64;
    (0..n)
        .map(|_| {
            let s = alphabet[(index % k) as usize];
            index /= k;
            s
        })
        .collect()
}

struct PointResult {
    violations: Vec<Violation>,
    cases: Vec<(CaseKind, &'static str)>,
    winner: bool,
}

/// Runs every strategy assignment of `space`.
pub fn enumerate(space: &Space, cap: u64, jobs: Option<usize>) -> Result<EnumSummary, RunError> {
    let cap = space.cap.unwrap_or(cap).min(cap);
    let size = space.size();
    if size > cap {
        return Err(RunError::SpaceTooLarge { size, cap });
    }
    let mut summary = EnumSummary::default();
    let mut coverage: BTreeMap<(CaseKind, &'static str), u64> = BTreeMap::new();
    for &n in &space.n {
        let alphabet = space.alphabet_for(n);
        if alphabet.is_empty() {
            continue;
        }
        let (dag, fund) = standalone_phase1(n)?;
        let points: Vec<u64> = (0..(alphabet.len() as u64).pow(n)).collect();
        let results = run_batch(&points, jobs, |&i| {
            let strategies = assignment(&alphabet, n, i);
            run_bracket(&dag, &fund, &strategies, space.avp_correct, space.reorder_seed).map(|o| PointResult {
                violations: o.violations,
                cases: o.cases.iter().map(|c| (c.kind, outcome_tag(c.outcome))).collect(),
                winner: o.winner.is_some(),
            })
        });
        let mut winners = 0;
        for (i, r) in results.into_iter().enumerate() {
            let r = r?;
            summary.points += 1;
            winners += r.winner as u64;
            for c in r.cases {
                *coverage.entry(c).or_default() += 1;
            }
            for v in r.violations {
                summary.violations.push(EnumViolation {
                    n,
                    strategies: assignment(&alphabet, n, i as u64).iter().map(Strategy::label).collect(),
                    violation: format!("{v:?}"),
                });
            }
        }
        summary.winners.push((n, winners));
    }
    summary.coverage = coverage.into_iter().map(|((k, o), c)| (k, o.to_string(), c)).collect();
    Ok(summary)
}
