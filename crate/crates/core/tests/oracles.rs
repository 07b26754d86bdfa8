//! Template and signature counts checked against hand enumeration.

use std::collections::BTreeMap;

use battle_core::dag::rounds_for;
use battle_core::ledger::TemplateKind;
use battle_core::runner::{export_bracket_dag, standalone_phase1};

/// Unordered pairs meeting in some match, and those meeting in round one.
fn pairs(n: u64) -> (u64, u64) {
    (n * (n - 1) / 2, n / 2)
}

/// Phase 1 by hand: anchor (signed by all), per party one registration,
/// R - 1 enable-round links and one win template (each single signer);
/// per pair eleven two-party dispute templates; per round-one pair two
/// extra absence cuts.
fn phase1_oracle(n: u64) -> (u64, u64) {
    let r = rounds_for(n as u32) as u64;
    let (p, p1) = pairs(n);
    let templates = 1 + n * (1 + (r - 1) + 1) + 11 * p + 2 * p1;
    let signatures = n + n * (r + 1) + 22 * p + 4 * p1;
    (templates, signatures)
}

/// Phase 2 with C = N - 1: per asserter five single-signer refund-path
/// templates, per slot eighteen two-party templates.
fn phase2_oracle(n: u64) -> (u64, u64) {
    let c = n - 1;
    (n * (5 + 18 * c), n * (5 + 36 * c))
}

#[test]
fn phase1_counts_small_n() {
    // Written out for N = 2 and N = 4 without the helper.
    let expected = [(2u32, 18u64, 32u64), (4, 83, 156)];
    for (n, t, s) in expected {
        let (d, _) = standalone_phase1(n).unwrap();
        let st = d.dag.stats(n);
        assert_eq!((st.template_count, st.signature_count), (t, s), "n = {n}");
    }
    for n in [2u32, 3, 4, 5, 8, 13] {
        let (d, _) = standalone_phase1(n).unwrap();
        let st = d.dag.stats(n);
        assert_eq!((st.template_count, st.signature_count), phase1_oracle(n as u64), "n = {n}");
    }
}

#[test]
fn full_dag_counts_small_n() {
    let expected = [(2u32, 64u64, 114u64), (4, 319, 608)];
    for (n, t, s) in expected {
        let e = export_bracket_dag(n, true).unwrap();
        let sigs: u64 = e.nodes.iter().map(|x| x.signers.len() as u64).sum();
        assert_eq!((e.nodes.len() as u64, sigs), (t, s), "n = {n}");
    }
    for n in [2u64, 3, 4, 8] {
        let e = export_bracket_dag(n as u32, true).unwrap();
        let sigs: u64 = e.nodes.iter().map(|x| x.signers.len() as u64).sum();
        let (t1, s1) = phase1_oracle(n);
        let (t2, s2) = phase2_oracle(n);
        assert_eq!((e.nodes.len() as u64, sigs), (t1 + t2, s1 + s2), "n = {n}");
    }
}

#[test]
fn per_kind_counts_n4() {
    let (d, _) = standalone_phase1(4).unwrap();
    let mut kinds: BTreeMap<String, u64> = BTreeMap::new();
    for t in d.dag.templates() {
        *kinds.entry(format!("{:?}", t.kind)).or_default() += 1;
    }
    // Six pairs: four with the two round-one players fixed, plus the
    // four cross pairings of the final.
    assert_eq!(kinds["BobChallenge"], 6);
    assert_eq!(kinds["DisputeTimeout"], 6);
    assert_eq!(kinds["NoBobChallenge"], 6 + 2);
    assert_eq!(kinds["AsserterTimeout"], 2);
    assert_eq!(kinds["RegistrationPhase1"], 4);
    assert_eq!(kinds["EnableRound"], 4);
    assert_eq!(kinds["WinPhase1"], 4);
    assert_eq!(kinds["StartPhase1"], 1);
    let win_kinds = d.dag.templates().iter().filter(|t| t.kind == TemplateKind::WinPhase1).count();
    assert_eq!(win_kinds, 4);
}

#[test]
fn every_pair_meets_exactly_once() {
    for n in [2u32, 3, 5, 8, 11] {
        let (d, _) = standalone_phase1(n).unwrap();
        for a in 0..n {
            for b in (a + 1)..n {
                let meets = (1..=d.rounds).filter(|&r| d.pair_of(r, a, b).is_some()).count();
                assert_eq!(meets, 1, "n = {n}, pair ({a}, {b})");
                let r = 32 - (a ^ b).leading_zeros();
                assert!(d.pair_of(r, a, b).is_some());
            }
        }
    }
}

#[test]
fn dags_are_acyclic_with_external_funding_only() {
    for n in [2u32, 4, 7] {
        let (d, fund) = standalone_phase1(n).unwrap();
        d.dag.check_acyclic(&[fund.tx_id]).unwrap();
    }
}
