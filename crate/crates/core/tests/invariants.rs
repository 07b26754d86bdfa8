use std::sync::Arc;

use battle_core::contest::{resolve_payouts, RevealSet, Timeouts};
use battle_core::dag::{build_phase1, build_phase2, Phase2Dag, Phase2Params};
use battle_core::disable::{decrypt, encrypt, reconstruct, split_secret};
use battle_core::economics::{rounds_needed, BondParams};
use battle_core::ledger::{
    Authorized, Avp, Ledger, LedgerConfig, Outpoint, Output, OutputRole, TemplateInstance, TemplateKind, Time,
};
use battle_core::runner::{run_bracket, standalone_phase1};
use battle_core::tc::TcChain;
use battle_core::tournament::{
    run_lottery, run_phase2, AsserterPolicy, ChallengerPolicy, LotteryPlayer, Phase2Run, Phase2Schedule, RefundPolicy,
    Strategy,
};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop_oneof![
        Just(Strategy::Honest),
        Just(Strategy::Abstain),
        (0u32..4).prop_map(Strategy::StallAfterRound),
        Just(Strategy::EquivocateAssertion),
        Just(Strategy::LateRegister),
    ]
}

fn adversary() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop_oneof![
        Just(Strategy::Abstain),
        (0u32..4).prop_map(Strategy::StallAfterRound),
        Just(Strategy::EquivocateAssertion),
        Just(Strategy::OpenAndAbandon),
    ]
}

fn challenger() -> impl proptest::strategy::Strategy<Value = ChallengerPolicy> {
    prop_oneof![
        Just(ChallengerPolicy::Honest),
        Just(ChallengerPolicy::Malicious),
        Just(ChallengerPolicy::RegisterOnly),
        Just(ChallengerPolicy::Abstain),
        Just(ChallengerPolicy::LateRegister),
    ]
}

fn phase2_fixture(c: u32) -> (Phase2Dag, Ledger) {
    let fund = Arc::new(TemplateInstance::new(
        TemplateKind::TCStart,
        vec![],
        vec![Output::new(OutputRole::Activation(0))],
        Authorized::Anyone,
        vec![],
        None,
        vec![c as u64],
        "fund".into(),
    ));
    let mut l = Ledger::new(LedgerConfig { fee: 1, extra_confirmation_periods: 0 }).with_avp(Avp::new(7));
    l.fund(fund.clone());
    let b = BondParams::default();
    let params = Phase2Params {
        n: 1,
        max_challengers: c,
        slot_rounds: Phase2Schedule::MaintainOrDouble.slot_rounds(c as u64, 1),
        challenger_pool: (1..=c).collect(),
        asserter_bond: b.aosb,
        challenger_bond: b.challenger_aosb,
        cosig: false,
    };
    (build_phase2(params, &[Outpoint { tx_id: fund.tx_id, index: 0 }]).unwrap(), l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_never_violates(
        n in 2u32..=8,
        pool in prop::collection::vec(strategy(), 8),
        reorder in prop::option::of(any::<u64>()),
    ) {
        let strategies = &pool[..n as usize];
        let (dag, fund) = standalone_phase1(n).unwrap();
        let o = run_bracket(&dag, &fund, strategies, 42, reorder).unwrap();
        prop_assert!(o.violations.is_empty(), "{:?}", o.violations);
        if let Some(w) = o.winner {
            prop_assert!(o.registered.contains(&w));
            prop_assert!(!o.eliminated.contains_key(&w));
        }
    }

    #[test]
    fn lone_honest_party_wins(
        n in 2u32..=8,
        h in 0u32..8,
        pool in prop::collection::vec(adversary(), 8),
        reorder in prop::option::of(any::<u64>()),
    ) {
        let h = h % n;
        let mut strategies = pool[..n as usize].to_vec();
        strategies[h as usize] = Strategy::Honest;
        let (dag, fund) = standalone_phase1(n).unwrap();
        let o = run_bracket(&dag, &fund, &strategies, 42, reorder).unwrap();
        prop_assert_eq!(o.winner, Some(h));
        // At most one dual cut per round from the honest party.
        prop_assert!(o.dispute_timeouts.iter().filter(|((p, _), _)| *p == h).all(|(_, &c)| c <= 1));
    }

    #[test]
    fn sub_period_censorship_changes_nothing(n in 2u32..=8, h in 0u32..8, c in 0u32..8, f in 0.0f64..0.99) {
        let (h, c) = (h % n, c % n);
        prop_assume!(h != c);
        let mut strategies = vec![Strategy::Abstain; n as usize];
        strategies[h as usize] = Strategy::Honest;
        let (dag, fund) = standalone_phase1(n).unwrap();
        strategies[c as usize] = Strategy::EquivocateAssertion;
        let plain = run_bracket(&dag, &fund, &strategies, 42, None).unwrap();
        strategies[c as usize] = Strategy::CensorBudget(f);
        let censored = run_bracket(&dag, &fund, &strategies, 42, None).unwrap();
        prop_assert_eq!(censored.winner, Some(h));
        prop_assert_eq!(censored.makespan, plain.makespan);
    }

    #[test]
    fn bracket_is_deterministic(n in 2u32..=8, pool in prop::collection::vec(strategy(), 8), seed in any::<u64>()) {
        let strategies = &pool[..n as usize];
        let (dag, fund) = standalone_phase1(n).unwrap();
        let a = run_bracket(&dag, &fund, strategies, 42, Some(seed)).unwrap();
        let b = run_bracket(&dag, &fund, strategies, 42, Some(seed)).unwrap();
        prop_assert_eq!(a.trace_digest, b.trace_digest);
        prop_assert_eq!(a.winner, b.winner);
    }

    #[test]
    fn phase2_conserves_capital(
        c in 1u32..=12,
        pool in prop::collection::vec(challenger(), 12),
        truthful in any::<bool>(),
        refund in prop_oneof![
            Just(RefundPolicy::CancelThenEarly),
            Just(RefundPolicy::WaitForRefund),
            Just(RefundPolicy::Premature),
        ],
        reorder in prop::option::of(any::<u64>()),
    ) {
        let (dag, mut l) = phase2_fixture(c);
        let run = Phase2Run {
            dag: &dag,
            asserter: 0,
            policy: AsserterPolicy { truthful, refund },
            challengers: &pool[..c as usize],
            bonds: BondParams::default(),
            starting_balance: 10_000,
            reorder_seed: reorder,
        };
        let o = run_phase2(&run, &mut l).unwrap();
        prop_assert!(o.capital.conserved());
        prop_assert!(o.capital.locked_never_negative());
        prop_assert!(l.audit().is_ok());
        if truthful && refund == RefundPolicy::CancelThenEarly {
            prop_assert_eq!(o.asserter_lost, 0);
        }
    }
}

proptest! {
    #[test]
    fn doubling_plan_shape(c in 0u64..=256, k1 in 1u64..=4) {
        let plan = Phase2Schedule::MaintainOrDouble.plan(c, k1);
        prop_assert_eq!(plan.iter().sum::<u64>(), c);
        let mut left = c;
        let mut prev = 0;
        for (r, &k) in plan.iter().enumerate() {
            let want = if r == 0 { k1.min(left) } else { (2 * prev).min(left) };
            prop_assert_eq!(k, want);
            left -= k;
            prev = k;
        }
        let rounds = Phase2Schedule::MaintainOrDouble.slot_rounds(c, k1);
        prop_assert_eq!(rounds.len() as u64, c);
        prop_assert!(rounds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn more_capital_never_needs_more_rounds(c in 1u64..=256, a in 15u64..2000, extra in 0u64..2000) {
        let b = BondParams::default();
        let s = Phase2Schedule::MaintainOrDouble;
        let r1 = rounds_needed(c, &s, a, &b).unwrap();
        let r2 = rounds_needed(c, &s, a + extra, &b).unwrap();
        prop_assert!(r2 <= r1);
    }

    #[test]
    fn payouts_total(bits in 0u8..16, tb in 0u8..4, da in 0u64..1000, db in 0u64..1000) {
        let r = RevealSet::from_bits(bits);
        let t = Timeouts { alice_silent: tb & 1 != 0, bob_silent: tb & 2 != 0 };
        match resolve_payouts(r, t) {
            Ok(p) => {
                prop_assert!(r.consistent());
                let (a, b, locked) = p.amounts(da, db);
                prop_assert_eq!(a + b + locked, da + db);
            }
            Err(_) => prop_assert!(!r.consistent()),
        }
    }

    #[test]
    fn shares_reconstruct_above_threshold(seed in any::<u64>(), secret in 0u64..(1 << 61) - 1, m in 1u32..=12, t in 1u32..=12, mask in any::<u32>()) {
        prop_assume!(t <= m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shares = split_secret(secret, t, m, &mut rng).unwrap();
        let pick: Vec<_> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| shares[i as usize]).collect();
        if pick.len() as u32 >= t {
            prop_assert_eq!(reconstruct(&pick), secret);
        }
    }

    #[test]
    fn cipher_roundtrip(key in any::<[u8; 32]>(), msg in prop::collection::vec(any::<u8>(), 0..200)) {
        prop_assert_eq!(decrypt(&key, &encrypt(&key, &msg)), msg);
    }

    #[test]
    fn lottery_winner_revealed_honestly(seeds in prop::collection::vec(any::<u64>(), 2..=16), cheat in any::<usize>()) {
        let mut players: Vec<_> = seeds.iter().enumerate().map(|(i, &s)| LotteryPlayer::honest(i as u32, s)).collect();
        let c = cheat % players.len();
        players[c].reveal = Some(players[c].seed ^ 1);
        let o = run_lottery(&players).unwrap();
        prop_assert_eq!(o.mismatches.len(), 1);
        prop_assert_ne!(o.winner, Some(c as u32));
    }

    #[test]
    fn epochs_are_five_periods(p in 0u64..1_000_000) {
        prop_assert_eq!(Time(p).epoch(), p / 5);
    }

    #[test]
    fn admission_rate_per_link(t in 1u64..12, m in 1u32..4, links in 1u32..6) {
        let mut l = Ledger::new(LedgerConfig { fee: 1, extra_confirmation_periods: 0 });
        let mut chain = TcChain::new("ns0", links, t, m).unwrap();
        chain.fund(&mut l);
        for k in 0..links as usize {
            l.advance(t).unwrap();
            chain.advance_link(&mut l, &[0], 1).unwrap();
            for (j, out) in chain.links[k].start_outputs.clone().into_iter().enumerate() {
                let dag = build_phase1(2, out).unwrap();
                chain.open_tournament(&mut l, k + 1, out.index, &dag.anchor, &[j as u32]).unwrap();
            }
        }
        prop_assert_eq!(chain.anchors.len(), (links * m) as usize);
        prop_assert!(chain.max_opens_in_window(t) <= m as usize);
    }
}
