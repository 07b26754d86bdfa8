//! Tournament chain admission control and open-and-abandon handling.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{build_tc, DagError, Phase1Dag, TcDag};
use crate::ledger::{
    Ledger, LedgerError, OperatorId, Outpoint, Rejection, SettleStatus, TemplateInstance, Time, Witness,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TcError {
    #[error("advancing a link needs at least one signature")]
    NoSignatures,
    #[error("{got} signatures exceed the {n} operators")]
    TooManySignatures { got: u32, n: u32 },
    #[error("slot already taken")]
    SlotTaken,
    #[error("chain exhausted after {0} links")]
    Exhausted(usize),
    #[error("link {link} not confirmable before {ready}")]
    TimelockNotExpired { link: usize, ready: Time },
    #[error("registration window ends at {0}")]
    WindowNotElapsed(Time),
    #[error("tournament anchor not on the ledger")]
    NotOpened,
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TcEventKind {
    Advanced,
    Opened,
    OaaSlashed,
    Migrated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcEvent {
    pub period: u64,
    pub link: usize,
    pub event: TcEventKind,
    pub oid: OperatorId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcLink {
    /// One based; zero is TCStart.
    pub index: usize,
    pub opener: OperatorId,
    pub confirmed_at: Time,
    pub next_link_timelock: u64,
    pub start_outputs: Vec<Outpoint>,
    pub signatures: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAnchor {
    pub link: usize,
    pub output: u32,
    pub opener: OperatorId,
    pub at: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaaVerdict {
    pub link: usize,
    pub opener: OperatorId,
    pub window_end: Time,
    pub assertions_seen: u32,
    pub is_oaa: bool,
    pub slashed: u64,
    /// Remaining links cover the migration and decision latency.
    pub buffer_ok: bool,
}

/// Variable inter-link delay: with `i` of `n` signatures the next link
/// waits `ceil(t_z / i)` periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureDelay {
    pub t_z: u64,
    pub n: u32,
}

impl SignatureDelay {
    pub fn delay(&self, signatures: u32) -> Result<u64, TcError> {
        if signatures == 0 {
            return Err(TcError::NoSignatures);
        }
        if signatures > self.n {
            return Err(TcError::TooManySignatures { got: signatures, n: self.n });
        }
        Ok(self.t_z.div_ceil(signatures as u64))
    }
}

/// Side-system state holding persistent bonds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideSystem {
    pub apsb: BTreeMap<OperatorId, u64>,
    /// Operator removals and the period they take effect.
    pub removals: BTreeMap<OperatorId, Time>,
    /// (effective period, bridge UTXOs to move, source namespace).
    pub migrations: Vec<(Time, u64, String)>,
    pub decision_latency: u64,
    pub active_utxos: u64,
    pub slashed_total: u64,
}

impl SideSystem {
    pub fn new(decision_latency: u64, active_utxos: u64) -> Self {
        SideSystem { decision_latency, active_utxos, ..Default::default() }
    }

    pub fn deposit(&mut self, party: OperatorId, amount: u64) {
        *self.apsb.entry(party).or_default() += amount;
    }

    pub fn slash(&mut self, party: OperatorId) -> u64 {
        let s = self.apsb.insert(party, 0).unwrap_or(0);
        self.slashed_total += s;
        s
    }
}

#[derive(Clone, Debug)]
pub struct TcChain {
    /// Disjoint identifier space when several chains run in parallel.
    pub namespace: String,
    pub tc: TcDag,
    pub links: Vec<TcLink>,
    pub anchors: Vec<SlotAnchor>,
    pub events: Vec<TcEvent>,
    pub registration_window: u64,
    pub signature_delay: Option<SignatureDelay>,
    pub dead_links: Vec<usize>,
}

impl TcChain {
    /// `timelock` is the inter-link delay in periods.
    pub fn new(namespace: &str, links: u32, timelock: u64, starts_per_link: u32) -> Result<Self, TcError> {
        Ok(TcChain {
            namespace: namespace.to_string(),
            tc: build_tc(links, timelock, starts_per_link)?,
            links: Vec::new(),
            anchors: Vec::new(),
            events: Vec::new(),
            registration_window: 1,
            signature_delay: None,
            dead_links: Vec::new(),
        })
    }

    pub fn with_signature_delay(mut self, d: SignatureDelay) -> Self {
        self.signature_delay = Some(d);
        self
    }

    pub fn fund(&self, ledger: &mut Ledger) {
        ledger.fund(self.tc.start.clone());
    }

    fn last_time(&self, ledger: &Ledger) -> Time {
        match self.links.last() {
            Some(l) => l.confirmed_at,
            None => ledger.confirmation(&self.tc.start.tx_id).map(|c| c.at).unwrap_or(Time(0)),
        }
    }

    /// Periods the next link must wait after the previous one.
    pub fn required_delay(&self, signatures: u32) -> Result<u64, TcError> {
        match self.signature_delay {
            Some(d) => d.delay(signatures),
            None if signatures == 0 => Err(TcError::NoSignatures),
            None => Ok(self.tc.link_timelock),
        }
    }

    /// Confirms the next link, opened by the first of `openers` to land.
    /// The others get `SlotTaken` without paying a fee.
    pub fn advance_link(
        &mut self,
        ledger: &mut Ledger,
        openers: &[OperatorId],
        signatures: u32,
    ) -> Result<Vec<Result<TcLink, TcError>>, TcError> {
        let k = self.links.len();
        let Some(tx) = self.tc.links.get(k).cloned() else {
            return Err(TcError::Exhausted(k));
        };
        let delay = self.required_delay(signatures)?;
        let ready = self.last_time(ledger).plus(delay);
        if ledger.now() < ready || !ledger.can_confirm(&tx) {
            return Err(TcError::TimelockNotExpired { link: k + 1, ready });
        }
        let results = race(ledger, &tx, openers)?;
        let mut out = Vec::new();
        for (oid, won) in results {
            if won {
                let link = TcLink {
                    index: k + 1,
                    opener: oid,
                    confirmed_at: ledger.now(),
                    next_link_timelock: delay,
                    start_outputs: self.tc.start_outputs(k),
                    signatures,
                };
                self.events.push(TcEvent { period: ledger.now().0, link: k + 1, event: TcEventKind::Advanced, oid });
                self.links.push(link.clone());
                out.push(Ok(link));
            } else {
                out.push(Err(TcError::SlotTaken));
            }
        }
        Ok(out)
    }

    /// Binds a Phase 1 anchor to start output `output` of link `link`.
    pub fn open_tournament(
        &mut self,
        ledger: &mut Ledger,
        link: usize,
        output: u32,
        anchor: &Arc<TemplateInstance>,
        openers: &[OperatorId],
    ) -> Result<Vec<Result<SlotAnchor, TcError>>, TcError> {
        let start = self.tc.links[link - 1].outpoint(output);
        if !ledger.is_unspent(&start) {
            return Ok(openers.iter().map(|_| Err(TcError::SlotTaken)).collect());
        }
        let results = race(ledger, anchor, openers)?;
        let mut out = Vec::new();
        for (oid, won) in results {
            if won {
                let a = SlotAnchor { link, output, opener: oid, at: ledger.now() };
                self.events.push(TcEvent { period: ledger.now().0, link, event: TcEventKind::Opened, oid });
                self.anchors.push(a.clone());
                out.push(Ok(a));
            } else {
                out.push(Err(TcError::SlotTaken));
            }
        }
        Ok(out)
    }

    /// Checks the registration window of the tournament anchored by `dag`
    /// and slashes the opener when nobody asserted.
    pub fn detect_and_slash_oaa(
        &mut self,
        ledger: &Ledger,
        dag: &Phase1Dag,
        side: &mut SideSystem,
    ) -> Result<OaaVerdict, TcError> {
        let c = ledger.confirmation(&dag.anchor.tx_id).ok_or(TcError::NotOpened)?;
        let opened_at = c.at;
        let opener = c.by;
        let window_end = opened_at.plus(self.registration_window);
        if ledger.now() < window_end {
            return Err(TcError::WindowNotElapsed(window_end));
        }
        let link = self
            .anchors
            .iter()
            .find(|a| self.tc.links[a.link - 1].outpoint(a.output) == dag.slot)
            .map(|a| a.link)
            .unwrap_or(0);
        let assertions_seen = dag
            .enable
            .iter()
            .filter_map(|chain| ledger.confirmation(&chain[0].tx_id))
            .filter(|c| c.at < window_end)
            .count() as u32;
        let is_oaa = assertions_seen == 0;
        let mut slashed = 0;
        if is_oaa {
            slashed = side.slash(opener);
            let effective = ledger.now().plus(side.decision_latency);
            side.removals.insert(opener, effective);
            side.migrations.push((effective, side.active_utxos, self.namespace.clone()));
            self.dead_links.push(link);
            self.events.push(TcEvent { period: ledger.now().0, link, event: TcEventKind::OaaSlashed, oid: opener });
            self.events.push(TcEvent { period: effective.0, link, event: TcEventKind::Migrated, oid: opener });
        }
        let remaining = self.tc.links.len().saturating_sub(self.links.len()) as u64;
        Ok(OaaVerdict {
            link,
            opener,
            window_end,
            assertions_seen,
            is_oaa,
            slashed,
            buffer_ok: remaining >= self.required_buffer(side),
        })
    }

    /// Links that must remain to migrate every active bridge UTXO while
    /// further slots can still be opened during the decision latency.
    pub fn required_buffer(&self, side: &SideSystem) -> u64 {
        side.active_utxos + side.decision_latency.div_ceil(self.tc.link_timelock.max(1))
    }

    /// Tournaments opened in any window of `window` periods, maximized over
    /// window start.
    pub fn max_opens_in_window(&self, window: u64) -> usize {
        let times: Vec<u64> = self.anchors.iter().map(|a| a.at.0).collect();
        times.iter().map(|&s| times.iter().filter(|&&t| t >= s && t < s + window).count()).max().unwrap_or(0)
    }
}

/// Broadcasts `tx` once per contender in order and reports who confirmed it.
fn race(
    ledger: &mut Ledger,
    tx: &Arc<TemplateInstance>,
    who: &[OperatorId],
) -> Result<Vec<(OperatorId, bool)>, TcError> {
    let mut seqs = Vec::new();
    for &oid in who {
        let r = ledger.broadcast_with(tx.clone(), oid, Witness::Opener(oid))?;
        seqs.push((oid, r.seq));
    }
    let settled = ledger.settle();
    Ok(seqs
        .into_iter()
        .map(|(oid, seq)| {
            let won = settled.iter().any(|r| r.seq == seq && r.status == SettleStatus::Confirmed);
            debug_assert!(settled.iter().filter(|r| r.seq == seq).all(|r| r.status == SettleStatus::Confirmed
                || matches!(r.status, SettleStatus::Rejected(Rejection::Duplicate | Rejection::DoubleSpend))));
            (oid, won)
        })
        .collect())
}

/// Several independent chains with disjoint namespaces.
#[derive(Clone, Debug)]
pub struct TcNetwork {
    pub chains: Vec<TcChain>,
}

impl TcNetwork {
    pub fn new(k: u32, links: u32, timelock: u64, starts_per_link: u32) -> Result<Self, TcError> {
        let chains = (0..k)
            .map(|i| TcChain::new(&format!("ns{i}"), links, timelock, starts_per_link))
            .collect::<Result<_, _>>()?;
        Ok(TcNetwork { chains })
    }

    /// Admission bound over `periods`: `k * m` per link interval and chain.
    pub fn admission_bound(&self, periods: u64) -> u64 {
        self.chains.iter().map(|c| periods.div_ceil(c.tc.link_timelock) * c.tc.starts_per_link as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::build_phase1;
    use crate::ledger::LedgerConfig;

    fn ledger() -> Ledger {
        Ledger::new(LedgerConfig { fee: 1, extra_confirmation_periods: 0 })
    }

    #[test]
    fn signature_delays() {
        let d = SignatureDelay { t_z: 100, n: 10 };
        assert_eq!(d.delay(1).unwrap(), 100);
        assert_eq!(d.delay(10).unwrap(), 10);
        assert_eq!(d.delay(5).unwrap(), 20);
        assert_eq!(d.delay(3).unwrap(), 34);
        assert_eq!(d.delay(0), Err(TcError::NoSignatures));
        assert!(d.delay(11).is_err());
    }

    #[test]
    fn simultaneous_opens_one_wins_no_fee_for_loser() {
        let mut l = ledger();
        let mut c = TcChain::new("ns0", 2, 3, 1).unwrap();
        c.fund(&mut l);
        assert!(matches!(c.advance_link(&mut l, &[0], 1), Err(TcError::TimelockNotExpired { .. })));
        l.advance(3).unwrap();
        let r = c.advance_link(&mut l, &[4, 7], 1).unwrap();
        assert!(r[0].is_ok());
        assert_eq!(r[1], Err(TcError::SlotTaken));
        assert_eq!(l.fees_paid().get(&7), None);
        let p1 = build_phase1(2, c.links[0].start_outputs[0]).unwrap();
        let o = c.open_tournament(&mut l, 1, 1, &p1.anchor, &[1, 2]).unwrap();
        assert!(o[0].is_ok() && o[1].is_err());
        let again = c.open_tournament(&mut l, 1, 1, &p1.anchor, &[3]).unwrap();
        assert_eq!(again[0], Err(TcError::SlotTaken));
    }

    #[test]
    fn oaa_detected_only_without_assertions() {
        let mut l = ledger();
        let mut c = TcChain::new("ns0", 3, 2, 1).unwrap();
        c.fund(&mut l);
        l.advance(2).unwrap();
        c.advance_link(&mut l, &[5], 1).unwrap();
        let p1 = build_phase1(4, c.links[0].start_outputs[0]).unwrap();
        c.open_tournament(&mut l, 1, 1, &p1.anchor, &[5]).unwrap();
        let mut side = SideSystem::new(4, 1);
        for p in 0..6 {
            side.deposit(p, 100);
        }
        assert!(matches!(c.detect_and_slash_oaa(&l, &p1, &mut side), Err(TcError::WindowNotElapsed(_))));
        l.advance(1).unwrap();
        let v = c.detect_and_slash_oaa(&l, &p1, &mut side).unwrap();
        assert!(v.is_oaa);
        assert_eq!(v.slashed, 100);
        assert_eq!(side.apsb[&5], 0);
        assert!((0..5).all(|p| side.apsb[&p] == 100));
        assert_eq!(c.required_buffer(&side), 3);
    }
}
