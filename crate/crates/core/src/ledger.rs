//! Abstract UTXO ledger with discrete time measured in timelock periods.
//!
//! Broadcasts queue during a period and confirm when [`Ledger::settle`] runs.
//! Within one period the confirmation order is FIFO (queue sequence) with the
//! transaction id as tie-break; censorship directives push a broadcaster's
//! transactions later in that order but never across a period boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type OperatorId = u32;

/// Number of timelock periods in one epoch.
pub const PERIODS_PER_EPOCH: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Time(pub u64);

impl Time {
    pub fn periods(self) -> u64 {
        self.0
    }

    pub fn epoch(self) -> u64 {
        self.0 / PERIODS_PER_EPOCH
    }

    pub fn plus(self, periods: u64) -> Time {
        Time(self.0 + periods)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub [u8; 32]);

impl TxId {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.short())
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Outpoint {
    pub tx_id: TxId,
    pub index: u32,
}

impl fmt::Display for Outpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tx_id.short(), self.index)
    }
}

/// Steps of a two-party dispute component that have no dedicated name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlexStep {
    BondBob,
    BondAlice,
    ResolveAlice,
    ResolveBob,
    TimeoutBobBond,
    TimeoutAliceBond,
    TimeoutAliceInput,
    TimeoutBobInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    TCStart,
    OpenTournament,
    StartPhase1,
    RegistrationPhase1,
    EnableRound,
    BobChallenge,
    NoBobChallenge,
    AsserterTimeout,
    DisputeTimeout,
    WinPhase1,
    StartTournament,
    RegInPhase2,
    RegTimeout,
    TryEarlyRefund,
    EarlyRefund,
    StillOpen,
    Refund,
    AliceInput,
    BobInput,
    AliceInputCoSig,
    AliceWasDisabled,
    BobWasDisabled,
    FlexInternal(FlexStep),
}

impl TemplateKind {
    pub fn tag(&self) -> u16 {
        use TemplateKind::*;
        match self {
            TCStart => 1,
            OpenTournament => 2,
            StartPhase1 => 3,
            RegistrationPhase1 => 4,
            EnableRound => 5,
            BobChallenge => 6,
            NoBobChallenge => 7,
            AsserterTimeout => 8,
            DisputeTimeout => 9,
            WinPhase1 => 10,
            StartTournament => 11,
            RegInPhase2 => 12,
            RegTimeout => 13,
            TryEarlyRefund => 14,
            EarlyRefund => 15,
            StillOpen => 16,
            Refund => 17,
            AliceInput => 18,
            BobInput => 19,
            AliceInputCoSig => 20,
            AliceWasDisabled => 21,
            BobWasDisabled => 22,
            FlexInternal(step) => 64 + *step as u16,
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateKind::FlexInternal(step) => write!(f, "FlexInternal({step:?})"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// Named role of an output inside the dispute DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutputRole {
    Funding,
    NextLink,
    StartPhase1,
    RegSeed(OperatorId),
    Enabler { party: OperatorId, round: u32 },
    NextEnabler { party: OperatorId, round: u32 },
    Selector { round: u32, index: u32 },
    Activation(OperatorId),
    ReimburseEnabler,
    ReimbursementTried,
    RegSlot(u32),
    BobEnabler(u32),
    DisputeState(u8),
    Bond(OperatorId),
    Payout(OperatorId),
}

impl OutputRole {
    pub fn tag(&self) -> u32 {
        use OutputRole::*;
        match *self {
            Funding => 1,
            NextLink => 2,
            StartPhase1 => 3,
            RegSeed(p) => 0x0100_0000 | p,
            Enabler { party, round } => 0x0200_0000 | (round << 20) | party,
            NextEnabler { party, round } => 0x0300_0000 | (round << 20) | party,
            Selector { round, index } => 0x0400_0000 | (round << 20) | index,
            Activation(p) => 0x0500_0000 | p,
            ReimburseEnabler => 6,
            ReimbursementTried => 7,
            RegSlot(j) => 0x0800_0000 | j,
            BobEnabler(j) => 0x0900_0000 | j,
            DisputeState(s) => 0x0a00_0000 | s as u32,
            Bond(p) => 0x0b00_0000 | p,
            Payout(p) => 0x0c00_0000 | p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Output {
    pub role: OutputRole,
    pub value: u64,
    pub relative_timelock: u64,
    /// Operators allowed to consume this output; empty means unrestricted.
    pub spenders: BTreeSet<OperatorId>,
}

impl Output {
    pub fn new(role: OutputRole) -> Self {
        Output { role, value: 0, relative_timelock: 0, spenders: BTreeSet::new() }
    }

    pub fn with_value(mut self, value: u64) -> Self {
        self.value = value;
        self
    }

    pub fn with_timelock(mut self, periods: u64) -> Self {
        self.relative_timelock = periods;
        self
    }
}

/// One spent input with the relative timelock its spend path requires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub outpoint: Outpoint,
    pub relative_timelock: u64,
}

impl InputRef {
    pub fn new(outpoint: Outpoint) -> Self {
        InputRef { outpoint, relative_timelock: 0 }
    }

    pub fn after(outpoint: Outpoint, periods: u64) -> Self {
        InputRef { outpoint, relative_timelock: periods }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Authorized {
    Anyone,
    Only(BTreeSet<OperatorId>),
}

impl Authorized {
    pub fn one(id: OperatorId) -> Self {
        Authorized::Only([id].into_iter().collect())
    }

    pub fn permits(&self, id: OperatorId) -> bool {
        match self {
            Authorized::Anyone => true,
            Authorized::Only(set) => set.contains(&id),
        }
    }
}

/// Extra validity condition checked at confirmation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guard {
    /// The assertion bound in the witness of `source` must have this verdict.
    AvpVerdict { source: TxId, expect: bool },
    /// The operator's disable secret must be public.
    Disabled(OperatorId),
}

/// Witness data attached to a broadcast. Not part of the transaction id.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    #[default]
    None,
    Assertion(u64),
    Opener(OperatorId),
}

/// A fully bound pre-signed transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateInstance {
    pub kind: TemplateKind,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<Output>,
    pub authorized: Authorized,
    pub signers: Vec<OperatorId>,
    pub guard: Option<Guard>,
    /// Parameter bindings (slot, round, party ids...) hashed into the id.
    pub bindings: Vec<u64>,
    /// Human readable structural label, stable across slots.
    pub label: String,
    pub tx_id: TxId,
}

impl TemplateInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: TemplateKind,
        inputs: Vec<InputRef>,
        outputs: Vec<Output>,
        authorized: Authorized,
        signers: Vec<OperatorId>,
        guard: Option<Guard>,
        bindings: Vec<u64>,
        label: String,
    ) -> Self {
        let tx_id = content_hash(kind, &inputs, &outputs, &bindings);
        TemplateInstance { kind, inputs, outputs, authorized, signers, guard, bindings, label, tx_id }
    }

    pub fn outpoint(&self, index: u32) -> Outpoint {
        debug_assert!((index as usize) < self.outputs.len());
        Outpoint { tx_id: self.tx_id, index }
    }

    /// Index of the first output with the given role.
    pub fn output_index(&self, role: OutputRole) -> Option<u32> {
        self.outputs.iter().position(|o| o.role == role).map(|i| i as u32)
    }

    pub fn outpoint_of(&self, role: OutputRole) -> Outpoint {
        let index = self.output_index(role).unwrap_or_else(|| panic!("{} has no output {role:?}", self.label));
        self.outpoint(index)
    }
}

/// Content hash over kind, ordered inputs, ordered outputs and bindings.
pub fn content_hash(kind: TemplateKind, inputs: &[InputRef], outputs: &[Output], bindings: &[u64]) -> TxId {
    let mut h = Sha256::new();
    h.update(kind.tag().to_le_bytes());
    h.update((inputs.len() as u32).to_le_bytes());
    for i in inputs {
        h.update(i.outpoint.tx_id.0);
        h.update(i.outpoint.index.to_le_bytes());
        h.update(i.relative_timelock.to_le_bytes());
    }
    h.update((outputs.len() as u32).to_le_bytes());
    for o in outputs {
        h.update(o.role.tag().to_le_bytes());
        h.update(o.value.to_le_bytes());
        h.update(o.relative_timelock.to_le_bytes());
        h.update((o.spenders.len() as u32).to_le_bytes());
        for s in &o.spenders {
            h.update(s.to_le_bytes());
        }
    }
    for b in bindings {
        h.update(b.to_le_bytes());
    }
    TxId(h.finalize().into())
}

/// Deterministic assertion verification predicate: an assertion is correct
/// iff it equals the configured correct value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Avp {
    pub correct: u64,
    /// Evaluation bound in periods.
    pub bound: u64,
}

impl Avp {
    pub fn new(correct: u64) -> Self {
        Avp { correct, bound: 0 }
    }

    pub fn verdict(&self, assertion: u64) -> bool {
        assertion == self.correct
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("operator {by} is not authorized to broadcast {label}")]
    UnauthorizedBroadcaster { by: OperatorId, label: String },
    #[error("input {0} does not exist")]
    MissingInput(Outpoint),
    #[error("timelock not expired for input {0}")]
    TimelockNotExpired(Outpoint),
    #[error("censorship delay {0} must be strictly below one period")]
    CensorshipTooLong(f64),
    #[error("invalid permutation of {queued} queued broadcasts")]
    InvalidPermutation { queued: usize },
    #[error("advance requires at least one period")]
    ZeroAdvance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    DoubleSpend,
    Duplicate,
    GuardFailed,
    MissingInput,
    SpenderNotAllowed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettleStatus {
    Confirmed,
    Rejected(Rejection),
    /// Kept pending; retried in later periods.
    Waiting,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettleResult {
    pub seq: u64,
    pub tx_id: TxId,
    pub label: String,
    pub by: OperatorId,
    pub status: SettleStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BroadcastReceipt {
    pub seq: u64,
    pub tx_id: TxId,
    pub queued_at: Time,
}

#[derive(Clone, Debug)]
pub struct Utxo {
    pub output: Output,
    pub confirmed_at: Time,
}

#[derive(Clone, Debug)]
pub struct ConfirmedTx {
    pub at: Time,
    pub by: OperatorId,
    pub witness: Witness,
    pub tx: Arc<TemplateInstance>,
}

#[derive(Clone, Debug)]
struct Pending {
    seq: u64,
    queued_at: Time,
    /// Censorship delay in millionths of a period.
    delay_ppm: u32,
    by: OperatorId,
    witness: Witness,
    tx: Arc<TemplateInstance>,
}

/// Delays every broadcast by `target` within the period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CensorDirective {
    pub target: OperatorId,
    pub delay: f64,
}

/// One line of the exported trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub period: u64,
    pub tx_id: String,
    pub kind: String,
    pub label: String,
    pub broadcaster: OperatorId,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub fee: u64,
    /// Added to every non-zero relative timelock.
    pub extra_confirmation_periods: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    now: Time,
    config: LedgerConfig,
    utxos: BTreeMap<Outpoint, Utxo>,
    spent_by: HashMap<Outpoint, TxId>,
    confirmed: Vec<ConfirmedTx>,
    confirmed_index: HashMap<TxId, usize>,
    pending: Vec<Pending>,
    next_seq: u64,
    avp: Option<Avp>,
    disabled: BTreeSet<OperatorId>,
    censorship: Vec<CensorDirective>,
    fees_paid: BTreeMap<OperatorId, u64>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Ledger { config, ..Default::default() }
    }

    pub fn with_avp(mut self, avp: Avp) -> Self {
        self.avp = Some(avp);
        self
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn config(&self) -> LedgerConfig {
        self.config
    }

    pub fn avp(&self) -> Option<Avp> {
        self.avp
    }

    /// Creates an output from outside the modelled system.
    pub fn fund(&mut self, tx: Arc<TemplateInstance>) {
        for (i, out) in tx.outputs.iter().enumerate() {
            let op = Outpoint { tx_id: tx.tx_id, index: i as u32 };
            self.utxos.insert(op, Utxo { output: out.clone(), confirmed_at: self.now });
        }
        let idx = self.confirmed.len();
        self.confirmed_index.insert(tx.tx_id, idx);
        self.confirmed.push(ConfirmedTx { at: self.now, by: OperatorId::MAX, witness: Witness::None, tx });
    }

    pub fn add_censorship(&mut self, directive: CensorDirective) -> Result<(), LedgerError> {
        if !(0.0..1.0).contains(&directive.delay) {
            return Err(LedgerError::CensorshipTooLong(directive.delay));
        }
        self.censorship.push(directive);
        Ok(())
    }

    pub fn reveal_disable(&mut self, party: OperatorId) {
        self.disabled.insert(party);
    }

    pub fn is_disabled(&self, party: OperatorId) -> bool {
        self.disabled.contains(&party)
    }

    pub fn utxo(&self, op: &Outpoint) -> Option<&Utxo> {
        self.utxos.get(op)
    }

    pub fn is_unspent(&self, op: &Outpoint) -> bool {
        self.utxos.contains_key(op)
    }

    pub fn spender_of(&self, op: &Outpoint) -> Option<TxId> {
        self.spent_by.get(op).copied()
    }

    pub fn utxo_set(&self) -> &BTreeMap<Outpoint, Utxo> {
        &self.utxos
    }

    pub fn confirmed(&self) -> &[ConfirmedTx] {
        &self.confirmed
    }

    pub fn confirmation(&self, tx_id: &TxId) -> Option<&ConfirmedTx> {
        self.confirmed_index.get(tx_id).map(|&i| &self.confirmed[i])
    }

    pub fn is_confirmed(&self, tx_id: &TxId) -> bool {
        self.confirmed_index.contains_key(tx_id)
    }

    pub fn is_pending(&self, tx_id: &TxId) -> bool {
        self.pending.iter().any(|p| p.tx.tx_id == *tx_id)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn fees_paid(&self) -> &BTreeMap<OperatorId, u64> {
        &self.fees_paid
    }

    fn effective_timelock(&self, tl: u64) -> u64 {
        if tl == 0 {
            0
        } else {
            tl + self.config.extra_confirmation_periods
        }
    }

    /// Whether every input of `tx` exists and its timelock has expired at `now`.
    pub fn timelocks_satisfied(&self, tx: &TemplateInstance) -> bool {
        tx.inputs.iter().all(|i| match self.utxos.get(&i.outpoint) {
            Some(u) => {
                let tl = self.effective_timelock(i.relative_timelock.max(u.output.relative_timelock));
                self.now.0 >= u.confirmed_at.0 + tl
            }
            None => false,
        })
    }

    /// Whether `tx` would confirm if settled now (ignoring other pending spends).
    pub fn can_confirm(&self, tx: &TemplateInstance) -> bool {
        !self.is_confirmed(&tx.tx_id) && self.timelocks_satisfied(tx) && self.guard_ok(tx)
    }

    fn guard_ok(&self, tx: &TemplateInstance) -> bool {
        match tx.guard {
            None => true,
            Some(Guard::Disabled(p)) => self.disabled.contains(&p),
            Some(Guard::AvpVerdict { source, expect }) => {
                let (Some(avp), Some(c)) = (self.avp, self.confirmation(&source)) else {
                    return false;
                };
                match c.witness {
                    Witness::Assertion(a) => avp.verdict(a) == expect,
                    _ => false,
                }
            }
        }
    }

    pub fn broadcast(&mut self, tx: Arc<TemplateInstance>, by: OperatorId) -> Result<BroadcastReceipt, LedgerError> {
        self.broadcast_with(tx, by, Witness::None)
    }

    pub fn broadcast_with(
        &mut self,
        tx: Arc<TemplateInstance>,
        by: OperatorId,
        witness: Witness,
    ) -> Result<BroadcastReceipt, LedgerError> {
        if !tx.authorized.permits(by) {
            return Err(LedgerError::UnauthorizedBroadcaster { by, label: tx.label.clone() });
        }
        for input in &tx.inputs {
            let exists = self.utxos.contains_key(&input.outpoint)
                || self.pending.iter().any(|p| {
                    p.tx.tx_id == input.outpoint.tx_id && (input.outpoint.index as usize) < p.tx.outputs.len()
                });
            if !exists {
                return Err(LedgerError::MissingInput(input.outpoint));
            }
        }
        let delay = self.censorship.iter().filter(|d| d.target == by).map(|d| d.delay).fold(0.0f64, f64::max);
        let seq = self.next_seq;
        self.next_seq += 1;
        let receipt = BroadcastReceipt { seq, tx_id: tx.tx_id, queued_at: self.now };
        self.pending.push(Pending { seq, queued_at: self.now, delay_ppm: (delay * 1e6) as u32, by, witness, tx });
        Ok(receipt)
    }

    /// Permutes the broadcasts queued in the current period.
    /// `permutation[k]` is the old position of the entry placed at position `k`.
    pub fn reorder_within_period(&mut self, permutation: &[usize]) -> Result<(), LedgerError> {
        let current: Vec<usize> = (0..self.pending.len()).filter(|&i| self.pending[i].queued_at == self.now).collect();
        let n = current.len();
        let mut seen = vec![false; n];
        if permutation.len() != n || permutation.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(LedgerError::InvalidPermutation { queued: n });
        }
        let mut seqs: Vec<u64> = current.iter().map(|&i| self.pending[i].seq).collect();
        seqs.sort_unstable();
        let olds: Vec<usize> = permutation.iter().map(|&p| current[p]).collect();
        for (k, old) in olds.into_iter().enumerate() {
            self.pending[old].seq = seqs[k];
        }
        Ok(())
    }

    pub fn queued_this_period(&self) -> usize {
        self.pending.iter().filter(|p| p.queued_at == self.now).count()
    }

    /// Confirms every pending broadcast that is valid at the current period.
    pub fn settle(&mut self) -> Vec<SettleResult> {
        let mut queue = std::mem::take(&mut self.pending);
        queue.sort_by_key(|a| (a.delay_ppm, a.seq, a.tx.tx_id));
        let mut results = Vec::new();
        let mut waiting: Vec<Pending> = Vec::new();
        // Passes repeat so children queued before a delayed parent still confirm.
        loop {
            let mut progressed = false;
            let mut still: Vec<Pending> = Vec::new();
            for p in queue {
                match self.try_confirm(&p) {
                    Ok(()) => {
                        progressed = true;
                        results.push(self.result(&p, SettleStatus::Confirmed));
                    }
                    Err(Some(rej)) => {
                        results.push(self.result(&p, SettleStatus::Rejected(rej)));
                    }
                    Err(None) => still.push(p),
                }
            }
            queue = still;
            if !progressed || queue.is_empty() {
                break;
            }
        }
        for p in queue {
            results.push(self.result(&p, SettleStatus::Waiting));
            waiting.push(p);
        }
        self.pending = waiting;
        results
    }

    fn result(&self, p: &Pending, status: SettleStatus) -> SettleResult {
        SettleResult { seq: p.seq, tx_id: p.tx.tx_id, label: p.tx.label.clone(), by: p.by, status }
    }

    /// `Err(None)` keeps the broadcast pending.
    fn try_confirm(&mut self, p: &Pending) -> Result<(), Option<Rejection>> {
        let tx = &p.tx;
        if self.confirmed_index.contains_key(&tx.tx_id) {
            return Err(Some(Rejection::Duplicate));
        }
        for input in &tx.inputs {
            match self.utxos.get(&input.outpoint) {
                Some(u) => {
                    if !u.output.spenders.is_empty() && !u.output.spenders.contains(&p.by) {
                        return Err(Some(Rejection::SpenderNotAllowed));
                    }
                }
                None => {
                    if self.spent_by.contains_key(&input.outpoint) {
                        return Err(Some(Rejection::DoubleSpend));
                    }
                    // Parent may still be pending.
                    if self.confirmed_index.contains_key(&input.outpoint.tx_id) {
                        return Err(Some(Rejection::MissingInput));
                    }
                    return Err(None);
                }
            }
        }
        if !self.timelocks_satisfied(tx) {
            return Err(None);
        }
        if !self.guard_ok(tx) {
            return Err(Some(Rejection::GuardFailed));
        }
        for input in &tx.inputs {
            self.utxos.remove(&input.outpoint);
            self.spent_by.insert(input.outpoint, tx.tx_id);
        }
        for (i, out) in tx.outputs.iter().enumerate() {
            let op = Outpoint { tx_id: tx.tx_id, index: i as u32 };
            self.utxos.insert(op, Utxo { output: out.clone(), confirmed_at: self.now });
        }
        *self.fees_paid.entry(p.by).or_default() += self.config.fee;
        let idx = self.confirmed.len();
        self.confirmed_index.insert(tx.tx_id, idx);
        self.confirmed.push(ConfirmedTx { at: self.now, by: p.by, witness: p.witness, tx: tx.clone() });
        Ok(())
    }

    /// Settles the current period, then steps `periods` periods settling each.
    pub fn advance(&mut self, periods: u64) -> Result<Vec<SettleResult>, LedgerError> {
        if periods == 0 {
            return Err(LedgerError::ZeroAdvance);
        }
        let mut out = self.settle();
        for _ in 0..periods {
            self.now = self.now.plus(1);
            out.extend(self.settle());
        }
        Ok(out)
    }

    /// Moves to the next period without settling the current one.
    pub fn tick(&mut self) {
        self.now = self.now.plus(1);
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.confirmed
            .iter()
            .map(|c| TraceRecord {
                period: c.at.0,
                tx_id: c.tx.tx_id.to_string(),
                kind: c.tx.kind.to_string(),
                label: c.tx.label.clone(),
                broadcaster: c.by,
                inputs: c.tx.inputs.iter().map(|i| i.outpoint.to_string()).collect(),
                outputs: c.tx.outputs.iter().map(|o| format!("{:?}={}", o.role, o.value)).collect(),
            })
            .collect()
    }

    /// Line-delimited JSON export of the confirmed trace.
    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.trace() {
            s.push_str(&serde_json::to_string(&r).expect("trace record serializes"));
            s.push('\n');
        }
        s
    }

    /// SHA-256 over the exported trace.
    pub fn trace_digest(&self) -> String {
        hex::encode(Sha256::digest(self.trace_jsonl().as_bytes()))
    }

    /// Every outpoint spent at most once and every timelock honoured.
    pub fn audit(&self) -> Result<(), String> {
        let mut spent: HashSet<Outpoint> = HashSet::new();
        let mut created: HashMap<Outpoint, (Time, u64)> = HashMap::new();
        for c in &self.confirmed {
            for i in &c.tx.inputs {
                if !spent.insert(i.outpoint) {
                    return Err(format!("{} spent twice", i.outpoint));
                }
                let Some(&(at, out_tl)) = created.get(&i.outpoint) else {
                    return Err(format!("{} spends unknown {}", c.tx.label, i.outpoint));
                };
                let tl = self.effective_timelock(i.relative_timelock.max(out_tl));
                if c.at.0 < at.0 + tl {
                    return Err(format!("{} confirmed at {} before timelock", c.tx.label, c.at));
                }
            }
            for (k, o) in c.tx.outputs.iter().enumerate() {
                created.insert(Outpoint { tx_id: c.tx.tx_id, index: k as u32 }, (c.at, o.relative_timelock));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn funding(tag: u64) -> Arc<TemplateInstance> {
        Arc::new(TemplateInstance::new(
            TemplateKind::TCStart,
            vec![],
            vec![Output::new(OutputRole::Funding), Output::new(OutputRole::Funding)],
            Authorized::Anyone,
            vec![],
            None,
            vec![tag],
            format!("fund{tag}"),
        ))
    }

    fn spend(parent: &TemplateInstance, index: u32, tl: u64, tag: u64) -> Arc<TemplateInstance> {
        Arc::new(TemplateInstance::new(
            TemplateKind::EnableRound,
            vec![InputRef::after(parent.outpoint(index), tl)],
            vec![Output::new(OutputRole::Funding)],
            Authorized::Anyone,
            vec![],
            None,
            vec![tag],
            format!("spend{tag}"),
        ))
    }

    #[test]
    fn immediate_inclusion() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let s = spend(&f, 0, 0, 1);
        l.broadcast(s.clone(), 0).unwrap();
        l.settle();
        assert_eq!(l.confirmation(&s.tx_id).unwrap().at, Time(0));
    }

    #[test]
    fn unauthorized_rejected() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let mut t = (*spend(&f, 0, 0, 1)).clone();
        t.authorized = Authorized::one(3);
        assert!(matches!(l.broadcast(Arc::new(t), 4), Err(LedgerError::UnauthorizedBroadcaster { .. })));
    }

    #[test]
    fn missing_input() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        let s = spend(&f, 0, 0, 1);
        assert!(matches!(l.broadcast(s, 0), Err(LedgerError::MissingInput(_))));
    }

    #[test]
    fn child_of_unconfirmed_parent_same_period() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let a = spend(&f, 0, 0, 1);
        let b = spend(&a, 0, 0, 2);
        l.add_censorship(CensorDirective { target: 7, delay: 0.5 }).unwrap();
        l.broadcast(a.clone(), 7).unwrap();
        l.broadcast(b.clone(), 0).unwrap();
        l.settle();
        assert!(l.is_confirmed(&a.tx_id) && l.is_confirmed(&b.tx_id));
        assert_eq!(l.confirmation(&b.tx_id).unwrap().at, Time(0));
    }

    #[test]
    fn censorship_reorders_within_period() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let a = spend(&f, 0, 0, 1);
        let b = spend(&f, 0, 0, 2);
        l.add_censorship(CensorDirective { target: 1, delay: 0.5 }).unwrap();
        l.broadcast(a.clone(), 1).unwrap();
        l.broadcast(b.clone(), 2).unwrap();
        l.settle();
        // Censored broadcast loses the conflict but still within the period.
        assert!(l.is_confirmed(&b.tx_id));
        assert!(!l.is_confirmed(&a.tx_id));
    }

    #[test]
    fn censorship_capped_below_one_period() {
        let mut l = Ledger::new(LedgerConfig::default());
        assert!(l.add_censorship(CensorDirective { target: 1, delay: 1.0 }).is_err());
    }

    #[test]
    fn conflicting_spends_exactly_one_confirms() {
        let mut l = Ledger::new(LedgerConfig { fee: 1, ..Default::default() });
        let f = funding(1);
        l.fund(f.clone());
        let a = spend(&f, 0, 0, 1);
        let b = spend(&f, 0, 0, 2);
        l.broadcast(a.clone(), 1).unwrap();
        l.broadcast(b.clone(), 2).unwrap();
        let res = l.settle();
        assert_eq!(res.iter().filter(|r| r.status == SettleStatus::Confirmed).count(), 1);
        assert_eq!(res[1].status, SettleStatus::Rejected(Rejection::DoubleSpend));
        // The failed spender pays nothing.
        assert_eq!(l.fees_paid().get(&2), None);
    }

    #[test]
    fn timelock_six_confirms_at_six_not_five() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let s = spend(&f, 0, 6, 1);
        l.broadcast(s.clone(), 0).unwrap();
        l.advance(5).unwrap();
        assert!(!l.is_confirmed(&s.tx_id));
        l.advance(1).unwrap();
        assert_eq!(l.confirmation(&s.tx_id).unwrap().at, Time(6));
        // Independent event-list oracle: creation time plus timelock.
        let created = 0u64;
        assert_eq!(created + 6, l.confirmation(&s.tx_id).unwrap().at.0);
    }

    #[test]
    fn extra_confirmation_periods_extend_timelocks() {
        let mut l = Ledger::new(LedgerConfig { fee: 0, extra_confirmation_periods: 2 });
        let f = funding(1);
        l.fund(f.clone());
        let s = spend(&f, 0, 6, 1);
        l.broadcast(s.clone(), 0).unwrap();
        l.advance(7).unwrap();
        assert!(!l.is_confirmed(&s.tx_id));
        l.advance(1).unwrap();
        assert!(l.is_confirmed(&s.tx_id));
    }

    #[test]
    fn advance_epochs_and_empty() {
        let mut l = Ledger::new(LedgerConfig::default());
        let e0 = l.now().epoch();
        l.advance(5).unwrap();
        assert_eq!(l.now().epoch(), e0 + 1);
        let mut empty = Ledger::new(LedgerConfig::default());
        let res = empty.advance(100).unwrap();
        assert!(res.is_empty());
        assert_eq!(empty.now(), Time(100));
        assert_eq!(empty.advance(0), Err(LedgerError::ZeroAdvance));
    }

    #[test]
    fn reorder_identity_and_invalid() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        let a = spend(&f, 0, 0, 1);
        let b = spend(&f, 1, 0, 2);
        l.broadcast(a.clone(), 1).unwrap();
        l.broadcast(b.clone(), 2).unwrap();
        let mut m = l.clone();
        l.reorder_within_period(&[0, 1]).unwrap();
        m.reorder_within_period(&[1, 0]).unwrap();
        assert!(l.reorder_within_period(&[0, 0]).is_err());
        assert!(l.reorder_within_period(&[0]).is_err());
        l.settle();
        m.settle();
        // Independent spends: identical final UTXO set.
        let lk: Vec<_> = l.utxo_set().keys().collect();
        let mk: Vec<_> = m.utxo_set().keys().collect();
        assert_eq!(lk, mk);
    }

    #[test]
    fn reorder_changes_conflict_winner_but_one_confirms() {
        let f = funding(1);
        let a = spend(&f, 0, 0, 1);
        let b = spend(&f, 0, 0, 2);
        let mut winners = BTreeSet::new();
        for perm in [[0usize, 1], [1, 0]] {
            let mut l = Ledger::new(LedgerConfig::default());
            l.fund(f.clone());
            l.broadcast(a.clone(), 1).unwrap();
            l.broadcast(b.clone(), 2).unwrap();
            l.reorder_within_period(&perm).unwrap();
            l.settle();
            let n = [&a, &b].iter().filter(|t| l.is_confirmed(&t.tx_id)).count();
            assert_eq!(n, 1);
            winners.insert(l.is_confirmed(&a.tx_id));
            l.audit().unwrap();
        }
        assert_eq!(winners.len(), 2);
    }

    #[test]
    fn guard_verdict() {
        let mut l = Ledger::new(LedgerConfig::default()).with_avp(Avp::new(42));
        let f = funding(1);
        l.fund(f.clone());
        let input = spend(&f, 0, 0, 1);
        l.broadcast_with(input.clone(), 0, Witness::Assertion(41)).unwrap();
        l.settle();
        let mut t = (*spend(&input, 0, 0, 2)).clone();
        t.guard = Some(Guard::AvpVerdict { source: input.tx_id, expect: true });
        let t = Arc::new(TemplateInstance::new(
            t.kind,
            t.inputs,
            t.outputs,
            t.authorized,
            t.signers,
            t.guard,
            t.bindings,
            t.label,
        ));
        l.broadcast(t.clone(), 0).unwrap();
        let r = l.settle();
        assert_eq!(r[0].status, SettleStatus::Rejected(Rejection::GuardFailed));
    }

    #[test]
    fn determinism_of_advance() {
        let mut l = Ledger::new(LedgerConfig::default());
        let f = funding(1);
        l.fund(f.clone());
        l.broadcast(spend(&f, 0, 3, 1), 0).unwrap();
        l.broadcast(spend(&f, 1, 1, 2), 1).unwrap();
        let mut m = l.clone();
        l.advance(4).unwrap();
        m.advance(4).unwrap();
        assert_eq!(l.trace_digest(), m.trace_digest());
    }
}
