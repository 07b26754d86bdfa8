//! Contestable chain proofs: synthetic chains, proof oracles, dual-proof and
//! score-carry resolution, and the off-chain assertion screen.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::flex::Party;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContestError {
    #[error("copied peg-out fields differ from the asserter's signed values")]
    FieldMismatch,
    #[error("challenger score {s_b} does not exceed {s_a}")]
    ScoreNotGreater { s_a: u64, s_b: u64 },
    #[error("both truth secrets of one circuit revealed")]
    ConflictingReveals,
    #[error("neither proof verifies")]
    BothInvalid,
    #[error("malformed assertion")]
    MalformedAssertion,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub score: u64,
    /// Peg-out identifiers, one per transaction index.
    pub events: Vec<u64>,
}

/// A chain as an ordered list of blocks; cumulative difficulty is the sum
/// of block scores.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn score(&self) -> u64 {
        self.blocks.iter().map(|b| b.score).sum()
    }

    pub fn event_at(&self, pos: (u32, u32)) -> Option<u64> {
        self.blocks.get(pos.0 as usize)?.events.get(pos.1 as usize).copied()
    }

    /// Score accumulated strictly after block `height`.
    pub fn work_after(&self, height: u32) -> u64 {
        self.blocks.iter().skip(height as usize + 1).map(|b| b.score).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainClaim {
    pub peg_out_id: u64,
    /// (block number, transaction index).
    pub peg_out_pos: (u32, u32),
    pub score: u64,
    pub contains_event: bool,
    pub work_past_event: u64,
}

impl ChainClaim {
    /// The claim an honest prover makes about `chain`.
    pub fn of(chain: &Chain, peg_out_id: u64, pos: (u32, u32)) -> Self {
        ChainClaim {
            peg_out_id,
            peg_out_pos: pos,
            score: chain.score(),
            contains_event: chain.event_at(pos) == Some(peg_out_id),
            work_past_event: chain.work_after(pos.0),
        }
    }
}

/// Proof verification against the chain the proof was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOracle {
    /// Work required past the peg-out event.
    pub w: u64,
}

impl ProofOracle {
    pub fn verifies_a(&self, chain: &Chain, c: &ChainClaim) -> bool {
        chain.event_at(c.peg_out_pos) == Some(c.peg_out_id)
            && chain.score() == c.score
            && chain.work_after(c.peg_out_pos.0) >= self.w
    }

    pub fn verifies_b(&self, chain: &Chain, c: &ChainClaim) -> bool {
        chain.score() == c.score && chain.event_at(c.peg_out_pos) != Some(c.peg_out_id)
    }
}

/// Script check on BobInput: Bob must copy Alice's signed locator and beat
/// her score.
pub fn validate_bob_input(alice: &ChainClaim, bob: &ChainClaim) -> Result<(), ContestError> {
    if alice.peg_out_id != bob.peg_out_id || alice.peg_out_pos != bob.peg_out_pos {
        return Err(ContestError::FieldMismatch);
    }
    if bob.score <= alice.score {
        return Err(ContestError::ScoreNotGreater { s_a: alice.score, s_b: bob.score });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RevealSet {
    pub ca_true: bool,
    pub ca_false: bool,
    pub cb_true: bool,
    pub cb_false: bool,
}

impl RevealSet {
    pub fn from_bits(bits: u8) -> Self {
        RevealSet { ca_true: bits & 1 != 0, ca_false: bits & 2 != 0, cb_true: bits & 4 != 0, cb_false: bits & 8 != 0 }
    }

    pub fn consistent(&self) -> bool {
        !(self.ca_true && self.ca_false) && !(self.cb_true && self.cb_false)
    }

    fn ca_revealed(&self) -> bool {
        self.ca_true || self.ca_false
    }

    fn cb_revealed(&self) -> bool {
        self.cb_true || self.cb_false
    }
}

/// Expired deadlines for parties whose circuit output never appeared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeouts {
    pub alice_silent: bool,
    pub bob_silent: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepositFate {
    ToAlice,
    ToBob,
    /// Still locked; only a persistent bond can punish.
    Locked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payouts {
    pub alice_deposit: DepositFate,
    pub bob_deposit: DepositFate,
    pub persistent_slash_required: bool,
    /// Alice's proof failed yet only timeouts decided the deposits.
    pub uncontested_invalid: bool,
}

impl Payouts {
    /// Amounts received by (Alice, Bob, locked).
    pub fn amounts(&self, alice_deposit: u64, bob_deposit: u64) -> (u64, u64, u64) {
        let mut out = (0, 0, 0);
        for (fate, v) in [(self.alice_deposit, alice_deposit), (self.bob_deposit, bob_deposit)] {
            match fate {
                DepositFate::ToAlice => out.0 += v,
                DepositFate::ToBob => out.1 += v,
                DepositFate::Locked => out.2 += v,
            }
        }
        out
    }
}

/// Score-carry payout table keyed on the revealed truth secrets.
pub fn resolve_payouts(reveals: RevealSet, timeouts: Timeouts) -> Result<Payouts, ContestError> {
    if !reveals.consistent() {
        return Err(ContestError::ConflictingReveals);
    }
    let r = reveals;
    // Both circuits false: the refund and the transfer race for each deposit;
    // either way both parties end where they started.
    let alice_deposit = if r.cb_false {
        DepositFate::ToAlice
    } else if r.ca_false || (!r.ca_revealed() && timeouts.alice_silent) {
        DepositFate::ToBob
    } else if !r.cb_revealed() && timeouts.bob_silent {
        DepositFate::ToAlice
    } else {
        DepositFate::Locked
    };
    let bob_deposit = if r.ca_false {
        DepositFate::ToBob
    } else if r.cb_false || (!r.cb_revealed() && timeouts.bob_silent) {
        DepositFate::ToAlice
    } else if !r.ca_revealed() && timeouts.alice_silent {
        DepositFate::ToBob
    } else {
        DepositFate::Locked
    };
    Ok(Payouts {
        alice_deposit,
        bob_deposit,
        persistent_slash_required: r.ca_true && r.cb_true,
        uncontested_invalid: r.ca_false && !r.cb_revealed(),
    })
}

/// Both circuits verify both proofs and apply the heaviest-chain rule; a
/// counter-proof wins only with strictly higher score.
pub fn resolve_dual_proof(
    oracle: &ProofOracle,
    alice: (&Chain, &ChainClaim),
    bob: Option<(&Chain, &ChainClaim)>,
) -> Result<Party, ContestError> {
    let a_ok = oracle.verifies_a(alice.0, alice.1);
    let b_ok = bob.filter(|(c, cl)| {
        oracle.verifies_b(c, cl) && cl.peg_out_id == alice.1.peg_out_id && cl.peg_out_pos == alice.1.peg_out_pos
    });
    match (a_ok, b_ok) {
        (true, Some((_, b))) if b.score > alice.1.score => Ok(Party::Bob),
        (true, _) => Ok(Party::Alice),
        (false, Some(_)) => Ok(Party::Bob),
        (false, None) => Err(ContestError::BothInvalid),
    }
}

/// Full score-carry dispute: input validation, circuit evaluation and
/// payouts. Returns the party favoured by the outcome; the both-true case
/// favours Bob through the persistent bond.
pub fn resolve_score_carry(
    oracle: &ProofOracle,
    alice: (&Chain, &ChainClaim),
    bob: Option<(&Chain, &ChainClaim)>,
) -> (Party, Payouts) {
    let bob = bob.filter(|(_, b)| validate_bob_input(alice.1, b).is_ok());
    let ca = oracle.verifies_a(alice.0, alice.1);
    let mut reveals = RevealSet { ca_true: ca, ca_false: !ca, ..Default::default() };
    let mut timeouts = Timeouts::default();
    match bob {
        Some((c, b)) => {
            let cb = oracle.verifies_b(c, b);
            reveals.cb_true = cb;
            reveals.cb_false = !cb;
        }
        None => timeouts.bob_silent = true,
    }
    let p = resolve_payouts(reveals, timeouts).expect("consistent by construction");
    let winner =
        if p.persistent_slash_required || p.alice_deposit == DepositFate::ToBob { Party::Bob } else { Party::Alice };
    (winner, p)
}

/// Verifier instances a circuit embeds under each construction.
pub fn verifiers_per_circuit(dual_proof: bool) -> u32 {
    if dual_proof {
        2
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegOutAssertion {
    pub peg_out_id: u64,
    pub peg_out_pos: (u32, u32),
}

impl PegOutAssertion {
    fn check(&self) -> Result<(), ContestError> {
        if self.peg_out_id == 0 {
            return Err(ContestError::MalformedAssertion);
        }
        Ok(())
    }
}

/// Off-chain screen: does the heaviest of `chains` carry the event with
/// enough work on top. Ties go to the earliest chain.
pub fn avp_screen(chains: &[Chain], w: u64, a: &PegOutAssertion) -> Result<bool, ContestError> {
    a.check()?;
    let Some(best) = chains.iter().rev().max_by_key(|c| c.score()) else {
        return Ok(false);
    };
    let (h, i) = a.peg_out_pos;
    let Some(block) = best.blocks.get(h as usize) else {
        return Ok(false);
    };
    let after: u64 = best.blocks[h as usize + 1..].iter().map(|b| b.score).sum();
    Ok(block.events.get(i as usize) == Some(&a.peg_out_id) && after >= w)
}

/// One-time signature scheme used to carry a value into a script or circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OtsScheme {
    Lamport,
    Winternitz,
}

impl OtsScheme {
    /// Witness bytes revealed per signed message byte.
    pub fn bytes_per_message_byte(self) -> u64 {
        match self {
            // One 32-byte preimage per bit.
            OtsScheme::Lamport => 8 * 32,
            // Two base-16 digits per byte, one 20-byte hash chain value each.
            OtsScheme::Winternitz => 2 * 20,
        }
    }

    pub fn signature_bytes(self, message_bytes: u64) -> u64 {
        message_bytes * self.bytes_per_message_byte()
    }
}
