//! Commit-reveal bracket lottery used as a baseline against the dispute
//! bracket: each pairing is decided by the parity of the two revealed seeds.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dag::{rounds_for, DagError};
use crate::ledger::OperatorId;

/// Templates per scheduled pairing: commit, two reveals, two reveal
/// timeouts and two resolutions.
pub const LOTTERY_TEMPLATES_PER_PAIR: u64 = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LotteryError {
    #[error("reveal of player {0} does not open its commitment")]
    RevealMismatch(OperatorId),
    #[error("a lottery needs at least two players")]
    TooFewPlayers,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryPlayer {
    pub id: OperatorId,
    pub seed: u64,
    /// Value actually revealed; `None` means the player never reveals.
    pub reveal: Option<u64>,
}

impl LotteryPlayer {
    pub fn honest(id: OperatorId, seed: u64) -> Self {
        LotteryPlayer { id, seed, reveal: Some(seed) }
    }

    pub fn commitment(&self) -> [u8; 32] {
        commit(self.id, self.seed)
    }
}

pub fn commit(id: OperatorId, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(id.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

pub fn verify_reveal(id: OperatorId, commitment: &[u8; 32], value: u64) -> Result<(), LotteryError> {
    if commit(id, value) == *commitment {
        Ok(())
    } else {
        Err(LotteryError::RevealMismatch(id))
    }
}

/// `0` selects the left player, `1` the right one.
pub fn parity_selector(a: u64, b: u64) -> u8 {
    (((a & 1) + (b & 1)) % 2) as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LotteryReason {
    Parity,
    Forfeit,
    Bye,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryMatch {
    pub round: u32,
    pub left: Option<OperatorId>,
    pub right: Option<OperatorId>,
    pub winner: Option<OperatorId>,
    pub reason: LotteryReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryOutcome {
    pub winner: Option<OperatorId>,
    pub matches: Vec<LotteryMatch>,
    /// Rejected reveals, in bracket order.
    pub mismatches: Vec<LotteryError>,
}

/// Runs the bracket over `players` in seating order.
pub fn run_lottery(players: &[LotteryPlayer]) -> Result<LotteryOutcome, LotteryError> {
    if players.len() < 2 {
        return Err(LotteryError::TooFewPlayers);
    }
    let mut mismatches = Vec::new();
    // A player's usable reveal, or None when it forfeits.
    let valid: Vec<Option<u64>> = players
        .iter()
        .map(|p| {
            let v = p.reveal?;
            match verify_reveal(p.id, &p.commitment(), v) {
                Ok(()) => Some(v),
                Err(e) => {
                    mismatches.push(e);
                    None
                }
            }
        })
        .collect();
    let mut field: Vec<Option<usize>> = (0..players.len()).map(Some).collect();
    let mut matches = Vec::new();
    let mut round = 1;
    while field.len() > 1 {
        let mut next = Vec::with_capacity(field.len().div_ceil(2));
        for pair in field.chunks(2) {
            let (l, r) = (pair[0], pair.get(1).copied().flatten());
            let id = |i: Option<usize>| i.map(|i| players[i].id);
            let (w, reason) = match (l, r) {
                (Some(a), Some(b)) => match (valid[a], valid[b]) {
                    (Some(va), Some(vb)) => {
                        (Some(if parity_selector(va, vb) == 0 { a } else { b }), LotteryReason::Parity)
                    }
                    (Some(_), None) => (Some(a), LotteryReason::Forfeit),
                    (None, Some(_)) => (Some(b), LotteryReason::Forfeit),
                    (None, None) => (None, LotteryReason::Forfeit),
                },
                (one, None) | (None, one) => (one, LotteryReason::Bye),
            };
            matches.push(LotteryMatch { round, left: id(l), right: id(r), winner: id(w), reason });
            next.push(w);
        }
        field = next;
        round += 1;
    }
    let winner = field[0].filter(|&i| valid[i].is_some()).map(|i| players[i].id);
    Ok(LotteryOutcome { winner, matches, mismatches })
}

/// Pre-signed templates for an `n`-player lottery bracket covering every
/// pairing that can occur.
pub fn lottery_template_count(n: u32) -> Result<u64, DagError> {
    if n < 2 {
        return Err(DagError::InvalidN(n));
    }
    let mut pairs = 0u64;
    for r in 1..=rounds_for(n) {
        let mut j = 0u32;
        while (j << r) < n {
            let (l, rt) = crate::dag::match_halves(n, r, j);
            pairs += l.len() as u64 * rt.len() as u64;
            j += 1;
        }
    }
    Ok(pairs * LOTTERY_TEMPLATES_PER_PAIR)
}
