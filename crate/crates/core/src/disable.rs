//! Global disable secrets: commitments, loss-triggered release, pairwise and
//! threshold delivery, and front-running of actions by disabled parties.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flex::{FlexInstance, FlexState, Party};
use crate::ledger::{Ledger, LedgerError, OperatorId, TemplateInstance};

/// Mersenne prime 2^61 - 1; shares and secrets live in this field.
pub const FIELD_PRIME: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DisableError {
    #[error("threshold {t} of {m} shares is invalid")]
    BadThreshold { t: u32, m: u32 },
    #[error("party {0} did not lose this instance")]
    NotLoser(OperatorId),
    #[error("instance is not resolved")]
    Unresolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisableMethod {
    Direct,
    Pairwise,
    Threshold { t: u32, m: u32 },
}

pub fn hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn keystream(key: &[u8; 32], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut counter = 0u64;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(key);
        h.update(counter.to_le_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(len);
    out
}

/// XOR with a SHA-256 counter keystream; its own inverse.
pub fn encrypt(key: &[u8; 32], msg: &[u8]) -> Vec<u8> {
    msg.iter().zip(keystream(key, msg.len())).map(|(m, k)| m ^ k).collect()
}

pub fn decrypt(key: &[u8; 32], ct: &[u8]) -> Vec<u8> {
    encrypt(key, ct)
}

fn mul_mod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % FIELD_PRIME as u128) as u64
}

fn add_mod(a: u64, b: u64) -> u64 {
    (a + b) % FIELD_PRIME
}

fn sub_mod(a: u64, b: u64) -> u64 {
    (a + FIELD_PRIME - b) % FIELD_PRIME
}

fn pow_mod(mut b: u64, mut e: u64) -> u64 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b);
        }
        b = mul_mod(b, b);
        e >>= 1;
    }
    r
}

fn inv_mod(a: u64) -> u64 {
    pow_mod(a, FIELD_PRIME - 2)
}

/// Shamir shares `(j, f(j))` for `j = 1..=m` of a degree `t - 1` polynomial
/// with `f(0) = secret`.
pub fn split_secret<R: RngCore>(secret: u64, t: u32, m: u32, rng: &mut R) -> Result<Vec<(u64, u64)>, DisableError> {
    if t == 0 || t > m {
        return Err(DisableError::BadThreshold { t, m });
    }
    let mut coeffs = vec![secret % FIELD_PRIME];
    coeffs.extend((1..t).map(|_| rng.gen_range(0..FIELD_PRIME)));
    Ok((1..=m as u64).map(|x| (x, coeffs.iter().rev().fold(0, |acc, &c| add_mod(mul_mod(acc, x), c)))).collect())
}

/// Lagrange interpolation at zero.
pub fn reconstruct(shares: &[(u64, u64)]) -> u64 {
    let mut acc = 0;
    for (i, &(xi, yi)) in shares.iter().enumerate() {
        let mut num = 1;
        let mut den = 1;
        for (k, &(xk, _)) in shares.iter().enumerate() {
            if k != i {
                num = mul_mod(num, xk);
                den = mul_mod(den, sub_mod(xk, xi));
            }
        }
        acc = add_mod(acc, mul_mod(yi, mul_mod(num, inv_mod(den))));
    }
    acc
}

fn secret_bytes(g: u64) -> [u8; 8] {
    g.to_le_bytes()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub h_key: [u8; 32],
    pub ciphertext: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareEntry {
    pub index: u64,
    pub h_key: [u8; 32],
    pub ciphertext: Vec<u8>,
}

/// Public commitment material of one party.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisableCommitment {
    pub party: OperatorId,
    pub method: DisableMethod,
    pub h_secret: [u8; 32],
    pub pairwise: BTreeMap<OperatorId, PairwiseEntry>,
    pub shares: Vec<ShareEntry>,
}

/// Private material held by the garbled-circuit side; released only on loss.
#[derive(Clone, Debug)]
pub struct DisableSecrets {
    pub secret: u64,
    pub pairwise_keys: BTreeMap<OperatorId, [u8; 32]>,
    pub share_keys: Vec<[u8; 32]>,
}

fn random_key<R: RngCore>(rng: &mut R) -> [u8; 32] {
    let mut k = [0u8; 32];
    rng.fill_bytes(&mut k);
    k
}

pub fn commit<R: RngCore>(
    party: OperatorId,
    others: &[OperatorId],
    method: DisableMethod,
    rng: &mut R,
) -> Result<(DisableCommitment, DisableSecrets), DisableError> {
    if let DisableMethod::Threshold { t, m } = method {
        if t == 0 || t > m {
            return Err(DisableError::BadThreshold { t, m });
        }
    }
    let secret = rng.gen_range(0..FIELD_PRIME);
    let mut c = DisableCommitment {
        party,
        method,
        h_secret: hash(&secret_bytes(secret)),
        pairwise: BTreeMap::new(),
        shares: Vec::new(),
    };
    let mut s = DisableSecrets { secret, pairwise_keys: BTreeMap::new(), share_keys: Vec::new() };
    match method {
        DisableMethod::Direct => {}
        DisableMethod::Pairwise => {
            for &y in others.iter().filter(|&&y| y != party) {
                let k = random_key(rng);
                c.pairwise.insert(y, PairwiseEntry { h_key: hash(&k), ciphertext: encrypt(&k, &secret_bytes(secret)) });
                s.pairwise_keys.insert(y, k);
            }
        }
        DisableMethod::Threshold { t, m } => {
            for (x, y) in split_secret(secret, t, m, rng)? {
                let k = random_key(rng);
                c.shares.push(ShareEntry { index: x, h_key: hash(&k), ciphertext: encrypt(&k, &y.to_le_bytes()) });
                s.share_keys.push(k);
            }
        }
    }
    Ok((c, s))
}

/// Recomputes every published relation from the private material.
pub fn verify_setup(c: &DisableCommitment, s: &DisableSecrets) -> bool {
    if c.h_secret != hash(&secret_bytes(s.secret)) {
        return false;
    }
    let pairwise_ok = c.pairwise.iter().all(|(y, e)| {
        s.pairwise_keys
            .get(y)
            .is_some_and(|k| e.h_key == hash(k) && decrypt(k, &e.ciphertext) == secret_bytes(s.secret))
    });
    let shares: Option<Vec<(u64, u64)>> = c
        .shares
        .iter()
        .zip(&s.share_keys)
        .map(|(e, k)| {
            let y = u64::from_le_bytes(decrypt(k, &e.ciphertext).try_into().ok()?);
            (e.h_key == hash(k)).then_some((e.index, y))
        })
        .collect();
    let shares_ok = match (c.method, shares) {
        (DisableMethod::Threshold { t, m }, Some(sh)) => {
            sh.len() == m as usize && s.share_keys.len() == m as usize && reconstruct(&sh[..t as usize]) == s.secret
        }
        (DisableMethod::Threshold { .. }, None) => false,
        _ => c.shares.is_empty(),
    };
    pairwise_ok && shares_ok
}

/// Material released after one loss.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Revealed {
    Secret(u64),
    PairwiseKey {
        winner: OperatorId,
        key: [u8; 32],
    },
    ShareKey {
        index: u64,
        key: [u8; 32],
    },
    /// Repeat loss to a winner that already holds a share.
    Nothing,
}

/// Public view of released disable material for one party.
#[derive(Clone, Debug)]
pub struct DisableTracker {
    pub commitment: DisableCommitment,
    secrets: DisableSecrets,
    pub revealed: Vec<Revealed>,
    share_holders: BTreeMap<OperatorId, usize>,
}

impl DisableTracker {
    pub fn new(commitment: DisableCommitment, secrets: DisableSecrets) -> Self {
        DisableTracker { commitment, secrets, revealed: Vec::new(), share_holders: BTreeMap::new() }
    }

    /// Releases material after `flex` resolved against the tracked party.
    pub fn on_loss_reveal(&mut self, flex: &FlexInstance) -> Result<Revealed, DisableError> {
        let loser = match flex.state {
            FlexState::Resolved(w) => w.other(),
            FlexState::TimedOutCut(p) => p,
            _ => return Err(DisableError::Unresolved),
        };
        let (loser_id, winner_id) = match loser {
            Party::Alice => (flex.alice, flex.bob),
            Party::Bob => (flex.bob, flex.alice),
        };
        self.record_loss(loser_id, winner_id)
    }

    /// Releases material for a loss of `loser` to `winner` established
    /// elsewhere, such as a bracket elimination.
    pub fn record_loss(&mut self, loser_id: OperatorId, winner_id: OperatorId) -> Result<Revealed, DisableError> {
        if loser_id != self.commitment.party {
            return Err(DisableError::NotLoser(self.commitment.party));
        }
        let r = match self.commitment.method {
            DisableMethod::Direct => Revealed::Secret(self.secrets.secret),
            DisableMethod::Pairwise => match self.secrets.pairwise_keys.get(&winner_id) {
                Some(&key) => Revealed::PairwiseKey { winner: winner_id, key },
                None => Revealed::Nothing,
            },
            DisableMethod::Threshold { .. } => {
                let next = self.share_holders.len();
                if self.share_holders.contains_key(&winner_id) || next >= self.secrets.share_keys.len() {
                    Revealed::Nothing
                } else {
                    self.share_holders.insert(winner_id, next);
                    Revealed::ShareKey { index: self.commitment.shares[next].index, key: self.secrets.share_keys[next] }
                }
            }
        };
        self.revealed.push(r.clone());
        Ok(r)
    }

    /// The disable secret if the public material suffices to derive it.
    pub fn derivable_secret(&self) -> Option<u64> {
        let c = &self.commitment;
        let mut shares = Vec::new();
        for r in &self.revealed {
            match r {
                Revealed::Secret(g) => return Some(*g),
                Revealed::PairwiseKey { winner, key } => {
                    let e = c.pairwise.get(winner)?;
                    let g = u64::from_le_bytes(decrypt(key, &e.ciphertext).try_into().ok()?);
                    return (hash(&secret_bytes(g)) == c.h_secret).then_some(g);
                }
                Revealed::ShareKey { index, key } => {
                    let e = c.shares.iter().find(|e| e.index == *index)?;
                    shares.push((*index, u64::from_le_bytes(decrypt(key, &e.ciphertext).try_into().ok()?)));
                }
                Revealed::Nothing => {}
            }
        }
        let DisableMethod::Threshold { t, .. } = c.method else {
            return None;
        };
        if shares.len() < t as usize {
            return None;
        }
        let g = reconstruct(&shares[..t as usize]);
        (hash(&secret_bytes(g)) == c.h_secret).then_some(g)
    }
}

/// Privileges a party can attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Assert,
    Challenge,
    CommitteeVote,
    /// Moves inside a dispute whose bonds are already posted.
    BondedDisputeMove,
}

/// Parties whose disable secret is public, and the ledger hook that
/// front-runs their unbonded actions.
#[derive(Clone, Debug, Default)]
pub struct DisableRegistry {
    pub disabled: BTreeSet<OperatorId>,
}

impl DisableRegistry {
    /// Publishes `secret` for `party` if it opens the commitment.
    pub fn publish(&mut self, ledger: &mut Ledger, c: &DisableCommitment, secret: u64) -> bool {
        if hash(&secret_bytes(secret)) != c.h_secret {
            return false;
        }
        self.disabled.insert(c.party);
        ledger.reveal_disable(c.party);
        true
    }

    pub fn blocks(&self, party: OperatorId, action: Action) -> bool {
        self.disabled.contains(&party) && action != Action::BondedDisputeMove
    }

    /// `attempt` has been queued by `party` this period. If the party is
    /// disabled, `counter` (a template guarded on its disable flag and
    /// spending the same input) is queued ahead of it by `watcher`.
    pub fn enforce_disable(
        &self,
        ledger: &mut Ledger,
        party: OperatorId,
        action: Action,
        counter: &Arc<TemplateInstance>,
        watcher: OperatorId,
    ) -> Result<bool, LedgerError> {
        if !self.blocks(party, action) {
            return Ok(false);
        }
        ledger.broadcast(counter.clone(), watcher)?;
        let n = ledger.queued_this_period();
        let perm: Vec<usize> = std::iter::once(n - 1).chain(0..n - 1).collect();
        ledger.reorder_within_period(&perm)?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stream_cipher_roundtrip() {
        let k = [7u8; 32];
        let m = b"some secret material longer than one block of keystream".to_vec();
        assert_eq!(decrypt(&k, &encrypt(&k, &m)), m);
    }

    #[test]
    fn threshold_3_of_5() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sh = split_secret(123456789, 3, 5, &mut rng).unwrap();
        assert_eq!(reconstruct(&[sh[0], sh[2], sh[4]]), 123456789);
        assert_ne!(reconstruct(&[sh[0], sh[2]]), 123456789);
        assert_eq!(split_secret(1, 4, 3, &mut rng), Err(DisableError::BadThreshold { t: 4, m: 3 }));
    }

    #[test]
    fn setup_stub_detects_tampering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for method in [DisableMethod::Direct, DisableMethod::Pairwise, DisableMethod::Threshold { t: 2, m: 3 }] {
            let (mut c, s) = commit(0, &[0, 1, 2, 3], method, &mut rng).unwrap();
            assert!(verify_setup(&c, &s));
            c.h_secret[0] ^= 1;
            assert!(!verify_setup(&c, &s));
        }
    }
}
