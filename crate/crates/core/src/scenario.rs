//! Declarative scenario and enumeration-space configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::costmodel::CostParams;
use crate::dag::{rounds_for, tc_link_timelock_epochs};
use crate::disable::DisableMethod;
use crate::economics::BondParams;
use crate::ledger::{OperatorId, PERIODS_PER_EPOCH};
use crate::tournament::{Phase2Schedule, RefundPolicy, Strategy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending field.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }

    fn from_toml(src: &str, e: &toml::de::Error) -> Self {
        let path = e.span().map(|s| key_path_at(src, s.start)).unwrap_or_default();
        ConfigError { path, message: e.message().to_string() }
    }
}

/// Dotted key path of the `key = value` line containing byte `offset`.
fn key_path_at(src: &str, offset: usize) -> String {
    let upto = &src[..offset.min(src.len())];
    let line_start = upto.rfind('\n').map_or(0, |i| i + 1);
    let line = src[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim().trim_matches('"').to_string();
    let table = upto[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    match table {
        Some(t) if !t.is_empty() && !key.starts_with('[') => format!("{t}.{key}"),
        _ => key,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContestMethod {
    #[default]
    None,
    DualProof,
    ScoreCarry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcConfig {
    /// Inter-link timelock in periods; defaults to the bracket bound for N.
    pub t: Option<u64>,
    pub m: u32,
    /// Links in the chain.
    pub w: u32,
    /// Signature-dependent link delay base.
    pub t_z: Option<u64>,
    /// Signatures gathered for the advance; defaults to all N.
    pub signatures: Option<u32>,
    pub registration_window: u64,
    pub decision_latency: u64,
    pub active_utxos: u64,
    pub apsb: u64,
}

impl Default for TcConfig {
    fn default() -> Self {
        TcConfig {
            t: None,
            m: 1,
            w: 4,
            t_z: None,
            signatures: None,
            registration_window: 1,
            decision_latency: 5,
            active_utxos: 1,
            apsb: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub n: u32,
    /// Challenger slots per asserter; defaults to N - 1.
    pub c: Option<u32>,
    pub q: u32,
    pub schedule: Phase2Schedule,
    pub k1: u64,
    pub avp_correct: u64,
    pub bonds: BondParams,
    pub starting_balance: u64,
    pub default_strategy: Strategy,
    /// One entry per operator; overrides `default_strategy`.
    pub strategies: Option<Vec<Strategy>>,
    /// Operators (by id) that take part; everyone else abstains.
    pub participants: Option<Vec<OperatorId>>,
    pub refund: RefundPolicy,
    pub opener: OperatorId,
    pub tc: TcConfig,
    pub phase1_only: bool,
    pub lottery: bool,
    pub contest: ContestMethod,
    pub disable: Option<DisableMethod>,
    /// Shuffle same-period broadcasts with a seeded permutation.
    pub reorder: bool,
    pub slack: u64,
    pub cost: Option<CostParams>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            n: 4,
            c: None,
            q: 1,
            schedule: Phase2Schedule::MaintainOrDouble,
            k1: 1,
            avp_correct: 42,
            bonds: BondParams::default(),
            starting_balance: 1_000_000,
            default_strategy: Strategy::Honest,
            strategies: None,
            participants: None,
            refund: RefundPolicy::CancelThenEarly,
            opener: 0,
            tc: TcConfig::default(),
            phase1_only: false,
            lottery: false,
            contest: ContestMethod::None,
            disable: None,
            reorder: false,
            slack: 8,
            cost: None,
        }
    }
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(src).map_err(|e| ConfigError::from_toml(src, &e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return Err(ConfigError::new("n", "at least two operators required"));
        }
        if self.c.is_some_and(|c| c >= self.n) {
            return Err(ConfigError::new("c", "challengers per asserter must be below n"));
        }
        if self.q == 0 || !self.q.is_power_of_two() || (self.q > 1 && self.q > self.n / 2) {
            return Err(ConfigError::new("q", "must be a power of two no larger than n/2"));
        }
        if self.k1 == 0 {
            return Err(ConfigError::new("k1", "must be positive"));
        }
        if let Some(v) = &self.strategies {
            if v.len() != self.n as usize {
                return Err(ConfigError::new("strategies", format!("expected {} entries, got {}", self.n, v.len())));
            }
        }
        if let Some(p) = &self.participants {
            if let Some(bad) = p.iter().position(|&x| x >= self.n) {
                return Err(ConfigError::new(format!("participants[{bad}]"), "operator id out of range"));
            }
        }
        for (i, s) in self.strategy_list().iter().enumerate() {
            if let Strategy::CensorBudget(f) = s {
                if !(0.0..1.0).contains(f) {
                    return Err(ConfigError::new(format!("strategies[{i}]"), "censorship budget must be in [0, 1)"));
                }
            }
        }
        if self.opener >= self.n {
            return Err(ConfigError::new("opener", "operator id out of range"));
        }
        self.bonds.validate().map_err(|e| ConfigError::new("bonds", e.to_string()))?;
        if self.tc.m == 0 || self.tc.w == 0 {
            return Err(ConfigError::new("tc", "m and w must be positive"));
        }
        if self.tc.t == Some(0) {
            return Err(ConfigError::new("tc.t", "must be positive"));
        }
        if let Some(i) = self.tc.signatures {
            if i == 0 || i > self.n {
                return Err(ConfigError::new("tc.signatures", "must be in 1..=n"));
            }
        }
        if let Some(DisableMethod::Threshold { t, m }) = self.disable {
            if t == 0 || t > m {
                return Err(ConfigError::new("disable", format!("threshold {t} of {m} is invalid")));
            }
        }
        if let Some(c) = &self.cost {
            c.validate().map_err(|e| ConfigError::new("cost", e.to_string()))?;
        }
        Ok(())
    }

    pub fn strategy_list(&self) -> Vec<Strategy> {
        let mut v = self.strategies.clone().unwrap_or_else(|| vec![self.default_strategy; self.n as usize]);
        if let Some(p) = &self.participants {
            for (i, s) in v.iter_mut().enumerate() {
                if !p.contains(&(i as OperatorId)) {
                    *s = Strategy::Abstain;
                }
            }
        }
        v
    }

    pub fn challengers(&self) -> u32 {
        self.c.unwrap_or(self.n - 1)
    }

    pub fn link_timelock(&self) -> u64 {
        self.tc.t.unwrap_or(PERIODS_PER_EPOCH * tc_link_timelock_epochs(self.n))
    }

    pub fn rounds(&self) -> u32 {
        rounds_for(self.n)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Bounded strategy space for exhaustive enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Space {
    pub n: Vec<u32>,
    pub alphabet: Vec<Strategy>,
    /// Adds StallAfterRound(1..=R) for each N.
    pub stall_rounds: bool,
    pub avp_correct: u64,
    pub reorder_seed: Option<u64>,
    pub cap: Option<u64>,
}

impl Default for Space {
    fn default() -> Self {
        Space { n: vec![], alphabet: vec![], stall_rounds: false, avp_correct: 42, reorder_seed: None, cap: None }
    }
}

impl Space {
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let s: Space = toml::from_str(src).map_err(|e| ConfigError::from_toml(src, &e))?;
        if let Some(i) = s.n.iter().position(|&n| n < 2) {
            return Err(ConfigError::new(format!("n[{i}]"), "at least two operators required"));
        }
        Ok(s)
    }

    pub fn alphabet_for(&self, n: u32) -> Vec<Strategy> {
        let mut a = self.alphabet.clone();
        if self.stall_rounds {
            a.extend((1..=rounds_for(n)).map(Strategy::StallAfterRound));
        }
        a
    }

    /// Points in the space, saturating.
    pub fn size(&self) -> u64 {
        self.n.iter().map(|&n| (self.alphabet_for(n).len() as u64).saturating_pow(n)).fold(0u64, u64::saturating_add)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let s = Scenario::from_toml(
            "seed = 3\nn = 4\nstrategies = [\"Honest\", \"Abstain\", { StallAfterRound = 1 }, \"Honest\"]\n[bonds]\naosb = 10\nchallenger_aosb = 32\npublication_cost = 2\nfee = 1\nresidue = 1\n",
        )
        .unwrap();
        assert_eq!(s.strategy_list()[2], Strategy::StallAfterRound(1));
        assert_eq!(s.challengers(), 3);
        assert_eq!(s.link_timelock(), 5 * 6);
    }

    #[test]
    fn unknown_key_reports_path() {
        let e = Scenario::from_toml("n = 4\n[tc]\nm = 1\nbogus = 2\n").unwrap_err();
        assert_eq!(e.path, "tc.bogus");
        let e = Scenario::from_toml("n = 4\nq = 4\n").unwrap_err();
        assert_eq!(e.path, "q");
    }

    #[test]
    fn digest_tracks_content() {
        let a = Scenario::default();
        let b = Scenario { seed: 1, ..Scenario::default() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), Scenario::default().digest());
    }

    #[test]
    fn participants_mask() {
        let s = Scenario { n: 8, participants: Some(vec![0, 3, 7]), ..Default::default() };
        let l = s.strategy_list();
        assert_eq!(l.iter().filter(|s| s.registers()).count(), 3);
    }
}
