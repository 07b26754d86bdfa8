//! Pre-signed transaction DAG for one tournament chain deployment.

mod export;
mod phase1;
mod phase2;
mod tc;

pub use export::{diff_exports, DagDiff, DagExport, EdgeRecord, ExportMeta, NodeRecord};
pub(crate) use phase1::match_halves;
pub use phase1::{build_phase1, party_phase1_bytes, Phase1Dag, Phase1Pair};
pub use phase2::{build_phase2, party_phase2_bytes, AsserterDag, Phase2Dag, Phase2Params, SlotDag};
pub use tc::{build_tc, tc_link_timelock_epochs, TcDag};

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Authorized, OperatorId, TemplateInstance, TxId};

/// Relative timelock separating consecutive enabler links.
pub const ROUND_PERIODS: u64 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("operator count {0} must be at least 2")]
    InvalidN(u32),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Number of bracket rounds for `n` operators.
pub fn rounds_for(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

/// Receives templates as the builders emit them.
pub trait TemplateSink {
    /// Whether templates signed by any of `signers` should be materialized.
    fn wants(&self, _signers: &[OperatorId]) -> bool {
        true
    }

    fn push(&mut self, template: TemplateInstance) -> TxId;
}

/// An immutable set of templates in emission (topological) order.
#[derive(Clone, Debug, Default)]
pub struct Dag {
    templates: Vec<Arc<TemplateInstance>>,
    index: HashMap<TxId, usize>,
}

impl TemplateSink for Dag {
    fn push(&mut self, template: TemplateInstance) -> TxId {
        let id = template.tx_id;
        debug_assert!(!self.index.contains_key(&id), "duplicate template {}", template.label);
        self.index.insert(id, self.templates.len());
        self.templates.push(Arc::new(template));
        id
    }
}

impl Dag {
    pub fn templates(&self) -> &[Arc<TemplateInstance>] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: &TxId) -> Option<&Arc<TemplateInstance>> {
        self.index.get(id).map(|&i| &self.templates[i])
    }

    pub fn by_label(&self, label: &str) -> Option<&Arc<TemplateInstance>> {
        self.templates.iter().find(|t| t.label == label)
    }

    pub fn extend(&mut self, other: &Dag) {
        for t in &other.templates {
            if !self.index.contains_key(&t.tx_id) {
                self.index.insert(t.tx_id, self.templates.len());
                self.templates.push(t.clone());
            }
        }
    }

    /// Every template consuming `op`.
    pub fn spenders_of(&self, tx_id: TxId, index: u32) -> Vec<&Arc<TemplateInstance>> {
        self.templates
            .iter()
            .filter(|t| t.inputs.iter().any(|i| i.outpoint.tx_id == tx_id && i.outpoint.index == index))
            .collect()
    }

    /// Each input refers to an earlier template or to one of `external` ids.
    pub fn check_acyclic(&self, external: &[TxId]) -> Result<(), String> {
        for (pos, t) in self.templates.iter().enumerate() {
            for i in &t.inputs {
                match self.index.get(&i.outpoint.tx_id) {
                    Some(&p) if p < pos => {
                        let parent = &self.templates[p];
                        if i.outpoint.index as usize >= parent.outputs.len() {
                            return Err(format!("{} references missing output {}", t.label, i.outpoint));
                        }
                    }
                    Some(_) => return Err(format!("{} references a later template", t.label)),
                    None if external.contains(&i.outpoint.tx_id) => {}
                    None => return Err(format!("{} has unresolved input {}", t.label, i.outpoint)),
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self, parties: u32) -> DagStats {
        let mut s = DagStats { per_party_storage_bytes: vec![0; parties as usize], ..Default::default() };
        for t in &self.templates {
            s.record(t);
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagStats {
    pub template_count: u64,
    pub signature_count: u64,
    pub per_party_storage_bytes: Vec<u64>,
}

impl DagStats {
    fn record(&mut self, t: &TemplateInstance) {
        self.template_count += 1;
        self.signature_count += t.signers.len() as u64;
        let bytes = encoded_size(t);
        for &s in &t.signers {
            if let Some(slot) = self.per_party_storage_bytes.get_mut(s as usize) {
                *slot += bytes;
            }
        }
    }

    pub fn max_party_storage_bytes(&self) -> u64 {
        self.per_party_storage_bytes.iter().copied().max().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &DagStats) {
        self.template_count += other.template_count;
        self.signature_count += other.signature_count;
        if self.per_party_storage_bytes.len() < other.per_party_storage_bytes.len() {
            self.per_party_storage_bytes.resize(other.per_party_storage_bytes.len(), 0);
        }
        for (a, b) in self.per_party_storage_bytes.iter_mut().zip(&other.per_party_storage_bytes) {
            *a += b;
        }
    }
}

/// Fixed-width serialized size of a template.
///
/// header 10 (kind 2, counts 3, guard 5); input 40 (txid 32, index 4, timelock 4);
/// output 18 + 4 per restricted spender (role 4, value 8, timelock 4, count 2);
/// 64 per signature; 4 per explicitly authorized broadcaster.
pub fn encoded_size(t: &TemplateInstance) -> u64 {
    let outputs: u64 = t.outputs.iter().map(|o| 18 + 4 * o.spenders.len() as u64).sum();
    let auth = match &t.authorized {
        Authorized::Anyone => 0,
        Authorized::Only(s) => 4 * s.len() as u64,
    };
    10 + 40 * t.inputs.len() as u64 + outputs + 64 * t.signers.len() as u64 + auth
}

/// Sink that keeps only statistics for templates signed by one party.
#[derive(Clone, Debug)]
pub struct PartyStatsSink {
    pub party: OperatorId,
    pub templates: u64,
    pub signatures: u64,
    pub bytes: u64,
}

impl PartyStatsSink {
    pub fn new(party: OperatorId) -> Self {
        PartyStatsSink { party, templates: 0, signatures: 0, bytes: 0 }
    }
}

impl TemplateSink for PartyStatsSink {
    fn wants(&self, signers: &[OperatorId]) -> bool {
        signers.contains(&self.party)
    }

    fn push(&mut self, template: TemplateInstance) -> TxId {
        self.templates += 1;
        self.signatures += template.signers.len() as u64;
        self.bytes += encoded_size(&template);
        template.tx_id
    }
}

/// Emits through a sink, skipping templates the sink does not want.
pub(crate) struct Emitter<'a, S: TemplateSink> {
    pub sink: &'a mut S,
}

impl<S: TemplateSink> Emitter<'_, S> {
    /// Skipped templates yield a placeholder id; sizes do not depend on ids.
    pub fn emit(&mut self, signers: &[OperatorId], make: impl FnOnce() -> TemplateInstance) -> TxId {
        if self.sink.wants(signers) {
            self.sink.push(make())
        } else {
            TxId([0; 32])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds() {
        assert_eq!(rounds_for(2), 1);
        assert_eq!(rounds_for(3), 2);
        assert_eq!(rounds_for(4), 2);
        assert_eq!(rounds_for(5), 3);
        assert_eq!(rounds_for(1000), 10);
        assert_eq!(rounds_for(1024), 10);
        assert_eq!(rounds_for(1025), 11);
    }
}
