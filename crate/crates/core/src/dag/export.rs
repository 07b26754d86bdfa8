use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Dag;
use crate::ledger::{Authorized, OperatorId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub n: u32,
    pub rounds: u32,
    pub link_timelock_applies_to_round_one: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub label: String,
    pub kind: String,
    /// `None` when anyone may broadcast.
    pub authorized: Option<Vec<OperatorId>>,
    pub signers: Vec<OperatorId>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: String,
    pub output: u32,
    pub role: String,
    pub to: String,
    pub timelock: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagExport {
    pub meta: ExportMeta,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl DagExport {
    pub fn from_dag(dag: &Dag, meta: ExportMeta) -> Self {
        let nodes = dag
            .templates()
            .iter()
            .map(|t| NodeRecord {
                id: t.tx_id.to_string(),
                label: t.label.clone(),
                kind: t.kind.to_string(),
                authorized: match &t.authorized {
                    Authorized::Anyone => None,
                    Authorized::Only(s) => Some(s.iter().copied().collect()),
                },
                signers: t.signers.clone(),
            })
            .collect();
        let mut edges = Vec::new();
        for t in dag.templates() {
            for i in &t.inputs {
                let (from, role) = match dag.get(&i.outpoint.tx_id) {
                    Some(p) => {
                        let out = &p.outputs[i.outpoint.index as usize];
                        (p.label.clone(), format!("{:?}", out.role))
                    }
                    None => (format!("external:{}", i.outpoint.tx_id.short()), "External".to_string()),
                };
                edges.push(EdgeRecord {
                    from,
                    output: i.outpoint.index,
                    role,
                    to: t.label.clone(),
                    timelock: i.relative_timelock,
                });
            }
        }
        DagExport { meta, nodes, edges }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagDiff {
    pub nodes_added: Vec<String>,
    pub nodes_removed: Vec<String>,
    /// Nodes present in both whose kind, authorization or signers differ.
    pub nodes_changed: Vec<String>,
    pub edges_added: Vec<EdgeRecord>,
    pub edges_removed: Vec<EdgeRecord>,
}

impl DagDiff {
    pub fn is_empty(&self) -> bool {
        self.nodes_added.is_empty()
            && self.nodes_removed.is_empty()
            && self.nodes_changed.is_empty()
            && self.edges_added.is_empty()
            && self.edges_removed.is_empty()
    }
}

/// Structural comparison by label; transaction ids are ignored so two
/// deployments on different slots compare equal.
pub fn diff_exports(a: &DagExport, b: &DagExport) -> DagDiff {
    let key = |n: &NodeRecord| (n.kind.clone(), n.authorized.clone(), n.signers.clone());
    let na: BTreeMap<&str, _> = a.nodes.iter().map(|n| (n.label.as_str(), key(n))).collect();
    let nb: BTreeMap<&str, _> = b.nodes.iter().map(|n| (n.label.as_str(), key(n))).collect();
    let mut d = DagDiff::default();
    for (l, k) in &na {
        match nb.get(l) {
            None => d.nodes_removed.push(l.to_string()),
            Some(k2) if k2 != k => d.nodes_changed.push(l.to_string()),
            _ => {}
        }
    }
    d.nodes_added = nb.keys().filter(|l| !na.contains_key(*l)).map(|l| l.to_string()).collect();
    let strip = |e: &EdgeRecord| {
        let mut e = e.clone();
        if e.from.starts_with("external:") {
            e.from = "external".into();
            e.output = 0;
        }
        e
    };
    let ea: BTreeSet<EdgeRecord> = a.edges.iter().map(strip).collect();
    let eb: BTreeSet<EdgeRecord> = b.edges.iter().map(strip).collect();
    d.edges_removed = ea.difference(&eb).cloned().collect();
    d.edges_added = eb.difference(&ea).cloned().collect();
    d
}
