use std::sync::Arc;

use super::{rounds_for, Dag, DagError, TemplateSink};
use crate::ledger::{
    Authorized, InputRef, Outpoint, Output, OutputRole, TemplateInstance, TemplateKind, PERIODS_PER_EPOCH,
};

/// Inter-link timelock in epochs: two registration windows plus one
/// worst-case dispute epoch per bracket round.
pub fn tc_link_timelock_epochs(n: u32) -> u64 {
    2 + 2 * rounds_for(n) as u64
}

#[derive(Clone, Debug)]
pub struct TcDag {
    pub dag: Dag,
    pub start: Arc<TemplateInstance>,
    pub links: Vec<Arc<TemplateInstance>>,
    pub link_timelock: u64,
    pub starts_per_link: u32,
}

impl TcDag {
    /// StartPhase1 outputs of link `k` (zero based).
    pub fn start_outputs(&self, k: usize) -> Vec<Outpoint> {
        (1..=self.starts_per_link).map(|i| self.links[k].outpoint(i)).collect()
    }

    pub fn link_timelock_epochs(&self) -> u64 {
        self.link_timelock / PERIODS_PER_EPOCH
    }
}

fn link_outputs(t: u64, m: u32) -> Vec<Output> {
    let mut outputs = vec![Output::new(OutputRole::NextLink).with_timelock(t)];
    outputs.extend((0..m).map(|_| Output::new(OutputRole::StartPhase1)));
    outputs
}

/// Builds TCStart followed by `links` OpenTournament links, each next-link
/// output locked for `timelock` periods.
pub fn build_tc(links: u32, timelock: u64, starts_per_link: u32) -> Result<TcDag, DagError> {
    if links == 0 || timelock == 0 || starts_per_link == 0 {
        return Err(DagError::InvalidParams("links, timelock and starts per link must be positive".into()));
    }
    let mut dag = Dag::default();
    let start = TemplateInstance::new(
        TemplateKind::TCStart,
        vec![],
        vec![Output::new(OutputRole::NextLink).with_timelock(timelock)],
        Authorized::Anyone,
        vec![],
        None,
        vec![links as u64, timelock, starts_per_link as u64],
        "tc/start".into(),
    );
    let mut prev = Outpoint { tx_id: dag.push(start), index: 0 };
    let mut ids = Vec::new();
    for k in 0..links {
        let link = TemplateInstance::new(
            TemplateKind::OpenTournament,
            vec![InputRef::after(prev, timelock)],
            link_outputs(timelock, starts_per_link),
            Authorized::Anyone,
            vec![],
            None,
            vec![k as u64],
            format!("tc/link{}", k + 1),
        );
        let id = dag.push(link);
        ids.push(id);
        prev = Outpoint { tx_id: id, index: 0 };
    }
    let start = dag.templates()[0].clone();
    let links = ids.iter().map(|id| dag.get(id).expect("link").clone()).collect();
    Ok(TcDag { dag, start, links, link_timelock: timelock, starts_per_link })
}
