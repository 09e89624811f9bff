use crate::simnet::{Network, Neighbor, Observation};
use crate::xscen::{CrossNeighborMap, CrossRef};

/// Source of one neighbor observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    /// Intersection index in the agent's own scenario.
    Local(usize),
    /// `(scenario, intersection)` elsewhere.
    Cross(usize, usize),
    /// The agent itself.
    SelfPad,
}

/// Resolved neighbor lists for every agent of every scenario.
#[derive(Debug, Clone)]
pub struct NodePlan {
    refs: Vec<Vec<Vec<NodeRef>>>,
}

impl NodePlan {
    /// Same-scenario neighbors only.
    pub fn new(nets: &[impl AsRef<Network>]) -> Self {
        NodePlan {
            refs: nets
                .iter()
                .map(|n| {
                    n.as_ref()
                        .std
                        .iter()
                        .map(|s| {
                            s.neighbor_ids
                                .iter()
                                .map(|nb| match *nb {
                                    Neighbor::Intersection(j) => NodeRef::Local(j),
                                    Neighbor::SelfPad => NodeRef::SelfPad,
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Same-scenario neighbors followed by the cross-scenario ones.
    pub fn with_cross(nets: &[impl AsRef<Network>], map: &CrossNeighborMap) -> Self {
        let mut plan = Self::new(nets);
        for (k, agents) in plan.refs.iter_mut().enumerate() {
            for (i, refs) in agents.iter_mut().enumerate() {
                refs.extend(map.entries[k][i].neighbors.iter().map(|c| match *c {
                    CrossRef::Other(s, j) => NodeRef::Cross(s, j),
                    CrossRef::SelfPad => NodeRef::SelfPad,
                }));
            }
        }
        plan
    }

    pub fn neighbors(&self, k: usize, i: usize) -> &[NodeRef] {
        &self.refs[k][i]
    }

    /// Self observation first, then each neighbor's, from the current
    /// observations of all scenarios.
    pub fn gather(&self, k: usize, i: usize, obs: &[Vec<Observation>]) -> Vec<Observation> {
        let refs = &self.refs[k][i];
        let mut out = Vec::with_capacity(1 + refs.len());
        out.push(obs[k][i]);
        out.extend(refs.iter().map(|r| match *r {
            NodeRef::Local(j) => obs[k][j],
            NodeRef::Cross(s, j) => obs[s][j],
            NodeRef::SelfPad => obs[k][i],
        }));
        out
    }
}
