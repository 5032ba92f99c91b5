//! Per-sequence behavior transition subgraphs.
//!
//! Each user sequence yields two typed graphs over its (merged) items: the
//! examination view `G_e` with relations `{e2e+, e2e-, e2p-}` and the
//! purchase view `G_p` with `{p2p+, p2p-, e2p+}`. Forward relations
//! aggregate a node's temporal predecessors, backward relations its
//! successors, and each stored edge has its mirror under the opposite
//! relation.
//!
//! Homogeneous edges link consecutive occurrences of the same behavior in
//! the behavior-filtered view. Heterogeneous `e2p` edges are multi-hop:
//! within each purchase-terminated segment, every auxiliary item feeds the
//! segment's purchase. Repeated items merge into one node, duplicate edges
//! collapse, and self-loops are dropped.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::data::BehaviorType;

/// The six typed transition relations. `fwd`/`bwd` variants of a relation
/// are mutual reverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelationType {
    E2eFwd,
    E2eBwd,
    P2pFwd,
    P2pBwd,
    E2pFwd,
    E2pBwd,
}

impl RelationType {
    pub const ALL: [RelationType; 6] = [
        RelationType::E2eFwd,
        RelationType::E2eBwd,
        RelationType::P2pFwd,
        RelationType::P2pBwd,
        RelationType::E2pFwd,
        RelationType::E2pBwd,
    ];

    pub fn index(self) -> usize {
        match self {
            RelationType::E2eFwd => 0,
            RelationType::E2eBwd => 1,
            RelationType::P2pFwd => 2,
            RelationType::P2pBwd => 3,
            RelationType::E2pFwd => 4,
            RelationType::E2pBwd => 5,
        }
    }

    pub fn mirror(self) -> RelationType {
        match self {
            RelationType::E2eFwd => RelationType::E2eBwd,
            RelationType::E2eBwd => RelationType::E2eFwd,
            RelationType::P2pFwd => RelationType::P2pBwd,
            RelationType::P2pBwd => RelationType::P2pFwd,
            RelationType::E2pFwd => RelationType::E2pBwd,
            RelationType::E2pBwd => RelationType::E2pFwd,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::E2eFwd => "e2e_fwd",
            RelationType::E2eBwd => "e2e_bwd",
            RelationType::P2pFwd => "p2p_fwd",
            RelationType::P2pBwd => "p2p_bwd",
            RelationType::E2pFwd => "e2p_fwd",
            RelationType::E2pBwd => "e2p_bwd",
        }
    }
}

/// One of the two behavior views of a sequence graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSide {
    Examination,
    Purchase,
}

impl GraphSide {
    /// The relation set aggregated on this side (`R_e` or `R_p`).
    pub fn relations(self) -> [RelationType; 3] {
        match self {
            GraphSide::Examination => [RelationType::E2eFwd, RelationType::E2eBwd, RelationType::E2pBwd],
            GraphSide::Purchase => [RelationType::P2pFwd, RelationType::P2pBwd, RelationType::E2pFwd],
        }
    }
}

/// A purchase-terminated slice of a sequence: zero or more auxiliary events
/// followed by exactly one purchase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PurchaseSegment {
    pub events: Vec<(usize, BehaviorType)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    RelationNotInGraph { side: GraphSide, relation: RelationType },
}

impl core::fmt::Display for GraphError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GraphError::RelationNotInGraph { side, relation } => {
                write!(f, "relation {} does not belong to graph {:?}", relation.name(), side)
            }
        }
    }
}

impl core::error::Error for GraphError {}

/// Relation-typed adjacency for one sequence, shared by both views.
///
/// Under relation `r`, a node's neighbor list holds the sources of edges
/// pointing into it, in first-insertion order and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSubgraphs {
    nodes: Vec<usize>,
    node_index: BTreeMap<usize, usize>,
    /// Behavior of each node's most recent occurrence.
    node_behavior: Vec<BehaviorType>,
    /// `adj[relation][node position]` -> neighbor item ids.
    adj: [Vec<Vec<usize>>; 6],
}

impl BehaviorSubgraphs {
    /// Item ids in first-occurrence order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Position of an item in [`nodes`](Self::nodes).
    pub fn node_position(&self, item: usize) -> Option<usize> {
        self.node_index.get(&item).copied()
    }

    /// Behavior of the item's most recent occurrence in the sequence.
    pub fn node_behavior(&self, position: usize) -> BehaviorType {
        self.node_behavior[position]
    }

    /// Neighbor sources of `item` under `relation`, checked against the
    /// side's relation set.
    pub fn neighbors(&self, side: GraphSide, item: usize, relation: RelationType) -> Result<&[usize], GraphError> {
        if !side.relations().contains(&relation) {
            return Err(GraphError::RelationNotInGraph { side, relation });
        }
        Ok(self.neighbors_unchecked(item, relation))
    }

    /// Neighbor sources without the side check (used by the encoder, which
    /// iterates a side's own relation set).
    pub fn neighbors_unchecked(&self, item: usize, relation: RelationType) -> &[usize] {
        match self.node_index.get(&item) {
            Some(&pos) => &self.adj[relation.index()][pos],
            None => &[],
        }
    }

    /// Adjacency as `relation -> node item -> neighbor items`, for debug
    /// dumps and golden files. Empty lists are skipped.
    pub fn dump(&self) -> BTreeMap<&'static str, BTreeMap<usize, Vec<usize>>> {
        let mut out = BTreeMap::new();
        for rel in RelationType::ALL {
            let mut per_node = BTreeMap::new();
            for (pos, &item) in self.nodes.iter().enumerate() {
                let list = &self.adj[rel.index()][pos];
                if !list.is_empty() {
                    per_node.insert(item, list.clone());
                }
            }
            out.insert(rel.name(), per_node);
        }
        out
    }

    fn add_edge(&mut self, from: usize, relation: RelationType, to: usize) {
        if from == to {
            return;
        }
        let to_pos = self.node_index[&to];
        let list = &mut self.adj[relation.index()][to_pos];
        if !list.contains(&from) {
            list.push(from);
        }
        let from_pos = self.node_index[&from];
        let mirror = &mut self.adj[relation.mirror().index()][from_pos];
        if !mirror.contains(&to) {
            mirror.push(to);
        }
    }
}

/// Splits a sequence at purchases. Segments cover the prefix up to and
/// including the final purchase; everything after it comes back as the
/// (possibly empty) unsegmented tail. A purchase directly following another
/// purchase forms a singleton segment.
pub fn segment_at_purchases(
    events: &[(usize, BehaviorType)],
) -> (Vec<PurchaseSegment>, Vec<(usize, BehaviorType)>) {
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, &(_, behavior)) in events.iter().enumerate() {
        if behavior == BehaviorType::Purchase {
            segments.push(PurchaseSegment { events: events[start..=i].to_vec() });
            start = i + 1;
        }
    }
    (segments, events[start..].to_vec())
}

/// Builds the six-relation adjacency for one sequence.
pub fn build_subgraphs(events: &[(usize, BehaviorType)]) -> BehaviorSubgraphs {
    let mut graph = BehaviorSubgraphs {
        nodes: Vec::new(),
        node_index: BTreeMap::new(),
        node_behavior: Vec::new(),
        adj: Default::default(),
    };
    for &(item, behavior) in events {
        match graph.node_index.get(&item) {
            Some(&pos) => graph.node_behavior[pos] = behavior,
            None => {
                graph.node_index.insert(item, graph.nodes.len());
                graph.nodes.push(item);
                graph.node_behavior.push(behavior);
            }
        }
    }
    for rel in RelationType::ALL {
        graph.adj[rel.index()] = alloc::vec![Vec::new(); graph.nodes.len()];
    }

    // Homogeneous transitions: consecutive same-behavior occurrences.
    for (behavior, fwd) in [
        (BehaviorType::Examination, RelationType::E2eFwd),
        (BehaviorType::Purchase, RelationType::P2pFwd),
    ] {
        let occurrences: Vec<usize> = events
            .iter()
            .filter(|&&(_, b)| b == behavior)
            .map(|&(item, _)| item)
            .collect();
        for pair in occurrences.windows(2) {
            graph.add_edge(pair[0], fwd, pair[1]);
        }
    }

    // Heterogeneous multi-hop e2p: every auxiliary in a segment feeds its
    // purchase.
    let (segments, _) = segment_at_purchases(events);
    for segment in &segments {
        let (purchase_item, _) = *segment.events.last().expect("segment ends with its purchase");
        for &(aux_item, _) in &segment.events[..segment.events.len() - 1] {
            graph.add_edge(aux_item, RelationType::E2pFwd, purchase_item);
        }
    }
    graph
}

#[cfg(test)]
mod tests;
