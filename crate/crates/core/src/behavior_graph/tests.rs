use super::*;
use proptest::prelude::*;

const E: BehaviorType = BehaviorType::Examination;
const P: BehaviorType = BehaviorType::Purchase;

fn five_event_sequence() -> Vec<(usize, BehaviorType)> {
    // [(v1,e),(v2,e),(v3,p),(v4,e),(v5,p)]
    alloc::vec![(1, E), (2, E), (3, P), (4, E), (5, P)]
}

#[test]
fn segmentation_hand_trace() {
    let (segments, tail) = segment_at_purchases(&five_event_sequence());
    assert_eq!(segments.len(), 2);
    assert_eq!(segments[0].events, alloc::vec![(1, E), (2, E), (3, P)]);
    assert_eq!(segments[1].events, alloc::vec![(4, E), (5, P)]);
    assert!(tail.is_empty());
}

#[test]
fn segmentation_consecutive_purchases_are_singletons() {
    let (segments, tail) = segment_at_purchases(&[(1, P), (2, P)]);
    assert_eq!(segments.len(), 2);
    assert_eq!(segments[0].events, alloc::vec![(1, P)]);
    assert_eq!(segments[1].events, alloc::vec![(2, P)]);
    assert!(tail.is_empty());
}

#[test]
fn segmentation_without_purchase_is_all_tail() {
    let events = alloc::vec![(1, E), (2, E)];
    let (segments, tail) = segment_at_purchases(&events);
    assert!(segments.is_empty());
    assert_eq!(tail, events);
}

/// Full adjacency of the five-event example, checked entry by entry against
/// the brute-force reading of the construction rules.
#[test]
fn build_subgraphs_five_event_example() {
    let g = build_subgraphs(&five_event_sequence());
    assert_eq!(g.nodes(), &[1, 2, 3, 4, 5]);

    let n = |side, item, rel| g.neighbors(side, item, rel).unwrap().to_vec();
    use GraphSide::{Examination as Ge, Purchase as Gp};

    assert_eq!(n(Gp, 5, RelationType::P2pFwd), alloc::vec![3]);
    assert_eq!(n(Gp, 3, RelationType::P2pBwd), alloc::vec![5]);
    assert_eq!(n(Gp, 3, RelationType::E2pFwd), alloc::vec![1, 2]);
    assert_eq!(n(Gp, 5, RelationType::E2pFwd), alloc::vec![4]);
    assert_eq!(n(Ge, 2, RelationType::E2eFwd), alloc::vec![1]);
    assert_eq!(n(Ge, 4, RelationType::E2eFwd), alloc::vec![2]);
    assert_eq!(n(Ge, 1, RelationType::E2eBwd), alloc::vec![2]);
    assert_eq!(n(Ge, 2, RelationType::E2eBwd), alloc::vec![4]);
    assert_eq!(n(Ge, 1, RelationType::E2pBwd), alloc::vec![3]);
    assert_eq!(n(Ge, 2, RelationType::E2pBwd), alloc::vec![3]);
    assert_eq!(n(Ge, 4, RelationType::E2pBwd), alloc::vec![5]);

    // nothing else
    assert!(n(Gp, 3, RelationType::P2pFwd).is_empty());
    assert!(n(Ge, 1, RelationType::E2eFwd).is_empty());
    assert!(n(Ge, 4, RelationType::E2eBwd).is_empty());
}

#[test]
fn single_event_has_empty_adjacency() {
    let g = build_subgraphs(&[(7, P)]);
    assert_eq!(g.nodes(), &[7]);
    for rel in RelationType::ALL {
        assert!(g.neighbors_unchecked(7, rel).is_empty());
    }
}

#[test]
fn consecutive_purchases_make_no_e2p_edges() {
    let g = build_subgraphs(&[(1, E), (2, P), (3, P)]);
    assert_eq!(g.neighbors_unchecked(2, RelationType::E2pFwd), &[1]);
    assert!(g.neighbors_unchecked(3, RelationType::E2pFwd).is_empty());
}

#[test]
fn neighbors_rejects_foreign_relation() {
    let g = build_subgraphs(&five_event_sequence());
    let err = g.neighbors(GraphSide::Examination, 1, RelationType::P2pFwd).unwrap_err();
    assert!(matches!(err, GraphError::RelationNotInGraph { .. }));
    assert!(g.neighbors(GraphSide::Purchase, 1, RelationType::E2pFwd).is_ok());
}

#[test]
fn isolated_and_unknown_items_have_no_neighbors() {
    let g = build_subgraphs(&[(1, E)]);
    assert!(g.neighbors(GraphSide::Examination, 1, RelationType::E2eFwd).unwrap().is_empty());
    assert!(g.neighbors(GraphSide::Examination, 99, RelationType::E2eFwd).unwrap().is_empty());
}

#[test]
fn self_loops_are_dropped_and_duplicates_collapse() {
    // item 3 examined twice consecutively: would be a self-loop
    // item 1 -> 2 transition occurs twice: single stored edge
    let g = build_subgraphs(&[(3, E), (3, E), (1, E), (2, E), (1, E), (2, E)]);
    assert!(g.neighbors_unchecked(3, RelationType::E2eFwd).is_empty());
    assert_eq!(g.neighbors_unchecked(2, RelationType::E2eFwd), &[1]);
    assert_eq!(g.neighbors_unchecked(1, RelationType::E2eBwd), &[2]);
}

#[test]
fn node_behavior_tracks_most_recent_occurrence() {
    let g = build_subgraphs(&[(1, E), (2, E), (1, P)]);
    assert_eq!(g.node_behavior(g.node_position(1).unwrap()), P);
    assert_eq!(g.node_behavior(g.node_position(2).unwrap()), E);
}

#[test]
fn e2p_fwd_count_matches_segment_auxiliaries_for_distinct_items() {
    let events = alloc::vec![(1, E), (2, E), (3, E), (4, P), (5, E), (6, P), (7, P)];
    let g = build_subgraphs(&events);
    let (segments, _) = segment_at_purchases(&events);
    for seg in &segments {
        let (purchase, _) = *seg.events.last().unwrap();
        let aux = seg.events.len() - 1;
        assert_eq!(g.neighbors_unchecked(purchase, RelationType::E2pFwd).len(), aux);
    }
}

#[test]
fn homogeneous_edge_count_is_occurrences_minus_one() {
    let events = alloc::vec![(1, E), (2, P), (3, E), (4, P), (5, E), (6, P), (7, E)];
    let g = build_subgraphs(&events);
    let count_edges = |rel: RelationType| -> usize {
        g.nodes().iter().map(|&v| g.neighbors_unchecked(v, rel).len()).sum()
    };
    assert_eq!(count_edges(RelationType::E2eFwd), 3); // 4 examinations
    assert_eq!(count_edges(RelationType::P2pFwd), 2); // 3 purchases
}

fn event_sequence_strategy(max_len: usize) -> impl Strategy<Value = Vec<(usize, BehaviorType)>> {
    prop::collection::vec((1usize..12, prop::bool::ANY), 1..max_len)
        .prop_map(|v| v.into_iter().map(|(item, p)| (item, if p { P } else { E })).collect())
}

proptest! {
    /// v in N_fwd(u) iff u in N_bwd(v), across all relation pairs.
    #[test]
    fn mirror_property(events in event_sequence_strategy(30)) {
        let g = build_subgraphs(&events);
        for rel in RelationType::ALL {
            for &u in g.nodes() {
                for &v in g.neighbors_unchecked(u, rel) {
                    prop_assert!(
                        g.neighbors_unchecked(v, rel.mirror()).contains(&u),
                        "{} edge {v}->{u} lacks its mirror", rel.name()
                    );
                }
            }
        }
    }

    /// Segments partition the prefix up to the last purchase, each ending in
    /// its only purchase; the tail is purchase-free.
    #[test]
    fn segmentation_partitions_sequence(events in event_sequence_strategy(30)) {
        let (segments, tail) = segment_at_purchases(&events);
        let mut rebuilt: Vec<(usize, BehaviorType)> = Vec::new();
        for seg in &segments {
            let purchases = seg.events.iter().filter(|&&(_, b)| b == P).count();
            prop_assert_eq!(purchases, 1);
            prop_assert_eq!(seg.events.last().unwrap().1, P);
            rebuilt.extend_from_slice(&seg.events);
        }
        rebuilt.extend_from_slice(&tail);
        prop_assert_eq!(rebuilt, events.clone());
        prop_assert!(tail.iter().all(|&(_, b)| b != P));
    }
}
