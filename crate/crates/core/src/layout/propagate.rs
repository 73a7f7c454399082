//! Backward (consumer → producer) and forward (producer → consumer)
//! dataflow over the layout graph. Both passes only add provenance, so
//! facts descend the lattice monotonically and reach a fixpoint.

use alloc::collections::BTreeMap;

use super::graph::{Analysis, Edge, Node};
use super::lattice::{LayoutFact, Observation};

pub type Facts = BTreeMap<Node, LayoutFact>;

/// Facts seeded from the constraints alone.
pub fn seed(a: &Analysis) -> Facts {
    let mut f: Facts = a.nodes.iter().map(|n| (n.clone(), LayoutFact::any())).collect();
    for c in &a.constraints {
        f.entry(c.node.clone()).or_default().meet_in(&LayoutFact::known(Observation {
            constraint: c.id,
            encoding: c.encoding,
            permuted: false,
        }));
    }
    f
}

fn across(fact: &LayoutFact, e: &Edge) -> LayoutFact {
    if e.flip {
        fact.transposed()
    } else {
        fact.clone()
    }
}

fn fixpoint(facts: &mut Facts, edges: &[&Edge], backward: bool) -> usize {
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut changed = false;
        for e in edges {
            let (src, dst) = if backward { (&e.to, &e.from) } else { (&e.from, &e.to) };
            let incoming = match facts.get(src) {
                Some(f) if !f.provenance.is_empty() => across(f, e),
                _ => continue,
            };
            changed |= facts.entry(dst.clone()).or_default().meet_in(&incoming);
        }
        if !changed {
            return rounds;
        }
    }
}

/// Pushes every constraint from consumers to their producers.
pub fn propagate_backward(a: &Analysis) -> Facts {
    let mut f = seed(a);
    let order: alloc::vec::Vec<&Edge> = a.edges.iter().rev().collect();
    fixpoint(&mut f, &order, true);
    f
}

/// Refines the backward facts downstream.
pub fn propagate_forward(a: &Analysis, backward: &Facts) -> Facts {
    let mut f = backward.clone();
    let order: alloc::vec::Vec<&Edge> = a.edges.iter().collect();
    fixpoint(&mut f, &order, false);
    f
}

/// Both passes with a caller-chosen edge visiting order.
pub fn propagate_with_order(a: &Analysis, order: &[usize]) -> (Facts, usize) {
    let edges: alloc::vec::Vec<&Edge> = order.iter().map(|&i| &a.edges[i]).collect();
    let mut f = seed(a);
    let mut rounds = fixpoint(&mut f, &edges, true);
    rounds += fixpoint(&mut f, &edges, false);
    (f, rounds)
}
