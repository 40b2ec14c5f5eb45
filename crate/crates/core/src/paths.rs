//! Shortest-path helpers on the reverse graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties broken by the smaller node id.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Labels and successor pointers of a reverse shortest-path computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub dist: Vec<f64>,
    /// Next node on the best path, or `None` where the initial label won.
    pub next: Vec<Option<usize>>,
}

/// Computes `dist[u] = min(init[u], min_{u->v} len(u,v) + dist[v])` with
/// Dijkstra on the reverse graph. Lengths must be non-negative; infinite
/// lengths mark unusable links.
pub fn reverse_dijkstra(net: &Network, init: &[f64], lengths: &[f64]) -> Labels {
    let n = net.num_nodes();
    let mut dist = init.to_vec();
    let mut next = vec![None; n];
    let mut done = vec![false; n];
    let mut heap: BinaryHeap<Entry> = (0..n)
        .filter(|&v| dist[v].is_finite())
        .map(|v| Entry { dist: dist[v], node: v })
        .collect();
    while let Some(Entry { dist: d, node: v }) = heap.pop() {
        if done[v] || d > dist[v] {
            continue;
        }
        done[v] = true;
        for a in net.inc(v) {
            let u = a.node;
            let cand = d + lengths[a.link];
            if !done[u] && cand < dist[u] {
                dist[u] = cand;
                next[u] = Some(v);
                heap.push(Entry { dist: cand, node: u });
            }
        }
    }
    Labels { dist, next }
}

/// Shortest distances and successors toward `target`.
pub fn shortest_to(net: &Network, target: usize, lengths: &[f64]) -> Labels {
    let mut init = vec![f64::INFINITY; net.num_nodes()];
    init[target] = 0.0;
    reverse_dijkstra(net, &init, lengths)
}

/// Minimum-hop successors toward `target`.
pub fn min_hop_to(net: &Network, target: usize) -> Labels {
    shortest_to(net, target, &vec![1.0; net.num_links()])
}

/// Nodes on the path from `from` following `next` pointers (inclusive).
pub fn follow(next: &[Option<usize>], from: usize) -> Vec<usize> {
    let mut path = vec![from];
    let mut u = from;
    while let Some(v) = next[u] {
        path.push(v);
        u = v;
        if path.len() > next.len() {
            break;
        }
    }
    path
}
