//! Undirected neighbor relation shared by the key-distribution and
//! simulation layers.

use std::collections::VecDeque;

pub type NodeId = usize;

/// Symmetric adjacency over nodes `0..len`, neighbor lists kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    neighbors: Vec<Vec<NodeId>>,
}

impl Adjacency {
    pub fn new(node_count: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); node_count],
        }
    }

    /// Builds a relation from an edge list. Self-loops and duplicates are dropped.
    ///
    /// Panics if an endpoint is out of range.
    pub fn from_edges(node_count: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let mut adj = Self::new(node_count);
        for &(u, v) in edges {
            adj.add_edge(u, v);
        }
        adj
    }

    pub fn add_edge(&mut self, u: NodeId, v: NodeId) {
        assert!(u < self.len() && v < self.len(), "edge ({u}, {v}) out of range");
        if u == v {
            return;
        }
        for (a, b) in [(u, v), (v, u)] {
            let list = &mut self.neighbors[a];
            if let Err(pos) = list.binary_search(&b) {
                list.insert(pos, b);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    pub fn are_adjacent(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors
            .get(u)
            .is_some_and(|list| list.binary_search(&v).is_ok())
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors[node].len()
    }

    /// Unordered edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Hop distances from `root`; `None` for unreachable nodes.
    pub fn bfs_depths(&self, root: NodeId) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.len()];
        let mut queue = VecDeque::new();
        depth[root] = Some(0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let d = depth[u].unwrap_or(0);
            for &v in &self.neighbors[u] {
                if depth[v].is_none() {
                    depth[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        depth
    }

    /// Nodes reachable from `root`, including `root`, in ascending id order.
    pub fn component_of(&self, root: NodeId) -> Vec<NodeId> {
        self.bfs_depths(root)
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|_| i))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.component_of(0).len() == self.len()
    }
}
