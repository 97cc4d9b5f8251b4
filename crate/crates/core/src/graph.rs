//! Connectivity, spanning trees and fundamental cycle bases over the bus graph.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::NetworkCase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("network is disconnected: {} components ({})", .components.len(), summarize(.components))]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("root vertex {root} out of range for {n} vertices")]
    BadRoot { root: usize, n: usize },
}

fn summarize(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| {
            let head: Vec<String> = c.iter().take(5).map(usize::to_string).collect();
            let more = if c.len() > 5 { ", ..." } else { "" };
            format!("{{{}{more}}}", head.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// An undirected edge carrying the branch it came from. `from`/`to` keep the
/// branch orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub branch: usize,
}

#[derive(Debug, Clone)]
pub struct PowerGraph {
    n: usize,
    root: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl PowerGraph {
    /// Builds a graph over `n` vertices; edge `k` refers to branch `k`.
    pub fn new(n: usize, root: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if root >= n {
            return Err(GraphError::BadRoot { root, n });
        }
        let edges: Vec<Edge> = edges
            .iter()
            .enumerate()
            .map(|(branch, &(from, to))| Edge { from, to, branch })
            .collect();
        let mut adj = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            adj[e.from].push((e.to, k));
            adj[e.to].push((e.from, k));
        }
        Ok(PowerGraph { n, root, edges, adj })
    }

    pub fn from_case(case: &NetworkCase) -> Self {
        let ends: Vec<(usize, usize)> = (0..case.branches.len()).map(|k| case.branch_ends(k)).collect();
        Self::new(case.n_buses(), case.slack_index(), &ends).expect("slack index is in range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours of `v` as (vertex, edge index) pairs.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    /// Connected components, each sorted, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(w, _) in &self.adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn check_connected(&self) -> Result<(), GraphError> {
        let components = self.components();
        if components.len() > 1 {
            Err(GraphError::Disconnected { components })
        } else {
            Ok(())
        }
    }
}

/// BFS tree rooted at the graph root.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    pub root: usize,
    /// `parent[v] = Some((p, edge))` for every non-root vertex.
    pub parent: Vec<Option<(usize, usize)>>,
    pub depth: Vec<usize>,
    /// Tree edge indices in discovery order.
    pub edges: Vec<usize>,
    /// Vertices in BFS order, root first.
    pub order: Vec<usize>,
}

impl SpanningTree {
    pub fn contains_edge(&self, e: usize) -> bool {
        self.parent.iter().flatten().any(|&(_, k)| k == e)
    }
}

pub fn spanning_tree(g: &PowerGraph) -> Result<SpanningTree, GraphError> {
    g.check_connected()?;
    let mut parent = vec![None; g.n];
    let mut depth = vec![0; g.n];
    let mut seen = vec![false; g.n];
    let mut edges = Vec::with_capacity(g.n.saturating_sub(1));
    let mut order = Vec::with_capacity(g.n);
    let mut queue = VecDeque::from([g.root]);
    seen[g.root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(w, k) in &g.adj[u] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some((u, k));
                depth[w] = depth[u] + 1;
                edges.push(k);
                queue.push_back(w);
            }
        }
    }
    Ok(SpanningTree { root: g.root, parent, depth, edges, order })
}

/// One step of a cycle: traverse `edge` from vertex `a` to vertex `b`.
/// `sign` is +1 when this follows the branch orientation, -1 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleStep {
    pub edge: usize,
    pub a: usize,
    pub b: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub steps: Vec<CycleStep>,
}

impl Cycle {
    /// Visited vertices; the first is repeated at the end.
    pub fn vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.steps.iter().map(|s| s.a).collect();
        if let Some(last) = self.steps.last() {
            v.push(last.b);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleBasis {
    pub cycles: Vec<Cycle>,
}

/// One cycle per non-tree edge: the edge itself followed by the tree path
/// back to its start.
pub fn fundamental_cycles(g: &PowerGraph, tree: &SpanningTree) -> CycleBasis {
    let mut in_tree = vec![false; g.edges.len()];
    for &k in &tree.edges {
        in_tree[k] = true;
    }
    let step = |edge: usize, a: usize, b: usize| CycleStep {
        edge,
        a,
        b,
        sign: if g.edges[edge].from == a { 1 } else { -1 },
    };
    let mut cycles = Vec::new();
    for (k, e) in g.edges.iter().enumerate() {
        if in_tree[k] {
            continue;
        }
        let (u, w) = (e.from, e.to);
        let mut steps = vec![step(k, u, w)];
        // climb from both ends to the lowest common ancestor
        let (mut x, mut y) = (w, u);
        let mut down = Vec::new();
        while x != y {
            if tree.depth[x] >= tree.depth[y] {
                let (p, pe) = tree.parent[x].expect("non-root has a parent");
                steps.push(step(pe, x, p));
                x = p;
            } else {
                let (p, pe) = tree.parent[y].expect("non-root has a parent");
                down.push(step(pe, p, y));
                y = p;
            }
        }
        steps.extend(down.into_iter().rev());
        cycles.push(Cycle { steps });
    }
    CycleBasis { cycles }
}
