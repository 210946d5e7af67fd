//! Time-varying interaction graphs: agent-to-agent communication and
//! observation graphs, and the state-visibility graph.
//!
//! All builders use the same radius rule. A pair is linked when the
//! Euclidean distance between the two cells is at most
//! `radius_fraction · sqrt((width-1)² + (height-1)²)`, the fraction of the
//! grid diagonal. Distances are compared squared against
//! `radius_fraction² · diag²`, so the endpoints are exact: fraction `0`
//! links only co-located pairs and fraction `1` links everything.

use crate::env::{Cell, GridConfig};

/// Undirected graph over agent indices. No self-loops are stored; callers
/// that need self-inclusion (adoption, gossip) add the node themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

/// Longest shortest path over all node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diameter {
    Finite(usize),
    Disconnected,
}

impl AgentGraph {
    /// Graph with no edges.
    pub fn empty(n: usize) -> AgentGraph {
        AgentGraph { n, adj: vec![Vec::new(); n] }
    }

    /// Graph linking every pair.
    pub fn complete(n: usize) -> AgentGraph {
        let adj = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        AgentGraph { n, adj }
    }

    /// Builds from an explicit unordered edge list. Self-loops and
    /// duplicates are ignored; out-of-range endpoints panic.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> AgentGraph {
        let mut g = AgentGraph::empty(n);
        for &(i, j) in edges {
            assert!(i < n && j < n, "edge ({i},{j}) out of range for n={n}");
            if i != j && !g.adj[i].contains(&j) {
                g.adj[i].push(j);
                g.adj[j].push(i);
            }
        }
        for list in &mut g.adj {
            list.sort_unstable();
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted neighbours of `i`, excluding `i`. Panics if `i >= n`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// BFS all-pairs longest shortest path. A graph on one node has
    /// diameter 0; any unreachable pair yields `Disconnected`.
    pub fn diameter(&self) -> Diameter {
        let mut best = 0;
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        for start in 0..self.n {
            dist.fill(usize::MAX);
            dist[start] = 0;
            queue.clear();
            queue.push_back(start);
            let mut seen = 1;
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        best = best.max(dist[v]);
                        seen += 1;
                        queue.push_back(v);
                    }
                }
            }
            if seen < self.n {
                return Diameter::Disconnected;
            }
        }
        Diameter::Finite(best)
    }
}

/// Which states are mutually visible. Self-visibility always holds: the
/// neighbour list of each state includes the state itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateVisGraph {
    n_states: usize,
    vis: Vec<Vec<usize>>,
}

impl StateVisGraph {
    /// Every state sees only itself.
    pub fn self_only(n_states: usize) -> StateVisGraph {
        StateVisGraph { n_states, vis: (0..n_states).map(|s| vec![s]).collect() }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Sorted list of states visible from `s`, always containing `s`.
    pub fn visible_from(&self, s: usize) -> &[usize] {
        &self.vis[s]
    }

    pub fn is_visible(&self, from: usize, to: usize) -> bool {
        self.vis[from].binary_search(&to).is_ok()
    }
}

fn dist_sq(a: Cell, b: Cell) -> f64 {
    let dr = a.row.abs_diff(b.row) as f64;
    let dc = a.col.abs_diff(b.col) as f64;
    dr * dr + dc * dc
}

/// Communication / observation graph over agents: `i ~ j` iff their cells
/// lie within the radius fraction of the grid diagonal.
pub fn build_radius_agent_graph(
    positions: &[Cell],
    radius_fraction: f64,
    grid: &GridConfig,
) -> AgentGraph {
    assert!(
        (0.0..=1.0).contains(&radius_fraction),
        "radius fraction {radius_fraction} outside [0,1]"
    );
    let threshold_sq = radius_fraction * radius_fraction * grid.diag_sq();
    let n = positions.len();
    let mut g = AgentGraph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if dist_sq(positions[i], positions[j]) <= threshold_sq {
                g.adj[i].push(j);
                g.adj[j].push(i);
            }
        }
    }
    for list in &mut g.adj {
        list.sort_unstable();
    }
    g
}

/// State-visibility graph: cell pairs within the radius fraction of the
/// diagonal see each other. Self-visibility holds at every fraction.
pub fn build_visibility_graph(grid: &GridConfig, radius_fraction: f64) -> StateVisGraph {
    assert!(
        (0.0..=1.0).contains(&radius_fraction),
        "radius fraction {radius_fraction} outside [0,1]"
    );
    let threshold_sq = radius_fraction * radius_fraction * grid.diag_sq();
    let n_states = grid.n_states();
    let mut vis = vec![Vec::new(); n_states];
    for s in 0..n_states {
        for t in s..n_states {
            if s == t || dist_sq(grid.cell_at(s), grid.cell_at(t)) <= threshold_sq {
                vis[s].push(t);
                if s != t {
                    vis[t].push(s);
                }
            }
        }
    }
    for list in &mut vis {
        list.sort_unstable();
    }
    StateVisGraph { n_states, vis }
}
