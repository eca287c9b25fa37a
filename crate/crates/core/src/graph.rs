//! Primal graphs, elimination orderings and min-fill treewidth bounds.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::model::{MarkovNetwork, VarId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("vertex {0} is not in the graph")]
    MissingVertex(VarId),
    #[error("vertex {0} appears more than once in the ordering")]
    RepeatedVertex(VarId),
    #[error("block index {index} out of range ({count} blocks)")]
    BlockIndex { index: usize, count: usize },
}

/// Undirected interaction graph over variable ids. Vertices can be absent
/// (evidence, or already eliminated); ids keep their network meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimalGraph {
    adj: Vec<BTreeSet<VarId>>,
    present: Vec<bool>,
}

impl PrimalGraph {
    /// Graph on vertices `0..n` with no edges.
    pub fn new(n: usize) -> Self {
        PrimalGraph {
            adj: vec![BTreeSet::new(); n],
            present: vec![true; n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(VarId, VarId)]) -> Self {
        let mut g = Self::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// X—Y whenever some factor scope holds both. Evidence variables are
    /// not vertices.
    pub fn from_network(net: &MarkovNetwork) -> Self {
        let mut g = Self::new(net.num_variables());
        for v in net.evidence().vars() {
            g.present[v] = false;
        }
        for f in net.factors() {
            let scope = f.scope();
            for (i, &a) in scope.iter().enumerate() {
                for &b in &scope[i + 1..] {
                    g.add_edge(a, b);
                }
            }
        }
        g
    }

    /// Id space size (including absent vertices).
    pub fn capacity(&self) -> usize {
        self.adj.len()
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.present.get(v).copied().unwrap_or(false)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.adj.len()).filter(|&v| self.present[v])
    }

    pub fn num_vertices(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn num_edges(&self) -> usize {
        self.vertices().map(|v| self.adj[v].len()).sum::<usize>() / 2
    }

    pub fn add_edge(&mut self, a: VarId, b: VarId) -> bool {
        if a == b {
            return false;
        }
        let added = self.adj[a].insert(b);
        self.adj[b].insert(a);
        added
    }

    pub fn has_edge(&self, a: VarId, b: VarId) -> bool {
        self.adj.get(a).is_some_and(|n| n.contains(&b))
    }

    pub fn neighbors(&self, v: VarId) -> &BTreeSet<VarId> {
        &self.adj[v]
    }

    pub fn degree(&self, v: VarId) -> usize {
        self.adj[v].len()
    }

    /// Edges that eliminating `v` would add (E(X, G)).
    pub fn fill_in(&self, v: VarId) -> usize {
        let nbrs: Vec<VarId> = self.adj[v].iter().copied().collect();
        let mut fill = 0;
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if !self.adj[a].contains(&b) {
                    fill += 1;
                }
            }
        }
        fill
    }

    /// Connects the neighbors of `v` into a clique and removes `v`.
    /// Returns the number of edges added.
    pub fn eliminate(&mut self, v: VarId) -> Result<usize, GraphError> {
        if !self.contains(v) {
            return Err(GraphError::MissingVertex(v));
        }
        let nbrs: Vec<VarId> = std::mem::take(&mut self.adj[v]).into_iter().collect();
        let mut added = 0;
        for (i, &a) in nbrs.iter().enumerate() {
            self.adj[a].remove(&v);
            for &b in &nbrs[i + 1..] {
                if self.add_edge(a, b) {
                    added += 1;
                }
            }
        }
        self.present[v] = false;
        Ok(added)
    }

    /// Non-mutating form of [`PrimalGraph::eliminate`].
    pub fn eliminated(&self, v: VarId) -> Result<(PrimalGraph, usize), GraphError> {
        let mut g = self.clone();
        let added = g.eliminate(v)?;
        Ok((g, added))
    }

    fn check_order(&self, order: &[VarId]) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for &v in order {
            if !self.contains(v) {
                return Err(GraphError::MissingVertex(v));
            }
            if !seen.insert(v) {
                return Err(GraphError::RepeatedVertex(v));
            }
        }
        Ok(())
    }

    /// Maximum degree of each vertex at the moment it is eliminated along
    /// `order` (partial or total).
    pub fn width_of_order(&self, order: &[VarId]) -> Result<usize, GraphError> {
        self.check_order(order)?;
        let mut g = self.clone();
        let mut width = 0;
        for &v in order {
            width = width.max(g.degree(v));
            g.eliminate(v)?;
        }
        Ok(width)
    }

    /// Total edges added along `order`.
    pub fn fill_of_order(&self, order: &[VarId]) -> Result<usize, GraphError> {
        self.check_order(order)?;
        let mut g = self.clone();
        let mut fill = 0;
        for &v in order {
            fill += g.eliminate(v)?;
        }
        Ok(fill)
    }

    /// Greedy min-fill ordering of `allowed` (all vertices when `None`).
    /// Ties go to the lowest id unless an RNG is supplied, in which case
    /// they are broken uniformly at random.
    pub fn minfill_order<R: Rng + ?Sized>(
        &self,
        allowed: Option<&BTreeSet<VarId>>,
        mut rng: Option<&mut R>,
    ) -> Vec<VarId> {
        let mut g = self.clone();
        let mut remaining: BTreeSet<VarId> = match allowed {
            Some(a) => a.iter().copied().filter(|&v| self.contains(v)).collect(),
            None => self.vertices().collect(),
        };
        let mut order = Vec::with_capacity(remaining.len());
        let mut fills: Vec<usize> = (0..g.capacity()).map(|v| if g.contains(v) { g.fill_in(v) } else { 0 }).collect();
        let mut ties = Vec::new();
        while !remaining.is_empty() {
            let best = remaining.iter().map(|&v| fills[v]).min().unwrap();
            ties.clear();
            ties.extend(remaining.iter().copied().filter(|&v| fills[v] == best));
            let pick = match rng.as_deref_mut() {
                Some(r) if ties.len() > 1 => ties[r.random_range(0..ties.len())],
                _ => ties[0],
            };
            // fill counts can change within distance two of the eliminated vertex
            let mut touched: BTreeSet<VarId> = BTreeSet::new();
            for &a in g.neighbors(pick) {
                touched.insert(a);
                touched.extend(g.neighbors(a).iter().copied());
            }
            g.eliminate(pick).expect("vertex present");
            touched.remove(&pick);
            for &u in &touched {
                if g.contains(u) {
                    fills[u] = g.fill_in(u);
                }
            }
            remaining.remove(&pick);
            order.push(pick);
        }
        order
    }

    /// Width of the deterministic min-fill ordering of all vertices.
    pub fn treewidth_ub(&self) -> usize {
        let order = self.minfill_order::<rand_chacha::ChaCha8Rng>(None, None);
        self.width_of_order(&order).expect("min-fill order is valid")
    }

    /// Subgraph induced on `vertices`.
    pub fn induced(&self, vertices: &[VarId]) -> PrimalGraph {
        let keep: BTreeSet<VarId> = vertices.iter().copied().filter(|&v| self.contains(v)).collect();
        let mut g = PrimalGraph {
            adj: vec![BTreeSet::new(); self.capacity()],
            present: vec![false; self.capacity()],
        };
        for &v in &keep {
            g.present[v] = true;
            g.adj[v] = self.adj[v].intersection(&keep).copied().collect();
        }
        g
    }

    /// MB(v): the neighbors of `v`.
    pub fn markov_blanket(&self, v: VarId) -> Result<BTreeSet<VarId>, GraphError> {
        if !self.contains(v) {
            return Err(GraphError::MissingVertex(v));
        }
        Ok(self.adj[v].clone())
    }

    /// Indices of the other blocks that hold a neighbor of some member of
    /// `blocks[i]`.
    pub fn block_markov_blanket(&self, blocks: &[Vec<VarId>], i: usize) -> Result<BTreeSet<usize>, GraphError> {
        let block = blocks.get(i).ok_or(GraphError::BlockIndex {
            index: i,
            count: blocks.len(),
        })?;
        let mut owner = vec![usize::MAX; self.capacity()];
        for (bi, b) in blocks.iter().enumerate() {
            for &v in b {
                owner[v] = bi;
            }
        }
        let mut out = BTreeSet::new();
        for &v in block {
            if !self.contains(v) {
                return Err(GraphError::MissingVertex(v));
            }
            for &u in &self.adj[v] {
                let o = owner[u];
                if o != usize::MAX && o != i {
                    out.insert(o);
                }
            }
        }
        Ok(out)
    }
}
