//! Random-scan Gibbs and blocked Gibbs chains, and the histogram, mixture
//! and Rao-Blackwell marginal estimators.
//!
//! Chain states are dense vectors indexed by variable id. Evidence
//! variables hold their observed value; variables outside the sampling
//! universe (collapsed ones) are carried along but never read by the
//! factors of the collapsed model.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::elim::{sample_index, BlockConditional, ConditionalPlan, ContextMemo, ElimError};
use crate::graph::PrimalGraph;
use crate::model::{MarkovNetwork, VarId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("variable {0} appears in more than one block")]
    Overlap(VarId),
    #[error("variable {0} is not covered by any block")]
    Uncovered(VarId),
    #[error("variable {0} is outside the sampling universe")]
    Foreign(VarId),
    #[error("block {block} has treewidth bound {width}, above {beta}")]
    TooWide { block: usize, width: usize, beta: usize },
    #[error("could not find a positive-probability initial state")]
    ZeroMassStart,
    #[error(transparent)]
    Elim(#[from] ElimError),
}

/// Disjoint blocks covering the sampling universe, with one compiled
/// conditional plan per block.
#[derive(Debug, Clone)]
pub struct Blocking {
    blocks: Vec<Vec<VarId>>,
    plans: Vec<ConditionalPlan>,
    block_of: Vec<Option<usize>>,
    neighbors: Vec<Vec<usize>>,
    universe: Vec<VarId>,
}

impl Blocking {
    /// `graph` is the primal graph of `net` over `universe`. With `beta`
    /// set, every block's induced treewidth bound is checked against it.
    pub fn new(
        net: &MarkovNetwork,
        graph: &PrimalGraph,
        universe: &[VarId],
        blocks: Vec<Vec<VarId>>,
        beta: Option<usize>,
    ) -> Result<Self, SamplingError> {
        let mut block_of = vec![None; net.num_variables()];
        let in_universe: BTreeSet<VarId> = universe.iter().copied().collect();
        for (i, b) in blocks.iter().enumerate() {
            for &v in b {
                if !in_universe.contains(&v) {
                    return Err(SamplingError::Foreign(v));
                }
                if block_of[v].replace(i).is_some() {
                    return Err(SamplingError::Overlap(v));
                }
            }
        }
        if let Some(&v) = universe.iter().find(|&&v| block_of[v].is_none()) {
            return Err(SamplingError::Uncovered(v));
        }
        if let Some(beta) = beta {
            for (i, b) in blocks.iter().enumerate() {
                let width = graph.induced(b).treewidth_ub();
                if width > beta {
                    return Err(SamplingError::TooWide { block: i, width, beta });
                }
            }
        }
        let plans = blocks.iter().map(|b| ConditionalPlan::for_block(net, graph, b)).collect();
        let neighbors = (0..blocks.len())
            .map(|i| {
                let mut out = BTreeSet::new();
                for &v in &blocks[i] {
                    for &u in graph.neighbors(v) {
                        if let Some(j) = block_of[u] {
                            if j != i {
                                out.insert(j);
                            }
                        }
                    }
                }
                out.into_iter().collect()
            })
            .collect();
        Ok(Blocking {
            blocks,
            plans,
            block_of,
            neighbors,
            universe: universe.to_vec(),
        })
    }

    /// One block per variable.
    pub fn singletons(net: &MarkovNetwork, graph: &PrimalGraph, universe: &[VarId]) -> Result<Self, SamplingError> {
        Self::new(net, graph, universe, universe.iter().map(|&v| vec![v]).collect(), None)
    }

    pub fn blocks(&self) -> &[Vec<VarId>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn plan(&self, i: usize) -> &ConditionalPlan {
        &self.plans[i]
    }

    pub fn block_of(&self, var: VarId) -> Option<usize> {
        self.block_of.get(var).copied().flatten()
    }

    /// Blocks holding a neighbor of some member of block `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn universe(&self) -> &[VarId] {
        &self.universe
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSelection {
    #[default]
    Uniform,
    SizeProportional,
}

impl BlockSelection {
    fn choose<R: Rng + ?Sized>(self, blocking: &Blocking, rng: &mut R) -> usize {
        match self {
            BlockSelection::Uniform => rng.random_range(0..blocking.len()),
            BlockSelection::SizeProportional => {
                let v = blocking.universe[rng.random_range(0..blocking.universe.len())];
                blocking.block_of(v).expect("universe is covered")
            }
        }
    }

    fn probability(self, blocking: &Blocking, i: usize) -> f64 {
        match self {
            BlockSelection::Uniform => 1.0 / blocking.len() as f64,
            BlockSelection::SizeProportional => blocking.blocks[i].len() as f64 / blocking.universe.len() as f64,
        }
    }
}

/// Unnormalized P(var | rest of `state`) from the factors mentioning
/// `var`, written into `buf`.
pub fn single_site_conditional(net: &MarkovNetwork, var: VarId, state: &[usize], buf: &mut Vec<f64>) {
    buf.clear();
    buf.resize(net.cardinality(var), 1.0);
    for &fi in net.factors_of(var) {
        let f = &net.factors()[fi];
        let mut base = 0;
        let mut stride = 0;
        for (p, &v) in f.scope().iter().enumerate() {
            if v == var {
                stride = f.strides()[p];
            } else {
                base += state[v] * f.strides()[p];
            }
        }
        let table = f.table();
        let mut max = 0.0f64;
        for (x, b) in buf.iter_mut().enumerate() {
            *b *= table[base + x * stride];
            max = max.max(*b);
        }
        if max > 0.0 && max != 1.0 {
            for b in buf.iter_mut() {
                *b /= max;
            }
        }
    }
}

/// Normalized [`single_site_conditional`], or `None` on zero mass.
pub fn site_distribution(net: &MarkovNetwork, var: VarId, state: &[usize]) -> Option<Vec<f64>> {
    let mut buf = Vec::new();
    single_site_conditional(net, var, state, &mut buf);
    let total: f64 = buf.iter().sum();
    (total > 0.0).then(|| buf.iter().map(|w| w / total).collect())
}

/// ln of the unnormalized probability of a full state; `-inf` if zero.
pub fn log_weight(net: &MarkovNetwork, state: &[usize]) -> f64 {
    net.factors()
        .iter()
        .map(|f| f.table()[f.index_of_state(state)].ln() + f.log_scale())
        .sum()
}

/// A random-scan blocked Gibbs kernel over a fixed blocking.
#[derive(Debug)]
pub struct BlockedGibbs<'a> {
    net: &'a MarkovNetwork,
    blocking: &'a Blocking,
    selection: BlockSelection,
    zero_mass: u64,
    buf: Vec<f64>,
    memos: KernelMemos,
}

/// Per-block caches of block conditionals keyed by the block's context.
pub type KernelMemos = Vec<Option<ContextMemo<BlockConditional>>>;

/// Table entries a single block's conditional cache may hold.
const MEMO_ENTRIES: usize = 1 << 21;

impl<'a> BlockedGibbs<'a> {
    pub fn new(net: &'a MarkovNetwork, blocking: &'a Blocking, selection: BlockSelection) -> Self {
        Self::with_memos(net, blocking, selection, None)
    }

    /// Kernel reusing conditional caches from an earlier kernel over the
    /// same network and blocking.
    pub fn with_memos(net: &'a MarkovNetwork, blocking: &'a Blocking, selection: BlockSelection, memos: Option<KernelMemos>) -> Self {
        let memos = memos.unwrap_or_else(|| {
            blocking
                .plans
                .iter()
                .zip(&blocking.blocks)
                .map(|(plan, block)| (block.len() > 1).then(|| ContextMemo::new(plan.context(net), net.cardinalities(), 1)))
                .collect()
        });
        BlockedGibbs {
            net,
            blocking,
            selection,
            zero_mass: 0,
            buf: Vec::new(),
            memos,
        }
    }

    pub fn into_memos(self) -> KernelMemos {
        self.memos
    }

    pub fn blocking(&self) -> &Blocking {
        self.blocking
    }

    /// Conditionals that had zero mass; the block kept its values.
    pub fn zero_mass_events(&self) -> u64 {
        self.zero_mass
    }

    /// Picks a block and resamples it. Returns the block index.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, state: &mut [usize]) -> usize {
        let b = self.selection.choose(self.blocking, rng);
        self.resample_block(b, rng, state);
        b
    }

    pub fn resample_block<R: Rng + ?Sized>(&mut self, b: usize, rng: &mut R, state: &mut [usize]) {
        let block = &self.blocking.blocks[b];
        if block.len() == 1 {
            let v = block[0];
            single_site_conditional(self.net, v, state, &mut self.buf);
            match sample_index(&self.buf, rng) {
                Some(x) => state[v] = x,
                None => self.zero_mass += 1,
            }
            return;
        }
        let plan = &self.blocking.plans[b];
        let memo = self.memos[b].as_mut().expect("multi-variable block");
        let Some(key) = memo.key(state) else {
            match plan.conditional(self.net, state) {
                Ok(cond) => cond.sample_into(rng, state),
                Err(_) => self.zero_mass += 1,
            }
            return;
        };
        if memo.get(key).is_none() {
            match plan.conditional(self.net, state) {
                Ok(cond) => {
                    if memo.is_empty() {
                        memo.set_capacity(MEMO_ENTRIES / cond.table_entries().max(1));
                    }
                    memo.insert(key, cond);
                }
                Err(_) => {
                    self.zero_mass += 1;
                    return;
                }
            }
        }
        memo.get(key).expect("just inserted").sample_into(rng, state);
    }

    /// One-step transition probabilities from `state`: every reachable
    /// successor with its probability (successors may repeat across
    /// blocks).
    pub fn transitions(&mut self, state: &[usize]) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        for b in 0..self.blocking.len() {
            let select = self.selection.probability(self.blocking, b);
            let block = &self.blocking.blocks[b];
            let cond = if block.len() == 1 {
                None
            } else {
                match self.blocking.plans[b].conditional(self.net, state) {
                    Ok(c) => Some(c),
                    Err(_) => {
                        out.push((state.to_vec(), select));
                        continue;
                    }
                }
            };
            if block.len() == 1 {
                match site_distribution(self.net, block[0], state) {
                    Some(dist) => {
                        for (x, p) in dist.into_iter().enumerate() {
                            let mut next = state.to_vec();
                            next[block[0]] = x;
                            out.push((next, select * p));
                        }
                    }
                    None => out.push((state.to_vec(), select)),
                }
                continue;
            }
            let cond = cond.expect("multi-variable block");
            let mut next = state.to_vec();
            for v in block {
                next[*v] = 0;
            }
            loop {
                out.push((next.clone(), select * cond.probability_of(&next)));
                if !advance(&mut next, block, self.net) {
                    break;
                }
            }
        }
        out
    }
}

/// Odometer step over the values of `vars`; false after the last one.
fn advance(state: &mut [usize], vars: &[VarId], net: &MarkovNetwork) -> bool {
    for &v in vars.iter().rev() {
        state[v] += 1;
        if state[v] < net.cardinality(v) {
            return true;
        }
        state[v] = 0;
    }
    false
}

/// One random-scan single-site Gibbs step over `universe`.
pub fn gibbs_step<R: Rng + ?Sized>(
    net: &MarkovNetwork,
    universe: &[VarId],
    rng: &mut R,
    state: &mut [usize],
    buf: &mut Vec<f64>,
) -> bool {
    let v = universe[rng.random_range(0..universe.len())];
    single_site_conditional(net, v, state, buf);
    match sample_index(buf, rng) {
        Some(x) => {
            state[v] = x;
            true
        }
        None => false,
    }
}

/// A positive-probability starting state. Variables are drawn along a
/// min-fill order from the product of factors whose scope is already
/// assigned, with up to 100 attempts.
pub fn initial_state<R: Rng + ?Sized>(
    net: &MarkovNetwork,
    graph: &PrimalGraph,
    universe: &[VarId],
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    let allowed: BTreeSet<VarId> = universe.iter().copied().collect();
    let order = graph.minfill_order::<R>(Some(&allowed), None);
    let mut state = vec![0; net.num_variables()];
    for (v, x) in net.evidence().iter() {
        state[v] = x;
    }
    let mut buf = Vec::new();
    for _ in 0..100 {
        let mut assigned = vec![true; net.num_variables()];
        for &v in &order {
            assigned[v] = false;
        }
        for &v in &order {
            buf.clear();
            buf.resize(net.cardinality(v), 1.0);
            for &fi in net.factors_of(v) {
                let f = &net.factors()[fi];
                if !f.scope().iter().all(|&u| u == v || assigned[u]) {
                    continue;
                }
                for (x, b) in buf.iter_mut().enumerate() {
                    state[v] = x;
                    *b *= f.table()[f.index_of_state(&state)];
                }
                let max = buf.iter().fold(0.0f64, |m, &w| m.max(w));
                if max > 0.0 {
                    buf.iter_mut().for_each(|b| *b /= max);
                }
            }
            state[v] = match sample_index(&buf, rng) {
                Some(x) => x,
                None => rng.random_range(0..net.cardinality(v)),
            };
            assigned[v] = true;
        }
        if log_weight(net, &state) > f64::NEG_INFINITY {
            return Ok(state);
        }
    }
    Err(SamplingError::ZeroMassStart)
}

/// Per-variable weighted sums of distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    sums: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl MarginalEstimate {
    pub fn new(cards: &[usize]) -> Self {
        MarginalEstimate {
            sums: cards.iter().map(|&c| vec![0.0; c]).collect(),
            weights: vec![0.0; cards.len()],
        }
    }

    pub fn add_indicator(&mut self, var: VarId, value: usize, weight: f64) {
        self.sums[var][value] += weight;
        self.weights[var] += weight;
    }

    pub fn add_distribution(&mut self, var: VarId, dist: &[f64], weight: f64) {
        for (s, p) in self.sums[var].iter_mut().zip(dist) {
            *s += weight * p;
        }
        self.weights[var] += weight;
    }

    pub fn weight(&self, var: VarId) -> f64 {
        self.weights[var]
    }

    /// Normalized estimate for `var`, `None` before any update.
    pub fn distribution(&self, var: VarId) -> Option<Vec<f64>> {
        let w = self.weights[var];
        (w > 0.0).then(|| self.sums[var].iter().map(|s| s / w).collect())
    }
}

/// Frequency of each value of `var` across `samples`.
pub fn estimate_histogram(samples: &[Vec<usize>], var: VarId, card: usize) -> Vec<f64> {
    let mut est = MarginalEstimate::new(&vec![card; var + 1]);
    for s in samples {
        est.add_indicator(var, s[var], 1.0);
    }
    est.distribution(var).unwrap_or_else(|| vec![0.0; card])
}

/// Mean of per-sample conditionals given the Markov blanket.
pub fn estimate_mixture(conditionals: &[Vec<f64>]) -> Vec<f64> {
    mean(conditionals)
}

/// Mean of per-sample conditionals given a sampled set R.
pub fn estimate_rb(conditionals: &[Vec<f64>]) -> Vec<f64> {
    mean(conditionals)
}

fn mean(dists: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = dists.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for d in dists {
        for (o, p) in out.iter_mut().zip(d) {
            *o += p;
        }
    }
    let n = dists.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elim::exact_marginals;
    use crate::model::Factor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f(scope: &[VarId], table: &[f64]) -> Factor {
        Factor::new(scope.to_vec(), vec![2; scope.len()], table.to_vec()).unwrap()
    }

    fn chain3() -> MarkovNetwork {
        MarkovNetwork::new(
            vec![2, 2, 2],
            vec![f(&[0, 1], &[3.0, 1.0, 1.0, 2.0]), f(&[1, 2], &[1.0, 4.0, 2.0, 1.0]), f(&[0], &[1.0, 2.0])],
        )
        .unwrap()
    }

    fn joint(net: &MarkovNetwork) -> Vec<f64> {
        let n = net.num_variables();
        let w: Vec<f64> = (0..1usize << n)
            .map(|code| net.evaluate_state(&decode(code, n)))
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    fn decode(code: usize, n: usize) -> Vec<usize> {
        (0..n).map(|v| (code >> (n - 1 - v)) & 1).collect()
    }

    fn encode(state: &[usize]) -> usize {
        state.iter().fold(0, |acc, &x| acc * 2 + x)
    }

    fn assert_stationary(net: &MarkovNetwork, blocks: Vec<Vec<VarId>>) {
        let graph = PrimalGraph::from_network(net);
        let universe = net.sampling_universe();
        let blocking = Blocking::new(net, &graph, &universe, blocks, None).unwrap();
        let mut kernel = BlockedGibbs::new(net, &blocking, BlockSelection::Uniform);
        let p = joint(net);
        let n = net.num_variables();
        let mut next = vec![0.0; p.len()];
        for (code, &px) in p.iter().enumerate() {
            for (s, k) in kernel.transitions(&decode(code, n)) {
                next[encode(&s)] += px * k;
            }
        }
        for (a, b) in p.iter().zip(&next) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernels_are_stationary() {
        assert_stationary(&chain3(), vec![vec![0], vec![1], vec![2]]);
        assert_stationary(&chain3(), vec![vec![0, 1], vec![2]]);
        assert_stationary(&chain3(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn single_variable_frequency() {
        let net = MarkovNetwork::new(vec![2], vec![f(&[0], &[1.0, 3.0])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = vec![0];
        let mut buf = Vec::new();
        let mut ones = 0;
        for _ in 0..100_000 {
            gibbs_step(&net, &[0], &mut rng, &mut state, &mut buf);
            ones += state[0];
        }
        assert!((ones as f64 / 100_000.0 - 0.75).abs() < 0.01);
    }

    #[test]
    fn site_conditional_example() {
        let net = MarkovNetwork::new(vec![2, 2], vec![f(&[0, 1], &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        let d = site_distribution(&net, 0, &[0, 1]).unwrap();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12 && (d[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_block_draws_exact_samples() {
        let net = chain3();
        let graph = PrimalGraph::from_network(&net);
        let blocking = Blocking::new(&net, &graph, &[0, 1, 2], vec![vec![0, 1, 2]], Some(2)).unwrap();
        let mut kernel = BlockedGibbs::new(&net, &blocking, BlockSelection::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut state = vec![0; 3];
        let mut est = MarginalEstimate::new(&[2, 2, 2]);
        for _ in 0..50_000 {
            kernel.step(&mut rng, &mut state);
            for v in 0..3 {
                est.add_indicator(v, state[v], 1.0);
            }
        }
        let exact = exact_marginals(&net).unwrap();
        for v in 0..3 {
            assert!((est.distribution(v).unwrap()[1] - exact[v][1]).abs() < 0.01);
        }
    }

    #[test]
    fn blocking_validation() {
        let net = chain3();
        let g = PrimalGraph::from_network(&net);
        let u = [0, 1, 2];
        assert_eq!(
            Blocking::new(&net, &g, &u, vec![vec![0, 1], vec![1, 2]], None).unwrap_err(),
            SamplingError::Overlap(1)
        );
        assert_eq!(Blocking::new(&net, &g, &u, vec![vec![0, 1]], None).unwrap_err(), SamplingError::Uncovered(2));
        assert_eq!(Blocking::new(&net, &g, &[0, 1], vec![vec![0, 1, 2]], None).unwrap_err(), SamplingError::Foreign(2));
        assert!(matches!(
            Blocking::new(&net, &g, &u, vec![vec![0, 1, 2]], Some(0)),
            Err(SamplingError::TooWide { block: 0, width: 1, beta: 0 })
        ));
        let b = Blocking::new(&net, &g, &u, vec![vec![0, 1], vec![2]], None).unwrap();
        assert_eq!(b.neighbors(0), &[1]);
        assert_eq!(b.block_of(2), Some(1));
    }

    #[test]
    fn zero_mass_keeps_state_and_counts() {
        // A = B and A != B at once: every conditional is empty
        let net = MarkovNetwork::new(
            vec![2, 2],
            vec![f(&[0, 1], &[1.0, 0.0, 0.0, 1.0]), f(&[0, 1], &[0.0, 1.0, 1.0, 0.0])],
        )
        .unwrap();
        let g = PrimalGraph::from_network(&net);
        for blocks in [vec![vec![0], vec![1]], vec![vec![0, 1]]] {
            let blocking = Blocking::new(&net, &g, &[0, 1], blocks, None).unwrap();
            let mut kernel = BlockedGibbs::new(&net, &blocking, BlockSelection::Uniform);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut state = vec![0, 1];
            for _ in 0..10 {
                kernel.step(&mut rng, &mut state);
            }
            assert_eq!(state, vec![0, 1]);
            assert_eq!(kernel.zero_mass_events(), 10);
        }
    }

    #[test]
    fn initial_state_respects_determinism() {
        let net = MarkovNetwork::new(
            vec![2, 2, 2],
            vec![f(&[0, 1], &[1.0, 0.0, 0.0, 1.0]), f(&[1, 2], &[0.0, 1.0, 1.0, 0.0])],
        )
        .unwrap();
        let g = PrimalGraph::from_network(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = initial_state(&net, &g, &[0, 1, 2], &mut rng).unwrap();
            assert!(net.evaluate_state(&s) > 0.0);
        }
    }

    #[test]
    fn estimator_examples() {
        let samples = vec![vec![1], vec![0], vec![1]];
        let h = estimate_histogram(&samples, 0, 2);
        assert!((h[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(estimate_mixture(&[vec![0.6, 0.4], vec![0.4, 0.6]]), vec![0.5, 0.5]);
    }

    #[test]
    fn rb_equals_mixture_when_rest_is_blanket() {
        let net = MarkovNetwork::new(vec![2, 2], vec![f(&[0, 1], &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        let states = [vec![0, 0], vec![0, 1], vec![1, 1]];
        let mixture: Vec<Vec<f64>> = states.iter().map(|s| site_distribution(&net, 0, s).unwrap()).collect();
        let plan = ConditionalPlan::new(&net, vec![0]);
        let rb: Vec<Vec<f64>> = states
            .iter()
            .map(|s| plan.conditional(&net, s).unwrap().marginals().unwrap().remove(0))
            .collect();
        let (m, r) = (estimate_mixture(&mixture), estimate_rb(&rb));
        for (a, b) in m.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
