//! Correlation statistics, blocking/collapsing scores, and the greedy
//! collapse and block optimizers.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::graph::PrimalGraph;
use crate::model::VarId;

/// Sampling-universe size above which pairs are subsampled.
pub const ALL_PAIRS_LIMIT: usize = 400;

/// Hellinger distance between two distributions over the same support.
pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// D for a `da x db` joint table (row-major, first variable slowest),
/// measured against the product of its own marginals.
pub fn hellinger_tables(joint: &[f64], da: usize, db: usize) -> f64 {
    let total: f64 = joint.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut pa = vec![0.0; da];
    let mut pb = vec![0.0; db];
    for i in 0..da {
        for j in 0..db {
            let p = joint[i * db + j] / total;
            pa[i] += p;
            pb[j] += p;
        }
    }
    let mut sum = 0.0;
    for i in 0..da {
        for j in 0..db {
            let d = (joint[i * db + j] / total).sqrt() - (pa[i] * pb[j]).sqrt();
            sum += d * d;
        }
    }
    (sum / 2.0).sqrt().min(1.0)
}

/// Pairwise correlation D(a, b), symmetric, zero on the diagonal.
pub trait Correlation {
    fn distance(&self, a: VarId, b: VarId) -> f64;
}

/// D = 0 everywhere: the graph-only cold start.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformCorrelation;

impl Correlation for UniformCorrelation {
    fn distance(&self, _: VarId, _: VarId) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    AllPairs,
    /// Pairs within graph distance two plus a random 1% of the rest.
    LocalPlusRandom,
}

/// Running 1- and 2-variable marginal estimates.
///
/// Pair tables are co-occurrence counts over sampled states, accumulated
/// lazily: a pair's current joint value only changes when one of its
/// variables does, so counts are flushed on change.
#[derive(Debug, Clone)]
pub struct CorrelationStats {
    cards: Vec<usize>,
    one_var: Vec<Vec<f64>>,
    policy: PairPolicy,
    pairs: Vec<(VarId, VarId)>,
    index: HashMap<(VarId, VarId), usize>,
    pairs_of: Vec<Vec<usize>>,
    counts: Vec<Vec<f64>>,
    d: Vec<f64>,
    staleness: Vec<u32>,
    active: Vec<bool>,
    last_flush: Vec<u64>,
    exec: Exec,
}

impl CorrelationStats {
    /// Chooses tracked pairs among `universe` by the size policy.
    pub fn new<R: Rng + ?Sized>(cards: &[usize], graph: &PrimalGraph, universe: &[VarId], rng: &mut R) -> Self {
        let mut pairs = Vec::new();
        let policy = if universe.len() <= ALL_PAIRS_LIMIT {
            for (i, &a) in universe.iter().enumerate() {
                for &b in &universe[i + 1..] {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
            PairPolicy::AllPairs
        } else {
            let mut local = BTreeSet::new();
            for &a in universe {
                for &b in graph.neighbors(a) {
                    local.insert((a.min(b), a.max(b)));
                    for &c in graph.neighbors(b) {
                        if c != a {
                            local.insert((a.min(c), a.max(c)));
                        }
                    }
                }
            }
            let mut rest = Vec::new();
            for (i, &a) in universe.iter().enumerate() {
                for &b in &universe[i + 1..] {
                    let key = (a.min(b), a.max(b));
                    if !local.contains(&key) {
                        rest.push(key);
                    }
                }
            }
            let extra = rest.len().div_ceil(100);
            let mut picked: Vec<usize> = sample(rng, rest.len(), extra).into_vec();
            picked.sort_unstable();
            pairs.extend(local);
            pairs.extend(picked.into_iter().map(|i| rest[i]));
            PairPolicy::LocalPlusRandom
        };
        Self::with_pairs(cards, pairs, policy)
    }

    /// Stats over an explicit pair list.
    pub fn with_pairs(cards: &[usize], pairs: Vec<(VarId, VarId)>, policy: PairPolicy) -> Self {
        let pairs: Vec<(VarId, VarId)> = pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        let mut index = HashMap::with_capacity(pairs.len());
        let mut pairs_of = vec![Vec::new(); cards.len()];
        for (i, &(a, b)) in pairs.iter().enumerate() {
            index.insert((a, b), i);
            pairs_of[a].push(i);
            pairs_of[b].push(i);
        }
        let counts = pairs.iter().map(|&(a, b)| vec![0.0; cards[a] * cards[b]]).collect();
        let n = pairs.len();
        CorrelationStats {
            cards: cards.to_vec(),
            one_var: cards.iter().map(|&c| vec![1.0 / c as f64; c]).collect(),
            policy,
            pairs,
            index,
            pairs_of,
            counts,
            d: vec![0.0; n],
            staleness: vec![0; n],
            active: vec![false; n],
            last_flush: vec![0; n],
            exec: Exec::default(),
        }
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn policy(&self) -> PairPolicy {
        self.policy
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_tracked(&self, a: VarId, b: VarId) -> bool {
        self.index.contains_key(&(a.min(b), a.max(b)))
    }

    pub fn one_var(&self, var: VarId) -> &[f64] {
        &self.one_var[var]
    }

    /// Replaces the 1-variable estimates.
    pub fn set_one_var(&mut self, estimates: &[Vec<f64>]) {
        self.one_var = estimates.to_vec();
    }

    /// Raw co-occurrence counts for a tracked pair, first argument's value
    /// slowest.
    pub fn pair_counts(&self, a: VarId, b: VarId) -> Option<Vec<f64>> {
        let &i = self.index.get(&(a.min(b), a.max(b)))?;
        let c = &self.counts[i];
        if a <= b {
            return Some(c.clone());
        }
        let (da, db) = (self.cards[b], self.cards[a]);
        let mut t = vec![0.0; c.len()];
        for x in 0..da {
            for y in 0..db {
                t[y * da + x] = c[x * db + y];
            }
        }
        Some(t)
    }

    /// Add-one smoothed joint estimate for a tracked pair.
    pub fn pair_estimate(&self, a: VarId, b: VarId) -> Option<Vec<f64>> {
        let counts = self.pair_counts(a, b)?;
        let total: f64 = counts.iter().sum::<f64>() + counts.len() as f64;
        Some(counts.iter().map(|c| (c + 1.0) / total).collect())
    }

    /// Rounds since a pair was last sampled.
    pub fn staleness(&self, a: VarId, b: VarId) -> Option<u32> {
        self.index.get(&(a.min(b), a.max(b))).map(|&i| self.staleness[i])
    }

    /// Starts counting for pairs whose variables are both sampled.
    pub fn begin_round(&mut self, sampled: &[bool]) {
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            self.active[i] = sampled[a] && sampled[b];
            self.last_flush[i] = 0;
        }
    }

    /// Credits the pairs of `var` with their joint value in `prev` for
    /// every sample since their last flush. Call before `var` changes.
    pub fn flush_var(&mut self, var: VarId, prev: &[usize], now: u64) {
        for &i in &self.pairs_of[var] {
            if self.active[i] {
                let (a, b) = self.pairs[i];
                let n = now - self.last_flush[i];
                if n > 0 {
                    self.counts[i][prev[a] * self.cards[b] + prev[b]] += n as f64;
                }
                self.last_flush[i] = now;
            }
        }
    }

    /// Counts one state for every active pair.
    pub fn add_sample(&mut self, state: &[usize]) {
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            if self.active[i] {
                self.counts[i][state[a] * self.cards[b] + state[b]] += 1.0;
            }
        }
    }

    /// Flushes every active pair at `now`, ages inactive ones, and refreshes
    /// D for the pairs that received samples.
    pub fn end_round(&mut self, prev: &[usize], now: u64) {
        for i in 0..self.pairs.len() {
            if self.active[i] {
                let (a, b) = self.pairs[i];
                let n = now - self.last_flush[i];
                if n > 0 {
                    self.counts[i][prev[a] * self.cards[b] + prev[b]] += n as f64;
                }
                self.last_flush[i] = now;
                self.staleness[i] = 0;
            } else {
                self.staleness[i] += 1;
            }
        }
        self.refresh();
    }

    /// Recomputes D for active pairs.
    pub fn refresh(&mut self) {
        let (pairs, counts, cards, active) = (&self.pairs, &self.counts, &self.cards, &self.active);
        self.exec.for_each_mut(&mut self.d, |i, d| {
            if active[i] {
                let (a, b) = pairs[i];
                let smoothed: Vec<f64> = counts[i].iter().map(|c| c + 1.0).collect();
                *d = hellinger_tables(&smoothed, cards[a], cards[b]);
            }
        });
    }
}

impl Correlation for CorrelationStats {
    fn distance(&self, a: VarId, b: VarId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.index.get(&(a.min(b), a.max(b))).map_or(0.0, |&i| self.d[i])
    }
}

/// Blocking score: intra-block pair correlations averaged over
/// blocks.
pub fn score_blocking<C: Correlation + ?Sized>(stats: &C, blocks: &[Vec<VarId>]) -> f64 {
    if blocks.is_empty() {
        return 0.0;
    }
    let total: f64 = blocks.iter().map(|b| intra(stats, b)).sum();
    total / blocks.len() as f64
}

fn intra<C: Correlation + ?Sized>(stats: &C, block: &[VarId]) -> f64 {
    let mut s = 0.0;
    for (i, &a) in block.iter().enumerate() {
        for &b in &block[i + 1..] {
            s += stats.distance(a, b);
        }
    }
    s
}

fn cross<C: Correlation + ?Sized>(stats: &C, x: &[VarId], y: &[VarId]) -> f64 {
    x.iter().map(|&a| y.iter().map(|&b| stats.distance(a, b)).sum::<f64>()).sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseScore {
    /// The inner sum runs over every variable not collapsed before C_i.
    #[default]
    Literal,
    /// The inner sum runs over the variables that stay uncollapsed.
    RetainedOnly,
}

/// Collapsing score of an ordered collapse set over `universe`.
pub fn score_collapsing<C: Correlation + ?Sized>(
    stats: &C,
    order: &[VarId],
    universe: &[VarId],
    mode: CollapseScore,
) -> f64 {
    let collapsed: BTreeSet<VarId> = order.iter().copied().collect();
    let retained: Vec<VarId> = universe.iter().copied().filter(|v| !collapsed.contains(v)).collect();
    let mut removed = BTreeSet::new();
    let mut score = 0.0;
    for &c in order {
        let rest: Vec<VarId> = match mode {
            CollapseScore::Literal => universe.iter().copied().filter(|v| !removed.contains(v)).collect(),
            CollapseScore::RetainedOnly => retained.clone(),
        };
        if !rest.is_empty() {
            score += rest.iter().map(|&x| stats.distance(c, x)).sum::<f64>() / rest.len() as f64;
        }
        removed.insert(c);
    }
    score
}

/// Mean correlation of `x` with every variable of `universe`.
pub fn psi_single<C: Correlation + ?Sized>(stats: &C, x: VarId, universe: &[VarId]) -> f64 {
    if universe.is_empty() {
        return 0.0;
    }
    universe.iter().map(|&u| stats.distance(x, u)).sum::<f64>() / universe.len() as f64
}

/// Collapse heuristic: correlation plus the fraction of the fill budget
/// C(alpha, 2) left unused by eliminating the vertex.
pub fn chi(psi: f64, fill: usize, alpha: usize) -> f64 {
    let pairs = alpha * alpha.saturating_sub(1) / 2;
    let bracket = if pairs == 0 {
        if fill == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (pairs as f64 - fill as f64) / pairs as f64
    };
    psi + bracket
}

/// Greedy collapse set selection. Repeatedly eliminates the vertex of
/// maximal chi among those with degree at most `alpha` whose fill keeps
/// the running total within `gamma`. Returns the order and the total
/// fill.
pub fn greedy_collapse<C: Correlation + ?Sized, R: Rng + ?Sized>(
    graph: &PrimalGraph,
    universe: &[VarId],
    stats: &C,
    alpha: usize,
    gamma: usize,
    rng: &mut R,
) -> (Vec<VarId>, usize) {
    let psi: HashMap<VarId, f64> = universe.iter().map(|&x| (x, psi_single(stats, x, universe))).collect();
    let mut g = graph.clone();
    let mut remaining: BTreeSet<VarId> = universe.iter().copied().filter(|&v| g.contains(v)).collect();
    let mut fill: HashMap<VarId, usize> = remaining.iter().map(|&v| (v, g.fill_in(v))).collect();
    let mut order = Vec::new();
    let mut total = 0;
    let mut ties = Vec::new();
    loop {
        let mut best = f64::NEG_INFINITY;
        ties.clear();
        for &v in &remaining {
            let e = fill[&v];
            if g.degree(v) > alpha || total + e > gamma {
                continue;
            }
            let score = chi(psi[&v], e, alpha);
            match score.partial_cmp(&best) {
                Some(Ordering::Greater) => {
                    best = score;
                    ties.clear();
                    ties.push(v);
                }
                Some(Ordering::Equal) => ties.push(v),
                _ => {}
            }
        }
        if ties.is_empty() {
            break;
        }
        let pick = ties[rng.random_range(0..ties.len())];
        let mut touched = BTreeSet::new();
        for &a in g.neighbors(pick) {
            touched.insert(a);
            touched.extend(g.neighbors(a).iter().copied());
        }
        total += g.eliminate(pick).expect("vertex present");
        remaining.remove(&pick);
        for u in touched {
            if remaining.contains(&u) {
                fill.insert(u, g.fill_in(u));
            }
        }
        order.push(pick);
    }
    (order, total)
}

#[derive(Debug, PartialEq)]
struct Candidate {
    gain: f64,
    tiebreak: u64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then(self.tiebreak.cmp(&other.tiebreak))
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

/// Greedy block merging on `graph` (the collapsed primal graph). Starting
/// from singletons over `universe`, merges the Markov-blanket-adjacent pair
/// that maximizes the blocking score, subject to the union's treewidth
/// bound being at most `beta`. Returns blocks and the score after each
/// merge.
pub fn greedy_block<C: Correlation + ?Sized, R: Rng + ?Sized>(
    graph: &PrimalGraph,
    universe: &[VarId],
    stats: &C,
    beta: usize,
    rng: &mut R,
) -> (Vec<Vec<VarId>>, Vec<f64>) {
    let mut blocks: Vec<Option<Vec<VarId>>> = universe.iter().map(|&v| Some(vec![v])).collect();
    let mut version = vec![0u32; blocks.len()];
    let mut owner = vec![usize::MAX; graph.capacity()];
    for (i, &v) in universe.iter().enumerate() {
        owner[v] = i;
    }
    let adjacent = |blocks: &[Option<Vec<VarId>>], owner: &[usize], i: usize| -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &v in blocks[i].as_ref().expect("live block") {
            for &u in graph.neighbors(v) {
                let j = owner[u];
                if j != usize::MAX && j != i {
                    out.insert(j);
                }
            }
        }
        out
    };
    let mut heap = BinaryHeap::new();
    for i in 0..blocks.len() {
        for j in adjacent(&blocks, &owner, i) {
            if i < j {
                let gain = cross(stats, blocks[i].as_ref().unwrap(), blocks[j].as_ref().unwrap());
                heap.push(Candidate {
                    gain,
                    tiebreak: rng.random(),
                    a: i,
                    b: j,
                    va: 0,
                    vb: 0,
                });
            }
        }
    }
    let mut live = blocks.len();
    let mut sum = 0.0;
    let mut trace = Vec::new();
    while let Some(c) = heap.pop() {
        if blocks[c.a].is_none() || blocks[c.b].is_none() || version[c.a] != c.va || version[c.b] != c.vb {
            continue;
        }
        let mut union = blocks[c.a].clone().unwrap();
        union.extend(blocks[c.b].as_ref().unwrap());
        if graph.induced(&union).treewidth_ub() > beta {
            continue;
        }
        union.sort_unstable();
        for &v in blocks[c.b].as_ref().unwrap() {
            owner[v] = c.a;
        }
        blocks[c.b] = None;
        blocks[c.a] = Some(union);
        version[c.a] += 1;
        live -= 1;
        sum += c.gain;
        trace.push(sum / live as f64);
        for j in adjacent(&blocks, &owner, c.a) {
            let gain = cross(stats, blocks[c.a].as_ref().unwrap(), blocks[j].as_ref().unwrap());
            let (a, b) = (c.a.min(j), c.a.max(j));
            heap.push(Candidate {
                gain,
                tiebreak: rng.random(),
                a,
                b,
                va: version[a],
                vb: version[b],
            });
        }
    }
    (blocks.into_iter().flatten().collect(), trace)
}

/// Blocks plus an ordered collapse set, with the quantities the
/// feasibility constraints bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub blocks: Vec<Vec<VarId>>,
    pub collapsed: Vec<VarId>,
    pub collapse_width: usize,
    pub fill_edges: usize,
    pub block_widths: Vec<usize>,
}

impl Partition {
    /// Computes widths from `graph` (the uncollapsed primal graph over the
    /// sampling universe).
    pub fn new(graph: &PrimalGraph, collapsed: Vec<VarId>, blocks: Vec<Vec<VarId>>) -> Self {
        let mut g = graph.clone();
        let mut width = 0;
        let mut fill = 0;
        for &c in &collapsed {
            width = width.max(g.degree(c));
            fill += g.eliminate(c).expect("collapse order is valid");
        }
        let block_widths = blocks.iter().map(|b| g.induced(b).treewidth_ub()).collect();
        Partition {
            blocks,
            collapsed,
            collapse_width: width,
            fill_edges: fill,
            block_widths,
        }
    }

    /// Collapse set and blocks with all ordering removed. Partitions with
    /// equal keys define the same sampler.
    pub fn canonical(&self) -> (Vec<VarId>, Vec<Vec<VarId>>) {
        let mut collapsed = self.collapsed.clone();
        collapsed.sort_unstable();
        let mut blocks: Vec<Vec<VarId>> = self
            .blocks
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort_unstable();
        (collapsed, blocks)
    }

    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "collapsed: {}", join(&self.collapsed));
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "block {i}: {}", join(b));
        }
        let _ = writeln!(
            out,
            "width: {} E: {} tw: {}",
            self.collapse_width,
            self.fill_edges,
            join(&self.block_widths)
        );
        out
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Collapse then block with the given correlation source. `collapse`
/// false forces C empty.
pub fn choose_partition<C: Correlation + ?Sized, R: Rng + ?Sized>(
    graph: &PrimalGraph,
    universe: &[VarId],
    stats: &C,
    params: (usize, usize, usize),
    collapse: bool,
    rng: &mut R,
) -> Partition {
    let (alpha, beta, gamma) = params;
    let (order, _) = if collapse {
        greedy_collapse(graph, universe, stats, alpha, gamma, rng)
    } else {
        (Vec::new(), 0)
    };
    let mut g = graph.clone();
    for &c in &order {
        g.eliminate(c).expect("vertex present");
    }
    let collapsed: BTreeSet<VarId> = order.iter().copied().collect();
    let kept: Vec<VarId> = universe.iter().copied().filter(|v| !collapsed.contains(v)).collect();
    let (blocks, _) = greedy_block(&g, &kept, stats, beta, rng);
    Partition::new(graph, order, blocks)
}

/// Graph-only partition: min-fill collapse constrained by alpha and gamma,
/// then random MB-adjacent merges bounded by beta.
pub fn cold_start_partition<R: Rng + ?Sized>(
    graph: &PrimalGraph,
    universe: &[VarId],
    alpha: usize,
    beta: usize,
    gamma: usize,
    collapse: bool,
    rng: &mut R,
) -> Partition {
    choose_partition(graph, universe, &UniformCorrelation, (alpha, beta, gamma), collapse, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Table(HashMap<(VarId, VarId), f64>);

    impl Table {
        fn new(entries: &[(VarId, VarId, f64)]) -> Self {
            Table(entries.iter().map(|&(a, b, d)| ((a.min(b), a.max(b)), d)).collect())
        }
    }

    impl Correlation for Table {
        fn distance(&self, a: VarId, b: VarId) -> f64 {
            *self.0.get(&(a.min(b), a.max(b))).unwrap_or(&0.0)
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger_tables(&[0.25; 4], 2, 2), 0.0);
        let d = hellinger_tables(&[0.5, 0.0, 0.0, 0.5], 2, 2);
        let oracle = (0.5 * (2.0 * (0.5f64.sqrt() - 0.5).powi(2) + 2.0 * 0.25)).sqrt();
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 0.541196).abs() < 1e-6);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((hellinger(&[0.5, 0.5], &[0.25, 0.75]) - 0.1845919).abs() < 1e-7);
    }

    #[test]
    fn blocking_score_examples() {
        let t = Table::new(&[(0, 1, 0.5), (2, 3, 0.2)]);
        assert_eq!(score_blocking(&t, &[vec![0], vec![1], vec![2]]), 0.0);
        assert_eq!(score_blocking(&t, &[vec![0, 1]]), 0.5);
        let t = Table::new(&[(0, 1, 0.4), (2, 3, 0.2)]);
        assert!((score_blocking(&t, &[vec![0, 1], vec![2, 3]]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn collapsing_score_examples() {
        let t = Table::new(&[(0, 1, 0.6)]);
        assert_eq!(score_collapsing(&t, &[], &[0, 1], CollapseScore::Literal), 0.0);
        assert!((score_collapsing(&t, &[0], &[0, 1], CollapseScore::Literal) - 0.3).abs() < 1e-12);
        assert_eq!(score_collapsing(&UniformCorrelation, &[0, 1], &[0, 1], CollapseScore::Literal), 0.0);
        // retained-only divides by the uncollapsed set
        assert!((score_collapsing(&t, &[0], &[0, 1], CollapseScore::RetainedOnly) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi(0.0, 0, 8), 1.0);
        assert!((chi(0.2, 28, 8) - 0.2).abs() < 1e-12);
        assert!((chi(0.2, 14, 8) - 0.7).abs() < 1e-12);
        assert_eq!(chi(0.0, 0, 1), 1.0);
        assert_eq!(chi(0.0, 1, 1), 0.0);
    }

    fn fig1() -> PrimalGraph {
        PrimalGraph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 0), (4, 2), (5, 1), (5, 3)])
    }

    #[test]
    fn greedy_collapse_examples() {
        let tri = PrimalGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(greedy_collapse(&tri, &[0, 1, 2], &UniformCorrelation, 1, 10, &mut rng()).0, Vec::<usize>::new());

        let chain = PrimalGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let (order, e) = greedy_collapse(&chain, &[0, 1, 2], &UniformCorrelation, 1, 10, &mut rng());
        assert_eq!(order.len(), 3);
        assert_ne!(order[0], 1);
        assert_eq!(e, 0);

        let (order, e) = greedy_collapse(&fig1(), &[0, 1, 2, 3, 4, 5], &UniformCorrelation, 2, 2, &mut rng());
        assert!(e <= 2);
        assert!(order[0] == 4 || order[0] == 5);
        assert!(order.len() >= 1);
    }

    #[test]
    fn greedy_collapse_prefix_in_gamma() {
        let g = PrimalGraph::from_edges(
            9,
            &[(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8), (0, 3), (3, 6), (1, 4), (4, 7), (2, 5), (5, 8)],
        );
        let u: Vec<VarId> = (0..9).collect();
        let t = Table::new(&[(0, 1, 0.3), (4, 5, 0.7), (2, 8, 0.1)]);
        let mut prev: Vec<VarId> = Vec::new();
        for gamma in 0..8 {
            let (order, e) = greedy_collapse(&g, &u, &t, 4, gamma, &mut rng());
            assert!(e <= gamma);
            assert!(order.len() >= prev.len());
            assert_eq!(&order[..prev.len()], &prev[..]);
            prev = order;
        }
    }

    #[test]
    fn greedy_block_examples() {
        let empty = PrimalGraph::new(3);
        let (blocks, _) = greedy_block(&empty, &[0, 1, 2], &UniformCorrelation, 4, &mut rng());
        assert_eq!(blocks.len(), 3);

        let chain = PrimalGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let t = Table::new(&[(0, 1, 0.9), (1, 2, 0.1)]);
        let (blocks, trace) = greedy_block(&chain, &[0, 1, 2], &t, 1, &mut rng());
        assert_eq!(blocks, vec![vec![0, 1, 2]]);
        assert!((trace[0] - 0.9 / 2.0).abs() < 1e-12);

        let (blocks, _) = greedy_block(&chain, &[0, 1, 2], &t, 0, &mut rng());
        assert_eq!(blocks.len(), 3);
    }

    #[test]
    fn greedy_block_respects_beta_and_never_lowers_score() {
        let mut edges = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                let v = r * 4 + c;
                if c < 3 {
                    edges.push((v, v + 1));
                }
                if r < 3 {
                    edges.push((v, v + 4));
                }
            }
        }
        let g = PrimalGraph::from_edges(16, &edges);
        let u: Vec<VarId> = (0..16).collect();
        let entries: Vec<(VarId, VarId, f64)> = edges.iter().map(|&(a, b)| (a, b, ((a * 7 + b * 3) % 10) as f64 / 10.0)).collect();
        let t = Table::new(&entries);
        for beta in 0..4 {
            let (blocks, trace) = greedy_block(&g, &u, &t, beta, &mut rng());
            for b in &blocks {
                assert!(g.induced(b).treewidth_ub() <= beta);
            }
            let mut last = 0.0;
            for w in trace {
                assert!(w >= last - 1e-12);
                last = w;
            }
            assert!((score_blocking(&t, &blocks) - last).abs() < 1e-9);
        }
    }

    #[test]
    fn cold_start_edgeless_collapses_everything() {
        let g = PrimalGraph::new(4);
        let p = cold_start_partition(&g, &[0, 1, 2, 3], 8, 8, 400, true, &mut rng());
        assert_eq!(p.collapsed.len(), 4);
        assert!(p.blocks.is_empty());
    }

    #[test]
    fn cold_start_is_seeded() {
        let p1 = cold_start_partition(&fig1(), &[0, 1, 2, 3, 4, 5], 2, 2, 2, true, &mut rng());
        let p2 = cold_start_partition(&fig1(), &[0, 1, 2, 3, 4, 5], 2, 2, 2, true, &mut rng());
        assert_eq!(p1, p2);
        assert!(p1.collapse_width <= 2 && p1.fill_edges <= 2 && p1.block_widths.iter().all(|&w| w <= 2));
        assert!(p1.debug_dump().starts_with("collapsed: "));
    }

    #[test]
    fn pair_counts_match_histograms() {
        let cards = vec![2, 3, 2];
        let mut stats = CorrelationStats::with_pairs(&cards, vec![(0, 1), (1, 2), (0, 2)], PairPolicy::AllPairs);
        stats.begin_round(&[true; 3]);
        let samples = [vec![0, 2, 1], vec![1, 2, 1], vec![1, 0, 0], vec![1, 1, 1], vec![0, 1, 0]];
        let mut prev = samples[0].clone();
        let mut now = 1;
        for s in &samples[1..] {
            for v in 0..3 {
                if s[v] != prev[v] {
                    stats.flush_var(v, &prev, now);
                }
            }
            prev = s.clone();
            now += 1;
        }
        stats.end_round(&prev, now);
        let counts = stats.pair_counts(1, 0).unwrap();
        for y in 0..3 {
            let marginal: f64 = counts[y * 2..y * 2 + 2].iter().sum();
            let hist = samples.iter().filter(|s| s[1] == y).count() as f64;
            assert!((marginal - hist).abs() < 1e-9);
        }
        let mut eager = CorrelationStats::with_pairs(&cards, vec![(0, 1), (1, 2), (0, 2)], PairPolicy::AllPairs);
        eager.begin_round(&[true; 3]);
        for s in &samples {
            eager.add_sample(s);
        }
        eager.end_round(&prev, 0);
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            assert_eq!(stats.pair_counts(a, b), eager.pair_counts(a, b));
            assert!((stats.distance(a, b) - eager.distance(a, b)).abs() < 1e-15);
        }
    }

    #[test]
    fn unsampled_pairs_keep_prior_and_age() {
        let mut stats = CorrelationStats::with_pairs(&[2, 2, 2], vec![(0, 1), (1, 2)], PairPolicy::AllPairs);
        stats.begin_round(&[true, true, false]);
        stats.add_sample(&[1, 1, 0]);
        stats.end_round(&[1, 1, 0], 0);
        assert_eq!(stats.distance(1, 2), 0.0);
        assert_eq!(stats.staleness(1, 2), Some(1));
        assert_eq!(stats.staleness(0, 1), Some(0));
        assert!(stats.distance(0, 1) > 0.0);
        assert_eq!(stats.distance(0, 2), 0.0);
        assert_eq!(stats.distance(1, 1), 0.0);
    }

    #[test]
    fn pair_policy_switches_with_size() {
        let mut r = rng();
        let small = CorrelationStats::new(&[2; 10], &PrimalGraph::new(10), &(0..10).collect::<Vec<_>>(), &mut r);
        assert_eq!(small.policy(), PairPolicy::AllPairs);
        assert_eq!(small.num_pairs(), 45);
        let n = 500;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = PrimalGraph::from_edges(n, &edges);
        let big = CorrelationStats::new(&vec![2; n], &g, &(0..n).collect::<Vec<_>>(), &mut r);
        assert_eq!(big.policy(), PairPolicy::LocalPlusRandom);
        assert!(big.is_tracked(10, 12) && big.is_tracked(11, 10));
        let local = (n - 1) + (n - 2);
        let rest = n * (n - 1) / 2 - local;
        assert_eq!(big.num_pairs(), local + rest.div_ceil(100));
    }
}
