//! Exact inference by bucket elimination.
//!
//! One engine serves four callers: the exact-marginal oracle, model
//! collapsing, joint sampling of a block given its context (upward pass then
//! backward sampling), and Rao-Blackwell queries (upward pass then a
//! downward pass over the bucket tree for all single-variable marginals).

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, PrimalGraph};
use crate::model::{Factor, MarkovNetwork, ModelError, VarId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElimError {
    #[error("elimination width {width} exceeds the feasibility cap {cap}")]
    Infeasible { width: usize, cap: usize },
    #[error("elimination needs about {bytes} bytes of tables, over the budget of {budget}")]
    MemoryBudget { bytes: u128, budget: u128 },
    #[error("collapsing variable {var} has degree {degree}, above the bound {alpha}")]
    WidthExceeded { var: VarId, degree: usize, alpha: usize },
    #[error("conditional distribution has zero total mass")]
    ZeroMass,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Limits for the exact oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feasibility {
    pub max_width: usize,
    pub max_table_bytes: u128,
}

impl Default for Feasibility {
    fn default() -> Self {
        Feasibility {
            max_width: 22,
            max_table_bytes: 1 << 31,
        }
    }
}

/// Factors distributed over buckets along an elimination order. Each factor
/// sits in the bucket of its earliest-eliminated scope variable.
#[derive(Debug, Clone)]
pub struct BucketSchedule {
    order: Vec<VarId>,
    cards: Vec<usize>,
    buckets: Vec<Vec<Factor>>,
    constant: Factor,
}

/// Messages produced by the upward pass.
#[derive(Debug, Clone)]
struct Upward {
    messages: Vec<Factor>,
    children: Vec<Vec<usize>>,
    root: Factor,
    width: usize,
}

impl BucketSchedule {
    /// Every factor scope must lie inside `order`; `cards[i]` is the
    /// cardinality of `order[i]`.
    pub fn new(order: Vec<VarId>, cards: Vec<usize>, factors: Vec<Factor>) -> Self {
        let mut buckets = vec![Vec::new(); order.len()];
        let mut constant = Factor::scalar(1.0);
        for f in factors {
            match Self::earliest(&order, f.scope()) {
                Some(b) => buckets[b].push(f),
                None => constant = constant.product(&f).expect("scalar product"),
            }
        }
        BucketSchedule {
            order,
            cards,
            buckets,
            constant,
        }
    }

    fn earliest(order: &[VarId], scope: &[VarId]) -> Option<usize> {
        scope
            .iter()
            .map(|v| {
                order
                    .iter()
                    .position(|u| u == v)
                    .expect("factor scope must be covered by the elimination order")
            })
            .min()
    }

    pub fn order(&self) -> &[VarId] {
        &self.order
    }

    /// Original factors placed in bucket `i`.
    pub fn bucket(&self, i: usize) -> &[Factor] {
        &self.buckets[i]
    }

    fn upward(&self) -> Upward {
        let n = self.order.len();
        let mut messages = Vec::with_capacity(n);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut root = self.constant.clone();
        let mut width = 0;
        for i in 0..n {
            let mut inputs: Vec<&Factor> = self.buckets[i].iter().collect();
            inputs.extend(children[i].iter().map(|&c| &messages[c]));
            let message = if inputs.is_empty() {
                Factor::scalar(self.cards[i] as f64)
            } else {
                let psi = Factor::product_all(&inputs).expect("consistent cardinalities");
                width = width.max(psi.scope().len() - 1);
                psi.marginalize(self.order[i]).expect("bucket variable in scope")
            };
            match Self::earliest(&self.order, message.scope()) {
                Some(p) => children[p].push(i),
                None => root = root.product(&message).expect("scalar product"),
            }
            messages.push(message);
        }
        Upward {
            messages,
            children,
            root,
            width,
        }
    }

    /// Induced width of the schedule's order over its factors.
    pub fn width(&self) -> usize {
        self.upward().width
    }

    /// Natural log of the sum over all assignments of the product of the
    /// schedule's factors.
    pub fn log_partition(&self) -> Result<f64, ElimError> {
        log_of(&self.upward().root)
    }

    /// Unnormalized distribution of bucket variable `i` given values of all
    /// later-eliminated variables in `state`.
    fn bucket_distribution(&self, up: &Upward, i: usize, state: &[usize], buf: &mut Vec<f64>) {
        let var = self.order[i];
        buf.clear();
        buf.resize(self.cards[i], 1.0);
        let inputs = self.buckets[i].iter().chain(up.children[i].iter().map(|&c| &up.messages[c]));
        for f in inputs {
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

    /// Single-variable marginals for every variable of the order, aligned
    /// with `order()`.
    fn marginals_from(&self, up: &Upward) -> Result<Vec<Vec<f64>>, ElimError> {
        if up.root.table()[0] <= 0.0 {
            return Err(ElimError::ZeroMass);
        }
        let n = self.order.len();
        let mut downward: Vec<Option<Factor>> = vec![None; n];
        let mut out = vec![Vec::new(); n];
        for p in (0..n).rev() {
            let var = self.order[p];
            let mut inputs: Vec<&Factor> = self.buckets[p].iter().collect();
            inputs.extend(up.children[p].iter().map(|&c| &up.messages[c]));
            if let Some(pi) = &downward[p] {
                inputs.push(pi);
            }
            let belief = Factor::product_all(&inputs)?.sum_to(&[var]);
            out[p] = if belief.scope().is_empty() {
                vec![1.0 / self.cards[p] as f64; self.cards[p]]
            } else {
                belief.normalized().ok_or(ElimError::ZeroMass)?
            };
            for (k, &c) in up.children[p].iter().enumerate() {
                let mut others: Vec<&Factor> = self.buckets[p].iter().collect();
                others.extend(
                    up.children[p]
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, &o)| &up.messages[o]),
                );
                if let Some(pi) = &downward[p] {
                    others.push(pi);
                }
                let msg = Factor::product_all(&others)?.sum_to(up.messages[c].scope());
                downward[c] = Some(msg);
            }
        }
        Ok(out)
    }
}

fn log_of(scalar: &Factor) -> Result<f64, ElimError> {
    let v = scalar.table()[0];
    if v > 0.0 {
        Ok(v.ln() + scalar.log_scale())
    } else {
        Err(ElimError::ZeroMass)
    }
}

fn feasible_order(net: &MarkovNetwork, feasibility: Feasibility) -> Result<Vec<VarId>, ElimError> {
    let graph = PrimalGraph::from_network(net);
    let order = graph.minfill_order::<rand_chacha::ChaCha8Rng>(None, None);
    let mut g = graph.clone();
    let mut width = 0;
    let mut bytes: u128 = 0;
    for &v in &order {
        width = width.max(g.degree(v));
        if width > feasibility.max_width {
            return Err(ElimError::Infeasible {
                width,
                cap: feasibility.max_width,
            });
        }
        let entries: u128 = std::iter::once(v)
            .chain(g.neighbors(v).iter().copied())
            .map(|u| net.cardinality(u) as u128)
            .product();
        bytes += entries * 8;
        g.eliminate(v)?;
    }
    if bytes > feasibility.max_table_bytes {
        return Err(ElimError::MemoryBudget {
            bytes,
            budget: feasibility.max_table_bytes,
        });
    }
    Ok(order)
}

fn schedule_for(net: &MarkovNetwork, order: Vec<VarId>) -> BucketSchedule {
    let cards = order.iter().map(|&v| net.cardinality(v)).collect();
    BucketSchedule::new(order, cards, net.factors().to_vec())
}

/// ln Z of the (evidence-reduced) network along a min-fill order.
pub fn partition_function(net: &MarkovNetwork) -> Result<f64, ElimError> {
    partition_function_with(net, Feasibility::default())
}

pub fn partition_function_with(net: &MarkovNetwork, feasibility: Feasibility) -> Result<f64, ElimError> {
    let order = feasible_order(net, feasibility)?;
    schedule_for(net, order).log_partition()
}

/// ln Z along a caller-supplied total order of the non-evidence variables.
pub fn partition_function_ordered(net: &MarkovNetwork, order: &[VarId]) -> Result<f64, ElimError> {
    let graph = PrimalGraph::from_network(net);
    graph.width_of_order(order)?;
    if order.len() != graph.num_vertices() {
        let missing = graph.vertices().find(|v| !order.contains(v)).unwrap_or(0);
        return Err(GraphError::MissingVertex(missing).into());
    }
    schedule_for(net, order.to_vec()).log_partition()
}

/// P(X_i = x) for every variable, indexed by variable id. Evidence
/// variables get a point mass on their observed value.
pub fn exact_marginals(net: &MarkovNetwork) -> Result<Vec<Vec<f64>>, ElimError> {
    exact_marginals_with(net, Feasibility::default())
}

pub fn exact_marginals_with(net: &MarkovNetwork, feasibility: Feasibility) -> Result<Vec<Vec<f64>>, ElimError> {
    let order = feasible_order(net, feasibility)?;
    let schedule = schedule_for(net, order);
    let up = schedule.upward();
    let per_bucket = schedule.marginals_from(&up)?;
    let mut out: Vec<Vec<f64>> = net.cardinalities().iter().map(|&c| vec![0.0; c]).collect();
    for (v, value) in net.evidence().iter() {
        out[v][value] = 1.0;
    }
    for (i, &v) in schedule.order().iter().enumerate() {
        out[v] = per_bucket[i].clone();
    }
    Ok(out)
}

/// The network with a set of variables summed out.
#[derive(Debug, Clone)]
pub struct CollapsedModel {
    pub base: MarkovNetwork,
    pub collapse_order: Vec<VarId>,
    pub collapse_width: usize,
    /// Edges added to the primal graph by the collapse.
    pub fill_edges: usize,
}

impl CollapsedModel {
    /// Variables still sampled: non-evidence and not collapsed.
    pub fn sampling_universe(&self) -> Vec<VarId> {
        let collapsed: BTreeSet<VarId> = self.collapse_order.iter().copied().collect();
        self.base
            .sampling_universe()
            .into_iter()
            .filter(|v| !collapsed.contains(v))
            .collect()
    }

    /// Primal graph of the collapsed model over the sampled variables.
    pub fn graph(&self) -> PrimalGraph {
        PrimalGraph::from_network(&self.base).induced(&self.sampling_universe())
    }

    pub fn is_collapsed(&self, var: VarId) -> bool {
        self.collapse_order.contains(&var)
    }
}

/// Sums out `order` one variable at a time. Refuses when some variable's
/// degree at its elimination time exceeds `alpha`.
pub fn collapse(net: &MarkovNetwork, order: &[VarId], alpha: usize) -> Result<CollapsedModel, ElimError> {
    let mut graph = PrimalGraph::from_network(net);
    let mut pool: Vec<Factor> = net.factors().to_vec();
    let mut width = 0;
    let mut fill = 0;
    let mut seen = BTreeSet::new();
    for &c in order {
        if !graph.contains(c) {
            return Err(if seen.contains(&c) {
                GraphError::RepeatedVertex(c)
            } else {
                GraphError::MissingVertex(c)
            }
            .into());
        }
        seen.insert(c);
        let degree = graph.degree(c);
        if degree > alpha {
            return Err(ElimError::WidthExceeded { var: c, degree, alpha });
        }
        width = width.max(degree);
        fill += graph.eliminate(c)?;
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = pool.into_iter().partition(|f| f.contains(c));
        pool = rest;
        let summed = if touching.is_empty() {
            Factor::scalar(net.cardinality(c) as f64)
        } else {
            let refs: Vec<&Factor> = touching.iter().collect();
            Factor::product_all(&refs)?.marginalize(c)?
        };
        pool.push(summed);
    }
    let base = MarkovNetwork::from_parts(net.cardinalities().to_vec(), pool, net.evidence().clone());
    Ok(CollapsedModel {
        base,
        collapse_order: order.to_vec(),
        collapse_width: width,
        fill_edges: fill,
    })
}

/// Precompiled conditional over a variable set given everything else:
/// the elimination order and which network factors touch the set.
#[derive(Debug, Clone)]
pub struct ConditionalPlan {
    order: Vec<VarId>,
    member: Vec<bool>,
    factor_ids: Vec<usize>,
}

impl ConditionalPlan {
    /// Plan eliminating `order` (in that order) over the factors of `net`.
    pub fn new(net: &MarkovNetwork, order: Vec<VarId>) -> Self {
        let mut member = vec![false; net.num_variables()];
        for &v in &order {
            member[v] = true;
        }
        let ids: BTreeSet<usize> = order.iter().flat_map(|&v| net.factors_of(v).iter().copied()).collect();
        ConditionalPlan {
            order,
            member,
            factor_ids: ids.into_iter().collect(),
        }
    }

    /// Plan for a block, ordered by deterministic min-fill on the block's
    /// induced subgraph of `graph`.
    pub fn for_block(net: &MarkovNetwork, graph: &PrimalGraph, block: &[VarId]) -> Self {
        let order = graph.induced(block).minfill_order::<rand_chacha::ChaCha8Rng>(None, None);
        debug_assert_eq!(order.len(), block.len());
        Self::new(net, order)
    }

    pub fn order(&self) -> &[VarId] {
        &self.order
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.member.get(var).copied().unwrap_or(false)
    }

    /// Variables outside the set that the conditional depends on.
    pub fn context(&self, net: &MarkovNetwork) -> Vec<VarId> {
        let ctx: BTreeSet<VarId> = self
            .factor_ids
            .iter()
            .flat_map(|&i| net.factors()[i].scope().iter().copied())
            .filter(|&v| !self.member[v])
            .collect();
        ctx.into_iter().collect()
    }

    /// Conditions the touching factors on `state` outside the set and runs
    /// the upward pass.
    pub fn conditional(&self, net: &MarkovNetwork, state: &[usize]) -> Result<BlockConditional, ElimError> {
        let factors: Vec<Factor> = self
            .factor_ids
            .iter()
            .map(|&i| net.factors()[i].reduce_with(|v| (!self.member[v]).then(|| state[v])))
            .collect();
        let cards = self.order.iter().map(|&v| net.cardinality(v)).collect();
        let schedule = BucketSchedule::new(self.order.clone(), cards, factors);
        let up = schedule.upward();
        if up.root.table()[0] <= 0.0 {
            return Err(ElimError::ZeroMass);
        }
        Ok(BlockConditional { schedule, up })
    }
}

/// Exact joint distribution of a variable set given a fixed context.
#[derive(Debug, Clone)]
pub struct BlockConditional {
    schedule: BucketSchedule,
    up: Upward,
}

impl BlockConditional {
    pub fn order(&self) -> &[VarId] {
        self.schedule.order()
    }

    /// ln of the unnormalized conditional mass.
    pub fn log_mass(&self) -> f64 {
        log_of(&self.up.root).unwrap_or(f64::NEG_INFINITY)
    }

    /// Draws a joint assignment by backward sampling, writing it into
    /// `state` at the set's variable ids.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, state: &mut [usize]) {
        let mut buf = Vec::new();
        for i in (0..self.schedule.order.len()).rev() {
            self.schedule.bucket_distribution(&self.up, i, state, &mut buf);
            state[self.schedule.order[i]] = sample_index(&buf, rng).expect("positive mass below a positive root");
        }
    }

    /// Probability of the set's values in `state` under this conditional.
    pub fn probability_of(&self, state: &[usize]) -> f64 {
        let mut buf = Vec::new();
        let mut p = 1.0;
        for i in (0..self.schedule.order.len()).rev() {
            self.schedule.bucket_distribution(&self.up, i, state, &mut buf);
            let total: f64 = buf.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            p *= buf[state[self.schedule.order[i]]] / total;
        }
        p
    }

    /// Marginal of each variable of the set, aligned with `order()`.
    pub fn marginals(&self) -> Result<Vec<Vec<f64>>, ElimError> {
        self.schedule.marginals_from(&self.up)
    }
}

impl BlockConditional {
    /// Number of table entries held, for cache budgeting.
    pub fn table_entries(&self) -> usize {
        let buckets: usize = self.schedule.buckets.iter().flatten().map(|f| f.table().len()).sum();
        let messages: usize = self.up.messages.iter().map(|f| f.table().len()).sum();
        buckets + messages
    }
}

/// Memo of a pure function of the values of a fixed set of context
/// variables, keyed by their mixed-radix code. Disabled when the code does
/// not fit in 64 bits. Cleared wholesale once `capacity` entries are held.
#[derive(Debug, Clone)]
pub struct ContextMemo<T> {
    vars: Vec<VarId>,
    radix: Vec<u64>,
    enabled: bool,
    capacity: usize,
    map: HashMap<u64, T>,
}

impl<T> ContextMemo<T> {
    pub fn new(vars: Vec<VarId>, cardinalities: &[usize], capacity: usize) -> Self {
        let mut radix = Vec::with_capacity(vars.len());
        let mut total: u64 = 1;
        let mut enabled = capacity > 0;
        for &v in &vars {
            radix.push(total);
            match total.checked_mul(cardinalities[v] as u64) {
                Some(t) => total = t,
                None => enabled = false,
            }
        }
        ContextMemo {
            vars,
            radix,
            enabled,
            capacity,
            map: HashMap::new(),
        }
    }

    pub fn context(&self) -> &[VarId] {
        &self.vars
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(1);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn key(&self, state: &[usize]) -> Option<u64> {
        self.enabled
            .then(|| self.vars.iter().zip(&self.radix).map(|(&v, &r)| state[v] as u64 * r).sum())
    }

    pub fn get(&self, key: u64) -> Option<&T> {
        self.map.get(&key)
    }

    pub fn insert(&mut self, key: u64, value: T) -> &T {
        if self.map.len() >= self.capacity {
            self.map.clear();
        }
        self.map.entry(key).or_insert(value)
    }
}

/// Index drawn proportionally to non-negative weights; `None` if they sum
/// to zero.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last = i;
        }
    }
    Some(last)
}

/// Exact conditional distribution of one retained variable given the
/// sampled blocks.
///
/// `x` in block `B` uses the collapsed model with `B` summed out except
/// `x`. A collapsed `x` re-eliminates the largest block (lowest index on
/// ties) together with every collapsed variable from the original factors.
pub fn rb_query(
    original: &MarkovNetwork,
    collapsed: &CollapsedModel,
    blocks: &[Vec<VarId>],
    x: VarId,
    state: &[usize],
) -> Result<Vec<f64>, ElimError> {
    let graph = collapsed.graph();
    if let Some(block) = blocks.iter().find(|b| b.contains(&x)) {
        let plan = ConditionalPlan::for_block(&collapsed.base, &graph, block);
        let pos = plan.order().iter().position(|&v| v == x).expect("member");
        return Ok(plan.conditional(&collapsed.base, state)?.marginals()?.swap_remove(pos));
    }
    let largest = largest_block(blocks);
    let plan = rb_plan(original, collapsed, &graph, largest.map(|k| blocks[k].as_slice()).unwrap_or(&[]));
    let pos = plan
        .order()
        .iter()
        .position(|&v| v == x)
        .ok_or(GraphError::MissingVertex(x))?;
    Ok(plan.conditional(original, state)?.marginals()?.swap_remove(pos))
}

/// Index of the largest block, lowest index on ties.
pub fn largest_block(blocks: &[Vec<VarId>]) -> Option<usize> {
    blocks
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (i, b)| match best {
            Some((_, len)) if len >= b.len() => best,
            _ => Some((i, b.len())),
        })
        .map(|(i, _)| i)
}

/// Plan over C followed by `block` on the original factors: collapse order
/// first, then the block's min-fill order in the collapsed graph.
pub fn rb_plan(
    original: &MarkovNetwork,
    collapsed: &CollapsedModel,
    collapsed_graph: &PrimalGraph,
    block: &[VarId],
) -> ConditionalPlan {
    let mut order = collapsed.collapse_order.clone();
    order.extend(collapsed_graph.induced(block).minfill_order::<rand_chacha::ChaCha8Rng>(None, None));
    ConditionalPlan::new(original, order)
}
