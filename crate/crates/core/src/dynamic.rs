//! The round loop: choose a partition, draw M blocked Gibbs samples from
//! the collapsed model, fold the round's Rao-Blackwell averages into the
//! running estimate. Gibbs, SBG, SBCG and DBCG are configurations of it.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::elim::{collapse, largest_block, rb_plan, rb_query, CollapsedModel, ConditionalPlan, ContextMemo, ElimError};
use crate::exec::Exec;
use crate::graph::PrimalGraph;
use crate::model::{MarkovNetwork, VarId};
use crate::partition::{choose_partition, cold_start_partition, score_collapsing, CollapseScore, CorrelationStats, PairPolicy, Partition};
use crate::sampling::{initial_state, site_distribution, BlockSelection, BlockedGibbs, Blocking, KernelMemos, SamplingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gibbs,
    Sbg,
    Sbcg,
    Dbcg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Gibbs, Algorithm::Sbg, Algorithm::Sbcg, Algorithm::Dbcg];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Gibbs => "gibbs",
            Algorithm::Sbg => "sbg",
            Algorithm::Sbcg => "sbcg",
            Algorithm::Dbcg => "dbcg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// A fixed number of rounds; trace times are round indices.
    Rounds(usize),
    /// Wall-clock seconds; a round cut short still updates the estimate.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    /// Samples per round.
    pub m: usize,
    pub budget: Budget,
    pub seed: u64,
    /// Samples discarded at the start of each round.
    pub burn_in: usize,
    /// M is multiplied by this after every round.
    pub growth: f64,
    /// Minimum spacing of wall-clock trace snapshots, in seconds.
    pub trace_interval: f64,
    pub selection: BlockSelection,
    pub collapse_score: CollapseScore,
    #[serde(skip)]
    pub exec: Exec,
    /// Keep every round's average in the result.
    #[serde(skip)]
    pub keep_rounds: bool,
    /// Keep every round's samples in the result; implies `keep_rounds`.
    #[serde(skip)]
    pub keep_samples: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::Dbcg,
            alpha: 8,
            beta: 8,
            gamma: 400,
            m: 1000,
            budget: Budget::Rounds(10),
            seed: 0,
            burn_in: 0,
            growth: 1.0,
            trace_interval: 0.25,
            selection: BlockSelection::Uniform,
            collapse_score: CollapseScore::Literal,
            exec: Exec::Parallel,
            keep_rounds: false,
            keep_samples: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: &str| Err(RunError::Config(msg.to_string()));
        if self.alpha < 1 {
            return bad("alpha must be at least 1");
        }
        if self.m < 1 {
            return bad("samples per round must be at least 1");
        }
        if self.burn_in >= self.m {
            return bad("burn-in must be smaller than the samples per round");
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad("growth factor must be finite and at least 1");
        }
        if !(self.trace_interval >= 0.0 && self.trace_interval.is_finite()) {
            return bad("trace interval must be finite and non-negative");
        }
        match self.budget {
            Budget::Rounds(0) => bad("round budget must be positive"),
            Budget::Seconds(s) if !(s > 0.0 && s.is_finite()) => bad("time budget must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Elim(#[from] ElimError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSnapshot {
    pub time_s: f64,
    pub samples: u64,
    pub round: usize,
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRecord {
    /// First round that used this partition.
    pub round: usize,
    pub partition: Partition,
    /// Collapsing score of the collapse order under the stats at the time.
    pub collapse_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub rounds: usize,
    pub samples: u64,
    /// Block updates skipped because the conditional had zero mass.
    pub zero_mass_steps: u64,
    /// Rao-Blackwell conditionals with zero mass; the previous one was reused.
    pub rb_zero_mass: u64,
    pub partition_changes: usize,
    pub pair_policy: Option<PairPolicy>,
    pub tracked_pairs: usize,
    /// Every round collapsed the whole sampling universe, so the answer is
    /// exact and the run stopped after the first round.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Index into `RunResult::partitions`.
    pub partition: usize,
    pub qt: Vec<Vec<f64>>,
    #[serde(skip)]
    pub samples: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    /// Indexed by variable id; evidence variables are point masses.
    pub estimates: Vec<Vec<f64>>,
    pub trace: Vec<TraceSnapshot>,
    pub partitions: Vec<PartitionRecord>,
    /// Empty unless `keep_rounds` or `keep_samples` was set.
    pub rounds: Vec<RoundRecord>,
    pub final_state: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// Running mean across rounds: `((t - 1) * estimate + qt) / t`.
pub fn round_update(estimate: &mut [Vec<f64>], qt: &[Vec<f64>], t: usize) {
    let t = t as f64;
    for (e, q) in estimate.iter_mut().zip(qt) {
        for (p, x) in e.iter_mut().zip(q) {
            *p = ((t - 1.0) * *p + x) / t;
        }
    }
}

/// Reference Rao-Blackwell round average: for every non-evidence variable,
/// the mean over `samples` of its exact conditional given the blocks other
/// than its own (the largest block for collapsed variables).
pub fn compute_qt(
    original: &MarkovNetwork,
    collapsed: &CollapsedModel,
    blocks: &[Vec<VarId>],
    samples: &[Vec<usize>],
    exec: Exec,
) -> Result<Vec<Vec<f64>>, ElimError> {
    let universe = original.sampling_universe();
    let per_sample: Vec<Result<Vec<Vec<f64>>, ElimError>> = exec.map(samples, |s| {
        universe
            .iter()
            .map(|&x| rb_query(original, collapsed, blocks, x, s))
            .collect()
    });
    let mut qt = point_masses(original);
    for &x in &universe {
        qt[x].iter_mut().for_each(|p| *p = 0.0);
    }
    for dists in per_sample {
        for (dist, &x) in dists?.iter().zip(&universe) {
            for (q, p) in qt[x].iter_mut().zip(dist) {
                *q += p;
            }
        }
    }
    let n = samples.len() as f64;
    for &x in &universe {
        qt[x].iter_mut().for_each(|q| *q /= n);
    }
    Ok(qt)
}

fn point_masses(net: &MarkovNetwork) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = net.cardinalities().iter().map(|&c| vec![1.0 / c as f64; c]).collect();
    for (v, x) in net.evidence().iter() {
        out[v] = vec![0.0; net.cardinality(v)];
        out[v][x] = 1.0;
    }
    out
}

enum SourceKind {
    Site { net_is_base: bool },
    Plan { plan: ConditionalPlan, original: bool, positions: Vec<usize> },
}

/// A group of variables whose conditionals are recomputed together, with
/// time-weighted accumulators. Between changes of its context the
/// conditional is constant, so it is credited for the whole interval.
struct Source {
    vars: Vec<VarId>,
    kind: SourceKind,
    dist: Arc<Vec<Vec<f64>>>,
    acc: Vec<Vec<f64>>,
    last: u64,
    memo: Option<ContextMemo<Arc<Vec<Vec<f64>>>>>,
}

/// Cached conditionals per multi-variable source.
const SOURCE_MEMO_ENTRIES: usize = 1 << 16;

impl Source {
    fn compute(&self, original: &MarkovNetwork, base: &MarkovNetwork, state: &[usize]) -> Option<Vec<Vec<f64>>> {
        match &self.kind {
            SourceKind::Site { net_is_base } => {
                let net = if *net_is_base { base } else { original };
                site_distribution(net, self.vars[0], state).map(|d| vec![d])
            }
            SourceKind::Plan { plan, original: on_original, positions } => {
                let net = if *on_original { original } else { base };
                let marginals = plan.conditional(net, state).ok()?.marginals().ok()?;
                Some(positions.iter().map(|&p| marginals[p].clone()).collect())
            }
        }
    }

    fn flush(&mut self, now: u64) {
        let n = (now - self.last) as f64;
        if n > 0.0 {
            for (a, d) in self.acc.iter_mut().zip(self.dist.iter()) {
                for (x, p) in a.iter_mut().zip(d) {
                    *x += n * p;
                }
            }
        }
        self.last = now;
    }
}

/// Recently used compiled partitions kept for reuse.
const SHELF: usize = 4;

/// Everything derived from one partition.
struct Compiled {
    partition: Partition,
    key: (Vec<VarId>, Vec<Vec<VarId>>),
    collapsed: CollapsedModel,
    blocking: Blocking,
    sources: Vec<Source>,
    /// For each variable, the sources whose conditional reads it.
    dependents: Vec<Vec<usize>>,
    kernel_memos: Option<KernelMemos>,
    /// Round average when nothing is left to sample.
    exact_qt: Option<Vec<Vec<f64>>>,
}

fn compile(net: &MarkovNetwork, partition: Partition, alpha: usize, beta: usize) -> Result<Compiled, RunError> {
    let collapsed = collapse(net, &partition.collapsed, alpha)?;
    let cgraph = collapsed.graph();
    let universe = collapsed.sampling_universe();
    let blocking = Blocking::new(&collapsed.base, &cgraph, &universe, partition.blocks.clone(), Some(beta))?;
    let mut sources = Vec::new();
    for (i, block) in partition.blocks.iter().enumerate() {
        let kind = if block.len() == 1 {
            SourceKind::Site { net_is_base: true }
        } else {
            let plan = blocking.plan(i).clone();
            let positions = block
                .iter()
                .map(|v| plan.order().iter().position(|u| u == v).expect("member"))
                .collect();
            SourceKind::Plan {
                plan,
                original: false,
                positions,
            }
        };
        sources.push(Source {
            vars: block.clone(),
            kind,
            dist: Arc::default(),
            acc: Vec::new(),
            last: 0,
            memo: None,
        });
    }
    if !partition.collapsed.is_empty() {
        let k = largest_block(&partition.blocks);
        let plan = rb_plan(net, &collapsed, &cgraph, k.map(|k| partition.blocks[k].as_slice()).unwrap_or(&[]));
        let positions = (0..partition.collapsed.len()).collect();
        sources.push(Source {
            vars: partition.collapsed.clone(),
            kind: SourceKind::Plan {
                plan,
                original: true,
                positions,
            },
            dist: Arc::default(),
            acc: Vec::new(),
            last: 0,
            memo: None,
        });
    }
    let mut dependents = vec![Vec::new(); net.num_variables()];
    for (s, source) in sources.iter_mut().enumerate() {
        let context = match &source.kind {
            SourceKind::Site { .. } => {
                let v = source.vars[0];
                let mut ctx: Vec<VarId> = cgraph.neighbors(v).iter().copied().collect();
                ctx.retain(|&u| u != v);
                ctx
            }
            SourceKind::Plan { plan, original, .. } => plan.context(if *original { net } else { &collapsed.base }),
        };
        for &v in &context {
            dependents[v].push(s);
        }
        if matches!(source.kind, SourceKind::Plan { .. }) {
            source.memo = Some(ContextMemo::new(context, net.cardinalities(), SOURCE_MEMO_ENTRIES));
        }
    }
    Ok(Compiled {
        key: partition.canonical(),
        partition,
        collapsed,
        blocking,
        sources,
        dependents,
        kernel_memos: None,
        exact_qt: None,
    })
}

struct Streams {
    chain: ChaCha8Rng,
    partition: ChaCha8Rng,
    stats: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Streams {
            chain: stream(0),
            partition: stream(1),
            stats: stream(2),
        }
    }
}

/// Runs one chain under `config` on an evidence-applied network.
pub fn run(net: &MarkovNetwork, config: &RunConfig) -> Result<RunResult, RunError> {
    config.validate()?;
    let start = Instant::now();
    let graph = PrimalGraph::from_network(net);
    let universe = net.sampling_universe();
    let mut rng = Streams::new(config.seed);
    let mut stats = (config.algorithm == Algorithm::Dbcg).then(|| {
        let mut s = CorrelationStats::new(net.cardinalities(), &graph, &universe, &mut rng.stats);
        s.set_exec(config.exec);
        s
    });
    let mut diagnostics = Diagnostics {
        pair_policy: stats.as_ref().map(|s| s.policy()),
        tracked_pairs: stats.as_ref().map_or(0, |s| s.num_pairs()),
        ..Diagnostics::default()
    };
    let mut estimates = point_masses(net);
    let mut state = initial_state(net, &graph, &universe, &mut rng.chain)?;
    let mut trace = Vec::new();
    let mut partitions: Vec<PartitionRecord> = Vec::new();
    let mut rounds = Vec::new();
    let mut compiled: Option<Compiled> = None;
    let mut shelf: VecDeque<Compiled> = VecDeque::new();
    let mut sampled_any = false;
    let mut m = config.m as f64;
    let mut last_snapshot = f64::NEG_INFINITY;
    let mut samples_total: u64 = 0;
    let params = (config.alpha, config.beta, config.gamma);

    let mut t = 0;
    loop {
        t += 1;
        let next = match (config.algorithm, &compiled) {
            (Algorithm::Gibbs, None) => Some(Partition::new(&graph, Vec::new(), universe.iter().map(|&v| vec![v]).collect())),
            (Algorithm::Sbg, None) => Some(cold_start_partition(&graph, &universe, params.0, params.1, params.2, false, &mut rng.partition)),
            (Algorithm::Sbcg | Algorithm::Dbcg, None) => {
                Some(cold_start_partition(&graph, &universe, params.0, params.1, params.2, true, &mut rng.partition))
            }
            (Algorithm::Dbcg, Some(_)) => Some(choose_partition(
                &graph,
                &universe,
                stats.as_ref().expect("dbcg keeps stats"),
                params,
                true,
                &mut rng.partition,
            )),
            _ => None,
        };
        if let Some(p) = next {
            let key = p.canonical();
            if compiled.as_ref().is_none_or(|c| c.key != key) {
                if let Some(old) = compiled.take() {
                    materialize(net, &old.partition.collapsed, &mut state, &mut rng.chain, &mut diagnostics);
                    diagnostics.partition_changes += 1;
                    shelf.push_front(old);
                }
                let next = match shelf.iter().position(|c| c.key == key) {
                    Some(i) => shelf.remove(i).expect("index in range"),
                    None => compile(net, p, config.alpha, config.beta)?,
                };
                shelf.truncate(SHELF);
                let score = match &stats {
                    Some(s) => score_collapsing(s, &next.partition.collapsed, &universe, config.collapse_score),
                    None => 0.0,
                };
                partitions.push(PartitionRecord {
                    round: t,
                    partition: next.partition.clone(),
                    collapse_score: score,
                });
                compiled = Some(next);
            }
        }
        let c = compiled.as_mut().expect("partition chosen");
        let steps = m.ceil() as usize;

        let (qt, drawn, kept) = if c.blocking.is_empty() {
            // everything collapsed: the conditional of C given nothing is exact
            if c.exact_qt.is_none() {
                let mut qt = point_masses(net);
                for s in &c.sources {
                    let d = s.compute(net, &c.collapsed.base, &state).ok_or(ElimError::ZeroMass)?;
                    for (v, dist) in s.vars.iter().zip(d) {
                        qt[*v] = dist;
                    }
                }
                c.exact_qt = Some(qt);
            }
            (c.exact_qt.clone(), 0, None)
        } else {
            sampled_any = true;
            sample_round(net, c, config, steps, &mut state, &mut rng.chain, stats.as_mut(), &mut diagnostics, &start)
        };
        samples_total += drawn;
        if let Some(qt) = qt {
            round_update(&mut estimates, &qt, t);
            if let Some(s) = stats.as_mut() {
                s.set_one_var(&estimates);
            }
            if config.keep_rounds || config.keep_samples {
                rounds.push(RoundRecord {
                    round: t,
                    partition: partitions.len() - 1,
                    qt,
                    samples: kept,
                });
            }
        }
        diagnostics.rounds = t;
        m *= config.growth;

        let elapsed = start.elapsed().as_secs_f64();
        // only a run whose every round was exact can stop early
        diagnostics.exact = !sampled_any;
        let done = diagnostics.exact
            || match config.budget {
                Budget::Rounds(r) => t >= r,
                Budget::Seconds(s) => elapsed >= s,
            };
        let time_s = match config.budget {
            Budget::Rounds(_) => t as f64,
            Budget::Seconds(_) => elapsed,
        };
        let due = match config.budget {
            Budget::Rounds(_) => true,
            Budget::Seconds(_) => time_s - last_snapshot >= config.trace_interval,
        };
        if due || done {
            trace.push(TraceSnapshot {
                time_s,
                samples: samples_total,
                round: t,
                estimates: estimates.clone(),
            });
            last_snapshot = time_s;
        }
        if done {
            break;
        }
    }
    diagnostics.samples = samples_total;
    Ok(RunResult {
        estimates,
        trace,
        partitions,
        rounds,
        final_state: state,
        diagnostics,
    })
}

/// Draws fresh values for formerly collapsed variables jointly from their
/// exact conditional given the current state.
fn materialize(
    net: &MarkovNetwork,
    old_collapsed: &[VarId],
    state: &mut [usize],
    rng: &mut ChaCha8Rng,
    diagnostics: &mut Diagnostics,
) {
    if old_collapsed.is_empty() {
        return;
    }
    let plan = ConditionalPlan::new(net, old_collapsed.to_vec());
    match plan.conditional(net, state) {
        Ok(cond) => cond.sample_into(rng, state),
        Err(_) => diagnostics.rb_zero_mass += 1,
    }
}

type RoundOutput = (Option<Vec<Vec<f64>>>, u64, Option<Vec<Vec<usize>>>);

/// One round of blocked Gibbs steps with lazy Rao-Blackwell and pair-count
/// accumulation. Returns the round average, the number of steps taken, and
/// the recorded samples if requested.
#[allow(clippy::too_many_arguments)]
fn sample_round(
    net: &MarkovNetwork,
    c: &mut Compiled,
    config: &RunConfig,
    steps: usize,
    state: &mut [usize],
    rng: &mut ChaCha8Rng,
    mut stats: Option<&mut CorrelationStats>,
    diagnostics: &mut Diagnostics,
    start: &Instant,
) -> RoundOutput {
    let Compiled {
        collapsed,
        blocking,
        sources,
        dependents,
        kernel_memos,
        ..
    } = c;
    let base = &collapsed.base;
    for s in sources.iter_mut() {
        let key = s.memo.as_ref().and_then(|m| m.key(state));
        let hit = key.and_then(|k| s.memo.as_ref().and_then(|m| m.get(k)).cloned());
        let d = hit.unwrap_or_else(|| match s.compute(net, base, state) {
            Some(d) => {
                let d = Arc::new(d);
                if let (Some(m), Some(k)) = (s.memo.as_mut(), key) {
                    m.insert(k, Arc::clone(&d));
                }
                d
            }
            None => Arc::new(s.vars.iter().map(|&v| vec![1.0 / net.cardinality(v) as f64; net.cardinality(v)]).collect()),
        });
        s.acc = d.iter().map(|x| vec![0.0; x.len()]).collect();
        s.dist = d;
        s.last = 0;
    }
    if let Some(st) = stats.as_deref_mut() {
        let mut sampled = vec![false; net.num_variables()];
        for &v in blocking.universe() {
            sampled[v] = true;
        }
        st.begin_round(&sampled);
    }
    let mut kernel = BlockedGibbs::with_memos(base, blocking, config.selection, kernel_memos.take());
    let mut prev = state.to_vec();
    let mut now: u64 = 0;
    let mut kept = config.keep_samples.then(Vec::new);
    let mut dirty = vec![false; sources.len()];
    let mut dirty_list = Vec::new();
    let mut changed = Vec::new();
    let wall = match config.budget {
        Budget::Seconds(s) => Some(s),
        Budget::Rounds(_) => None,
    };
    let mut taken = 0;
    for step in 0..steps {
        if let Some(limit) = wall {
            if step % 16 == 0 && step > config.burn_in && start.elapsed().as_secs_f64() >= limit {
                break;
            }
        }
        let b = kernel.step(rng, state);
        taken += 1;
        changed.clear();
        changed.extend(blocking.blocks()[b].iter().copied().filter(|&v| state[v] != prev[v]));
        if !changed.is_empty() {
            if let Some(st) = stats.as_deref_mut() {
                for &v in &changed {
                    st.flush_var(v, &prev, now);
                }
            }
            for &v in &changed {
                for &s in &dependents[v] {
                    if !dirty[s] {
                        dirty[s] = true;
                        dirty_list.push(s);
                    }
                }
                prev[v] = state[v];
            }
            refresh(net, base, sources, &dirty_list, state, now, config.exec, diagnostics);
            for &s in &dirty_list {
                dirty[s] = false;
            }
            dirty_list.clear();
        }
        if step >= config.burn_in {
            now += 1;
            if let Some(k) = kept.as_mut() {
                k.push(state.to_vec());
            }
        }
    }
    diagnostics.zero_mass_steps += kernel.zero_mass_events();
    *kernel_memos = Some(kernel.into_memos());
    if let Some(st) = stats {
        st.end_round(&prev, now);
    }
    if now == 0 {
        return (None, taken, kept);
    }
    let mut qt = point_masses(net);
    for s in sources.iter_mut() {
        s.flush(now);
        for (v, a) in s.vars.iter().zip(&s.acc) {
            qt[*v] = a.iter().map(|x| x / now as f64).collect();
        }
    }
    (Some(qt), taken, kept)
}

#[allow(clippy::too_many_arguments)]
fn refresh(
    net: &MarkovNetwork,
    base: &MarkovNetwork,
    sources: &mut [Source],
    dirty: &[usize],
    state: &[usize],
    now: u64,
    exec: Exec,
    diagnostics: &mut Diagnostics,
) {
    let mut misses = Vec::new();
    for &s in dirty {
        let source = &mut sources[s];
        source.flush(now);
        let hit = source.memo.as_ref().and_then(|m| m.key(state).and_then(|k| m.get(k)));
        match hit {
            Some(d) => source.dist = Arc::clone(d),
            None => misses.push(s),
        }
    }
    let heavy = misses.len() > 1 && misses.iter().any(|&s| matches!(sources[s].kind, SourceKind::Plan { .. }));
    let exec = if heavy { exec } else { Exec::Sequential };
    let shared: &[Source] = sources;
    let fresh = exec.map(&misses, |&s| shared[s].compute(net, base, state));
    for (&s, d) in misses.iter().zip(fresh) {
        let source = &mut sources[s];
        match d {
            Some(d) => {
                let d = Arc::new(d);
                if let Some(memo) = source.memo.as_mut() {
                    if let Some(key) = memo.key(state) {
                        memo.insert(key, Arc::clone(&d));
                    }
                }
                source.dist = d;
            }
            None => diagnostics.rb_zero_mass += 1,
        }
    }
}
