//! Brute-force reference implementations, exhaustive enumerators and the
//! instance checks for the lemmas and theorems of the framework.
//!
//! Nothing here calls the worklist solver or the reduced down-set
//! enumeration; flows are recomputed by Jacobi iteration and the natural
//! order is decided by searching for a witness.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::bst::{self, check_inv_all, derive_flowgraph, derived_quantities, run_op, Heap, Op, OpResult};
use crate::casl::{check_flow_step, EdgeUpdate, Rule};
use crate::error::{Error, Result};
use crate::estimator::{ctx_estimate, inflow_rel, CtxReport, Estimator};
use crate::flowgraph::{
    compute_flow, ghost_mult, restrict, star, unique_decompose, EdgeFn, FlowAssignment, FlowGraph, Inflow, NodeId,
};
use crate::keyspace::{FlowValue, Key, KeySet, Universe};
use crate::registry::{
    all_histories, ghost_mult as ghost_mult_registry, star as star_registry, valid_statuses, History, RKey, RegistryState, Status,
    Tag, Tid, Val,
};

// Oracle-side monoid primitives.

fn o_plus(a: FlowValue, b: FlowValue) -> FlowValue {
    match (a, b) {
        (FlowValue::Bot, x) | (x, FlowValue::Bot) => x,
        _ => FlowValue::Top,
    }
}

fn o_apply(f: EdgeFn, m: FlowValue) -> FlowValue {
    match (f, m) {
        (EdgeFn::Bot, _) => FlowValue::Bot,
        (EdgeFn::Top, _) => FlowValue::Top,
        (EdgeFn::Filter(_), FlowValue::Bot) => FlowValue::Bot,
        (EdgeFn::Filter(_), FlowValue::Top) => FlowValue::Top,
        (EdgeFn::Filter(s), FlowValue::Set(a)) => FlowValue::Set(KeySet(a.0 & s.0)),
    }
}

/// Least flow by simultaneous re-evaluation of every node until nothing changes.
pub fn naive_flow(g: &FlowGraph) -> FlowAssignment {
    let mut flow: FlowAssignment = g.nodes().iter().map(|&x| (x, FlowValue::Bot)).collect();
    loop {
        let mut next = FlowAssignment::new();
        for &x in g.nodes() {
            let mut v = FlowValue::Bot;
            for (&(_, d), &m) in g.inflow() {
                if d == x {
                    v = o_plus(v, m);
                }
            }
            for (&(s, d), &f) in g.edges() {
                if d == x {
                    v = o_plus(v, o_apply(f, flow[&s]));
                }
            }
            next.insert(x, v);
        }
        if next == flow {
            return flow;
        }
        flow = next;
    }
}

/// Outflow per external target, from a given flow.
fn o_outflow(g: &FlowGraph, flow: &FlowAssignment) -> BTreeMap<NodeId, FlowValue> {
    let mut out = BTreeMap::new();
    for (&(s, d), &f) in g.edges() {
        if !g.nodes().contains(&d) {
            let e = out.entry(d).or_insert(FlowValue::Bot);
            *e = o_plus(*e, o_apply(f, flow[&s]));
        }
    }
    out.retain(|_, v| !v.is_bot());
    out
}

fn o_transfer(g: &FlowGraph, inflow: &Inflow) -> BTreeMap<NodeId, FlowValue> {
    let h = g.with_inflow(inflow);
    o_outflow(&h, &naive_flow(&h))
}

/// Natural order by witness search: `m ≤ n` iff some `o` has `m + o = n`.
pub fn o_natural_leq(m: FlowValue, n: FlowValue, vals: &[FlowValue]) -> bool {
    vals.iter().any(|&o| o_plus(m, o) == n)
}

/// Natural-order down-sets of every lattice value, found by witness search.
pub struct DownSets {
    map: BTreeMap<FlowValue, Vec<FlowValue>>,
}

impl DownSets {
    pub fn new(u: &Universe) -> DownSets {
        let vals = u.all_values();
        let map = vals
            .iter()
            .map(|&n| (n, vals.iter().copied().filter(|&m| o_natural_leq(m, n, &vals)).collect()))
            .collect();
        DownSets { map }
    }

    pub fn below(&self, n: FlowValue) -> &[FlowValue] {
        &self.map[&n]
    }
}

/// `s ⪯ctx t` by enumerating the full down-set of every inflow entry.
pub fn o_ctx(s: &FlowGraph, t: &FlowGraph, est: &Estimator, down: &DownSets) -> bool {
    if s.nodes() != t.nodes() || s.inflow() != t.inflow() {
        return false;
    }
    let keys: Vec<(NodeId, NodeId)> = s.inflow().keys().copied().collect();
    let choices: Vec<&[FlowValue]> = s.inflow().values().map(|&v| down.below(v)).collect();
    let mut idx = vec![0usize; keys.len()];
    loop {
        let inflow: Inflow = keys.iter().zip(&idx).zip(&choices).map(|((&k, &i), c)| (k, c[i])).collect();
        let a = o_transfer(s, &inflow);
        let b = o_transfer(t, &inflow);
        let targets: BTreeSet<NodeId> = a.keys().chain(b.keys()).copied().collect();
        for y in targets {
            let lhs = a.get(&y).copied().unwrap_or(FlowValue::Bot);
            let rhs = b.get(&y).copied().unwrap_or(FlowValue::Bot);
            if !est.relates(lhs, rhs) {
                return false;
            }
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return true;
            }
            idx[pos] += 1;
            if idx[pos] < choices[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Composition check done with oracle flows: interfaces agree both ways and
/// each side's flow is the composite's flow.
pub fn o_star_is(a: &FlowGraph, b: &FlowGraph, w: &FlowGraph) -> bool {
    if !a.nodes().is_disjoint(b.nodes()) {
        return false;
    }
    let all: BTreeSet<NodeId> = a.nodes().union(b.nodes()).copied().collect();
    if &all != w.nodes() {
        return false;
    }
    let mut edges = a.edges().clone();
    edges.extend(b.edges().iter().map(|(&k, &f)| (k, f)));
    if &edges != w.edges() {
        return false;
    }
    let ext: Inflow = a
        .inflow()
        .iter()
        .chain(b.inflow().iter())
        .filter(|((s, _), _)| !all.contains(s))
        .map(|(&k, &v)| (k, v))
        .collect();
    if &ext != w.inflow() {
        return false;
    }
    let fa = naive_flow(a);
    let fb = naive_flow(b);
    for (x, y, f) in w.edges().iter().map(|(&(x, y), &f)| (x, y, f)) {
        let (src_flow, dst) = if a.nodes().contains(&x) && b.nodes().contains(&y) {
            (fa[&x], b)
        } else if b.nodes().contains(&x) && a.nodes().contains(&y) {
            (fb[&x], a)
        } else {
            continue;
        };
        if dst.inflow_at(x, y) != o_apply(f, src_flow) {
            return false;
        }
    }
    for (s, d) in a.inflow().keys().chain(b.inflow().keys()) {
        if all.contains(s) && !w.edges().contains_key(&(*s, *d)) {
            return false;
        }
    }
    let fw = naive_flow(w);
    fa.iter().chain(fb.iter()).all(|(x, v)| fw[x] == *v)
}

/// Bounds of the exhaustive graph space.
///
/// Nodes are `0..n`; every ordered pair of distinct nodes (and optionally
/// each self-loop) carries an edge function from the family; each node may
/// also send to the sink `SINK` and receives inflow from `SOURCE` drawn from the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumBounds {
    pub max_nodes: usize,
    pub endpoints: usize,
    pub self_loops: bool,
    pub sink_edges: bool,
    pub budget: u64,
}

pub const SINK: NodeId = 50;
pub const SOURCE: NodeId = 60;

impl EnumBounds {
    fn slots(&self, n: usize) -> (usize, usize) {
        let pairs = n * n.saturating_sub(1) + if self.self_loops { n } else { 0 } + if self.sink_edges { n } else { 0 };
        (pairs, n)
    }

    /// Number of graphs in the space, `Σ_n 3^edges · 4^n`.
    pub fn count(&self) -> u64 {
        (0..=self.max_nodes)
            .map(|n| {
                let (e, i) = self.slots(n);
                3u64.saturating_pow(e as u32).saturating_mul(4u64.saturating_pow(i as u32))
            })
            .fold(0u64, u64::saturating_add)
    }

    pub fn universe(&self) -> Universe {
        Universe::new((0..self.endpoints as i64).map(|i| 10 * (i + 1)).collect()).expect("small grid")
    }
}

/// Filter set used by the edge family: keys below the first endpoint.
pub fn family_filter(u: &Universe) -> KeySet {
    match u.endpoints().first() {
        Some(&e) => u.below(Key::Fin(e)).expect("endpoint on grid"),
        None => KeySet::atom(0),
    }
}

pub fn edge_family(u: &Universe) -> [EdgeFn; 3] {
    [EdgeFn::Bot, EdgeFn::Filter(family_filter(u)), EdgeFn::Top]
}

pub fn inflow_pool(u: &Universe) -> [FlowValue; 4] {
    let f = family_filter(u);
    [FlowValue::Bot, FlowValue::Set(f), FlowValue::Set(u.full().minus(f)), FlowValue::Set(u.full())]
}

/// Visits every graph of the space in a fixed order; refuses spaces over budget.
pub fn enumerate_graphs(bounds: &EnumBounds, mut visit: impl FnMut(&FlowGraph)) -> std::result::Result<u64, u64> {
    let total = bounds.count();
    if total > bounds.budget {
        return Err(total);
    }
    let u = bounds.universe();
    let fam = edge_family(&u);
    let pool = inflow_pool(&u);
    let mut visited = 0;
    for n in 0..=bounds.max_nodes {
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for x in 0..n as NodeId {
            for y in 0..n as NodeId {
                if x != y || bounds.self_loops {
                    pairs.push((x, y));
                }
            }
            if bounds.sink_edges {
                pairs.push((x, SINK));
            }
        }
        let slots = pairs.len() + n;
        let radix: Vec<usize> = (0..slots).map(|i| if i < pairs.len() { 3 } else { 4 }).collect();
        let mut idx = vec![0usize; slots];
        loop {
            let mut g = FlowGraph::empty();
            for x in 0..n as NodeId {
                g.add_node(x).expect("fresh node");
            }
            for (p, &i) in pairs.iter().zip(&idx) {
                g.set_edge(p.0, p.1, fam[i]).expect("edge source is a node");
            }
            for x in 0..n {
                g.set_inflow(SOURCE, x as NodeId, pool[idx[pairs.len() + x]]).expect("external source");
            }
            visit(&g);
            visited += 1;
            let mut pos = 0;
            loop {
                if pos == slots {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < radix[pos] {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == slots {
                break;
            }
        }
    }
    Ok(visited)
}

/// Replayable generator for case `case` of suite `suite`.
pub fn case_rng(suite: &str, seed: u64, case: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (i, b) in suite.bytes().enumerate() {
        key[8 + i % 24] ^= b.wrapping_add(i as u8);
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(case);
    rng
}

fn random_value(rng: &mut ChaCha8Rng, u: &Universe, top: bool) -> FlowValue {
    match rng.gen_range(0..10) {
        0 => FlowValue::Bot,
        1 if top => FlowValue::Top,
        _ => FlowValue::Set(KeySet(rng.gen::<u128>() & u.full().0)),
    }
}

fn random_edge(rng: &mut ChaCha8Rng, u: &Universe) -> EdgeFn {
    match rng.gen_range(0..10) {
        0..=2 => EdgeFn::Bot,
        3 => EdgeFn::Top,
        _ => EdgeFn::Filter(KeySet(rng.gen::<u128>() & u.full().0)),
    }
}

/// A random graph on nodes `first..first+n` with sparse edges (self-loops
/// and edges to `SINK` included) and inflow from `SOURCE`.
pub fn random_graph(rng: &mut ChaCha8Rng, u: &Universe, first: NodeId, n: usize, density: f64, top_inflow: bool) -> FlowGraph {
    let mut g = FlowGraph::empty();
    let ids: Vec<NodeId> = (first..first + n as NodeId).collect();
    for &x in &ids {
        g.add_node(x).expect("fresh node");
    }
    for &x in &ids {
        for &y in ids.iter().chain(std::iter::once(&SINK)) {
            if rng.gen_bool(density) {
                g.set_edge(x, y, random_edge(rng, u)).expect("edge source is a node");
            }
        }
        if rng.gen_bool(0.5) {
            g.set_inflow(SOURCE, x, random_value(rng, u, top_inflow)).expect("external source");
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Theorem {
    UniqueDecomp,
    MultCoincides,
    ShapeIndependent,
    Contextualization,
    ConservativeExt,
    KeysetDisjoint,
}

impl Theorem {
    pub fn parse(s: &str) -> Option<Theorem> {
        Some(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "uniquedecomp" => Theorem::UniqueDecomp,
            "multcoincides" => Theorem::MultCoincides,
            "shapeindependent" => Theorem::ShapeIndependent,
            "contextualization" => Theorem::Contextualization,
            "conservativeext" => Theorem::ConservativeExt,
            "keysetdisjoint" => Theorem::KeysetDisjoint,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub case: u64,
    pub message: String,
    pub instance: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremReport {
    pub name: String,
    pub cases: u64,
    pub skipped: u64,
    pub counterexamples: Vec<Counterexample>,
}

impl TheoremReport {
    fn new(name: &str) -> TheoremReport {
        TheoremReport { name: name.to_string(), cases: 0, skipped: 0, counterexamples: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }

    fn fail(&mut self, case: u64, message: String, instance: impl FnOnce() -> Value) {
        if self.counterexamples.len() < 5 {
            self.counterexamples.push(Counterexample { case, message, instance: instance() });
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "theorem": self.name,
            "cases": self.cases,
            "skipped": self.skipped,
            "verdict": if self.passed() { "pass" } else { "fail" },
            "counterexamples": self.counterexamples.iter().map(|c| json!({
                "case": c.case, "message": c.message, "instance": c.instance,
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TheoremParams {
    pub nodes: usize,
    pub endpoints: usize,
    pub cases: u64,
    pub seed: u64,
    pub budget: u64,
    pub cap: u128,
}

impl Default for TheoremParams {
    fn default() -> TheoremParams {
        TheoremParams { nodes: 3, endpoints: 1, cases: 1000, seed: 0, budget: 5_000_000, cap: 4096 }
    }
}

pub fn check_theorem(th: Theorem, p: &TheoremParams) -> Result<TheoremReport> {
    match th {
        Theorem::UniqueDecomp | Theorem::MultCoincides => decomposition(th, p),
        Theorem::ShapeIndependent => shape_independent(p),
        Theorem::Contextualization => contextualization(p),
        Theorem::ConservativeExt => conservative_ext(p),
        Theorem::KeysetDisjoint => keyset_disjoint(p),
    }
}

fn over_budget(n: u64) -> Error {
    Error::Input(format!("enumeration of {n} cases exceeds the budget"))
}

/// Splits `X` into two sides of at most `max_side` nodes each.
fn splits(nodes: &BTreeSet<NodeId>, max_side: usize) -> Vec<(BTreeSet<NodeId>, BTreeSet<NodeId>)> {
    let v: Vec<NodeId> = nodes.iter().copied().collect();
    (0u32..1 << v.len())
        .filter_map(|mask| {
            let a: BTreeSet<NodeId> = v.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect();
            let b: BTreeSet<NodeId> = nodes.difference(&a).copied().collect();
            (a.len() <= max_side && b.len() <= max_side).then_some((a, b))
        })
        .collect()
}

/// Values an edge function can emit.
fn image(f: EdgeFn) -> Vec<FlowValue> {
    match f {
        EdgeFn::Bot => vec![FlowValue::Bot],
        EdgeFn::Top => vec![FlowValue::Top],
        EdgeFn::Filter(s) => {
            let atoms: Vec<usize> = s.atoms().collect();
            let mut out = vec![FlowValue::Bot, FlowValue::Top];
            for mask in 0u32..1 << atoms.len() {
                let mut k = KeySet::EMPTY;
                for (i, &a) in atoms.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        k = k.union(KeySet::atom(a));
                    }
                }
                out.push(FlowValue::Set(k));
            }
            out
        }
    }
}

/// All pairs `(t1, t2)` on the given sides whose composition is `w`: the
/// inflow `t2` receives from `t1` is enumerated, the reverse direction is
/// then forced by the interface.
pub fn all_decompositions(w: &FlowGraph, x1: &BTreeSet<NodeId>, x2: &BTreeSet<NodeId>) -> Vec<(FlowGraph, FlowGraph)> {
    let ext = |side: &BTreeSet<NodeId>| -> Inflow {
        w.inflow().iter().filter(|((_, d), _)| side.contains(d)).map(|(&k, &v)| (k, v)).collect()
    };
    let side_edges = |side: &BTreeSet<NodeId>| -> BTreeMap<(NodeId, NodeId), EdgeFn> {
        w.edges().iter().filter(|((s, _), _)| side.contains(s)).map(|(&k, &f)| (k, f)).collect()
    };
    let mk = |side: &BTreeSet<NodeId>, inflow: &Inflow| {
        FlowGraph::from_parts(side.clone(), side_edges(side), inflow.iter().filter(|(_, v)| !v.is_bot()).map(|(&k, &v)| (k, v)).collect())
            .expect("well-formed side")
    };
    let cross12: Vec<((NodeId, NodeId), Vec<FlowValue>)> = w
        .edges()
        .iter()
        .filter(|((s, d), _)| x1.contains(s) && x2.contains(d))
        .map(|(&k, &f)| (k, image(f)))
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; cross12.len()];
    loop {
        let mut in2 = ext(x2);
        for ((k, c), &i) in cross12.iter().zip(&idx) {
            in2.insert(*k, c[i]);
        }
        let t2 = mk(x2, &in2);
        let f2 = naive_flow(&t2);
        let mut in1 = ext(x1);
        for (&(s, d), &f) in w.edges() {
            if x2.contains(&s) && x1.contains(&d) {
                in1.insert((s, d), o_apply(f, f2[&s]));
            }
        }
        let t1 = mk(x1, &in1);
        if o_star_is(&t1, &t2, w) {
            out.push((t1, t2));
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return out;
            }
            idx[pos] += 1;
            if idx[pos] < cross12[pos].1.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn decomposition(th: Theorem, p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new(if th == Theorem::UniqueDecomp { "unique-decomp" } else { "mult-coincides" });
    for endpoints in 0..=p.endpoints {
        let bounds = EnumBounds { max_nodes: p.nodes, endpoints, self_loops: false, sink_edges: false, budget: p.budget };
        let u = bounds.universe();
        let mut case = 0u64;
        enumerate_graphs(&bounds, |w| {
            case += 1;
            for (x1, x2) in splits(w.nodes(), 2) {
                rep.cases += 1;
                let (t1, t2) = unique_decompose(w, &x1, &x2).expect("partition");
                let inst = || json!({ "graph": w.to_json(&u), "side": x1 });
                match th {
                    Theorem::UniqueDecomp => {
                        if star(&t1, &t2).as_ref() != Ok(w) {
                            rep.fail(case, "restrictions do not recompose".into(), inst);
                            continue;
                        }
                        let all = all_decompositions(w, &x1, &x2);
                        if all.len() != 1 || all[0] != (t1.clone(), t2.clone()) {
                            rep.fail(case, format!("{} decompositions found", all.len()), inst);
                        }
                    }
                    _ => {
                        if let Ok(s) = star(&t1, &t2) {
                            if ghost_mult(&t1, &t2).as_ref() != Some(&s) {
                                rep.fail(case, "ghost multiplication differs from composition".into(), inst);
                            }
                        }
                    }
                }
            }
        })
        .map_err(over_budget)?;
    }
    Ok(rep)
}

/// 4-node graphs split two and two, sampled.
pub fn sampled_two_two_splits(cases: u64, seed: u64) -> TheoremReport {
    let mut rep = TheoremReport::new("unique-decomp-2+2");
    let u = Universe::new(vec![10]).expect("grid");
    for case in 0..cases {
        let mut rng = case_rng("unique-decomp-2+2", seed, case);
        let w = random_graph(&mut rng, &u, 0, 4, 0.5, true);
        let x1: BTreeSet<NodeId> = [0, 1].into_iter().collect();
        let x2: BTreeSet<NodeId> = [2, 3].into_iter().collect();
        rep.cases += 1;
        let (t1, t2) = unique_decompose(&w, &x1, &x2).expect("partition");
        let all = all_decompositions(&w, &x1, &x2);
        if star(&t1, &t2).as_ref() != Ok(&w) || all.len() != 1 || all[0] != (t1, t2) {
            rep.fail(case, format!("{} decompositions found", all.len()), || w.to_json(&u));
        }
    }
    rep
}

/// Engine flow against Jacobi iteration on the exhaustive space and on random graphs.
pub fn flow_equivalence(p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new("flow-equivalence");
    for endpoints in 0..=p.endpoints {
        let bounds = EnumBounds { max_nodes: p.nodes, endpoints, self_loops: false, sink_edges: true, budget: p.budget };
        let u = bounds.universe();
        let mut case = 0;
        enumerate_graphs(&bounds, |g| {
            case += 1;
            rep.cases += 1;
            let engine = compute_flow(g, g.default_max_iter());
            if engine.as_ref().ok() != Some(&naive_flow(g)) {
                rep.fail(case, "flows differ".into(), || g.to_json(&u));
            }
        })
        .map_err(over_budget)?;
    }
    let u = Universe::new(vec![10, 20, 30]).expect("grid");
    for case in 0..p.cases {
        let mut rng = case_rng("flow-equivalence", p.seed, case);
        let n = rng.gen_range(0..=16);
        let density = rng.gen_range(0.05..0.4);
        let g = random_graph(&mut rng, &u, 0, n, density, true);
        rep.cases += 1;
        let engine = compute_flow(&g, g.default_max_iter());
        if engine.as_ref().ok() != Some(&naive_flow(&g)) {
            rep.fail(case, "flows differ".into(), || g.to_json(&u));
        }
    }
    Ok(rep)
}

fn random_estimator(rng: &mut ChaCha8Rng, u: &Universe) -> Estimator {
    match rng.gen_range(0..4) {
        0 => Estimator::Eq,
        1 => Estimator::NaturalLeq,
        2 => Estimator::Simple,
        _ => {
            let eps = u.endpoints();
            let kx = Key::Fin(eps[rng.gen_range(0..eps.len())]);
            let k = KeySet(rng.gen::<u128>() & u.full().0);
            Estimator::complex(u, kx, k).expect("kx on grid")
        }
    }
}

/// `t`: the graph `s` with the out-edges of one node redrawn, some of them
/// widened so that the estimators have something to relate.
fn perturb(rng: &mut ChaCha8Rng, s: &FlowGraph, u: &Universe) -> FlowGraph {
    let nodes: Vec<NodeId> = s.nodes().iter().copied().collect();
    let x = nodes[rng.gen_range(0..nodes.len())];
    let mut edges = s.edges().clone();
    let outs: Vec<(NodeId, NodeId)> = edges.keys().filter(|(a, _)| *a == x).copied().collect();
    for k in outs {
        match (edges[&k], rng.gen_range(0..4)) {
            (EdgeFn::Filter(f), 0 | 1) => {
                edges.insert(k, EdgeFn::Filter(KeySet(f.0 | (rng.gen::<u128>() & u.full().0))));
            }
            (_, 2) => {
                edges.insert(k, random_edge(rng, u));
            }
            _ => {}
        }
    }
    if rng.gen_bool(0.3) {
        let y = if rng.gen_bool(0.5) { SINK } else { nodes[rng.gen_range(0..nodes.len())] };
        edges.insert((x, y), random_edge(rng, u));
    }
    edges.retain(|_, f| *f != EdgeFn::Bot);
    s.with_edges(&edges).expect("same sources")
}

fn shape_independent(p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new("shape-independent");
    let u = Universe::new(vec![10, 20]).expect("grid");
    let down = DownSets::new(&u);
    let mut case = 0u64;
    let mut attempts = 0u64;
    while rep.cases < p.cases {
        attempts += 1;
        if attempts > p.cases * 200 {
            return Err(Error::Contract("could not sample enough related pairs".into()));
        }
        let mut rng = case_rng("shape-independent", p.seed, case);
        case += 1;
        let ns = rng.gen_range(1..=3);
        let nu = rng.gen_range(1..=3);
        let w = random_graph(&mut rng, &u, 0, ns + nu, 0.45, false);
        let sx: BTreeSet<NodeId> = (0..ns as NodeId).collect();
        let ux: BTreeSet<NodeId> = (ns as NodeId..(ns + nu) as NodeId).collect();
        let (s, ug) = unique_decompose(&w, &sx, &ux)?;
        if star(&s, &ug).is_err() {
            rep.skipped += 1;
            continue;
        }
        if s.inflow().values().filter(|v| **v == FlowValue::Top).count() > 1 {
            rep.skipped += 1;
            continue;
        }
        let est = random_estimator(&mut rng, &u);
        let t = perturb(&mut rng, &s, &u);
        if t == s || !o_ctx(&s, &t, &est, &down) {
            rep.skipped += 1;
            continue;
        }
        rep.cases += 1;
        let inst = || json!({ "s": s.to_json(&u), "t": t.to_json(&u), "u": ug.to_json(&u), "estimator": est.to_json(&u) });
        let engine_hyp = ctx_estimate(&s, &t, &est, &u, p.cap);
        if engine_hyp != CtxReport::Holds {
            rep.fail(case, format!("engine disagrees on the hypothesis: {engine_hyp:?}"), inst);
            continue;
        }
        let su = star(&s, &ug).expect("checked");
        let Some(tu) = ghost_mult(&t, &ug) else {
            rep.fail(case, "ghost multiplication undefined".into(), inst);
            continue;
        };
        if !o_ctx(&su, &tu, &est, &down) {
            rep.fail(case, "s*u is not ctx-below t.u".into(), inst);
            continue;
        }
        let tx = restrict(&tu, s.nodes());
        let ux2 = restrict(&tu, ug.nodes());
        if !o_star_is(&tx, &ux2, &tu) {
            rep.fail(case, "t.u does not split into t[in_t] * u[in_u]".into(), inst);
            continue;
        }
        if !inflow_rel(s.inflow(), tx.inflow(), ug.nodes(), &est) || !inflow_rel(ug.inflow(), ux2.inflow(), s.nodes(), &est) {
            rep.fail(case, "new inflows are not related to the old ones".into(), inst);
        }
    }
    Ok(rep)
}

/// A random tree on the fuzz grid with at least one node a maintenance op applies to.
pub fn fuzz_grid() -> (Universe, Vec<i64>) {
    let keys: Vec<i64> = (1..=17).collect();
    (Universe::new(keys.clone()).expect("grid"), keys)
}

fn contextualization(p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new("contextualization");
    let (u, keys) = fuzz_grid();
    for case in 0..p.cases {
        let mut rng = case_rng("contextualization", p.seed, case);
        let size = rng.gen_range(4..=31);
        let mut h = bst::random_tree(&keys, size, 0.4, rng.gen());
        for _ in 0..rng.gen_range(0..4) {
            let target = bst::find_any(&h, &u, rng.gen())?;
            h = run_op(&h, &u, &Op::Rotate { target: Some(target) }, 0)?.heap;
        }
        let reach = bst::reachable(&h, &u)?;
        let mut ran = 0;
        for which in 0..2 {
            let cands: Vec<NodeId> = reach
                .iter()
                .copied()
                .filter(|&x| {
                    let op = if which == 0 {
                        Op::RemoveSimple { target: Some(x), side: None }
                    } else {
                        Op::RemoveComplex { target: Some(x) }
                    };
                    run_op(&h, &u, &op, 0).is_ok_and(|r| r.result == OpResult::Done)
                })
                .collect();
            if cands.is_empty() {
                continue;
            }
            let x = cands[rng.gen_range(0..cands.len())];
            let op = if which == 0 {
                Op::RemoveSimple { target: Some(x), side: None }
            } else {
                Op::RemoveComplex { target: Some(x) }
            };
            let run = run_op(&h, &u, &op, 0)?;
            ran += 1;
            rep.cases += 1;
            let mut cur = h.clone();
            for st in &run.trace {
                let pre = st.pre_heap(&cur);
                let post = st.apply(&cur)?;
                let g = derive_flowgraph(&pre, &u)?;
                let g2 = derive_flowgraph(&post, &u)?;
                let check = check_flow_step(&g, &g2, &st.footprint, &st.estimator, Rule::Context, &u, p.cap)?;
                if !check.passed() {
                    let label = st.label.clone();
                    rep.fail(case, format!("{op:?} step {label}: {:?}", check.failure), || pre.to_json(&u));
                    break;
                }
                if let (Some(c), rest) = (&check.c, g.nodes().difference(&st.footprint).copied().collect::<BTreeSet<_>>()) {
                    if !c.contains(&restrict(&g, &rest)) {
                        rep.fail(case, "d is not in c".into(), || pre.to_json(&u));
                        break;
                    }
                }
                cur = post;
            }
            if check_inv_all(&run.heap, &u)?.violations.len() != check_inv_all(&h, &u)?.violations.len() {
                rep.fail(case, format!("{op:?} changes the invariant"), || h.to_json(&u));
            }
        }
        if ran == 0 {
            rep.skipped += 1;
        }
    }
    Ok(rep)
}

/// Graphs differing from `s` only in the out-edges of node 0, one edge at a time.
fn single_edge_commands(s: &FlowGraph, fam: &[EdgeFn]) -> Vec<EdgeUpdate> {
    let Some(&x) = s.nodes().iter().next() else {
        return Vec::new();
    };
    let fp: BTreeSet<NodeId> = [x].into_iter().collect();
    let mut targets: Vec<NodeId> = s.nodes().iter().copied().filter(|&y| y != x).collect();
    targets.push(SINK);
    let base: BTreeMap<(NodeId, NodeId), EdgeFn> =
        s.edges().iter().filter(|((a, _), _)| *a == x).map(|(&k, &f)| (k, f)).collect();
    let mut out = Vec::new();
    for y in targets {
        for &f in fam {
            let mut edges = base.clone();
            if f == EdgeFn::Bot {
                edges.remove(&(x, y));
            } else {
                edges.insert((x, y), f);
            }
            out.push(EdgeUpdate { footprint: fp.clone(), edges });
        }
    }
    out
}

/// Checks one (state, command) pair of the conservative-extension space.
fn conservative_case(rep: &mut TheoremReport, case: u64, s: &FlowGraph, fam: &[EdgeFn], u: &Universe, down: &DownSets, cap: u128) {
    let emp: BTreeSet<NodeId> = BTreeSet::new();
    for up in single_edge_commands(s, fam) {
        rep.cases += 1;
        let t = up.apply_physical(s).expect("footprint owned");
        let std_ok = o_ctx(s, &t, &Estimator::Eq, down);
        let induced = up.induced(s, &emp, &Estimator::Eq, u, cap);
        let same = match (&induced, std_ok) {
            (None, false) => true,
            (Some(c), true) => c.base == t && c.contains(&t) && c.y.is_empty(),
            _ => false,
        };
        if !same {
            rep.fail(case, format!("induced {} but standard {}", induced.is_some(), std_ok), || {
                json!({ "state": s.to_json(u), "result": t.to_json(u) })
            });
        }
    }
}

/// A uniform draw from the `n`-node layer of the enumerated space.
pub fn sample_space_graph(rng: &mut ChaCha8Rng, bounds: &EnumBounds, n: usize) -> FlowGraph {
    let u = bounds.universe();
    let fam = edge_family(&u);
    let pool = inflow_pool(&u);
    let mut g = FlowGraph::empty();
    for x in 0..n as NodeId {
        g.add_node(x).expect("fresh node");
    }
    for x in 0..n as NodeId {
        for y in 0..n as NodeId {
            if x != y || bounds.self_loops {
                g.set_edge(x, y, fam[rng.gen_range(0..3)]).expect("edge source is a node");
            }
        }
        if bounds.sink_edges {
            g.set_edge(x, SINK, fam[rng.gen_range(0..3)]).expect("edge source is a node");
        }
        g.set_inflow(SOURCE, x, pool[rng.gen_range(0..4)]).expect("external source");
    }
    g
}

/// With the empty context, the induced semantics coincides with the standard
/// one. Graphs of up to two nodes are enumerated; larger layers are sampled,
/// `p.cases` graphs per endpoint count.
fn conservative_ext(p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new("conservative-ext");
    for endpoints in 0..=p.endpoints {
        let bounds = EnumBounds { max_nodes: p.nodes.min(2), endpoints, self_loops: false, sink_edges: true, budget: p.budget };
        let u = bounds.universe();
        let fam = edge_family(&u);
        let down = DownSets::new(&u);
        let mut case = 0;
        enumerate_graphs(&bounds, |s| {
            case += 1;
            conservative_case(&mut rep, case, s, &fam, &u, &down, p.cap);
        })
        .map_err(over_budget)?;
        for n in 3..=p.nodes {
            for i in 0..p.cases {
                let mut rng = case_rng(&format!("conservative-ext-{endpoints}-{n}"), p.seed, i);
                let s = sample_space_graph(&mut rng, &bounds, n);
                conservative_case(&mut rep, i, &s, &fam, &u, &down, p.cap);
            }
        }
    }
    Ok(rep)
}

fn keyset_disjoint(p: &TheoremParams) -> Result<TheoremReport> {
    let mut rep = TheoremReport::new("keyset-disjoint");
    let (u, keys) = fuzz_grid();
    for case in 0..p.cases {
        let mut rng = case_rng("keyset-disjoint", p.seed, case);
        let size = rng.gen_range(0..=17);
        let h = bst::random_tree(&keys, size, 0.3, rng.gen());
        rep.cases += 1;
        let flow = derive_flowgraph(&h, &u)?.flow();
        let mut ks: Vec<(NodeId, KeySet)> = Vec::new();
        for &x in h.nodes.keys() {
            ks.push((x, derived_quantities(&h, &u, &flow, x)?.ks));
        }
        'outer: for (i, a) in ks.iter().enumerate() {
            for b in &ks[i + 1..] {
                if a.1 .0 & b.1 .0 != 0 {
                    rep.fail(case, format!("keysets of {} and {} overlap", a.0, b.0), || h.to_json(&u));
                    break 'outer;
                }
            }
        }
        let union = ks.iter().fold(0u128, |acc, (_, k)| acc | k.0);
        if union != u.full().0 {
            rep.fail(case, "keysets do not cover the key space".into(), || h.to_json(&u));
        }
    }
    Ok(rep)
}

/// Outcome of one random operation sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzFailure {
    pub sequence: u64,
    pub step: usize,
    pub op: String,
    pub message: String,
    pub heap: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzReport {
    pub sequences: u64,
    pub ops: u64,
    pub maintenance_done: u64,
    pub failures: Vec<FuzzFailure>,
}

fn random_op(rng: &mut ChaCha8Rng, keys: &[i64]) -> Op {
    let k = Key::Fin(keys[rng.gen_range(0..keys.len())]);
    match rng.gen_range(0..10) {
        0..=2 => Op::Insert(k),
        3 | 4 => Op::Delete(k),
        5 => Op::Contains(k),
        6 | 7 => Op::RemoveSimple { target: None, side: None },
        8 => Op::RemoveComplex { target: None },
        _ => Op::Rotate { target: None },
    }
}

/// Random op sequences against a set model; sequence `i` draws from stream `i`.
pub fn fuzz_bst(sequences: u64, ops: usize, seed: u64, range: std::ops::Range<u64>) -> Result<FuzzReport> {
    let (u, keys) = fuzz_grid();
    let mut rep = FuzzReport { sequences: 0, ops: 0, maintenance_done: 0, failures: Vec::new() };
    for sq in range.start..range.end.min(sequences) {
        let mut rng = case_rng("bst-fuzz", seed, sq);
        let mut h = Heap::sentinel();
        let mut model: BTreeSet<Key> = BTreeSet::new();
        rep.sequences += 1;
        for step in 0..ops {
            let op = random_op(&mut rng, &keys);
            let r = run_op(&h, &u, &op, rng.gen())?;
            rep.ops += 1;
            let fail = |msg: String| FuzzFailure { sequence: sq, step, op: format!("{op:?}"), message: msg, heap: h.to_json(&u) };
            let expected = match &op {
                Op::Insert(k) => {
                    let fresh = model.insert(*k);
                    Some(OpResult::Bool(fresh))
                }
                Op::Delete(k) => Some(OpResult::Bool(model.remove(k))),
                Op::Contains(k) => Some(OpResult::Bool(model.contains(k))),
                _ => None,
            };
            if let Some(e) = expected {
                if r.result != e {
                    rep.failures.push(fail(format!("result {:?}, model says {:?}", r.result, e)));
                    break;
                }
            } else if r.result == OpResult::Done {
                rep.maintenance_done += 1;
            }
            let got = r.heap.contents(&u)?;
            if got != model {
                rep.failures.push(fail(format!("contents {:?} differ from model {:?}", got, model)));
                break;
            }
            let inv = check_inv_all(&r.heap, &u)?;
            if !inv.ok() {
                rep.failures.push(fail(format!("invariant broken: {:?}", inv.violations)));
                break;
            }
            h = r.heap;
        }
    }
    Ok(rep)
}

/// Status validity written from the definition: the history extends the
/// snapshot, and the search is fulfilled iff its value was current at the
/// snapshot or an upsert of it happened afterwards.
pub fn o_valid(h: &History, s: &Status) -> bool {
    if s.tag == Tag::Slt {
        return true;
    }
    let n = h.0.len();
    let m = s.snapshot.0.len();
    if m > n || h.0[n - m..] != s.snapshot.0[..] {
        return false;
    }
    let current = s.snapshot.0.iter().find(|(k, _)| *k == s.key).map_or(None, |e| e.1);
    let later = h.0[..n - m].contains(&(s.key, s.value));
    let fulfilled = current == s.value || later;
    fulfilled == (s.tag == Tag::Ful)
}

fn o_state_valid(st: &RegistryState) -> bool {
    st.registry.values().all(|s| o_valid(&st.history, s))
}

/// Non-decreasing index sequences of length at most `k` below `n`.
fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for m in &layer {
            let from = m.last().copied().unwrap_or(0);
            for i in from..n {
                let mut m2 = m.clone();
                m2.push(i);
                next.push(m2);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Exhaustive validity preservation of the registry algebra.
///
/// Ghost multiplication: every valid state on a history of at most
/// `max_hist - 1` events with at most `max_threads` searches, extended by
/// every event. Composition: every defined pair of valid states whose
/// combined registry has at most `max_threads` threads (`max_threads - 1`
/// on the longest histories).
pub fn registry_preservation(keys: &[RKey], vals: &[Val], max_hist: usize, max_threads: usize) -> TheoremReport {
    let mut rep = TheoremReport::new("registry-preservation");
    let events: Vec<(RKey, Val)> = keys.iter().flat_map(|&k| vals.iter().map(move |&v| (k, v))).collect();
    let mut case = 0u64;
    for h in all_histories(&events, max_hist) {
        let pool: Vec<Status> = valid_statuses(&h, keys, vals);
        if let Some(bad) = pool.iter().find(|s| !o_valid(&h, s)) {
            rep.fail(case, format!("pool status {bad:?} is not valid"), || h.to_json());
        }
        if h.len() < max_hist {
            for m in multisets(pool.len(), max_threads) {
                let d = RegistryState {
                    history: h.clone(),
                    registry: m.iter().enumerate().map(|(t, &i)| (t as Tid, pool[i].clone())).collect(),
                };
                for &e in &events {
                    case += 1;
                    rep.cases += 1;
                    let a = RegistryState::new(h.push(e));
                    match ghost_mult_registry(&a, &d) {
                        Ok(r) if o_state_valid(&r) => {}
                        other => rep.fail(case, format!("ghost multiplication by {e:?} gives {other:?}"), || d.to_json()),
                    }
                }
            }
        }
        let mut options: Vec<(Option<&Status>, Option<&Status>)> = Vec::new();
        for s in &pool {
            options.push((Some(s), None));
            options.push((None, Some(s)));
            if s.tag == Tag::Slt {
                for o in pool.iter().filter(|o| o.snapshot == s.snapshot && o.key == s.key && o.value == s.value) {
                    options.push((Some(s), Some(o)));
                    if o.tag != Tag::Slt {
                        options.push((Some(o), Some(s)));
                    }
                }
            }
        }
        let threads = if h.len() < max_hist { max_threads } else { max_threads.saturating_sub(1) };
        for m in multisets(options.len(), threads) {
            case += 1;
            rep.cases += 1;
            let mut a = RegistryState::new(h.clone());
            let mut b = RegistryState::new(h.clone());
            for (t, &i) in m.iter().enumerate() {
                if let Some(s) = options[i].0 {
                    a.registry.insert(t as Tid, s.clone());
                }
                if let Some(s) = options[i].1 {
                    b.registry.insert(t as Tid, s.clone());
                }
            }
            match star_registry(&a, &b) {
                Ok(r) if o_state_valid(&r) => {}
                other => rep.fail(case, format!("composition gives {other:?}"), || json!({ "a": a.to_json(), "b": b.to_json() })),
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_flow_basics() {
        assert!(naive_flow(&FlowGraph::empty()).is_empty());
        let u = Universe::new(vec![10]).unwrap();
        let mut g = FlowGraph::empty();
        g.add_node(1).unwrap();
        g.add_node(2).unwrap();
        g.set_inflow(9, 1, FlowValue::Set(u.full())).unwrap();
        g.set_edge(1, 2, EdgeFn::Filter(u.full())).unwrap();
        g.set_edge(2, 1, EdgeFn::Filter(u.full())).unwrap();
        let f = naive_flow(&g);
        assert_eq!(f[&1], FlowValue::Top);
        assert_eq!(f[&2], FlowValue::Top);
    }

    #[test]
    fn naive_flow_on_fig2() {
        let v: Value = serde_json::from_str(include_str!("../data/fig2.json")).unwrap();
        let (u, h) = Heap::from_json(&v).unwrap();
        let g = derive_flowgraph(&h, &u).unwrap();
        assert_eq!(naive_flow(&g), g.flow());
    }

    #[test]
    fn enumeration_counts() {
        for (n, e) in [(1, 1), (2, 2)] {
            let b = EnumBounds { max_nodes: n, endpoints: e, self_loops: false, sink_edges: true, budget: 1 << 20 };
            let mut seen = BTreeSet::new();
            let visited = enumerate_graphs(&b, |g| {
                seen.insert(g.clone());
            })
            .unwrap();
            assert_eq!(visited, b.count());
            assert_eq!(seen.len() as u64, b.count());
        }
        let b = EnumBounds { max_nodes: 1, endpoints: 1, self_loops: false, sink_edges: false, budget: 100 };
        let mut first = Vec::new();
        enumerate_graphs(&b, |g| first.push(g.clone())).unwrap();
        assert!(first.contains(&FlowGraph::empty()));
        let big = EnumBounds { max_nodes: 4, endpoints: 2, self_loops: true, sink_edges: true, budget: 1000 };
        assert!(enumerate_graphs(&big, |_| {}).is_err());
    }

    #[test]
    fn rng_is_keyed_by_case() {
        let a: u64 = case_rng("x", 1, 5).gen();
        let b: u64 = case_rng("x", 1, 5).gen();
        let c: u64 = case_rng("x", 1, 6).gen();
        let d: u64 = case_rng("y", 1, 5).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn small_theorem_runs() {
        let p = TheoremParams { nodes: 2, endpoints: 1, cases: 20, ..TheoremParams::default() };
        for th in [Theorem::UniqueDecomp, Theorem::MultCoincides, Theorem::ConservativeExt, Theorem::KeysetDisjoint] {
            let r = check_theorem(th, &p).unwrap();
            assert!(r.passed(), "{:?}", r.counterexamples);
        }
    }

    #[test]
    fn registry_small() {
        let r = registry_preservation(&[1], &[Some(1), None], 2, 2);
        assert!(r.passed(), "{:?}", r.counterexamples);
        assert!(r.cases > 100);
        assert_eq!(multisets(3, 2).len(), 1 + 3 + 6);
    }
}
