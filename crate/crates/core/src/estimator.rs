//! Estimators: relations on flow values that bound how an update may shift
//! the flow of the surrounding graph.
//!
//! An estimator must be reflexive and transitive (E1), compatible with the
//! monoid sum (E2), stable under joins of ascending chains (E3), and every
//! edge function must be monotone for it (E4). E3 holds for free on a finite
//! lattice with the ascending chain condition; the other three are checked by
//! exhaustive enumeration.
//!
//! Lifted to graphs, `s ⪯ctx t` compares the transfer functions of `s` and
//! `t` on every inflow below `s.in`.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flowgraph::{restrict, star, transfer_all, EdgeFn, FlowGraph, Inflow, NodeId};
use crate::keyspace::{natural_leq, oplus, sum, FlowValue, Key, KeySet, Universe};
use crate::pred::Pred;

/// Default bound on the number of inflow candidates enumerated by `⪯ctx`.
pub const DEFAULT_CLOSURE_CAP: u128 = 4096;

/// An explicit relation over the lattice of a universe.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Relation {
    atoms: usize,
    table: Vec<bool>,
}

impl Relation {
    fn size(atoms: usize) -> usize {
        (1usize << atoms) + 2
    }

    fn index(v: FlowValue) -> usize {
        match v {
            FlowValue::Bot => 0,
            FlowValue::Top => 1,
            FlowValue::Set(s) => 2 + s.0 as usize,
        }
    }

    /// Tabulates another estimator over the lattice of `u`.
    pub fn tabulate(est: &Estimator, u: &Universe) -> Relation {
        let atoms = u.atom_count();
        let vals = u.all_values();
        let n = Relation::size(atoms);
        let mut table = vec![false; n * n];
        for &m in &vals {
            for &k in &vals {
                table[Relation::index(m) * n + Relation::index(k)] = est.relates(m, k);
            }
        }
        Relation { atoms, table }
    }

    pub fn set(&mut self, m: FlowValue, n: FlowValue, related: bool) {
        let size = Relation::size(self.atoms);
        self.table[Relation::index(m) * size + Relation::index(n)] = related;
    }

    pub fn get(&self, m: FlowValue, n: FlowValue) -> bool {
        let size = Relation::size(self.atoms);
        let (i, j) = (Relation::index(m), Relation::index(n));
        i < size && j < size && self.table[i * size + j]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Estimator {
    Eq,
    NaturalLeq,
    /// `m ⋐ n`: equal, or both proper sets with `m ⊆ n`.
    Simple,
    /// `⋐` or: both proper sets, `kx ∉ m` and `m \ K ⊆ n`.
    Complex { kx: KeySet, k: KeySet },
    Custom(Relation),
}

impl Estimator {
    pub fn complex(u: &Universe, kx: Key, k: KeySet) -> Result<Estimator> {
        Ok(Estimator::Complex { kx: u.point(kx)?, k })
    }

    pub fn relates(&self, m: FlowValue, n: FlowValue) -> bool {
        match self {
            Estimator::Eq => m == n,
            Estimator::NaturalLeq => natural_leq(m, n),
            Estimator::Simple => simple(m, n),
            Estimator::Complex { kx, k } => {
                simple(m, n)
                    || match (m, n) {
                        (FlowValue::Set(a), FlowValue::Set(b)) => a.disjoint(*kx) && a.minus(*k).subset(b),
                        _ => false,
                    }
            }
            Estimator::Custom(r) => r.get(m, n),
        }
    }

    /// Whether the relation decomposes into a tag condition plus a per-atom
    /// condition. For these, inflow entries equal to `Top` only need the
    /// representatives `Bot`, `Top`, `{}` and the full set.
    fn per_atom(&self) -> bool {
        matches!(self, Estimator::Eq | Estimator::NaturalLeq | Estimator::Simple)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Eq => "eq",
            Estimator::NaturalLeq => "leq",
            Estimator::Simple => "simple",
            Estimator::Complex { .. } => "complex",
            Estimator::Custom(_) => "custom",
        }
    }

    pub fn to_json(&self, u: &Universe) -> Value {
        match self {
            Estimator::Complex { kx, k } => {
                let kx_key = u.runs(*kx).first().map(|r| r.0).unwrap_or(Key::NegInf);
                json!({ "complex": { "kx": kx_key.to_json(), "K": u.set_to_json(*k) } })
            }
            other => json!(other.name()),
        }
    }

    pub fn from_json(u: &Universe, v: &Value) -> Result<Estimator> {
        match v {
            Value::String(s) => match s.as_str() {
                "eq" => Ok(Estimator::Eq),
                "leq" => Ok(Estimator::NaturalLeq),
                "simple" => Ok(Estimator::Simple),
                other => Err(Error::Input(format!("unknown estimator {other:?}"))),
            },
            Value::Object(o) => {
                let c = o
                    .get("complex")
                    .ok_or_else(|| Error::Input(format!("unknown estimator {v}")))?;
                let kx = Key::from_json(c.get("kx").ok_or_else(|| Error::Input("complex needs kx".into()))?)?;
                let k = u.set_from_json(c.get("K").ok_or_else(|| Error::Input("complex needs K".into()))?)?;
                Estimator::complex(u, kx, k)
            }
            other => Err(Error::Input(format!("expected an estimator, found {other}"))),
        }
    }
}

fn simple(m: FlowValue, n: FlowValue) -> bool {
    m == n
        || match (m, n) {
            (FlowValue::Set(a), FlowValue::Set(b)) => a.subset(b),
            _ => false,
        }
}

/// A failed estimator axiom with its witness.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxiomViolation {
    NotReflexive(FlowValue),
    NotTransitive(FlowValue, FlowValue, FlowValue),
    NotAdditive { m: FlowValue, n: FlowValue, o: FlowValue },
    NotEdgeMonotone { f: EdgeFn, m: FlowValue, n: FlowValue },
}

/// Checks E1, E2 and E4 exhaustively over the lattice of `u`.
pub fn check_estimator_axioms(est: &Estimator, u: &Universe) -> std::result::Result<(), AxiomViolation> {
    let vals = u.all_values();
    for &m in &vals {
        if !est.relates(m, m) {
            return Err(AxiomViolation::NotReflexive(m));
        }
    }
    let related: Vec<(FlowValue, FlowValue)> = vals
        .iter()
        .flat_map(|&m| vals.iter().map(move |&n| (m, n)))
        .filter(|&(m, n)| est.relates(m, n))
        .collect();
    let mut succ: BTreeMap<FlowValue, Vec<FlowValue>> = BTreeMap::new();
    for &(m, n) in &related {
        succ.entry(m).or_default().push(n);
    }
    for &(m, n) in &related {
        for &o in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if !est.relates(m, o) {
                return Err(AxiomViolation::NotTransitive(m, n, o));
            }
        }
    }
    for &(m, n) in &related {
        for &o in &vals {
            if !est.relates(oplus(m, o), oplus(n, o)) {
                return Err(AxiomViolation::NotAdditive { m, n, o });
            }
        }
    }
    let mut fns = vec![EdgeFn::Bot, EdgeFn::Top];
    fns.extend((0..(1u128 << u.atom_count())).map(|b| EdgeFn::Filter(KeySet(b))));
    for &f in &fns {
        for &(m, n) in &related {
            if !est.relates(f.apply(m), f.apply(n)) {
                return Err(AxiomViolation::NotEdgeMonotone { f, m, n });
            }
        }
    }
    Ok(())
}

/// Why `s ⪯ctx t` fails.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtxWitness {
    NodesDiffer,
    InflowDiffers { src: NodeId, dst: NodeId },
    Transfer { inflow: Inflow, node: NodeId, lhs: FlowValue, rhs: FlowValue },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtxReport {
    Holds,
    Fails(CtxWitness),
    /// The inflow down-set exceeds the cap.
    Inconclusive { candidates: u128 },
}

impl CtxReport {
    pub fn holds(&self) -> bool {
        matches!(self, CtxReport::Holds)
    }
}

/// Candidate values below one inflow entry.
fn down_set(v: FlowValue, est: &Estimator, u: &Universe) -> Vec<FlowValue> {
    match v {
        FlowValue::Bot => vec![FlowValue::Bot],
        FlowValue::Set(_) => vec![FlowValue::Bot, v],
        FlowValue::Top if est.per_atom() => vec![
            FlowValue::Bot,
            FlowValue::Set(KeySet::EMPTY),
            FlowValue::Set(u.full()),
            FlowValue::Top,
        ],
        FlowValue::Top => u.all_values(),
    }
}

/// Number of inflows `in' ≤ in` that `ctx_estimate` would enumerate.
pub fn down_set_size(inflow: &Inflow, est: &Estimator, u: &Universe) -> u128 {
    inflow.values().fold(1u128, |acc, &v| {
        let k = match v {
            FlowValue::Bot => 1,
            FlowValue::Set(_) => 2,
            FlowValue::Top if est.per_atom() => 4,
            FlowValue::Top => u.lattice_size(),
        };
        acc.saturating_mul(k)
    })
}

/// Enumerates every inflow in the (reduced) down-set of `inflow`.
pub fn for_each_inflow_below<F: FnMut(&Inflow) -> bool>(inflow: &Inflow, est: &Estimator, u: &Universe, mut f: F) {
    let keys: Vec<(NodeId, NodeId)> = inflow.keys().copied().collect();
    let choices: Vec<Vec<FlowValue>> = inflow.values().map(|&v| down_set(v, est, u)).collect();
    let mut idx = vec![0usize; keys.len()];
    loop {
        let cand: Inflow = keys
            .iter()
            .zip(idx.iter())
            .zip(choices.iter())
            .filter_map(|((&k, &i), c)| (!c[i].is_bot()).then_some((k, c[i])))
            .collect();
        if !f(&cand) {
            return;
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return;
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

/// `s ⪯ctx t` with respect to `est`.
pub fn ctx_estimate(s: &FlowGraph, t: &FlowGraph, est: &Estimator, u: &Universe, cap: u128) -> CtxReport {
    if s.nodes() != t.nodes() {
        return CtxReport::Fails(CtxWitness::NodesDiffer);
    }
    if s.inflow() != t.inflow() {
        let (src, dst) = s
            .inflow()
            .keys()
            .chain(t.inflow().keys())
            .find(|k| s.inflow().get(k) != t.inflow().get(k))
            .copied()
            .expect("inflows differ somewhere");
        return CtxReport::Fails(CtxWitness::InflowDiffers { src, dst });
    }
    let candidates = down_set_size(s.inflow(), est, u);
    if candidates > cap {
        return CtxReport::Inconclusive { candidates };
    }
    let mut report = CtxReport::Holds;
    for_each_inflow_below(s.inflow(), est, u, |inflow| {
        let a = transfer_all(s, inflow);
        let b = transfer_all(t, inflow);
        let targets: BTreeSet<NodeId> = a.keys().chain(b.keys()).copied().collect();
        for y in targets {
            let lhs = a.get(&y).copied().unwrap_or(FlowValue::Bot);
            let rhs = b.get(&y).copied().unwrap_or(FlowValue::Bot);
            if !est.relates(lhs, rhs) {
                report = CtxReport::Fails(CtxWitness::Transfer { inflow: inflow.clone(), node: y, lhs, rhs });
                return false;
            }
        }
        true
    });
    report
}

/// `in1 ⪯^Y in2`: agreement outside `Y`, and per target the sums over `Y` are related.
pub fn inflow_rel(in1: &Inflow, in2: &Inflow, y: &BTreeSet<NodeId>, est: &Estimator) -> bool {
    let keys: BTreeSet<(NodeId, NodeId)> = in1.keys().chain(in2.keys()).copied().collect();
    for &(src, dst) in &keys {
        if !y.contains(&src) && in1.get(&(src, dst)) != in2.get(&(src, dst)) {
            return false;
        }
    }
    let targets: BTreeSet<NodeId> = keys.iter().map(|&(_, d)| d).collect();
    targets.into_iter().all(|x| {
        let a = sum(in1.iter().filter(|((s, d), _)| *d == x && y.contains(s)).map(|(_, &v)| v));
        let b = sum(in2.iter().filter(|((s, d), _)| *d == x && y.contains(s)).map(|(_, &v)| v));
        est.relates(a, b)
    })
}

/// `{g[in'] | g.in ⪯^Y in'}`, kept symbolic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Closure {
    pub base: FlowGraph,
    pub y: BTreeSet<NodeId>,
    pub est: Estimator,
}

impl Closure {
    pub fn new(base: FlowGraph, y: BTreeSet<NodeId>, est: Estimator) -> Closure {
        Closure { base, y, est }
    }

    pub fn contains(&self, h: &FlowGraph) -> bool {
        h.nodes() == self.base.nodes()
            && h.edges() == self.base.edges()
            && inflow_rel(self.base.inflow(), h.inflow(), &self.y, &self.est)
    }

    /// Explicit members whose `Y`-inflow uses the same source pairs as the base.
    ///
    /// Members with a different source support are still accepted by
    /// `contains`; they are not listed here.
    pub fn materialize(&self, u: &Universe, cap: u128) -> std::result::Result<Vec<FlowGraph>, u128> {
        let fixed: Inflow = self
            .base
            .inflow()
            .iter()
            .filter(|((s, _), _)| !self.y.contains(s))
            .map(|(&k, &v)| (k, v))
            .collect();
        let mut by_target: BTreeMap<NodeId, Vec<(NodeId, NodeId)>> = BTreeMap::new();
        for &(s, d) in self.base.inflow().keys() {
            if self.y.contains(&s) {
                by_target.entry(d).or_default().push((s, d));
            }
        }
        let vals = u.all_values();
        let mut per_target: Vec<Vec<Vec<((NodeId, NodeId), FlowValue)>>> = Vec::new();
        let mut total: u128 = 1;
        for pairs in by_target.values() {
            let old = sum(pairs.iter().map(|k| self.base.inflow_at(k.0, k.1)));
            let mut options = Vec::new();
            let mut idx = vec![0usize; pairs.len()];
            loop {
                let vs: Vec<FlowValue> = idx.iter().map(|&i| vals[i]).collect();
                if self.est.relates(old, sum(vs.iter().copied())) {
                    options.push(pairs.iter().copied().zip(vs).collect::<Vec<_>>());
                }
                let mut pos = 0;
                while pos < idx.len() {
                    idx[pos] += 1;
                    if idx[pos] < vals.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == idx.len() {
                    break;
                }
            }
            total = total.saturating_mul(options.len() as u128);
            if total > cap {
                return Err(total);
            }
            per_target.push(options);
        }
        let mut out = Vec::new();
        let mut idx = vec![0usize; per_target.len()];
        loop {
            let mut inflow = fixed.clone();
            for (t, &i) in per_target.iter().zip(idx.iter()) {
                for &(k, v) in &t[i] {
                    if !v.is_bot() {
                        inflow.insert(k, v);
                    }
                }
            }
            out.push(self.base.with_inflow(&inflow));
            let mut pos = 0;
            while pos < idx.len() {
                idx[pos] += 1;
                if idx[pos] < per_target[pos].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// `up#(s)`: the update if it is `⪯ctx`-bounded by `s`, otherwise `Top`.
pub fn approx_physical_update(
    s: &FlowGraph,
    up: &Pred<FlowGraph>,
    est: &Estimator,
    u: &Universe,
    cap: u128,
) -> Pred<FlowGraph> {
    match up {
        Pred::Top => Pred::Top,
        Pred::States(ts) => {
            if ts.iter().all(|t| ctx_estimate(s, t, est, u, cap).holds()) {
                up.clone()
            } else {
                Pred::Top
            }
        }
    }
}

/// Result of the curried approximate ghost transformer `[t]#(u)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GhostApprox {
    Top,
    Closure(Closure),
}

/// `[t]#(u)`: the `⪯`-closure of `u` along `t`'s nodes, provided one of the
/// recorded pre-states `s` satisfies `s ⪯ctx t` and `s ⋆ u` is defined.
pub fn approx_ghost_transformer(
    t: &FlowGraph,
    u_graph: &FlowGraph,
    est: &Estimator,
    witnesses: &[FlowGraph],
    universe: &Universe,
    cap: u128,
) -> GhostApprox {
    let ok = witnesses
        .iter()
        .any(|s| ctx_estimate(s, t, est, universe, cap).holds() && star(s, u_graph).is_ok());
    if ok {
        GhostApprox::Closure(Closure::new(u_graph.clone(), t.nodes().clone(), est.clone()))
    } else {
        GhostApprox::Top
    }
}

/// `t ⊙# u = [u]#(t) ⋆ [t]#(u)`, as a membership test.
#[derive(Clone, Debug)]
pub enum GhostMultApprox {
    Top,
    Product { left: Closure, right: Closure },
}

impl GhostMultApprox {
    pub fn contains(&self, w: &FlowGraph) -> bool {
        match self {
            GhostMultApprox::Top => true,
            GhostMultApprox::Product { left, right } => {
                let lx = left.base.nodes();
                let rx = right.base.nodes();
                let all: BTreeSet<NodeId> = lx.union(rx).copied().collect();
                if w.nodes() != &all || !lx.is_disjoint(rx) {
                    return false;
                }
                let a = restrict(w, lx);
                let b = restrict(w, rx);
                left.contains(&a) && right.contains(&b) && star(&a, &b).map(|c| &c == w).unwrap_or(false)
            }
        }
    }
}

/// `t ⊙# u` given the recorded pre-states of `t`.
pub fn approx_ghost_mult(
    t: &FlowGraph,
    u_graph: &FlowGraph,
    est: &Estimator,
    witnesses: &[FlowGraph],
    universe: &Universe,
    cap: u128,
) -> GhostMultApprox {
    match approx_ghost_transformer(t, u_graph, est, witnesses, universe, cap) {
        GhostApprox::Top => GhostMultApprox::Top,
        GhostApprox::Closure(right) => GhostMultApprox::Product {
            left: Closure::new(t.clone(), u_graph.nodes().clone(), est.clone()),
            right,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u() -> Universe {
        Universe::new(vec![2, 4, 6, 8, 10, 15]).unwrap()
    }
    fn iv(u: &Universe, lo: Key, hi: Key, lo_open: bool, hi_open: bool) -> FlowValue {
        FlowValue::Set(u.interval(lo, hi, lo_open, hi_open).unwrap())
    }

    #[test]
    fn relates_examples() {
        let u = u();
        let a = iv(&u, Key::Fin(4), Key::Fin(8), true, true);
        let b = iv(&u, Key::NegInf, Key::Fin(8), true, true);
        assert!(Estimator::Simple.relates(a, b));
        assert!(!Estimator::Simple.relates(FlowValue::Bot, FlowValue::Set(u.point(Key::Fin(2)).unwrap())));
        let k = u.interval(Key::Fin(4), Key::Fin(6), true, false).unwrap();
        let cx = Estimator::complex(&u, Key::Fin(4), k).unwrap();
        let m = iv(&u, Key::Fin(4), Key::Fin(15), true, true);
        let n = iv(&u, Key::Fin(6), Key::Fin(15), true, true);
        assert!(cx.relates(m, n));
        assert!(!Estimator::Simple.relates(m, n));
    }

    #[test]
    fn axioms_hold_on_small_universes() {
        for eps in [vec![], vec![1]] {
            let u = Universe::new(eps).unwrap();
            for est in [Estimator::Eq, Estimator::NaturalLeq, Estimator::Simple] {
                assert_eq!(check_estimator_axioms(&est, &u), Ok(()), "{est:?}");
            }
        }
    }

    #[test]
    fn removed_pair_breaks_transitivity() {
        let u = Universe::new(vec![]).unwrap();
        let mut r = Relation::tabulate(&Estimator::Simple, &u);
        r.set(FlowValue::Set(KeySet::EMPTY), FlowValue::Set(u.full()), false);
        match check_estimator_axioms(&Estimator::Custom(r), &u) {
            Err(AxiomViolation::NotTransitive(a, _, c)) => {
                assert_eq!(a, FlowValue::Set(KeySet::EMPTY));
                assert_eq!(c, FlowValue::Set(u.full()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn remove_simple_pair(u: &Universe) -> (FlowGraph, FlowGraph) {
        // x = 1 (key 4) with left child y = 2 (key 2), y's right child is external node 3.
        let mut s = FlowGraph::empty();
        s.add_node(1).unwrap();
        s.add_node(2).unwrap();
        s.set_inflow(0, 1, iv(u, Key::NegInf, Key::Fin(10), true, false)).unwrap();
        s.set_edge(1, 2, EdgeFn::Filter(u.below(Key::Fin(4)).unwrap())).unwrap();
        s.set_edge(2, 3, EdgeFn::Filter(u.above(Key::Fin(2)).unwrap())).unwrap();
        let mut t = s.clone();
        t.set_edge(1, 2, EdgeFn::Bot).unwrap();
        t.set_edge(1, 3, EdgeFn::Filter(u.below(Key::Fin(4)).unwrap())).unwrap();
        (s, t)
    }

    #[test]
    fn ctx_estimate_remove_simple() {
        let u = u();
        let (s, t) = remove_simple_pair(&u);
        assert!(ctx_estimate(&s, &s, &Estimator::Eq, &u, DEFAULT_CLOSURE_CAP).holds());
        assert!(ctx_estimate(&s, &t, &Estimator::Simple, &u, DEFAULT_CLOSURE_CAP).holds());
        match ctx_estimate(&t, &s, &Estimator::Simple, &u, DEFAULT_CLOSURE_CAP) {
            CtxReport::Fails(CtxWitness::Transfer { node: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let up = Pred::single(t.clone());
        assert_eq!(approx_physical_update(&s, &up, &Estimator::Simple, &u, DEFAULT_CLOSURE_CAP), up);
        assert!(approx_physical_update(&s, &up, &Estimator::Eq, &u, DEFAULT_CLOSURE_CAP).is_top());
        assert!(approx_physical_update(&s, &Pred::Top, &Estimator::Simple, &u, DEFAULT_CLOSURE_CAP).is_top());
    }

    #[test]
    fn inflow_rel_examples() {
        let u = u();
        let a: Inflow = [((7, 1), iv(&u, Key::Fin(2), Key::Fin(4), true, true))].into_iter().collect();
        let b: Inflow = [((7, 1), iv(&u, Key::NegInf, Key::Fin(4), true, true))].into_iter().collect();
        let y: BTreeSet<NodeId> = [7].into_iter().collect();
        assert!(inflow_rel(&a, &a, &y, &Estimator::Simple));
        assert!(inflow_rel(&a, &b, &y, &Estimator::Simple));
        assert!(!inflow_rel(&a, &b, &BTreeSet::new(), &Estimator::Simple));
    }

    #[test]
    fn closure_materialises_supersets() {
        let u = Universe::new(vec![2, 4, 10]).unwrap();
        let mut g = FlowGraph::empty();
        g.add_node(1).unwrap();
        let base = u.interval(Key::Fin(2), Key::Fin(4), true, true).unwrap();
        g.set_inflow(7, 1, FlowValue::Set(base)).unwrap();
        let y: BTreeSet<NodeId> = [7].into_iter().collect();
        let eq = Closure::new(g.clone(), y.clone(), Estimator::Eq).materialize(&u, 4096).unwrap();
        assert_eq!(eq, vec![g.clone()]);
        let c = Closure::new(g.clone(), y, Estimator::Simple);
        let members = c.materialize(&u, 4096).unwrap();
        assert_eq!(members.len(), 1 << (u.atom_count() - 1));
        assert!(members.iter().all(|m| c.contains(m)));
        assert!(c.materialize(&u, 10).is_err());
    }
}
