//! Flow graphs, their least-fixpoint flow, and the two multiplications.
//!
//! A graph `(X, E, in)` has a finite node set, edge functions from the
//! family {constant `Bot`, filter, constant `Top`} and an inflow from
//! external sources into `X`. Absent edges are constant `Bot`, absent inflow
//! entries are `Bot`; both maps are kept normalised so that structural
//! equality coincides with semantic equality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::keyspace::{oplus, FlowValue, KeySet, Universe};

pub type NodeId = u32;
pub type Inflow = BTreeMap<(NodeId, NodeId), FlowValue>;
pub type FlowAssignment = BTreeMap<NodeId, FlowValue>;

/// Representable edge function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeFn {
    Bot,
    Filter(KeySet),
    Top,
}

impl EdgeFn {
    pub fn apply(self, m: FlowValue) -> FlowValue {
        match self {
            EdgeFn::Bot => FlowValue::Bot,
            EdgeFn::Top => FlowValue::Top,
            EdgeFn::Filter(s) => crate::keyspace::meet_interval(m, s),
        }
    }

    pub fn to_json(self, u: &Universe) -> Value {
        match self {
            EdgeFn::Bot => json!("bot"),
            EdgeFn::Top => json!("top"),
            EdgeFn::Filter(s) => json!({ "filter": u.set_to_json(s) }),
        }
    }

    pub fn from_json(u: &Universe, v: &Value) -> Result<EdgeFn> {
        match v {
            Value::String(s) if s == "bot" => Ok(EdgeFn::Bot),
            Value::String(s) if s == "top" => Ok(EdgeFn::Top),
            Value::Object(o) => match o.get("filter") {
                Some(f) => Ok(EdgeFn::Filter(u.set_from_json(f)?)),
                None => Err(Error::Input(format!("edge function object needs \"filter\": {v}"))),
            },
            other => Err(Error::Input(format!("expected an edge function, found {other}"))),
        }
    }
}

/// Why a `star` composition is undefined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StarFailure {
    NodeOverlap(NodeId),
    InterfaceMismatch { src: NodeId, dst: NodeId, expected: FlowValue, actual: FlowValue },
    NotFaithful { node: NodeId, composed: FlowValue, separate: FlowValue },
}

impl fmt::Display for StarFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StarFailure::NodeOverlap(n) => write!(f, "node overlap at {n}"),
            StarFailure::InterfaceMismatch { src, dst, expected, actual } => write!(
                f,
                "interface mismatch at ({src},{dst}): inflow expects {expected:?}, outflow is {actual:?}"
            ),
            StarFailure::NotFaithful { node, composed, separate } => write!(
                f,
                "flow not faithful at {node}: composed {composed:?}, separate {separate:?}"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowGraph {
    nodes: BTreeSet<NodeId>,
    edges: BTreeMap<(NodeId, NodeId), EdgeFn>,
    inflow: Inflow,
}

impl FlowGraph {
    /// The empty graph, unit of both multiplications.
    pub fn empty() -> FlowGraph {
        FlowGraph::default()
    }

    /// Builds a graph and checks its well-formedness.
    pub fn from_parts(
        nodes: BTreeSet<NodeId>,
        edges: BTreeMap<(NodeId, NodeId), EdgeFn>,
        inflow: Inflow,
    ) -> Result<FlowGraph> {
        let mut g = FlowGraph { nodes, edges: BTreeMap::new(), inflow: BTreeMap::new() };
        for ((x, y), f) in edges {
            g.set_edge(x, y, f)?;
        }
        for ((x, y), v) in inflow {
            g.set_inflow(x, y, v)?;
        }
        Ok(g)
    }

    pub fn add_node(&mut self, x: NodeId) -> Result<()> {
        if self.inflow.keys().any(|&(s, _)| s == x) {
            return Err(Error::Contract(format!("node {x} is already an inflow source")));
        }
        self.nodes.insert(x);
        Ok(())
    }

    pub fn set_edge(&mut self, x: NodeId, y: NodeId, f: EdgeFn) -> Result<()> {
        if !self.nodes.contains(&x) {
            return Err(Error::Contract(format!("edge source {x} is not a node")));
        }
        if f == EdgeFn::Bot {
            self.edges.remove(&(x, y));
        } else {
            self.edges.insert((x, y), f);
        }
        Ok(())
    }

    pub fn set_inflow(&mut self, src: NodeId, dst: NodeId, v: FlowValue) -> Result<()> {
        if self.nodes.contains(&src) {
            return Err(Error::Contract(format!("inflow source {src} is internal")));
        }
        if !self.nodes.contains(&dst) {
            return Err(Error::Contract(format!("inflow target {dst} is not a node")));
        }
        if v == FlowValue::Bot {
            self.inflow.remove(&(src, dst));
        } else {
            self.inflow.insert((src, dst), v);
        }
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }
    pub fn edges(&self) -> &BTreeMap<(NodeId, NodeId), EdgeFn> {
        &self.edges
    }
    pub fn inflow(&self) -> &Inflow {
        &self.inflow
    }
    pub fn edge(&self, x: NodeId, y: NodeId) -> EdgeFn {
        self.edges.get(&(x, y)).copied().unwrap_or(EdgeFn::Bot)
    }
    pub fn inflow_at(&self, src: NodeId, dst: NodeId) -> FlowValue {
        self.inflow.get(&(src, dst)).copied().unwrap_or(FlowValue::Bot)
    }
    pub fn contains(&self, x: NodeId) -> bool {
        self.nodes.contains(&x)
    }

    /// The same graph with its inflow replaced (entries are normalised).
    pub fn with_inflow(&self, inflow: &Inflow) -> FlowGraph {
        FlowGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            inflow: inflow
                .iter()
                .filter(|(_, v)| !v.is_bot())
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }

    /// The same graph with its edges replaced.
    pub fn with_edges(&self, edges: &BTreeMap<(NodeId, NodeId), EdgeFn>) -> Result<FlowGraph> {
        FlowGraph::from_parts(self.nodes.clone(), edges.clone(), self.inflow.clone())
    }

    /// External nodes that receive an edge from the graph.
    pub fn external_targets(&self) -> BTreeSet<NodeId> {
        self.edges
            .keys()
            .map(|&(_, y)| y)
            .filter(|y| !self.nodes.contains(y))
            .collect()
    }

    /// Default iteration bound, `2·|X| + 2`.
    pub fn default_max_iter(&self) -> usize {
        2 * self.nodes.len() + 2
    }

    /// Least fixpoint with the default bound; never fails on the inset monoid.
    pub fn flow(&self) -> FlowAssignment {
        compute_flow(self, self.default_max_iter())
            .expect("inset flow stabilises within 2|X|+1 rounds")
    }

    /// `out(x, y)` for every external `y`, summed over the sources `x`.
    pub fn outflow_map(&self, flow: &FlowAssignment) -> BTreeMap<NodeId, FlowValue> {
        let mut out: BTreeMap<NodeId, FlowValue> = BTreeMap::new();
        for (&(x, y), f) in &self.edges {
            if self.nodes.contains(&y) {
                continue;
            }
            let v = f.apply(flow[&x]);
            let e = out.entry(y).or_insert(FlowValue::Bot);
            *e = oplus(*e, v);
        }
        out
    }

    pub fn to_json(&self, u: &Universe) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|&x| {
                let edges: Vec<Value> = self
                    .edges
                    .range((x, 0)..=(x, NodeId::MAX))
                    .map(|(&(_, y), f)| json!({ "dst": y, "fn": f.to_json(u) }))
                    .collect();
                json!({ "id": x, "edges": edges })
            })
            .collect();
        let inflow: Vec<Value> = self
            .inflow
            .iter()
            .map(|(&(s, d), &v)| json!({ "src": s, "dst": d, "value": u.value_to_json(v) }))
            .collect();
        json!({ "endpoints": u.endpoints(), "nodes": nodes, "inflow": inflow })
    }

    /// Parses the graph format; the universe comes from `"endpoints"`.
    pub fn from_json(v: &Value) -> Result<(Universe, FlowGraph)> {
        let u = universe_from_json(v.get("endpoints").unwrap_or(&json!([])))?;
        let g = FlowGraph::from_json_in(&u, v)?;
        Ok((u, g))
    }

    /// Parses the graph format against a given universe.
    pub fn from_json_in(u: &Universe, v: &Value) -> Result<FlowGraph> {
        let mut g = FlowGraph::empty();
        let nodes = v
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Input("graph needs a \"nodes\" list".into()))?;
        for n in nodes {
            g.add_node(node_id(n.get("id"))?)?;
        }
        for n in nodes {
            let x = node_id(n.get("id"))?;
            if let Some(es) = n.get("edges") {
                let es = es
                    .as_array()
                    .ok_or_else(|| Error::Input("\"edges\" must be a list".into()))?;
                for e in es {
                    let y = node_id(e.get("dst"))?;
                    let f = EdgeFn::from_json(u, e.get("fn").unwrap_or(&json!("bot")))?;
                    g.set_edge(x, y, f)?;
                }
            }
        }
        if let Some(ins) = v.get("inflow") {
            let ins = ins
                .as_array()
                .ok_or_else(|| Error::Input("\"inflow\" must be a list".into()))?;
            for e in ins {
                let s = node_id(e.get("src"))?;
                let d = node_id(e.get("dst"))?;
                let val = u.value_from_json(
                    e.get("value").ok_or_else(|| Error::Input("inflow entry needs \"value\"".into()))?,
                )?;
                g.set_inflow(s, d, val).map_err(|e| Error::Input(e.to_string()))?;
            }
        }
        Ok(g)
    }

    /// Graphviz rendering with the flow on each node.
    pub fn to_dot(&self, u: &Universe) -> String {
        let flow = self.flow();
        let mut s = String::from("digraph flow {\n");
        for &x in &self.nodes {
            s.push_str(&format!("  n{x} [label=\"{x}\\n{}\"];\n", u.show(flow[&x])));
        }
        for (&(x, y), f) in &self.edges {
            let label = match f {
                EdgeFn::Bot => "bot".to_string(),
                EdgeFn::Top => "top".to_string(),
                EdgeFn::Filter(k) => u.show_set(*k),
            };
            s.push_str(&format!("  n{x} -> n{y} [label=\"{label}\"];\n"));
        }
        for (&(src, dst), &v) in &self.inflow {
            s.push_str(&format!("  ext{src} [shape=point];\n  ext{src} -> n{dst} [label=\"{}\", style=dashed];\n", u.show(v)));
        }
        s.push_str("}\n");
        s
    }
}

pub(crate) fn universe_from_json(v: &Value) -> Result<Universe> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Input("\"endpoints\" must be a list".into()))?;
    let keys = arr
        .iter()
        .map(crate::keyspace::Key::from_json)
        .collect::<Result<Vec<_>>>()?;
    let mut finite: Vec<i64> = keys
        .into_iter()
        .filter_map(|k| match k {
            crate::keyspace::Key::Fin(v) => Some(v),
            _ => None,
        })
        .collect();
    finite.dedup();
    Universe::new(finite)
}

fn node_id(v: Option<&Value>) -> Result<NodeId> {
    v.and_then(Value::as_u64)
        .and_then(|n| NodeId::try_from(n).ok())
        .ok_or_else(|| Error::Input(format!("expected a node id, found {v:?}")))
}

/// Least solution of the flow equation by worklist iteration.
///
/// Nodes are visited in ascending id order within each round; a round counts
/// towards `max_iter`.
pub fn compute_flow(g: &FlowGraph, max_iter: usize) -> Result<FlowAssignment> {
    let ids: Vec<NodeId> = g.nodes.iter().copied().collect();
    let n = ids.len();
    let idx = |x: NodeId| ids.binary_search(&x).ok();
    let mut base = vec![FlowValue::Bot; n];
    for (&(_, d), &v) in &g.inflow {
        let i = idx(d).expect("inflow target is a node");
        base[i] = oplus(base[i], v);
    }
    let mut preds: Vec<Vec<(usize, EdgeFn)>> = vec![Vec::new(); n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (&(x, y), &f) in &g.edges {
        if let (Some(i), Some(j)) = (idx(x), idx(y)) {
            preds[j].push((i, f));
            succs[i].push(j);
        }
    }
    let mut val = vec![FlowValue::Bot; n];
    let mut current: BTreeSet<usize> = (0..n).collect();
    let mut rounds = 0;
    while !current.is_empty() {
        rounds += 1;
        if rounds > max_iter {
            return Err(Error::MaxIterExceeded(max_iter));
        }
        let mut next = BTreeSet::new();
        while let Some(i) = current.pop_first() {
            let mut v = base[i];
            for &(j, f) in &preds[i] {
                v = oplus(v, f.apply(val[j]));
            }
            if v != val[i] {
                val[i] = v;
                for &s in &succs[i] {
                    if s > i {
                        current.insert(s);
                    } else {
                        next.insert(s);
                    }
                }
            }
        }
        current = next;
    }
    Ok(ids.into_iter().zip(val).collect())
}

/// `out(x, y) = E(x, y)(flow(x))`.
pub fn outflow(g: &FlowGraph, flow: &FlowAssignment, x: NodeId, y: NodeId) -> Result<FlowValue> {
    if !g.contains(x) {
        return Err(Error::Contract(format!("outflow source {x} is not a node")));
    }
    let fx = flow
        .get(&x)
        .copied()
        .ok_or_else(|| Error::Contract(format!("flow assignment lacks node {x}")))?;
    Ok(g.edge(x, y).apply(fx))
}

/// Transfer function: the summed outflow at external `y` under inflow `inflow`.
pub fn transfer(g: &FlowGraph, inflow: &Inflow, y: NodeId) -> FlowValue {
    let h = g.with_inflow(inflow);
    let flow = h.flow();
    h.outflow_map(&flow).get(&y).copied().unwrap_or(FlowValue::Bot)
}

/// Transfer function at every external target.
pub fn transfer_all(g: &FlowGraph, inflow: &Inflow) -> BTreeMap<NodeId, FlowValue> {
    let h = g.with_inflow(inflow);
    let flow = h.flow();
    h.outflow_map(&flow)
}

/// `h|_Y`: keeps `X ∩ Y`; flow from dropped nodes becomes inflow.
pub fn restrict(g: &FlowGraph, keep: &BTreeSet<NodeId>) -> FlowGraph {
    let flow = g.flow();
    let nodes: BTreeSet<NodeId> = g.nodes.intersection(keep).copied().collect();
    let edges = g
        .edges
        .iter()
        .filter(|((x, _), _)| nodes.contains(x))
        .map(|(&k, &f)| (k, f))
        .collect();
    let mut inflow: Inflow = g
        .inflow
        .iter()
        .filter(|((_, d), _)| nodes.contains(d))
        .map(|(&k, &v)| (k, v))
        .collect();
    for (&(x, y), f) in &g.edges {
        if g.nodes.contains(&x) && !nodes.contains(&x) && nodes.contains(&y) {
            let v = f.apply(flow[&x]);
            if !v.is_bot() {
                inflow.insert((x, y), v);
            }
        }
    }
    FlowGraph { nodes, edges, inflow }
}

/// Ghost multiplication: disjoint union that forgets the mutual inflow.
pub fn ghost_mult(s: &FlowGraph, t: &FlowGraph) -> Option<FlowGraph> {
    if !s.nodes.is_disjoint(&t.nodes) {
        return None;
    }
    let nodes = s.nodes.union(&t.nodes).copied().collect();
    let mut edges = s.edges.clone();
    edges.extend(t.edges.iter().map(|(&k, &f)| (k, f)));
    let inflow = s
        .inflow
        .iter()
        .filter(|((src, _), _)| !t.nodes.contains(src))
        .chain(t.inflow.iter().filter(|((src, _), _)| !s.nodes.contains(src)))
        .map(|(&k, &v)| (k, v))
        .collect();
    Some(FlowGraph { nodes, edges, inflow })
}

fn interface_ok(a: &FlowGraph, b: &FlowGraph, b_flow: &FlowAssignment) -> std::result::Result<(), StarFailure> {
    let mut pairs: BTreeSet<(NodeId, NodeId)> = a
        .inflow
        .keys()
        .filter(|(src, _)| b.nodes.contains(src))
        .copied()
        .collect();
    pairs.extend(b.edges.keys().filter(|(_, dst)| a.nodes.contains(dst)).copied());
    for (x, y) in pairs {
        let expected = a.inflow_at(x, y);
        let actual = b.edge(x, y).apply(b_flow[&x]);
        if expected != actual {
            return Err(StarFailure::InterfaceMismatch { src: x, dst: y, expected, actual });
        }
    }
    Ok(())
}

/// Composition: ghost multiplication plus matching interfaces and faithful flow.
pub fn star(s: &FlowGraph, t: &FlowGraph) -> std::result::Result<FlowGraph, StarFailure> {
    if let Some(&x) = s.nodes.intersection(&t.nodes).next() {
        return Err(StarFailure::NodeOverlap(x));
    }
    let u = ghost_mult(s, t).expect("disjoint");
    let fs = s.flow();
    let ft = t.flow();
    interface_ok(s, t, &ft)?;
    interface_ok(t, s, &fs)?;
    let fu = u.flow();
    for (&x, &v) in fs.iter().chain(ft.iter()) {
        if fu[&x] != v {
            return Err(StarFailure::NotFaithful { node: x, composed: fu[&x], separate: v });
        }
    }
    Ok(u)
}

/// Splits `u` along a partition of its nodes.
pub fn unique_decompose(
    u: &FlowGraph,
    x1: &BTreeSet<NodeId>,
    x2: &BTreeSet<NodeId>,
) -> Result<(FlowGraph, FlowGraph)> {
    let union: BTreeSet<NodeId> = x1.union(x2).copied().collect();
    if !x1.is_disjoint(x2) || union != u.nodes {
        return Err(Error::Contract("decomposition sets must partition the node set".into()));
    }
    Ok((restrict(u, x1), restrict(u, x2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyspace::Key;

    fn set(u: &Universe, lo: i64, hi: i64, lo_open: bool, hi_open: bool) -> KeySet {
        u.interval(Key::Fin(lo), Key::Fin(hi), lo_open, hi_open).unwrap()
    }

    #[test]
    fn empty_graph_has_empty_flow() {
        assert!(FlowGraph::empty().flow().is_empty());
    }

    #[test]
    fn two_cycle_goes_top() {
        let u = Universe::new(vec![0, 5, 10]).unwrap();
        let mut g = FlowGraph::empty();
        g.add_node(1).unwrap();
        g.add_node(2).unwrap();
        g.set_inflow(9, 1, FlowValue::Set(set(&u, 0, 10, true, false))).unwrap();
        g.set_edge(1, 2, EdgeFn::Filter(set(&u, 0, 10, true, false))).unwrap();
        g.set_edge(2, 1, EdgeFn::Filter(set(&u, 5, 10, true, false))).unwrap();
        let f = g.flow();
        assert_eq!(f[&1], FlowValue::Top);
        assert_eq!(f[&2], FlowValue::Top);
    }

    #[test]
    fn transfer_examples() {
        let u = Universe::new(vec![0, 2, 4, 6]).unwrap();
        let mut g = FlowGraph::empty();
        g.add_node(1).unwrap();
        g.set_edge(1, 7, EdgeFn::Filter(set(&u, 0, 4, true, false))).unwrap();
        let s26 = u.point(Key::Fin(2)).unwrap().union(u.point(Key::Fin(6)).unwrap());
        let inflow: Inflow = [((9, 1), FlowValue::Set(s26))].into_iter().collect();
        assert_eq!(transfer(&g, &inflow, 7), FlowValue::Set(u.point(Key::Fin(2)).unwrap()));
        assert_eq!(transfer(&g, &Inflow::new(), 7), FlowValue::Bot);
        g.set_edge(1, 8, EdgeFn::Top).unwrap();
        assert_eq!(transfer(&g, &inflow, 8), FlowValue::Top);
    }

    #[test]
    fn ghost_mult_drops_mutual_inflow() {
        let mut s = FlowGraph::empty();
        s.add_node(1).unwrap();
        s.set_inflow(2, 1, FlowValue::Set(KeySet::atom(1))).unwrap();
        s.set_inflow(9, 1, FlowValue::Set(KeySet::atom(2))).unwrap();
        let mut t = FlowGraph::empty();
        t.add_node(2).unwrap();
        t.set_inflow(1, 2, FlowValue::Set(KeySet::atom(3))).unwrap();
        let u = ghost_mult(&s, &t).unwrap();
        assert_eq!(u.nodes().len(), 2);
        assert_eq!(u.inflow().len(), 1);
        assert_eq!(u.inflow_at(9, 1), FlowValue::Set(KeySet::atom(2)));
        assert!(ghost_mult(&s, &s).is_none());
        assert_eq!(ghost_mult(&s, &FlowGraph::empty()).unwrap(), s);
    }

    #[test]
    fn star_reports_interface_mismatch() {
        let mut s = FlowGraph::empty();
        s.add_node(1).unwrap();
        s.set_inflow(2, 1, FlowValue::Set(KeySet::atom(1))).unwrap();
        let mut t = FlowGraph::empty();
        t.add_node(2).unwrap();
        t.set_inflow(9, 2, FlowValue::Set(KeySet::atom(5))).unwrap();
        t.set_edge(2, 1, EdgeFn::Filter(KeySet(u128::MAX))).unwrap();
        match star(&s, &t) {
            Err(StarFailure::InterfaceMismatch { src: 2, dst: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(star(&s, &FlowGraph::empty()).unwrap(), s);
    }

    #[test]
    fn restrict_then_star_recomposes() {
        let u = Universe::new(vec![0, 5, 10]).unwrap();
        let mut g = FlowGraph::empty();
        for x in 1..=3 {
            g.add_node(x).unwrap();
        }
        g.set_inflow(9, 1, FlowValue::Set(u.full())).unwrap();
        g.set_edge(1, 2, EdgeFn::Filter(set(&u, 0, 10, true, false))).unwrap();
        g.set_edge(2, 3, EdgeFn::Filter(set(&u, 5, 10, true, false))).unwrap();
        g.set_edge(3, 20, EdgeFn::Filter(u.full())).unwrap();
        let all = g.nodes().clone();
        assert_eq!(restrict(&g, &all), g);
        assert_eq!(restrict(&g, &BTreeSet::new()), FlowGraph::empty());
        for mask in 0..8u32 {
            let y: BTreeSet<NodeId> = (1..=3).filter(|i| mask >> (i - 1) & 1 == 1).collect();
            let z: BTreeSet<NodeId> = all.difference(&y).copied().collect();
            let (a, b) = unique_decompose(&g, &y, &z).unwrap();
            assert_eq!(star(&a, &b).unwrap(), g);
        }
        assert!(unique_decompose(&g, &all, &all).is_err());
    }

    #[test]
    fn max_iter_guard() {
        let mut g = FlowGraph::empty();
        g.add_node(1).unwrap();
        g.set_inflow(9, 1, FlowValue::Top).unwrap();
        assert_eq!(compute_flow(&g, 0), Err(Error::MaxIterExceeded(0)));
        assert!(compute_flow(&g, 1).is_ok());
    }
}
