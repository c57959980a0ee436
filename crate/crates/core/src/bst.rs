//! Binary search tree case study: heap model, derived flow graph, inset and
//! keyset quantities, invariants, and the tree operations as traces of
//! field-write steps.
//!
//! The root is a sentinel. With key `-inf` the tree hangs off `root.right`
//! and the root receives `[-inf, inf]`; with key `inf` the tree hangs off
//! `root.left` and the root receives `(-inf, inf]`. Searches go left iff the
//! key is below the current node's key, so both layouts share one `find`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::flowgraph::{EdgeFn, FlowAssignment, FlowGraph, NodeId};
use crate::keyspace::{FlowValue, Key, KeySet, Universe};

/// Id of the external source feeding the root.
pub const EXT: NodeId = NodeId::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dup {
    No,
    Left,
    Right,
}

impl Dup {
    fn name(self) -> &'static str {
        match self {
            Dup::No => "no",
            Dup::Left => "left",
            Dup::Right => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeFields {
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
    pub key: Key,
    pub del: bool,
    pub dup: Dup,
}

impl NodeFields {
    pub fn new(key: Key) -> NodeFields {
        NodeFields { left: None, right: None, key, del: false, dup: Dup::No }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Heap {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, NodeFields>,
}

impl Heap {
    /// A heap holding only the `-inf` sentinel.
    pub fn sentinel() -> Heap {
        Heap { root: 0, nodes: [(0, NodeFields::new(Key::NegInf))].into_iter().collect() }
    }

    pub fn node(&self, x: NodeId) -> &NodeFields {
        &self.nodes[&x]
    }

    pub fn ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn fresh_id(&self) -> NodeId {
        self.nodes.keys().next_back().map_or(0, |&m| m + 1)
    }

    /// Inflow of the root: `(-inf, inf]` for an `inf` sentinel, `[-inf, inf]` otherwise.
    pub fn root_inflow(&self, u: &Universe) -> FlowValue {
        let full = u.full();
        match self.nodes.get(&self.root).map(|n| n.key) {
            Some(Key::PosInf) => FlowValue::Set(full.minus(KeySet::atom(0))),
            _ => FlowValue::Set(full),
        }
    }

    /// Next node on the search path for `key` from `x`.
    fn child_towards(&self, x: NodeId, key: Key) -> Option<NodeId> {
        let n = self.node(x);
        if key < n.key {
            n.left
        } else {
            n.right
        }
    }

    /// `find(key)`: the last two nodes of the search path.
    pub fn find(&self, key: Key) -> (NodeId, Option<NodeId>) {
        let mut x = self.root;
        let mut y = self.child_towards(x, key);
        let mut fuel = self.nodes.len() + 1;
        while let Some(yy) = y {
            if self.nodes.get(&yy).map_or(true, |n| n.key == key) || fuel == 0 {
                break;
            }
            fuel -= 1;
            x = yy;
            y = self.child_towards(x, key);
        }
        (x, y)
    }

    /// Logical contents: keys of unmarked non-root nodes reachable from the root.
    pub fn contents(&self, u: &Universe) -> Result<BTreeSet<Key>> {
        let flow = derive_flowgraph(self, u)?.flow();
        Ok(self
            .nodes
            .iter()
            .filter(|(x, n)| **x != self.root && !n.del && !flow[x].is_bot())
            .map(|(_, n)| n.key)
            .collect())
    }

    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.nodes.values().map(|n| n.key)
    }

    pub fn to_json(&self, u: &Universe) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|(&id, n)| {
                json!({
                    "id": id,
                    "key": n.key.to_json(),
                    "left": n.left,
                    "right": n.right,
                    "del": n.del,
                    "dup": n.dup.name(),
                })
            })
            .collect();
        json!({ "endpoints": u.endpoints(), "root": self.root, "nodes": nodes })
    }

    /// Parses a heap; without `"endpoints"` the grid is the set of finite keys.
    pub fn from_json(v: &Value) -> Result<(Universe, Heap)> {
        let root = id_field(v.get("root"), "root")?
            .ok_or_else(|| Error::Input("heap needs a \"root\"".into()))?;
        let list = v
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Input("heap needs a \"nodes\" list".into()))?;
        let mut nodes = BTreeMap::new();
        for n in list {
            let id = id_field(n.get("id"), "id")?.ok_or_else(|| Error::Input("node needs an \"id\"".into()))?;
            let key = Key::from_json(n.get("key").ok_or_else(|| Error::Input(format!("node {id} needs a key")))?)?;
            let dup = match n.get("dup").and_then(Value::as_str).unwrap_or("no") {
                "no" => Dup::No,
                "left" => Dup::Left,
                "right" => Dup::Right,
                other => return Err(Error::Input(format!("unknown dup value {other:?}"))),
            };
            let del = match n.get("del") {
                None => false,
                Some(d) => d.as_bool().ok_or_else(|| Error::Input("del must be a boolean".into()))?,
            };
            let fields = NodeFields {
                left: id_field(n.get("left"), "left")?,
                right: id_field(n.get("right"), "right")?,
                key,
                del,
                dup,
            };
            if nodes.insert(id, fields).is_some() {
                return Err(Error::Input(format!("duplicate node id {id}")));
            }
        }
        if !nodes.contains_key(&root) {
            return Err(Error::Input(format!("root {root} is not a node")));
        }
        let u = match v.get("endpoints") {
            Some(e) => crate::flowgraph::universe_from_json(e)?,
            None => Universe::from_keys(nodes.values().map(|n| n.key))?,
        };
        for n in nodes.values() {
            u.point(n.key)?;
        }
        Ok((u, Heap { root, nodes }))
    }
}

fn id_field(v: Option<&Value>, what: &str) -> Result<Option<NodeId>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_u64()
            .filter(|&x| x < EXT as u64)
            .map(|x| Some(x as NodeId))
            .ok_or_else(|| Error::Input(format!("{what} must be a node id, found {n}"))),
        Some(other) => Err(Error::Input(format!("{what} must be a node id or null, found {other}"))),
    }
}

/// Edge functions of one node, keyed by target.
pub fn node_edges(n: &NodeFields, u: &Universe) -> Result<Vec<(NodeId, EdgeFn)>> {
    if let (Some(l), Some(r)) = (n.left, n.right) {
        if l == r {
            return Ok(vec![(l, EdgeFn::Top)]);
        }
    }
    let mut out = Vec::new();
    if let Some(l) = n.left {
        if n.dup != Dup::Left {
            out.push((l, EdgeFn::Filter(u.below(n.key)?)));
        }
    }
    if let Some(r) = n.right {
        if n.dup != Dup::Right {
            out.push((r, EdgeFn::Filter(u.above(n.key)?)));
        }
    }
    Ok(out)
}

/// The flow graph induced by the heap, with the root fed from `EXT`.
pub fn derive_flowgraph(h: &Heap, u: &Universe) -> Result<FlowGraph> {
    derive_flowgraph_with(h, u, h.root_inflow(u))
}

pub fn derive_flowgraph_with(h: &Heap, u: &Universe, root_inflow: FlowValue) -> Result<FlowGraph> {
    let mut g = FlowGraph::empty();
    for &x in h.nodes.keys() {
        g.add_node(x)?;
    }
    for (&x, n) in &h.nodes {
        for (y, f) in node_edges(n, u)? {
            g.set_edge(x, y, f)?;
        }
    }
    g.set_inflow(EXT, h.root, root_inflow)?;
    Ok(g)
}

/// Inset, outsets, keyset and physical contents of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quantities {
    pub is: FlowValue,
    pub osl: FlowValue,
    pub osr: FlowValue,
    pub ks: KeySet,
    pub c: Option<Key>,
}

/// Outsets `Top` count as every key, `Bot` as none, when subtracted.
fn as_keys(v: FlowValue, u: &Universe) -> KeySet {
    match v {
        FlowValue::Bot => KeySet::EMPTY,
        FlowValue::Set(s) => s,
        FlowValue::Top => u.full(),
    }
}

pub fn derived_quantities(h: &Heap, u: &Universe, flow: &FlowAssignment, x: NodeId) -> Result<Quantities> {
    let n = h
        .nodes
        .get(&x)
        .ok_or_else(|| Error::Contract(format!("node {x} is not in the heap")))?;
    let is = flow.get(&x).copied().unwrap_or(FlowValue::Bot);
    let edges = node_edges(n, u)?;
    let out_to = |child: Option<NodeId>| match child {
        None => FlowValue::Set(KeySet::EMPTY),
        Some(c) => edges
            .iter()
            .find(|(y, _)| *y == c)
            .map_or(FlowValue::Bot, |(_, f)| f.apply(is)),
    };
    let osl = out_to(n.left);
    let osr = out_to(n.right);
    let ks = match is {
        FlowValue::Set(s) => s.minus(as_keys(osl, u).union(as_keys(osr, u))),
        _ => KeySet::EMPTY,
    };
    let c = (!n.del && x != h.root).then_some(n.key);
    Ok(Quantities { is, osl, osr, ks, c })
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum InvViolation {
    ChildOutside { node: NodeId, child: NodeId },
    Duplicate { node: NodeId },
    InsetTop { node: NodeId },
    ContentsOutsideKeyset { node: NodeId },
    KeyNotInInset { node: NodeId },
    RootInset,
    RootDeleted,
    RootKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvReport {
    pub verdicts: BTreeMap<NodeId, bool>,
    pub contents: BTreeSet<Key>,
    pub keysets: BTreeMap<NodeId, KeySet>,
    pub insets: BTreeMap<NodeId, FlowValue>,
    pub violations: Vec<InvViolation>,
}

impl InvReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates the node invariant for every node in `region`, against the full heap.
pub fn check_inv(h: &Heap, u: &Universe, region: &BTreeSet<NodeId>) -> Result<InvReport> {
    let g = derive_flowgraph(h, u)?;
    let flow = g.flow();
    let mut rep = InvReport {
        verdicts: BTreeMap::new(),
        contents: BTreeSet::new(),
        keysets: BTreeMap::new(),
        insets: BTreeMap::new(),
        violations: Vec::new(),
    };
    for &x in region {
        let n = h
            .nodes
            .get(&x)
            .ok_or_else(|| Error::Contract(format!("region node {x} is not in the heap")))?;
        let q = derived_quantities(h, u, &flow, x)?;
        let mut v = Vec::new();
        for child in [n.left, n.right].into_iter().flatten() {
            if !h.nodes.contains_key(&child) {
                v.push(InvViolation::ChildOutside { node: x, child });
            }
        }
        if n.dup != Dup::No {
            v.push(InvViolation::Duplicate { node: x });
        }
        if q.is.is_top() {
            v.push(InvViolation::InsetTop { node: x });
        }
        if let Some(k) = q.c {
            if !u.point(k)?.subset(q.ks) {
                v.push(InvViolation::ContentsOutsideKeyset { node: x });
            }
        }
        if let FlowValue::Set(s) = q.is {
            if !u.point(n.key)?.subset(s) {
                v.push(InvViolation::KeyNotInInset { node: x });
            }
        }
        if x == h.root {
            if q.is != h.root_inflow(u) {
                v.push(InvViolation::RootInset);
            }
            if n.del {
                v.push(InvViolation::RootDeleted);
            }
            if !matches!(n.key, Key::NegInf | Key::PosInf) {
                v.push(InvViolation::RootKey);
            }
        }
        rep.verdicts.insert(x, v.is_empty());
        rep.keysets.insert(x, q.ks);
        rep.insets.insert(x, q.is);
        rep.contents.extend(q.c);
        rep.violations.extend(v);
    }
    Ok(rep)
}

/// Invariant over the whole heap.
pub fn check_inv_all(h: &Heap, u: &Universe) -> Result<InvReport> {
    check_inv(h, u, &h.ids())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PremiseFailure {
    EdgeNotDecreasing { src: NodeId, dst: NodeId },
    OutsetsOverlap { node: NodeId },
    ForeignInflow { node: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecompReport {
    pub contents1: BTreeSet<Key>,
    pub contents2: BTreeSet<Key>,
    pub keysets_disjoint: bool,
    pub premises: Vec<PremiseFailure>,
}

fn value_leq(a: FlowValue, b: FlowValue) -> bool {
    match (a, b) {
        (FlowValue::Bot, _) | (_, FlowValue::Top) => true,
        (FlowValue::Set(x), FlowValue::Set(y)) => x.subset(y),
        _ => false,
    }
}

/// Splits the whole heap into two regions and checks keyset disjointness.
pub fn decomp(h: &Heap, u: &Universe, y1: &BTreeSet<NodeId>, y2: &BTreeSet<NodeId>) -> Result<DecompReport> {
    let all: BTreeSet<NodeId> = y1.union(y2).copied().collect();
    if !y1.is_disjoint(y2) || all != h.ids() {
        return Err(Error::Contract("regions must partition the heap".into()));
    }
    let g = derive_flowgraph(h, u)?;
    let flow = g.flow();
    let mut premises = Vec::new();
    for (&(x, y), f) in g.edges() {
        if !value_leq(f.apply(flow[&x]), flow[&x]) {
            premises.push(PremiseFailure::EdgeNotDecreasing { src: x, dst: y });
        }
    }
    let mut ks1 = KeySet::EMPTY;
    let mut ks2 = KeySet::EMPTY;
    let mut c1 = BTreeSet::new();
    let mut c2 = BTreeSet::new();
    for &x in h.nodes.keys() {
        let q = derived_quantities(h, u, &flow, x)?;
        let n = h.node(x);
        let overlap = match (n.left, n.right) {
            (Some(l), Some(r)) if l == r => !q.is.is_bot(),
            _ => !as_keys(q.osl, u).disjoint(as_keys(q.osr, u)),
        };
        if overlap {
            premises.push(PremiseFailure::OutsetsOverlap { node: x });
        }
        if y1.contains(&x) {
            ks1 = ks1.union(q.ks);
            c1.extend(q.c);
        } else {
            ks2 = ks2.union(q.ks);
            c2.extend(q.c);
        }
    }
    for &(_, d) in g.inflow().keys() {
        if d != h.root {
            premises.push(PremiseFailure::ForeignInflow { node: d });
        }
    }
    Ok(DecompReport { contents1: c1, contents2: c2, keysets_disjoint: ks1.disjoint(ks2), premises })
}

/// A single field write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Field {
    Left(Option<NodeId>),
    Right(Option<NodeId>),
    Key(Key),
    Del(bool),
    Dup(Dup),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Write {
    pub node: NodeId,
    pub field: Field,
}

/// An atomic command step with its declared footprint and estimator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub label: String,
    /// Node created (unlinked) before the writes.
    pub alloc: Option<(NodeId, NodeFields)>,
    pub writes: Vec<Write>,
    pub footprint: BTreeSet<NodeId>,
    pub estimator: Estimator,
}

impl Step {
    fn new(label: &str, footprint: &[NodeId], estimator: Estimator) -> Step {
        Step {
            label: label.to_string(),
            alloc: None,
            writes: Vec::new(),
            footprint: footprint.iter().copied().collect(),
            estimator,
        }
    }

    fn write(mut self, node: NodeId, field: Field) -> Step {
        self.writes.push(Write { node, field });
        self
    }

    /// Heap after allocation, before the writes.
    pub fn pre_heap(&self, h: &Heap) -> Heap {
        let mut h = h.clone();
        if let Some((id, f)) = &self.alloc {
            h.nodes.insert(*id, f.clone());
        }
        h
    }

    pub fn apply(&self, h: &Heap) -> Result<Heap> {
        let mut h = self.pre_heap(h);
        for w in &self.writes {
            let n = h
                .nodes
                .get_mut(&w.node)
                .ok_or_else(|| Error::Contract(format!("write to missing node {}", w.node)))?;
            match w.field {
                Field::Left(v) => n.left = v,
                Field::Right(v) => n.right = v,
                Field::Key(k) => n.key = k,
                Field::Del(d) => n.del = d,
                Field::Dup(d) => n.dup = d,
            }
        }
        Ok(h)
    }

    pub fn to_json(&self, u: &Universe) -> Value {
        let writes: Vec<Value> = self
            .writes
            .iter()
            .map(|w| {
                let (field, value) = match &w.field {
                    Field::Left(v) => ("left", json!(v)),
                    Field::Right(v) => ("right", json!(v)),
                    Field::Key(k) => ("key", k.to_json()),
                    Field::Del(d) => ("del", json!(d)),
                    Field::Dup(d) => ("dup", json!(d.name())),
                };
                json!({ "node": w.node, "field": field, "value": value })
            })
            .collect();
        let mut v = json!({
            "label": self.label,
            "writes": writes,
            "footprint": self.footprint,
            "estimator": self.estimator.to_json(u),
        });
        if let Some((id, f)) = &self.alloc {
            v["alloc"] = json!({ "id": id, "key": f.key.to_json() });
        }
        v
    }

    /// Parses a write step. Fields: `"writes"`, `"footprint"`, optional `"alloc"`.
    pub fn from_json(u: &Universe, v: &Value, default_est: &Estimator) -> Result<Step> {
        let label = v.get("label").and_then(Value::as_str).unwrap_or("write").to_string();
        let footprint = v
            .get("footprint")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Input("step needs a \"footprint\" list".into()))?
            .iter()
            .map(|x| id_field(Some(x), "footprint")?.ok_or_else(|| Error::Input("null in footprint".into())))
            .collect::<Result<BTreeSet<_>>>()?;
        let estimator = match v.get("estimator") {
            Some(e) => Estimator::from_json(u, e)?,
            None => default_est.clone(),
        };
        let mut writes = Vec::new();
        for w in v.get("writes").and_then(Value::as_array).into_iter().flatten() {
            let node = id_field(w.get("node"), "node")?.ok_or_else(|| Error::Input("write needs a node".into()))?;
            let value = w.get("value").unwrap_or(&Value::Null);
            let field = match w.get("field").and_then(Value::as_str) {
                Some("left") => Field::Left(id_field(Some(value), "left")?),
                Some("right") => Field::Right(id_field(Some(value), "right")?),
                Some("key") => Field::Key(Key::from_json(value)?),
                Some("del") => Field::Del(value.as_bool().ok_or_else(|| Error::Input("del must be a boolean".into()))?),
                Some("dup") => Field::Dup(match value.as_str() {
                    Some("no") => Dup::No,
                    Some("left") => Dup::Left,
                    Some("right") => Dup::Right,
                    _ => return Err(Error::Input(format!("bad dup value {value}"))),
                }),
                other => return Err(Error::Input(format!("unknown field {other:?}"))),
            };
            if let Field::Key(k) = field {
                u.point(k)?;
            }
            writes.push(Write { node, field });
        }
        let alloc = match v.get("alloc") {
            None => None,
            Some(a) => {
                let id = id_field(a.get("id"), "alloc id")?.ok_or_else(|| Error::Input("alloc needs an id".into()))?;
                let key = Key::from_json(a.get("key").unwrap_or(&Value::Null))?;
                u.point(key)?;
                Some((id, NodeFields::new(key)))
            }
        };
        Ok(Step { label, alloc, writes, footprint, estimator })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Find(Key),
    Contains(Key),
    Insert(Key),
    Delete(Key),
    FindSucc(NodeId),
    /// Target from `find(*)` when `None`; side tried left first when `None`.
    RemoveSimple { target: Option<NodeId>, side: Option<Side> },
    RemoveComplex { target: Option<NodeId> },
    Rotate { target: Option<NodeId> },
}

impl Op {
    pub fn is_maintenance(&self) -> bool {
        matches!(self, Op::RemoveSimple { .. } | Op::RemoveComplex { .. } | Op::Rotate { .. })
    }

    pub fn from_json(v: &Value) -> Result<Op> {
        let name = v
            .get("op")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Input(format!("operation needs an \"op\" name: {v}")))?;
        let key = || -> Result<Key> {
            let k = Key::from_json(v.get("key").ok_or_else(|| Error::Input(format!("{name} needs a key")))?)?;
            match k {
                Key::Fin(_) => Ok(k),
                _ => Err(Error::Input(format!("{name} needs a finite key"))),
            }
        };
        let target = id_field(v.get("target"), "target")?;
        Ok(match name {
            "find" => Op::Find(key()?),
            "contains" => Op::Contains(key()?),
            "insert" => Op::Insert(key()?),
            "delete" => Op::Delete(key()?),
            "findSucc" => Op::FindSucc(target.ok_or_else(|| Error::Input("findSucc needs a target".into()))?),
            "removeSimple" => Op::RemoveSimple {
                target,
                side: match v.get("side").and_then(Value::as_str) {
                    None => None,
                    Some("left") => Some(Side::Left),
                    Some("right") => Some(Side::Right),
                    Some(s) => return Err(Error::Input(format!("unknown side {s:?}"))),
                },
            },
            "removeComplex" => Op::RemoveComplex { target },
            "rotate" => Op::Rotate { target },
            other => return Err(Error::Input(format!("unknown operation {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpResult {
    Bool(bool),
    Found { x: NodeId, y: Option<NodeId> },
    Succ { p: NodeId, y: NodeId },
    Done,
    Skipped,
}

impl OpResult {
    pub fn to_json(&self) -> Value {
        match self {
            OpResult::Bool(b) => json!(b),
            OpResult::Found { x, y } => json!({ "x": x, "y": y }),
            OpResult::Succ { p, y } => json!({ "p": p, "y": y }),
            OpResult::Done => json!("done"),
            OpResult::Skipped => json!("skipped"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpRun {
    pub heap: Heap,
    pub result: OpResult,
    pub trace: Vec<Step>,
}

/// Nodes with non-`Bot` inset, i.e. linked into the tree.
pub fn reachable(h: &Heap, u: &Universe) -> Result<Vec<NodeId>> {
    let flow = derive_flowgraph(h, u)?.flow();
    Ok(flow.iter().filter(|(_, v)| !v.is_bot()).map(|(&x, _)| x).collect())
}

/// `find(*)`: a seeded uniform pick among the reachable nodes.
pub fn find_any(h: &Heap, u: &Universe, seed: u64) -> Result<NodeId> {
    let nodes = reachable(h, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(*nodes.choose(&mut rng).unwrap_or(&h.root))
}

/// `findSucc(x)`: left-most node `y` of `x`'s right subtree and its parent `p`.
pub fn find_succ(h: &Heap, x: NodeId) -> Option<(NodeId, NodeId)> {
    let r = h.node(x).right?;
    let mut p = x;
    let mut y = r;
    let mut fuel = h.nodes.len();
    while let Some(l) = h.nodes.get(&y)?.left {
        if fuel == 0 {
            return None;
        }
        fuel -= 1;
        p = y;
        y = l;
    }
    Some((p, y))
}

fn finish(h: &Heap, result: OpResult, trace: Vec<Step>) -> Result<OpRun> {
    let mut heap = h.clone();
    for s in &trace {
        heap = s.apply(&heap)?;
    }
    Ok(OpRun { heap, result, trace })
}

/// Runs an operation; field writes are recorded as steps and applied in order.
pub fn run_op(h: &Heap, u: &Universe, op: &Op, seed: u64) -> Result<OpRun> {
    let pick = |t: &Option<NodeId>| -> Result<NodeId> {
        match t {
            Some(x) if h.nodes.contains_key(x) => Ok(*x),
            Some(x) => Err(Error::Input(format!("target {x} is not a node"))),
            None => find_any(h, u, seed),
        }
    };
    let check_key = |k: Key| -> Result<()> {
        u.point(k)?;
        Ok(())
    };
    match op {
        Op::Find(k) => {
            check_key(*k)?;
            let (x, y) = h.find(*k);
            finish(h, OpResult::Found { x, y }, vec![])
        }
        Op::Contains(k) => {
            check_key(*k)?;
            let (_, y) = h.find(*k);
            finish(h, OpResult::Bool(y.is_some_and(|y| !h.node(y).del)), vec![])
        }
        Op::Delete(k) => {
            check_key(*k)?;
            match h.find(*k).1 {
                Some(y) if !h.node(y).del => {
                    let s = Step::new("mark", &[y], Estimator::Eq).write(y, Field::Del(true));
                    finish(h, OpResult::Bool(true), vec![s])
                }
                _ => finish(h, OpResult::Bool(false), vec![]),
            }
        }
        Op::Insert(k) => {
            check_key(*k)?;
            match h.find(*k) {
                (x, None) => {
                    let z = h.fresh_id();
                    let mut s = Step::new("link", &[x, z], Estimator::Eq);
                    s.alloc = Some((z, NodeFields::new(*k)));
                    let field = if *k < h.node(x).key { Field::Left(Some(z)) } else { Field::Right(Some(z)) };
                    finish(h, OpResult::Bool(true), vec![s.write(x, field)])
                }
                (_, Some(y)) if h.node(y).del => {
                    let s = Step::new("unmark", &[y], Estimator::Eq).write(y, Field::Del(false));
                    finish(h, OpResult::Bool(true), vec![s])
                }
                _ => finish(h, OpResult::Bool(false), vec![]),
            }
        }
        Op::FindSucc(x) => {
            if !h.nodes.contains_key(x) {
                return Err(Error::Input(format!("target {x} is not a node")));
            }
            match find_succ(h, *x) {
                Some((p, y)) => finish(h, OpResult::Succ { p, y }, vec![]),
                None => finish(h, OpResult::Skipped, vec![]),
            }
        }
        Op::RemoveSimple { target, side } => {
            let x = pick(target)?;
            let sides = match side {
                Some(s) => vec![*s],
                None => vec![Side::Left, Side::Right],
            };
            for s in sides {
                if let Some(step) = remove_simple_step(h, x, s) {
                    return finish(h, OpResult::Done, vec![step]);
                }
            }
            finish(h, OpResult::Skipped, vec![])
        }
        Op::RemoveComplex { target } => {
            let x = pick(target)?;
            match remove_complex_steps(h, u, x)? {
                Some(steps) => finish(h, OpResult::Done, steps),
                None => finish(h, OpResult::Skipped, vec![]),
            }
        }
        Op::Rotate { target } => {
            let x = pick(target)?;
            match rotate_steps(h, x) {
                Some(steps) => finish(h, OpResult::Done, steps),
                None => finish(h, OpResult::Skipped, vec![]),
            }
        }
    }
}

/// Unlinks a marked child with at most one child of its own.
fn remove_simple_step(h: &Heap, x: NodeId, side: Side) -> Option<Step> {
    let xn = h.node(x);
    let y = match side {
        Side::Left => xn.left?,
        Side::Right => xn.right?,
    };
    let yn = h.nodes.get(&y)?;
    if !yn.del {
        return None;
    }
    let replacement = match (yn.left, yn.right) {
        (l, None) => l,
        (None, r) => r,
        _ => return None,
    };
    let field = match side {
        Side::Left => Field::Left(replacement),
        Side::Right => Field::Right(replacement),
    };
    Some(Step::new("unlink", &[x, y], Estimator::Simple).write(x, field))
}

/// Copies the successor's key into a marked node with two children, then unlinks the successor.
fn remove_complex_steps(h: &Heap, u: &Universe, x: NodeId) -> Result<Option<Vec<Step>>> {
    let xn = h.node(x);
    if !xn.del || xn.left.is_none() || xn.right.is_none() {
        return Ok(None);
    }
    let Some((p, y)) = find_succ(h, x) else {
        return Ok(None);
    };
    let flow = derive_flowgraph(h, u)?.flow();
    let kx = xn.key;
    let yn = h.node(y);
    let ky = yn.key;
    let m = match flow[&x] {
        FlowValue::Set(s) => s,
        _ => return Ok(None),
    };
    let k = m.inter(u.interval(kx, ky, true, false)?);
    let copy = Step::new("copy key", &[x, y], Estimator::complex(u, kx, k)?).write(x, Field::Key(ky));
    let swap = Step::new("swap del", &[x, y], Estimator::Eq)
        .write(x, Field::Del(yn.del))
        .write(y, Field::Del(true));
    let unlink = if p == x {
        Step::new("unlink", &[x, y], Estimator::Simple).write(x, Field::Right(yn.right))
    } else {
        Step::new("unlink", &[p, y], Estimator::Simple).write(p, Field::Left(yn.right))
    };
    Ok(Some(vec![copy, swap, unlink]))
}

/// Right rotation through a temporary duplicate of `x.left`.
fn rotate_steps(h: &Heap, x: NodeId) -> Option<Vec<Step>> {
    let y = h.node(x).left?;
    let yn = h.nodes.get(&y)?;
    let z = yn.left?;
    let zn = h.nodes.get(&z)?;
    let c = h.fresh_id();
    let fp = [x, y, z, c];
    let mut dup = Step::new("duplicate", &fp, Estimator::Eq);
    dup.alloc = Some((
        c,
        NodeFields { left: None, right: yn.right, key: yn.key, del: yn.del, dup: Dup::Right },
    ));
    let dup = dup.write(c, Field::Left(zn.right));
    let link = Step::new("link duplicate", &fp, Estimator::Eq).write(z, Field::Right(Some(c)));
    let swing = Step::new("swing", &fp, Estimator::Eq)
        .write(x, Field::Left(Some(z)))
        .write(c, Field::Dup(Dup::No));
    let retire = Step::new("retire", &fp, Estimator::Eq).write(y, Field::Del(true));
    Some(vec![dup, link, swing, retire])
}

/// A random valid tree over the grid keys, with some nodes marked.
pub fn random_tree(keys: &[i64], size: usize, mark_ratio: f64, seed: u64) -> Heap {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = keys.to_vec();
    pool.shuffle(&mut rng);
    let mut h = Heap::sentinel();
    for &k in pool.iter().take(size) {
        let key = Key::Fin(k);
        if let (x, None) = h.find(key) {
            let z = h.fresh_id();
            let mut n = NodeFields::new(key);
            n.del = rng.gen_bool(mark_ratio);
            h.nodes.insert(z, n);
            let xn = h.nodes.get_mut(&x).expect("search ends at a node");
            if key < xn.key {
                xn.left = Some(z);
            } else {
                xn.right = Some(z);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(keys: &[i64]) -> (Universe, Heap) {
        let u = Universe::new((1..=20).collect()).unwrap();
        let mut h = Heap::sentinel();
        for &k in keys {
            h = run_op(&h, &u, &Op::Insert(Key::Fin(k)), 0).unwrap().heap;
        }
        (u, h)
    }

    #[test]
    fn single_root_flow() {
        let u = Universe::new(vec![]).unwrap();
        let h = Heap::sentinel();
        let g = derive_flowgraph(&h, &u).unwrap();
        assert_eq!(g.flow()[&0], FlowValue::Set(u.full()));
        assert!(g.edges().is_empty());
    }

    #[test]
    fn insert_delete_contains() {
        let (u, h) = tree(&[4]);
        let r = run_op(&h, &u, &Op::Insert(Key::Fin(5)), 0).unwrap();
        assert_eq!(r.result, OpResult::Bool(true));
        let c: Vec<Key> = r.heap.contents(&u).unwrap().into_iter().collect();
        assert_eq!(c, vec![Key::Fin(4), Key::Fin(5)]);
        let d = run_op(&r.heap, &u, &Op::Delete(Key::Fin(4)), 0).unwrap();
        assert_eq!(d.result, OpResult::Bool(true));
        let q = run_op(&d.heap, &u, &Op::Contains(Key::Fin(4)), 0).unwrap();
        assert_eq!(q.result, OpResult::Bool(false));
        assert_eq!(d.heap.nodes.len(), 3);
        assert!(check_inv_all(&d.heap, &u).unwrap().ok());
    }

    #[test]
    fn dup_right_blocks_forwarding() {
        let u = Universe::new(vec![1, 2]).unwrap();
        let mut n = NodeFields::new(Key::Fin(1));
        n.right = Some(7);
        n.dup = Dup::Right;
        assert!(node_edges(&n, &u).unwrap().is_empty());
    }

    #[test]
    fn two_parents_give_top() {
        let (u, mut h) = tree(&[4, 2, 6]);
        let (_, six) = h.find(Key::Fin(6));
        let (_, two) = h.find(Key::Fin(2));
        h.nodes.get_mut(&two.unwrap()).unwrap().right = six;
        let rep = check_inv_all(&h, &u).unwrap();
        assert!(rep.violations.contains(&InvViolation::InsetTop { node: six.unwrap() }));
    }

    #[test]
    fn maintenance_keeps_contents() {
        let (u, h) = tree(&[8, 4, 12, 2, 6, 10, 14, 5]);
        let before = h.contents(&u).unwrap();
        let (_, four) = h.find(Key::Fin(4));
        let h = run_op(&h, &u, &Op::Delete(Key::Fin(4)), 0).unwrap().heap;
        let r = run_op(&h, &u, &Op::RemoveComplex { target: four }, 0).unwrap();
        assert_eq!(r.result, OpResult::Done);
        let mut expect = before.clone();
        expect.remove(&Key::Fin(4));
        assert_eq!(r.heap.contents(&u).unwrap(), expect);
        assert!(check_inv_all(&r.heap, &u).unwrap().ok());
        let rot = run_op(&r.heap, &u, &Op::Rotate { target: Some(0) }, 0).unwrap();
        let (_, eight) = r.heap.find(Key::Fin(8));
        let rot2 = run_op(&r.heap, &u, &Op::Rotate { target: eight }, 0).unwrap();
        for run in [rot, rot2] {
            assert_eq!(run.heap.contents(&u).unwrap(), expect);
            assert!(check_inv_all(&run.heap, &u).unwrap().ok());
        }
    }

    #[test]
    fn decomp_detects_shared_child() {
        let (u, mut h) = tree(&[4, 2]);
        let (_, four) = h.find(Key::Fin(4));
        let (_, two) = h.find(Key::Fin(2));
        h.nodes.get_mut(&four.unwrap()).unwrap().right = two;
        let all = h.ids();
        let rep = decomp(&h, &u, &all, &BTreeSet::new()).unwrap();
        assert!(rep.premises.contains(&PremiseFailure::OutsetsOverlap { node: four.unwrap() }));
    }

    fn fig2() -> (Universe, Heap) {
        let v: Value = serde_json::from_str(include_str!("../data/fig2.json")).unwrap();
        Heap::from_json(&v).unwrap()
    }

    fn iv(u: &Universe, lo: Key, hi: Key, lo_open: bool, hi_open: bool) -> FlowValue {
        FlowValue::Set(u.interval(lo, hi, lo_open, hi_open).unwrap())
    }

    #[test]
    fn fig2_insets_and_keysets() {
        use Key::{Fin, NegInf, PosInf};
        let (u, h) = fig2();
        let flow = derive_flowgraph(&h, &u).unwrap().flow();
        let expect = [
            (1, iv(&u, NegInf, PosInf, true, true)),
            (2, iv(&u, NegInf, Fin(4), true, true)),
            (3, iv(&u, Fin(1), Fin(4), true, true)),
            (4, iv(&u, Fin(4), PosInf, true, true)),
            (5, iv(&u, Fin(4), Fin(15), true, true)),
            (6, iv(&u, Fin(4), Fin(8), true, true)),
            (7, iv(&u, Fin(6), Fin(8), true, true)),
            (8, iv(&u, Fin(8), Fin(15), true, true)),
            (9, iv(&u, Fin(15), PosInf, true, true)),
        ];
        for (x, v) in expect {
            assert_eq!(flow[&x], v, "node {x}");
        }
        let p = derived_quantities(&h, &u, &flow, 5).unwrap();
        assert_eq!(p.ks, u.point(Fin(8)).unwrap());
        let a = derived_quantities(&h, &u, &flow, 2).unwrap();
        assert!(u.interval(NegInf, Fin(1), true, false).unwrap().subset(a.ks));
        let rep = check_inv_all(&h, &u).unwrap();
        assert!(rep.ok(), "{:?}", rep.violations);
        let c: Vec<i64> = rep.contents.iter().map(|k| match k { Fin(v) => *v, _ => 0 }).collect();
        assert_eq!(c, vec![1, 3, 6, 7, 8, 9, 15, 18]);
    }

    #[test]
    fn fig2_remove_complex() {
        use Key::{Fin, NegInf, PosInf};
        let (u, h) = fig2();
        let r = run_op(&h, &u, &Op::RemoveComplex { target: Some(1) }, 0).unwrap();
        assert_eq!(r.trace.len(), 3);
        let flow = derive_flowgraph(&r.heap, &u).unwrap().flow();
        assert_eq!(flow[&2], iv(&u, NegInf, Fin(6), true, true));
        assert_eq!(flow[&3], iv(&u, Fin(1), Fin(6), true, true));
        assert_eq!(flow[&4], iv(&u, Fin(6), PosInf, true, true));
        assert_eq!(flow[&5], iv(&u, Fin(6), Fin(15), true, true));
        assert!(check_inv_all(&r.heap, &u).unwrap().ok());
        assert_eq!(r.heap.contents(&u).unwrap(), h.contents(&u).unwrap());
    }

    #[test]
    fn fig2_decomp() {
        let (u, h) = fig2();
        let y1: BTreeSet<NodeId> = [1, 5, 6].into_iter().collect();
        let y2 = h.ids().difference(&y1).copied().collect();
        let rep = decomp(&h, &u, &y1, &y2).unwrap();
        assert!(rep.keysets_disjoint && rep.premises.is_empty());
        assert!(rep.contents1.is_disjoint(&rep.contents2));
    }
}
