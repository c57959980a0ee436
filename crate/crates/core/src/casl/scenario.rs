//! Scenario files: a start state and a list of steps, each checked as it is
//! executed. Supported algebras are `flow`, `bst` and `registry`.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::og::{check_interference_free, check_sequential, explore, local_domain, marker_remover};
use super::{check_flow_step, check_registry_upsert, Rule, StepCheck, StepFailure, Verdict};
use crate::bst::{self, check_inv_all, derive_flowgraph, run_op, Heap, Op, OpResult, Step};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, DEFAULT_CLOSURE_CAP};
use crate::flowgraph::{EdgeFn, FlowGraph, NodeId};
use crate::keyspace::{Key, Universe};
use crate::registry::{self, RegistryState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    Pass,
    Inconclusive,
    Fail,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub label: String,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioReport {
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
    /// State in which the first failure occurred.
    pub counterexample: Option<Value>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Value {
        json!({
            "verdict": self.outcome.name(),
            "steps": self.steps.iter().map(|s| json!({
                "index": s.index,
                "label": s.label,
                "verdict": s.outcome.name(),
                "detail": s.detail,
            })).collect::<Vec<_>>(),
            "counterexample": self.counterexample,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub closure_cap: u128,
    pub loop_cap: usize,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Options {
        Options { closure_cap: DEFAULT_CLOSURE_CAP, loop_cap: super::DEFAULT_LOOP_CAP, seed: 0 }
    }
}

struct Recorder {
    steps: Vec<StepRecord>,
    counterexample: Option<Value>,
}

impl Recorder {
    fn push(&mut self, label: String, outcome: Outcome, detail: String, state: impl FnOnce() -> Value) {
        if outcome != Outcome::Pass && self.counterexample.is_none() {
            self.counterexample = Some(state());
        }
        let index = self.steps.len();
        self.steps.push(StepRecord { index, label, outcome, detail });
    }

    fn finish(self) -> ScenarioReport {
        let outcome = self.steps.iter().map(|s| s.outcome).max().unwrap_or(Outcome::Pass);
        let counterexample = if outcome == Outcome::Fail { self.counterexample } else { None };
        ScenarioReport { outcome, steps: self.steps, counterexample }
    }
}

fn parse_rule(v: Option<&Value>, default: Rule) -> Result<Rule> {
    match v.and_then(Value::as_str) {
        None => Ok(default),
        Some("context") => Ok(Rule::Context),
        Some("frame") => Ok(Rule::Frame),
        Some(other) => Err(Error::Input(format!("unknown rule {other:?}"))),
    }
}

fn parse_checks(v: &Value) -> Result<BTreeSet<String>> {
    match v.get("checks") {
        None => Ok(["inv", "contents", "casl"].iter().map(|s| s.to_string()).collect()),
        Some(c) => c
            .as_array()
            .ok_or_else(|| Error::Input("\"checks\" must be a list".into()))?
            .iter()
            .map(|x| match x.as_str() {
                Some(s @ ("inv" | "contents" | "casl" | "valid")) => Ok(s.to_string()),
                _ => Err(Error::Input(format!("unknown check {x}"))),
            })
            .collect(),
    }
}

fn describe_step(check: &StepCheck, u: &Universe) -> String {
    match &check.failure {
        None => "ok".into(),
        Some(StepFailure::Estimate(w)) => match w {
            crate::estimator::CtxWitness::Transfer { inflow, node, lhs, rhs } => format!(
                "estimate fails: at inflow {} the outflow to {node} is {} before and {} after",
                inflow.iter().map(|((s, d), v)| format!("{s}->{d}:{}", u.show(*v))).collect::<Vec<_>>().join(", "),
                u.show(*lhs),
                u.show(*rhs)
            ),
            other => format!("estimate fails: {other:?}"),
        },
        Some(StepFailure::Inconclusive(n)) => format!("closure cap exceeded ({n} candidate inflows)"),
        Some(StepFailure::Frame(e)) | Some(StepFailure::Recompose(e)) => describe_star(e, u),
        Some(other) => format!("{other:?}"),
    }
}

fn describe_star(e: &crate::flowgraph::StarFailure, u: &Universe) -> String {
    use crate::flowgraph::StarFailure::*;
    match e {
        InterfaceMismatch { src, dst, expected, actual } => format!(
            "recomposition fails: interface mismatch on {src}->{dst}, frame expects {} but receives {}",
            u.show(*expected),
            u.show(*actual)
        ),
        NodeOverlap(x) => format!("recomposition fails: node {x} on both sides"),
        NotFaithful { node, composed, separate } => format!(
            "recomposition fails: flow at {node} is {} composed but {} separately",
            u.show(*composed),
            u.show(*separate)
        ),
    }
}

fn outcome_of(check: &StepCheck) -> Outcome {
    match check.failure {
        None => Outcome::Pass,
        Some(StepFailure::Inconclusive(_)) => Outcome::Inconclusive,
        Some(_) => Outcome::Fail,
    }
}

pub fn run_scenario(v: &Value, opts: &Options) -> Result<ScenarioReport> {
    match v.get("algebra").and_then(Value::as_str) {
        Some("bst") => run_bst(v, opts),
        Some("flow") => run_flow(v, opts),
        Some("registry") => run_registry(v),
        other => Err(Error::Input(format!("unknown algebra {other:?}"))),
    }
}

fn run_bst(v: &Value, opts: &Options) -> Result<ScenarioReport> {
    let init = v.get("init").ok_or_else(|| Error::Input("scenario needs \"init\"".into()))?;
    let (u, mut heap) = Heap::from_json(init)?;
    let mut rec = Recorder { steps: Vec::new(), counterexample: None };
    if let Some(c) = v.get("concurrent") {
        run_concurrent(&u, &heap, c, &mut rec)?;
        return Ok(rec.finish());
    }
    let default_rule = parse_rule(v.get("rule"), Rule::Context)?;
    let default_est = match v.get("estimator") {
        Some(e) => Some(Estimator::from_json(&u, e)?),
        None => None,
    };
    let steps = v
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Input("scenario needs a \"steps\" list".into()))?;
    let mut model = heap.contents(&u)?;
    for (i, sv) in steps.iter().enumerate() {
        let checks = parse_checks(sv)?;
        let rule = parse_rule(sv.get("rule"), default_rule)?;
        let est_override = match sv.get("estimator") {
            Some(e) => Some(Estimator::from_json(&u, e)?),
            None => default_est.clone(),
        };
        let (label, trace, next, result, op) = if let Some(opv) = sv.get("op") {
            let op = if opv.is_string() { Op::from_json(sv)? } else { Op::from_json(opv)? };
            let r = run_op(&heap, &u, &op, opts.seed.wrapping_add(i as u64))?;
            (format!("{op:?}"), r.trace, r.heap, r.result, Some(op))
        } else {
            let st = Step::from_json(&u, sv, &Estimator::Eq)?;
            let next = st.apply(&heap)?;
            (st.label.clone(), vec![st], next, OpResult::Done, None)
        };
        if checks.contains("casl") {
            let mut h = heap.clone();
            for (j, st) in trace.iter().enumerate() {
                let est = est_override.clone().unwrap_or_else(|| st.estimator.clone());
                let pre = st.pre_heap(&h);
                let post = st.apply(&h)?;
                let g = derive_flowgraph(&pre, &u)?;
                let g2 = derive_flowgraph(&post, &u)?;
                let check = check_flow_step(&g, &g2, &st.footprint, &est, rule, &u, opts.closure_cap)?;
                let outcome = outcome_of(&check);
                let detail = format!(
                    "{} rule, estimator {}, footprint {:?}: {}",
                    if rule == Rule::Context { "context" } else { "frame" },
                    est.name(),
                    st.footprint,
                    describe_step(&check, &u)
                );
                let pre_json = pre.to_json(&u);
                rec.push(format!("{label} / {} ({})", st.label, j), outcome, detail, || pre_json);
                if outcome != Outcome::Pass {
                    return Ok(rec.finish());
                }
                h = post;
            }
        }
        if let Some(op) = &op {
            match (op, &result) {
                (Op::Insert(k), OpResult::Bool(_)) => {
                    model.insert(*k);
                }
                (Op::Delete(k), OpResult::Bool(_)) => {
                    model.remove(k);
                }
                _ => {}
            }
        }
        if checks.contains("contents") {
            let got = next.contents(&u)?;
            let expect_ok = op.is_none() || got == model;
            let expected_contains = match (&op, &result) {
                (Some(Op::Contains(k)), OpResult::Bool(b)) => *b == model.contains(k),
                _ => true,
            };
            let outcome = if expect_ok && expected_contains { Outcome::Pass } else { Outcome::Fail };
            let detail = format!("contents {}", show_keys(&got));
            let nj = next.to_json(&u);
            rec.push(format!("{label} / contents"), outcome, detail, || nj);
        }
        if checks.contains("inv") {
            let rep = check_inv_all(&next, &u)?;
            let outcome = if rep.ok() { Outcome::Pass } else { Outcome::Fail };
            let detail = if rep.ok() { "invariant holds".to_string() } else { format!("violations {:?}", rep.violations) };
            let nj = next.to_json(&u);
            rec.push(format!("{label} / inv"), outcome, detail, || nj);
        }
        if op.is_none() {
            model = next.contents(&u)?;
        }
        heap = next;
    }
    Ok(rec.finish())
}

fn show_keys(keys: &BTreeSet<Key>) -> String {
    format!("{{{}}}", keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","))
}

fn run_concurrent(u: &Universe, heap: &Heap, c: &Value, rec: &mut Recorder) -> Result<()> {
    let depth = c.get("interleaveDepth").and_then(Value::as_u64).unwrap_or(6) as usize;
    let key = Key::from_json(c.get("key").ok_or_else(|| Error::Input("concurrent scenario needs a \"key\"".into()))?)?;
    let parent = c
        .get("parent")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Input("concurrent scenario needs a \"parent\" node".into()))? as NodeId;
    let planted = c.get("planted").and_then(Value::as_bool).unwrap_or(false);
    u.point(key)?;
    if !heap.nodes.contains_key(&parent) {
        return Err(Error::Input(format!("parent {parent} is not a node")));
    }
    let outlines = marker_remover(u, key, parent, planted);
    let ex = explore(heap, &outlines, depth);
    let locals = local_domain(&ex.globals);
    let seq = check_sequential(&outlines, &ex.globals, &locals);
    let intf = check_interference_free(&outlines, &ex.globals, &locals);
    let out = |ok: bool| if ok { Outcome::Pass } else { Outcome::Fail };
    let heap_json = |h: &Heap| h.to_json(u);
    let first_seq = seq.violations.first().map(|v| format!("{v:?}"));
    rec.push(
        "sequential outlines".into(),
        out(seq.free()),
        format!("{} checks, {} violations{}", seq.checked, seq.violations.len(), first_seq.map(|s| format!("; first: {s}")).unwrap_or_default()),
        || heap_json(heap),
    );
    let first = intf.violations.first().cloned();
    rec.push(
        "interference freedom".into(),
        out(intf.free()),
        match &first {
            None => format!("{} replays, no violation", intf.checked),
            Some(super::og::OgViolation::Interference { thread, step, victim, assertion, local, .. }) => format!(
                "{thread}.{step} breaks {victim}'s assertion \"{assertion}\" (local {local:?})"
            ),
            Some(other) => format!("{other:?}"),
        },
        || match &first {
            Some(super::og::OgViolation::Interference { global, .. }) => heap_json(global),
            _ => heap_json(heap),
        },
    );
    let ev = ex.violations.first().cloned();
    rec.push(
        "interleavings".into(),
        out(ev.is_none()),
        match &ev {
            None => format!("{} configurations up to depth {depth}, all assertions hold", ex.configurations),
            Some(v) => format!("schedule {:?} breaks {}'s assertion \"{}\"", v.schedule, v.thread, v.assertion),
        },
        || ev.as_ref().map_or_else(|| heap_json(heap), |v| heap_json(&v.global)),
    );
    Ok(())
}

fn run_flow(v: &Value, opts: &Options) -> Result<ScenarioReport> {
    let init = v.get("init").ok_or_else(|| Error::Input("scenario needs \"init\"".into()))?;
    let (u, mut g) = FlowGraph::from_json(init)?;
    let default_rule = parse_rule(v.get("rule"), Rule::Context)?;
    let default_est = match v.get("estimator") {
        Some(e) => Estimator::from_json(&u, e)?,
        None => Estimator::Eq,
    };
    let mut rec = Recorder { steps: Vec::new(), counterexample: None };
    let steps = v
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Input("scenario needs a \"steps\" list".into()))?;
    for (i, sv) in steps.iter().enumerate() {
        let rule = parse_rule(sv.get("rule"), default_rule)?;
        let est = match sv.get("estimator") {
            Some(e) => Estimator::from_json(&u, e)?,
            None => default_est.clone(),
        };
        let fp: BTreeSet<NodeId> = sv
            .get("footprint")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Input("flow step needs a \"footprint\"".into()))?
            .iter()
            .map(|x| x.as_u64().map(|n| n as NodeId).ok_or_else(|| Error::Input(format!("bad node id {x}"))))
            .collect::<Result<_>>()?;
        let mut edges: std::collections::BTreeMap<(NodeId, NodeId), EdgeFn> = g
            .edges()
            .iter()
            .filter(|((x, _), _)| !fp.contains(x))
            .map(|(&k, &f)| (k, f))
            .collect();
        for e in sv.get("edges").and_then(Value::as_array).into_iter().flatten() {
            let src = e.get("src").and_then(Value::as_u64).ok_or_else(|| Error::Input("edge needs \"src\"".into()))? as NodeId;
            let dst = e.get("dst").and_then(Value::as_u64).ok_or_else(|| Error::Input("edge needs \"dst\"".into()))? as NodeId;
            if !fp.contains(&src) {
                return Err(Error::Input(format!("edge source {src} is outside the footprint")));
            }
            let f = EdgeFn::from_json(&u, e.get("fn").unwrap_or(&Value::Null))?;
            if f != EdgeFn::Bot {
                edges.insert((src, dst), f);
            }
        }
        let g2 = g.with_edges(&edges)?;
        let check = check_flow_step(&g, &g2, &fp, &est, rule, &u, opts.closure_cap)?;
        let outcome = outcome_of(&check);
        let label = sv.get("label").and_then(Value::as_str).map_or_else(|| format!("step {i}"), str::to_string);
        let gj = g.to_json(&u);
        rec.push(label, outcome, describe_step(&check, &u), || gj);
        if outcome != Outcome::Pass {
            break;
        }
        g = g2;
    }
    Ok(rec.finish())
}

fn run_registry(v: &Value) -> Result<ScenarioReport> {
    let mut state = RegistryState::from_json(v.get("init").unwrap_or(&json!({})))?;
    let mut rec = Recorder { steps: Vec::new(), counterexample: None };
    let steps = v
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Input("scenario needs a \"steps\" list".into()))?;
    let int = |x: &Value| x.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or_else(|| Error::Input(format!("bad number {x}")));
    for sv in steps {
        let checks = parse_checks(sv)?;
        let sj = state.to_json();
        if let Some(up) = sv.get("upsert").and_then(Value::as_array) {
            let [k, val] = up.as_slice() else {
                return Err(Error::Input("upsert needs [key, value]".into()));
            };
            let (k, val) = (int(k)?, registry::val_from_json(val)?);
            if checks.contains("casl") {
                let a = RegistryState::new(state.history.clone());
                let r = check_registry_upsert(&a, &state, k, val)?;
                let ok = r.verdict.is_valid() && r.d_in_c;
                let detail = match &r.verdict {
                    Verdict::Valid => format!("b = {}, c = {}", r.b.to_json(), r.c.to_json()),
                    Verdict::Invalid(w) => format!("post-state outside b * c: {w:?}"),
                    Verdict::Inconclusive(m) => m.clone(),
                };
                rec.push(format!("upsert({k}, {})", registry::val_to_json(val)), if ok { Outcome::Pass } else { Outcome::Fail }, detail, || sj.clone());
            }
            state = registry::upsert_ghost(&state, k, val);
        } else if let Some(sp) = sv.get("spawn").and_then(Value::as_array) {
            let [t, k, val] = sp.as_slice() else {
                return Err(Error::Input("spawn needs [tid, key, value]".into()));
            };
            state = registry::spawn_search(&state, int(t)?, int(k)?, registry::val_from_json(val)?)
                .map_err(|e| Error::Input(e.to_string()))?;
        } else {
            return Err(Error::Input(format!("unknown registry step {sv}")));
        }
        if checks.contains("valid") || checks.contains("inv") {
            let ok = state.is_valid();
            let nj = state.to_json();
            rec.push("valid".into(), if ok { Outcome::Pass } else { Outcome::Fail }, format!("state {}", state.to_json()), || nj);
        }
    }
    Ok(rec.finish())
}

/// Runs a single op and checks each of its steps under the given rule; used by fuzzing.
pub fn check_op_steps(heap: &Heap, u: &Universe, trace: &[bst::Step], rule: Rule, cap: u128) -> Result<Vec<StepCheck>> {
    let mut h = heap.clone();
    let mut out = Vec::new();
    for st in trace {
        let pre = st.pre_heap(&h);
        let post = st.apply(&h)?;
        let g = derive_flowgraph(&pre, u)?;
        let g2 = derive_flowgraph(&post, u)?;
        out.push(check_flow_step(&g, &g2, &st.footprint, &st.estimator, rule, u, cap)?);
        h = post;
    }
    Ok(out)
}
