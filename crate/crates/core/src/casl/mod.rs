//! Predicates, separating conjunction, program semantics and the validity
//! checks for plain and context-aware triples, instantiated for flow graphs
//! and registry states.

pub mod og;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimator::{approx_physical_update, ctx_estimate, Closure, CtxReport, CtxWitness, Estimator};
use crate::flowgraph::{restrict, star as flow_star, EdgeFn, FlowGraph, NodeId, StarFailure};
use crate::keyspace::Universe;
use crate::pred::Pred;
use crate::registry::{self, RegistryState};

/// A separation algebra with computable residuals.
pub trait Algebra: Clone + Ord + Debug {
    fn star(&self, other: &Self) -> Option<Self>;
    /// Every `r` with `s ⋆ r = w`.
    fn residuals(w: &Self, s: &Self) -> Vec<Self>;
}

impl Algebra for FlowGraph {
    fn star(&self, other: &Self) -> Option<Self> {
        flow_star(self, other).ok()
    }

    fn residuals(w: &Self, s: &Self) -> Vec<Self> {
        if !s.nodes().is_subset(w.nodes()) || restrict(w, s.nodes()) != *s {
            return Vec::new();
        }
        let rest: BTreeSet<NodeId> = w.nodes().difference(s.nodes()).copied().collect();
        let r = restrict(w, &rest);
        match flow_star(s, &r) {
            Ok(x) if x == *w => vec![r],
            _ => Vec::new(),
        }
    }
}

impl Algebra for RegistryState {
    fn star(&self, other: &Self) -> Option<Self> {
        registry::star(self, other).ok()
    }

    fn residuals(w: &Self, s: &Self) -> Vec<Self> {
        registry::residuals(w, s)
    }
}

/// A possibly infinite predicate, decided by membership.
pub trait Assertion<S> {
    fn holds(&self, s: &S) -> bool;
    fn is_top(&self) -> bool {
        false
    }
}

impl<S: Ord + Clone> Assertion<S> for Pred<S> {
    fn holds(&self, s: &S) -> bool {
        self.contains(s)
    }
    fn is_top(&self) -> bool {
        Pred::is_top(self)
    }
}

impl Assertion<FlowGraph> for Closure {
    fn holds(&self, s: &FlowGraph) -> bool {
        self.contains(s)
    }
}

/// Closure of a registry state under search registration and upserts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryClosure(pub RegistryState);

impl Assertion<RegistryState> for RegistryClosure {
    fn holds(&self, s: &RegistryState) -> bool {
        registry::closure_contains(&self.0, s)
    }
}

/// `a ⋆ c` for a finite `a`: some `s ∈ a` leaves a residual in `c`.
pub struct StarAssertion<'a, S: Ord> {
    pub left: &'a Pred<S>,
    pub right: &'a dyn Assertion<S>,
}

impl<S: Algebra> Assertion<S> for StarAssertion<'_, S> {
    fn holds(&self, w: &S) -> bool {
        match self.left {
            Pred::Top => true,
            Pred::States(ls) => ls.iter().any(|s| S::residuals(w, s).iter().any(|r| self.right.holds(r))),
        }
    }
    fn is_top(&self) -> bool {
        self.left.is_top() || self.right.is_top()
    }
}

/// `b ⋆ c` for two flow closures on disjoint node sets; decompositions are unique.
pub struct ClosureStar<'a> {
    pub left: &'a Closure,
    pub right: &'a Closure,
}

impl Assertion<FlowGraph> for ClosureStar<'_> {
    fn holds(&self, w: &FlowGraph) -> bool {
        let l = restrict(w, self.left.base.nodes());
        let r = restrict(w, self.right.base.nodes());
        l.nodes().len() + r.nodes().len() == w.nodes().len()
            && self.left.contains(&l)
            && self.right.contains(&r)
            && flow_star(&l, &r).is_ok_and(|x| x == *w)
    }
}

/// `a ⋆ b` over defined pairs; `Top` absorbs.
pub fn sep_conj<S: Algebra>(a: &Pred<S>, b: &Pred<S>) -> Pred<S> {
    match (a, b) {
        (Pred::States(x), Pred::States(y)) => {
            Pred::from_states(x.iter().flat_map(|s| y.iter().filter_map(move |t| s.star(t))))
        }
        _ => Pred::Top,
    }
}

/// `a ⋆ c` where `c` is only decidable: the residual candidates are
/// supplied by `frames`, which must return every `d` with `s ⋆ d` defined and `d ∈ c`.
pub fn sep_conj_with<S: Algebra>(
    a: &Pred<S>,
    c: &dyn Assertion<S>,
    frames: &dyn Fn(&S) -> Vec<S>,
) -> Pred<S> {
    match a {
        Pred::Top => Pred::Top,
        Pred::States(xs) => Pred::from_states(
            xs.iter()
                .flat_map(|s| frames(s).into_iter().filter(|d| c.holds(d)).filter_map(move |d| s.star(&d))),
        ),
    }
}

pub type CommandFn<S> = Arc<dyn Fn(&S) -> Pred<S> + Send + Sync>;

#[derive(Clone)]
pub struct Command<S: Ord> {
    pub name: String,
    pub run: CommandFn<S>,
}

impl<S: Ord + Clone + 'static> Command<S> {
    pub fn new(name: &str, run: impl Fn(&S) -> Pred<S> + Send + Sync + 'static) -> Command<S> {
        Command { name: name.to_string(), run: Arc::new(run) }
    }

    pub fn skip() -> Command<S> {
        Command::new("skip", |s: &S| Pred::single(s.clone()))
    }

    /// Pointwise lift, strict in `Top`.
    pub fn apply(&self, a: &Pred<S>) -> Pred<S> {
        match a {
            Pred::Top => Pred::Top,
            Pred::States(xs) => {
                let mut out = BTreeSet::new();
                for x in xs {
                    match (self.run)(x) {
                        Pred::Top => return Pred::Top,
                        Pred::States(ys) => out.extend(ys),
                    }
                }
                Pred::States(out)
            }
        }
    }
}

impl<S: Ord> Debug for Command<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name)
    }
}

#[derive(Clone, Debug)]
pub enum Program<S: Ord> {
    Com(Command<S>),
    Seq(Box<Program<S>>, Box<Program<S>>),
    Choice(Box<Program<S>>, Box<Program<S>>),
    Loop(Box<Program<S>>),
}

impl<S: Ord> Program<S> {
    pub fn seq(a: Program<S>, b: Program<S>) -> Program<S> {
        Program::Seq(Box::new(a), Box::new(b))
    }
    pub fn choice(a: Program<S>, b: Program<S>) -> Program<S> {
        Program::Choice(Box::new(a), Box::new(b))
    }
    pub fn star(a: Program<S>) -> Program<S> {
        Program::Loop(Box::new(a))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopCapExceeded(pub usize);

pub const DEFAULT_LOOP_CAP: usize = 64;

pub fn sem<S: Ord + Clone + 'static>(
    p: &Program<S>,
    a: &Pred<S>,
    loop_cap: usize,
) -> std::result::Result<Pred<S>, LoopCapExceeded> {
    match p {
        Program::Com(c) => Ok(c.apply(a)),
        Program::Seq(x, y) => sem(y, &sem(x, a, loop_cap)?, loop_cap),
        Program::Choice(x, y) => Ok(sem(x, a, loop_cap)?.join(&sem(y, a, loop_cap)?)),
        Program::Loop(body) => {
            let mut acc = a.clone();
            for _ in 0..loop_cap {
                let next = acc.join(&sem(body, &acc, loop_cap)?);
                if next == acc {
                    return Ok(acc);
                }
                acc = next;
            }
            Err(LoopCapExceeded(loop_cap))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict<S> {
    Valid,
    /// A post-state outside the postcondition; `None` when the program aborts.
    Invalid(Option<S>),
    Inconclusive(String),
}

impl<S> Verdict<S> {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// `{a} st {b}`: `⟦st⟧(a) ⊑ b`.
pub fn check_hoare<S: Ord + Clone + 'static>(
    a: &Pred<S>,
    st: &Program<S>,
    b: &dyn Assertion<S>,
    loop_cap: usize,
) -> Verdict<S> {
    if b.is_top() {
        return Verdict::Valid;
    }
    match sem(st, a, loop_cap) {
        Err(LoopCapExceeded(n)) => Verdict::Inconclusive(format!("loop did not stabilise within {n} rounds")),
        Ok(Pred::Top) => Verdict::Invalid(None),
        Ok(Pred::States(xs)) => match xs.into_iter().find(|x| !b.holds(x)) {
            None => Verdict::Valid,
            Some(w) => Verdict::Invalid(Some(w)),
        },
    }
}

/// `⟨c⟩{a} st {b}`, by definition `{a ⋆ c} st {b ⋆ c}`.
pub fn check_casl<S: Algebra + 'static>(
    c: &Pred<S>,
    a: &Pred<S>,
    st: &Program<S>,
    b: &Pred<S>,
    loop_cap: usize,
) -> Verdict<S> {
    check_hoare(&sep_conj(a, c), st, &sep_conj(b, c), loop_cap)
}

/// Mediation for `c` on the sampled preconditions:
/// `⟦com⟧(a ⋆ c) ⊑ ⟦com⟧_c(a) ⋆ c`.
pub fn check_mediation<S: Algebra + 'static>(
    com: &Command<S>,
    ctx_sem: &dyn Fn(&Pred<S>) -> Pred<S>,
    c: &Pred<S>,
    samples: &[Pred<S>],
) -> Verdict<S> {
    for a in samples {
        let lhs = com.apply(&sep_conj(a, c));
        let rhs = sep_conj(&ctx_sem(a), c);
        if !lhs.leq(&rhs) {
            return Verdict::Invalid(lhs.witness_outside(&rhs));
        }
    }
    Verdict::Valid
}

/// Locality on sampled pairs: `⟦com⟧(a ⋆ b) ⊑ ⟦com⟧(a) ⋆ b`.
pub fn check_locality<S: Algebra + 'static>(com: &Command<S>, pairs: &[(Pred<S>, Pred<S>)]) -> Verdict<S> {
    for (a, b) in pairs {
        let lhs = com.apply(&sep_conj(a, b));
        let rhs = sep_conj(&com.apply(a), b);
        if !lhs.leq(&rhs) {
            return Verdict::Invalid(lhs.witness_outside(&rhs));
        }
    }
    Verdict::Valid
}

/// A physical update of a flow graph: the out-edges of the footprint are replaced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeUpdate {
    pub footprint: BTreeSet<NodeId>,
    pub edges: BTreeMap<(NodeId, NodeId), EdgeFn>,
}

impl EdgeUpdate {
    /// The update taking `g` to `g2` on the given footprint.
    pub fn between(g2: &FlowGraph, footprint: &BTreeSet<NodeId>) -> EdgeUpdate {
        EdgeUpdate {
            footprint: footprint.clone(),
            edges: g2
                .edges()
                .iter()
                .filter(|((x, _), _)| footprint.contains(x))
                .map(|(&k, &f)| (k, f))
                .collect(),
        }
    }

    /// `None` when the footprint is not owned by `g`.
    pub fn apply_physical(&self, g: &FlowGraph) -> Option<FlowGraph> {
        if !self.footprint.is_subset(g.nodes()) {
            return None;
        }
        let mut edges: BTreeMap<(NodeId, NodeId), EdgeFn> = g
            .edges()
            .iter()
            .filter(|((x, _), _)| !self.footprint.contains(x))
            .map(|(&k, &f)| (k, f))
            .collect();
        edges.extend(self.edges.iter().map(|(&k, &f)| (k, f)));
        g.with_edges(&edges).ok()
    }

    /// Standard semantics: the update if no frame can observe it, else abort.
    pub fn std_command(&self, u: &Universe, cap: u128) -> Command<FlowGraph> {
        let up = self.clone();
        let u = u.clone();
        Command::new("update", move |g: &FlowGraph| match up.apply_physical(g) {
            Some(t) if edge_interface(g) == edge_interface(&t) && ctx_estimate(g, &t, &Estimator::Eq, &u, cap).holds() => {
                Pred::single(t)
            }
            _ => Pred::Top,
        })
    }

    /// The raw write without the abort guard.
    pub fn raw_command(&self) -> Command<FlowGraph> {
        let up = self.clone();
        Command::new("raw update", move |g: &FlowGraph| match up.apply_physical(g) {
            Some(t) => Pred::single(t),
            None => Pred::Top,
        })
    }

    /// Induced context-aware semantics for context nodes `ctx`: the update
    /// approximated by `est`, closed along `ctx`.
    pub fn induced(
        &self,
        s: &FlowGraph,
        ctx: &BTreeSet<NodeId>,
        est: &Estimator,
        u: &Universe,
        cap: u128,
    ) -> Option<Closure> {
        let t = self.apply_physical(s)?;
        match approx_physical_update(s, &Pred::single(t.clone()), est, u, cap) {
            Pred::Top => None,
            Pred::States(_) => Some(Closure::new(t, ctx.clone(), est.clone())),
        }
    }
}

/// Non-bottom outflow along each edge leaving `g`.
fn edge_interface(g: &FlowGraph) -> BTreeMap<(NodeId, NodeId), crate::keyspace::FlowValue> {
    let flow = g.flow();
    g.edges()
        .iter()
        .filter(|((_, y), _)| !g.contains(*y))
        .map(|(&(x, y), f)| ((x, y), f.apply(flow[&x])))
        .filter(|(_, v)| !v.is_bot())
        .collect()
}

/// Frames of `s` inside a flow closure: the unique `d` that composes with `s`.
pub fn flow_frames(s: &FlowGraph, c: &Closure) -> Vec<FlowGraph> {
    let base = &c.base;
    if !s.nodes().is_disjoint(base.nodes()) {
        return Vec::new();
    }
    let fs = s.flow();
    let mut inflow: crate::flowgraph::Inflow = base
        .inflow()
        .iter()
        .filter(|((src, _), _)| !s.nodes().contains(src))
        .map(|(&k, &v)| (k, v))
        .collect();
    for (&(x, y), f) in s.edges() {
        if base.nodes().contains(&y) {
            let v = f.apply(fs[&x]);
            if !v.is_bot() {
                inflow.insert((x, y), v);
            }
        }
    }
    let d = base.with_inflow(&inflow);
    if flow_star(s, &d).is_ok() {
        vec![d]
    } else {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Frame,
    Context,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepFailure {
    Estimate(CtxWitness),
    Inconclusive(u128),
    FootprintOutsideClosure,
    ContextOutsideClosure,
    Recompose(StarFailure),
    Frame(StarFailure),
    Aborted,
    ContextNotCovered,
}

/// Outcome of checking one command step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepCheck {
    pub rule: Rule,
    pub failure: Option<StepFailure>,
    /// Footprint part `b` and context `c` when the context rule applies.
    pub b: Option<Closure>,
    pub c: Option<Closure>,
}

impl StepCheck {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Checks one flow update from `g` to `g2` with the given footprint.
///
/// Under the frame rule the off-footprint region must recompose with the
/// updated footprint unchanged. Under the context rule the step is
/// contextualized: `a = g|fp`, `d = g|rest`, `b` and `c` the estimator
/// closures, and `⟦com⟧(a ⋆ c) ⊑ b ⋆ c`, `d ∈ c` are verified.
pub fn check_flow_step(
    g: &FlowGraph,
    g2: &FlowGraph,
    fp: &BTreeSet<NodeId>,
    est: &Estimator,
    rule: Rule,
    u: &Universe,
    cap: u128,
) -> Result<StepCheck> {
    if g.nodes() != g2.nodes() || !fp.is_subset(g.nodes()) {
        return Err(Error::Contract("step must keep the node set and own its footprint".into()));
    }
    let rest: BTreeSet<NodeId> = g.nodes().difference(fp).copied().collect();
    let s = restrict(g, fp);
    let d = restrict(g, &rest);
    let up = EdgeUpdate::between(g2, fp);
    if up.apply_physical(g).as_ref() != Some(g2) {
        return Err(Error::Contract("step writes outside its footprint".into()));
    }
    let t = up.apply_physical(&s).expect("footprint owned");
    let done = |failure, b, c| Ok(StepCheck { rule, failure, b, c });
    if rule == Rule::Frame {
        return match flow_star(&t, &d) {
            Err(e) => done(Some(StepFailure::Frame(e)), None, None),
            Ok(w) if w == *g2 => done(None, None, None),
            Ok(_) => done(Some(StepFailure::Frame(StarFailure::NodeOverlap(0))), None, None),
        };
    }
    match ctx_estimate(&s, &t, est, u, cap) {
        CtxReport::Holds => {}
        CtxReport::Fails(w) => return done(Some(StepFailure::Estimate(w)), None, None),
        CtxReport::Inconclusive { candidates } => return done(Some(StepFailure::Inconclusive(candidates)), None, None),
    }
    let b = Closure::new(t, rest.clone(), est.clone());
    let c = Closure::new(d.clone(), fp.clone(), est.clone());
    if !c.contains(&d) {
        return done(Some(StepFailure::ContextNotCovered), Some(b), Some(c));
    }
    let pre = sep_conj_with(&Pred::single(s.clone()), &c, &|x| flow_frames(x, &c));
    let post = up.raw_command().apply(&pre);
    let Pred::States(posts) = post else {
        return done(Some(StepFailure::Aborted), Some(b), Some(c));
    };
    let target = ClosureStar { left: &b, right: &c };
    for w in &posts {
        if !target.holds(w) {
            let failure = if !b.contains(&restrict(w, fp)) {
                StepFailure::FootprintOutsideClosure
            } else if !c.contains(&restrict(w, &rest)) {
                StepFailure::ContextOutsideClosure
            } else {
                match flow_star(&restrict(w, fp), &restrict(w, &rest)) {
                    Err(e) => StepFailure::Recompose(e),
                    Ok(_) => StepFailure::Recompose(StarFailure::NodeOverlap(0)),
                }
            };
            return done(Some(failure), Some(b), Some(c));
        }
    }
    if posts.is_empty() {
        return done(Some(StepFailure::Aborted), Some(b), Some(c));
    }
    done(None, Some(b), Some(c))
}

/// Registry contextualization of an upsert, checked against its specification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryStepCheck {
    pub b: RegistryState,
    /// The new element `ρ(d)` of the context.
    pub c: RegistryState,
    pub context: Pred<RegistryState>,
    pub verdict: Verdict<RegistryState>,
    pub d_in_c: bool,
}

pub fn check_registry_upsert(a: &RegistryState, d: &RegistryState, k: registry::RKey, v: registry::Val) -> Result<RegistryStepCheck> {
    let ctx = registry::contextualize_upsert(a, d, k, v)?;
    let context = Pred::from_states([d.clone(), ctx.c.clone()]);
    let com = Program::Com(Command::new("upsert", move |s: &RegistryState| {
        Pred::single(registry::upsert_ghost(s, k, v))
    }));
    let b = Pred::single(ctx.b.clone());
    let verdict = check_casl(&context, &Pred::single(a.clone()), &com, &b, DEFAULT_LOOP_CAP);
    Ok(RegistryStepCheck {
        b: ctx.b,
        c: ctx.c,
        d_in_c: context.contains(d),
        context,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bst::{derive_flowgraph, run_op, Heap, Op};
    use crate::keyspace::{FlowValue, Key, KeySet};
    use crate::registry::{History, Status, Tag};

    fn graph(u: &Universe, n: u32) -> FlowGraph {
        let mut g = FlowGraph::empty();
        for x in 0..n {
            g.add_node(x).unwrap();
        }
        g.set_inflow(100, 0, FlowValue::Set(u.full())).unwrap();
        g
    }

    #[test]
    fn sep_conj_units_and_mismatch() {
        let u = Universe::new(vec![1]).unwrap();
        let g = graph(&u, 1);
        let emp = Pred::single(FlowGraph::empty());
        let a = Pred::single(g.clone());
        assert_eq!(sep_conj(&a, &emp), a);
        assert!(sep_conj(&Pred::Top, &a).is_top());
        let mut other = FlowGraph::empty();
        other.add_node(5).unwrap();
        other.set_inflow(0, 5, FlowValue::Set(KeySet::atom(0))).unwrap();
        assert_eq!(sep_conj(&a, &Pred::single(other)), Pred::empty());
    }

    #[test]
    fn sem_basics() {
        let a: Pred<u8> = Pred::from_states([1, 2]);
        let skip = Program::Com(Command::skip());
        assert_eq!(sem(&Program::star(skip.clone()), &a, 8).unwrap(), a);
        let inc = Program::Com(Command::new("inc", |x: &u8| Pred::single(x.saturating_add(1).min(5))));
        assert_eq!(sem(&Program::choice(inc.clone(), skip.clone()), &a, 8).unwrap(), Pred::from_states([1, 2, 3]));
        assert_eq!(sem(&Program::star(inc.clone()), &a, 8).unwrap(), Pred::from_states([1, 2, 3, 4, 5]));
        let abort = Program::Com(Command::new("abort", |x: &u8| if *x == 2 { Pred::Top } else { Pred::single(*x) }));
        assert!(sem(&abort, &a, 8).unwrap().is_top());
        assert!(check_hoare(&a, &abort, &Pred::<u8>::Top, 8).is_valid());
        assert_eq!(check_hoare(&a, &inc, &a, 8), Verdict::Invalid(Some(3)));
        let grow = Program::star(Program::Com(Command::new("grow", |x: &u8| Pred::single(x.wrapping_add(1)))));
        assert!(matches!(check_hoare(&a, &grow, &Pred::Top, 4), Verdict::Valid));
        assert!(matches!(check_hoare(&a, &grow, &a, 4), Verdict::Inconclusive(_)));
    }

    fn remove_simple_fixture() -> (Universe, Heap, Heap, crate::bst::Step) {
        let u = Universe::new((1..=9).collect()).unwrap();
        let mut h = Heap::sentinel();
        for k in [5, 3, 8, 2, 7, 9] {
            h = run_op(&h, &u, &Op::Insert(Key::Fin(k)), 0).unwrap().heap;
        }
        let h = run_op(&h, &u, &Op::Delete(Key::Fin(3)), 0).unwrap().heap;
        let (five, _) = h.find(Key::Fin(3));
        let r = run_op(&h, &u, &Op::RemoveSimple { target: Some(five), side: None }, 0).unwrap();
        assert_eq!(r.trace.len(), 1);
        (u, h, r.heap, r.trace[0].clone())
    }

    #[test]
    fn remove_simple_contextualizes() {
        let (u, h, h2, step) = remove_simple_fixture();
        let g = derive_flowgraph(&h, &u).unwrap();
        let g2 = derive_flowgraph(&h2, &u).unwrap();
        let ok = check_flow_step(&g, &g2, &step.footprint, &step.estimator, Rule::Context, &u, 4096).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let frame = check_flow_step(&g, &g2, &step.footprint, &step.estimator, Rule::Frame, &u, 4096).unwrap();
        assert!(matches!(frame.failure, Some(StepFailure::Frame(StarFailure::InterfaceMismatch { .. }))));
        let eq = check_flow_step(&g, &g2, &step.footprint, &Estimator::Eq, Rule::Context, &u, 4096).unwrap();
        assert!(matches!(eq.failure, Some(StepFailure::Estimate(_))));
    }

    #[test]
    fn locality_of_guarded_and_raw_updates() {
        let (u, h, h2, step) = remove_simple_fixture();
        let g = derive_flowgraph(&h, &u).unwrap();
        let g2 = derive_flowgraph(&h2, &u).unwrap();
        let rest: BTreeSet<NodeId> = g.nodes().difference(&step.footprint).copied().collect();
        let pair = (Pred::single(restrict(&g, &step.footprint)), Pred::single(restrict(&g, &rest)));
        let up = EdgeUpdate::between(&g2, &step.footprint);
        assert!(check_locality(&up.std_command(&u, 4096), &[pair.clone()]).is_valid());
        assert!(!check_locality(&up.raw_command(), &[pair]).is_valid());
    }

    #[test]
    fn mediation_of_induced_semantics() {
        let (u, h, h2, step) = remove_simple_fixture();
        let g = derive_flowgraph(&h, &u).unwrap();
        let g2 = derive_flowgraph(&h2, &u).unwrap();
        let fp = &step.footprint;
        let rest: BTreeSet<NodeId> = g.nodes().difference(fp).copied().collect();
        let up = EdgeUpdate::between(&g2, fp);
        let s = restrict(&g, fp);
        let c = Pred::single(restrict(&g, &rest));
        let c2 = Pred::single(restrict(&g2, &rest));
        let context = c.join(&c2);
        let std = up.std_command(&u, 4096);
        let raw = up.raw_command();
        let induced = |a: &Pred<FlowGraph>| match a {
            Pred::Top => Pred::Top,
            Pred::States(xs) => {
                let mut out = BTreeSet::new();
                for x in xs {
                    match up.induced(x, &rest, &step.estimator, &u, 4096) {
                        None => return Pred::Top,
                        Some(cl) => out.insert(cl.base),
                    };
                }
                Pred::States(out)
            }
        };
        let samples = [Pred::single(s.clone())];
        assert!(check_mediation(&raw, &induced, &context, &samples).is_valid());
        let _ = std;
        let weakened = |_: &Pred<FlowGraph>| Pred::single(FlowGraph::empty());
        assert!(!check_mediation(&raw, &weakened, &context, &samples).is_valid());
        assert!(check_mediation(&Command::skip(), &|a: &Pred<FlowGraph>| a.clone(), &context, &samples).is_valid());
    }

    #[test]
    fn registry_example_and_exact_context() {
        let h = History::empty().push((2, Some(2)));
        let mut d = RegistryState::new(h.clone());
        d.registry.insert(1, Status::new(Tag::Obl, h.clone(), 1, Some(1)));
        let a = RegistryState::new(h.clone());
        let r = check_registry_upsert(&a, &d, 1, Some(1)).unwrap();
        assert!(r.verdict.is_valid() && r.d_in_c);
        assert_eq!(r.b, RegistryState::new(h.push((1, Some(1)))));
        let com = Program::Com(Command::new("upsert", |s: &RegistryState| {
            Pred::single(registry::upsert_ghost(s, 1, Some(1)))
        }));
        let exact = Pred::single(d.clone());
        let v = check_casl(&exact, &Pred::single(a), &com, &Pred::single(r.b.clone()), 8);
        assert!(matches!(v, Verdict::Invalid(Some(_))));
        let closure = RegistryClosure(d.clone());
        assert!(closure.holds(&r.c));
        let b = Pred::single(r.b.clone());
        let post = StarAssertion { left: &b, right: &closure };
        assert!(post.holds(&r.c));
    }
}
