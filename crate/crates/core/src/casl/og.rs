//! Owicki-Gries style checking for threads over a shared global state with
//! thread-local state: sequential validity of each outline, interference
//! freedom by replay, and a bounded interleaving explorer as cross-check.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use crate::bst::{check_inv_all, run_op, Heap, NodeFields, Op};
use crate::flowgraph::NodeId;
use crate::keyspace::{Key, Universe};

pub type AssertFn<G, L> = Arc<dyn Fn(&G, &L) -> bool + Send + Sync>;
pub type StepFn<G, L> = Arc<dyn Fn(&G, &L) -> Vec<(G, L)> + Send + Sync>;

#[derive(Clone)]
pub struct OgAssertion<G, L> {
    pub name: String,
    pub f: AssertFn<G, L>,
}

#[derive(Clone)]
pub struct OgStep<G, L> {
    pub label: String,
    pub run: StepFn<G, L>,
}

/// A thread's proof outline: `assertions[i]` precedes `steps[i]`, the last
/// assertion is the postcondition.
#[derive(Clone)]
pub struct Outline<G, L> {
    pub name: String,
    pub init_local: L,
    pub assertions: Vec<OgAssertion<G, L>>,
    pub steps: Vec<OgStep<G, L>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OgViolation<G, L> {
    /// A step leaves its own outline.
    Sequential { thread: String, step: String, global: G, local: L },
    /// A step of one thread breaks an assertion of another.
    Interference { thread: String, step: String, victim: String, assertion: String, global: G, local: L },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OgReport<G, L> {
    pub checked: usize,
    pub violations: Vec<OgViolation<G, L>>,
}

impl<G, L> OgReport<G, L> {
    pub fn free(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every step maps states of its precondition into its postcondition, over the given domain.
pub fn check_sequential<G: Clone + Ord, L: Clone + Ord>(
    outlines: &[Outline<G, L>],
    globals: &BTreeSet<G>,
    locals: &[L],
) -> OgReport<G, L> {
    let mut rep = OgReport { checked: 0, violations: Vec::new() };
    for o in outlines {
        for (i, st) in o.steps.iter().enumerate() {
            let (pre, post) = (&o.assertions[i], &o.assertions[i + 1]);
            for g in globals {
                for l in locals {
                    if !(pre.f)(g, l) {
                        continue;
                    }
                    rep.checked += 1;
                    if (st.run)(g, l).iter().any(|(g2, l2)| !(post.f)(g2, l2)) {
                        rep.violations.push(OgViolation::Sequential {
                            thread: o.name.clone(),
                            step: st.label.clone(),
                            global: g.clone(),
                            local: l.clone(),
                        });
                    }
                }
            }
        }
    }
    rep
}

/// Replays each recorded interference `(step, pre)` against every assertion of
/// the other threads on states sharing the global component.
pub fn check_interference_free<G: Clone + Ord, L: Clone + Ord>(
    outlines: &[Outline<G, L>],
    globals: &BTreeSet<G>,
    locals: &[L],
) -> OgReport<G, L> {
    let mut rep = OgReport { checked: 0, violations: Vec::new() };
    for (i, o) in outlines.iter().enumerate() {
        for (k, st) in o.steps.iter().enumerate() {
            let pre = &o.assertions[k];
            for (j, victim) in outlines.iter().enumerate() {
                if i == j {
                    continue;
                }
                for b in &victim.assertions {
                    for g in globals {
                        let posts: Vec<G> = locals
                            .iter()
                            .filter(|la| (pre.f)(g, la))
                            .flat_map(|la| (st.run)(g, la).into_iter().map(|(g2, _)| g2))
                            .collect();
                        if posts.is_empty() {
                            continue;
                        }
                        for lb in locals.iter().filter(|lb| (b.f)(g, lb)) {
                            rep.checked += 1;
                            if posts.iter().any(|g2| !(b.f)(g2, lb)) {
                                rep.violations.push(OgViolation::Interference {
                                    thread: o.name.clone(),
                                    step: st.label.clone(),
                                    victim: victim.name.clone(),
                                    assertion: b.name.clone(),
                                    global: g.clone(),
                                    local: lb.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    rep
}

/// A configuration whose current assertion fails for some thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreViolation<G, L> {
    pub thread: String,
    pub assertion: String,
    pub global: G,
    pub locals: Vec<L>,
    pub schedule: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ExploreReport<G, L> {
    pub configurations: usize,
    pub globals: BTreeSet<G>,
    pub violations: Vec<ExploreViolation<G, L>>,
}

/// Explores every interleaving of at most `depth` atomic steps.
pub fn explore<G: Clone + Ord, L: Clone + Ord>(init: &G, outlines: &[Outline<G, L>], depth: usize) -> ExploreReport<G, L> {
    type Config<G, L> = (G, Vec<usize>, Vec<L>);
    let start: Config<G, L> = (init.clone(), vec![0; outlines.len()], outlines.iter().map(|o| o.init_local.clone()).collect());
    let mut seen: BTreeSet<Config<G, L>> = BTreeSet::new();
    let mut queue: VecDeque<(Config<G, L>, Vec<usize>)> = VecDeque::new();
    let mut globals = BTreeSet::new();
    let mut violations = Vec::new();
    seen.insert(start.clone());
    queue.push_back((start, Vec::new()));
    while let Some(((g, pcs, ls), schedule)) = queue.pop_front() {
        globals.insert(g.clone());
        for (t, o) in outlines.iter().enumerate() {
            let a = &o.assertions[pcs[t]];
            if !(a.f)(&g, &ls[t]) {
                violations.push(ExploreViolation {
                    thread: o.name.clone(),
                    assertion: a.name.clone(),
                    global: g.clone(),
                    locals: ls.clone(),
                    schedule: schedule.clone(),
                });
            }
        }
        if schedule.len() == depth {
            continue;
        }
        for (t, o) in outlines.iter().enumerate() {
            let Some(st) = o.steps.get(pcs[t]) else {
                continue;
            };
            for (g2, l2) in (st.run)(&g, &ls[t]) {
                let mut pcs2 = pcs.clone();
                pcs2[t] += 1;
                let mut ls2 = ls.clone();
                ls2[t] = l2;
                let cfg = (g2, pcs2, ls2);
                if seen.insert(cfg.clone()) {
                    let mut sch = schedule.clone();
                    sch.push(t);
                    queue.push_back((cfg, sch));
                }
            }
        }
    }
    ExploreReport { configurations: seen.len(), globals, violations }
}

/// Thread-local state of the tree threads: the node read by the remover.
pub type Local = Option<NodeId>;

fn assertion<L>(name: &str, f: impl Fn(&Heap, &L) -> bool + Send + Sync + 'static) -> OgAssertion<Heap, L> {
    OgAssertion { name: name.to_string(), f: Arc::new(f) }
}

fn step<L>(label: &str, f: impl Fn(&Heap, &L) -> Vec<(Heap, L)> + Send + Sync + 'static) -> OgStep<Heap, L> {
    OgStep { label: label.to_string(), run: Arc::new(f) }
}

/// The marker/remover pair: one thread deletes `key`, the other reads
/// `parent.left` and unlinks it if it is marked with at most one child.
/// With `planted`, the remover asserts that the node it read stays unmarked.
pub fn marker_remover(u: &Universe, key: Key, parent: NodeId, planted: bool) -> Vec<Outline<Heap, Local>> {
    let inv = {
        let u = u.clone();
        move |h: &Heap| check_inv_all(h, &u).is_ok_and(|r| r.ok())
    };
    let absent = {
        let u = u.clone();
        move |h: &Heap| h.contents(&u).is_ok_and(|c| !c.contains(&key))
    };
    let mark = {
        let u = u.clone();
        move |h: &Heap, l: &Local| match run_op(h, &u, &Op::Delete(key), 0) {
            Ok(r) => vec![(r.heap, *l)],
            Err(_) => vec![],
        }
    };
    let inv1 = inv.clone();
    let inv2 = inv.clone();
    let marker = Outline {
        name: "marker".into(),
        init_local: None,
        assertions: vec![
            assertion("Inv", move |h, _| inv1(h)),
            assertion("Inv and key absent", move |h, _| inv2(h) && absent(h)),
        ],
        steps: vec![step("mark", mark)],
    };
    let read = move |h: &Heap, _: &Local| {
        let y = h.nodes.get(&parent).and_then(|n| n.left);
        vec![(h.clone(), y)]
    };
    let unlink = move |h: &Heap, l: &Local| {
        let mut h2 = h.clone();
        if let Some(y) = *l {
            let yn: Option<NodeFields> = h.nodes.get(&y).cloned();
            let linked = h.nodes.get(&parent).is_some_and(|p| p.left == Some(y));
            if let (Some(yn), true) = (yn, linked) {
                if yn.del && (yn.left.is_none() || yn.right.is_none()) {
                    let repl = yn.left.or(yn.right);
                    h2.nodes.get_mut(&parent).expect("parent exists").left = repl;
                }
            }
        }
        vec![(h2, *l)]
    };
    let inv3 = inv.clone();
    let inv4 = inv.clone();
    let inv5 = inv.clone();
    let mid = if planted {
        assertion("Inv and read node unmarked", move |h, l: &Local| {
            inv4(h) && l.map_or(true, |y| h.nodes.get(&y).is_some_and(|n| !n.del))
        })
    } else {
        assertion("Inv and read node allocated", move |h, l: &Local| {
            inv4(h) && l.map_or(true, |y| h.nodes.contains_key(&y))
        })
    };
    let remover = Outline {
        name: "remover".into(),
        init_local: None,
        assertions: vec![
            assertion("Inv", move |h, _| inv3(h)),
            mid,
            assertion("Inv", move |h, _| inv5(h)),
        ],
        steps: vec![step("read", read), step("unlink", unlink)],
    };
    vec![marker, remover]
}

/// Local states worth checking: null and every allocated node.
pub fn local_domain(globals: &BTreeSet<Heap>) -> Vec<Local> {
    let mut ids: BTreeSet<NodeId> = BTreeSet::new();
    for g in globals {
        ids.extend(g.nodes.keys());
    }
    std::iter::once(None).chain(ids.into_iter().map(Some)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> (Universe, Heap, NodeId) {
        let u = Universe::new((1..=12).collect()).unwrap();
        let mut h = Heap::sentinel();
        for k in [10, 5, 3, 12] {
            h = run_op(&h, &u, &Op::Insert(Key::Fin(k)), 0).unwrap().heap;
        }
        let (parent, _) = h.find(Key::Fin(5));
        (u, h, parent)
    }

    #[test]
    fn marker_remover_is_interference_free() {
        let (u, h, parent) = scenario();
        let outlines = marker_remover(&u, Key::Fin(5), parent, false);
        let ex = explore(&h, &outlines, 6);
        assert!(ex.violations.is_empty());
        let locals = local_domain(&ex.globals);
        assert!(check_sequential(&outlines, &ex.globals, &locals).free());
        assert!(check_interference_free(&outlines, &ex.globals, &locals).free());
    }

    #[test]
    fn planted_assertion_is_caught() {
        let (u, h, parent) = scenario();
        let outlines = marker_remover(&u, Key::Fin(5), parent, true);
        let ex = explore(&h, &outlines, 6);
        assert!(!ex.violations.is_empty());
        let locals = local_domain(&ex.globals);
        let rep = check_interference_free(&outlines, &ex.globals, &locals);
        assert!(rep.violations.iter().any(|v| matches!(v, OgViolation::Interference { step, .. } if step == "mark")));
    }

    #[test]
    fn empty_interference_is_free() {
        let outlines: Vec<Outline<u8, u8>> = Vec::new();
        assert!(check_interference_free(&outlines, &BTreeSet::new(), &[]).free());
    }
}
