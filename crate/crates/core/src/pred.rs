//! Predicates: finite sets of states, or the abort element `Top`.

use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pred<S: Ord> {
    Top,
    States(BTreeSet<S>),
}

impl<S: Ord + Clone> Pred<S> {
    pub fn empty() -> Pred<S> {
        Pred::States(BTreeSet::new())
    }

    pub fn single(s: S) -> Pred<S> {
        Pred::States([s].into_iter().collect())
    }

    pub fn from_states<I: IntoIterator<Item = S>>(it: I) -> Pred<S> {
        Pred::States(it.into_iter().collect())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, Pred::Top)
    }

    pub fn states(&self) -> Option<&BTreeSet<S>> {
        match self {
            Pred::Top => None,
            Pred::States(s) => Some(s),
        }
    }

    pub fn contains(&self, s: &S) -> bool {
        match self {
            Pred::Top => true,
            Pred::States(set) => set.contains(s),
        }
    }

    /// Join: union, with `Top` absorbing.
    pub fn join(&self, other: &Pred<S>) -> Pred<S> {
        match (self, other) {
            (Pred::States(a), Pred::States(b)) => Pred::States(a.union(b).cloned().collect()),
            _ => Pred::Top,
        }
    }

    /// `self ⊑ other`.
    pub fn leq(&self, other: &Pred<S>) -> bool {
        match (self, other) {
            (_, Pred::Top) => true,
            (Pred::Top, _) => false,
            (Pred::States(a), Pred::States(b)) => a.is_subset(b),
        }
    }

    /// A state of `self` outside `other`, if any.
    pub fn witness_outside(&self, other: &Pred<S>) -> Option<S> {
        match (self, other) {
            (Pred::States(a), Pred::States(b)) => a.difference(b).next().cloned(),
            _ => None,
        }
    }

    pub fn len(&self) -> Option<usize> {
        self.states().map(BTreeSet::len)
    }
}
