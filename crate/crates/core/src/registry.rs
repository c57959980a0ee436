//! Linearizability ghost state: histories of upserts, a registry of search
//! threads with their linearization status, validity, the two
//! multiplications, and the closure under search and upsert ghost updates.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub type RKey = u32;
/// A value; `None` is the tombstone.
pub type Val = Option<u32>;
pub type Tid = u32;
pub type Event = (RKey, Val);

/// Upsert history, newest event first.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct History(pub Vec<Event>);

impl History {
    pub fn empty() -> History {
        History(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(k,v) · h`.
    pub fn push(&self, e: Event) -> History {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(e);
        v.extend_from_slice(&self.0);
        History(v)
    }

    /// `self ≥ other`: `other` is a suffix of `self`.
    pub fn extends(&self, other: &History) -> bool {
        self.0.ends_with(&other.0)
    }

    /// Events of `self` newer than the suffix `other`, newest first.
    pub fn extension_over(&self, other: &History) -> Option<&[Event]> {
        self.extends(other).then(|| &self.0[..self.0.len() - other.0.len()])
    }

    /// The suffix holding the `n` oldest events.
    pub fn suffix(&self, n: usize) -> History {
        History(self.0[self.0.len() - n..].to_vec())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(self.0.iter().map(|&(k, v)| json!([k, val_to_json(v)])).collect())
    }

    pub fn from_json(v: &Value) -> Result<History> {
        let arr = v.as_array().ok_or_else(|| Error::Input("history must be a list".into()))?;
        arr.iter()
            .map(|e| match e.as_array().map(Vec::as_slice) {
                Some([k, v]) => Ok((u32_json(k, "key")?, val_from_json(v)?)),
                _ => Err(Error::Input(format!("history event must be [key, value], found {e}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(History)
    }
}

fn u32_json(v: &Value, what: &str) -> Result<u32> {
    v.as_u64()
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| Error::Input(format!("{what} must be a non-negative integer, found {v}")))
}

/// The tombstone is written `null`.
pub fn val_to_json(v: Val) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

pub fn val_from_json(v: &Value) -> Result<Val> {
    match v {
        Value::Null => Ok(None),
        other => u32_json(other, "value").map(Some),
    }
}

/// `M(h)(k)`: newest value upserted for `k`, tombstone if none.
pub fn m_of(h: &History, k: RKey) -> Val {
    h.0.iter().find(|e| e.0 == k).and_then(|e| e.1)
}

/// Timestamp of the newest `(k,v)` upsert; the tombstone counts as written at time 0.
pub fn latest(h: &History, k: RKey, v: Val) -> i64 {
    let n = h.0.len();
    match h.0.iter().position(|&e| e == (k, v)) {
        Some(i) => (n - i) as i64,
        None if v.is_none() => 0,
        None => -1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Obl,
    Ful,
    Slt,
}

impl Tag {
    fn name(self) -> &'static str {
        match self {
            Tag::Obl => "OBL",
            Tag::Ful => "FUL",
            Tag::Slt => "SLT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Status {
    pub tag: Tag,
    pub snapshot: History,
    pub key: RKey,
    pub value: Val,
}

impl Status {
    pub fn new(tag: Tag, snapshot: History, key: RKey, value: Val) -> Status {
        Status { tag, snapshot, key, value }
    }

    fn same_triple(&self, o: &Status) -> bool {
        self.snapshot == o.snapshot && self.key == o.key && self.value == o.value
    }

    /// `update(k, v, s)`: an obligation waiting for `(k,v)` is fulfilled.
    pub fn update(&self, (k, v): Event) -> Status {
        if self.tag == Tag::Obl && self.key == k && self.value == v {
            Status { tag: Tag::Ful, ..self.clone() }
        } else {
            self.clone()
        }
    }
}

/// Validity of a status against the current history.
///
/// A search is fulfilled iff it could return its value when it started or a
/// matching upsert happened since.
pub fn valid(h: &History, s: &Status) -> bool {
    if s.tag == Tag::Slt {
        return true;
    }
    if !h.extends(&s.snapshot) {
        return false;
    }
    let fulfilled = m_of(&s.snapshot, s.key) == s.value || latest(h, s.key, s.value) > s.snapshot.len() as i64;
    (s.tag == Tag::Obl) == !fulfilled
}

/// The validity condition exactly as displayed: `OBL ⇔ latest(h,k,v) < |h'|`.
pub fn valid_as_displayed(h: &History, s: &Status) -> bool {
    s.tag == Tag::Slt
        || (h.extends(&s.snapshot) && ((s.tag == Tag::Obl) == (latest(h, s.key, s.value) < s.snapshot.len() as i64)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegistryState {
    pub history: History,
    pub registry: BTreeMap<Tid, Status>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Undefined {
    HistoriesDiffer,
    Conflict(Tid),
    NotOneStep,
}

impl RegistryState {
    pub fn new(history: History) -> RegistryState {
        RegistryState { history, registry: BTreeMap::new() }
    }

    pub fn is_valid(&self) -> bool {
        self.registry.values().all(|s| valid(&self.history, s))
    }

    pub fn restrict(&self, dom: &BTreeSet<Tid>) -> RegistryState {
        RegistryState {
            history: self.history.clone(),
            registry: self.registry.iter().filter(|(t, _)| dom.contains(t)).map(|(t, s)| (*t, s.clone())).collect(),
        }
    }

    pub fn to_json(&self) -> Value {
        let reg: Map<String, Value> = self
            .registry
            .iter()
            .map(|(t, s)| {
                (
                    t.to_string(),
                    json!({
                        "tag": s.tag.name(),
                        "snapshot": s.snapshot.to_json(),
                        "key": s.key,
                        "value": val_to_json(s.value),
                    }),
                )
            })
            .collect();
        json!({ "history": self.history.to_json(), "registry": reg })
    }

    pub fn from_json(v: &Value) -> Result<RegistryState> {
        let history = History::from_json(v.get("history").unwrap_or(&json!([])))?;
        let mut registry = BTreeMap::new();
        if let Some(r) = v.get("registry") {
            let r = r.as_object().ok_or_else(|| Error::Input("registry must be an object".into()))?;
            for (t, s) in r {
                let tid: Tid = t.parse().map_err(|_| Error::Input(format!("thread id {t:?} is not a number")))?;
                let tag = match s.get("tag").and_then(Value::as_str) {
                    Some("OBL") => Tag::Obl,
                    Some("FUL") => Tag::Ful,
                    Some("SLT") => Tag::Slt,
                    other => return Err(Error::Input(format!("unknown status tag {other:?}"))),
                };
                let snapshot = History::from_json(s.get("snapshot").unwrap_or(&json!([])))?;
                let key = u32_json(s.get("key").unwrap_or(&Value::Null), "key")?;
                let value = val_from_json(s.get("value").unwrap_or(&Value::Null))?;
                registry.insert(tid, Status { tag, snapshot, key, value });
            }
        }
        Ok(RegistryState { history, registry })
    }
}

fn star_status(a: &Status, b: &Status) -> Option<Status> {
    if !a.same_triple(b) {
        return None;
    }
    match (a.tag, b.tag) {
        (Tag::Slt, _) => Some(b.clone()),
        (_, Tag::Slt) => Some(a.clone()),
        _ => None,
    }
}

/// `(h1,R1) ⋆ (h2,R2)`: equal histories, registries combined pointwise.
pub fn star(a: &RegistryState, b: &RegistryState) -> std::result::Result<RegistryState, Undefined> {
    if a.history != b.history {
        return Err(Undefined::HistoriesDiffer);
    }
    let mut registry = a.registry.clone();
    for (t, s) in &b.registry {
        let merged = match registry.get(t) {
            None => s.clone(),
            Some(r) => star_status(r, s).ok_or(Undefined::Conflict(*t))?,
        };
        registry.insert(*t, merged);
    }
    Ok(RegistryState { history: a.history.clone(), registry })
}

fn disjoint_union(a: &BTreeMap<Tid, Status>, b: BTreeMap<Tid, Status>) -> std::result::Result<BTreeMap<Tid, Status>, Undefined> {
    let mut out = a.clone();
    for (t, s) in b {
        if out.insert(t, s).is_some() {
            return Err(Undefined::Conflict(t));
        }
    }
    Ok(out)
}

/// Ghost multiplication: the registry on the shorter history catches up with
/// the newest event.
pub fn ghost_mult(a: &RegistryState, b: &RegistryState) -> std::result::Result<RegistryState, Undefined> {
    let (long, short) = if a.history.len() >= b.history.len() { (a, b) } else { (b, a) };
    if long.history == short.history {
        let registry = disjoint_union(&a.registry, b.registry.clone())?;
        return Ok(RegistryState { history: a.history.clone(), registry });
    }
    if long.history.len() != short.history.len() + 1 || !long.history.extends(&short.history) {
        return Err(Undefined::NotOneStep);
    }
    let e = long.history.0[0];
    let updated = short.registry.iter().map(|(t, s)| (*t, s.update(e))).collect();
    let registry = disjoint_union(&long.registry, updated)?;
    Ok(RegistryState { history: long.history.clone(), registry })
}

/// `[a](d)`: the part of `a ⊙ d` owned by `d`.
pub fn ghost_transformer(a: &RegistryState, d: &RegistryState) -> std::result::Result<RegistryState, Undefined> {
    let m = ghost_mult(a, d)?;
    Ok(m.restrict(&d.registry.keys().copied().collect()))
}

pub fn unique_decompose(
    c: &RegistryState,
    dom1: &BTreeSet<Tid>,
    dom2: &BTreeSet<Tid>,
) -> Result<(RegistryState, RegistryState)> {
    let all: BTreeSet<Tid> = dom1.union(dom2).copied().collect();
    if !dom1.is_disjoint(dom2) || all != c.registry.keys().copied().collect() {
        return Err(Error::Contract("domains must partition the registry".into()));
    }
    Ok((c.restrict(dom1), c.restrict(dom2)))
}

/// Physical upsert on a registry-free state.
pub fn core_update_upsert(a: &RegistryState, k: RKey, v: Val) -> Result<RegistryState> {
    if !a.registry.is_empty() {
        return Err(Error::Contract("core update expects an empty registry".into()));
    }
    Ok(RegistryState::new(a.history.push((k, v))))
}

/// Registers a search for `k` prophesied to return `v` under a fresh thread id.
pub fn spawn_search(state: &RegistryState, tid: Tid, k: RKey, v: Val) -> Result<RegistryState> {
    if state.registry.contains_key(&tid) {
        return Err(Error::Contract(format!("thread id {tid} is already registered")));
    }
    let tag = if m_of(&state.history, k) == v { Tag::Ful } else { Tag::Obl };
    let mut out = state.clone();
    out.registry.insert(tid, Status::new(tag, state.history.clone(), k, v));
    Ok(out)
}

/// Applies one upsert ghost update to a whole state: `⟨(k,v)·h⟩ ⊙ (h,R)`.
pub fn upsert_ghost(state: &RegistryState, k: RKey, v: Val) -> RegistryState {
    let a = RegistryState::new(state.history.push((k, v)));
    ghost_mult(&a, state).expect("one-step extension with an empty registry is defined")
}

/// Result of the contextualization of one upsert.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryContext {
    pub a_post: RegistryState,
    pub b: RegistryState,
    pub c: RegistryState,
}

/// Contextualizes the upsert `(k,v)` for footprint `a = (h,∅)` and context `d = (h,R)`.
pub fn contextualize_upsert(a: &RegistryState, d: &RegistryState, k: RKey, v: Val) -> Result<RegistryContext> {
    let a_post = core_update_upsert(a, k, v)?;
    let undefined = |e: Undefined| Error::Contract(format!("ghost multiplication undefined: {e:?}"));
    let c = ghost_transformer(&a_post, d).map_err(undefined)?;
    let c_again = ghost_transformer(&a_post, &c).map_err(undefined)?;
    if c_again != c {
        return Err(Error::Contract("ghost transformer is not idempotent here".into()));
    }
    let b = ghost_transformer(d, &a_post).map_err(undefined)?;
    Ok(RegistryContext { a_post, b, c })
}

/// Membership in the closure of `base` under search registration and upserts.
pub fn closure_contains(base: &RegistryState, s: &RegistryState) -> bool {
    let Some(ext) = s.history.extension_over(&base.history) else {
        return false;
    };
    for (t, st) in &base.registry {
        let evolved = ext.iter().rev().fold(st.clone(), |acc, &e| acc.update(e));
        if s.registry.get(t) != Some(&evolved) {
            return false;
        }
    }
    s.registry.iter().filter(|(t, _)| !base.registry.contains_key(t)).all(|(_, st)| {
        st.tag != Tag::Slt && st.snapshot.extends(&base.history) && valid(&s.history, st)
    })
}

/// Bounded closure: every state reachable in at most `depth` ghost updates.
/// New searches use thread ids from `fresh` in order.
pub fn closure_bfs(
    base: &RegistryState,
    keys: &[RKey],
    vals: &[Val],
    fresh: &[Tid],
    depth: usize,
    cap: usize,
) -> std::result::Result<BTreeSet<RegistryState>, usize> {
    let mut seen: BTreeSet<RegistryState> = [base.clone()].into_iter().collect();
    let mut queue: VecDeque<(RegistryState, usize)> = [(base.clone(), 0)].into_iter().collect();
    while let Some((s, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        let mut next = Vec::new();
        for &k in keys {
            for &v in vals {
                next.push(upsert_ghost(&s, k, v));
                if let Some(&t) = fresh.iter().find(|t| !s.registry.contains_key(t)) {
                    next.push(spawn_search(&s, t, k, v).expect("tid is fresh"));
                }
            }
        }
        for n in next {
            if seen.insert(n.clone()) {
                if seen.len() > cap {
                    return Err(seen.len());
                }
                queue.push_back((n, d + 1));
            }
        }
    }
    Ok(seen)
}

/// Residuals `r` with `s ⋆ r = w`.
pub fn residuals(w: &RegistryState, s: &RegistryState) -> Vec<RegistryState> {
    if w.history != s.history {
        return Vec::new();
    }
    let mut options: Vec<(Tid, Vec<Option<Status>>)> = Vec::new();
    for (t, ws) in &w.registry {
        let opts = match s.registry.get(t) {
            None => vec![Some(ws.clone())],
            Some(ss) if ss == ws => {
                let slt = Status { tag: Tag::Slt, ..ws.clone() };
                vec![None, Some(slt)]
            }
            Some(ss) if ss.tag == Tag::Slt && ss.same_triple(ws) => vec![Some(ws.clone())],
            Some(_) => return Vec::new(),
        };
        options.push((*t, opts));
    }
    if s.registry.keys().any(|t| !w.registry.contains_key(t)) {
        return Vec::new();
    }
    let mut out = vec![RegistryState::new(w.history.clone())];
    for (t, opts) in options {
        let mut next = Vec::with_capacity(out.len() * opts.len());
        for r in &out {
            for o in &opts {
                let mut r = r.clone();
                if let Some(st) = o {
                    r.registry.insert(t, st.clone());
                }
                next.push(r);
            }
        }
        out = next;
    }
    out
}

/// All histories of length at most `max_len` over the given events.
pub fn all_histories(events: &[Event], max_len: usize) -> Vec<History> {
    let mut out = vec![History::empty()];
    let mut layer = vec![History::empty()];
    for _ in 0..max_len {
        layer = layer.iter().flat_map(|h| events.iter().map(move |&e| h.push(e))).collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Valid statuses at `h` with snapshots among the suffixes of `h`, plus the
/// matching `SLT` statuses.
pub fn valid_statuses(h: &History, keys: &[RKey], vals: &[Val]) -> Vec<Status> {
    let mut out = Vec::new();
    for n in 0..=h.len() {
        let snap = h.suffix(n);
        for &k in keys {
            for &v in vals {
                for tag in [Tag::Obl, Tag::Ful, Tag::Slt] {
                    let s = Status::new(tag, snap.clone(), k, v);
                    if valid(h, &s) {
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: RKey = 1;
    const V: Val = Some(1);

    #[test]
    fn m_and_latest() {
        let e = History::empty();
        assert_eq!(m_of(&e, K), None);
        assert_eq!(m_of(&e.push((K, V)), K), V);
        assert_eq!(m_of(&e.push((2, V)), K), None);
        assert_eq!(latest(&e, K, None), 0);
        assert_eq!(latest(&e, K, V), -1);
        assert_eq!(latest(&e.push((K, V)), K, V), 1);
    }

    #[test]
    fn ghost_mult_flips_obligation() {
        let h = History::empty().push((2, Some(2)));
        let mut r = RegistryState::new(h.clone());
        r.registry.insert(1, Status::new(Tag::Obl, h.clone(), K, V));
        assert!(r.is_valid());
        let a = RegistryState::new(h.push((K, V)));
        let m = ghost_mult(&a, &r).unwrap();
        assert_eq!(m.registry[&1].tag, Tag::Ful);
        assert!(m.is_valid());
        let far = RegistryState::new(h.push((K, V)).push((K, V)));
        assert_eq!(ghost_mult(&far, &r), Err(Undefined::NotOneStep));
        let (l, rr) = unique_decompose(&m, &[1].into_iter().collect(), &BTreeSet::new()).unwrap();
        assert_eq!(l.registry.len(), 1);
        assert_eq!(star(&l, &rr).unwrap(), m);
    }

    #[test]
    fn spawn_status() {
        let h = History::empty().push((K, V));
        let s = spawn_search(&RegistryState::new(h.clone()), 0, K, V).unwrap();
        assert_eq!(s.registry[&0].tag, Tag::Ful);
        let s = spawn_search(&s, 1, K, Some(2)).unwrap();
        assert_eq!(s.registry[&1].tag, Tag::Obl);
        assert!(s.is_valid());
        assert!(spawn_search(&s, 1, K, V).is_err());
    }

    #[test]
    fn displayed_validity_rejects_spawned_search() {
        let h = History::empty().push((K, V)).push((2, V));
        let s = spawn_search(&RegistryState::new(h.clone()), 0, K, V).unwrap();
        assert!(s.is_valid());
        assert!(!valid_as_displayed(&h, &s.registry[&0]));
    }

    #[test]
    fn star_units_and_conflicts() {
        let h = History::empty();
        let ful = Status::new(Tag::Ful, h.clone(), K, None);
        let slt = Status { tag: Tag::Slt, ..ful.clone() };
        let mut a = RegistryState::new(h.clone());
        a.registry.insert(0, ful.clone());
        let mut b = RegistryState::new(h.clone());
        b.registry.insert(0, slt);
        assert_eq!(star(&a, &b).unwrap(), a);
        assert_eq!(star(&a, &a), Err(Undefined::Conflict(0)));
        assert_eq!(star(&a, &RegistryState::new(h.push((K, V)))), Err(Undefined::HistoriesDiffer));
        assert_eq!(residuals(&a, &a).len(), 2);
    }

    #[test]
    fn contextualization_example() {
        let h = History::empty().push((2, Some(2)));
        let mut d = RegistryState::new(h.clone());
        d.registry.insert(1, Status::new(Tag::Obl, h.clone(), K, V));
        d.registry.insert(2, Status::new(Tag::Obl, h.clone(), K, Some(2)));
        let a = RegistryState::new(h.clone());
        let r = contextualize_upsert(&a, &d, K, V).unwrap();
        let hk = h.push((K, V));
        assert_eq!(r.b, RegistryState::new(hk.clone()));
        assert_eq!(r.c.history, hk);
        assert_eq!(r.c.registry[&1].tag, Tag::Ful);
        assert_eq!(r.c.registry[&2].tag, Tag::Obl);
        assert!(closure_contains(&d, &r.c));
    }

    #[test]
    fn closure_matches_bfs() {
        let keys = [1, 2];
        let vals = [None, Some(1)];
        let h = History::empty().push((1, Some(1)));
        let base = spawn_search(&RegistryState::new(h), 7, 2, Some(1)).unwrap();
        let fresh = [0, 1];
        let reach = closure_bfs(&base, &keys, &vals, &fresh, 3, 1 << 20).unwrap();
        for s in &reach {
            assert!(closure_contains(&base, s), "{s:?}");
        }
        let events: Vec<Event> = keys.iter().flat_map(|&k| vals.iter().map(move |&v| (k, v))).collect();
        let mut members = 0;
        for ext in all_histories(&events, 2) {
            let mut hist = base.history.clone();
            for &e in ext.0.iter().rev() {
                hist = hist.push(e);
            }
            let pool = valid_statuses(&hist, &keys, &vals);
            let old = closure_bfs(&base, &keys, &vals, &[], ext.len(), 1 << 20)
                .unwrap()
                .into_iter()
                .find(|s| s.history == hist)
                .unwrap();
            let mut cands = vec![old.clone()];
            for st in &pool {
                let mut c = old.clone();
                c.registry.insert(0, st.clone());
                cands.push(c);
            }
            for c in cands {
                let n_new = c.registry.len() - base.registry.len();
                if ext.len() + n_new > 3 {
                    continue;
                }
                let sym = closure_contains(&base, &c);
                members += sym as usize;
                assert_eq!(sym, reach.contains(&c), "{c:?}");
            }
        }
        assert!(members > 10);
        let mut slt = base.clone();
        slt.registry.insert(0, Status::new(Tag::Slt, base.history.clone(), 1, None));
        assert!(!closure_contains(&base, &slt));
    }
}
