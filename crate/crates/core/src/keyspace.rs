//! The inset flow monoid over a finite partition of the key line.
//!
//! Keys are integers extended with `-inf` and `inf`. An instance fixes a
//! finite, strictly increasing list of endpoints `e1 < … < en`; the key line
//! `[-inf, inf]` is then cut into the atoms
//!
//! ```text
//! {-inf}  (-inf,e1)  {e1}  (e1,e2)  …  {en}  (en,inf)  {inf}
//! ```
//!
//! Every key set that can be written with endpoints from the grid is a union
//! of atoms and is stored as a bitset. Flow values are `Bot`, `Top` or such a
//! set; the monoid sum keeps a value when the other operand is `Bot` and is
//! `Top` otherwise.

use std::fmt;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Largest number of finite endpoints a universe may have (atoms fit in a `u128`).
pub const MAX_ENDPOINTS: usize = 62;

/// An extended integer key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    NegInf,
    Fin(i64),
    PosInf,
}

impl Key {
    pub fn from_json(v: &Value) -> Result<Key> {
        match v {
            Value::Number(n) => n
                .as_i64()
                .map(Key::Fin)
                .ok_or_else(|| Error::Input(format!("key {n} is not a 64-bit integer"))),
            Value::String(s) if s == "-inf" => Ok(Key::NegInf),
            Value::String(s) if s == "inf" || s == "+inf" => Ok(Key::PosInf),
            other => Err(Error::Input(format!("expected a key, found {other}"))),
        }
    }

    pub fn to_json(self) -> Value {
        match self {
            Key::NegInf => json!("-inf"),
            Key::Fin(k) => json!(k),
            Key::PosInf => json!("inf"),
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::NegInf => write!(f, "-inf"),
            Key::Fin(k) => write!(f, "{k}"),
            Key::PosInf => write!(f, "inf"),
        }
    }
}

/// A set of atoms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeySet(pub u128);

impl KeySet {
    pub const EMPTY: KeySet = KeySet(0);

    pub fn atom(i: usize) -> KeySet {
        KeySet(1u128 << i)
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
    pub fn union(self, o: KeySet) -> KeySet {
        KeySet(self.0 | o.0)
    }
    pub fn inter(self, o: KeySet) -> KeySet {
        KeySet(self.0 & o.0)
    }
    pub fn minus(self, o: KeySet) -> KeySet {
        KeySet(self.0 & !o.0)
    }
    pub fn subset(self, o: KeySet) -> bool {
        self.0 & !o.0 == 0
    }
    pub fn disjoint(self, o: KeySet) -> bool {
        self.0 & o.0 == 0
    }
    pub fn contains_atom(self, i: usize) -> bool {
        i < 128 && (self.0 >> i) & 1 == 1
    }
    pub fn len(self) -> u32 {
        self.0.count_ones()
    }
    pub fn atoms(self) -> impl Iterator<Item = usize> {
        (0..128).filter(move |&i| self.contains_atom(i))
    }
}

/// Element of the inset flow monoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowValue {
    Bot,
    Set(KeySet),
    Top,
}

impl FlowValue {
    pub fn is_bot(self) -> bool {
        self == FlowValue::Bot
    }
    pub fn is_top(self) -> bool {
        self == FlowValue::Top
    }
    pub fn as_set(self) -> Option<KeySet> {
        match self {
            FlowValue::Set(s) => Some(s),
            _ => None,
        }
    }
}

/// Monoid sum: `Bot` is the unit, every other combination collapses to `Top`.
pub fn oplus(m: FlowValue, n: FlowValue) -> FlowValue {
    match (m, n) {
        (m, FlowValue::Bot) => m,
        (FlowValue::Bot, n) => n,
        _ => FlowValue::Top,
    }
}

/// Sum of any number of values.
pub fn sum<I: IntoIterator<Item = FlowValue>>(values: I) -> FlowValue {
    values.into_iter().fold(FlowValue::Bot, oplus)
}

/// Natural order of the monoid, in closed form.
pub fn natural_leq(m: FlowValue, n: FlowValue) -> bool {
    m == FlowValue::Bot || m == n || n == FlowValue::Top
}

/// Intersects a flow value with a key set; `Bot` and `Top` are left alone.
pub fn meet_interval(m: FlowValue, i: KeySet) -> FlowValue {
    match m {
        FlowValue::Set(s) => FlowValue::Set(s.inter(i)),
        other => other,
    }
}

/// Join of an ascending chain, i.e. its last element.
pub fn chain_sup(values: &[FlowValue]) -> Result<FlowValue> {
    for (i, w) in values.windows(2).enumerate() {
        if !natural_leq(w[0], w[1]) {
            return Err(Error::NotAscending(i + 1));
        }
    }
    Ok(values.last().copied().unwrap_or(FlowValue::Bot))
}

/// A finite atom partition of `[-inf, inf]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Universe {
    endpoints: Vec<i64>,
}

impl Universe {
    pub fn new(endpoints: Vec<i64>) -> Result<Universe> {
        if endpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedEndpoints);
        }
        if endpoints.len() > MAX_ENDPOINTS {
            return Err(Error::TooManyEndpoints(endpoints.len()));
        }
        Ok(Universe { endpoints })
    }

    /// Builds the universe from an arbitrary collection of keys (sorted and deduplicated).
    pub fn from_keys<I: IntoIterator<Item = Key>>(keys: I) -> Result<Universe> {
        let mut e: Vec<i64> = keys
            .into_iter()
            .filter_map(|k| match k {
                Key::Fin(v) => Some(v),
                _ => None,
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        Universe::new(e)
    }

    pub fn endpoints(&self) -> &[i64] {
        &self.endpoints
    }

    pub fn atom_count(&self) -> usize {
        2 * self.endpoints.len() + 3
    }

    pub fn full(&self) -> KeySet {
        let n = self.atom_count();
        if n == 128 {
            KeySet(u128::MAX)
        } else {
            KeySet((1u128 << n) - 1)
        }
    }

    /// Atom index of a key, if the key lies on the grid.
    pub fn atom_of(&self, k: Key) -> Option<usize> {
        match k {
            Key::NegInf => Some(0),
            Key::PosInf => Some(self.atom_count() - 1),
            Key::Fin(v) => self.endpoints.binary_search(&v).ok().map(|i| 2 * i + 2),
        }
    }

    pub fn point(&self, k: Key) -> Result<KeySet> {
        self.atom_of(k)
            .map(KeySet::atom)
            .ok_or_else(|| Error::OffGrid(k.to_string()))
    }

    /// Key of a point atom (even index).
    fn point_key(&self, atom: usize) -> Key {
        debug_assert!(atom % 2 == 0);
        if atom == 0 {
            Key::NegInf
        } else if atom == self.atom_count() - 1 {
            Key::PosInf
        } else {
            Key::Fin(self.endpoints[atom / 2 - 1])
        }
    }

    /// The interval between two grid keys with the given openness.
    pub fn interval(&self, lo: Key, hi: Key, lo_open: bool, hi_open: bool) -> Result<KeySet> {
        let a = self.atom_of(lo).ok_or_else(|| Error::OffGrid(lo.to_string()))?;
        let b = self.atom_of(hi).ok_or_else(|| Error::OffGrid(hi.to_string()))?;
        let start = if lo_open { a + 1 } else { a };
        if b == 0 && hi_open {
            return Ok(KeySet::EMPTY);
        }
        let end = if hi_open { b - 1 } else { b };
        if start > end {
            return Ok(KeySet::EMPTY);
        }
        let width = end - start + 1;
        let mask = if width == 128 { u128::MAX } else { (1u128 << width) - 1 };
        Ok(KeySet(mask << start))
    }

    /// Keys strictly below `k`: `[-inf, k)`.
    pub fn below(&self, k: Key) -> Result<KeySet> {
        self.interval(Key::NegInf, k, false, true)
    }

    /// Keys strictly above `k`: `(k, inf]`.
    pub fn above(&self, k: Key) -> Result<KeySet> {
        self.interval(k, Key::PosInf, true, false)
    }

    /// Checks that a value only mentions atoms of this universe.
    pub fn admits(&self, v: FlowValue) -> bool {
        match v {
            FlowValue::Set(s) => s.subset(self.full()),
            _ => true,
        }
    }

    /// Maximal runs of consecutive atoms as `(lo, hi, lo_open, hi_open)`.
    pub fn runs(&self, s: KeySet) -> Vec<(Key, Key, bool, bool)> {
        let mut out = Vec::new();
        let n = self.atom_count();
        let mut i = 0;
        while i < n {
            if !s.contains_atom(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < n && s.contains_atom(i + 1) {
                i += 1;
            }
            let end = i;
            let (lo, lo_open) = if start % 2 == 0 {
                (self.point_key(start), false)
            } else {
                (self.point_key(start - 1), true)
            };
            let (hi, hi_open) = if end % 2 == 0 {
                (self.point_key(end), false)
            } else {
                (self.point_key(end + 1), true)
            };
            out.push((lo, hi, lo_open, hi_open));
            i += 1;
        }
        out
    }

    /// Human-readable interval notation, e.g. `(-inf,4) ∪ {8}`.
    pub fn show_set(&self, s: KeySet) -> String {
        let runs = self.runs(s);
        if runs.is_empty() {
            return "{}".to_string();
        }
        runs.iter()
            .map(|&(lo, hi, lo_open, hi_open)| {
                if lo == hi && !lo_open && !hi_open {
                    format!("{{{lo}}}")
                } else {
                    format!(
                        "{}{lo},{hi}{}",
                        if lo_open { '(' } else { '[' },
                        if hi_open { ')' } else { ']' }
                    )
                }
            })
            .collect::<Vec<_>>()
            .join(" u ")
    }

    pub fn show(&self, v: FlowValue) -> String {
        match v {
            FlowValue::Bot => "bot".to_string(),
            FlowValue::Top => "top".to_string(),
            FlowValue::Set(s) => self.show_set(s),
        }
    }

    pub fn set_to_json(&self, s: KeySet) -> Value {
        Value::Array(
            self.runs(s)
                .into_iter()
                .map(|(lo, hi, lo_open, hi_open)| json!([lo.to_json(), hi.to_json(), lo_open, hi_open]))
                .collect(),
        )
    }

    pub fn set_from_json(&self, v: &Value) -> Result<KeySet> {
        let arr = v
            .as_array()
            .ok_or_else(|| Error::Input(format!("expected a list of intervals, found {v}")))?;
        let mut acc = KeySet::EMPTY;
        for iv in arr {
            let parts = iv
                .as_array()
                .filter(|p| p.len() == 4)
                .ok_or_else(|| Error::Input(format!("interval must be [lo, hi, loOpen, hiOpen], found {iv}")))?;
            let lo = Key::from_json(&parts[0])?;
            let hi = Key::from_json(&parts[1])?;
            let lo_open = parts[2]
                .as_bool()
                .ok_or_else(|| Error::Input("loOpen must be a boolean".into()))?;
            let hi_open = parts[3]
                .as_bool()
                .ok_or_else(|| Error::Input("hiOpen must be a boolean".into()))?;
            acc = acc.union(self.interval(lo, hi, lo_open, hi_open)?);
        }
        Ok(acc)
    }

    pub fn value_to_json(&self, v: FlowValue) -> Value {
        match v {
            FlowValue::Bot => json!("bot"),
            FlowValue::Top => json!("top"),
            FlowValue::Set(s) => json!({ "intervals": self.set_to_json(s) }),
        }
    }

    pub fn value_from_json(&self, v: &Value) -> Result<FlowValue> {
        match v {
            Value::String(s) if s == "bot" => Ok(FlowValue::Bot),
            Value::String(s) if s == "top" => Ok(FlowValue::Top),
            Value::Object(o) => match o.get("intervals") {
                Some(iv) => Ok(FlowValue::Set(self.set_from_json(iv)?)),
                None => Err(Error::Input(format!("flow value object needs \"intervals\": {v}"))),
            },
            other => Err(Error::Input(format!("expected a flow value, found {other}"))),
        }
    }

    /// Every element of the finite lattice: `Bot`, `Top` and all atom subsets.
    pub fn all_values(&self) -> Vec<FlowValue> {
        let n = self.atom_count();
        assert!(n <= 20, "lattice too large to enumerate");
        let mut v = Vec::with_capacity((1usize << n) + 2);
        v.push(FlowValue::Bot);
        v.push(FlowValue::Top);
        for b in 0..(1u128 << n) {
            v.push(FlowValue::Set(KeySet(b)));
        }
        v
    }

    /// Number of elements of the lattice, saturating.
    pub fn lattice_size(&self) -> u128 {
        let n = self.atom_count();
        if n >= 127 {
            u128::MAX
        } else {
            (1u128 << n) + 2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u() -> Universe {
        Universe::new(vec![1, 2, 3, 4, 7, 8]).unwrap()
    }

    #[test]
    fn oplus_examples() {
        let u = u();
        let a = FlowValue::Set(u.point(Key::Fin(1)).unwrap().union(u.point(Key::Fin(2)).unwrap()));
        let b = FlowValue::Set(u.point(Key::Fin(3)).unwrap());
        assert_eq!(oplus(a, FlowValue::Bot), a);
        assert_eq!(oplus(FlowValue::Bot, FlowValue::Bot), FlowValue::Bot);
        assert_eq!(oplus(a, b), FlowValue::Top);
        let empty = FlowValue::Set(KeySet::EMPTY);
        assert_eq!(oplus(empty, empty), FlowValue::Top);
        assert_ne!(empty, FlowValue::Bot);
    }

    #[test]
    fn natural_leq_examples() {
        let u = u();
        let one = FlowValue::Set(u.point(Key::Fin(1)).unwrap());
        let one_two = FlowValue::Set(u.point(Key::Fin(1)).unwrap().union(u.point(Key::Fin(2)).unwrap()));
        let five = FlowValue::Set(u.interval(Key::Fin(4), Key::Fin(7), true, true).unwrap());
        assert!(natural_leq(FlowValue::Bot, five));
        assert!(!natural_leq(one, one_two));
        assert!(natural_leq(one, FlowValue::Top));
    }

    #[test]
    fn meet_examples() {
        let u = u();
        let below4 = u.below(Key::Fin(4)).unwrap();
        let above4 = u.above(Key::Fin(4)).unwrap();
        assert_eq!(meet_interval(FlowValue::Top, below4), FlowValue::Top);
        assert_eq!(meet_interval(FlowValue::Bot, above4), FlowValue::Bot);
        let s37 = u.point(Key::Fin(3)).unwrap().union(u.point(Key::Fin(7)).unwrap());
        assert_eq!(
            meet_interval(FlowValue::Set(s37), below4),
            FlowValue::Set(u.point(Key::Fin(3)).unwrap())
        );
    }

    #[test]
    fn chain_sup_examples() {
        let two = FlowValue::Set(KeySet::atom(4));
        assert_eq!(chain_sup(&[FlowValue::Bot]).unwrap(), FlowValue::Bot);
        assert_eq!(chain_sup(&[FlowValue::Bot, two, two]).unwrap(), two);
        assert_eq!(chain_sup(&[FlowValue::Bot, two, FlowValue::Top]).unwrap(), FlowValue::Top);
        assert_eq!(chain_sup(&[two, FlowValue::Bot]), Err(Error::NotAscending(1)));
    }

    #[test]
    fn atom_layout() {
        let u = Universe::new(vec![4]).unwrap();
        assert_eq!(u.atom_count(), 5);
        assert_eq!(u.atom_of(Key::NegInf), Some(0));
        assert_eq!(u.atom_of(Key::Fin(4)), Some(2));
        assert_eq!(u.atom_of(Key::PosInf), Some(4));
        assert_eq!(u.atom_of(Key::Fin(5)), None);
        let all = u.interval(Key::NegInf, Key::PosInf, false, false).unwrap();
        assert_eq!(all, u.full());
        let open = u.interval(Key::NegInf, Key::PosInf, true, true).unwrap();
        assert_eq!(open.len(), 3);
        assert_eq!(u.show_set(open), "(-inf,inf)");
        assert_eq!(u.show_set(u.below(Key::Fin(4)).unwrap()), "[-inf,4)");
        assert_eq!(u.show_set(u.point(Key::Fin(4)).unwrap()), "{4}");
        assert_eq!(u.show_set(KeySet::EMPTY), "{}");
    }

    #[test]
    fn json_round_trip() {
        let u = u();
        let s = u.interval(Key::Fin(1), Key::Fin(4), true, false).unwrap().union(u.point(Key::PosInf).unwrap());
        for v in [FlowValue::Bot, FlowValue::Top, FlowValue::Set(s), FlowValue::Set(KeySet::EMPTY)] {
            assert_eq!(u.value_from_json(&u.value_to_json(v)).unwrap(), v);
        }
        assert!(u.value_from_json(&json!({"intervals": [[5, 6, false, false]]})).is_err());
    }
}
