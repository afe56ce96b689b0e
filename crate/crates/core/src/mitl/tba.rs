//! Monitor automata for the fragment. Every component reads the same clock
//! `x`, which is never reset, so a guard is an interval of absolute time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{check_word, Conjunct, Fragment, Interval, Letter, Literal, TimedWord, WordError};
use crate::exact::{display_rational, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClockBound {
    pub value: Rational,
    pub strict: bool,
}

/// Conjunction of at most one lower and one upper bound on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Guard {
    pub lower: Option<ClockBound>,
    pub upper: Option<ClockBound>,
}

impl Guard {
    fn within(i: &Interval) -> Self {
        Self {
            lower: Some(ClockBound {
                value: i.lower,
                strict: false,
            }),
            upper: i.upper.map(|value| ClockBound { value, strict: false }),
        }
    }

    fn before(i: &Interval) -> Self {
        Self {
            lower: None,
            upper: Some(ClockBound {
                value: i.lower,
                strict: true,
            }),
        }
    }

    /// `x > b`; `None` for unbounded intervals.
    fn after(i: &Interval) -> Option<Self> {
        i.upper.map(|value| Self {
            lower: Some(ClockBound { value, strict: true }),
            upper: None,
        })
    }

    pub fn holds(&self, x: &Rational) -> bool {
        let lo = self.lower.map_or(true, |b| if b.strict { *x > b.value } else { *x >= b.value });
        let hi = self.upper.map_or(true, |b| if b.strict { *x < b.value } else { *x <= b.value });
        lo && hi
    }

    fn tighter_lower(a: Option<ClockBound>, b: Option<ClockBound>) -> Option<ClockBound> {
        match (a, b) {
            (Some(p), Some(q)) => Some(if p.value > q.value || (p.value == q.value && p.strict) { p } else { q }),
            (p, None) => p,
            (None, q) => q,
        }
    }

    fn tighter_upper(a: Option<ClockBound>, b: Option<ClockBound>) -> Option<ClockBound> {
        match (a, b) {
            (Some(p), Some(q)) => Some(if p.value < q.value || (p.value == q.value && p.strict) { p } else { q }),
            (p, None) => p,
            (None, q) => q,
        }
    }

    fn and(&self, other: &Self) -> Self {
        Self {
            lower: Self::tighter_lower(self.lower, other.lower),
            upper: Self::tighter_upper(self.upper, other.upper),
        }
    }

    /// No nonnegative clock value satisfies the guard.
    fn is_empty(&self) -> bool {
        let zero = Rational::from_integer(0);
        if let Some(u) = self.upper {
            if u.value < zero || (u.value == zero && u.strict) {
                return true;
            }
            if let Some(l) = self.lower {
                return l.value > u.value || (l.value == u.value && (l.strict || u.strict));
            }
        }
        false
    }
}

impl std::fmt::Display for Guard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if let Some(l) = self.lower {
            parts.push(format!("x {} {}", if l.strict { ">" } else { ">=" }, display_rational(&l.value)));
        }
        if let Some(u) = self.upper {
            parts.push(format!("x {} {}", if u.strict { "<" } else { "<=" }, display_rational(&u.value)));
        }
        if parts.is_empty() {
            write!(f, "true")
        } else {
            write!(f, "{}", parts.join(" && "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub guard: Guard,
    /// Atoms the letter must contain.
    pub require: BTreeSet<String>,
    /// Atoms the letter must not contain.
    pub forbid: BTreeSet<String>,
    pub resets: Vec<String>,
}

impl Edge {
    pub fn enabled(&self, letter: &Letter, x: &Rational) -> bool {
        self.guard.holds(x)
            && self.require.iter().all(|a| letter.contains(a))
            && self.forbid.iter().all(|a| !letter.contains(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub accepting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tba {
    pub locations: Vec<Location>,
    pub initial: usize,
    pub clocks: Vec<String>,
    pub edges: Vec<Edge>,
    /// Rejecting, absorbing location.
    pub sink: usize,
    /// Product of the component sizes before unreachable and dead
    /// combinations are dropped.
    pub unpruned_locations: usize,
}

/// One monitor edge before composition.
#[derive(Clone)]
struct CEdge {
    to: usize,
    guard: Guard,
    lits: Vec<Literal>,
}

struct Component {
    names: &'static [&'static str],
    accepting: usize,
    sink: usize,
    edges: Vec<Vec<CEdge>>,
}

fn e(to: usize, guard: Guard, lits: &[&Literal]) -> CEdge {
    CEdge {
        to,
        guard,
        lits: lits.iter().map(|l| (*l).clone()).collect(),
    }
}

fn component(c: &Conjunct) -> Component {
    let t = Guard::default();
    match c {
        Conjunct::Safety { literal } => Component {
            names: &["ok", "sink"],
            accepting: 0,
            sink: 1,
            edges: vec![
                vec![e(0, t, &[literal]), e(1, t, &[&literal.negated()])],
                vec![e(1, t, &[])],
            ],
        },
        Conjunct::Eventually { interval, literal } => {
            let w = Guard::within(interval);
            let mut waiting = vec![
                e(0, Guard::before(interval), &[]),
                e(1, w, &[literal]),
                e(0, w, &[&literal.negated()]),
            ];
            if let Some(g) = Guard::after(interval) {
                waiting.push(e(2, g, &[]));
            }
            Component {
                names: &["waiting", "satisfied", "sink"],
                accepting: 1,
                sink: 2,
                edges: vec![waiting, vec![e(1, t, &[])], vec![e(2, t, &[])]],
            }
        }
        Conjunct::Until { interval, hold, goal } => {
            let w = Guard::within(interval);
            let b = Guard::before(interval);
            let ng = goal.negated();
            let nh = hold.negated();
            let mut active = vec![
                e(1, w, &[goal]),
                e(0, w, &[&ng, hold]),
                e(2, w, &[&ng, &nh]),
                e(0, b, &[hold]),
                e(2, b, &[&nh]),
            ];
            if let Some(g) = Guard::after(interval) {
                active.push(e(2, g, &[]));
            }
            Component {
                names: &["active", "satisfied", "sink"],
                accepting: 1,
                sink: 2,
                edges: vec![active, vec![e(1, t, &[])], vec![e(2, t, &[])]],
            }
        }
        Conjunct::Next { interval, literal } => {
            let w = Guard::within(interval);
            let mut pending = vec![
                e(2, w, &[literal]),
                e(3, w, &[&literal.negated()]),
                e(3, Guard::before(interval), &[]),
            ];
            if let Some(g) = Guard::after(interval) {
                pending.push(e(3, g, &[]));
            }
            Component {
                names: &["start", "pending", "satisfied", "sink"],
                accepting: 2,
                sink: 3,
                edges: vec![
                    vec![e(1, t, &[])],
                    pending,
                    vec![e(2, t, &[])],
                    vec![e(3, t, &[])],
                ],
            }
        }
    }
}

/// Synchronous product of one monitor per conjunct. Any tuple containing a
/// component sink collapses into the single rejecting sink.
pub fn build_tba(fragment: &Fragment) -> Tba {
    let comps: Vec<Component> = fragment.conjuncts.iter().map(component).collect();
    let unpruned = comps.iter().map(|c| c.names.len()).product();
    let timed = fragment
        .conjuncts
        .iter()
        .any(|c| !matches!(c, Conjunct::Safety { .. }));

    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut tuples: Vec<Vec<usize>> = Vec::new();
    let mut locations = vec![Location {
        name: "sink".into(),
        accepting: false,
    }];
    let sink = 0;
    let mut edges = vec![Edge {
        from: sink,
        to: sink,
        guard: Guard::default(),
        require: BTreeSet::new(),
        forbid: BTreeSet::new(),
        resets: Vec::new(),
    }];
    let name_of = |tuple: &[usize]| {
        if tuple.is_empty() {
            "true".to_string()
        } else {
            tuple
                .iter()
                .zip(&comps)
                .map(|(s, c)| c.names[*s])
                .collect::<Vec<_>>()
                .join(",")
        }
    };
    let start: Vec<usize> = vec![0; comps.len()];
    index.insert(start.clone(), 1);
    locations.push(Location {
        name: name_of(&start),
        accepting: start.iter().zip(&comps).all(|(s, c)| *s == c.accepting),
    });
    tuples.push(start);
    let mut frontier = 0;
    while frontier < tuples.len() {
        let tuple = tuples[frontier].clone();
        let from = frontier + 1;
        frontier += 1;
        // Cartesian product of the component edges.
        let mut partial: Vec<(Vec<usize>, Guard, BTreeSet<String>, BTreeSet<String>)> =
            vec![(Vec::new(), Guard::default(), BTreeSet::new(), BTreeSet::new())];
        for (c, s) in comps.iter().zip(&tuple) {
            let mut next = Vec::new();
            for (targets, guard, req, forb) in &partial {
                for ce in &c.edges[*s] {
                    let g = guard.and(&ce.guard);
                    if g.is_empty() {
                        continue;
                    }
                    let (mut r, mut f) = (req.clone(), forb.clone());
                    for l in &ce.lits {
                        if l.positive {
                            r.insert(l.atom.clone());
                        } else {
                            f.insert(l.atom.clone());
                        }
                    }
                    if r.intersection(&f).next().is_some() {
                        continue;
                    }
                    let mut t = targets.clone();
                    t.push(ce.to);
                    next.push((t, g, r, f));
                }
            }
            partial = next;
        }
        for (targets, guard, require, forbid) in partial {
            let to = if targets.iter().zip(&comps).any(|(s, c)| *s == c.sink) {
                sink
            } else if let Some(&i) = index.get(&targets) {
                i
            } else {
                let i = locations.len();
                locations.push(Location {
                    name: name_of(&targets),
                    accepting: targets.iter().zip(&comps).all(|(s, c)| *s == c.accepting),
                });
                index.insert(targets.clone(), i);
                tuples.push(targets);
                i
            };
            edges.push(Edge {
                from,
                to,
                guard,
                require,
                forbid,
                resets: Vec::new(),
            });
        }
    }
    Tba {
        locations,
        initial: 1,
        clocks: if timed { vec!["x".into()] } else { Vec::new() },
        edges,
        sink,
        unpruned_locations: unpruned,
    }
}

impl Tba {
    /// Successor of `loc` on `letter` read at clock value `x`.
    pub fn step(&self, loc: usize, letter: &Letter, x: &Rational) -> usize {
        self.edges
            .iter()
            .find(|e| e.from == loc && e.enabled(letter, x))
            .map_or(self.sink, |e| e.to)
    }

    /// Number of enabled edges; monitors are deterministic, so this is 1.
    pub fn enabled_count(&self, loc: usize, letter: &Letter, x: &Rational) -> usize {
        self.edges
            .iter()
            .filter(|e| e.from == loc && e.enabled(letter, x))
            .count()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tba {\n  rankdir=LR;\n");
        for (i, l) in self.locations.iter().enumerate() {
            let shape = if l.accepting { "doublecircle" } else { "circle" };
            let _ = writeln!(s, "  q{i} [label=\"{}\", shape={shape}];", l.name);
        }
        let _ = writeln!(s, "  init [shape=point];\n  init -> q{};", self.initial);
        for e in &self.edges {
            let mut label = vec![e.guard.to_string()];
            label.extend(e.require.iter().cloned());
            label.extend(e.forbid.iter().map(|a| format!("!{a}")));
            let _ = writeln!(s, "  q{} -> q{} [label=\"{}\"];", e.from, e.to, label.join(" & "));
        }
        s.push_str("}\n");
        s
    }
}

/// Runs the monitor over the word (clock = stamp) and accepts when the
/// final location is accepting; the last letter held forever cannot leave
/// an accepting location.
pub fn accepts(tba: &Tba, word: &TimedWord) -> Result<bool, WordError> {
    check_word(word)?;
    let mut loc = tba.initial;
    for (letter, t) in word {
        loc = tba.step(loc, letter, t);
        if loc == tba.sink {
            return Ok(false);
        }
    }
    Ok(tba.locations[loc].accepting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitl::{parse, validate_fragment};

    fn sigma() -> BTreeSet<String> {
        ["obs", "goal1", "goal2", "a", "b"].iter().map(|s| s.to_string()).collect()
    }

    fn tba(text: &str) -> Tba {
        build_tba(&validate_fragment(&parse(text, &sigma()).unwrap()).unwrap())
    }

    fn letter(atoms: &[&str]) -> Letter {
        atoms.iter().map(|s| s.to_string()).collect()
    }

    fn q(s: &str) -> Rational {
        crate::exact::parse_rational(s).unwrap()
    }

    fn word(items: &[(&[&str], &str)]) -> Vec<(Letter, Rational)> {
        items.iter().map(|(l, t)| (letter(l), q(t))).collect()
    }

    #[test]
    fn safety_monitor_has_two_locations() {
        let m = tba("G[0,inf) !obs");
        assert_eq!(m.locations.len(), 2);
        assert!(m.clocks.is_empty());
        assert_eq!(m.step(m.initial, &letter(&["obs", "a"]), &q("0")), m.sink);
        assert!(accepts(&m, &word(&[(&[], "0"), (&["a"], "3")])).unwrap());
    }

    #[test]
    fn eventually_window() {
        let m = tba("F[6,12] goal1");
        assert!(!accepts(&m, &word(&[(&[], "0"), (&["goal1"], "5.9")])).unwrap());
        assert!(accepts(&m, &word(&[(&[], "0"), (&["goal1"], "11.3")])).unwrap());
        assert!(accepts(&m, &word(&[(&[], "0"), (&["goal1"], "12")])).unwrap());
        assert!(!accepts(&m, &word(&[(&[], "0"), (&["goal1"], "12.0001")])).unwrap());
    }

    #[test]
    fn task_product_size_and_two_goal_word() {
        let m = tba("G[0,inf) (!obs) & F[6,12] goal1 & F[20,30] goal2");
        assert_eq!(m.unpruned_locations, 18);
        let w = word(&[
            (&[], "0"),
            (&[], "5.2"),
            (&["goal1"], "11.3"),
            (&[], "15.8"),
            (&[], "22.9"),
            (&["goal2"], "27.7"),
        ]);
        assert!(accepts(&m, &w).unwrap());
        let mut late = w.clone();
        late[5].1 = q("31");
        assert!(!accepts(&m, &late).unwrap());
    }

    #[test]
    fn monitors_are_deterministic_and_complete() {
        let m = tba("G[0,inf) !obs & F[1,3] a & (a U[2,4] b) & X[0,1] !b");
        let stamps = ["0", "1/2", "1", "2", "3", "7/2", "4", "5"];
        let letters = [letter(&[]), letter(&["a"]), letter(&["b"]), letter(&["a", "b"]), letter(&["obs"])];
        for loc in 0..m.locations.len() {
            for l in &letters {
                for t in stamps {
                    assert_eq!(m.enabled_count(loc, l, &q(t)), 1, "loc {loc} {l:?} {t}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_words() {
        let m = tba("F[0,1] a");
        assert_eq!(
            accepts(&m, &word(&[(&[], "0"), (&["a"], "2"), (&[], "1")])),
            Err(WordError::Decreasing(2))
        );
        assert!(matches!(accepts(&m, &word(&[(&["a"], "1")])), Err(WordError::FirstStamp(_))));
    }

    #[test]
    fn dot_lists_every_edge() {
        let m = tba("F[6,12] goal1");
        let dot = m.to_dot();
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches("->").count(), m.edges.len() + 1);
    }
}
