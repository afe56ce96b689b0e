//! Metric interval temporal logic: formulas, the supported fragment, timed
//! Büchi monitors and a direct-semantics oracle.

mod oracle;
mod parser;
mod tba;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{display_rational, Rational};

pub use oracle::brute_force_satisfies;
pub use parser::{parse, ParseError};
pub use tba::{accepts, build_tba, ClockBound, Edge, Guard, Location, Tba};

/// A closed interval `[lower, upper]`, or `[lower, ∞)` when `upper` is
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Rational,
    pub upper: Option<Rational>,
}

impl Interval {
    pub fn new(lower: Rational, upper: Option<Rational>) -> Result<Self, String> {
        if lower < Rational::from_integer(0) {
            return Err(format!("interval lower bound {} is negative", display_rational(&lower)));
        }
        if let Some(u) = upper {
            if lower >= u {
                return Err(format!(
                    "interval [{}, {}] needs lower < upper",
                    display_rational(&lower),
                    display_rational(&u)
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded_from_zero() -> Self {
        Self {
            lower: Rational::from_integer(0),
            upper: None,
        }
    }

    pub fn contains(&self, t: &Rational) -> bool {
        *t >= self.lower && self.upper.map_or(true, |u| *t <= u)
    }

    pub fn is_zero_to_infinity(&self) -> bool {
        self.lower == Rational::from_integer(0) && self.upper.is_none()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.upper {
            Some(u) => write!(f, "[{},{}]", display_rational(&self.lower), display_rational(u)),
            None => write!(f, "[{},inf)", display_rational(&self.lower)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MitlFormula {
    Atom(String),
    Not(Box<MitlFormula>),
    And(Box<MitlFormula>, Box<MitlFormula>),
    Or(Box<MitlFormula>, Box<MitlFormula>),
    Next(Interval, Box<MitlFormula>),
    Eventually(Interval, Box<MitlFormula>),
    Always(Interval, Box<MitlFormula>),
    Until(Interval, Box<MitlFormula>, Box<MitlFormula>),
}

impl MitlFormula {
    pub fn atom(name: &str) -> Self {
        Self::Atom(name.to_string())
    }

    pub fn is_temporal(&self) -> bool {
        matches!(
            self,
            Self::Next(..) | Self::Eventually(..) | Self::Always(..) | Self::Until(..)
        )
    }

    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Self::Atom(a) => {
                out.insert(a.clone());
            }
            Self::Not(x) | Self::Next(_, x) | Self::Eventually(_, x) | Self::Always(_, x) => {
                x.collect_atoms(out)
            }
            Self::And(a, b) | Self::Or(a, b) | Self::Until(_, a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }
}

/// Fully parenthesised concrete syntax, re-parsable by [`parse`].
impl fmt::Display for MitlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Atom(a) => write!(f, "{a}"),
            Self::Not(x) => write!(f, "!{x}"),
            Self::And(a, b) => write!(f, "({a} & {b})"),
            Self::Or(a, b) => write!(f, "({a} | {b})"),
            Self::Next(i, x) => write!(f, "X{i} {x}"),
            Self::Eventually(i, x) => write!(f, "F{i} {x}"),
            Self::Always(i, x) => write!(f, "G{i} {x}"),
            Self::Until(i, a, b) => write!(f, "({a} U{i} {b})"),
        }
    }
}

/// An atom or a negated atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub atom: String,
    pub positive: bool,
}

impl Literal {
    pub fn holds(&self, letter: &BTreeSet<String>) -> bool {
        letter.contains(&self.atom) == self.positive
    }

    pub fn negated(&self) -> Self {
        Self {
            atom: self.atom.clone(),
            positive: !self.positive,
        }
    }

    fn to_formula(&self) -> MitlFormula {
        let a = MitlFormula::Atom(self.atom.clone());
        if self.positive {
            a
        } else {
            MitlFormula::Not(Box::new(a))
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "!{}", self.atom)
        }
    }
}

/// One conjunct of the supported fragment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Conjunct {
    /// `G[0,inf) ℓ`.
    Safety { literal: Literal },
    Eventually { interval: Interval, literal: Literal },
    Until { interval: Interval, hold: Literal, goal: Literal },
    Next { interval: Interval, literal: Literal },
}

impl Conjunct {
    pub fn to_formula(&self) -> MitlFormula {
        match self {
            Self::Safety { literal } => {
                MitlFormula::Always(Interval::unbounded_from_zero(), Box::new(literal.to_formula()))
            }
            Self::Eventually { interval, literal } => {
                MitlFormula::Eventually(*interval, Box::new(literal.to_formula()))
            }
            Self::Until { interval, hold, goal } => MitlFormula::Until(
                *interval,
                Box::new(hold.to_formula()),
                Box::new(goal.to_formula()),
            ),
            Self::Next { interval, literal } => {
                MitlFormula::Next(*interval, Box::new(literal.to_formula()))
            }
        }
    }

    /// Must be discharged by some letter of a finite word.
    pub fn is_eventuality(&self) -> bool {
        !matches!(self, Self::Safety { .. })
    }

    /// Largest finite interval bound, if any.
    pub fn deadline(&self) -> Option<Rational> {
        match self {
            Self::Safety { .. } => None,
            Self::Eventually { interval, .. }
            | Self::Until { interval, .. }
            | Self::Next { interval, .. } => interval.upper,
        }
    }
}

/// A validated conjunction of non-nested timed literals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fragment {
    pub conjuncts: Vec<Conjunct>,
}

impl Fragment {
    pub fn to_formula(&self) -> Option<MitlFormula> {
        self.conjuncts
            .iter()
            .map(Conjunct::to_formula)
            .reduce(|a, b| MitlFormula::And(Box::new(a), Box::new(b)))
    }

    /// Largest finite interval bound over all conjuncts.
    pub fn max_deadline(&self) -> Option<Rational> {
        self.conjuncts.iter().filter_map(Conjunct::deadline).max()
    }

    /// Literals that every letter of the word, including the final one held
    /// forever, must satisfy.
    pub fn invariants(&self) -> Vec<&Literal> {
        self.conjuncts
            .iter()
            .filter_map(|c| match c {
                Conjunct::Safety { literal } => Some(literal),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_formula() {
            Some(x) => write!(f, "{x}"),
            None => write!(f, "true"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FragmentError {
    #[error("unsupported fragment: {reason} in `{subtree}`")]
    Unsupported { reason: String, subtree: String },
}

fn unsupported(reason: &str, f: &MitlFormula) -> FragmentError {
    FragmentError::Unsupported {
        reason: reason.to_string(),
        subtree: f.to_string(),
    }
}

fn literal_of(f: &MitlFormula) -> Option<Literal> {
    match f {
        MitlFormula::Atom(a) => Some(Literal {
            atom: a.clone(),
            positive: true,
        }),
        MitlFormula::Not(x) => match x.as_ref() {
            MitlFormula::Atom(a) => Some(Literal {
                atom: a.clone(),
                positive: false,
            }),
            _ => None,
        },
        _ => None,
    }
}

fn require_literal(parent: &MitlFormula, f: &MitlFormula) -> Result<Literal, FragmentError> {
    literal_of(f).ok_or_else(|| {
        if f.is_temporal() {
            unsupported("nested temporal operator", parent)
        } else {
            unsupported("operand is not an atom or negated atom", parent)
        }
    })
}

fn flatten(f: &MitlFormula, out: &mut Vec<Conjunct>) -> Result<(), FragmentError> {
    match f {
        MitlFormula::And(a, b) => {
            flatten(a, out)?;
            flatten(b, out)
        }
        MitlFormula::Always(i, x) => {
            let literal = require_literal(f, x)?;
            if !i.is_zero_to_infinity() {
                return Err(unsupported("G is supported only over [0,inf)", f));
            }
            out.push(Conjunct::Safety { literal });
            Ok(())
        }
        MitlFormula::Eventually(i, x) => {
            let literal = require_literal(f, x)?;
            out.push(Conjunct::Eventually { interval: *i, literal });
            Ok(())
        }
        MitlFormula::Next(i, x) => {
            let literal = require_literal(f, x)?;
            out.push(Conjunct::Next { interval: *i, literal });
            Ok(())
        }
        MitlFormula::Until(i, a, b) => {
            let hold = require_literal(f, a)?;
            let goal = require_literal(f, b)?;
            out.push(Conjunct::Until {
                interval: *i,
                hold,
                goal,
            });
            Ok(())
        }
        MitlFormula::Or(..) => Err(unsupported("disjunction", f)),
        MitlFormula::Not(x) if x.is_temporal() => {
            Err(unsupported("negation above a temporal operator", f))
        }
        MitlFormula::Atom(_) | MitlFormula::Not(_) => {
            Err(unsupported("bare literal outside a temporal operator", f))
        }
    }
}

/// Accepts conjunctions of `G[0,inf) ℓ`, `F_I ℓ`, `ℓ U_I ℓ` and `X_I ℓ`.
pub fn validate_fragment(formula: &MitlFormula) -> Result<Fragment, FragmentError> {
    let mut conjuncts = Vec::new();
    flatten(formula, &mut conjuncts)?;
    Ok(Fragment { conjuncts })
}

pub type Letter = BTreeSet<String>;

/// Finite timed word: letters with their nondecreasing stamps, first at 0.
pub type TimedWord = [(Letter, Rational)];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WordError {
    #[error("first stamp is {0}, expected 0")]
    FirstStamp(String),
    #[error("stamp decreases at position {0}")]
    Decreasing(usize),
}

pub(crate) fn check_word(word: &TimedWord) -> Result<(), WordError> {
    if let Some((_, t0)) = word.first() {
        if *t0 != Rational::from_integer(0) {
            return Err(WordError::FirstStamp(display_rational(t0)));
        }
    }
    for (i, w) in word.windows(2).enumerate() {
        if w[1].1 < w[0].1 {
            return Err(WordError::Decreasing(i + 1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma() -> BTreeSet<String> {
        ["obs", "goal1", "goal2", "a", "b"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn task_formula_is_in_the_fragment() {
        let f = parse("G[0,inf) (!obs) & F[6,12] goal1 & F[20,30] goal2", &sigma()).unwrap();
        let frag = validate_fragment(&f).unwrap();
        assert_eq!(frag.conjuncts.len(), 3);
        assert_eq!(frag.max_deadline(), Some(Rational::from_integer(30)));
        assert_eq!(frag.invariants()[0].to_string(), "!obs");
    }

    #[test]
    fn fragment_boundaries() {
        for (text, why) in [
            ("F[0,5] G[0,2] a", "nested"),
            ("!F[0,5] a", "negation above"),
            ("F[0,5] a | F[0,3] b", "disjunction"),
            ("a", "bare literal"),
            ("G[1,2] a", "only over [0,inf)"),
        ] {
            let f = parse(text, &sigma()).unwrap();
            let err = validate_fragment(&f).unwrap_err().to_string();
            assert!(err.contains(why), "{text}: {err}");
        }
    }

    #[test]
    fn display_round_trips() {
        let f = parse("G[0,inf) !obs & (a U[1/3,5] b) & X[0,2.5] !a", &sigma()).unwrap();
        let again = parse(&f.to_string(), &sigma()).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn interval_membership_is_exact() {
        let i = Interval::new(Rational::from_integer(6), Some(Rational::from_integer(12))).unwrap();
        assert!(i.contains(&Rational::new(113, 10)));
        assert!(i.contains(&Rational::from_integer(12)));
        assert!(!i.contains(&Rational::new(120_000_001, 10_000_000)));
        assert!(Interval::new(Rational::from_integer(3), Some(Rational::from_integer(3))).is_err());
    }
}
