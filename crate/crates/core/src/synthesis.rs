//! Product of the WTS with the task automaton, minimum-makespan search for
//! an accepting run, and execution of the resulting sequence of legs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{sha256_hex, timed_run_of, timed_word_of, Action, AbstractionError, TimedRun, Wts};
use crate::dynamics::{DisturbanceSignal, RobotModel};
use crate::exact::{to_f64, Rational};
use crate::fhocp::{FhocpConfig, NominalState};
use crate::mitl::{accepts, Conjunct, Fragment, Letter, Tba, WordError};
use crate::navigator::{navigate, prepare_leg, NavError, NavigationOptions, TransitionResult};
use crate::tube::TubeGains;
use crate::workspace::Workspace;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("plan stamps disagree with the WTS at position {index}: plan {planned}, WTS {recomputed}")]
    StampMismatch {
        index: usize,
        planned: Rational,
        recomputed: Rational,
    },
    #[error("plan leg {index} does not match its transition")]
    GoalMismatch { index: usize },
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Word(#[from] WordError),
    #[error("unknown region {0}")]
    UnknownRegion(String),
    #[error(transparent)]
    Nav(#[from] NavError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPlan {
    /// Regions with their stamps; stamps serialize as `[numerator, denominator]`.
    pub run: TimedRun,
    /// One action per leg.
    pub goals: Vec<Action>,
    pub formula: String,
    pub formula_digest: String,
    pub makespan: Rational,
}

impl TimedPlan {
    pub fn regions(&self) -> Vec<String> {
        self.run.iter().map(|(r, _)| r.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn formula_digest(fragment: &Fragment) -> String {
    sha256_hex(fragment.to_string().as_bytes())
}

/// A bound past which no accepting run needs to be explored: the largest
/// interval deadline, or, when some eventuality has no deadline, the
/// largest interval constant plus one leg per product location.
pub fn horizon_bound(fragment: &Fragment, wts: &Wts, tba: &Tba) -> Rational {
    let zero = Rational::from_integer(0);
    let mut constants = vec![zero];
    let mut open_ended = false;
    for c in &fragment.conjuncts {
        let iv = match c {
            Conjunct::Safety { .. } => continue,
            Conjunct::Eventually { interval, .. }
            | Conjunct::Until { interval, .. }
            | Conjunct::Next { interval, .. } => interval,
        };
        constants.push(iv.lower);
        match iv.upper {
            Some(u) => constants.push(u),
            None => open_ended = true,
        }
    }
    let c = constants.into_iter().max().unwrap_or(zero);
    if open_ended {
        let states = (wts.states.len() * tba.locations.len()) as i64;
        c + wts.max_duration() * Rational::from_integer(states)
    } else {
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    stamp: Rational,
    legs: usize,
    path: Vec<String>,
    loc: usize,
}

/// Uniform-cost search over `(region, location, stamp)`. Returns the plan
/// with the smallest final stamp, ties broken by fewer legs and then by the
/// lexicographic order of region ids. `None` when no accepting run exists
/// within the bound.
pub fn product_search(wts: &Wts, tba: &Tba, fragment: &Fragment, horizon: Rational) -> Option<TimedPlan> {
    let zero = Rational::from_integer(0);
    let limit = horizon + wts.max_duration();
    let init_loc = tba.step(tba.initial, &wts.label(&wts.initial), &zero);
    if init_loc == tba.sink {
        return None;
    }
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Entry {
        stamp: zero,
        legs: 0,
        path: vec![wts.initial.clone()],
        loc: init_loc,
    }));
    let mut visited: HashSet<(String, usize, Rational)> = HashSet::new();
    while let Some(Reverse(e)) = heap.pop() {
        let region = e.path.last().expect("nonempty path").clone();
        if !visited.insert((region.clone(), e.loc, e.stamp)) {
            continue;
        }
        if tba.locations[e.loc].accepting {
            return Some(plan_from_path(wts, fragment, &e.path));
        }
        for t in wts.successors(&region) {
            let stamp = e.stamp + t.duration;
            if stamp > limit {
                continue;
            }
            let loc = tba.step(e.loc, &wts.label(&t.dest), &stamp);
            if loc == tba.sink || visited.contains(&(t.dest.clone(), loc, stamp)) {
                continue;
            }
            let mut path = e.path.clone();
            path.push(t.dest.clone());
            heap.push(Reverse(Entry {
                stamp,
                legs: e.legs + 1,
                path,
                loc,
            }));
        }
    }
    None
}

fn plan_from_path(wts: &Wts, fragment: &Fragment, path: &[String]) -> TimedPlan {
    let run = timed_run_of(wts, path).expect("search follows WTS transitions");
    let goals = path
        .windows(2)
        .map(|p| wts.transition(&p[0], &p[1]).expect("transition exists").action.clone())
        .collect();
    let makespan = run.last().map(|(_, t)| *t).unwrap_or_default();
    TimedPlan {
        run,
        goals,
        formula: fragment.to_string(),
        formula_digest: formula_digest(fragment),
        makespan,
    }
}

/// Recomputes the stamps from the WTS and runs the automaton on the induced
/// timed word.
pub fn verify_plan(plan: &TimedPlan, wts: &Wts, tba: &Tba) -> Result<bool, SynthesisError> {
    let run = timed_run_of(wts, &plan.regions())?;
    for (index, ((_, planned), (_, recomputed))) in plan.run.iter().zip(&run).enumerate() {
        if planned != recomputed {
            return Err(SynthesisError::StampMismatch {
                index,
                planned: *planned,
                recomputed: *recomputed,
            });
        }
    }
    if plan.goals.len() + 1 != plan.run.len() {
        return Err(SynthesisError::GoalMismatch { index: plan.goals.len() });
    }
    for (index, (goal, pair)) in plan.goals.iter().zip(plan.run.windows(2)).enumerate() {
        let t = wts.transition(&pair[0].0, &pair[1].0).expect("checked by timed_run_of");
        if *goal != t.action {
            return Err(SynthesisError::GoalMismatch { index });
        }
    }
    Ok(accepts(tba, &timed_word_of(wts, &run))?)
}

/// Outcome of running a plan on the continuous system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport<const N: usize> {
    pub legs: Vec<TransitionResult<N>>,
    /// Region actually containing the robot at each leg end, with the
    /// realized stamps.
    pub realized_run: Vec<(Option<String>, Rational)>,
    pub realized_word: Vec<(Letter, Rational)>,
    pub accepted: bool,
    /// All legs ran and were feasible.
    pub complete: bool,
    pub abort: Option<String>,
    pub tube_violations: usize,
    pub max_position_deviation: f64,
    pub max_velocity_deviation: f64,
}

/// Everything needed to run legs on the continuous system.
#[derive(Clone, Copy)]
pub struct Plant<'a, const N: usize> {
    pub workspace: &'a Workspace<N>,
    pub model: &'a RobotModel<N>,
    pub gains: &'a TubeGains,
    pub config: &'a FhocpConfig,
    pub nav: &'a NavigationOptions,
}

/// Runs the legs in order. Each leg starts from the real state the previous
/// one ended in, with the nominal state reset onto it, and sees the
/// disturbance on the absolute clock.
pub fn execute_plan<const N: usize>(
    plan: &TimedPlan,
    plant: Plant<'_, N>,
    tba: &Tba,
    initial: &NominalState<N>,
    disturbance: &DisturbanceSignal,
) -> Result<ExecutionReport<N>, SynthesisError> {
    let ws = plant.workspace;
    let region_of = |s: &NominalState<N>| ws.region_containing_robot(&s.0);
    let letter_of = |i: Option<usize>| -> Letter { i.map(|i| ws.regions[i].labels.clone()).unwrap_or_default() };
    let start_region = region_of(initial);
    let mut stamp = Rational::from_integer(0);
    let mut realized_run = vec![(start_region.map(|i| ws.regions[i].id.clone()), stamp)];
    let mut realized_word = vec![(letter_of(start_region), stamp)];
    let mut legs = Vec::new();
    let mut abort = None;
    let mut state = *initial;
    for pair in plan.run.windows(2) {
        let idx = |id: &str| ws.index_of(id).ok_or_else(|| SynthesisError::UnknownRegion(id.into()));
        let (s, d) = (idx(&pair[0].0)?, idx(&pair[1].0)?);
        let setup = prepare_leg(ws, plant.model, plant.gains, plant.config, plant.nav, s, d)?;
        let r = match navigate(&setup, ws, &state, &state, disturbance, to_f64(&stamp), plant.nav) {
            Ok(r) => r,
            Err(e) => {
                abort = Some(format!("leg {} -> {}: {e}", pair[0].0, pair[1].0));
                break;
            }
        };
        let feasible = r.feasible;
        stamp += r.duration;
        state = r.end_state;
        let reached = region_of(&state);
        realized_run.push((reached.map(|i| ws.regions[i].id.clone()), stamp));
        realized_word.push((letter_of(reached), stamp));
        if !feasible {
            abort = Some(format!(
                "leg {} -> {} infeasible: {}",
                pair[0].0,
                pair[1].0,
                r.violations.join("; ")
            ));
        }
        legs.push(r);
        if abort.is_some() {
            break;
        }
    }
    let complete = abort.is_none();
    let accepted = complete && accepts(tba, &realized_word)?;
    Ok(ExecutionReport {
        tube_violations: legs.iter().map(|l| l.tube.violations).sum(),
        max_position_deviation: legs.iter().map(|l| l.tube.max_position_deviation).fold(0.0, f64::max),
        max_velocity_deviation: legs.iter().map(|l| l.tube.max_velocity_deviation).fold(0.0, f64::max),
        legs,
        realized_run,
        realized_word,
        accepted,
        complete,
        abort,
    })
}

/// Per-conjunct stamps at which the goal literal was first met in a word;
/// used in reports.
pub fn first_visits(word: &[(Letter, Rational)]) -> BTreeMap<String, Rational> {
    let mut out = BTreeMap::new();
    for (letter, t) in word {
        for a in letter {
            out.entry(a.clone()).or_insert(*t);
        }
    }
    out
}
