//! Weighted transition system over the regions of interest: one state per
//! region, one transition per feasible navigation leg, weighted by the
//! leg's duration.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{DisturbanceSignal, RobotModel, Vector};
use crate::exact::Rational;
use crate::fhocp::FhocpConfig;
use crate::mitl::Letter;
use crate::navigator::{
    check_assumption4, navigate, prepare_leg, LegOutcome, NavError, NavigationOptions,
};
use crate::tube::TubeGains;
use crate::workspace::{RegionIndex, Workspace};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("the robot at the initial position is not strictly inside any region")]
    NoInitialRegion,
    #[error("no feasible transition leaves the initial region {0}")]
    EmptyWts(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Nav(#[from] NavError),
}

/// Serializable identity of the controller that realises a transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub dest: String,
    pub controller: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub source: String,
    pub dest: String,
    /// Serialized as `[numerator, denominator]`.
    pub duration: Rational,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wts {
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<Transition>,
    pub labels: BTreeMap<String, BTreeSet<String>>,
    pub alphabet: BTreeSet<String>,
    /// Digest of gains, FHOCP configuration and navigation options.
    pub controller: String,
}

impl Wts {
    pub fn transition(&self, source: &str, dest: &str) -> Option<&Transition> {
        self.transitions
            .iter()
            .find(|t| t.source == source && t.dest == dest)
    }

    pub fn successors<'a>(&'a self, source: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| t.source == source)
    }

    pub fn label(&self, state: &str) -> Letter {
        self.labels.get(state).cloned().unwrap_or_default()
    }

    pub fn max_duration(&self) -> Rational {
        self.transitions
            .iter()
            .map(|t| t.duration)
            .max()
            .unwrap_or_else(|| Rational::from_integer(0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("WTS serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Run of the WTS with its time stamps.
pub type TimedRun = Vec<(String, Rational)>;

/// `τ(0) = 0`, `τ(l+1) = τ(l) + 𝔱(r(l), r(l+1))`.
pub fn timed_run_of(wts: &Wts, plan: &[String]) -> Result<TimedRun, AbstractionError> {
    let first = plan
        .first()
        .ok_or_else(|| AbstractionError::InvalidPlan("empty run".into()))?;
    if *first != wts.initial {
        return Err(AbstractionError::InvalidPlan(format!(
            "run starts at {first}, not at the initial state {}",
            wts.initial
        )));
    }
    let mut stamp = Rational::from_integer(0);
    let mut run = vec![(first.clone(), stamp)];
    for pair in plan.windows(2) {
        let t = wts.transition(&pair[0], &pair[1]).ok_or_else(|| {
            AbstractionError::InvalidPlan(format!("no transition {} -> {}", pair[0], pair[1]))
        })?;
        stamp += t.duration;
        run.push((pair[1].clone(), stamp));
    }
    Ok(run)
}

/// Letters are the label sets of the visited regions.
pub fn timed_word_of(wts: &Wts, run: &TimedRun) -> Vec<(Letter, Rational)> {
    run.iter().map(|(s, t)| (wts.label(s), *t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Every ordered pair of admissible regions.
    #[default]
    All,
    /// Only pairs whose source is reachable from the initial region.
    Lazy,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbstractionOptions {
    pub pairs: PairMode,
    /// Regions carrying any of these labels are never leg destinations.
    pub exclude_labels: BTreeSet<String>,
}

/// What happened on one attempted leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub source: String,
    pub dest: String,
    pub feasible: bool,
    pub duration: Option<Rational>,
    pub outcome: Option<LegOutcome>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub epsilon: Option<f64>,
    pub steady_state_radius: Option<f64>,
    pub max_position_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtsBuild {
    pub wts: Wts,
    pub legs: Vec<LegSummary>,
    pub warnings: Vec<String>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digest identifying the family of leg controllers.
pub fn controller_digest<const N: usize>(
    model: &RobotModel<N>,
    gains: &TubeGains,
    config: &FhocpConfig,
    nav: &NavigationOptions,
) -> String {
    let payload = serde_json::json!({
        "model": format!("{model:?}"),
        "gains": gains,
        "config": config,
        "navigation": nav,
    });
    sha256_hex(payload.to_string().as_bytes())
}

/// Legs start at the source center at rest and run with `d ≡ 0`; the tube
/// absorbs the disturbance when the plan is executed.
fn run_leg<const N: usize>(
    ws: &Workspace<N>,
    model: &RobotModel<N>,
    gains: &TubeGains,
    config: &FhocpConfig,
    nav: &NavigationOptions,
    source: RegionIndex,
    dest: RegionIndex,
) -> LegSummary {
    let mut summary = LegSummary {
        source: ws.regions[source].id.clone(),
        dest: ws.regions[dest].id.clone(),
        feasible: false,
        duration: None,
        outcome: None,
        violations: Vec::new(),
        warnings: Vec::new(),
        epsilon: None,
        steady_state_radius: None,
        max_position_deviation: None,
    };
    let setup = match prepare_leg(ws, model, gains, config, nav, source, dest) {
        Ok(s) => s,
        Err(e) => {
            summary.violations.push(format!("leg setup failed: {e}"));
            return summary;
        }
    };
    let start = (ws.regions[source].ball.center, Vector::<N>::zeros());
    match navigate(&setup, ws, &start, &start, &DisturbanceSignal::Zero, 0.0, nav) {
        Ok(r) => {
            let fits = !r.warnings.iter().any(|w| w.contains("does not fit") || w.contains("too small"));
            if !fits {
                summary
                    .violations
                    .push("steady-state ball does not fit inside the destination".into());
            }
            summary.feasible = r.feasible && fits;
            summary.duration = r.feasible.then_some(r.duration);
            summary.outcome = Some(r.outcome);
            summary.violations.extend(r.violations);
            summary.warnings = r.warnings;
            summary.epsilon = Some(r.epsilon);
            summary.steady_state_radius = Some(r.steady_state_radius);
            summary.max_position_deviation = Some(r.tube.max_position_deviation);
        }
        Err(e) => summary.violations.push(format!("navigation failed: {e}")),
    }
    summary
}

/// Builds the WTS. Pairs that violate the region spacing requirement are
/// skipped with a warning.
pub fn build_wts<const N: usize>(
    ws: &Workspace<N>,
    model: &RobotModel<N>,
    gains: &TubeGains,
    config: &FhocpConfig,
    nav: &NavigationOptions,
    initial_position: &Vector<N>,
    opts: &AbstractionOptions,
) -> Result<WtsBuild, AbstractionError> {
    let initial = ws
        .region_containing_robot(initial_position)
        .ok_or(AbstractionError::NoInitialRegion)?;
    let spacing = check_assumption4(ws, gains);
    let mut warnings = Vec::new();
    for f in &spacing.failures {
        warnings.push(format!(
            "regions {} and {} are closer than the required gap {:.4} (gap {:.4}); pair excluded",
            ws.regions[f.a].id, ws.regions[f.b].id, spacing.required_gap, f.gap
        ));
    }
    let m = ws.regions.len();
    let excluded: Vec<bool> = ws
        .regions
        .iter()
        .map(|r| r.labels.iter().any(|l| opts.exclude_labels.contains(l)))
        .collect();
    let pairs_from = |s: RegionIndex| -> Vec<(RegionIndex, RegionIndex)> {
        (0..m)
            .filter(|&d| d != s && !excluded[d] && spacing.pair_ok(s, d))
            .map(|d| (s, d))
            .collect()
    };
    let run = |pairs: &[(RegionIndex, RegionIndex)]| -> Vec<LegSummary> {
        pairs
            .par_iter()
            .map(|&(s, d)| run_leg(ws, model, gains, config, nav, s, d))
            .collect()
    };

    let legs: Vec<LegSummary> = match opts.pairs {
        PairMode::All => {
            let pairs: Vec<_> = (0..m).flat_map(pairs_from).collect();
            run(&pairs)
        }
        PairMode::Lazy => {
            let mut seen = vec![false; m];
            seen[initial] = true;
            let mut frontier = vec![initial];
            let mut legs = Vec::new();
            while !frontier.is_empty() {
                let pairs: Vec<_> = frontier.iter().flat_map(|&s| pairs_from(s)).collect();
                let layer = run(&pairs);
                let mut next = BTreeSet::new();
                for (leg, &(_, d)) in layer.iter().zip(&pairs) {
                    if leg.feasible && !seen[d] {
                        next.insert(d);
                    }
                }
                for &d in &next {
                    seen[d] = true;
                }
                legs.extend(layer);
                frontier = next.into_iter().collect();
            }
            legs.sort_by_key(|l| (ws.index_of(&l.source), ws.index_of(&l.dest)));
            legs
        }
    };

    let attempted_from_initial = legs.iter().any(|l| l.source == ws.regions[initial].id);
    let feasible_from_initial = legs
        .iter()
        .any(|l| l.feasible && l.source == ws.regions[initial].id);
    if attempted_from_initial && !feasible_from_initial {
        return Err(AbstractionError::EmptyWts(ws.regions[initial].id.clone()));
    }

    let controller = controller_digest(model, gains, config, nav);
    let transitions = legs
        .iter()
        .filter(|l| l.feasible)
        .map(|l| Transition {
            source: l.source.clone(),
            dest: l.dest.clone(),
            duration: l.duration.expect("feasible legs carry a duration"),
            action: Action {
                dest: l.dest.clone(),
                controller: controller.clone(),
            },
        })
        .collect();
    let wts = Wts {
        states: ws.regions.iter().map(|r| r.id.clone()).collect(),
        initial: ws.regions[initial].id.clone(),
        transitions,
        labels: ws
            .regions
            .iter()
            .map(|r| (r.id.clone(), r.labels.clone()))
            .collect(),
        alphabet: ws.alphabet(),
        controller,
    };
    Ok(WtsBuild {
        wts,
        legs,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearDynamics;
    use crate::geometry::{Aabb, Ball};
    use crate::tube::{design_gains, TubeMode};
    use crate::workspace::Region;
    use nalgebra::{DMatrix, Vector2};
    use std::sync::Arc;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn hand_wts() -> Wts {
        let t = |s: &str, d: &str, w: Rational| Transition {
            source: s.into(),
            dest: d.into(),
            duration: w,
            action: Action {
                dest: d.into(),
                controller: "c".into(),
            },
        };
        Wts {
            states: vec!["R1".into(), "R3".into(), "R5".into()],
            initial: "R1".into(),
            transitions: vec![
                t("R1", "R3", q(52, 10)),
                t("R3", "R5", q(61, 10)),
                t("R5", "R3", q(1, 10)),
                t("R3", "R1", q(1, 10)),
            ],
            labels: [("R5".to_string(), ["goal1".to_string()].into())].into(),
            alphabet: ["goal1".to_string()].into(),
            controller: "c".into(),
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_state_run() {
        let run = timed_run_of(&hand_wts(), &ids(&["R1"])).unwrap();
        assert_eq!(run, vec![("R1".to_string(), q(0, 1))]);
    }

    #[test]
    fn stamps_accumulate() {
        let run = timed_run_of(&hand_wts(), &ids(&["R1", "R3", "R5"])).unwrap();
        let stamps: Vec<Rational> = run.iter().map(|(_, t)| *t).collect();
        assert_eq!(stamps, vec![q(0, 1), q(52, 10), q(113, 10)]);
        let word = timed_word_of(&hand_wts(), &run);
        assert!(word[2].0.contains("goal1"));
        assert!(word[0].0.is_empty());
    }

    #[test]
    fn repeated_legs_sum_exactly() {
        let mut plan = ids(&["R1", "R3"]);
        for _ in 0..500 {
            plan.push("R5".into());
            plan.push("R3".into());
        }
        let run = timed_run_of(&hand_wts(), &plan).unwrap();
        // In tenths: 52 + 500 * (61 + 1).
        let tenths: i64 = 52 + 500 * 62;
        assert_eq!(run.last().unwrap().1, q(tenths, 10));
    }

    #[test]
    fn bad_runs_are_rejected() {
        let w = hand_wts();
        assert!(matches!(
            timed_run_of(&w, &ids(&["R1", "R5"])),
            Err(AbstractionError::InvalidPlan(_))
        ));
        assert!(timed_run_of(&w, &ids(&["R3"])).is_err());
        assert!(timed_run_of(&w, &[]).is_err());
    }

    #[test]
    fn json_round_trip_uses_rational_pairs() {
        let w = hand_wts();
        let text = w.to_json();
        assert!(text.contains("52,") || text.contains("26,"), "{text}");
        assert_eq!(Wts::from_json(&text).unwrap(), w);
    }

    fn region(id: &str, x: f64, y: f64) -> Region<2> {
        Region {
            id: id.into(),
            ball: Ball {
                center: Vector2::new(x, y),
                radius: 0.7,
            },
            labels: BTreeSet::new(),
        }
    }

    fn setup(regions: Vec<Region<2>>) -> (Workspace<2>, RobotModel<2>, TubeGains, FhocpConfig, NavigationOptions) {
        let ws = Workspace {
            bounds: Aabb::symmetric(5.0),
            robot_radius: 0.2,
            regions,
        };
        let model = RobotModel {
            dynamics: Arc::new(LinearDynamics::<2>::double_integrator()),
            velocity_box: Aabb::symmetric(5.0),
            input_box: Aabb::symmetric(2.125),
            lipschitz: 1.0,
            j_lower: 1.0,
        };
        let gains = design_gains(1.0, 1.0, 0.1, 3.0, 1.1).unwrap();
        let config = FhocpConfig::new(0.1, 12, DMatrix::identity(4, 4), DMatrix::identity(2, 2) * 0.5);
        let nav = NavigationOptions {
            mode: TubeMode::MonitorOnly { input_reserve: 0.375 },
            ..NavigationOptions::default()
        };
        (ws, model, gains, config, nav)
    }

    #[test]
    fn single_region_gives_empty_wts() {
        let (ws, m, g, c, n) = setup(vec![region("A", 0.0, 0.0)]);
        let b = build_wts(&ws, &m, &g, &c, &n, &Vector2::zeros(), &AbstractionOptions::default()).unwrap();
        assert_eq!(b.wts.states, ids(&["A"]));
        assert!(b.wts.transitions.is_empty());
        assert_eq!(b.wts.initial, "A");
    }

    #[test]
    fn close_pair_is_excluded_with_warning() {
        let (ws, m, g, c, n) = setup(vec![
            region("A", -2.0, -2.0),
            region("B", 1.5, 1.0),
            region("C", 2.9, 1.0),
        ]);
        let start = Vector2::new(-2.0, -2.0);
        let b = build_wts(&ws, &m, &g, &c, &n, &start, &AbstractionOptions::default()).unwrap();
        assert!(b.warnings.iter().any(|w| w.contains("B and C")), "{:?}", b.warnings);
        assert!(b.wts.transition("B", "C").is_none());
        assert!(b.wts.transition("C", "B").is_none());
        assert!(!b.legs.iter().any(|l| l.source == "B" && l.dest == "C"));
        let ab = b.wts.transition("A", "B").expect("A -> B is feasible");
        assert!(ab.duration > q(0, 1));
        assert_eq!((ab.duration / q(1, 10)).denom(), &1);
    }

    #[test]
    fn lazy_and_all_agree_on_reachable_part() {
        let (ws, m, g, c, n) = setup(vec![region("A", -2.0, -2.0), region("B", 1.5, 1.0)]);
        let start = Vector2::new(-2.0, -2.0);
        let all = build_wts(&ws, &m, &g, &c, &n, &start, &AbstractionOptions::default()).unwrap();
        let lazy_opts = AbstractionOptions {
            pairs: PairMode::Lazy,
            ..Default::default()
        };
        let lazy = build_wts(&ws, &m, &g, &c, &n, &start, &lazy_opts).unwrap();
        assert_eq!(all.wts, lazy.wts);
    }

    #[test]
    fn start_outside_regions_is_an_error() {
        let (ws, m, g, c, n) = setup(vec![region("A", -2.0, -2.0)]);
        let r = build_wts(&ws, &m, &g, &c, &n, &Vector2::new(3.0, 3.0), &AbstractionOptions::default());
        assert!(matches!(r, Err(AbstractionError::NoInitialRegion)));
    }
}
