//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubenav::abstraction::{timed_word_of, Action, PairMode, Transition, Wts};
use tubenav::dynamics::DisturbanceSignal;
use tubenav::exact::{to_f64, Rational};
use tubenav::geometry::{ball_in_ball, ball_in_box, balls_disjoint, Aabb, Ball};
use tubenav::mitl::{
    accepts, brute_force_satisfies, build_tba, validate_fragment, Conjunct, Fragment, Interval, Letter,
    Literal, MitlFormula,
};
use tubenav::navigator::{plan_nominal, prepare_leg, replay_real, LegSetup, NominalLeg};
use tubenav::pipeline::{abstraction, execute, synthesize, DisturbanceChoice};
use tubenav::scenario::{Design, Scenario};
use tubenav::synthesis::{horizon_bound, product_search};
use tubenav::tube::design_gains;

struct Verdict {
    pass: bool,
    detail: String,
}

fn q(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

// ---------------------------------------------------------------- 1 and 9

struct PipelineRun {
    wts_json: String,
    plan_json: String,
}

fn bundled_pipeline(scenario: &Scenario, design: &Design) -> Result<(PipelineRun, Verdict), String> {
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    let fhocp_ok = scenario.regions.len() == 14
        && scenario.regions.iter().all(|r| r.radius == 0.7)
        && scenario.disturbance.bound == 0.25
        && scenario.h().map_err(|e| e.to_string())? == q(1, 10)
        && scenario.horizon_steps().map_err(|e| e.to_string())? == 12
        && design.config.q == DMatrix::identity(4, 4)
        && design.config.r == DMatrix::identity(2, 2) * 0.5
        && scenario.workspace.lower == [-5.0, -5.0]
        && scenario.workspace.upper == [5.0, 5.0];
    if !fhocp_ok {
        pass = false;
        notes.push("scenario parameters differ".to_string());
    }

    let build = abstraction(scenario, design, PairMode::All).map_err(|e| e.to_string())?;
    let reference_legs = [
        ("R1", "R3", 5.2),
        ("R3", "R5", 6.1),
        ("R5", "R9", 4.5),
        ("R9", "R12", 7.1),
        ("R12", "R11", 4.8),
    ];
    let mut legs = Vec::new();
    for (s, d, reference) in reference_legs {
        match build.wts.transition(s, d) {
            Some(t) => {
                let ours = to_f64(&t.duration);
                let ok = (ours - reference).abs() <= 0.3 * reference + 1e-9;
                pass &= ok;
                legs.push(format!("{s}-{d} {ours:.1}/{reference}"));
            }
            None => {
                pass = false;
                legs.push(format!("{s}-{d} missing"));
            }
        }
    }
    notes.push(format!("legs {}", legs.join(", ")));

    let plan = synthesize(scenario, &build.wts)
        .map_err(|e| e.to_string())?
        .ok_or("no plan")?;
    let report = execute(
        scenario,
        design,
        &plan,
        &DisturbanceChoice::Paper.signal(scenario, scenario.seed),
    )
    .map_err(|e| e.to_string())?;
    let has = |atom: &str, lo: i64, hi: i64| {
        report
            .realized_word
            .iter()
            .find(|(l, t)| l.contains(atom) && *t >= q(lo, 1) && *t <= q(hi, 1))
            .map(|(_, t)| *t)
    };
    let g1 = has("goal1", 6, 12);
    let g2 = has("goal2", 20, 30);
    let obs_letters = report.realized_word.iter().filter(|(l, _)| l.contains("obs")).count();

    // Independent safety check on the logged real trajectory.
    let ws = &design.workspace;
    let rr = ws.robot_radius;
    let mut contacts = 0;
    let mut outside = 0;
    for leg in &report.legs {
        let (s, d) = (ws.index_of(&leg.source).unwrap(), ws.index_of(&leg.dest).unwrap());
        for row in leg.leg_rows() {
            if (0..2).any(|i| row.pos[i].abs() > 5.0 - rr) {
                outside += 1;
            }
            for (j, r) in ws.regions.iter().enumerate() {
                if j != s && j != d && (row.pos - r.ball.center).norm() <= r.ball.radius + rr {
                    contacts += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    pass &= report.complete
        && report.accepted
        && g1.is_some()
        && g2.is_some()
        && obs_letters == 0
        && contacts == 0
        && outside == 0
        && elapsed <= 300.0;
    let route: Vec<String> = plan
        .run
        .iter()
        .map(|(r, t)| format!("{r}@{:.1}", to_f64(t)))
        .collect();
    notes.push(format!("plan {}", route.join(" ")));
    notes.push(format!(
        "goal1 {:?} goal2 {:?} contacts {contacts} outside {outside} accepted {} ({elapsed:.1} s)",
        g1.map(|t| to_f64(&t)),
        g2.map(|t| to_f64(&t)),
        report.accepted
    ));
    Ok((
        PipelineRun {
            wts_json: build.wts.to_json(),
            plan_json: plan.to_json(),
        },
        Verdict {
            pass,
            detail: notes.join("; "),
        },
    ))
}

// ---------------------------------------------------------------- 2 and 4

struct LegSuite {
    setup: LegSetup<2>,
    nominal: NominalLeg<2>,
    design: Design,
}

fn first_leg(scenario: &Scenario) -> LegSuite {
    let design = scenario.design().unwrap();
    let ws = &design.workspace;
    let (s, d) = (ws.index_of("R1").unwrap(), ws.index_of("R3").unwrap());
    let setup = prepare_leg(ws, &design.model, &design.gains, &design.config, &design.nav, s, d).unwrap();
    let start = (ws.regions[s].ball.center, Vector2::zeros());
    let nominal = plan_nominal(&setup, &start, &design.nav).unwrap();
    LegSuite {
        setup,
        nominal,
        design,
    }
}

fn random_disturbance(rng: &mut ChaCha8Rng, bound: f64, seed: u64) -> DisturbanceSignal {
    if rng.gen_bool(0.3) {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        DisturbanceSignal::Constant {
            value: vec![bound * a.cos(), bound * a.sin()],
            bound,
        }
    } else {
        DisturbanceSignal::UniformRandom {
            bound,
            hold: rng.gen_range(0.02..0.5),
            seed,
        }
    }
}

fn monte_carlo(suite: &LegSuite) -> (Verdict, Verdict) {
    let started = Instant::now();
    let ws = &suite.design.workspace;
    let gains = suite.design.gains;
    let bound = gains.disturbance_bound;
    // Radii from the formulas, evaluated here rather than read back.
    let min_alpha = gains.alpha1.min(gains.alpha2);
    let r_e = bound / min_alpha.sqrt();
    let r_v = 2.0 * bound / min_alpha.sqrt();
    let ssr = suite.setup.steady_state_radius();
    let target = suite.setup.target();
    let m = suite.setup.problem.substeps();
    let fired = suite.nominal.duration_steps.map(|k| k * m);
    let start = suite.nominal.states[0];

    let mut tube_bad = 0usize;
    let mut tail_bad = 0usize;
    let mut rows = 0usize;
    let mut tail_rows = 0usize;
    let mut max_dev: f64 = 0.0;
    let mut max_tail: f64 = 0.0;
    let mut tail_span: f64 = f64::INFINITY;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_disturbance(&mut rng, bound, seed);
        let t0 = rng.gen_range(0.0..30.0);
        let r = replay_real(&suite.setup, ws, &suite.nominal, &start, &d, t0).unwrap();
        for row in &r.log {
            rows += 1;
            let de = (row.pos - row.nominal_pos).norm();
            let dv = (row.vel - row.nominal_vel).norm();
            max_dev = max_dev.max(de / r_e).max(dv / r_v);
            if de > r_e + 1e-6 || dv > r_v + 1e-6 {
                tube_bad += 1;
            }
        }
        if let Some(fi) = fired {
            let tail = &r.log[fi.min(r.log.len())..];
            tail_span = tail_span.min(tail.last().map_or(0.0, |l| l.t) - tail.first().map_or(0.0, |f| f.t));
            for row in tail {
                tail_rows += 1;
                let pe = (row.pos - target).norm();
                let sp = row.vel.norm();
                max_tail = max_tail.max(pe / (ssr + r_e)).max(sp / (ssr + r_v));
                if pe > ssr + r_e + 1e-6 || sp > ssr + r_v + 1e-6 {
                    tail_bad += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let tube = Verdict {
        pass: tube_bad == 0 && rows > 0 && elapsed <= 120.0,
        detail: format!(
            "100 runs, {rows} samples, {tube_bad} outside the tube, worst deviation {:.3} of the radius ({elapsed:.1} s)",
            max_dev
        ),
    };
    let tail = Verdict {
        pass: fired.is_some() && tail_bad == 0 && tail_rows > 0 && tail_span >= 2.0 - 1e-9,
        detail: format!(
            "{tail_rows} tail samples over >= {tail_span:.2} s, {tail_bad} violations, worst {:.3} of the bound",
            max_tail
        ),
    };
    (tube, tail)
}

// ---------------------------------------------------------------- 3

fn gain_formulas() -> Verdict {
    let mut worst: f64 = 0.0;
    for (rm, km) in [(1.2, 1.1), (3.0, 1.1), (2.0, 1.5)] {
        let g = design_gains(2.5, 1.0, 0.25, rm, km).unwrap();
        // One-line evaluation of the closed forms.
        let (l, j) = (2.5f64, 1.0f64);
        let rho = rm * l / 2.0;
        let k = km * ((1.0 + 2.0 * rho) * l + 1.25) / j;
        let a1 = 1.0 - l / (2.0 * rho);
        let a2 = k * j - (1.0 + 2.0 * rho) * l - 5.0 / 4.0;
        for (x, y) in [(g.rho, rho), (g.k, k), (g.alpha1, a1), (g.alpha2, a2)] {
            worst = worst.max((x - y).abs());
        }
        let re = 0.25 / a1.min(a2).sqrt();
        worst = worst.max((g.r_e - re).abs()).max((g.r_v - 2.0 * re).abs());
    }
    Verdict {
        pass: worst <= 1e-12,
        detail: format!("max abs difference {worst:.2e}"),
    }
}

// ---------------------------------------------------------------- 5

/// Lattice of `n × n` points covering the square around `c` of half-width `h`.
fn disk_lattice(c: Vector2<f64>, r: f64, n: usize) -> impl Iterator<Item = Vector2<f64>> {
    let step = 2.0 * r / (n - 1) as f64;
    (0..n).flat_map(move |i| {
        (0..n).filter_map(move |j| {
            let p = Vector2::new(c.x - r + i as f64 * step, c.y - r + j as f64 * step);
            ((p - c).norm() <= r).then_some(p)
        })
    })
}

fn geometry_oracle() -> Verdict {
    const N: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut disagreements = 0;
    let mut beyond_cell = 0;
    for case in 0..500 {
        let lo = Vector2::new(rng.gen_range(-5.0..0.0), rng.gen_range(-5.0..0.0));
        let hi = lo + Vector2::new(rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0));
        let bx = Aabb::new(lo, hi).unwrap();
        let outer = Ball {
            center: Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            radius: rng.gen_range(0.5..3.0),
        };
        let r = rng.gen_range(0.05..1.0);
        // Probe near the boundary of the eroded set half of the time.
        let probe = |rng: &mut ChaCha8Rng, near: Vector2<f64>| {
            if rng.gen_bool(0.5) {
                near + Vector2::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05))
            } else {
                Vector2::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0))
            }
        };
        let cell = 2.0 * r / (N - 1) as f64 * std::f64::consts::SQRT_2;
        // (computed answer, brute-force answer, distance to the decision boundary)
        let (computed, brute, margin) = match case % 5 {
            0 => {
                let y = rng.gen_range(lo.y..hi.y);
                let x = probe(&mut rng, Vector2::new(lo.x + r, y));
                let computed = bx.erode(r).map_or(false, |e| e.contains_point(&x));
                let brute = disk_lattice(x, r, N).all(|p| bx.contains_point(&p));
                let depth = (x.x - lo.x).min(hi.x - x.x).min(x.y - lo.y).min(hi.y - x.y);
                (computed, brute, (depth - r).abs())
            }
            1 => {
                let dir = Vector2::new(1.0, 0.0);
                let x = probe(&mut rng, outer.center + dir * (outer.radius - r));
                let computed = outer.erode(r).map_or(false, |e| e.contains_point(&x));
                let brute = disk_lattice(x, r, N).all(|p| (p - outer.center).norm() <= outer.radius);
                (computed, brute, ((x - outer.center).norm() + r - outer.radius).abs())
            }
            2 => {
                let y = rng.gen_range(lo.y..hi.y);
                let x = probe(&mut rng, Vector2::new(hi.x - r, y));
                let b = Ball { center: x, radius: r };
                let computed = ball_in_box(&b, &bx);
                let brute = disk_lattice(x, r, N).all(|p| bx.contains_point(&p));
                let depth = (x.x - lo.x).min(hi.x - x.x).min(x.y - lo.y).min(hi.y - x.y);
                (computed, brute, (depth - r).abs())
            }
            3 => {
                let x = probe(&mut rng, outer.center + Vector2::new(0.0, outer.radius - r));
                let b = Ball { center: x, radius: r };
                let computed = ball_in_ball(&b, &outer);
                let brute = disk_lattice(x, r, N).all(|p| (p - outer.center).norm() <= outer.radius);
                (computed, brute, ((x - outer.center).norm() + r - outer.radius).abs())
            }
            _ => {
                let x = probe(&mut rng, outer.center + Vector2::new(outer.radius + r, 0.0));
                let b = Ball { center: x, radius: r };
                let computed = balls_disjoint(&b, &outer);
                let brute = disk_lattice(x, r, N).all(|p| (p - outer.center).norm() > outer.radius);
                (computed, brute, ((x - outer.center).norm() - r - outer.radius).abs())
            }
        };
        if computed != brute {
            disagreements += 1;
            if margin > cell {
                beyond_cell += 1;
            }
        }
    }
    Verdict {
        pass: beyond_cell == 0,
        detail: format!("500 cases, {disagreements} grid disagreements, {beyond_cell} beyond one cell"),
    }
}

// ---------------------------------------------------------------- 6

const ATOMS: [&str; 3] = ["a", "b", "c"];

fn random_literal(rng: &mut ChaCha8Rng, positive: f64) -> Literal {
    Literal {
        atom: ATOMS[rng.gen_range(0..ATOMS.len())].to_string(),
        positive: rng.gen_bool(positive),
    }
}

fn random_interval(rng: &mut ChaCha8Rng, min_width: i64) -> Interval {
    let lower = q(rng.gen_range(0..12), 2);
    let upper = if rng.gen_bool(0.2) {
        None
    } else {
        Some(lower + q(rng.gen_range(min_width..min_width + 11), 2))
    };
    Interval::new(lower, upper).unwrap()
}

/// `goal_bias` skews safety literals negative and goals positive, which
/// makes satisfiable tasks more common.
fn random_fragment(rng: &mut ChaCha8Rng, max_eventualities: usize, goal_bias: bool) -> Fragment {
    let (safe_p, goal_p, width) = if goal_bias { (0.1, 0.9, 4) } else { (0.6, 0.6, 1) };
    let mut conjuncts = Vec::new();
    let mut eventualities = 0;
    for _ in 0..rng.gen_range(1..=3) {
        let kind = if goal_bias {
            [0, 0, 0, 1, 1, 1, 1, 2, 2, 3][rng.gen_range(0..10)]
        } else {
            rng.gen_range(0..4)
        };
        if kind == 0 || eventualities >= max_eventualities {
            conjuncts.push(Conjunct::Safety {
                literal: random_literal(rng, safe_p),
            });
            continue;
        }
        eventualities += 1;
        conjuncts.push(match kind {
            1 => Conjunct::Eventually {
                interval: random_interval(rng, width),
                literal: random_literal(rng, goal_p),
            },
            2 => Conjunct::Until {
                interval: random_interval(rng, width),
                hold: random_literal(rng, safe_p),
                goal: random_literal(rng, goal_p),
            },
            _ => Conjunct::Next {
                interval: random_interval(rng, width),
                literal: random_literal(rng, goal_p),
            },
        });
    }
    let formula: MitlFormula = Fragment { conjuncts }.to_formula().unwrap();
    validate_fragment(&formula).unwrap()
}

fn random_letter(rng: &mut ChaCha8Rng) -> Letter {
    ATOMS
        .iter()
        .filter(|_| rng.gen_bool(0.4))
        .map(|s| s.to_string())
        .collect()
}

fn mitl_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = 0;
    let mut accepted = 0;
    for _ in 0..10_000 {
        let f = random_fragment(&mut rng, 3, false);
        let tba = build_tba(&f);
        let len = rng.gen_range(0..=8);
        let mut t = q(0, 1);
        let mut word = Vec::new();
        for i in 0..len {
            if i > 0 {
                t += q(rng.gen_range(0..9), rng.gen_range(1..=4));
            }
            word.push((random_letter(&mut rng), t));
        }
        let a = accepts(&tba, &word).unwrap();
        let b = brute_force_satisfies(&f, &word).unwrap();
        accepted += a as usize;
        if a != b {
            disagreements += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Verdict {
        pass: disagreements == 0 && elapsed <= 60.0,
        detail: format!("10000 pairs, {accepted} accepted, {disagreements} disagreements ({elapsed:.1} s)"),
    }
}

// ---------------------------------------------------------------- 7

fn random_wts(rng: &mut ChaCha8Rng) -> Wts {
    let n = rng.gen_range(2..=5);
    let states: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut transitions = Vec::new();
    for s in &states {
        for d in &states {
            if s != d && rng.gen_bool(0.7) {
                transitions.push(Transition {
                    source: s.clone(),
                    dest: d.clone(),
                    duration: q(rng.gen_range(2..=8), 2),
                    action: Action {
                        dest: d.clone(),
                        controller: "c".into(),
                    },
                });
            }
        }
    }
    // Like regions of interest: an unlabeled start, one atom elsewhere at most.
    let labels = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let letter: Letter = if i == 0 || rng.gen_bool(0.2) {
                Letter::new()
            } else {
                [ATOMS[rng.gen_range(0..ATOMS.len())].to_string()].into()
            };
            (s.clone(), letter)
        })
        .collect();
    Wts {
        states,
        initial: "s0".into(),
        transitions,
        labels,
        alphabet: ATOMS.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        controller: "c".into(),
    }
}

/// Minimum final stamp over every path whose stamps stay within `limit`.
fn brute_force_makespan(wts: &Wts, f: &Fragment, limit: Rational) -> Option<Rational> {
    fn go(wts: &Wts, f: &Fragment, limit: Rational, path: &mut Vec<(String, Rational)>, best: &mut Option<Rational>) {
        let word = timed_word_of(wts, path);
        if brute_force_satisfies(f, &word).unwrap() {
            let t = path.last().unwrap().1;
            if best.map_or(true, |b| t < b) {
                *best = Some(t);
            }
        }
        let (here, stamp) = path.last().unwrap().clone();
        for t in wts.successors(&here) {
            let next = stamp + t.duration;
            if next <= limit {
                path.push((t.dest.clone(), next));
                go(wts, f, limit, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    let mut path = vec![(wts.initial.clone(), q(0, 1))];
    go(wts, f, limit, &mut path, &mut best);
    best
}

fn synthesis_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut found = 0;
    let mut instances = 0;
    while instances < 200 {
        let wts = random_wts(&mut rng);
        let f = random_fragment(&mut rng, 2, true);
        // Exhaustive enumeration needs every eventuality to have a deadline.
        let bounded = f.conjuncts.iter().all(|c| !c.is_eventuality() || c.deadline().is_some());
        if !bounded {
            continue;
        }
        instances += 1;
        let tba = build_tba(&f);
        let horizon = horizon_bound(&f, &wts, &tba);
        let ours = product_search(&wts, &tba, &f, horizon).map(|p| p.makespan);
        let brute = brute_force_makespan(&wts, &f, horizon + wts.max_duration());
        found += ours.is_some() as usize;
        if ours != brute {
            mismatches += 1;
        }
    }
    Verdict {
        pass: mismatches == 0,
        detail: format!("200 instances, {found} with a plan, {mismatches} mismatches"),
    }
}

// ---------------------------------------------------------------- 8

fn nmpc_convergence(suite: &LegSuite) -> Verdict {
    let terminal = suite.setup.problem.terminal();
    let target = terminal.target;
    let m = suite.setup.problem.substeps();
    let leg_end = suite.nominal.duration_steps.map(|k| k * m);
    let inside: Vec<bool> = suite
        .nominal
        .states
        .iter()
        .map(|(p, v)| terminal.p_norm(&(p - target), v) <= terminal.epsilon)
        .collect();
    let entered = inside.iter().position(|&b| b);
    // The run continues through the verification tail after the test fires.
    let stays = entered.map_or(false, |i| inside[i..].iter().all(|&b| b));
    let costs: Vec<f64> = suite.nominal.solves.iter().map(|s| s.cost).collect();
    let first = suite.nominal.solves.iter().position(|s| s.feasible);
    let mut increases = 0;
    if let Some(f) = first {
        for w in costs[f..].windows(2) {
            if w[1] > w[0] * (1.0 + 1e-6) {
                increases += 1;
            }
        }
    }
    let dt = suite.setup.problem.h() / m as f64;
    Verdict {
        pass: entered.is_some() && stays && first.is_some() && increases == 0,
        detail: format!(
            "fires at t = {:?} s, enters the terminal set at t = {:?} s, stays through {:.2} s: {stays}, {} solves, {increases} cost increases",
            leg_end.map(|i| (i as f64 * dt * 100.0).round() / 100.0),
            entered.map(|i| (i as f64 * dt * 100.0).round() / 100.0),
            (inside.len() - 1) as f64 * dt,
            costs.len()
        ),
    }
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let scenario = Scenario::paper_s5();
    let design = scenario.design().expect("bundled scenario design");
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();

    let first = bundled_pipeline(&scenario, &design);
    let second = bundled_pipeline(&scenario, &design);
    let (c1, c9) = match (first, second) {
        (Ok((a, v)), Ok((b, _))) => {
            let same = a.wts_json == b.wts_json && a.plan_json == b.plan_json;
            (
                v,
                Verdict {
                    pass: same,
                    detail: format!(
                        "WTS JSON identical: {}, plan JSON identical: {}",
                        a.wts_json == b.wts_json,
                        a.plan_json == b.plan_json
                    ),
                },
            )
        }
        (Err(e), _) | (_, Err(e)) => (
            Verdict {
                pass: false,
                detail: e.clone(),
            },
            Verdict {
                pass: false,
                detail: e,
            },
        ),
    };
    verdicts.push((1, "bundled scenario end to end", c1));

    let suite = first_leg(&scenario);
    let (c2, c4) = monte_carlo(&suite);
    verdicts.push((2, "tube invariant, Monte Carlo", c2));
    verdicts.push((3, "gain formulas", gain_formulas()));
    verdicts.push((4, "steady-state bounds after firing", c4));
    verdicts.push((5, "geometry against grid oracle", geometry_oracle()));
    verdicts.push((6, "automaton against direct semantics", mitl_oracle()));
    verdicts.push((7, "synthesis optimality", synthesis_optimality()));
    verdicts.push((8, "nominal NMPC convergence", nmpc_convergence(&suite)));
    verdicts.push((9, "determinism", c9));

    let mut all = true;
    for (n, name, v) in &verdicts {
        all &= v.pass;
        println!(
            "criterion {n} [{name}]: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
