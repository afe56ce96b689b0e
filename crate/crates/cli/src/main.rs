mod logs;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tubenav::abstraction::{PairMode, Wts};
use tubenav::exact::{display_rational, to_f64};
use tubenav::navigator::prepare_leg;
use tubenav::pipeline::{self, DisturbanceChoice};
use tubenav::scenario::{load_scenario, Scenario};
use tubenav::synthesis::TimedPlan;

use crate::logs::{LegRecord, RunSummary};

#[derive(Parser)]
#[command(name = "tubenav", version, about = "Tube-based NMPC navigation under timed temporal-logic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the modelling assumptions and region spacing.
    Validate { scenario: PathBuf },
    /// Print gains, tightened sets and terminal ingredients for one leg.
    Design {
        scenario: PathBuf,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        dest: Option<String>,
    },
    /// Build the weighted transition system and save it as JSON.
    Abstract {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Pairs::All)]
        pairs: Pairs,
        #[arg(long, default_value = "wts.json")]
        out: PathBuf,
        /// Also save every attempted leg with its outcome.
        #[arg(long)]
        legs: Option<PathBuf>,
    },
    /// Search for a plan satisfying the formula.
    Synthesize {
        scenario: PathBuf,
        #[arg(long)]
        wts: PathBuf,
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
        /// Replaces the scenario's formula.
        #[arg(long)]
        formula: Option<String>,
        /// Write the task automaton as DOT.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Execute a plan and write trajectory logs.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Disturbance::Paper)]
        disturbance: Disturbance,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Aggregate a run directory into report.json and trajectory.csv.
    Report { rundir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pairs {
    Lazy,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Disturbance {
    Zero,
    Paper,
    Random,
}

/// A path, or the name of the bundled scenario.
fn scenario_from(path: &Path, formula: Option<&String>) -> Result<Scenario> {
    let mut s = if !path.exists() && path.as_os_str() == "paper_s5" {
        Scenario::paper_s5()
    } else {
        load_scenario(path)?
    };
    if let Some(f) = formula {
        s.formula = f.clone();
        s.validate()?;
    }
    Ok(s)
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn validate(path: &Path) -> Result<ExitCode> {
    let s = scenario_from(path, None)?;
    let design = s.design()?;
    let report = design.check_assumptions(&s);
    println!("{}", serde_json::to_string_pretty(&report)?);
    for note in &design.notes {
        println!("note: {note}");
    }
    if report.ok {
        println!("VALID");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("INVALID");
        Ok(ExitCode::from(1))
    }
}

fn design(path: &Path, source: Option<String>, dest: Option<String>) -> Result<ExitCode> {
    let s = scenario_from(path, None)?;
    let d = s.design()?;
    let ws = &d.workspace;
    let lookup = |id: &str| ws.index_of(id).ok_or_else(|| anyhow!("unknown region {id}"));
    let src = match source {
        Some(id) => lookup(&id)?,
        None => ws
            .region_containing_robot(&s.initial_state().0)
            .ok_or_else(|| anyhow!("initial position is not inside a region"))?,
    };
    let excluded = |i: usize| ws.regions[i].labels.iter().any(|l| s.abstraction.exclude_labels.contains(l));
    let dst = match dest {
        Some(id) => lookup(&id)?,
        None => (0..ws.regions.len())
            .find(|&i| i != src && !excluded(i))
            .ok_or_else(|| anyhow!("no destination region"))?,
    };
    let setup = prepare_leg(ws, &d.model, &d.gains, &d.config, &d.nav, src, dst)?;
    let out = serde_json::json!({
        "gains": d.gains,
        "leg": { "source": setup.source_id, "dest": setup.dest_id },
        "tightened_sets": setup.problem.sets(),
        "terminal": setup.problem.terminal(),
        "steady_state_radius": setup.steady_state_radius(),
        "steady_state_bounds": setup.steady_state_bounds(),
        "warnings": setup.warnings,
        "notes": d.notes,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn abstract_cmd(path: &Path, pairs: Pairs, out: &Path, legs: Option<PathBuf>) -> Result<ExitCode> {
    let s = scenario_from(path, None)?;
    let d = s.design()?;
    let mode = match pairs {
        Pairs::Lazy => PairMode::Lazy,
        Pairs::All => PairMode::All,
    };
    let build = pipeline::abstraction(&s, &d, mode)?;
    for w in &build.warnings {
        eprintln!("warning: {w}");
    }
    write_json(out, &build.wts.to_json())?;
    if let Some(p) = legs {
        write_json(&p, &serde_json::to_string_pretty(&build.legs)?)?;
    }
    let feasible = build.legs.iter().filter(|l| l.feasible).count();
    println!(
        "WTS: {} states, {} transitions ({} legs attempted, {} feasible) -> {}",
        build.wts.states.len(),
        build.wts.transitions.len(),
        build.legs.len(),
        feasible,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn synthesize(
    path: &Path,
    wts: &Path,
    out: &Path,
    formula: Option<String>,
    dot: Option<PathBuf>,
) -> Result<ExitCode> {
    let s = scenario_from(path, formula.as_ref())?;
    let text = fs::read_to_string(wts).with_context(|| format!("reading {}", wts.display()))?;
    let wts = Wts::from_json(&text).context("parsing WTS")?;
    if let Some(p) = dot {
        fs::write(&p, pipeline::task_automaton(&s)?.to_dot())?;
    }
    match pipeline::synthesize(&s, &wts)? {
        Some(plan) => {
            write_json(out, &plan.to_json())?;
            let route: Vec<String> = plan
                .run
                .iter()
                .map(|(r, t)| format!("{r}@{}", display_rational(t)))
                .collect();
            println!("PLAN {}", route.join(" -> "));
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("NO PLAN");
            Ok(ExitCode::from(2))
        }
    }
}

fn run(
    path: &Path,
    plan_path: &Path,
    seed: Option<u64>,
    disturbance: Disturbance,
    out: &Path,
    formula: Option<String>,
) -> Result<ExitCode> {
    let s = scenario_from(path, formula.as_ref())?;
    let d = s.design()?;
    let text = fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let plan = TimedPlan::from_json(&text).context("parsing plan")?;
    let seed = seed.unwrap_or(s.seed);
    let (choice, name) = match disturbance {
        Disturbance::Zero => (DisturbanceChoice::Zero, "zero"),
        Disturbance::Paper => (DisturbanceChoice::Paper, "paper"),
        Disturbance::Random => (DisturbanceChoice::Random, "random"),
    };
    let report = pipeline::execute(&s, &d, &plan, &choice.signal(&s, seed))?;
    fs::create_dir_all(out)?;
    let v_max = s.model.velocity_bound;
    let u_max = s.model.input_bound;
    let mut legs = Vec::new();
    for (i, r) in report.legs.iter().enumerate() {
        let file = format!("leg_{i:02}.csv");
        let rows = logs::leg_rows(i, r, d.gains.r_e, d.gains.r_v, v_max, u_max);
        logs::write_rows(&out.join(&file), &rows)?;
        legs.push(LegRecord {
            source: r.source.clone(),
            dest: r.dest.clone(),
            start_time: r.start_time,
            duration: r.duration,
            feasible: r.feasible,
            violations: r.violations.clone(),
            warnings: r.warnings.clone(),
            tube: r.tube,
            tail: r.tail,
            file,
        });
    }
    let verdict = if report.accepted { "SATISFIED" } else { "VIOLATED" };
    let summary = RunSummary {
        scenario: s.name.clone(),
        seed,
        disturbance: name.into(),
        verdict: verdict.into(),
        accepted: report.accepted,
        complete: report.complete,
        abort: report.abort.clone(),
        planned_run: plan.run.clone(),
        realized_run: report.realized_run.clone(),
        r_e: d.gains.r_e,
        r_v: d.gains.r_v,
        legs,
    };
    write_json(&out.join("run.json"), &serde_json::to_string_pretty(&summary)?)?;
    for (r, t) in &report.realized_run {
        println!("{:>6} s  {}", format!("{:.1}", to_f64(t)), r.as_deref().unwrap_or("-"));
    }
    if let Some(a) = &report.abort {
        println!("aborted: {a}");
    }
    println!("{verdict}");
    Ok(if report.accepted { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn report(dir: &Path) -> Result<ExitCode> {
    let r = logs::report(dir)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    if !r.consistent {
        bail!("logs disagree with the run summary");
    }
    Ok(if r.verdict == "SATISFIED" { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Design { scenario, source, dest } => design(&scenario, source, dest),
        Command::Abstract { scenario, pairs, out, legs } => abstract_cmd(&scenario, pairs, &out, legs),
        Command::Synthesize {
            scenario,
            wts,
            out,
            formula,
            dot,
        } => synthesize(&scenario, &wts, &out, formula, dot),
        Command::Run {
            scenario,
            plan,
            seed,
            disturbance,
            out,
            formula,
        } => run(&scenario, &plan, seed, disturbance, &out, formula),
        Command::Report { rundir } => report(&rundir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
