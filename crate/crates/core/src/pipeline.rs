//! Scenario-level orchestration shared by the command line and the tests.

use thiserror::Error;

use crate::abstraction::{build_wts, AbstractionError, AbstractionOptions, PairMode, Wts, WtsBuild};
use crate::dynamics::DisturbanceSignal;
use crate::mitl::{build_tba, Tba};
use crate::scenario::{Design, Scenario, ScenarioError, DIM};
use crate::synthesis::{
    execute_plan, horizon_bound, product_search, verify_plan, ExecutionReport, Plant, SynthesisError,
    TimedPlan,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("plan was made for formula digest {plan}, scenario has {scenario}")]
    FormulaMismatch { plan: String, scenario: String },
    #[error("plan does not satisfy the formula on this WTS")]
    RejectedPlan,
}

/// Disturbance used when executing a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceChoice {
    Zero,
    /// `d̃ (cos t, sin t)`.
    Paper,
    /// Piecewise-constant uniform samples in the disturbance ball.
    Random,
}

impl DisturbanceChoice {
    pub fn signal(self, scenario: &Scenario, seed: u64) -> DisturbanceSignal {
        use crate::scenario::DisturbanceKind as K;
        let kind = match self {
            Self::Zero => K::Zero,
            Self::Paper => K::Sinusoidal,
            Self::Random => K::UniformRandom,
        };
        scenario.disturbance_signal(kind, seed)
    }
}

pub fn abstraction(scenario: &Scenario, design: &Design, pairs: PairMode) -> Result<WtsBuild, PipelineError> {
    let opts = AbstractionOptions {
        pairs,
        exclude_labels: scenario.abstraction.exclude_labels.iter().cloned().collect(),
    };
    Ok(build_wts(
        &design.workspace,
        &design.model,
        &design.gains,
        &design.config,
        &design.nav,
        &scenario.initial_state().0,
        &opts,
    )?)
}

pub fn task_automaton(scenario: &Scenario) -> Result<Tba, PipelineError> {
    Ok(build_tba(&scenario.fragment()?))
}

/// Minimum-makespan plan, verified before it is returned.
pub fn synthesize(scenario: &Scenario, wts: &Wts) -> Result<Option<TimedPlan>, PipelineError> {
    let fragment = scenario.fragment()?;
    let tba = build_tba(&fragment);
    let horizon = horizon_bound(&fragment, wts, &tba);
    match product_search(wts, &tba, &fragment, horizon) {
        Some(plan) => {
            if !verify_plan(&plan, wts, &tba)? {
                return Err(PipelineError::RejectedPlan);
            }
            Ok(Some(plan))
        }
        None => Ok(None),
    }
}

pub fn execute(
    scenario: &Scenario,
    design: &Design,
    plan: &TimedPlan,
    disturbance: &DisturbanceSignal,
) -> Result<ExecutionReport<DIM>, PipelineError> {
    let fragment = scenario.fragment()?;
    let digest = crate::synthesis::formula_digest(&fragment);
    if digest != plan.formula_digest {
        return Err(PipelineError::FormulaMismatch {
            plan: plan.formula_digest.clone(),
            scenario: digest,
        });
    }
    let tba = build_tba(&fragment);
    let plant = Plant {
        workspace: &design.workspace,
        model: &design.model,
        gains: &design.gains,
        config: &design.config,
        nav: &design.nav,
    };
    Ok(execute_plan(plan, plant, &tba, &scenario.initial_state(), disturbance)?)
}
