//! Runs every phase of a scenario plan over a shared training pool.

use crate::continual::phase::{run_phase, ContinualConfig, ContinualState, PhaseInput, PhaseResult};
use crate::error::{Error, Result};
use crate::scenegen::filter_labels;
use crate::splits::ScenarioPlan;
use crate::types::Dataset;

/// Runs phases `state.phases_done() + 1 ..= plan.num_phases()`. Each phase
/// trains on `train_pool` restricted to its own classes and evaluates on
/// `eval_pool` restricted to every class seen so far. `on_phase` sees the
/// state after each phase; its errors abort the run.
pub fn run_remaining_phases<E: From<Error>>(
    mut state: ContinualState,
    plan: &ScenarioPlan,
    train_pool: &Dataset,
    eval_pool: &Dataset,
    config: &ContinualConfig,
    mut on_phase: impl FnMut(&ContinualState, &PhaseResult) -> std::result::Result<(), E>,
) -> std::result::Result<(ContinualState, Vec<PhaseResult>), E> {
    let mut results = Vec::new();
    for t in state.phases_done() + 1..=plan.num_phases() {
        let classes = &plan.phases[t - 1];
        let train = filter_labels(train_pool, classes);
        let eval = filter_labels(eval_pool, &plan.seen_through(t));
        let input = PhaseInput {
            index: t,
            classes,
            train: &train,
            eval: &eval,
            splits: &plan.phases[..t],
        };
        let (next, result) = run_phase(state, input, config)?;
        on_phase(&next, &result)?;
        state = next;
        results.push(result);
    }
    Ok((state, results))
}

/// Convenience wrapper running the whole plan from scratch.
pub fn run_scenario(
    plan: &ScenarioPlan,
    train_pool: &Dataset,
    eval_pool: &Dataset,
    config: &ContinualConfig,
) -> Result<(ContinualState, Vec<PhaseResult>)> {
    if plan.num_phases() == 0 {
        return Err(Error::Config("scenario has no phases".into()));
    }
    run_remaining_phases(ContinualState::new(config), plan, train_pool, eval_pool, config, |_, _| {
        Ok::<(), Error>(())
    })
}
