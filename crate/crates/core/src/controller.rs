//! The controller abstraction and closed-loop simulation.

use crate::cost::{global_j, CostParameters};
use crate::error::{Error, Result};
use crate::flock::{clamp_action, step_dynamics, DynamicsParameters, FlockState, JointAction};
use crate::seed::derive_seed;
use crate::trajectory::Trajectory;

/// What a controller knows about the run besides the sensed state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub step: usize,
    pub total_steps: usize,
    /// Seed for any randomness used at this step.
    pub seed: u64,
}

impl StepContext {
    pub fn remaining_steps(&self) -> usize {
        self.total_steps.saturating_sub(self.step).max(1)
    }
}

pub trait Controller: Sync {
    fn name(&self) -> &str;

    fn act(&self, state: &FlockState, ctx: &StepContext) -> Result<JointAction>;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn act(&self, state: &FlockState, ctx: &StepContext) -> Result<JointAction> {
        (**self).act(state, ctx)
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn act(&self, state: &FlockState, ctx: &StepContext) -> Result<JointAction> {
        (**self).act(state, ctx)
    }
}

/// Never accelerates.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn name(&self) -> &str {
        "zero"
    }

    fn act(&self, state: &FlockState, _ctx: &StepContext) -> Result<JointAction> {
        Ok(JointAction::zeros(state.len()))
    }
}

/// Plays back a recorded action sequence by step index.
#[derive(Debug, Clone)]
pub struct ReplayController {
    actions: Vec<JointAction>,
}

impl ReplayController {
    pub fn new(actions: Vec<JointAction>) -> Self {
        ReplayController { actions }
    }
}

impl Controller for ReplayController {
    fn name(&self) -> &str {
        "replay"
    }

    fn act(&self, _state: &FlockState, ctx: &StepContext) -> Result<JointAction> {
        self.actions
            .get(ctx.step)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no recorded action for step {}", ctx.step)))
    }
}

/// Closed-loop rollout settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulator {
    pub dyn_params: DynamicsParameters,
    pub cost: CostParameters,
    /// Project every controller output onto the feasible set before it is
    /// applied.
    pub clamp: bool,
}

impl Simulator {
    pub fn new(dyn_params: DynamicsParameters, cost: CostParameters) -> Self {
        Simulator {
            dyn_params,
            cost,
            clamp: true,
        }
    }

    pub fn unclamped(mut self) -> Self {
        self.clamp = false;
        self
    }

    /// Runs `controller` for `steps` steps from `initial`. The controller's
    /// seed at step `t` is derived from `(seed, t)`.
    pub fn run<C: Controller + ?Sized>(
        &self,
        controller: &C,
        initial: &FlockState,
        steps: usize,
        seed: u64,
    ) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(steps);
        let mut actions = Vec::with_capacity(steps);
        let mut costs = Vec::with_capacity(steps);
        let mut state = initial.clone();
        for step in 0..steps {
            let ctx = StepContext {
                step,
                total_steps: steps,
                seed: derive_seed(seed, &[step as u64]),
            };
            let mut action = controller.act(&state, &ctx)?;
            if self.clamp {
                action = clamp_action(&state, &action, &self.dyn_params)?;
            }
            let next = step_dynamics(&state, &action, &self.dyn_params)?;
            costs.push(global_j(&state, &self.cost));
            states.push(std::mem::replace(&mut state, next));
            actions.push(action);
        }
        let final_cost = global_j(&state, &self.cost);
        Ok(Trajectory {
            dt: self.dyn_params.dt,
            states,
            actions,
            costs,
            final_state: state,
            final_cost,
        })
    }
}
