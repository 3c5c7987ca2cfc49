//! Adaptive-horizon model predictive control.
//!
//! Both controllers share one planner: for each candidate horizon `h` a PSO
//! "clone" searches over `h`-step acceleration plans for every agent of the
//! flock it is given, scoring a plan by the cost of the state it leads to (see [`plan_cost`]).
//! The shortest horizon whose best plan achieves the required decrease wins;
//! otherwise the cheapest plan does. Only the first step of the plan is used.
//!
//! The centralized controller (CAMPC) plans for the whole flock against the
//! global cost. The distributed one (DAMPC) lets each agent plan for its
//! 7-agent neighborhood against its local cost and keep its own first
//! acceleration.

use rand::Rng;
use rayon::prelude::*;

use crate::controller::{Controller, StepContext};
use crate::cost::{global_j, CostParameters};
use crate::error::{Error, Result};
use crate::flock::{
    clamp_acceleration, neighborhood, DynamicsParameters, FlockState, JointAction, NEIGHBORHOOD_SIZE,
};
use crate::geometry::Vec2;
use crate::pso::{action_bounds, pso_minimize_seeded, PsoParameters};
use crate::seed::{rng_for, tag};
use crate::trajectory::Trajectory;

/// Cost decrease a plan must achieve this step to be accepted: the remaining
/// distance to the threshold spread evenly over the remaining steps.
pub fn required_decrease(cost: f64, phi: f64, remaining_steps: usize) -> f64 {
    (cost - phi).max(0.0) / remaining_steps.max(1) as f64
}

/// Shared planner settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub pso: PsoParameters,
    pub dyn_params: DynamicsParameters,
    pub cost: CostParameters,
}

impl PlannerConfig {
    pub fn clone_count(&self) -> usize {
        self.horizon_max + 1 - self.horizon_min
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_min == 0 || self.horizon_min > self.horizon_max {
            return Err(Error::invalid(format!(
                "horizon range [{}, {}] must satisfy 1 ≤ min ≤ max",
                self.horizon_min, self.horizon_max
            )));
        }
        self.pso.validate()?;
        self.dyn_params.validate()?;
        self.cost.validate()
    }
}

/// Outcome of one adaptive-horizon planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// First-step (feasible) acceleration of every planned agent.
    pub first_step: Vec<Vec2>,
    /// Horizon of the winning clone.
    pub horizon: usize,
    /// Predicted cost at the end of the winning plan.
    pub predicted_cost: f64,
    /// Whether the winning clone met the required decrease.
    pub met_decrease: bool,
}

/// Rolls an `h`-step plan (step-major, agent, xy) forward through the
/// constrained dynamics and returns the final state.
pub fn rollout_plan(state: &FlockState, plan: &[f64], h: usize, dyn_params: &DynamicsParameters) -> FlockState {
    let n = state.len();
    debug_assert_eq!(plan.len(), 2 * n * h);
    let mut s = state.clone();
    let mut accel = vec![Vec2::ZERO; n];
    for t in 0..h {
        for (a, slot) in accel.iter_mut().enumerate() {
            let k = 2 * (t * n + a);
            *slot = clamp_acceleration(s.velocity(a), Vec2::new(plan[k], plan[k + 1]), dyn_params);
        }
        s.advance(&accel, dyn_params.dt);
    }
    s
}

/// Adaptive-horizon planning for every agent of `state` against its global
/// cost. Clone seeds are drawn up front and clones run shortest-first, so
/// stopping at the first clone that meets the required decrease returns
/// exactly what evaluating every clone would.
pub fn plan_adaptive<R: Rng + ?Sized>(
    state: &FlockState,
    cfg: &PlannerConfig,
    remaining_steps: usize,
    rng: &mut R,
) -> Result<Plan> {
    cfg.validate()?;
    let n = state.len();
    let current = global_j(state, &cfg.cost);
    // A plan ending at or below the threshold is always good enough.
    let level = (current - required_decrease(current, cfg.cost.phi, remaining_steps)).max(cfg.cost.phi);
    let controlled: Vec<usize> = (0..n).collect();
    let clone_seeds: Vec<u64> = (0..cfg.clone_count()).map(|_| rng.random()).collect();
    // Plans reaching past the end of the run are judged on states that never occur.
    let h_max = cfg.horizon_max.min(remaining_steps.max(cfg.horizon_min));

    // Matching every velocity to the mean freezes the current shape.
    let mean = state.velocities().iter().fold(Vec2::ZERO, |acc, &v| acc + v) * (1.0 / n as f64);
    let alignment: Vec<f64> = (0..n)
        .flat_map(|a| {
            let d = clamp_acceleration(state.velocity(a), mean - state.velocity(a), &cfg.dyn_params);
            [d.x, d.y]
        })
        .collect();

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for (h, &clone_seed) in (cfg.horizon_min..=h_max).zip(&clone_seeds) {
        let bounds = action_bounds(state, &controlled, h, &cfg.dyn_params);
        // The do-nothing plan is always a candidate, so a flock that already
        // holds its formation is not pushed out of it by a noisy search.
        let hold = vec![0.0; bounds.len()];
        let mut align = hold.clone();
        align[..2 * n].copy_from_slice(&alignment);
        let mut clone_rng = rng_for(clone_seed, &[tag::CLONE, h as u64]);
        let result = pso_minimize_seeded(
            |z| plan_cost(state, z, h, cfg),
            &bounds,
            &cfg.pso,
            &[hold, align],
            &mut clone_rng,
        )?;
        if result.best_cost <= level {
            return Ok(finish(state, &result.best, h, result.best_cost, true, &cfg.dyn_params));
        }
        if best.as_ref().is_none_or(|b| result.best_cost < b.0) {
            best = Some((result.best_cost, h, result.best));
        }
    }
    let (cost, h, z) = best.expect("at least one clone");
    Ok(finish(state, &z, h, cost, false, &cfg.dyn_params))
}

/// Cost of a plan: the state it leads to, coasted one more step. Positions
/// lag velocities by a step, so without the coast the final acceleration of
/// every plan would be judged on velocity matching alone.
pub fn plan_cost(state: &FlockState, plan: &[f64], h: usize, cfg: &PlannerConfig) -> f64 {
    let mut end = rollout_plan(state, plan, h, &cfg.dyn_params);
    let coast = vec![Vec2::ZERO; state.len()];
    end.advance(&coast, cfg.dyn_params.dt);
    global_j(&end, &cfg.cost)
}

fn finish(state: &FlockState, plan: &[f64], h: usize, cost: f64, met: bool, dyn_params: &DynamicsParameters) -> Plan {
    let first_step = (0..state.len())
        .map(|a| clamp_acceleration(state.velocity(a), Vec2::new(plan[2 * a], plan[2 * a + 1]), dyn_params))
        .collect();
    Plan {
        first_step,
        horizon: h,
        predicted_cost: cost,
        met_decrease: met,
    }
}

/// Centralized adaptive-horizon MPC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampcConfig {
    pub planner: PlannerConfig,
}

impl Default for CampcConfig {
    fn default() -> Self {
        CampcConfig {
            planner: PlannerConfig {
                horizon_min: 1,
                horizon_max: 5,
                pso: PsoParameters {
                    target_cost: Some(1e-4),
                    ..PsoParameters::default()
                },
                dyn_params: DynamicsParameters::default(),
                cost: CostParameters::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampcDecision {
    pub action: JointAction,
    pub horizon: usize,
    pub predicted_cost: f64,
}

pub fn campc_step<R: Rng + ?Sized>(
    state: &FlockState,
    cfg: &CampcConfig,
    remaining_steps: usize,
    rng: &mut R,
) -> Result<CampcDecision> {
    let plan = plan_adaptive(state, &cfg.planner, remaining_steps, rng)?;
    Ok(CampcDecision {
        action: JointAction::new(plan.first_step)?,
        horizon: plan.horizon,
        predicted_cost: plan.predicted_cost,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CampcController {
    pub cfg: CampcConfig,
}

impl Controller for CampcController {
    fn name(&self) -> &str {
        "campc"
    }

    fn act(&self, state: &FlockState, ctx: &StepContext) -> Result<JointAction> {
        let mut rng = rng_for(ctx.seed, &[tag::TEACHER]);
        campc_step(state, &self.cfg, ctx.remaining_steps(), &mut rng).map(|d| d.action)
    }
}

/// Closed-loop CAMPC run of `steps` steps.
pub fn campc_trajectory(initial: &FlockState, steps: usize, cfg: &CampcConfig, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::invalid("a trajectory needs at least one step"));
    }
    let sim = crate::controller::Simulator::new(cfg.planner.dyn_params, cfg.planner.cost);
    sim.run(&CampcController { cfg: *cfg }, initial, steps, seed)
}

/// Distributed adaptive-horizon MPC without consensus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampcConfig {
    pub neighborhood: usize,
    pub planner: PlannerConfig,
}

impl Default for DampcConfig {
    fn default() -> Self {
        DampcConfig {
            neighborhood: NEIGHBORHOOD_SIZE,
            planner: PlannerConfig {
                horizon_min: 1,
                horizon_max: 3,
                ..CampcConfig::default().planner
            },
        }
    }
}

impl DampcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighborhood != NEIGHBORHOOD_SIZE {
            return Err(Error::invalid(format!(
                "DAMPC uses a neighborhood of {NEIGHBORHOOD_SIZE}, got {}",
                self.neighborhood
            )));
        }
        if self.planner.horizon_max > 3 {
            return Err(Error::invalid("DAMPC horizons are limited to [1, 3]"));
        }
        self.planner.validate()
    }
}

/// Agent `i`'s own acceleration: it plans for its neighborhood against its
/// local cost using only sensed positions and velocities.
pub fn dampc_agent_action(state: &FlockState, i: usize, cfg: &DampcConfig, remaining_steps: usize, seed: u64) -> Result<Vec2> {
    let members = neighborhood(state, i, cfg.neighborhood)?;
    let local = state.subset(&members);
    let mut rng = rng_for(seed, &[tag::DAMPC, i as u64]);
    let plan = plan_adaptive(&local, &cfg.planner, remaining_steps, &mut rng)?;
    Ok(plan.first_step[0])
}

pub fn dampc_step(state: &FlockState, cfg: &DampcConfig, remaining_steps: usize, seed: u64) -> Result<JointAction> {
    cfg.validate()?;
    if state.len() < cfg.neighborhood {
        return Err(Error::invalid(format!(
            "DAMPC needs at least {} agents, got {}",
            cfg.neighborhood,
            state.len()
        )));
    }
    let accel = (0..state.len())
        .into_par_iter()
        .map(|i| dampc_agent_action(state, i, cfg, remaining_steps, seed))
        .collect::<Result<Vec<_>>>()?;
    JointAction::new(accel)
}

#[derive(Debug, Clone, Copy)]
pub struct DampcController {
    pub cfg: DampcConfig,
}

impl Controller for DampcController {
    fn name(&self) -> &str {
        "dampc"
    }

    fn act(&self, state: &FlockState, ctx: &StepContext) -> Result<JointAction> {
        dampc_step(state, &self.cfg, ctx.remaining_steps(), ctx.seed)
    }
}
