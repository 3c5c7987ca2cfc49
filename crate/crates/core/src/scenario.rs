//! Configurations on which symmetric distributed controllers provably fail,
//! and a reference velocity-averaging controller that satisfies the
//! assumptions those arguments make.

use std::f64::consts::PI;

use crate::controller::{Controller, Simulator, StepContext};
use crate::cost::{make_v_formation, CostParameters};
use crate::error::{Error, Result};
use crate::flock::{neighborhood, FlockState, JointAction};
use crate::geometry::Vec2;
use crate::trajectory::Trajectory;

/// Two perfect Vs of `k` and `n − k` agents side by side, `separation` apart
/// along the wing axis. Rejected unless every agent's `k − 1` nearest
/// neighbors belong to its own group.
pub fn scenario_disconnected_vs(n: usize, k: usize, separation: f64, cost: &CostParameters) -> Result<FlockState> {
    if k < 3 || n < k + 3 {
        return Err(Error::invalid(format!("groups of {k} and {} agents cannot both form a V", n.saturating_sub(k))));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be positive"));
    }
    let left = make_v_formation(k, cost, Vec2::Y, 1.0)?;
    let right = make_v_formation(n - k, cost, Vec2::Y, 1.0)?.translated(Vec2::new(separation, 0.0));
    let state = left.concat(&right);
    for i in 0..n {
        let members = neighborhood(&state, i, k)?;
        let own = |j: usize| (j < k) == (i < k);
        if !members.iter().all(|&j| own(j)) {
            return Err(Error::invalid(format!(
                "separation {separation} too small: agent {i} sees the other group among its {} nearest neighbors",
                k - 1
            )));
        }
    }
    Ok(state)
}

/// A 3-agent V (`A` leading at `(0, a)`, `B` and `C` at `(∓b, 0)`) plus a
/// fourth agent `D` at `(0, −a)`, all flying `(0, 1)`.
pub fn scenario_diamond(a: f64, b: f64) -> Result<FlockState> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("diamond dimensions must be positive"));
    }
    FlockState::new(
        vec![Vec2::new(0.0, a), Vec2::new(-b, 0.0), Vec2::new(b, 0.0), Vec2::new(0.0, -a)],
        vec![Vec2::Y; 4],
    )
}

/// Eight agents evenly spaced on a circle of `radius`, agent `j` at angle
/// `2πj/8`, all moving radially outwards at `speed`.
pub fn scenario_circle8(radius: f64, speed: f64) -> Result<FlockState> {
    if !(radius > 0.0 && speed > 0.0) {
        return Err(Error::invalid("radius and speed must be positive"));
    }
    let dirs: Vec<Vec2> = (0..8)
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / 8.0;
            Vec2::new(angle.cos(), angle.sin())
        })
        .collect();
    FlockState::new(
        dirs.iter().map(|&d| d * radius).collect(),
        dirs.iter().map(|&d| d * speed).collect(),
    )
}

/// Mean velocity over `members`.
pub fn mean_velocity(state: &FlockState, members: &[usize]) -> Vec2 {
    members.iter().fold(Vec2::ZERO, |acc, &j| acc + state.velocity(j)) * (1.0 / members.len() as f64)
}

/// Steers each agent toward the mean velocity of its `neighborhood`-agent
/// neighborhood: `a_i = gain · (v̄ − v_i)`. It depends only on relative
/// quantities, keeps the heading of an agent already aligned with its
/// neighbors' mean, and leaves a velocity-matched flock alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingController {
    pub gain: f64,
    pub neighborhood: usize,
}

impl Controller for AveragingController {
    fn name(&self) -> &str {
        "averaging"
    }

    fn act(&self, state: &FlockState, _ctx: &StepContext) -> Result<JointAction> {
        let accel = (0..state.len())
            .map(|i| {
                let members = neighborhood(state, i, self.neighborhood)?;
                Ok((mean_velocity(state, &members) - state.velocity(i)) * self.gain)
            })
            .collect::<Result<Vec<_>>>()?;
        JointAction::new(accel)
    }
}

/// A named initial configuration with the neighborhood size its argument
/// uses. The expected failure is that the flock never reaches `J ≤ φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub state: FlockState,
    pub neighborhood: usize,
    /// Whether a controller respecting the scenario's assumptions should fail.
    pub expect_failure: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioVerdict {
    /// The global cost stayed above `φ` at every visited state.
    pub failure_observed: bool,
    pub min_cost: f64,
    pub trajectory: Trajectory,
}

pub fn run_scenario<C: Controller + ?Sized>(
    scenario: &Scenario,
    controller: &C,
    sim: &Simulator,
    steps: usize,
    seed: u64,
) -> Result<ScenarioVerdict> {
    let trajectory = sim.run(controller, &scenario.state, steps, seed)?;
    let trace = trajectory.cost_trace();
    let min_cost = trace.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ScenarioVerdict {
        failure_observed: trace.iter().all(|&j| j > sim.cost.phi),
        min_cost,
        trajectory,
    })
}

pub const SCENARIO_NAMES: [&str; 4] = ["disconnected-vs", "diamond", "circle8", "perfect-v"];

/// Scenarios by name, built with default dimensions.
pub fn scenario_by_name(name: &str, cost: &CostParameters) -> Result<Scenario> {
    let w = cost.wing_span;
    let (state, neighborhood, expect_failure) = match name {
        "disconnected-vs" => (scenario_disconnected_vs(14, 7, 100.0 * w, cost)?, 7, true),
        "diamond" => (scenario_diamond(1.0, 1.0)?, 2, true),
        "circle8" => (scenario_circle8(10.0 * w, 0.5)?, 3, true),
        "perfect-v" => (make_v_formation(7, cost, Vec2::Y, 1.0)?, 7, false),
        other => {
            return Err(Error::invalid(format!(
                "unknown scenario `{other}`; known: {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    let name = SCENARIO_NAMES.iter().find(|&&n| n == name).copied().unwrap();
    Ok(Scenario {
        name,
        state,
        neighborhood,
        expect_failure,
    })
}
