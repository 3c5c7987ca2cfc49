//! Global-best particle swarm optimization over a box.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::flock::{DynamicsParameters, FlockState};
use crate::geometry::Interval;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoParameters {
    pub particles: usize,
    pub max_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Wall-clock limit. Makes results timing dependent; off by default.
    pub time_budget: Option<Duration>,
    /// Stop as soon as the global best is at most this value.
    pub target_cost: Option<f64>,
}

impl Default for PsoParameters {
    fn default() -> Self {
        PsoParameters {
            particles: 30,
            max_iterations: 100,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            time_budget: None,
            target_cost: None,
        }
    }
}

impl PsoParameters {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid(format!("PSO needs at least 2 particles, got {}", self.particles)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("PSO needs at least one iteration"));
        }
        if !(0.0..=1.0).contains(&self.inertia) {
            return Err(Error::invalid(format!("inertia must lie in [0, 1], got {}", self.inertia)));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::invalid("PSO weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Swarm updates performed after the initial evaluation.
    pub iterations: usize,
    /// Global best after the initial evaluation and after each iteration.
    pub history: Vec<f64>,
}

pub fn pso_minimize<F, R>(objective: F, bounds: &[Interval], params: &PsoParameters, rng: &mut R) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    pso_minimize_seeded(objective, bounds, params, &[], rng)
}

/// Like [`pso_minimize`], but the first particles start at `seeds` (clipped
/// to the box) instead of random positions.
pub fn pso_minimize_seeded<F, R>(
    mut objective: F,
    bounds: &[Interval],
    params: &PsoParameters,
    seeds: &[Vec<f64>],
    rng: &mut R,
) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    params.validate()?;
    if let Some(b) = bounds.iter().find(|b| !b.is_valid()) {
        return Err(Error::invalid(format!("invalid bound [{}, {}]", b.lo, b.hi)));
    }
    if seeds.iter().any(|s| s.len() != bounds.len()) {
        return Err(Error::invalid("seed particle has the wrong dimension"));
    }
    let start = Instant::now();
    let dim = bounds.len();
    let p = params.particles;

    let mut pos = vec![0.0; p * dim];
    let mut vel = vec![0.0; p * dim];
    for k in 0..p {
        for (d, b) in bounds.iter().enumerate() {
            let x = match seeds.get(k) {
                Some(seed) => b.clamp(seed[d]),
                None => uniform(rng, b.lo, b.hi),
            };
            pos[k * dim + d] = x;
            let w = b.width();
            vel[k * dim + d] = uniform(rng, -w, w);
        }
    }

    let mut pbest_cost: Vec<f64> = (0..p).map(|k| objective(&pos[k * dim..(k + 1) * dim])).collect();
    let mut pbest = pos.clone();
    let mut g = argmin(&pbest_cost);
    let mut gbest = pbest[g * dim..(g + 1) * dim].to_vec();
    let mut gbest_cost = pbest_cost[g];
    let mut history = vec![gbest_cost];

    let done = |best: f64, start: &Instant| {
        params.target_cost.is_some_and(|t| best <= t)
            || params.time_budget.is_some_and(|budget| start.elapsed() >= budget)
    };

    let mut iterations = 0;
    while iterations < params.max_iterations && !done(gbest_cost, &start) {
        iterations += 1;
        for k in 0..p {
            let row = k * dim..(k + 1) * dim;
            for (d, b) in bounds.iter().enumerate() {
                let idx = k * dim + d;
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = params.inertia * vel[idx]
                    + params.cognitive * r1 * (pbest[idx] - pos[idx])
                    + params.social * r2 * (gbest[d] - pos[idx]);
                let x = pos[idx] + v;
                let clipped = b.clamp(x);
                // Absorbing walls: a particle that hits the box stops there.
                vel[idx] = if clipped == x { v } else { 0.0 };
                pos[idx] = clipped;
            }
            let c = objective(&pos[row.clone()]);
            if c < pbest_cost[k] {
                pbest_cost[k] = c;
                pbest[row.clone()].copy_from_slice(&pos[row]);
            }
        }
        g = argmin(&pbest_cost);
        if pbest_cost[g] < gbest_cost {
            gbest_cost = pbest_cost[g];
            gbest.copy_from_slice(&pbest[g * dim..(g + 1) * dim]);
        }
        history.push(gbest_cost);
    }

    Ok(PsoResult {
        best: gbest,
        best_cost: gbest_cost,
        iterations,
        history,
    })
}

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Box relaxation of the acceleration constraint for an `h`-step plan of the
/// `controlled` agents: every component within `±ρ·min(‖v_i‖, v_max)`.
///
/// Layout: step-major, then agent, then (x, y).
pub fn action_bounds(state: &FlockState, controlled: &[usize], h: usize, dyn_params: &DynamicsParameters) -> Vec<Interval> {
    let per_step: Vec<Interval> = controlled
        .iter()
        .flat_map(|&i| {
            let r = dyn_params.rho * state.velocity(i).norm().min(dyn_params.v_max);
            [Interval::new(-r, r); 2]
        })
        .collect();
    per_step.iter().copied().cycle().take(per_step.len() * h).collect()
}
