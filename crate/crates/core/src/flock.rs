//! Flock state, discrete-time dynamics, actuation constraints, neighborhoods
//! and the per-agent local view fed to the neural controller.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Interval, Vec2};

/// Neighborhood size used by both distributed controllers.
pub const NEIGHBORHOOD_SIZE: usize = 7;
/// Length of a [`LocalView`]: 7 agents × (x, y, vx, vy) plus the local cost.
pub const LOCAL_VIEW_LEN: usize = 4 * NEIGHBORHOOD_SIZE + 1;

/// Default ranges random initial states are drawn from.
pub const DEFAULT_POSITION_RANGE: Interval = Interval::new(0.0, 5.0);
pub const DEFAULT_VELOCITY_RANGE: Interval = Interval::new(0.25, 0.75);

/// Relative slack before a constraint is considered violated. Keeps
/// [`clamp_action`] idempotent under floating-point rounding.
const CONSTRAINT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsParameters {
    /// Duration of one time step.
    pub dt: f64,
    /// Speed bound.
    pub v_max: f64,
    /// Acceleration bound as a fraction of the current speed.
    pub rho: f64,
}

impl Default for DynamicsParameters {
    fn default() -> Self {
        DynamicsParameters {
            dt: 1.0,
            v_max: 2.0,
            rho: 0.9,
        }
    }
}

impl DynamicsParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::invalid(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Positions and velocities of `n` agents at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockState {
    positions: Vec<Vec2>,
    velocities: Vec<Vec2>,
}

impl FlockState {
    pub fn new(positions: Vec<Vec2>, velocities: Vec<Vec2>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                actual: velocities.len(),
            });
        }
        if positions.is_empty() {
            return Err(Error::invalid("a flock needs at least one agent"));
        }
        if !positions.iter().chain(&velocities).all(|v| v.is_finite()) {
            return Err(Error::invalid("flock state contains non-finite values"));
        }
        Ok(FlockState {
            positions,
            velocities,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    #[inline]
    pub fn velocities(&self) -> &[Vec2] {
        &self.velocities
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec2 {
        self.positions[i]
    }

    #[inline]
    pub fn velocity(&self, i: usize) -> Vec2 {
        self.velocities[i]
    }

    /// The sub-flock made of `members`, in the given order.
    pub fn subset(&self, members: &[usize]) -> FlockState {
        FlockState {
            positions: members.iter().map(|&i| self.positions[i]).collect(),
            velocities: members.iter().map(|&i| self.velocities[i]).collect(),
        }
    }

    pub fn translated(&self, offset: Vec2) -> FlockState {
        FlockState {
            positions: self.positions.iter().map(|&p| p + offset).collect(),
            velocities: self.velocities.clone(),
        }
    }

    /// Rotates positions and velocities about the origin.
    pub fn rotated(&self, angle: f64) -> FlockState {
        FlockState {
            positions: self.positions.iter().map(|p| p.rotated(angle)).collect(),
            velocities: self.velocities.iter().map(|v| v.rotated(angle)).collect(),
        }
    }

    /// Relabels agents: agent `k` of the result is agent `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<FlockState> {
        check_permutation(perm, self.len())?;
        Ok(self.subset(perm))
    }

    pub fn scaled_velocities(&self, c: f64) -> FlockState {
        FlockState {
            positions: self.positions.clone(),
            velocities: self.velocities.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn concat(&self, other: &FlockState) -> FlockState {
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut velocities = self.velocities.clone();
        velocities.extend_from_slice(&other.velocities);
        FlockState {
            positions,
            velocities,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Advances in place; `accels` must already have the right length.
    #[inline]
    pub(crate) fn advance(&mut self, accels: &[Vec2], dt: f64) {
        debug_assert_eq!(accels.len(), self.len());
        for ((x, v), &a) in self
            .positions
            .iter_mut()
            .zip(self.velocities.iter_mut())
            .zip(accels)
        {
            *x += *v * dt;
            *v += a * dt;
        }
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: perm.len(),
        });
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// One 2D acceleration per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    accelerations: Vec<Vec2>,
}

impl JointAction {
    pub fn new(accelerations: Vec<Vec2>) -> Result<Self> {
        if !accelerations.iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("action contains non-finite values"));
        }
        Ok(JointAction { accelerations })
    }

    pub fn zeros(n: usize) -> Self {
        JointAction {
            accelerations: vec![Vec2::ZERO; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.accelerations.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.accelerations.is_empty()
    }

    #[inline]
    pub fn accelerations(&self) -> &[Vec2] {
        &self.accelerations
    }

    pub fn max_magnitude(&self) -> f64 {
        self.accelerations.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<JointAction> {
        check_permutation(perm, self.len())?;
        Ok(JointAction {
            accelerations: perm.iter().map(|&i| self.accelerations[i]).collect(),
        })
    }
}

fn check_same_len(state: &FlockState, action: &JointAction) -> Result<()> {
    if state.len() != action.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            actual: action.len(),
        });
    }
    Ok(())
}

/// `x' = x + dt·v`, `v' = v + dt·a`, both from the pre-step state.
pub fn step_dynamics(
    state: &FlockState,
    action: &JointAction,
    params: &DynamicsParameters,
) -> Result<FlockState> {
    check_same_len(state, action)?;
    let mut next = state.clone();
    next.advance(&action.accelerations, params.dt);
    Ok(next)
}

/// Projects one agent's acceleration onto the feasible set, keeping its
/// direction: first `‖a‖ ≤ ρ‖v‖`, then `‖v + dt·a‖ ≤ v_max`.
///
/// An agent that is already faster than `v_max` may only slow down; its
/// acceleration is scaled to the point of closest approach to the bound.
pub fn clamp_acceleration(v: Vec2, a: Vec2, params: &DynamicsParameters) -> Vec2 {
    let bound = params.rho * v.norm();
    let mut a = a;
    let a_norm = a.norm();
    if a_norm > bound * (1.0 + CONSTRAINT_SLACK) {
        a = if bound > 0.0 {
            a * (bound / a_norm)
        } else {
            Vec2::ZERO
        };
    }

    let dt = params.dt;
    let v_max = params.v_max;
    if (v + a * dt).norm() <= v_max * (1.0 + CONSTRAINT_SLACK) {
        return a;
    }
    let aa = a.norm_sq();
    let va = v.dot(a);
    if v.norm() <= v_max {
        // Positive root of ‖v + t·a‖² = v_max², written to avoid cancellation.
        let c = v.norm_sq() - v_max * v_max;
        let disc = (va * va - aa * c).max(0.0);
        let t = if va > 0.0 {
            -c / (va + disc.sqrt())
        } else {
            (-va + disc.sqrt()) / aa
        };
        a * (t / dt).clamp(0.0, 1.0)
    } else if va >= 0.0 {
        Vec2::ZERO
    } else {
        let s = -va / (dt * aa);
        if s < 1.0 - CONSTRAINT_SLACK {
            a * s
        } else {
            a
        }
    }
}

/// Enforces the speed and acceleration constraints on every agent.
pub fn clamp_action(
    state: &FlockState,
    action: &JointAction,
    params: &DynamicsParameters,
) -> Result<JointAction> {
    check_same_len(state, action)?;
    Ok(JointAction {
        accelerations: state
            .velocities
            .iter()
            .zip(&action.accelerations)
            .map(|(&v, &a)| clamp_acceleration(v, a, params))
            .collect(),
    })
}

/// Agent `i` followed by its `l − 1` nearest flock-mates, nearest first.
/// Equal distances are ordered by agent index.
pub fn neighborhood(state: &FlockState, i: usize, l: usize) -> Result<Vec<usize>> {
    let n = state.len();
    if i >= n {
        return Err(Error::invalid(format!("agent {i} out of range for {n} agents")));
    }
    if l == 0 || l > n {
        return Err(Error::invalid(format!(
            "neighborhood size {l} must lie in 1..={n}"
        )));
    }
    let xi = state.positions[i];
    let mut others: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| ((state.positions[j] - xi).norm_sq(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(l);
    out.push(i);
    out.extend(others.into_iter().take(l - 1).map(|(_, j)| j));
    Ok(out)
}

/// An agent's 29-feature observation: for each of its 7 neighborhood members
/// (itself first, then by distance) the position relative to the agent and
/// the absolute velocity, followed by the agent's local cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalView {
    pub features: [f64; LOCAL_VIEW_LEN],
}

impl LocalView {
    pub fn local_cost(&self) -> f64 {
        self.features[LOCAL_VIEW_LEN - 1]
    }

    /// Relative position of the `k`-th encoded neighborhood member.
    pub fn relative_position(&self, k: usize) -> Vec2 {
        Vec2::new(self.features[4 * k], self.features[4 * k + 1])
    }

    pub fn velocity(&self, k: usize) -> Vec2 {
        Vec2::new(self.features[4 * k + 2], self.features[4 * k + 3])
    }
}

pub fn local_view(state: &FlockState, i: usize, local_cost: f64) -> Result<LocalView> {
    if state.len() < NEIGHBORHOOD_SIZE {
        return Err(Error::invalid(format!(
            "a local view needs at least {NEIGHBORHOOD_SIZE} agents, got {}",
            state.len()
        )));
    }
    let members = neighborhood(state, i, NEIGHBORHOOD_SIZE)?;
    Ok(local_view_of(state, &members, local_cost))
}

/// Builds the view from an already computed neighborhood (`members[0]` is the
/// observing agent).
pub(crate) fn local_view_of(state: &FlockState, members: &[usize], local_cost: f64) -> LocalView {
    let origin = state.positions[members[0]];
    let mut features = [0.0; LOCAL_VIEW_LEN];
    for (k, &j) in members.iter().enumerate() {
        let rel = state.positions[j] - origin;
        let v = state.velocities[j];
        features[4 * k..4 * k + 4].copy_from_slice(&[rel.x, rel.y, v.x, v.y]);
    }
    features[LOCAL_VIEW_LEN - 1] = local_cost;
    LocalView { features }
}

/// Draws every position component from `position_range` and every velocity
/// component from `velocity_range`, independently and uniformly.
pub fn sample_initial_state<R: Rng + ?Sized>(
    n: usize,
    position_range: Interval,
    velocity_range: Interval,
    rng: &mut R,
) -> Result<FlockState> {
    if n == 0 {
        return Err(Error::invalid("cannot sample an empty flock"));
    }
    for (name, r) in [("position", position_range), ("velocity", velocity_range)] {
        if !r.is_valid() {
            return Err(Error::invalid(format!(
                "empty {name} range [{}, {}]",
                r.lo, r.hi
            )));
        }
    }
    let mut draw = |r: Interval| {
        if r.lo == r.hi {
            r.lo
        } else {
            rng.random_range(r.lo..=r.hi)
        }
    };
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for _ in 0..n {
        positions.push(Vec2::new(draw(position_range), draw(position_range)));
        velocities.push(Vec2::new(draw(velocity_range), draw(velocity_range)));
    }
    FlockState::new(positions, velocities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;

    fn params() -> DynamicsParameters {
        DynamicsParameters::default()
    }

    fn single(x: Vec2, v: Vec2) -> FlockState {
        FlockState::new(vec![x], vec![v]).unwrap()
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let s = single(Vec2::ZERO, Vec2::ZERO);
        let next = step_dynamics(&s, &JointAction::zeros(1), &params()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn position_uses_old_velocity() {
        let s = single(Vec2::ZERO, Vec2::new(1.0, 0.0));
        let a = JointAction::new(vec![Vec2::new(0.0, 1.0)]).unwrap();
        let next = step_dynamics(&s, &a, &params()).unwrap();
        assert_eq!(next.position(0), Vec2::new(1.0, 0.0));
        assert_eq!(next.velocity(0), Vec2::new(1.0, 1.0));
    }

    #[test]
    fn three_steps_match_closed_form() {
        let mut rng = rng_for(11, &[]);
        let p = DynamicsParameters {
            dt: 0.7,
            ..params()
        };
        let s0 = sample_initial_state(5, Interval::new(-3.0, 3.0), Interval::new(-1.0, 1.0), &mut rng)
            .unwrap();
        let accel: Vec<Vec2> = (0..5)
            .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let a = JointAction::new(accel.clone()).unwrap();
        let mut s = s0.clone();
        for _ in 0..3 {
            s = step_dynamics(&s, &a, &p).unwrap();
        }
        for i in 0..5 {
            // x3 = x0 + 3·dt·v0 + dt²·(0 + 1 + 2)·a
            let expect = s0.position(i) + s0.velocity(i) * (3.0 * p.dt) + accel[i] * (p.dt * p.dt * 3.0);
            assert!((s.position(i) - expect).norm() < 1e-12);
            let vexp = s0.velocity(i) + accel[i] * (3.0 * p.dt);
            assert!((s.velocity(i) - vexp).norm() < 1e-12);
        }
    }

    #[test]
    fn mismatched_action_is_rejected() {
        let s = single(Vec2::ZERO, Vec2::X);
        let err = step_dynamics(&s, &JointAction::zeros(2), &params()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, actual: 2 }));
        assert!(clamp_action(&s, &JointAction::zeros(3), &params()).is_err());
    }

    #[test]
    fn clamp_examples() {
        let p = DynamicsParameters {
            rho: 0.5,
            ..params()
        };
        assert_eq!(clamp_acceleration(Vec2::X, Vec2::ZERO, &p), Vec2::ZERO);
        let a = clamp_acceleration(Vec2::X, Vec2::new(2.0, 0.0), &p);
        assert!((a - Vec2::new(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(clamp_acceleration(Vec2::ZERO, Vec2::new(0.3, -0.2), &p), Vec2::ZERO);
    }

    #[test]
    fn speed_bound_is_hit_exactly() {
        let p = params();
        let v = Vec2::new(1.8, 0.0);
        let a = clamp_acceleration(v, Vec2::new(1.0, 0.5), &p);
        assert!(((v + a * p.dt).norm() - p.v_max).abs() < 1e-12);
        assert!(a.cross(Vec2::new(1.0, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn neighborhood_examples() {
        let s = FlockState::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(3.0, 0.0)],
            vec![Vec2::X; 3],
        )
        .unwrap();
        assert_eq!(neighborhood(&s, 0, 1).unwrap(), vec![0]);
        assert_eq!(neighborhood(&s, 0, 2).unwrap(), vec![0, 1]);
        assert_eq!(neighborhood(&s, 2, 3).unwrap(), vec![2, 1, 0]);
        assert!(neighborhood(&s, 0, 0).is_err());
        assert!(neighborhood(&s, 0, 4).is_err());

        // Agents 2 and 5 equidistant from agent 0.
        let pos = vec![
            Vec2::ZERO,
            Vec2::new(10.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(10.0, 10.0),
            Vec2::new(-10.0, 0.0),
            Vec2::new(0.0, -1.0),
        ];
        let s = FlockState::new(pos, vec![Vec2::X; 6]).unwrap();
        assert_eq!(neighborhood(&s, 0, 3).unwrap(), vec![0, 2, 5]);
    }

    #[test]
    fn local_view_requires_seven_agents() {
        let mut rng = rng_for(3, &[]);
        let s = sample_initial_state(6, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng)
            .unwrap();
        assert!(local_view(&s, 0, 0.0).is_err());
    }

    #[test]
    fn local_view_layout() {
        let mut rng = rng_for(5, &[]);
        let s = sample_initial_state(7, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng)
            .unwrap();
        for i in 0..7 {
            let view = local_view(&s, i, 42.0).unwrap();
            assert_eq!(&view.features[..2], &[0.0, 0.0]);
            assert_eq!(view.local_cost(), 42.0);
            assert_eq!(view.velocity(0), s.velocity(i));
            let d: Vec<f64> = (0..7).map(|k| view.relative_position(k).norm()).collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]), "{d:?}");
        }
    }

    #[test]
    fn degenerate_ranges_are_exact() {
        let mut rng = rng_for(1, &[]);
        let s = sample_initial_state(4, Interval::new(5.0, 5.0), Interval::new(0.5, 0.5), &mut rng)
            .unwrap();
        assert!(s.positions().iter().all(|&p| p == Vec2::new(5.0, 5.0)));
        assert!(s.velocities().iter().all(|&v| v == Vec2::new(0.5, 0.5)));
        assert!(sample_initial_state(4, Interval::new(1.0, 0.0), Interval::new(0.5, 0.5), &mut rng).is_err());
        assert!(sample_initial_state(0, Interval::new(0.0, 1.0), Interval::new(0.5, 0.5), &mut rng).is_err());
    }

    #[test]
    fn default_sampling_ranges_and_means() {
        let pos = Interval::new(0.0, 5.0);
        let vel = Interval::new(0.25, 0.75);
        let mut rng = rng_for(2024, &[]);
        let s = sample_initial_state(10_000, pos, vel, &mut rng).unwrap();
        assert!(s.positions().iter().all(|p| pos.contains(p.x) && pos.contains(p.y)));
        assert!(s.velocities().iter().all(|v| vel.contains(v.x) && vel.contains(v.y)));
        let n = s.len() as f64;
        let checks: [(Interval, Box<dyn Fn(usize) -> f64>); 4] = [
            (pos, Box::new(|i| s.position(i).x)),
            (pos, Box::new(|i| s.position(i).y)),
            (vel, Box::new(|i| s.velocity(i).x)),
            (vel, Box::new(|i| s.velocity(i).y)),
        ];
        for (r, f) in checks.iter() {
            let mean = (0..s.len()).map(f).sum::<f64>() / n;
            let std_err = r.width() / 12f64.sqrt() / n.sqrt();
            assert!((mean - r.midpoint()).abs() < 3.0 * std_err);
        }
    }

    #[test]
    fn same_seed_same_state() {
        let a = sample_initial_state(7, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng_for(9, &[]))
            .unwrap();
        let b = sample_initial_state(7, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng_for(9, &[]))
            .unwrap();
        assert_eq!(a, b);
    }

    fn vec2() -> impl Strategy<Value = Vec2> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    fn flock(n: usize) -> impl Strategy<Value = FlockState> {
        (
            proptest::collection::vec(vec2(), n),
            proptest::collection::vec(vec2(), n),
        )
            .prop_map(|(p, v)| FlockState::new(p, v).unwrap())
    }

    proptest! {
        #[test]
        fn positions_ignore_the_action(s in flock(5), a in proptest::collection::vec(vec2(), 5)) {
            let p = params();
            let with = step_dynamics(&s, &JointAction::new(a).unwrap(), &p).unwrap();
            let without = step_dynamics(&s, &JointAction::zeros(5), &p).unwrap();
            prop_assert_eq!(with.positions(), without.positions());
        }

        #[test]
        fn clamp_is_idempotent_and_direction_preserving(v in vec2(), a in vec2()) {
            let p = params();
            let once = clamp_acceleration(v, a, &p);
            let twice = clamp_acceleration(v, once, &p);
            prop_assert_eq!(once, twice);
            // nonnegative multiple of the input
            prop_assert!(once.cross(a).abs() <= 1e-12 * (1.0 + a.norm_sq()));
            prop_assert!(once.dot(a) >= 0.0);
            prop_assert!(once.norm() <= p.rho * v.norm() * (1.0 + 1e-12) + 1e-300);
            if v.norm() <= p.v_max {
                prop_assert!((v + once * p.dt).norm() <= p.v_max + 1e-9);
            }
        }

        #[test]
        fn neighborhood_of_everyone_is_a_permutation(s in flock(6), i in 0usize..6) {
            let nb = neighborhood(&s, i, 6).unwrap();
            prop_assert_eq!(nb[0], i);
            let mut sorted = nb.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        }

        #[test]
        fn local_view_is_translation_invariant(s in flock(8), i in 0usize..8, dx in vec2()) {
            let a = local_view(&s, i, 1.0).unwrap();
            let b = local_view(&s.translated(dx), i, 1.0).unwrap();
            for k in 0..LOCAL_VIEW_LEN - 1 {
                prop_assert!((a.features[k] - b.features[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn clamped_random_controller_respects_speed_bound(seed in 0u64..1000) {
            let p = params();
            let mut rng = rng_for(seed, &[]);
            let mut s = sample_initial_state(6, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng).unwrap();
            for _ in 0..60 {
                let raw: Vec<Vec2> = (0..6)
                    .map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                    .collect();
                let a = clamp_action(&s, &JointAction::new(raw).unwrap(), &p).unwrap();
                s = step_dynamics(&s, &a, &p).unwrap();
                prop_assert!(s.max_speed() <= p.v_max + 1e-9);
            }
        }
    }
}
