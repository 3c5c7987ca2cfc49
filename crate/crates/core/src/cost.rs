//! V-formation fitness: clear view (CV), velocity matching (VM), upwash
//! benefit (UB) and their sum-of-squares combination.
//!
//! Every metric takes an explicit member set so the same code computes the
//! global cost (all agents) and an agent's local cost (its neighborhood).

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use log::trace;

use crate::error::{Error, Result};
use crate::flock::{neighborhood, FlockState};
use crate::geometry::Vec2;

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn diag(xx: f64, yy: f64) -> Self {
        Sym2 { xx, xy: 0.0, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        (d != 0.0).then(|| Sym2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        })
    }

    #[inline]
    pub fn quad_form(&self, z: Vec2) -> f64 {
        self.xx * z.x * z.x + 2.0 * self.xy * z.x * z.y + self.yy * z.y * z.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParameters {
    /// Full opening angle of each agent's forward vision cone, radians.
    pub theta: f64,
    /// Wing span.
    pub wing_span: f64,
    /// Upwash attenuation applied outside the inner wing band.
    pub alpha: f64,
    /// Relative `(|h|, |g|)` position of maximal upwash.
    pub mu1: Vec2,
    /// Shape matrix of the upwash Gaussian.
    pub sigma1: Sym2,
    /// A state is a V-formation when its cost is at most `phi`.
    pub phi: f64,
}

impl Default for CostParameters {
    fn default() -> Self {
        CostParameters::with_wing_span(1.0)
    }
}

impl CostParameters {
    pub fn with_wing_span(w: f64) -> Self {
        CostParameters {
            theta: FRAC_PI_4,
            wing_span: w,
            alpha: 1.0,
            mu1: Vec2::new((12.0 + PI) * w / 16.0, 1.0),
            sigma1: Sym2::diag(1.0, 4.0),
            phi: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 2.0 * PI) {
            return Err(Error::invalid(format!("theta must lie in (0, 2π), got {}", self.theta)));
        }
        if !(self.wing_span > 0.0 && self.wing_span.is_finite()) {
            return Err(Error::invalid(format!("wing span must be positive, got {}", self.wing_span)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !self.sigma1.is_positive_definite() {
            return Err(Error::invalid("sigma1 must be positive definite"));
        }
        if !self.mu1.is_finite() {
            return Err(Error::invalid("mu1 must be finite"));
        }
        if !(self.phi > 0.0) {
            return Err(Error::invalid(format!("phi must be positive, got {}", self.phi)));
        }
        Ok(())
    }

    /// Half-width of the inner wing band where upwash turns into downwash.
    pub fn inner_band(&self) -> f64 {
        (4.0 - PI) * self.wing_span / 8.0
    }

    /// Smooth sign function centred on the inner band edge.
    pub fn smooth_sign(&self, z: f64) -> f64 {
        libm::erf(2.0 * SQRT_2 * (z - self.inner_band()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub cv: f64,
    pub vm: f64,
    pub ub: f64,
    pub j: f64,
}

impl CostBreakdown {
    pub fn from_metrics(cv: f64, vm: f64, ub: f64) -> Self {
        CostBreakdown {
            cv,
            vm,
            ub,
            j: cv * cv + vm * vm + (ub - 1.0) * (ub - 1.0),
        }
    }
}

const AHEAD_TOLERANCE: f64 = 1e-9;

/// Direction an agent is facing; `+x` when it is not moving.
#[inline]
fn heading(v: Vec2) -> Vec2 {
    v.normalized().unwrap_or(Vec2::X)
}

/// Angle of `p` measured from `axis` (unit), in `(-π, π]`.
#[inline]
fn angle_from(axis: Vec2, p: Vec2) -> f64 {
    axis.cross(p).atan2(axis.dot(p))
}

/// Fraction of agent `i`'s vision cone blocked by the wings of the other
/// members. Each wing is a segment of length `w` centred on the agent and
/// perpendicular to its velocity.
pub fn blocked_fraction(state: &FlockState, i: usize, members: &[usize], params: &CostParameters) -> f64 {
    let mut spans = Vec::with_capacity(members.len() * 2);
    blocked_fraction_with(state, i, members, params, &mut spans)
}

fn blocked_fraction_with(
    state: &FlockState,
    i: usize,
    members: &[usize],
    params: &CostParameters,
    spans: &mut Vec<(f64, f64)>,
) -> f64 {
    let half = 0.5 * params.theta;
    let axis = heading(state.velocity(i));
    let xi = state.position(i);
    spans.clear();

    let mut push = |lo: f64, hi: f64| {
        let lo = lo.max(-half);
        let hi = hi.min(half);
        if hi > lo {
            spans.push((lo, hi));
        }
    };
    for &j in members {
        if j == i {
            continue;
        }
        let wing = heading(state.velocity(j)).perp() * (0.5 * params.wing_span);
        let rel = state.position(j) - xi;
        let a = angle_from(axis, rel + wing);
        let b = angle_from(axis, rel - wing);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if hi - lo <= PI {
            push(lo, hi);
        } else {
            // The segment straddles the backward ray.
            push(hi, PI);
            push(-PI, lo);
        }
    }
    if spans.is_empty() {
        return 0.0;
    }
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let (mut cur_lo, mut cur_hi) = spans[0];
    for &(lo, hi) in &spans[1..] {
        if lo > cur_hi {
            covered += cur_hi - cur_lo;
            cur_lo = lo;
            cur_hi = hi;
        } else {
            cur_hi = cur_hi.max(hi);
        }
    }
    covered += cur_hi - cur_lo;
    covered / params.theta
}

/// Sum over members of the blocked fraction of their vision cone, counting
/// only wings of other members.
pub fn clear_view(state: &FlockState, params: &CostParameters, members: &[usize]) -> f64 {
    let mut spans = Vec::with_capacity(members.len() * 2);
    members
        .iter()
        .map(|&i| blocked_fraction_with(state, i, members, params, &mut spans))
        .sum()
}

/// `Σ_{i>j} (‖v_i − v_j‖ / (‖v_i‖ + ‖v_j‖))²` over member pairs. A pair of
/// motionless agents contributes 0.
pub fn velocity_matching(state: &FlockState, members: &[usize]) -> f64 {
    let mut total = 0.0;
    for (a, &i) in members.iter().enumerate() {
        let vi = state.velocity(i);
        let ni = vi.norm();
        for &j in &members[..a] {
            let vj = state.velocity(j);
            let denom = ni + vj.norm();
            if denom == 0.0 {
                trace!("velocity matching: agents {i} and {j} both at rest");
                continue;
            }
            let r = (vi - vj).norm() / denom;
            total += r * r;
        }
    }
    total
}

/// Upwash benefit agent `i` receives from agent `j`.
pub fn upwash_benefit_pair(i: usize, j: usize, state: &FlockState, params: &CostParameters) -> f64 {
    let inv = params.sigma1.inverse().expect("sigma1 is positive definite");
    upwash_pair(i, j, state, params, &inv)
}

#[inline]
fn upwash_pair(i: usize, j: usize, state: &FlockState, params: &CostParameters, sigma_inv: &Sym2) -> f64 {
    let Some(forward) = state.velocity(i).normalized() else {
        trace!("upwash: agent {i} at rest has no wing axis");
        return 0.0;
    };
    let rel = state.position(j) - state.position(i);
    let g = rel.dot(forward);
    // Agents flying abreast (g = 0 up to rounding) give no upwash; without
    // the tolerance rotating a formation could flip them into the Gaussian.
    if g <= AHEAD_TOLERANCE * params.wing_span {
        return 0.0;
    }
    let h = rel.dot(forward.perp()).abs();
    let z = Vec2::new(h, g) - params.mu1;
    let gauss = (-0.5 * sigma_inv.quad_form(z)).exp();
    let s = params.smooth_sign(h);
    if h >= params.inner_band() {
        params.alpha * s * gauss
    } else {
        s * gauss
    }
}

/// Total upwash benefit of member `i` from the other members.
pub fn upwash_total(state: &FlockState, i: usize, params: &CostParameters, members: &[usize]) -> f64 {
    let inv = params.sigma1.inverse().expect("sigma1 is positive definite");
    members
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| upwash_pair(i, j, state, params, &inv))
        .sum()
}

/// `Σ_i (1 − min(UB_i, 1))` over members.
pub fn upwash_cost(state: &FlockState, params: &CostParameters, members: &[usize]) -> f64 {
    let inv = params.sigma1.inverse().expect("sigma1 is positive definite");
    members
        .iter()
        .map(|&i| {
            let ub: f64 = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| upwash_pair(i, j, state, params, &inv))
                .sum();
            1.0 - ub.min(1.0)
        })
        .sum()
}

/// All three metrics and the combined cost over `members`.
pub fn member_cost(state: &FlockState, params: &CostParameters, members: &[usize]) -> CostBreakdown {
    CostBreakdown::from_metrics(
        clear_view(state, params, members),
        velocity_matching(state, members),
        upwash_cost(state, params, members),
    )
}

pub fn global_cost(state: &FlockState, params: &CostParameters) -> CostBreakdown {
    let all: Vec<usize> = (0..state.len()).collect();
    member_cost(state, params, &all)
}

/// Shorthand for `global_cost(..).j`.
pub fn global_j(state: &FlockState, params: &CostParameters) -> f64 {
    global_cost(state, params).j
}

/// Cost restricted to agent `i`'s `l`-neighborhood.
pub fn local_cost_breakdown(
    state: &FlockState,
    i: usize,
    params: &CostParameters,
    l: usize,
) -> Result<CostBreakdown> {
    let members = neighborhood(state, i, l)?;
    Ok(member_cost(state, params, &members))
}

pub fn local_cost(state: &FlockState, i: usize, params: &CostParameters, l: usize) -> Result<f64> {
    local_cost_breakdown(state, i, params, l).map(|c| c.j)
}

/// A perfect V: leader at the origin, followers alternating left and right,
/// each displaced from the agent in front of it by `(±μ₁ₓ, −μ₁ᵧ)` in that
/// agent's (wing, heading) frame. All agents fly at `speed` along `heading`.
pub fn make_v_formation(n: usize, params: &CostParameters, heading: Vec2, speed: f64) -> Result<FlockState> {
    if n < 3 {
        return Err(Error::invalid(format!("a V-formation needs at least 3 agents, got {n}")));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::invalid(format!("speed must be positive, got {speed}")));
    }
    let forward = heading
        .normalized()
        .ok_or_else(|| Error::invalid("heading must be nonzero"))?;
    let wing = forward.perp();
    let mut positions = vec![Vec2::ZERO];
    for k in 1..n {
        let side = if k % 2 == 1 { 1.0 } else { -1.0 };
        let front = if k <= 2 { positions[0] } else { positions[k - 2] };
        positions.push(front + wing * (side * params.mu1.x) - forward * params.mu1.y);
    }
    FlockState::new(positions, vec![forward * speed; n])
}
