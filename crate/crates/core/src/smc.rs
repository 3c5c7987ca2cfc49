//! Statistical model checking with the additive (ε, δ) approximation: run
//! enough independent closed-loop trials that the sample means of the
//! success indicator and of the normalized convergence time are within ε
//! of their true values with probability at least 1 − δ.

use rayon::prelude::*;

use crate::controller::{Controller, Simulator};
use crate::error::{Error, Result};
use crate::flock::{sample_initial_state, DEFAULT_POSITION_RANGE, DEFAULT_VELOCITY_RANGE};
use crate::geometry::Interval;
use crate::seed::{derive_seed, rng_for, tag};

pub const BASE_AGENTS: usize = 7;
pub const BASE_STEPS: usize = 50;
pub const BASE_THRESHOLD: f64 = 1e-3;

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {x}")))
    }
}

/// `⌈4 ln(2/δ) / ε²⌉`.
pub fn sample_count(epsilon: f64, delta: f64) -> Result<u64> {
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    let n = (4.0 * (2.0 / delta).ln() / (epsilon * epsilon)).ceil();
    if !n.is_finite() || n > u64::MAX as f64 {
        return Err(Error::invalid(format!("sample count for ε={epsilon}, δ={delta} overflows")));
    }
    Ok(n as u64)
}

/// Steps and threshold grow linearly with flock size: `(n/7)·50` and `(n/7)·φ`.
pub fn scaled_steps(agents: usize) -> usize {
    (agents as f64 / BASE_AGENTS as f64 * BASE_STEPS as f64).round() as usize
}

pub fn scaled_threshold(agents: usize, phi: f64) -> f64 {
    agents as f64 / BASE_AGENTS as f64 * phi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub agents: usize,
    pub steps: usize,
    pub threshold: f64,
    pub position_range: Interval,
    pub velocity_range: Interval,
}

impl SmcConfig {
    /// Scaled horizon and threshold for `agents`, default initial ranges.
    pub fn for_agents(agents: usize, epsilon: f64, delta: f64) -> SmcConfig {
        SmcConfig {
            epsilon,
            delta,
            agents,
            steps: scaled_steps(agents),
            threshold: scaled_threshold(agents, BASE_THRESHOLD),
            position_range: DEFAULT_POSITION_RANGE,
            velocity_range: DEFAULT_VELOCITY_RANGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("epsilon", self.epsilon)?;
        check_unit("delta", self.delta)?;
        if self.agents == 0 || self.steps == 0 || !(self.threshold > 0.0) {
            return Err(Error::invalid("agents, steps and threshold must be positive"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> Result<u64> {
        sample_count(self.epsilon, self.delta)
    }
}

/// Outcome of one trial: success, and the step after which the cost stayed
/// at or below the threshold (`None` if it never settled).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmcSample {
    pub success: bool,
    /// `t*` over a run of `steps` steps; failures record `steps`.
    pub settle_step: usize,
    pub steps: usize,
}

impl SmcSample {
    /// Normalized convergence time `R = t*/steps ∈ [0, 1]`; 1 for failures.
    pub fn time(&self) -> f64 {
        self.settle_step as f64 / self.steps as f64
    }

    /// Classifies a cost trace of `steps + 1` entries (initial state through final state).
    pub fn from_trace(trace: &[f64], threshold: f64) -> SmcSample {
        let steps = trace.len().saturating_sub(1).max(1);
        let success = trace.last().is_some_and(|&j| j <= threshold);
        let settle_step = if success {
            sustained_convergence(trace, threshold).unwrap_or(steps)
        } else {
            steps
        };
        SmcSample {
            success,
            settle_step,
            steps,
        }
    }
}

/// First index at which the cost is at or below `threshold`.
pub fn first_passage(trace: &[f64], threshold: f64) -> Option<usize> {
    trace.iter().position(|&j| j <= threshold)
}

/// First index from which the cost stays at or below `threshold` to the end.
pub fn sustained_convergence(trace: &[f64], threshold: f64) -> Option<usize> {
    let above = trace.iter().rposition(|&j| j > threshold);
    match above {
        None if trace.is_empty() => None,
        None => Some(0),
        Some(t) if t + 1 < trace.len() => Some(t + 1),
        Some(_) => None,
    }
}

/// Sample means over `samples` trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcEstimate {
    pub samples: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub convergence_time: f64,
}

impl SmcEstimate {
    fn from_samples(samples: &[SmcSample]) -> SmcEstimate {
        let n = samples.len() as u64;
        let successes = samples.iter().filter(|s| s.success).count() as u64;
        // R = t*/steps with a common denominator, so summing numerators keeps
        // the mean exact and independent of trial order.
        let steps = samples.first().map_or(1, |s| s.steps);
        let time = if samples.iter().all(|s| s.steps == steps) {
            samples.iter().map(|s| s.settle_step as u64).sum::<u64>() as f64 / (steps as f64 * n.max(1) as f64)
        } else {
            samples.iter().map(SmcSample::time).sum::<f64>() / n.max(1) as f64
        };
        SmcEstimate {
            samples: n,
            successes,
            success_rate: successes as f64 / n.max(1) as f64,
            convergence_time: time,
        }
    }
}

/// Runs `trials` independent trials in parallel. Trial `i` receives seed
/// `derive_seed(seed, [SMC, i])`.
pub fn smc_estimate_with<F>(trials: u64, seed: u64, trial: F) -> Result<SmcEstimate>
where
    F: Fn(u64) -> Result<SmcSample> + Sync,
{
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let samples = (0..trials)
        .into_par_iter()
        .map(|i| trial(derive_seed(seed, &[tag::SMC, i])))
        .collect::<Result<Vec<_>>>()?;
    Ok(SmcEstimate::from_samples(&samples))
}

/// One closed-loop run from a freshly sampled initial state.
pub fn run_trial<C: Controller + ?Sized>(
    controller: &C,
    sim: &Simulator,
    cfg: &SmcConfig,
    trial_seed: u64,
) -> Result<SmcSample> {
    let initial = sample_initial_state(
        cfg.agents,
        cfg.position_range,
        cfg.velocity_range,
        &mut rng_for(trial_seed, &[tag::INITIAL_STATE]),
    )?;
    let traj = sim.run(controller, &initial, cfg.steps, derive_seed(trial_seed, &[tag::EVAL]))?;
    Ok(SmcSample::from_trace(&traj.cost_trace(), cfg.threshold))
}

/// The full scheme: `sample_count(ε, δ)` trials of `controller`.
pub fn smc_estimate<C: Controller + ?Sized>(
    controller: &C,
    sim: &Simulator,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<SmcEstimate> {
    cfg.validate()?;
    smc_estimate_with(cfg.sample_count()?, seed, |s| run_trial(controller, sim, cfg, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ZeroController;
    use crate::cost::{make_v_formation, CostParameters};
    use crate::flock::DynamicsParameters;
    use crate::geometry::Vec2;
    use num_bigint::{BigInt, BigUint};
    use proptest::prelude::*;
    use rand::Rng;

    const PREC: u64 = 320;

    /// `atanh(num/den)` scaled by `2^PREC`, for `0 ≤ num/den ≤ 1/3`.
    fn atanh_fixed(num: &BigInt, den: &BigInt) -> BigInt {
        let one = BigInt::from(1u8) << PREC;
        let mut power = (&one * num) / den;
        let z2_num = num * num;
        let z2_den = den * den;
        let mut sum = BigInt::from(0u8);
        let mut k = 0u32;
        while power != BigInt::from(0u8) {
            sum += &power / BigInt::from(2 * k + 1);
            power = (power * &z2_num) / &z2_den;
            k += 1;
        }
        sum
    }

    fn ln2_fixed() -> BigInt {
        atanh_fixed(&BigInt::from(1u8), &BigInt::from(3u8)) * 2
    }

    /// `ln(m)` for a positive integer `m`, scaled by `2^PREC`.
    fn ln_int_fixed(m: u64) -> BigInt {
        let k = 63 - m.leading_zeros() as u64;
        let base = BigInt::from(1u64) << k;
        let m = BigInt::from(m);
        let frac = atanh_fixed(&(&m - &base), &(&m + &base)) * 2;
        ln2_fixed() * BigInt::from(k) + frac
    }

    fn decode(x: f64) -> (u64, i64) {
        // x = mant · 2^exp exactly.
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let mant = bits & ((1u64 << 52) - 1);
        assert!(exp > 0, "test inputs are normal numbers");
        (mant | (1u64 << 52), exp - 1075)
    }

    /// Exact `⌈4 ln(2/δ)/ε²⌉`, or `None` when the value is too close to an
    /// integer for the comparison to be meaningful in double precision.
    fn exact_count(epsilon: f64, delta: f64) -> Option<u64> {
        let (md, ed) = decode(delta);
        let (me, ee) = decode(epsilon);
        // ln(2/δ) = (1 − e_δ)·ln 2 − ln m_δ
        let ln = ln2_fixed() * BigInt::from(1 - ed) - ln_int_fixed(md);
        // 1/ε² = 2^(−2 e_ε) / m_ε²; e_ε is negative for ε < 1.
        let shift = u64::try_from(-2 * ee).unwrap();
        let value: BigInt = ((ln * 4) << shift) / (BigInt::from(me) * BigInt::from(me));
        let value: BigUint = value.to_biguint().expect("positive");
        let whole = &value >> PREC;
        let frac = &value - (&whole << PREC);
        let margin = BigUint::from(1u8) << (PREC - 24);
        if frac < margin || frac > (BigUint::from(1u8) << PREC) - margin {
            return None;
        }
        let whole: u64 = whole.try_into().unwrap();
        Some(whole + 1)
    }

    #[test]
    fn sample_counts() {
        assert_eq!(sample_count(0.01, 0.0001).unwrap(), 396_140);
        assert_eq!(sample_count(0.1, 0.05).unwrap(), 1476);
        assert_eq!(exact_count(0.01, 0.0001), Some(396_140));
        assert!(sample_count(0.0, 0.1).is_err());
        assert!(sample_count(0.1, 1.0).is_err());
        assert!(sample_count(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn halving_epsilon_quadruples_raw_count() {
        let raw = |e: f64, d: f64| 4.0 * (2.0 / d).ln() / (e * e);
        for (e, d) in [(0.2, 0.01), (0.05, 0.3), (0.013, 1e-6)] {
            assert!((raw(e / 2.0, d) / raw(e, d) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_classification() {
        let below = |from: usize, until: usize| -> Vec<f64> {
            (0..=50).map(|t| if t >= from && t < until { 1e-4 } else { 1.0 }).collect()
        };
        let s = SmcSample::from_trace(&below(10, 51), 1e-3);
        assert!(s.success);
        assert_eq!(s.time(), 0.2);
        assert_eq!(first_passage(&below(10, 51), 1e-3), Some(10));

        let s = SmcSample::from_trace(&below(10, 30), 1e-3);
        assert!(!s.success);
        assert_eq!(s.time(), 1.0);
        assert_eq!(first_passage(&below(10, 30), 1e-3), Some(10));
        assert_eq!(sustained_convergence(&below(10, 30), 1e-3), None);

        let s = SmcSample::from_trace(&below(0, 51), 1e-3);
        assert!(s.success);
        assert_eq!(s.time(), 0.0);

        // Settling only on the very last state: a success whose normalized
        // time is already the ceiling.
        let s = SmcSample::from_trace(&below(50, 51), 1e-3);
        assert!(s.success);
        assert_eq!(s.time(), 1.0);
    }

    #[test]
    fn perfect_v_with_zero_controller_converges_immediately() {
        let cost = CostParameters::default();
        let v = make_v_formation(7, &cost, Vec2::new(0.3, 0.4), 0.5).unwrap();
        let sim = Simulator::new(DynamicsParameters::default(), cost);
        let traj = sim.run(&ZeroController, &v, 50, 1).unwrap();
        let s = SmcSample::from_trace(&traj.cost_trace(), 1e-3);
        assert!(s.success);
        assert_eq!(s.time(), 0.0);
    }

    #[test]
    fn always_successful_trials() {
        let est = smc_estimate_with(1000, 3, |_| {
            Ok(SmcSample {
                success: true,
                settle_step: 0,
                steps: 50,
            })
        })
        .unwrap();
        assert_eq!(est.success_rate, 1.0);
        assert_eq!(est.convergence_time, 0.0);
    }

    #[test]
    fn bernoulli_stub_is_estimated_within_epsilon() {
        let (eps, delta) = (0.05, 0.01);
        let n = sample_count(eps, delta).unwrap();
        let bernoulli = |seed: u64| {
            let success = rng_for(seed, &[]).random_bool(0.9);
            Ok(SmcSample {
                success,
                settle_step: if success { 10 } else { 50 },
                steps: 50,
            })
        };
        let mut misses = 0;
        for master in 0..20 {
            let est = smc_estimate_with(n, master, bernoulli).unwrap();
            if (est.success_rate - 0.9).abs() > eps {
                misses += 1;
            }
        }
        assert_eq!(misses, 0);
    }

    #[test]
    fn estimate_ignores_trial_order() {
        let samples: Vec<SmcSample> = (0..997)
            .map(|i| SmcSample {
                success: i % 3 != 0,
                settle_step: if i % 3 != 0 { (i * 7) % 50 } else { 50 },
                steps: 50,
            })
            .collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let mut shuffled = samples.clone();
        shuffled.sort_by_key(|s| (s.settle_step * 31) % 17);
        let a = SmcEstimate::from_samples(&samples);
        assert_eq!(a, SmcEstimate::from_samples(&reversed));
        assert_eq!(a, SmcEstimate::from_samples(&shuffled));
    }

    #[test]
    fn scaled_settings() {
        assert_eq!(scaled_steps(7), 50);
        assert_eq!(scaled_steps(14), 100);
        assert!((scaled_threshold(10, 1e-3) - 10.0 / 7.0 * 1e-3).abs() < 1e-18);
        let cfg = SmcConfig::for_agents(10, 0.01, 1e-4);
        assert_eq!(cfg.steps, 71);
        assert_eq!(cfg.sample_count().unwrap(), 396_140);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn sample_count_matches_high_precision(eps in 0.002f64..0.999, delta in 1e-9f64..0.999) {
            let exact = exact_count(eps, delta);
            prop_assume!(exact.is_some());
            prop_assert_eq!(sample_count(eps, delta).unwrap(), exact.unwrap());
        }

        #[test]
        fn classification_is_consistent(trace in prop::collection::vec(prop_oneof![Just(1e-5), Just(0.5), 0.0f64..2e-3], 2..60)) {
            let s = SmcSample::from_trace(&trace, 1e-3);
            prop_assert!((0.0..=1.0).contains(&s.time()));
            if !s.success {
                prop_assert_eq!(s.time(), 1.0);
            }
            let last_only = trace.iter().rev().nth(1).is_some_and(|&j| j > 1e-3);
            if !last_only {
                prop_assert_eq!(s.success, s.time() < 1.0);
            }
        }
    }
}
