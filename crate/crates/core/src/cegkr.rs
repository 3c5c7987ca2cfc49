//! Counterexample-guided retraining of the neural controller.
//!
//! Each round tests the current network on a fresh batch of random initial
//! states. The first `k` states of every failed run are handed to the
//! centralized teacher, whose successful trajectories become new training
//! data, and the network is retrained from scratch on everything gathered so
//! far. Rounds continue while the success rate improves.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::controller::{Controller, Simulator};
use crate::error::{Error, Result};
use crate::flock::{sample_initial_state, FlockState, DEFAULT_POSITION_RANGE, DEFAULT_VELOCITY_RANGE};
use crate::geometry::Interval;
use crate::mpc::{campc_trajectory, CampcConfig};
use crate::nn::{extract_samples, train, DncController, MlpModel, TrainConfig, TrainingSample};
use crate::seed::{derive_seed, rng_for, tag};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CegkrConfig {
    /// Number of leading states of each counterexample that are re-planned.
    pub k: usize,
    pub test_batch: usize,
    pub agents: usize,
    pub steps: usize,
    pub threshold: f64,
    pub position_range: Interval,
    pub velocity_range: Interval,
    pub teacher: CampcConfig,
    pub train: TrainConfig,
    /// Another round runs only if the success rate rose by more than this.
    pub min_improvement: f64,
    pub max_rounds: usize,
}

impl Default for CegkrConfig {
    fn default() -> Self {
        CegkrConfig {
            k: 10,
            test_batch: 500,
            agents: 7,
            steps: 50,
            threshold: 1e-3,
            position_range: DEFAULT_POSITION_RANGE,
            velocity_range: DEFAULT_VELOCITY_RANGE,
            teacher: CampcConfig::default(),
            train: TrainConfig::default(),
            min_improvement: 0.0,
            max_rounds: 10,
        }
    }
}

impl CegkrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.steps {
            return Err(Error::invalid(format!("cutoff k = {} must lie in 1..={}", self.k, self.steps)));
        }
        if self.test_batch == 0 || self.agents == 0 || self.max_rounds == 0 {
            return Err(Error::invalid("test batch, agent count and round cap must be positive"));
        }
        if !(self.threshold > 0.0) || !(self.min_improvement >= 0.0) {
            return Err(Error::invalid("threshold must be positive and minimum improvement nonnegative"));
        }
        self.train.validate()
    }

    fn simulator(&self) -> Simulator {
        Simulator::new(self.teacher.planner.dyn_params, self.teacher.planner.cost)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub success_rate: f64,
    pub failures: Vec<Trajectory>,
    pub final_costs: Vec<f64>,
    pub median_final_cost: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// `count` random initial states; state `i` depends only on `seed` and `i`.
pub fn random_states(count: usize, agents: usize, positions: Interval, velocities: Interval, seed: u64) -> Result<Vec<FlockState>> {
    (0..count)
        .map(|i| sample_initial_state(agents, positions, velocities, &mut rng_for(seed, &[tag::INITIAL_STATE, i as u64])))
        .collect()
}

/// Closed-loop runs from each of `initials`; success means the final global
/// cost is at most `threshold`.
pub fn evaluate_on<C: Controller + ?Sized>(
    controller: &C,
    sim: &Simulator,
    initials: &[FlockState],
    steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<Evaluation> {
    if initials.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let runs = initials
        .par_iter()
        .enumerate()
        .map(|(i, s)| sim.run(controller, s, steps, derive_seed(seed, &[tag::EVAL, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let final_costs: Vec<f64> = runs.iter().map(|t| t.final_cost).collect();
    let failures: Vec<Trajectory> = runs.into_iter().filter(|t| !t.succeeded(threshold)).collect();
    Ok(Evaluation {
        success_rate: 1.0 - failures.len() as f64 / initials.len() as f64,
        median_final_cost: median(&final_costs),
        final_costs,
        failures,
    })
}

/// Tests `model` on `cfg.test_batch` fresh random states.
pub fn evaluate_controller(model: &MlpModel, cfg: &CegkrConfig, seed: u64) -> Result<Evaluation> {
    cfg.validate()?;
    let initials = random_states(cfg.test_batch, cfg.agents, cfg.position_range, cfg.velocity_range, seed)?;
    let ctl = DncController {
        model: model.clone(),
        cost: cfg.teacher.planner.cost,
        dyn_params: cfg.teacher.planner.dyn_params,
    };
    evaluate_on(&ctl, &cfg.simulator(), &initials, cfg.steps, cfg.threshold, seed)
}

/// The first `k` states of every failure, in order.
pub fn harvest_retraining_states(failures: &[Trajectory], k: usize) -> Result<Vec<FlockState>> {
    let mut out = Vec::with_capacity(failures.len() * k);
    for (i, t) in failures.iter().enumerate() {
        if k > t.len() {
            return Err(Error::invalid(format!("cutoff {k} exceeds length {} of failure {i}", t.len())));
        }
        out.extend(t.states[..k].iter().cloned());
    }
    Ok(out)
}

/// Teacher runs from labelled initial states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherData {
    pub samples: Vec<TrainingSample>,
    pub kept: usize,
    /// Indices of initial states from which the teacher itself failed.
    pub dropped: Vec<usize>,
}

/// Full teacher runs, one per initial state.
pub fn teacher_runs(initials: &[FlockState], cfg: &CegkrConfig, seed: u64) -> Result<Vec<Trajectory>> {
    initials
        .par_iter()
        .enumerate()
        .map(|(i, s)| campc_trajectory(s, cfg.steps, &cfg.teacher, derive_seed(seed, &[tag::TEACHER, i as u64])))
        .collect()
}

/// Samples of the successful runs only.
pub fn teacher_samples(runs: &[Trajectory], cfg: &CegkrConfig) -> Result<TeacherData> {
    let mut data = TeacherData::default();
    for (i, t) in runs.iter().enumerate() {
        if t.succeeded(cfg.threshold) {
            data.samples.extend(extract_samples(t, &cfg.teacher.planner.cost)?);
            data.kept += 1;
        } else {
            data.dropped.push(i);
        }
    }
    if !data.dropped.is_empty() {
        log::info!("teacher failed from {} of {} states; their runs are dropped", data.dropped.len(), runs.len());
    }
    Ok(data)
}

pub fn teacher_data(initials: &[FlockState], cfg: &CegkrConfig, seed: u64) -> Result<TeacherData> {
    teacher_samples(&teacher_runs(initials, cfg, seed)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub success_rate: f64,
    pub failed: usize,
    pub median_final_cost: f64,
    /// `f·k` states handed to the teacher after this round.
    pub harvested_states: usize,
    /// `f·n·k`: one sample per agent per harvested state.
    pub guided_samples: usize,
    /// Samples actually added: 50·n per retained teacher run.
    pub new_samples: usize,
    pub teacher_dropped: usize,
    /// Size of the data set the next model is trained on.
    pub total_samples: usize,
}

#[derive(Debug, Clone)]
pub struct CegkrOutcome {
    /// Model of the round with the highest success rate (earliest on ties).
    pub model: MlpModel,
    pub best_round: usize,
    pub reports: Vec<RoundReport>,
    /// Every model tested, by round.
    pub models: Vec<MlpModel>,
}

/// `f·n·k`: one sample per agent for each of the `k` states harvested from
/// each of the `f` failures.
pub fn guided_sample_count(failures: usize, agents: usize, k: usize) -> usize {
    failures * agents * k
}

/// The stop rule: retrain after the first round, and after later ones only if
/// the success rate rose by more than the configured margin; never when
/// there is nothing to learn from or the round cap is reached.
pub fn another_round(previous: Option<f64>, current: f64, failures: usize, round: usize, cfg: &CegkrConfig) -> bool {
    let improved = previous.is_none_or(|p| current > p + cfg.min_improvement);
    improved && failures > 0 && round + 1 < cfg.max_rounds
}

/// Retraining loop starting from `model`, which was trained on `data` (the
/// data may be empty if the model came from elsewhere).
pub fn cegkr_run(model: MlpModel, data: Vec<TrainingSample>, cfg: &CegkrConfig, seed: u64) -> Result<CegkrOutcome> {
    cfg.validate()?;
    let train_with = |data: &[TrainingSample], round: usize| {
        let tc = TrainConfig {
            seed: derive_seed(seed, &[tag::CEGKR, round as u64, tag::TRAIN]),
            ..cfg.train
        };
        train(data, &tc).map(|(m, _)| m)
    };
    let (mut model, mut data) = (model, data);

    let mut reports: Vec<RoundReport> = Vec::new();
    let mut models = Vec::new();
    loop {
        let round = reports.len();
        let eval = evaluate_controller(&model, cfg, derive_seed(seed, &[tag::CEGKR, round as u64, tag::EVAL]))?;
        let mut report = RoundReport {
            round,
            success_rate: eval.success_rate,
            failed: eval.failures.len(),
            median_final_cost: eval.median_final_cost,
            harvested_states: 0,
            guided_samples: 0,
            new_samples: 0,
            teacher_dropped: 0,
            total_samples: data.len(),
        };
        log::info!("round {round}: success {:.4}, {} failures", eval.success_rate, report.failed);
        models.push(model.clone());
        let previous = reports.last().map(|r| r.success_rate);
        if !another_round(previous, eval.success_rate, eval.failures.len(), round, cfg) {
            reports.push(report);
            break;
        }

        let states = harvest_retraining_states(&eval.failures, cfg.k)?;
        let guided = teacher_data(&states, cfg, derive_seed(seed, &[tag::CEGKR, round as u64, tag::TEACHER]))?;
        report.harvested_states = states.len();
        report.guided_samples = guided_sample_count(eval.failures.len(), cfg.agents, cfg.k);
        report.new_samples = guided.samples.len();
        report.teacher_dropped = guided.dropped.len();
        data.extend(guided.samples);
        report.total_samples = data.len();
        reports.push(report);
        model = train_with(&data, round + 1)?;
    }

    let best_round = reports
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.success_rate > reports[best].success_rate { i } else { best });
    Ok(CegkrOutcome {
        model: models[best_round].clone(),
        best_round,
        reports,
        models,
    })
}

/// One row per round: id, guided samples, success rate, median final cost.
pub fn rounds_table(reports: &[RoundReport]) -> String {
    let mut out = String::from(
        "round\tsuccess_rate\tfailed\tmedian_final_cost\tharvested_states\tguided_samples\tnew_samples\tteacher_dropped\ttotal_samples\n",
    );
    for r in reports {
        writeln!(
            out,
            "{}\t{:.6}\t{}\t{:.6e}\t{}\t{}\t{}\t{}\t{}",
            r.round,
            r.success_rate,
            r.failed,
            r.median_final_cost,
            r.harvested_states,
            r.guided_samples,
            r.new_samples,
            r.teacher_dropped,
            r.total_samples
        )
        .unwrap();
    }
    out
}
