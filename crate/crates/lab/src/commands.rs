//! The experiment workflows. Every artifact carries the config hash, and
//! inputs produced under a different config are refused unless forced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use vform::cegkr::{cegkr_run, random_states, rounds_table, teacher_runs, teacher_samples, RoundReport};
use vform::mpc::{CampcController, DampcController};
use vform::nn::{read_dataset, train, write_dataset, DncController, EpochLoss, MlpModel, TrainingSample};
use vform::scenario::{run_scenario, scenario_by_name, AveragingController, SCENARIO_NAMES};
use vform::seed::{derive_seed, tag};
use vform::smc::{first_passage, smc_estimate};
use vform::{Controller, FlockState, Interval, JointAction, StepContext, Trajectory};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::table::{write_file, ResultsTable};

/// Runs whose per-step cost traces and snapshots are dumped for plotting.
const PLOTTED_RUNS: usize = 3;

pub struct Lab {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    /// Accept inputs produced under another config.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub trajectories: usize,
    pub kept: usize,
    pub dropped: Vec<usize>,
    pub samples: usize,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub samples: usize,
    pub losses: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct CegkrSummary {
    pub reports: Vec<RoundReport>,
    pub best_round: usize,
    pub model: PathBuf,
}

/// Wraps a controller and records the wall time of every call.
struct Timed<C> {
    inner: C,
    times: Mutex<Vec<f64>>,
}

impl<C: Controller> Timed<C> {
    fn new(inner: C) -> Self {
        Timed {
            inner,
            times: Mutex::new(Vec::new()),
        }
    }

    fn take(&self) -> Vec<f64> {
        std::mem::take(&mut self.times.lock().unwrap())
    }
}

impl<C: Controller> Controller for Timed<C> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn act(&self, state: &FlockState, ctx: &StepContext) -> vform::Result<JointAction> {
        let start = Instant::now();
        let out = self.inner.act(state, ctx);
        self.times.lock().unwrap().push(start.elapsed().as_secs_f64());
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-step global cost, one `step J` pair per line.
pub fn trace_series(traj: &Trajectory) -> String {
    let mut out = String::from("step\tJ\n");
    for (t, j) in traj.cost_trace().iter().enumerate() {
        writeln!(out, "{t}\t{j:.12e}").unwrap();
    }
    out
}

/// Every visited state as `t agent x y vx vy` rows.
pub fn snapshot_dump(traj: &Trajectory) -> String {
    let mut out = String::from("t\tagent\tx\ty\tvx\tvy\n");
    for (t, s) in traj.states.iter().chain([&traj.final_state]).enumerate() {
        for i in 0..s.len() {
            let (p, v) = (s.position(i), s.velocity(i));
            writeln!(out, "{t}\t{i}\t{:.9}\t{:.9}\t{:.9}\t{:.9}", p.x, p.y, v.x, v.y).unwrap();
        }
    }
    out
}

/// Outcome of one controller on a batch of shared initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub success_rate: f64,
    /// Mean first-passage step over successful runs.
    pub convergence_time: f64,
    pub median_step_seconds: f64,
    pub mean_step_seconds: f64,
    pub plotted: Vec<Trajectory>,
}

/// Runs `controller` from every state. Step times are divided by
/// `time_divisor` (the number of agents for distributed controllers).
pub fn run_batch<C: Controller>(
    controller: C,
    initials: &[FlockState],
    steps: usize,
    threshold: f64,
    lab: &Lab,
    seed: u64,
    time_divisor: f64,
) -> Result<BatchResult> {
    let sim = lab.cfg.simulator();
    let timed = Timed::new(controller);
    let outcomes = initials
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let traj = sim.run(&timed, s, steps, derive_seed(seed, &[tag::EVAL, i as u64]))?;
            let trace = traj.cost_trace();
            let success = traj.succeeded(threshold);
            let passage = first_passage(&trace, threshold);
            Ok((success, passage, (i < PLOTTED_RUNS).then_some(traj)))
        })
        .collect::<vform::Result<Vec<_>>>()?;
    let mut times: Vec<f64> = timed.take().into_iter().map(|t| t / time_divisor).collect();
    let successes = outcomes.iter().filter(|o| o.0).count();
    let passages: Vec<f64> = outcomes.iter().filter(|o| o.0).filter_map(|o| o.1.map(|t| t as f64)).collect();
    Ok(BatchResult {
        success_rate: successes as f64 / initials.len() as f64,
        convergence_time: mean(&passages),
        mean_step_seconds: mean(&times),
        median_step_seconds: median(&mut times),
        plotted: outcomes.into_iter().filter_map(|o| o.2).collect(),
    })
}

impl Lab {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Lab {
        Lab {
            hash: cfg.hash(),
            out: cfg.out.clone(),
            cfg,
            force,
        }
    }

    pub fn teacher_dir(&self) -> PathBuf {
        self.out.join("teacher")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.teacher_dir().join("dataset.ds")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.mlp")
    }

    pub fn cegkr_dir(&self) -> PathBuf {
        self.out.join("cegkr")
    }

    pub fn cegkr_model_path(&self) -> PathBuf {
        self.cegkr_dir().join("model.mlp")
    }

    fn check_hash(&self, path: &Path, found: String) -> Result<()> {
        if found != self.hash && !self.force {
            return Err(LabError::HashMismatch {
                path: path.to_path_buf(),
                found,
                expected: self.hash.clone(),
            });
        }
        Ok(())
    }

    fn require(&self, path: &Path, what: &'static str, producer: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(LabError::MissingArtifact {
                what,
                path: path.to_path_buf(),
                producer,
            })
        }
    }

    pub fn load_dataset(&self) -> Result<Vec<TrainingSample>> {
        let path = self.dataset_path();
        self.require(&path, "teacher dataset", "generate")?;
        let (samples, hash) = read_dataset(&path)?;
        self.check_hash(&path, hash)?;
        Ok(samples)
    }

    fn load_model_at(&self, path: &Path, producer: &'static str) -> Result<MlpModel> {
        self.require(path, "trained model", producer)?;
        let (model, hash) = MlpModel::load(path)?;
        self.check_hash(path, hash)?;
        Ok(model)
    }

    pub fn load_model(&self) -> Result<MlpModel> {
        self.load_model_at(&self.model_path(), "train")
    }

    pub fn load_cegkr_model(&self) -> Result<MlpModel> {
        self.load_model_at(&self.cegkr_model_path(), "cegkr")
    }

    /// The retrained model if there is one, else the initially trained one.
    pub fn best_model(&self) -> Result<MlpModel> {
        if self.cegkr_model_path().exists() {
            self.load_cegkr_model()
        } else {
            log::warn!("no retrained model; using {}", self.model_path().display());
            self.load_model()
        }
    }

    fn dnc(&self, model: MlpModel) -> DncController {
        DncController {
            model,
            cost: self.cfg.cost_params(),
            dyn_params: self.cfg.dyn_params(),
        }
    }

    fn write_config(&self) -> Result<()> {
        write_file(&self.out.join("config.toml"), &self.cfg.to_toml())
    }

    /// Teacher trajectories from `count` random initial states, plus the
    /// dataset of the successful ones.
    pub fn cmd_generate(&self, count: Option<usize>) -> Result<GenerateSummary> {
        let count = count.unwrap_or(self.cfg.teacher.trajectories);
        let cc = self.cfg.cegkr();
        let seed = derive_seed(self.cfg.seed, &[tag::TEACHER]);
        let initials = random_states(count, cc.agents, cc.position_range, cc.velocity_range, seed)?;
        let runs = teacher_runs(&initials, &cc, seed)?;
        let data = teacher_samples(&runs, &cc)?;

        let dir = self.teacher_dir();
        std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        self.write_config()?;
        for (i, t) in runs.iter().enumerate() {
            t.save(&dir.join(format!("traj_{i:05}.traj")), &self.hash)?;
        }
        let dataset = self.dataset_path();
        write_dataset(&dataset, &data.samples, &self.hash)?;
        let manifest = format!(
            "config = \"{}\"\ntrajectories = {count}\nkept = {}\ndropped = {:?}\nsamples = {}\ndataset = \"dataset.ds\"\n",
            self.hash,
            data.kept,
            data.dropped,
            data.samples.len()
        );
        write_file(&dir.join("manifest.toml"), &manifest)?;
        log::info!("{} of {count} teacher runs kept, {} samples", data.kept, data.samples.len());
        Ok(GenerateSummary {
            trajectories: count,
            kept: data.kept,
            dropped: data.dropped,
            samples: data.samples.len(),
            dataset,
        })
    }

    pub fn cmd_train(&self) -> Result<TrainSummary> {
        let samples = self.load_dataset()?;
        let (model, losses) = train(&samples, &self.cfg.train_config())?;
        let path = self.model_path();
        model.save(&path, &self.hash)?;
        let mut table = ResultsTable::new("train_loss", &["epoch", "train", "validation"], &self.hash, self.cfg.seed);
        for e in &losses {
            table.push(vec![e.epoch.into(), e.train.into(), e.validation.unwrap_or(f64::NAN).into()]);
        }
        table.write(&self.out)?;
        Ok(TrainSummary {
            model: path,
            samples: samples.len(),
            losses,
        })
    }

    pub fn cmd_cegkr(&self) -> Result<CegkrSummary> {
        let samples = self.load_dataset()?;
        let model = self.load_model()?;
        let outcome = cegkr_run(model, samples, &self.cfg.cegkr(), derive_seed(self.cfg.seed, &[tag::CEGKR]))?;
        let dir = self.cegkr_dir();
        for (r, m) in outcome.models.iter().enumerate() {
            m.save(&dir.join(format!("round_{r}.mlp")), &self.hash)?;
        }
        let path = self.cegkr_model_path();
        outcome.model.save(&path, &self.hash)?;
        write_file(
            &dir.join("rounds.tsv"),
            &format!("# rounds config={} seed={}\n{}", self.hash, self.cfg.seed, rounds_table(&outcome.reports)),
        )?;
        Ok(CegkrSummary {
            reports: outcome.reports,
            best_round: outcome.best_round,
            model: path,
        })
    }

    /// Shared initial states for flock size `n`, drawn from the given box.
    pub fn shared_states(&self, n: usize, runs: usize, positions: Interval, velocities: Interval, salt: u64) -> Result<Vec<FlockState>> {
        Ok(random_states(runs, n, positions, velocities, derive_seed(self.cfg.seed, &[tag::EVAL, salt, n as u64]))?)
    }

    fn scaled(&self, n: usize) -> (usize, f64) {
        let s = n as f64 / 7.0;
        ((s * self.cfg.teacher.steps as f64).round() as usize, s * self.cfg.cost.phi)
    }

    fn dump_plots(&self, dir: &Path, label: &str, runs: &[Trajectory]) -> Result<()> {
        for (r, t) in runs.iter().enumerate() {
            write_file(&dir.join("traces").join(format!("{label}_run{r}.tsv")), &trace_series(t))?;
            write_file(&dir.join("snapshots").join(format!("{label}_run{r}.tsv")), &snapshot_dump(t))?;
        }
        Ok(())
    }

    pub fn cmd_compare(&self, agents: Option<Vec<usize>>) -> Result<ResultsTable> {
        let agents = agents.unwrap_or_else(|| self.cfg.compare.agents.clone());
        let names = &self.cfg.compare.controllers;
        let dnc = names.iter().any(|c| c == "dnc").then(|| self.load_model()).transpose()?;
        let retrained = names.iter().any(|c| c == "dnc-cegkr").then(|| self.load_cegkr_model()).transpose()?;
        let mut table = ResultsTable::new(
            "compare",
            &["agents", "controller", "runs", "steps", "threshold", "success_rate", "convergence_time", "median_step_ms", "mean_step_ms"],
            &self.hash,
            self.cfg.seed,
        );
        let dir = self.out.join("compare");
        for &n in &agents {
            let (steps, threshold) = self.scaled(n);
            let initials =
                self.shared_states(n, self.cfg.compare.runs, self.cfg.position_range(), self.cfg.velocity_range(), 0)?;
            let seed = derive_seed(self.cfg.seed, &[tag::EVAL, n as u64]);
            for name in names {
                let per_agent = n as f64;
                let result = match name.as_str() {
                    "dnc" => run_batch(self.dnc(dnc.clone().unwrap()), &initials, steps, threshold, self, seed, per_agent)?,
                    "dnc-cegkr" => {
                        run_batch(self.dnc(retrained.clone().unwrap()), &initials, steps, threshold, self, seed, per_agent)?
                    }
                    "dampc" => run_batch(DampcController { cfg: self.cfg.dampc() }, &initials, steps, threshold, self, seed, per_agent)?,
                    "campc" => run_batch(CampcController { cfg: self.cfg.campc() }, &initials, steps, threshold, self, seed, 1.0)?,
                    other => return Err(LabError::Config(format!("unknown controller `{other}`"))),
                };
                log::info!("n = {n} {name}: success {:.3}", result.success_rate);
                self.dump_plots(&dir, &format!("{name}_n{n}"), &result.plotted)?;
                table.push(vec![
                    n.into(),
                    name.as_str().into(),
                    initials.len().into(),
                    steps.into(),
                    threshold.into(),
                    result.success_rate.into(),
                    result.convergence_time.into(),
                    (result.median_step_seconds * 1e3).into(),
                    (result.mean_step_seconds * 1e3).into(),
                ]);
            }
        }
        table.write(&self.out)?;
        Ok(table)
    }

    pub fn cmd_smc(&self, agents: Option<Vec<usize>>) -> Result<ResultsTable> {
        let agents = agents.unwrap_or_else(|| self.cfg.smc.agents.clone());
        let ctl = self.dnc(self.best_model()?);
        let sim = self.cfg.simulator();
        let mut table = ResultsTable::new(
            "smc",
            &["agents", "epsilon", "delta", "samples", "successes", "success_rate", "convergence_time"],
            &self.hash,
            self.cfg.seed,
        );
        for &n in &agents {
            let sc = self.cfg.smc_config(n)?;
            let est = smc_estimate(&ctl, &sim, &sc, derive_seed(self.cfg.seed, &[tag::SMC, n as u64]))?;
            table.push(vec![
                n.into(),
                sc.epsilon.into(),
                sc.delta.into(),
                est.samples.into(),
                est.successes.into(),
                est.success_rate.into(),
                est.convergence_time.into(),
            ]);
        }
        table.write(&self.out)?;
        Ok(table)
    }

    /// Runs each named scenario under the averaging reference controller,
    /// DAMPC and, where a model exists, the neural controller.
    pub fn cmd_scenario(&self, names: Option<Vec<String>>) -> Result<ResultsTable> {
        let names = names.unwrap_or_else(|| SCENARIO_NAMES.iter().map(|s| s.to_string()).collect());
        let cost = self.cfg.cost_params();
        let steps = self.cfg.scenario.steps;
        let model = if self.model_path().exists() { Some(self.best_model()?) } else { None };
        let mut table = ResultsTable::new(
            "scenario",
            &["scenario", "controller", "agents", "steps", "expected_failure", "failure_observed", "min_cost", "max_acceleration"],
            &self.hash,
            self.cfg.seed,
        );
        let dir = self.out.join("scenario");
        for name in &names {
            let sc = scenario_by_name(name, &cost)?;
            let n = sc.state.len();
            let mut runs: Vec<(&str, vform::scenario::ScenarioVerdict)> = Vec::new();
            let seed = derive_seed(self.cfg.seed, &[tag::EVAL, n as u64]);
            // The averaging controller runs without constraint clamping so that
            // the symmetry arguments are not confounded by it.
            let avg = AveragingController {
                gain: self.cfg.scenario.gain,
                neighborhood: sc.neighborhood,
            };
            runs.push(("averaging", run_scenario(&sc, &avg, &self.cfg.simulator().unclamped(), steps, seed)?));
            if n >= 7 {
                let dampc = DampcController { cfg: self.cfg.dampc() };
                runs.push(("dampc", run_scenario(&sc, &dampc, &self.cfg.simulator(), self.cfg.teacher.steps, seed)?));
                if let Some(m) = &model {
                    runs.push(("dnc", run_scenario(&sc, &self.dnc(m.clone()), &self.cfg.simulator(), steps, seed)?));
                }
            }
            for (ctl, v) in runs {
                let max_accel = v.trajectory.actions.iter().map(|a| a.max_magnitude()).fold(0.0, f64::max);
                self.dump_plots(&dir, &format!("{name}_{ctl}"), std::slice::from_ref(&v.trajectory))?;
                table.push(vec![
                    (*name).clone().into(),
                    ctl.into(),
                    n.into(),
                    v.trajectory.len().into(),
                    sc.expect_failure.into(),
                    v.failure_observed.into(),
                    v.min_cost.into(),
                    max_accel.into(),
                ]);
            }
        }
        table.write(&self.out)?;
        Ok(table)
    }

    /// The fixed model on the configured initial-state boxes.
    pub fn cmd_robustness(&self) -> Result<ResultsTable> {
        let model = self.best_model()?;
        let mut table = ResultsTable::new(
            "robustness",
            &["position", "velocity", "agents", "runs", "success_rate", "convergence_time"],
            &self.hash,
            self.cfg.seed,
        );
        for (k, space) in self.cfg.robustness.spaces.iter().enumerate() {
            let (p, v) = (Interval::new(space.position[0], space.position[1]), Interval::new(space.velocity[0], space.velocity[1]));
            for &n in &self.cfg.robustness.agents {
                let (steps, threshold) = self.scaled(n);
                let initials = self.shared_states(n, self.cfg.robustness.runs, p, v, k as u64 + 1)?;
                let seed = derive_seed(self.cfg.seed, &[tag::EVAL, k as u64, n as u64]);
                let r = run_batch(self.dnc(model.clone()), &initials, steps, threshold, self, seed, n as f64)?;
                table.push(vec![
                    format!("[{}, {}]^2", p.lo, p.hi).into(),
                    format!("[{}, {}]^2", v.lo, v.hi).into(),
                    n.into(),
                    initials.len().into(),
                    r.success_rate.into(),
                    r.convergence_time.into(),
                ]);
            }
        }
        table.write(&self.out)?;
        Ok(table)
    }
}
