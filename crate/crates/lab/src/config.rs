//! One TOML file describes a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vform::cegkr::CegkrConfig;
use vform::cost::Sym2;
use vform::mpc::{CampcConfig, DampcConfig, PlannerConfig};
use vform::nn::{AdamParameters, TrainConfig};
use vform::pso::PsoParameters;
use vform::smc::{scaled_threshold, SmcConfig, BASE_AGENTS};
use vform::{CostParameters, DynamicsParameters, Interval, Simulator};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    pub dt: f64,
    pub v_max: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub wing_span: f64,
    pub theta: f64,
    pub alpha: f64,
    pub phi: f64,
    /// Diagonal of the upwash covariance, lateral then longitudinal.
    pub sigma1: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoSection {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub target_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonSection {
    pub horizon_min: usize,
    pub horizon_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub trajectories: usize,
    pub agents: usize,
    pub steps: usize,
    pub position_range: [f64; 2],
    pub velocity_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub normalize_inputs: bool,
    pub mirror: bool,
    pub keep_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CegkrSection {
    pub k: usize,
    pub test_batch: usize,
    pub min_improvement: f64,
    pub max_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub agents: Vec<usize>,
    pub runs: usize,
    pub controllers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    pub epsilon: f64,
    pub delta: f64,
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Space {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub agents: Vec<usize>,
    pub runs: usize,
    pub spaces: Vec<Space>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub steps: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: Scale,
    pub out: PathBuf,
    pub dynamics: DynamicsSection,
    pub cost: CostSection,
    pub pso: PsoSection,
    pub campc: HorizonSection,
    pub dampc: HorizonSection,
    pub teacher: TeacherSection,
    pub train: TrainSection,
    pub cegkr: CegkrSection,
    pub compare: CompareSection,
    pub smc: SmcSection,
    pub robustness: RobustnessSection,
    pub scenario: ScenarioSection,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        let d = DynamicsParameters::default();
        DynamicsSection {
            dt: d.dt,
            v_max: d.v_max,
            rho: d.rho,
        }
    }
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostParameters::default();
        CostSection {
            wing_span: c.wing_span,
            theta: c.theta,
            alpha: c.alpha,
            phi: c.phi,
            sigma1: [c.sigma1.xx, c.sigma1.yy],
        }
    }
}

impl Default for PsoSection {
    fn default() -> Self {
        let p = CampcConfig::default().planner.pso;
        PsoSection {
            particles: p.particles,
            iterations: p.max_iterations,
            inertia: p.inertia,
            cognitive: p.cognitive,
            social: p.social,
            target_cost: p.target_cost,
        }
    }
}

impl Default for HorizonSection {
    fn default() -> Self {
        let p = CampcConfig::default().planner;
        HorizonSection {
            horizon_min: p.horizon_min,
            horizon_max: p.horizon_max,
        }
    }
}

impl Default for TeacherSection {
    fn default() -> Self {
        let c = CegkrConfig::default();
        TeacherSection {
            trajectories: 200,
            agents: c.agents,
            steps: c.steps,
            position_range: [c.position_range.lo, c.position_range.hi],
            velocity_range: [c.velocity_range.lo, c.velocity_range.hi],
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            validation_fraction: t.validation_fraction,
            normalize_inputs: true,
            mirror: true,
            keep_best: true,
        }
    }
}

impl Default for CegkrSection {
    fn default() -> Self {
        let c = CegkrConfig::default();
        CegkrSection {
            k: c.k,
            test_batch: c.test_batch,
            min_improvement: c.min_improvement,
            max_rounds: c.max_rounds,
        }
    }
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            agents: vec![7, 10, 13],
            runs: 100,
            controllers: ["dnc", "dnc-cegkr", "dampc", "campc"].map(String::from).to_vec(),
        }
    }
}

impl Default for SmcSection {
    fn default() -> Self {
        SmcSection {
            epsilon: 0.05,
            delta: 0.01,
            agents: vec![7],
        }
    }
}

impl Default for RobustnessSection {
    fn default() -> Self {
        let space = |p: f64, v: (f64, f64)| Space {
            position: [0.0, p],
            velocity: [v.0, v.1],
        };
        RobustnessSection {
            agents: vec![7, 15],
            runs: 100,
            spaces: vec![
                space(5.0, (0.25, 0.75)),
                space(6.0, (0.4, 0.8)),
                space(8.0, (0.35, 0.95)),
                space(10.0, (0.1, 0.9)),
            ],
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection { steps: 200, gain: 0.5 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Scale::Desk)
    }
}

fn interval(r: [f64; 2]) -> Interval {
    Interval::new(r[0], r[1])
}

impl ExperimentConfig {
    /// Desk presets finish on a laptop; paper presets match the published
    /// sample sizes and take days.
    pub fn preset(scale: Scale) -> ExperimentConfig {
        let desk = ExperimentConfig {
            seed: 1,
            scale: Scale::Desk,
            out: PathBuf::from("runs/desk"),
            dynamics: DynamicsSection::default(),
            cost: CostSection::default(),
            pso: PsoSection::default(),
            campc: HorizonSection::default(),
            dampc: HorizonSection {
                horizon_min: 1,
                horizon_max: 3,
            },
            teacher: TeacherSection::default(),
            train: TrainSection::default(),
            cegkr: CegkrSection::default(),
            compare: CompareSection::default(),
            smc: SmcSection::default(),
            robustness: RobustnessSection::default(),
            scenario: ScenarioSection::default(),
        };
        match scale {
            Scale::Desk => desk,
            Scale::Paper => ExperimentConfig {
                scale,
                out: PathBuf::from("runs/paper"),
                teacher: TeacherSection {
                    trajectories: 23_000,
                    ..desk.teacher
                },
                train: TrainSection {
                    epochs: 1000,
                    learning_rate: 1e-4,
                    normalize_inputs: false,
                    mirror: false,
                    keep_best: false,
                    ..desk.train
                },
                cegkr: CegkrSection {
                    test_batch: 10_000,
                    ..desk.cegkr
                },
                compare: CompareSection {
                    agents: (7..=16).collect(),
                    runs: 10_000,
                    ..desk.compare
                },
                smc: SmcSection {
                    epsilon: 0.01,
                    delta: 1e-4,
                    agents: (7..=16).collect(),
                },
                robustness: RobustnessSection {
                    runs: 10_000,
                    ..desk.robustness
                },
                ..desk
            },
        }
    }

    /// Reads a config file; missing keys take the values of the preset named
    /// by its `scale` key (desk if absent).
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let value: toml::Table = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        let scale = match value.get("scale").and_then(|v| v.as_str()) {
            None | Some("desk") => Scale::Desk,
            Some("paper") => Scale::Paper,
            Some(other) => return Err(LabError::Config(format!("unknown scale `{other}`"))),
        };
        let mut merged = toml::Table::try_from(ExperimentConfig::preset(scale))
            .map_err(|e| LabError::Config(e.to_string()))?;
        merge(&mut merged, value);
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        ExperimentConfig::from_toml(&text).map_err(|e| match e {
            LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Digest of everything that influences results. The output directory
    /// is excluded, so moving a run does not invalidate it.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.campc().planner.validate()?;
        self.dampc().validate()?;
        self.cegkr().validate()?;
        let t = &self.teacher;
        if t.trajectories == 0 || t.agents < 7 || t.steps == 0 {
            return Err(LabError::Config(
                "teacher needs at least one trajectory of at least one step with at least 7 agents".into(),
            ));
        }
        for r in [t.position_range, t.velocity_range] {
            if !interval(r).is_valid() {
                return Err(LabError::Config(format!("bad range {r:?}")));
            }
        }
        if self.compare.agents.iter().chain(&self.robustness.agents).chain(&self.smc.agents).any(|&n| n < 7) {
            return Err(LabError::Config("agent counts must be at least 7".into()));
        }
        if self.compare.runs == 0 || self.robustness.runs == 0 || self.scenario.steps == 0 {
            return Err(LabError::Config("run and step counts must be positive".into()));
        }
        for c in &self.compare.controllers {
            if !["dnc", "dnc-cegkr", "dampc", "campc"].contains(&c.as_str()) {
                return Err(LabError::Config(format!(
                    "unknown controller `{c}`; known: dnc, dnc-cegkr, dampc, campc"
                )));
            }
        }
        self.smc_config(7)?.validate()?;
        Ok(())
    }

    pub fn dyn_params(&self) -> DynamicsParameters {
        DynamicsParameters {
            dt: self.dynamics.dt,
            v_max: self.dynamics.v_max,
            rho: self.dynamics.rho,
        }
    }

    pub fn cost_params(&self) -> CostParameters {
        let c = &self.cost;
        CostParameters {
            theta: c.theta,
            alpha: c.alpha,
            sigma1: Sym2::diag(c.sigma1[0], c.sigma1[1]),
            phi: c.phi,
            ..CostParameters::with_wing_span(c.wing_span)
        }
    }

    pub fn simulator(&self) -> Simulator {
        Simulator::new(self.dyn_params(), self.cost_params())
    }

    fn planner(&self, h: &HorizonSection) -> PlannerConfig {
        let p = &self.pso;
        PlannerConfig {
            horizon_min: h.horizon_min,
            horizon_max: h.horizon_max,
            pso: PsoParameters {
                particles: p.particles,
                max_iterations: p.iterations,
                inertia: p.inertia,
                cognitive: p.cognitive,
                social: p.social,
                time_budget: None,
                target_cost: p.target_cost,
            },
            dyn_params: self.dyn_params(),
            cost: self.cost_params(),
        }
    }

    pub fn campc(&self) -> CampcConfig {
        CampcConfig {
            planner: self.planner(&self.campc),
        }
    }

    pub fn dampc(&self) -> DampcConfig {
        DampcConfig {
            planner: self.planner(&self.dampc),
            ..DampcConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            validation_fraction: t.validation_fraction,
            normalize_inputs: t.normalize_inputs,
            mirror: t.mirror,
            keep_best: t.keep_best,
            adam: AdamParameters {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
        }
    }

    pub fn cegkr(&self) -> CegkrConfig {
        CegkrConfig {
            k: self.cegkr.k,
            test_batch: self.cegkr.test_batch,
            agents: self.teacher.agents,
            steps: self.teacher.steps,
            threshold: self.cost.phi,
            position_range: interval(self.teacher.position_range),
            velocity_range: interval(self.teacher.velocity_range),
            teacher: self.campc(),
            train: self.train_config(),
            min_improvement: self.cegkr.min_improvement,
            max_rounds: self.cegkr.max_rounds,
        }
    }

    pub fn position_range(&self) -> Interval {
        interval(self.teacher.position_range)
    }

    pub fn velocity_range(&self) -> Interval {
        interval(self.teacher.velocity_range)
    }

    /// Run length and threshold scaled with the flock size.
    pub fn smc_config(&self, agents: usize) -> Result<SmcConfig> {
        let base = SmcConfig::for_agents(agents, self.smc.epsilon, self.smc.delta);
        Ok(SmcConfig {
            steps: (agents as f64 / BASE_AGENTS as f64 * self.teacher.steps as f64).round() as usize,
            threshold: scaled_threshold(agents, self.cost.phi),
            position_range: self.position_range(),
            velocity_range: self.velocity_range(),
            ..base
        })
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
