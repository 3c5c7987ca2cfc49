use std::fmt::Write as _;
use std::path::Path;

use crate::controller::{Controller, StepContext};
use crate::cost::{member_cost, CostParameters};
use crate::error::{Error, Result};
use crate::flock::{
    clamp_acceleration, local_view_of, neighborhood, DynamicsParameters, FlockState, JointAction, LocalView,
    LOCAL_VIEW_LEN, NEIGHBORHOOD_SIZE,
};
use crate::geometry::Vec2;
use crate::nn::MlpModel;
use crate::trajectory::{parse_header, Trajectory};

const MAGIC: &str = "vform-dataset";

/// A local view labelled with the acceleration the teacher gave that agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub input: LocalView,
    pub label: Vec2,
}

impl TrainingSample {
    /// The same situation reflected in the line `x = y`. The dynamics, the
    /// cost and the default initial-state box are all symmetric under it, and
    /// distances, hence neighbor order, are unchanged.
    pub fn mirrored(&self) -> TrainingSample {
        let mut features = self.input.features;
        for pair in features[..LOCAL_VIEW_LEN - 1].chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
        TrainingSample {
            input: LocalView { features },
            label: Vec2::new(self.label.y, self.label.x),
        }
    }
}

fn view_with_cost(state: &FlockState, i: usize, cost: &CostParameters) -> Result<LocalView> {
    let members = neighborhood(state, i, NEIGHBORHOOD_SIZE)?;
    let local = member_cost(state, cost, &members).j;
    Ok(local_view_of(state, &members, local))
}

/// One sample per (step, agent) of the trajectory.
pub fn extract_samples(traj: &Trajectory, cost: &CostParameters) -> Result<Vec<TrainingSample>> {
    if traj.agents() < NEIGHBORHOOD_SIZE {
        return Err(Error::invalid(format!(
            "samples need at least {NEIGHBORHOOD_SIZE} agents, trajectory has {}",
            traj.agents()
        )));
    }
    let mut out = Vec::with_capacity(traj.len() * traj.agents());
    for (s, a) in traj.states.iter().zip(&traj.actions) {
        for (i, &label) in a.accelerations().iter().enumerate() {
            out.push(TrainingSample {
                input: view_with_cost(s, i, cost)?,
                label,
            });
        }
    }
    Ok(out)
}

/// What the network tells agent `i` to do, made feasible.
pub fn dnc_agent_action(
    state: &FlockState,
    i: usize,
    model: &MlpModel,
    cost: &CostParameters,
    dyn_params: &DynamicsParameters,
) -> Result<Vec2> {
    let view = view_with_cost(state, i, cost)?;
    let out = model.forward(&view.features)?;
    Ok(clamp_acceleration(state.velocity(i), Vec2::new(out[0], out[1]), dyn_params))
}

pub fn dnc_step(
    state: &FlockState,
    model: &MlpModel,
    cost: &CostParameters,
    dyn_params: &DynamicsParameters,
) -> Result<JointAction> {
    if state.len() < NEIGHBORHOOD_SIZE {
        return Err(Error::invalid(format!(
            "the neural controller needs at least {NEIGHBORHOOD_SIZE} agents, got {}",
            state.len()
        )));
    }
    let accel = (0..state.len())
        .map(|i| dnc_agent_action(state, i, model, cost, dyn_params))
        .collect::<Result<Vec<_>>>()?;
    JointAction::new(accel)
}

#[derive(Debug, Clone)]
pub struct DncController {
    pub model: MlpModel,
    pub cost: CostParameters,
    pub dyn_params: DynamicsParameters,
}

impl Controller for DncController {
    fn name(&self) -> &str {
        "dnc"
    }

    fn act(&self, state: &FlockState, _ctx: &StepContext) -> Result<JointAction> {
        dnc_step(state, &self.model, &self.cost, &self.dyn_params)
    }
}

/// Writes one sample per line: the 29 features, then the two label components.
pub fn write_dataset(path: &Path, samples: &[TrainingSample], config_hash: &str) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * (LOCAL_VIEW_LEN + 2) * 25 + 64);
    writeln!(out, "# {MAGIC} v1 samples={} config={config_hash}", samples.len()).unwrap();
    for s in samples {
        for f in &s.input.features {
            write!(out, "{f:.16e} ").unwrap();
        }
        writeln!(out, "{:.16e} {:.16e}", s.label.x, s.label.y).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(Vec<TrainingSample>, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty dataset file".into()))?;
    let fields = parse_header(header, MAGIC).map_err(|m| err(1, m))?;
    let get = |key: &str| {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| err(1, format!("header lacks `{key}`")))
    };
    let count: usize = get("samples")?.parse().map_err(|e| err(1, format!("bad sample count: {e}")))?;
    let hash = get("config")?;
    let mut samples = Vec::with_capacity(count);
    for (idx, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_ascii_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(idx + 1, format!("bad number: {e}")))?;
        if values.len() != LOCAL_VIEW_LEN + 2 {
            return Err(err(idx + 1, format!("expected {} fields, found {}", LOCAL_VIEW_LEN + 2, values.len())));
        }
        let mut features = [0.0; LOCAL_VIEW_LEN];
        features.copy_from_slice(&values[..LOCAL_VIEW_LEN]);
        samples.push(TrainingSample {
            input: LocalView { features },
            label: Vec2::new(values[LOCAL_VIEW_LEN], values[LOCAL_VIEW_LEN + 1]),
        });
    }
    if samples.len() != count {
        return Err(err(0, format!("header promises {count} samples, found {}", samples.len())));
    }
    Ok((samples, hash))
}
