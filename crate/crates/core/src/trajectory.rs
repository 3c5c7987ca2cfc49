//! Recorded closed-loop runs and their line-oriented text format.
//!
//! ```text
//! # vform-trajectory v1 n=<agents> steps=<m> dt=<dt> config=<hash>
//! <t> <x y vx vy per agent> <ax ay per agent> <J>
//! ...
//! # final J=<J of the state after the last action>
//! ```
//!
//! Floats carry 17 significant digits so files round-trip bit-exactly. The
//! final state is not stored; it is recovered by replaying the last record.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flock::{step_dynamics, DynamicsParameters, FlockState, JointAction};
use crate::geometry::Vec2;

const MAGIC: &str = "vform-trajectory";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// State before each step.
    pub states: Vec<FlockState>,
    /// Action applied at each step.
    pub actions: Vec<JointAction>,
    /// Global cost of each entry of `states`.
    pub costs: Vec<f64>,
    pub final_state: FlockState,
    pub final_cost: f64,
}

impl Trajectory {
    /// Number of (state, action) records.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.final_state.len()
    }

    /// Costs of every visited state, the final one included (`len() + 1`).
    pub fn cost_trace(&self) -> Vec<f64> {
        let mut trace = self.costs.clone();
        trace.push(self.final_cost);
        trace
    }

    pub fn succeeded(&self, threshold: f64) -> bool {
        self.final_cost <= threshold
    }

    /// Recomputes every state from the first one and the recorded actions.
    pub fn replay(&self) -> Result<Vec<FlockState>> {
        let dyn_params = DynamicsParameters {
            dt: self.dt,
            ..DynamicsParameters::default()
        };
        let mut out = Vec::with_capacity(self.len() + 1);
        let Some(first) = self.states.first() else {
            return Ok(vec![self.final_state.clone()]);
        };
        let mut s = first.clone();
        for a in &self.actions {
            let next = step_dynamics(&s, a, &dyn_params)?;
            out.push(std::mem::replace(&mut s, next));
        }
        out.push(s);
        Ok(out)
    }

    pub fn to_text(&self, config_hash: &str) -> String {
        let n = self.agents();
        let mut out = String::with_capacity(self.len() * n * 6 * 26 + 128);
        writeln!(
            out,
            "# {MAGIC} {VERSION} n={n} steps={} dt={:.16e} config={config_hash}",
            self.len(),
            self.dt
        )
        .unwrap();
        for (t, ((s, a), j)) in self.states.iter().zip(&self.actions).zip(&self.costs).enumerate() {
            write!(out, "{t}").unwrap();
            for (x, v) in s.positions().iter().zip(s.velocities()) {
                write!(out, " {:.16e} {:.16e} {:.16e} {:.16e}", x.x, x.y, v.x, v.y).unwrap();
            }
            for acc in a.accelerations() {
                write!(out, " {:.16e} {:.16e}", acc.x, acc.y).unwrap();
            }
            writeln!(out, " {j:.16e}").unwrap();
        }
        writeln!(out, "# final J={:.16e}", self.final_cost).unwrap();
        out
    }

    /// Parses [`Trajectory::to_text`] output; returns the trajectory and
    /// the config hash from its header.
    pub fn from_text(text: &str, origin: &Path) -> Result<(Trajectory, String)> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty trajectory file".into()))?;
        let fields = parse_header(header, MAGIC).map_err(|m| err(1, m))?;
        let get = |key: &str| {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| err(1, format!("header lacks `{key}`")))
        };
        let n: usize = get("n")?.parse().map_err(|e| err(1, format!("bad n: {e}")))?;
        let steps: usize = get("steps")?.parse().map_err(|e| err(1, format!("bad steps: {e}")))?;
        let dt: f64 = get("dt")?.parse().map_err(|e| err(1, format!("bad dt: {e}")))?;
        let hash = get("config")?.to_string();

        let mut states = Vec::with_capacity(steps);
        let mut actions = Vec::with_capacity(steps);
        let mut costs = Vec::with_capacity(steps);
        let mut final_cost = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if let Some(rest) = line.strip_prefix("# final J=") {
                final_cost = Some(rest.trim().parse::<f64>().map_err(|e| err(lineno, format!("bad final J: {e}")))?);
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let values: Vec<&str> = line.split_ascii_whitespace().collect();
            let expected = 1 + 6 * n + 1;
            if values.len() != expected {
                return Err(err(lineno, format!("expected {expected} fields, found {}", values.len())));
            }
            let t: usize = values[0].parse().map_err(|e| err(lineno, format!("bad step index: {e}")))?;
            if t != states.len() {
                return Err(err(lineno, format!("step {t} out of order")));
            }
            let nums = values[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| err(lineno, format!("bad number: {e}")))?;
            let (state_part, rest) = nums.split_at(4 * n);
            let (action_part, cost_part) = rest.split_at(2 * n);
            let positions = state_part.chunks(4).map(|c| Vec2::new(c[0], c[1])).collect();
            let velocities = state_part.chunks(4).map(|c| Vec2::new(c[2], c[3])).collect();
            states.push(FlockState::new(positions, velocities).map_err(|e| err(lineno, e.to_string()))?);
            let accel = action_part.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
            actions.push(JointAction::new(accel).map_err(|e| err(lineno, e.to_string()))?);
            costs.push(cost_part[0]);
        }
        if states.len() != steps {
            return Err(err(0, format!("header promises {steps} records, found {}", states.len())));
        }
        let final_cost = final_cost.ok_or_else(|| err(0, "missing `# final` trailer".into()))?;
        let Some(last) = states.last() else {
            return Err(err(0, "trajectory has no records".into()));
        };
        let dyn_params = DynamicsParameters {
            dt,
            ..DynamicsParameters::default()
        };
        let final_state = step_dynamics(last, actions.last().unwrap(), &dyn_params)?;
        Ok((
            Trajectory {
                dt,
                states,
                actions,
                costs,
                final_state,
                final_cost,
            },
            hash,
        ))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(path, self.to_text(config_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Trajectory, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::from_text(&text, path)
    }
}

/// Splits `# <magic> v1 k=v k=v ...` into its key/value pairs.
pub(crate) fn parse_header(line: &str, magic: &str) -> Result<Vec<(String, String)>, String> {
    let mut words = line.split_ascii_whitespace();
    if words.next() != Some("#") || words.next() != Some(magic) {
        return Err(format!("not a {magic} file"));
    }
    match words.next() {
        Some(VERSION) => {}
        other => return Err(format!("unsupported version {other:?}")),
    }
    words
        .map(|w| {
            w.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("malformed header field `{w}`"))
        })
        .collect()
}
