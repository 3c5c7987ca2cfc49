use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::trajectory::parse_header;

/// Layer widths of the controller network: the 29-feature local view, five
/// hidden layers of 84 sigmoid units, and a linear 2D acceleration.
pub const DNC_LAYERS: [usize; 7] = [29, 84, 84, 84, 84, 84, 2];

const MAGIC: &str = "vform-mlp";

/// Weights plus biases of a network with the given layer widths.
pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Fixed affine map `(x − shift) · scale` applied to inputs before the first
/// layer. Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Standardizes every feature over `rows`; constant features keep unit scale.
    pub fn standardize<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> InputScaling {
        let mut count = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            count += 1;
            for (k, &x) in row.iter().enumerate() {
                let d = x - mean[k];
                mean[k] += d / count as f64;
                m2[k] += d * (x - mean[k]);
            }
        }
        let scale = m2
            .iter()
            .map(|&s| {
                let sd = if count > 1 { (s / count as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        InputScaling { shift: mean, scale }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (input[k] - self.shift[k]) * self.scale[k];
        }
    }
}

/// Fully connected feed-forward network: sigmoid hidden layers, identity
/// output. Parameters live in one flat vector, layer by layer, each layer as
/// its row-major `out × in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
    scaling: Option<InputScaling>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    pub fn zeros(sizes: &[usize]) -> Result<MlpModel> {
        MlpModel::from_parts(sizes.to_vec(), vec![0.0; parameter_count(sizes)], None)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<MlpModel> {
        let mut model = MlpModel::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    /// The controller architecture ([`DNC_LAYERS`]) with fresh weights.
    pub fn dnc<R: Rng + ?Sized>(rng: &mut R) -> MlpModel {
        MlpModel::glorot(&DNC_LAYERS, rng).expect("valid architecture")
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, scaling: Option<InputScaling>) -> Result<MlpModel> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let expected = parameter_count(&sizes);
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "layers {sizes:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        let mut model = MlpModel {
            sizes,
            params,
            scaling: None,
        };
        model.set_scaling(scaling)?;
        Ok(model)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn scaling(&self) -> Option<&InputScaling> {
        self.scaling.as_ref()
    }

    pub fn set_scaling(&mut self, scaling: Option<InputScaling>) -> Result<()> {
        if let Some(s) = &scaling {
            let d = self.input_len();
            if s.shift.len() != d || s.scale.len() != d {
                return Err(Error::invalid(format!("input scaling must have {d} entries")));
            }
            if s.shift.iter().chain(&s.scale).any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite input scaling"));
            }
        }
        self.scaling = scaling;
        Ok(())
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        parameter_count(&self.sizes[..=layer])
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offset(l);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[start..start + fan_in * fan_out]).unwrap();
        let b = ArrayView1::from(&self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                actual: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite network input"));
        }
        let mut cur = input.to_vec();
        if let Some(s) = &self.scaling {
            s.apply(input, &mut cur);
        }
        let mut next = Vec::with_capacity(self.sizes.iter().copied().max().unwrap());
        let mut offset = 0;
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            next.clear();
            for (row, &b) in weights.chunks_exact(fan_in).zip(bias) {
                let z = b + row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>();
                next.push(if l + 1 < self.layers() { sigmoid(z) } else { z });
            }
            std::mem::swap(&mut cur, &mut next);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(cur)
    }

    fn scaled_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut x = inputs.to_owned();
        if let Some(s) = &self.scaling {
            for mut row in x.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = (*v - s.shift[k]) * s.scale[k];
                }
            }
        }
        x
    }

    /// Forward pass over a batch (one input per row).
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = self.scaled_batch(inputs);
        for l in 0..self.layers() {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w.t());
            z += &b;
            if l + 1 < self.layers() {
                z.mapv_inplace(sigmoid);
            }
            a = z;
        }
        a
    }

    /// Mean squared error over the batch and both output coordinates,
    /// `Σ‖f(x) − y‖² / (B·d_out)`, and its exact gradient.
    pub fn loss_and_gradient(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> (f64, Vec<f64>) {
        let batch = inputs.nrows();
        assert!(batch > 0, "empty batch");
        assert_eq!(inputs.ncols(), self.input_len());
        assert_eq!(targets.dim(), (batch, self.output_len()));

        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(self.scaled_batch(inputs));
        for l in 0..self.layers() {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w.t());
            z += &b;
            if l + 1 < self.layers() {
                z.mapv_inplace(sigmoid);
            }
            acts.push(z);
        }

        let mut delta = acts.pop().unwrap() - targets;
        let n_out = (batch * self.output_len()) as f64;
        let loss = delta.iter().map(|d| d * d).sum::<f64>() / n_out;
        delta *= 2.0 / n_out;

        let mut grads = vec![0.0; self.params.len()];
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offset(l);
            let a_prev = &acts[l];
            let gw = delta.t().dot(a_prev);
            grads[start..start + fan_in * fan_out].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = delta.sum_axis(Axis(0));
            grads[start + fan_in * fan_out..start + fan_in * fan_out + fan_out].copy_from_slice(gb.as_slice().unwrap());
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut back = delta.dot(&w);
                back.zip_mut_with(a_prev, |d, &a| *d *= a * (1.0 - a));
                delta = back;
            }
        }
        (loss, grads)
    }

    /// Versioned text form; parameters carry 17 significant digits.
    pub fn to_text(&self, config_hash: &str) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let mut out = String::with_capacity(self.params.len() * 25 + 256);
        writeln!(
            out,
            "# {MAGIC} v1 layers={} scaled={} config={config_hash}",
            sizes.join(","),
            self.scaling.is_some()
        )
        .unwrap();
        let mut line = |label: &str, values: &[f64]| {
            out.push_str(label);
            for v in values {
                write!(out, " {v:.16e}").unwrap();
            }
            out.push('\n');
        };
        if let Some(s) = &self.scaling {
            line("shift", &s.shift);
            line("scale", &s.scale);
        }
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offset(l);
            line("w", &self.params[start..start + fan_in * fan_out]);
            line("b", &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out]);
        }
        out
    }

    /// Parses [`MlpModel::to_text`] output; returns the model and the config
    /// hash from its header.
    pub fn from_text(text: &str, origin: &Path) -> Result<(MlpModel, String)> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty model file".into()))?;
        let fields = parse_header(header, MAGIC).map_err(|m| err(1, m))?;
        let get = |key: &str| {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| err(1, format!("header lacks `{key}`")))
        };
        let sizes = get("layers")?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(1, format!("bad layers: {e}")))?;
        let scaled = get("scaled")? == "true";
        let hash = get("config")?.to_string();

        let mut shift = None;
        let mut scale = None;
        let mut params = Vec::with_capacity(parameter_count(&sizes));
        for (idx, line) in lines {
            let mut words = line.split_ascii_whitespace();
            let label = words.next().unwrap_or_default();
            let values = words
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(idx + 1, format!("bad number: {e}")))?;
            match label {
                "shift" => shift = Some(values),
                "scale" => scale = Some(values),
                "w" | "b" => params.extend(values),
                other => return Err(err(idx + 1, format!("unknown record `{other}`"))),
            }
        }
        let scaling = match (scaled, shift, scale) {
            (false, _, _) => None,
            (true, Some(shift), Some(scale)) => Some(InputScaling { shift, scale }),
            _ => return Err(err(0, "scaled model lacks shift/scale records".into())),
        };
        let model = MlpModel::from_parts(sizes, params, scaling).map_err(|e| err(0, e.to_string()))?;
        Ok((model, hash))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(path, self.to_text(config_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(MlpModel, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MlpModel::from_text(&text, path)
    }
}

pub fn mlp_forward(model: &MlpModel, input: &[f64]) -> Result<Vec<f64>> {
    model.forward(input)
}

/// Loss and gradient over a batch of `(input, target)` rows; see
/// [`MlpModel::loss_and_gradient`].
pub fn mlp_gradient(model: &MlpModel, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
    if inputs.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if inputs.ncols() != model.input_len() {
        return Err(Error::DimensionMismatch {
            expected: model.input_len(),
            actual: inputs.ncols(),
        });
    }
    if targets.dim() != (inputs.nrows(), model.output_len()) {
        return Err(Error::invalid(format!(
            "targets must be {} × {}",
            inputs.nrows(),
            model.output_len()
        )));
    }
    Ok(model.loss_and_gradient(inputs, targets))
}
