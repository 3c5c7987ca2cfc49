use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::flock::LOCAL_VIEW_LEN;
use crate::nn::{AdamParameters, AdamState, InputScaling, MlpModel, TrainingSample, DNC_LAYERS};
use crate::seed::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds weight initialization, the validation split and shuffling.
    pub seed: u64,
    /// Share of samples held out for loss monitoring only.
    pub validation_fraction: f64,
    /// Standardize input features with training-set statistics.
    pub normalize_inputs: bool,
    /// Also train on every sample's mirror image.
    pub mirror: bool,
    /// Return the parameters of the epoch with the lowest validation loss
    /// instead of the last ones.
    pub keep_best: bool,
    pub adam: AdamParameters,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 500,
            epochs: 1000,
            seed: 0,
            validation_fraction: 0.05,
            normalize_inputs: false,
            mirror: false,
            keep_best: false,
            adam: AdamParameters::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train: f64,
    pub validation: Option<f64>,
}

fn pack(samples: &[TrainingSample], idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let mut x = Array2::zeros((idx.len(), LOCAL_VIEW_LEN));
    let mut y = Array2::zeros((idx.len(), 2));
    for (r, &i) in idx.iter().enumerate() {
        let s = &samples[i];
        x.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&s.input.features);
        y[[r, 0]] = s.label.x;
        y[[r, 1]] = s.label.y;
    }
    (x, y)
}

/// Mini-batch Adam on the mean squared error, starting from fresh weights.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<(MlpModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut model = MlpModel::dnc(&mut rng_for(cfg.seed, &[tag::TRAIN, 0]));
    let mut rng = rng_for(cfg.seed, &[tag::TRAIN, 1]);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let held_out = (samples.len() as f64 * cfg.validation_fraction) as usize;
    let held_out = if held_out == samples.len() { 0 } else { held_out };
    let (val_idx, train_idx) = order.split_at(held_out);
    let mut train_idx = train_idx.to_vec();

    // Mirror images of held-out samples stay out of training.
    let mut pool = samples.to_vec();
    if cfg.mirror {
        pool.extend(samples.iter().map(TrainingSample::mirrored));
        let n = samples.len();
        train_idx.extend(train_idx.clone().into_iter().map(|i| i + n));
    }
    let (x_all, y_all) = pack(&pool, &(0..pool.len()).collect::<Vec<_>>());
    drop(pool);
    if cfg.normalize_inputs {
        let rows = train_idx.iter().map(|&i| x_all.row(i).to_slice().unwrap());
        model.set_scaling(Some(InputScaling::standardize(rows, LOCAL_VIEW_LEN)))?;
    }
    let validation = (!val_idx.is_empty()).then(|| (x_all.select(Axis(0), val_idx), y_all.select(Axis(0), val_idx)));

    let mut opt = AdamState::new(model.params().len(), cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let x = x_all.select(Axis(0), batch);
            let y = y_all.select(Axis(0), batch);
            let (loss, grads) = model.loss_and_gradient(x.view(), y.view());
            total += loss * batch.len() as f64;
            opt.step(model.params_mut(), &grads)?;
        }
        let val = validation.as_ref().map(|(x, y)| {
            let out = model.forward_batch(x.view());
            (&out - y).iter().map(|d| d * d).sum::<f64>() / out.len() as f64
        });
        let entry = EpochLoss {
            epoch,
            train: total / train_idx.len() as f64,
            validation: val,
        };
        log::debug!("epoch {epoch}: train {:.6e} validation {:?}", entry.train, entry.validation);
        log.push(entry);
        if let (true, Some(v)) = (cfg.keep_best, val) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params().to_vec()));
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    debug_assert_eq!(model.sizes(), DNC_LAYERS);
    Ok((model, log))
}
