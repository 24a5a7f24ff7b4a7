//! Multi-step (recurrent) training of the flow map with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_segment, Dataset, TrainingSegment};
use crate::error::{Error, Result};
use crate::fml::flowmap::{batch_loss_and_grad, input_width, FlowMapModel, Normalization};
use crate::fml::mlp::Mlp;
use crate::optim::Adam;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Recurrent steps in the loss.
    pub n_r: usize,
    /// Epochs; each epoch samples fresh segments and performs
    /// `max(1, N_sim·n_B / batch_size)` updates.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-update exponential decay of the learning rate.
    pub decay: f64,
    /// Segments drawn per trajectory per epoch; 0 picks the smallest value
    /// with `N_sim·n_B ≥ batch_size`.
    pub n_b: usize,
    pub seed: u64,
    /// Record the loss every this many updates.
    pub log_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: 20,000 updates at batch 1024.
    pub fn desk() -> Self {
        Self {
            n_r: 3,
            epochs: 20_000,
            batch_size: 1024,
            learning_rate: 5e-4,
            decay: 0.9999,
            n_b: 0,
            seed: 0,
            log_every: 100,
        }
    }

    /// Original full-scale schedule: 100,000 epochs at batch 4,096.
    pub fn full() -> Self {
        Self {
            epochs: 100_000,
            batch_size: 4096,
            ..Self::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::Config("n_R must be ≥ 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be ≥ 0".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(update index, batch loss)` samples.
    pub loss_curve: Vec<(usize, f64)>,
    pub updates: usize,
}

/// Network widths `[3(n_M+1), hidden…, 2]`.
pub fn flowmap_widths(n_m: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(input_width(n_m))
        .chain(hidden.iter().copied())
        .chain(std::iter::once(2))
        .collect()
}

/// Trains a flow map with memory `n_m` and the given hidden widths.
pub fn train_flowmap<T: Scalar>(
    dataset: &Dataset<T>,
    n_m: usize,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<(FlowMapModel<T>, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let norm = Normalization::from_dataset(dataset)?;
    let mlp = Mlp::new_random(&flowmap_widths(n_m, hidden), &mut rng)?;
    let model = FlowMapModel::new(mlp, n_m, T::lit(dataset.meta.dt), norm)?;
    train_from(model, dataset, config, &mut rng)
}

/// Continues training an existing model.
pub fn train_from<T: Scalar>(
    mut model: FlowMapModel<T>,
    dataset: &Dataset<T>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(FlowMapModel<T>, TrainReport)> {
    config.validate()?;
    let n_m = model.n_memory();
    let n_sim = dataset.len();
    let n_b = if config.n_b == 0 {
        config.batch_size.div_ceil(n_sim)
    } else {
        config.n_b
    };
    let n_data = n_sim * n_b;
    let per_epoch = (n_data / config.batch_size).max(1);
    let batch = config.batch_size.min(n_data);

    let mut adam = Adam::<T>::default();
    let mut report = TrainReport {
        loss_curve: Vec::new(),
        updates: 0,
    };
    let decay = T::lit(config.decay);
    let mut lr = T::lit(config.learning_rate);
    let mut segments: Vec<TrainingSegment<T>> = Vec::with_capacity(n_data);
    for epoch in 0..config.epochs {
        segments.clear();
        for traj in &dataset.trajectories {
            for _ in 0..n_b {
                segments.push(sample_segment(traj, n_m, config.n_r, rng)?);
            }
        }
        segments.shuffle(rng);
        for mb in segments.chunks(batch).take(per_epoch) {
            let refs: Vec<&TrainingSegment<T>> = mb.iter().collect();
            let (loss, grads) = batch_loss_and_grad(&model, &refs)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss} at update {} (epoch {epoch})",
                    report.updates
                )));
            }
            if report.updates.is_multiple_of(config.log_every.max(1)) {
                report.loss_curve.push((report.updates, loss.as_f64()));
                log::debug!("update {} loss {:.3e} lr {:.3e}", report.updates, loss, lr);
            }
            let gslices = grads.slices();
            adam.step(&mut model.mlp_mut().param_slices_mut(), &gslices, lr);
            lr *= decay;
            report.updates += 1;
        }
    }
    Ok((model, report))
}
