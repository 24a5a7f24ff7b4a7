//! Open-loop comparison of surrogate rollouts against the plant under
//! held-out random excitation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_trajectory, random_excitation, trajectory_draw, RegimeMode, Trajectory};
use crate::error::{Error, Result};
use crate::fml::{rollout, FlowMapModel, MemoryWindow};
use crate::plant::make_plant;
use crate::scalar::Scalar;

/// Per-regime open-loop error summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopError {
    pub regime: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub rmse_cd: f64,
    pub rmse_cl: f64,
    /// Held-out standard deviation of each channel.
    pub std_cd: f64,
    pub std_cl: f64,
}

impl OpenLoopError {
    pub fn nrmse_cd(&self) -> f64 {
        self.rmse_cd / self.std_cd
    }

    pub fn nrmse_cl(&self) -> f64 {
        self.rmse_cl / self.std_cl
    }
}

/// Held-out trajectories long enough to fill the memory and roll out `steps`.
pub fn held_out_trajectories<T: Scalar>(
    r: f64,
    n_traj: usize,
    n_m: usize,
    steps: usize,
    dt: f64,
    t_spin: f64,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    if n_traj == 0 {
        return Err(Error::Empty("held-out trajectory count"));
    }
    let params = make_plant(T::lit(r))?;
    let n_step = n_m + steps;
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let (_, s) = trajectory_draw(seed, i, RegimeMode::Fixed { r });
            let signal = random_excitation(n_step, s);
            generate_trajectory(&params, &signal, T::lit(n_step as f64 * dt), T::lit(dt), T::lit(t_spin))
        })
        .collect()
}

/// Rolls the surrogate out from the first `n_M+1` samples of each
/// trajectory with the recorded controls and compares with the plant.
pub fn open_loop_error<T: Scalar>(model: &FlowMapModel<T>, trajs: &[Trajectory<T>], steps: usize) -> Result<OpenLoopError> {
    let n_m = model.n_memory();
    if trajs.is_empty() {
        return Err(Error::Empty("held-out trajectories"));
    }
    let mut se = [0.0f64; 2];
    let mut count = 0usize;
    let mut vals: [Vec<f64>; 2] = Default::default();
    for tr in trajs {
        if tr.n_step() < n_m + steps {
            return Err(Error::Segment { needed: n_m + steps, available: tr.n_step() });
        }
        let window = MemoryWindow::new(tr.v[..=n_m].to_vec(), tr.u[..n_m].to_vec())?;
        let preds = rollout(model, &window, &tr.u[n_m..n_m + steps])?;
        for (k, p) in preds.iter().enumerate() {
            let truth = tr.v[n_m + 1 + k];
            se[0] += (p.c_d - truth.c_d).as_f64().powi(2);
            se[1] += (p.c_l - truth.c_l).as_f64().powi(2);
            count += 1;
        }
        for v in &tr.v[n_m + 1..=n_m + steps] {
            vals[0].push(v.c_d.as_f64());
            vals[1].push(v.c_l.as_f64());
        }
    }
    let std = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    Ok(OpenLoopError {
        regime: trajs[0].r.as_f64(),
        trajectories: trajs.len(),
        steps,
        rmse_cd: (se[0] / count as f64).sqrt(),
        rmse_cl: (se[1] / count as f64).sqrt(),
        std_cd: std(&vals[0]),
        std_cl: std(&vals[1]),
    })
}
