//! Windowed averages, the drag/lift cost, and drag-reduction percentages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sign0, Scalar};

/// Averaging window length (time units).
pub const T_WINDOW: f64 = 5.0;
/// Lift penalty weight.
pub const OMEGA_L: f64 = 0.2;

/// Parameters of `J = ⟨c_d⟩_T + ω_L·|⟨c_l⟩_T|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub window: f64,
    pub omega_l: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            window: T_WINDOW,
            omega_l: OMEGA_L,
        }
    }
}

impl CostParams {
    /// Window length in samples, `T/Δt`, which must be integral.
    pub fn window_samples(&self, dt: f64) -> Result<usize> {
        window_len(self.window, dt)
    }
}

pub fn window_len(window: f64, dt: f64) -> Result<usize> {
    let ratio = window / dt;
    let n = ratio.round();
    if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * n {
        return Err(Error::Config(format!(
            "averaging window {window} is not a positive multiple of the sample step {dt}"
        )));
    }
    Ok(n as usize)
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Trailing moving average over `window/dt` samples; early entries average
/// whatever history is available.
pub fn moving_average<T: Scalar>(series: &[T], window: f64, dt: f64) -> Result<Vec<T>> {
    if series.is_empty() {
        return Err(Error::Empty("series"));
    }
    let n = window_len(window, dt)?;
    Ok((0..series.len())
        .map(|k| mean(&series[(k + 1).saturating_sub(n)..=k]))
        .collect())
}

/// `mean(cd) + ω_L·|mean(cl)|`.
pub fn cost_j<T: Scalar>(cd_window: &[T], cl_window: &[T], omega_l: T) -> Result<T> {
    if cd_window.len() != cl_window.len() {
        return Err(Error::Dimension {
            what: "cost windows",
            expected: cd_window.len(),
            got: cl_window.len(),
        });
    }
    if cd_window.is_empty() {
        return Err(Error::Empty("cost window"));
    }
    Ok(mean(cd_window) + omega_l * mean(cl_window).abs())
}

/// Gradient of [`cost_j`] with respect to one `c_d` and one `c_l` sample.
pub fn cost_j_sample_grad<T: Scalar>(cl_sum: T, len: usize, omega_l: T) -> (T, T) {
    let inv = T::one() / T::from_usize_lossy(len);
    (inv, omega_l * sign0(cl_sum) * inv)
}

/// `100·(baseline − controlled)/baseline`.
pub fn reduction_pct(baseline_mean: f64, controlled_mean: f64) -> f64 {
    100.0 * (baseline_mean - controlled_mean) / baseline_mean
}
