//! Receding-horizon control through a predictive model.
//!
//! Each plan minimizes the terminal cost `J(t_n + T_P)`: the windowed cost
//! evaluated on the last `T/Δt` samples, where the most recent `n_P` samples
//! are predictions under the planned controls and the rest are recorded.
//! The optimizer is projected Adam on the box `[-1, 1]^{n_P}` with a
//! linearly decaying step; the returned plan is the best iterate seen, so
//! its objective never exceeds the initial one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fml::{rollout, rollout_with_control_grad, FlowMapModel, MemoryWindow};
use crate::harness::metrics::CostParams;
use crate::plant::{self, observe, PlantParams, PlantState, QoiSample};
use crate::scalar::{sign0, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Prediction horizon in steps.
    pub n_p: usize,
    pub iterations: usize,
    /// Initial Adam step size; decays linearly to `step_size / iterations`.
    pub step_size: f64,
    pub warm_start: bool,
    pub cost: CostParams,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            n_p: 20,
            iterations: 50,
            step_size: 0.1,
            warm_start: true,
            cost: CostParams::default(),
        }
    }
}

impl MpcConfig {
    fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.iterations == 0 {
            return Err(Error::Config("MPC horizon and iteration count must be ≥ 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("MPC step size must be positive".into()));
        }
        Ok(())
    }
}

/// Model the planner optimizes through.
pub trait Predictor<T: Scalar> {
    /// Observations after each planned control, starting from the state
    /// described by `ctx`.
    fn predict(&self, ctx: &MpcPlanContext<T>, controls: &[T]) -> Result<Vec<QoiSample<T>>>;

    /// Predictions and the gradient of a scalar objective with respect to
    /// the controls, given `∂objective/∂prediction` from `cotangent`.
    #[allow(clippy::type_complexity)]
    fn predict_with_grad(
        &self,
        ctx: &MpcPlanContext<T>,
        controls: &[T],
        cotangent: &dyn Fn(&[QoiSample<T>]) -> Vec<QoiSample<T>>,
    ) -> Result<(Vec<QoiSample<T>>, Vec<T>)>;
}

impl<T: Scalar> Predictor<T> for FlowMapModel<T> {
    fn predict(&self, ctx: &MpcPlanContext<T>, controls: &[T]) -> Result<Vec<QoiSample<T>>> {
        rollout(self, &ctx.window, controls)
    }

    fn predict_with_grad(
        &self,
        ctx: &MpcPlanContext<T>,
        controls: &[T],
        cotangent: &dyn Fn(&[QoiSample<T>]) -> Vec<QoiSample<T>>,
    ) -> Result<(Vec<QoiSample<T>>, Vec<T>)> {
        rollout_with_control_grad(self, &ctx.window, controls, cotangent)
    }
}

/// The true plant used as its own predictor. Needs the plant state, so it
/// is only an oracle for measuring how much control authority exists.
#[derive(Debug, Clone)]
pub struct PlantOracle<T> {
    pub params: PlantParams<T>,
    pub state: PlantState<T>,
    pub dt: T,
}

impl<T: Scalar> Predictor<T> for PlantOracle<T> {
    fn predict(&self, _ctx: &MpcPlanContext<T>, controls: &[T]) -> Result<Vec<QoiSample<T>>> {
        let mut s = self.state;
        controls
            .iter()
            .map(|&u| {
                s = plant::plant_step(&self.params, &s, u, self.dt)?;
                Ok(observe(&self.params, &s))
            })
            .collect()
    }

    fn predict_with_grad(
        &self,
        _ctx: &MpcPlanContext<T>,
        controls: &[T],
        cotangent: &dyn Fn(&[QoiSample<T>]) -> Vec<QoiSample<T>>,
    ) -> Result<(Vec<QoiSample<T>>, Vec<T>)> {
        let (states, sens) = plant::rollout_with_sensitivity(&self.params, &self.state, controls, self.dt)?;
        let preds: Vec<_> = states.iter().map(|s| observe(&self.params, s)).collect();
        let d = cotangent(&preds);
        let mut grad = vec![T::zero(); controls.len()];
        for (k, s) in states.iter().enumerate() {
            // ∂c_d/∂q = 2·c2·q, ∂c_l/∂q = kappa_L
            let dq = d[k].c_d * T::lit(2.0) * self.params.c2 * s.q + d[k].c_l * self.params.kappa_l;
            for (j, g) in grad.iter_mut().enumerate().take(k + 1) {
                *g += dq * sens[k][j];
            }
        }
        Ok((preds, grad))
    }
}

/// Planner state carried between control steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlanContext<T> {
    pub window: MemoryWindow<T>,
    /// Most recent observations, oldest first, at least `T/Δt` long.
    pub recent: VecDeque<QoiSample<T>>,
    /// Last plan, used for warm starting.
    pub previous: Option<Vec<T>>,
    capacity: usize,
}

impl<T: Scalar> MpcPlanContext<T> {
    /// Context from an observed history, where `u_hist[k]` followed `v_hist[k]`.
    pub fn from_history(v_hist: &[QoiSample<T>], u_hist: &[T], n_m: usize, window_samples: usize) -> Result<Self> {
        if v_hist.len() < window_samples {
            return Err(Error::InsufficientHistory(format!(
                "cost window needs {window_samples} samples, history has {}",
                v_hist.len()
            )));
        }
        let window = MemoryWindow::from_history(v_hist, u_hist, n_m)?;
        Ok(Self {
            window,
            recent: v_hist[v_hist.len() - window_samples..].iter().copied().collect(),
            previous: None,
            capacity: window_samples,
        })
    }

    /// Records the observation that followed applying `u_used`.
    pub fn observe(&mut self, v_new: QoiSample<T>, u_used: T) {
        self.window.advance(v_new, u_used);
        self.recent.push_back(v_new);
        while self.recent.len() > self.capacity {
            self.recent.pop_front();
        }
    }
}

/// Terminal windowed cost of a plan's predictions.
pub fn terminal_objective<T: Scalar>(recent: &VecDeque<QoiSample<T>>, preds: &[QoiSample<T>], omega_l: T, window: usize) -> T {
    let (cd, cl, len, _) = terminal_sums(recent, preds, window);
    cd / len + omega_l * (cl / len).abs()
}

/// Sums over the last `window` samples of recorded ++ predicted, the
/// divisor, and how many predictions fall inside the window.
fn terminal_sums<T: Scalar>(recent: &VecDeque<QoiSample<T>>, preds: &[QoiSample<T>], window: usize) -> (T, T, T, usize) {
    let n_pred = preds.len().min(window);
    let n_rec = (window - n_pred).min(recent.len());
    let mut cd = T::zero();
    let mut cl = T::zero();
    for v in recent.iter().skip(recent.len() - n_rec).chain(&preds[preds.len() - n_pred..]) {
        cd += v.c_d;
        cl += v.c_l;
    }
    (cd, cl, T::from_usize_lossy(n_rec + n_pred), n_pred)
}

/// Result of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome<T> {
    pub controls: Vec<T>,
    pub initial_objective: T,
    pub final_objective: T,
    /// Objective at every iterate, starting with the initial sequence.
    pub trace: Vec<T>,
}

fn initial_sequence<T: Scalar>(ctx: &MpcPlanContext<T>, config: &MpcConfig) -> Vec<T> {
    match (&ctx.previous, config.warm_start) {
        (Some(prev), true) if !prev.is_empty() => {
            let mut u: Vec<T> = prev.iter().skip(1).copied().collect();
            let last = *prev.last().expect("nonempty");
            u.resize(config.n_p, last);
            u
        }
        _ => vec![T::zero(); config.n_p],
    }
}

/// Optimizes the control sequence over the horizon.
pub fn mpc_plan<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    ctx: &MpcPlanContext<T>,
    config: &MpcConfig,
) -> Result<PlanOutcome<T>> {
    config.validate()?;
    let window = ctx.capacity.max(1);
    let omega_l = T::lit(config.cost.omega_l);
    let n = config.n_p;

    let eval = |u: &[T]| -> Result<(T, Vec<T>)> {
        let cot = |preds: &[QoiSample<T>]| {
            let (_, cl, len, n_pred) = terminal_sums(&ctx.recent, preds, window);
            let dcd = T::one() / len;
            let dcl = omega_l * sign0(cl) / len;
            let first = preds.len() - n_pred;
            preds
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    if k >= first {
                        QoiSample::new(dcd, dcl)
                    } else {
                        QoiSample::default()
                    }
                })
                .collect()
        };
        let (preds, grad) = model.predict_with_grad(ctx, u, &cot)?;
        Ok((terminal_objective(&ctx.recent, &preds, omega_l, window), grad))
    };

    let mut u = initial_sequence(ctx, config);
    let (j0, mut grad) = eval(&u)?;
    if !j0.is_finite() {
        return Err(Error::Diverged(format!("non-finite MPC objective {j0}")));
    }
    let mut best = (j0, u.clone());
    let mut trace = vec![j0];
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    let mut m = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let iters = config.iterations;
    for it in 0..iters {
        let lr = T::lit(config.step_size * (iters - it) as f64 / iters as f64);
        let t = (it + 1) as i32;
        let (c1, c2) = (T::one() - b1.powi(t), T::one() - b2.powi(t));
        for i in 0..n {
            m[i] = b1 * m[i] + (T::one() - b1) * grad[i];
            v[i] = b2 * v[i] + (T::one() - b2) * grad[i] * grad[i];
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            u[i] = (u[i] - step).max(-T::one()).min(T::one());
        }
        let (j, g) = eval(&u)?;
        trace.push(j);
        if j < best.0 {
            best = (j, u.clone());
        }
        grad = g;
    }
    Ok(PlanOutcome {
        controls: best.1,
        initial_objective: j0,
        final_objective: best.0,
        trace,
    })
}

/// Plans, stores the plan for the next warm start, and returns the first
/// control together with the planning record.
pub fn mpc_act<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    ctx: &mut MpcPlanContext<T>,
    config: &MpcConfig,
) -> Result<(T, PlanOutcome<T>)> {
    let plan = mpc_plan(model, ctx, config)?;
    let u0 = plan.controls[0];
    ctx.previous = Some(plan.controls.clone());
    Ok((u0, plan))
}

/// Objective of a given control sequence, without optimizing.
pub fn evaluate_plan<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    ctx: &MpcPlanContext<T>,
    controls: &[T],
    config: &MpcConfig,
) -> Result<T> {
    let preds = model.predict(ctx, controls)?;
    Ok(terminal_objective(&ctx.recent, &preds, T::lit(config.cost.omega_l), ctx.capacity))
}
