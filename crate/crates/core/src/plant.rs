//! Ground-truth plant: a self-excited wake oscillator with drag/lift observables.
//!
//! The oscillator displacement `q` follows
//!
//! ```text
//! dq/dt = p
//! dp/dt = eps(r)·omega(r)·(1 − q²)·p − omega(r)²·q + b·omega(r)²·u
//! ```
//!
//! with `omega(r) = 2π·(0.15 + 0.0002·r)` and `eps(r) = 0.2 + r/1000`. The
//! observables are `c_d = c0 + c2·q²` and `c_l = kappa_L·q`, so lift
//! oscillates at the shedding frequency and drag at twice that frequency.
//! Quenching the limit cycle removes the drag excess `c2·⟨q²⟩`.
//!
//! The regime parameter `r` only enters through `omega` and `eps`, which are
//! cached at construction. Reading `r` back goes through [`PlantParams::regime`],
//! which is counted by [`probe`] so tests can verify controllers never see it.

use serde::{Deserialize, Serialize};

use crate::error::{check_control, Error, Result};
use crate::scalar::Scalar;

/// Default spinup duration (time units).
pub const DEFAULT_T_SPIN: f64 = 100.0;
/// Default number of uncontrolled samples returned by [`spinup`].
pub const DEFAULT_H0: usize = 60;
/// Initial displacement for the sudden-start spinup.
pub const SPINUP_Q0: f64 = 0.1;
/// Default sample step.
pub const DEFAULT_DT: f64 = 0.1;

/// Call-count instrumentation for the plant.
///
/// Counters are thread-local: a closed-loop run and its controller execute
/// on one thread, so the deltas observed around a controller call are exact
/// even when other tests step plants concurrently.
pub mod probe {
    use std::cell::Cell;

    thread_local! {
        static PLANT_STEPS: Cell<u64> = const { Cell::new(0) };
        static REGIME_READS: Cell<u64> = const { Cell::new(0) };
    }

    /// Number of [`super::plant_step`] calls on this thread.
    pub fn plant_steps() -> u64 {
        PLANT_STEPS.with(Cell::get)
    }

    /// Number of [`super::PlantParams::regime`] reads on this thread.
    pub fn regime_reads() -> u64 {
        REGIME_READS.with(Cell::get)
    }

    pub(super) fn bump_steps() {
        PLANT_STEPS.with(|c| c.set(c.get() + 1));
    }

    pub(super) fn bump_regime() {
        REGIME_READS.with(|c| c.set(c.get() + 1));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams<T> {
    r: T,
    pub c0: T,
    pub c2: T,
    pub kappa_l: T,
    pub b: T,
    pub dt_internal: T,
    omega: T,
    eps: T,
}

impl<T: Scalar> PlantParams<T> {
    /// Hidden regime parameter. Every read is counted by [`probe::regime_reads`].
    pub fn regime(&self) -> T {
        probe::bump_regime();
        self.r
    }

    /// Shedding angular frequency `2π·(0.15 + 0.0002·r)`.
    pub fn omega(&self) -> T {
        self.omega
    }

    /// Nonlinearity `0.2 + r/1000`.
    pub fn eps(&self) -> T {
        self.eps
    }

    /// Same plant with a different integrator substep.
    pub fn with_dt_internal(mut self, dt_internal: T) -> Result<Self> {
        if !(dt_internal > T::zero()) {
            return Err(Error::Config(format!(
                "internal step must be positive, got {dt_internal}"
            )));
        }
        self.dt_internal = dt_internal;
        Ok(self)
    }

    /// Number of internal substeps per sample step, if `dt` is an integer
    /// multiple of the internal step.
    pub fn substeps(&self, dt: T) -> Result<usize> {
        let ratio = (dt / self.dt_internal).as_f64();
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Config(format!(
                "sample step {dt} is not an integer multiple of internal step {}",
                self.dt_internal
            )));
        }
        Ok(n as usize)
    }

    #[inline]
    fn rhs(&self, q: T, p: T, u: T) -> (T, T) {
        let w2 = self.omega * self.omega;
        (
            p,
            self.eps * self.omega * (T::one() - q * q) * p - w2 * q + self.b * w2 * u,
        )
    }

    #[inline]
    fn rk4(&self, q: T, p: T, u: T, h: T) -> (T, T) {
        let half = T::lit(0.5) * h;
        let (k1q, k1p) = self.rhs(q, p, u);
        let (k2q, k2p) = self.rhs(q + half * k1q, p + half * k1p, u);
        let (k3q, k3p) = self.rhs(q + half * k2q, p + half * k2p, u);
        let (k4q, k4p) = self.rhs(q + h * k3q, p + h * k3p, u);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        (
            q + sixth * (k1q + two * k2q + two * k3q + k4q),
            p + sixth * (k1p + two * k2p + two * k3p + k4p),
        )
    }
}

/// Builds the calibrated plant for regime `r`.
pub fn make_plant<T: Scalar>(r: T) -> Result<PlantParams<T>> {
    if !(r > T::zero()) || !r.is_finite() {
        return Err(Error::InvalidRegime(r.to_f64().unwrap_or(f64::NAN)));
    }
    let omega = T::lit(2.0 * std::f64::consts::PI) * (T::lit(0.15) + T::lit(0.0002) * r);
    let eps = T::lit(0.2) + r / T::lit(1000.0);
    Ok(PlantParams {
        r,
        c0: T::one(),
        c2: T::lit(0.15),
        kappa_l: T::lit(0.6),
        b: T::lit(0.4),
        dt_internal: T::lit(0.002),
        omega,
        eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState<T> {
    pub q: T,
    pub p: T,
    pub t: T,
}

impl<T: Scalar> PlantState<T> {
    pub fn new(q: T, p: T) -> Self {
        Self { q, p, t: T::zero() }
    }
}

/// One drag/lift observation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QoiSample<T> {
    pub c_d: T,
    pub c_l: T,
}

impl<T: Scalar> QoiSample<T> {
    pub fn new(c_d: T, c_l: T) -> Self {
        Self { c_d, c_l }
    }

    pub fn is_finite(&self) -> bool {
        self.c_d.is_finite() && self.c_l.is_finite()
    }
}

/// Advances the plant by one sample step `dt` with the control held constant.
pub fn plant_step<T: Scalar>(
    params: &PlantParams<T>,
    state: &PlantState<T>,
    u: T,
    dt: T,
) -> Result<PlantState<T>> {
    check_control(u.as_f64())?;
    let n = params.substeps(dt)?;
    probe::bump_steps();
    let (mut q, mut p) = (state.q, state.p);
    for _ in 0..n {
        (q, p) = params.rk4(q, p, u, params.dt_internal);
    }
    Ok(PlantState { q, p, t: state.t + dt })
}

/// Drag and lift for the current oscillator displacement.
pub fn observe<T: Scalar>(params: &PlantParams<T>, state: &PlantState<T>) -> QoiSample<T> {
    QoiSample {
        c_d: params.c0 + params.c2 * state.q * state.q,
        c_l: params.kappa_l * state.q,
    }
}

/// Plant state after spinup plus the trailing uncontrolled history.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinupHistory<T> {
    pub state: PlantState<T>,
    /// Observations at `t_spin − (H0−1)·dt, …, t_spin`, oldest first.
    pub v: Vec<QoiSample<T>>,
    /// Controls applied at the same instants (all zero).
    pub u: Vec<T>,
}

/// Runs the uncontrolled plant from the sudden-start state `(0.1, 0)` to
/// `t_spin`, returning the final state and the last `h0` samples.
pub fn spinup<T: Scalar>(
    params: &PlantParams<T>,
    t_spin: T,
    h0: usize,
    dt: T,
) -> Result<SpinupHistory<T>> {
    if h0 == 0 {
        return Err(Error::InsufficientHistory("history length must be ≥ 1".into()));
    }
    let steps_f = (t_spin / dt).as_f64();
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::Config(format!(
            "spinup duration {t_spin} is not a multiple of the sample step {dt}"
        )));
    }
    let steps = steps as usize;
    if steps + 1 < h0 || t_spin < T::from_usize_lossy(h0) * dt {
        return Err(Error::InsufficientHistory(format!(
            "spinup of {t_spin} time units cannot provide {h0} samples at step {dt}"
        )));
    }
    let mut state = PlantState::new(T::lit(SPINUP_Q0), T::zero());
    let mut v = Vec::with_capacity(h0);
    for k in 0..=steps {
        if k + h0 > steps {
            v.push(observe(params, &state));
        }
        if k < steps {
            state = plant_step(params, &state, T::zero(), dt)?;
        }
    }
    Ok(SpinupHistory {
        state,
        v,
        u: vec![T::zero(); h0],
    })
}


/// Trajectory of the plant under `controls` (one per sample step) together
/// with forward sensitivities: `sens[k][j] = ∂q_{k+1}/∂u_j` for `j ≤ k`.
///
/// Sensitivities are integrated with the same RK4 substeps as the state, so
/// they are the exact derivatives of the discrete map. Counts as one plant
/// step per control.
#[allow(clippy::type_complexity)]
pub fn rollout_with_sensitivity<T: Scalar>(
    params: &PlantParams<T>,
    state: &PlantState<T>,
    controls: &[T],
    dt: T,
) -> Result<(Vec<PlantState<T>>, Vec<Vec<T>>)> {
    for &u in controls {
        check_control(u.as_f64())?;
    }
    let n_sub = params.substeps(dt)?;
    let n = controls.len();
    let h = params.dt_internal;
    let half = T::lit(0.5) * h;
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let w = params.omega;
    let w2 = w * w;
    let ew = params.eps * w;
    let bw2 = params.b * w2;

    // Augmented right-hand side for (q, p, sq[0..n], sp[0..n]); `active` is
    // the control index currently applied.
    let rhs = |q: T, p: T, sq: &[T], sp: &[T], u: T, active: usize, dq: &mut [T], dp: &mut [T]| -> (T, T) {
        let fq = p;
        let fp = ew * (T::one() - q * q) * p - w2 * q + bw2 * u;
        let dfp_dq = -two * ew * q * p - w2;
        let dfp_dp = ew * (T::one() - q * q);
        for j in 0..=active {
            dq[j] = sp[j];
            dp[j] = dfp_dq * sq[j] + dfp_dp * sp[j] + if j == active { bw2 } else { T::zero() };
        }
        (fq, fp)
    };

    let mut q = state.q;
    let mut p = state.p;
    let mut t = state.t;
    let mut sq = vec![T::zero(); n];
    let mut sp = vec![T::zero(); n];
    let mut k_q = vec![vec![T::zero(); n]; 4];
    let mut k_p = vec![vec![T::zero(); n]; 4];
    let mut tq = vec![T::zero(); n];
    let mut tp = vec![T::zero(); n];
    let mut states = Vec::with_capacity(n);
    let mut sens = Vec::with_capacity(n);
    for (k, &u) in controls.iter().enumerate() {
        probe::bump_steps();
        let m = k + 1;
        for _ in 0..n_sub {
            let (k1q, k1p) = rhs(q, p, &sq, &sp, u, k, &mut k_q[0], &mut k_p[0]);
            for j in 0..m {
                tq[j] = sq[j] + half * k_q[0][j];
                tp[j] = sp[j] + half * k_p[0][j];
            }
            let (k2q, k2p) = rhs(q + half * k1q, p + half * k1p, &tq, &tp, u, k, &mut k_q[1], &mut k_p[1]);
            for j in 0..m {
                tq[j] = sq[j] + half * k_q[1][j];
                tp[j] = sp[j] + half * k_p[1][j];
            }
            let (k3q, k3p) = rhs(q + half * k2q, p + half * k2p, &tq, &tp, u, k, &mut k_q[2], &mut k_p[2]);
            for j in 0..m {
                tq[j] = sq[j] + h * k_q[2][j];
                tp[j] = sp[j] + h * k_p[2][j];
            }
            let (k4q, k4p) = rhs(q + h * k3q, p + h * k3p, &tq, &tp, u, k, &mut k_q[3], &mut k_p[3]);
            q += sixth * (k1q + two * k2q + two * k3q + k4q);
            p += sixth * (k1p + two * k2p + two * k3p + k4p);
            for j in 0..m {
                sq[j] += sixth * (k_q[0][j] + two * k_q[1][j] + two * k_q[2][j] + k_q[3][j]);
                sp[j] += sixth * (k_p[0][j] + two * k_p[1][j] + two * k_p[2][j] + k_p[3][j]);
            }
        }
        t += dt;
        states.push(PlantState { q, p, t });
        sens.push(sq[..m].to_vec());
    }
    Ok((states, sens))
}
