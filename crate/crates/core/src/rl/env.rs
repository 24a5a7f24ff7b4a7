//! Control MDP built on the flow-map surrogate. No plant is involved: the
//! transition is one flow-map step and the reward is the negative windowed
//! cost on the surrogate's own predictions.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{check_control, Error, Result};
use crate::fml::{flowmap_step, FlowMapModel, MemoryWindow};
use crate::harness::metrics::{cost_j, CostParams};
use crate::plant::{spinup, PlantParams, QoiSample};
use crate::scalar::Scalar;

/// Uncontrolled histories episodes start from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinupPool<T> {
    pub entries: Vec<Vec<QoiSample<T>>>,
}

impl<T: Scalar> SpinupPool<T> {
    /// One spinup history per entry of `t_spins`, each `h0` samples long.
    /// Different spinup durations give different shedding phases.
    pub fn from_plant(params: &PlantParams<T>, t_spins: &[T], h0: usize, dt: T) -> Result<Self> {
        let entries = t_spins
            .iter()
            .map(|&t| spinup(params, t, h0, dt).map(|h| h.v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// Pool built from several plants (e.g. one per training regime).
    pub fn from_plants(plants: &[PlantParams<T>], t_spins: &[T], h0: usize, dt: T) -> Result<Self> {
        let mut entries = Vec::new();
        for p in plants {
            entries.extend(Self::from_plant(p, t_spins, h0, dt)?.entries);
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Surrogate-MDP state: the memory window plus the reward-averaging buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct RlState<T> {
    pub window: MemoryWindow<T>,
    pub cd_buffer: VecDeque<T>,
    pub cl_buffer: VecDeque<T>,
    /// Control applied on the previous step (`u_{n−1}`).
    pub last_u: T,
}

impl<T: Scalar> RlState<T> {
    /// Policy input `(V_n … V_{n−n_M}; u_{n−1} … u_{n−n_M})`, length `3n_M+2`.
    pub fn features(&self) -> Vec<T> {
        self.window.flatten()
    }

    /// Advances the window and reward buffers after `u` produced `v`.
    pub fn record(&mut self, v: QoiSample<T>, u: T) {
        self.window.advance(v, u);
        self.push(v);
        self.last_u = u;
    }

    fn push(&mut self, v: QoiSample<T>) {
        self.cd_buffer.pop_front();
        self.cd_buffer.push_back(v.c_d);
        self.cl_buffer.pop_front();
        self.cl_buffer.push_back(v.c_l);
    }

    /// Current windowed cost `J`.
    pub fn cost(&self, omega_l: T) -> Result<T> {
        let cd: Vec<T> = self.cd_buffer.iter().copied().collect();
        let cl: Vec<T> = self.cl_buffer.iter().copied().collect();
        cost_j(&cd, &cl, omega_l)
    }

    pub fn windowed_cd(&self) -> T {
        self.cd_buffer.iter().copied().sum::<T>() / T::from_usize_lossy(self.cd_buffer.len())
    }
}

/// Starts an episode from a randomly chosen uncontrolled history.
pub fn env_reset<T: Scalar, R: Rng + ?Sized>(
    pool: &SpinupPool<T>,
    n_m: usize,
    window_samples: usize,
    rng: &mut R,
) -> Result<RlState<T>> {
    if pool.is_empty() {
        return Err(Error::Empty("spinup pool"));
    }
    let hist = &pool.entries[rng.random_range(0..pool.entries.len())];
    state_from_history(hist, n_m, window_samples)
}

/// State whose window and buffers are the tail of an uncontrolled history.
pub fn state_from_history<T: Scalar>(hist: &[QoiSample<T>], n_m: usize, window_samples: usize) -> Result<RlState<T>> {
    if hist.len() < window_samples.max(n_m + 1) {
        return Err(Error::InsufficientHistory(format!(
            "history of {} samples cannot fill window {n_m}+1 and reward buffer {window_samples}",
            hist.len()
        )));
    }
    let zeros = vec![T::zero(); n_m];
    let window = MemoryWindow::new(hist[hist.len() - n_m - 1..].to_vec(), zeros)?;
    let tail = &hist[hist.len() - window_samples..];
    Ok(RlState {
        window,
        cd_buffer: tail.iter().map(|v| v.c_d).collect(),
        cl_buffer: tail.iter().map(|v| v.c_l).collect(),
        last_u: T::zero(),
    })
}

/// Exponential action smoother `u_n = (1−α)·u_{n−1} + α·a_n`, evaluated as
/// `u_{n−1} + α·(a_n − u_{n−1})` so a constant action is an exact fixed point.
#[inline]
pub fn smooth_action<T: Scalar>(u_prev: T, action: T, alpha: T) -> T {
    let u = u_prev + alpha * (action - u_prev);
    u.max(-T::one()).min(T::one())
}

/// One surrogate transition under raw action `action`. Returns the next
/// state and the reward `−J` on the updated buffers.
pub fn env_step<T: Scalar>(
    model: &FlowMapModel<T>,
    state: &RlState<T>,
    action: T,
    alpha: T,
    cost: &CostParams,
) -> Result<(RlState<T>, T)> {
    check_control(action.as_f64())?;
    let u = smooth_action(state.last_u, action, alpha).max(-T::one()).min(T::one());
    let v = flowmap_step(model, &state.window, u)?;
    let mut next = state.clone();
    next.record(v, u);
    let reward = -next.cost(T::lit(cost.omega_l))?;
    Ok((next, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fml::{Mlp, Normalization};
    use crate::plant::make_plant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool() -> SpinupPool<f64> {
        let p = make_plant(300.0).unwrap();
        SpinupPool::from_plant(&p, &[100.0, 100.5, 101.0], 60, 0.1).unwrap()
    }

    #[test]
    fn reset_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = env_reset(&pool(), 20, 50, &mut rng).unwrap();
        assert!(s.window.controls().iter().all(|&u| u == 0.0));
        assert_eq!(s.cd_buffer.len(), 50);
        assert_eq!(s.features().len(), 62);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(env_reset(&pool(), 20, 50, &mut a).unwrap(), env_reset(&pool(), 20, 50, &mut b).unwrap());
        let empty = SpinupPool::<f64> { entries: vec![] };
        assert!(matches!(env_reset(&empty, 20, 50, &mut a), Err(Error::Empty(_))));
    }

    #[test]
    fn smoother() {
        assert_eq!(smooth_action(0.0, 1.0, 0.5), 0.5);
        let mut u = 0.0;
        for k in 1..=30 {
            u = smooth_action(u, 0.8, 0.5);
            let expect = 0.8 * (1.0 - 0.5f64.powi(k));
            assert!((u - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_buffer_reward() {
        let n_m = 2;
        let norm = Normalization::<f64> { mean: [1.3, 0.0, 0.0], std: [0.1, 0.8, 0.58] };
        let model = FlowMapModel::new(Mlp::zeros(&[9, 4, 2]).unwrap(), n_m, 0.1, norm).unwrap();
        let hist = vec![QoiSample::new(1.3, 0.0); 60];
        let s = state_from_history(&hist, n_m, 50).unwrap();
        let (next, r) = env_step(&model, &s, 1.0, 0.5, &CostParams::default()).unwrap();
        assert!((r + 1.3).abs() < 1e-12);
        assert_eq!(next.last_u, 0.5);
        assert_eq!(next.window.controls().back(), Some(&0.5));
        assert!(env_step(&model, &s, 1.2, 0.5, &CostParams::default()).is_err());
    }
}
