//! Flow map with memory: `V_{n+1} = G(V_n, …, V_{n−n_M}; u_n, …, u_{n−n_M})`.
//!
//! The network input is the normalized concatenation, newest first, of the
//! `n_M+1` observations (each as `c_d, c_l`) followed by the `n_M+1`
//! controls. The network output is the normalized next observation.

use std::collections::VecDeque;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrainingSegment};
use crate::error::{check_control, Error, Result};
use crate::fml::mlp::{ForwardCache, Mlp, MlpGrads};
use crate::plant::QoiSample;
use crate::scalar::Scalar;

/// Per-channel standardization for `(c_d, c_l, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub mean: [T; 3],
    pub std: [T; 3],
}

impl<T: Scalar> Normalization<T> {
    pub const CD: usize = 0;
    pub const CL: usize = 1;
    pub const U: usize = 2;

    pub fn identity() -> Self {
        Self {
            mean: [T::zero(); 3],
            std: [T::one(); 3],
        }
    }

    /// Mean and population standard deviation of every observation and
    /// control in the dataset. Degenerate channels get unit scale.
    pub fn from_dataset(dataset: &Dataset<T>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut acc = [(0.0f64, 0.0f64, 0usize); 3];
        let mut push = |c: usize, x: f64| {
            acc[c].0 += x;
            acc[c].1 += x * x;
            acc[c].2 += 1;
        };
        for t in &dataset.trajectories {
            for v in &t.v {
                push(0, v.c_d.as_f64());
                push(1, v.c_l.as_f64());
            }
            for &u in &t.u {
                push(2, u.as_f64());
            }
        }
        let mut mean = [T::zero(); 3];
        let mut std = [T::one(); 3];
        for c in 0..3 {
            let (s, ss, n) = acc[c];
            let n = n.max(1) as f64;
            let m = s / n;
            let var = (ss / n - m * m).max(0.0);
            mean[c] = T::lit(m);
            if var.sqrt() > 1e-12 {
                std[c] = T::lit(var.sqrt());
            }
        }
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn norm(&self, channel: usize, x: T) -> T {
        (x - self.mean[channel]) / self.std[channel]
    }

    #[inline]
    pub fn denorm(&self, channel: usize, y: T) -> T {
        y * self.std[channel] + self.mean[channel]
    }

    #[inline]
    pub fn norm_v(&self, v: &QoiSample<T>) -> [T; 2] {
        [self.norm(Self::CD, v.c_d), self.norm(Self::CL, v.c_l)]
    }

    #[inline]
    pub fn denorm_v(&self, y: [T; 2]) -> QoiSample<T> {
        QoiSample::new(self.denorm(Self::CD, y[0]), self.denorm(Self::CL, y[1]))
    }

    fn check(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > T::zero()) || !s.is_finite())
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Format("normalization scales must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Observation/control history seen by the flow map and the controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryWindow<T> {
    /// `V_{n−n_M}, …, V_n` (newest last).
    v: VecDeque<QoiSample<T>>,
    /// `u_{n−n_M}, …, u_{n−1}` (newest last).
    u: VecDeque<T>,
}

impl<T: Scalar> MemoryWindow<T> {
    pub fn new(v: Vec<QoiSample<T>>, u: Vec<T>) -> Result<Self> {
        if v.len() != u.len() + 1 {
            return Err(Error::Dimension {
                what: "window observations vs controls + 1",
                expected: u.len() + 1,
                got: v.len(),
            });
        }
        for &x in &u {
            check_control(x.as_f64())?;
        }
        Ok(Self {
            v: v.into(),
            u: u.into(),
        })
    }

    /// Window made of the tail of a longer history, where `u_hist[k]` was
    /// applied right after `v_hist[k]`. Only controls strictly before the
    /// newest observation are used.
    pub fn from_history(v_hist: &[QoiSample<T>], u_hist: &[T], n_m: usize) -> Result<Self> {
        if v_hist.len() < n_m + 1 || u_hist.len() < n_m {
            return Err(Error::InsufficientHistory(format!(
                "need {} observations and {n_m} controls, have {} and {}",
                n_m + 1,
                v_hist.len(),
                u_hist.len()
            )));
        }
        let v = v_hist[v_hist.len() - n_m - 1..].to_vec();
        let u = u_hist[u_hist.len() - n_m..].to_vec();
        Self::new(v, u)
    }

    pub fn n_memory(&self) -> usize {
        self.u.len()
    }

    pub fn observations(&self) -> &VecDeque<QoiSample<T>> {
        &self.v
    }

    pub fn controls(&self) -> &VecDeque<T> {
        &self.u
    }

    pub fn newest(&self) -> QoiSample<T> {
        *self.v.back().expect("window holds n_M+1 ≥ 1 observations")
    }

    /// Most recently applied control, or zero when `n_M = 0`.
    pub fn last_control(&self) -> T {
        self.u.back().copied().unwrap_or_else(T::zero)
    }

    /// Drops the oldest observation and control and appends the new ones.
    pub fn advance(&mut self, v_new: QoiSample<T>, u_used: T) {
        self.v.pop_front();
        self.v.push_back(v_new);
        if !self.u.is_empty() {
            self.u.pop_front();
            self.u.push_back(u_used);
        }
    }

    /// `[c_d, c_l]` of `V_n … V_{n−n_M}` then `u_{n−1} … u_{n−n_M}`; length
    /// `3·n_M + 2`.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(3 * self.n_memory() + 2);
        for v in self.v.iter().rev() {
            out.push(v.c_d);
            out.push(v.c_l);
        }
        out.extend(self.u.iter().rev().copied());
        out
    }
}

/// Returns a copy of `window` advanced once.
pub fn advance_window<T: Scalar>(window: &MemoryWindow<T>, v_new: QoiSample<T>, u_used: T) -> MemoryWindow<T> {
    let mut w = window.clone();
    w.advance(v_new, u_used);
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapModel<T> {
    mlp: Mlp<T>,
    n_m: usize,
    dt: T,
    norm: Normalization<T>,
}

impl<T: Scalar> FlowMapModel<T> {
    pub fn new(mlp: Mlp<T>, n_m: usize, dt: T, norm: Normalization<T>) -> Result<Self> {
        let expected = input_width(n_m);
        if mlp.input_width() != expected {
            return Err(Error::Dimension {
                what: "flow-map input width 3(n_M+1)",
                expected,
                got: mlp.input_width(),
            });
        }
        if mlp.output_width() != 2 {
            return Err(Error::Dimension {
                what: "flow-map output width",
                expected: 2,
                got: mlp.output_width(),
            });
        }
        if !(dt > T::zero()) {
            return Err(Error::Config(format!("sample step must be positive, got {dt}")));
        }
        norm.check()?;
        Ok(Self { mlp, n_m, dt, norm })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn n_memory(&self) -> usize {
        self.n_m
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn norm(&self) -> &Normalization<T> {
        &self.norm
    }

    fn check_window(&self, window: &MemoryWindow<T>) -> Result<()> {
        if window.n_memory() != self.n_m {
            return Err(Error::Dimension {
                what: "window memory vs model n_M",
                expected: self.n_m,
                got: window.n_memory(),
            });
        }
        Ok(())
    }

    /// Normalized network input for predicting from `window` under `u_n`.
    pub fn input_vector(&self, window: &MemoryWindow<T>, u_n: T) -> Result<Vec<T>> {
        self.check_window(window)?;
        let mut x = Vec::with_capacity(input_width(self.n_m));
        for v in window.v.iter().rev() {
            x.extend(self.norm.norm_v(v));
        }
        x.push(self.norm.norm(Normalization::<T>::U, u_n));
        x.extend(window.u.iter().rev().map(|&u| self.norm.norm(Normalization::<T>::U, u)));
        Ok(x)
    }

    /// Builds the recurrent unroll for a batch. `v0[j]` holds the normalized
    /// window observation `j` (oldest first) for every batch row; `u` holds
    /// the normalized controls `u_{n−n_M}, …, u_{n+K−1}` per row.
    pub fn unroll(&self, v0: Vec<Array2<T>>, u: Array2<T>) -> Result<Unroll<T>> {
        let n_m = self.n_m;
        if v0.len() != n_m + 1 {
            return Err(Error::Dimension {
                what: "unroll initial window",
                expected: n_m + 1,
                got: v0.len(),
            });
        }
        if u.ncols() < n_m + 1 {
            return Err(Error::Dimension {
                what: "unroll controls (at least n_M+1)",
                expected: n_m + 1,
                got: u.ncols(),
            });
        }
        let batch = u.nrows();
        let steps = u.ncols() - n_m;
        let width = input_width(n_m);
        let mut vbuf = v0;
        let mut caches = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut x = Array2::<T>::zeros((batch, width));
            for i in 0..=n_m {
                x.slice_mut(s![.., 2 * i..2 * i + 2]).assign(&vbuf[n_m + k - i]);
                x.column_mut(2 * (n_m + 1) + i).assign(&u.column(n_m + k - i));
            }
            let cache = self.mlp.forward_batch(x)?;
            vbuf.push(cache.output().clone());
            caches.push(cache);
        }
        Ok(Unroll {
            n_m,
            steps,
            vbuf,
            caches,
        })
    }
}

pub fn input_width(n_m: usize) -> usize {
    3 * (n_m + 1)
}

/// Recorded forward pass of a batched multi-step rollout.
#[derive(Debug, Clone)]
pub struct Unroll<T> {
    n_m: usize,
    steps: usize,
    vbuf: Vec<Array2<T>>,
    caches: Vec<ForwardCache<T>>,
}

impl<T: Scalar> Unroll<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Normalized prediction for step `k` (batch × 2).
    pub fn prediction(&self, k: usize) -> &Array2<T> {
        &self.vbuf[self.n_m + 1 + k]
    }

    /// Backpropagates `d_pred[k]` (gradient of the objective with respect to
    /// each normalized prediction) through the whole unroll. Parameter
    /// gradients are accumulated into `grads`; the gradient with respect to
    /// the normalized control matrix is returned.
    pub fn backward(&self, mlp: &Mlp<T>, d_pred: &[Array2<T>], mut grads: Option<&mut MlpGrads<T>>) -> Array2<T> {
        assert_eq!(d_pred.len(), self.steps, "one cotangent per step");
        let n_m = self.n_m;
        let batch = self.vbuf[0].nrows();
        let mut gv: Vec<Array2<T>> = (0..self.vbuf.len()).map(|_| Array2::zeros((batch, 2))).collect();
        let mut gu = Array2::<T>::zeros((batch, n_m + self.steps));
        for k in (0..self.steps).rev() {
            let dy = &d_pred[k] + &gv[n_m + 1 + k];
            let dx = mlp.backward_batch(&self.caches[k], dy.view(), grads.as_deref_mut());
            for i in 0..=n_m {
                let j = n_m + k - i;
                if j > n_m {
                    gv[j] += &dx.slice(s![.., 2 * i..2 * i + 2]);
                }
                let mut col = gu.column_mut(j);
                col += &dx.column(2 * (n_m + 1) + i);
            }
        }
        gu
    }
}

/// One flow-map step from `window` under control `u_n`.
pub fn flowmap_step<T: Scalar>(model: &FlowMapModel<T>, window: &MemoryWindow<T>, u_n: T) -> Result<QoiSample<T>> {
    check_control(u_n.as_f64())?;
    let x = model.input_vector(window, u_n)?;
    let y = model.mlp.forward(&x)?;
    Ok(model.norm.denorm_v([y[0], y[1]]))
}

/// Marches the flow map `controls.len()` steps, feeding predictions back.
pub fn rollout<T: Scalar>(model: &FlowMapModel<T>, window: &MemoryWindow<T>, controls: &[T]) -> Result<Vec<QoiSample<T>>> {
    let mut w = window.clone();
    let mut out = Vec::with_capacity(controls.len());
    for &u in controls {
        let v = flowmap_step(model, &w, u)?;
        w.advance(v, u);
        out.push(v);
    }
    Ok(out)
}

/// Mean over the recurrent steps of the squared normalized prediction error.
pub fn multistep_loss<T: Scalar>(model: &FlowMapModel<T>, segment: &TrainingSegment<T>) -> Result<T> {
    let n_m = segment.n_memory();
    let n_r = segment.n_recurrent();
    if segment.controls.len() != n_m + n_r {
        return Err(Error::Dimension {
            what: "segment controls n_M+n_R",
            expected: n_m + n_r,
            got: segment.controls.len(),
        });
    }
    let window = MemoryWindow::new(segment.v_window.clone(), segment.controls[..n_m].to_vec())?;
    let preds = rollout(model, &window, &segment.controls[n_m..])?;
    let norm = model.norm();
    let total: T = preds
        .iter()
        .zip(&segment.targets)
        .map(|(p, t)| {
            let (a, b) = (norm.norm_v(p), norm.norm_v(t));
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
        })
        .sum();
    Ok(total / T::from_usize_lossy(n_r))
}

/// Rows per parallel work item; the reduction runs in chunk order so the
/// result does not depend on the thread count.
const CHUNK: usize = 64;

/// Mean multi-step loss over `segments` and its parameter gradient.
pub fn batch_loss_and_grad<T: Scalar>(
    model: &FlowMapModel<T>,
    segments: &[&TrainingSegment<T>],
) -> Result<(T, MlpGrads<T>)> {
    if segments.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let parts = segments
        .par_chunks(CHUNK)
        .map(|chunk| chunk_loss_and_grad(model, chunk))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = MlpGrads::zeros_like(&model.mlp);
    let mut loss = T::zero();
    for (l, g) in &parts {
        loss += *l;
        grads.add_assign(g);
    }
    let inv = T::one() / T::from_usize_lossy(segments.len());
    grads.scale(inv);
    Ok((loss * inv, grads))
}

fn chunk_loss_and_grad<T: Scalar>(model: &FlowMapModel<T>, chunk: &[&TrainingSegment<T>]) -> Result<(T, MlpGrads<T>)> {
    let n_m = model.n_m;
    let n_r = chunk[0].n_recurrent();
    let b = chunk.len();
    let norm = &model.norm;
    let mut v0 = vec![Array2::<T>::zeros((b, 2)); n_m + 1];
    let mut u = Array2::<T>::zeros((b, n_m + n_r));
    let mut targets = vec![Array2::<T>::zeros((b, 2)); n_r];
    for (row, seg) in chunk.iter().enumerate() {
        if seg.n_memory() != n_m || seg.n_recurrent() != n_r || seg.controls.len() != n_m + n_r {
            return Err(Error::Dimension {
                what: "segment shape vs model n_M / batch n_R",
                expected: n_m,
                got: seg.n_memory(),
            });
        }
        for (j, v) in seg.v_window.iter().enumerate() {
            let [a, c] = norm.norm_v(v);
            v0[j][[row, 0]] = a;
            v0[j][[row, 1]] = c;
        }
        for (j, &c) in seg.controls.iter().enumerate() {
            u[[row, j]] = norm.norm(Normalization::<T>::U, c);
        }
        for (k, t) in seg.targets.iter().enumerate() {
            let [a, c] = norm.norm_v(t);
            targets[k][[row, 0]] = a;
            targets[k][[row, 1]] = c;
        }
    }
    let unroll = model.unroll(v0, u)?;
    let scale = T::one() / T::from_usize_lossy(n_r);
    let mut loss = T::zero();
    let d_pred: Vec<Array2<T>> = (0..n_r)
        .map(|k| {
            let diff = unroll.prediction(k) - &targets[k];
            loss += diff.iter().map(|&d| d * d).sum::<T>() * scale;
            diff * (T::lit(2.0) * scale)
        })
        .collect();
    let mut grads = MlpGrads::zeros_like(&model.mlp);
    unroll.backward(&model.mlp, &d_pred, Some(&mut grads));
    Ok((loss, grads))
}

/// Predictions of a rollout from `window` together with the gradient of a
/// scalar objective with respect to the planned controls. `cotangent` maps
/// the raw predictions to `∂objective/∂prediction`.
pub fn rollout_with_control_grad<T: Scalar>(
    model: &FlowMapModel<T>,
    window: &MemoryWindow<T>,
    controls: &[T],
    cotangent: impl FnOnce(&[QoiSample<T>]) -> Vec<QoiSample<T>>,
) -> Result<(Vec<QoiSample<T>>, Vec<T>)> {
    model.check_window(window)?;
    let n_m = model.n_m;
    let norm = &model.norm;
    let v0 = window
        .v
        .iter()
        .map(|v| Array2::from_shape_vec((1, 2), norm.norm_v(v).to_vec()).expect("1×2"))
        .collect();
    let u = Array2::from_shape_fn((1, n_m + controls.len()), |(_, j)| {
        let raw = if j < n_m { window.u[j] } else { controls[j - n_m] };
        norm.norm(Normalization::<T>::U, raw)
    });
    let unroll = model.unroll(v0, u)?;
    let preds: Vec<QoiSample<T>> = (0..controls.len())
        .map(|k| {
            let y = unroll.prediction(k);
            norm.denorm_v([y[[0, 0]], y[[0, 1]]])
        })
        .collect();
    let d_raw = cotangent(&preds);
    let d_pred: Vec<Array2<T>> = d_raw
        .iter()
        .map(|d| {
            Array2::from_shape_vec(
                (1, 2),
                vec![d.c_d * norm.std[Normalization::<T>::CD], d.c_l * norm.std[Normalization::<T>::CL]],
            )
            .expect("1×2")
        })
        .collect();
    let gu = unroll.backward(&model.mlp, &d_pred, None);
    let inv_su = T::one() / norm.std[Normalization::<T>::U];
    let grad = (0..controls.len()).map(|k| gu[[0, n_m + k]] * inv_su).collect();
    Ok((preds, grad))
}
