//! Gaussian policy with tanh squashing and a separate value network.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fml::io::{mlp_from_records, mlp_to_records, read_json, write_json, LayerRecord, NormRecord};
use crate::fml::{Activation, Mlp, Normalization};
use crate::rl::env::RlState;
use crate::scalar::Scalar;

pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Policy input width for memory `n_m`.
pub fn policy_input_width(n_m: usize) -> usize {
    3 * n_m + 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<T> {
    /// Mean of the pre-squash Gaussian.
    pub mean: Mlp<T>,
    /// State-independent log standard deviation.
    pub log_std: T,
    pub value: Mlp<T>,
    /// Input scaling, shared with the flow map the policy was trained on.
    pub norm: Normalization<T>,
    n_m: usize,
    /// Value estimate = network output · scale + shift.
    pub value_shift: T,
    pub value_scale: T,
}

impl<T: Scalar> PolicyModel<T> {
    pub fn new_random<R: Rng + ?Sized>(
        n_m: usize,
        hidden: &[usize],
        log_std: T,
        norm: Normalization<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(policy_input_width(n_m))
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let mut mean = Mlp::new_random(&widths, rng)?;
        // Start near the zero action.
        if let Some(last) = mean.layers_mut().last_mut() {
            last.w.mapv_inplace(|w| w * T::lit(0.01));
            last.b.fill(T::zero());
        }
        let value = Mlp::new_random(&widths, rng)?;
        Ok(Self {
            mean,
            log_std,
            value,
            norm,
            n_m,
            value_shift: T::zero(),
            value_scale: T::one(),
        })
    }

    pub fn n_memory(&self) -> usize {
        self.n_m
    }

    pub fn input_width(&self) -> usize {
        policy_input_width(self.n_m)
    }

    /// Normalizes a raw feature vector `(V_n … V_{n−n_M}; u_{n−1} … u_{n−n_M})`.
    pub fn normalize(&self, raw: &[T]) -> Result<Vec<T>> {
        if raw.len() != self.input_width() {
            return Err(Error::Dimension {
                what: "policy input 3n_M+2",
                expected: self.input_width(),
                got: raw.len(),
            });
        }
        let nv = 2 * (self.n_m + 1);
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = if i >= nv { Normalization::<T>::U } else { i % 2 };
                self.norm.norm(c, x)
            })
            .collect())
    }

    pub fn normalize_batch(&self, rows: &[Vec<T>]) -> Result<Array2<T>> {
        let w = self.input_width();
        let mut out = Array2::zeros((rows.len(), w));
        for (i, r) in rows.iter().enumerate() {
            let n = self.normalize(r)?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&n[..]));
        }
        Ok(out)
    }

    /// Pre-squash mean for one normalized input.
    pub fn mean_action(&self, x: &[T]) -> Result<T> {
        Ok(self.mean.forward(x)?[0])
    }

    pub fn value_of(&self, x: &[T]) -> Result<T> {
        Ok(self.value.forward(x)?[0] * self.value_scale + self.value_shift)
    }

    pub fn std(&self) -> T {
        self.log_std.exp()
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            n_m: self.n_m,
            widths: self.mean.widths(),
            activation: self.mean.activation(),
            norm: NormRecord {
                mean: self.norm.mean.map(Scalar::as_f64),
                std: self.norm.std.map(Scalar::as_f64),
            },
            layers: mlp_to_records(&self.mean),
            log_std: self.log_std.as_f64(),
            value: ValueRecord {
                widths: self.value.widths(),
                layers: mlp_to_records(&self.value),
                shift: self.value_shift.as_f64(),
                scale: self.value_scale.as_f64(),
            },
        }
    }

    pub fn from_file(f: &PolicyFile) -> Result<Self> {
        if f.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "policy format version {} (expected {POLICY_FORMAT_VERSION})",
                f.format_version
            )));
        }
        let mean = mlp_from_records(&f.widths, &f.layers)?;
        let value = mlp_from_records(&f.value.widths, &f.value.layers)?;
        let w = policy_input_width(f.n_m);
        if mean.input_width() != w || value.input_width() != w || mean.output_width() != 1 || value.output_width() != 1 {
            return Err(Error::Dimension {
                what: "policy/value widths vs 3n_M+2 → 1",
                expected: w,
                got: mean.input_width(),
            });
        }
        if !f.log_std.is_finite() {
            return Err(Error::Format("log_std must be finite".into()));
        }
        Ok(Self {
            mean,
            log_std: T::lit(f.log_std),
            value,
            norm: Normalization {
                mean: f.norm.mean.map(T::lit),
                std: f.norm.std.map(T::lit),
            },
            n_m: f.n_m,
            value_shift: T::lit(f.value.shift),
            value_scale: T::lit(f.value.scale),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRecord {
    pub widths: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    #[serde(rename = "n_M")]
    pub n_m: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub norm: NormRecord,
    pub layers: Vec<LayerRecord>,
    pub log_std: f64,
    pub value: ValueRecord,
}

pub fn save_policy<T: Scalar>(policy: &PolicyModel<T>, path: &Path) -> Result<()> {
    write_json(path, &policy.to_file())
}

pub fn load_policy<T: Scalar>(path: &Path) -> Result<PolicyModel<T>> {
    let f: PolicyFile = read_json(path)?;
    PolicyModel::from_file(&f).map_err(|e| Error::parse(path, None, e.to_string()))
}

/// Raw action in `[-1, 1]` for a feature vector. Deterministic mode returns
/// `tanh(mean)`; stochastic mode squashes a Gaussian sample.
pub fn policy_act_features<T: Scalar, R: Rng + ?Sized>(
    policy: &PolicyModel<T>,
    raw_features: &[T],
    deterministic: bool,
    rng: &mut R,
) -> Result<T> {
    let x = policy.normalize(raw_features)?;
    let mu = policy.mean_action(&x)?;
    let z = if deterministic {
        mu
    } else {
        let eps: f64 = StandardNormal.sample(rng);
        mu + policy.std() * T::lit(eps)
    };
    Ok(z.tanh())
}

pub fn policy_act<T: Scalar, R: Rng + ?Sized>(
    policy: &PolicyModel<T>,
    state: &RlState<T>,
    deterministic: bool,
    rng: &mut R,
) -> Result<T> {
    policy_act_features(policy, &state.features(), deterministic, rng)
}
