//! Fully connected feed-forward network with tanh hidden layers and a
//! linear output layer, plus batched reverse-mode differentiation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`, row-major.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// Per-layer parameter gradients, shaped like [`Mlp`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<Layer<T>>,
}

/// Activations retained by [`Mlp::forward_batch`] for the backward pass.
/// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub acts: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl<T: Scalar> Mlp<T> {
    /// Network with every weight and bias drawn from `U(±sqrt(1/fan_in))`.
    pub fn new_random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let mut draw = || T::lit(rng.random_range(-bound..bound));
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
                let b = Array1::from_shape_simple_fn(fan_out, &mut draw);
                Layer { w, b }
            })
            .collect();
        Ok(Self {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[1], w[0])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() {
                return Err(Error::Dimension {
                    what: "bias length vs layer output width",
                    expected: l.w.nrows(),
                    got: l.b.len(),
                });
            }
            if i > 0 && layers[i - 1].w.nrows() != l.w.ncols() {
                return Err(Error::Dimension {
                    what: "consecutive layer widths",
                    expected: layers[i - 1].w.nrows(),
                    got: l.w.ncols(),
                });
            }
            if l.w.iter().chain(l.b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("non-finite parameter in layer {i}")));
            }
        }
        Ok(Self {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.w.nrows()))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Evaluates the network on a single input vector.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let mut a = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.w.dot(&a) + &l.b;
            if i < last {
                z.mapv_inplace(T::tanh);
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Evaluates a `batch × input` matrix, keeping activations for backprop.
    pub fn forward_batch(&self, x: Array2<T>) -> Result<ForwardCache<T>> {
        if x.ncols() != self.input_width() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_width(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(T::tanh);
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` (when
    /// given) and returns the gradient with respect to the input.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<T>,
        d_out: ArrayView2<T>,
        mut grads: Option<&mut MlpGrads<T>>,
    ) -> Array2<T> {
        let mut delta = d_out.to_owned();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // tanh'(z) = 1 − a²
                ndarray::Zip::from(&mut delta)
                    .and(&cache.acts[i + 1])
                    .for_each(|d, &a| *d *= T::one() - a * a);
            }
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                ndarray::linalg::general_mat_mul(T::one(), &delta.t(), &cache.acts[i], T::one(), &mut gl.w);
                gl.b += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].w);
        }
        delta
    }

    /// Flat parameter vector (layer by layer, weights row-major then bias).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for x in l.w.iter_mut().chain(l.b.iter_mut()) {
                *x = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable parameter slices in the same order as [`Self::flat_params`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn sq_norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .map(|&x| x * x)
            .sum()
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!(
            "layer widths must list at least input and output, all nonzero: {widths:?}"
        )));
    }
    Ok(())
}
