//! Adam with bias correction, operating on lists of parameter slices.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: T, beta2: T, eps: T) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of every slice in `params` using the matching `grads`.
    ///
    /// Panics if the slice layout changes between calls.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient group count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        let step = lr / bc1;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                p[i] -= step * m[i] / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}
