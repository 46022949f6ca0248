use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::lse;
use crate::scalar::Scalar;

/// Floor added to the softplus output for standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Bound on the correlation magnitude.
pub const RHO_BOUND: f64 = 0.99;

/// Squashed parameters of one bivariate Gaussian component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component<T> {
    pub mu: (T, T),
    pub sigma: (T, T),
    pub rho: T,
}

impl<T: Scalar> Component<T> {
    /// Applies the output squashing to six raw values `[mx, my, sx, sy, r, w]`
    /// and returns the component plus its raw weight.
    pub fn from_raw(raw: &[T]) -> (Self, T) {
        let sig = crate::autodiff::sigmoid::<T>;
        let sp = |x: T| crate::autodiff::softplus(x) + T::lit(SIGMA_FLOOR);
        (
            Self {
                mu: (sig(raw[0]), sig(raw[1])),
                sigma: (sp(raw[2]), sp(raw[3])),
                rho: T::lit(RHO_BOUND) * raw[4].tanh(),
            },
            raw[5],
        )
    }

    /// `log N(y; mu, Sigma)` with `Sigma = [[sx^2, r sx sy], [r sx sy, sy^2]]`.
    pub fn log_density(&self, y: (T, T)) -> T {
        let two = T::lit(2.0);
        let (sx, sy) = self.sigma;
        let dx = (y.0 - self.mu.0) / sx;
        let dy = (y.1 - self.mu.1) / sy;
        let one_m = T::one() - self.rho * self.rho;
        let z = dx * dx + dy * dy - two * self.rho * dx * dy;
        -(T::lit(std::f64::consts::TAU)).ln() - sx.ln() - sy.ln() - one_m.ln() / two - z / (two * one_m)
    }

    /// Reparameterized draw `mu + L eps` with `L` the Cholesky factor.
    pub fn transform(&self, eps: (T, T)) -> (T, T) {
        let (sx, sy) = self.sigma;
        (
            self.mu.0 + sx * eps.0,
            self.mu.1 + sy * (self.rho * eps.0 + (T::one() - self.rho * self.rho).sqrt() * eps.1),
        )
    }
}

/// A Gaussian mixture over the normalized map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureOutput<T> {
    pub pi: Vec<T>,
    pub components: Vec<Component<T>>,
}

impl<T: Scalar> MixtureOutput<T> {
    /// Builds a mixture from per-component squashed parameters and raw weights.
    pub fn new(components: Vec<Component<T>>, weights: &[T]) -> Self {
        let l = lse(weights);
        Self {
            pi: weights.iter().map(|&w| (w - l).exp()).collect(),
            components,
        }
    }

    /// Mixture from `G` consecutive groups of six raw outputs.
    pub fn from_raw(raw: &[T]) -> Self {
        let (comps, w): (Vec<_>, Vec<_>) = raw.chunks(6).map(Component::from_raw).unzip();
        Self::new(comps, &w)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// `log sum_k pi_k N(y; mu_k, Sigma_k)` via log-sum-exp.
    pub fn log_likelihood(&self, y: (T, T)) -> T {
        let terms: Vec<T> = self
            .pi
            .iter()
            .zip(&self.components)
            .map(|(&p, c)| p.ln() + c.log_density(y))
            .collect();
        lse(&terms)
    }

    pub fn nll(&self, y: (T, T)) -> T {
        -self.log_likelihood(y)
    }

    pub fn density(&self, y: (T, T)) -> T {
        self.log_likelihood(y).exp()
    }

    /// Mixture mean `sum_k pi_k mu_k`.
    pub fn mean(&self) -> (T, T) {
        self.pi
            .iter()
            .zip(&self.components)
            .fold((T::zero(), T::zero()), |acc, (&p, c)| (acc.0 + p * c.mu.0, acc.1 + p * c.mu.1))
    }

    /// Mean of the highest-weight component (lowest index on ties).
    pub fn top_mean(&self) -> (T, T) {
        let mut best = 0;
        for (k, &p) in self.pi.iter().enumerate() {
            if p > self.pi[best] {
                best = k;
            }
        }
        self.components[best].mu
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (T, T) {
        let u = T::lit(rng.random::<f64>());
        let mut acc = T::zero();
        let mut k = self.len() - 1;
        for (i, &p) in self.pi.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                k = i;
                break;
            }
        }
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        self.components[k].transform((T::lit(e0), T::lit(e1)))
    }
}
