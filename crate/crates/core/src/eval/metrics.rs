use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdeMode, EvalConfig};
use crate::model::MixtureOutput;
use crate::scalar::Scalar;

fn lift<T: Scalar>(p: (f64, f64)) -> (T, T) {
    (T::lit(p.0), T::lit(p.1))
}

/// Mean `log p(y)` over paired mixtures and targets.
pub fn log_likelihood<T: Scalar>(mixtures: &[MixtureOutput<T>], targets: &[(f64, f64)]) -> f64 {
    let sum: f64 = mixtures
        .iter()
        .zip(targets)
        .map(|(m, &y)| m.log_likelihood(lift(y)).to_f64_lossy())
        .sum();
    sum / mixtures.len().max(1) as f64
}

/// Point estimate used for displacement error.
pub fn point_estimate<T: Scalar>(m: &MixtureOutput<T>, mode: AdeMode) -> (f64, f64) {
    let p = match mode {
        AdeMode::MixtureMean => m.mean(),
        AdeMode::TopComponent => m.top_mean(),
    };
    (p.0.to_f64_lossy(), p.1.to_f64_lossy())
}

/// Mean euclidean distance between point estimates and targets.
pub fn ade<T: Scalar>(mixtures: &[MixtureOutput<T>], targets: &[(f64, f64)], mode: AdeMode) -> f64 {
    let sum: f64 = mixtures
        .iter()
        .zip(targets)
        .map(|(m, y)| {
            let p = point_estimate(m, mode);
            (p.0 - y.0).hypot(p.1 - y.1)
        })
        .sum();
    sum / mixtures.len().max(1) as f64
}

/// Monte-Carlo estimate of `P(|Y - center| <= delta)` with a fixed seed.
pub fn prob_within<T: Scalar>(m: &MixtureOutput<T>, center: (f64, f64), delta: f64, n_samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = (0..n_samples)
        .filter(|_| {
            let (x, y) = m.sample(&mut rng);
            (x.to_f64_lossy() - center.0).hypot(y.to_f64_lossy() - center.1) <= delta
        })
        .count();
    inside as f64 / n_samples.max(1) as f64
}

/// Fraction of samples whose mixture puts at least `p_threshold` mass within
/// `delta` of the target. Sample `i` uses seed `seed + i`, so the result is
/// nondecreasing in `delta`.
pub fn ct_delta<T: Scalar>(
    mixtures: &[MixtureOutput<T>],
    targets: &[(f64, f64)],
    delta: f64,
    p_threshold: f64,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let hits = mixtures
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .filter(|(i, (m, y))| prob_within(*m, **y, delta, n_samples, seed.wrapping_add(*i as u64)) >= p_threshold)
        .count();
    hits as f64 / mixtures.len().max(1) as f64
}

/// The three reported metrics over one sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ll: f64,
    pub ade: f64,
    pub ct: f64,
    pub samples: usize,
}

pub fn compute_metrics<T: Scalar>(mixtures: &[MixtureOutput<T>], targets: &[(f64, f64)], cfg: &EvalConfig) -> Metrics {
    Metrics {
        ll: log_likelihood(mixtures, targets),
        ade: ade(mixtures, targets, cfg.ade_mode),
        ct: ct_delta(mixtures, targets, cfg.delta, cfg.p_threshold, cfg.mc_samples, cfg.seed),
        samples: mixtures.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Component;

    fn single(mu: (f64, f64), sigma: f64) -> MixtureOutput<f64> {
        MixtureOutput::new(
            vec![Component {
                mu,
                sigma: (sigma, sigma),
                rho: 0.0,
            }],
            &[0.0],
        )
    }

    #[test]
    fn ll_examples() {
        assert!((log_likelihood(&[single((0.2, 0.3), 1.0)], &[(0.2, 0.3)]) + 1.8378770664093453).abs() < 1e-12);
        let tight = log_likelihood(&[single((0.2, 0.3), 0.01)], &[(0.2, 0.3)]);
        assert!((tight + (std::f64::consts::TAU * 1e-4).ln()).abs() < 1e-9);
    }

    #[test]
    fn ade_examples() {
        assert!((ade(&[single((0.5, 0.5), 0.1)], &[(0.5, 0.6)], AdeMode::MixtureMean) - 0.1).abs() < 1e-12);
        let c = |x| Component {
            mu: (x, 0.5),
            sigma: (0.05, 0.05),
            rho: 0.0,
        };
        let sym = MixtureOutput::new(vec![c(0.4), c(0.6)], &[0.0, 0.0]);
        assert!(ade(&[sym.clone()], &[(0.5, 0.5)], AdeMode::MixtureMean) < 1e-12);
        assert!((ade(&[sym], &[(0.5, 0.5)], AdeMode::TopComponent) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn prob_within_examples() {
        assert!(prob_within(&single((0.3, 0.3), 0.001), (0.3, 0.3), 0.05, 1000, 0) > 0.999);
        assert!(prob_within(&single((0.9, 0.9), 0.01), (0.1, 0.1), 0.05, 1000, 0) == 0.0);
        let p = prob_within(&single((0.5, 0.5), 0.05), (0.5, 0.5), 0.05, 10_000, 1);
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 0.01, "{p}");
    }

    #[test]
    fn ct_fixture_half() {
        let mut mixtures = Vec::new();
        let mut targets = Vec::new();
        for i in 0..20 {
            let gt = (0.1 + 0.04 * i as f64, 0.5);
            targets.push(gt);
            mixtures.push(if i < 10 { single(gt, 0.001) } else { single((gt.0, 0.0), 0.001) });
        }
        assert_eq!(ct_delta(&mixtures, &targets, 0.05, 0.5, 500, 3), 0.5);
    }
}
