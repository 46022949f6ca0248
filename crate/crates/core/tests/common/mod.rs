//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use advtrack::autodiff::{BoundParams, Graph, ParamStore, Tensor, Var};
use advtrack::dataset::{Sample, SampleShape, DETECTION_FEATURES};
use advtrack::model::{Component, MixtureOutput};
use advtrack::sim::{Cell, TerrainGrid, STATE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error between backprop and central differences.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn forward(store: &ParamStore<f64>, build: &impl Fn(&mut Graph<f64>, &BoundParams) -> Var) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = build(&mut g, &p);
    g.value(out).item()
}

/// Compares analytic gradients of a scalar output against central
/// differences on `coords` random parameter coordinates.
pub fn check_gradients(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &BoundParams) -> Var,
    coords: usize,
    seed: u64,
) -> GradCheck {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = build(&mut g, &p);
    let grads = g.backward(out).expect("backward");
    let analytic: BTreeMap<String, Tensor<f64>> = p.gradients(&grads, store);

    let all: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for _ in 0..coords {
        let (name, i) = &all[rng.random_range(0..all.len())];
        let mut shifted = store.clone();
        let base = store.get(name).unwrap().data()[*i];
        shifted.get_mut(name).unwrap().data_mut()[*i] = base + FD_STEP;
        let up = forward(&shifted, &build);
        shifted.get_mut(name).unwrap().data_mut()[*i] = base - FD_STEP;
        let down = forward(&shifted, &build);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = rel_err(analytic[name].data()[*i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{name}[{i}]");
        }
        report.checked += 1;
    }
    report
}

/// Random parameter tensors with entries in `[-scale, scale]`.
pub fn random_store(shapes: &[(&str, usize, usize)], scale: f64, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for &(name, r, c) in shapes {
        let data = (0..r * c).map(|_| rng.random_range(-scale..scale)).collect();
        store.insert(name, Tensor::matrix(r, c, data).unwrap());
    }
    store
}

/// Mixture NLL from explicit densities with a 2x2 matrix inverse.
pub fn naive_mixture_nll(m: &MixtureOutput<f64>, y: (f64, f64)) -> f64 {
    let density: f64 = m
        .pi
        .iter()
        .zip(&m.components)
        .map(|(&pi, c)| {
            let (sx, sy) = c.sigma;
            let cov = [[sx * sx, c.rho * sx * sy], [c.rho * sx * sy, sy * sy]];
            let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
            let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
            let d = [y.0 - c.mu.0, y.1 - c.mu.1];
            let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            pi * (-0.5 * q).exp() / (std::f64::consts::TAU * det.sqrt())
        })
        .sum();
    -density.ln()
}

pub fn random_mixture(rng: &mut impl Rng, g: usize) -> MixtureOutput<f64> {
    let comps = (0..g)
        .map(|_| Component {
            mu: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            sigma: (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5)),
            rho: rng.random_range(-0.9..0.9),
        })
        .collect();
    let w: Vec<f64> = (0..g).map(|_| rng.random_range(-2.0..2.0)).collect();
    MixtureOutput::new(comps, &w)
}

/// `P(|x - mu| <= delta)` for an isotropic bivariate normal.
pub fn rayleigh_cdf(delta: f64, sigma: f64) -> f64 {
    1.0 - (-delta * delta / (2.0 * sigma * sigma)).exp()
}

/// Plain O(V^2) Dijkstra over the 8-connected traversable grid.
pub fn dijkstra_cost(t: &TerrainGrid, start: Cell, goal: Cell, forest_weight: f64) -> Option<f64> {
    let n = t.width * t.height;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[t.index(start)] = 0.0;
    loop {
        let mut best = None;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && best.is_none_or(|b: usize| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let u = best?;
        let cu = Cell::new(u % t.width, u / t.width);
        if cu == goal {
            return Some(dist[u]);
        }
        done[u] = true;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (Some(x), Some(y)) = (cu.x.checked_add_signed(dx), cu.y.checked_add_signed(dy)) else {
                    continue;
                };
                let v = Cell::new(x, y);
                if !t.traversable(v) {
                    continue;
                }
                let len = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let step = len * (1.0 + forest_weight * (1.0 - t.forest_at(v)));
                let vi = t.index(v);
                if dist[u] + step < dist[vi] {
                    dist[vi] = dist[u] + step;
                }
            }
        }
    }
}

/// Random forest density with a sprinkle of impassable water.
pub fn random_terrain(rng: &mut impl Rng, w: usize, h: usize) -> TerrainGrid {
    let mut t = TerrainGrid::open(w, h);
    for y in 0..h {
        for x in 0..w {
            let c = Cell::new(x, y);
            t.set_forest(c, rng.random_range(0.0..1.0));
            if rng.random_bool(0.12) {
                let i = t.index(c);
                t.water[i] = true;
            }
        }
    }
    t
}

/// Synthetic samples with uniform features and targets in the unit square.
pub fn random_samples(n: usize, shape: SampleShape, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let count = rng.random_range(0..=shape.max_detections);
            let mut detections = vec![0.0; shape.max_detections * DETECTION_FEATURES];
            for slot in shape.max_detections - count..shape.max_detections {
                let row = &mut detections[slot * DETECTION_FEATURES..(slot + 1) * DETECTION_FEATURES];
                row.copy_from_slice(&[1.0, rng.random_range(0.0..100.0), rng.random(), rng.random()]);
            }
            Sample {
                seed,
                t: i as u32,
                horizon: 0,
                window: (0..shape.window * shape.agents * STATE_DIM).map(|_| rng.random()).collect(),
                mask: vec![1.0; shape.window],
                detections,
                detection_count: count,
                target: (rng.random(), rng.random()),
            }
        })
        .collect()
}
