mod common;

use advtrack::autodiff::{Graph, Tensor};
use advtrack::dataset::SampleShape;
use advtrack::eval::prob_within;
use advtrack::model::{Batch, Component, MiNoise, MiSampling, MixtureOutput, ModelConfig, Network};
use advtrack::policies::astar_plan;
use advtrack::sim::Cell;
use common::{dijkstra_cost, naive_mixture_nll, random_mixture, random_samples, random_terrain, rayleigh_cdf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mixture_nll_matches_naive_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for i in 0..1000 {
        let g = [1, 2, 4, 8][i % 4];
        let m = random_mixture(&mut rng, g);
        let y = (rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2));
        let (fast, naive) = (m.nll(y), naive_mixture_nll(&m, y));
        assert!((fast - naive).abs() < 1e-9, "mixture {i}: {fast} vs {naive}");
    }
}

#[test]
fn standard_bivariate_at_mean() {
    let c = Component {
        mu: (0.3, 0.7),
        sigma: (1.0, 1.0),
        rho: 0.0,
    };
    let m = MixtureOutput::new(vec![c], &[0.0]);
    assert!((m.nll((0.3, 0.7)) - std::f64::consts::TAU.ln()).abs() < 1e-9);
}

#[test]
fn uniform_weights_give_uniform_pi() {
    for g in [1, 2, 3, 8] {
        let comps = vec![
            Component {
                mu: (0.5, 0.5),
                sigma: (0.1, 0.1),
                rho: 0.0
            };
            g
        ];
        let m = MixtureOutput::new(comps, &vec![0.37; g]);
        for p in &m.pi {
            assert!((p - 1.0 / g as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_classifier_cross_entropy_is_ln_g() {
    for g in [2usize, 4, 8] {
        let config = ModelConfig {
            components: g,
            hidden: 8,
            embed: 8,
            use_gnn: false,
            ..ModelConfig::default()
        };
        let shape = SampleShape {
            window: 2,
            agents: 2,
            max_detections: 3,
        };
        let mut net = Network::<f64>::new(&config, shape).unwrap();
        for name in ["mi.w2", "mi.b2"] {
            let t = net.params.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let samples = random_samples(5, shape, 21);
        let refs: Vec<_> = samples.iter().collect();
        let batch = Batch::<f64>::from_samples(&refs, &shape, config.dt_scale).unwrap();
        let noise = MiNoise::sample(&mut ChaCha8Rng::seed_from_u64(22), 5, g, MiSampling::Single);
        let mut graph = Graph::new();
        let p = net.params.bind(&mut graph);
        let e = net.encode(&mut graph, &p, &batch).unwrap();
        let m = net.decode(&mut graph, &p, e).unwrap();
        let ce = net.mi_loss(&mut graph, &p, e, &m, &noise).unwrap();
        assert!((graph.value(ce).item() - (g as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn prob_within_matches_rayleigh() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..20 {
        let sigma = rng.random_range(0.02..0.3);
        let delta = sigma * rng.random_range(0.3..3.0);
        let c = Component {
            mu: (0.5, 0.5),
            sigma: (sigma, sigma),
            rho: 0.0,
        };
        let m = MixtureOutput::new(vec![c], &[0.0]);
        let mc = prob_within(&m, (0.5, 0.5), delta, 10_000, i);
        let exact = rayleigh_cdf(delta, sigma);
        assert!((mc - exact).abs() < 0.01, "sigma {sigma} delta {delta}: {mc} vs {exact}");
    }
}

#[test]
fn astar_matches_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut reachable = 0;
    for i in 0..50 {
        let t = random_terrain(&mut rng, 32, 32);
        let w = rng.random_range(0.0..4.0);
        let pick = |rng: &mut ChaCha8Rng| loop {
            let c = Cell::new(rng.random_range(0..32), rng.random_range(0..32));
            if t.traversable(c) {
                break c;
            }
        };
        let (s, goal) = (pick(&mut rng), pick(&mut rng));
        match (astar_plan(&t, s, goal, w), dijkstra_cost(&t, s, goal, w)) {
            (Ok(path), Some(cost)) => {
                reachable += 1;
                assert!((path.cost - cost).abs() < 1e-9, "grid {i}: {} vs {cost}", path.cost);
                assert_eq!(path.cells.first(), Some(&s));
                assert_eq!(path.cells.last(), Some(&goal));
            }
            (Err(_), None) => {}
            (a, b) => panic!("grid {i}: planner {a:?} vs oracle {b:?}"),
        }
    }
    assert!(reachable >= 40);
}
