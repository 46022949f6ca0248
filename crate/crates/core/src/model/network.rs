use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{MiSampling, ModelConfig};
use super::mixture::{Component, MixtureOutput, RHO_BOUND, SIGMA_FLOOR};
use super::ModelError;
use crate::autodiff::{
    affine, gnn_layer_with, recurrent_cell, Activation, BoundParams, Graph, LstmVars, NormAdjacency, ParamStore,
    Tensor, Var,
};
use crate::dataset::{Sample, SampleShape, DETECTION_FEATURES};
use crate::scalar::Scalar;
use crate::sim::STATE_DIM;

/// Raw softplus input giving an initial standard deviation of about 0.1.
const SIGMA_BIAS_INIT: f64 = -2.252;

/// Dense model inputs for a batch of samples.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub size: usize,
    /// One `B x 4` tensor per detection slot, oldest first.
    pub detections: Vec<Tensor<T>>,
    /// `B x 1` fraction of filled detection slots.
    pub det_count: Tensor<T>,
    /// One `(B*N) x (D+1)` tensor per window step; the last column is the mask.
    pub agents: Vec<Tensor<T>>,
    pub targets: Vec<(T, T)>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&Sample], shape: &SampleShape, dt_scale: f64) -> Result<Self, ModelError> {
        let b = samples.len();
        if b == 0 {
            return Err(ModelError::Empty("batch"));
        }
        let (k, w, n) = (shape.max_detections, shape.window, shape.agents);
        for s in samples {
            if s.detections.len() != k * DETECTION_FEATURES || s.mask.len() != w || s.window.len() != w * n * STATE_DIM {
                return Err(ModelError::Shape(format!(
                    "sample (seed {}, t {}) does not match window {w}, agents {n}, detections {k}",
                    s.seed, s.t
                )));
            }
        }
        let detections = (0..k)
            .map(|slot| {
                let mut data = Vec::with_capacity(b * DETECTION_FEATURES);
                for s in samples {
                    let row = &s.detections[slot * DETECTION_FEATURES..(slot + 1) * DETECTION_FEATURES];
                    data.extend([row[0], row[1] / dt_scale, row[2], row[3]].map(T::lit));
                }
                Tensor::matrix(b, DETECTION_FEATURES, data).unwrap()
            })
            .collect();
        let det_count = Tensor::matrix(
            b,
            1,
            samples
                .iter()
                .map(|s| T::lit(s.detection_count as f64 / k.max(1) as f64))
                .collect(),
        )
        .unwrap();
        let agents = (0..w)
            .map(|step| {
                let mut data = Vec::with_capacity(b * n * (STATE_DIM + 1));
                for s in samples {
                    for a in 0..n {
                        let off = (step * n + a) * STATE_DIM;
                        data.extend(s.window[off..off + STATE_DIM].iter().map(|&v| T::lit(v)));
                        data.push(T::lit(s.mask[step]));
                    }
                }
                Tensor::matrix(b * n, STATE_DIM + 1, data).unwrap()
            })
            .collect();
        Ok(Self {
            size: b,
            detections,
            det_count,
            agents,
            targets: samples.iter().map(|s| (T::lit(s.target.0), T::lit(s.target.1))).collect(),
        })
    }
}

/// Squashed mixture parameters on the tape, each `B x G`.
#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    pub mu_x: Var,
    pub mu_y: Var,
    pub sigma_x: Var,
    pub sigma_y: Var,
    pub rho: Var,
    pub log_pi: Var,
}

/// Component labels and standard-normal draws for the MI term. Each draw
/// holds one label and one `(eps_x, eps_y)` pair per batch row.
#[derive(Clone, Debug, PartialEq)]
pub struct MiNoise {
    pub draws: Vec<(Vec<usize>, Vec<(f64, f64)>)>,
}

impl MiNoise {
    pub fn sample(rng: &mut impl Rng, rows: usize, components: usize, mode: MiSampling) -> Self {
        let eps = |rng: &mut _| -> Vec<(f64, f64)> {
            (0..rows)
                .map(|_| (StandardNormal.sample(rng), StandardNormal.sample(rng)))
                .collect()
        };
        let draws = match mode {
            MiSampling::Single => {
                let labels = (0..rows).map(|_| rng.random_range(0..components)).collect();
                vec![(labels, eps(rng))]
            }
            MiSampling::Sweep => (0..components).map(|k| (vec![k; rows], eps(rng))).collect(),
        };
        Self { draws }
    }
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    /// Present when the MI weight is positive.
    pub mi: Option<Var>,
}

/// Encoders, mixture decoder, and MI classifier sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub shape: SampleShape,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: &ModelConfig, shape: SampleShape) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        if shape.agents == 0 || shape.window == 0 || shape.max_detections == 0 {
            return Err(ModelError::Shape(format!("degenerate sample shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, e, g) = (config.hidden, config.embed, config.components);
        let mut p = ParamStore::new();
        let lstm = |p: &mut ParamStore<T>, prefix: &str, input: usize, rng: &mut ChaCha8Rng| {
            p.init_weight(&format!("{prefix}.w_in"), input, 4 * h, rng);
            p.init_weight(&format!("{prefix}.w_h"), h, 4 * h, rng);
            let mut bias = vec![T::zero(); 4 * h];
            bias[h..2 * h].fill(T::one());
            p.insert(format!("{prefix}.b"), Tensor::vector(bias));
        };
        lstm(&mut p, "det.lstm", DETECTION_FEATURES, &mut rng);
        p.init_weight("det.out.w", h + 1, e, &mut rng);
        p.init_bias("det.out.b", e);
        if config.use_gnn {
            lstm(&mut p, "agent.lstm", STATE_DIM + 1, &mut rng);
            p.init_weight("agent.gnn.w", h, e, &mut rng);
        }
        let embed = Self::embed_dim_for(config);
        p.init_weight("dec.w1", embed, h, &mut rng);
        if config.use_omega_mm {
            p.init_weight("dec.w_omega", g, h, &mut rng);
        }
        p.init_bias("dec.b1", h);
        p.init_weight("dec.w2", h, h, &mut rng);
        p.init_bias("dec.b2", h);
        let outputs = if config.use_omega_mm { 6 } else { 6 * g };
        p.init_weight("head.w", h, outputs, &mut rng);
        let mut bias = vec![T::zero(); outputs];
        for k in 0..outputs / 6 {
            bias[6 * k + 2] = T::lit(SIGMA_BIAS_INIT);
            bias[6 * k + 3] = T::lit(SIGMA_BIAS_INIT);
        }
        p.insert("head.b", Tensor::vector(bias));
        p.init_weight("mi.w1", embed + 2, h, &mut rng);
        p.init_bias("mi.b1", h);
        p.init_weight("mi.w2", h, g, &mut rng);
        p.init_bias("mi.b2", g);
        Ok(Self {
            config: config.clone(),
            shape,
            params: p,
        })
    }

    fn embed_dim_for(config: &ModelConfig) -> usize {
        if config.use_gnn {
            2 * config.embed
        } else {
            config.embed
        }
    }

    pub fn embed_dim(&self) -> usize {
        Self::embed_dim_for(&self.config)
    }

    /// Scalars in the mixture decoder (shared trunk plus output head).
    pub fn decoder_param_count(&self) -> usize {
        self.params.scalar_count_with_prefix("dec.") + self.params.scalar_count_with_prefix("head.")
    }

    fn lstm_vars(&self, p: &BoundParams, prefix: &str) -> Result<LstmVars, ModelError> {
        Ok(LstmVars {
            w_input: p.var(&format!("{prefix}.w_in"))?,
            w_hidden: p.var(&format!("{prefix}.w_h"))?,
            bias: p.var(&format!("{prefix}.b"))?,
            hidden: self.config.hidden,
        })
    }

    fn run_lstm(&self, g: &mut Graph<T>, vars: &LstmVars, inputs: &[Tensor<T>]) -> Result<Var, ModelError> {
        let rows = inputs[0].rows();
        let mut h = g.constant(Tensor::zeros(&[rows, self.config.hidden]));
        let mut c = g.constant(Tensor::zeros(&[rows, self.config.hidden]));
        for x in inputs {
            let x = g.constant(x.clone());
            (h, c) = recurrent_cell(g, x, h, c, vars)?;
        }
        Ok(h)
    }

    /// Detection-history embedding, `B x E`.
    pub fn encode_detections(&self, g: &mut Graph<T>, p: &BoundParams, batch: &Batch<T>) -> Result<Var, ModelError> {
        let vars = self.lstm_vars(p, "det.lstm")?;
        let h = self.run_lstm(g, &vars, &batch.detections)?;
        let count = g.constant(batch.det_count.clone());
        let x = g.concat_cols(&[h, count])?;
        let out = affine(g, x, p.var("det.out.w")?, p.var("det.out.b")?)?;
        Ok(g.tanh(out))
    }

    /// Agent-window embedding, `B x E`: per-agent recurrence, one graph
    /// convolution over each sample's complete agent graph, then mean pooling.
    pub fn encode_agents(&self, g: &mut Graph<T>, p: &BoundParams, batch: &Batch<T>) -> Result<Var, ModelError> {
        let vars = self.lstm_vars(p, "agent.lstm")?;
        let h = self.run_lstm(g, &vars, &batch.agents)?;
        let adj = Rc::new(NormAdjacency::complete_blocks(batch.size, self.shape.agents));
        let conv = gnn_layer_with(g, h, adj, p.var("agent.gnn.w")?, Activation::Relu)?;
        Ok(g.mean_pool_groups(conv, self.shape.agents)?)
    }

    pub fn encode(&self, g: &mut Graph<T>, p: &BoundParams, batch: &Batch<T>) -> Result<Var, ModelError> {
        let det = self.encode_detections(g, p, batch)?;
        if !self.config.use_gnn {
            return Ok(det);
        }
        let agents = self.encode_agents(g, p, batch)?;
        Ok(g.concat_cols(&[det, agents])?)
    }

    /// Mixture parameters for every row of `e`.
    pub fn decode(&self, g: &mut Graph<T>, p: &BoundParams, e: Var) -> Result<MixtureVars, ModelError> {
        let gk = self.config.components;
        let ew = g.matmul(e, p.var("dec.w1")?)?;
        let b1 = p.var("dec.b1")?;
        let (w2, b2) = (p.var("dec.w2")?, p.var("dec.b2")?);
        let (hw, hb) = (p.var("head.w")?, p.var("head.b")?);
        let trunk = |g: &mut Graph<T>, pre: Var| -> Result<Var, ModelError> {
            let h1 = g.add_row(pre, b1)?;
            let h1 = g.tanh(h1);
            let h2 = affine(g, h1, w2, b2)?;
            let h2 = g.tanh(h2);
            Ok(affine(g, h2, hw, hb)?)
        };
        // columns[j][k]: raw output j of component k, each B x 1
        let mut columns: Vec<Vec<Var>> = vec![Vec::with_capacity(gk); 6];
        if self.config.use_omega_mm {
            let w_omega = p.var("dec.w_omega")?;
            for k in 0..gk {
                let mut onehot = vec![T::zero(); gk];
                onehot[k] = T::one();
                let onehot = g.constant(Tensor::matrix(1, gk, onehot).unwrap());
                let shift = g.matmul(onehot, w_omega)?;
                let pre = g.add_row(ew, shift)?;
                let raw = trunk(g, pre)?;
                for (j, col) in columns.iter_mut().enumerate() {
                    col.push(g.slice_cols(raw, j, 1)?);
                }
            }
        } else {
            let raw = trunk(g, ew)?;
            for k in 0..gk {
                for (j, col) in columns.iter_mut().enumerate() {
                    col.push(g.slice_cols(raw, 6 * k + j, 1)?);
                }
            }
        }
        let mut stacked = Vec::with_capacity(6);
        for col in &columns {
            stacked.push(g.concat_cols(col)?);
        }
        let mu_x = g.sigmoid(stacked[0]);
        let mu_y = g.sigmoid(stacked[1]);
        let sx = g.softplus(stacked[2]);
        let sigma_x = g.add_scalar(sx, T::lit(SIGMA_FLOOR));
        let sy = g.softplus(stacked[3]);
        let sigma_y = g.add_scalar(sy, T::lit(SIGMA_FLOOR));
        let r = g.tanh(stacked[4]);
        let rho = g.mul_scalar(r, T::lit(RHO_BOUND));
        let log_pi = g.log_softmax_rows(stacked[5])?;
        Ok(MixtureVars {
            mu_x,
            mu_y,
            sigma_x,
            sigma_y,
            rho,
            log_pi,
        })
    }

    /// Per-row `log p(y)` as a `B x 1` node.
    pub fn log_likelihood(&self, g: &mut Graph<T>, m: &MixtureVars, targets: &[(T, T)]) -> Result<Var, ModelError> {
        let gk = self.config.components;
        let b = targets.len();
        let tile = |f: fn(&(T, T)) -> T| -> Tensor<T> {
            let data = targets.iter().flat_map(|t| std::iter::repeat_n(f(t), gk)).collect();
            Tensor::matrix(b, gk, data).unwrap()
        };
        let yx = g.constant(tile(|t| t.0));
        let yy = g.constant(tile(|t| t.1));
        let dx = g.sub(yx, m.mu_x)?;
        let dx = g.div(dx, m.sigma_x)?;
        let dy = g.sub(yy, m.mu_y)?;
        let dy = g.div(dy, m.sigma_y)?;
        let dx2 = g.square(dx);
        let dy2 = g.square(dy);
        let cross = g.mul(dx, dy)?;
        let cross = g.mul(cross, m.rho)?;
        let cross = g.mul_scalar(cross, T::lit(2.0));
        let z = g.add(dx2, dy2)?;
        let z = g.sub(z, cross)?;
        let rho2 = g.square(m.rho);
        let one_m = g.neg(rho2);
        let one_m = g.add_scalar(one_m, T::one());
        let quad = g.div(z, one_m)?;
        let quad = g.mul_scalar(quad, T::lit(-0.5));
        let log_det = g.ln(one_m);
        let log_det = g.mul_scalar(log_det, T::lit(-0.5));
        let lsx = g.ln(m.sigma_x);
        let lsy = g.ln(m.sigma_y);
        let mut logn = g.add(quad, log_det)?;
        logn = g.sub(logn, lsx)?;
        logn = g.sub(logn, lsy)?;
        let logn = g.add_scalar(logn, -T::lit(std::f64::consts::TAU).ln());
        let joint = g.add(m.log_pi, logn)?;
        Ok(g.log_sum_exp_rows(joint)?)
    }

    /// Cross-entropy of the component classifier on reparameterized draws.
    pub fn mi_loss(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        e: Var,
        m: &MixtureVars,
        noise: &MiNoise,
    ) -> Result<Var, ModelError> {
        let (w1, b1, w2, b2) = (p.var("mi.w1")?, p.var("mi.b1")?, p.var("mi.w2")?, p.var("mi.b2")?);
        let rows = g.value(e).rows();
        let mut total: Option<Var> = None;
        for (labels, eps) in &noise.draws {
            if labels.len() != rows || eps.len() != rows {
                return Err(ModelError::Shape(format!("MI noise has {} rows, batch has {rows}", labels.len())));
            }
            let mx = g.pick_cols(m.mu_x, labels)?;
            let my = g.pick_cols(m.mu_y, labels)?;
            let sx = g.pick_cols(m.sigma_x, labels)?;
            let sy = g.pick_cols(m.sigma_y, labels)?;
            let r = g.pick_cols(m.rho, labels)?;
            let e0 = g.constant(Tensor::matrix(rows, 1, eps.iter().map(|p| T::lit(p.0)).collect()).unwrap());
            let e1 = g.constant(Tensor::matrix(rows, 1, eps.iter().map(|p| T::lit(p.1)).collect()).unwrap());
            let step_x = g.mul(sx, e0)?;
            let yx = g.add(mx, step_x)?;
            let r2 = g.square(r);
            let one_m = g.neg(r2);
            let one_m = g.add_scalar(one_m, T::one());
            let root = g.sqrt(one_m);
            let a = g.mul(r, e0)?;
            let b = g.mul(root, e1)?;
            let mix = g.add(a, b)?;
            let step_y = g.mul(sy, mix)?;
            let yy = g.add(my, step_y)?;
            let input = g.concat_cols(&[e, yx, yy])?;
            let hidden = affine(g, input, w1, b1)?;
            let hidden = g.tanh(hidden);
            let logits = affine(g, hidden, w2, b2)?;
            let logp = g.log_softmax_rows(logits)?;
            let picked = g.pick_cols(logp, labels)?;
            let mean = g.mean_all(picked);
            total = Some(match total {
                None => mean,
                Some(t) => g.add(t, mean)?,
            });
        }
        let total = total.ok_or(ModelError::Empty("MI noise"))?;
        Ok(g.mul_scalar(total, -T::one() / T::from_usize(noise.draws.len()).unwrap()))
    }

    /// Mean NLL plus the weighted MI cross-entropy.
    pub fn loss(&self, g: &mut Graph<T>, p: &BoundParams, batch: &Batch<T>, noise: Option<&MiNoise>) -> Result<LossVars, ModelError> {
        let e = self.encode(g, p, batch)?;
        let m = self.decode(g, p, e)?;
        let ll = self.log_likelihood(g, &m, &batch.targets)?;
        let mean_ll = g.mean_all(ll);
        let nll = g.neg(mean_ll);
        let lambda = self.config.effective_lambda();
        match noise {
            Some(noise) if lambda > 0.0 => {
                let mi = self.mi_loss(g, p, e, &m, noise)?;
                let weighted = g.mul_scalar(mi, T::lit(lambda));
                let total = g.add(nll, weighted)?;
                Ok(LossVars { total, nll, mi: Some(mi) })
            }
            _ => Ok(LossVars { total: nll, nll, mi: None }),
        }
    }

    /// Mixture prediction for every sample of a batch.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Vec<MixtureOutput<T>>, ModelError> {
        let mut g = Graph::with_strict_finite(false);
        let p = self.params.bind_frozen(&mut g);
        let e = self.encode(&mut g, &p, batch)?;
        let m = self.decode(&mut g, &p, e)?;
        Ok(mixtures_from(&g, &m))
    }

    /// [`Network::predict`] over samples in chunks of the configured batch size.
    pub fn predict_samples(&self, samples: &[Sample]) -> Result<Vec<MixtureOutput<T>>, ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let batch = Batch::from_samples(&refs, &self.shape, self.config.dt_scale)?;
            out.extend(self.predict(&batch)?);
        }
        Ok(out)
    }
}

/// Reads the recorded mixture parameters back into per-row mixtures.
pub fn mixtures_from<T: Scalar>(g: &Graph<T>, m: &MixtureVars) -> Vec<MixtureOutput<T>> {
    let (rows, gk) = g.value(m.log_pi).dims2();
    let v = |x: Var| g.value(x).data();
    (0..rows)
        .map(|i| {
            let at = |x: Var, k: usize| v(x)[i * gk + k];
            MixtureOutput {
                pi: (0..gk).map(|k| at(m.log_pi, k).exp()).collect(),
                components: (0..gk)
                    .map(|k| Component {
                        mu: (at(m.mu_x, k), at(m.mu_y, k)),
                        sigma: (at(m.sigma_x, k), at(m.sigma_y, k)),
                        rho: at(m.rho, k),
                    })
                    .collect(),
            }
        })
        .collect()
}
