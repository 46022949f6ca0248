use serde::{Deserialize, Serialize};

use super::rollout::Rollout;
use crate::sim::{state_vector, STATE_DIM};

/// Per-entry width of the detection features: `[valid, age, x, y]`.
pub const DETECTION_FEATURES: usize = 4;

/// Shape parameters shared by every sample built from one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleShape {
    /// Window length `H + 1`.
    pub window: usize,
    pub agents: usize,
    /// Detections kept per sample (K).
    pub max_detections: usize,
}

impl SampleShape {
    pub fn state_dim(&self) -> usize {
        STATE_DIM
    }
}

/// One training example.
///
/// `window` is laid out `[step][agent][feature]` with `STATE_DIM` features;
/// `mask[s]` is 0 for front-padded steps. `detections` holds K rows of
/// `[valid, age_in_steps, x, y]`, oldest first, left-padded with zero rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub seed: u64,
    pub t: u32,
    pub horizon: u32,
    pub window: Vec<f64>,
    pub mask: Vec<f64>,
    pub detections: Vec<f64>,
    /// Number of valid rows in `detections`.
    pub detection_count: usize,
    /// Normalized adversary position at `t + horizon`.
    pub target: (f64, f64),
}

/// Shared detection history of a rollout, reconstructed from the growth of
/// `det_hist_len`, as `(t, x, y)` in normalized coordinates.
pub fn detection_history(rollout: &Rollout) -> Vec<(u32, f64, f64)> {
    let mut out = Vec::new();
    let mut seen = 0;
    for s in &rollout.steps {
        if s.det_hist_len > seen {
            let (x, y) = match s.obs.iter().find(|o| o.b == 1) {
                Some(o) => (o.x, o.y),
                // a tip given before any sensor contact
                None => rollout.normalize(s.adv),
            };
            out.push((s.t, x, y));
            seen = s.det_hist_len;
        }
    }
    out
}

/// Samples at every `stride`-th `t` with `t + horizon` inside the episode.
pub fn build_samples(rollout: &Rollout, history: usize, horizon: u32, stride: usize, max_detections: usize) -> Vec<Sample> {
    let len = rollout.steps.len();
    let horizon_us = horizon as usize;
    if len == 0 || horizon_us >= len {
        return Vec::new();
    }
    let last_t = len - 1 - horizon_us;
    let dets = detection_history(rollout);
    let h = &rollout.header;
    let n_agents = rollout.steps[0].blue.len();
    let win = history + 1;
    let mut out = Vec::new();
    for t in (0..=last_t).step_by(stride.max(1)) {
        let mut window = Vec::with_capacity(win * n_agents * STATE_DIM);
        let mut mask = Vec::with_capacity(win);
        for s in 0..win {
            let src = (t + s) as isize - history as isize;
            let (idx, valid) = if src < 0 { (0, 0.0) } else { (src as usize, 1.0) };
            mask.push(valid);
            let step = &rollout.steps[idx];
            for b in &step.blue {
                window.extend_from_slice(&state_vector((b.x, b.y), b.agent_type, step.t, h.width, h.height, h.max_steps));
            }
        }
        let known: Vec<&(u32, f64, f64)> = dets.iter().take_while(|d| d.0 as usize <= t).collect();
        let recent = &known[known.len().saturating_sub(max_detections)..];
        let mut detections = vec![0.0; max_detections * DETECTION_FEATURES];
        let offset = max_detections - recent.len();
        for (i, d) in recent.iter().enumerate() {
            let row = &mut detections[(offset + i) * DETECTION_FEATURES..(offset + i + 1) * DETECTION_FEATURES];
            row.copy_from_slice(&[1.0, (t as u32 - d.0) as f64, d.1, d.2]);
        }
        out.push(Sample {
            seed: h.seed,
            t: t as u32,
            horizon,
            window,
            mask,
            detections,
            detection_count: recent.len(),
            target: rollout.normalize(rollout.steps[t + horizon_us].adv),
        });
    }
    out
}
