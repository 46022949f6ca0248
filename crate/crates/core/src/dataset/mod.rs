//! Rollout recording, splits, and sample construction.

mod rollout;
mod samples;
mod split;

pub use rollout::{
    detection_rate, generate_rollouts, load_rollouts, simulate_episode, BlueRecord, ObsRecord, Point, Rollout,
    RolloutHeader, StepRecord,
};
pub use samples::{build_samples, detection_history, Sample, SampleShape, DETECTION_FEATURES};
pub use split::{split_dataset, Split};

use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {source}")]
    Json {
        origin: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios([f64; 3]),
    #[error("{n} rollouts cannot fill {parts} split parts")]
    TooFewRollouts { n: usize, parts: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::sim::{AgentType, Status};

    fn synthetic(len: usize) -> Rollout {
        let steps = (0..len)
            .map(|t| {
                let detected = t % 10 == 3;
                StepRecord {
                    t: t as u32,
                    blue: vec![BlueRecord {
                        x: 1.0 + t as f64 * 0.1,
                        y: 2.0,
                        agent_type: AgentType::Helicopter,
                    }],
                    adv: Point {
                        x: t as f64 * 0.5,
                        y: 50.0,
                    },
                    obs: vec![ObsRecord {
                        b: detected as u8,
                        x: if detected { t as f64 * 0.005 } else { 0.0 },
                        y: if detected { 0.5 } else { 0.0 },
                    }],
                    det_hist_len: (t + 7) / 10,
                    status: if t + 1 == len { Status::Timeout } else { Status::Running },
                }
            })
            .collect();
        Rollout {
            header: RolloutHeader {
                domain: crate::config::DomainKind::Prison,
                seed: 9,
                width: 100,
                height: 100,
                config_hash: "abc".into(),
                max_steps: 4320,
            },
            steps,
        }
    }

    #[test]
    fn sample_count_and_padding() {
        let r = synthetic(100);
        let s = build_samples(&r, 8, 60, 1, 16);
        assert_eq!(s.len(), 40);
        assert_eq!(s[0].mask, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s[20].mask, vec![1.0; 9]);
        assert_eq!(s[39].t, 39);
        assert!(build_samples(&r, 8, 100, 1, 16).is_empty());
        assert_eq!(build_samples(&r, 8, 0, 5, 16).len(), 20);
    }

    #[test]
    fn filtering_target_is_current_position() {
        let r = synthetic(30);
        for s in build_samples(&r, 4, 0, 1, 4) {
            assert_eq!(s.target, (s.t as f64 * 0.5 / 100.0, 0.5));
        }
    }

    #[test]
    fn detections_are_recent_and_causal() {
        let r = synthetic(100);
        let s = &build_samples(&r, 2, 0, 1, 2)[55];
        assert_eq!(s.t, 55);
        assert_eq!(s.detection_count, 2);
        assert_eq!(s.detections, vec![1.0, 12.0, 0.215, 0.5, 1.0, 2.0, 0.265, 0.5]);
        let early = &build_samples(&r, 2, 0, 1, 2)[2];
        assert_eq!(early.detection_count, 0);
        assert_eq!(early.detections, vec![0.0; 8]);
    }

    #[test]
    fn coordinates_are_normalized() {
        let r = synthetic(100);
        for s in build_samples(&r, 8, 30, 3, 16) {
            assert!(s.window.iter().chain(&s.detections).all(|v| v.is_finite()));
            assert!((0.0..=1.0).contains(&s.target.0) && (0.0..=1.0).contains(&s.target.1));
            assert!(s.window.chunks(crate::sim::STATE_DIM).all(|f| (0.0..=1.0).contains(&f[0]) && (0.0..=1.0).contains(&f[1])));
        }
    }

    #[test]
    fn jsonl_roundtrip_is_exact() {
        let r = synthetic(20);
        let text = r.to_jsonl();
        assert!(text.starts_with("{\"header\":"));
        assert_eq!(Rollout::from_jsonl(&text).unwrap(), r);
    }

    #[test]
    fn gap_in_t_is_rejected() {
        let mut r = synthetic(5);
        r.steps.remove(2);
        assert!(matches!(Rollout::from_jsonl(&r.to_jsonl()), Err(DatasetError::Format(_))));
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_dataset(450, [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0], 0).unwrap().sizes(), (300, 100, 50));
        assert_eq!(split_dataset(9, [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0], 0).unwrap().sizes(), (6, 2, 1));
        assert_eq!(split_dataset(3, [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0], 0).unwrap().sizes(), (1, 1, 1));
        assert!(matches!(split_dataset(2, [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0], 0), Err(DatasetError::TooFewRollouts { .. })));
        assert!(matches!(split_dataset(9, [0.5, 0.5, 0.5], 0), Err(DatasetError::BadRatios(_))));
        let s = split_dataset(100, [0.6, 0.2, 0.2], 3).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn detection_rate_pools_steps() {
        let r = synthetic(100);
        assert!((detection_rate(&[r.clone()]) - 0.1).abs() < 1e-12);
        let mut quiet = synthetic(100);
        quiet.steps.iter_mut().for_each(|s| s.obs[0].b = 0);
        assert!((detection_rate(&[r.clone(), quiet.clone()]) - 0.05).abs() < 1e-12);
        assert_eq!(detection_rate(&[quiet.clone(), r.clone()]), detection_rate(&[r, quiet]));
    }

    #[test]
    fn small_episode_is_deterministic() {
        let mut cfg = RunConfig::default();
        cfg.domain.scale = 1.0 / 64.0;
        cfg.domain.max_steps = 300;
        let a = simulate_episode(&cfg, 5).unwrap();
        let b = simulate_episode(&cfg, 5).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert!(a.steps.len() <= 301);
        assert_eq!(a.steps.len(), a.steps.last().unwrap().t as usize + 1);
    }
}
