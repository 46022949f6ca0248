use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::config::{DomainKind, RunConfig};
use crate::policies::{AdversaryMind, BlueTeam};
use crate::sim::{build_terrain, AgentType, EnvState, SimError, Status};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutHeader {
    pub domain: DomainKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub config_hash: String,
    pub max_steps: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlueRecord {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "type")]
    pub agent_type: AgentType,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// One blue agent's observation; `x`, `y` are normalized and zero when `b = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub b: u8,
    pub x: f64,
    pub y: f64,
}

/// One line of a rollout file. Positions of `blue` and `adv` are in cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub blue: Vec<BlueRecord>,
    pub adv: Point,
    pub obs: Vec<ObsRecord>,
    pub det_hist_len: usize,
    pub status: Status,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: RolloutHeader,
}

/// A recorded episode with ground truth for every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub header: RolloutHeader,
    pub steps: Vec<StepRecord>,
}

impl Rollout {
    pub fn file_name(seed: u64) -> String {
        format!("rollout_{seed:08}.jsonl")
    }

    pub fn final_status(&self) -> Status {
        self.steps.last().map_or(Status::Running, |s| s.status)
    }

    pub fn normalize(&self, p: Point) -> (f64, f64) {
        (p.x / self.header.width as f64, p.y / self.header.height as f64)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine {
            header: self.header.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_reader(reader: impl BufRead, origin: &str) -> Result<Self, DatasetError> {
        let mut lines = reader.lines().enumerate();
        let json_err = |line: usize, source| DatasetError::Json {
            origin: origin.to_string(),
            line: line + 1,
            source,
        };
        let io_err = |source| DatasetError::Io {
            path: origin.to_string(),
            source,
        };
        let (i, first) = lines
            .next()
            .ok_or_else(|| DatasetError::Format(format!("{origin}: empty rollout file")))?;
        let header: HeaderLine = serde_json::from_str(&first.map_err(io_err)?).map_err(|e| json_err(i, e))?;
        let mut steps: Vec<StepRecord> = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let step: StepRecord = serde_json::from_str(&line).map_err(|e| json_err(i, e))?;
            if step.t as usize != steps.len() {
                return Err(DatasetError::Format(format!(
                    "{origin}: line {} has t={} but {} was expected",
                    i + 1,
                    step.t,
                    steps.len()
                )));
            }
            steps.push(step);
        }
        Ok(Self {
            header: header.header,
            steps,
        })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        Self::from_reader(text.as_bytes(), "<memory>")
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let f = File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(f), &path.display().to_string())
    }
}

fn record(env: &EnvState) -> StepRecord {
    StepRecord {
        t: env.step,
        blue: env
            .blue
            .iter()
            .map(|a| BlueRecord {
                x: a.position.0,
                y: a.position.1,
                agent_type: a.agent_type,
            })
            .collect(),
        adv: Point {
            x: env.adversary.position.0,
            y: env.adversary.position.1,
        },
        obs: env
            .observations
            .iter()
            .map(|o| ObsRecord {
                b: o.detected as u8,
                x: o.position.0,
                y: o.position.1,
            })
            .collect(),
        det_hist_len: env.history.len(),
        status: env.status,
    }
}

/// Runs one scripted episode to termination.
pub fn simulate_episode(cfg: &RunConfig, seed: u64) -> Result<Rollout, DatasetError> {
    const ATTEMPTS: u64 = 16;
    let mut last_err = None;
    for attempt in 0..ATTEMPTS {
        // a perturbed landmark draw keeps the header seed but changes placement
        let landmark_seed = seed ^ attempt.wrapping_mul(0xa076_1d64_78bd_642f);
        let terrain = match build_terrain(&cfg.domain, landmark_seed) {
            Ok(t) => Arc::new(t),
            Err(e @ SimError::TooSmall { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut env = EnvState::spawn(cfg, Arc::clone(&terrain), landmark_seed);
        let mut team = BlueTeam::new(env.blue.len(), &cfg.blue, cfg.domain.scale, landmark_seed);
        let mut adversary = AdversaryMind::new(&cfg.adversary, &terrain, cfg.domain.scale, landmark_seed);
        let mut steps = vec![record(&env)];
        while env.is_running() {
            let blue_actions = team.act(&env.blue, &env.history, env.step, &terrain);
            let adv_action = adversary.act(&env);
            env.step(&blue_actions, adv_action)?;
            steps.push(record(&env));
        }
        if steps.len() <= 1 {
            log::info!("seed {seed}: episode ended at step 0, redrawing landmarks (attempt {attempt})");
            continue;
        }
        return Ok(Rollout {
            header: RolloutHeader {
                domain: cfg.domain.kind,
                seed,
                width: terrain.width,
                height: terrain.height,
                config_hash: cfg.simulation_hash(),
                max_steps: cfg.domain.max_steps,
            },
            steps,
        });
    }
    Err(match last_err {
        Some(e) => e.into(),
        None => DatasetError::Format(format!("seed {seed}: every landmark draw ended at step 0")),
    })
}

/// Simulates `count` episodes with seeds `base_seed..base_seed + count` in
/// parallel and writes one file per episode into `out_dir`.
pub fn generate_rollouts(
    cfg: &RunConfig,
    count: usize,
    base_seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::Format("rollout count must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            let rollout = simulate_episode(cfg, seed)?;
            let path = out_dir.join(Rollout::file_name(seed));
            rollout.write(&path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `rollout_*.jsonl` in `dir`, ordered by file name.
pub fn load_rollouts(dir: &Path) -> Result<Vec<Rollout>, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rollout_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    paths.par_iter().map(|p| Rollout::read(p)).collect()
}

/// Fraction of recorded steps in which at least one blue agent detects the
/// adversary, pooled over all rollouts.
pub fn detection_rate(rollouts: &[Rollout]) -> f64 {
    let (hits, total) = rollouts.iter().fold((0usize, 0usize), |(h, n), r| {
        let hits = r.steps.iter().filter(|s| s.obs.iter().any(|o| o.b == 1)).count();
        (h + hits, n + r.steps.len())
    });
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
