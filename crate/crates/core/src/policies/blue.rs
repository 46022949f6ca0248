use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::BlueConfig;
use crate::sim::{Action, AgentState, AgentType, Detection, TerrainGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlueMode {
    Converge,
    Intercept,
    Spiral,
    RandomWalk,
}

/// Team-wide tracking mode as a function of the shared history and time.
pub fn select_mode(history: &[Detection], t: u32, staleness: u32) -> BlueMode {
    match history {
        [] => BlueMode::RandomWalk,
        [.., last] if t.saturating_sub(last.t) > staleness => BlueMode::Spiral,
        [_] => BlueMode::Converge,
        _ => BlueMode::Intercept,
    }
}

/// Linear extrapolation of the last two detections `horizon` steps past the
/// latest one, in normalized coordinates, clipped to the map.
pub fn intercept_point(prev: &Detection, last: &Detection, horizon: f64) -> (f64, f64) {
    let dt = last.t.saturating_sub(prev.t).max(1) as f64;
    let vx = (last.position.0 - prev.position.0) / dt;
    let vy = (last.position.1 - prev.position.1) / dt;
    (
        (last.position.0 + vx * horizon).clamp(0.0, 1.0),
        (last.position.1 + vy * horizon).clamp(0.0, 1.0),
    )
}

/// Archimedean spiral `r(theta) = spacing * theta / 2pi` around `center`,
/// sampled so consecutive waypoints are at most `2 * spacing` apart, rotated
/// by `phase` and clipped to `[0, width) x [0, height)`.
pub fn spiral_waypoints(
    center: (f64, f64),
    spacing: f64,
    turns: u32,
    phase: f64,
    bounds: (f64, f64),
) -> Vec<(f64, f64)> {
    let clip = |p: (f64, f64)| (p.0.clamp(0.0, bounds.0 - 1e-6), p.1.clamp(0.0, bounds.1 - 1e-6));
    let mut out = vec![clip(center)];
    if turns == 0 || spacing <= 0.0 {
        return out;
    }
    let theta_max = TAU * turns as f64;
    let mut theta = 0.0_f64;
    while theta < theta_max {
        let r = spacing * theta / TAU;
        // arc length per increment stays near `spacing`
        let step = (spacing / r.max(spacing)).min(std::f64::consts::FRAC_PI_4);
        theta = (theta + step).min(theta_max);
        let r = spacing * theta / TAU;
        out.push(clip((
            center.0 + r * (theta + phase).cos(),
            center.1 + r * (theta + phase).sin(),
        )));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlueMind {
    pub mode: BlueMode,
    /// Current target in cell units.
    pub waypoint: Option<(f64, f64)>,
    spiral: Vec<(f64, f64)>,
    spiral_index: usize,
    /// Detection time the current spiral is anchored on.
    spiral_anchor: Option<u32>,
    rng: ChaCha8Rng,
}

/// Controller for the whole blue team.
#[derive(Clone, Debug)]
pub struct BlueTeam {
    pub minds: Vec<BlueMind>,
    cfg: BlueConfig,
    scale: f64,
}

impl BlueTeam {
    pub fn new(agent_count: usize, cfg: &BlueConfig, scale: f64, seed: u64) -> Self {
        let minds = (0..agent_count)
            .map(|i| BlueMind {
                mode: BlueMode::RandomWalk,
                waypoint: None,
                spiral: Vec::new(),
                spiral_index: 0,
                spiral_anchor: None,
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (i as u64 + 1)),
            })
            .collect();
        Self {
            minds,
            cfg: cfg.clone(),
            scale,
        }
    }

    /// One action per agent. Cameras always hold still.
    pub fn act(&mut self, agents: &[AgentState], history: &[Detection], t: u32, terrain: &TerrainGrid) -> Vec<Action> {
        let mode = select_mode(history, t, self.cfg.staleness);
        let (w, h) = (terrain.width as f64, terrain.height as f64);
        let to_cells = |p: (f64, f64)| (p.0 * w, p.1 * h);
        let spacing = self.cfg.spiral_spacing * self.scale;
        let mobile = agents.iter().filter(|a| a.agent_type != AgentType::Camera).count().max(1);
        let mut mobile_idx = 0;
        let mut actions = Vec::with_capacity(agents.len());
        for (agent, mind) in agents.iter().zip(self.minds.iter_mut()) {
            mind.mode = mode;
            if agent.agent_type == AgentType::Camera {
                actions.push(Action::STILL);
                continue;
            }
            let k = mobile_idx;
            mobile_idx += 1;
            let pos = agent.position;
            let reach = agent.speed.max(0.5);
            let target = match mode {
                BlueMode::Converge => to_cells(history[history.len() - 1].position),
                BlueMode::Intercept => {
                    let n = history.len();
                    to_cells(intercept_point(&history[n - 2], &history[n - 1], self.cfg.intercept_horizon))
                }
                BlueMode::Spiral => {
                    let last = history[history.len() - 1];
                    if mind.spiral_anchor != Some(last.t) {
                        let phase = TAU * k as f64 / mobile as f64;
                        mind.spiral = spiral_waypoints(to_cells(last.position), spacing, self.cfg.spiral_turns, phase, (w, h));
                        mind.spiral_index = 0;
                        mind.spiral_anchor = Some(last.t);
                    }
                    while mind.spiral_index < mind.spiral.len() && dist(pos, mind.spiral[mind.spiral_index]) <= reach {
                        mind.spiral_index += 1;
                    }
                    match mind.spiral.get(mind.spiral_index) {
                        Some(&p) => p,
                        None => random_waypoint(mind, agent, terrain, pos, reach),
                    }
                }
                BlueMode::RandomWalk => random_waypoint(mind, agent, terrain, pos, reach),
            };
            mind.waypoint = Some(target);
            actions.push(Action::toward(pos, target, agent.speed));
        }
        actions
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn random_waypoint(mind: &mut BlueMind, agent: &AgentState, terrain: &TerrainGrid, pos: (f64, f64), reach: f64) -> (f64, f64) {
    let needs_new = match (mind.mode, mind.waypoint) {
        (_, None) => true,
        (_, Some(wp)) => dist(pos, wp) <= reach,
    };
    if needs_new || mind.spiral_index >= mind.spiral.len() && mind.mode == BlueMode::Spiral && mind.waypoint.is_some_and(|wp| mind.spiral.last() == Some(&wp)) {
        let (w, h) = (terrain.width as f64, terrain.height as f64);
        for _ in 0..64 {
            let p = (mind.rng.random_range(0.0..w - 1e-6), mind.rng.random_range(0.0..h - 1e-6));
            if !agent.agent_type.surface_bound() || terrain.traversable(terrain.cell_of(p)) {
                return p;
            }
        }
        return pos;
    }
    mind.waypoint.unwrap_or(pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(t: u32, x: f64, y: f64) -> Detection {
        Detection {
            t,
            position: (x, y),
            detected_by: 0,
        }
    }

    #[test]
    fn intercept_extrapolates_linearly() {
        let p = intercept_point(&det(5, 0.10, 0.10), &det(10, 0.12, 0.10), 10.0);
        assert!((p.0 - 0.16).abs() < 1e-12 && (p.1 - 0.10).abs() < 1e-12);
    }

    #[test]
    fn mode_selection() {
        assert_eq!(select_mode(&[], 5, 30), BlueMode::RandomWalk);
        assert_eq!(select_mode(&[det(1, 0.1, 0.1)], 5, 30), BlueMode::Converge);
        assert_eq!(select_mode(&[det(1, 0.1, 0.1), det(3, 0.1, 0.1)], 5, 30), BlueMode::Intercept);
        assert_eq!(select_mode(&[det(1, 0.1, 0.1), det(3, 0.1, 0.1)], 40, 30), BlueMode::Spiral);
        assert_eq!(select_mode(&[det(1, 0.1, 0.1)], 40, 30), BlueMode::Spiral);
    }

    #[test]
    fn spiral_examples() {
        assert_eq!(spiral_waypoints((5.0, 5.0), 2.0, 0, 0.0, (10.0, 10.0)), vec![(5.0, 5.0)]);
        let s = spiral_waypoints((50.0, 50.0), 2.0, 1, 0.0, (100.0, 100.0));
        let last = *s.last().unwrap();
        assert!((dist(last, (50.0, 50.0)) - 2.0).abs() < 1e-9);
        let max_r = s.iter().map(|&p| dist(p, (50.0, 50.0))).fold(0.0, f64::max);
        assert!((max_r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn converge_sends_everyone_to_the_detection() {
        let terrain = TerrainGrid::open(100, 100);
        let agents = vec![
            AgentState::new(AgentType::SearchParty, (10.0, 10.0), 1.0, 5.0),
            AgentState::new(AgentType::Camera, (50.0, 50.0), 0.0, 5.0),
            AgentState::new(AgentType::Helicopter, (90.0, 20.0), 3.0, 5.0),
        ];
        let mut team = BlueTeam::new(3, &BlueConfig::default(), 1.0, 0);
        let actions = team.act(&agents, &[det(4, 0.3, 0.6)], 5, &terrain);
        assert_eq!(actions[1], Action::STILL);
        assert_eq!(team.minds[0].waypoint, Some((30.0, 60.0)));
        assert_eq!(team.minds[2].waypoint, Some((30.0, 60.0)));
        assert!(team.minds.iter().all(|m| m.mode == BlueMode::Converge));
    }

    #[test]
    fn random_walk_is_reproducible() {
        let terrain = TerrainGrid::open(100, 100);
        let agents = vec![AgentState::new(AgentType::SearchParty, (10.0, 10.0), 1.0, 5.0)];
        let run = || {
            let mut team = BlueTeam::new(1, &BlueConfig::default(), 1.0, 7);
            (0..20).map(|t| team.act(&agents, &[], t, &terrain)[0]).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
