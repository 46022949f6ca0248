use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{AgentState, AgentType};
use super::terrain::{Cell, TerrainGrid};
use super::SimError;
use crate::config::{DomainKind, RunConfig};

/// A timestamped sighting of the adversary, in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t: u32,
    pub position: (f64, f64),
    pub detected_by: usize,
}

/// What one blue agent sees: a flag plus the exact normalized adversary
/// position, or the `(0, 0)` sentinel when nothing is detected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub detected: bool,
    pub position: (f64, f64),
}

impl Observation {
    pub const NONE: Observation = Observation {
        detected: false,
        position: (0.0, 0.0),
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    ReachedHideout,
    Captured,
    Timeout,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::ReachedHideout => "reached_hideout",
            Status::Captured => "captured",
            Status::Timeout => "timeout",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Status::Running, Status::ReachedHideout, Status::Captured, Status::Timeout]
            .into_iter()
            .find(|st| st.name() == s)
    }
}

/// Heading in radians (0 = +x, pi/2 = +y) and speed in cells per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub heading: f64,
    pub speed: f64,
}

impl Action {
    pub const STILL: Action = Action {
        heading: 0.0,
        speed: 0.0,
    };

    /// Move toward `target`, not overshooting it.
    pub fn toward(from: (f64, f64), target: (f64, f64), max_speed: f64) -> Self {
        let (dx, dy) = (target.0 - from.0, target.1 - from.1);
        let d = dx.hypot(dy);
        if d < 1e-12 || max_speed <= 0.0 {
            return Self::STILL;
        }
        Self {
            heading: dy.atan2(dx),
            speed: max_speed.min(d),
        }
    }
}

/// Detection radius of `agent` against a target standing in `target_cell`:
/// the base radius scaled linearly by that cell's visibility.
pub fn effective_radius(agent: &AgentState, terrain: &TerrainGrid, target_cell: Cell) -> f64 {
    agent.detect_radius_base * terrain.visibility_at(target_cell)
}

pub fn normalize(terrain: &TerrainGrid, pos: (f64, f64)) -> (f64, f64) {
    (pos.0 / terrain.width as f64, pos.1 / terrain.height as f64)
}

pub fn sense(blue: &AgentState, adversary_pos: (f64, f64), terrain: &TerrainGrid) -> Observation {
    let d = (blue.position.0 - adversary_pos.0).hypot(blue.position.1 - adversary_pos.1);
    let r = effective_radius(blue, terrain, terrain.cell_of(adversary_pos));
    if d <= r {
        Observation {
            detected: true,
            position: normalize(terrain, adversary_pos),
        }
    } else {
        Observation::NONE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub terrain: Arc<TerrainGrid>,
    pub blue: Vec<AgentState>,
    pub adversary: AgentState,
    /// Shared detection history, strictly increasing in `t`.
    pub history: Vec<Detection>,
    /// Observations of the current step, one per blue agent.
    pub observations: Vec<Observation>,
    pub step: u32,
    pub status: Status,
    pub rendezvous_visited: Vec<bool>,
    pub max_steps: u32,
    /// Cells; only marine vessels capture, and only in the Narco domain.
    pub capture_radius: f64,
}

impl EnvState {
    /// Builds the initial state and runs the step-0 sensing pass. With
    /// `initial_tip` the team starts with one detection of the adversary.
    pub fn new(
        terrain: Arc<TerrainGrid>,
        blue: Vec<AgentState>,
        adversary: AgentState,
        max_steps: u32,
        capture_radius: f64,
        initial_tip: bool,
    ) -> Self {
        let rendezvous_visited = vec![false; terrain.rendezvous.len()];
        let mut env = Self {
            terrain,
            blue,
            adversary,
            history: Vec::new(),
            observations: Vec::new(),
            step: 0,
            status: Status::Running,
            rendezvous_visited,
            max_steps,
            capture_radius,
        };
        env.observe();
        if initial_tip && env.history.is_empty() {
            env.history.push(Detection {
                t: 0,
                position: normalize(&env.terrain, env.adversary.position),
                detected_by: 0,
            });
        }
        env.update_status();
        env
    }

    /// Places the configured roster on `terrain` using `seed`.
    pub fn spawn(cfg: &RunConfig, terrain: Arc<TerrainGrid>, seed: u64) -> Self {
        let d = &cfg.domain;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7370_6177_6e00_0000);
        let (w, h) = (terrain.width as f64, terrain.height as f64);
        let start = terrain.adversary_start.center();
        let clamp = |p: (f64, f64)| (p.0.clamp(0.0, w - 1e-6), p.1.clamp(0.0, h - 1e-6));
        let jitter = |rng: &mut ChaCha8Rng, around: (f64, f64), spread: f64| {
            clamp((
                around.0 + rng.random_range(-spread..=spread),
                around.1 + rng.random_range(-spread..=spread),
            ))
        };
        let known: Vec<(f64, f64)> = terrain
            .hideouts
            .iter()
            .filter(|h| h.known)
            .map(|h| h.cell.center())
            .collect();
        let mut blue = Vec::new();
        for entry in &d.agents {
            let radius = entry.detect_radius * d.scale * d.detection_radius_scale;
            let speed = entry.speed * d.scale;
            for i in 0..entry.count {
                let pos = match (d.kind, entry.kind) {
                    (DomainKind::Prison, AgentType::Camera) => {
                        if i % 2 == 0 && !known.is_empty() {
                            jitter(&mut rng, known[(i / 2) % known.len()], 0.04 * w)
                        } else {
                            (rng.random_range(0.0..w - 1e-6), rng.random_range(0.0..h - 1e-6))
                        }
                    }
                    (DomainKind::Prison, AgentType::SearchParty) => jitter(&mut rng, start, 0.06 * w),
                    (DomainKind::Prison, _) => start,
                    (DomainKind::Narco, kind) => loop {
                        let p = (rng.random_range(0.0..w - 1e-6), rng.random_range(0.0..h - 1e-6));
                        if !kind.surface_bound() || terrain.traversable(terrain.cell_of(p)) {
                            break p;
                        }
                    },
                };
                blue.push(AgentState::new(entry.kind, pos, speed, radius));
            }
        }
        let adversary = AgentState::new(AgentType::Adversary, start, cfg.adversary.speed * d.scale, 0.0);
        let initial_tip = d.kind == DomainKind::Narco;
        Self::new(
            terrain,
            blue,
            adversary,
            d.max_steps,
            d.capture_radius * d.scale,
            initial_tip,
        )
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    /// Advances one step: integrate motion, sense, append detections,
    /// evaluate termination.
    pub fn step(&mut self, blue_actions: &[Action], adversary_action: Action) -> Result<(), SimError> {
        if self.status != Status::Running {
            return Err(SimError::Terminated(self.status));
        }
        if blue_actions.len() != self.blue.len() {
            return Err(SimError::ActionCount {
                expected: self.blue.len(),
                got: blue_actions.len(),
            });
        }
        for (i, (agent, action)) in self.blue.iter().zip(blue_actions).enumerate() {
            check_speed(agent, action, i)?;
        }
        check_speed(&self.adversary, &adversary_action, usize::MAX)?;

        let terrain = Arc::clone(&self.terrain);
        for (agent, action) in self.blue.iter_mut().zip(blue_actions) {
            move_agent(&terrain, agent, action);
        }
        move_agent(&terrain, &mut self.adversary, &adversary_action);
        self.step += 1;
        for a in self.blue.iter_mut() {
            a.timestep = self.step;
        }
        self.adversary.timestep = self.step;
        self.observe();
        self.update_status();
        Ok(())
    }

    fn observe(&mut self) {
        let adv = self.adversary.position;
        self.observations = self
            .blue
            .iter()
            .map(|b| sense(b, adv, &self.terrain))
            .collect();
        if let Some(idx) = self.observations.iter().position(|o| o.detected) {
            // one entry per step regardless of how many agents saw the adversary
            if self.history.last().is_none_or(|d| d.t < self.step) {
                self.history.push(Detection {
                    t: self.step,
                    position: self.observations[idx].position,
                    detected_by: idx,
                });
            }
        }
    }

    fn update_status(&mut self) {
        let cell = self.terrain.cell_of(self.adversary.position);
        for (visited, rv) in self.rendezvous_visited.iter_mut().zip(&self.terrain.rendezvous) {
            if *rv == cell {
                *visited = true;
            }
        }
        let at_hideout = self.terrain.hideouts.iter().any(|h| h.cell == cell);
        self.status = match self.terrain.domain {
            DomainKind::Prison => {
                if at_hideout {
                    Status::ReachedHideout
                } else if self.step >= self.max_steps {
                    Status::Timeout
                } else {
                    Status::Running
                }
            }
            DomainKind::Narco => {
                let adv = self.adversary.position;
                let captured = self.blue.iter().any(|b| {
                    b.agent_type == AgentType::MarineVessel
                        && (b.position.0 - adv.0).hypot(b.position.1 - adv.1) <= self.capture_radius
                });
                if captured {
                    Status::Captured
                } else if at_hideout && self.rendezvous_visited.iter().all(|&v| v) {
                    Status::ReachedHideout
                } else if self.step >= self.max_steps {
                    Status::Timeout
                } else {
                    Status::Running
                }
            }
        };
    }
}

fn check_speed(agent: &AgentState, action: &Action, index: usize) -> Result<(), SimError> {
    if !action.speed.is_finite() || !action.heading.is_finite() || action.speed.abs() > agent.speed + 1e-9 {
        return Err(SimError::SpeedLimit {
            agent: index,
            speed: action.speed,
            max: agent.speed,
        });
    }
    Ok(())
}

fn move_agent(terrain: &TerrainGrid, agent: &mut AgentState, action: &Action) {
    if action.speed == 0.0 {
        return;
    }
    let (w, h) = (terrain.width as f64 - 1e-6, terrain.height as f64 - 1e-6);
    let (x, y) = agent.position;
    let nx = (x + action.speed * action.heading.cos()).clamp(0.0, w);
    let ny = (y + action.speed * action.heading.sin()).clamp(0.0, h);
    if !agent.agent_type.surface_bound() {
        agent.position = (nx, ny);
        return;
    }
    let ok = |p: (f64, f64)| terrain.traversable(terrain.cell_of(p));
    for candidate in [(nx, ny), (nx, y), (x, ny)] {
        if ok(candidate) {
            agent.position = candidate;
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(kind: AgentType, pos: (f64, f64), radius: f64) -> AgentState {
        let speed = if kind == AgentType::Camera { 0.0 } else { 2.0 };
        AgentState::new(kind, pos, speed, radius)
    }

    fn open_with_visibility(v: f32) -> TerrainGrid {
        let mut t = TerrainGrid::open(100, 100);
        t.visibility.iter_mut().for_each(|x| *x = v);
        t
    }

    #[test]
    fn effective_radius_examples() {
        let a = agent(AgentType::SearchParty, (0.0, 0.0), 30.0);
        let c = Cell::new(5, 5);
        assert_eq!(effective_radius(&a, &open_with_visibility(1.0), c), 30.0);
        assert!((effective_radius(&a, &open_with_visibility(0.2), c) - 6.0).abs() < 1e-5);
        let hi = effective_radius(&a, &open_with_visibility(0.5), c);
        let lo = effective_radius(&a, &open_with_visibility(0.4), c);
        assert!((hi - 15.0).abs() < 1e-9 && (lo - 12.0).abs() < 1e-5 && hi >= lo);
    }

    #[test]
    fn sense_examples() {
        let t = open_with_visibility(1.0);
        let a = agent(AgentType::SearchParty, (40.5, 20.25), 30.0);
        let o = sense(&a, (40.5, 20.25), &t);
        assert!(o.detected);
        assert_eq!(o.position, (0.405, 0.2025));

        let o = sense(&a, (40.5 + 31.0, 20.25), &t);
        assert_eq!(o, Observation::NONE);

        let fog = open_with_visibility(0.2);
        let o = sense(&a, (50.5, 20.25), &fog);
        assert_eq!(o, Observation::NONE, "10 cells is beyond 30 * 0.2");
    }

    fn small_env(domain: DomainKind) -> EnvState {
        let mut t = TerrainGrid::open(50, 50);
        t.domain = domain;
        if domain == DomainKind::Narco {
            t.water.iter_mut().for_each(|w| *w = true);
        }
        EnvState::new(
            Arc::new(t),
            vec![agent(AgentType::SearchParty, (5.0, 5.0), 3.0)],
            agent(AgentType::Adversary, (30.0, 30.0), 0.0),
            4320,
            1.0,
            false,
        )
    }

    #[test]
    fn zero_speed_keeps_positions() {
        let mut env = small_env(DomainKind::Prison);
        let before = (env.blue[0].position, env.adversary.position);
        env.step(&[Action::STILL], Action::STILL).unwrap();
        assert_eq!(before, (env.blue[0].position, env.adversary.position));
        assert_eq!(env.step, 1);
    }

    #[test]
    fn positions_stay_in_bounds() {
        let mut env = small_env(DomainKind::Prison);
        env.adversary.position = (49.5, 0.5);
        let out = Action {
            heading: -std::f64::consts::FRAC_PI_4,
            speed: 2.0,
        };
        env.step(&[out], out).unwrap();
        let (x, y) = env.adversary.position;
        assert!((0.0..50.0).contains(&x) && (0.0..50.0).contains(&y));
    }

    #[test]
    fn over_speed_is_rejected() {
        let mut env = small_env(DomainKind::Prison);
        let fast = Action {
            heading: 0.0,
            speed: 2.5,
        };
        assert!(matches!(env.step(&[fast], Action::STILL), Err(SimError::SpeedLimit { .. })));
    }

    #[test]
    fn prison_times_out_and_never_captures() {
        let mut env = small_env(DomainKind::Prison);
        env.max_steps = 3;
        env.blue[0].position = env.adversary.position;
        for _ in 0..3 {
            assert_eq!(env.status, Status::Running);
            env.step(&[Action::STILL], Action::STILL).unwrap();
        }
        assert_eq!(env.status, Status::Timeout);
        assert!(matches!(
            env.step(&[Action::STILL], Action::STILL),
            Err(SimError::Terminated(Status::Timeout))
        ));
    }

    #[test]
    fn simultaneous_detections_collapse() {
        let mut t = TerrainGrid::open(50, 50);
        t.domain = DomainKind::Prison;
        let env = EnvState::new(
            Arc::new(t),
            vec![
                agent(AgentType::SearchParty, (10.0, 10.0), 5.0),
                agent(AgentType::Helicopter, (11.0, 10.0), 5.0),
            ],
            agent(AgentType::Adversary, (10.5, 10.0), 0.0),
            4320,
            0.0,
            false,
        );
        assert_eq!(env.history.len(), 1);
        assert_eq!(env.history[0].detected_by, 0);
        assert!(env.observations.iter().all(|o| o.detected));
    }

    #[test]
    fn narco_hideout_requires_rendezvous_first() {
        let mut t = TerrainGrid::open(50, 50);
        t.domain = DomainKind::Narco;
        t.water.iter_mut().for_each(|w| *w = true);
        t.rendezvous = vec![Cell::new(20, 10)];
        t.hideouts = vec![super::super::terrain::Hideout {
            cell: Cell::new(22, 10),
            known: false,
        }];
        let mut env = EnvState::new(
            Arc::new(t),
            vec![agent(AgentType::Airplane, (0.5, 0.5), 1.0)],
            AgentState::new(AgentType::Adversary, (24.5, 10.5), 1.0, 0.0),
            4320,
            1.0,
            true,
        );
        assert_eq!(env.history.len(), 1, "initial tip");
        let west = Action {
            heading: std::f64::consts::PI,
            speed: 1.0,
        };
        env.step(&[Action::STILL], west).unwrap();
        env.step(&[Action::STILL], west).unwrap();
        assert_eq!(env.terrain.cell_of(env.adversary.position), Cell::new(22, 10));
        assert_eq!(env.status, Status::Running, "hideout before rendezvous does not end the episode");
        env.step(&[Action::STILL], west).unwrap();
        env.step(&[Action::STILL], west).unwrap();
        assert!(env.rendezvous_visited[0]);
        let east = Action { heading: 0.0, speed: 1.0 };
        env.step(&[Action::STILL], east).unwrap();
        env.step(&[Action::STILL], east).unwrap();
        assert_eq!(env.status, Status::ReachedHideout);
    }

    #[test]
    fn narco_capture_only_by_vessels() {
        let mut t = TerrainGrid::open(50, 50);
        t.domain = DomainKind::Narco;
        t.water.iter_mut().for_each(|w| *w = true);
        let t = Arc::new(t);
        let env = EnvState::new(
            Arc::clone(&t),
            vec![agent(AgentType::Airplane, (10.0, 10.0), 5.0)],
            agent(AgentType::Adversary, (10.0, 10.0), 0.0),
            4320,
            1.0,
            false,
        );
        assert_eq!(env.status, Status::Running);
        let env = EnvState::new(
            t,
            vec![agent(AgentType::MarineVessel, (10.0, 10.5), 5.0)],
            agent(AgentType::Adversary, (10.0, 10.0), 0.0),
            4320,
            1.0,
            false,
        );
        assert_eq!(env.status, Status::Captured);
    }
}
