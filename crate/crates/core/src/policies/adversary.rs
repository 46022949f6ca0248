use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AdversaryConfig, DomainKind};
use crate::sim::{Action, Cell, EnvState, TerrainGrid};

use super::astar::{astar_plan, nearest_by_cost, Path};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    Travel,
    Evade,
}

/// What the current plan leads to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Goal(Cell),
    DarkForest(Cell),
    KnownHideout(Cell),
}

impl Target {
    pub fn cell(self) -> Cell {
        match self {
            Target::Goal(c) | Target::DarkForest(c) | Target::KnownHideout(c) => c,
        }
    }
}

/// Evenly strided subsample of the dark-forest cells, at most `limit` long,
/// preserving `(y, x)` order.
pub fn evade_candidates(terrain: &TerrainGrid, limit: usize) -> Vec<Cell> {
    let all = terrain.dark_forest_cells();
    if all.len() <= limit || limit == 0 {
        return all;
    }
    let stride = all.len() as f64 / limit as f64;
    (0..limit).map(|i| all[(i as f64 * stride) as usize]).collect()
}

#[derive(Clone, Debug)]
pub struct AdversaryMind {
    pub mode: AdversaryMode,
    pub target: Option<Target>,
    pub plan: Vec<Cell>,
    plan_index: usize,
    /// Consecutive steps with a blue agent inside the sensing radius.
    pub sighted_streak: u32,
    /// Consecutive steps with no blue agent inside the sensing radius.
    pub clear_streak: u32,
    /// Prison: seeded unknown hideout.
    hideout_goal: Option<Cell>,
    candidates: Vec<Cell>,
    cfg: AdversaryConfig,
    sensing_radius: f64,
}

impl AdversaryMind {
    pub fn new(cfg: &AdversaryConfig, terrain: &TerrainGrid, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6164_7665_7273_6172);
        let unknown: Vec<Cell> = terrain.hideouts.iter().filter(|h| !h.known).map(|h| h.cell).collect();
        let pool: Vec<Cell> = if unknown.is_empty() {
            terrain.hideouts.iter().map(|h| h.cell).collect()
        } else {
            unknown
        };
        let hideout_goal = (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())]);
        Self {
            mode: AdversaryMode::Travel,
            target: None,
            plan: Vec::new(),
            plan_index: 0,
            sighted_streak: 0,
            clear_streak: 0,
            hideout_goal,
            candidates: evade_candidates(terrain, cfg.dark_candidates),
            cfg: cfg.clone(),
            sensing_radius: cfg.sensing_radius * scale,
        }
    }

    /// Goal while travelling: the seeded hideout in Prison Escape; in the
    /// Narco domain the nearest unvisited rendezvous, then the nearest hideout.
    fn travel_goal(&self, env: &EnvState) -> Option<Cell> {
        let terrain = &env.terrain;
        match terrain.domain {
            DomainKind::Prison => self.hideout_goal,
            DomainKind::Narco => {
                let here = terrain.cell_of(env.adversary.position);
                let pending: Vec<Cell> = terrain
                    .rendezvous
                    .iter()
                    .zip(&env.rendezvous_visited)
                    .filter(|(_, v)| !**v)
                    .map(|(c, _)| *c)
                    .collect();
                let pool: Vec<Cell> = if pending.is_empty() {
                    terrain.hideouts.iter().map(|h| h.cell).collect()
                } else {
                    pending
                };
                pool.into_iter().min_by(|a, b| here.dist(*a).total_cmp(&here.dist(*b)).then(a.cmp(b)))
            }
        }
    }

    fn adopt(&mut self, target: Target, path: Path) {
        self.target = Some(target);
        self.plan = path.cells;
        self.plan_index = 0;
    }

    fn plan_to_goal(&mut self, env: &EnvState, here: Cell) {
        let Some(goal) = self.travel_goal(env) else {
            self.target = None;
            self.plan.clear();
            return;
        };
        match astar_plan(&env.terrain, here, goal, self.cfg.forest_weight) {
            Ok(p) => self.adopt(Target::Goal(goal), p),
            Err(e) => {
                log::warn!("adversary cannot plan to goal: {e}");
                self.target = None;
                self.plan.clear();
            }
        }
    }

    fn plan_to_known_hideout(&mut self, env: &EnvState, here: Cell) -> bool {
        let known: Vec<Cell> = env.terrain.hideouts.iter().filter(|h| h.known).map(|h| h.cell).collect();
        match nearest_by_cost(&env.terrain, here, &known, self.cfg.forest_weight) {
            Some(p) => {
                let c = *p.cells.last().unwrap();
                self.adopt(Target::KnownHideout(c), p);
                true
            }
            None => false,
        }
    }

    fn plan_evasion(&mut self, env: &EnvState, here: Cell) {
        if let Some(p) = nearest_by_cost(&env.terrain, here, &self.candidates, self.cfg.forest_weight) {
            let c = *p.cells.last().unwrap();
            self.adopt(Target::DarkForest(c), p);
        } else if !self.plan_to_known_hideout(env, here) {
            log::debug!("no dark forest or known hideout reachable; keeping travel goal");
            self.plan_to_goal(env, here);
        }
    }

    /// Updates the mode machine from the current state and returns the
    /// next move at full speed along the plan.
    pub fn act(&mut self, env: &EnvState) -> Action {
        let pos = env.adversary.position;
        let here = env.terrain.cell_of(pos);
        let sighted = env
            .blue
            .iter()
            .any(|b| (b.position.0 - pos.0).hypot(b.position.1 - pos.1) <= self.sensing_radius);
        if sighted {
            self.sighted_streak += 1;
            self.clear_streak = 0;
        } else {
            self.clear_streak += 1;
            self.sighted_streak = 0;
        }

        match self.mode {
            AdversaryMode::Travel if sighted => {
                self.mode = AdversaryMode::Evade;
                self.plan_evasion(env, here);
            }
            AdversaryMode::Travel => {
                let goal = self.travel_goal(env);
                if self.target.map(Target::cell) != goal || self.plan.is_empty() {
                    self.plan_to_goal(env, here);
                }
            }
            AdversaryMode::Evade => {
                if self.clear_streak >= self.cfg.evade_timer {
                    self.mode = AdversaryMode::Travel;
                    self.plan_to_goal(env, here);
                } else if self.sighted_streak >= self.cfg.evade_timer
                    && !matches!(self.target, Some(Target::KnownHideout(_)))
                    && !self.plan_to_known_hideout(env, here)
                {
                    // no known hideout in this domain: make for the travel goal instead
                    if !matches!(self.target, Some(Target::Goal(_))) {
                        self.plan_to_goal(env, here);
                    }
                }
            }
        }
        self.follow(pos, env.adversary.speed)
    }

    fn follow(&mut self, pos: (f64, f64), speed: f64) -> Action {
        if self.plan.is_empty() {
            return Action::STILL;
        }
        let reach = (speed * 0.5).max(1e-3);
        while self.plan_index + 1 < self.plan.len() {
            let c = self.plan[self.plan_index].center();
            if (c.0 - pos.0).hypot(c.1 - pos.1) <= reach {
                self.plan_index += 1;
            } else {
                break;
            }
        }
        Action::toward(pos, self.plan[self.plan_index].center(), speed)
    }
}
