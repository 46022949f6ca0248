//! Scripted controllers: the evasive adversary, the blue search team, and
//! the forest-aware A* planner they share.

mod adversary;
mod astar;
mod blue;

pub use adversary::{evade_candidates, AdversaryMind, AdversaryMode, Target};
pub use astar::{astar_plan, edge_cost, nearest_by_cost, Path};
pub use blue::{intercept_point, select_mode, spiral_waypoints, BlueMind, BlueMode, BlueTeam};

use crate::sim::Cell;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("no traversable path from {start:?} to {goal:?}")]
    NoPath { start: Cell, goal: Cell },
}
