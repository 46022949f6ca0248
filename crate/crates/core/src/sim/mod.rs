//! Seeded grid-world engine shared by the Prison Escape and Narco domains.

mod agent;
mod env;
mod terrain;

pub use agent::{state_vector, AgentState, AgentType, STATE_DIM};
pub use env::{effective_radius, normalize, sense, Action, Detection, EnvState, Observation, Status};
pub use terrain::{build_terrain, visibility_from_forest, Cell, Hideout, TerrainGrid};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("invalid domain config: {0}")]
    Config(String),
    #[error("{width}x{height} grid is too small to place the required landmarks")]
    TooSmall { width: usize, height: usize },
    #[error("episode already terminated ({0:?})")]
    Terminated(Status),
    #[error("expected {expected} blue actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent}: speed {speed} exceeds max {max}")]
    SpeedLimit { agent: usize, speed: f64, max: f64 },
}
